//! Locate quantum dots against the alignment-marker grid in simulated frames
//! and report the frame-to-frame repeatability.
//!
//! cargo run --release --example qd_positioning -- [frames]

use qdent::positioning::{locate_qds, render_image, repeatability, ImageSpec, LocateOptions};

fn main() -> qdent::Result<()> {
    let frames: usize = std::env::args().nth(1).map(|a| a.parse().expect("frame count")).unwrap_or(30);
    let spec = ImageSpec::example_field();
    let opts = LocateOptions::default();

    let first = locate_qds(&render_image(&spec, 0)?, &opts)?;
    println!(
        "marker frame: origin ({:.0}, {:.0}) nm, rotation {:.2} mrad, {} lines",
        first.frame.origin_nm[0],
        first.frame.origin_nm[1],
        first.frame.rotation_rad * 1e3,
        first.lines.len()
    );

    let images = (0..frames as u64).map(|k| render_image(&spec, k)).collect::<Result<Vec<_>, _>>()?;
    let rep = repeatability(&images, &opts)?;
    println!("{:>9} {:>9} {:>8} {:>7}", "u/nm", "v/nm", "std/nm", "flags");
    for s in &rep.spots {
        let flags = match (s.contaminated, s.overlapping) {
            (false, false) => "",
            (true, false) => "line",
            (false, true) => "close",
            (true, true) => "both",
        };
        println!("{:>9.1} {:>9.1} {:>8.2} {:>7}", s.x_nm, s.y_nm, s.std_nm, flags);
    }
    println!("mode std {:.1} nm, {:.0}% of spots below 15 nm", rep.mode_std_nm, 100.0 * rep.fraction_below(15.0));
    Ok(())
}
