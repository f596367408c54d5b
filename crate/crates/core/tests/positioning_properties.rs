use qdent::positioning::*;
use rayon::prelude::*;

fn small_field(amplitude: f64, background: f64) -> ImageSpec {
    ImageSpec {
        width_px: 160,
        height_px: 160,
        background,
        grid: MarkerGrid { pitch_nm: 8000.0, origin_nm: [1500.0, 1500.0], ..MarkerGrid::default() },
        spots: vec![SpotSpec { x_nm: 4000.0, y_nm: 3700.0, sigma_nm: 150.0, amplitude }],
        ..ImageSpec::default()
    }
}

fn spread(spec: &ImageSpec, frames: u64) -> f64 {
    let fits: Vec<Localization> = (0..frames)
        .into_par_iter()
        .map(|seed| locate_qds(&render_image(spec, seed).unwrap(), &LocateOptions::default()).unwrap())
        .collect();
    let rep = repeatability_from_fits(&fits, 450.0).unwrap();
    assert_eq!(rep.spots.len(), 1);
    rep.spots[0].std_nm
}

#[test]
fn example_field_repeatability() {
    let spec = ImageSpec::example_field();
    let frames: Vec<SyntheticImage> = (0..30).map(|s| render_image(&spec, s).unwrap()).collect();
    let rep = repeatability(&frames, &LocateOptions::default()).unwrap();
    assert_eq!(rep.spots.len(), 16);
    assert!(!rep.low_sample_warning);
    assert!(rep.spots.iter().all(|s| !s.contaminated && !s.overlapping));
    assert!(rep.fraction_below(15.0) >= 0.8, "{}", rep.fraction_below(15.0));
    assert!(rep.mode_std_nm < 15.0);
    // the dimmest emitters sit above the 15 nm line
    assert!(rep.fraction_below(15.0) < 1.0);
    // each mean position is close to the truth
    for t in &spec.spots {
        let s = rep.spots.iter().find(|s| (s.x_nm - t.x_nm).hypot(s.y_nm - t.y_nm) < 100.0).unwrap();
        assert!((s.x_nm - t.x_nm).abs() < 5.0 * s.std_x_nm / 30f64.sqrt() + 2.0, "{s:?}");
    }
}

#[test]
fn precision_scales_with_photon_count() {
    // low background, so the shot-noise limit σ/√N dominates
    let dim = spread(&small_field(1000.0, 2.0), 150);
    let bright = spread(&small_field(10_000.0, 2.0), 150);
    let ratio = dim / bright;
    assert!((ratio / 10f64.sqrt() - 1.0).abs() < 0.25, "{dim} / {bright} = {ratio}");
    // unweighted least squares sits somewhat above the pixelated-Gaussian
    // bound √((σ² + a²/12)/N), never below it
    let bound = ((150.0f64.powi(2) + 80.0f64.powi(2) / 12.0) / 1000.0).sqrt();
    assert!(dim > 0.9 * bound && dim < 1.5 * bound, "{dim} vs {bound}");
}

#[test]
fn estimates_follow_translations() {
    let base = ImageSpec { noise: NoiseModel::None, ..small_field(3000.0, 20.0) };
    let opts = LocateOptions::default();
    let at = |spec: &ImageSpec| {
        let loc = locate_qds(&render_image(spec, 0).unwrap(), &opts).unwrap();
        (loc.spots[0].x_nm, loc.spots[0].y_nm)
    };
    let (x0, y0) = at(&base);
    for (dx, dy) in [(37.5, -21.25), (-400.0, 250.0), (1234.0, 987.0), (3.3, 0.7)] {
        let (x, y) = at(&base.shifted(dx, dy));
        assert!((x - x0 - dx).abs() < 0.1 && (y - y0 - dy).abs() < 0.1, "({dx}, {dy}) → ({}, {})", x - x0, y - y0);
    }
    // with noise, shifts are reproduced within the fit error
    let noisy = small_field(3000.0, 20.0);
    let a = locate_qds(&render_image(&noisy, 5).unwrap(), &opts).unwrap().spots[0];
    let b = locate_qds(&render_image(&noisy.shifted(500.0, -300.0), 5).unwrap(), &opts).unwrap().spots[0];
    assert!((b.x_nm - a.x_nm - 500.0).abs() < 4.0 * a.std_nm() * 2f64.sqrt());
    assert!((b.y_nm - a.y_nm + 300.0).abs() < 4.0 * a.std_nm() * 2f64.sqrt());
}

#[test]
fn frame_survives_the_image_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = render_image(&ImageSpec::example_field(), 9).unwrap();
    let (pgm, json) = (dir.path().join("frame.pgm"), dir.path().join("frame.json"));
    write_image(&img, &pgm, &json).unwrap();
    let back = read_image(&pgm, &json).unwrap();
    let a = locate_qds(&img, &LocateOptions::default()).unwrap();
    let b = locate_qds(&back, &LocateOptions::default()).unwrap();
    assert_eq!(a, b);
    let mut csv = Vec::new();
    write_positions_csv(&a.position_rows(), &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("x_nm,y_nm,sigma_nm,std_nm,contaminated,overlapping\n"));
    assert_eq!(text.lines().count(), 17);
}
