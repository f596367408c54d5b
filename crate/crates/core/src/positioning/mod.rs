//! Synthetic microscope frames of quantum-dot emission on a marker grid, and
//! the localization chain that maps spots into marker coordinates.
//!
//! Coordinates: pixel `(i, j)` covers `[i·p, (i+1)·p) × [j·p, (j+1)·p)` in
//! image nanometres, with `j` the row index. The marker frame `(u, v)` has
//! its origin on the crossing of grid lines `u = 0`, `v = 0` and is rotated
//! by `rotation_rad` against the image axes.

mod locate;

use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::rng::substream;

pub use locate::{
    PositionRow, SpotFit,
    fit_spot, locate_qds, repeatability, repeatability_from_fits, write_positions_csv, FittedLine, LocateOptions,
    LocatedSpot, Localization, RepeatabilityReport, SpotStats, LOW_FRAME_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum PositioningError {
    #[error("invalid image spec: {0}")]
    InvalidSpec(String),
    #[error("no marker lines found ({0})")]
    NoMarkers(String),
    #[error("frames do not share a layout: {0}")]
    MismatchedLayout(String),
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("marker line fit failed: {0}")]
    LineFit(crate::fit::FitError),
    #[error("image format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Square grid of straight marker lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerGrid {
    pub pitch_nm: f64,
    /// Gaussian width of the line profile.
    pub line_sigma_nm: f64,
    /// Peak line intensity above background, photons per pixel.
    pub peak: f64,
    /// Image position of the marker-frame origin.
    pub origin_nm: [f64; 2],
    pub rotation_rad: f64,
}

impl Default for MarkerGrid {
    fn default() -> Self {
        Self { pitch_nm: 10_000.0, line_sigma_nm: 200.0, peak: 150.0, origin_nm: [2_000.0, 2_000.0], rotation_rad: 0.01 }
    }
}

/// Mapping between image and marker coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin_nm: [f64; 2],
    pub rotation_rad: f64,
}

impl Frame {
    pub fn to_image(&self, u: f64, v: f64) -> [f64; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        [self.origin_nm[0] + u * c - v * s, self.origin_nm[1] + u * s + v * c]
    }

    pub fn to_marker(&self, x: f64, y: f64) -> [f64; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let (dx, dy) = (x - self.origin_nm[0], y - self.origin_nm[1]);
        [dx * c + dy * s, -dx * s + dy * c]
    }
}

impl MarkerGrid {
    pub fn frame(&self) -> Frame {
        Frame { origin_nm: self.origin_nm, rotation_rad: self.rotation_rad }
    }

    /// Grid indices `k` of lines `u = k·pitch` (vertical) or `v = k·pitch`
    /// (horizontal) that cross a `w × h` nm image.
    fn visible_indices(&self, w: f64, h: f64, vertical: bool) -> std::ops::RangeInclusive<i64> {
        let f = self.frame();
        let coords: Vec<f64> = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]]
            .iter()
            .map(|c| f.to_marker(c[0], c[1])[if vertical { 0 } else { 1 }])
            .collect();
        let lo = coords.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo / self.pitch_nm).ceil() as i64..=(hi / self.pitch_nm).floor() as i64
    }
}

/// Emitter in marker coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotSpec {
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: f64,
    /// Expected photons collected from the spot per frame.
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_nm: f64,
    /// Photons per pixel.
    pub background: f64,
    pub grid: MarkerGrid,
    pub spots: Vec<SpotSpec>,
    pub noise: NoiseModel,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            width_px: 400,
            height_px: 300,
            pixel_pitch_nm: 80.0,
            background: 20.0,
            grid: MarkerGrid::default(),
            spots: Vec::new(),
            noise: NoiseModel::Poisson,
        }
    }
}

impl ImageSpec {
    /// Sixteen diffraction-limited emitters (σ = 150 nm) spread over a
    /// 32 × 24 μm field with 10 μm marker pitch. Brightness ranges from 350
    /// to 6000 photons per frame over 20 photons/pixel of background, so a
    /// few dim spots localize worse than 15 nm while most do better.
    pub fn example_field() -> Self {
        const SPOTS: [(f64, f64, f64); 16] = [
            (4200.0, 3100.0, 6000.0),
            (13600.0, 5200.0, 4200.0),
            (24800.0, 2600.0, 3000.0),
            (7400.0, 14300.0, 2500.0),
            (16900.0, 12800.0, 2000.0),
            (26100.0, 16400.0, 1600.0),
            (3300.0, 7800.0, 1300.0),
            (11800.0, 17600.0, 1100.0),
            (22700.0, 8100.0, 950.0),
            (5600.0, 18400.0, 850.0),
            (14900.0, 7700.0, 750.0),
            (27800.0, 11900.0, 700.0),
            (8400.0, 5800.0, 650.0),
            (18300.0, 4100.0, 600.0),
            (2700.0, 12600.0, 350.0),
            (23900.0, 18100.0, 350.0),
        ];
        Self {
            spots: SPOTS.iter().map(|&(x, y, a)| SpotSpec { x_nm: x, y_nm: y, sigma_nm: 150.0, amplitude: a }).collect(),
            ..Self::default()
        }
    }

    pub fn width_nm(&self) -> f64 {
        self.width_px as f64 * self.pixel_pitch_nm
    }

    pub fn height_nm(&self) -> f64 {
        self.height_px as f64 * self.pixel_pitch_nm
    }

    pub fn validate(&self) -> Result<(), PositioningError> {
        let bad = |m: String| Err(PositioningError::InvalidSpec(m));
        if self.width_px < 16 || self.height_px < 16 {
            return bad(format!("image {}×{} px is too small", self.width_px, self.height_px));
        }
        if !(self.pixel_pitch_nm > 0.0) || !(self.background >= 0.0) {
            return bad("pixel pitch must be > 0 and background ≥ 0".into());
        }
        let g = &self.grid;
        if !(g.pitch_nm > 0.0 && g.line_sigma_nm > 0.0 && g.peak >= 0.0) {
            return bad("marker pitch and line width must be > 0, peak ≥ 0".into());
        }
        if !(g.rotation_rad.abs() < 0.5) {
            return bad(format!("grid rotation {} rad is outside ±0.5", g.rotation_rad));
        }
        let f = g.frame();
        for (i, s) in self.spots.iter().enumerate() {
            if !(s.sigma_nm > 0.0) || !(s.amplitude >= 0.0) {
                return bad(format!("spot {i}: sigma must be > 0 and amplitude ≥ 0"));
            }
            let [x, y] = f.to_image(s.x_nm, s.y_nm);
            if !(0.0..self.width_nm()).contains(&x) || !(0.0..self.height_nm()).contains(&y) {
                return bad(format!("spot {i} lies outside the frame"));
            }
        }
        Ok(())
    }

    /// Same layout with every spot moved by `(dx, dy)` in marker coordinates.
    pub fn shifted(&self, dx: f64, dy: f64) -> Self {
        let mut s = self.clone();
        for sp in &mut s.spots {
            sp.x_nm += dx;
            sp.y_nm += dy;
        }
        s
    }
}

/// Frame of nonnegative pixel intensities together with the layout that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_nm: f64,
    /// Row-major.
    pub pixels: Vec<f64>,
    pub truth: ImageSpec,
}

impl SyntheticImage {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.pixels[j * self.width + i]
    }
}

/// Fraction of a unit Gaussian centred at `mu` that falls in `[lo, hi)`.
pub(crate) fn pixel_fraction(lo: f64, hi: f64, mu: f64, sigma: f64) -> f64 {
    let k = 1.0 / (std::f64::consts::SQRT_2 * sigma);
    0.5 * (erf((hi - mu) * k) - erf((lo - mu) * k))
}

/// Noise-free intensity of one marker line over the whole frame, added into
/// `out`. Vertical lines are integrated across x, horizontal ones across y.
pub(crate) fn add_line(
    out: &mut [f64],
    w: usize,
    h: usize,
    p: f64,
    line: &FittedLine,
) {
    let amp = line.amplitude;
    for j in 0..h {
        for i in 0..w {
            let (along, across_lo) = if line.vertical {
                ((j as f64 + 0.5) * p, i as f64 * p)
            } else {
                ((i as f64 + 0.5) * p, j as f64 * p)
            };
            let c = line.center_at(along);
            if (across_lo + 0.5 * p - c).abs() > 8.0 * line.sigma_nm + p {
                continue;
            }
            out[j * w + i] += amp * pixel_fraction(across_lo, across_lo + p, c, line.sigma_nm);
        }
    }
}

/// Marker lines of the layout in the parametrization used by the fits.
pub fn truth_lines(spec: &ImageSpec) -> Vec<FittedLine> {
    let g = &spec.grid;
    let (s, c) = g.rotation_rad.sin_cos();
    let [ox, oy] = g.origin_nm;
    let sigma = g.line_sigma_nm / c;
    let amp = g.peak * (2.0 * std::f64::consts::PI).sqrt() * sigma / spec.pixel_pitch_nm;
    let (w, h) = (spec.width_nm(), spec.height_nm());
    let mut lines = Vec::new();
    for k in g.visible_indices(w, h, true) {
        // (x−ox)c + (y−oy)s = k·pitch  →  x(y)
        let kp = k as f64 * g.pitch_nm;
        lines.push(FittedLine {
            vertical: true,
            intercept_nm: ox + (kp + oy * s) / c,
            slope: -s / c,
            sigma_nm: sigma,
            amplitude: amp,
        });
    }
    for k in g.visible_indices(w, h, false) {
        // −(x−ox)s + (y−oy)c = k·pitch  →  y(x)
        let kp = k as f64 * g.pitch_nm;
        lines.push(FittedLine {
            vertical: false,
            intercept_nm: oy + (kp - ox * s) / c,
            slope: s / c,
            sigma_nm: sigma,
            amplitude: amp,
        });
    }
    lines
}

/// Renders marker lines and spots over a flat background, then applies the
/// noise model. Deterministic per seed.
pub fn render_image(spec: &ImageSpec, seed: u64) -> Result<SyntheticImage, PositioningError> {
    spec.validate()?;
    let (w, h, p) = (spec.width_px, spec.height_px, spec.pixel_pitch_nm);
    let mut px = vec![spec.background; w * h];
    for line in truth_lines(spec) {
        add_line(&mut px, w, h, p, &line);
    }
    let frame = spec.grid.frame();
    for s in &spec.spots {
        let [x, y] = frame.to_image(s.x_nm, s.y_nm);
        let reach = 6.0 * s.sigma_nm + p;
        let i0 = ((x - reach) / p).floor().max(0.0) as usize;
        let i1 = (((x + reach) / p).ceil() as usize).min(w);
        let j0 = ((y - reach) / p).floor().max(0.0) as usize;
        let j1 = (((y + reach) / p).ceil() as usize).min(h);
        let fx: Vec<f64> = (i0..i1).map(|i| pixel_fraction(i as f64 * p, (i + 1) as f64 * p, x, s.sigma_nm)).collect();
        for j in j0..j1 {
            let fy = pixel_fraction(j as f64 * p, (j + 1) as f64 * p, y, s.sigma_nm);
            for (k, i) in (i0..i1).enumerate() {
                px[j * w + i] += s.amplitude * fx[k] * fy;
            }
        }
    }
    if spec.noise == NoiseModel::Poisson {
        let mut rng = substream(seed, 0);
        for v in &mut px {
            if *v > 0.0 {
                *v = Poisson::new(*v).map_err(|e| PositioningError::InvalidSpec(e.to_string()))?.sample(&mut rng);
            }
        }
    }
    Ok(SyntheticImage { width: w, height: h, pixel_pitch_nm: p, pixels: px, truth: spec.clone() })
}

/// Writes the frame as a 16-bit binary PGM (values rounded and clipped to
/// 0..=65535) plus a JSON sidecar holding the layout.
pub fn write_image(img: &SyntheticImage, pgm: &Path, sidecar: &Path) -> Result<(), PositioningError> {
    let buf: Vec<u16> = img.pixels.iter().map(|v| v.round().clamp(0.0, 65535.0) as u16).collect();
    let raster = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(img.width as u32, img.height as u32, buf)
        .ok_or_else(|| PositioningError::Format("pixel buffer does not match the frame size".into()))?;
    raster.save_with_format(pgm, image::ImageFormat::Pnm).map_err(|e| PositioningError::Format(e.to_string()))?;
    let json = serde_json::to_string_pretty(&img.truth).map_err(|e| PositioningError::Format(e.to_string()))?;
    std::fs::File::create(sidecar)?.write_all(json.as_bytes())?;
    Ok(())
}

pub fn read_image(pgm: &Path, sidecar: &Path) -> Result<SyntheticImage, PositioningError> {
    let mut json = String::new();
    std::fs::File::open(sidecar)?.read_to_string(&mut json)?;
    let truth: ImageSpec = serde_json::from_str(&json).map_err(|e| PositioningError::Format(e.to_string()))?;
    let raster = image::ImageReader::open(pgm)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| PositioningError::Format(e.to_string()))?
        .into_luma16();
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if (w, h) != (truth.width_px, truth.height_px) {
        return Err(PositioningError::Format(format!(
            "raster is {w}×{h} but the sidecar says {}×{}",
            truth.width_px, truth.height_px
        )));
    }
    Ok(SyntheticImage {
        width: w,
        height: h,
        pixel_pitch_nm: truth.pixel_pitch_nm,
        pixels: raster.into_raw().into_iter().map(f64::from).collect(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(spots: Vec<SpotSpec>) -> ImageSpec {
        ImageSpec { noise: NoiseModel::None, spots, ..ImageSpec::default() }
    }

    #[test]
    fn frame_round_trip() {
        let f = Frame { origin_nm: [120.0, -40.0], rotation_rad: 0.2 };
        let [x, y] = f.to_image(300.0, 700.0);
        let [u, v] = f.to_marker(x, y);
        assert!((u - 300.0).abs() < 1e-9 && (v - 700.0).abs() < 1e-9);
    }

    #[test]
    fn markers_only_without_spots() {
        let spec = quiet(vec![]);
        let img = render_image(&spec, 0).unwrap();
        assert!(img.pixels.iter().all(|v| *v >= spec.background));
        // a pixel far from every line sits at the background level
        let lines = truth_lines(&spec);
        assert_eq!(lines.iter().filter(|l| l.vertical).count(), 4);
        assert_eq!(lines.iter().filter(|l| !l.vertical).count(), 3);
        assert!((img.at(60, 60) - spec.background).abs() < 1e-9);
    }

    #[test]
    fn spot_peak_and_width() {
        // spot centred on pixel (200, 150) in image coordinates
        let grid = MarkerGrid { rotation_rad: 0.0, peak: 0.0, ..MarkerGrid::default() };
        let p = 80.0;
        let (x, y) = (200.5 * p - grid.origin_nm[0], 150.5 * p - grid.origin_nm[1]);
        let spec = ImageSpec {
            grid,
            background: 0.0,
            spots: vec![SpotSpec { x_nm: x, y_nm: y, sigma_nm: 150.0, amplitude: 1e6 }],
            ..quiet(vec![])
        };
        let img = render_image(&spec, 0).unwrap();
        let argmax = (0..img.pixels.len()).max_by(|&a, &b| img.pixels[a].total_cmp(&img.pixels[b])).unwrap();
        assert_eq!((argmax % img.width, argmax / img.width), (200, 150));
        // FWHM of the row profile by linear interpolation of the half-maximum crossings
        let row: Vec<f64> = (0..img.width).map(|i| img.at(i, 150)).collect();
        let half = row[200] / 2.0;
        let cross = |range: Box<dyn Iterator<Item = usize>>, step: isize| {
            for i in range {
                let n = (i as isize + step) as usize;
                if row[n] < half {
                    let t = (row[i] - half) / (row[i] - row[n]);
                    return (i as f64 + step as f64 * t) * p;
                }
            }
            unreachable!()
        };
        let right = cross(Box::new(200..400), 1);
        let left = cross(Box::new((1..=200).rev()), -1);
        let fwhm = right - left;
        // pixel integration broadens σ² by p²/12
        let sigma_eff = (150.0f64.powi(2) + p * p / 12.0).sqrt();
        assert!((fwhm / (2.3548 * sigma_eff) - 1.0).abs() < 0.02, "{fwhm}");
        assert!((fwhm / (2.3548 * 150.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn rendering_is_deterministic() {
        let spec = ImageSpec {
            spots: vec![SpotSpec { x_nm: 5000.0, y_nm: 5000.0, sigma_nm: 150.0, amplitude: 2000.0 }],
            ..ImageSpec::default()
        };
        assert_eq!(render_image(&spec, 3).unwrap(), render_image(&spec, 3).unwrap());
        assert_ne!(render_image(&spec, 3).unwrap().pixels, render_image(&spec, 4).unwrap().pixels);
    }

    #[test]
    fn invalid_layouts() {
        let bad = quiet(vec![SpotSpec { x_nm: 1e6, y_nm: 0.0, sigma_nm: 150.0, amplitude: 1.0 }]);
        assert!(render_image(&bad, 0).is_err());
        let bad = quiet(vec![SpotSpec { x_nm: 100.0, y_nm: 100.0, sigma_nm: 0.0, amplitude: 1.0 }]);
        assert!(render_image(&bad, 0).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ImageSpec {
            spots: vec![SpotSpec { x_nm: 5000.0, y_nm: 5000.0, sigma_nm: 150.0, amplitude: 2000.0 }],
            ..ImageSpec::default()
        };
        let img = render_image(&spec, 1).unwrap();
        let (pgm, json) = (dir.path().join("f.pgm"), dir.path().join("f.json"));
        write_image(&img, &pgm, &json).unwrap();
        assert_eq!(read_image(&pgm, &json).unwrap(), img);
    }
}
