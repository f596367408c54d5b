use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{add_line, pixel_fraction, Frame, PositioningError, SyntheticImage};
use crate::fit::{levenberg_marquardt, LmOptions};

/// Below this many frames the repeatability report carries a warning.
pub const LOW_FRAME_THRESHOLD: usize = 10;

/// Offsets that keep fit parameters away from zero, where the relative
/// finite-difference step of the solver would vanish.
const POS_OFFSET: f64 = 1e5;
const SLOPE_SCALE: f64 = 1e4;
const LEVEL_OFFSET: f64 = 1e3;

/// Fits whose amplitude is less significant than this are discarded.
const MIN_AMPLITUDE_SIGNIFICANCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocateOptions {
    /// Starting guess for the spot width.
    pub spot_sigma_nm: f64,
    /// Spot detection threshold in units of the box-sum noise.
    pub detection_sigma: f64,
    /// Minimum marker contrast in units of the profile noise.
    pub marker_min_contrast: f64,
    /// Full width of the fit window in spot sigmas.
    pub crop_sigmas: f64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        Self { spot_sigma_nm: 150.0, detection_sigma: 6.0, marker_min_contrast: 10.0, crop_sigmas: 7.0 }
    }
}

/// Straight marker line. Vertical lines are `x = intercept + slope·y`,
/// horizontal ones `y = intercept + slope·x`; `sigma_nm` is the profile width
/// across the fitted axis and `amplitude` the photons per pixel row (column)
/// integrated across the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedLine {
    pub vertical: bool,
    pub intercept_nm: f64,
    pub slope: f64,
    pub sigma_nm: f64,
    pub amplitude: f64,
}

impl FittedLine {
    pub fn center_at(&self, along: f64) -> f64 {
        self.intercept_nm + self.slope * along
    }

    /// Distance of an image point from the line centre, nm.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (along, across) = if self.vertical { (y, x) } else { (x, y) };
        (across - self.center_at(along)).abs() / (1.0 + self.slope * self.slope).sqrt()
    }

    pub fn angle(&self) -> f64 {
        if self.vertical {
            -self.slope.atan()
        } else {
            self.slope.atan()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocatedSpot {
    /// Marker-frame position.
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: f64,
    pub amplitude: f64,
    /// Marker-frame covariance of `(x, y)`, nm².
    pub covariance: [[f64; 2]; 2],
    /// A marker line runs through the fit window.
    pub contaminated: bool,
    /// Another spot lies within the fit window.
    pub overlapping: bool,
}

impl LocatedSpot {
    /// Per-axis RMS of the fit uncertainty, nm.
    pub fn std_nm(&self) -> f64 {
        (0.5 * (self.covariance[0][0] + self.covariance[1][1])).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub frame: Frame,
    pub lines: Vec<FittedLine>,
    pub spots: Vec<LocatedSpot>,
    /// Candidates whose fit was discarded.
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionRow {
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: f64,
    pub std_nm: f64,
    pub contaminated: bool,
    pub overlapping: bool,
}

impl Localization {
    pub fn position_rows(&self) -> Vec<PositionRow> {
        self.spots
            .iter()
            .map(|s| PositionRow {
                x_nm: s.x_nm,
                y_nm: s.y_nm,
                sigma_nm: s.sigma_nm,
                std_nm: s.std_nm(),
                contaminated: s.contaminated,
                overlapping: s.overlapping,
            })
            .collect()
    }
}

pub fn write_positions_csv<W: Write>(rows: &[PositionRow], w: W) -> Result<(), PositioningError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| PositioningError::Format(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median and MAD-based standard deviation.
fn robust_level(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    (m, 1.4826 * median(&mut dev))
}

/// Contiguous runs of a median profile that rise above half the peak
/// contrast. Returns (centroid index, run length). `samples` is the number
/// of pixels behind each profile entry; it sets a shot-noise floor, since
/// medians of integer counts can have zero spread.
fn profile_runs(profile: &[f64], min_contrast: f64, samples: usize) -> Vec<(f64, usize)> {
    let (bg, mad) = robust_level(profile);
    let noise = mad.max(1.2533 * (bg.max(1.0) / samples as f64).sqrt());
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let contrast = max - bg;
    if !(contrast > 1e-9 * (bg.abs() + 1.0)) || contrast < min_contrast * noise {
        return Vec::new();
    }
    let thr = bg + 0.5 * contrast;
    let mut runs = Vec::new();
    let mut i = 0;
    while i < profile.len() {
        if profile[i] > thr {
            let start = i;
            while i < profile.len() && profile[i] > thr {
                i += 1;
            }
            let (mut wsum, mut isum) = (0.0, 0.0);
            for (k, v) in profile.iter().enumerate().take(i).skip(start) {
                wsum += v - bg;
                isum += (v - bg) * k as f64;
            }
            runs.push((isum / wsum, i - start));
        } else {
            i += 1;
        }
    }
    runs
}

struct Band {
    /// (along, across_lo, value)
    pixels: Vec<(f64, f64, f64)>,
}

fn line_residuals(band: &Band, p: f64, q: &[f64], out: &mut [f64]) {
    let line = unpack_line(true, q);
    let b = q[4] - LEVEL_OFFSET;
    for (o, &(along, lo, v)) in out.iter_mut().zip(&band.pixels) {
        *o = v - b - line.amplitude * pixel_fraction(lo, lo + p, line.center_at(along), line.sigma_nm);
    }
}

fn unpack_line(vertical: bool, q: &[f64]) -> FittedLine {
    FittedLine {
        vertical,
        intercept_nm: q[0] - POS_OFFSET,
        slope: (q[1] - LEVEL_OFFSET) / SLOPE_SCALE,
        sigma_nm: q[2].exp(),
        amplitude: q[3],
    }
}

/// Fits one marker line inside a band of pixels around its approximate
/// position, skipping `excluded` along-axis pixel ranges (crossing lines).
fn fit_line(
    img: &SyntheticImage,
    vertical: bool,
    center_idx: f64,
    run_len: usize,
    excluded: &[(f64, usize)],
    contrast: f64,
    bg: f64,
) -> Result<(FittedLine, f64), PositioningError> {
    let p = img.pixel_pitch_nm;
    let (n_across, n_along) = if vertical { (img.width, img.height) } else { (img.height, img.width) };
    let hw = run_len / 2 + 8;
    let c = center_idx.round() as isize;
    let lo = (c - hw as isize).max(0) as usize;
    let hi = ((c + hw as isize) as usize).min(n_across - 1);
    let mut pixels = Vec::new();
    for a in 0..n_along {
        if excluded.iter().any(|&(ec, el)| (a as f64 - ec).abs() <= (el / 2 + 12) as f64) {
            continue;
        }
        for k in lo..=hi {
            let v = if vertical { img.at(k, a) } else { img.at(a, k) };
            pixels.push(((a as f64 + 0.5) * p, k as f64 * p, v));
        }
    }
    if pixels.len() < 20 {
        return Err(PositioningError::NoMarkers("marker band is fully occluded".into()));
    }
    let sigma0 = (run_len.max(1) as f64 * p / 2.355).max(0.5 * p);
    let amp0 = contrast * (2.0 * std::f64::consts::PI).sqrt() * sigma0 / p;
    let mut q = vec![(center_idx + 0.5) * p + POS_OFFSET, LEVEL_OFFSET, sigma0.ln(), amp0, bg + LEVEL_OFFSET];
    let mut band = Band { pixels };
    let opts = LmOptions { max_iter: 200, ftol: 1e-10, xtol: 1e-10 };
    for pass in 0..2 {
        let n = band.pixels.len();
        let sol = levenberg_marquardt(|q, out| line_residuals(&band, p, q, out), &q, n, &opts)
            .map_err(PositioningError::LineFit)?;
        q = sol.params;
        if pass == 1 {
            break;
        }
        // drop pixels carrying spots and refit once
        let mut r = vec![0.0; n];
        line_residuals(&band, p, &q, &mut r);
        let (_, noise) = robust_level(&r);
        let floor = 1e-6 * q[3] * p / q[2].exp();
        let keep: Vec<bool> = r.iter().map(|x| x.abs() <= 5.0 * noise.max(floor)).collect();
        let kept = keep.iter().filter(|k| **k).count();
        if kept == n || kept < n / 2 {
            break;
        }
        band.pixels = band.pixels.iter().zip(&keep).filter(|(_, k)| **k).map(|(px, _)| *px).collect();
    }
    let mut line = unpack_line(vertical, &q);
    line.vertical = vertical;
    Ok((line, q[4] - LEVEL_OFFSET))
}

/// Intersection of a vertical and a horizontal line.
fn crossing(v: &FittedLine, h: &FittedLine) -> [f64; 2] {
    // x = a_v + m_v·y,  y = a_h + m_h·x
    let x = (v.intercept_nm + v.slope * h.intercept_nm) / (1.0 - v.slope * h.slope);
    [x, h.intercept_nm + h.slope * x]
}

/// Fitted spot in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpotFit {
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: f64,
    pub amplitude: f64,
    pub background: f64,
    pub covariance: [[f64; 2]; 2],
    pub amplitude_err: f64,
}

/// 2D Gaussian fit (pixel-integrated) with a flat background inside a square
/// window of half-width `half_px` around `(x0, y0)`. `fixed` holds a known
/// additive model, e.g. fitted marker lines, on the full frame. Returns
/// `None` when the fit fails or wanders outside the window.
pub fn fit_spot(img: &SyntheticImage, fixed: Option<&[f64]>, x0: f64, y0: f64, sigma0: f64, half_px: usize) -> Option<SpotFit> {
    let p = img.pixel_pitch_nm;
    let ci = (x0 / p).floor() as isize;
    let cj = (y0 / p).floor() as isize;
    let h = half_px as isize;
    let i0 = (ci - h).max(0) as usize;
    let i1 = ((ci + h) as usize).min(img.width - 1);
    let j0 = (cj - h).max(0) as usize;
    let j1 = ((cj + h) as usize).min(img.height - 1);
    let (nx, ny) = (i1 - i0 + 1, j1 - j0 + 1);
    if nx < 3 || ny < 3 {
        return None;
    }
    let mut data = Vec::with_capacity(nx * ny);
    let mut border = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let base = fixed.map_or(0.0, |f| f[j * img.width + i]);
            let v = img.at(i, j) - base;
            data.push(v);
            if i == i0 || i == i1 || j == j0 || j == j1 {
                border.push(v);
            }
        }
    }
    let b0 = median(&mut border);
    let a0: f64 = data.iter().map(|v| v - b0).sum::<f64>().max(1.0);
    let q0 = [x0, y0, sigma0.ln(), a0, b0 + LEVEL_OFFSET];
    let resid = |q: &[f64], out: &mut [f64]| {
        let s = q[2].exp();
        let fx: Vec<f64> = (i0..=i1).map(|i| pixel_fraction(i as f64 * p, (i + 1) as f64 * p, q[0], s)).collect();
        let fy: Vec<f64> = (j0..=j1).map(|j| pixel_fraction(j as f64 * p, (j + 1) as f64 * p, q[1], s)).collect();
        let b = q[4] - LEVEL_OFFSET;
        for (jj, fyv) in fy.iter().enumerate() {
            for (ii, fxv) in fx.iter().enumerate() {
                let k = jj * nx + ii;
                out[k] = data[k] - b - q[3] * fxv * fyv;
            }
        }
    };
    let opts = LmOptions { max_iter: 200, ftol: 1e-12, xtol: 1e-10 };
    let sol = levenberg_marquardt(resid, &q0, data.len(), &opts).ok()?;
    let q = &sol.params;
    let sigma = q[2].exp();
    let inside = |v: f64, lo: usize, hi: usize| v >= lo as f64 * p && v <= (hi + 1) as f64 * p;
    if !inside(q[0], i0, i1) || !inside(q[1], j0, j1) || sigma < 0.25 * p || sigma > 4.0 * sigma0 || q[3] <= 0.0 {
        return None;
    }
    let dof = (data.len() - 5).max(1) as f64;
    let scale = sol.chi2 / dof;
    let cov = &sol.covariance;
    Some(SpotFit {
        x_nm: q[0],
        y_nm: q[1],
        sigma_nm: sigma,
        amplitude: q[3],
        background: q[4] - LEVEL_OFFSET,
        covariance: [[cov[(0, 0)] * scale, cov[(0, 1)] * scale], [cov[(1, 0)] * scale, cov[(1, 1)] * scale]],
        amplitude_err: (cov[(3, 3)] * scale).max(0.0).sqrt(),
    })
}

/// Finds the marker grid, then detects and fits every emission spot.
/// Positions are reported in the frame of the first (lowest-coordinate)
/// vertical and horizontal marker lines.
pub fn locate_qds(img: &SyntheticImage, opts: &LocateOptions) -> Result<Localization, PositioningError> {
    let (w, h, p) = (img.width, img.height, img.pixel_pitch_nm);
    let col_profile: Vec<f64> = (0..w)
        .map(|i| {
            let mut c: Vec<f64> = (0..h).map(|j| img.at(i, j)).collect();
            median(&mut c)
        })
        .collect();
    let row_profile: Vec<f64> = (0..h)
        .map(|j| {
            let mut r = img.pixels[j * w..(j + 1) * w].to_vec();
            median(&mut r)
        })
        .collect();
    let vruns = profile_runs(&col_profile, opts.marker_min_contrast, h);
    let hruns = profile_runs(&row_profile, opts.marker_min_contrast, w);
    if vruns.is_empty() || hruns.is_empty() {
        return Err(PositioningError::NoMarkers(format!(
            "{} vertical and {} horizontal line candidates",
            vruns.len(),
            hruns.len()
        )));
    }
    let (cbg, _) = robust_level(&col_profile);
    let (rbg, _) = robust_level(&row_profile);
    let cmax = col_profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rmax = row_profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let jobs: Vec<(bool, f64, usize)> = vruns
        .iter()
        .map(|&(c, l)| (true, c, l))
        .chain(hruns.iter().map(|&(c, l)| (false, c, l)))
        .collect();
    let fitted: Vec<(FittedLine, f64)> = jobs
        .par_iter()
        .map(|&(vertical, c, l)| {
            if vertical {
                fit_line(img, true, c, l, &hruns, cmax - cbg, cbg)
            } else {
                fit_line(img, false, c, l, &vruns, rmax - rbg, rbg)
            }
        })
        .collect::<Result<_, _>>()?;
    let lines: Vec<FittedLine> = fitted.iter().map(|(l, _)| *l).collect();
    let mut bgs: Vec<f64> = fitted.iter().map(|(_, b)| *b).collect();
    let background = median(&mut bgs);

    let first_v = lines.iter().filter(|l| l.vertical).min_by(|a, b| a.center_at(0.0).total_cmp(&b.center_at(0.0))).unwrap();
    let first_h = lines.iter().filter(|l| !l.vertical).min_by(|a, b| a.center_at(0.0).total_cmp(&b.center_at(0.0))).unwrap();
    let [x0, y0] = crossing(first_v, first_h);
    let rotation = lines.iter().map(|l| l.angle()).sum::<f64>() / lines.len() as f64;
    let frame = Frame { origin_nm: [x0, y0], rotation_rad: rotation };

    let mut model = vec![0.0; w * h];
    for l in &lines {
        add_line(&mut model, w, h, p, l);
    }

    // Candidate detection on the box-summed residual, divided by its
    // shot-noise scale so that bright marker pixels do not trigger.
    let r = ((opts.spot_sigma_nm / p).round() as usize).max(1);
    let resid: Vec<f64> = img.pixels.iter().zip(&model).map(|(v, m)| v - m - background).collect();
    let mut boxed = vec![0.0; w * h];
    for j in r..h.saturating_sub(r) {
        for i in r..w.saturating_sub(r) {
            let (mut s, mut var) = (0.0, 0.0);
            for jj in j - r..=j + r {
                s += resid[jj * w + i - r..=jj * w + i + r].iter().sum::<f64>();
                var += model[jj * w + i - r..=jj * w + i + r].iter().map(|m| (m + background).max(1e-6)).sum::<f64>();
            }
            boxed[j * w + i] = s / var.sqrt();
        }
    }
    let (med, noise) = robust_level(&boxed);
    let peak = boxed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let thr = med + opts.detection_sigma * noise.max(1e-6 * (peak - med).abs());
    let nms = ((2.0 * opts.spot_sigma_nm / p).round() as isize).max(2);
    let mut candidates = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let v = boxed[j * w + i];
            if v <= thr {
                continue;
            }
            let mut is_max = true;
            'outer: for dj in -nms..=nms {
                for di in -nms..=nms {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if (di, dj) == (0, 0) || ii < 0 || jj < 0 || ii >= w as isize || jj >= h as isize {
                        continue;
                    }
                    let o = boxed[jj as usize * w + ii as usize];
                    let earlier = (jj, ii) < (j as isize, i as isize);
                    if o > v || (o == v && earlier) {
                        is_max = false;
                        break 'outer;
                    }
                }
            }
            if is_max {
                candidates.push(((i as f64 + 0.5) * p, (j as f64 + 0.5) * p));
            }
        }
    }

    let half_px = ((0.5 * opts.crop_sigmas * opts.spot_sigma_nm / p).ceil() as usize).max(2);
    let reach = half_px as f64 * p;
    let crossings: Vec<[f64; 2]> = lines
        .iter()
        .filter(|a| a.vertical)
        .flat_map(|a| lines.iter().filter(|b| !b.vertical).map(move |b| crossing(a, b)))
        .collect();
    let fits: Vec<Option<SpotFit>> = candidates
        .par_iter()
        .map(|&(x, y)| {
            // marker crossings are not emitters
            if crossings.iter().any(|c| (c[0] - x).abs() < reach && (c[1] - y).abs() < reach) {
                return None;
            }
            fit_spot(img, Some(&model), x, y, opts.spot_sigma_nm, half_px)
                .filter(|f| f.amplitude > MIN_AMPLITUDE_SIGNIFICANCE * f.amplitude_err)
        })
        .collect();
    let rejected = fits.iter().filter(|f| f.is_none()).count();
    let fits: Vec<SpotFit> = fits.into_iter().flatten().collect();

    let (s, c) = rotation.sin_cos();
    let spots = fits
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let [u, v] = frame.to_marker(f.x_nm, f.y_nm);
            let m = f.covariance;
            // R·M·Rᵀ with R the image→marker rotation
            let r = [[c, s], [-s, c]];
            let mut cov = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] = (0..2).map(|i| (0..2).map(|j| r[a][i] * m[i][j] * r[b][j]).sum::<f64>()).sum();
                }
            }
            let window = 0.5 * opts.crop_sigmas * f.sigma_nm;
            let contaminated = lines.iter().any(|l| l.distance(f.x_nm, f.y_nm) < window + 3.0 * l.sigma_nm);
            let overlapping = fits.iter().enumerate().any(|(o, g)| {
                o != k && (g.x_nm - f.x_nm).hypot(g.y_nm - f.y_nm) < opts.crop_sigmas * f.sigma_nm.max(g.sigma_nm)
            });
            LocatedSpot {
                x_nm: u,
                y_nm: v,
                sigma_nm: f.sigma_nm,
                amplitude: f.amplitude,
                covariance: cov,
                contaminated,
                overlapping,
            }
        })
        .collect();
    Ok(Localization { frame, lines, spots, rejected })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotStats {
    pub x_nm: f64,
    pub y_nm: f64,
    pub sigma_nm: f64,
    pub std_x_nm: f64,
    pub std_y_nm: f64,
    /// Per-axis RMS standard deviation, `√((σx² + σy²)/2)`.
    pub std_nm: f64,
    /// Frames in which the spot was found.
    pub detections: usize,
    pub contaminated: bool,
    pub overlapping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    pub frames: usize,
    pub spots: Vec<SpotStats>,
    /// Detections grouped into tracks seen in too few frames to keep.
    pub sporadic: usize,
    /// Centre of the most populated 1 nm bin of per-spot std.
    pub mode_std_nm: f64,
    pub median_std_nm: f64,
    pub low_sample_warning: bool,
}

impl RepeatabilityReport {
    pub fn fraction_below(&self, nm: f64) -> f64 {
        if self.spots.is_empty() {
            return 0.0;
        }
        self.spots.iter().filter(|s| s.std_nm < nm).count() as f64 / self.spots.len() as f64
    }

    pub fn position_rows(&self) -> Vec<PositionRow> {
        self.spots
            .iter()
            .map(|s| PositionRow {
                x_nm: s.x_nm,
                y_nm: s.y_nm,
                sigma_nm: s.sigma_nm,
                std_nm: s.std_nm,
                contaminated: s.contaminated,
                overlapping: s.overlapping,
            })
            .collect()
    }
}

/// Groups detections across frames into tracks and reports the spread of
/// the fitted centres per track.
///
/// Frames are visited in order; each detection joins the nearest track whose
/// running mean lies within `match_radius_nm` and that has no detection from
/// the same frame yet, otherwise it starts a new track. Tracks seen in fewer
/// than half of the frames (at least two) are counted as sporadic and left
/// out of the statistics, so a dim spot missed in a few frames still gets a
/// spread from the frames that found it.
pub fn repeatability_from_fits(locs: &[Localization], match_radius_nm: f64) -> Result<RepeatabilityReport, PositioningError> {
    if locs.len() < 2 {
        return Err(PositioningError::TooFewFrames(locs.len()));
    }
    struct Track {
        sum: [f64; 2],
        members: Vec<(usize, LocatedSpot)>,
    }
    impl Track {
        fn mean(&self) -> [f64; 2] {
            let n = self.members.len() as f64;
            [self.sum[0] / n, self.sum[1] / n]
        }
    }
    let mut tracks: Vec<Track> = Vec::new();
    for (f, loc) in locs.iter().enumerate() {
        // closest pairs first so two detections cannot fight over one track
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (d, s) in loc.spots.iter().enumerate() {
            for (t, tr) in tracks.iter().enumerate() {
                let m = tr.mean();
                let dist = (s.x_nm - m[0]).hypot(s.y_nm - m[1]);
                if dist <= match_radius_nm {
                    pairs.push((dist, d, t));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut used_det = vec![false; loc.spots.len()];
        let mut used_track = vec![false; tracks.len()];
        for (_, d, t) in pairs {
            if used_det[d] || used_track[t] {
                continue;
            }
            used_det[d] = true;
            used_track[t] = true;
            let s = loc.spots[d];
            tracks[t].sum[0] += s.x_nm;
            tracks[t].sum[1] += s.y_nm;
            tracks[t].members.push((f, s));
        }
        for (d, s) in loc.spots.iter().enumerate() {
            if !used_det[d] {
                tracks.push(Track { sum: [s.x_nm, s.y_nm], members: vec![(f, *s)] });
            }
        }
    }

    let min_detections = locs.len().div_ceil(2).max(2);
    let mut spots = Vec::new();
    let mut sporadic = 0;
    for tr in &tracks {
        if tr.members.len() < min_detections {
            sporadic += 1;
            continue;
        }
        let n = tr.members.len() as f64;
        let mean = |v: &dyn Fn(&LocatedSpot) -> f64| tr.members.iter().map(|(_, s)| v(s)).sum::<f64>() / n;
        let (mx, my) = (mean(&|s| s.x_nm), mean(&|s| s.y_nm));
        let sd = |v: &dyn Fn(&LocatedSpot) -> f64, m: f64| {
            (tr.members.iter().map(|(_, s)| (v(s) - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let (sx, sy) = (sd(&|s| s.x_nm, mx), sd(&|s| s.y_nm, my));
        let majority = |flag: &dyn Fn(&LocatedSpot) -> bool| 2 * tr.members.iter().filter(|(_, s)| flag(s)).count() > tr.members.len();
        spots.push(SpotStats {
            x_nm: mx,
            y_nm: my,
            sigma_nm: mean(&|s| s.sigma_nm),
            std_x_nm: sx,
            std_y_nm: sy,
            std_nm: (0.5 * (sx * sx + sy * sy)).sqrt(),
            detections: tr.members.len(),
            contaminated: majority(&|s| s.contaminated),
            overlapping: majority(&|s| s.overlapping),
        });
    }
    if spots.is_empty() {
        return Err(PositioningError::MismatchedLayout("no spot was found in at least half of the frames".into()));
    }
    spots.sort_by(|a, b| a.y_nm.total_cmp(&b.y_nm).then(a.x_nm.total_cmp(&b.x_nm)));

    let mut stds: Vec<f64> = spots.iter().map(|s| s.std_nm).collect();
    let mut bins = std::collections::BTreeMap::<u64, usize>::new();
    for s in &stds {
        *bins.entry(s.floor() as u64).or_default() += 1;
    }
    let top = bins.values().copied().max().unwrap_or(0);
    let mode_bin = bins.iter().find(|(_, c)| **c == top).map(|(b, _)| *b).unwrap_or(0);
    Ok(RepeatabilityReport {
        frames: locs.len(),
        spots,
        sporadic,
        mode_std_nm: mode_bin as f64 + 0.5,
        median_std_nm: median(&mut stds),
        low_sample_warning: locs.len() < LOW_FRAME_THRESHOLD,
    })
}

/// Localizes every frame (in parallel) and reports per-spot repeatability.
/// All frames must come from the same layout.
pub fn repeatability(images: &[SyntheticImage], opts: &LocateOptions) -> Result<RepeatabilityReport, PositioningError> {
    if images.len() < 2 {
        return Err(PositioningError::TooFewFrames(images.len()));
    }
    if let Some(f) = images.iter().position(|im| im.truth.spots != images[0].truth.spots) {
        return Err(PositioningError::MismatchedLayout(format!("frame {f} was rendered from a different layout")));
    }
    let locs: Vec<Localization> = images.par_iter().map(|im| locate_qds(im, opts)).collect::<Result<_, _>>()?;
    repeatability_from_fits(&locs, 3.0 * opts.spot_sigma_nm)
}
