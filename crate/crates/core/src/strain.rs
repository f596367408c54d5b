//! Affine strain response of the exciton fine structure.
//!
//! The fine structure is a 2-vector `d` (μeV) whose length is the splitting
//! `s` and whose direction gives the polarization angle `φ = ½ atan2(d₂, d₁)`.
//! Two leg pairs of the actuator move `d` linearly; the third only shifts the
//! emission energy.
//!
//! Config file keys (TOML):
//!
//! ```toml
//! d0 = [-12.0, -6.67]        # zero-field FSS vector, μeV
//! u14 = [1.0, 0.0]           # response to legs 1-4, μeV per kV/cm
//! u25 = [0.0, 1.0]           # response to legs 2-5, μeV per kV/cm
//! e0_eV = 1.589              # unperturbed exciton energy
//! kappa_neV_per_V = [90.0, 90.0, 90.0]   # energy slopes for pairs 14, 25, 36
//! plate_thickness_um = 300.0
//! field_limit_kV_cm = 50.0
//! ```

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::substream;

/// Largest response-matrix condition number accepted as a working device.
pub const MAX_CONDITION: f64 = 1e10;
pub const MIN_SCAN_ANGLES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrainError {
    #[error("invalid strain model: {0}")]
    InvalidModel(String),
    #[error("leg-pair responses are not independent (condition number {condition:e})")]
    SingularResponse { condition: f64 },
    #[error("under-sampled scan: {0}")]
    UnderSampled(String),
    #[error("calibration needs at least {needed} measurements, got {got}")]
    TooFewMeasurements { got: usize, needed: usize },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrainModel {
    pub d0: [f64; 2],
    pub u14: [f64; 2],
    pub u25: [f64; 2],
    #[serde(rename = "e0_eV")]
    pub e0: f64,
    #[serde(rename = "kappa_neV_per_V")]
    pub kappa: [f64; 3],
    #[serde(rename = "plate_thickness_um")]
    pub plate_thickness: f64,
    #[serde(rename = "field_limit_kV_cm", default = "default_field_limit")]
    pub field_limit: f64,
}

fn default_field_limit() -> f64 {
    50.0
}

impl StrainModel {
    /// Device whose null sits at `E14 = 12`, `E25 = 6.67` kV/cm.
    pub fn example() -> Self {
        Self {
            d0: [-12.0, -6.67],
            u14: [1.0, 0.0],
            u25: [0.0, 1.0],
            e0: 1.589,
            kappa: [90.0; 3],
            plate_thickness: 300.0,
            field_limit: default_field_limit(),
        }
    }

    pub fn from_toml(s: &str) -> Result<Self, StrainError> {
        let m: Self = toml::from_str(s).map_err(|e| StrainError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn validate(&self) -> Result<(), StrainError> {
        let finite = self.d0.iter().chain(&self.u14).chain(&self.u25).chain(&self.kappa).all(|v| v.is_finite());
        if !finite || !self.e0.is_finite() {
            return Err(StrainError::InvalidModel("entries must be finite".into()));
        }
        if !(self.plate_thickness > 0.0) {
            return Err(StrainError::InvalidModel(format!("plate thickness must be > 0, got {}", self.plate_thickness)));
        }
        if !(self.field_limit > 0.0) {
            return Err(StrainError::InvalidModel(format!("field limit must be > 0, got {}", self.field_limit)));
        }
        Ok(())
    }

    fn response(&self) -> Matrix2<f64> {
        Matrix2::new(self.u14[0], self.u25[0], self.u14[1], self.u25[1])
    }

    /// Ratio of the extreme singular values of `[u14 u25]`.
    pub fn condition_number(&self) -> f64 {
        let sv = self.response().singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        if lo == 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn within_limits(&self, f: &FieldSetting) -> bool {
        [f.e14, f.e25, f.e36].iter().all(|e| e.abs() <= self.field_limit)
    }
}

/// Fields on the three leg pairs, kV/cm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldSetting {
    pub e14: f64,
    pub e25: f64,
    pub e36: f64,
}

impl FieldSetting {
    pub fn new(e14: f64, e25: f64, e36: f64) -> Self {
        Self { e14, e25, e36 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssVector {
    pub d: [f64; 2],
    /// μeV
    pub s: f64,
    /// rad, in (−π/2, π/2]
    pub phi: f64,
}

impl FssVector {
    pub fn from_components(d: [f64; 2]) -> Self {
        Self { d, s: d[0].hypot(d[1]), phi: 0.5 * d[1].atan2(d[0]) }
    }

    /// Inverse of the `(s, φ)` parametrization.
    pub fn from_polar(s: f64, phi: f64) -> Self {
        Self::from_components([s * (2.0 * phi).cos(), s * (2.0 * phi).sin()])
    }
}

/// `d = d0 + E14·u14 + E25·u25`
pub fn fss_vector(model: &StrainModel, f: &FieldSetting) -> FssVector {
    FssVector::from_components([
        model.d0[0] + f.e14 * model.u14[0] + f.e25 * model.u25[0],
        model.d0[1] + f.e14 * model.u14[1] + f.e25 * model.u25[1],
    ])
}

/// Fields on legs 1-4 and 2-5 that cancel the fine structure; `e36` is left
/// at zero.
pub fn find_null(model: &StrainModel) -> Result<FieldSetting, StrainError> {
    let condition = model.condition_number();
    if !(condition <= MAX_CONDITION) {
        return Err(StrainError::SingularResponse { condition });
    }
    let (a, b, c, d) = (model.u14[0], model.u25[0], model.u14[1], model.u25[1]);
    let det = a * d - b * c;
    let (r0, r1) = (-model.d0[0], -model.d0[1]);
    Ok(FieldSetting { e14: (d * r0 - b * r1) / det, e25: (a * r1 - c * r0) / det, e36: 0.0 })
}

/// Whether `energy_at` receives leg voltages or fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveUnits {
    /// The setting holds fields in kV/cm.
    Fields,
    /// The setting holds voltages in V.
    Voltages,
}

/// Voltage across the plate for a field, V.
pub fn field_to_voltage(model: &StrainModel, e_kv_cm: f64) -> f64 {
    // kV/cm × μm = 0.1 V
    e_kv_cm * model.plate_thickness * 0.1
}

/// Exciton energy in eV: `e0 + Σ κ_pair · V_pair`.
pub fn energy_at(model: &StrainModel, f: &FieldSetting, units: DriveUnits) -> f64 {
    let v = [f.e14, f.e25, f.e36].map(|x| match units {
        DriveUnits::Fields => field_to_voltage(model, x),
        DriveUnits::Voltages => x,
    });
    model.e0 + (0..3).map(|i| model.kappa[i] * 1e-9 * v[i]).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "e14_kV_cm")]
    pub e14: f64,
    #[serde(rename = "e25_kV_cm")]
    pub e25: f64,
    #[serde(rename = "s_ueV")]
    pub s: f64,
    #[serde(rename = "phi_rad")]
    pub phi: f64,
}

/// FSS over a grid, E14 in the outer loop.
pub fn sweep_fss(model: &StrainModel, e14_values: &[f64], e25_values: &[f64]) -> Result<Vec<SweepRow>, StrainError> {
    if e14_values.is_empty() || e25_values.is_empty() {
        return Err(StrainError::EmptyGrid);
    }
    Ok(e14_values
        .iter()
        .flat_map(|&e14| {
            e25_values.iter().map(move |&e25| {
                let v = fss_vector(model, &FieldSetting::new(e14, e25, 0.0));
                SweepRow { e14, e25, s: v.s, phi: v.phi }
            })
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<(), StrainError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| StrainError::Csv(e.to_string()))?;
    }
    wr.flush().map_err(|e| StrainError::Csv(e.to_string()))
}

/// Indices of the local minima of `s` along each fixed-E14 curve of a sweep
/// with `n25` points per curve.
pub fn curve_minima(rows: &[SweepRow], n25: usize) -> Vec<Vec<usize>> {
    rows.chunks(n25)
        .map(|c| {
            (0..c.len())
                .filter(|&i| (i == 0 || c[i].s < c[i - 1].s) && (i + 1 == c.len() || c[i].s <= c[i + 1].s))
                .collect()
        })
        .collect()
}

/// X–XX energy difference against half-wave-plate angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PolarizationScan {
    pub hwp_angle_rad: Vec<f64>,
    pub energy_difference_ueV: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    /// μeV
    pub s: f64,
    /// rad
    pub phi: f64,
    /// μeV
    pub noise_sigma: f64,
    pub n_angles: usize,
    /// Mean X–XX difference, μeV.
    pub mean_difference: f64,
    /// HWP rotation covered, rad; angles are spaced evenly over `[0, span)`.
    pub span: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self { s: 0.0, phi: 0.0, noise_sigma: 0.5, n_angles: 36, mean_difference: 0.0, span: PI }
    }
}

/// `D(θ) = D̄ + s cos(4θ − 2φ)` plus Gaussian noise. A HWP at `θ` turns the
/// polarization by `2θ`, and the two cascade lines shift in opposite
/// directions, so the difference swings by `±s`.
pub fn synthesize_polarization_scan(spec: &ScanSpec, seed: u64) -> Result<PolarizationScan, StrainError> {
    if spec.n_angles < MIN_SCAN_ANGLES {
        return Err(StrainError::UnderSampled(format!("{} angles, need {MIN_SCAN_ANGLES}", spec.n_angles)));
    }
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| StrainError::InvalidModel(e.to_string()))?)
    } else {
        None
    };
    let mut rng = substream(seed, 0);
    let angles: Vec<f64> = (0..spec.n_angles).map(|k| spec.span * k as f64 / spec.n_angles as f64).collect();
    let diffs = angles
        .iter()
        .map(|&t| {
            spec.mean_difference + spec.s * (4.0 * t - 2.0 * spec.phi).cos() + noise.map_or(0.0, |n| n.sample(&mut rng))
        })
        .collect();
    Ok(PolarizationScan { hwp_angle_rad: angles, energy_difference_ueV: diffs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssEstimate {
    /// Half-amplitude of the fitted sinusoid, μeV.
    pub s: f64,
    pub s_err: f64,
    /// rad, in [0, π)
    pub phi: f64,
    pub mean: f64,
    /// Expected value of `s` for a true splitting of zero at this noise level
    /// (Rayleigh mean), i.e. the bias of the amplitude estimator near the null.
    pub null_bias: f64,
}

/// Linear least squares on `D = c + a cos 4θ + b sin 4θ` at fixed period.
pub fn extract_fss(scan: &PolarizationScan) -> Result<FssEstimate, StrainError> {
    let n = scan.hwp_angle_rad.len();
    if n != scan.energy_difference_ueV.len() {
        return Err(StrainError::UnderSampled("angle and energy columns differ in length".into()));
    }
    if n < MIN_SCAN_ANGLES {
        return Err(StrainError::UnderSampled(format!("{n} points, need {MIN_SCAN_ANGLES}")));
    }
    let (lo, hi) = scan
        .hwp_angle_rad
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    // n evenly spaced angles over a 90° period span (n−1)/n of it
    if hi - lo < FRAC_PI_2 * (1.0 - 1.0 / n as f64) - 1e-12 {
        return Err(StrainError::UnderSampled(format!("angles span {:.1}°, need 90°", (hi - lo).to_degrees())));
    }

    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    let rows: Vec<Vector3<f64>> =
        scan.hwp_angle_rad.iter().map(|&t| Vector3::new(1.0, (4.0 * t).cos(), (4.0 * t).sin())).collect();
    for (x, &y) in rows.iter().zip(&scan.energy_difference_ueV) {
        ata += x * x.transpose();
        atb += x * y;
    }
    let inv = ata
        .try_inverse()
        .ok_or_else(|| StrainError::UnderSampled("angles do not resolve the 90° period".into()))?;
    let coef = inv * atb;
    let (c, a, b) = (coef[0], coef[1], coef[2]);
    let rss: f64 = rows.iter().zip(&scan.energy_difference_ueV).map(|(x, y)| (y - x.dot(&coef)).powi(2)).sum();
    let sigma2 = if n > 3 { rss / (n - 3) as f64 } else { 0.0 };
    let cov = inv * sigma2;

    let s = a.hypot(b);
    let amp_sigma = (0.5 * (cov[(1, 1)] + cov[(2, 2)])).sqrt();
    let s_err = if s > 0.0 {
        ((a * a * cov[(1, 1)] + b * b * cov[(2, 2)] + 2.0 * a * b * cov[(1, 2)]) / (s * s)).sqrt()
    } else {
        amp_sigma
    };
    let mut phi = 0.5 * b.atan2(a);
    if phi < 0.0 {
        phi += PI;
    }
    Ok(FssEstimate { s, s_err, phi, mean: c, null_bias: amp_sigma * (PI / 2.0).sqrt() })
}

/// Measured splitting and polarization angle at one field setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssMeasurement {
    pub field: FieldSetting,
    pub s: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: StrainModel,
    /// RMS distance between measured and fitted FSS vectors, μeV.
    pub rms_residual: f64,
}

/// How the polarization angle of a measurement was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleConvention {
    /// `φ` is known mod π (which line is higher in energy is known), so
    /// `(s, φ)` fixes `d` completely.
    Full,
    /// Only the polarization axis is known (`φ` mod π/2), so `d` is known up
    /// to sign.
    AxisOnly,
}

/// Least-squares fit of `d0`, `u14`, `u25` to measurements taken in sweep
/// order. With [`AngleConvention::AxisOnly`] each vector first takes the sign
/// closest to its predecessor (φ continuity along the sweep). Energy slopes
/// and plate thickness are copied from `base`.
pub fn calibrate(
    measurements: &[FssMeasurement],
    base: &StrainModel,
    angles: AngleConvention,
) -> Result<Calibration, StrainError> {
    if measurements.len() < 3 {
        return Err(StrainError::TooFewMeasurements { got: measurements.len(), needed: 3 });
    }
    let mut vectors: Vec<Vector2<f64>> = Vec::with_capacity(measurements.len());
    for m in measurements {
        let v = FssVector::from_polar(m.s, m.phi);
        let mut d = Vector2::new(v.d[0], v.d[1]);
        if angles == AngleConvention::AxisOnly {
            if let Some(prev) = vectors.last() {
                if (d - prev).norm() > (-d - prev).norm() {
                    d = -d;
                }
            }
        }
        vectors.push(d);
    }

    let mut model = fit_affine(measurements, &vectors, base)?;
    let refine = if angles == AngleConvention::AxisOnly { 20 } else { 0 };
    // Continuity can pick the wrong sign where the sweep passes near the
    // null; re-assign each sign against the current fit until stable.
    for _ in 0..refine {
        let mut changed = false;
        for (m, d) in measurements.iter().zip(vectors.iter_mut()) {
            let f = fss_vector(&model, &m.field);
            let pred = Vector2::new(f.d[0], f.d[1]);
            if (*d - pred).norm() > (-*d - pred).norm() {
                *d = -*d;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        model = fit_affine(measurements, &vectors, base)?;
    }
    let rms = (measurements
        .iter()
        .zip(&vectors)
        .map(|(m, d)| {
            let f = fss_vector(&model, &m.field);
            (Vector2::new(f.d[0], f.d[1]) - d).norm_squared()
        })
        .sum::<f64>()
        / measurements.len() as f64)
        .sqrt();
    Ok(Calibration { model, rms_residual: rms })
}

fn fit_affine(measurements: &[FssMeasurement], vectors: &[Vector2<f64>], base: &StrainModel) -> Result<StrainModel, StrainError> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = [Vector3::<f64>::zeros(); 2];
    for (m, d) in measurements.iter().zip(vectors) {
        let x = Vector3::new(1.0, m.field.e14, m.field.e25);
        ata += x * x.transpose();
        atb[0] += x * d[0];
        atb[1] += x * d[1];
    }
    let inv = ata.try_inverse().ok_or(StrainError::SingularResponse { condition: f64::INFINITY })?;
    let cx = inv * atb[0];
    let cy = inv * atb[1];
    Ok(StrainModel { d0: [cx[0], cy[0]], u14: [cx[1], cy[1]], u25: [cx[2], cy[2]], ..base.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_of_the_example_device() {
        let m = StrainModel::example();
        let f = find_null(&m).unwrap();
        assert_eq!((f.e14, f.e25, f.e36), (12.0, 6.67, 0.0));
        assert!(fss_vector(&m, &f).s < 1e-12);
        assert_eq!(fss_vector(&m, &FieldSetting::new(12.0, 6.67, 3.0)).s, 0.0);
    }

    #[test]
    fn flipped_leg_moves_the_null() {
        let m = StrainModel { u25: [0.0, -1.0], ..StrainModel::example() };
        let f = find_null(&m).unwrap();
        assert!((f.e25 + 6.67).abs() < 1e-12);
        let zero = StrainModel { d0: [0.0, 0.0], ..StrainModel::example() };
        assert_eq!(fss_vector(&zero, &FieldSetting::default()).s, 0.0);
        let f = find_null(&zero).unwrap();
        assert_eq!((f.e14, f.e25), (0.0, 0.0));
    }

    #[test]
    fn dependent_legs_are_rejected() {
        let m = StrainModel { u14: [1.0, 0.5], u25: [2.0, 1.0], ..StrainModel::example() };
        assert!(matches!(find_null(&m), Err(StrainError::SingularResponse { .. })));
    }

    #[test]
    fn energy_tuning() {
        let m = StrainModel::example();
        assert_eq!(energy_at(&m, &FieldSetting::default(), DriveUnits::Fields), m.e0);
        let f = FieldSetting::new(12.0, 0.0, 0.0);
        assert!((field_to_voltage(&m, 12.0) - 360.0).abs() < 1e-12);
        let shift = energy_at(&m, &f, DriveUnits::Fields) - m.e0;
        assert!((shift - 32.4e-6).abs() < 1e-12);
        let neg = energy_at(&m, &FieldSetting::new(0.0, 0.0, -360.0), DriveUnits::Voltages) - m.e0;
        assert!((neg + 32.4e-6).abs() < 1e-12);
    }

    #[test]
    fn toml_round_trip() {
        let m = StrainModel::example();
        assert_eq!(StrainModel::from_toml(&m.to_toml()).unwrap(), m);
        assert!(StrainModel::from_toml("d0 = [1.0]").is_err());
    }

    #[test]
    fn scan_extrema_and_period() {
        let spec = ScanSpec { s: 5.0, phi: 0.0, noise_sigma: 0.0, n_angles: 72, ..Default::default() };
        let scan = synthesize_polarization_scan(&spec, 0).unwrap();
        assert!((scan.energy_difference_ueV[0] - 5.0).abs() < 1e-12);
        // 72 angles over 180°: index 18 is 45°, index 36 is 90°
        assert!((scan.energy_difference_ueV[18] + 5.0).abs() < 1e-12);
        assert!((scan.energy_difference_ueV[36] - scan.energy_difference_ueV[0]).abs() < 1e-12);
        let flat = synthesize_polarization_scan(&ScanSpec { noise_sigma: 0.0, ..Default::default() }, 0).unwrap();
        assert!(flat.energy_difference_ueV.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_extraction_is_exact() {
        let spec = ScanSpec { s: 5.0, phi: 0.3, noise_sigma: 0.0, ..Default::default() };
        let e = extract_fss(&synthesize_polarization_scan(&spec, 0).unwrap()).unwrap();
        assert!((e.s - 5.0).abs() < 1e-6 && (e.phi - 0.3).abs() < 1e-6);
    }

    #[test]
    fn under_sampled_scans_are_rejected() {
        assert!(synthesize_polarization_scan(&ScanSpec { n_angles: 7, ..Default::default() }, 0).is_err());
        let narrow = ScanSpec { span: 0.5, noise_sigma: 0.0, s: 1.0, ..Default::default() };
        let scan = synthesize_polarization_scan(&narrow, 0).unwrap();
        assert!(matches!(extract_fss(&scan), Err(StrainError::UnderSampled(_))));
    }

    #[test]
    fn calibration_recovers_the_model() {
        let truth = StrainModel { d0: [3.0, -4.0], u14: [0.8, 0.3], u25: [-0.2, 1.1], ..StrainModel::example() };
        let mut ms = Vec::new();
        for e14 in [-10.0, 0.0, 10.0] {
            for k in 0..15 {
                let f = FieldSetting::new(e14, -10.0 + 1.5 * k as f64, 0.0);
                let v = fss_vector(&truth, &f);
                ms.push(FssMeasurement { field: f, s: v.s, phi: v.phi });
            }
        }
        let cal = calibrate(&ms, &StrainModel::example(), AngleConvention::AxisOnly).unwrap();
        // the global sign of d is unobservable
        let sign = if cal.model.d0[0] * truth.d0[0] > 0.0 { 1.0 } else { -1.0 };
        for (a, b) in cal.model.u14.iter().zip(&truth.u14) {
            assert!((sign * a - b).abs() < 1e-9);
        }
        assert!(cal.rms_residual < 1e-9);
        let null = find_null(&cal.model).unwrap();
        let truth_null = find_null(&truth).unwrap();
        assert!((null.e14 - truth_null.e14).abs() < 1e-9 && (null.e25 - truth_null.e25).abs() < 1e-9);
    }
}
