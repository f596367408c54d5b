use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use super::QuantumError;

pub type C64 = nalgebra::Complex<f64>;
pub type Matrix4c = Matrix4<C64>;
pub type Matrix2c = Matrix2<C64>;

const NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = -1e-10;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Normalized two-photon pure state over `(HH, HV, VH, VV)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 4]", into = "[[f64; 2]; 4]")]
pub struct PureState(Vector4<C64>);

impl PureState {
    pub fn new(amplitudes: [C64; 4]) -> Result<Self, QuantumError> {
        let v = Vector4::from(amplitudes);
        let norm_sq = v.norm_squared();
        if !norm_sq.is_finite() {
            return Err(QuantumError::NonFinite);
        }
        if (norm_sq - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized { norm_sq });
        }
        Ok(Self(v))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(amplitudes: [C64; 4]) -> Result<Self, QuantumError> {
        let v = Vector4::from(amplitudes);
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(QuantumError::NotNormalized { norm_sq: n * n });
        }
        Ok(Self(v / C64::from(n)))
    }

    /// Product state `|a⟩ ⊗ |b⟩` of two single-photon polarization kets.
    pub fn product(a: Vector2<C64>, b: Vector2<C64>) -> Result<Self, QuantumError> {
        Self::normalized([a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
    }

    pub fn phi_plus() -> Self {
        Self(Vector4::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(FRAC_1_SQRT_2, 0.0)))
    }

    pub fn phi_minus() -> Self {
        Self(Vector4::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-FRAC_1_SQRT_2, 0.0)))
    }

    pub fn psi_plus() -> Self {
        Self(Vector4::new(c(0.0, 0.0), c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0), c(0.0, 0.0)))
    }

    pub fn psi_minus() -> Self {
        Self(Vector4::new(c(0.0, 0.0), c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0), c(0.0, 0.0)))
    }

    pub fn amplitudes(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn projector(&self) -> Matrix4c {
        self.0 * self.0.adjoint()
    }

    pub fn to_density_matrix(&self) -> DensityMatrix {
        DensityMatrix(hermitize(&self.projector()))
    }

    /// `|⟨self|other⟩|²`
    pub fn overlap(&self, other: &PureState) -> f64 {
        self.0.dotc(&other.0).norm_sqr()
    }
}

impl TryFrom<[[f64; 2]; 4]> for PureState {
    type Error = QuantumError;
    fn try_from(v: [[f64; 2]; 4]) -> Result<Self, Self::Error> {
        PureState::new(v.map(|[re, im]| c(re, im)))
    }
}

impl From<PureState> for [[f64; 2]; 4] {
    fn from(s: PureState) -> Self {
        [0, 1, 2, 3].map(|i| [s.0[i].re, s.0[i].im])
    }
}

/// Two-qubit density matrix that is Hermitian, unit-trace and positive
/// semidefinite. Construct with [`validate_density_matrix`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(Matrix4c);

impl DensityMatrix {
    pub fn maximally_mixed() -> Self {
        Self(Matrix4c::identity() * C64::from(0.25))
    }

    /// Werner state `p |Φ⁺⟩⟨Φ⁺| + (1 - p) I/4`.
    pub fn werner(p: f64) -> Result<Self, QuantumError> {
        let m = PureState::phi_plus().projector() * C64::from(p)
            + Matrix4c::identity() * C64::from((1.0 - p) / 4.0);
        validate_density_matrix(m)
    }

    pub fn matrix(&self) -> &Matrix4c {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix4c {
        self.0
    }

    /// Real eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 4] {
        hermitian_eigenvalues(&self.0)
    }

    /// `U ρ U†` for a 4×4 unitary `U`.
    pub fn transform(&self, u: &Matrix4c) -> Result<Self, QuantumError> {
        validate_density_matrix(hermitize(&(u * self.0 * u.adjoint())))
    }

    /// `(U_A ⊗ U_B) ρ (U_A ⊗ U_B)†`
    pub fn local_transform(&self, ua: &Matrix2c, ub: &Matrix2c) -> Result<Self, QuantumError> {
        self.transform(&kron2(ua, ub))
    }

    /// Convex mixture `(1 - w) self + w other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Result<Self, QuantumError> {
        validate_density_matrix(self.0 * C64::from(1.0 - w) + other.0 * C64::from(w))
    }
}

/// Checks the physicality invariants without altering the matrix.
pub fn validate_density_matrix(m: Matrix4c) -> Result<DensityMatrix, QuantumError> {
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QuantumError::NonFinite);
    }
    let deviation = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if deviation > HERMITIAN_TOL {
        return Err(QuantumError::NotHermitian { deviation });
    }
    let trace = m.trace().re;
    if (trace - 1.0).abs() > TRACE_TOL {
        return Err(QuantumError::TraceNotOne { trace });
    }
    let h = hermitize(&m);
    let min_eig = hermitian_eigenvalues(&h)[0];
    if min_eig < PSD_TOL {
        return Err(QuantumError::NegativeEigenvalue { value: min_eig });
    }
    Ok(DensityMatrix(h))
}

/// Nearest unit-trace positive semidefinite matrix (in the 2-norm) to a
/// Hermitian matrix of trace one: negative spectral weight is removed and the
/// deficit is spread evenly over the remaining eigenvalues.
pub fn project_to_physical(m: &Matrix4c) -> Result<DensityMatrix, QuantumError> {
    let h = hermitize(m);
    let trace = h.trace().re;
    if !(trace.is_finite() && trace > 0.0) {
        return Err(QuantumError::TraceNotOne { trace });
    }
    let h = h / C64::from(trace);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lam: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut accumulated = 0.0;
    let mut kept = 4;
    while kept > 0 {
        let candidate = lam[kept - 1] + accumulated / kept as f64;
        if candidate >= 0.0 {
            break;
        }
        accumulated += lam[kept - 1];
        lam[kept - 1] = 0.0;
        kept -= 1;
    }
    for l in lam.iter_mut().take(kept) {
        *l += accumulated / kept as f64;
    }

    let mut out = Matrix4c::zeros();
    for (k, &i) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        out += v * v.adjoint() * C64::from(lam[k]);
    }
    let out = hermitize(&out);
    let t = out.trace().re;
    validate_density_matrix(out / C64::from(t))
}

pub(crate) fn hermitize(m: &Matrix4c) -> Matrix4c {
    (m + m.adjoint()) * C64::from(0.5)
}

pub(crate) fn hermitian_eigenvalues(m: &Matrix4c) -> [f64; 4] {
    let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    [ev[0], ev[1], ev[2], ev[3]]
}

/// Kronecker product of two single-qubit operators.
pub fn kron2(a: &Matrix2c, b: &Matrix2c) -> Matrix4c {
    Matrix4c::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}
