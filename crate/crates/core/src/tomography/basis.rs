use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::quantum::{DensityMatrix, Matrix4c, PureState, C64};

/// Single-photon analyzer setting.
///
/// `D = (H+V)/√2`, `A = (H−V)/√2`, `R = (H−iV)/√2`, `L = (H+iV)/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Pol {
    pub const ALL: [Pol; 6] = [Pol::H, Pol::V, Pol::D, Pol::A, Pol::R, Pol::L];

    pub fn ket(self) -> Vector2<C64> {
        let s = FRAC_1_SQRT_2;
        let (a, b) = match self {
            Pol::H => (C64::new(1.0, 0.0), C64::new(0.0, 0.0)),
            Pol::V => (C64::new(0.0, 0.0), C64::new(1.0, 0.0)),
            Pol::D => (C64::new(s, 0.0), C64::new(s, 0.0)),
            Pol::A => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            Pol::R => (C64::new(s, 0.0), C64::new(0.0, -s)),
            Pol::L => (C64::new(s, 0.0), C64::new(0.0, s)),
        };
        Vector2::new(a, b)
    }

    /// Index of the mutually unbiased basis: 0 for H/V, 1 for D/A, 2 for R/L.
    pub fn basis(self) -> usize {
        match self {
            Pol::H | Pol::V => 0,
            Pol::D | Pol::A => 1,
            Pol::R | Pol::L => 2,
        }
    }
}

impl fmt::Display for Pol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pol::H => "H",
            Pol::V => "V",
            Pol::D => "D",
            Pol::A => "A",
            Pol::R => "R",
            Pol::L => "L",
        };
        f.write_str(s)
    }
}

impl FromStr for Pol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "H" | "h" => Ok(Pol::H),
            "V" | "v" => Ok(Pol::V),
            "D" | "d" => Ok(Pol::D),
            "A" | "a" => Ok(Pol::A),
            "R" | "r" => Ok(Pol::R),
            "L" | "l" => Ok(Pol::L),
            other => Err(format!("unknown polarization {other:?}")),
        }
    }
}

/// One of the 36 two-photon settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BasisLabel {
    pub arm_x: Pol,
    pub arm_xx: Pol,
}

impl BasisLabel {
    pub fn new(arm_x: Pol, arm_xx: Pol) -> Self {
        Self { arm_x, arm_xx }
    }

    pub fn all() -> impl Iterator<Item = BasisLabel> {
        Pol::ALL
            .into_iter()
            .flat_map(|a| Pol::ALL.into_iter().map(move |b| BasisLabel::new(a, b)))
    }

    /// Index 0..9 of the basis pair the setting belongs to.
    pub fn group(&self) -> usize {
        3 * self.arm_x.basis() + self.arm_xx.basis()
    }

    pub fn state(&self) -> PureState {
        PureState::product(self.arm_x.ket(), self.arm_xx.ket()).expect("kets are normalized")
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.arm_x, self.arm_xx)
    }
}

/// `|a⟩⟨a| ⊗ |b⟩⟨b|`
pub fn projector(label: BasisLabel) -> Matrix4c {
    label.state().projector()
}

/// Born-rule counts `total_pairs · Tr(Π ρ)`, where `total_pairs` is the number
/// of pairs sent through each basis pair (four outcomes).
pub fn expected_counts(rho: &DensityMatrix, total_pairs: f64) -> BTreeMap<BasisLabel, f64> {
    BasisLabel::all()
        .map(|l| {
            let p = (projector(l) * rho.matrix()).trace().re.max(0.0);
            (l, total_pairs * p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn there_are_36_distinct_settings() {
        let all: std::collections::BTreeSet<_> = BasisLabel::all().collect();
        assert_eq!(all.len(), 36);
    }

    #[test]
    fn projectors_are_rank_one() {
        for l in BasisLabel::all() {
            let p = projector(l);
            assert!((p * p - p).norm() < 1e-14);
            assert!((p - p.adjoint()).norm() < 1e-15);
            assert_abs_diff_eq!(p.trace().re, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn projector_reference_values() {
        let hh = projector(BasisLabel::new(Pol::H, Pol::H));
        for r in 0..4 {
            for c in 0..4 {
                let e = if r == 0 && c == 0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(hh[(r, c)].re, e, epsilon = 1e-15);
            }
        }
        let dd = projector(BasisLabel::new(Pol::D, Pol::D));
        assert!(dd.iter().all(|z| (z - C64::new(0.25, 0.0)).norm() < 1e-15));
        let rl = projector(BasisLabel::new(Pol::R, Pol::L));
        let phi = PureState::phi_plus().to_density_matrix();
        assert_abs_diff_eq!((rl * phi.matrix()).trace().re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn expected_counts_reference_values() {
        let mixed = expected_counts(&DensityMatrix::maximally_mixed(), 3600.0);
        assert!(mixed.values().all(|&n| (n - 900.0).abs() < 1e-9));
        let bell = expected_counts(&PureState::phi_plus().to_density_matrix(), 1000.0);
        let get = |a, b| bell[&BasisLabel::new(a, b)];
        assert_abs_diff_eq!(get(Pol::H, Pol::H), 500.0, epsilon = 1e-9);
        assert_abs_diff_eq!(get(Pol::H, Pol::V), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(get(Pol::D, Pol::A), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(get(Pol::D, Pol::D), 500.0, epsilon = 1e-9);
    }

    #[test]
    fn each_basis_group_sums_to_total() {
        let mut rng = crate::rng::substream(3, 0);
        let rho = crate::quantum::random::density_matrix(&mut rng);
        let counts = expected_counts(&rho, 1234.5);
        let mut sums = [0.0; 9];
        for (l, n) in &counts {
            sums[l.group()] += n;
        }
        for s in sums {
            assert_abs_diff_eq!(s, 1234.5, epsilon = 1e-9);
        }
    }
}
