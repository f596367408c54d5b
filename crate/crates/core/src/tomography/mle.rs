use serde::{Deserialize, Serialize};

use super::basis::{projector, BasisLabel};
use super::counts::CountTable;
use super::montecarlo::MetricErrors;
use super::TomographyError;
use crate::quantum::{project_to_physical, DensityMatrix, Matrix4c, MetricReport, PureState, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood changes by less than this between iterations.
    pub tol: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iter: 200_000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TomographyResult {
    pub rho: DensityMatrix,
    pub metrics: MetricReport,
    pub metric_errors: Option<MetricErrors>,
    pub mc_runs: usize,
    pub loglik: f64,
    pub iterations: usize,
    /// False when the iteration cap was reached first.
    pub converged: bool,
}

struct Problem {
    labels: Vec<BasisLabel>,
    counts: Vec<f64>,
    /// Effects `t_i Π_i`.
    effects: Vec<Matrix4c>,
    /// `G^{-1/2} E_i G^{-1/2}`; these sum to the identity.
    normalized: Vec<Matrix4c>,
    g_sqrt: Matrix4c,
    g_inv_sqrt: Matrix4c,
    total: f64,
}

impl Problem {
    fn new(counts: &CountTable) -> Result<Self, TomographyError> {
        counts.check_complete()?;
        let mut labels = Vec::with_capacity(36);
        let mut n = Vec::with_capacity(36);
        let mut effects = Vec::with_capacity(36);
        for (l, e) in counts.iter() {
            labels.push(*l);
            n.push(e.counts as f64);
            effects.push(projector(*l) * C64::from(e.acquisition_time_s));
        }
        let g: Matrix4c = effects.iter().sum();
        let eig = g.symmetric_eigen();
        let root = |f: fn(f64) -> f64| {
            let mut m = Matrix4c::zeros();
            for k in 0..4 {
                let v = eig.eigenvectors.column(k);
                m += v * v.adjoint() * C64::from(f(eig.eigenvalues[k]));
            }
            m
        };
        let g_sqrt = root(f64::sqrt);
        let g_inv_sqrt = root(|x| 1.0 / x.sqrt());
        let normalized = effects.iter().map(|e| g_inv_sqrt * e * g_inv_sqrt).collect();
        let total = n.iter().sum();
        Ok(Self { labels, counts: n, effects, normalized, g_sqrt, g_inv_sqrt, total })
    }

    fn probs(&self, sigma: &Matrix4c) -> Vec<f64> {
        self.normalized.iter().map(|e| trace_prod(e, sigma)).collect()
    }

    /// `Σ f_i ln q_i` with `f_i` the count fractions.
    fn mean_loglik(&self, q: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(q)
            .filter(|(n, _)| **n > 0.0)
            .map(|(n, q)| n / self.total * q.ln())
            .sum()
    }

    fn r_operator(&self, q: &[f64]) -> Matrix4c {
        let mut r = Matrix4c::zeros();
        for ((n, q), e) in self.counts.iter().zip(q).zip(&self.normalized) {
            if *n > 0.0 {
                r += e * C64::from(n / self.total / q);
            }
        }
        r
    }
}

fn trace_prod(a: &Matrix4c, b: &Matrix4c) -> f64 {
    // Tr(AB) for Hermitian A, B
    a.iter().zip(b.transpose().iter()).map(|(x, y)| (x * y).re).sum()
}

fn normalize(m: Matrix4c) -> Matrix4c {
    let h = (m + m.adjoint()) * C64::from(0.5);
    let t = h.trace().re;
    h / C64::from(t)
}

/// Log-likelihood of the counts under `ρ`, profiled over the unknown pair
/// rate: `Σ n_i ln(Tr(E_i ρ) / Tr(G ρ))` with `E_i = t_i Π_i`, `G = Σ E_i`.
pub fn log_likelihood(counts: &CountTable, rho: &DensityMatrix) -> Result<f64, TomographyError> {
    let p = Problem::new(counts)?;
    Ok(loglik_of(&p, rho.matrix()))
}

fn loglik_of(p: &Problem, rho: &Matrix4c) -> f64 {
    let g: Matrix4c = p.effects.iter().sum();
    let norm = trace_prod(&g, rho);
    p.counts
        .iter()
        .zip(&p.effects)
        .filter(|(n, _)| **n > 0.0)
        .map(|(n, e)| n * (trace_prod(e, rho) / norm).ln())
        .sum()
}

/// Maximum-likelihood state from the iterative `ρ ← RρR / Tr` map, started at
/// the maximally mixed state. A step that would lower the likelihood is
/// replaced by the diluted operator `(I + εR)/(1 + ε)` with shrinking `ε`.
pub fn reconstruct_mle(counts: &CountTable, options: MleOptions) -> Result<TomographyResult, TomographyError> {
    let p = Problem::new(counts)?;

    // work in σ = G^{1/2} ρ G^{1/2} / Tr so that the effects form a POVM
    let rho0 = Matrix4c::identity() * C64::from(0.25);
    let mut sigma = normalize(p.g_sqrt * rho0 * p.g_sqrt);
    let mut q = p.probs(&sigma);
    let mut ll = p.mean_loglik(&q);
    let identity = Matrix4c::identity();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        let r = p.r_operator(&q);
        // changes this small are rounding noise in the summed log-likelihood
        let floor = 8.0 * f64::EPSILON * ll.abs().max(1.0);
        let mut eps = f64::INFINITY;
        let mut accepted = None;
        while eps > 1e-12 {
            let step = if eps.is_infinite() { r } else { (identity + r * C64::from(eps)) / C64::from(1.0 + eps) };
            let cand = normalize(step * sigma * step);
            let cq = p.probs(&cand);
            let cll = p.mean_loglik(&cq);
            if cll.is_finite() && cll >= ll - floor {
                accepted = Some((cand, cq, cll));
                break;
            }
            eps = if eps.is_infinite() { 1.0 } else { eps * 0.5 };
        }
        let Some((cand, cq, cll)) = accepted else {
            return Err(TomographyError::Stalled {
                iteration: iterations,
                loglik: ll * p.total,
                delta: floor * p.total,
            });
        };
        let delta = cll - ll;
        if delta <= floor {
            converged = true;
            break;
        }
        sigma = cand;
        q = cq;
        ll = cll;
        if delta * p.total < options.tol {
            converged = true;
            break;
        }
    }

    let rho = normalize(p.g_inv_sqrt * sigma * p.g_inv_sqrt);
    let rho = project_to_physical(&rho)?;
    let loglik = loglik_of(&p, rho.matrix());
    debug_assert_eq!(p.labels.len(), 36);
    Ok(TomographyResult {
        metrics: MetricReport::compute(&rho, &PureState::phi_plus()),
        rho,
        metric_errors: None,
        mc_runs: 0,
        loglik,
        iterations,
        converged,
    })
}
