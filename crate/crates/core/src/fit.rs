//! Small dense Levenberg–Marquardt solver shared by the curve fits.
//!
//! Problems are posed as a residual function `r(p)` whose entries are already
//! weighted, i.e. `(y_i - model_i(p)) / sigma_i`; the solver minimizes `Σ r_i²`.
//! The Jacobian is taken by central differences.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2})")]
    NoConvergence { iterations: usize, chi2: f64 },
    #[error("singular normal matrix; parameters are not identifiable")]
    Singular,
    #[error("residuals are not finite at the starting point")]
    NonFiniteStart,
    #[error("not enough data: {residuals} residuals for {params} parameters")]
    Underdetermined { residuals: usize, params: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative χ² decrease below which the fit is considered converged.
    pub ftol: f64,
    /// Relative parameter step below which the fit is considered converged.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-12,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// `(JᵀJ)⁻¹` at the solution; with properly weighted residuals this is the
    /// parameter covariance.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
}

impl LmSolution {
    pub fn std_err(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, p: &[f64], n_res: usize, scratch: &mut [f64]) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut jac = DMatrix::zeros(n_res, p.len());
    let mut probe = p.to_vec();
    let mut plus = vec![0.0; n_res];
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(1e-6);
        probe[j] = p[j] + h;
        f(&probe, &mut plus);
        probe[j] = p[j] - h;
        f(&probe, scratch);
        probe[j] = p[j];
        for i in 0..n_res {
            jac[(i, j)] = (plus[i] - scratch[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `Σ r_i(p)²` starting from `p0`.
pub fn levenberg_marquardt<F>(
    residuals: F,
    p0: &[f64],
    n_res: usize,
    opts: &LmOptions,
) -> Result<LmSolution, FitError>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n_par = p0.len();
    if n_res < n_par {
        return Err(FitError::Underdetermined {
            residuals: n_res,
            params: n_par,
        });
    }
    let mut p = p0.to_vec();
    let mut buf = vec![0.0; n_res];
    residuals(&p, &mut buf);
    let mut r = DVector::from_column_slice(&buf);
    let mut chi2 = sum_sq(&r);
    if !chi2.is_finite() {
        return Err(FitError::NonFiniteStart);
    }

    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = jacobian(&residuals, &p, n_res, &mut buf);

    while iterations < opts.max_iter {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.amax() < 1e-300 || chi2 == 0.0 {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..n_par {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let step = chol.solve(&(-&grad));
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            residuals(&trial, &mut buf);
            let r_trial = DVector::from_column_slice(&buf);
            let chi2_trial = sum_sq(&r_trial);
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let rel_drop = (chi2 - chi2_trial) / chi2.max(1e-300);
                let rel_step = step
                    .iter()
                    .zip(p.iter())
                    .map(|(d, x)| d.abs() / (x.abs() + 1e-12))
                    .fold(0.0, f64::max);
                p = trial;
                r = r_trial;
                chi2 = chi2_trial;
                lambda = (lambda / 3.0).max(1e-15);
                nu = 2.0;
                accepted = true;
                if rel_drop < opts.ftol || rel_step < opts.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !accepted {
            // No downhill step at any damping: we sit at a minimum to working precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
        jac = jacobian(&residuals, &p, n_res, &mut buf);
    }

    if !converged {
        return Err(FitError::NoConvergence { iterations, chi2 });
    }
    let jac = jacobian(&residuals, &p, n_res, &mut buf);
    let jtj = jac.transpose() * &jac;
    let covariance = jtj.try_inverse().ok_or(FitError::Singular)?;
    Ok(LmSolution {
        params: p,
        covariance,
        chi2,
        iterations,
    })
}

/// Derivative-free Nelder–Mead minimizer, used for oracles and small
/// non-smooth objectives.
pub fn nelder_mead<F>(f: F, x0: &[f64], scale: f64, max_evals: usize, ftol: f64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;

    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        if (values[n] - values[0]).abs() <= ftol * (values[0].abs() + ftol) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[i])
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    values[i] = f(&shrunk);
                    simplex[i] = shrunk;
                }
                evals += n;
            }
        }
    }
    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    (simplex[best].clone(), values[best])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_exactly() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-x / 0.7).exp() + 0.5).collect();
        let sol = levenberg_marquardt(
            |p, out| {
                for (o, (x, y)) in out.iter_mut().zip(xs.iter().zip(&ys)) {
                    *o = y - (p[0] * (-x / p[1]).exp() + p[2]);
                }
            },
            &[1.0, 0.3, 0.0],
            xs.len(),
            &LmOptions::default(),
        )
        .unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-8);
        assert!((sol.params[1] - 0.7).abs() < 1e-8);
        assert!((sol.params[2] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let err = levenberg_marquardt(|_, _| {}, &[1.0, 2.0], 1, &LmOptions::default()).unwrap_err();
        assert!(matches!(err, FitError::Underdetermined { .. }));
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, v) = nelder_mead(rosen, &[-1.2, 1.0], 0.5, 20_000, 1e-16);
        assert!(v < 1e-10, "{v}");
        assert!((x[0] - 1.0).abs() < 1e-4);
    }
}
