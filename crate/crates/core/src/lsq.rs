//! Small dense Levenberg-Marquardt solver.
//!
//! Sized for the handful of parameters used here (efficiency law, Gaussian
//! pulse shape); normal equations are solved directly.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LsqError {
    #[error("least squares did not converge after {iterations} iterations (last chi² {last_chi2:.6e})")]
    NoConvergence { iterations: usize, last_chi2: f64 },
    #[error("residuals are not finite at the starting point")]
    NonFiniteStart,
    #[error("normal matrix is singular")]
    Singular,
    #[error("need at least as many residuals ({residuals}) as parameters ({params})")]
    Underdetermined { residuals: usize, params: usize },
}

/// A weighted residual vector `r(p)`; the solver minimises `Σ r²`.
pub trait Residuals {
    fn n_residuals(&self) -> usize;

    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Row-major `n_residuals × n_params` Jacobian. Defaults to central
    /// differences.
    fn jacobian(&self, p: &[f64], jac: &mut [f64]) {
        let m = self.n_residuals();
        let n = p.len();
        let mut q = p.to_vec();
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for j in 0..n {
            let h = 1e-7 * p[j].abs().max(1e-8);
            q[j] = p[j] + h;
            self.residuals(&q, &mut plus);
            q[j] = p[j] - h;
            self.residuals(&q, &mut minus);
            q[j] = p[j];
            for i in 0..m {
                jac[i * n + j] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of chi² falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            ftol: 1e-15,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `(JᵀJ)⁻¹` at the solution, row-major.
    pub covariance: Vec<f64>,
    pub iterations: usize,
}

pub fn levenberg_marquardt<R: Residuals + ?Sized>(
    model: &R,
    p0: &[f64],
    opts: LmOptions,
) -> Result<LmFit, LsqError> {
    let n = p0.len();
    let m = model.n_residuals();
    if m < n {
        return Err(LsqError::Underdetermined { residuals: m, params: n });
    }
    let mut p = p0.to_vec();
    let mut r = vec![0.0; m];
    model.residuals(&p, &mut r);
    let mut chi2 = sum_sq(&r);
    if !chi2.is_finite() {
        return Err(LsqError::NonFiniteStart);
    }

    let mut jac = vec![0.0; m * n];
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    for iter in 1..=opts.max_iterations {
        model.jacobian(&p, &mut jac);
        let (jtj, jtr) = normal_equations(&jac, &r, m, n);

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[k * n + k] += lambda * jtj[k * n + k].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|g| -g).collect();
            let Some(step) = solve(&a, &rhs, n) else {
                lambda *= 10.0;
                continue;
            };
            for k in 0..n {
                trial[k] = p[k] + step[k];
            }
            model.residuals(&trial, &mut r_trial);
            let chi2_trial = sum_sq(&r_trial);
            if chi2_trial.is_finite() && chi2_trial <= chi2 {
                let rel_step = step
                    .iter()
                    .zip(&p)
                    .map(|(s, x)| (s / x.abs().max(1e-12)).abs())
                    .fold(0.0, f64::max);
                let decrease = chi2 - chi2_trial;
                p.copy_from_slice(&trial);
                r.copy_from_slice(&r_trial);
                let converged = decrease <= opts.ftol * chi2 || rel_step <= opts.xtol || chi2_trial == 0.0;
                chi2 = chi2_trial;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if converged {
                    return finish(model, p, chi2, iter);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: we are at a minimum to
            // machine precision.
            return finish(model, p, chi2, iter);
        }
    }
    Err(LsqError::NoConvergence {
        iterations: opts.max_iterations,
        last_chi2: chi2,
    })
}

fn finish<R: Residuals + ?Sized>(model: &R, p: Vec<f64>, chi2: f64, iterations: usize) -> Result<LmFit, LsqError> {
    let n = p.len();
    let m = model.n_residuals();
    let mut jac = vec![0.0; m * n];
    model.jacobian(&p, &mut jac);
    let r = vec![0.0; m];
    let (jtj, _) = normal_equations(&jac, &r, m, n);
    let covariance = invert(&jtj, n).ok_or(LsqError::Singular)?;
    Ok(LmFit {
        params: p,
        chi2,
        covariance,
        iterations,
    })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn normal_equations(jac: &[f64], r: &[f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jtj = vec![0.0; n * n];
    let mut jtr = vec![0.0; n];
    for i in 0..m {
        let row = &jac[i * n..(i + 1) * n];
        for a in 0..n {
            jtr[a] += row[a] * r[i];
            for b in 0..n {
                jtj[a * n + b] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))?;
        let scale = (0..n).map(|k| m[col * n + k].abs()).fold(0.0, f64::max).max(1e-300);
        if m[piv * n + col].abs() <= 1e-14 * scale || m[piv * n + col] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for k in col..n {
                m[row * n + k] -= f * m[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

pub(crate) fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve(a, &e, n)?;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Exp {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl Residuals for Exp {
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for i in 0..self.x.len() {
                out[i] = p[0] * (-p[1] * self.x[i]).exp() - self.y[i];
            }
        }
    }

    #[test]
    fn recovers_exponential_decay() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let y = x.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = levenberg_marquardt(&Exp { x, y }, &[1.0, 0.1], LmOptions::default()).unwrap();
        assert_relative_eq!(fit.params[0], 3.0, max_relative = 1e-9);
        assert_relative_eq!(fit.params[1], 0.7, max_relative = 1e-9);
    }

    #[test]
    fn underdetermined_is_rejected() {
        let m = Exp { x: vec![1.0], y: vec![1.0] };
        assert!(matches!(
            levenberg_marquardt(&m, &[1.0, 1.0], LmOptions::default()),
            Err(LsqError::Underdetermined { .. })
        ));
    }

    #[test]
    fn solve_and_invert_small_systems() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve(&a, &[1.0, 2.0], 2).unwrap();
        assert_relative_eq!(x[0], 1.0 / 11.0, max_relative = 1e-12);
        assert_relative_eq!(x[1], 7.0 / 11.0, max_relative = 1e-12);
        let inv = invert(&a, 2).unwrap();
        assert_relative_eq!(inv[0], 3.0 / 11.0, max_relative = 1e-12);
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0], 2).is_none());
    }
}
