//! Multi-order fractional ODE solvers used as independent references.
//!
//! `picard_solve` discretises the Volterra form
//! `X(t) = X0 + (g_α * F(·, X))(t)` with product-rectangle weights and
//! solves it by Picard iteration; `cq_solve` applies Grünwald-Letnikov
//! convolution quadrature to `∂^α (X - X0) = F(t, X)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fracquad::{gamma, gl_weights};

pub type RhsFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// `∂^{α_k} (X_k - X_{k,0}) = F_k(t, X)` for `k = 1..d`.
pub struct MultiOrderSystem {
    alphas: Vec<f64>,
    x0: Vec<f64>,
    f: Box<RhsFn>,
    lipschitz: f64,
}

impl fmt::Debug for MultiOrderSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiOrderSystem")
            .field("alphas", &self.alphas)
            .field("x0", &self.x0)
            .field("lipschitz", &self.lipschitz)
            .finish_non_exhaustive()
    }
}

impl MultiOrderSystem {
    pub fn new(
        alphas: Vec<f64>,
        x0: Vec<f64>,
        lipschitz: f64,
        f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if alphas.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                expected: alphas.len(),
                found: x0.len(),
            });
        }
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::InvalidArgument(format!("order {a} outside (0, 1]")));
        }
        let probe = f(0.0, &x0);
        if probe.len() != x0.len() {
            return Err(Error::DimensionMismatch {
                expected: x0.len(),
                found: probe.len(),
            });
        }
        Ok(Self {
            alphas,
            x0,
            f: Box::new(f),
            lipschitz,
        })
    }

    /// `∂^α (X - X0) = -λ X`, solved by `X0 E_α(-λ t^α)`.
    pub fn linear_decay(alpha: f64, rate: f64, x0: f64) -> Result<Self> {
        Self::new(vec![alpha], vec![x0], rate.abs(), move |_, x| {
            vec![-rate * x[0]]
        })
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.f)(t, x)
    }
}

/// Product-rectangle weights of `g_α` on a uniform grid. They depend only on
/// `i - j`: `w_{i,j} = c_{i-j}` with `c_m = dt^α (m^α - (m-1)^α) / Γ(α+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraWeights {
    alpha: f64,
    dt: f64,
    c: Vec<f64>,
}

impl VolterraWeights {
    /// `w_{i,j}` for `0 <= j < i <= n`; zero otherwise.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if j < i && i - j < self.c.len() {
            self.c[i - j]
        } else {
            0.0
        }
    }

    /// `Σ_j w_{i,j}`.
    pub fn row_sum(&self, i: usize) -> f64 {
        (1..=i).map(|m| self.c[m]).sum()
    }

    /// Closed form `t_i^α / Γ(α+1)` of the row sum.
    pub fn exact_row_sum(&self, i: usize) -> f64 {
        (i as f64 * self.dt).powf(self.alpha) / gamma(self.alpha + 1.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }
}

pub fn volterra_weights(alpha: f64, dt: f64, n: usize) -> Result<VolterraWeights> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "order {alpha} outside (0, 1]"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("step {dt} must be > 0")));
    }
    let scale = dt.powf(alpha) / gamma(alpha + 1.0);
    let mut c = vec![0.0; n + 1];
    for (m, cm) in c.iter_mut().enumerate().skip(1) {
        *cm = scale * ((m as f64).powf(alpha) - ((m - 1) as f64).powf(alpha));
    }
    Ok(VolterraWeights { alpha, dt, c })
}

/// Uniform-grid solution `x[i]` at `t[i] = i dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// Total Picard sweeps (zero for the CQ solver).
    pub iterations: usize,
    /// Sup-norm change of every Picard sweep, in order.
    pub changes: Vec<f64>,
    /// Number of windows the horizon was split into.
    pub windows: usize,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.x
            .last()
            .expect("trajectory has at least the initial point")
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.x.iter().map(|v| v[k]).collect()
    }
}

fn grid(t_end: f64, n: usize) -> Result<(f64, Vec<f64>)> {
    if n == 0 || !(t_end > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need T > 0 and N >= 1, got T = {t_end}, N = {n}"
        )));
    }
    let dt = t_end / n as f64;
    Ok((dt, (0..=n).map(|i| i as f64 * dt).collect()))
}

const STALL_WINDOW: usize = 5;

/// Picard iteration on the discretised Volterra equation
/// `X_i = X0 + Σ_{j<i} w_{i,j} F(t_{j+1/2}, (X_j + X_{j+1})/2)`.
///
/// Starts with the whole horizon as one window. When the sup-norm change has
/// not decreased for five consecutive sweeps, the current window is halved
/// and iteration resumes from its start; converged windows are frozen.
pub fn picard_solve(
    sys: &MultiOrderSystem,
    t_end: f64,
    n: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Trajectory> {
    let (dt, t) = grid(t_end, n)?;
    let d = sys.dim();
    let weights = sys
        .alphas
        .iter()
        .map(|&a| volterra_weights(a, dt, n))
        .collect::<Result<Vec<_>>>()?;
    let mut x = vec![sys.x0.clone(); n + 1];
    // F at interval midpoints; entries below `start` are final
    let mut fm: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
    let mut start = 0;
    let mut len = n;
    let mut iterations = 0;
    let mut windows = 0;
    let mut changes = Vec::new();
    while start < n {
        let end = (start + len).min(n);
        let mut recent: Vec<f64> = Vec::new();
        loop {
            if iterations >= max_iter {
                return Err(Error::NonConvergence {
                    what: "Picard iteration",
                    iterations,
                    change: recent.last().copied().unwrap_or(f64::INFINITY),
                });
            }
            iterations += 1;
            for j in start..end {
                let mid: Vec<f64> = x[j]
                    .iter()
                    .zip(&x[j + 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                fm[j] = sys.eval(t[j] + 0.5 * dt, &mid);
            }
            let mut change: f64 = 0.0;
            for i in start + 1..=end {
                for k in 0..d {
                    let w = &weights[k];
                    let s: f64 = (0..i).map(|j| w.weight(i, j) * fm[j][k]).sum();
                    let v = sys.x0[k] + s;
                    change = change.max((v - x[i][k]).abs());
                    x[i][k] = v;
                }
            }
            changes.push(change);
            if !change.is_finite() {
                return Err(Error::NonConvergence {
                    what: "Picard iteration",
                    iterations,
                    change,
                });
            }
            if change <= tol {
                // freeze F on the converged window
                for j in start..end {
                    let mid: Vec<f64> = x[j]
                        .iter()
                        .zip(&x[j + 1])
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    fm[j] = sys.eval(t[j] + 0.5 * dt, &mid);
                }
                windows += 1;
                start = end;
                break;
            }
            recent.push(change);
            let stalled = recent.len() > STALL_WINDOW
                && recent[recent.len() - STALL_WINDOW - 1..]
                    .windows(2)
                    .all(|w| w[1] >= w[0]);
            if stalled && end - start > 1 {
                len = (end - start) / 2;
                let (head, tail) = x.split_at_mut(start + 1);
                for xi in tail {
                    xi.clone_from(&head[start]);
                }
                break;
            }
        }
    }
    Ok(Trajectory {
        t,
        x,
        iterations,
        changes,
        windows,
    })
}

/// Grünwald-Letnikov convolution quadrature, each step solved by Newton's
/// method with a finite-difference Jacobian.
pub fn cq_solve(sys: &MultiOrderSystem, t_end: f64, n: usize) -> Result<Trajectory> {
    let (dt, t) = grid(t_end, n)?;
    let d = sys.dim();
    let b: Vec<Vec<f64>> = sys
        .alphas
        .iter()
        .map(|&a| gl_weights(a, n).map(|w| w.as_slice().to_vec()))
        .collect::<Result<_>>()?;
    let tau: Vec<f64> = sys.alphas.iter().map(|a| dt.powf(*a)).collect();
    let mut x = vec![sys.x0.clone(); n + 1];
    for step in 1..=n {
        // r_k = b0 X0 - Σ_{j=1}^{step-1} b_j (X_{step-j} - X0)
        let r: Vec<f64> = (0..d)
            .map(|k| {
                let mut r = b[k][0] * sys.x0[k];
                for j in 1..step {
                    r -= b[k][j] * (x[step - j][k] - sys.x0[k]);
                }
                r
            })
            .collect();
        let residual = |y: &[f64]| -> Vec<f64> {
            let f = sys.eval(t[step], y);
            (0..d)
                .map(|k| b[k][0] * y[k] - r[k] - tau[k] * f[k])
                .collect()
        };
        let mut y = x[step - 1].clone();
        let mut converged = false;
        for _ in 0..50 {
            let g = residual(&y);
            let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if gnorm <= 1e-14 * scale {
                converged = true;
                break;
            }
            let mut jac = DMatrix::<f64>::zeros(d, d);
            for c in 0..d {
                let h = 1e-7 * y[c].abs().max(1.0);
                let mut yp = y.clone();
                yp[c] += h;
                let gp = residual(&yp);
                for rr in 0..d {
                    jac[(rr, c)] = (gp[rr] - g[rr]) / h;
                }
            }
            let delta = jac
                .lu()
                .solve(&DVector::from_vec(g))
                .ok_or(Error::SingularMatrix(0))?;
            let mut dmax: f64 = 0.0;
            for k in 0..d {
                y[k] -= delta[k];
                dmax = dmax.max(delta[k].abs());
            }
            if dmax <= 1e-15 * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "CQ step Newton solve",
                iterations: 50,
                change: residual(&y).iter().fold(0.0, |m, v| m.max(v.abs())),
            });
        }
        x[step] = y;
    }
    Ok(Trajectory {
        t,
        x,
        iterations: 0,
        changes: Vec::new(),
        windows: 0,
    })
}

#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub max_discrepancy: f64,
    pub picard: Trajectory,
    pub cq: Trajectory,
}

/// Runs both solvers on the same grid and reports the largest pointwise gap.
pub fn cross_check_cq(sys: &MultiOrderSystem, t_end: f64, n: usize) -> Result<CrossCheck> {
    let picard = picard_solve(sys, t_end, n, 1e-13, 10_000)?;
    let cq = cq_solve(sys, t_end, n)?;
    let max_discrepancy = picard
        .x
        .iter()
        .zip(&cq.x)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    Ok(CrossCheck {
        max_discrepancy,
        picard,
        cq,
    })
}
