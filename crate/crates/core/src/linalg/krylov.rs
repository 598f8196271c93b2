//! Jacobi-preconditioned Krylov solvers.

use super::csr::{dot, norm2, CsrMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

fn jacobi(a: &CsrMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

/// Preconditioned conjugate gradients for SPD systems; `x` holds the initial
/// guess on entry and the solution on exit. Stops on relative residual `tol`.
pub fn cg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let dinv = jacobi(a);
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: rel,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolver {
                solver: "cg",
                iterations: it,
                residual: rel,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: rel,
            });
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::LinearSolver {
        solver: "cg",
        iterations: max_iter,
        residual: rel,
    })
}

/// Right-preconditioned BiCGStab for general nonsymmetric systems.
pub fn bicgstab(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let dinv = jacobi(a);
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm2(&r) / bnorm;
    if rel <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: rel,
        });
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zz = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = p[i] * dinv[i];
        }
        a.mul_vec_into(&y, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            break;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(SolveStats {
                iterations: it,
                residual: norm2(&s) / bnorm,
            });
        }
        for i in 0..n {
            zz[i] = s[i] * dinv[i];
        }
        a.mul_vec_into(&zz, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * zz[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm2(&r) / bnorm;
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: rel,
            });
        }
    }
    Err(Error::LinearSolver {
        solver: "bicgstab",
        iterations: max_iter,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;

    fn laplace1d(n: usize, shift: f64) -> CsrMatrix {
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0 + shift);
            if i > 0 {
                t.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
            }
        }
        t.build(true)
    }

    #[test]
    fn cg_solves_spd() {
        let a = laplace1d(50, 0.0);
        let exact: Vec<f64> = (0..50).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = a.mul_vec(&exact);
        let mut x = vec![0.0; 50];
        let stats = cg(&a, &b, &mut x, 1e-12, 500).unwrap();
        assert!(stats.residual <= 1e-12);
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let a = laplace1d(200, 0.0);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let err = cg(&a, &b, &mut x, 1e-14, 3).unwrap_err();
        assert!(matches!(err, Error::LinearSolver { iterations: 3, .. }));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let n = 40;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 3.0);
            if i > 0 {
                t.push(i, i - 1, -1.5);
            }
            if i + 1 < n {
                t.push(i, i + 1, -0.5);
            }
        }
        let a = t.build(false);
        let exact: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let b = a.mul_vec(&exact);
        let mut x = vec![0.0; n];
        bicgstab(&a, &b, &mut x, 1e-13, 500).unwrap();
        for (u, v) in x.iter().zip(&exact) {
            assert!((u - v).abs() < 1e-9 * v.abs());
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplace1d(5, 1.0);
        let mut x = vec![3.0; 5];
        cg(&a, &[0.0; 5], &mut x, 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 5]);
    }
}
