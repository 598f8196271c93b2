//! Fractional-calculus kernels.
//!
//! The Caputo derivative of order `alpha` is discretised by first-order
//! (Grünwald–Letnikov) convolution quadrature applied to `v - v_0`:
//!
//! ```text
//! ∂^α (v - v0)(t_n) ≈ dt^-α Σ_{j=0..n} b_j (v_{n-j} - v0)
//! ```

use statrs::function::gamma::{gamma as gamma_approx, ln_gamma};

use crate::error::{Error, Result};

/// Grünwald–Letnikov weights `b_0..=b_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CqWeights {
    alpha: f64,
    b: Vec<f64>,
}

impl CqWeights {
    /// `b_0 = 1`, `b_j = -((alpha - j + 1) / j) b_{j-1}`.
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fractional order must lie in (0, 1], got {alpha}"
            )));
        }
        let mut b = Vec::with_capacity(n + 1);
        b.push(1.0);
        for j in 1..=n {
            let jf = j as f64;
            let prev = b[j - 1];
            b.push(-((alpha - jf + 1.0) / jf) * prev);
        }
        Ok(Self { alpha, b })
    }

    /// Wraps an arbitrary weight sequence (used to exercise validation checks).
    pub fn from_raw(alpha: f64, b: Vec<f64>) -> Self {
        Self { alpha, b }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// Partial sums `s_N = Σ_{j<=N} b_j`.
    pub fn partial_sums(&self) -> Vec<f64> {
        self.b
            .iter()
            .scan(0.0, |s, b| {
                *s += b;
                Some(*s)
            })
            .collect()
    }
}

pub fn gl_weights(alpha: f64, n: usize) -> Result<CqWeights> {
    CqWeights::new(alpha, n)
}

/// Initial value plus the stored differences `v_j - v_0`, `j = 1..`.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    initial: Vec<f64>,
    deltas: Vec<Vec<f64>>,
}

impl History {
    pub fn new(initial: Vec<f64>) -> Self {
        Self {
            initial,
            deltas: Vec::new(),
        }
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Number of stored levels after the initial one.
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    /// Stores `v - v_0` as the next level.
    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.initial.len() {
            return Err(Error::DimensionMismatch {
                expected: self.initial.len(),
                found: v.len(),
            });
        }
        self.deltas
            .push(v.iter().zip(&self.initial).map(|(a, b)| a - b).collect());
        Ok(())
    }

    /// `v_j - v_0` for `j >= 1`.
    pub fn delta(&self, j: usize) -> &[f64] {
        &self.deltas[j - 1]
    }
}

/// Known part of the step equation at level `n`:
/// `r = b_0 v_0 - Σ_{j=1}^{n-1} b_j (v_{n-j} - v_0)`, so that
/// `b_0 v_n = r + dt^α · (right-hand side at t_n)`.
pub fn cq_history_rhs(w: &CqWeights, h: &History, n: usize) -> Result<Vec<f64>> {
    if n == 0 || h.len() != n - 1 {
        return Err(Error::State(format!(
            "history holds {} levels but step {n} needs {}",
            h.len(),
            n.saturating_sub(1)
        )));
    }
    if w.len() < n {
        return Err(Error::State(format!(
            "{} weights precomputed, step {n} needs {n}",
            w.len()
        )));
    }
    let b = w.as_slice();
    let mut r: Vec<f64> = h.initial.iter().map(|v| b[0] * v).collect();
    for j in 1..n {
        let bj = b[j];
        for (ri, d) in r.iter_mut().zip(h.delta(n - j)) {
            *ri -= bj * d;
        }
    }
    Ok(r)
}

/// Riemann–Liouville kernel `t^(α-1) / Γ(α)`.
pub fn kernel_g(alpha: f64, t: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel order must be > 0, got {alpha}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel evaluated at t = {t} <= 0"
        )));
    }
    Ok(t.powf(alpha - 1.0) / gamma(alpha))
}

/// `Γ(x)`, exact (as a rounded product) at small positive integers.
pub fn gamma(x: f64) -> f64 {
    if x.fract() == 0.0 && (1.0..=30.0).contains(&x) {
        return (2..x as u32).fold(1.0, |acc, k| acc * k as f64);
    }
    gamma_approx(x)
}

pub const MITTAG_LEFFLER_LIMIT: f64 = 50.0;
const ML_MAX_TERMS: usize = 400;
const ML_REL_TOL: f64 = 1e-13;

/// Two-parameter Mittag–Leffler function `E_{α,β}(x) = Σ x^k / Γ(αk + β)`
/// by direct series summation with Neumaier compensation.
///
/// Fails rather than return a value when `|x|` exceeds the supported range,
/// the series does not settle within the term budget, or cancellation would
/// leave fewer than ~6 correct digits.
pub fn mittag_leffler(alpha: f64, beta: f64, x: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Mittag-Leffler alpha must be > 0, got {alpha}"
        )));
    }
    if !(x.abs() <= MITTAG_LEFFLER_LIMIT) {
        return Err(Error::OutOfDomain {
            x,
            limit: MITTAG_LEFFLER_LIMIT,
        });
    }
    if x == 0.0 {
        return Ok(1.0 / gamma(beta));
    }
    let mut terms = Terms::new(alpha, beta, x);
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut largest: f64 = 0.0;
    let mut prev_small = false;
    for k in 0..ML_MAX_TERMS {
        let arg = alpha * k as f64 + beta;
        let (term, term_lo) = terms.next(k);
        largest = largest.max(term.abs());
        neumaier_add(&mut sum, &mut comp, term);
        neumaier_add(&mut sum, &mut comp, term_lo);
        let total = sum + comp;
        // need two consecutive negligible terms past the peak: a single
        // term can vanish at a pole of Γ
        let noise = if terms.exact() {
            f64::EPSILON * f64::EPSILON
        } else {
            ML_REL_TOL
        };
        let small = term.abs() <= ML_REL_TOL * total.abs().max(f64::MIN_POSITIVE)
            || (term.abs() <= noise * largest && k > 2);
        if small && prev_small && arg > 1.0 {
            let value = sum + comp;
            let est_err = largest * noise.min(f64::EPSILON) * (k as f64 + 1.0);
            if est_err > 1e-6 * value.abs().max(1.0) {
                return Err(Error::NonConvergence {
                    what: "Mittag-Leffler series (cancellation)",
                    iterations: k + 1,
                    change: est_err,
                });
            }
            return Ok(value);
        }
        prev_small = small;
    }
    Err(Error::NonConvergence {
        what: "Mittag-Leffler series",
        iterations: ML_MAX_TERMS,
        change: largest,
    })
}

fn neumaier_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let t = *sum + v;
    if sum.abs() >= v.abs() {
        *comp += (*sum - t) + v;
    } else {
        *comp += (v - t) + *sum;
    }
    *sum = t;
}

/// Series terms `x^k / Γ(αk + β)`. For positive integer `α, β` they follow a
/// double-double recurrence with integer divisors, otherwise each term is
/// evaluated directly.
struct Terms {
    alpha: f64,
    beta: f64,
    x: f64,
    dd: Option<(f64, f64)>,
}

impl Terms {
    fn new(alpha: f64, beta: f64, x: f64) -> Self {
        let integral = alpha.fract() == 0.0 && beta.fract() == 0.0 && beta >= 1.0 && alpha <= 8.0;
        Self {
            alpha,
            beta,
            x,
            dd: integral.then(|| (1.0 / gamma(beta), 0.0)),
        }
    }

    fn exact(&self) -> bool {
        self.dd.is_some()
    }

    fn next(&mut self, k: usize) -> (f64, f64) {
        let Some((mut hi, mut lo)) = self.dd else {
            return (
                power_over_gamma(k, self.x, self.alpha * k as f64 + self.beta),
                0.0,
            );
        };
        if k > 0 {
            (hi, lo) = dd_mul(hi, lo, self.x);
            let first = self.alpha * (k - 1) as f64 + self.beta;
            for m in 0..self.alpha as usize {
                (hi, lo) = dd_div(hi, lo, first + m as f64);
            }
            self.dd = Some((hi, lo));
        }
        (hi, lo)
    }
}

fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn dd_mul(hi: f64, lo: f64, y: f64) -> (f64, f64) {
    let p = hi * y;
    let e = hi.mul_add(y, -p) + lo * y;
    fast_two_sum(p, e)
}

fn dd_div(hi: f64, lo: f64, y: f64) -> (f64, f64) {
    let q = hi / y;
    let r = (-q).mul_add(y, hi) + lo;
    fast_two_sum(q, r / y)
}

/// `x^k / Γ(arg)`, falling back to log space on overflow; zero at the poles of Γ.
fn power_over_gamma(k: usize, x: f64, arg: f64) -> f64 {
    if arg <= 0.0 && arg.fract() == 0.0 {
        return 0.0;
    }
    let g = gamma(arg);
    let p = x.powi(k as i32);
    if g.is_finite() && p.is_finite() {
        return p / g;
    }
    let sign = if x < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
    sign * (k as f64 * x.abs().ln() - ln_gamma(arg)).exp()
}

/// Numerically evaluates `(g_{1-α} * g_α)(t)`, which equals 1.
///
/// The integral is split at the midpoint and each half is mapped by a power
/// substitution that absorbs its endpoint singularity, then integrated with
/// `n_quad`-point Gauss–Legendre. `alpha = 1` returns 1 exactly (`g_0 = δ`).
pub fn kernel_semigroup_check(alpha: f64, t: f64, n_quad: usize) -> f64 {
    if alpha >= 1.0 {
        return 1.0;
    }
    let (nodes, weights) = gauss_legendre(n_quad);
    let beta = 1.0 - alpha;
    // left half: s = u^{1/α}, s^{α-1} ds = du/α, u ∈ [0, (t/2)^α]
    let ul = (0.5 * t).powf(alpha);
    // right half: t - s = v^{1/β}, (t-s)^{-α} ds = dv/β, v ∈ [0, (t/2)^β]
    let vr = (0.5 * t).powf(beta);
    let mut left = 0.0;
    let mut right = 0.0;
    for (z, w) in nodes.iter().zip(&weights) {
        let u = 0.5 * ul * (z + 1.0);
        let s = u.powf(1.0 / alpha);
        left += w * 0.5 * ul * (t - s).powf(-alpha) / alpha;
        let v = 0.5 * vr * (z + 1.0);
        let s = t - v.powf(1.0 / beta);
        right += w * 0.5 * vr * s.powf(alpha - 1.0) / beta;
    }
    (left + right) / (gamma(alpha) * gamma(beta))
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}
