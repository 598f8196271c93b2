//! Model coefficients, reaction terms, time schedules and initial data.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};

/// Named spatial profile multiplying a base mobility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Constant,
    /// `exp(5 (y - 0.5))`
    Exp5y,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(Profile::Constant),
            "exp5y" => Ok(Profile::Exp5y),
            other => Err(Error::InvalidArgument(format!(
                "unknown mobility profile '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Constant => "constant",
            Profile::Exp5y => "exp5y",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobility {
    pub base: f64,
    pub profile: Profile,
}

impl Mobility {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            profile: Profile::Constant,
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        match self.profile {
            Profile::Constant => self.base,
            Profile::Exp5y => self.base * (5.0 * (p[1] - 0.5)).exp(),
        }
    }

    /// Positive lower bound over the unit square.
    pub fn lower_bound(&self) -> f64 {
        match self.profile {
            Profile::Constant => self.base,
            Profile::Exp5y => self.base * (-2.5f64).exp(),
        }
    }
}

/// Dimensionless model coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub alpha: f64,
    pub m_phi: Mobility,
    pub m_psi: Mobility,
    pub m_chi: Mobility,
    pub n_phi: f64,
    pub p_phi: f64,
    pub n_psi: f64,
    pub n_chi: f64,
    pub p_chi: f64,
    pub k_psi: f64,
    pub k_chi: f64,
    pub c: f64,
    pub lambda: f64,
    pub shear: f64,
    pub nu: f64,
}

impl Default for Params {
    /// The reference parameter table with `alpha = 1`.
    fn default() -> Self {
        Self {
            alpha: 1.0,
            m_phi: Mobility::constant(1e-4),
            m_psi: Mobility::constant(1.0),
            m_chi: Mobility::constant(1.0),
            n_phi: 0.6,
            p_phi: 1.1,
            n_psi: 40.0,
            n_chi: 3.0,
            p_chi: 30.0,
            k_psi: 2.0,
            k_chi: 0.6,
            c: 0.4,
            lambda: 0.002,
            shear: 0.4615,
            nu: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `0 < alpha <= 1`.
    Order(f64),
    /// Mobilities bounded below by a positive constant.
    Mobility {
        name: &'static str,
        lower_bound: f64,
    },
    /// Rates and half-saturation constants are non-negative.
    NegativeRate {
        name: &'static str,
        value: f64,
    },
    Shear(f64),
    /// Poisson ratio must stay below 1/2.
    Poisson(f64),
    /// `c > λ²(1-2ν)/(2Gν)`, coercivity of the coupled energy.
    Coercivity {
        c: f64,
        threshold: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Order(a) => write!(f, "alpha = {a} outside (0, 1]"),
            Violation::Mobility { name, lower_bound } => {
                write!(
                    f,
                    "mobility {name} has lower bound {lower_bound}, must be > 0"
                )
            }
            Violation::NegativeRate { name, value } => write!(f, "{name} = {value} must be >= 0"),
            Violation::Shear(g) => write!(f, "shear modulus G = {g} must be > 0"),
            Violation::Poisson(nu) => write!(f, "Poisson ratio nu = {nu} must be < 0.5"),
            Violation::Coercivity { c, threshold } => write!(
                f,
                "c = {c} must exceed lambda^2 (1 - 2 nu) / (2 G nu) = {threshold:e}"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDiagnostic {
    pub violations: Vec<Violation>,
    pub coercivity_threshold: f64,
}

impl fmt::Display for ParamDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

impl Params {
    /// `λ²(1-2ν)/(2Gν)`; infinite when `ν <= 0` with nonzero coupling.
    pub fn coercivity_threshold(&self) -> f64 {
        let num = self.lambda * self.lambda * (1.0 - 2.0 * self.nu);
        if num == 0.0 {
            return 0.0;
        }
        let den = 2.0 * self.shear * self.nu;
        if den > 0.0 {
            num / den
        } else {
            f64::INFINITY
        }
    }

    /// Effective diffusion correction `λ²(1-2ν)/(2G(1-ν))` of the decoupled
    /// tumour equation for constant mobility.
    pub fn decoupled_correction(&self) -> f64 {
        self.lambda * self.lambda * (1.0 - 2.0 * self.nu) / (2.0 * self.shear * (1.0 - self.nu))
    }

    pub fn validate(&self) -> std::result::Result<(), ParamDiagnostic> {
        let mut v = Vec::new();
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            v.push(Violation::Order(self.alpha));
        }
        for (name, m) in [
            ("M_phi", self.m_phi),
            ("M_psi", self.m_psi),
            ("M_chi", self.m_chi),
        ] {
            let lb = m.lower_bound();
            if !(lb > 0.0 && lb.is_finite()) {
                v.push(Violation::Mobility {
                    name,
                    lower_bound: lb,
                });
            }
        }
        for (name, value) in [
            ("N_phi", self.n_phi),
            ("P_phi", self.p_phi),
            ("N_psi", self.n_psi),
            ("N_chi", self.n_chi),
            ("P_chi", self.p_chi),
            ("K_psi", self.k_psi),
            ("K_chi", self.k_chi),
        ] {
            if !(value >= 0.0) {
                v.push(Violation::NegativeRate { name, value });
            }
        }
        if !(self.shear > 0.0) {
            v.push(Violation::Shear(self.shear));
        }
        if !(self.nu < 0.5) {
            v.push(Violation::Poisson(self.nu));
        }
        let threshold = self.coercivity_threshold();
        if !(self.c > threshold) {
            v.push(Violation::Coercivity {
                c: self.c,
                threshold,
            });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ParamDiagnostic {
                violations: v,
                coercivity_threshold: threshold,
            })
        }
    }
}

pub fn validate_params(p: &Params) -> std::result::Result<(), ParamDiagnostic> {
    p.validate()
}

/// `φ(1-φ) s / (K + s)` with `φ` clamped to [0, 1] and `s` to [0, ∞).
/// Returns the value and whether the denominator vanished (value 0 then).
pub fn monod(phi: f64, s: f64, k: f64) -> (f64, bool) {
    let phi = phi.clamp(0.0, 1.0);
    let s = s.max(0.0);
    let den = k + s;
    if den == 0.0 {
        return (0.0, true);
    }
    (phi * (1.0 - phi) * s / den, false)
}

/// Nutrient uptake `f(φ, ψ)`.
pub fn monod_f(phi: f64, psi: f64, k_psi: f64) -> f64 {
    monod(phi, psi, k_psi).0
}

/// Chemotherapy kill rate `g(φ, χ)`.
pub fn monod_g(phi: f64, chi: f64, k_chi: f64) -> f64 {
    monod(phi, chi, k_chi).0
}

/// Piecewise-constant function of time on half-open intervals `(start, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    default: f64,
    intervals: Vec<(f64, f64, f64)>,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            default: value,
            intervals: Vec::new(),
        }
    }

    pub fn new(default: f64, mut intervals: Vec<(f64, f64, f64)>) -> Result<Self> {
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(s, e, v) in &intervals {
            if !(s < e) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bad schedule interval ({s}, {e}] = {v}"
                )));
            }
        }
        for w in intervals.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidArgument(format!(
                    "schedule intervals ({}, {}] and ({}, {}] overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { default, intervals })
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.intervals
            .iter()
            .find(|&&(s, e, _)| s < t && t <= e)
            .map_or(self.default, |&(_, _, v)| v)
    }

    pub fn is_zero(&self) -> bool {
        self.default == 0.0 && self.intervals.iter().all(|i| i.2 == 0.0)
    }

    /// Nutrient source switched on in `(1,3]`, `(5,7]`, `(9,10]`.
    pub fn periodic_nutrient() -> Self {
        Self::new(
            0.0,
            vec![(1.0, 3.0, 0.5), (5.0, 7.0, 0.5), (9.0, 10.0, 0.5)],
        )
        .unwrap()
    }

    /// Chemotherapy cycles: on for `t <= 2`, `(6,8]`, `(12,14]`.
    pub fn chemo_cycles() -> Self {
        Self::new(
            0.0,
            vec![
                (f64::NEG_INFINITY, 2.0, 1.0),
                (6.0, 8.0, 1.0),
                (12.0, 14.0, 1.0),
            ],
        )
        .unwrap()
    }
}

pub fn schedule_eval(s: &Schedule, t: f64) -> f64 {
    s.eval(t)
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.default)?;
        if !self.intervals.is_empty() {
            let parts: Vec<String> = self
                .intervals
                .iter()
                .map(|(s, e, v)| format!("{s}:{e}={v}"))
                .collect();
            write!(f, " | {}", parts.join(", "))?;
        }
        Ok(())
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// `<default>` or `<default> | a:b=v, c:d=w, ...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::InvalidArgument(format!("bad schedule '{s}': {what}"));
        let (head, tail) = match s.split_once('|') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        let default: f64 = head.trim().parse().map_err(|_| bad("default value"))?;
        let mut intervals = Vec::new();
        if let Some(tail) = tail {
            for item in tail.split(',').map(str::trim).filter(|i| !i.is_empty()) {
                let (range, value) = item.split_once('=').ok_or_else(|| bad("missing '='"))?;
                let (a, b) = range.split_once(':').ok_or_else(|| bad("missing ':'"))?;
                let a: f64 = a.trim().parse().map_err(|_| bad("interval start"))?;
                let b: f64 = b.trim().parse().map_err(|_| bad("interval end"))?;
                let v: f64 = value.trim().parse().map_err(|_| bad("interval value"))?;
                intervals.push((a, b, v));
            }
        }
        Schedule::new(default, intervals)
    }
}

/// Initial tumour volume fraction.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Plateau of height 1 up to radius `b`, smooth decay to 0 at radius `a`.
    CircularPlateau { a: f64, b: f64, center: Point },
    /// Two elliptical bumps `exp(1 - a²/(a² - |A(x-c)|²))`, `A = diag(1, γ)`.
    TwoEllipses {
        a: f64,
        gamma: f64,
        c1: Point,
        c2: Point,
    },
    /// Irregular mass centred in the domain.
    Irregular,
    /// One value per mesh node, whitespace separated.
    NodalFile(PathBuf),
}

impl InitialCondition {
    pub fn circular_default() -> Self {
        InitialCondition::CircularPlateau {
            a: 0.22,
            b: 0.05,
            center: [0.5, 0.5],
        }
    }

    pub fn two_ellipses_default() -> Self {
        InitialCondition::TwoEllipses {
            a: 0.2,
            gamma: 5f64.sqrt(),
            c1: [0.5, 0.6],
            c2: [0.5, 0.4],
        }
    }

    /// Pointwise value; `NodalFile` has no pointwise form.
    pub fn eval(&self, x: Point) -> Result<f64> {
        match self {
            InitialCondition::CircularPlateau { a, b, center } => {
                let r = dist(x, *center);
                Ok(if r <= *b {
                    1.0
                } else if r <= *a {
                    let w = a - b;
                    let d = r - b;
                    let den = w * w - d * d;
                    if den <= 0.0 {
                        0.0
                    } else {
                        (1.0 - w * w / den).exp()
                    }
                } else {
                    0.0
                })
            }
            InitialCondition::TwoEllipses { a, gamma, c1, c2 } => {
                for c in [c1, c2] {
                    let dx = x[0] - c[0];
                    let dy = gamma * (x[1] - c[1]);
                    let r2 = dx * dx + dy * dy;
                    if r2 <= a * a {
                        let den = a * a - r2;
                        return Ok(if den <= 0.0 {
                            0.0
                        } else {
                            (1.0 - a * a / den).exp()
                        });
                    }
                }
                Ok(0.0)
            }
            InitialCondition::Irregular => Ok(irregular(x)),
            InitialCondition::NodalFile(p) => Err(Error::InvalidArgument(format!(
                "nodal file initial condition '{}' has no pointwise value",
                p.display()
            ))),
        }
    }

    /// Nodal values on `mesh`.
    pub fn nodal(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            InitialCondition::NodalFile(path) => read_nodal_file(path, mesh.num_nodes()),
            _ => mesh.nodes().iter().map(|&p| self.eval(p)).collect(),
        }
    }
}

pub fn ic_eval(ic: &InitialCondition, x: Point) -> Result<f64> {
    ic.eval(x)
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Irregular bump in coordinates centred at (0.5, 0.5), capped at 1.
fn irregular(p: Point) -> f64 {
    let x = p[0] - 0.5;
    let y = p[1] - 0.5;
    if !(-0.45 < x && x < 0.2 && -0.4 < y && y < 0.35) {
        return 0.0;
    }
    let f = (6.0 * x + 2.0 * y + 1.0).sin() * (7.0 * x - 0.2).powi(2)
        + (-8.0 * x + 10.0 * y + 1.1).sin() * (9.0 * x - 0.1).powi(2);
    if f < 1.0 {
        (1.0 - 1.0 / (1.0 - f)).exp().min(1.0)
    } else {
        0.0
    }
}

pub(crate) fn read_nodal_file(path: &std::path::Path, expected: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let values = text
        .lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(str::split_whitespace)
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidData(format!("{}: bad value '{tok}'", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: values.len(),
        });
    }
    Ok(values)
}

/// Initial nutrient or chemotherapy density.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarInit {
    Constant(f64),
    /// `base - amp · x(1-x) y(1-y)`
    Dip {
        base: f64,
        amp: f64,
    },
    NodalFile(PathBuf),
}

impl ScalarInit {
    pub fn nodal(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            ScalarInit::Constant(v) => Ok(vec![*v; mesh.num_nodes()]),
            ScalarInit::Dip { base, amp } => Ok(mesh
                .nodes()
                .iter()
                .map(|p| base - amp * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]))
                .collect()),
            ScalarInit::NodalFile(path) => read_nodal_file(path, mesh.num_nodes()),
        }
    }
}

impl fmt::Display for ScalarInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarInit::Constant(v) => write!(f, "{v}"),
            ScalarInit::Dip { base, amp } => write!(f, "dip:{base},{amp}"),
            ScalarInit::NodalFile(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for ScalarInit {
    type Err = Error;

    /// `<value>`, `dip:<base>,<amp>` or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("dip:") {
            let (b, a) = rest
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("bad initial density '{s}'")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad initial density '{s}'")))
            };
            return Ok(ScalarInit::Dip {
                base: parse(b)?,
                amp: parse(a)?,
            });
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(ScalarInit::NodalFile(PathBuf::from(path)));
        }
        s.parse::<f64>()
            .map(ScalarInit::Constant)
            .map_err(|_| Error::InvalidArgument(format!("bad initial density '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_parameters_pass_with_threshold() {
        let p = Params::default();
        assert!(p.validate().is_ok());
        assert!((p.coercivity_threshold() - 5.778259299386e-6).abs() < 1e-15);
        assert!((p.decoupled_correction() - 2.476396842594e-6).abs() < 1e-15);
    }

    #[test]
    fn zero_c_violates_a5() {
        let p = Params {
            c: 0.0,
            ..Params::default()
        };
        let d = p.validate().unwrap_err();
        assert!(matches!(d.violations[0], Violation::Coercivity { .. }));
        assert!(d.to_string().contains("must exceed"));
    }

    #[test]
    fn incompressible_rejected() {
        let p = Params {
            nu: 0.5,
            ..Params::default()
        };
        let d = p.validate().unwrap_err();
        assert!(d
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Poisson(_))));
    }

    #[test]
    fn bad_order_and_mobility_reported() {
        let p = Params {
            alpha: 1.2,
            m_psi: Mobility::constant(0.0),
            ..Params::default()
        };
        let d = p.validate().unwrap_err();
        assert!(d.violations.contains(&Violation::Order(1.2)));
        assert!(d
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Mobility { name: "M_psi", .. })));
    }

    #[test]
    fn monod_examples() {
        assert_eq!(monod_f(0.0, 1.0, 2.0), 0.0);
        assert_eq!(monod_f(1.0, 1.0, 2.0), 0.0);
        assert!((monod_f(0.5, 2.0, 2.0) - 0.125).abs() < 1e-16);
        assert!((monod_f(0.5, 1e9, 2.0) - 0.25).abs() < 1e-8);
        assert_eq!(monod_g(1.0, 0.3, 0.6), 0.0);
        assert!((monod_g(0.5, 0.6, 0.6) - 0.125).abs() < 1e-16);
        assert_eq!(monod_g(0.5, 0.0, 0.6), 0.0);
        assert_eq!(monod(0.5, 0.0, 0.0), (0.0, true));
        // clamped arguments
        assert_eq!(monod_f(1.2, 1.0, 2.0), 0.0);
        assert_eq!(monod_f(0.5, -1.0, 2.0), 0.0);
    }

    #[test]
    fn schedule_examples() {
        let s = Schedule::periodic_nutrient();
        assert_eq!(s.eval(2.0), 0.5);
        assert_eq!(s.eval(4.0), 0.0);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(3.0), 0.5);
        let c = Schedule::chemo_cycles();
        assert_eq!(c.eval(0.0), 1.0);
        assert_eq!(c.eval(1.0), 1.0);
        assert_eq!(c.eval(5.0), 0.0);
        assert_eq!(c.eval(7.0), 1.0);
        assert_eq!(Schedule::constant(0.25).eval(100.0), 0.25);
    }

    #[test]
    fn schedule_parse_roundtrip() {
        let s: Schedule = "0 | 1:3=0.5, 5:7=0.5, 9:10=0.5".parse().unwrap();
        assert_eq!(s, Schedule::periodic_nutrient());
        let c: Schedule = "0 | -inf:2=1, 6:8=1, 12:14=1".parse().unwrap();
        assert_eq!(c, Schedule::chemo_cycles());
        assert_eq!(c.to_string().parse::<Schedule>().unwrap(), c);
        assert!("0 | 1:3=1, 2:4=1".parse::<Schedule>().is_err());
        assert!("0 | 3:1=1".parse::<Schedule>().is_err());
        assert!("x".parse::<Schedule>().is_err());
    }

    #[test]
    fn circular_plateau_values() {
        let ic = InitialCondition::circular_default();
        assert_eq!(ic.eval([0.5, 0.5]).unwrap(), 1.0);
        assert_eq!(ic.eval([0.55, 0.5]).unwrap(), 1.0);
        assert_eq!(ic.eval([0.72, 0.5]).unwrap(), 0.0);
        assert_eq!(ic.eval([0.0, 0.0]).unwrap(), 0.0);
        let v = ic.eval([0.635, 0.5]).unwrap();
        assert!((v - 0.716_531_310_573_789).abs() < 1e-12, "{v}");
    }

    #[test]
    fn two_ellipses_centre() {
        let ic = InitialCondition::two_ellipses_default();
        assert_eq!(ic.eval([0.5, 0.6]).unwrap(), 1.0);
        assert_eq!(ic.eval([0.5, 0.4]).unwrap(), 1.0);
        assert_eq!(ic.eval([0.1, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn builtin_initial_conditions_bounded_and_vanish_on_boundary() {
        let mesh = Mesh::unit_square(40).unwrap();
        for ic in [
            InitialCondition::circular_default(),
            InitialCondition::two_ellipses_default(),
            InitialCondition::Irregular,
        ] {
            let v = ic.nodal(&mesh).unwrap();
            assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!(v.iter().any(|x| *x > 0.5));
            for k in mesh.boundary_nodes(crate::mesh::SideSet::ALL) {
                assert_eq!(v[k], 0.0);
            }
        }
    }

    #[test]
    fn scalar_init_parse() {
        assert_eq!(
            "2".parse::<ScalarInit>().unwrap(),
            ScalarInit::Constant(2.0)
        );
        assert_eq!(
            "dip:2,0.5".parse::<ScalarInit>().unwrap(),
            ScalarInit::Dip {
                base: 2.0,
                amp: 0.5
            }
        );
        let m = Mesh::unit_square(2).unwrap();
        let v = ScalarInit::Dip {
            base: 2.0,
            amp: 0.5,
        }
        .nodal(&m)
        .unwrap();
        assert!((v[4] - (2.0 - 0.5 / 16.0)).abs() < 1e-15);
    }
}
