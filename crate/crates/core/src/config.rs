//! Flat `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; keys are dotted
//! `section.name` and matched case-insensitively. Unknown and repeated keys
//! are errors. Relative paths are resolved against the config file's
//! directory. After the file is read, environment variables named
//! `TUMOUR_<SECTION>__<NAME>` (for example `TUMOUR_TIME__DT=0.05`) override
//! the matching key.
//!
//! | key | default |
//! |---|---|
//! | `mesh.n` | 32 |
//! | `time.dt`, `time.T` | 1/15, 1 |
//! | `model.alpha` | 1 |
//! | `model.m_phi`, `model.m_psi`, `model.m_chi` | 1e-4, 1, 1 |
//! | `model.m_phi_profile` (and `_psi`, `_chi`) | `constant` (or `exp5y`) |
//! | `model.n_phi`, `model.p_phi` | 0.6, 1.1 |
//! | `model.n_psi`, `model.n_chi`, `model.p_chi` | 40, 3, 30 |
//! | `model.k_psi`, `model.k_chi` | 2, 0.6 |
//! | `model.c`, `model.lambda`, `model.shear`, `model.nu` | 0.4, 0.002, 0.4615, 0.3 |
//! | `ic.kind` | `circular` (`ellipses`, `irregular`, `file`) |
//! | `ic.a`, `ic.b`, `ic.center` | 0.22, 0.05, `0.5,0.5` (circular) |
//! | `ic.a`, `ic.gamma`, `ic.c1`, `ic.c2` | 0.2, √5, `0.5,0.6`, `0.5,0.4` (ellipses) |
//! | `ic.path` | required for `file` |
//! | `ic.psi0`, `ic.chi0` | 0 (`<v>`, `dip:<base>,<amp>`, `file:<path>`) |
//! | `bc.gamma_u` | `left` |
//! | `bc.gamma_psi` | `none` |
//! | `bc.psi_dirichlet`, `bc.chi_dirichlet`, `bc.psi_flux`, `bc.chi_flux` | 0 |
//! | `sources.s_psi`, `sources.s_chi` | 0 |
//! | `solver.fp_tol`, `solver.fp_max` | 1e-6, 50 |
//! | `solver.lin_tol`, `solver.lin_max_iter` | 1e-10, 10000 |
//! | `solver.mass_lumping`, `solver.linear_solver` | false, `direct` (or `krylov`) |
//! | `output.series_path`, `output.snapshot_dir` | unset |
//! | `output.snapshot_times` | empty |
//! | `output.radius_threshold`, `output.center` | 1e-3, `0.5,0.5` |
//!
//! Side sets are `none`, `all` or a comma list of `left,right,bottom,top`.
//! Schedules are `<default>` or `<default> | a:b=v, ...`, taking `v` on
//! `(a, b]`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{Point, SideSet};
use crate::model::{InitialCondition, Mobility, Profile, ScalarInit, Schedule};
use crate::stepper::{LinearSolver, Problem};

pub const ENV_PREFIX: &str = "TUMOUR_";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputConfig {
    pub series_path: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub problem: Problem,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Origin {
    Line(usize),
    Env(String),
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    origin: Origin,
}

/// Key-value pairs before interpretation.
#[derive(Debug, Clone)]
pub struct RawConfig {
    path: PathBuf,
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    pub fn parse_str(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let syntax = |msg: String| Error::ConfigSyntax {
                path: path.clone(),
                line,
                msg,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected 'key = value', found '{content}'")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.contains('.') || k.contains(char::is_whitespace) {
                return Err(syntax(format!("malformed key '{k}'")));
            }
            if v.is_empty() {
                return Err(syntax(format!("missing value for '{k}'")));
            }
            let norm = k.to_ascii_lowercase();
            if let Some(prev) = entries.get(&norm) {
                let Entry {
                    origin: Origin::Line(p),
                    ..
                } = prev
                else {
                    unreachable!()
                };
                return Err(syntax(format!(
                    "duplicate key '{k}' (first set on line {p})"
                )));
            }
            entries.insert(
                norm,
                Entry {
                    key: k.to_string(),
                    value: v.to_string(),
                    origin: Origin::Line(line),
                },
            );
        }
        Ok(Self { path, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, path)
    }

    /// Applies `TUMOUR_<SECTION>__<NAME>` variables; others are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (name, value) in vars {
            let name = name.as_ref();
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let (section, key) = rest.split_once("__").ok_or_else(|| {
                Error::Config(format!(
                    "environment variable {name}: expected {ENV_PREFIX}<SECTION>__<NAME>"
                ))
            })?;
            let key = format!("{section}.{key}").to_ascii_lowercase();
            self.entries.insert(
                key.clone(),
                Entry {
                    key,
                    value: value.as_ref().trim().to_string(),
                    origin: Origin::Env(name.to_string()),
                },
            );
        }
        Ok(())
    }

    /// Sets or replaces a key, as if given on the command line.
    pub fn set(&mut self, key: &str, value: &str) {
        let norm = key.to_ascii_lowercase();
        self.entries.insert(
            norm,
            Entry {
                key: key.to_string(),
                value: value.to_string(),
                origin: Origin::Env(format!("override {key}")),
            },
        );
    }

    fn error(&self, e: &Entry, msg: impl fmt::Display) -> Error {
        match &e.origin {
            Origin::Line(line) => Error::ConfigSyntax {
                path: self.path.clone(),
                line: *line,
                msg: format!("{}: {msg}", e.key),
            },
            Origin::Env(name) => Error::Config(format!("{name} ({}): {msg}", e.key)),
        }
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let p = PathBuf::from(p);
        match self.path.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        }
    }

    /// Interprets the entries and validates the resulting problem.
    pub fn build(&self) -> Result<Config> {
        let mut b = Builder {
            raw: self,
            left: self.entries.keys().cloned().collect(),
        };
        let mut cfg = Config::default();
        let pb = &mut cfg.problem;

        b.get("mesh.n", &mut pb.n)?;
        b.get("time.dt", &mut pb.dt)?;
        b.get("time.t", &mut pb.t_end)?;

        let p = &mut pb.params;
        b.get("model.alpha", &mut p.alpha)?;
        b.mobility("model.m_phi", &mut p.m_phi)?;
        b.mobility("model.m_psi", &mut p.m_psi)?;
        b.mobility("model.m_chi", &mut p.m_chi)?;
        b.get("model.n_phi", &mut p.n_phi)?;
        b.get("model.p_phi", &mut p.p_phi)?;
        b.get("model.n_psi", &mut p.n_psi)?;
        b.get("model.n_chi", &mut p.n_chi)?;
        b.get("model.p_chi", &mut p.p_chi)?;
        b.get("model.k_psi", &mut p.k_psi)?;
        b.get("model.k_chi", &mut p.k_chi)?;
        b.get("model.c", &mut p.c)?;
        b.get("model.lambda", &mut p.lambda)?;
        b.get("model.shear", &mut p.shear)?;
        b.get("model.nu", &mut p.nu)?;

        pb.phi0 = b.initial_condition()?;
        b.parsed("ic.psi0", &mut pb.psi0, |s| self.scalar_init(s))?;
        b.parsed("ic.chi0", &mut pb.chi0, |s| self.scalar_init(s))?;

        let bc = &mut pb.boundary;
        b.get::<SideSet>("bc.gamma_u", &mut bc.gamma_u)?;
        b.get::<SideSet>("bc.gamma_psi", &mut bc.gamma_psi)?;
        b.get::<Schedule>("bc.psi_dirichlet", &mut bc.psi_dirichlet)?;
        b.get::<Schedule>("bc.chi_dirichlet", &mut bc.chi_dirichlet)?;
        b.get::<Schedule>("bc.psi_flux", &mut bc.psi_flux)?;
        b.get::<Schedule>("bc.chi_flux", &mut bc.chi_flux)?;
        b.get::<Schedule>("sources.s_psi", &mut pb.sources.s_psi)?;
        b.get::<Schedule>("sources.s_chi", &mut pb.sources.s_chi)?;

        let s = &mut pb.solver;
        b.get("solver.fp_tol", &mut s.fp_tol)?;
        b.get("solver.fp_max", &mut s.fp_max)?;
        b.get("solver.lin_tol", &mut s.lin_tol)?;
        b.get("solver.lin_max_iter", &mut s.lin_max_iter)?;
        b.get("solver.mass_lumping", &mut s.mass_lumping)?;
        b.get::<LinearSolver>("solver.linear_solver", &mut s.linear_solver)?;

        b.parsed("output.snapshot_times", &mut pb.snapshot_times, parse_list)?;
        b.get("output.radius_threshold", &mut pb.radius_threshold)?;
        b.parsed("output.center", &mut pb.center, parse_point)?;
        let mut series = None;
        b.parsed("output.series_path", &mut series, |v| {
            Ok(Some(self.resolve(v)))
        })?;
        let mut snaps = None;
        b.parsed("output.snapshot_dir", &mut snaps, |v| {
            Ok(Some(self.resolve(v)))
        })?;
        cfg.output = OutputConfig {
            series_path: series,
            snapshot_dir: snaps,
        };

        if let Some(k) = b.left.iter().next() {
            let e = &self.entries[k];
            return Err(self.error(e, "unknown key"));
        }
        if !cfg.problem.snapshot_times.is_empty() && cfg.output.snapshot_dir.is_none() {
            return Err(Error::Config(
                "output.snapshot_times requires output.snapshot_dir".into(),
            ));
        }
        cfg.problem.validate()?;
        Ok(cfg)
    }

    fn scalar_init(&self, s: &str) -> Result<ScalarInit> {
        Ok(match s.parse::<ScalarInit>()? {
            ScalarInit::NodalFile(p) => ScalarInit::NodalFile(self.resolve(&p.to_string_lossy())),
            other => other,
        })
    }
}

struct Builder<'a> {
    raw: &'a RawConfig,
    left: std::collections::BTreeSet<String>,
}

impl Builder<'_> {
    fn take(&mut self, key: &str) -> Option<&Entry> {
        self.left.remove(key);
        self.raw.entries.get(key)
    }

    fn parsed<T>(
        &mut self,
        key: &str,
        slot: &mut T,
        f: impl FnOnce(&str) -> Result<T>,
    ) -> Result<bool> {
        let raw = self.raw;
        match self.take(key) {
            Some(e) => {
                *slot = f(&e.value).map_err(|err| raw.error(e, strip(err)))?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn get<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<bool>
    where
        T::Err: fmt::Display,
    {
        self.parsed(key, slot, |v| {
            v.parse::<T>()
                .map_err(|e| Error::InvalidArgument(format!("cannot parse '{v}': {e}")))
        })
    }

    fn mobility(&mut self, key: &str, m: &mut Mobility) -> Result<()> {
        self.get(key, &mut m.base)?;
        self.get::<Profile>(&format!("{key}_profile"), &mut m.profile)?;
        Ok(())
    }

    fn initial_condition(&mut self) -> Result<InitialCondition> {
        let mut kind = String::from("circular");
        self.parsed("ic.kind", &mut kind, |v| Ok(v.to_ascii_lowercase()))?;
        let kind_entry = self.raw.entries.get("ic.kind");
        let mut ic = match kind.as_str() {
            "circular" => InitialCondition::circular_default(),
            "ellipses" => InitialCondition::two_ellipses_default(),
            "irregular" => InitialCondition::Irregular,
            "file" => InitialCondition::NodalFile(PathBuf::new()),
            other => {
                let e = kind_entry.expect("non-default kind comes from an entry");
                return Err(self
                    .raw
                    .error(e, format!("unknown initial condition '{other}'")));
            }
        };
        match &mut ic {
            InitialCondition::CircularPlateau { a, b, center } => {
                self.get("ic.a", a)?;
                self.get("ic.b", b)?;
                self.parsed("ic.center", center, parse_point)?;
            }
            InitialCondition::TwoEllipses { a, gamma, c1, c2 } => {
                self.get("ic.a", a)?;
                self.get("ic.gamma", gamma)?;
                self.parsed("ic.c1", c1, parse_point)?;
                self.parsed("ic.c2", c2, parse_point)?;
            }
            InitialCondition::Irregular => {}
            InitialCondition::NodalFile(path) => {
                let raw = self.raw;
                if !self.parsed("ic.path", path, |v| Ok(raw.resolve(v)))? {
                    return Err(Error::Config("ic.kind = file requires ic.path".into()));
                }
            }
        }
        Ok(ic)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) | Error::Config(m) | Error::InvalidData(m) => m,
        other => other.to_string(),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad number '{t}'")))
        })
        .collect()
}

fn parse_point(s: &str) -> Result<Point> {
    match parse_list(s)?.as_slice() {
        [x, y] => Ok([*x, *y]),
        _ => Err(Error::InvalidArgument(format!(
            "expected 'x,y', found '{s}'"
        ))),
    }
}

/// Reads `path`, applies environment overrides and validates.
pub fn parse_config(path: &Path) -> Result<Config> {
    let mut raw = RawConfig::read(path)?;
    raw.apply_env(std::env::vars())?;
    raw.build()
}

impl Config {
    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let p = &self.problem;
        let m = &p.params;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mesh.n", &p.n);
        kv("time.dt", &p.dt);
        kv("time.T", &p.t_end);
        kv("model.alpha", &m.alpha);
        for (name, mob) in [
            ("m_phi", &m.m_phi),
            ("m_psi", &m.m_psi),
            ("m_chi", &m.m_chi),
        ] {
            kv(&format!("model.{name}"), &mob.base);
            kv(&format!("model.{name}_profile"), &mob.profile);
        }
        kv("model.n_phi", &m.n_phi);
        kv("model.p_phi", &m.p_phi);
        kv("model.n_psi", &m.n_psi);
        kv("model.n_chi", &m.n_chi);
        kv("model.p_chi", &m.p_chi);
        kv("model.k_psi", &m.k_psi);
        kv("model.k_chi", &m.k_chi);
        kv("model.c", &m.c);
        kv("model.lambda", &m.lambda);
        kv("model.shear", &m.shear);
        kv("model.nu", &m.nu);
        let pt = |q: Point| format!("{},{}", q[0], q[1]);
        match &p.phi0 {
            InitialCondition::CircularPlateau { a, b, center } => {
                kv("ic.kind", &"circular");
                kv("ic.a", a);
                kv("ic.b", b);
                kv("ic.center", &pt(*center));
            }
            InitialCondition::TwoEllipses { a, gamma, c1, c2 } => {
                kv("ic.kind", &"ellipses");
                kv("ic.a", a);
                kv("ic.gamma", gamma);
                kv("ic.c1", &pt(*c1));
                kv("ic.c2", &pt(*c2));
            }
            InitialCondition::Irregular => kv("ic.kind", &"irregular"),
            InitialCondition::NodalFile(path) => {
                kv("ic.kind", &"file");
                kv("ic.path", &path.display());
            }
        }
        kv("ic.psi0", &p.psi0);
        kv("ic.chi0", &p.chi0);
        kv("bc.gamma_u", &p.boundary.gamma_u);
        kv("bc.gamma_psi", &p.boundary.gamma_psi);
        kv("bc.psi_dirichlet", &p.boundary.psi_dirichlet);
        kv("bc.chi_dirichlet", &p.boundary.chi_dirichlet);
        kv("bc.psi_flux", &p.boundary.psi_flux);
        kv("bc.chi_flux", &p.boundary.chi_flux);
        kv("sources.s_psi", &p.sources.s_psi);
        kv("sources.s_chi", &p.sources.s_chi);
        kv("solver.fp_tol", &p.solver.fp_tol);
        kv("solver.fp_max", &p.solver.fp_max);
        kv("solver.lin_tol", &p.solver.lin_tol);
        kv("solver.lin_max_iter", &p.solver.lin_max_iter);
        kv("solver.mass_lumping", &p.solver.mass_lumping);
        kv("solver.linear_solver", &p.solver.linear_solver);
        if !p.snapshot_times.is_empty() {
            let list: Vec<String> = p.snapshot_times.iter().map(f64::to_string).collect();
            kv("output.snapshot_times", &list.join(","));
        }
        kv("output.radius_threshold", &p.radius_threshold);
        kv("output.center", &pt(p.center));
        if let Some(path) = &self.output.series_path {
            kv("output.series_path", &path.display());
        }
        if let Some(path) = &self.output.snapshot_dir {
            kv("output.snapshot_dir", &path.display());
        }
        s
    }
}
