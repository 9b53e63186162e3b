//! Flat `key = value` run configuration with `#` comments.
//!
//! Every key is optional and has a default; unknown or repeated keys and
//! out-of-range values are rejected with the offending line number before any
//! computation starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::domain::BETA_MAX;
use crate::error::{Error, Result};
use crate::evolve::IcKind;
use crate::inequalities::SobolevConstraint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtChoice {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsEquation {
    Vr,
    V3,
    H,
    Omega,
}

impl std::str::FromStr for MmsEquation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vr" => Ok(MmsEquation::Vr),
            "v3" => Ok(MmsEquation::V3),
            "h" => Ok(MmsEquation::H),
            "omega" => Ok(MmsEquation::Omega),
            _ => Err(Error::Usage(format!("unknown equation `{s}` (expected vr, v3, h or omega)"))),
        }
    }
}

impl std::fmt::Display for MmsEquation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MmsEquation::Vr => "vr",
            MmsEquation::V3 => "v3",
            MmsEquation::H => "h",
            MmsEquation::Omega => "omega",
        })
    }
}

/// Where a manufactured solution lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmsDomain {
    /// `D_1`, a single rectangle.
    Rectangle,
    /// `D_3`, with re-entrant corners.
    Staircase,
}

impl std::str::FromStr for MmsDomain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangle" => Ok(MmsDomain::Rectangle),
            "staircase" | "d3" => Ok(MmsDomain::Staircase),
            _ => Err(Error::Usage(format!("unknown MMS domain `{s}` (expected rect or staircase)"))),
        }
    }
}

impl std::fmt::Display for MmsDomain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MmsDomain::Rectangle => "rect",
            MmsDomain::Staircase => "staircase",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstantKind {
    Poincare,
    SobolevS0(SobolevConstraint),
    WeightedCs,
}

impl std::str::FromStr for ConstantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poincare" => Ok(ConstantKind::Poincare),
            "s0" | "s0_zero_on_H" => Ok(ConstantKind::SobolevS0(SobolevConstraint::ZeroOnH)),
            "s0_zero_column_mean" => Ok(ConstantKind::SobolevS0(SobolevConstraint::ZeroColumnMean)),
            "cs" => Ok(ConstantKind::WeightedCs),
            _ => Err(Error::Usage(format!(
                "unknown constant `{s}` (expected poincare, s0, s0_zero_column_mean or cs)"
            ))),
        }
    }
}

impl std::fmt::Display for ConstantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstantKind::Poincare => f.write_str("poincare"),
            ConstantKind::SobolevS0(SobolevConstraint::ZeroOnH) => f.write_str("s0"),
            ConstantKind::SobolevS0(SobolevConstraint::ZeroColumnMean) => f.write_str("s0_zero_column_mean"),
            ConstantKind::WeightedCs => f.write_str("cs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsConfig {
    pub equation: MmsEquation,
    pub p_list: Vec<u32>,
    pub domain: MmsDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsConfig {
    pub which: Vec<ConstantKind>,
    pub m_list: Vec<usize>,
    pub beta_list: Vec<f64>,
    pub refinement: u32,
    pub starts: usize,
    /// Intervals for the slab constant.
    pub poincare_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub m: usize,
    pub beta: f64,
    pub refinement_p: u32,
    pub dt: DtChoice,
    pub t_end: f64,
    pub cfl: f64,
    pub picard_max: usize,
    pub picard_tol: f64,
    pub ic_kind: IcKind,
    pub ic_amplitude: f64,
    pub output_stride: usize,
    /// 0 disables field snapshots.
    pub snapshot_stride: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Refinement whose lattice the step heights are snapped to, if any.
    pub snap_p: Option<u32>,
    pub solver_tol: f64,
    pub mms: MmsConfig,
    pub constants: ConstantsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 3,
            beta: 1.1,
            refinement_p: 4,
            dt: DtChoice::Auto,
            t_end: 0.1,
            cfl: crate::evolve::DEFAULT_CFL,
            picard_max: 3,
            picard_tol: 1e-8,
            ic_kind: IcKind::StreamfunctionSwirl,
            ic_amplitude: 0.1,
            output_stride: 1,
            snapshot_stride: 0,
            out_dir: PathBuf::from("out"),
            seed: 0,
            snap_p: None,
            solver_tol: 1e-10,
            mms: MmsConfig { equation: MmsEquation::V3, p_list: vec![4, 5, 6], domain: MmsDomain::Rectangle },
            constants: ConstantsConfig {
                which: vec![ConstantKind::Poincare, ConstantKind::SobolevS0(SobolevConstraint::ZeroOnH), ConstantKind::WeightedCs],
                m_list: vec![2, 3, 4, 5],
                beta_list: vec![1.1],
                refinement: 2,
                starts: 20,
                poincare_n: 512,
            },
        }
    }
}

const KEYS: &[&str] = &[
    "m",
    "beta",
    "refinement_p",
    "dt",
    "t_end",
    "cfl",
    "picard_max",
    "picard_tol",
    "ic.kind",
    "ic.amplitude",
    "output_stride",
    "snapshot_stride",
    "out_dir",
    "seed",
    "snap_p",
    "solver_tol",
    "mms.equation",
    "mms.p",
    "mms.domain",
    "constants.which",
    "constants.m",
    "constants.beta",
    "constants.refinement",
    "constants.starts",
    "constants.poincare_n",
];

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, ()> {
    let items: std::result::Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
    match items {
        Ok(xs) if !xs.is_empty() => Ok(xs),
        _ => Err(()),
    }
}

impl RunConfig {
    /// Parses and validates a config text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got `{body}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config { line, message: format!("unknown key `{key}`") });
            }
            if let Some(first) = seen.insert(key.to_string(), line) {
                return Err(Error::Config { line, message: format!("key `{key}` already set on line {first}") });
            }
            let bad = |what: &str| Error::Config { line, message: format!("`{key}`: expected {what}, got `{value}`") };
            match key {
                "m" => cfg.m = value.parse().map_err(|_| bad("a positive integer"))?,
                "beta" => cfg.beta = value.parse().map_err(|_| bad("a number"))?,
                "refinement_p" => cfg.refinement_p = value.parse().map_err(|_| bad("an integer"))?,
                "dt" => {
                    cfg.dt = if value == "auto" {
                        DtChoice::Auto
                    } else {
                        DtChoice::Fixed(value.parse().map_err(|_| bad("`auto` or a number"))?)
                    }
                }
                "t_end" => cfg.t_end = value.parse().map_err(|_| bad("a number"))?,
                "cfl" => cfg.cfl = value.parse().map_err(|_| bad("a number"))?,
                "picard_max" => cfg.picard_max = value.parse().map_err(|_| bad("an integer"))?,
                "picard_tol" => cfg.picard_tol = value.parse().map_err(|_| bad("a number"))?,
                "ic.kind" => cfg.ic_kind = value.parse().map_err(|_| bad("an initial condition kind"))?,
                "ic.amplitude" => cfg.ic_amplitude = value.parse().map_err(|_| bad("a number"))?,
                "output_stride" => cfg.output_stride = value.parse().map_err(|_| bad("an integer"))?,
                "snapshot_stride" => cfg.snapshot_stride = value.parse().map_err(|_| bad("an integer"))?,
                "out_dir" => cfg.out_dir = PathBuf::from(value),
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                "snap_p" => {
                    cfg.snap_p = if value == "none" { None } else { Some(value.parse().map_err(|_| bad("`none` or an integer"))?) }
                }
                "solver_tol" => cfg.solver_tol = value.parse().map_err(|_| bad("a number"))?,
                "mms.equation" => cfg.mms.equation = value.parse().map_err(|_| bad("vr, v3, h or omega"))?,
                "mms.p" => cfg.mms.p_list = parse_list(value).map_err(|_| bad("a comma-separated integer list"))?,
                "mms.domain" => cfg.mms.domain = value.parse().map_err(|_| bad("rect or staircase"))?,
                "constants.which" => cfg.constants.which = parse_list(value).map_err(|_| bad("a list of constant names"))?,
                "constants.m" => cfg.constants.m_list = parse_list(value).map_err(|_| bad("a comma-separated integer list"))?,
                "constants.beta" => cfg.constants.beta_list = parse_list(value).map_err(|_| bad("a comma-separated number list"))?,
                "constants.refinement" => cfg.constants.refinement = value.parse().map_err(|_| bad("an integer"))?,
                "constants.starts" => cfg.constants.starts = value.parse().map_err(|_| bad("an integer"))?,
                "constants.poincare_n" => cfg.constants.poincare_n = value.parse().map_err(|_| bad("an integer"))?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate(&seen)?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    fn validate(&self, seen: &BTreeMap<String, usize>) -> Result<()> {
        let fail = |key: &str, message: String| Error::Config { line: seen.get(key).copied().unwrap_or(0), message };
        if self.m == 0 || self.m > 12 {
            return Err(fail("m", format!("m must lie in 1..=12, got {}", self.m)));
        }
        if !(self.beta > 1.0 && self.beta <= BETA_MAX) {
            return Err(fail("beta", format!("beta must lie in (1, {BETA_MAX}], got {}", self.beta)));
        }
        if self.refinement_p < 2 {
            return Err(fail("refinement_p", format!("refinement_p must be at least 2, got {}", self.refinement_p)));
        }
        if let DtChoice::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(fail("dt", format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(fail("t_end", format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(fail("cfl", format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if self.picard_max == 0 {
            return Err(fail("picard_max", "picard_max must be at least 1".into()));
        }
        if !(self.picard_tol > 0.0 && self.picard_tol.is_finite()) {
            return Err(fail("picard_tol", format!("picard_tol must be positive, got {}", self.picard_tol)));
        }
        if !self.ic_amplitude.is_finite() {
            return Err(fail("ic.amplitude", "amplitude must be finite".into()));
        }
        if self.output_stride == 0 {
            return Err(fail("output_stride", "output_stride must be at least 1".into()));
        }
        if let Some(s) = self.snap_p {
            if s < 2 || s > self.refinement_p {
                return Err(fail("snap_p", format!("snap_p must lie in 2..=refinement_p, got {s}")));
            }
        }
        if !(self.solver_tol > 0.0 && self.solver_tol <= 1e-4) {
            return Err(fail("solver_tol", format!("solver_tol must lie in (0, 1e-4], got {}", self.solver_tol)));
        }
        if self.mms.p_list.iter().any(|&p| p < 2) {
            return Err(fail("mms.p", "every MMS refinement must be at least 2".into()));
        }
        let c = &self.constants;
        if c.m_list.iter().any(|&m| m == 0 || m > 12) {
            return Err(fail("constants.m", "every m must lie in 1..=12".into()));
        }
        if c.beta_list.iter().any(|&b| !(b > 1.0 && b <= BETA_MAX)) {
            return Err(fail("constants.beta", format!("every beta must lie in (1, {BETA_MAX}]")));
        }
        if c.refinement < 2 {
            return Err(fail("constants.refinement", "refinement must be at least 2".into()));
        }
        if c.starts == 0 {
            return Err(fail("constants.starts", "at least one start is required".into()));
        }
        if c.poincare_n < 16 {
            return Err(fail("constants.poincare_n", "at least 16 intervals are required".into()));
        }
        Ok(())
    }

    /// Canonical listing of every resolved key; parses back to `self`.
    pub fn echo(&self) -> String {
        let join = |xs: Vec<String>| xs.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("m", self.m.to_string());
        kv("beta", format!("{:?}", self.beta));
        kv("refinement_p", self.refinement_p.to_string());
        kv(
            "dt",
            match self.dt {
                DtChoice::Auto => "auto".into(),
                DtChoice::Fixed(x) => format!("{x:?}"),
            },
        );
        kv("t_end", format!("{:?}", self.t_end));
        kv("cfl", format!("{:?}", self.cfl));
        kv("picard_max", self.picard_max.to_string());
        kv("picard_tol", format!("{:?}", self.picard_tol));
        kv("ic.kind", self.ic_kind.to_string());
        kv("ic.amplitude", format!("{:?}", self.ic_amplitude));
        kv("output_stride", self.output_stride.to_string());
        kv("snapshot_stride", self.snapshot_stride.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.to_string());
        kv("snap_p", self.snap_p.map_or("none".into(), |p| p.to_string()));
        kv("solver_tol", format!("{:?}", self.solver_tol));
        kv("mms.equation", self.mms.equation.to_string());
        kv("mms.p", join(self.mms.p_list.iter().map(|p| p.to_string()).collect()));
        kv("mms.domain", self.mms.domain.to_string());
        let c = &self.constants;
        kv("constants.which", join(c.which.iter().map(|w| w.to_string()).collect()));
        kv("constants.m", join(c.m_list.iter().map(|m| m.to_string()).collect()));
        kv("constants.beta", join(c.beta_list.iter().map(|b| format!("{b:?}")).collect()));
        kv("constants.refinement", c.refinement.to_string());
        kv("constants.starts", c.starts.to_string());
        kv("constants.poincare_n", c.poincare_n.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let text = "m = 2\nbeta = 1.05\ndt = 0.001\nsnap_p = 2\nic.kind = swirl-only\nconstants.which = poincare,cs\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.dt, DtChoice::Fixed(0.001));
        assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = |t: &str| match RunConfig::parse(t) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("expected a config error, got {other:?}"),
        };
        assert_eq!(err("m = 3\nvelocity = 2\n"), 2);
        assert_eq!(err("m = 3\n\nm = 4\n"), 3);
        assert_eq!(err("# c\nbeta = 0.9\n"), 2);
        assert_eq!(err("t_end = soon"), 1);
        assert_eq!(err("cfl 0.3"), 1);
        assert_eq!(err("refinement_p = 4\nsnap_p = 5"), 2);
    }
}
