//! Run configuration: the TOML schema, validation, derived-scale echo,
//! and the experiment selection grammar shared by the runner and the
//! command-line front end.

use crate::error::{Error, Result};
use crate::ergodic::Observable;
use crate::linalg::IntMat2;
use crate::lyapunov::{DEFAULT_ALPHA_ITER, DEFAULT_BURN_IN, DEFAULT_OSELEDETS_HORIZON};
use crate::maps::{Shear, SkewProduct};
use crate::pliss::DEFAULT_PROXY_HORIZON;
use crate::runner::fnv1a64;
use crate::scales::{Scales, DEFAULT_DELTA, DEFAULT_DELTA_TILDE};
use serde::{Deserialize, Serialize};

fn bad(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

/// Full run configuration. Unknown keys anywhere in the file are
/// rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub map: MapConfig,
    pub scales: ScalesSection,
    pub experiments: ExperimentSection,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            scales: ScalesSection::default(),
            experiments: ExperimentSection::default(),
            run: RunSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub n: u32,
    /// Fiber matrix entries [a, b, c, d] for [[a, b], [c, d]].
    pub base: [i64; 4],
    pub pre_shear: Vec<ShearConfig>,
    pub post_shear: Vec<ShearConfig>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            n: 100,
            base: [2, 1, 1, 1],
            pre_shear: Vec::new(),
            post_shear: Vec::new(),
        }
    }
}

/// One volume-preserving shear stage; `target` is a coordinate name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShearConfig {
    pub target: String,
    pub freq: [i64; 4],
    pub eps: f64,
}

impl ShearConfig {
    pub fn to_shear(&self) -> Result<Shear> {
        let target = match self.target.as_str() {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            "w" => 3,
            other => {
                return Err(bad(format!(
                    "shear target must be one of x, y, z, w; got `{other}`"
                )))
            }
        };
        Shear::new(target, self.freq, self.eps)
    }
}

/// Scale exponents and overrides. Absent overrides keep the values
/// derived from N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalesSection {
    pub delta: f64,
    pub delta_tilde: f64,
    pub theta3: Option<f64>,
    pub k_ratio: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub eps3: Option<f64>,
    pub beta: Option<f64>,
    pub pliss_horizon: u32,
    pub oseledets_horizon: u32,
    pub alpha_iter: u32,
    pub burn_in: u64,
    pub piece_cap: u64,
}

impl Default for ScalesSection {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            delta_tilde: DEFAULT_DELTA_TILDE,
            theta3: None,
            k_ratio: None,
            eps1: None,
            eps2: None,
            eps3: None,
            beta: None,
            pliss_horizon: DEFAULT_PROXY_HORIZON,
            oseledets_horizon: DEFAULT_OSELEDETS_HORIZON,
            alpha_iter: DEFAULT_ALPHA_ITER,
            burn_in: DEFAULT_BURN_IN,
            piece_cap: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Experiment names, or the single entry "all". Empty runs nothing.
    pub run: Vec<String>,
    pub seeds: u64,
    /// Birkhoff horizon.
    pub t: u64,
    /// Orbit length for exponent estimates.
    pub orbit_len: u64,
    /// Monte-Carlo sample count (set measures, cones, census, correlation).
    pub samples: u64,
    pub k_max: u32,
    pub lags: u32,
    pub curve_nodes: usize,
    /// Kick strengths of the uncoupled control pair.
    pub control_kick: [u32; 2],
    pub observables: Vec<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            run: vec!["all".into()],
            seeds: 100,
            t: 100_000,
            orbit_len: 10_000,
            samples: 10_000,
            k_max: 2,
            lags: 8,
            curve_nodes: 33,
            control_kick: [0, 0],
            observables: vec!["cos(x)".into(), "cos(z)".into(), "cos(x+y)".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub master_seed: u64,
    pub out_dir: String,
    /// 0 keeps the scheduler default; 1 is the bit-exactness reference.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            master_seed: 0,
            out_dir: "runs".into(),
            threads: 0,
        }
    }
}

/// The experiments the runner knows how to execute, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Experiment {
    Exponents,
    Pliss,
    Cones,
    Ucurve,
    Ergodicity,
    Perturb,
    FormulaCheck,
}

pub const ALL_EXPERIMENTS: [Experiment; 7] = [
    Experiment::Exponents,
    Experiment::Pliss,
    Experiment::Cones,
    Experiment::Ucurve,
    Experiment::Ergodicity,
    Experiment::Perturb,
    Experiment::FormulaCheck,
];

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Exponents => "exponents",
            Experiment::Pliss => "pliss",
            Experiment::Cones => "cones",
            Experiment::Ucurve => "ucurve",
            Experiment::Ergodicity => "ergodicity",
            Experiment::Perturb => "perturb",
            Experiment::FormulaCheck => "formula-check",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ALL_EXPERIMENTS
            .iter()
            .find(|e| e.name() == name)
            .copied()
            .ok_or_else(|| {
                bad(format!(
                    "unknown experiment `{name}`; expected one of {} or all",
                    ALL_EXPERIMENTS
                        .iter()
                        .map(|e| e.name())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
    }
}

/// Derived values echoed into every manifest so a configuration is
/// auditable without re-deriving anything.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleEcho {
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub eta: f64,
    pub t_window: i64,
    pub r0: f64,
    pub k_ratio: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub beta: f64,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| bad(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| bad(format!("config serialize error: {e}")))
    }

    /// FNV-1a of the canonical serialization; names run directories.
    pub fn fingerprint(&self) -> Result<u64> {
        Ok(fnv1a64(self.to_toml_string()?.as_bytes()))
    }

    pub fn build_map(&self) -> Result<SkewProduct> {
        let [a, b, c, d] = self.map.base;
        let pre: Result<Vec<Shear>> = self.map.pre_shear.iter().map(|s| s.to_shear()).collect();
        let post: Result<Vec<Shear>> = self.map.post_shear.iter().map(|s| s.to_shear()).collect();
        SkewProduct::new(self.map.n, IntMat2::new(a, b, c, d), pre?, post?)
    }

    /// The scale pack with all overrides applied.
    pub fn scales(&self) -> Result<Scales> {
        let s = &self.scales;
        let mut out = Scales::derive(self.map.n, s.delta, s.delta_tilde)?;
        if let Some(t3) = s.theta3 {
            out = out.with_theta3(t3)?;
        }
        if let Some(k) = s.k_ratio {
            out = out.with_k_ratio(k)?;
        }
        if s.eps1.is_some() || s.eps2.is_some() || s.eps3.is_some() || s.beta.is_some() {
            out = out.with_slacks(
                s.eps1.unwrap_or(out.eps1),
                s.eps2.unwrap_or(out.eps2),
                s.eps3.unwrap_or(out.eps3),
                s.beta.unwrap_or(out.beta),
            )?;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn scale_echo(&self) -> Result<ScaleEcho> {
        let s = self.scales()?;
        Ok(ScaleEcho {
            theta1: s.theta1,
            theta2: s.theta2,
            theta3: s.theta3,
            eta: s.eta,
            t_window: s.t_window,
            r0: s.r0,
            k_ratio: s.k_ratio,
            eps1: s.eps1,
            eps2: s.eps2,
            eps3: s.eps3,
            beta: s.beta,
        })
    }

    /// The selected experiments in canonical execution order, deduplicated.
    pub fn selected_experiments(&self) -> Result<Vec<Experiment>> {
        if self.experiments.run.iter().any(|s| s == "all") {
            if self.experiments.run.len() != 1 {
                return Err(bad("`all` cannot be combined with other experiments".into()));
            }
            return Ok(ALL_EXPERIMENTS.to_vec());
        }
        let mut picked = Vec::new();
        for name in &self.experiments.run {
            let e = Experiment::parse(name)?;
            if !picked.contains(&e) {
                picked.push(e);
            }
        }
        picked.sort_by_key(|e| ALL_EXPERIMENTS.iter().position(|a| a == e).unwrap());
        Ok(picked)
    }

    pub fn parsed_observables(&self) -> Result<Vec<Observable>> {
        if self.experiments.observables.is_empty() {
            return Err(bad("at least one observable is required".into()));
        }
        self.experiments
            .observables
            .iter()
            .map(|s| Observable::parse(s))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.build_map()?;
        self.scales()?;
        self.selected_experiments()?;
        self.parsed_observables()?;
        let e = &self.experiments;
        if e.seeds < 2 {
            return Err(bad("experiments.seeds must be at least 2".into()));
        }
        if e.t == 0 || e.orbit_len == 0 || e.samples == 0 {
            return Err(bad(
                "experiments.t, orbit_len, and samples must be positive".into(),
            ));
        }
        if e.k_max == 0 || e.k_max > 6 {
            return Err(bad("experiments.k_max must lie in 1..=6".into()));
        }
        if e.curve_nodes < 9 {
            return Err(bad("experiments.curve_nodes must be at least 9".into()));
        }
        if self.scales.piece_cap == 0 {
            return Err(bad("scales.piece_cap must be positive".into()));
        }
        if self.run.out_dir.is_empty() {
            return Err(bad("run.out_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Command-line overrides; applied before validation.
    pub fn apply_overrides(
        &mut self,
        n: Option<u32>,
        seed: Option<u64>,
        out: Option<&str>,
        threads: Option<usize>,
    ) {
        if let Some(n) = n {
            self.map.n = n;
        }
        if let Some(seed) = seed {
            self.run.master_seed = seed;
        }
        if let Some(out) = out {
            self.run.out_dir = out.to_string();
        }
        if let Some(t) = threads {
            self.run.threads = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint().unwrap(), back.fingerprint().unwrap());
        assert_eq!(cfg.selected_experiments().unwrap(), ALL_EXPERIMENTS.to_vec());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[map]\nn = 10\ntypo_key = 3\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("typo_key"), "{msg}");
        assert!(RunConfig::from_toml_str("[nonsense]\na = 1\n").is_err());
    }

    #[test]
    fn scale_echo_matches_formulas() {
        let mut cfg = RunConfig::default();
        cfg.map.n = 50;
        cfg.scales.delta = 0.02;
        cfg.scales.delta_tilde = 0.2;
        let echo = cfg.scale_echo().unwrap();
        let nf = 50.0f64;
        assert_eq!(echo.theta1, nf.powf(-0.4));
        assert_eq!(echo.theta2, nf.powf(-0.6));
        assert_eq!(echo.eta, 5.0 / (std::f64::consts::PI * nf.powf(0.2)));
        assert_eq!(
            echo.t_window,
            ((1.0 + 7.0 * 0.02) / (28.0 * 0.02_f64)).floor() as i64
        );
    }

    #[test]
    fn shear_and_experiment_parsing() {
        let text = r#"
[map]
n = 10
base = [2, 1, 1, 1]

[[map.post_shear]]
target = "x"
freq = [0, 1, 1, 0]
eps = 1e-3

[experiments]
run = ["exponents", "cones", "exponents"]

[run]
master_seed = 7
"#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        let f = cfg.build_map().unwrap();
        assert!(f.is_perturbed());
        assert_eq!(
            cfg.selected_experiments().unwrap(),
            vec![Experiment::Exponents, Experiment::Cones]
        );
        let bad_target = r#"
[map]
n = 10
[[map.pre_shear]]
target = "q"
freq = [0, 0, 0, 0]
eps = 0.1
"#;
        assert!(RunConfig::from_toml_str(bad_target).is_err());
        let mut cfg = RunConfig::default();
        cfg.experiments.run = vec!["all".into(), "cones".into()];
        assert!(cfg.selected_experiments().is_err());
        cfg.experiments.run = vec![];
        assert!(cfg.selected_experiments().unwrap().is_empty());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(Some(17), Some(99), Some("elsewhere"), Some(1));
        assert_eq!(cfg.map.n, 17);
        assert_eq!(cfg.run.master_seed, 99);
        assert_eq!(cfg.run.out_dir, "elsewhere");
        assert_eq!(cfg.run.threads, 1);
        cfg.validate().unwrap();
    }
}
