//! Run configuration: one JSON document per study, layered over built-in
//! defaults so a config file only needs the keys it changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::consistency::{TrainConfig, W1Estimator};
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::score::PluginConfig;
use crate::targets::TargetDistribution;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    N,
    #[serde(rename = "M")]
    M,
    #[serde(rename = "T")]
    T,
    Eps,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::N => "n",
            SweepVariable::M => "M",
            SweepVariable::T => "T",
            SweepVariable::Eps => "eps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n" => Some(SweepVariable::N),
            "M" | "m" => Some(SweepVariable::M),
            "T" | "t" => Some(SweepVariable::T),
            "eps" => Some(SweepVariable::Eps),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned plug-in score.
    Distill,
    /// Exact empirical score.
    Isolate,
}

/// What produces the evaluated cloud in an n-sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// The emulated baseline solver `f*`, one step from 𝒩(0, I).
    Baseline,
    /// A consistency network trained on each dataset.
    Trained,
    /// The dataset itself, no diffusion.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// T = (log n)³, M = d²n^{1/(d+5)}, N′ = log n, eps from the schedule.
    #[serde(rename = "remark-4.3")]
    Distillation,
    /// eps = n^{−2/d}, T = d(log n)³, M = d²(log n)⁸n^{10/d}, N′ = log n.
    #[serde(rename = "remark-4.6")]
    Isolation,
}

/// Down-scaling knob for presets: every recipe value is clipped to its cap,
/// since the literal values are far beyond desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetCaps {
    #[serde(rename = "T")]
    pub t_max: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub n_coarse: usize,
}

impl Default for PresetCaps {
    fn default() -> Self {
        PresetCaps { t_max: 1.0, m: 48, n_coarse: 16 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
}

/// The named studies and checks the harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Rates(SweepVariable),
    /// The n-sweep of W₁(p̂, p) with no diffusion.
    EmpiricalMeasure,
    Identities,
    Contraction,
    Tails,
    TrainCd,
    TrainCt,
    Sample,
}

impl Study {
    pub fn name(self) -> String {
        match self {
            Study::Rates(v) => format!("rates-{}", v.name()),
            Study::EmpiricalMeasure => "rates-n-direct".into(),
            Study::Identities => "check-identities".into(),
            Study::Contraction => "check-contraction".into(),
            Study::Tails => "check-tails".into(),
            Study::TrainCd => "train-cd".into(),
            Study::TrainCt => "train-ct".into(),
            Study::Sample => "sample".into(),
        }
    }

    pub fn all() -> Vec<Study> {
        vec![
            Study::Rates(SweepVariable::N),
            Study::EmpiricalMeasure,
            Study::Rates(SweepVariable::M),
            Study::Rates(SweepVariable::T),
            Study::Rates(SweepVariable::Eps),
            Study::Identities,
            Study::Contraction,
            Study::Tails,
            Study::TrainCd,
            Study::TrainCt,
            Study::Sample,
        ]
    }

    pub fn from_name(s: &str) -> Option<Study> {
        Study::all().into_iter().find(|st| st.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetDistribution,
    pub schedule: Schedule,
    /// N′.
    pub n_coarse: usize,
    /// M.
    #[serde(rename = "M")]
    pub m: usize,
    pub method: Method,
    pub pipeline: Pipeline,
    pub sweep: Sweep,
    /// Dataset size when n is not swept.
    pub n: usize,
    pub trials: usize,
    pub m_eval: usize,
    pub seed: u64,
    pub estimator: W1Estimator,
    pub preset: Option<Preset>,
    pub preset_caps: PresetCaps,
    /// Expected slope band; each study has a default.
    pub band: Option<[f64; 2]>,
    /// Ratio band for consecutive doublings in the M-sweep.
    pub ratio_band: [f64; 2],
    /// M_ref = reference_factor · max(M grid).
    pub reference_factor: usize,
    /// Quadrature nodes for exact-quantile W₁ in d = 1.
    pub quad_points: usize,
    /// Size of population proxy clouds.
    pub m_proxy: usize,
    pub r0_grid: Vec<f64>,
    /// Probes per Lipschitz configuration.
    pub probes: usize,
    /// Constant added to the score under test (negative control).
    pub fault: Option<f64>,
    pub hidden: Vec<usize>,
    /// Lip(R) budget; derived from the solver ceiling when absent.
    pub lipschitz_r: Option<f64>,
    pub train: TrainConfig,
    pub plugin: PluginConfig,
    /// Batch size for evaluating the consistency loss after training.
    pub loss_m_batch: usize,
    pub loss_ratio_max: f64,
    pub w1_ratio_max: f64,
    pub checkpoint: Option<PathBuf>,
    /// Worker threads; all cores when absent. Results do not depend on it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn schedule(kind: &str, lo: f64, hi: f64, t: f64, eps: f64) -> Schedule {
    let s = match kind {
        "linear" => Schedule::linear(lo, hi, t, eps),
        _ => Schedule::constant(lo, t, eps),
    };
    s.unwrap_or_else(|e| panic!("built-in schedule is invalid: {e}"))
}

impl ExperimentConfig {
    fn base() -> Self {
        ExperimentConfig {
            target: TargetDistribution::UniformBall { dim: 1, radius: 1.0 },
            schedule: schedule("linear", 0.1, 25.0, 1.0, 1e-3),
            n_coarse: 4,
            m: 48,
            method: Method::Isolate,
            pipeline: Pipeline::Baseline,
            sweep: Sweep { variable: SweepVariable::N, grid: vec![16.0, 64.0, 256.0, 1024.0, 4096.0] },
            n: 64,
            trials: 5,
            m_eval: 1000,
            seed: 0,
            estimator: W1Estimator::Auto,
            preset: None,
            preset_caps: PresetCaps::default(),
            band: None,
            ratio_band: [1.7, 2.3],
            reference_factor: 16,
            quad_points: 100_000,
            m_proxy: 100_000,
            r0_grid: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5],
            probes: 10_000,
            fault: None,
            hidden: vec![32, 32],
            lipschitz_r: None,
            train: TrainConfig::default(),
            plugin: PluginConfig::default(),
            loss_m_batch: 2048,
            loss_ratio_max: 1.5,
            w1_ratio_max: 2.0,
            checkpoint: None,
            threads: None,
        }
    }

    /// The built-in configuration of a study.
    pub fn defaults(study: Study) -> Self {
        let mut c = Self::base();
        match study {
            Study::Rates(SweepVariable::N) => {
                c.preset = Some(Preset::Isolation);
                c.band = Some([-1.5, -0.5]);
            }
            Study::EmpiricalMeasure => {
                c.pipeline = Pipeline::Direct;
                c.trials = 10;
                c.band = Some([-1.25, -0.75]);
            }
            Study::Rates(SweepVariable::M) => {
                c.target = TargetDistribution::two_point_symmetric(1.0);
                c.schedule = schedule("constant", 1.0, 1.0, 2.0, 0.05);
                c.n = 8;
                c.trials = 3;
                c.sweep = Sweep { variable: SweepVariable::M, grid: vec![16.0, 32.0, 64.0, 128.0] };
                c.band = Some([-1.3, -0.7]);
            }
            Study::Rates(SweepVariable::T) => {
                c.target = TargetDistribution::TwoPoint { a: vec![0.0], b: vec![2.0], weight_a: 0.5 };
                c.schedule = schedule("constant", 1.0, 1.0, 8.0, 1e-3);
                c.n = 256;
                c.m_eval = 1_000_000;
                c.sweep = Sweep { variable: SweepVariable::T, grid: vec![2.0, 4.0, 6.0, 8.0] };
            }
            Study::Rates(SweepVariable::Eps) => {
                c.target = TargetDistribution::two_point_symmetric(1.0);
                c.schedule = schedule("constant", 0.5, 0.5, 1.0, 1e-3);
                c.n = 64;
                c.m_eval = 100_000;
                c.sweep = Sweep { variable: SweepVariable::Eps, grid: vec![1e-4, 1e-3, 1e-2, 1e-1] };
                c.band = Some([0.35, 0.65]);
            }
            Study::Identities => {}
            Study::Contraction => {
                c.n = 16;
                c.schedule = schedule("constant", 1.0, 1.0, 2.0, 1e-3);
                c.n_coarse = 4;
                c.m = 10;
            }
            Study::Tails => {
                c.target = TargetDistribution::standard_gaussian(1);
            }
            Study::TrainCd | Study::TrainCt | Study::Sample => {
                c.target = TargetDistribution::two_point_symmetric(1.0);
                c.schedule = schedule("constant", 1.0, 1.0, 3.0, 1e-2);
                c.n = 64;
                c.n_coarse = 4;
                c.m = 64;
                c.m_eval = 2000;
                c.hidden = vec![32, 32];
                c.lipschitz_r = Some(50.0);
                c.train = TrainConfig {
                    steps: 600,
                    learning_rate: 1e-2,
                    m_batch: 64,
                    pool: Some(4096),
                    ..TrainConfig::default()
                };
                if study == Study::TrainCd {
                    c.method = Method::Distill;
                }
            }
        }
        c
    }

    /// Parses `text` layered over the defaults of `study`. Objects merge key
    /// by key; a tagged object whose `kind` changes replaces the default.
    pub fn from_json_over(study: Study, text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if !user.is_object() {
            return Err(Error::Config("top level must be a JSON object".into()));
        }
        let mut base = serde_json::to_value(Self::defaults(study))?;
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(study: Study, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_over(study, &text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.target.validate().map_err(|e| Error::Config(format!("target: {e}")))?;
        let g = &self.sweep.grid;
        if g.len() < 4 {
            return bad(format!("sweep grid needs at least 4 cells, got {}", g.len()));
        }
        if g.windows(2).any(|w| !(w[1] > w[0])) || g.iter().any(|v| !v.is_finite()) {
            return bad("sweep grid must be finite and strictly increasing".into());
        }
        match self.sweep.variable {
            SweepVariable::N | SweepVariable::M => {
                if g.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                    return bad(format!("{} grid must hold positive integers", self.sweep.variable.name()));
                }
            }
            SweepVariable::T => {
                if g.iter().any(|v| *v <= self.schedule.eps()) {
                    return bad("T grid must exceed eps".into());
                }
            }
            SweepVariable::Eps => {
                if g.iter().any(|v| *v <= 0.0 || *v >= self.schedule.t_max()) {
                    return bad("eps grid must lie in (0, T)".into());
                }
            }
        }
        if self.trials < 3 {
            return bad(format!("trials must be at least 3, got {}", self.trials));
        }
        if self.n == 0 || self.m_eval < 2 || self.m_proxy < 2 || self.quad_points == 0 {
            return bad("n, m_eval, m_proxy and quad_points must be positive (m_eval, m_proxy >= 2)".into());
        }
        if self.n_coarse == 0 || self.m == 0 || self.reference_factor < 2 {
            return bad("N′ and M must be positive and reference_factor at least 2".into());
        }
        if let Some([lo, hi]) = self.band {
            if !(lo < hi) {
                return bad("band must satisfy lo < hi".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.target.dim() == 0 {
            return bad("target dimension must be positive".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding, excluding `threads`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        let bytes = serde_json::to_vec(&c).unwrap_or_default();
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Schedule and grid counts (N′, M) for a dataset of size `n`,
    /// after applying the preset (if any) and its caps.
    pub fn resolved_for(&self, n: usize) -> Result<(Schedule, usize, usize)> {
        let d = self.dim() as f64;
        let ln = (n.max(2) as f64).ln();
        let caps = &self.preset_caps;
        // the slack keeps exact integers like 64^{1/6} = 2 from rounding up
        let count = |v: f64, cap: usize| ((v - 1e-9).ceil().max(1.0) as usize).min(cap.max(1));
        match self.preset {
            None => Ok((self.schedule.clone(), self.n_coarse, self.m)),
            Some(Preset::Distillation) => {
                let t = ln.powi(3).min(caps.t_max);
                let m = count(d * d * (n as f64).powf(1.0 / (d + 5.0)), caps.m);
                let s = self.schedule.with_times(t, self.schedule.eps().min(t / 2.0))?;
                Ok((s, count(ln, caps.n_coarse), m))
            }
            Some(Preset::Isolation) => {
                let eps = (n as f64).powf(-2.0 / d);
                let t = (d * ln.powi(3)).min(caps.t_max);
                let m_raw = d * d * ln.powi(8) * (n as f64).powf(10.0 / d);
                let m = if m_raw.is_finite() { count(m_raw, caps.m) } else { caps.m.max(1) };
                let s = self.schedule.with_times(t, eps.min(t / 2.0))?;
                Ok((s, count(ln, caps.n_coarse), m))
            }
        }
    }

    pub fn expected_band(&self, default: [f64; 2]) -> [f64; 2] {
        self.band.unwrap_or(default)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::defaults(Study::Rates(SweepVariable::N))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            let kind_changed = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if kind_changed {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for st in Study::all() {
            ExperimentConfig::defaults(st).validate().unwrap_or_else(|e| panic!("{}: {e}", st.name()));
        }
    }

    #[test]
    fn study_names_roundtrip() {
        for st in Study::all() {
            assert_eq!(Study::from_name(&st.name()), Some(st));
        }
    }

    #[test]
    fn empty_object_is_the_default() {
        let c = ExperimentConfig::from_json_over(Study::Contraction, "{}").unwrap();
        assert_eq!(c, ExperimentConfig::defaults(Study::Contraction));
    }

    #[test]
    fn partial_override_merges() {
        let c = ExperimentConfig::from_json_over(
            Study::Rates(SweepVariable::T),
            r#"{"seed": 7, "schedule": {"eps": 0.01}, "sweep": {"grid": [1, 2, 3, 4, 5]}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.schedule.eps(), 0.01);
        assert_eq!(c.schedule.beta_min(), 1.0);
        assert_eq!(c.sweep.variable, SweepVariable::T);
        assert_eq!(c.sweep.grid.len(), 5);
    }

    #[test]
    fn target_kind_change_replaces() {
        let c = ExperimentConfig::from_json_over(
            Study::Tails,
            r#"{"target": {"kind": "uniform_ball", "dim": 2, "radius": 1.5}}"#,
        )
        .unwrap();
        assert_eq!(c.target, TargetDistribution::UniformBall { dim: 2, radius: 1.5 });
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = ExperimentConfig::from_json_over(Study::Tails, "{\n  \"seed\": 1,\n  \"n\": ,\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_json_over(Study::Tails, r#"{"sede": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sede"));
    }

    #[test]
    fn invariants_enforced() {
        let short = r#"{"sweep": {"grid": [1, 2, 3]}}"#;
        assert!(ExperimentConfig::from_json_over(Study::Tails, short).is_err());
        let unsorted = r#"{"sweep": {"grid": [16, 64, 32, 128]}}"#;
        assert!(ExperimentConfig::from_json_over(Study::Rates(SweepVariable::N), unsorted).is_err());
        let trials = r#"{"trials": 2}"#;
        assert!(ExperimentConfig::from_json_over(Study::Tails, trials).is_err());
        let frac = r#"{"sweep": {"grid": [16, 64.5, 256, 1024]}}"#;
        assert!(ExperimentConfig::from_json_over(Study::Rates(SweepVariable::N), frac).is_err());
    }

    #[test]
    fn hash_is_stable_and_ignores_threads() {
        let a = ExperimentConfig::defaults(Study::Tails);
        let mut b = a.clone();
        b.threads = Some(3);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn json_roundtrip() {
        let a = ExperimentConfig::defaults(Study::TrainCt);
        let text = serde_json::to_string_pretty(&a).unwrap();
        assert_eq!(ExperimentConfig::from_json_over(Study::Tails, &text).unwrap(), a);
    }

    #[test]
    fn isolation_preset_follows_recipe_under_caps() {
        let c = ExperimentConfig::defaults(Study::Rates(SweepVariable::N));
        let (s, nc, m) = c.resolved_for(64).unwrap();
        assert!((s.eps() - 1.0 / 4096.0).abs() < 1e-15);
        assert_eq!(s.t_max(), 1.0);
        assert_eq!(nc, 5); // ceil(ln 64)
        assert_eq!(m, 48);
        let mut c2 = c.clone();
        c2.preset_caps = PresetCaps { t_max: 1e9, m: usize::MAX, n_coarse: usize::MAX };
        let (s2, _, _) = c2.resolved_for(16).unwrap();
        assert!((s2.t_max() - 16f64.ln().powi(3)).abs() < 1e-9);
    }

    #[test]
    fn distillation_preset() {
        let mut c = ExperimentConfig::defaults(Study::Rates(SweepVariable::N));
        c.preset = Some(Preset::Distillation);
        c.preset_caps.m = 1000;
        let (_, _, m) = c.resolved_for(64).unwrap();
        // d² n^{1/6} = 2
        assert_eq!(m, 2);
    }
}
