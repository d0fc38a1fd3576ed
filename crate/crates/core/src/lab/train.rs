//! Training and sampling runs.

use std::collections::BTreeMap;

use super::config::{ExperimentConfig, Method, Study};
use super::report::{Assertion, CheckReport, Fingerprint};
use super::studies::{beta_ceiling, solver_kind};
use super::{gaussian_inputs, w1_to_target};
use crate::consistency::{
    default_lipschitz_budget, emulate_baseline, loss_cd, ConsistencyFunction, ConsistencyNet, LossOptions, LossTrace,
    Sampling, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::flow::{push_cloud, FlowStep, SolverKind};
use crate::rng;
use crate::schedule::TimeGrid;
use crate::score::{score_mse, EmpiricalScore, ScoreField};
use crate::targets::{Dataset, PointCloud};

/// Trains a Lip(R) consistency network against `f*` steps under `kind`.
pub fn fit_network(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    grid: &TimeGrid,
    kind: SolverKind,
    seed: u64,
) -> Result<(ConsistencyNet, TrainOutcome)> {
    let s = kind.schedule().clone();
    let budget = match cfg.lipschitz_r {
        Some(r) => Some(r),
        None => default_lipschitz_budget(&FlowStep::new(&kind, grid.clone())?),
    };
    let mut net = ConsistencyNet::new(ds.dim(), &cfg.hidden, s, budget, rng::derive_seed(seed, 0))?;
    let out = crate::consistency::train_consistency(&mut net, ds, grid, kind, &cfg.train, rng::derive_seed(seed, 1))?;
    Ok((net, out))
}

pub struct TrainRun {
    pub report: CheckReport,
    pub net: ConsistencyNet,
    pub trace: LossTrace,
    pub dataset: Dataset,
}

/// Trains on one dataset (CT: exact score, CD: a plug-in score trained
/// first) and compares the network with the emulated baseline on the
/// consistency loss and on W₁ of one-step samples to the target.
pub fn run_train(cfg: &ExperimentConfig, study: Study) -> Result<TrainRun> {
    let method = match study {
        Study::TrainCt => Method::Isolate,
        Study::TrainCd => Method::Distill,
        other => return Err(Error::Config(format!("{} is not a training study", other.name()))),
    };
    cfg.validate()?;
    let mut cfg_m = cfg.clone();
    cfg_m.method = method;
    let td = &cfg.target;
    let ds = Dataset::sample(td, cfg.n, rng::derive_seed(cfg.seed, 0))?;
    let s = cfg.schedule.clone();
    let grid = s.build_grid(cfg.n_coarse, cfg.m)?;
    let kind = solver_kind(&cfg_m, &ds, &s, rng::derive_seed(cfg.seed, 1))?;
    let (net, outcome) = fit_network(cfg, &ds, &grid, kind.clone(), rng::derive_seed(cfg.seed, 2))?;
    let baseline = emulate_baseline(kind.clone(), &grid)?;

    // common random numbers: both losses see the same batches
    let opts = LossOptions { estimator: cfg.estimator, sampling: Sampling::Independent };
    let eval_seed = rng::derive_seed(cfg.seed, 3);
    let loss_net = loss_cd(&net, &ds, &grid, &kind, cfg.loss_m_batch, eval_seed, opts)?;
    let loss_base = loss_cd(&baseline, &ds, &grid, &kind, cfg.loss_m_batch, eval_seed, opts)?;
    let coupled = LossOptions { estimator: cfg.estimator, sampling: Sampling::Coupled };
    let loss_base_coupled = loss_cd(&baseline, &ds, &grid, &kind, cfg.loss_m_batch, eval_seed, coupled)?;

    let z = gaussian_inputs(ds.dim(), cfg.m_eval, rng::derive_seed(cfg.seed, 4))?;
    let t_max = s.t_max();
    let w_net = w1_to_target(&push_cloud(|x| net.eval(x, t_max), &z)?, td, cfg, rng::derive_seed(cfg.seed, 5))?;
    let w_base = w1_to_target(&push_cloud(|x| baseline.eval(x, t_max), &z)?, td, cfg, rng::derive_seed(cfg.seed, 5))?;

    let assertions = vec![
        Assertion::at_most("loss_vs_baseline", loss_net.total / loss_base.total, cfg.loss_ratio_max)
            .with_detail(format!("trained {:.5} vs baseline {:.5}", loss_net.total, loss_base.total)),
        Assertion::at_most("w1_vs_baseline", w_net / w_base, cfg.w1_ratio_max)
            .with_detail(format!("trained {w_net:.5} vs baseline {w_base:.5}")),
    ];
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("loss_trained".into(), loss_net.total);
    diagnostics.insert("loss_baseline".into(), loss_base.total);
    diagnostics.insert("loss_baseline_coupled".into(), loss_base_coupled.total);
    diagnostics.insert("w1_trained".into(), w_net);
    diagnostics.insert("w1_baseline".into(), w_base);
    diagnostics.insert("certified_lipschitz".into(), net.certified_lipschitz());
    let ceiling = beta_ceiling(ds.dim(), ds.len(), s.eps());
    diagnostics.insert("beta_max_ceiling".into(), ceiling);
    diagnostics.insert("beta_max_within_ceiling".into(), if s.beta_max() < ceiling { 1.0 } else { 0.0 });
    if let SolverKind::Distill(plugin) = &kind {
        let exact = EmpiricalScore::new(ds.clone(), s.clone());
        let mse = score_mse(plugin, &exact, ds.points(), s.eps(), s.t_max(), 4096, rng::derive_seed(cfg.seed, 6))?;
        let r = net.lipschitz_r().unwrap_or_else(|| net.certified_lipschitz());
        let term = r
            * s.beta_max()
            * (ds.dim() as f64).sqrt()
            * mse.value.sqrt()
            * (s.t_max() * grid.n_coarse() as f64 / s.eps()).sqrt();
        diagnostics.insert("score_mse".into(), mse.value);
        diagnostics.insert("score_error_term".into(), term);
    }
    if let Some((a, b)) = outcome.trace.smoothed_ends() {
        diagnostics.insert("train_loss_first_tenth".into(), a);
        diagnostics.insert("train_loss_last_tenth".into(), b);
    }
    let mut notes = vec![
        "losses evaluated with independent pairs and shared seeds; the coupled baseline loss is 0 by construction"
            .into(),
        format!("training used {} steps", cfg.train.steps),
    ];
    if diagnostics.contains_key("score_error_term") {
        notes.push(
            "score_error_term = R beta_max sqrt(d) sqrt(score_mse) sqrt(T N' / eps), reported without a band".into(),
        );
    }
    let mut report = CheckReport::new(Fingerprint::new(&study.name(), cfg), assertions, notes);
    report.diagnostics = diagnostics;
    Ok(TrainRun { report, net, trace: outcome.trace, dataset: ds })
}

/// One-step samples from a saved network, or from the baseline solver when
/// no checkpoint is configured.
pub fn run_sample(cfg: &ExperimentConfig) -> Result<(CheckReport, PointCloud)> {
    cfg.validate()?;
    let td = &cfg.target;
    let z = gaussian_inputs(cfg.dim(), cfg.m_eval, rng::derive_seed(cfg.seed, 4))?;
    let (cloud, source) = match &cfg.checkpoint {
        Some(path) => {
            let net = ConsistencyNet::load_json(path)?;
            let t_max = net.schedule().t_max();
            (push_cloud(|x| net.eval(x, t_max), &z)?, format!("checkpoint {}", path.display()))
        }
        None => {
            let ds = Dataset::sample(td, cfg.n, rng::derive_seed(cfg.seed, 0))?;
            let s = cfg.schedule.clone();
            let grid = s.build_grid(cfg.n_coarse, cfg.m)?;
            let kind = solver_kind(cfg, &ds, &s, rng::derive_seed(cfg.seed, 1))?;
            let f = emulate_baseline(kind, &grid)?;
            (push_cloud(|x| f.eval(x, s.t_max()), &z)?, "baseline solver".to_string())
        }
    };
    if cloud.dim() != td.dim() {
        return Err(Error::Config(format!("checkpoint dimension {} vs target dimension {}", cloud.dim(), td.dim())));
    }
    let w = w1_to_target(&cloud, td, cfg, rng::derive_seed(cfg.seed, 5))?;
    let mut report = CheckReport::new(
        Fingerprint::new(&Study::Sample.name(), cfg),
        vec![Assertion::flag("samples_finite", cloud.data().iter().all(|v| v.is_finite()))],
        vec![format!("samples from the {source}")],
    );
    report.diagnostics.insert("w1_to_target".into(), w);
    Ok((report, cloud))
}
