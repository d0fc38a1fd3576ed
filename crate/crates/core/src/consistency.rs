//! Consistency functions, the distillation/isolation losses and W₁-driven training.
//!
//! The trainable map is `f(x, t) = x + c(t)·h_θ(x, τ(t))` with
//! `c(t) = (t − eps)/(T − eps)`, so `f(·, eps)` is the identity by construction.
//! `h_θ` is a tanh network whose output layer starts at zero.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{grid_score_lipschitz, push_cloud, solver_lipschitz_ceiling, FlowStep, SolverKind};
use crate::nn::{power_iteration, spectral_norm, Adam, Mlp, Trace};
use crate::rng;
use crate::schedule::{Schedule, TimeGrid};
use crate::score::{EmpiricalScore, ScoreField};
use crate::targets::{Dataset, PointCloud};
use crate::transport::{
    optimal_matching, project, sliced_direction, W1Estimate, W1Method, DEFAULT_ASSIGNMENT_CAP,
    DEFAULT_SLICED_PROJECTIONS,
};

/// Anything usable as `f(x, t)` on `[eps, T]`.
pub trait ConsistencyFunction: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// Power-iteration sweeps per projection.
pub const POWER_ITERS: usize = 5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyNet {
    net: Mlp,
    schedule: Schedule,
    /// Lipschitz budget R for `f`; `None` is unconstrained.
    lipschitz_r: Option<f64>,
    #[serde(skip)]
    power_vecs: Vec<Vec<f64>>,
}

impl PartialEq for ConsistencyNet {
    fn eq(&self, other: &Self) -> bool {
        self.net == other.net && self.schedule == other.schedule && self.lipschitz_r == other.lipschitz_r
    }
}

impl ConsistencyNet {
    pub fn new(dim: usize, hidden: &[usize], schedule: Schedule, lipschitz_r: Option<f64>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dimension must be positive"));
        }
        if let Some(r) = lipschitz_r {
            if !(r >= 1.0) {
                return Err(Error::arg(format!("Lipschitz budget must be at least 1, got {r}")));
            }
        }
        let mut sizes = vec![dim + 1];
        sizes.extend(hidden);
        sizes.push(dim);
        let mut net = Mlp::new(&sizes, seed)?;
        net.zero_output();
        let mut cn = ConsistencyNet { net, schedule, lipschitz_r, power_vecs: Vec::new() };
        cn.project();
        Ok(cn)
    }

    pub fn from_parts(net: Mlp, schedule: Schedule, lipschitz_r: Option<f64>) -> Result<Self> {
        if net.n_in() != net.n_out() + 1 {
            return Err(Error::arg("consistency network must map d + 1 inputs to d outputs"));
        }
        Ok(ConsistencyNet { net, schedule, lipschitz_r, power_vecs: Vec::new() })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    pub fn lipschitz_r(&self) -> Option<f64> {
        self.lipschitz_r
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let n: ConsistencyNet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ConsistencyNet::from_parts(n.net, n.schedule, n.lipschitz_r)
    }

    /// `c(t) = (t − eps)/(T − eps)`.
    pub fn skip_weight(&self, t: f64) -> f64 {
        (t - self.schedule.eps()) / (self.schedule.t_max() - self.schedule.eps())
    }

    fn features(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut f = x.to_vec();
        f.push(2.0 * self.skip_weight(t) - 1.0);
        f
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (eps, tm) = (self.schedule.eps(), self.schedule.t_max());
        if !(t >= eps && t <= tm) {
            return Err(Error::Domain { what: "t", value: t, lo: eps, hi: tm });
        }
        Ok(())
    }

    /// Forward pass keeping activations for backprop; `None` at t = eps.
    fn eval_trace(&self, x: &[f64], t: f64) -> (Vec<f64>, Option<Trace>) {
        if t == self.schedule.eps() {
            return (x.to_vec(), None);
        }
        let c = self.skip_weight(t);
        let tr = self.net.forward_trace(&self.features(x, t));
        let y = x.iter().zip(tr.output()).map(|(a, h)| a + c * h).collect();
        (y, Some(tr))
    }

    /// Exact per-layer operator norms entering the Lipschitz bound of `h`
    /// in `x`: the `x`-columns of the first layer, then whole layers.
    pub fn layer_norms(&self) -> Vec<f64> {
        let d = self.net.n_out();
        (0..self.net.n_layers())
            .map(|l| {
                let cols = if l == 0 { 0..d } else { 0..self.net.layer_sizes()[l] };
                spectral_norm(&self.net.weight_matrix(l, cols))
            })
            .collect()
    }

    /// Certified `Lip(f(·, t)) ≤ 1 + Π‖W_l‖` for every t.
    pub fn certified_lipschitz(&self) -> f64 {
        1.0 + self.layer_norms().iter().product::<f64>()
    }

    fn scale_layer(&mut self, l: usize, factor: f64) {
        let d = self.net.n_out();
        let n_in = self.net.layer_sizes()[l];
        let w = self.net.layer_weights_mut(l);
        if l == 0 {
            w.chunks_mut(n_in).for_each(|row| row[..d].iter_mut().for_each(|v| *v *= factor));
        } else {
            w.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Rescales layers so that the certified bound is at most R.
    ///
    /// Warm-started power iteration gives the working estimate; the result
    /// is then checked with exact singular values and rescaled again if the
    /// estimate was short.
    pub fn project(&mut self) {
        let Some(r) = self.lipschitz_r else { return };
        let budget = (r - 1.0).max(0.0);
        let n_layers = self.net.n_layers();
        let d = self.net.n_out();
        if self.power_vecs.len() != n_layers {
            self.power_vecs = vec![Vec::new(); n_layers];
        }
        let mut est = 1.0;
        for l in 0..n_layers {
            let cols = if l == 0 { 0..d } else { 0..self.net.layer_sizes()[l] };
            let a = self.net.weight_matrix(l, cols);
            est *= power_iteration(&a, &mut self.power_vecs[l], POWER_ITERS);
        }
        if est > budget {
            let f = if est > 0.0 { (budget / est).powf(1.0 / n_layers as f64) } else { 0.0 };
            (0..n_layers).for_each(|l| self.scale_layer(l, f));
        }
        let exact: f64 = self.layer_norms().iter().product();
        if exact > budget {
            let f = if exact > 0.0 { (budget / exact).powf(1.0 / n_layers as f64) * (1.0 - 1e-12) } else { 0.0 };
            (0..n_layers).for_each(|l| self.scale_layer(l, f));
        }
    }
}

impl ConsistencyFunction for ConsistencyNet {
    fn dim(&self) -> usize {
        self.net.n_out()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self.eval_trace(x, t).0)
    }
}

/// `f*(·, t)`: the baseline solver viewed as a consistency function.
#[derive(Clone, Debug)]
pub struct BaselineConsistency<S> {
    flow: FlowStep<S>,
}

impl<S: ScoreField> BaselineConsistency<S> {
    pub fn new(flow: FlowStep<S>) -> Self {
        BaselineConsistency { flow }
    }
    pub fn flow(&self) -> &FlowStep<S> {
        &self.flow
    }
}

impl<S: ScoreField> ConsistencyFunction for BaselineConsistency<S> {
    fn dim(&self) -> usize {
        self.flow.dim()
    }
    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.flow.solve_from(x, t)
    }
}

pub fn emulate_baseline(kind: SolverKind, grid: &TimeGrid) -> Result<BaselineConsistency<SolverKind>> {
    Ok(BaselineConsistency::new(FlowStep::new(kind, grid.clone())?))
}

/// Draws `m` standard Gaussian points and applies `f(·, T)` once.
pub fn one_step_sample(f: &dyn ConsistencyFunction, t_max: f64, m: usize, seed: u64) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::arg("sample size must be positive"));
    }
    let d = f.dim();
    let mut r = rng::rng(seed);
    let mut z = vec![0.0; m * d];
    rng::fill_normal(&mut r, &mut z);
    push_cloud(|x| f.eval(x, t_max), &PointCloud::new(d, z)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum W1Estimator {
    /// Sorted in d = 1, assignment up to the cap, sliced beyond.
    #[default]
    Auto,
    Sorted1d,
    Assignment,
    Sliced {
        projections: usize,
    },
}

impl W1Estimator {
    fn resolve(self, dim: usize, m: usize) -> W1Estimator {
        match self {
            W1Estimator::Auto if dim == 1 => W1Estimator::Sorted1d,
            W1Estimator::Auto if m <= DEFAULT_ASSIGNMENT_CAP => W1Estimator::Assignment,
            W1Estimator::Auto => W1Estimator::Sliced { projections: DEFAULT_SLICED_PROJECTIONS },
            e => e,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `B = G₍M₎(A)` from the same batch `A`.
    #[default]
    Coupled,
    /// `B = G₍M₎(A′)` with `A′` an independent draw from the same marginal.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LossOptions {
    pub estimator: W1Estimator,
    pub sampling: Sampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyLossValue {
    pub total: f64,
    pub per_interval: Vec<f64>,
    pub method: W1Method,
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

/// Empirical W₁ between equal-size clouds with the subgradients with respect
/// to every point of `a` and `b`, holding the optimal coupling fixed.
pub fn w1_with_grad(
    a: &PointCloud,
    b: &PointCloud,
    est: W1Estimator,
    seed: u64,
) -> Result<(W1Estimate, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::Method("gradient W1 needs equal-size clouds of equal dimension".into()));
    }
    let (m, d) = (a.len(), a.dim());
    let (mut ga, mut gb) = (vec![0.0; m * d], vec![0.0; m * d]);
    let inv = 1.0 / m as f64;
    let est = est.resolve(d, m);
    let mut total = 0.0;
    let mut pair = |i: usize, j: usize, ga: &mut [f64], gb: &mut [f64]| {
        let (p, q) = (a.point(i), b.point(j));
        let n = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        total += n;
        if n > 0.0 {
            for c in 0..d {
                let g = (p[c] - q[c]) / n * inv;
                ga[i * d + c] += g;
                gb[j * d + c] -= g;
            }
        }
    };
    let (method, stderr, projections) = match est {
        W1Estimator::Sorted1d => {
            if d != 1 {
                return Err(Error::Method(format!("sorted W1 needs d = 1, got {d}")));
            }
            let (ia, ib) = (argsort(a.data()), argsort(b.data()));
            ia.iter().zip(&ib).for_each(|(&i, &j)| pair(i, j, &mut ga, &mut gb));
            (W1Method::Sorted1d, None, None)
        }
        W1Estimator::Assignment => {
            let mt = optimal_matching(a, b, DEFAULT_ASSIGNMENT_CAP)?;
            mt.iter().enumerate().for_each(|(i, &j)| pair(i, j, &mut ga, &mut gb));
            (W1Method::Assignment, None, None)
        }
        W1Estimator::Sliced { projections } => {
            if projections == 0 {
                return Err(Error::arg("need at least one projection"));
            }
            let scale = inv / projections as f64;
            let mut vals = Vec::with_capacity(projections);
            for p in 0..projections {
                let u = sliced_direction(d, seed, p);
                let (pa, pb) = (project(a, &u), project(b, &u));
                let (ia, ib) = (argsort(&pa), argsort(&pb));
                let mut v = 0.0;
                for (&i, &j) in ia.iter().zip(&ib) {
                    let diff = pa[i] - pb[j];
                    v += diff.abs();
                    let s = diff.signum() * scale;
                    if diff != 0.0 {
                        for c in 0..d {
                            ga[i * d + c] += s * u[c];
                            gb[j * d + c] -= s * u[c];
                        }
                    }
                }
                vals.push(v * inv);
            }
            let k = projections as f64;
            let mean = vals.iter().sum::<f64>() / k;
            let var =
                if projections > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            total = mean * m as f64;
            (W1Method::Sliced, Some((var / k).sqrt()), Some(projections))
        }
        W1Estimator::Auto => unreachable!("resolved above"),
    };
    let est = W1Estimate { value: total * inv, method, stderr, projections, n_a: m, n_b: m };
    Ok((est, ga, gb))
}

fn method_of(est: W1Estimator, dim: usize, m: usize) -> W1Method {
    match est.resolve(dim, m) {
        W1Estimator::Sorted1d => W1Method::Sorted1d,
        W1Estimator::Assignment => W1Method::Assignment,
        _ => W1Method::Sliced,
    }
}

/// The clouds `(A_k, B_k)` for interval `k`.
pub fn interval_batch<S: ScoreField>(
    ds: &Dataset,
    flow: &FlowStep<S>,
    k: usize,
    m_batch: usize,
    seed: u64,
    sampling: Sampling,
) -> Result<(PointCloud, PointCloud)> {
    let s = flow.score().schedule();
    let tau = flow.grid().tau(k);
    let a = ds.sample_marginal(s, tau, m_batch, rng::derive_seed(seed, 2 * k as u64))?;
    let b = match sampling {
        Sampling::Coupled => push_cloud(|x| flow.g_multi(x, k), &a)?,
        Sampling::Independent => {
            let a2 = ds.sample_marginal(s, tau, m_batch, rng::derive_seed(seed, 2 * k as u64 + 1))?;
            push_cloud(|x| flow.g_multi(x, k), &a2)?
        }
    };
    Ok((a, b))
}

/// Σ_k W₁(f(A_k, τ_k), f(B_k, τ_{k−1})) with `B_k` produced by `G₍M₎` under `score`.
pub fn loss_cd<S: ScoreField>(
    f: &dyn ConsistencyFunction,
    ds: &Dataset,
    grid: &TimeGrid,
    score: S,
    m_batch: usize,
    seed: u64,
    opts: LossOptions,
) -> Result<ConsistencyLossValue> {
    if m_batch < 2 {
        return Err(Error::arg("m_batch must be at least 2"));
    }
    let flow = FlowStep::new(score, grid.clone())?;
    let mut per = Vec::with_capacity(grid.n_coarse());
    for k in 1..=grid.n_coarse() {
        let (a, b) = interval_batch(ds, &flow, k, m_batch, seed, opts.sampling)?;
        let fa = push_cloud(|x| f.eval(x, grid.tau(k)), &a)?;
        let fb = push_cloud(|x| f.eval(x, grid.tau(k - 1)), &b)?;
        let (w, _, _) = w1_with_grad(&fa, &fb, opts.estimator, rng::derive_seed(seed, 1 << 32 | k as u64))?;
        per.push(w.value);
    }
    Ok(ConsistencyLossValue {
        total: per.iter().sum(),
        per_interval: per,
        method: method_of(opts.estimator, ds.dim(), m_batch),
    })
}

/// The isolation loss: [`loss_cd`] with the exact empirical score of `ds`.
pub fn loss_ct(
    f: &dyn ConsistencyFunction,
    ds: &Dataset,
    grid: &TimeGrid,
    schedule: &Schedule,
    m_batch: usize,
    seed: u64,
    opts: LossOptions,
) -> Result<ConsistencyLossValue> {
    loss_cd(f, ds, grid, EmpiricalScore::new(ds.clone(), schedule.clone()), m_batch, seed, opts)
}

/// `2·exp(C d β̄ T)`, `C = 10(1 + L)`, with `L` the largest score bound on the
/// grid. `None` when no bound is known or the value overflows.
pub fn default_lipschitz_budget<S: ScoreField>(flow: &FlowStep<S>) -> Option<f64> {
    let l = grid_score_lipschitz(flow)?;
    let s = flow.score().schedule();
    let r = 2.0 * solver_lipschitz_ceiling(flow.dim(), s.beta_max(), s.t_max(), l);
    r.is_finite().then_some(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub m_batch: usize,
    pub estimator: W1Estimator,
    /// Size of a precomputed pool of coupled pairs per interval that
    /// minibatches are drawn from; fresh pairs every step when `None`.
    pub pool: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, learning_rate: 3e-3, m_batch: 128, estimator: W1Estimator::Auto, pool: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub total: Vec<f64>,
    pub per_interval: Vec<Vec<f64>>,
}

impl LossTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let k = self.per_interval.first().map_or(0, Vec::len);
        let cols: Vec<String> = (1..=k).map(|i| format!("interval_{i}")).collect();
        writeln!(f, "step,total{}{}", if k > 0 { "," } else { "" }, cols.join(","))?;
        for (s, (t, p)) in self.total.iter().zip(&self.per_interval).enumerate() {
            let ps: Vec<String> = p.iter().map(|v| format!("{v:e}")).collect();
            writeln!(f, "{s},{t:e}{}{}", if k > 0 { "," } else { "" }, ps.join(","))?;
        }
        Ok(())
    }

    /// Means of the first and last tenth of the trace.
    pub fn smoothed_ends(&self) -> Option<(f64, f64)> {
        let n = self.total.len();
        if n == 0 {
            return None;
        }
        let w = (n / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&self.total[..w]), mean(&self.total[n - w..])))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: LossTrace,
    /// Smoothed final loss ≤ smoothed initial loss.
    pub improved: bool,
}

/// Minimizes the CD loss under `score` (use the empirical score for CT) over
/// `Lip(R)`, by Adam on the W₁ subgradient with the coupling frozen per step.
pub fn train_consistency<S: ScoreField>(
    net: &mut ConsistencyNet,
    ds: &Dataset,
    grid: &TimeGrid,
    score: S,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if cfg.m_batch < 2 {
        return Err(Error::arg("m_batch must be at least 2"));
    }
    if net.schedule().t_max() != grid.t_max() || net.schedule().eps() != grid.eps() {
        return Err(Error::arg("network schedule does not match the grid"));
    }
    let flow = FlowStep::new(score, grid.clone())?;
    let n_int = grid.n_coarse();
    let d = ds.dim();
    let pool: Option<Vec<(PointCloud, PointCloud)>> = match cfg.pool {
        Some(p) => Some(
            (1..=n_int)
                .map(|k| interval_batch(ds, &flow, k, p.max(cfg.m_batch), rng::derive_seed(seed, 0), Sampling::Coupled))
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let mut opt = Adam::new(net.net.params().len(), cfg.learning_rate);
    let mut grads = vec![0.0; net.net.params().len()];
    let mut trace = LossTrace { total: Vec::with_capacity(cfg.steps), per_interval: Vec::with_capacity(cfg.steps) };
    let mut pick = rng::rng(rng::derive_seed(seed, 1));
    for step in 0..cfg.steps {
        grads.fill(0.0);
        let step_seed = rng::derive_path(seed, &[2, step as u64]);
        let mut per = Vec::with_capacity(n_int);
        for k in 1..=n_int {
            let (a, b) = match &pool {
                Some(p) => {
                    let (pa, pb) = &p[k - 1];
                    let idx: Vec<usize> = (0..cfg.m_batch).map(|_| pick.random_range(0..pa.len())).collect();
                    let ga: Vec<f64> = idx.iter().flat_map(|&i| pa.point(i).to_vec()).collect();
                    let gb: Vec<f64> = idx.iter().flat_map(|&i| pb.point(i).to_vec()).collect();
                    (PointCloud::new(d, ga)?, PointCloud::new(d, gb)?)
                }
                None => interval_batch(ds, &flow, k, cfg.m_batch, step_seed, Sampling::Coupled)?,
            };
            let (t_hi, t_lo) = (grid.tau(k), grid.tau(k - 1));
            let (fa, ta): (Vec<Vec<f64>>, Vec<Option<Trace>>) = a.points().map(|x| net.eval_trace(x, t_hi)).unzip();
            let (fb, tb): (Vec<Vec<f64>>, Vec<Option<Trace>>) = b.points().map(|x| net.eval_trace(x, t_lo)).unzip();
            let fa = PointCloud::new(d, fa.concat())?;
            let fb = PointCloud::new(d, fb.concat())?;
            let (w, ga, gb) = w1_with_grad(&fa, &fb, cfg.estimator, rng::derive_seed(step_seed, 1 << 32 | k as u64))?;
            per.push(w.value);
            for (traces, g, t) in [(&ta, &ga, t_hi), (&tb, &gb, t_lo)] {
                let c = net.skip_weight(t);
                for (i, tr) in traces.iter().enumerate() {
                    if let Some(tr) = tr {
                        let go: Vec<f64> = g[i * d..(i + 1) * d].iter().map(|v| c * v).collect();
                        net.net.backward(tr, &go, &mut grads);
                    }
                }
            }
        }
        let total: f64 = per.iter().sum();
        if !total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss: total });
        }
        trace.total.push(total);
        trace.per_interval.push(per);
        opt.update(net.net.params_mut(), &grads);
        net.project();
    }
    let improved = trace.smoothed_ends().is_none_or(|(a, b)| b <= a);
    Ok(TrainOutcome { trace, improved })
}
