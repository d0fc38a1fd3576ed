//! Score fields `(x, t) ↦ ≈∇log p_t(x)`.
//!
//! * [`EmpiricalScore`]: the exact score of 𝒳_t = m(t) p̂ ⋆ 𝒩(0, σ(t)²), a
//!   Gaussian mixture centred at the scaled data points `m(t) xʲ`.
//! * [`PluginScore`]: a small network trained by denoising score matching.
//! * [`AnalyticScore`]: the exact score of the population marginal X_t for
//!   closed-form targets.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};
use crate::rng;
use crate::schedule::Schedule;
use crate::targets::{norm, std_normal_cdf, Dataset, PointCloud, TargetDistribution};

pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn schedule(&self) -> &Schedule;
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// A rigorous bound on the spatial Lipschitz constant at time `t`, if known.
    fn lipschitz_bound(&self, _t: f64) -> Option<f64> {
        None
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.score_into(x, t, &mut out)?;
        Ok(out)
    }
}

impl<S: ScoreField + ?Sized> ScoreField for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn schedule(&self) -> &Schedule {
        (**self).schedule()
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).score_into(x, t, out)
    }
    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        (**self).lipschitz_bound(t)
    }
}

fn positive_time(s: &Schedule, t: f64) -> Result<(f64, f64)> {
    let (m, sd) = s.coeffs(t)?;
    if t <= 0.0 || sd == 0.0 {
        return Err(Error::SingularTime { t });
    }
    Ok((m, sd))
}

/// Posterior weights pʲ ∝ exp(-‖m xʲ - x‖² / 2σ²) via max-subtracted softmax.
fn posterior_weights(points: &PointCloud, m: f64, sd: f64, x: &[f64], w: &mut Vec<f64>) {
    let inv = 1.0 / (2.0 * sd * sd);
    w.clear();
    let mut max = f64::NEG_INFINITY;
    for p in points.points() {
        let d2: f64 = p.iter().zip(x).map(|(a, b)| (m * a - b) * (m * a - b)).sum();
        let l = -d2 * inv;
        max = max.max(l);
        w.push(l);
    }
    let mut total = 0.0;
    for l in w.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    w.iter_mut().for_each(|v| *v /= total);
}

/// E[x₀ | x_t = x] under x₀ ~ p̂.
pub fn posterior_mean(ds: &Dataset, s: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let (m, sd) = positive_time(s, t)?;
    let mut w = Vec::with_capacity(ds.len());
    posterior_weights(ds.points(), m, sd, x, &mut w);
    let mut pm = vec![0.0; ds.dim()];
    for (p, wj) in ds.points().points().zip(&w) {
        pm.iter_mut().zip(p).for_each(|(a, v)| *a += wj * v);
    }
    Ok(pm)
}

/// ∇log p̂_t(x) = (m(t)·E[x₀ | x] - x) / σ(t)².
pub fn empirical_score(ds: &Dataset, s: &Schedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let (m, sd) = positive_time(s, t)?;
    let pm = posterior_mean(ds, s, x, t)?;
    Ok(pm.iter().zip(x).map(|(p, xi)| (m * p - xi) / (sd * sd)).collect())
}

/// Jacobian of the empirical score: −I/σ² + Cov_p(m xʲ)/σ⁴, with the
/// covariance of the scaled centres under the posterior weights.
pub fn mixture_score_jacobian(ds: &Dataset, s: &Schedule, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let (m, sd) = positive_time(s, t)?;
    let d = ds.dim();
    let mut w = Vec::with_capacity(ds.len());
    posterior_weights(ds.points(), m, sd, x, &mut w);
    let mut mu = vec![0.0; d];
    for (p, wj) in ds.points().points().zip(&w) {
        mu.iter_mut().zip(p).for_each(|(a, v)| *a += wj * m * v);
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut c = vec![0.0; d];
    for (p, wj) in ds.points().points().zip(&w) {
        c.iter_mut().zip(p.iter().zip(&mu)).for_each(|(ci, (v, u))| *ci = m * v - u);
        for i in 0..d {
            for k in i..d {
                cov[(i, k)] += wj * c[i] * c[k];
            }
        }
    }
    let (s2, s4) = (sd * sd, sd * sd * sd * sd);
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for k in i..d {
            let v = cov[(i, k)] / s4 - if i == k { 1.0 / s2 } else { 0.0 };
            jac[(i, k)] = v;
            jac[(k, i)] = v;
        }
    }
    Ok(jac)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    AnalyticMixture,
    Probed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    /// Analytic bound max(R²/σ⁴, 1/σ²) with R the scaled data radius.
    pub bound: f64,
    pub t: f64,
    pub method: CertificateMethod,
    /// Largest probed spectral norm, for the probed method.
    pub probed: Option<f64>,
    pub probes: usize,
    pub violations: usize,
}

impl LipschitzCertificate {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// max(r²/σ⁴, 1/σ²).
pub fn analytic_lipschitz_bound(scaled_radius: f64, sd: f64) -> f64 {
    let s2 = sd * sd;
    (scaled_radius * scaled_radius / (s2 * s2)).max(1.0 / s2)
}

pub fn lipschitz_certificate(ds: &Dataset, s: &Schedule, t: f64) -> Result<LipschitzCertificate> {
    let (m, sd) = positive_time(s, t)?;
    Ok(LipschitzCertificate {
        bound: analytic_lipschitz_bound(m * ds.radius(), sd),
        t,
        method: CertificateMethod::AnalyticMixture,
        probed: None,
        probes: 0,
        violations: 0,
    })
}

/// Analytic certificate plus the largest Jacobian spectral norm over `probes`.
pub fn probe_lipschitz(ds: &Dataset, s: &Schedule, t: f64, probes: &PointCloud) -> Result<LipschitzCertificate> {
    let mut cert = lipschitz_certificate(ds, s, t)?;
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for p in probes.points() {
        let jac = mixture_score_jacobian(ds, s, p, t)?;
        let eig = jac.symmetric_eigen().eigenvalues;
        let spectral = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if spectral > cert.bound * (1.0 + 1e-12) {
            violations += 1;
        }
        worst = worst.max(spectral);
    }
    cert.method = CertificateMethod::Probed;
    cert.probed = Some(worst);
    cert.probes = probes.len();
    cert.violations = violations;
    Ok(cert)
}

/// The exact empirical mixture score as a [`ScoreField`].
#[derive(Clone, Debug)]
pub struct EmpiricalScore {
    data: Dataset,
    schedule: Schedule,
}

impl EmpiricalScore {
    pub fn new(data: Dataset, schedule: Schedule) -> Self {
        EmpiricalScore { data, schedule }
    }
    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl ScoreField for EmpiricalScore {
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (m, sd) = positive_time(&self.schedule, t)?;
        let mut w = Vec::with_capacity(self.data.len());
        posterior_weights(self.data.points(), m, sd, x, &mut w);
        out.fill(0.0);
        for (p, wj) in self.data.points().points().zip(&w) {
            out.iter_mut().zip(p).for_each(|(a, v)| *a += wj * v);
        }
        let s2 = sd * sd;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = (m * *o - xi) / s2);
        Ok(())
    }
    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        lipschitz_certificate(&self.data, &self.schedule, t).ok().map(|c| c.bound)
    }
}

/// The identically-zero field (drift-only flow).
#[derive(Clone, Debug)]
pub struct ZeroScore {
    pub dim: usize,
    pub schedule: Schedule,
}

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn score_into(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
    fn lipschitz_bound(&self, _t: f64) -> Option<f64> {
        Some(0.0)
    }
}

/// `inner + offset`, for negative controls.
#[derive(Clone, Debug)]
pub struct ShiftedScore<S> {
    pub inner: S,
    pub offset: Vec<f64>,
}

impl<S: ScoreField> ScoreField for ShiftedScore<S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn schedule(&self) -> &Schedule {
        self.inner.schedule()
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.inner.score_into(x, t, out)?;
        out.iter_mut().zip(&self.offset).for_each(|(o, c)| *o += c);
        Ok(())
    }
}

/// Exact score of X_t = m(t) p_data ⋆ 𝒩(0, σ(t)²) for closed-form targets.
/// Uniform balls are supported in one dimension only.
#[derive(Clone, Debug)]
pub struct AnalyticScore {
    target: TargetDistribution,
    schedule: Schedule,
}

impl AnalyticScore {
    pub fn new(target: TargetDistribution, schedule: Schedule) -> Result<Self> {
        target.validate()?;
        if matches!(target, TargetDistribution::UniformBall { dim, .. } if dim != 1) {
            return Err(Error::Method("analytic uniform-ball score is only available for d = 1".into()));
        }
        Ok(AnalyticScore { target, schedule })
    }
}

fn mixture_score(comps: &[(&[f64], f64, f64)], x: &[f64], out: &mut [f64]) {
    // comps: (centre, weight, variance)
    let d = x.len() as f64;
    let logits: Vec<f64> = comps
        .iter()
        .map(|(c, w, v)| {
            let d2: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() - 0.5 * d * v.ln() - d2 / (2.0 * v)
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = ws.iter().sum();
    out.fill(0.0);
    for ((c, _, v), w) in comps.iter().zip(&ws) {
        for ((o, ci), xi) in out.iter_mut().zip(c.iter()).zip(x) {
            *o += w / total * (ci - xi) / v;
        }
    }
}

impl ScoreField for AnalyticScore {
    fn dim(&self) -> usize {
        self.target.dim()
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (m, sd) = self.schedule.coeffs(t)?;
        let s2 = sd * sd;
        match &self.target {
            TargetDistribution::GaussianMixture { means, weights, stds } => {
                let centres: Vec<Vec<f64>> = means.iter().map(|mu| mu.iter().map(|v| m * v).collect()).collect();
                let comps: Vec<(&[f64], f64, f64)> = centres
                    .iter()
                    .zip(weights)
                    .zip(stds)
                    .map(|((c, w), s)| (c.as_slice(), *w, m * m * s * s + s2))
                    .collect();
                mixture_score(&comps, x, out);
            }
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                if s2 == 0.0 {
                    return Err(Error::SingularTime { t });
                }
                let ca: Vec<f64> = a.iter().map(|v| m * v).collect();
                let cb: Vec<f64> = b.iter().map(|v| m * v).collect();
                mixture_score(&[(&ca, *weight_a, s2), (&cb, 1.0 - weight_a, s2)], x, out);
            }
            TargetDistribution::UniformBall { radius, .. } => {
                if s2 == 0.0 {
                    return Err(Error::SingularTime { t });
                }
                // density ∝ Φ((x+mR)/σ) − Φ((x−mR)/σ); use the mirror image for x < 0
                let (sign, xa) = if x[0] < 0.0 { (-1.0, -x[0]) } else { (1.0, x[0]) };
                let (u1, u2) = ((xa + m * radius) / sd, (xa - m * radius) / sd);
                let upper = |u: f64| std_normal_cdf(-u);
                let dens = upper(u2) - upper(u1);
                let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
                out[0] = if dens > 1e-300 {
                    sign * (phi(u1) - phi(u2)) / (sd * dens)
                } else {
                    // far outside the smoothed support the nearest edge dominates
                    -sign * (xa - m * radius) / s2
                };
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DsmWeighting {
    /// E‖s_φ(x_t, t) + (x_t − m x₀)/σ²‖², uniform in t.
    #[default]
    Unweighted,
    /// The same residual scaled by σ(t)² (noise-prediction form).
    Sigma2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PluginConfig {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub learning_rate: f64,
    pub batch: usize,
    /// Time-sampling range; defaults to [eps, T].
    pub t_range: Option<(f64, f64)>,
    /// Output norm cap; defaults to 2d·log n + 2d²·log(d/eps).
    pub cap: Option<f64>,
    pub weighting: DsmWeighting,
}

impl Default for PluginConfig {
    fn default() -> Self {
        PluginConfig {
            hidden: vec![32, 32],
            steps: 2000,
            learning_rate: 3e-3,
            batch: 128,
            t_range: None,
            cap: None,
            weighting: DsmWeighting::Unweighted,
        }
    }
}

pub fn default_score_cap(dim: usize, n: usize, eps: f64) -> f64 {
    let d = dim as f64;
    (2.0 * d * (n as f64).ln() + 2.0 * d * d * (d / eps).ln()).max(1.0)
}

/// `s_φ(x, t) = net(x, τ(t)) / σ(t)`, clipped to norm `cap`, with
/// τ(t) = 2(t − eps)/(T − eps) − 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginScore {
    net: Mlp,
    schedule: Schedule,
    cap: f64,
}

impl PluginScore {
    pub fn new(net: Mlp, schedule: Schedule, cap: f64) -> Result<Self> {
        if net.n_in() != net.n_out() + 1 {
            return Err(Error::arg("plugin network must map d + 1 inputs to d outputs"));
        }
        Ok(PluginScore { net, schedule, cap })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }
    pub fn cap(&self) -> f64 {
        self.cap
    }

    fn features(&self, x: &[f64], t: f64) -> Vec<f64> {
        let (eps, tm) = (self.schedule.eps(), self.schedule.t_max());
        let mut f = x.to_vec();
        f.push(2.0 * (t - eps) / (tm - eps) - 1.0);
        f
    }
}

impl ScoreField for PluginScore {
    fn dim(&self) -> usize {
        self.net.n_out()
    }
    fn schedule(&self) -> &Schedule {
        &self.schedule
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let (_, sd) = positive_time(&self.schedule, t)?;
        let y = self.net.forward(&self.features(x, t));
        out.iter_mut().zip(&y).for_each(|(o, v)| *o = v / sd);
        let n = norm(out);
        if n > self.cap {
            out.iter_mut().for_each(|o| *o *= self.cap / n);
        }
        Ok(())
    }
}

/// Denoising score matching on the dataset.
///
/// Returns the field and the per-step minibatch loss.
pub fn train_plugin_score(
    ds: &Dataset,
    s: &Schedule,
    cfg: &PluginConfig,
    seed: u64,
) -> Result<(PluginScore, Vec<f64>)> {
    let d = ds.dim();
    let mut sizes = vec![d + 1];
    sizes.extend(&cfg.hidden);
    sizes.push(d);
    let net = Mlp::new(&sizes, rng::derive_seed(seed, 0))?;
    let cap = cfg.cap.unwrap_or_else(|| default_score_cap(d, ds.len(), s.eps()));
    let mut field = PluginScore::new(net, s.clone(), cap)?;
    let (ta, tb) = cfg.t_range.unwrap_or((s.eps(), s.t_max()));
    if !(ta > 0.0 && ta < tb && tb <= s.t_max()) {
        return Err(Error::arg(format!("bad time range [{ta}, {tb}]")));
    }
    if cfg.batch == 0 {
        return Err(Error::arg("batch must be positive"));
    }
    let mut opt = Adam::new(field.net.params().len(), cfg.learning_rate);
    let mut r = rng::rng(rng::derive_seed(seed, 1));
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut grads = vec![0.0; field.net.params().len()];
    let mut z = vec![0.0; d];
    for step in 0..cfg.steps {
        grads.fill(0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let x0 = ds.points().point(r.random_range(0..ds.len()));
            let t = ta + (tb - ta) * r.random::<f64>();
            let (m, sd) = s.coeffs(t)?;
            rng::fill_normal(&mut r, &mut z);
            let xt: Vec<f64> = x0.iter().zip(&z).map(|(a, zi)| m * a + sd * zi).collect();
            let tr = field.net.forward_trace(&field.features(&xt, t));
            // residual of s + z/σ, with s = y/σ
            let w = match cfg.weighting {
                DsmWeighting::Unweighted => 1.0 / (sd * sd),
                DsmWeighting::Sigma2 => 1.0,
            };
            let gout: Vec<f64> = tr
                .output()
                .iter()
                .zip(&z)
                .map(|(y, zi)| {
                    loss += w * (y + zi) * (y + zi);
                    2.0 * w * (y + zi) / cfg.batch as f64
                })
                .collect();
            field.net.backward(&tr, &gout, &mut grads);
        }
        loss /= cfg.batch as f64;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training { step, loss });
        }
        trace.push(loss);
        opt.update(field.net.params_mut(), &grads);
    }
    Ok((field, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseEstimate {
    pub value: f64,
    pub stderr: f64,
    pub probes: usize,
}

/// Monte Carlo estimate of (1/(t_b−t_a))∫‖field − reference‖²_{L²(X_t)} dt,
/// with X_t drawn by noising points of `source`.
pub fn score_mse(
    field: &dyn ScoreField,
    reference: &dyn ScoreField,
    source: &PointCloud,
    t_a: f64,
    t_b: f64,
    m_probes: usize,
    seed: u64,
) -> Result<MseEstimate> {
    let s = reference.schedule();
    if !(s.eps() <= t_a && t_a < t_b && t_b <= s.t_max()) {
        return Err(Error::arg(format!("need eps <= t_a < t_b <= T, got [{t_a}, {t_b}]")));
    }
    if m_probes == 0 {
        return Err(Error::arg("need at least one probe"));
    }
    let d = source.dim();
    let mut r = rng::rng(seed);
    let (mut sum, mut sum2) = (0.0, 0.0);
    let (mut a, mut b, mut z) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..m_probes {
        let t = t_a + (t_b - t_a) * r.random::<f64>();
        let (m, sd) = s.coeffs(t)?;
        let x0 = source.point(r.random_range(0..source.len()));
        rng::fill_normal(&mut r, &mut z);
        let xt: Vec<f64> = x0.iter().zip(&z).map(|(v, zi)| m * v + sd * zi).collect();
        field.score_into(&xt, t, &mut a)?;
        reference.score_into(&xt, t, &mut b)?;
        let e: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum();
        sum += e;
        sum2 += e * e;
    }
    let n = m_probes as f64;
    let mean = sum / n;
    let var = if m_probes > 1 { ((sum2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(MseEstimate { value: mean, stderr: (var / n).sqrt(), probes: m_probes })
}
