//! Synthetic targets, datasets and forward-process sampling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};
use crate::rng::{self, LabRng};
use crate::schedule::Schedule;

/// A finite uniform-weight sample set in ℝ^d, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("point dimension must be positive"));
        }
        if data.is_empty() || data.len().rem_euclid(dim) != 0 {
            return Err(Error::arg(format!(
                "cloud needs a positive multiple of dim = {dim} coordinates, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite coordinate at flat index {i}")));
        }
        Ok(PointCloud { dim, data })
    }

    pub fn from_1d(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("ragged rows"));
        }
        Self::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_norm(&self) -> f64 {
        self.points().map(norm).fold(0.0, f64::max)
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for p in self.points() {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut acc = vec![0.0; self.dim];
        for p in self.points() {
            for ((a, v), mu) in acc.iter_mut().zip(p).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        }
        let n = self.len() as f64;
        acc.iter_mut().for_each(|a| *a /= (n - 1.0).max(1.0));
        acc
    }

    /// `m` points drawn uniformly with replacement.
    pub fn resample(&self, m: usize, seed: u64) -> Result<PointCloud> {
        if m == 0 {
            return Err(Error::arg("resample size must be positive"));
        }
        let mut r = rng::rng(seed);
        let n = self.len();
        let mut data = Vec::with_capacity(m * self.dim);
        for _ in 0..m {
            data.extend_from_slice(self.point(r.random_range(0..n)));
        }
        Ok(PointCloud { dim: self.dim, data })
    }

    /// Applies `f` coordinatewise-by-point.
    pub fn map(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<PointCloud> {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.points() {
            data.extend(f(p));
        }
        PointCloud::new(self.dim, data)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Closed-form synthetic target distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetDistribution {
    /// Σ_i w_i 𝒩(μ_i, s_i² I).
    GaussianMixture { means: Vec<Vec<f64>>, weights: Vec<f64>, stds: Vec<f64> },
    /// Uniform on the closed ball of `radius` centred at 0.
    UniformBall { dim: usize, radius: f64 },
    /// `weight_a` δ_a + (1 - weight_a) δ_b.
    TwoPoint { a: Vec<f64>, b: Vec<f64>, weight_a: f64 },
}

impl TargetDistribution {
    pub fn two_point_symmetric(r: f64) -> Self {
        TargetDistribution::TwoPoint { a: vec![-r], b: vec![r], weight_a: 0.5 }
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        TargetDistribution::GaussianMixture { means: vec![vec![0.0; dim]], weights: vec![1.0], stds: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetDistribution::GaussianMixture { means, weights, stds } => {
                if means.is_empty() || means.len() != weights.len() || means.len() != stds.len() {
                    return Err(Error::arg("mixture needs matching non-empty means/weights/stds"));
                }
                let d = means[0].len();
                if d == 0 || means.iter().any(|m| m.len() != d) {
                    return Err(Error::arg("mixture means must share a positive dimension"));
                }
                if weights.iter().any(|w| !(*w > 0.0)) || stds.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::arg("mixture weights and stds must be positive"));
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::arg("mixture weights must sum to 1"));
                }
            }
            TargetDistribution::UniformBall { dim, radius } => {
                if *dim == 0 || !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::arg("uniform ball needs dim >= 1 and a positive radius"));
                }
            }
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                if a.is_empty() || a.len() != b.len() {
                    return Err(Error::arg("two-point atoms must share a positive dimension"));
                }
                if !(*weight_a > 0.0 && *weight_a < 1.0) {
                    return Err(Error::arg("two-point weight must lie in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetDistribution::GaussianMixture { means, .. } => means[0].len(),
            TargetDistribution::UniformBall { dim, .. } => *dim,
            TargetDistribution::TwoPoint { a, .. } => a.len(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        match self {
            TargetDistribution::GaussianMixture { means, weights, .. } => {
                let mut acc = vec![0.0; d];
                for (m, w) in means.iter().zip(weights) {
                    acc.iter_mut().zip(m).for_each(|(a, v)| *a += w * v);
                }
                acc
            }
            TargetDistribution::UniformBall { .. } => vec![0.0; d],
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                a.iter().zip(b).map(|(x, y)| weight_a * x + (1.0 - weight_a) * y).collect()
            }
        }
    }

    /// Exact 𝓜₂² = E‖X‖².
    pub fn second_moment(&self) -> f64 {
        let d = self.dim() as f64;
        match self {
            TargetDistribution::GaussianMixture { means, weights, stds } => means
                .iter()
                .zip(weights)
                .zip(stds)
                .map(|((m, w), s)| w * (m.iter().map(|v| v * v).sum::<f64>() + d * s * s))
                .sum(),
            TargetDistribution::UniformBall { radius, .. } => d * radius * radius / (d + 2.0),
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                let na: f64 = a.iter().map(|v| v * v).sum();
                let nb: f64 = b.iter().map(|v| v * v).sum();
                weight_a * na + (1.0 - weight_a) * nb
            }
        }
    }

    /// Radius of a bounded support, if the target has one.
    pub fn support_radius(&self) -> Option<f64> {
        match self {
            TargetDistribution::GaussianMixture { .. } => None,
            TargetDistribution::UniformBall { radius, .. } => Some(*radius),
            TargetDistribution::TwoPoint { a, b, .. } => Some(norm(a).max(norm(b))),
        }
    }

    /// Gaussian-tail constants (α₁, α₂) with ℙ[‖X‖ ≥ r] ≤ ℙ[‖Z‖ ≥ (r-α₁)/α₂].
    /// For a mixture: (max component-mean norm, max component std).
    pub fn gaussian_tail_constants(&self) -> (f64, f64) {
        match self {
            TargetDistribution::GaussianMixture { means, stds, .. } => {
                (means.iter().map(|m| norm(m)).fold(0.0, f64::max), stds.iter().copied().fold(0.0, f64::max))
            }
            _ => (self.support_radius().unwrap_or(0.0), 1.0),
        }
    }

    /// The tail envelope ℙ[‖Z‖ ≥ (r-α₁)/α₂] for Z ~ 𝒩(0, I_d).
    pub fn gaussian_tail_envelope(&self, r: f64) -> f64 {
        let (a1, a2) = self.gaussian_tail_constants();
        if r <= a1 {
            return 1.0;
        }
        let rho = (r - a1) / a2;
        chi_tail(self.dim(), rho)
    }

    /// Exact quantile function for one-dimensional targets.
    pub fn quantile(&self, u: f64) -> Option<f64> {
        if self.dim() != 1 || !(0.0..=1.0).contains(&u) {
            return None;
        }
        match self {
            TargetDistribution::UniformBall { radius, .. } => Some(-radius + 2.0 * radius * u),
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                let (lo, hi, w_lo) = if a[0] <= b[0] { (a[0], b[0], *weight_a) } else { (b[0], a[0], 1.0 - weight_a) };
                Some(if u < w_lo { lo } else { hi })
            }
            TargetDistribution::GaussianMixture { means, weights, stds } => {
                let comps: Vec<(f64, f64, f64)> =
                    means.iter().zip(weights).zip(stds).map(|((m, w), s)| (m[0], *w, *s)).collect();
                let cdf = |x: f64| -> f64 { comps.iter().map(|(m, w, s)| w * std_normal_cdf((x - m) / s)).sum() };
                let smax = comps.iter().map(|c| c.2).fold(0.0, f64::max);
                let mut lo = comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - 40.0 * smax;
                let mut hi = comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + 40.0 * smax;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Some(0.5 * (lo + hi))
            }
        }
    }

    pub fn has_quantile(&self) -> bool {
        self.dim() == 1
    }

    fn draw_into(&self, r: &mut LabRng, out: &mut Vec<f64>) {
        match self {
            TargetDistribution::GaussianMixture { means, weights, stds } => {
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut idx = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                for &mu in &means[idx] {
                    out.push(mu + stds[idx] * rng::normal(r));
                }
            }
            TargetDistribution::UniformBall { dim, radius } => {
                if *dim == 1 {
                    out.push(-radius + 2.0 * radius * r.random::<f64>());
                } else {
                    let mut z = vec![0.0; *dim];
                    let mut nz = 0.0;
                    while nz == 0.0 {
                        rng::fill_normal(r, &mut z);
                        nz = norm(&z);
                    }
                    let rad = radius * r.random::<f64>().powf(1.0 / *dim as f64);
                    out.extend(z.iter().map(|v| v / nz * rad));
                }
            }
            TargetDistribution::TwoPoint { a, b, weight_a } => {
                let u: f64 = r.random();
                out.extend_from_slice(if u < *weight_a { a } else { b });
            }
        }
    }

    /// `m` i.i.d. samples, deterministic in `(self, m, seed)`.
    pub fn sample(&self, m: usize, seed: u64) -> Result<PointCloud> {
        self.validate()?;
        if m == 0 {
            return Err(Error::arg("sample size must be positive"));
        }
        let mut r = rng::rng(seed);
        let mut data = Vec::with_capacity(m * self.dim());
        for _ in 0..m {
            self.draw_into(&mut r, &mut data);
        }
        PointCloud::new(self.dim(), data)
    }
}

pub(crate) fn std_normal_cdf(x: f64) -> f64 {
    // statrs Normal(0,1) cannot fail to construct
    Normal::new(0.0, 1.0).map(|n| n.cdf(x)).unwrap_or(f64::NAN)
}

/// ℙ[‖Z‖ ≥ ρ] for Z ~ 𝒩(0, I_d).
pub fn chi_tail(dim: usize, rho: f64) -> f64 {
    if rho <= 0.0 {
        return 1.0;
    }
    gamma_ur(dim as f64 / 2.0, rho * rho / 2.0)
}

/// A dataset of n i.i.d. draws from a target, with provenance.
#[derive(Clone, Debug)]
pub struct Dataset {
    points: PointCloud,
    seed: u64,
    source: TargetDistribution,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    seed: u64,
    n: usize,
    dim: usize,
    radius: f64,
    source: TargetDistribution,
}

impl Dataset {
    pub fn sample(source: &TargetDistribution, n: usize, seed: u64) -> Result<Self> {
        let points = source.sample(n, seed)?;
        Ok(Self::from_cloud(points, source.clone(), seed))
    }

    /// Wrap an explicit cloud, e.g. a hand-built fixture.
    pub fn from_cloud(points: PointCloud, source: TargetDistribution, seed: u64) -> Self {
        let radius = points.max_norm();
        Dataset { points, seed, source, radius }
    }

    pub fn points(&self) -> &PointCloud {
        &self.points
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.points.dim()
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn source(&self) -> &TargetDistribution {
        &self.source
    }
    /// R₀ = max row norm.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Draw `m` points from 𝒳_t = m(t) p̂ ⋆ 𝒩(0, σ(t)²).
    pub fn sample_marginal(&self, s: &Schedule, t: f64, m: usize, seed: u64) -> Result<PointCloud> {
        let base = self.points.resample(m, rng::derive_seed(seed, 0))?;
        forward_marginal(&base, s, t, rng::derive_seed(seed, 1))
    }

    /// Writes `path` (one CSV row per point) and a JSON sidecar next to it.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        let header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(f, "{}", header.join(","))?;
        for p in self.points.points() {
            let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        let side = DatasetSidecar {
            seed: self.seed,
            n: self.len(),
            dim: self.dim(),
            radius: self.radius,
            source: self.source.clone(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let side: DatasetSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let text = fs::read_to_string(path)?;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            for cell in line.split(',') {
                data.push(
                    cell.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
                );
            }
        }
        let points = PointCloud::new(side.dim, data)?;
        if points.len() != side.n {
            return Err(Error::Config(format!("sidecar says n = {}, CSV has {}", side.n, points.len())));
        }
        Ok(Dataset::from_cloud(points, side.source, side.seed))
    }
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// One noisy copy per input point: `m(t)·x + σ(t)·z`, z ~ 𝒩(0, I).
pub fn forward_marginal(cloud: &PointCloud, s: &Schedule, t: f64, seed: u64) -> Result<PointCloud> {
    let (m, sd) = s.coeffs(t)?;
    let mut r = rng::rng(seed);
    let data = cloud.data().iter().map(|x| m * x + sd * rng::normal(&mut r)).collect();
    PointCloud::new(cloud.dim(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture() -> TargetDistribution {
        TargetDistribution::GaussianMixture {
            means: vec![vec![-2.0], vec![1.0]],
            weights: vec![0.3, 0.7],
            stds: vec![0.5, 1.0],
        }
    }

    #[test]
    fn two_point_support() {
        let c = TargetDistribution::two_point_symmetric(1.0).sample(4, 3).unwrap();
        assert!(c.data().iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn uniform_ball_support() {
        for d in [1, 3] {
            let td = TargetDistribution::UniformBall { dim: d, radius: 2.0 };
            let c = td.sample(1000, 5).unwrap();
            assert!(c.max_norm() <= 2.0);
        }
    }

    #[test]
    fn mixture_sample_mean_within_band() {
        let td = mixture();
        let m = 100_000;
        let c = td.sample(m, 17).unwrap();
        // exact mixture mean and variance
        let mean = 0.3 * -2.0 + 0.7 * 1.0;
        let var = 0.3 * (0.25 + 4.0) + 0.7 * (1.0 + 1.0) - mean * mean;
        assert!((td.mean()[0] - mean).abs() < 1e-12);
        assert!((c.mean()[0] - mean).abs() < 3.0 * (var / m as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let td = mixture();
        assert_eq!(td.sample(50, 9).unwrap(), td.sample(50, 9).unwrap());
        assert_ne!(td.sample(50, 9).unwrap(), td.sample(50, 10).unwrap());
    }

    #[test]
    fn second_moments() {
        assert_eq!(TargetDistribution::two_point_symmetric(1.0).second_moment(), 1.0);
        let ball = TargetDistribution::UniformBall { dim: 1, radius: 3.0 };
        assert!((ball.second_moment() - 3.0).abs() < 1e-12);
        // Monte Carlo cross-check of R²/3
        let c = ball.sample(200_000, 1).unwrap();
        let mc: f64 = c.data().iter().map(|v| v * v).sum::<f64>() / c.len() as f64;
        assert!((mc - 3.0).abs() < 0.03);
        assert_eq!(TargetDistribution::standard_gaussian(2).second_moment(), 2.0);
    }

    #[test]
    fn quantiles() {
        let ball = TargetDistribution::UniformBall { dim: 1, radius: 1.0 };
        assert_eq!(ball.quantile(0.5), Some(0.0));
        let tp = TargetDistribution::TwoPoint { a: vec![2.0], b: vec![0.0], weight_a: 0.25 };
        assert_eq!(tp.quantile(0.1), Some(0.0));
        assert_eq!(tp.quantile(0.8), Some(2.0));
        let q = mixture().quantile(0.4).unwrap();
        let cdf = 0.3 * std_normal_cdf((q + 2.0) / 0.5) + 0.7 * std_normal_cdf(q - 1.0);
        assert!((cdf - 0.4).abs() < 1e-12);
        assert_eq!(TargetDistribution::UniformBall { dim: 2, radius: 1.0 }.quantile(0.5), None);
    }

    #[test]
    fn invalid_targets() {
        let bad = TargetDistribution::GaussianMixture { means: vec![vec![0.0]], weights: vec![0.5], stds: vec![1.0] };
        assert!(bad.sample(3, 0).is_err());
        let bad = TargetDistribution::TwoPoint { a: vec![0.0], b: vec![1.0], weight_a: 1.0 };
        assert!(bad.validate().is_err());
        assert!(TargetDistribution::two_point_symmetric(1.0).sample(0, 0).is_err());
    }

    #[test]
    fn forward_marginal_examples() {
        let s = Schedule::constant(1.0, 4.0, 0.01).unwrap();
        let c = TargetDistribution::two_point_symmetric(1.0).sample(100, 2).unwrap();
        assert_eq!(forward_marginal(&c, &s, 0.0, 3).unwrap(), c);

        let zeros = PointCloud::from_1d(vec![0.0; 100_000]).unwrap();
        let t = 0.7;
        let sd = s.std_coeff(t).unwrap();
        let out = forward_marginal(&zeros, &s, t, 4).unwrap();
        assert!((out.variance()[0] / (sd * sd) - 1.0).abs() < 0.05);

        // m(t) = 0.5 at t = 2 ln 2 for β = 1
        let t = 2.0 * 2f64.ln();
        let pm = PointCloud::from_1d((0..100_000).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect()).unwrap();
        let out = forward_marginal(&pm, &s, t, 5).unwrap();
        let (mut pos, mut np, mut neg, mut nn) = (0.0, 0.0, 0.0, 0.0);
        for (x, y) in pm.data().iter().zip(out.data()) {
            if *x > 0.0 {
                pos += y;
                np += 1.0;
            } else {
                neg += y;
                nn += 1.0;
            }
        }
        assert!((pos / np - 0.5).abs() < 0.01 && (neg / nn + 0.5).abs() < 0.01);
    }

    #[test]
    fn forward_variance_ordered_in_time() {
        let s = Schedule::constant(1.0, 4.0, 0.01).unwrap();
        let base = TargetDistribution::standard_gaussian(1).sample(100_000, 8).unwrap();
        let zeros = PointCloud::from_1d(vec![0.0; base.len()]).unwrap();
        let (t1, t2) = (0.2, 0.5);
        let v1 = forward_marginal(&zeros, &s, t1, 1).unwrap().variance()[0];
        let v2 = forward_marginal(&zeros, &s, t2, 2).unwrap().variance()[0];
        let (s1, s2) = (s.std_coeff(t1).unwrap().powi(2), s.std_coeff(t2).unwrap().powi(2));
        let band = |v: f64| 3.0 * v * (2.0 / base.len() as f64).sqrt();
        assert!(v1 + band(s1) < v2 - band(s2) || v1 < v2);
        assert!((v1 - s1).abs() < band(s1) && (v2 - s2).abs() < band(s2));
    }

    #[test]
    fn gaussian_tail_probe() {
        let td = TargetDistribution::GaussianMixture {
            means: vec![vec![-1.0, 0.5], vec![1.5, 0.0]],
            weights: vec![0.5, 0.5],
            stds: vec![0.7, 0.4],
        };
        let c = td.sample(100_000, 21).unwrap();
        let (a1, _) = td.gaussian_tail_constants();
        for r in [a1 + 0.5, a1 + 1.0, a1 + 2.0, a1 + 3.0] {
            let exceed = c.points().filter(|p| norm(p) >= r).count() as f64 / c.len() as f64;
            assert!(exceed <= td.gaussian_tail_envelope(r) + 3.0 * (0.25 / c.len() as f64).sqrt());
        }
        // chi tail sanity: ℙ[|Z| ≥ 1.96] ≈ 0.05 in d = 1
        assert!((chi_tail(1, 1.959_963_984_540_054) - 0.05).abs() < 1e-10);
    }

    #[test]
    fn dataset_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = Dataset::sample(&mixture(), 37, 12).unwrap();
        ds.save_csv(&path).unwrap();
        let back = Dataset::load_csv(&path).unwrap();
        assert_eq!(back.points(), ds.points());
        assert_eq!(back.seed(), 12);
        assert_eq!(back.source(), ds.source());
        assert_eq!(back.radius(), ds.radius());
    }
}
