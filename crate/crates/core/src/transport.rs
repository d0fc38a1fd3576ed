//! Wasserstein-1 estimators between point clouds and truncation diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::targets::{norm, PointCloud, TargetDistribution};

pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;
pub const DEFAULT_SLICED_PROJECTIONS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W1Method {
    Sorted1d,
    Assignment,
    Sliced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct W1Estimate {
    pub value: f64,
    pub method: W1Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projections: Option<usize>,
    pub n_a: usize,
    pub n_b: usize,
}

fn sorted(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut s: Vec<f64> = v.collect();
    s.sort_by(f64::total_cmp);
    s
}

/// Exact W₁ between two sorted samples given as 1-d empirical measures.
fn w1_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        return s / a.len() as f64;
    }
    // integrate |F_a⁻¹ − F_b⁻¹| over the common refinement of {i/na} and {j/nb}
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let (ea, eb) = ((i + 1) as f64 / na, (j + 1) as f64 / nb);
        let next = ea.min(eb);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if ea <= eb {
            i += 1;
        }
        if eb <= ea {
            j += 1;
        }
    }
    total
}

pub fn w1_1d(a: &PointCloud, b: &PointCloud) -> Result<W1Estimate> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::Method(format!("sorted W1 needs d = 1, got {} and {}", a.dim(), b.dim())));
    }
    let (sa, sb) = (sorted(a.data().iter().copied()), sorted(b.data().iter().copied()));
    Ok(W1Estimate {
        value: w1_sorted(&sa, &sb),
        method: W1Method::Sorted1d,
        stderr: None,
        projections: None,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Minimum-cost perfect matching on a square row-major cost matrix.
/// Returns `assign[row] = col`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // potentials formulation, 1-indexed with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Optimal matching between equal-size clouds, `matching[i] = j`.
pub fn optimal_matching(a: &PointCloud, b: &PointCloud, cap: usize) -> Result<Vec<usize>> {
    if a.dim() != b.dim() {
        return Err(Error::Method("dimension mismatch".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Method(format!("assignment needs equal sizes, got {} and {}", a.len(), b.len())));
    }
    if a.len() > cap {
        return Err(Error::Method(format!("assignment size {} exceeds cap {cap}", a.len())));
    }
    let n = a.len();
    let mut cost = Vec::with_capacity(n * n);
    for p in a.points() {
        for q in b.points() {
            cost.push(dist(p, q));
        }
    }
    Ok(hungarian(&cost, n))
}

pub fn w1_assignment(a: &PointCloud, b: &PointCloud) -> Result<W1Estimate> {
    w1_assignment_capped(a, b, DEFAULT_ASSIGNMENT_CAP)
}

pub fn w1_assignment_capped(a: &PointCloud, b: &PointCloud, cap: usize) -> Result<W1Estimate> {
    let m = optimal_matching(a, b, cap)?;
    let total: f64 = m.iter().enumerate().map(|(i, &j)| dist(a.point(i), b.point(j))).sum();
    Ok(W1Estimate {
        value: total / a.len() as f64,
        method: W1Method::Assignment,
        stderr: None,
        projections: None,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Unit direction for projection `i`.
pub fn sliced_direction(dim: usize, seed: u64, i: usize) -> Vec<f64> {
    let mut r = rng::rng(rng::derive_seed(seed, i as u64));
    let mut u = vec![0.0; dim];
    loop {
        rng::fill_normal(&mut r, &mut u);
        let n = norm(&u);
        if n > 1e-12 {
            u.iter_mut().for_each(|v| *v /= n);
            return u;
        }
    }
}

pub fn project(cloud: &PointCloud, u: &[f64]) -> Vec<f64> {
    cloud.points().map(|p| p.iter().zip(u).map(|(a, b)| a * b).sum()).collect()
}

pub fn w1_sliced(a: &PointCloud, b: &PointCloud, n_proj: usize, seed: u64) -> Result<W1Estimate> {
    if n_proj == 0 {
        return Err(Error::arg("need at least one projection"));
    }
    if a.dim() != b.dim() {
        return Err(Error::Method("dimension mismatch".into()));
    }
    let vals: Vec<f64> = (0..n_proj)
        .map(|i| {
            let u = sliced_direction(a.dim(), seed, i);
            w1_sorted(&sorted(project(a, &u).into_iter()), &sorted(project(b, &u).into_iter()))
        })
        .collect();
    let k = n_proj as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let var = if n_proj > 1 { vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    Ok(W1Estimate {
        value: mean,
        method: W1Method::Sliced,
        stderr: Some((var / k).sqrt()),
        projections: Some(n_proj),
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Sorted in d = 1, assignment for equal sizes up to the cap, sliced otherwise.
pub fn w1_auto(a: &PointCloud, b: &PointCloud, seed: u64) -> Result<W1Estimate> {
    if a.dim() == 1 {
        w1_1d(a, b)
    } else if a.len() == b.len() && a.len() <= DEFAULT_ASSIGNMENT_CAP {
        w1_assignment(a, b)
    } else {
        w1_sliced(a, b, DEFAULT_SLICED_PROJECTIONS, seed)
    }
}

/// `∫₀¹ |F_a⁻¹(u) − F⁻¹(u)| du` by the midpoint rule on `quad_points` nodes.
pub fn w1_to_target_1d(a: &PointCloud, td: &TargetDistribution, quad_points: usize) -> Result<f64> {
    if a.dim() != 1 || !td.has_quantile() {
        return Err(Error::Method("target W1 needs d = 1 and an exact quantile".into()));
    }
    if quad_points == 0 {
        return Err(Error::arg("need at least one quadrature node"));
    }
    let s = sorted(a.data().iter().copied());
    let m = s.len();
    let q = quad_points as f64;
    let mut total = 0.0;
    for i in 0..quad_points {
        let u = (i as f64 + 0.5) / q;
        let ia = ((u * m as f64) as usize).min(m - 1);
        let tq = td.quantile(u).ok_or_else(|| Error::Method("quantile unavailable".into()))?;
        total += (s[ia] - tq).abs();
    }
    Ok(total / q)
}

/// Points with ‖x‖ > R₀ replaced by the origin.
pub fn truncate_cloud(a: &PointCloud, r0: f64) -> Result<PointCloud> {
    if r0 <= 0.0 {
        return Err(Error::arg("truncation radius must be positive"));
    }
    let d = a.dim();
    a.map(|p| if norm(p) > r0 { vec![0.0; d] } else { p.to_vec() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r0: f64,
    /// Fraction of points replaced.
    pub replaced_mass: f64,
    pub w1: f64,
    /// mean of ‖x‖·1{‖x‖ > R₀}, an upper bound for `w1`.
    pub chain_bound: f64,
    /// exp(−(R₀ − α₁)²/(20α₂²)) with the target's tail constants.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailRow>,
    pub monotone: bool,
    pub chain_ok: bool,
    pub within_envelope: bool,
    /// Whether log mass is decreasing in R₀² over the rows where it is positive.
    pub log_decreasing: bool,
    pub passed: bool,
}

pub fn tail_decay_check(td: &TargetDistribution, r0_grid: &[f64], m: usize, seed: u64) -> Result<TailReport> {
    if r0_grid.is_empty() {
        return Err(Error::arg("empty radius grid"));
    }
    let a = td.sample(m, seed)?;
    let (a1, a2) = td.gaussian_tail_constants();
    let mut rows = Vec::with_capacity(r0_grid.len());
    for &r0 in r0_grid {
        let tr = truncate_cloud(&a, r0)?;
        let (mut hit, mut chain) = (0usize, 0.0);
        for p in a.points() {
            let n = norm(p);
            if n > r0 {
                hit += 1;
                chain += n;
            }
        }
        let w1 = w1_auto(&a, &tr, rng::derive_seed(seed, 1))?.value;
        let envelope = if r0 <= a1 { 1.0 } else { (-(r0 - a1).powi(2) / (20.0 * a2 * a2)).exp() };
        rows.push(TailRow { r0, replaced_mass: hit as f64 / m as f64, w1, chain_bound: chain / m as f64, envelope });
    }
    rows.sort_by(|x, y| x.r0.total_cmp(&y.r0));
    let monotone = rows.windows(2).all(|w| w[1].replaced_mass <= w[0].replaced_mass && w[1].w1 <= w[0].w1 + 1e-12);
    let chain_ok = rows.iter().all(|r| r.w1 <= r.chain_bound + 1e-12);
    // binomial slack of three standard errors
    let within_envelope = rows.iter().all(|r| {
        let se = (r.envelope * (1.0 - r.envelope) / m as f64).sqrt();
        r.replaced_mass <= r.envelope + 3.0 * se + 1.0 / m as f64
    });
    let pos: Vec<&TailRow> = rows.iter().filter(|r| r.replaced_mass > 0.0).collect();
    let log_decreasing = pos.windows(2).all(|w| w[1].replaced_mass < w[0].replaced_mass || w[1].r0 == w[0].r0);
    let passed = monotone && chain_ok && within_envelope && log_decreasing;
    Ok(TailReport { rows, monotone, chain_ok, within_envelope, log_decreasing, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn c1(v: &[f64]) -> PointCloud {
        PointCloud::from_1d(v.to_vec()).unwrap()
    }

    fn brute_force(a: &PointCloud, b: &PointCloud) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = vec![];
            for p in perms(n - 1) {
                for i in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(i, n - 1);
                    out.push(q);
                }
            }
            out
        }
        perms(a.len())
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| dist(a.point(i), b.point(j))).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / a.len() as f64
    }

    #[test]
    fn sorted_examples() {
        assert_eq!(w1_1d(&c1(&[0.0]), &c1(&[1.0])).unwrap().value, 1.0);
        assert_eq!(w1_1d(&c1(&[0.0, 2.0]), &c1(&[1.0, 3.0])).unwrap().value, 1.0);
        assert_eq!(
            w1_1d(&c1(&[0.0, 2.0]), &c1(&[1.0, 3.0])).unwrap().value,
            brute_force(&c1(&[0.0, 2.0]), &c1(&[1.0, 3.0]))
        );
        let mut v: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let a = c1(&v);
        v.shuffle(&mut rng::rng(1));
        assert_eq!(w1_1d(&a, &c1(&v)).unwrap().value, 0.0);
        assert!(matches!(w1_1d(&PointCloud::new(2, vec![0.0; 2]).unwrap(), &c1(&[0.0])), Err(Error::Method(_))));
    }

    #[test]
    fn unequal_sizes_use_quantile_refinement() {
        // {0} vs {0, 1}: half the mass moves by 1
        assert_eq!(w1_1d(&c1(&[0.0]), &c1(&[0.0, 1.0])).unwrap().value, 0.5);
        // duplicating every atom leaves the measure unchanged
        let a = c1(&[0.3, -1.0, 2.0]);
        let b = c1(&[0.3, 0.3, -1.0, -1.0, 2.0, 2.0]);
        assert!(w1_1d(&a, &b).unwrap().value.abs() < 1e-15);
        // oracle: {0,1,2} vs {0,2}: quantiles differ on (1/3, 1/2) by 1 and (1/2, 2/3) by 1
        let v = w1_1d(&c1(&[0.0, 1.0, 2.0]), &c1(&[0.0, 2.0])).unwrap().value;
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_examples() {
        let mut r = rng::rng(3);
        for _ in 0..20 {
            let a = TargetDistribution::standard_gaussian(2).sample(3, rand::Rng::random(&mut r)).unwrap();
            let b = TargetDistribution::standard_gaussian(2).sample(3, rand::Rng::random(&mut r)).unwrap();
            assert!((w1_assignment(&a, &b).unwrap().value - brute_force(&a, &b)).abs() < 1e-12);
        }
        let a = TargetDistribution::standard_gaussian(1).sample(40, 4).unwrap();
        let b = TargetDistribution::UniformBall { dim: 1, radius: 2.0 }.sample(40, 5).unwrap();
        assert!((w1_assignment(&a, &b).unwrap().value - w1_1d(&a, &b).unwrap().value).abs() < 1e-12);
        let a = TargetDistribution::standard_gaussian(3).sample(30, 6).unwrap();
        let shift = [0.5, -1.0, 2.0];
        let b = a.map(|p| p.iter().zip(&shift).map(|(x, s)| x + s).collect()).unwrap();
        assert!((w1_assignment(&a, &b).unwrap().value - norm(&shift)).abs() < 1e-12);
        assert!(w1_assignment(&a, &TargetDistribution::standard_gaussian(3).sample(31, 1).unwrap()).is_err());
        assert!(w1_assignment_capped(&a, &b, 10).is_err());
    }

    #[test]
    fn sliced_examples() {
        let a = TargetDistribution::standard_gaussian(1).sample(100, 1).unwrap();
        let b = TargetDistribution::standard_gaussian(1).sample(100, 2).unwrap();
        let s = w1_sliced(&a, &b, 5, 9).unwrap();
        assert!((s.value - w1_1d(&a, &b).unwrap().value).abs() < 1e-12);
        assert_eq!(w1_sliced(&a, &a, 5, 9).unwrap().value, 0.0);
        assert!(w1_sliced(&a, &b, 0, 9).is_err());
    }

    #[test]
    fn sliced_lower_bounds_assignment() {
        let g = TargetDistribution::standard_gaussian(2);
        let a = g.sample(10_000, 1).unwrap();
        let b = g.sample(10_000, 2).unwrap();
        let s = w1_sliced(&a, &b, 64, 3).unwrap().value;
        let asg = w1_assignment(&a.resample(512, 4).unwrap(), &b.resample(512, 5).unwrap()).unwrap().value;
        assert!(s <= asg, "{s} vs {asg}");
    }

    #[test]
    fn target_w1_examples() {
        let u = TargetDistribution::UniformBall { dim: 1, radius: 1.0 };
        let a = u.sample(100_000, 1).unwrap();
        assert!(w1_to_target_1d(&a, &u, 100_000).unwrap() <= 0.02);
        // a single atom at the median of U[-1, 1]: E|X| = 1/2
        let v = w1_to_target_1d(&c1(&[0.0]), &u, 10_000).unwrap();
        assert!((v - 0.5).abs() < 1e-9);
        let tp = TargetDistribution::two_point_symmetric(1.0);
        assert_eq!(w1_to_target_1d(&c1(&[-1.0, 1.0]), &tp, 1000).unwrap(), 0.0);
        assert!(w1_to_target_1d(&PointCloud::new(2, vec![0.0; 2]).unwrap(), &tp, 10).is_err());
    }

    #[test]
    fn truncation_examples() {
        let a = c1(&[-2.0, 0.5, 3.0]);
        assert_eq!(truncate_cloud(&a, 10.0).unwrap(), a);
        assert_eq!(truncate_cloud(&a, 0.1).unwrap().data(), &[0.0, 0.0, 0.0]);
        let g = TargetDistribution::standard_gaussian(1).sample(100_000, 7).unwrap();
        let t = truncate_cloud(&g, 3.0).unwrap();
        let frac = g.data().iter().zip(t.data()).filter(|(x, y)| x != y).count() as f64 / 1e5;
        let p = 2.0 * crate::targets::std_normal_cdf(-3.0);
        assert!((frac - p).abs() <= 3.0 * (p * (1.0 - p) / 1e5).sqrt());
    }

    #[test]
    fn tail_examples() {
        let r = tail_decay_check(&TargetDistribution::two_point_symmetric(1.0), &[1.5, 2.0, 3.0], 1000, 1).unwrap();
        assert!(r.rows.iter().all(|x| x.replaced_mass == 0.0 && x.w1 == 0.0));
        assert!(r.passed);
        let r = tail_decay_check(&TargetDistribution::standard_gaussian(1), &[2.0, 3.0, 4.0], 1_000_000, 2).unwrap();
        assert!(r.passed, "{r:?}");
        for w in r.rows.windows(2) {
            assert!(w[0].replaced_mass >= 5.0 * w[1].replaced_mass);
        }
        assert!(r.rows.iter().all(|x| x.w1 <= x.chain_bound + 1e-12));
    }

    fn cloud(d: usize, m: usize) -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(-5.0f64..5.0, d * m).prop_map(move |v| PointCloud::new(d, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metric_axioms(a in cloud(2, 8), b in cloud(2, 8), c in cloud(2, 8)) {
            let ab = w1_assignment(&a, &b).unwrap().value;
            let ba = w1_assignment(&b, &a).unwrap().value;
            let ac = w1_assignment(&a, &c).unwrap().value;
            let cb = w1_assignment(&c, &b).unwrap().value;
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!(ab <= ac + cb + 1e-12);
            prop_assert_eq!(w1_assignment(&a, &a).unwrap().value, 0.0);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn scaling(a in cloud(1, 20), b in cloud(1, 30), c in 0.01f64..10.0) {
            let v = w1_1d(&a, &b).unwrap().value;
            let sa = a.map(|p| vec![c * p[0]]).unwrap();
            let sb = b.map(|p| vec![c * p[0]]).unwrap();
            prop_assert!((w1_1d(&sa, &sb).unwrap().value - c * v).abs() <= 1e-12 * (1.0 + c * v));
        }

        #[test]
        fn sorted_equals_assignment(a in cloud(1, 16), b in cloud(1, 16)) {
            let s = w1_1d(&a, &b).unwrap().value;
            let h = w1_assignment(&a, &b).unwrap().value;
            prop_assert!((s - h).abs() <= 1e-12);
        }

        #[test]
        fn pushforward_contraction(a in cloud(1, 16), b in cloud(1, 16), k in -3.0f64..3.0) {
            // F(x) = k·sin(x) has Lipschitz constant |k|
            let f = |p: &[f64]| vec![k * p[0].sin()];
            let v = w1_1d(&a.map(f).unwrap(), &b.map(f).unwrap()).unwrap().value;
            prop_assert!(v <= k.abs() * w1_1d(&a, &b).unwrap().value + 1e-9);
        }
    }
}
