//! Backward probability-flow solvers.
//!
//! `Φ(x, t) = −(β/2)x − (β/2)s(x, t)`; one Euler step is
//! `G(x, t_k) = x − Δt·Φ(x, t_k)`, and `G₍M₎` composes `M` of them from
//! `τ_k` down to `τ_{k−1}`. The baseline `f*` runs the whole grid down to eps.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::{Schedule, TimeGrid};
use crate::score::{EmpiricalScore, PluginScore, ScoreField};
use crate::targets::{norm, PointCloud};

/// Norm above which a backward pass is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// The score model driving the baseline solver.
#[derive(Clone, Debug)]
pub enum SolverKind {
    /// Learned plug-in score (distillation setting).
    Distill(PluginScore),
    /// Exact empirical mixture score (isolation setting).
    Isolate(EmpiricalScore),
}

impl ScoreField for SolverKind {
    fn dim(&self) -> usize {
        match self {
            SolverKind::Distill(s) => s.dim(),
            SolverKind::Isolate(s) => s.dim(),
        }
    }
    fn schedule(&self) -> &Schedule {
        match self {
            SolverKind::Distill(s) => s.schedule(),
            SolverKind::Isolate(s) => s.schedule(),
        }
    }
    fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            SolverKind::Distill(s) => s.score_into(x, t, out),
            SolverKind::Isolate(s) => s.score_into(x, t, out),
        }
    }
    fn lipschitz_bound(&self, t: f64) -> Option<f64> {
        match self {
            SolverKind::Distill(s) => s.lipschitz_bound(t),
            SolverKind::Isolate(s) => s.lipschitz_bound(t),
        }
    }
}

/// A score field bound to a time grid.
#[derive(Clone, Debug)]
pub struct FlowStep<S> {
    score: S,
    grid: TimeGrid,
}

impl<S: ScoreField> FlowStep<S> {
    pub fn new(score: S, grid: TimeGrid) -> Result<Self> {
        let s = score.schedule();
        if s.t_max() != grid.t_max() || s.eps() != grid.eps() {
            return Err(Error::arg(format!(
                "score schedule [{}, {}] does not match grid [{}, {}]",
                s.eps(),
                s.t_max(),
                grid.eps(),
                grid.t_max()
            )));
        }
        Ok(FlowStep { score, grid })
    }

    pub fn score(&self) -> &S {
        &self.score
    }
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    pub fn phi(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.phi_into(x, t, &mut out)?;
        Ok(out)
    }

    pub fn phi_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if !(t >= self.grid.eps() && t <= self.grid.t_max()) {
            return Err(Error::Domain { what: "t", value: t, lo: self.grid.eps(), hi: self.grid.t_max() });
        }
        let b = self.score.schedule().beta_at(t)?;
        self.score.score_into(x, t, out)?;
        out.iter_mut().zip(x).for_each(|(o, xi)| *o = -0.5 * b * xi - 0.5 * b * *o);
        Ok(())
    }

    /// One step of length `h` at time `t`, in place.
    fn step_len(&self, x: &mut [f64], t: f64, h: f64, buf: &mut [f64]) -> Result<()> {
        self.phi_into(x, t, buf)?;
        x.iter_mut().zip(buf.iter()).for_each(|(xi, p)| *xi -= h * p);
        Ok(())
    }

    fn guard(x: &[f64], step: usize, t: f64) -> Result<()> {
        let n = norm(x);
        if !n.is_finite() || n > DIVERGENCE_NORM {
            return Err(Error::Divergence { step, t, norm: n });
        }
        Ok(())
    }

    /// `x − Δt·Φ(x, t_k)` for `1 ≤ k ≤ N`.
    pub fn g_step(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        self.check_fine(k)?;
        let mut y = x.to_vec();
        let mut buf = vec![0.0; x.len()];
        self.step_len(&mut y, self.grid.t(k), self.grid.dt(), &mut buf)?;
        Ok(y)
    }

    fn check_fine(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.grid.n_fine() {
            return Err(Error::arg(format!("fine index {k} outside 1..={}", self.grid.n_fine())));
        }
        Ok(())
    }

    /// Fine steps `from, from−1, …, to+1` in place.
    fn run(&self, x: &mut [f64], from: usize, to: usize) -> Result<()> {
        let mut buf = vec![0.0; x.len()];
        for k in (to + 1..=from).rev() {
            let t = self.grid.t(k);
            self.step_len(x, t, self.grid.dt(), &mut buf)?;
            Self::guard(x, k, t)?;
        }
        Ok(())
    }

    /// `G₍M₎(x, τ_k)`: `M` Euler steps from `τ_k` to `τ_{k−1}`.
    pub fn g_multi(&self, x: &[f64], k_coarse: usize) -> Result<Vec<f64>> {
        if k_coarse == 0 || k_coarse > self.grid.n_coarse() {
            return Err(Error::arg(format!("coarse index {k_coarse} outside 1..={}", self.grid.n_coarse())));
        }
        let mut y = x.to_vec();
        let hi = self.grid.coarse_index(k_coarse);
        self.run(&mut y, hi, hi - self.grid.m())?;
        Ok(y)
    }

    /// `f*(x, t_k)`: every Euler step from grid time `t_k` down to eps.
    ///
    /// The last step, at `t₁`, has length `t₁ − eps`, which is `Δt` on the grid.
    pub fn solve_from_index(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        if k > self.grid.n_fine() {
            return Err(Error::arg(format!("fine index {k} outside 0..={}", self.grid.n_fine())));
        }
        let mut y = x.to_vec();
        self.run(&mut y, k, 0)?;
        Ok(y)
    }

    /// `f*(x, t)` for any `t ∈ [eps, T]`: Δt-steps while `t > t₁`, then a
    /// final step of length `t − eps`.
    pub fn solve_from(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let (eps, tm) = (self.grid.eps(), self.grid.t_max());
        if !(t >= eps && t <= tm) {
            return Err(Error::Domain { what: "t", value: t, lo: eps, hi: tm });
        }
        if let Some(k) = self.grid.index_of(t) {
            return self.solve_from_index(x, k);
        }
        let (dt, t1) = (self.grid.dt(), self.grid.t(1));
        let mut y = x.to_vec();
        let mut buf = vec![0.0; x.len()];
        let mut cur = t;
        let mut step = 0;
        while cur > t1 {
            self.step_len(&mut y, cur, dt, &mut buf)?;
            Self::guard(&y, step, cur)?;
            cur -= dt;
            step += 1;
        }
        let cur = cur.max(eps);
        self.step_len(&mut y, cur, cur - eps, &mut buf)?;
        Self::guard(&y, step, cur)?;
        Ok(y)
    }

    /// `f*(x, T)`: the solver's sample for a terminal-time input.
    pub fn solve(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.solve_from_index(x, self.grid.n_fine())
    }

    /// States at every fine time from `t_k` down to eps, as `(index, t, x)`.
    pub fn trajectory(&self, x: &[f64], k: usize) -> Result<Vec<(usize, f64, Vec<f64>)>> {
        let mut y = x.to_vec();
        let mut out = vec![(k, self.grid.t(k), y.clone())];
        let mut buf = vec![0.0; x.len()];
        for j in (1..=k).rev() {
            let t = self.grid.t(j);
            self.step_len(&mut y, t, self.grid.dt(), &mut buf)?;
            Self::guard(&y, j, t)?;
            out.push((j - 1, self.grid.t(j - 1), y.clone()));
        }
        Ok(out)
    }
}

/// `f*` for a solver kind on a grid, from time `T`.
pub fn ddpm_solve(kind: &SolverKind, grid: &TimeGrid, x: &[f64]) -> Result<Vec<f64>> {
    FlowStep::new(kind, grid.clone())?.solve(x)
}

/// `f*` from an arbitrary time `t ∈ [eps, T]`.
pub fn ddpm_solve_from(kind: &SolverKind, grid: &TimeGrid, x: &[f64], t: f64) -> Result<Vec<f64>> {
    FlowStep::new(kind, grid.clone())?.solve_from(x, t)
}

/// Writes `step,t,x0,x1,...` rows.
pub fn write_trajectory_csv(path: &Path, traj: &[(usize, f64, Vec<f64>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = traj.first().map_or(0, |r| r.2.len());
    let cols: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    writeln!(f, "step,t,{}", cols.join(","))?;
    for (k, t, x) in traj {
        let xs: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        writeln!(f, "{k},{t:e},{}", xs.join(","))?;
    }
    Ok(())
}

/// Applies `map` to every point, in order.
pub fn push_cloud<F>(map: F, cloud: &PointCloud) -> Result<PointCloud>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut out = Vec::with_capacity(cloud.data().len());
    let mut dim = None;
    for p in cloud.points() {
        let y = map(p)?;
        if *dim.get_or_insert(y.len()) != y.len() {
            return Err(Error::arg("map returned points of varying dimension"));
        }
        out.extend(y);
    }
    PointCloud::new(dim.unwrap_or(cloud.dim()), out)
}

/// [`push_cloud`] split over `threads` scoped workers. Output order and
/// values are identical to the sequential version.
pub fn push_cloud_threads<F>(map: F, cloud: &PointCloud, threads: usize) -> Result<PointCloud>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let threads = threads.max(1).min(cloud.len().max(1));
    if threads == 1 {
        return push_cloud(map, cloud);
    }
    let d = cloud.dim();
    let chunk = cloud.len().div_ceil(threads);
    let parts: Vec<Result<PointCloud>> = std::thread::scope(|sc| {
        let handles: Vec<_> = cloud
            .data()
            .chunks(chunk * d)
            .map(|c| {
                let map = &map;
                sc.spawn(move || push_cloud(map, &PointCloud::new(d, c.to_vec())?))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut data = Vec::with_capacity(cloud.data().len());
    let mut dim = d;
    for p in parts {
        let p = p?;
        dim = p.dim();
        data.extend(p.into_data());
    }
    PointCloud::new(dim, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    /// max ‖F(x) − F(y)‖ / ‖x − y‖ over the probe pairs.
    pub probed: f64,
    pub pairs: usize,
    /// Analytic ceiling, when one applies.
    pub ceiling: Option<f64>,
}

/// Pairs each probe `x` with `x + r·u`, `u` a seeded random unit vector.
pub fn probe_lipschitz_map<F>(map: F, probes: &PointCloud, pair_radius: f64, seed: u64) -> Result<LipschitzProbe>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if probes.len() < 2 {
        return Err(Error::arg("need at least two probes"));
    }
    if pair_radius <= 0.0 {
        return Err(Error::arg("pair radius must be positive"));
    }
    let mut r = rng::rng(seed);
    let d = probes.dim();
    let mut u = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for x in probes.points() {
        loop {
            rng::fill_normal(&mut r, &mut u);
            let n = norm(&u);
            if n > 1e-12 {
                u.iter_mut().for_each(|v| *v *= pair_radius / n);
                break;
            }
        }
        let y: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
        let dx = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let (fx, fy) = (map(x)?, map(&y)?);
        let df = norm(&fx.iter().zip(&fy).map(|(a, b)| a - b).collect::<Vec<_>>());
        worst = worst.max(df / dx);
    }
    Ok(LipschitzProbe { probed: worst, pairs: probes.len(), ceiling: None })
}

/// Largest score Lipschitz bound over the grid times, if the field has one.
pub fn grid_score_lipschitz<S: ScoreField>(fs: &FlowStep<S>) -> Option<f64> {
    let mut l: f64 = 0.0;
    for &t in fs.grid().times() {
        l = l.max(fs.score().lipschitz_bound(t)?);
    }
    Some(l)
}

/// `exp(C·d·β̄·T)` with `C = 10(1 + L)`.
pub fn solver_lipschitz_ceiling(dim: usize, beta_max: f64, t_max: f64, score_lip: f64) -> f64 {
    (10.0 * (1.0 + score_lip) * dim as f64 * beta_max * t_max).exp()
}

/// Difference-quotient probe of `f*(·, T)`, reported with its ceiling.
pub fn lipschitz_probe_solver<S: ScoreField>(
    fs: &FlowStep<S>,
    probes: &PointCloud,
    pair_radius: f64,
    seed: u64,
) -> Result<LipschitzProbe> {
    let mut p = probe_lipschitz_map(|x| fs.solve(x), probes, pair_radius, seed)?;
    let s = fs.score().schedule();
    p.ceiling = grid_score_lipschitz(fs).map(|l| solver_lipschitz_ceiling(fs.dim(), s.beta_max(), s.t_max(), l));
    Ok(p)
}

/// Exact flow for a single data atom `c`:
/// `x(t) = m(t)c + (σ(t)/σ(s))(x(s) − m(s)c)`.
pub fn single_atom_flow(s: &Schedule, c: &[f64], x_s: &[f64], from: f64, to: f64) -> Result<Vec<f64>> {
    let (ms, ss) = s.coeffs(from)?;
    let (mt, st) = s.coeffs(to)?;
    if ss == 0.0 {
        return Err(Error::SingularTime { t: from });
    }
    Ok(c.iter().zip(x_s).map(|(ci, xi)| mt * ci + st / ss * (xi - ms * ci)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{AnalyticScore, ZeroScore};
    use crate::targets::{Dataset, TargetDistribution};

    fn zero_flow(beta: f64, n: usize, m: usize) -> FlowStep<ZeroScore> {
        let s = Schedule::constant(beta, 2.0, 0.01).unwrap();
        let g = s.build_grid(n, m).unwrap();
        FlowStep::new(ZeroScore { dim: 1, schedule: s }, g).unwrap()
    }

    fn isolate(points: &[f64], s: &Schedule) -> EmpiricalScore {
        let ds = Dataset::from_cloud(
            PointCloud::from_1d(points.to_vec()).unwrap(),
            TargetDistribution::two_point_symmetric(1.0),
            0,
        );
        EmpiricalScore::new(ds, s.clone())
    }

    #[test]
    fn phi_examples() {
        let f = zero_flow(0.5, 4, 2);
        assert_eq!(f.phi(&[2.0], 1.0).unwrap(), vec![-0.5]);
        let s = Schedule::constant(0.5, 2.0, 0.01).unwrap();
        let f = FlowStep::new(isolate(&[0.0], &s), s.build_grid(4, 2).unwrap()).unwrap();
        let (x, t) = (1.3, 0.7);
        let sd = s.std_coeff(t).unwrap();
        let expect = -0.25 * x * (1.0 - 1.0 / (sd * sd));
        assert!((f.phi(&[x], t).unwrap()[0] - expect).abs() < 1e-12 * expect.abs());
        let f = FlowStep::new(isolate(&[-1.0, 1.0], &s), s.build_grid(4, 2).unwrap()).unwrap();
        assert_eq!(f.phi(&[0.0], t).unwrap(), vec![0.0]);
        assert!(f.phi(&[0.0], 0.001).is_err());
    }

    #[test]
    fn schedule_mismatch_rejected() {
        let s = Schedule::constant(0.5, 2.0, 0.01).unwrap();
        let g = Schedule::constant(0.5, 3.0, 0.01).unwrap().build_grid(2, 2).unwrap();
        assert!(FlowStep::new(ZeroScore { dim: 1, schedule: s }, g).is_err());
    }

    #[test]
    fn g_step_examples() {
        let f = zero_flow(0.5, 4, 5);
        let dt = f.grid().dt();
        let y = f.g_step(&[1.5], 3).unwrap();
        assert!((y[0] - 1.5 * (1.0 + 0.25 * dt)).abs() < 1e-15);
        let p = f.phi(&[1.5], f.grid().t(3)).unwrap();
        assert!((y[0] - 1.5).abs() <= dt * p[0].abs() + 1e-15);
        assert!(f.g_step(&[1.0], 0).is_err());
        assert!(f.g_step(&[1.0], 21).is_err());
    }

    #[test]
    fn g_step_is_second_order_locally() {
        // one-step error against the exact single-atom flow shrinks ~4x per halving
        let s = Schedule::linear(0.5, 1.5, 2.0, 0.05).unwrap();
        let c = [0.7];
        let errs: Vec<f64> = [8usize, 16, 32]
            .iter()
            .map(|&n| {
                let g = s.build_grid(n, 1).unwrap();
                let f = FlowStep::new(isolate(&c, &s), g.clone()).unwrap();
                let k = n / 2;
                let x0 = [1.9];
                let euler = f.g_step(&x0, k).unwrap()[0];
                let exact = single_atom_flow(&s, &c, &x0, g.t(k), g.t(k - 1)).unwrap()[0];
                (euler - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!(r > 3.0 && r < 5.0, "{errs:?}");
        }
    }

    #[test]
    fn g_multi_is_composition_and_m1_is_step() {
        let s = Schedule::linear(0.1, 2.0, 2.0, 0.02).unwrap();
        let ds = Dataset::sample(&TargetDistribution::UniformBall { dim: 2, radius: 1.0 }, 9, 1).unwrap();
        let f1 = FlowStep::new(EmpiricalScore::new(ds.clone(), s.clone()), s.build_grid(6, 1).unwrap()).unwrap();
        assert_eq!(f1.g_multi(&[0.3, -0.4], 4).unwrap(), f1.g_step(&[0.3, -0.4], 4).unwrap());
        let f = FlowStep::new(EmpiricalScore::new(ds, s.clone()), s.build_grid(4, 3).unwrap()).unwrap();
        let x = [0.5, 1.1];
        let mut y = x.to_vec();
        for k in (1..=4).rev() {
            y = f.g_multi(&y, k).unwrap();
        }
        assert_eq!(y, f.solve(&x).unwrap());
        for k in 1..=4 {
            let lhs = f.solve_from_index(&x, f.grid().coarse_index(k)).unwrap();
            let rhs = f.solve_from_index(&f.g_multi(&x, k).unwrap(), f.grid().coarse_index(k - 1)).unwrap();
            assert_eq!(lhs, rhs);
        }
        assert!(f.g_multi(&x, 0).is_err());
        assert!(f.g_multi(&x, 5).is_err());
    }

    #[test]
    fn boundary_is_identity() {
        let s = Schedule::constant(1.0, 2.0, 0.05).unwrap();
        let f = FlowStep::new(isolate(&[-1.0, 1.0], &s), s.build_grid(4, 4).unwrap()).unwrap();
        for x in [-3.0, 0.2, 7.0] {
            assert_eq!(f.solve_from(&[x], 0.05).unwrap(), vec![x]);
            assert_eq!(f.solve_from_index(&[x], 0).unwrap(), vec![x]);
        }
    }

    #[test]
    fn off_grid_start_uses_partial_final_step() {
        let f = zero_flow(0.5, 2, 2);
        let (eps, dt) = (f.grid().eps(), f.grid().dt());
        // t between eps and t₁: a single step of length t − eps
        let t = eps + 0.3 * dt;
        let y = f.solve_from(&[1.0], t).unwrap()[0];
        assert!((y - (1.0 + 0.25 * (t - eps))).abs() < 1e-14);
        // t between t₁ and t₂: one Δt step then a partial one
        let t = eps + 1.5 * dt;
        let y = f.solve_from(&[1.0], t).unwrap()[0];
        let expect = (1.0 + 0.25 * dt) * (1.0 + 0.25 * (t - dt - eps));
        assert!((y - expect).abs() < 1e-12);
    }

    #[test]
    fn single_atom_isolation_matches_closed_form() {
        let s = Schedule::constant(1.0, 1.0, 0.05).unwrap();
        let c = [0.8];
        let g = s.build_grid(2048, 1).unwrap();
        let f = FlowStep::new(isolate(&c, &s), g).unwrap();
        for x in [-1.5, 0.0, 0.4, 2.0] {
            let got = f.solve(&[x]).unwrap()[0];
            let exact = single_atom_flow(&s, &c, &[x], 1.0, 0.05).unwrap()[0];
            assert!((got - exact).abs() <= 1e-3, "{got} vs {exact}");
        }
    }

    #[test]
    fn euler_converges_at_first_order() {
        // Gaussian target with std 0.5: x(t) = x(T)·√(v(t)/v(T)), v = m²/4 + σ²
        let s = Schedule::linear(0.1, 2.0, 2.0, 0.05).unwrap();
        let td = TargetDistribution::GaussianMixture { means: vec![vec![0.0]], weights: vec![1.0], stds: vec![0.5] };
        let v = |t: f64| {
            let (m, sd) = s.coeffs(t).unwrap();
            0.25 * m * m + sd * sd
        };
        let x = 1.3;
        let exact = x * (v(0.05) / v(2.0)).sqrt();
        let errs: Vec<f64> = [16usize, 32, 64, 128]
            .iter()
            .map(|&m| {
                let f = FlowStep::new(AnalyticScore::new(td.clone(), s.clone()).unwrap(), s.build_grid(4, m).unwrap())
                    .unwrap();
                (f.solve(&[x]).unwrap()[0] - exact).abs()
            })
            .collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..=2.3).contains(&r), "{errs:?}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        // each step multiplies by 1 + βΔt/2 = 6
        let s = Schedule::constant(20.0, 2.0, 1e-4).unwrap();
        let f = FlowStep::new(ZeroScore { dim: 1, schedule: s.clone() }, s.build_grid(2, 2).unwrap()).unwrap();
        assert!(matches!(f.solve(&[1e3]), Err(Error::Divergence { step: 1, .. })));
        assert!(f.solve(&[1.0]).is_ok());
    }

    #[test]
    fn push_cloud_examples() {
        let c = PointCloud::from_1d(vec![1.0, 2.0]).unwrap();
        assert_eq!(push_cloud(|x| Ok(x.to_vec()), &c).unwrap(), c);
        assert_eq!(push_cloud(|x| Ok(vec![2.0 * x[0]]), &c).unwrap().data(), &[2.0, 4.0]);
        let s = Schedule::constant(1.0, 2.0, 0.05).unwrap();
        let f = FlowStep::new(isolate(&[-1.0, 1.0], &s), s.build_grid(3, 3).unwrap()).unwrap();
        let cloud = TargetDistribution::standard_gaussian(1).sample(100, 3).unwrap();
        let pushed = push_cloud(|x| f.g_multi(x, 2), &cloud).unwrap();
        for (p, y) in cloud.points().zip(pushed.points()) {
            assert_eq!(f.g_multi(p, 2).unwrap(), y);
        }
        assert_eq!(push_cloud_threads(|x| f.g_multi(x, 2), &cloud, 3).unwrap(), pushed);
    }

    #[test]
    fn zero_score_solver_lipschitz_is_product() {
        let f = zero_flow(0.5, 4, 8);
        let probes = TargetDistribution::standard_gaussian(1).sample(20, 1).unwrap();
        let p = lipschitz_probe_solver(&f, &probes, 0.1, 2).unwrap();
        let n = f.grid().n_fine() as i32;
        let expect = (1.0 + 0.25 * f.grid().dt()).powi(n);
        assert!((p.probed - expect).abs() < 1e-9);
        assert!(p.probed <= (0.25 * 2.0f64).exp());
        assert_eq!(p.ceiling, Some(solver_lipschitz_ceiling(1, 0.5, 2.0, 0.0)));
    }

    #[test]
    fn isolation_solver_below_ceiling() {
        let s = Schedule::constant(0.5, 2.0, 0.1).unwrap();
        let f = FlowStep::new(isolate(&[-1.0, 1.0], &s), s.build_grid(8, 8).unwrap()).unwrap();
        let probes = TargetDistribution::standard_gaussian(1).sample(200, 4).unwrap();
        let p = lipschitz_probe_solver(&f, &probes, 0.05, 5).unwrap();
        assert!(p.probed <= p.ceiling.unwrap());
    }
}
