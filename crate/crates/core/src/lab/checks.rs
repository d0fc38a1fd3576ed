//! Property checks of the score, Jacobian, solver and tails. Each oracle here is computed independently
//! of the code under test (its own log-sum-exp, finite differences,
//! difference quotients).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;

use super::config::{ExperimentConfig, Study};
use super::report::{Assertion, CheckReport, Fingerprint};
use super::{estimate_w1, par_map};
use crate::error::{Error, Result};
use crate::flow::{probe_lipschitz_map, solver_lipschitz_ceiling, FlowStep};
use crate::rng;
use crate::schedule::Schedule;
use crate::score::{mixture_score_jacobian, probe_lipschitz, EmpiricalScore, ScoreField, ShiftedScore};
use crate::targets::{Dataset, PointCloud, TargetDistribution};
use crate::transport::{tail_decay_check, w1_to_target_1d};

pub const TWEEDIE_FD_TOL: f64 = 1e-6;
pub const TWEEDIE_ALGEBRAIC_TOL: f64 = 1e-10;
pub const JACOBIAN_FD_TOL: f64 = 1e-5;
pub const JACOBIAN_SYMMETRY_TOL: f64 = 1e-12;
pub const EIGEN_SLACK: f64 = 1e-9;

/// The fixed datasets the identity checks run on: (n, d) ∈ {(1,1), (5,2), (64,1)}.
fn identity_datasets(seed: u64) -> Result<Vec<Dataset>> {
    let mix2 = TargetDistribution::GaussianMixture {
        means: vec![vec![0.0, 1.0], vec![1.0, -1.0]],
        weights: vec![0.5, 0.5],
        stds: vec![0.6, 0.6],
    };
    let uni = TargetDistribution::UniformBall { dim: 1, radius: 1.0 };
    Ok(vec![
        Dataset::sample(&uni, 1, rng::derive_seed(seed, 1))?,
        Dataset::sample(&mix2, 5, rng::derive_seed(seed, 2))?,
        Dataset::sample(&uni, 64, rng::derive_seed(seed, 3))?,
    ])
}

/// log Σ_j exp(−‖x − m xʲ‖²/2σ²), shifted by the largest exponent.
fn log_density(ds: &Dataset, m: f64, sd: f64, x: &[f64]) -> f64 {
    let e: Vec<f64> = ds
        .points()
        .points()
        .map(|p| -p.iter().zip(x).map(|(a, b)| (m * a - b).powi(2)).sum::<f64>() / (2.0 * sd * sd))
        .collect();
    let top = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + e.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// E[x₀ | x] from the same exponents, normalised by their sum.
fn posterior_mean(ds: &Dataset, m: f64, sd: f64, x: &[f64]) -> Vec<f64> {
    let lp = log_density(ds, m, sd, x);
    let mut pm = vec![0.0; ds.dim()];
    for p in ds.points().points() {
        let e = -p.iter().zip(x).map(|(a, b)| (m * a - b).powi(2)).sum::<f64>() / (2.0 * sd * sd);
        let w = (e - lp).exp();
        pm.iter_mut().zip(p).for_each(|(acc, v)| *acc += w * v);
    }
    pm
}

/// A probe (x, t): t log-uniform over [max(eps, 1e-3), T]; x near a scaled
/// data point half the time, a wide Gaussian draw otherwise.
fn probe(ds: &Dataset, s: &Schedule, r: &mut rng::LabRng) -> Result<(Vec<f64>, f64)> {
    let lo = s.eps().max(1e-3).ln();
    let t = (lo + (s.t_max().ln() - lo) * r.random::<f64>()).exp();
    let (m, sd) = s.coeffs(t)?;
    let d = ds.dim();
    let x = if r.random::<bool>() {
        let j = r.random_range(0..ds.len());
        ds.points().point(j).iter().map(|v| m * v + 1.5 * sd * rng::normal(r)).collect()
    } else {
        (0..d).map(|_| 2.0 * rng::normal(r)).collect()
    };
    Ok((x, t))
}

#[derive(Default)]
struct Worst {
    value: f64,
    at: String,
}

impl Worst {
    fn see(&mut self, v: f64, at: impl FnOnce() -> String) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.at = at();
        }
    }
}

/// Score vs finite differences of the log-density, and the algebraic
/// identity score = (m·E[x₀|x] − x)/σ², on `probes` probes per dataset.
fn tweedie_items(cfg: &ExperimentConfig, datasets: &[Dataset], probes: usize) -> Result<Vec<Assertion>> {
    let s = &cfg.schedule;
    let (mut fd, mut alg) = (Worst::default(), Worst::default());
    for (di, ds) in datasets.iter().enumerate() {
        let field = ShiftedScore {
            inner: EmpiricalScore::new(ds.clone(), s.clone()),
            offset: vec![cfg.fault.unwrap_or(0.0); ds.dim()],
        };
        let mut r = rng::rng(rng::derive_path(cfg.seed, &[10, di as u64]));
        for pi in 0..probes {
            let (x, t) = probe(ds, s, &mut r)?;
            let (m, sd) = s.coeffs(t)?;
            let got = field.score(&x, t)?;
            let pm = posterior_mean(ds, m, sd, &x);
            let h = 1e-4 * sd.max(1e-2);
            for i in 0..x.len() {
                let f = |dx: f64| {
                    let mut y = x.clone();
                    y[i] += dx;
                    log_density(ds, m, sd, &y)
                };
                let deriv = (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
                let scale = got[i].abs().max(1.0);
                let at = || format!("dataset {di} (n={}), probe {pi}, t={t:.4}, coord {i}", ds.len());
                fd.see((deriv - got[i]).abs() / scale, at);
                let tw = (m * pm[i] - x[i]) / (sd * sd);
                alg.see((tw - got[i]).abs() / scale, at);
            }
        }
    }
    Ok(vec![
        Assertion::at_most("score.finite_difference", fd.value, TWEEDIE_FD_TOL).with_detail(fd.at),
        Assertion::at_most("score.tweedie_identity", alg.value, TWEEDIE_ALGEBRAIC_TOL).with_detail(alg.at),
    ])
}

/// Analytic Jacobian vs central differences of the score, symmetry, the
/// eigenvalue floor −1/σ², and the single-atom −I/σ² case.
fn jacobian_items(cfg: &ExperimentConfig, datasets: &[Dataset], probes: usize) -> Result<Vec<Assertion>> {
    let s = &cfg.schedule;
    let (mut fd, mut sym, mut eig) = (Worst::default(), Worst::default(), Worst::default());
    let mut single_exact = true;
    let mut extra = datasets.to_vec();
    extra.push(Dataset::from_cloud(PointCloud::new(2, vec![0.4, -0.2])?, TargetDistribution::standard_gaussian(2), 0));
    for (di, ds) in extra.iter().enumerate() {
        let field = EmpiricalScore::new(ds.clone(), s.clone());
        let mut r = rng::rng(rng::derive_path(cfg.seed, &[11, di as u64]));
        let d = ds.dim();
        for pi in 0..probes {
            let (x, t) = probe(ds, s, &mut r)?;
            let sd = s.std_coeff(t)?;
            let jac = mixture_score_jacobian(ds, s, &x, t)?;
            let h = 1e-3 * sd;
            let mut num = DMatrix::<f64>::zeros(d, d);
            for k in 0..d {
                let at = |dx: f64| -> Result<Vec<f64>> {
                    let mut y = x.clone();
                    y[k] += dx;
                    field.score(&y, t)
                };
                let (p2, p1, m1, m2) = (at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?);
                for i in 0..d {
                    num[(i, k)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
                }
            }
            let scale = jac.amax().max(1.0);
            let where_ = || format!("dataset {di} (n={}), probe {pi}, t={t:.4}", ds.len());
            fd.see((&num - &jac).amax() / scale, where_);
            sym.see((&jac - jac.transpose()).amax(), where_);
            let lo = jac.clone().symmetric_eigen().eigenvalues.min();
            eig.see(-1.0 / (sd * sd) - lo, where_);
            if ds.len() == 1 {
                single_exact &= jac == -DMatrix::<f64>::identity(d, d) / (sd * sd);
            }
        }
    }
    Ok(vec![
        Assertion::at_most("jacobian.finite_difference", fd.value, JACOBIAN_FD_TOL).with_detail(fd.at),
        Assertion::at_most("jacobian.symmetry", sym.value, JACOBIAN_SYMMETRY_TOL).with_detail(sym.at),
        Assertion::at_most("jacobian.eigenvalue_floor", eig.value, EIGEN_SLACK)
            .with_detail(format!("max of -1/sigma^2 - lambda_min; {}", eig.at)),
        Assertion::flag("jacobian.single_atom_is_scaled_identity", single_exact),
    ])
}

/// Probed Jacobian norms and difference quotients against the analytic
/// certificates, for the score, one Euler step, and the full solver.
fn lipschitz_items(cfg: &ExperimentConfig, datasets: &[Dataset]) -> Result<Vec<Assertion>> {
    let s = &cfg.schedule;
    let probes = cfg.probes;
    let times: Vec<f64> = [0.05, 0.3, 1.0].iter().map(|f| s.eps() + f * (s.t_max() - s.eps())).collect();
    let mut items = Vec::new();
    let mut configs = Vec::new();
    for (di, ds) in datasets.iter().enumerate() {
        for (ti, &t) in times.iter().enumerate() {
            configs.push((di, ds, ti, t));
        }
    }
    let results = par_map(cfg.threads, &configs, |&(di, ds, ti, t)| -> Result<(f64, f64, f64, usize)> {
        let seed = rng::derive_path(cfg.seed, &[12, di as u64, ti as u64]);
        let sd = s.std_coeff(t)?;
        let cloud = ds.sample_marginal(s, t, probes, seed)?;
        let wide = PointCloud::new(ds.dim(), cloud.data().iter().map(|v| v * 1.5).collect())?;
        let cert = probe_lipschitz(ds, s, t, &wide)?;
        let field = EmpiricalScore::new(ds.clone(), s.clone());
        let dq = probe_lipschitz_map(|x| field.score(x, t), &wide, 1e-3 * sd, rng::derive_seed(seed, 1))?;
        Ok((cert.probed.unwrap_or(f64::NAN), dq.probed, cert.bound, cert.violations))
    });
    let (mut worst_ratio, mut at) = (0.0f64, String::new());
    let mut violations = 0;
    for ((di, ds, _, t), r) in configs.iter().zip(results) {
        let (spectral, dq, bound, v) = r?;
        violations += v;
        let ratio = spectral.max(dq) / bound;
        if ratio > worst_ratio {
            worst_ratio = ratio;
            at = format!("dataset {di} (n={}), t={t:.4}", ds.len());
        }
    }
    items.push(Assertion::at_most("lipschitz.score_certificate", worst_ratio, 1.0 + 1e-12).with_detail(format!(
        "max probed/bound over {} configurations x {probes} probes; {at}; {violations} violations",
        configs.len()
    )));

    // one Euler step and the whole solver, on a short grid
    let ds = &datasets[1];
    let grid = s.build_grid(2, 8)?;
    let fs = FlowStep::new(EmpiricalScore::new(ds.clone(), s.clone()), grid.clone())?;
    let seed = rng::derive_path(cfg.seed, &[13]);
    let (mut step_ratio, mut step_at) = (0.0f64, String::new());
    for k in [1, grid.n_fine() / 2, grid.n_fine()] {
        let t = grid.t(k);
        let l = fs.score().lipschitz_bound(t).ok_or_else(|| Error::Method("no score bound".into()))?;
        let bound = 1.0 + grid.dt() * s.beta_at(t)? / 2.0 * (1.0 + l);
        let cloud = ds.sample_marginal(s, t, probes, rng::derive_seed(seed, k as u64))?;
        let sd = s.std_coeff(t)?;
        let dq = probe_lipschitz_map(|x| fs.g_step(x, k), &cloud, 1e-3 * sd, rng::derive_seed(seed, 100 + k as u64))?;
        if dq.probed / bound > step_ratio {
            step_ratio = dq.probed / bound;
            step_at = format!("step {k}, t={t:.4}, bound {bound:.4e}");
        }
    }
    items.push(Assertion::at_most("lipschitz.euler_step", step_ratio, 1.0 + 1e-12).with_detail(step_at));

    let l_max =
        grid.times().iter().map(|&t| fs.score().lipschitz_bound(t).unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let ceiling = solver_lipschitz_ceiling(ds.dim(), s.beta_max(), s.t_max(), l_max);
    let inputs = super::studies::normal_cloud(ds.dim(), probes, rng::derive_seed(seed, 7))?;
    let dq = probe_lipschitz_map(|x| fs.solve(x), &inputs, 1e-3, rng::derive_seed(seed, 8))?;
    items.push(Assertion::at_most("lipschitz.solver_ceiling", dq.probed, ceiling).with_detail(format!(
        "{} pairs on a {}-step grid{}",
        probes,
        grid.n_fine(),
        if ceiling.is_finite() { "" } else { "; the ceiling overflows f64 at this grid" }
    )));
    Ok(items)
}

/// f*(x, τ_k) and f*(G_M(x), τ_{k−1}) agree bitwise.
fn composition_item(cfg: &ExperimentConfig, ds: &Dataset, points: usize) -> Result<Assertion> {
    let s = &cfg.schedule;
    let grid = s.build_grid(4, 8)?;
    let fs = FlowStep::new(EmpiricalScore::new(ds.clone(), s.clone()), grid.clone())?;
    let mut mismatches = 0usize;
    let mut total = 0usize;
    for k in 1..=grid.n_coarse() {
        let x =
            ds.sample_marginal(s, grid.tau(k), points / grid.n_coarse(), rng::derive_path(cfg.seed, &[14, k as u64]))?;
        for p in x.points() {
            let direct = fs.solve_from_index(p, grid.coarse_index(k))?;
            let via = fs.solve_from_index(&fs.g_multi(p, k)?, grid.coarse_index(k - 1))?;
            total += 1;
            if direct.iter().zip(&via).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
            }
        }
    }
    Ok(Assertion::at_most("flow.composition_bitwise", mismatches as f64, 0.0)
        .with_detail(format!("{mismatches} of {total} points differ")))
}

/// Runs the score, Jacobian, Lipschitz and composition oracles.
pub fn check_identities(cfg: &ExperimentConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let datasets = identity_datasets(cfg.seed)?;
    let per_dataset = 200usize.div_ceil(datasets.len());
    let mut items = tweedie_items(cfg, &datasets, per_dataset)?;
    items.extend(jacobian_items(cfg, &datasets, 100usize.div_ceil(datasets.len()))?);
    items.extend(lipschitz_items(cfg, &datasets)?);
    items.push(composition_item(cfg, &datasets[1], 1000)?);
    let mut notes = vec!["datasets (n, d): (1, 1), (5, 2), (64, 1)".to_string()];
    if let Some(f) = cfg.fault {
        notes.push(format!("fault injected: score shifted by {f}"));
    }
    Ok(CheckReport::new(Fingerprint::new(&Study::Identities.name(), cfg), items, notes))
}

/// W₁(X_τ, 𝒳_τ) ≤ m(τ)·W₁(p, p̂) at the coarse grid times, with population
/// quantities proxied by `m_proxy`-point clouds.
pub fn check_contraction(cfg: &ExperimentConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let td = &cfg.target;
    if td.dim() != 1 {
        return Err(Error::Config("contraction check needs a one-dimensional target".into()));
    }
    let s = &cfg.schedule;
    let grid = s.build_grid(cfg.n_coarse, cfg.m)?;
    let taus: Vec<f64> = (0..=grid.n_coarse()).map(|k| grid.tau(k)).collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.trials).flat_map(|j| (0..taus.len()).map(move |k| (j, k))).collect();
    let rows = par_map(cfg.threads, &jobs, |&(j, k)| -> Result<(f64, f64, f64, f64)> {
        let ds = Dataset::sample(td, cfg.n, rng::derive_path(cfg.seed, &[j as u64, 0]))?;
        let rhs = w1_to_target_1d(ds.points(), td, cfg.quad_points)?;
        let tau = taus[k];
        let seed = rng::derive_path(cfg.seed, &[j as u64, k as u64 + 1]);
        let pop = crate::targets::forward_marginal(
            &td.sample(cfg.m_proxy, rng::derive_seed(seed, 0))?,
            s,
            tau,
            rng::derive_seed(seed, 1),
        )?;
        let pop2 = crate::targets::forward_marginal(
            &td.sample(cfg.m_proxy, rng::derive_seed(seed, 2))?,
            s,
            tau,
            rng::derive_seed(seed, 3),
        )?;
        let emp = ds.sample_marginal(s, tau, cfg.m_proxy, rng::derive_seed(seed, 4))?;
        let emp2 = ds.sample_marginal(s, tau, cfg.m_proxy, rng::derive_seed(seed, 5))?;
        let lhs = estimate_w1(&pop, &emp, cfg.estimator, 0)?.value;
        let np = estimate_w1(&pop, &pop2, cfg.estimator, 0)?.value;
        let ne = estimate_w1(&emp, &emp2, cfg.estimator, 0)?.value;
        let m = s.mean_coeff(tau)?;
        Ok((lhs, m * rhs, (np * np + ne * ne).sqrt(), rhs))
    });
    let mut items = Vec::new();
    let mut diagnostics = BTreeMap::new();
    let mut per_tau: Vec<(f64, f64)> = vec![(0.0, 0.0); taus.len()];
    for (&(j, k), row) in jobs.iter().zip(rows) {
        let (lhs, bound, mc, _) = row?;
        items.push(
            Assertion::at_most(format!("contraction[trial={j}, tau={:.4}]", taus[k]), lhs - bound, 3.0 * mc)
                .with_detail(format!("lhs {lhs:.5}, m(tau) rhs {bound:.5}, Monte Carlo scale {mc:.5}")),
        );
        per_tau[k].0 += lhs / cfg.trials as f64;
        per_tau[k].1 += bound / cfg.trials as f64;
    }
    for (k, (l, b)) in per_tau.iter().enumerate() {
        diagnostics.insert(format!("mean_lhs[tau={:.4}]", taus[k]), *l);
        diagnostics.insert(format!("mean_bound[tau={:.4}]", taus[k]), *b);
    }
    let notes = vec![
        format!("n = {}, proxies of {} points, {} trials", cfg.n, cfg.m_proxy, cfg.trials),
        "Monte Carlo scale: W1 between two independent proxies of each side, combined in quadrature".into(),
    ];
    let mut report = CheckReport::new(Fingerprint::new(&Study::Contraction.name(), cfg), items, notes);
    report.diagnostics = diagnostics;
    Ok(report)
}

/// Truncation mass and W₁ against R₀ for the configured target, a
/// symmetric two-point target and a uniform ball.
pub fn check_tails(cfg: &ExperimentConfig) -> Result<CheckReport> {
    cfg.validate()?;
    let two_point = TargetDistribution::two_point_symmetric(1.0);
    let mut targets = vec![cfg.target.clone()];
    for t in [two_point.clone(), TargetDistribution::UniformBall { dim: 2, radius: 1.5 }] {
        if !targets.contains(&t) {
            targets.push(t);
        }
    }
    let mut items = Vec::new();
    let mut diagnostics = BTreeMap::new();
    for (i, td) in targets.iter().enumerate() {
        let rep = tail_decay_check(td, &cfg.r0_grid, cfg.m_proxy, rng::derive_path(cfg.seed, &[15, i as u64]))?;
        let name = format!("target{i}");
        items.push(Assertion::flag(format!("{name}.monotone"), rep.monotone));
        items.push(Assertion::flag(format!("{name}.w1_below_chain"), rep.chain_ok));
        items.push(Assertion::flag(format!("{name}.within_envelope"), rep.within_envelope));
        items.push(Assertion::flag(format!("{name}.log_mass_decreasing"), rep.log_decreasing));
        for row in &rep.rows {
            diagnostics.insert(format!("{name}.mass[r0={}]", row.r0), row.replaced_mass);
            diagnostics.insert(format!("{name}.w1[r0={}]", row.r0), row.w1);
        }
        if *td == two_point {
            let zero = rep.rows.iter().filter(|r| r.r0 > 1.0).all(|r| r.replaced_mass == 0.0 && r.w1 == 0.0);
            items.push(Assertion::flag(format!("{name}.two_point_zero_beyond_atoms"), zero));
        }
    }
    let notes = targets
        .iter()
        .enumerate()
        .map(|(i, t)| format!("target{i}: {}", serde_json::to_string(t).unwrap_or_default()))
        .collect();
    let mut report = CheckReport::new(Fingerprint::new(&Study::Tails.name(), cfg), items, notes);
    report.diagnostics = diagnostics;
    Ok(report)
}
