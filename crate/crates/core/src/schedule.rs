//! Variance-preserving noise schedules and time grids.
//!
//! The forward process `dx = -β(t)/2 x dt + sqrt(β(t)) dW` has Gaussian
//! transition kernels with mean coefficient `m(t) = exp(-½∫₀ᵗβ)` and
//! standard deviation `σ(t) = sqrt(1 - m(t)²)`. Both are evaluated through
//! the closed-form integral of β.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct Schedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    t_max: f64,
    eps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawSchedule {
    kind: ScheduleKind,
    beta_min: f64,
    beta_max: f64,
    #[serde(rename = "T")]
    t_max: f64,
    eps: f64,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = Error;
    fn try_from(r: RawSchedule) -> Result<Self> {
        Schedule::new(r.kind, r.beta_min, r.beta_max, r.t_max, r.eps)
    }
}

impl From<Schedule> for RawSchedule {
    fn from(s: Schedule) -> Self {
        RawSchedule { kind: s.kind, beta_min: s.beta_min, beta_max: s.beta_max, t_max: s.t_max, eps: s.eps }
    }
}

impl Schedule {
    pub fn new(kind: ScheduleKind, beta_min: f64, beta_max: f64, t_max: f64, eps: f64) -> Result<Self> {
        let finite = [beta_min, beta_max, t_max, eps].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::arg("schedule parameters must be finite"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max) {
            return Err(Error::arg(format!("need 0 < beta_min <= beta_max, got [{beta_min}, {beta_max}]")));
        }
        if kind == ScheduleKind::Constant && beta_min != beta_max {
            return Err(Error::arg("constant schedule needs beta_min == beta_max"));
        }
        if !(eps > 0.0 && eps < t_max) {
            return Err(Error::arg(format!("need 0 < eps < T, got eps = {eps}, T = {t_max}")));
        }
        Ok(Schedule { kind, beta_min, beta_max, t_max, eps })
    }

    pub fn constant(beta: f64, t_max: f64, eps: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant, beta, beta, t_max, eps)
    }

    pub fn linear(beta_min: f64, beta_max: f64, t_max: f64, eps: f64) -> Result<Self> {
        Self::new(ScheduleKind::Linear, beta_min, beta_max, t_max, eps)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }
    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }
    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Same β(t) with a different horizon or early-stopping time.
    pub fn with_times(&self, t_max: f64, eps: f64) -> Result<Self> {
        Self::new(self.kind, self.beta_min, self.beta_max, t_max, eps)
    }

    fn check(&self, t: f64) -> Result<()> {
        if (0.0..=self.t_max).contains(&t) {
            Ok(())
        } else {
            Err(Error::Domain { what: "t", value: t, lo: 0.0, hi: self.t_max })
        }
    }

    fn beta_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.beta_min,
            ScheduleKind::Linear => self.beta_min + (self.beta_max - self.beta_min) * t / self.t_max,
        }
    }

    /// ∫₀ᵗ β(s) ds.
    fn integral_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.beta_min * t,
            ScheduleKind::Linear => self.beta_min * t + (self.beta_max - self.beta_min) * t * t / (2.0 * self.t_max),
        }
    }

    pub fn beta_at(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.beta_unchecked(t))
    }

    pub fn beta_integral(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.integral_unchecked(t))
    }

    /// m(t) = exp(-½∫₀ᵗβ).
    pub fn mean_coeff(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok((-0.5 * self.integral_unchecked(t)).exp())
    }

    /// σ(t) = sqrt(1 - m(t)²), evaluated as sqrt(-expm1(-∫β)) so small t keeps
    /// full relative precision.
    pub fn std_coeff(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok((-(-self.integral_unchecked(t)).exp_m1()).sqrt())
    }

    /// (m(t), σ(t)) in one call.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        let b = self.integral_unchecked(t);
        Ok(((-0.5 * b).exp(), (-(-b).exp_m1()).sqrt()))
    }

    /// Whether β̄ < 1 / (d log n + d² log(d/ε)). Recorded, never enforced.
    pub fn satisfies_bounded_coefficient(&self, dim: usize, n: usize) -> bool {
        let d = dim as f64;
        let denom = d * (n as f64).ln() + d * d * (d / self.eps).ln();
        denom > 0.0 && self.beta_max < 1.0 / denom
    }

    pub fn build_grid(&self, n_coarse: usize, m: usize) -> Result<TimeGrid> {
        TimeGrid::new(self, n_coarse, m)
    }
}

/// Uniform discretization `eps = t_0 < … < t_N = T` with coarse sub-grid
/// `τ_k = t_{kM}`, `N = N′·M`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    n_coarse: usize,
    m: usize,
    dt: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(s: &Schedule, n_coarse: usize, m: usize) -> Result<Self> {
        if n_coarse == 0 || m == 0 {
            return Err(Error::arg(format!("grid counts must be positive, got N'={n_coarse}, M={m}")));
        }
        let n = n_coarse.checked_mul(m).ok_or_else(|| Error::arg("N' * M overflows"))?;
        let (eps, t_max) = (s.eps(), s.t_max());
        let dt = (t_max - eps) / n as f64;
        let mut times: Vec<f64> = (0..=n).map(|k| eps + k as f64 * dt).collect();
        times[n] = t_max;
        Ok(TimeGrid { n_coarse, m, dt, times })
    }

    /// Total fine steps N.
    pub fn n_fine(&self) -> usize {
        self.times.len() - 1
    }
    pub fn n_coarse(&self) -> usize {
        self.n_coarse
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }
    pub fn eps(&self) -> f64 {
        self.times[0]
    }
    pub fn t_max(&self) -> f64 {
        self.times[self.n_fine()]
    }

    /// Fine index of τ_k.
    pub fn coarse_index(&self, k: usize) -> usize {
        k * self.m
    }

    pub fn coarse_indices(&self) -> Vec<usize> {
        (0..=self.n_coarse).map(|k| self.coarse_index(k)).collect()
    }

    pub fn tau(&self, k: usize) -> f64 {
        self.times[self.coarse_index(k)]
    }

    /// Fine index whose time equals `t` up to a relative tolerance, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.eps()) / self.dt;
        let k = x.round();
        if k < 0.0 || k as usize > self.n_fine() {
            return None;
        }
        let k = k as usize;
        let tol = 1e-9 * self.dt.max(f64::MIN_POSITIVE);
        ((self.times[k] - t).abs() <= tol).then_some(k)
    }
}
