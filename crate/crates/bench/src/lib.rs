//! Shared fixtures for the criterion benches.

use cmlab_core::{Dataset, PointCloud, Schedule, TargetDistribution};

pub fn uniform_dataset(n: usize, seed: u64) -> Dataset {
    Dataset::sample(&TargetDistribution::UniformBall { dim: 1, radius: 1.0 }, n, seed).expect("dataset")
}

pub fn linear_schedule() -> Schedule {
    Schedule::linear(0.1, 25.0, 1.0, 1e-3).expect("schedule")
}

pub fn normal_cloud(dim: usize, m: usize, seed: u64) -> PointCloud {
    cmlab_core::lab::gaussian_inputs(dim, m, seed).expect("inputs")
}
