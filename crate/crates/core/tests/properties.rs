//! Cross-module properties over randomly drawn datasets, schedules and probes.

use cmlab_core::consistency::{loss_ct, ConsistencyFunction, ConsistencyNet, LossOptions, Sampling, W1Estimator};
use cmlab_core::flow::{probe_lipschitz_map, FlowStep};
use cmlab_core::nn::Mlp;
use cmlab_core::score::{empirical_score, lipschitz_certificate, mixture_score_jacobian, posterior_mean};
use cmlab_core::{Dataset, EmpiricalScore, PointCloud, Schedule, TargetDistribution};
use proptest::prelude::*;

fn schedule() -> impl Strategy<Value = Schedule> {
    prop_oneof![
        (0.2f64..3.0, 1.0f64..4.0).prop_map(|(b, t)| Schedule::constant(b, t, 1e-2).unwrap()),
        (0.05f64..1.0, 1.0f64..15.0).prop_map(|(lo, extra)| Schedule::linear(lo, lo + extra, 1.0, 1e-2).unwrap()),
    ]
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..3, 1usize..12).prop_flat_map(|(d, n)| {
        proptest::collection::vec(-2.0f64..2.0, n * d).prop_map(move |v| {
            Dataset::from_cloud(PointCloud::new(d, v).unwrap(), TargetDistribution::standard_gaussian(d), 0)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tweedie_jacobian_and_certificate(ds in dataset(), s in schedule(), u in 0.0f64..1.0, z in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let t = s.eps() + u * (s.t_max() - s.eps());
        let (m, sd) = s.coeffs(t).unwrap();
        let x: Vec<f64> = z[..ds.dim()].to_vec();
        let score = empirical_score(&ds, &s, &x, t).unwrap();
        let pm = posterior_mean(&ds, &s, &x, t).unwrap();
        for i in 0..x.len() {
            let tw = (m * pm[i] - x[i]) / (sd * sd);
            prop_assert!((tw - score[i]).abs() <= 1e-10 * score[i].abs().max(1.0));
        }
        let jac = mixture_score_jacobian(&ds, &s, &x, t).unwrap();
        prop_assert!((&jac - jac.transpose()).amax() <= 1e-12 * jac.amax().max(1.0));
        let eig = jac.clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() >= -1.0 / (sd * sd) - 1e-9 * jac.amax().max(1.0));
        let spectral = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let cert = lipschitz_certificate(&ds, &s, t).unwrap();
        prop_assert!(spectral <= cert.bound * (1.0 + 1e-12));
    }

    #[test]
    fn boundary_and_composition_are_exact(ds in dataset(), s in schedule(), n_coarse in 1usize..4, m in 1usize..6, z in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let grid = s.build_grid(n_coarse, m).unwrap();
        let fs = FlowStep::new(EmpiricalScore::new(ds.clone(), s.clone()), grid.clone()).unwrap();
        let x: Vec<f64> = z[..ds.dim()].to_vec();
        prop_assert_eq!(fs.solve_from(&x, s.eps()).unwrap(), x.clone());
        for k in 1..=n_coarse {
            let direct = fs.solve_from_index(&x, grid.coarse_index(k)).unwrap();
            let via = fs.solve_from_index(&fs.g_multi(&x, k).unwrap(), grid.coarse_index(k - 1)).unwrap();
            prop_assert!(direct.iter().zip(&via).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn projected_network_respects_its_budget(seed in 0u64..1000, r in 1.0f64..20.0, d in 1usize..3) {
        let s = Schedule::constant(1.0, 2.0, 1e-2).unwrap();
        let raw = Mlp::new(&[d + 1, 8, d], seed).unwrap();
        let mut net = ConsistencyNet::from_parts(raw, s.clone(), Some(r)).unwrap();
        net.project();
        let cert = net.certified_lipschitz();
        prop_assert!(cert <= r * (1.0 + 1e-9));
        let probes = TargetDistribution::standard_gaussian(d).sample(64, seed).unwrap();
        for t in [s.eps(), 0.5, s.t_max()] {
            let x0 = probes.point(0).to_vec();
            prop_assert_eq!(net.eval(&x0, s.eps()).unwrap(), x0);
            let dq = probe_lipschitz_map(|x| net.eval(x, t), &probes, 1e-4, seed).unwrap();
            prop_assert!(dq.probed <= cert * (1.0 + 1e-6));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn loss_is_nonnegative_and_additive(seed in 0u64..1000, n in 1usize..8) {
        let s = Schedule::constant(1.0, 2.0, 1e-2).unwrap();
        let ds = Dataset::sample(&TargetDistribution::UniformBall { dim: 1, radius: 1.0 }, n, seed).unwrap();
        let grid = s.build_grid(3, 4).unwrap();
        let raw = Mlp::new(&[2, 8, 1], seed).unwrap();
        let net = ConsistencyNet::from_parts(raw, s.clone(), None).unwrap();
        let opts = LossOptions { estimator: W1Estimator::Auto, sampling: Sampling::Coupled };
        let l = loss_ct(&net, &ds, &grid, &s, 64, seed, opts).unwrap();
        prop_assert!(l.per_interval.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(l.total, l.per_interval.iter().sum::<f64>());
        let again = loss_ct(&net, &ds, &grid, &s, 64, seed, opts).unwrap();
        prop_assert_eq!(l, again);
    }

    #[test]
    fn sampling_is_bit_reproducible(seed in proptest::num::u64::ANY, m in 1usize..50) {
        for td in [
            TargetDistribution::standard_gaussian(2),
            TargetDistribution::two_point_symmetric(1.0),
            TargetDistribution::UniformBall { dim: 3, radius: 2.0 },
        ] {
            let a = td.sample(m, seed).unwrap();
            let b = td.sample(m, seed).unwrap();
            prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
