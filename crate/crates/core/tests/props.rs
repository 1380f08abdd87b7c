//! Property tests: randomized instances of the structural invariants.

use proptest::prelude::*;

use polymer_core::coarse::{CoarseGrainPlan, XEvaluator};
use polymer_core::disorder::{Disorder, DisorderLaw, EnvironmentField};
use polymer_core::kernel::{chapman_kolmogorov_residual, KernelTable};
use polymer_core::oracle;
use polymer_core::partition::{cell_of, log_partition, ForwardEvolution, Renorm};
use polymer_core::stats::StreamingStat;

fn laws() -> impl Strategy<Value = DisorderLaw> {
    prop_oneof![
        Just(DisorderLaw::StandardGaussian),
        Just(DisorderLaw::Rademacher),
        (0.05f64..0.95).prop_map(|p| DisorderLaw::ShiftedBernoulli { p }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn chapman_kolmogorov(s in 1usize..12, t in 1usize..12, x0 in -6i64..=6, x1 in -6i64..=6) {
        let table = KernelTable::<f64>::build(2, 24).unwrap();
        let r = chapman_kolmogorov_residual(&table, s, t, &[x0, x1]).unwrap();
        prop_assert!(r < 1e-12, "residual {r}");
    }

    #[test]
    fn field_access_is_pure(law in laws(), seed in any::<u64>(), n in 1i64..32, x0 in -16i64..=16, x1 in -16i64..=16) {
        let f = EnvironmentField::new(law, seed, 2, 32, 16);
        let a = f.omega(n, &[x0, x1]).unwrap();
        let b = f.omega(n, &[x0, x1]).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn renormalization_invariance(law in laws(), seed in any::<u64>(), beta in 0.0f64..1.2, n in 1usize..14) {
        let f = EnvironmentField::new(law, seed, 2, n as i64, n as i64);
        let every = {
            let mut ev = ForwardEvolution::<f64, _>::new(&f, beta, n, None).unwrap();
            for _ in 0..n { ev.step().unwrap(); }
            ev.log_zhat()
        };
        let never = {
            let mut ev = ForwardEvolution::<f64, _>::new(&f, beta, n, None).unwrap().with_renorm(Renorm::Never);
            for _ in 0..n { ev.step().unwrap(); }
            ev.log_zhat()
        };
        prop_assert!((every - never).abs() < 1e-12, "{every} vs {never}");
    }

    #[test]
    fn transfer_matrix_agrees_with_enumeration(law in laws(), seed in any::<u64>(), beta in 0.0f64..1.0, n in 1usize..6) {
        let f = EnvironmentField::new(law, seed, 2, n as i64, n as i64);
        let (lz, _) = log_partition::<f64, _>(&f, beta, n, None).unwrap();
        let z = oracle::enumerate_paths_partition(&f, beta, n).unwrap();
        prop_assert!((z.ln() - lz).abs() < 1e-10);
    }

    #[test]
    fn x_contraction_agrees_with_enumeration(seed in any::<u64>(), q in 1usize..=2, u in 1usize..=3) {
        let plan = CoarseGrainPlan::new_manual(4, 0.05, 1, 2.0, 1, q.min(3), u).unwrap();
        let eval = XEvaluator::<f64>::new(plan.clone()).unwrap();
        let f = EnvironmentField::new(DisorderLaw::StandardGaussian, seed, 2, 4, 8);
        let a = eval.x_statistic(&f).unwrap();
        let b = oracle::enumerate_x_statistic(&plan, &f).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        let m2 = eval.exact_second_moment();
        prop_assert!(m2 <= 1.0 + 1e-12);
        prop_assert!((m2 - oracle::enumerate_x_second_moment(&plan).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cell_partition_covers_lattice(x0 in -40i64..=40, x1 in -40i64..=40, half in 1i64..=4) {
        let s = 2 * half;
        let y = cell_of(&[x0, x1], s);
        // membership: x - y s lies in (-s/2, s/2]
        for (c, yc) in [x0, x1].iter().zip(&y) {
            let d = c - yc * s;
            prop_assert!(d > -s / 2 && d <= s / 2, "x={c} y={yc} s={s}");
        }
    }

    #[test]
    fn welford_merge_matches_sequential(values in prop::collection::vec(-1e3f64..1e3, 2..200), split in 0usize..200) {
        let split = split.min(values.len());
        let mut whole = StreamingStat::new();
        for &v in &values { whole.push(v); }
        let mut left = StreamingStat::from_samples(&values[..split]);
        left.merge(&StreamingStat::from_samples(&values[split..]));
        prop_assert_eq!(left.count, whole.count);
        prop_assert!((left.mean() - whole.mean()).abs() <= 1e-9);
        prop_assert!((left.variance() - whole.variance()).abs() <= 1e-6 * whole.variance().max(1.0));
    }
}
