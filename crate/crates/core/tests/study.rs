use proptest::prelude::*;
use soir::estimators::EstimatorSettings;
use soir::image::MethodId;
use soir::sim::{run_study, CoefImageKind, SimScenario, StudyResults};

fn small(kind: CoefImageKind, replications: usize, seed: u64) -> SimScenario {
    SimScenario {
        n: 40,
        side: 16,
        replications,
        master_seed: seed,
        ..SimScenario::desk(kind)
    }
}

fn study(scenario: &SimScenario, methods: &[MethodId]) -> StudyResults {
    run_study(scenario, methods, &EstimatorSettings::desk()).unwrap()
}

#[test]
fn smoke_rows_are_complete_and_finite() {
    let methods = [MethodId::Pcr2d, MethodId::Wcr];
    let r = study(&small(CoefImageKind::Bumpy, 2, 3), &methods);
    assert!(r.failures.is_empty());
    for m in methods {
        for metric in [
            "est_error",
            "pred_error",
            "smoothness_image",
            "sparsity_image",
        ] {
            let v = r.values(m.as_str(), metric);
            assert_eq!(v.len(), 2, "{m} {metric}");
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }
    assert_eq!(r.values("truth", "sigma_eps").len(), 2);
    assert_eq!(r.median_estimates.len(), 2);
}

#[test]
fn same_seed_same_table() {
    let s = small(CoefImageKind::Sparse, 2, 9);
    let csv = |r: StudyResults| {
        let mut b = Vec::new();
        r.write_csv(&mut b).unwrap();
        b
    };
    let a = csv(study(&s, &[MethodId::Splines, MethodId::Wpls]));
    let b = csv(study(&s, &[MethodId::Splines, MethodId::Wpls]));
    assert_eq!(a, b);
    let other = csv(study(
        &SimScenario {
            master_seed: 10,
            ..s
        },
        &[MethodId::Splines, MethodId::Wpls],
    ));
    assert_ne!(a, other);
}

#[test]
fn noiseless_pca_truth_favours_pcr2d() {
    let s = SimScenario {
        snr: 1e6,
        ..small(CoefImageKind::Pca, 1, 4)
    };
    let methods = [MethodId::Pcr2d, MethodId::Splines, MethodId::Wcr];
    let r = study(&s, &methods);
    let err = |m: MethodId| r.median_of(m.as_str(), "est_error").unwrap();
    assert!(err(MethodId::Pcr2d) < 1e-3, "{}", err(MethodId::Pcr2d));
    for m in &methods[1..] {
        assert!(err(MethodId::Pcr2d) < err(*m), "{m}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn prediction_error_never_exceeds_baseline(seed in 0u64..1000, kind in 0usize..4) {
        let r = study(&small(CoefImageKind::ALL[kind], 1, seed), &[MethodId::Pcr2d, MethodId::Wcr]);
        for m in [MethodId::Pcr2d, MethodId::Wcr] {
            for v in r.values(m.as_str(), "pred_error") {
                prop_assert!((0.0..=1.0).contains(&v), "{} {}", m, v);
            }
        }
    }
}
