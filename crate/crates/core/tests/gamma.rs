use homlab_core::gamma::{
    check_yosida_properties, default_probes, gamma_distance, micro_integrand, sharp_integrand,
    sharp_snapshot, single_transition_probe, squash, yosida, yosida_table, ProbeShape, SamplePoint,
    SnapshotGrid,
};
use homlab_core::{a0, CoefficientField, DiscretizedFunctional, GammaDistanceConfig, HomlabError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.25;

fn random_functional(seed: u64, n: usize, len: usize) -> DiscretizedFunctional {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| SamplePoint {
            u: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            y: rng.random_range(-0.25..0.25),
        })
        .collect();
    let values = (0..n)
        .map(|i| {
            if i > 0 && rng.random_bool(0.1) {
                f64::INFINITY
            } else {
                rng.random_range(0.0..3.0)
            }
        })
        .collect();
    DiscretizedFunctional::new(0.0, STEP, samples, values).unwrap()
}

fn with_values(f: &DiscretizedFunctional, seed: u64) -> DiscretizedFunctional {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = f
        .values
        .iter()
        .map(|_| rng.random_range(0.0..3.0))
        .collect();
    DiscretizedFunctional::new(f.t0, f.step, f.samples.clone(), values).unwrap()
}

fn brute_yosida(f: &DiscretizedFunctional, l: f64, p: &SamplePoint<f64>) -> f64 {
    let mut best = f64::INFINITY;
    for (s, v) in f.samples.iter().zip(&f.values) {
        if !v.is_finite() {
            continue;
        }
        let mut sq = 0.0;
        for (a, b) in s.u.iter().zip(&p.u) {
            sq += (a - b).powi(2);
        }
        best = best.min(v + l * ((sq * STEP).sqrt() + (s.y - p.y).abs()));
    }
    best
}

#[test]
fn yosida_matches_brute_force() {
    let f = random_functional(3, 40, 6);
    let probes = random_functional(4, 10, 6);
    for l in [0.1, 1.0, 7.5] {
        for p in &probes.samples {
            let a = yosida(&f, l, p).unwrap();
            let b = brute_yosida(&f, l, p);
            assert!((a - b).abs() <= 1e-14 * b.max(1.0), "{a} {b}");
        }
    }
}

#[test]
fn distance_matches_hand_sum() {
    let f = random_functional(5, 30, 4);
    let g = with_values(&f, 6);
    let probes = random_functional(7, 20, 4).samples;
    let cfg = GammaDistanceConfig::new(probes.clone());
    let mut want = 0.0;
    for l in [1.0, 2.0, 4.0, 8.0, 16.0] {
        // only the first 16 probes count, k numbered from 1
        for (k, p) in probes.iter().take(16).enumerate() {
            let w = 0.5f64.powf(l + (k + 1) as f64);
            let a = brute_yosida(&f, l, p);
            let b = brute_yosida(&g, l, p);
            want += w * (a / (1.0 + a) - b / (1.0 + b)).abs();
        }
    }
    let got = gamma_distance(&f, &g, &cfg).unwrap();
    assert!((got - want).abs() < 1e-14, "{got} {want}");
}

#[test]
fn probes_past_truncation_are_ignored() {
    let f = random_functional(8, 20, 3);
    let g = with_values(&f, 9);
    let probes = random_functional(10, 16, 3).samples;
    let mut longer = probes.clone();
    longer.extend(random_functional(11, 5, 3).samples);
    let a = gamma_distance(&f, &g, &GammaDistanceConfig::new(probes)).unwrap();
    let b = gamma_distance(&f, &g, &GammaDistanceConfig::new(longer)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn squash_examples() {
    assert_eq!(squash(0.0), 0.0);
    assert_eq!(squash(1.0), 0.5);
    assert_eq!(squash(f64::INFINITY), 1.0);
}

#[test]
fn yosida_properties_hold_on_random_functionals() {
    for seed in 0..5 {
        let f = random_functional(seed, 60, 5);
        let r = check_yosida_properties(&f, &[0.5, 1.0, 2.0, 4.0, 1e6], 500, seed);
        assert!(r.passed(), "{seed}: {r:?}");
        assert_eq!(r.checked_pairs, 500);
    }
}

#[test]
fn huge_lambda_recovers_values() {
    let f = random_functional(12, 25, 4);
    for (s, v) in f.samples.iter().zip(&f.values) {
        if v.is_finite() {
            assert_eq!(yosida(&f, 1e9, s).unwrap(), *v);
        }
    }
}

#[test]
fn config_validation() {
    let probes = random_functional(1, 3, 2).samples;
    assert!(GammaDistanceConfig::new(probes.clone()).validate().is_ok());
    let bad = [
        GammaDistanceConfig::new(vec![]),
        GammaDistanceConfig {
            truncation: 0,
            ..GammaDistanceConfig::new(probes.clone())
        },
        GammaDistanceConfig {
            lambdas: vec![1.0, 1.0],
            ..GammaDistanceConfig::new(probes.clone())
        },
        GammaDistanceConfig {
            lambdas: vec![0.0, 1.0],
            ..GammaDistanceConfig::new(probes)
        },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(HomlabError::Parameter(_))));
    }
}

#[test]
fn mismatched_functionals_rejected() {
    let f = random_functional(1, 5, 3);
    let g = random_functional(1, 5, 4);
    let cfg = GammaDistanceConfig::new(f.samples.clone());
    assert!(matches!(
        gamma_distance(&f, &g, &cfg),
        Err(HomlabError::Shape(_))
    ));
    assert!(matches!(yosida_table(&g, &cfg), Err(HomlabError::Shape(_))));
    assert!(DiscretizedFunctional::new(0.0, 1.0, f.samples.clone(), vec![1.0; 4]).is_err());
    assert!(DiscretizedFunctional::new(0.0, 1.0, f.samples.clone(), vec![-1.0; 5]).is_err());
    assert!(DiscretizedFunctional::new(0.0, 1.0, f.samples, vec![f64::INFINITY; 5]).is_err());
}

#[test]
fn default_probe_mix() {
    let p = default_probes(1);
    assert_eq!(p.len(), 64);
    let count = |f: fn(&ProbeShape) -> bool| p.iter().filter(|q| f(&q.shape)).count();
    assert_eq!(count(|s| matches!(s, ProbeShape::Sawtooth { .. })), 24);
    assert_eq!(count(|s| matches!(s, ProbeShape::Affine { .. })), 12);
    assert_eq!(count(|s| matches!(s, ProbeShape::Transition { .. })), 16);
    assert_eq!(count(|s| matches!(s, ProbeShape::Noise { .. })), 12);
    assert!(count(|s| !s.is_sawtooth()) > 0);
    assert!(p.iter().all(|q| [-0.25, 0.0, 0.25].contains(&q.y)));
    assert_eq!(p, default_probes(1));
    assert_ne!(p, default_probes(2));
}

#[test]
fn probe_shapes_by_hand() {
    let saw = ProbeShape::Sawtooth {
        period: 1.0,
        phase: 0.0,
        offset: -0.25,
    };
    assert_eq!(saw.sharp(0.0), -0.25);
    assert_eq!(saw.sharp(0.5), 0.25);
    assert_eq!(saw.sharp(0.75), 0.0);
    assert_eq!(saw.sharp(1.25), 0.0);
    let tr = ProbeShape::Transition {
        at: 0.1,
        offset: 0.0,
    };
    assert!((tr.sharp(-0.4) - 0.5).abs() < 1e-15);
    assert!(saw.is_sawtooth() && tr.is_sawtooth());
    assert!(ProbeShape::Affine {
        slope: -1.0,
        offset: 0.0
    }
    .is_sawtooth());
    assert!(!ProbeShape::Affine {
        slope: 0.5,
        offset: 0.0
    }
    .is_sawtooth());
    let noise = ProbeShape::Noise {
        seed: 3,
        amplitude: 0.2,
    };
    assert!(!noise.is_sawtooth());
    assert_eq!(noise.sharp(0.3), noise.sharp(0.3));
}

#[test]
fn snapshot_grid_resolution() {
    for eps in [0.1, 0.03, 0.01] {
        let g = SnapshotGrid::for_eps(eps);
        assert!(g.step <= eps * eps / 48.0);
        assert!(((1.0 / g.step).round() * g.step - 1.0).abs() < 1e-12);
        assert!((g.t(g.nodes() - 1) - g.half_width).abs() < 1e-9);
    }
}

#[test]
fn sharp_integrand_examples() {
    let field = CoefficientField::constant(1.0).unwrap();
    let grid = SnapshotGrid {
        half_width: 0.8,
        step: 1e-3,
    };
    let noise = ProbeShape::Noise {
        seed: 1,
        amplitude: 0.1,
    };
    assert_eq!(
        sharp_integrand(&noise, &grid, 0.0, &field, 1.0).unwrap(),
        f64::INFINITY
    );
    // one flip at 0 with offset 0: A_0 + ∫ t² over [-1/2, 1/2]
    let tr = ProbeShape::Transition {
        at: 0.0,
        offset: 0.0,
    };
    let v = sharp_integrand(&tr, &grid, 0.0, &field, 2.0).unwrap();
    assert!((v - (a0::<f64>() + 2.0 / 12.0)).abs() < 1e-6, "{v}");
    // slope one, no flip: ∫ (t + 1/4)² over [-1/4, 3/4]
    let line = ProbeShape::Affine {
        slope: 1.0,
        offset: 0.0,
    };
    let v = sharp_integrand(&line, &grid, 0.25, &field, 1.0).unwrap();
    assert!((v - (0.75f64.powi(3) + 0.25f64.powi(3)) / 3.0).abs() < 1e-6);
    assert!(matches!(
        sharp_integrand(&tr, &grid, 0.5, &field, 1.0),
        Err(HomlabError::Domain(_))
    ));
}

#[test]
fn micro_integrand_of_zero_window() {
    let field = CoefficientField::constant(1.0).unwrap();
    let grid = SnapshotGrid::for_eps(0.1);
    let u = vec![0.0; grid.nodes()];
    // W(0)/ε² over a unit window with the quartic well (1 - u²)²
    let v = micro_integrand(&u, &grid, 0.0, 0.1, &field, 1.0).unwrap();
    assert!((v - 100.0).abs() < 1e-9, "{v}");
}

#[test]
fn sharp_snapshot_marks_non_sawtooth_infinite() {
    let field = CoefficientField::constant(1.0).unwrap();
    let probes = default_probes(4);
    let snap = sharp_snapshot(&probes, &SnapshotGrid::for_eps(0.2), &field, 1.0).unwrap();
    for (p, v) in probes.iter().zip(&snap.values) {
        assert_eq!(v.is_finite(), p.shape.is_sawtooth(), "{}", p.label);
    }
}

#[test]
fn single_transition_approaches_sharp_value() {
    let field = CoefficientField::constant(1.0).unwrap();
    let (coarse, sharp) = single_transition_probe(0.05, 0.1, -0.2, &field, 1.0).unwrap();
    let (fine, sharp2) = single_transition_probe(5e-3, 0.1, -0.2, &field, 1.0).unwrap();
    assert!((sharp - sharp2).abs() < 1e-4);
    // the optimal profile carries A_0 at every ε, so both sit close to the limit
    for v in [coarse, fine] {
        assert!((v - sharp).abs() / sharp < 5e-3, "{v} {sharp}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distance_is_a_pseudometric(seed in 0u64..10_000) {
        let base = random_functional(seed, 12, 3);
        let f = with_values(&base, seed + 1);
        let g = with_values(&base, seed + 2);
        let h = with_values(&base, seed + 3);
        let cfg = GammaDistanceConfig::new(random_functional(seed + 4, 16, 3).samples);
        let fg = gamma_distance(&f, &g, &cfg).unwrap();
        let gf = gamma_distance(&g, &f, &cfg).unwrap();
        let gh = gamma_distance(&g, &h, &cfg).unwrap();
        let fh = gamma_distance(&f, &h, &cfg).unwrap();
        prop_assert!(fg >= 0.0);
        prop_assert_eq!(fg, gf);
        prop_assert_eq!(gamma_distance(&f, &f, &cfg).unwrap(), 0.0);
        prop_assert!(fh <= fg + gh + 1e-15);
    }

    #[test]
    fn yosida_is_lipschitz_and_below_values(seed in 0u64..10_000, l in 0.1f64..20.0) {
        let f = random_functional(seed, 15, 3);
        let p = random_functional(seed + 1, 2, 3).samples;
        let a = yosida(&f, l, &p[0]).unwrap();
        let b = yosida(&f, l, &p[1]).unwrap();
        prop_assert!((a - b).abs() <= l * f.distance(&p[0], &p[1]) * (1.0 + 1e-12) + 1e-12);
        for (s, v) in f.samples.iter().zip(&f.values) {
            prop_assert!(yosida(&f, l, s).unwrap() <= *v);
            prop_assert!(yosida(&f, l, s).unwrap() <= yosida(&f, 2.0 * l, s).unwrap());
        }
    }
}
