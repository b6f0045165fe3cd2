use homlab_core::sharp_cell::{
    estimate_alpha, min_jump_spacing, minimize_sharp_dp, sharp_energy, sharp_energy_with_step,
    sup_bound_check, Boundary, SawtoothProfile, Slope,
};
use homlab_core::{CoefficientField, DpGrid, FieldModel, HomlabError};
use proptest::prelude::*;

const A0: f64 = 8.0 / 3.0;

fn unit() -> CoefficientField {
    CoefficientField::constant(1.0).unwrap()
}

/// `min_h 2A_0/h + c h²/48` over uniform periods, by scanning.
fn uniform_oracle(c: f64) -> f64 {
    (1..100_000)
        .map(|i| {
            let h = i as f64 * 1e-4;
            2.0 * A0 / h + c * h * h / 48.0
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn affine_and_tent_energies() {
    let f = unit();
    let u = SawtoothProfile::centered(1.0, -0.5, Slope::Up, vec![]).unwrap();
    assert!((sharp_energy(&u, &f, 1.0, 1.0).unwrap() - 1.0 / 12.0).abs() < 1e-12);
    let tent = SawtoothProfile::centered(1.0, 0.0, Slope::Up, vec![0.0]).unwrap();
    let e1 = sharp_energy(&tent, &f, 1.0, 1.0).unwrap();
    assert!((e1 - (A0 + 1.0 / 12.0)).abs() < 1e-12);
    let e2 = sharp_energy(&tent, &f, 2.0, 1.0).unwrap();
    assert!((e2 - e1 - 1.0 / 12.0).abs() < 1e-12);
}

#[test]
fn window_mismatch_is_shape_error() {
    let u = SawtoothProfile::centered(1.0, 0.0, Slope::Up, vec![]).unwrap();
    assert!(matches!(
        sharp_energy(&u, &unit(), 1.0, 2.0),
        Err(HomlabError::Shape(_))
    ));
}

#[test]
fn free_window_sits_half_transition_per_end_below_alpha() {
    let (res, _) =
        minimize_sharp_dp(&unit(), 1.0, 50.0, &DpGrid::new(0.05, 0.05), Boundary::Free).unwrap();
    let target = uniform_oracle(1.0) - A0 / 50.0;
    assert!((res.energy_per_length - target).abs() / target < 1e-3);
    let (pinned, _) = minimize_sharp_dp(
        &unit(),
        1.0,
        50.0,
        &DpGrid::new(0.05, 0.05),
        Boundary::Pinned,
    )
    .unwrap();
    assert!((pinned.energy_per_length - uniform_oracle(1.0)).abs() / uniform_oracle(1.0) < 0.03);
}

/// Every pinned sawtooth on the `dx` grid with at most three jumps.
fn brute_force_pinned(r: f64, dx: f64) -> f64 {
    let steps = (r / dx).round() as usize;
    let f = unit();
    let node = |i: usize| -r / 2.0 + i as f64 * dx;
    let mut best = f64::INFINITY;
    let mut consider = |jumps: Vec<usize>, slope: Slope| {
        let ts: Vec<f64> = jumps.iter().map(|i| node(*i)).collect();
        let u = SawtoothProfile::centered(r, 0.0, slope, ts).unwrap();
        if u.end_value().abs() > dx * (1.0 + 1e-9) || sup_bound_check(&u) > 4.0 {
            return;
        }
        best = best.min(sharp_energy_with_step(&u, &f, 1.0, r, dx).unwrap());
    };
    for slope in [Slope::Down, Slope::Up] {
        consider(vec![], slope);
        for a in 1..steps {
            consider(vec![a], slope);
            for b in a + 1..steps {
                consider(vec![a, b], slope);
                for c in b + 1..steps {
                    consider(vec![a, b, c], slope);
                }
            }
        }
    }
    best
}

#[test]
fn dp_matches_brute_force_on_small_window() {
    let (res, profile) =
        minimize_sharp_dp(&unit(), 1.0, 2.0, &DpGrid::new(0.1, 0.1), Boundary::Pinned).unwrap();
    let oracle = brute_force_pinned(2.0, 0.1);
    assert!(profile.jump_count() <= 3);
    assert!(
        (res.energy_per_length - oracle).abs() < 1e-12,
        "{} vs {oracle}",
        res.energy_per_length
    );
}

#[test]
fn pinned_dominates_free() {
    let grid = DpGrid::new(0.05, 0.05);
    for seed in 1..4 {
        let f = CoefficientField::realize(&FieldModel::checkerboard_12(1.0), seed).unwrap();
        for r in [5.0, 13.0] {
            let (p, _) = minimize_sharp_dp(&f, 1.5, r, &grid, Boundary::Pinned).unwrap();
            let (q, _) = minimize_sharp_dp(&f, 1.5, r, &grid, Boundary::Free).unwrap();
            assert!(p.energy_per_length >= q.energy_per_length);
            assert!(q.energy_per_length >= 0.0);
        }
    }
}

#[test]
fn coarse_grid_refused() {
    let r = minimize_sharp_dp(&unit(), 1.0, 10.0, &DpGrid::new(1.0, 0.1), Boundary::Free);
    assert!(matches!(r, Err(HomlabError::GridTooCoarse { .. })));
}

#[test]
fn small_cap_refused() {
    // pinned windows never need more than ~1.3; a cap below the optimal
    // amplitude must be reported rather than silently clipped
    let r = minimize_sharp_dp(
        &unit(),
        1.0,
        20.0,
        &DpGrid::new(0.05, 0.05).with_cap(0.3),
        Boundary::Pinned,
    );
    assert!(matches!(r, Err(HomlabError::CapExceeded { .. })), "{r:?}");
}

#[test]
fn alpha_for_constant_fields() {
    let grid = DpGrid::new(0.05, 0.05);
    let e1 = estimate_alpha(
        &FieldModel::Constant { value: 1.0 },
        1.0,
        &[20.0, 50.0],
        &[1, 2],
        &grid,
        Boundary::Pinned,
    )
    .unwrap();
    assert!((e1.alpha - uniform_oracle(1.0)).abs() / uniform_oracle(1.0) < 0.01);
    assert!(e1.per_r.iter().all(|w| w.std < 1e-12));
    let e2 = estimate_alpha(
        &FieldModel::Constant { value: 2.0 },
        1.0,
        &[50.0],
        &[1, 2],
        &grid,
        Boundary::Pinned,
    )
    .unwrap();
    assert!((e2.alpha - 2.0).abs() / 2.0 < 0.01, "{}", e2.alpha);
    assert!((uniform_oracle(2.0) - 2.0).abs() < 1e-6);
}

#[test]
fn checkerboard_alpha_between_constant_fields() {
    let grid = DpGrid::new(0.05, 0.05);
    let seeds: Vec<u64> = (1..=4).collect();
    let e = estimate_alpha(
        &FieldModel::checkerboard_12(1.0),
        1.0,
        &[40.0],
        &seeds,
        &grid,
        Boundary::Pinned,
    )
    .unwrap();
    assert!(
        e.alpha > uniform_oracle(1.0) && e.alpha < uniform_oracle(2.0),
        "{}",
        e.alpha
    );
}

#[test]
fn estimate_alpha_rejects_bad_schedules() {
    let grid = DpGrid::new(0.05, 0.05);
    let m = FieldModel::Constant { value: 1.0 };
    assert!(estimate_alpha(&m, 1.0, &[], &[1, 2], &grid, Boundary::Pinned).is_err());
    assert!(estimate_alpha(&m, 1.0, &[20.0, 10.0], &[1, 2], &grid, Boundary::Pinned).is_err());
    assert!(estimate_alpha(&m, 1.0, &[10.0], &[1], &grid, Boundary::Pinned).is_err());
}

#[test]
fn spacing_and_sup_examples() {
    let u = SawtoothProfile::centered(2.0, 0.0, Slope::Up, vec![0.1, 0.5, 0.6]).unwrap();
    assert!((min_jump_spacing(&u) - 0.1f64).abs() < 1e-12);
    let one = SawtoothProfile::centered(2.0, 0.0, Slope::Up, vec![0.1]).unwrap();
    assert_eq!(min_jump_spacing(&one), 2.0);
    let tent = SawtoothProfile::centered(1.0, 0.0, Slope::Up, vec![0.0]).unwrap();
    assert_eq!(sup_bound_check(&tent), 0.5);
    let line = SawtoothProfile::centered(2.0, -1.0, Slope::Up, vec![]).unwrap();
    assert_eq!(sup_bound_check(&line), 1.0);
}

#[test]
fn minimizer_spacing_and_amplitude_uniform_in_r() {
    let grid = DpGrid::new(0.05, 0.05);
    let h = (48.0 * A0).cbrt();
    let mut spacings = Vec::new();
    for r in [10.0, 25.0, 50.0, 100.0] {
        let (res, u) = minimize_sharp_dp(&unit(), 1.0, r, &grid, Boundary::Pinned).unwrap();
        assert!(sup_bound_check(&u) <= h / 4.0 + grid.dx + 1e-9);
        assert!((res.sup_abs_u - sup_bound_check(&u)).abs() < 1e-12);
        spacings.push(min_jump_spacing(&u));
    }
    let eta = spacings.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(eta > 1.0, "{spacings:?}");
}

#[test]
fn jump_density_settles() {
    let grid = DpGrid::new(0.05, 0.05);
    let (a, _) = minimize_sharp_dp(&unit(), 1.0, 50.0, &grid, Boundary::Pinned).unwrap();
    let (b, _) = minimize_sharp_dp(&unit(), 1.0, 100.0, &grid, Boundary::Pinned).unwrap();
    let (da, db) = (a.jump_count as f64 / 50.0, b.jump_count as f64 / 100.0);
    assert!((da - db).abs() / db < 0.05, "{da} {db}");
}

#[test]
fn seed_spread_shrinks() {
    let grid = DpGrid::new(0.05, 0.05);
    let seeds: Vec<u64> = (1..=20).collect();
    let e = estimate_alpha(
        &FieldModel::checkerboard_12(1.0),
        1.0,
        &[10.0, 40.0, 160.0],
        &seeds,
        &grid,
        Boundary::Pinned,
    )
    .unwrap();
    let s: Vec<f64> = e.per_r.iter().map(|w| w.std).collect();
    let inversions = s.windows(2).filter(|w| w[1] > 1.1 * w[0]).count();
    assert!(inversions == 0 && s[2] < s[0], "{s:?}");
    assert!(!e.flagged);
}

#[test]
fn comparison_monotonicity() {
    let grid = DpGrid::new(0.05, 0.05);
    let lo = CoefficientField::realize(&FieldModel::checkerboard_12(1.0), 9).unwrap();
    let hi = CoefficientField::constant(2.0).unwrap();
    let (a, _) = minimize_sharp_dp(&lo, 1.0, 20.0, &grid, Boundary::Free).unwrap();
    let (b, _) = minimize_sharp_dp(&hi, 1.0, 20.0, &grid, Boundary::Free).unwrap();
    let (c, _) = minimize_sharp_dp(&unit(), 1.0, 20.0, &grid, Boundary::Free).unwrap();
    assert!(c.energy_per_length <= a.energy_per_length);
    assert!(a.energy_per_length <= b.energy_per_length);
}

#[test]
fn single_precision_dp() {
    let f = homlab_core::coeff::CoefficientField::<f32>::constant(1.0).unwrap();
    let (res, _) =
        minimize_sharp_dp(&f, 1.0f32, 20.0, &DpGrid::new(0.05, 0.05), Boundary::Pinned).unwrap();
    assert!((res.energy_per_length as f64 - uniform_oracle(1.0)).abs() < 0.05);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dp_never_beaten_by_grid_sawtooth(
        seed in 0u64..50,
        raw in proptest::collection::vec(1usize..199, 0..8),
        up in any::<bool>(),
    ) {
        let r = 10.0;
        let dx = 0.05;
        let f = CoefficientField::realize(&FieldModel::checkerboard_12(1.0), seed).unwrap();
        let mut idx = raw;
        idx.sort();
        idx.dedup();
        let jumps: Vec<f64> = idx.iter().map(|i| -r / 2.0 + *i as f64 * dx).collect();
        let slope = if up { Slope::Up } else { Slope::Down };
        let v = SawtoothProfile::centered(r, 0.0, slope, jumps).unwrap();
        prop_assume!(sup_bound_check(&v) <= 4.0);
        let (res, _) = minimize_sharp_dp(&f, 1.0, r, &DpGrid::new(dx, dx), Boundary::Free).unwrap();
        let e = sharp_energy_with_step(&v, &f, 1.0, r, 1e-3).unwrap();
        prop_assert!(res.energy_per_length <= e + 1e-9);
    }

    #[test]
    fn profile_continuous_with_unit_slopes(
        raw in proptest::collection::vec(-4.9f64..4.9, 0..10),
        anchor in -1.0f64..1.0,
    ) {
        let mut jumps = raw;
        jumps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        jumps.dedup();
        let u = SawtoothProfile::centered(10.0, anchor, Slope::Up, jumps).unwrap();
        let mut prev = u.eval(-5.0);
        for i in 1..=1000 {
            let t = -5.0 + i as f64 * 0.01;
            let v = u.eval(t);
            prop_assert!((v - prev).abs() <= 0.01 + 1e-9);
            prev = v;
        }
    }
}
