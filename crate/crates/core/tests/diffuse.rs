use homlab_core::diffuse::{
    build_test_function, default_cells, default_warm_starts, diffuse_energy, diffuse_gradient,
    local_average_integrand, minimize_diffuse, sharp_bounds, DiffuseProblem, DiscreteProfile,
    MicroProfile, WarmStart,
};
use homlab_core::lbfgs::LbfgsOptions;
use homlab_core::{CoefficientField, DpGrid, FieldModel, HomlabError, MacroModulus};
use proptest::prelude::*;

fn unit() -> CoefficientField {
    CoefficientField::constant(1.0).unwrap()
}

fn m1() -> MacroModulus {
    MacroModulus::Constant { m: 1.0 }
}

fn alpha(m: f64) -> f64 {
    2f64.powf(2.0 / 3.0) * m.cbrt()
}

#[test]
fn energy_examples() {
    let n = 1000;
    let zero = DiscreteProfile::zeros(n).unwrap();
    let line = DiscreteProfile::from_fn(n, |x: f64| x).unwrap();
    let e0 = diffuse_energy(&zero, 0.1, &unit(), &m1()).unwrap();
    let e1 = diffuse_energy(&line, 0.1, &unit(), &m1()).unwrap();
    let e2 = diffuse_energy(&line, 0.1, &unit(), &MacroModulus::Constant { m: 2.0 }).unwrap();
    assert!((e0 - 100.0).abs() < 1e-9);
    assert!((e1 - 100.0 / 3.0).abs() < 1e-3);
    assert!((e2 - 2.0 * e1).abs() < 1e-9 * e1);
}

#[test]
fn coarse_grid_refused_with_required_step() {
    let v = DiscreteProfile::zeros(50).unwrap();
    match diffuse_energy(&v, 0.1, &unit(), &m1()) {
        Err(HomlabError::GridTooCoarse { step, required }) => {
            assert!(step > required);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn zero_profile_is_critical() {
    let v = DiscreteProfile::zeros(500).unwrap();
    let g = diffuse_gradient(&v, 0.1, &unit(), &m1()).unwrap();
    assert!(g.iter().all(|x| *x == 0.0));
}

#[test]
fn grid_refinement_changes_energy_little() {
    let field = CoefficientField::realize(&FieldModel::checkerboard_12(1.0), 1).unwrap();
    let f = |x: f64| 0.05 * (2.0 * std::f64::consts::PI * x).sin() + 0.1 * x;
    let a = diffuse_energy(
        &DiscreteProfile::from_fn(2000, f).unwrap(),
        0.1,
        &field,
        &m1(),
    )
    .unwrap();
    let b = diffuse_energy(
        &DiscreteProfile::from_fn(4000, f).unwrap(),
        0.1,
        &field,
        &m1(),
    )
    .unwrap();
    assert!((a - b).abs() / b < 0.01, "{a} {b}");
}

#[test]
fn construction_on_single_cell_close_to_alpha() {
    let eps = 0.01;
    let problem = DiffuseProblem::new(eps, default_cells(eps), &unit(), &m1()).unwrap();
    let starts =
        default_warm_starts(&problem, &unit(), &m1(), &DpGrid::new(0.05, 0.05), 1).unwrap();
    let e = problem.energy(&starts[0].profile).unwrap();
    assert!(e <= alpha(1.0) + 0.15, "{e}");
    assert!((e - alpha(1.0)).abs() / alpha(1.0) < 0.10);
}

#[test]
fn empty_construction_is_a_plain_sawtooth() {
    let eps = 0.05;
    let n = default_cells(eps);
    let v = build_test_function::<f64>(&[], eps, 1.0, n).unwrap();
    let e = diffuse_energy(&v, eps, &unit(), &m1()).unwrap();
    assert!(e.is_finite() && e > 0.0 && e < 10.0, "{e}");
    let amp = v.values().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(amp <= eps, "{amp}");
}

#[test]
fn two_sided_squeeze_single_modulus() {
    let eps = 0.01;
    let grid = DpGrid::new(0.05, 0.05);
    let problem = DiffuseProblem::new(eps, default_cells(eps), &unit(), &m1()).unwrap();
    let bounds = sharp_bounds(&unit(), &m1(), eps, &grid, 1).unwrap();
    let starts = default_warm_starts(&problem, &unit(), &m1(), &grid, 1).unwrap();
    let upper = problem.energy(&starts[0].profile).unwrap();
    let opts = LbfgsOptions {
        max_iterations: 15,
        ..Default::default()
    };
    let r = minimize_diffuse(&problem, &starts[..1], &opts).unwrap();
    assert!(bounds.free <= r.energy && r.energy <= upper);
    assert!(upper - bounds.free <= 0.2 * alpha(1.0));
    assert!((r.energy - alpha(1.0)).abs() <= 0.15);
    assert!(r.converged || r.hit_iteration_cap);
}

#[test]
fn result_never_above_any_start() {
    let eps = 0.05;
    let field = CoefficientField::realize(&FieldModel::checkerboard_12(1.0), 2).unwrap();
    let problem = DiffuseProblem::new(eps, default_cells(eps), &field, &m1()).unwrap();
    let mut starts =
        default_warm_starts(&problem, &field, &m1(), &DpGrid::new(0.05, 0.05), 1).unwrap();
    starts.push(WarmStart {
        label: "wave".into(),
        profile: DiscreteProfile::from_fn(problem.cells(), |x: f64| 0.01 * (40.0 * x).sin())
            .unwrap(),
    });
    let opts = LbfgsOptions {
        max_iterations: 30,
        ..Default::default()
    };
    let r = minimize_diffuse(&problem, &starts, &opts).unwrap();
    for (s, rec) in starts.iter().zip(&r.starts) {
        let e0 = problem.energy(&s.profile).unwrap();
        assert!(r.energy <= e0);
        assert!(rec.final_energy <= rec.initial_energy);
    }
    assert_eq!(r.starts.len(), 3);
    assert!(r.energy >= 0.0);
}

#[test]
fn minimum_is_mesh_independent() {
    let eps = 0.05;
    let modulus = MacroModulus::PiecewiseConstant {
        breakpoints: vec![0.5],
        values: vec![1.0, 2.0],
    };
    let opts = LbfgsOptions {
        max_iterations: 200,
        ..Default::default()
    };
    let grid = DpGrid::new(0.05, 0.05);
    let mut es = Vec::new();
    for n in [default_cells(eps), 2 * default_cells(eps)] {
        let problem = DiffuseProblem::new(eps, n, &unit(), &modulus).unwrap();
        let starts = default_warm_starts(&problem, &unit(), &modulus, &grid, 1).unwrap();
        es.push(
            minimize_diffuse(&problem, &starts[..1], &opts)
                .unwrap()
                .energy,
        );
    }
    assert!((es[0] - es[1]).abs() / es[1] < 0.03, "{es:?}");
}

#[test]
fn minimizer_refuses_large_eps_and_coarse_grids() {
    let p = DiffuseProblem::new(0.2, 1000, &unit(), &m1()).unwrap();
    let s = vec![WarmStart {
        label: "zero".into(),
        profile: DiscreteProfile::zeros(1000).unwrap(),
    }];
    assert!(minimize_diffuse(&p, &s, &LbfgsOptions::default()).is_err());
    let p = DiffuseProblem::new(0.1, 1000, &unit(), &m1()).unwrap();
    assert!(matches!(
        minimize_diffuse(&p, &s, &LbfgsOptions::default()),
        Err(HomlabError::GridTooCoarse { .. })
    ));
}

#[test]
fn local_integrand_examples() {
    let step = 1e-3;
    let zero = MicroProfile::new(-1.0, step, vec![0.0; 2001]).unwrap();
    let e = local_average_integrand(&zero, &unit(), 1.0, 0.0, 0.1).unwrap();
    assert!((e - 100.0).abs() < 1e-9);
    let line = MicroProfile::new(
        -1.0,
        step,
        (0..2001).map(|i| -1.0 + i as f64 * step).collect(),
    )
    .unwrap();
    let e = local_average_integrand(&line, &unit(), 1.0, 0.0, 1.0).unwrap();
    assert!((e - 1.0 / 12.0).abs() < 1e-6);
    assert!(matches!(
        local_average_integrand(&line, &unit(), 1.0, 0.8, 1.0),
        Err(HomlabError::Domain(_))
    ));
}

#[test]
fn single_precision_energy_tracks_double() {
    let f32_field = homlab_core::coeff::CoefficientField::<f32>::constant(1.0).unwrap();
    let v32 =
        homlab_core::diffuse::DiscreteProfile::<f32>::from_fn(1000, |x| 0.02 * (9.0 * x).sin())
            .unwrap();
    let v64 = DiscreteProfile::from_fn(1000, |x: f64| 0.02 * (9.0 * x).sin()).unwrap();
    let a = diffuse_energy(&v32, 0.1f32, &f32_field, &m1()).unwrap() as f64;
    let b = diffuse_energy(&v64, 0.1, &unit(), &m1()).unwrap();
    assert!((a - b).abs() / b < 1e-4, "{a} {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_matches_finite_differences(
        coeffs in proptest::collection::vec(-0.05f64..0.05, 4),
        seed in 0u64..100,
        i in 0usize..=200,
    ) {
        let eps = 0.1;
        let n = 200;
        let field = CoefficientField::realize(&FieldModel::checkerboard_12(0.5), seed).unwrap();
        let v = DiscreteProfile::from_fn(n, |x: f64| {
            coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * 3.0 * x).sin()).sum()
        }).unwrap();
        let g = diffuse_gradient(&v, eps, &field, &m1()).unwrap();
        let d = f64::EPSILON.cbrt() * v.values()[i].abs().max(v.h());
        let mut a = v.clone();
        a.values_mut()[i] += d;
        let mut b = v.clone();
        b.values_mut()[i] -= d;
        let fd = (diffuse_energy(&a, eps, &field, &m1()).unwrap()
            - diffuse_energy(&b, eps, &field, &m1()).unwrap()) / (2.0 * d);
        let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs()).max(1e-8);
        prop_assert!(rel < 1e-5, "rel {rel} at {i}");
    }

    #[test]
    fn energy_nonnegative_and_monotone_in_m(
        coeffs in proptest::collection::vec(-0.2f64..0.2, 3),
        m in 1.0f64..3.0,
    ) {
        let v = DiscreteProfile::from_fn(400, |x: f64| {
            coeffs.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * 5.0 * x).cos()).sum()
        }).unwrap();
        let lo = diffuse_energy(&v, 0.1, &unit(), &MacroModulus::Constant { m }).unwrap();
        let hi = diffuse_energy(&v, 0.1, &unit(), &MacroModulus::Constant { m: m + 1.0 }).unwrap();
        prop_assert!(lo >= 0.0 && hi >= lo);
    }
}
