use std::f64::consts::PI;
use std::sync::Arc;

use iml_core::geometry::make_lattice;
use iml_core::intersection::{apply_t_eps, intersection_field, pair_with_test, BallAverage};
use iml_core::path_sim::{occupation_field, sample_path, sample_path_stream, OccupationField};
use iml_core::{DomainSpec, GridField, ImlError};
use proptest::prelude::*;

fn bump_1d(x: f64) -> f64 {
    let u = x / 0.5;
    if u.abs() < 1.0 {
        (0.5 * PI * u).cos().powi(4)
    } else {
        0.0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ball_average_is_lr_contractive(vals in prop::collection::vec(0.0f64..5.0, 121), eps_cells in 1usize..4) {
        let dom = DomainSpec::whole(2).unwrap();
        let lat = Arc::new(make_lattice(&dom, 0.1, 0.5).unwrap());
        let f = GridField::from_values(lat.clone(), vals).unwrap();
        let g = apply_t_eps(&f, 0.1 * eps_cells as f64).unwrap();
        for r in [1.0, 2.0, 3.0] {
            prop_assert!(g.lp_norm(r) <= f.lp_norm(r) * (1.0 + 1e-12));
        }
        prop_assert!(g.values.iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn strong_continuity_on_a_bump() {
    let dom = DomainSpec::whole(1).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.002, 1.5).unwrap());
    let f = GridField::from_fn(lat, |x| bump_1d(x[0]));
    let mut last = f64::INFINITY;
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let g = apply_t_eps(&f, eps).unwrap();
        let diff = GridField::from_values(f.lattice.clone(), g.values.iter().zip(&f.values).map(|(a, b)| a - b).collect()).unwrap();
        let err = diff.lp_norm(2.0);
        assert!(err < last, "ε={eps}: {err} ≥ {last}");
        last = err;
    }
    assert!(last < 0.01);
}

#[test]
fn normalisation_of_the_ball_kernel() {
    let dom = DomainSpec::whole(2).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 1.0).unwrap());
    let eps = 0.2;
    let x = [0.003, -0.004];
    let mass: f64 = (0..lat.node_count())
        .map(|i| iml_core::intersection::ball_kernel_q(2, eps, &x, &lat.coords(i)).unwrap() * lat.cell_measure)
        .sum();
    assert!((mass - 1.0).abs() < 2.0 * 0.01 / eps, "{mass}");
}

#[test]
fn field_is_product_of_ball_averages() {
    let dom = DomainSpec::interval(0.0, 1.0).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 0.0).unwrap());
    let occs: Vec<OccupationField> = (0..3)
        .map(|s| occupation_field(&sample_path_stream(&dom, &[0.5], 0.2, 1e-4, 4, s).unwrap(), &lat, 0.2).unwrap())
        .collect();
    let fld = intersection_field(&occs, 0.05, 0.2).unwrap();
    let avgs: Vec<GridField> = occs.iter().map(|o| apply_t_eps(&o.field, 0.05).unwrap()).collect();
    for i in 0..lat.node_count() {
        let want: f64 = avgs.iter().map(|a| a.values[i]).product();
        assert_eq!(fld.field.values[i], want);
        assert!(fld.field.values[i] >= 0.0);
    }
    assert_eq!(fld.p, 3);
}

#[test]
fn instantly_killed_process_zeroes_the_field() {
    let dom = DomainSpec::interval(0.0, 1.0).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 0.0).unwrap());
    let alive = occupation_field(&sample_path(&dom, &[0.5], 0.1, 1e-3, 1).unwrap(), &lat, 0.1).unwrap();
    let dead = OccupationField::from_field(GridField::zeros(lat.clone()));
    let fld = intersection_field(&[alive, dead], 0.05, 0.1).unwrap();
    assert!(fld.field.values.iter().all(|v| *v == 0.0));
}

#[test]
fn one_step_paths_give_the_squared_ball_average() {
    let dom = DomainSpec::whole(1).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 1.0).unwrap());
    let path = sample_path(&dom, &[0.0], 0.5, 0.5, 2).unwrap();
    let occ = occupation_field(&path, &lat, 0.5).unwrap();
    let fld = intersection_field(&[occ.clone(), occ.clone()], 0.1, 0.5).unwrap();
    let ones = GridField::from_values(lat.clone(), vec![1.0; lat.node_count()]).unwrap();
    let mass = pair_with_test(&fld, &ones).unwrap();
    let avg = apply_t_eps(&occ.field, 0.1).unwrap();
    let want = avg.lp_norm(2.0).powi(2);
    assert!((mass - want).abs() < 1e-12 * want);
    let stencil = BallAverage::new(lat.clone(), 0.1).unwrap().stencil_size() as f64;
    assert!((mass - 1.0 / (stencil * 0.01)).abs() < 1e-9 * mass);
}

#[test]
fn pairing_basics() {
    let dom = DomainSpec::interval(0.0, 1.0).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 0.0).unwrap());
    let occ = occupation_field(&sample_path(&dom, &[0.5], 0.2, 1e-4, 9).unwrap(), &lat, 0.2).unwrap();
    assert_eq!(pair_with_test(&occ, &GridField::zeros(lat.clone())).unwrap(), 0.0);
    let ones = GridField::from_values(lat.clone(), vec![1.0; lat.node_count()]).unwrap();
    assert!((pair_with_test(&occ, &ones).unwrap() - occ.total_mass).abs() < 1e-12);

    let other = Arc::new(make_lattice(&dom, 0.02, 0.0).unwrap());
    assert!(matches!(pair_with_test(&occ, &GridField::zeros(other)), Err(ImlError::Input(_))));
}

#[test]
fn smooth_pairing_is_stable_under_refinement() {
    let dom = DomainSpec::whole(1).unwrap();
    let t = 1.0;
    let paths: Vec<_> = (0..2).map(|s| sample_path_stream(&dom, &[0.0], t, 1e-5, 12, s).unwrap()).collect();
    let value = |h: f64| {
        let lat = Arc::new(make_lattice(&dom, h, 4.0).unwrap());
        let occs: Vec<_> = paths.iter().map(|p| occupation_field(p, &lat, t).unwrap()).collect();
        let fld = intersection_field(&occs, 0.2, t).unwrap();
        let f = GridField::from_fn(lat, |x| (-x[0] * x[0]).exp());
        pair_with_test(&fld, &f).unwrap()
    };
    let (a, b) = (value(0.02), value(0.01));
    assert!((a - b).abs() < 0.02 * b, "{a} vs {b}");
}

#[test]
fn pairings_are_cauchy_in_eps() {
    let dom = DomainSpec::whole(1).unwrap();
    let t = 1.0;
    let lat = Arc::new(make_lattice(&dom, 0.0025, 4.0).unwrap());
    let f = GridField::from_fn(lat.clone(), |x| (-x[0] * x[0]).exp());
    let eps_list = [0.4, 0.2, 0.1, 0.05, 0.025];
    let mut gaps = vec![0.0; eps_list.len() - 1];
    let n_pairs = 20;
    for s in 0..n_pairs {
        let occs: Vec<_> = (0..2)
            .map(|i| occupation_field(&sample_path_stream(&dom, &[0.0], t, 1e-5, 31, 2 * s + i).unwrap(), &lat, t).unwrap())
            .collect();
        let vals: Vec<f64> = eps_list
            .iter()
            .map(|&e| pair_with_test(&intersection_field(&occs, e, t).unwrap(), &f).unwrap())
            .collect();
        for k in 0..gaps.len() {
            gaps[k] += (vals[k] - vals[k + 1]).abs() / n_pairs as f64;
        }
    }
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
}
