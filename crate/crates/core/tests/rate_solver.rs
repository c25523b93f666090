use std::f64::consts::PI;
use std::sync::Arc;

use iml_core::geometry::make_lattice;
use iml_core::rate_solver::{
    dirichlet_energy, empirical_exit_rate, principal_eigenpair, product_mollification_gap, rate_i, rate_i_eps,
    rate_i_refined, rayleigh_quotient, sobolev_member, sobolev_membership, MeasureTuple,
};
use iml_core::{DomainSpec, GridField, ImlError, Lattice};

fn unit_interval() -> DomainSpec {
    DomainSpec::interval(0.0, 1.0).unwrap()
}

fn lattice(dom: &DomainSpec, h: f64) -> Arc<Lattice> {
    Arc::new(make_lattice(dom, h, 0.0).unwrap())
}

fn sin2(lat: &Arc<Lattice>) -> GridField {
    GridField::from_fn(lat.clone(), |x| 2.0 * (PI * x[0]).sin().powi(2))
}

fn indicator(lat: &Arc<Lattice>) -> GridField {
    GridField::from_fn(lat.clone(), |x| if (0.25..0.75).contains(&x[0]) { 2.0 } else { 0.0 })
}

#[test]
fn energy_of_the_sine_mode() {
    let lat = lattice(&unit_interval(), 1.0 / 256.0);
    let psi = GridField::from_fn(lat.clone(), |x| 2f64.sqrt() * (PI * x[0]).sin());
    let e = dirichlet_energy(&psi).unwrap();
    assert!((e - PI * PI / 2.0).abs() < 1e-4 * PI * PI / 2.0, "{e}");
    assert_eq!(dirichlet_energy(&GridField::zeros(lat)).unwrap(), 0.0);
    let e2 = dirichlet_energy(&psi.scaled(2.0)).unwrap();
    assert!((e2 - 4.0 * e).abs() < 1e-12 * e2);
}

#[test]
fn nonzero_trace_is_rejected() {
    let lat = lattice(&unit_interval(), 0.1);
    let mut psi = GridField::from_fn(lat, |x| (PI * x[0]).sin());
    psi.values[0] = 0.3;
    assert!(matches!(dirichlet_energy(&psi), Err(ImlError::Input(_))));
}

#[test]
fn sine_squared_tuple_has_rate_pi_squared() {
    let lat = lattice(&unit_interval(), 1.0 / 256.0);
    let mt = MeasureTuple::from_densities(vec![sin2(&lat), sin2(&lat)]).unwrap();
    let r = rate_i(&mt);
    assert!((r - PI * PI).abs() < 1e-4 * PI * PI, "{r}");

    let wrong = MeasureTuple::new(sin2(&lat), mt.mus.clone(), vec![0.0, 0.0]).unwrap();
    assert_eq!(rate_i(&wrong), f64::INFINITY);
}

#[test]
fn rate_is_symmetric_in_the_components() {
    let lat = lattice(&unit_interval(), 1.0 / 128.0);
    let other = GridField::from_fn(lat.clone(), |x| 30.0 * x[0].powi(2) * (1.0 - x[0]).powi(2));
    let a = rate_i(&MeasureTuple::from_densities(vec![sin2(&lat), other.clone()]).unwrap());
    let b = rate_i(&MeasureTuple::from_densities(vec![other, sin2(&lat)]).unwrap());
    assert!(a.is_finite() && a > 0.0);
    assert_eq!(a, b);
}

#[test]
fn indicator_densities_have_infinite_rate() {
    let dom = unit_interval();
    let coarse = lattice(&dom, 1.0 / 128.0);
    let fine = lattice(&dom, 1.0 / 256.0);
    let mt = MeasureTuple::from_densities(vec![indicator(&fine)]).unwrap();
    assert_eq!(rate_i(&mt), f64::INFINITY);

    let m = sobolev_membership(&indicator(&coarse).map(f64::sqrt), &indicator(&fine).map(f64::sqrt)).unwrap();
    assert!(!m.member && m.growth > 1.9, "{m:?}");
    let s = sobolev_membership(&sin2(&coarse).map(f64::sqrt), &sin2(&fine).map(f64::sqrt)).unwrap();
    assert!(s.member && (s.growth - 1.0).abs() < 1e-3, "{s:?}");

    let pair = |f: fn(&Arc<Lattice>) -> GridField| {
        rate_i_refined(&MeasureTuple::from_densities(vec![f(&coarse)]).unwrap(), &MeasureTuple::from_densities(vec![f(&fine)]).unwrap())
            .unwrap()
    };
    assert!((pair(sin2) - PI * PI / 2.0).abs() < 1e-3);
    assert_eq!(pair(indicator), f64::INFINITY);
    assert!(sobolev_member(&sin2(&fine).map(f64::sqrt)));
}

#[test]
fn mollified_rate_stays_below_the_rate() {
    let lat = lattice(&unit_interval(), 1.0 / 400.0);
    let mus = vec![sin2(&lat), sin2(&lat)];
    let base = rate_i(&MeasureTuple::from_densities(mus.clone()).unwrap());
    let mut last = f64::INFINITY;
    for eps in [0.2, 0.1, 0.05] {
        let mt = MeasureTuple::mollified_compatible(mus.clone(), eps).unwrap();
        let r = rate_i_eps(&mt, eps);
        assert!(r <= base * (1.0 + 1e-12), "ε={eps}: {r} > {base}");
        let gap = product_mollification_gap(&mus, eps).unwrap();
        assert!(gap < last, "ε={eps}: {gap} ≥ {last}");
        last = gap;
    }
    // the unmollified product is not compatible with a coarse mollification
    let plain = MeasureTuple::from_densities(mus).unwrap();
    assert_eq!(rate_i_eps(&plain, 0.2), f64::INFINITY);
}

#[test]
fn principal_pair_on_the_interval() {
    let dom = unit_interval();
    let lat = lattice(&dom, 1.0 / 512.0);
    let r = principal_eigenpair(&dom, &lat).unwrap();
    let want = PI * PI / 2.0;
    assert!((r.lambda1 - want).abs() < 1e-4 * want, "{}", r.lambda1);
    assert!(r.residual < 1e-10);
    assert!((r.psi1.lp_norm(2.0) - 1.0).abs() < 1e-10);
    assert!((0..lat.node_count()).all(|i| !lat.interior[i] || r.psi1.values[i] > 0.0));
    let rq = rayleigh_quotient(&dom, &r.psi1).unwrap();
    assert!((rq - r.lambda1).abs() < 1e-9 * r.lambda1);

    // the minimiser's energy is the eigenvalue
    for p in 1..=3 {
        let density = r.psi1.map(|v| v * v);
        let mt = MeasureTuple::from_densities(vec![density; p]).unwrap();
        let rate = rate_i(&mt);
        assert!((rate - p as f64 * r.lambda1).abs() < 1e-3 * rate, "p={p}: {rate}");
    }
}

#[test]
fn principal_pair_on_the_disk() {
    let dom = DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap();
    let lat = lattice(&dom, 1.0 / 128.0);
    let r = principal_eigenpair(&dom, &lat).unwrap();
    let j01: f64 = 2.404_825_557_695_773;
    let want = j01 * j01 / 2.0;
    assert!((r.lambda1 - want).abs() < 1e-3 * want, "{}", r.lambda1);
    assert!((r.psi1.lp_norm(2.0) - 1.0).abs() < 1e-10);
}

#[test]
fn rate_vanishes_under_dilation() {
    let dom = DomainSpec::whole(1).unwrap();
    let mut last = f64::INFINITY;
    for half in [1.0, 2.0, 4.0, 8.0] {
        let lat = Arc::new(make_lattice(&dom, 0.01, half + 0.5).unwrap());
        let dens = GridField::from_fn(lat.clone(), |x| {
            if x[0].abs() < half {
                (0.5 * PI * x[0] / half).cos().powi(2) / half
            } else {
                0.0
            }
        });
        let r = rate_i(&MeasureTuple::from_densities(vec![dens]).unwrap());
        assert!(r < last && r > 0.0, "L={half}: {r}");
        // ½ ∫ |∇ψ|² = π² / (8L²)
        assert!((r - PI * PI / (8.0 * half * half)).abs() < 1e-2 * r, "L={half}: {r}");
        last = r;
    }
    assert!(last < 0.02);
}

#[test]
fn mass_at_infinity_scores_the_density_part() {
    let dom = DomainSpec::whole(1).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 1.5).unwrap());
    let dens = GridField::from_fn(lat.clone(), |x| if x[0].abs() < 1.0 { (0.5 * PI * x[0]).cos().powi(2) * 0.5 } else { 0.0 });
    let mt = MeasureTuple::from_densities(vec![dens.clone()]).unwrap();
    assert!((mt.mass_at_infinity[0] - 0.5).abs() < 1e-6);
    let r = rate_i(&mt);
    let full = rate_i(&MeasureTuple::from_densities(vec![dens.scaled(2.0)]).unwrap());
    assert!((2.0 * r - full).abs() < 1e-12 * full);
    assert!(MeasureTuple::new(dens.clone(), vec![dens], vec![0.0]).is_err());
}

#[test]
fn lower_semicontinuity_along_an_oscillating_sequence() {
    let lat = lattice(&unit_interval(), 1.0 / 512.0);
    let limit = rate_i(&MeasureTuple::from_densities(vec![sin2(&lat)]).unwrap());
    let mut values = Vec::new();
    for n in [3, 5, 9, 17] {
        let psi = GridField::from_fn(lat.clone(), |x| (PI * x[0]).sin() + (n as f64 * PI * x[0]).sin() / n as f64);
        let mass = psi.lp_norm(2.0).powi(2);
        let dens = psi.map(|v| v * v / mass);
        assert!(dens.l1_distance(&sin2(&lat)).unwrap() < 2.0 / n as f64);
        values.push(rate_i(&MeasureTuple::from_densities(vec![dens]).unwrap()));
    }
    let liminf = values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(limit <= liminf + 1e-3, "{limit} vs {values:?}");
}

#[test]
fn exit_rates_approach_the_eigenvalue() {
    let dom = unit_interval();
    let ts = [0.5, 1.0, 1.5];
    let one = empirical_exit_rate(&dom, &[0.5], 1, &ts, 1e-3, 200_000, 5).unwrap();
    let two = empirical_exit_rate(&dom, &[0.5], 2, &ts, 1e-3, 200_000, 5).unwrap();
    let lambda = PI * PI / 2.0;
    assert!((one.p_lambda1 - lambda).abs() < 1e-3 * lambda);
    for w in one.rows.windows(2) {
        assert!(w[1].rate > w[0].rate);
    }
    let last = one.rows.last().unwrap();
    assert!((last.rate - lambda).abs() < 0.1 * lambda, "{last:?}");
    for (a, b) in one.rows.iter().zip(&two.rows) {
        assert!((b.rate - 2.0 * a.rate).abs() < 1e-12 * b.rate);
        assert!(!a.low_count);
    }

    let whole = empirical_exit_rate(&DomainSpec::whole(1).unwrap(), &[0.0], 2, &ts, 1e-2, 1000, 5).unwrap();
    assert!(whole.rows.iter().all(|r| r.rate == 0.0 && r.survival == 1.0));
    assert_eq!(whole.p_lambda1, 0.0);

    let sparse = empirical_exit_rate(&dom, &[0.5], 1, &[3.0], 1e-2, 200, 5).unwrap();
    assert!(sparse.rows[0].low_count);
}
