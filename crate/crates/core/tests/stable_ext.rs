use std::f64::consts::PI;
use std::sync::Arc;

use iml_core::geometry::make_lattice;
use iml_core::rate_solver::MeasureTuple;
use iml_core::stable_ext::{
    admissible, fractional_energy, fractional_membership, rate_i_stable, sample_stable_increments, sample_stable_path,
    stable_survival_probability, StableParams,
};
use iml_core::{DomainSpec, GridField, ImlError, Lattice};
use proptest::prelude::*;

fn unit_lattice(h: f64) -> Arc<Lattice> {
    Arc::new(make_lattice(&DomainSpec::interval(0.0, 1.0).unwrap(), h, 0.0).unwrap())
}

fn bump(lat: &Arc<Lattice>) -> GridField {
    GridField::from_fn(lat.clone(), |x| (PI * x[0]).sin().powi(2))
}

fn indicator(lat: &Arc<Lattice>) -> GridField {
    GridField::from_fn(lat.clone(), |x| if (0.25..0.75).contains(&x[0]) { 1.0 } else { 0.0 })
}

#[test]
fn admissibility_truth_table() {
    let cases = [
        (0.8, 1, 2, true),
        (2.0 / 3.0, 1, 3, false),
        (0.9, 1, 3, true),
        (1.5, 1, 1, false),
        (1.0, 2, 2, false),
        (1.5, 2, 2, true),
        (1.0, 2, 1, true),
        (1.9, 3, 2, true),
        (1.4, 3, 2, false),
        (0.5, 1, 1, true),
    ];
    for (alpha, d, p, want) in cases {
        let sp = StableParams::new(alpha, d, p).unwrap();
        assert_eq!(admissible(&sp), want, "α={alpha} d={d} p={p}");
    }
    assert!(StableParams::new(2.0, 3, 1).is_err());
    assert!(StableParams::new(0.0, 1, 1).is_err());
}

#[test]
fn gaussian_limit_has_variance_two_dt() {
    let dt = 0.3;
    let xs = sample_stable_increments(2.0, 2, dt, 100_000, 1).unwrap();
    let n = xs.len() as f64;
    for k in 0..2 {
        let var = xs.iter().map(|x| x[k] * x[k]).sum::<f64>() / n;
        // sd of the sample second moment is √2 σ² / √n
        let se = 2f64.sqrt() * 2.0 * dt / n.sqrt();
        assert!((var - 2.0 * dt).abs() < 3.0 * se, "axis {k}: {var}");
    }
}

#[test]
fn cauchy_quantiles() {
    let xs = sample_stable_increments(1.0, 1, 1.0, 100_000, 2).unwrap();
    let n = xs.len() as f64;
    let below = |q: f64| xs.iter().filter(|x| x[0] <= q).count() as f64 / n;
    let se = (0.25 / n).sqrt();
    assert!((below(0.0) - 0.5).abs() < 3.0 * se);
    let se75 = (0.75 * 0.25 / n).sqrt();
    assert!((below(1.0) - 0.75).abs() < 3.0 * se75, "{}", below(1.0));
}

#[test]
fn characteristic_function_matches() {
    let (alpha, dt) = (1.3, 0.7);
    let xs = sample_stable_increments(alpha, 1, dt, 100_000, 3).unwrap();
    let n = xs.len() as f64;
    for xi in [0.5, 1.0, 2.0] {
        let c: Vec<f64> = xs.iter().map(|x| (xi * x[0]).cos()).collect();
        let mean = c.iter().sum::<f64>() / n;
        let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let want = (-dt * f64::powf(xi, alpha)).exp();
        assert!((mean - want).abs() < 3.0 * sd / n.sqrt(), "ξ={xi}: {mean} vs {want}");
    }
}

#[test]
fn sampling_is_reproducible() {
    let a = sample_stable_increments(0.7, 2, 0.1, 1000, 9).unwrap();
    let b = sample_stable_increments(0.7, 2, 0.1, 1000, 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn energy_basics() {
    let lat = unit_lattice(0.01);
    assert_eq!(fractional_energy(&GridField::zeros(lat.clone()), 1.0).unwrap(), 0.0);
    let psi = bump(&lat);
    let e = fractional_energy(&psi, 1.0).unwrap();
    let e2 = fractional_energy(&psi.scaled(2.0), 1.0).unwrap();
    assert!((e2 - 4.0 * e).abs() < 1e-12 * e2);
    let neg = fractional_energy(&psi.scaled(-1.0), 1.0).unwrap();
    assert!((neg - e).abs() < 1e-12 * e);
}

#[test]
fn energy_is_translation_invariant() {
    let dom = DomainSpec::whole(1).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.01, 3.0).unwrap());
    let at = |c: f64| {
        let f = GridField::from_fn(lat.clone(), |x| {
            let u = (x[0] - c) / 0.5;
            if u.abs() < 1.0 {
                (0.5 * PI * u).cos().powi(2)
            } else {
                0.0
            }
        });
        fractional_energy(&f, 1.2).unwrap()
    };
    let (a, b) = (at(0.0), at(0.5));
    assert!((a - b).abs() < 1e-3 * a, "{a} vs {b}");
}

#[test]
fn smooth_bump_is_stable_and_indicator_diverges() {
    let (coarse, fine) = (unit_lattice(1.0 / 200.0), unit_lattice(1.0 / 400.0));
    let s = fractional_membership(&bump(&coarse), &bump(&fine), 1.0).unwrap();
    assert!(s.member && (s.growth - 1.0).abs() < 0.02, "{s:?}");
    let ind = fractional_membership(&indicator(&coarse), &indicator(&fine), 1.0).unwrap();
    assert!(!ind.member, "{ind:?}");
    // logarithmic growth: equal increments per halving
    let e = |h: f64| fractional_energy(&indicator(&unit_lattice(h)), 1.0).unwrap();
    let (e1, e2, e3) = (e(1.0 / 100.0), e(1.0 / 200.0), e(1.0 / 400.0));
    assert!(e2 > e1 && e3 > e2);
    assert!(((e3 - e2) / (e2 - e1) - 1.0).abs() < 0.1, "{e1} {e2} {e3}");
}

#[test]
fn energy_is_continuous_in_alpha() {
    let psi = bump(&unit_lattice(0.005));
    let es: Vec<f64> = [0.6, 1.0, 1.4].iter().map(|&a| fractional_energy(&psi, a).unwrap()).collect();
    for w in es.windows(2) {
        let r = w[1] / w[0];
        assert!(r < 10.0 && r > 0.1, "{es:?}");
    }
}

#[test]
fn embedding_ratio_stays_bounded_when_admissible() {
    // ψ_w(x) = w^{-1/2} φ(x/w): ‖ψ‖_{2p} / (‖ψ‖₂ + E^{1/2}) is bounded in w iff d - p(d-α) > 0
    let dom = DomainSpec::whole(1).unwrap();
    let lat = Arc::new(make_lattice(&dom, 0.002, 1.0).unwrap());
    let ratio = |w: f64, alpha: f64, p: f64| {
        let psi = GridField::from_fn(lat.clone(), |x| {
            let u = x[0] / w;
            if u.abs() < 1.0 {
                (0.5 * PI * u).cos().powi(2) / w.sqrt()
            } else {
                0.0
            }
        });
        let e = fractional_energy(&psi, alpha).unwrap();
        psi.lp_norm(2.0 * p) / (psi.lp_norm(2.0) + e.sqrt())
    };
    let widths = [0.4, 0.2, 0.1, 0.05];
    let good: Vec<f64> = widths.iter().map(|&w| ratio(w, 0.8, 2.0)).collect();
    let k = good.iter().cloned().fold(0.0, f64::max);
    assert!(good.iter().all(|r| *r <= k && *r > 0.2 * k), "{good:?}");
    let bad: Vec<f64> = widths.iter().map(|&w| ratio(w, 0.4, 4.0)).collect();
    assert!(bad.windows(2).all(|w| w[1] > w[0]), "{bad:?}");
}

#[test]
fn stable_rate_function() {
    // α = 1 = d fails α < d, so the closest admissible index is used
    let sp = StableParams::new(0.9, 1, 2).unwrap();
    let rate = |h: f64| {
        let lat = unit_lattice(h);
        let dens = GridField::from_fn(lat, |x| 2.0 * (PI * x[0]).sin().powi(2));
        rate_i_stable(&MeasureTuple::from_densities(vec![dens.clone(), dens]).unwrap(), &sp).unwrap()
    };
    let (a, b) = (rate(1.0 / 200.0), rate(1.0 / 400.0));
    assert!(a.is_finite() && (a - b).abs() < 0.03 * b, "{a} vs {b}");

    let lat = unit_lattice(0.01);
    let dens = GridField::from_fn(lat.clone(), |x| 2.0 * (PI * x[0]).sin().powi(2));
    let wrong = MeasureTuple::new(dens.clone(), vec![dens.clone(), dens.clone()], vec![0.0, 0.0]).unwrap();
    assert_eq!(rate_i_stable(&wrong, &sp).unwrap(), f64::INFINITY);

    let edge = StableParams::new(1.0, 1, 2).unwrap();
    let mt1 = MeasureTuple::from_densities(vec![dens.clone(), dens.clone()]).unwrap();
    assert!(matches!(rate_i_stable(&mt1, &edge), Err(ImlError::Admissibility(_))));

    let bad = StableParams::new(1.0, 2, 2).unwrap();
    let dom2 = DomainSpec::cuboid(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let lat2 = Arc::new(make_lattice(&dom2, 0.1, 0.0).unwrap());
    let d2 = GridField::from_fn(lat2, |x| 4.0 * (PI * x[0]).sin().powi(2) * (PI * x[1]).sin().powi(2));
    let mt = MeasureTuple::from_densities(vec![d2.clone(), d2]).unwrap();
    assert!(matches!(rate_i_stable(&mt, &bad), Err(ImlError::Admissibility(_))));
}

#[test]
fn killed_stable_paths() {
    let line = DomainSpec::whole(1).unwrap();
    let p = sample_stable_path(&line, 1.2, &[0.0], 1.0, 0.01, 4, 0).unwrap();
    assert!(!p.killed && p.alive_until == p.steps);

    let half = DomainSpec::half_space(1, 0, 0.0).unwrap();
    let (near, _) = stable_survival_probability(&half, 1.2, &[0.2], 1.0, 0.01, 4000, 5).unwrap();
    let (far, _) = stable_survival_probability(&half, 1.2, &[2.0], 1.0, 0.01, 4000, 5).unwrap();
    assert!(near < far && far < 1.0);
    assert!(sample_stable_path(&DomainSpec::interval(0.0, 1.0).unwrap(), 1.2, &[0.5], 1.0, 0.01, 4, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_is_a_nonnegative_quadratic_form(vals in prop::collection::vec(-2.0f64..2.0, 19), alpha in 0.2f64..1.8) {
        let lat = unit_lattice(0.05);
        let mut full = vec![0.0];
        full.extend(vals);
        full.push(0.0);
        let f = GridField::from_values(lat, full).unwrap();
        let e = fractional_energy(&f, alpha).unwrap();
        prop_assert!(e >= 0.0);
        let e3 = fractional_energy(&f.scaled(3.0), alpha).unwrap();
        prop_assert!((e3 - 9.0 * e).abs() <= 1e-10 * e3.max(1e-300));
    }
}
