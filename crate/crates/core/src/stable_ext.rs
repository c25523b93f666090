//! Rotationally symmetric α-stable processes: increment sampling, killed
//! paths on unbounded domains, the fractional Sobolev energy, and the
//! admissibility gate `d - p(d - α) > 0`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, ImlError, Result};
use crate::geometry::{DomainKind, DomainSpec};
use crate::grid::GridField;
use crate::path_sim::{step_plan, KilledPath};
use crate::quadrature::GaussLegendre;
use crate::rate_solver::{mollified_product, MeasureTuple, Membership};
use crate::rng::{blocks, stream_rng, StreamRng};

/// Largest relative energy growth under `h → h/2` accepted by
/// [`fractional_membership`].
pub const FRACTIONAL_GROWTH_TOL: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub d: usize,
    pub p: usize,
}

impl StableParams {
    pub fn new(alpha: f64, d: usize, p: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return input(format!("α must lie in (0, 2), got {alpha}"));
        }
        if !(1..=3).contains(&d) || p == 0 {
            return input("need 1 ≤ d ≤ 3 and p ≥ 1");
        }
        Ok(Self { alpha, d, p })
    }

    /// `d - p(d - α)`.
    pub fn gap(&self) -> f64 {
        self.d as f64 - self.p as f64 * (self.d as f64 - self.alpha)
    }

    /// `Ok` when [`admissible`], otherwise an admissibility error stating
    /// the failing inequality.
    pub fn check(&self) -> Result<()> {
        if self.alpha >= self.d as f64 {
            return Err(ImlError::Admissibility(format!("α = {} is not below d = {}", self.alpha, self.d)));
        }
        if self.gap() <= 0.0 {
            return Err(ImlError::Admissibility(format!("d − p(d−α) = {} is not positive", self.gap())));
        }
        Ok(())
    }
}

/// `α < d` and `d - p(d - α) > 0`.
pub fn admissible(sp: &StableParams) -> bool {
    sp.check().is_ok()
}

/// Positive `β`-stable variable with `E e^{-λS} = e^{-λ^β}`, `0 < β < 1`,
/// by Kanter's representation.
fn positive_stable(beta: f64, rng: &mut StreamRng) -> f64 {
    let u: f64 = PI * rng.random::<f64>();
    let w: f64 = rng.sample(Exp1);
    let a = (beta * u).sin().powf(beta / (1.0 - beta)) * ((1.0 - beta) * u).sin() / u.sin().powf(1.0 / (1.0 - beta));
    (a / w).powf((1.0 - beta) / beta)
}

/// One increment with `E e^{iξ·X} = exp(-dt |ξ|^α)`, written into `out`:
/// `X = √(2 dt^{2/α} S) G` with `G` standard normal and `S` positive
/// `(α/2)`-stable. At `α = 2` this is `N(0, 2 dt I)`.
fn stable_increment_into(alpha: f64, dt: f64, rng: &mut StreamRng, out: &mut [f64]) {
    let s = if alpha >= 2.0 { 1.0 } else { positive_stable(0.5 * alpha, rng) };
    let scale = (2.0 * dt.powf(2.0 / alpha) * s).sqrt();
    for v in out.iter_mut() {
        let g: f64 = rng.sample(StandardNormal);
        *v = scale * g;
    }
}

fn check_alpha(alpha: f64, d: usize, dt: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return input(format!("α must lie in (0, 2], got {alpha}"));
    }
    if !(1..=3).contains(&d) {
        return input("d must be 1, 2 or 3");
    }
    if !(dt > 0.0) {
        return input("dt must be positive");
    }
    Ok(())
}

/// One rotationally symmetric α-stable increment over time `dt`, drawn
/// from stream `stream` of `seed`.
pub fn sample_stable_increment(alpha: f64, d: usize, dt: f64, seed: u64, stream: u64) -> Result<Vec<f64>> {
    check_alpha(alpha, d, dt)?;
    let mut rng = stream_rng(seed, stream);
    let mut out = vec![0.0; d];
    stable_increment_into(alpha, dt, &mut rng, &mut out);
    Ok(out)
}

/// `n` independent increments; draw `i` uses stream `i`.
pub fn sample_stable_increments(alpha: f64, d: usize, dt: f64, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_alpha(alpha, d, dt)?;
    let per_block: Vec<Vec<Vec<f64>>> = blocks(n)
        .into_par_iter()
        .map(|(a, b)| {
            (a..b)
                .map(|i| {
                    let mut rng = stream_rng(seed, i as u64);
                    let mut out = vec![0.0; d];
                    stable_increment_into(alpha, dt, &mut rng, &mut out);
                    out
                })
                .collect()
        })
        .collect();
    Ok(per_block.into_iter().flatten().collect())
}

fn check_stable_domain(dom: &DomainSpec) -> Result<()> {
    match dom.kind {
        DomainKind::WholeSpace | DomainKind::HalfSpace { .. } => Ok(()),
        _ => input("stable paths are provided on whole space and half-spaces only"),
    }
}

/// Killed α-stable path; the kill test only looks at step endpoints, so exit
/// times are biased late by `O(dt)`.
pub fn sample_stable_path(dom: &DomainSpec, alpha: f64, x0: &[f64], t: f64, dt: f64, seed: u64, stream: u64) -> Result<KilledPath> {
    check_stable_domain(dom)?;
    check_alpha(alpha, dom.d, dt)?;
    if !dom.contains(x0)? {
        return input("initial point must lie in D");
    }
    let (n, dt) = step_plan(t, dt)?;
    let mut rng = stream_rng(seed, stream);
    let d = dom.d;
    let mut positions = Vec::with_capacity((n + 1) * d);
    positions.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut inc = vec![0.0; d];
    let mut kill = None;
    for j in 0..n {
        stable_increment_into(alpha, dt, &mut rng, &mut inc);
        x.iter_mut().zip(&inc).for_each(|(a, b)| *a += b);
        if !dom.contains_unchecked(&x) {
            kill = Some(j);
            break;
        }
        positions.extend_from_slice(&x);
    }
    let alive_until = kill.unwrap_or(n);
    Ok(KilledPath {
        d,
        dt,
        horizon: n as f64 * dt,
        steps: n,
        positions,
        alive_until,
        exit_time_estimate: kill.map_or(f64::INFINITY, |j| (j as f64 + 0.5) * dt),
        killed: kill.is_some(),
    })
}

/// Fraction of `n_samples` stable paths alive at `t`, with standard error.
pub fn stable_survival_probability(
    dom: &DomainSpec,
    alpha: f64,
    x0: &[f64],
    t: f64,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples == 0 {
        return input("n_samples must be at least 1");
    }
    // validate once up front
    sample_stable_path(dom, alpha, x0, dt.min(t), dt.min(t), seed, u64::MAX)?;
    let alive: u64 = blocks(n_samples)
        .into_par_iter()
        .map(|(a, b)| {
            (a..b)
                .map(|s| sample_stable_path(dom, alpha, x0, t, dt, seed, s as u64).map(|p| u64::from(!p.killed)).unwrap_or(0))
                .sum::<u64>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let q = alive as f64 / n_samples as f64;
    Ok((q, (q * (1.0 - q) / n_samples as f64).sqrt()))
}

/// `∫_{[-1/2,1/2]^d} |u|^{2-d-α} du`, by the radial integral to the cube
/// faces: `d/(2-α) ∫_{[-1/2,1/2]^{d-1}} (1/4 + |w|²)^{(2-α-d)/2} dw`.
fn self_cell_integral(d: usize, alpha: f64) -> f64 {
    let e = 0.5 * (2.0 - alpha - d as f64);
    let face = match d {
        1 => 0.25f64.powf(e),
        2 => GaussLegendre::new(32).integrate(-0.5, 0.5, |w| (0.25 + w * w).powf(e)),
        _ => {
            let gl = GaussLegendre::new(32);
            gl.integrate(-0.5, 0.5, |w1| gl.integrate(-0.5, 0.5, |w2| (0.25 + w1 * w1 + w2 * w2).powf(e)))
        }
    };
    d as f64 / (2.0 - alpha) * face
}

/// `∫∫ |ψ(x) - ψ(y)|² / |x - y|^{d+α} dx dy` with `ψ` extended by zero.
///
/// The lattice double sum covers node pairs `x ≠ y`; the excluded self
/// cell is replaced by `|∇ψ(x)|² h^{2-α} K_d(α) / d` with central
/// differences, and in `d = 1` the pairs with `y` beyond the lattice box are
/// added in closed form. In `d ≥ 2` the lattice box must carry the support
/// with some margin.
pub fn fractional_energy(psi: &GridField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return input(format!("α must lie in (0, 2), got {alpha}"));
    }
    let lat = &*psi.lattice;
    let sup = psi.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if psi.values.iter().any(|v| !v.is_finite()) {
        return input("ψ has non-finite values");
    }
    if (0..lat.node_count()).any(|i| !lat.interior[i] && psi.values[i].abs() > 1e-12 * sup.max(f64::MIN_POSITIVE)) {
        return input("ψ must vanish outside D");
    }
    let d = lat.dim();
    let h = lat.spacing;
    let n = lat.node_count();
    let v = &psi.values;
    let coords: Vec<Vec<f64>> = (0..n).map(|i| lat.coords(i)).collect();
    let expo = 0.5 * (d as f64 + alpha);
    let cell_k = self_cell_integral(d, alpha) * h.powf(2.0 - alpha) / d as f64;
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &coords[i];
            let mut acc = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let diff = v[i] - v[j];
                if diff == 0.0 {
                    continue;
                }
                let r2: f64 = xi.iter().zip(&coords[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                acc += diff * diff / r2.powf(expo);
            }
            acc *= lat.cell_measure;
            // self cell via the local gradient
            let mut g2 = 0.0;
            for k in 0..d {
                let up = lat.neighbor(i, k, true).map_or(0.0, |j| v[j]);
                let dn = lat.neighbor(i, k, false).map_or(0.0, |j| v[j]);
                g2 += ((up - dn) / (2.0 * h)).powi(2);
            }
            acc += g2 * cell_k;
            if d == 1 && v[i] != 0.0 {
                // both orderings of (x, y) with y outside the lattice box
                let a = xi[0] - lat.origin[0] + 0.5 * h;
                let b = lat.upper[0] + 0.5 * h - xi[0];
                acc += 2.0 * v[i] * v[i] * (a.powf(-alpha) + b.powf(-alpha)) / alpha;
            }
            acc
        })
        .collect();
    Ok(lat.cell_measure * rows.iter().sum::<f64>())
}

/// Refinement-pair membership in `W^{α/2,2}_0`: the energy may grow by at
/// most [`FRACTIONAL_GROWTH_TOL`] (relative) from `h` to `h/2`.
pub fn fractional_membership(coarse: &GridField, fine: &GridField, alpha: f64) -> Result<Membership> {
    let ratio = coarse.spacing() / fine.spacing();
    if (ratio - 2.0).abs() > 1e-9 {
        return input(format!("refinement pair needs spacing ratio 2, got {ratio}"));
    }
    let coarse_energy = fractional_energy(coarse, alpha)?;
    let fine_energy = fractional_energy(fine, alpha)?;
    let growth = if coarse_energy > 0.0 { fine_energy / coarse_energy } else if fine_energy > 0.0 { f64::INFINITY } else { 1.0 };
    Ok(Membership { coarse_energy, fine_energy, growth, member: fine_energy.is_finite() && growth <= 1.0 + FRACTIONAL_GROWTH_TOL })
}

/// The rate function with [`fractional_energy`] in place of the Dirichlet
/// energy (no `½` prefactor): `Σ_i E_α(√μ^{(i)})` when `μ = ∏ μ^{(i)}`
/// within `10h` in `L¹`, otherwise `+∞`. Refuses inadmissible parameters.
pub fn rate_i_stable(mt: &MeasureTuple, sp: &StableParams) -> Result<f64> {
    sp.check()?;
    if mt.p() != sp.p || mt.mu.lattice.dim() != sp.d {
        return input("tuple does not match (d, p) of the stable parameters");
    }
    let refs: Vec<&GridField> = mt.mus.iter().collect();
    let gap = mt.mu.l1_distance(&GridField::product(&refs)?)?;
    if gap > 10.0 * mt.mu.spacing() {
        return Ok(f64::INFINITY);
    }
    let mut total = 0.0;
    for m in &mt.mus {
        match fractional_energy(&m.map(|v| v.max(0.0).sqrt()), sp.alpha) {
            Ok(e) if e.is_finite() => total += e,
            _ => return Ok(f64::INFINITY),
        }
    }
    Ok(total)
}

/// [`rate_i_stable`] with the constraint `μ = ∏ T_ε μ^{(i)}`.
pub fn rate_i_stable_eps(mt: &MeasureTuple, sp: &StableParams, eps: f64) -> Result<f64> {
    sp.check()?;
    let gap = mt.mu.l1_distance(&mollified_product(&mt.mus, eps)?)?;
    if gap > 10.0 * mt.mu.spacing() {
        return Ok(f64::INFINITY);
    }
    let compatible = MeasureTuple::from_densities(mt.mus.clone())?;
    rate_i_stable(&compatible, sp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_cell_integral_in_one_dimension() {
        // 2 ∫_0^{1/2} u^{1-α} du
        let alpha = 0.7;
        let want = 2.0 * 0.5f64.powf(2.0 - alpha) / (2.0 - alpha);
        assert!((self_cell_integral(1, alpha) - want).abs() < 1e-14);
    }

    #[test]
    fn self_cell_integral_in_the_plane() {
        // brute-force midpoint sum away from the origin plus the disc r < 1/100
        let alpha = 1.0;
        let m = 2000;
        let mut acc = 0.0;
        let r0 = 0.01;
        for i in 0..m {
            for j in 0..m {
                let x = -0.5 + (i as f64 + 0.5) / m as f64;
                let y = -0.5 + (j as f64 + 0.5) / m as f64;
                let r = (x * x + y * y).sqrt();
                if r >= r0 {
                    acc += r.powf(-alpha) / (m * m) as f64;
                }
            }
        }
        acc += 2.0 * PI * r0.powf(2.0 - alpha) / (2.0 - alpha);
        assert!((self_cell_integral(2, alpha) - acc).abs() < 2e-3 * acc, "{} vs {acc}", self_cell_integral(2, alpha));
    }

    #[test]
    fn positive_stable_laplace_transform() {
        let beta = 0.6;
        let n = 100_000;
        let mut rng = stream_rng(3, 0);
        let lam = 1.0;
        let mean: f64 = (0..n).map(|_| (-lam * positive_stable(beta, &mut rng)).exp()).sum::<f64>() / n as f64;
        assert!((mean - (-1.0f64).exp()).abs() < 0.005, "{mean}");
    }
}
