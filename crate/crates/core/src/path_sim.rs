//! Euler simulation of killed Brownian motion with a Brownian-bridge kill
//! correction, occupation fields, and survival estimates.
//!
//! After every step that lands in `D` the path is killed with the bridge
//! crossing probability `1 - Π_f (1 - exp(-2 a_f b_f / dt))`, where `a_f`,
//! `b_f` are the distances to face `f` before and after the step. For the
//! disk a single nearest-boundary face is used.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{input, Result};
use crate::geometry::{DomainKind, DomainSpec, Lattice};
use crate::grid::GridField;
use crate::rng::{blocks, joint_stream, stream_rng, StreamRng};

/// One simulated trajectory, stored up to its last in-domain step.
#[derive(Debug, Clone)]
pub struct KilledPath {
    pub d: usize,
    /// Effective step size (`horizon / steps`).
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Flattened positions at times `j·dt`, `j = 0..=alive_until`.
    pub positions: Vec<f64>,
    pub alive_until: usize,
    /// Midpoint of the step during which the path was killed; `+∞` when it
    /// survived the horizon.
    pub exit_time_estimate: f64,
    pub killed: bool,
}

impl KilledPath {
    pub fn position(&self, j: usize) -> &[f64] {
        &self.positions[j * self.d..(j + 1) * self.d]
    }
}

/// `t/dt` rounded to a whole number of steps and the matching step size.
pub fn step_plan(t: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) || !(t > 0.0) || dt > t * (1.0 + 1e-12) {
        return input(format!("need 0 < dt ≤ t, got dt={dt}, t={t}"));
    }
    let ratio = t / dt;
    let n = if (ratio - ratio.round()).abs() < 1e-6 { ratio.round() } else { ratio.ceil() } as usize;
    let n = n.max(1);
    Ok((n, t / n as f64))
}

/// Reusable per-walker buffers.
struct Walker<'a> {
    dom: &'a DomainSpec,
    sqrt_dt: f64,
    dt: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    faces_x: Vec<f64>,
    faces_y: Vec<f64>,
}

impl<'a> Walker<'a> {
    fn new(dom: &'a DomainSpec, x0: &[f64], dt: f64) -> Self {
        let mut w = Self {
            dom,
            sqrt_dt: dt.sqrt(),
            dt,
            x: x0.to_vec(),
            y: vec![0.0; dom.d],
            faces_x: Vec::with_capacity(2 * dom.d),
            faces_y: Vec::with_capacity(2 * dom.d),
        };
        dom.face_distances(x0, &mut w.faces_x);
        w
    }

    /// Advances one step; returns `false` if the path is killed.
    #[inline]
    fn step(&mut self, rng: &mut StreamRng) -> bool {
        for k in 0..self.dom.d {
            let z: f64 = rng.sample(StandardNormal);
            self.y[k] = self.x[k] + self.sqrt_dt * z;
        }
        if matches!(self.dom.kind, DomainKind::WholeSpace) {
            std::mem::swap(&mut self.x, &mut self.y);
            return true;
        }
        if !self.dom.contains_unchecked(&self.y) {
            return false;
        }
        self.dom.face_distances(&self.y, &mut self.faces_y);
        let mut survive = 1.0;
        for (a, b) in self.faces_x.iter().zip(&self.faces_y) {
            survive *= 1.0 - (-2.0 * a * b / self.dt).exp();
        }
        let u: f64 = rng.random();
        if u >= survive {
            return false;
        }
        std::mem::swap(&mut self.x, &mut self.y);
        std::mem::swap(&mut self.faces_x, &mut self.faces_y);
        true
    }
}

/// Walks `n` steps, calling `visit(j, x_j)` for every alive position
/// `j = 0..n` (the left endpoint of each step). Returns the step during which
/// the path was killed, or `None` if it survived.
fn walk(dom: &DomainSpec, x0: &[f64], n: usize, dt: f64, rng: &mut StreamRng, mut visit: impl FnMut(usize, &[f64])) -> Option<usize> {
    let mut w = Walker::new(dom, x0, dt);
    for j in 0..n {
        visit(j, &w.x);
        if !w.step(rng) {
            return Some(j);
        }
    }
    None
}

fn check_start(dom: &DomainSpec, x0: &[f64]) -> Result<()> {
    if !dom.contains(x0)? {
        return input("initial point must lie in D");
    }
    Ok(())
}

/// One killed path from `x0`, drawn from stream `stream` of `seed`.
pub fn sample_path_stream(dom: &DomainSpec, x0: &[f64], t: f64, dt: f64, seed: u64, stream: u64) -> Result<KilledPath> {
    check_start(dom, x0)?;
    let (n, dt) = step_plan(t, dt)?;
    let mut rng = stream_rng(seed, stream);
    let mut positions = Vec::with_capacity((n + 1) * dom.d);
    let mut w = Walker::new(dom, x0, dt);
    positions.extend_from_slice(x0);
    let mut killed_at = None;
    for j in 0..n {
        if !w.step(&mut rng) {
            killed_at = Some(j);
            break;
        }
        positions.extend_from_slice(&w.x);
    }
    let (alive_until, exit, killed) = match killed_at {
        Some(j) => (j, ((j as f64 + 0.5) * dt).min(t), true),
        None => (n, f64::INFINITY, false),
    };
    Ok(KilledPath { d: dom.d, dt, horizon: t, steps: n, positions, alive_until, exit_time_estimate: exit, killed })
}

/// One killed path from `x0`; a deterministic function of `seed` and the
/// parameters.
pub fn sample_path(dom: &DomainSpec, x0: &[f64], t: f64, dt: f64, seed: u64) -> Result<KilledPath> {
    sample_path_stream(dom, x0, t, dt, seed, 0)
}

/// Density (against Lebesgue measure) of `t⁻¹ ℓ_t` on a lattice.
#[derive(Debug, Clone)]
pub struct OccupationField {
    pub field: GridField,
    pub total_mass: f64,
}

impl OccupationField {
    pub fn from_field(field: GridField) -> Self {
        let total_mass = field.integral();
        Self { field, total_mass }
    }
}

/// Bins the alive steps of `path` into nearest lattice cells, each carrying
/// `dt/t`, and normalises by the cell measure.
pub fn occupation_field(path: &KilledPath, lat: &Arc<Lattice>, t: f64) -> Result<OccupationField> {
    if (path.horizon - t).abs() > 1e-12 * t.max(1.0) {
        return input(format!("path horizon {} does not match t={t}", path.horizon));
    }
    if lat.dim() != path.d {
        return input("lattice dimension does not match the path");
    }
    let mut values = vec![0.0; lat.node_count()];
    let weight = path.dt / t / lat.cell_measure;
    let last = path.alive_until.min(path.steps.saturating_sub(1));
    for j in 0..=last {
        if let Some(idx) = lat.nearest_node(path.position(j)) {
            values[idx] += weight;
        }
    }
    Ok(OccupationField::from_field(GridField::from_values(lat.clone(), values)?))
}

/// Simulates one path straight into an occupation-density buffer; returns
/// whether the path was killed before `n·dt`.
pub(crate) fn deposit_occupation(
    dom: &DomainSpec,
    x0: &[f64],
    n: usize,
    dt: f64,
    rng: &mut StreamRng,
    lat: &Lattice,
    buf: &mut [f64],
) -> bool {
    let weight = 1.0 / n as f64 / lat.cell_measure;
    walk(dom, x0, n, dt, rng, |_, x| {
        if let Some(idx) = lat.nearest_node(x) {
            buf[idx] += weight;
        }
    })
    .is_some()
}

/// Monte Carlo estimate of `P_x0(t < τ_D)` with its binomial standard error.
pub fn survival_probability(dom: &DomainSpec, x0: &[f64], t: f64, dt: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    let counts = survival_counts(dom, x0, &[t], dt, n_samples, seed)?;
    Ok(binomial(counts[0], n_samples))
}

fn binomial(count: u64, n: usize) -> (f64, f64) {
    let p = count as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Number of paths (out of `n_samples`) alive at each time of `t_list`,
/// from a single simulation to the largest time.
pub fn survival_counts(dom: &DomainSpec, x0: &[f64], t_list: &[f64], dt: f64, n_samples: usize, seed: u64) -> Result<Vec<u64>> {
    check_start(dom, x0)?;
    if n_samples == 0 {
        return input("n_samples must be at least 1");
    }
    let t_max = t_list.iter().cloned().fold(f64::NAN, f64::max);
    if !(t_max > 0.0) {
        return input("t_list must contain a positive time");
    }
    let (n, dt) = step_plan(t_max, dt)?;
    // alive at t_k iff no kill during steps 0..steps_k
    let thresholds: Vec<usize> = t_list.iter().map(|&t| ((t / dt).round() as usize).min(n)).collect();
    if matches!(dom.kind, DomainKind::WholeSpace) {
        return Ok(vec![n_samples as u64; t_list.len()]);
    }
    let per_block: Vec<Vec<u64>> = blocks(n_samples)
        .into_par_iter()
        .map(|(a, b)| {
            let mut counts = vec![0u64; thresholds.len()];
            for s in a..b {
                let mut rng = stream_rng(seed, s as u64);
                let kill = walk(dom, x0, n, dt, &mut rng, |_, _| {});
                let survived_steps = kill.unwrap_or(n);
                for (c, &th) in counts.iter_mut().zip(&thresholds) {
                    if kill.is_none() || survived_steps >= th {
                        *c += 1;
                    }
                }
            }
            counts
        })
        .collect();
    let mut total = vec![0u64; thresholds.len()];
    for c in per_block {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

/// Probability that `p` independent paths from `x0s` all survive to `t`,
/// simulated jointly.
pub fn joint_survival_probability(dom: &DomainSpec, x0s: &[Vec<f64>], t: f64, dt: f64, n_samples: usize, seed: u64) -> Result<(f64, f64)> {
    for x0 in x0s {
        check_start(dom, x0)?;
    }
    if n_samples == 0 {
        return input("n_samples must be at least 1");
    }
    let (n, dt) = step_plan(t, dt)?;
    let p = x0s.len();
    let count: u64 = blocks(n_samples)
        .into_par_iter()
        .map(|(a, b)| {
            (a..b)
                .filter(|&s| {
                    x0s.iter().enumerate().all(|(i, x0)| {
                        let mut rng = stream_rng(seed, joint_stream(s as u64, p, i));
                        walk(dom, x0, n, dt, &mut rng, |_, _| {}).is_none()
                    })
                })
                .count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    Ok(binomial(count, n_samples))
}

/// Survival function of `(0, len)` from `x` after time `tau` and its
/// `x`-derivative, by the odd sine series.
fn interval_survival_and_slope(len: f64, tau: f64, x: f64) -> (f64, f64) {
    let mut h = 0.0;
    let mut dh = 0.0;
    for m in 0..5000 {
        let n = (2 * m + 1) as f64;
        let k = n * std::f64::consts::PI / len;
        let decay = (-0.5 * k * k * tau).exp();
        if decay < 1e-17 {
            break;
        }
        h += 4.0 / (n * std::f64::consts::PI) * (k * x).sin() * decay;
        dh += 4.0 / len * (k * x).cos() * decay;
    }
    (h, dh)
}

/// Path on `(0, len)` conditioned to survive until `t`, via the Doob
/// transform with drift `∂ₓ log P_x(τ > t - s)`. The drift is frozen at
/// remaining time `0.01·len²` over the last stretch, where the survival
/// function is within rounding of one away from the walls.
pub fn sample_conditioned_interval_path(len: f64, x0: f64, t: f64, dt: f64, seed: u64, stream: u64) -> Result<KilledPath> {
    if !(x0 > 0.0 && x0 < len) {
        return input("initial point must lie in (0, len)");
    }
    let (n, dt) = step_plan(t, dt)?;
    let mut rng = stream_rng(seed, stream);
    let mut positions = Vec::with_capacity(n + 1);
    let mut x = x0;
    positions.push(x);
    let sqrt_dt = dt.sqrt();
    let tau_min = 0.01 * len * len;
    for j in 0..n {
        let tau = (t - j as f64 * dt).max(tau_min);
        let (h, dh) = interval_survival_and_slope(len, tau, x);
        let drift = if h > 0.0 { dh / h } else { 0.0 };
        let z: f64 = rng.sample(StandardNormal);
        x += drift * dt + sqrt_dt * z;
        // the conditioned process never reaches the walls; reflect Euler overshoot
        while !(x > 0.0 && x < len) {
            x = if x <= 0.0 { -x + 1e-12 } else { 2.0 * len - x - 1e-12 };
        }
        positions.push(x);
    }
    Ok(KilledPath { d: 1, dt, horizon: t, steps: n, positions, alive_until: n, exit_time_estimate: f64::INFINITY, killed: false })
}
