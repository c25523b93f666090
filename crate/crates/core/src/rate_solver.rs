//! Dirichlet-energy rate functions on lattice measure tuples, the principal
//! Dirichlet eigenpair of `-½Δ`, and empirical exit rates.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, ImlError, Result};
use crate::geometry::{make_lattice, DomainKind, DomainSpec, Lattice};
use crate::grid::GridField;
use crate::intersection::BallAverage;
use crate::path_sim::survival_counts;

/// Largest relative link jump `|ψ_j - ψ_i| / sup ψ` accepted by the single
/// grid Sobolev test. A `W^{1,2}` function has link jumps `O(√h)` in `d = 1`
/// and `o(1)` in general, while a jump discontinuity keeps an `O(1)` step.
pub const JUMP_THRESHOLD: f64 = 0.5;

/// Largest energy growth under `h → h/2` accepted by the refinement test.
pub const REFINEMENT_GROWTH: f64 = std::f64::consts::SQRT_2;

/// Survivor count below which an exit-rate row is flagged.
pub const MIN_SURVIVORS: u64 = 50;

/// Lattice measure tuple `(μ, μ^{(1)}, …, μ^{(p)})` with the mass each
/// component has lost to the cemetery point.
#[derive(Debug, Clone)]
pub struct MeasureTuple {
    pub mu: GridField,
    pub mus: Vec<GridField>,
    pub mass_at_infinity: Vec<f64>,
}

impl MeasureTuple {
    pub fn new(mu: GridField, mus: Vec<GridField>, mass_at_infinity: Vec<f64>) -> Result<Self> {
        if mus.is_empty() || mus.len() != mass_at_infinity.len() {
            return input("need one mass at infinity per component and at least one component");
        }
        for (m, &c) in mus.iter().zip(&mass_at_infinity) {
            mu.check_same_lattice(m)?;
            if m.values.iter().any(|v| !(*v >= 0.0)) {
                return input("component densities must be nonnegative");
            }
            if !(0.0..=1.0).contains(&c) {
                return input(format!("mass at infinity {c} outside [0, 1]"));
            }
            let total = m.integral() + c;
            if (total - 1.0).abs() > 1e-9 {
                return input(format!("component mass plus mass at infinity is {total}, not 1"));
            }
        }
        Ok(Self { mu, mus, mass_at_infinity })
    }

    /// Tuple whose `μ` is the product of the given densities; the mass
    /// deficit of each component is put at infinity.
    pub fn from_densities(mus: Vec<GridField>) -> Result<Self> {
        let refs: Vec<&GridField> = mus.iter().collect();
        let mu = GridField::product(&refs)?;
        let c = mus.iter().map(|m| clamp_deficit(1.0 - m.integral())).collect();
        Self::new(mu, mus, c)
    }

    /// Tuple whose `μ` is the product of the ball-averaged densities.
    pub fn mollified_compatible(mus: Vec<GridField>, eps: f64) -> Result<Self> {
        let mu = mollified_product(&mus, eps)?;
        let c = mus.iter().map(|m| clamp_deficit(1.0 - m.integral())).collect();
        Self::new(mu, mus, c)
    }

    pub fn p(&self) -> usize {
        self.mus.len()
    }

    fn h(&self) -> f64 {
        self.mu.spacing()
    }
}

fn clamp_deficit(c: f64) -> f64 {
    if c.abs() < 1e-9 {
        0.0
    } else {
        c
    }
}

/// `∏_i T_ε μ^{(i)}`.
pub fn mollified_product(mus: &[GridField], eps: f64) -> Result<GridField> {
    let first = mus.first().ok_or_else(|| ImlError::Input("empty tuple".into()))?;
    let op = BallAverage::new(first.lattice.clone(), eps)?;
    let avgs: Vec<GridField> = mus.iter().map(|m| op.apply_field(m)).collect::<Result<_>>()?;
    let refs: Vec<&GridField> = avgs.iter().collect();
    GridField::product(&refs)
}

/// `‖∏_i T_ε μ^{(i)} - ∏_i μ^{(i)}‖_{L¹}`.
pub fn product_mollification_gap(mus: &[GridField], eps: f64) -> Result<f64> {
    let refs: Vec<&GridField> = mus.iter().collect();
    mollified_product(mus, eps)?.l1_distance(&GridField::product(&refs)?)
}

/// Sum over links `(i, i + e_k)` touching the interior of `f(ψ_i, ψ_j)`;
/// links leaving the lattice box see `ψ = 0`. Chunked so the reduction
/// order does not depend on the thread pool.
fn link_fold(psi: &GridField, f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let lat = &*psi.lattice;
    let v = &psi.values;
    let n = lat.node_count();
    let chunk = 4096;
    let partial: Vec<f64> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = 0.0;
            for i in c * chunk..((c + 1) * chunk).min(n) {
                for k in 0..lat.dim() {
                    match lat.neighbor(i, k, true) {
                        Some(j) => {
                            if lat.interior[i] || lat.interior[j] {
                                acc += f(v[i], v[j]);
                            }
                        }
                        None if lat.interior[i] => acc += f(v[i], 0.0),
                        None => {}
                    }
                    if lat.neighbor(i, k, false).is_none() && lat.interior[i] {
                        acc += f(0.0, v[i]);
                    }
                }
            }
            acc
        })
        .collect();
    partial.iter().sum()
}

fn check_zero_trace(psi: &GridField) -> Result<()> {
    let sup = psi.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if psi.values.iter().any(|v| !v.is_finite()) {
        return input("ψ has non-finite values");
    }
    let lat = &*psi.lattice;
    let bad = (0..lat.node_count()).any(|i| !lat.interior[i] && psi.values[i].abs() > 1e-12 * sup.max(f64::MIN_POSITIVE));
    if bad {
        return input("ψ has a nonzero boundary trace");
    }
    Ok(())
}

/// `½ ∫ |∇ψ|²` by forward differences over lattice links, with `ψ = 0`
/// outside `D`.
pub fn dirichlet_energy(psi: &GridField) -> Result<f64> {
    check_zero_trace(psi)?;
    let h = psi.spacing();
    let s = link_fold(psi, |a, b| (b - a) * (b - a));
    Ok(0.5 * psi.cell_measure() * s / (h * h))
}

/// Single-grid `W^{1,2}_0` test: zero trace, finite energy and no link jump
/// above [`JUMP_THRESHOLD`] of `sup ψ`.
pub fn sobolev_member(psi: &GridField) -> bool {
    if check_zero_trace(psi).is_err() {
        return false;
    }
    let sup = psi.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if sup == 0.0 {
        return true;
    }
    let jump = link_fold(psi, |a, b| 0.0_f64.max((b - a).abs() - JUMP_THRESHOLD * sup));
    jump == 0.0 && dirichlet_energy(psi).map(f64::is_finite).unwrap_or(false)
}

/// Outcome of the refinement-pair Sobolev test.
#[derive(Debug, Clone, Serialize)]
pub struct Membership {
    pub coarse_energy: f64,
    pub fine_energy: f64,
    pub growth: f64,
    pub member: bool,
}

/// Refinement-pair `W^{1,2}_0` test: the energy may not grow by more than
/// [`REFINEMENT_GROWTH`] from spacing `h` to `h/2`.
pub fn sobolev_membership(coarse: &GridField, fine: &GridField) -> Result<Membership> {
    let ratio = coarse.spacing() / fine.spacing();
    if (ratio - 2.0).abs() > 1e-9 {
        return input(format!("refinement pair needs spacing ratio 2, got {ratio}"));
    }
    let coarse_energy = dirichlet_energy(coarse)?;
    let fine_energy = dirichlet_energy(fine)?;
    let growth = if coarse_energy > 0.0 { fine_energy / coarse_energy } else if fine_energy > 0.0 { f64::INFINITY } else { 1.0 };
    Ok(Membership { coarse_energy, fine_energy, growth, member: fine_energy.is_finite() && growth < REFINEMENT_GROWTH })
}

fn sqrt_density(m: &GridField) -> GridField {
    m.map(|v| v.max(0.0).sqrt())
}

fn energy_sum(mt: &MeasureTuple) -> f64 {
    let mut total = 0.0;
    for m in &mt.mus {
        let psi = sqrt_density(m);
        if !sobolev_member(&psi) {
            return f64::INFINITY;
        }
        match dirichlet_energy(&psi) {
            Ok(e) => total += e,
            Err(_) => return f64::INFINITY,
        }
    }
    total
}

/// `Σ_i ½ ∫ |∇√μ^{(i)}|²` when every `√μ^{(i)}` is in `W^{1,2}_0` and
/// `‖μ - ∏ μ^{(i)}‖_{L¹} ≤ compat_tol`, otherwise `+∞`. Mass at infinity is
/// allowed; only the density part is scored.
pub fn rate_i_with_tol(mt: &MeasureTuple, compat_tol: f64) -> f64 {
    let refs: Vec<&GridField> = mt.mus.iter().collect();
    let gap = match GridField::product(&refs).and_then(|prod| mt.mu.l1_distance(&prod)) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    if gap > compat_tol {
        return f64::INFINITY;
    }
    energy_sum(mt)
}

/// [`rate_i_with_tol`] with the default tolerance `10h`.
pub fn rate_i(mt: &MeasureTuple) -> f64 {
    rate_i_with_tol(mt, 10.0 * mt.h())
}

/// As [`rate_i_with_tol`] with the constraint `μ = ∏ T_ε μ^{(i)}`.
pub fn rate_i_eps_with_tol(mt: &MeasureTuple, eps: f64, compat_tol: f64) -> f64 {
    let gap = match mollified_product(&mt.mus, eps).and_then(|prod| mt.mu.l1_distance(&prod)) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    if gap > compat_tol {
        return f64::INFINITY;
    }
    energy_sum(mt)
}

pub fn rate_i_eps(mt: &MeasureTuple, eps: f64) -> f64 {
    rate_i_eps_with_tol(mt, eps, 10.0 * mt.h())
}

/// Rate of a tuple given on two lattices `h` and `h/2`: the fine energy when
/// every component passes [`sobolev_membership`] and both tuples are
/// compatible, otherwise `+∞`.
pub fn rate_i_refined(coarse: &MeasureTuple, fine: &MeasureTuple) -> Result<f64> {
    if coarse.p() != fine.p() {
        return input("refinement pair has different numbers of components");
    }
    if !rate_i(coarse).is_finite() || !rate_i(fine).is_finite() {
        return Ok(f64::INFINITY);
    }
    let mut total = 0.0;
    for (a, b) in coarse.mus.iter().zip(&fine.mus) {
        let m = sobolev_membership(&sqrt_density(a), &sqrt_density(b))?;
        if !m.member {
            return Ok(f64::INFINITY);
        }
        total += m.fine_energy;
    }
    Ok(total)
}

/// Principal Dirichlet eigenpair of the lattice `-½Δ`.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub lambda1: f64,
    /// `L²`-normalised, positive at interior nodes, zero elsewhere.
    pub psi1: GridField,
    pub iterations: usize,
    /// `‖Aψ - λψ‖ / ‖λψ‖` at exit.
    pub residual: f64,
}

/// Sparse `-½Δ` on the active nodes, Shortley-Weller near curved boundaries.
struct Operator {
    diag: Vec<f64>,
    /// `(column, coefficient)` per row.
    off: Vec<Vec<(usize, f64)>>,
    symmetric: bool,
}

impl Operator {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = self.diag[r] * x[r];
            for &(c, a) in &self.off[r] {
                acc += a * x[c];
            }
            *yr = acc;
        }
    }

    fn len(&self) -> usize {
        self.diag.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const INNER_TOL: f64 = 1e-13;
const INNER_MAX: usize = 20_000;

/// Conjugate gradients from the initial guess in `x`.
fn cg(a: &Operator, b: &[f64], x: &mut [f64]) -> Result<()> {
    let n = a.len();
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = INNER_TOL * norm(b);
    for _ in 0..INNER_MAX {
        if rr.sqrt() <= target {
            return Ok(());
        }
        a.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
    }
    // round-off floors the residual slightly above the target on fine grids
    if rr.sqrt() <= 1e3 * target {
        Ok(())
    } else {
        Err(ImlError::Solver(format!("CG stalled at residual {}", rr.sqrt() / norm(b))))
    }
}

/// BiCGSTAB from the initial guess in `x`.
fn bicgstab(a: &Operator, b: &[f64], x: &mut [f64]) -> Result<()> {
    let n = a.len();
    let mut r = vec![0.0; n];
    a.apply(x, &mut r);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let target = INNER_TOL * norm(b);
    for _ in 0..INNER_MAX {
        if norm(&r) <= target {
            return Ok(());
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        a.apply(&p, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            return Ok(());
        }
        a.apply(&s, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    if norm(&r) <= 1e3 * target {
        Ok(())
    } else {
        Err(ImlError::Solver(format!("BiCGSTAB stalled at residual {}", norm(&r) / norm(b))))
    }
}

/// Nodes carrying unknowns: interior nodes, minus the lattice box faces
/// when `D` is unbounded (Dirichlet truncation).
fn active_nodes(dom: &DomainSpec, lat: &Lattice) -> Vec<bool> {
    (0..lat.node_count()).map(|i| lat.interior[i] && (dom.is_bounded() || !lat.on_box_edge(i))).collect()
}

fn build_operator(dom: &DomainSpec, lat: &Lattice, active: &[bool], index: &[usize]) -> Operator {
    let h = lat.spacing;
    let d = lat.dim();
    let mut diag = Vec::new();
    let mut off = Vec::new();
    let mut symmetric = true;
    let mut x = vec![0.0; d];
    for i in (0..lat.node_count()).filter(|&i| active[i]) {
        lat.coords_into(i, &mut x);
        let mut di = 0.0;
        let mut row = Vec::with_capacity(2 * d);
        for k in 0..d {
            let arm = |up: bool| match lat.neighbor(i, k, up) {
                Some(j) if active[j] => (h, Some(index[j])),
                _ => {
                    let reach = if dom.is_bounded() { dom.ray_exit_distance(&x, k, up) } else { h };
                    (reach.min(h).max(1e-2 * h), None)
                }
            };
            let (hp, cp) = arm(true);
            let (hm, cm) = arm(false);
            if hp != h || hm != h {
                symmetric = false;
            }
            let s = hp + hm;
            di += (1.0 / hp + 1.0 / hm) / s;
            if let Some(c) = cp {
                row.push((c, -1.0 / (s * hp)));
            }
            if let Some(c) = cm {
                row.push((c, -1.0 / (s * hm)));
            }
        }
        diag.push(di);
        off.push(row);
    }
    Operator { diag, off, symmetric }
}

const OUTER_TOL: f64 = 1e-10;
const OUTER_MAX: usize = 500;

/// Smallest eigenpair of the lattice `-½Δ` with Dirichlet rows eliminated,
/// by inverse power iteration (CG inner solves, BiCGSTAB when curved
/// boundaries make the stencil nonsymmetric). Unbounded domains are
/// truncated to the lattice box.
pub fn principal_eigenpair(dom: &DomainSpec, lat: &Arc<Lattice>) -> Result<EigenResult> {
    if lat.dim() != dom.d {
        return input("lattice dimension does not match the domain");
    }
    let active = active_nodes(dom, lat);
    let mut index = vec![usize::MAX; lat.node_count()];
    let mut nodes = Vec::new();
    for i in 0..lat.node_count() {
        if active[i] {
            index[i] = nodes.len();
            nodes.push(i);
        }
    }
    if nodes.is_empty() {
        return input("lattice has no interior nodes");
    }
    let a = build_operator(dom, lat, &active, &index);
    let n = a.len();
    let cell = lat.cell_measure;
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    let mut ay = vec![0.0; n];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    for it in 1..=OUTER_MAX {
        iterations = it;
        // warm start: A y = x has y ≈ x / λ once x is close to ψ₁
        let guess = if lambda > 0.0 { 1.0 / lambda } else { 0.0 };
        y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi = guess * xi);
        if a.symmetric {
            cg(&a, &x, &mut y)?;
        } else {
            bicgstab(&a, &x, &mut y)?;
        }
        let scale = 1.0 / (cell * dot(&y, &y)).sqrt();
        y.iter_mut().for_each(|v| *v *= scale);
        a.apply(&y, &mut ay);
        lambda = dot(&y, &ay) / dot(&y, &y);
        residual = ay.iter().zip(&y).map(|(u, v)| (u - lambda * v).powi(2)).sum::<f64>().sqrt() / (lambda * norm(&y));
        std::mem::swap(&mut x, &mut y);
        if residual < OUTER_TOL {
            break;
        }
    }
    if !(residual < OUTER_TOL) {
        return Err(ImlError::Solver(format!("inverse iteration stopped at residual {residual} after {iterations} steps")));
    }
    if x.iter().sum::<f64>() < 0.0 {
        x.iter_mut().for_each(|v| *v = -*v);
    }
    if x.iter().any(|v| *v <= 0.0) {
        return Err(ImlError::Solver("principal eigenvector is not positive".into()));
    }
    let mut values = vec![0.0; lat.node_count()];
    for (r, &i) in nodes.iter().enumerate() {
        values[i] = x[r];
    }
    Ok(EigenResult { lambda1: lambda, psi1: GridField::from_values(lat.clone(), values)?, iterations, residual })
}

/// Rayleigh quotient `⟨ψ, -½Δψ⟩ / ⟨ψ, ψ⟩` of the lattice operator.
pub fn rayleigh_quotient(dom: &DomainSpec, psi: &GridField) -> Result<f64> {
    let lat = &psi.lattice;
    let active = active_nodes(dom, lat);
    let mut index = vec![usize::MAX; lat.node_count()];
    let mut nodes = Vec::new();
    for i in 0..lat.node_count() {
        if active[i] {
            index[i] = nodes.len();
            nodes.push(i);
        }
    }
    let a = build_operator(dom, lat, &active, &index);
    let x: Vec<f64> = nodes.iter().map(|&i| psi.values[i]).collect();
    let mut ax = vec![0.0; x.len()];
    a.apply(&x, &mut ax);
    Ok(dot(&x, &ax) / dot(&x, &x))
}

/// One row of an exit-rate table.
#[derive(Debug, Clone, Serialize)]
pub struct ExitRateRow {
    pub t: f64,
    pub survivors: u64,
    pub survival: f64,
    /// `-(1/t) log P(t < τ)^p`.
    pub rate: f64,
    pub std_error: f64,
    /// Set when fewer than [`MIN_SURVIVORS`] paths survive.
    pub low_count: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitRateTable {
    pub p: usize,
    pub n_samples: usize,
    pub dt: f64,
    pub rows: Vec<ExitRateRow>,
    /// `p · λ₁` from [`principal_eigenpair`] (zero on unbounded domains).
    pub p_lambda1: f64,
}

/// Empirical exit rate `-(1/t) log P(t < τ)^p` from `n_samples` single
/// paths, using independence of the `p` components.
pub fn empirical_exit_rate(
    dom: &DomainSpec,
    x0: &[f64],
    p: usize,
    t_list: &[f64],
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ExitRateTable> {
    if p == 0 {
        return input("p must be at least 1");
    }
    if t_list.is_empty() || t_list.windows(2).any(|w| !(w[1] > w[0])) || !(t_list[0] > 0.0) {
        return input("t_list must be positive and strictly increasing");
    }
    let counts = survival_counts(dom, x0, t_list, dt, n_samples, seed)?;
    let n = n_samples as f64;
    let pf = p as f64;
    let rows = t_list
        .iter()
        .zip(&counts)
        .map(|(&t, &c)| {
            let s = c as f64 / n;
            let se_s = (s * (1.0 - s) / n).sqrt();
            let rate = if c == n_samples as u64 { 0.0 } else { -pf * s.ln() / t };
            ExitRateRow { t, survivors: c, survival: s, rate, std_error: pf * se_s / (s * t), low_count: c < MIN_SURVIVORS }
        })
        .collect();
    Ok(ExitRateTable { p, n_samples, dt, rows, p_lambda1: pf * companion_eigenvalue(dom)? })
}

/// `λ₁` on a lattice fine enough for the companion column.
fn companion_eigenvalue(dom: &DomainSpec) -> Result<f64> {
    let diameter = match &dom.kind {
        DomainKind::WholeSpace | DomainKind::HalfSpace { .. } => return Ok(0.0),
        DomainKind::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max),
        DomainKind::Disk { radius, .. } => 2.0 * radius,
    };
    let cells = match dom.d {
        1 => 256.0,
        2 => 64.0,
        _ => 24.0,
    };
    let lat = Arc::new(make_lattice(dom, diameter / cells, 0.0)?);
    Ok(principal_eigenpair(dom, &lat)?.lambda1)
}
