//! The constants `C₁(ε, δ)`, `C₂(δ)`, `C₃` of the super-exponential
//! estimate, and a numerical check of the estimate itself at `k ≤ 2`.
//!
//! All spatial integrals are lattice sums with the spacing of the field
//! layer, so both sides of the estimate use the same discrete operators.
//! Suprema over `x ∈ D` run over a strided set of probe nodes that always
//! includes the nodes next to the boundary; translation-invariant directions
//! of unbounded domains are probed at a single coordinate.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{input, ImlError, Result};
use crate::geometry::{DomainKind, DomainSpec, Lattice};
use crate::grid::GridField;
use crate::heat_kernel::KernelEval;
use crate::intersection::BallAverage;
use crate::moment_oracle::{mean_gap, moment_diff_all, MomentPlan};

/// One `C₁(ε, δ)` evaluation.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct C1Entry {
    pub eps: f64,
    pub delta: f64,
    pub value: f64,
    /// Bound on the contribution of every `z` beyond the probed region
    /// (unbounded domains only).
    pub tail_bound: Option<f64>,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct C2Entry {
    pub delta: f64,
    pub value: f64,
}

/// Tables of the three constants for one domain, `p` and `U`.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub domain: DomainSpec,
    pub p: usize,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub h: f64,
    pub c1: Vec<C1Entry>,
    pub c2: Vec<C2Entry>,
    pub c3: f64,
}

/// Both sides of the super-exponential estimate for one `(ε, δ, k)`.
#[derive(Debug, Clone, Serialize)]
pub struct SuperexpReport {
    pub k: usize,
    pub p: usize,
    pub t: f64,
    pub eps: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// The difference moment in the form entering the estimate (`k = 2`),
    /// or `|E[⟨ℓ^IS_{t,ε}, f⟩ - ⟨ℓ^IS_t, f⟩]|` (`k = 1`).
    pub lhs: f64,
    /// Term-by-term expansion of `E[(⟨ℓ^IS_{t,ε}, f⟩ - ⟨ℓ^IS_t, f⟩)²]`
    /// (`k = 2` only).
    pub lhs_expanded: Option<f64>,
    pub rhs: f64,
    pub holds: bool,
}

fn check_p(dom: &DomainSpec, p: usize) -> Result<()> {
    let d = dom.d as f64;
    if p < 1 {
        return input("p must be at least 1");
    }
    let gap = d - p as f64 * (d - 2.0);
    if gap <= 0.0 {
        return input(format!("d − p(d−2) = {gap} must be positive"));
    }
    Ok(())
}

fn check_lattice(dom: &DomainSpec, lat: &Lattice) -> Result<()> {
    if lat.dim() != dom.d {
        return input("lattice dimension does not match the domain");
    }
    Ok(())
}

fn interior_nodes(lat: &Lattice) -> Vec<usize> {
    (0..lat.node_count()).filter(|&i| lat.interior[i]).collect()
}

/// Probe nodes for suprema over `D`: every `stride`-th interior node per
/// axis plus all nodes adjacent to the exterior. With `pin`, invariant axes
/// of unbounded domains are fixed to the middle of the lattice.
fn probe_nodes(dom: &DomainSpec, lat: &Lattice, stride: usize, pin: bool) -> Vec<usize> {
    let d = lat.dim();
    let pinned: Vec<bool> = (0..d)
        .map(|k| match &dom.kind {
            _ if !pin => false,
            DomainKind::WholeSpace => true,
            DomainKind::HalfSpace { axis, .. } => *axis != k,
            _ => false,
        })
        .collect();
    let stride = stride.max(1);
    (0..lat.node_count())
        .filter(|&idx| {
            if !lat.interior[idx] {
                return false;
            }
            let mi = lat.multi_index(idx);
            let pinned_ok = (0..d).all(|k| !pinned[k] || mi[k] == lat.extents[k] / 2);
            if !pinned_ok {
                return false;
            }
            let near_boundary = (0..d).any(|k| {
                [true, false].iter().any(|&up| match lat.neighbor(idx, k, up) {
                    Some(j) => !lat.interior[j],
                    None => false,
                })
            });
            near_boundary || (0..d).all(|k| pinned[k] || mi[k].is_multiple_of(stride))
        })
        .collect()
}

fn default_stride(lat: &Lattice) -> usize {
    let widest = lat.extents.iter().copied().max().unwrap_or(1);
    (widest / 40).max(1)
}

/// `sup_x {∫_D (∫_0^δ p_s(x, y) ds)^p dy}^{1/p}`.
pub fn compute_c2(dom: &DomainSpec, p: usize, delta: f64, lat: &Lattice) -> Result<f64> {
    if !(delta > 0.0) {
        return input("δ must be positive");
    }
    check_p(dom, p)?;
    check_lattice(dom, lat)?;
    let k = KernelEval::for_domain(dom.clone())?;
    let h = lat.spacing;
    sup_of_norms(dom, lat, p, |x, y| k.cell_time_integral(delta, x, y, h))
}

/// `sup_x {∫_D r_1(x, y)^p dy}^{1/p}`.
pub fn compute_c3(dom: &DomainSpec, p: usize, lat: &Lattice) -> Result<f64> {
    check_p(dom, p)?;
    check_lattice(dom, lat)?;
    let k = KernelEval::for_domain(dom.clone())?;
    let h = lat.spacing;
    sup_of_norms(dom, lat, p, |x, y| k.cell_resolvent(x, y, h))
}

fn sup_of_norms(dom: &DomainSpec, lat: &Lattice, p: usize, g: impl Fn(&[f64], &[f64]) -> Result<f64> + Sync) -> Result<f64> {
    let ys = interior_nodes(lat);
    let y_coords: Vec<Vec<f64>> = ys.iter().map(|&i| lat.coords(i)).collect();
    let probes = probe_nodes(dom, lat, default_stride(lat), true);
    let pf = p as f64;
    let values: Vec<f64> = probes
        .par_iter()
        .map(|&xi| {
            let x = lat.coords(xi);
            let mut acc = 0.0;
            for y in &y_coords {
                acc += g(&x, y)?.powf(pf);
            }
            Ok((lat.cell_measure * acc).powf(1.0 / pf))
        })
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Shared data for `C₁` at one `(ε, δ, U)`.
struct C1Setup {
    op: BallAverage,
    kernel: KernelEval,
    /// Nodes of `U`.
    u: Vec<usize>,
    /// Nodes of `U` grown by `ε`, where `(T_ε - id)` of a function on `U`
    /// lives; `u_in_w[j]` is the position of `u[j]` in this list.
    w: Vec<usize>,
    u_in_w: Vec<usize>,
    /// `p_{δ/2}(x, y)` for `x ∈ U` (rows) and all interior `y` (columns).
    p_uy: Vec<Vec<f64>>,
    half_delta: f64,
    p: f64,
    cell: f64,
}

fn nodes_in_box(lat: &Lattice, lo: &[f64], hi: &[f64], margin: f64) -> Vec<usize> {
    let tol = 1e-9 * lat.spacing;
    let mut x = vec![0.0; lat.dim()];
    (0..lat.node_count())
        .filter(|&i| {
            lat.interior[i] && {
                lat.coords_into(i, &mut x);
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= a - margin - tol && *v <= b + margin + tol)
            }
        })
        .collect()
}

fn check_u(dom: &DomainSpec, lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != dom.d || hi.len() != dom.d || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
        return input("U must be a box lo ≤ hi with one entry per axis");
    }
    // D is convex for every supported kind, so the corners decide
    for mask in 0..(1usize << dom.d) {
        let corner: Vec<f64> = (0..dom.d).map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] }).collect();
        if !dom.contains_unchecked(&corner) {
            return input("U must be relatively compact in D");
        }
    }
    Ok(())
}

impl C1Setup {
    fn new(dom: &DomainSpec, p: usize, eps: f64, delta: f64, lo: &[f64], hi: &[f64], lat: &Arc<Lattice>) -> Result<Self> {
        if !(delta > 0.0) {
            return input("δ must be positive");
        }
        check_p(dom, p)?;
        check_lattice(dom, lat)?;
        check_u(dom, lo, hi)?;
        let op = BallAverage::new(lat.clone(), eps)?;
        let kernel = KernelEval::for_domain(dom.clone())?;
        let u = nodes_in_box(lat, lo, hi, 0.0);
        if u.is_empty() {
            return input("U contains no lattice node");
        }
        let w = nodes_in_box(lat, lo, hi, eps);
        let u_in_w = u.iter().map(|i| w.binary_search(i).expect("U ⊂ U_ε")).collect();
        let ys = interior_nodes(lat);
        let y_coords: Vec<Vec<f64>> = ys.iter().map(|&i| lat.coords(i)).collect();
        let half_delta = 0.5 * delta;
        let p_uy = u
            .par_iter()
            .map(|&xi| {
                let x = lat.coords(xi);
                y_coords.iter().map(|y| kernel.kernel_unchecked(half_delta, &x, y)).collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { op, kernel, u, w, u_in_w, p_uy, half_delta, p: p as f64, cell: lat.cell_measure })
    }

    /// `∫_D ‖(T_ε - id)[p_{δ/2}(z, ·) p_{δ/2}(·, y) 1_U]‖_{L^p} dy`.
    fn contribution(&self, z: &[f64]) -> Result<f64> {
        let lat = self.op.lattice();
        let pz: Vec<f64> = self
            .u
            .iter()
            .map(|&xi| self.kernel.kernel_unchecked(self.half_delta, z, &lat.coords(xi)))
            .collect::<Result<_>>()?;
        let ny = self.p_uy.first().map_or(0, |r| r.len());
        let n = lat.node_count();
        let norms: Vec<f64> = (0..ny)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; self.w.len()]),
                |(full, g_w), yj| {
                    for (j, &xi) in self.u.iter().enumerate() {
                        let v = pz[j] * self.p_uy[j][yj];
                        full[xi] = v;
                        g_w[self.u_in_w[j]] = v;
                    }
                    let tg = self.op.apply_at(full, &self.w);
                    let s: f64 = tg.iter().zip(g_w.iter()).map(|(a, b)| (a - b).abs().powf(self.p)).sum();
                    for (j, &xi) in self.u.iter().enumerate() {
                        full[xi] = 0.0;
                        g_w[self.u_in_w[j]] = 0.0;
                    }
                    (self.cell * s).powf(1.0 / self.p)
                },
            )
            .collect();
        Ok(self.cell * norms.iter().sum::<f64>())
    }

    /// `∫_D ‖p_{δ/2}(·, y) 1_U‖_{L^p} dy`.
    fn kernel_norm_integral(&self) -> f64 {
        let ny = self.p_uy.first().map_or(0, |r| r.len());
        (0..ny)
            .map(|yj| (self.cell * self.p_uy.iter().map(|row| row[yj].powf(self.p)).sum::<f64>()).powf(1.0 / self.p))
            .sum::<f64>()
            * self.cell
    }
}

/// `C₁(ε, δ)` for the box `U = [lo, hi]`.
pub fn compute_c1(dom: &DomainSpec, p: usize, eps: f64, delta: f64, lo: &[f64], hi: &[f64], lat: &Arc<Lattice>) -> Result<C1Entry> {
    let setup = C1Setup::new(dom, p, eps, delta, lo, hi, lat)?;
    // U breaks translation invariance, so no axis is pinned here
    // the integrand varies on the kernel scale √δ, so probe at least that finely
    let fine = ((0.2 * delta.sqrt() / lat.spacing) as usize).max(1);
    let mut probes = probe_nodes(dom, lat, default_stride(lat).min(fine), false);
    let mut tail_bound = None;
    if !dom.is_bounded() {
        // probe z within R of U; beyond that the decay bound takes over
        let reach = 6.0 * delta.sqrt();
        let near = nodes_in_box(lat, lo, hi, reach);
        probes.retain(|i| near.binary_search(i).is_ok());
        let d = dom.d as i32;
        let sup_kernel = (std::f64::consts::PI * delta).powi(-d).sqrt() * (-reach * reach / delta).exp();
        tail_bound = Some(2.0 * sup_kernel * setup.kernel_norm_integral());
    }
    let values: Vec<f64> = probes.iter().map(|&zi| setup.contribution(&lat.coords(zi))).collect::<Result<_>>()?;
    let value = values.into_iter().fold(0.0, f64::max);
    Ok(C1Entry { eps, delta, value, tail_bound, probes: probes.len() })
}

/// The `z`-integrand of `C₁` at one point, and its decay bound
/// `2 sup_{x∈U} p_{δ/2}(z, x) ∫_D ‖p_{δ/2}(·, y) 1_U‖_{L^p} dy`.
#[allow(clippy::too_many_arguments)]
pub fn c1_contribution(
    dom: &DomainSpec,
    p: usize,
    eps: f64,
    delta: f64,
    lo: &[f64],
    hi: &[f64],
    lat: &Arc<Lattice>,
    z: &[f64],
) -> Result<(f64, f64)> {
    if !dom.contains(z)? {
        return input("z must lie in D");
    }
    let setup = C1Setup::new(dom, p, eps, delta, lo, hi, lat)?;
    let value = setup.contribution(z)?;
    let mut sup = 0.0f64;
    for &xi in &setup.u {
        sup = sup.max(setup.kernel.kernel_unchecked(setup.half_delta, z, &lat.coords(xi))?);
    }
    Ok((value, 2.0 * sup * setup.kernel_norm_integral()))
}

/// Constants over sweeps of `ε` and `δ`.
pub fn constants_report(
    dom: &DomainSpec,
    p: usize,
    eps_list: &[f64],
    delta_list: &[f64],
    lo: &[f64],
    hi: &[f64],
    lat: &Arc<Lattice>,
) -> Result<ConstantsReport> {
    let mut c1 = Vec::new();
    for &delta in delta_list {
        for &eps in eps_list {
            c1.push(compute_c1(dom, p, eps, delta, lo, hi, lat)?);
        }
    }
    let c2 = delta_list
        .iter()
        .map(|&delta| Ok(C2Entry { delta, value: compute_c2(dom, p, delta, lat)? }))
        .collect::<Result<_>>()?;
    Ok(ConstantsReport {
        domain: dom.clone(),
        p,
        u_lo: lo.to_vec(),
        u_hi: hi.to_vec(),
        h: lat.spacing,
        c1,
        c2,
        c3: compute_c3(dom, p, lat)?,
    })
}

/// Least-squares slope of `log C₂(δ)` against `log δ`.
pub fn c2_scaling_exponent(entries: &[C2Entry]) -> f64 {
    let pts: Vec<(f64, f64)> = entries.iter().map(|e| (e.delta.ln(), e.value.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Compares the difference moment of order `k` with
/// `e^t (k!)^p ‖f‖_∞^k {16 (C₃ + 1)(C₂(δ) + C₁(ε, δ))^{1/6}}^{pk}`, taking
/// `U` as the support box of `f` grown by `ε`. Refuses when
/// `C₁ + C₂ ≥ 1`, outside the regime where the estimate is claimed.
#[allow(clippy::too_many_arguments)]
pub fn check_superexp(
    dom: &DomainSpec,
    p: usize,
    t: f64,
    f: &GridField,
    x0s: &[Vec<f64>],
    eps: f64,
    delta: f64,
    k: usize,
) -> Result<SuperexpReport> {
    if x0s.len() != p {
        return input(format!("expected {p} initial points, got {}", x0s.len()));
    }
    let plan = MomentPlan::new(dom.clone(), k, t, f.clone(), x0s.to_vec())?;
    let lat = f.lattice.clone();
    let f_sup = f.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let c2 = compute_c2(dom, p, delta, &lat)?;
    if c2 >= 1.0 {
        return Err(ImlError::Precondition(format!("C2 = {c2} ≥ 1; the estimate is only claimed when C1 + C2 < 1")));
    }
    let c3 = compute_c3(dom, p, &lat)?;
    let (c1, lhs, lhs_expanded) = match plan.support_box() {
        None => (0.0, 0.0, if k == 2 { Some(0.0) } else { None }),
        Some((lo, hi)) => {
            let lo: Vec<f64> = lo.iter().map(|v| v - eps).collect();
            let hi: Vec<f64> = hi.iter().map(|v| v + eps).collect();
            let c1 = compute_c1(dom, p, eps, delta, &lo, &hi, &lat)?.value;
            if c1 + c2 >= 1.0 {
                return Err(ImlError::Precondition(format!(
                    "C1 + C2 = {c1} + {c2} ≥ 1; the estimate is only claimed when C1 + C2 < 1"
                )));
            }
            if k == 2 {
                let m = moment_diff_all(&plan, eps)?;
                (c1, m.formula, Some(m.expanded))
            } else {
                (c1, mean_gap(&plan, eps)?.abs(), None)
            }
        }
    };
    if c1 + c2 >= 1.0 {
        return Err(ImlError::Precondition(format!("C1 + C2 = {c1} + {c2} ≥ 1")));
    }
    let kf = k as f64;
    let pf = p as f64;
    let factorial: f64 = if k == 2 { 2.0 } else { 1.0 };
    let rhs = t.exp() * factorial.powf(pf) * f_sup.powf(kf) * (16.0 * (c3 + 1.0) * (c2 + c1).powf(1.0 / 6.0)).powf(pf * kf);
    Ok(SuperexpReport { k, p, t, eps, delta, c1, c2, c3, lhs, lhs_expanded, rhs, holds: lhs <= rhs })
}
