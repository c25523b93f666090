//! Deterministic quadrature of the moment formula
//! `E⟨ℓ^IS_t, f⟩^k = ∫_{D^k} f(x_1)⋯f(x_k) ∏_i Σ_σ H^{(i)}_t(x_σ(1), …, x_σ(k)) dx`
//! for `k ≤ 2`, and of its `T_ε` variants.
//!
//! For `k = 2` the simplex integral is ordered as
//! `H(y₁, y₂) = ∫_0^t p_s(y₁, y₂) F(t - s, y₁) ds` with
//! `F(τ, y) = ∫_0^τ p_u(x₀, y) du`. The outer `s` rule is graded toward both
//! ends of `[0, t]`: toward `0` for the near-diagonal kernel layer and toward
//! `t` for the `√τ` onset of `F`. In `d ≥ 2` diagonal lattice entries use the
//! cell average of the Gaussian part of the kernel, which is finite.

use rayon::prelude::*;

use crate::error::{input, ImlError, Result};
use crate::geometry::{dist2, DomainSpec, Lattice};
use crate::grid::GridField;
use crate::heat_kernel::KernelEval;
use crate::intersection::BallAverage;
use crate::quadrature::Rule;

/// Everything needed to evaluate moments of order `k` for `p` processes.
#[derive(Debug, Clone)]
pub struct MomentPlan {
    pub k: usize,
    pub p: usize,
    pub t: f64,
    pub f: GridField,
    pub x0s: Vec<Vec<f64>>,
    /// Gauss-Legendre order per time panel.
    pub time_order: usize,
    kernel: KernelEval,
}

/// Row-major square matrix over a node list.
type Matrix = Vec<f64>;

impl MomentPlan {
    /// Plan for the processes started at `x0s` (one entry per process).
    pub fn new(dom: DomainSpec, k: usize, t: f64, f: GridField, x0s: Vec<Vec<f64>>) -> Result<Self> {
        if !(1..=2).contains(&k) {
            return input(format!("moment order must be 1 or 2, got {k}"));
        }
        if !(t > 0.0) {
            return input("horizon must be positive");
        }
        if x0s.is_empty() {
            return input("need at least one initial point");
        }
        if f.lattice.dim() != dom.d {
            return input("test function lattice dimension does not match the domain");
        }
        for x0 in &x0s {
            if !dom.contains(x0)? {
                return input("initial points must lie in D");
            }
        }
        if dom.d * k > 4 {
            return Err(ImlError::Resource(format!(
                "moment quadrature for d={} and k={k} exceeds the cost gate d·k ≤ 4",
                dom.d
            )));
        }
        let p = x0s.len();
        let kernel = KernelEval::for_domain(dom)?;
        Ok(Self { k, p, t, f, x0s, time_order: 8, kernel })
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.kernel.domain
    }

    fn lattice(&self) -> &Lattice {
        &self.f.lattice
    }

    fn h(&self) -> f64 {
        self.lattice().spacing
    }

    /// Bounding box of the nodes where `f ≠ 0`, or `None` when `f ≡ 0`.
    pub fn support_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let lat = self.lattice();
        let d = lat.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut x = vec![0.0; d];
        let mut any = false;
        for (idx, v) in self.f.values.iter().enumerate() {
            if *v != 0.0 && lat.interior[idx] {
                any = true;
                lat.coords_into(idx, &mut x);
                for k in 0..d {
                    lo[k] = lo[k].min(x[k]);
                    hi[k] = hi[k].max(x[k]);
                }
            }
        }
        any.then_some((lo, hi))
    }

    /// Interior nodes inside the support box grown by `margin`; this node set
    /// plays the role of `U`.
    pub fn support_nodes(&self, margin: f64) -> Vec<usize> {
        let Some((lo, hi)) = self.support_box() else {
            return Vec::new();
        };
        let lat = self.lattice();
        let tol = 1e-9 * lat.spacing;
        let mut x = vec![0.0; lat.dim()];
        (0..lat.node_count())
            .filter(|&idx| {
                lat.interior[idx] && {
                    lat.coords_into(idx, &mut x);
                    x.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| *v >= a - margin - tol && *v <= b + margin + tol)
                }
            })
            .collect()
    }

    /// Outer time rule, graded down to `s_min` at both ends of `[0, t]`.
    fn time_rule(&self, s_min: f64) -> Rule {
        let levels = ((0.5 * self.t / s_min).log2().ceil().max(1.0) as usize).min(60);
        Rule::two_sided_graded(self.t, levels, self.time_order)
    }

    fn lattice_time_rule(&self) -> Rule {
        let h = self.h();
        self.time_rule((1e-3 * h * h).min(0.25 * self.t))
    }

    fn lattice_kernel(&self, s: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        self.kernel.cell_kernel(s, x, y, self.h())
    }

    /// `F(τ, y) = ∫_0^τ p_u(x₀, y) du` with the lattice regularisation.
    fn occupation_integral(&self, tau: f64, x0: &[f64], y: &[f64]) -> Result<f64> {
        self.kernel.cell_time_integral(tau, x0, y, self.h())
    }

    /// Distinct initial points and, per process, the index of its point.
    fn distinct_starts(&self) -> (Vec<&Vec<f64>>, Vec<usize>) {
        let mut uniq: Vec<&Vec<f64>> = Vec::new();
        let map = self
            .x0s
            .iter()
            .map(|x| match uniq.iter().position(|u| *u == x) {
                Some(j) => j,
                None => {
                    uniq.push(x);
                    uniq.len() - 1
                }
            })
            .collect();
        (uniq, map)
    }

    /// `H` for `k = 1` on `nodes`, one vector per distinct initial point.
    fn h1(&self, nodes: &[usize]) -> Result<Vec<Vec<f64>>> {
        let (uniq, _) = self.distinct_starts();
        let lat = self.lattice();
        uniq.iter()
            .map(|x0| {
                nodes
                    .par_iter()
                    .map(|&idx| self.occupation_integral(self.t, x0, &lat.coords(idx)))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    }

    /// `H` for `k = 2` on `nodes × nodes`, one matrix per distinct initial point.
    fn h2(&self, nodes: &[usize]) -> Result<Vec<Matrix>> {
        let (uniq, _) = self.distinct_starts();
        let lat = self.lattice();
        let coords: Vec<Vec<f64>> = nodes.iter().map(|&i| lat.coords(i)).collect();
        let rule = self.lattice_time_rule();
        let m = nodes.len();
        let mut out = Vec::with_capacity(uniq.len());
        for x0 in uniq {
            // F(t - s_q, y_a), indexed [a][q]
            let occ: Vec<Vec<f64>> = coords
                .par_iter()
                .map(|y| {
                    rule.points
                        .iter()
                        .map(|&(s, _)| self.occupation_integral(self.t - s, x0, y))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            let rows: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|a| {
                    (0..m)
                        .map(|b| {
                            let mut acc = 0.0;
                            for (q, &(s, w)) in rule.points.iter().enumerate() {
                                acc += w * self.lattice_kernel(s, &coords[a], &coords[b])? * occ[a][q];
                            }
                            Ok(acc)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<_>>()?;
            out.push(rows.into_iter().flatten().collect());
        }
        Ok(out)
    }

    /// `h^d f` at `nodes`.
    fn weighted_f(&self, nodes: &[usize]) -> Vec<f64> {
        let cm = self.lattice().cell_measure;
        nodes.iter().map(|&i| cm * self.f.values[i]).collect()
    }
}

fn symmetrize(h: &Matrix, m: usize) -> Matrix {
    let mut g = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            g[a * m + b] = h[a * m + b] + h[b * m + a];
        }
    }
    g
}

/// `H^{(i)}_t(x_1, …, x_k)` at arbitrary points, with the indicator of the
/// support box of `f` applied to every `x_j`.
pub fn h_t_eval(plan: &MomentPlan, i: usize, xs: &[Vec<f64>]) -> Result<f64> {
    if i >= plan.p {
        return input(format!("process index {i} out of range"));
    }
    if xs.len() != plan.k {
        return input(format!("expected {} points, got {}", plan.k, xs.len()));
    }
    let dom = plan.domain();
    for x in xs {
        if !dom.contains(x)? {
            return input("evaluation points must lie in D");
        }
    }
    let Some((lo, hi)) = plan.support_box() else {
        return Ok(0.0);
    };
    let in_u = |x: &[f64]| x.iter().zip(lo.iter().zip(&hi)).all(|(v, (a, b))| v >= a && v <= b);
    if !xs.iter().all(|x| in_u(x)) {
        return Ok(0.0);
    }
    let x0 = &plan.x0s[i];
    if plan.k == 1 {
        if dom.d >= 2 && dist2(x0, &xs[0]) == 0.0 {
            return Err(ImlError::Accuracy("H is singular at the initial point for d ≥ 2".into()));
        }
        return plan.kernel.time_integral_unchecked(plan.t, x0, &xs[0]);
    }
    let r2 = dist2(&xs[0], &xs[1]);
    if dom.d >= 2 && r2 < 1e-18 {
        return Err(ImlError::Accuracy("k = 2 integrand is not integrable on the diagonal for d ≥ 2".into()));
    }
    if dom.d >= 2 && dist2(x0, &xs[0]) == 0.0 {
        return Err(ImlError::Accuracy("H is singular at the initial point for d ≥ 2".into()));
    }
    let s_min = if r2 > 0.0 { 1e-3 * r2 } else { 1e-10 * plan.t }.min(0.25 * plan.t);
    let rule = plan.time_rule(s_min);
    let mut acc = 0.0;
    for &(s, w) in &rule.points {
        let occ = plan.kernel.time_integral_unchecked(plan.t - s, x0, &xs[0])?;
        acc += w * plan.kernel.kernel_unchecked(s, &xs[0], &xs[1])? * occ;
    }
    Ok(acc)
}

/// `E⟨ℓ^IS_t, f⟩^k` (unnormalised) by lattice quadrature.
pub fn moment_exact(plan: &MomentPlan) -> Result<f64> {
    let nodes = plan.support_nodes(0.0);
    if nodes.is_empty() {
        return Ok(0.0);
    }
    let wf = plan.weighted_f(&nodes);
    let (_, map) = plan.distinct_starts();
    let m = nodes.len();
    if plan.k == 1 {
        let hs = plan.h1(&nodes)?;
        return Ok((0..m).map(|a| wf[a] * map.iter().map(|&j| hs[j][a]).product::<f64>()).sum());
    }
    let gs: Vec<Matrix> = plan.h2(&nodes)?.iter().map(|h| symmetrize(h, m)).collect();
    let mut acc = 0.0;
    for a in 0..m {
        for b in 0..m {
            acc += wf[a] * wf[b] * map.iter().map(|&j| gs[j][a * m + b]).product::<f64>();
        }
    }
    Ok(acc)
}

/// The `T_ε` transforms of one symmetric or plain kernel on the node set `W`:
/// `A = (T ⊗ id) G` and `B = (T ⊗ T) G`.
struct Transforms {
    g: Matrix,
    a: Matrix,
    b: Matrix,
}

impl Transforms {
    /// `(T - id) ⊗ (T - id)` at `(x, y)`.
    fn diff(&self, m: usize, x: usize, y: usize) -> f64 {
        self.b[x * m + y] - self.a[x * m + y] - self.a[y * m + x] + self.g[x * m + y]
    }
}

fn transforms(op: &BallAverage, w_nodes: &[usize], g: Matrix) -> Transforms {
    let m = w_nodes.len();
    let n = op.lattice().node_count();
    let embed = |vals: &mut Vec<f64>, row: &[f64]| {
        vals.iter_mut().for_each(|v| *v = 0.0);
        for (j, &idx) in w_nodes.iter().enumerate() {
            vals[idx] = row[j];
        }
    };
    // columns of A: T applied along the first index
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |full, b| {
                let col: Vec<f64> = (0..m).map(|a| g[a * m + b]).collect();
                embed(full, &col);
                op.apply_at(full, w_nodes)
            },
        )
        .collect();
    let mut a = vec![0.0; m * m];
    for (b, col) in cols.iter().enumerate() {
        for (x, v) in col.iter().enumerate() {
            a[x * m + b] = *v;
        }
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |full, x| {
                embed(full, &a[x * m..(x + 1) * m]);
                op.apply_at(full, w_nodes)
            },
        )
        .collect();
    let b = rows.into_iter().flatten().collect();
    Transforms { g, a, b }
}

/// Node set `W` (support grown by `2ε`), the positions in `W` of the kernel
/// support `S` (grown by `ε`) and of the nodes of `f`'s support box.
struct EpsLayout {
    w: Vec<usize>,
    s_pos: Vec<usize>,
    f_pos: Vec<usize>,
}

fn eps_layout(plan: &MomentPlan, eps: f64) -> EpsLayout {
    let w = plan.support_nodes(2.0 * eps);
    let pos_in_w = |list: Vec<usize>| -> Vec<usize> { list.iter().map(|i| w.binary_search(i).expect("nested node sets")).collect() };
    let s_pos = pos_in_w(plan.support_nodes(eps));
    let f_pos = pos_in_w(plan.support_nodes(0.0));
    EpsLayout { w, s_pos, f_pos }
}

/// `H` matrices per distinct start, computed on `S` and embedded in `W × W`.
fn embedded_h2(plan: &MomentPlan, lay: &EpsLayout) -> Result<Vec<Matrix>> {
    let s_nodes: Vec<usize> = lay.s_pos.iter().map(|&j| lay.w[j]).collect();
    let ms = s_nodes.len();
    let m = lay.w.len();
    Ok(plan
        .h2(&s_nodes)?
        .into_iter()
        .map(|h| {
            let mut full = vec![0.0; m * m];
            for (a, &pa) in lay.s_pos.iter().enumerate() {
                for (b, &pb) in lay.s_pos.iter().enumerate() {
                    full[pa * m + pb] = h[a * ms + b];
                }
            }
            full
        })
        .collect())
}

fn check_eps_plan(plan: &MomentPlan, eps: f64) -> Result<BallAverage> {
    BallAverage::new(plan.f.lattice.clone(), eps)
}

/// `E⟨ℓ^IS_{t,ε}, f⟩^k` (unnormalised): the moment formula with `T_ε^{⊗k}`
/// applied to every symmetrised `H`.
pub fn moment_approx(plan: &MomentPlan, eps: f64) -> Result<f64> {
    let op = check_eps_plan(plan, eps)?;
    let lay = eps_layout(plan, eps);
    if lay.f_pos.is_empty() {
        return Ok(0.0);
    }
    let (_, map) = plan.distinct_starts();
    let f_nodes: Vec<usize> = lay.f_pos.iter().map(|&j| lay.w[j]).collect();
    let wf = plan.weighted_f(&f_nodes);
    let m = lay.w.len();
    if plan.k == 1 {
        let s_nodes: Vec<usize> = lay.s_pos.iter().map(|&j| lay.w[j]).collect();
        let hs = plan.h1(&s_nodes)?;
        let n = plan.lattice().node_count();
        let avg: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| {
                let mut full = vec![0.0; n];
                for (v, &idx) in h.iter().zip(&s_nodes) {
                    full[idx] = *v;
                }
                op.apply_at(&full, &f_nodes)
            })
            .collect();
        return Ok((0..f_nodes.len()).map(|a| wf[a] * map.iter().map(|&j| avg[j][a]).product::<f64>()).sum());
    }
    let ts: Vec<Transforms> = embedded_h2(plan, &lay)?.iter().map(|h| transforms(&op, &lay.w, symmetrize(h, m))).collect();
    let mut acc = 0.0;
    for (x, &px) in lay.f_pos.iter().enumerate() {
        for (y, &py) in lay.f_pos.iter().enumerate() {
            acc += wf[x] * wf[y] * map.iter().map(|&j| ts[j].b[px * m + py]).product::<f64>();
        }
    }
    Ok(acc)
}

/// `E[⟨ℓ^IS_{t,ε}, f⟩ - ⟨ℓ^IS_t, f⟩]` for a `k = 1` plan.
pub fn mean_gap(plan: &MomentPlan, eps: f64) -> Result<f64> {
    if plan.k != 1 {
        return input("mean_gap needs a k = 1 plan");
    }
    Ok(moment_approx(plan, eps)? - moment_exact(plan)?)
}

/// Difference moments for `k = 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffMoments {
    /// `∫ f f ∏_i Σ_σ (T_ε - id)^{⊗2} H^{(i)}`, the form used in the
    /// super-exponential estimate.
    pub formula: f64,
    /// `E[(⟨ℓ^IS_{t,ε}, f⟩ - ⟨ℓ^IS_t, f⟩)²]` expanded term by term:
    /// `∫ f f [∏ (T⊗T)G_i - 2∏ (T⊗id)G_i + ∏ G_i]`. Equal to `formula`
    /// when `p = 1`.
    pub expanded: f64,
    /// `‖f‖_∞² (2!)^p ∏_i ‖(T_ε - id)^{⊗2} H^{(i)}‖_{L^p(D²)}`.
    pub bound: f64,
}

/// Difference moments of order two; see [`DiffMoments`].
pub fn moment_diff_all(plan: &MomentPlan, eps: f64) -> Result<DiffMoments> {
    if plan.k != 2 {
        return input("moment_diff is defined for k = 2");
    }
    let op = check_eps_plan(plan, eps)?;
    let lay = eps_layout(plan, eps);
    if lay.f_pos.is_empty() {
        return Ok(DiffMoments { formula: 0.0, expanded: 0.0, bound: 0.0 });
    }
    let (_, map) = plan.distinct_starts();
    let f_nodes: Vec<usize> = lay.f_pos.iter().map(|&j| lay.w[j]).collect();
    let wf = plan.weighted_f(&f_nodes);
    let m = lay.w.len();
    let hs = embedded_h2(plan, &lay)?;
    let sym: Vec<Transforms> = hs.iter().map(|h| transforms(&op, &lay.w, symmetrize(h, m))).collect();
    let plain: Vec<Transforms> = hs.into_iter().map(|h| transforms(&op, &lay.w, h)).collect();

    let mut formula = 0.0;
    let mut expanded = 0.0;
    for (x, &px) in lay.f_pos.iter().enumerate() {
        for (y, &py) in lay.f_pos.iter().enumerate() {
            let w = wf[x] * wf[y];
            let at = px * m + py;
            formula += w * map.iter().map(|&j| sym[j].diff(m, px, py)).product::<f64>();
            let b: f64 = map.iter().map(|&j| sym[j].b[at]).product();
            let a: f64 = map.iter().map(|&j| sym[j].a[at]).product();
            let g: f64 = map.iter().map(|&j| sym[j].g[at]).product();
            expanded += w * (b - 2.0 * a + g);
        }
    }

    let p = plan.p as f64;
    let cm = plan.lattice().cell_measure;
    let norms: Vec<f64> = plain
        .iter()
        .map(|tr| {
            let mut s = 0.0;
            for x in 0..m {
                for y in 0..m {
                    s += tr.diff(m, x, y).abs().powf(p);
                }
            }
            (cm * cm * s).powf(1.0 / p)
        })
        .collect();
    let f_sup = plan.f.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bound = f_sup * f_sup * 2f64.powf(p) * map.iter().map(|&j| norms[j]).product::<f64>();
    Ok(DiffMoments { formula, expanded, bound })
}

/// `∫ f f ∏_i Σ_σ (T_ε - id)^{⊗2} H^{(i)}` for `k = 2`.
pub fn moment_diff(plan: &MomentPlan, eps: f64) -> Result<f64> {
    Ok(moment_diff_all(plan, eps)?.formula)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_lattice;
    use std::sync::Arc;

    fn whole_line_plan(k: usize) -> MomentPlan {
        let dom = DomainSpec::whole(1).unwrap();
        let lat = Arc::new(make_lattice(&dom, 0.05, 2.0).unwrap());
        let f = GridField::from_fn(lat, |x| if x[0].abs() <= 0.5 { 1.0 } else { 0.0 });
        MomentPlan::new(dom, k, 1.0, f, vec![vec![0.0]]).unwrap()
    }

    #[test]
    fn h1_at_start_is_closed_form() {
        let plan = whole_line_plan(1);
        let v = h_t_eval(&plan, 0, &[vec![0.0]]).unwrap();
        assert!((v - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-9);
        assert_eq!(h_t_eval(&plan, 0, &[vec![1.5]]).unwrap(), 0.0);
    }

    #[test]
    fn cost_gate_refuses_large_products() {
        let dom = DomainSpec::whole(3).unwrap();
        let lat = Arc::new(make_lattice(&dom, 0.5, 1.0).unwrap());
        let f = GridField::zeros(lat);
        let r = MomentPlan::new(dom, 2, 1.0, f, vec![vec![0.0; 3]]);
        assert!(matches!(r, Err(ImlError::Resource(_))));
    }

    #[test]
    fn zero_test_function_gives_zero() {
        let dom = DomainSpec::interval(0.0, 1.0).unwrap();
        let lat = Arc::new(make_lattice(&dom, 0.05, 0.0).unwrap());
        let f = GridField::zeros(lat);
        let plan = MomentPlan::new(dom.clone(), 1, 0.5, f.clone(), vec![vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(moment_exact(&plan).unwrap(), 0.0);
        let plan = MomentPlan::new(dom, 2, 0.5, f, vec![vec![0.5], vec![0.5]]).unwrap();
        assert_eq!(moment_diff(&plan, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn k2_pointwise_symmetrisation_is_symmetric() {
        let plan = whole_line_plan(2);
        let (x1, x2) = (vec![0.1], vec![-0.3]);
        let s12 = h_t_eval(&plan, 0, &[x1.clone(), x2.clone()]).unwrap() + h_t_eval(&plan, 0, &[x2.clone(), x1.clone()]).unwrap();
        let s21 = h_t_eval(&plan, 0, &[x2.clone(), x1.clone()]).unwrap() + h_t_eval(&plan, 0, &[x1, x2]).unwrap();
        assert!((s12 - s21).abs() < 1e-10);
    }

    #[test]
    fn two_sided_rule_integrates_endpoint_singularities() {
        let r = Rule::two_sided_graded(2.0, 30, 8);
        let v = r.integrate(|s| 1.0 / s.sqrt() + 1.0 / (2.0 - s).sqrt());
        assert!((v - 4.0 * 2f64.sqrt()).abs() < 1e-4, "{v}");
    }
}
