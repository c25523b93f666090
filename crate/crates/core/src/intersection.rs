//! Ball averages `q_ε`, the discrete operator `T_ε`, and the approximated
//! intersection field `∏_i T_ε ℓ^{(i)}`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{input, ImlError, Result};
use crate::geometry::{DomainSpec, Lattice};
use crate::grid::GridField;
use crate::path_sim::{deposit_occupation, step_plan, OccupationField};
use crate::rng::{blocks, joint_stream, stream_rng};

/// Volume of the unit ball in dimension `d ≤ 3`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        _ => f64::NAN,
    }
}

/// `1_{B(x,ε)}(y) / |B(x,ε)|` with the open ball.
pub fn ball_kernel_q(d: usize, eps: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(eps > 0.0) {
        return input(format!("ε must be positive, got {eps}"));
    }
    if !(1..=3).contains(&d) || x.len() != d || y.len() != d {
        return input("point dimension does not match d");
    }
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if r2 < eps * eps {
        Ok(1.0 / (unit_ball_volume(d) * eps.powi(d as i32)))
    } else {
        Ok(0.0)
    }
}

/// Discrete `T_ε` on one lattice: the mean over the lattice offsets `o` with
/// `|o| < ε`. Values outside `D` or the lattice box count as zero and the
/// result is zero at exterior nodes.
#[derive(Debug, Clone)]
pub struct BallAverage {
    lattice: Arc<Lattice>,
    pub eps: f64,
    /// Per-axis integer offsets, flattened with stride `d`.
    offsets: Vec<isize>,
    count: usize,
}

impl BallAverage {
    pub fn new(lattice: Arc<Lattice>, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return input(format!("ε must be positive, got {eps}"));
        }
        let h = lattice.spacing;
        if eps < h * (1.0 - 1e-12) {
            return Err(ImlError::Resolution(format!("ε={eps} is below the lattice spacing h={h}")));
        }
        let d = lattice.dim();
        let m = (eps / h).ceil() as isize;
        let lim = (eps / h) * (eps / h);
        let mut offsets = Vec::new();
        let mut o = vec![-m; d];
        loop {
            let r2: f64 = o.iter().map(|&v| (v * v) as f64).sum();
            if r2 < lim * (1.0 - 1e-12) {
                offsets.extend_from_slice(&o);
            }
            // odometer over [-m, m]^d
            let mut k = 0;
            while k < d {
                o[k] += 1;
                if o[k] <= m {
                    break;
                }
                o[k] = -m;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        let count = offsets.len() / d;
        Ok(Self { lattice, eps, offsets, count })
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// Number of lattice offsets inside the ball.
    pub fn stencil_size(&self) -> usize {
        self.count
    }

    /// `(T_ε v)` at one node.
    fn value_at(&self, idx: usize, values: &[f64]) -> f64 {
        let lat = &*self.lattice;
        if !lat.interior[idx] {
            return 0.0;
        }
        let d = lat.dim();
        let mi = lat.multi_index(idx);
        let mut acc = 0.0;
        'offsets: for o in self.offsets.chunks_exact(d) {
            let mut j = 0isize;
            for k in 0..d {
                let v = mi[k] as isize + o[k];
                if v < 0 || v > lat.extents[k] as isize {
                    continue 'offsets;
                }
                j += v * lat.stride(k) as isize;
            }
            let j = j as usize;
            if lat.interior[j] {
                acc += values[j];
            }
        }
        acc / self.count as f64
    }

    /// `T_ε` applied to a vector of node values.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.lattice.node_count()).into_par_iter().map(|idx| self.value_at(idx, values)).collect()
    }

    /// `T_ε v` evaluated only at the listed nodes.
    pub fn apply_at(&self, values: &[f64], rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&idx| self.value_at(idx, values)).collect()
    }

    /// `T_ε f` as a field on the same lattice.
    pub fn apply_field(&self, f: &GridField) -> Result<GridField> {
        if *f.lattice != *self.lattice {
            return input("field lattice differs from the operator lattice");
        }
        GridField::from_values(self.lattice.clone(), self.apply(&f.values))
    }
}

/// `T_ε f` with the exterior of `D` treated as zero.
pub fn apply_t_eps(f: &GridField, eps: f64) -> Result<GridField> {
    BallAverage::new(f.lattice.clone(), eps)?.apply_field(f)
}

/// Density of `t^{-p} ℓ^IS_{t,ε}` on a lattice.
#[derive(Debug, Clone)]
pub struct IntersectionField {
    pub field: GridField,
    pub epsilon: f64,
    pub t: f64,
    pub p: usize,
}

impl AsRef<GridField> for IntersectionField {
    fn as_ref(&self) -> &GridField {
        &self.field
    }
}

impl AsRef<GridField> for OccupationField {
    fn as_ref(&self) -> &GridField {
        &self.field
    }
}

/// Pointwise product of the ball-averaged occupation densities.
pub fn intersection_field(occs: &[OccupationField], eps: f64, t: f64) -> Result<IntersectionField> {
    let first = occs.first().ok_or_else(|| ImlError::Input("need at least one occupation field".into()))?;
    for o in &occs[1..] {
        first.field.check_same_lattice(&o.field)?;
    }
    let op = BallAverage::new(first.field.lattice.clone(), eps)?;
    let averaged: Vec<GridField> = occs.iter().map(|o| op.apply_field(&o.field)).collect::<Result<_>>()?;
    let refs: Vec<&GridField> = averaged.iter().collect();
    Ok(IntersectionField { field: GridField::product(&refs)?, epsilon: eps, t, p: occs.len() })
}

/// `cell_measure · Σ field · f`.
pub fn pair_with_test(fld: &impl AsRef<GridField>, f: &GridField) -> Result<f64> {
    let g = fld.as_ref();
    g.check_same_lattice(f)?;
    Ok(g.cell_measure() * g.values.iter().zip(&f.values).map(|(a, b)| a * b).sum::<f64>())
}

/// Independent Monte Carlo samples of `⟨t^{-p} ℓ^IS_{t,ε}, f⟩`, one per joint
/// draw of the `p` paths started at `x0s`. Sample `s` uses streams
/// `s·p + i`, so the output is independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn sample_intersection_pairings(
    dom: &DomainSpec,
    x0s: &[Vec<f64>],
    t: f64,
    dt: f64,
    eps: f64,
    f: &GridField,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    for x0 in x0s {
        if !dom.contains(x0)? {
            return input("initial points must lie in D");
        }
    }
    if x0s.is_empty() {
        return input("need at least one process");
    }
    let lat = f.lattice.clone();
    if lat.dim() != dom.d {
        return input("test function lattice dimension does not match the domain");
    }
    let op = BallAverage::new(lat.clone(), eps)?;
    let (n, dt) = step_plan(t, dt)?;
    let p = x0s.len();
    let h = lat.cell_measure;
    let per_block: Vec<Vec<f64>> = blocks(n_samples)
        .into_par_iter()
        .map(|(a, b)| {
            let mut buf = vec![0.0; lat.node_count()];
            let mut out = Vec::with_capacity(b - a);
            for s in a..b {
                let mut prod: Option<Vec<f64>> = None;
                for (i, x0) in x0s.iter().enumerate() {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    let mut rng = stream_rng(seed, joint_stream(s as u64, p, i));
                    deposit_occupation(dom, x0, n, dt, &mut rng, &lat, &mut buf);
                    let avg = op.apply(&buf);
                    prod = Some(match prod {
                        None => avg,
                        Some(mut acc) => {
                            acc.iter_mut().zip(&avg).for_each(|(x, y)| *x *= y);
                            acc
                        }
                    });
                }
                let prod = prod.unwrap_or_default();
                out.push(h * prod.iter().zip(&f.values).map(|(a, b)| a * b).sum::<f64>());
            }
            out
        })
        .collect();
    Ok(per_block.into_iter().flatten().collect())
}

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
