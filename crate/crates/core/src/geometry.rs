//! Supported domains `D ⊂ ℝ^d` and the uniform lattices laid over them.
//!
//! Unbounded domains are only truncated when a lattice is built; every
//! pointwise query (containment, boundary distance, ray exits) acts on the
//! true domain.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    WholeSpace,
    /// `{x : x[axis] > offset}`.
    HalfSpace { axis: usize, offset: f64 },
    /// Product of open intervals `(lo[k], hi[k])`; `d = 1` is an interval.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Open ball `|x - center| < radius`.
    Disk { center: Vec<f64>, radius: f64 },
}

/// A domain together with its spatial dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub d: usize,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, d: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return input(format!("dimension must be 1, 2 or 3, got {d}"));
        }
        match &kind {
            DomainKind::WholeSpace => {}
            DomainKind::HalfSpace { axis, offset } => {
                if *axis >= d {
                    return input(format!("half-space axis {axis} out of range for d={d}"));
                }
                if !offset.is_finite() {
                    return input("half-space offset must be finite");
                }
            }
            DomainKind::Box { lo, hi } => {
                if lo.len() != d || hi.len() != d {
                    return input("box bounds must have one entry per axis");
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return input("box requires finite a < b on every axis");
                }
            }
            DomainKind::Disk { center, radius } => {
                if center.len() != d {
                    return input("disk center dimension mismatch");
                }
                if !(*radius > 0.0) || !radius.is_finite() {
                    return input("disk radius must be positive");
                }
            }
        }
        Ok(Self { kind, d })
    }

    pub fn whole(d: usize) -> Result<Self> {
        Self::new(DomainKind::WholeSpace, d)
    }

    pub fn half_space(d: usize, axis: usize, offset: f64) -> Result<Self> {
        Self::new(DomainKind::HalfSpace { axis, offset }, d)
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::new(DomainKind::Box { lo: vec![a], hi: vec![b] }, 1)
    }

    pub fn cuboid(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = lo.len();
        Self::new(DomainKind::Box { lo, hi }, d)
    }

    pub fn disk(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = center.len();
        Self::new(DomainKind::Disk { center, radius }, d)
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.kind, DomainKind::Box { .. } | DomainKind::Disk { .. })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return input(format!("point has dimension {} but domain has d={}", x.len(), self.d));
        }
        Ok(())
    }

    /// True iff `x` lies in the open set `D`.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        match &self.kind {
            DomainKind::WholeSpace => true,
            DomainKind::HalfSpace { axis, offset } => x[*axis] > *offset,
            DomainKind::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v > *a && *v < *b),
            // Points within rounding of the circle count as boundary points.
            DomainKind::Disk { center, radius } => dist2(x, center) < radius * radius * (1.0 - 1e-12),
        }
    }

    /// `dist(x, D^c)`, or `+∞` on the whole space.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        if !self.contains(x)? {
            return input("boundary_distance requires x ∈ D");
        }
        Ok(self.boundary_distance_unchecked(x))
    }

    /// Distance to the boundary without the containment check; negative
    /// values are not produced, points outside yield 0.
    pub(crate) fn boundary_distance_unchecked(&self, x: &[f64]) -> f64 {
        let v = match &self.kind {
            DomainKind::WholeSpace => f64::INFINITY,
            DomainKind::HalfSpace { axis, offset } => x[*axis] - offset,
            DomainKind::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (a, b))| (v - a).min(b - v))
                .fold(f64::INFINITY, f64::min),
            DomainKind::Disk { center, radius } => radius - dist2(x, center).sqrt(),
        };
        v.max(0.0)
    }

    /// Distance from `x ∈ D` to `∂D` travelling along `sign · e_axis`.
    pub fn ray_exit_distance(&self, x: &[f64], axis: usize, positive: bool) -> f64 {
        match &self.kind {
            DomainKind::WholeSpace => f64::INFINITY,
            DomainKind::HalfSpace { axis: a, offset } => {
                if *a != axis || positive {
                    f64::INFINITY
                } else {
                    (x[axis] - offset).max(0.0)
                }
            }
            DomainKind::Box { lo, hi } => {
                if positive {
                    (hi[axis] - x[axis]).max(0.0)
                } else {
                    (x[axis] - lo[axis]).max(0.0)
                }
            }
            DomainKind::Disk { center, radius } => {
                // |x - c + s e|² = r²  =>  s² + 2 s u + (|x-c|² - r²) = 0
                let u = if positive { x[axis] - center[axis] } else { center[axis] - x[axis] };
                let c = dist2(x, center) - radius * radius;
                let disc = (u * u - c).max(0.0);
                (-u + disc.sqrt()).max(0.0)
            }
        }
    }

    /// Per-face distances used by the bridge kill correction: each entry is
    /// the distance to one flat face (half-space or box face). For the disk a
    /// single entry holds the distance to the nearest boundary point.
    pub(crate) fn face_distances(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.kind {
            DomainKind::WholeSpace => {}
            DomainKind::HalfSpace { axis, offset } => out.push(x[*axis] - offset),
            DomainKind::Box { lo, hi } => {
                for k in 0..self.d {
                    out.push(x[k] - lo[k]);
                    out.push(hi[k] - x[k]);
                }
            }
            DomainKind::Disk { center, radius } => out.push(radius - dist2(x, center).sqrt()),
        }
    }

    /// Closed bounding box of `D` grown by `margin`; unbounded directions use
    /// `margin` as the truncation half-width.
    pub fn bounding_box(&self, margin: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let d = self.d;
        match &self.kind {
            DomainKind::WholeSpace | DomainKind::HalfSpace { .. } if !(margin > 0.0) => {
                input("unbounded domain needs a positive margin to define a finite box")
            }
            DomainKind::WholeSpace => Ok((vec![-margin; d], vec![margin; d])),
            DomainKind::HalfSpace { axis, offset } => {
                let mut lo = vec![-margin; d];
                let mut hi = vec![margin; d];
                lo[*axis] = *offset;
                hi[*axis] = offset + margin;
                Ok((lo, hi))
            }
            DomainKind::Box { lo, hi } => Ok((
                lo.iter().map(|a| a - margin).collect(),
                hi.iter().map(|b| b + margin).collect(),
            )),
            DomainKind::Disk { center, radius } => Ok((
                center.iter().map(|c| c - radius - margin).collect(),
                center.iter().map(|c| c + radius + margin).collect(),
            )),
        }
    }
}

pub(crate) fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Uniform lattice over a closed box, with nodes outside `D` flagged exterior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lattice {
    pub origin: Vec<f64>,
    pub upper: Vec<f64>,
    pub spacing: f64,
    /// Cell counts per axis; there are `extent + 1` nodes along each axis.
    pub extents: Vec<usize>,
    pub cell_measure: f64,
    pub interior: Vec<bool>,
    strides: Vec<usize>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.origin == other.origin
            && self.spacing == other.spacing
            && self.extents == other.extents
            && self.interior == other.interior
    }
}

impl Lattice {
    /// Lattice with spacing `h` over the box `[lo, hi]`; the box is grown on
    /// the upper side when its width is not a multiple of `h`.
    pub fn covering(dom: &DomainSpec, h: f64, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return input(format!("lattice spacing must be positive, got {h}"));
        }
        if lo.len() != dom.d || hi.len() != dom.d {
            return input("lattice box dimension mismatch");
        }
        let mut extents = Vec::with_capacity(dom.d);
        let mut upper = Vec::with_capacity(dom.d);
        for (a, b) in lo.iter().zip(hi) {
            let w = b - a;
            if !(w > 0.0) {
                return input("lattice box must have positive width on every axis");
            }
            let ratio = w / h;
            let n = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
                ratio.round() as usize
            } else {
                ratio.ceil() as usize
            };
            let n = n.max(1);
            extents.push(n);
            upper.push(if (n as f64 * h - w).abs() < 1e-9 * w { *b } else { a + n as f64 * h });
        }
        let mut strides = vec![1usize; dom.d];
        for k in (0..dom.d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * (extents[k + 1] + 1);
        }
        let mut lat = Self {
            origin: lo.to_vec(),
            upper,
            spacing: h,
            cell_measure: h.powi(dom.d as i32),
            interior: Vec::new(),
            extents,
            strides,
        };
        let mut x = vec![0.0; dom.d];
        lat.interior = (0..lat.node_count())
            .map(|i| {
                lat.coords_into(i, &mut x);
                dom.contains_unchecked(&x)
            })
            .collect();
        if !lat.interior.iter().any(|&b| b) {
            return input("lattice box contains no interior node");
        }
        Ok(lat)
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn node_count(&self) -> usize {
        self.extents.iter().map(|e| e + 1).product()
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        self.strides.iter().zip(&self.extents).map(|(s, e)| (idx / s) % (e + 1)).collect()
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Coordinate along `axis` of the node with axis index `j`.
    pub fn axis_coord(&self, axis: usize, j: usize) -> f64 {
        if j == self.extents[axis] {
            self.upper[axis]
        } else {
            self.origin[axis] + j as f64 * self.spacing
        }
    }

    pub fn coords_into(&self, idx: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let j = (idx / self.strides[k]) % (self.extents[k] + 1);
            *o = self.axis_coord(k, j);
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords_into(idx, &mut x);
        x
    }

    /// Node whose cell (half-spacing box around it) contains `x`, if any.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (k, xk) in x.iter().enumerate().take(self.dim()) {
            let r = ((xk - self.origin[k]) / self.spacing).round();
            if r < 0.0 || r > self.extents[k] as f64 || !r.is_finite() {
                return None;
            }
            idx += r as usize * self.strides[k];
        }
        Some(idx)
    }

    /// Neighbor of `idx` one step along `axis`, if inside the lattice box.
    pub fn neighbor(&self, idx: usize, axis: usize, positive: bool) -> Option<usize> {
        let j = (idx / self.strides[axis]) % (self.extents[axis] + 1);
        if positive {
            (j < self.extents[axis]).then(|| idx + self.strides[axis])
        } else {
            (j > 0).then(|| idx - self.strides[axis])
        }
    }

    /// True when the node lies on the outer face of the lattice box.
    pub fn on_box_edge(&self, idx: usize) -> bool {
        (0..self.dim()).any(|k| {
            let j = (idx / self.strides[k]) % (self.extents[k] + 1);
            j == 0 || j == self.extents[k]
        })
    }
}

/// Uniform lattice covering `D` (or its truncation) with exterior flags.
pub fn make_lattice(dom: &DomainSpec, h: f64, margin: f64) -> Result<Lattice> {
    if !(h > 0.0) {
        return input(format!("lattice spacing must be positive, got {h}"));
    }
    if margin < 0.0 {
        return input("margin must be nonnegative");
    }
    let (lo, hi) = dom.bounding_box(margin)?;
    Lattice::covering(dom, h, &lo, &hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment_examples() {
        let i = DomainSpec::interval(0.0, 1.0).unwrap();
        assert!(i.contains(&[0.5]).unwrap());
        assert!(!i.contains(&[0.0]).unwrap());
        let disk = DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap();
        assert!(!disk.contains(&[0.6, 0.8]).unwrap());
        assert!(!disk.contains(&[1.0, 0.0]).unwrap());
        assert!(matches!(i.contains(&[0.5, 0.5]), Err(crate::ImlError::Input(_))));
    }

    #[test]
    fn boundary_distance_examples() {
        let i = DomainSpec::interval(0.0, 1.0).unwrap();
        assert!((i.boundary_distance(&[0.3]).unwrap() - 0.3).abs() < 1e-15);
        let disk = DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap();
        assert!((disk.boundary_distance(&[0.6, 0.0]).unwrap() - 0.4).abs() < 1e-15);
        let hs = DomainSpec::half_space(2, 0, 0.0).unwrap();
        assert_eq!(hs.boundary_distance(&[2.0, 5.0]).unwrap(), 2.0);
        assert!(DomainSpec::whole(2).unwrap().boundary_distance(&[1.0, 1.0]).unwrap().is_infinite());
        assert!(i.boundary_distance(&[1.5]).is_err());
    }

    #[test]
    fn invalid_domains_rejected() {
        assert!(DomainSpec::interval(1.0, 1.0).is_err());
        assert!(DomainSpec::disk(vec![0.0, 0.0], 0.0).is_err());
        assert!(DomainSpec::half_space(2, 2, 0.0).is_err());
        assert!(DomainSpec::whole(4).is_err());
    }

    #[test]
    fn lattice_examples() {
        let i = DomainSpec::interval(0.0, 1.0).unwrap();
        let lat = make_lattice(&i, 0.25, 0.0).unwrap();
        assert_eq!(lat.node_count(), 5);
        assert_eq!(lat.interior_count(), 3);
        assert_eq!(lat.cell_measure, 0.25);

        let disk = DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap();
        let lat = make_lattice(&disk, 0.5, 0.0).unwrap();
        assert_eq!(lat.node_count(), 25);
        let expected = (0..25).filter(|&i| {
            let x = lat.coords(i);
            x[0] * x[0] + x[1] * x[1] < 1.0
        });
        assert_eq!(lat.interior_count(), expected.count());
        assert_eq!(lat.cell_measure, 0.25);

        let w = DomainSpec::whole(1).unwrap();
        let lat = make_lattice(&w, 0.1, 5.0).unwrap();
        assert_eq!(lat.node_count(), 101);
        assert_eq!(lat.interior_count(), 101);
    }

    #[test]
    fn lattice_errors() {
        let w = DomainSpec::whole(1).unwrap();
        assert!(make_lattice(&w, 0.1, 0.0).is_err());
        let i = DomainSpec::interval(0.0, 1.0).unwrap();
        assert!(make_lattice(&i, 0.0, 0.0).is_err());
        assert!(make_lattice(&i, 1.0, 0.0).is_err());
    }

    #[test]
    fn ray_exit_in_disk() {
        let disk = DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap();
        assert!((disk.ray_exit_distance(&[0.5, 0.0], 0, true) - 0.5).abs() < 1e-14);
        assert!((disk.ray_exit_distance(&[0.5, 0.0], 0, false) - 1.5).abs() < 1e-14);
        let y = disk.ray_exit_distance(&[0.6, 0.0], 1, true);
        assert!((y - 0.8).abs() < 1e-14);
    }

    #[test]
    fn multi_index_roundtrip() {
        let b = DomainSpec::cuboid(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 0.5]).unwrap();
        let lat = make_lattice(&b, 0.25, 0.0).unwrap();
        assert_eq!(lat.node_count(), 5 * 9 * 3);
        for idx in [0, 7, 33, lat.node_count() - 1] {
            assert_eq!(lat.index_of(&lat.multi_index(idx)), idx);
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn contains_iff_positive_distance(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let doms = [
                DomainSpec::disk(vec![0.1, -0.2], 1.3).unwrap(),
                DomainSpec::cuboid(vec![-1.0, 0.0], vec![1.0, 1.5]).unwrap(),
                DomainSpec::half_space(2, 1, 0.3).unwrap(),
            ];
            for dom in &doms {
                let p = [x, y];
                let inside = dom.contains(&p).unwrap();
                match dom.boundary_distance(&p) {
                    Ok(dist) => prop_assert!(inside && dist > 0.0),
                    Err(_) => prop_assert!(!inside),
                }
            }
        }

        #[test]
        fn node_count_is_product(h in 0.05f64..0.6, m in 0.0f64..1.0) {
            let b = DomainSpec::cuboid(vec![0.0, -1.0], vec![1.0, 1.0]).unwrap();
            if let Ok(lat) = make_lattice(&b, h, m) {
                let prod: usize = lat.extents.iter().map(|e| e + 1).product();
                prop_assert_eq!(lat.node_count(), prod);
                prop_assert_eq!(lat.cell_measure, h * h);
            }
        }
    }
}
