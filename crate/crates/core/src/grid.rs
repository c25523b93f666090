use std::sync::Arc;

use serde::Serialize;

use crate::error::{input, Result};
use crate::geometry::Lattice;

/// Scalar field sampled on the nodes of a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lattice: Arc<Lattice>,
    pub values: Vec<f64>,
}

/// Header of the binary dump; values follow as little-endian `f64` in
/// row-major node order (last axis fastest).
#[derive(Debug, Clone, Serialize)]
pub struct DumpHeader {
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub extents: Vec<usize>,
    pub node_count: usize,
}

impl GridField {
    pub fn zeros(lattice: Arc<Lattice>) -> Self {
        let n = lattice.node_count();
        Self { lattice, values: vec![0.0; n] }
    }

    pub fn from_values(lattice: Arc<Lattice>, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.node_count() {
            return input(format!(
                "field has {} values but lattice has {} nodes",
                values.len(),
                lattice.node_count()
            ));
        }
        Ok(Self { lattice, values })
    }

    /// Samples `f` at interior nodes; exterior nodes are set to zero.
    pub fn from_fn(lattice: Arc<Lattice>, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; lattice.dim()];
        let values = (0..lattice.node_count())
            .map(|i| {
                if lattice.interior[i] {
                    lattice.coords_into(i, &mut x);
                    f(&x)
                } else {
                    0.0
                }
            })
            .collect();
        Self { lattice, values }
    }

    pub fn spacing(&self) -> f64 {
        self.lattice.spacing
    }

    pub fn cell_measure(&self) -> f64 {
        self.lattice.cell_measure
    }

    pub fn same_lattice(&self, other: &GridField) -> bool {
        Arc::ptr_eq(&self.lattice, &other.lattice) || *self.lattice == *other.lattice
    }

    pub fn check_same_lattice(&self, other: &GridField) -> Result<()> {
        if self.same_lattice(other) {
            Ok(())
        } else {
            input("fields live on different lattices")
        }
    }

    /// `cell_measure · Σ values`.
    pub fn integral(&self) -> f64 {
        self.cell_measure() * self.values.iter().sum::<f64>()
    }

    /// Lattice `L^r` norm, `(h^d Σ |v|^r)^{1/r}`.
    pub fn lp_norm(&self, r: f64) -> f64 {
        lp_norm(&self.values, self.cell_measure(), r)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { lattice: self.lattice.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// Nodewise product of several fields on one lattice.
    pub fn product(fields: &[&GridField]) -> Result<Self> {
        let first = match fields.first() {
            Some(f) => *f,
            None => return input("product of an empty field list"),
        };
        let mut values = first.values.clone();
        for f in &fields[1..] {
            first.check_same_lattice(f)?;
            values.iter_mut().zip(&f.values).for_each(|(a, b)| *a *= b);
        }
        Ok(Self { lattice: first.lattice.clone(), values })
    }

    /// `L¹` distance on the lattice.
    pub fn l1_distance(&self, other: &GridField) -> Result<f64> {
        self.check_same_lattice(other)?;
        Ok(self.cell_measure() * self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }

    /// CSV with one row per node: coordinates then value.
    pub fn to_csv(&self) -> String {
        let d = self.lattice.dim();
        let mut out = String::new();
        let names = ["x", "y", "z"];
        for name in names.iter().take(d) {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("value\n");
        let mut x = vec![0.0; d];
        for (i, v) in self.values.iter().enumerate() {
            self.lattice.coords_into(i, &mut x);
            for c in &x {
                out.push_str(&format!("{c:.12e},"));
            }
            out.push_str(&format!("{v:.17e}\n"));
        }
        out
    }

    pub fn dump_header(&self) -> DumpHeader {
        DumpHeader {
            origin: self.lattice.origin.clone(),
            spacing: self.lattice.spacing,
            extents: self.lattice.extents.clone(),
            node_count: self.lattice.node_count(),
        }
    }

    /// Row-major little-endian binary body matching [`dump_header`](Self::dump_header).
    pub fn to_binary(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

pub(crate) fn lp_norm(values: &[f64], cell_measure: f64, r: f64) -> f64 {
    if r.is_infinite() {
        return values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    (cell_measure * values.iter().map(|v| v.abs().powf(r)).sum::<f64>()).powf(1.0 / r)
}
