//! Transition densities `p_t(x, y)` of Brownian motion killed on leaving `D`,
//! the 1-resolvent density `r_1(x, y)`, and the Chapman-Kolmogorov check.
//!
//! Representations:
//! * whole space: the Gaussian kernel `(2πt)^{-d/2} exp(-|x-y|²/2t)`;
//! * half-space: one reflected image;
//! * box: tensor product of interval kernels, each summed either as an image
//!   series (short times) or a sine eigen-series (long times);
//! * disk (`d = 2`): Bessel-Dirichlet eigen-expansion, with the mode table
//!   built once for a minimum supported time.

use std::f64::consts::{PI, SQRT_2};
use std::sync::{Arc, OnceLock};

use crate::error::{input, ImlError, Result};
use crate::geometry::{dist2, DomainKind, DomainSpec};
use crate::quadrature::{GaussLegendre, Rule, SqrtGradedRule};
use crate::special::{bessel_j, bessel_j_zeros};

/// Relative cut-off for image series.
const IMAGE_TOL: f64 = 1e-14;
/// Eigen-series terms are dropped once `e^{-λ t}` falls below this.
const EIGEN_CUTOFF: f64 = 1e-16;
/// `-ln(EIGEN_CUTOFF)`.
const EIGEN_CUTOFF_EXPONENT: f64 = 36.841_361_487_904_734;
/// Resolvent time integrals are truncated where `e^{-s}` is negligible.
const RESOLVENT_HORIZON: f64 = 50.0;

/// Whole-space Gaussian kernel `(2πt)^{-d/2} exp(-|x-y|²/(2t))`.
pub fn free_kernel(d: usize, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return input(format!("kernel time must be positive, got {t}"));
    }
    if x.len() != d || y.len() != d {
        return input("point dimension mismatch");
    }
    Ok(gauss(d, t, dist2(x, y)))
}

#[inline]
fn gauss(d: usize, t: f64, r2: f64) -> f64 {
    (2.0 * PI * t).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * t)).exp()
}

#[inline]
fn gauss1(t: f64, z: f64) -> f64 {
    (-z * z / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Killed kernel on `(0, len)` by the method of images,
/// `Σ_n g_t(x - y + 2n·len) - g_t(x + y + 2n·len)`.
pub fn interval_kernel_images(len: f64, t: f64, x: f64, y: f64, max_terms: usize) -> Result<f64> {
    let mut sum = gauss1(t, x - y) - gauss1(t, x + y);
    let mut scale = sum.abs().max(gauss1(t, x - y));
    for n in 1..=max_terms {
        let s = 2.0 * n as f64 * len;
        let term = gauss1(t, x - y + s) + gauss1(t, x - y - s) - gauss1(t, x + y + s) - gauss1(t, x + y - s);
        sum += term;
        scale = scale.max(sum.abs());
        // next pair decays faster than this one; stop on the largest image
        let next_mag = gauss1(t, 2.0 * n as f64 * len);
        if term.abs() <= IMAGE_TOL * scale && next_mag <= IMAGE_TOL * scale {
            return Ok(sum.max(0.0));
        }
    }
    Err(ImlError::Accuracy(format!("image series did not converge in {max_terms} terms (t={t})")))
}

/// Killed kernel on `(0, len)` by the sine eigen-expansion,
/// `(2/len) Σ_{n≥1} sin(nπx/len) sin(nπy/len) e^{-n²π²t/(2 len²)}`.
pub fn interval_kernel_eigen(len: f64, t: f64, x: f64, y: f64, max_terms: usize) -> Result<f64> {
    let mut sum = 0.0;
    for n in 1..=max_terms {
        let k = n as f64 * PI / len;
        let decay = (-0.5 * k * k * t).exp();
        if decay < EIGEN_CUTOFF {
            return Ok((2.0 / len * sum).max(0.0));
        }
        sum += (k * x).sin() * (k * y).sin() * decay;
    }
    Err(ImlError::Accuracy(format!("eigen series did not converge in {max_terms} terms (t={t})")))
}

fn interval_kernel(len: f64, t: f64, x: f64, y: f64, max_terms: usize) -> Result<f64> {
    if t <= len * len {
        interval_kernel_images(len, t, x, y, max_terms)
    } else {
        interval_kernel_eigen(len, t, x, y, max_terms)
    }
}

/// One Bessel-Dirichlet mode of the disk, `J_n(j r/R) · {cos, sin}(nθ)`.
#[derive(Debug, Clone, Copy)]
struct DiskMode {
    n: usize,
    /// Zero `j_{n,k}` of `J_n`.
    zero: f64,
    /// `1/(πR² J_{n+1}(j)²)`, doubled for `n ≥ 1` (cos and sin partners).
    coef: f64,
}

/// Per-point values of every disk mode, `(J_n(j r/R) cos nθ, J_n(j r/R) sin nθ)`.
#[derive(Debug, Clone)]
struct ModeVector {
    cos_part: Vec<f64>,
    sin_part: Vec<f64>,
}

/// Polar quadrature grid over the disk with mode vectors cached per node.
#[derive(Debug)]
struct DiskQuadrature {
    weights: Vec<f64>,
    vectors: Vec<ModeVector>,
}

/// Bessel-Dirichlet eigen table of a disk of radius `R`.
#[derive(Debug)]
pub struct DiskModes {
    center: Vec<f64>,
    radius: f64,
    modes: Vec<DiskMode>,
    min_time: f64,
    quad: OnceLock<DiskQuadrature>,
}

impl DiskModes {
    /// Table complete for every `t ≥ min_time`.
    pub fn new(center: Vec<f64>, radius: f64, min_time: f64) -> Result<Self> {
        if !(min_time > 0.0) {
            return input("disk kernel needs a positive minimum time");
        }
        let j_max = (2.0 * EIGEN_CUTOFF_EXPONENT / min_time).sqrt() * radius + 1.0;
        let mut modes = Vec::new();
        for n in 0.. {
            if n as f64 > j_max {
                break;
            }
            let zeros = bessel_j_zeros(n, j_max);
            if zeros.is_empty() {
                break;
            }
            for z in zeros {
                let jn1 = bessel_j(n + 1, z);
                let base = 1.0 / (PI * radius * radius * jn1 * jn1);
                modes.push(DiskMode { n, zero: z, coef: if n == 0 { base } else { 2.0 * base } });
            }
        }
        modes.sort_by(|a, b| a.zero.total_cmp(&b.zero));
        Ok(Self { center, radius, modes, min_time, quad: OnceLock::new() })
    }

    /// Principal eigenvalue `j_{0,1}² / (2R²)` of `-½Δ`.
    pub fn principal_eigenvalue(&self) -> f64 {
        let j = self.modes[0].zero;
        j * j / (2.0 * self.radius * self.radius)
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    fn mode_vector(&self, x: &[f64]) -> ModeVector {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let rho = (dx * dx + dy * dy).sqrt() / self.radius;
        let theta = dy.atan2(dx);
        let mut cos_part = Vec::with_capacity(self.modes.len());
        let mut sin_part = Vec::with_capacity(self.modes.len());
        for m in &self.modes {
            let j = bessel_j(m.n, m.zero * rho);
            let a = m.n as f64 * theta;
            cos_part.push(j * a.cos());
            sin_part.push(j * a.sin());
        }
        ModeVector { cos_part, sin_part }
    }

    fn check_time(&self, t: f64) -> Result<usize> {
        if t < self.min_time * (1.0 - 1e-12) {
            return Err(ImlError::Accuracy(format!(
                "disk eigen table supports t ≥ {}, got {t}",
                self.min_time
            )));
        }
        let cut = (2.0 * EIGEN_CUTOFF_EXPONENT / t).sqrt() * self.radius;
        Ok(self.modes.partition_point(|m| m.zero <= cut))
    }

    fn kernel_from_vectors(&self, t: f64, a: &ModeVector, b: &ModeVector, used: usize) -> f64 {
        let r2 = self.radius * self.radius;
        let mut sum = 0.0;
        for (i, m) in self.modes[..used].iter().enumerate() {
            let decay = (-m.zero * m.zero * t / (2.0 * r2)).exp();
            sum += m.coef * decay * (a.cos_part[i] * b.cos_part[i] + a.sin_part[i] * b.sin_part[i]);
        }
        sum.max(0.0)
    }

    fn kernel(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let used = self.check_time(t)?;
        let a = self.mode_vector(x);
        let b = self.mode_vector(y);
        Ok(self.kernel_from_vectors(t, &a, &b, used))
    }

    /// Polar grid exact in angle for the table's angular bandwidth.
    fn quadrature(&self) -> &DiskQuadrature {
        self.quad.get_or_init(|| {
            let n_max = self.modes.iter().map(|m| m.n).max().unwrap_or(0);
            let j_max = self.modes.last().map(|m| m.zero).unwrap_or(1.0);
            let n_theta = 2 * n_max + 4;
            let panels = ((j_max / 4.0).ceil() as usize).max(4);
            let radial = Rule::composite(0.0, self.radius, panels, 16);
            let mut weights = Vec::new();
            let mut vectors = Vec::new();
            let dtheta = 2.0 * PI / n_theta as f64;
            for &(r, wr) in &radial.points {
                for k in 0..n_theta {
                    let th = k as f64 * dtheta;
                    let z = [self.center[0] + r * th.cos(), self.center[1] + r * th.sin()];
                    weights.push(wr * r * dtheta);
                    vectors.push(self.mode_vector(&z));
                }
            }
            DiskQuadrature { weights, vectors }
        })
    }
}

/// Kernel evaluator for one domain.
#[derive(Debug, Clone)]
pub struct KernelEval {
    pub domain: DomainSpec,
    /// Maximum number of terms (or image pairs) per series.
    pub series_terms: usize,
    /// Gauss-Legendre order used per quadrature panel.
    pub quad_nodes: usize,
    disk: Option<Arc<DiskModes>>,
}

/// Default lower time limit of the disk mode table.
pub const DEFAULT_DISK_MIN_TIME: f64 = 0.02;

impl KernelEval {
    pub fn new(domain: DomainSpec, series_terms: usize, quad_nodes: usize) -> Result<Self> {
        Self::with_disk_min_time(domain, series_terms, quad_nodes, DEFAULT_DISK_MIN_TIME)
    }

    pub fn with_disk_min_time(domain: DomainSpec, series_terms: usize, quad_nodes: usize, min_time: f64) -> Result<Self> {
        if series_terms < 1 {
            return input("series_terms must be at least 1");
        }
        if quad_nodes < 4 {
            return input("quad_nodes must be at least 4");
        }
        let disk = match &domain.kind {
            DomainKind::Disk { center, radius } => {
                if domain.d != 2 {
                    return input("disk kernel is only available for d = 2");
                }
                Some(Arc::new(DiskModes::new(center.clone(), *radius, min_time)?))
            }
            _ => None,
        };
        Ok(Self { domain, series_terms, quad_nodes, disk })
    }

    /// Sensible defaults: 400 series terms, 16-point panels.
    pub fn for_domain(domain: DomainSpec) -> Result<Self> {
        Self::new(domain, 400, 16)
    }

    pub fn disk_modes(&self) -> Option<&DiskModes> {
        self.disk.as_deref()
    }

    fn check_points(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if !self.domain.contains(x)? || !self.domain.contains(y)? {
            return input("kernel arguments must lie in D");
        }
        Ok(())
    }

    /// `p_t(x, y)` of the killed process.
    pub fn kernel(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !(t > 0.0) {
            return input(format!("kernel time must be positive, got {t}"));
        }
        self.check_points(x, y)?;
        self.kernel_unchecked(t, x, y)
    }

    /// As [`kernel`](Self::kernel) but trusts that `x, y ∈ D` and `t > 0`.
    pub(crate) fn kernel_unchecked(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let d = self.domain.d;
        match &self.domain.kind {
            DomainKind::WholeSpace => Ok(gauss(d, t, dist2(x, y))),
            DomainKind::HalfSpace { axis, offset } => {
                let r2 = dist2(x, y);
                let shift = 2.0 * (y[*axis] - offset);
                // |x - y*|² where y* mirrors y through the plane
                let dz = x[*axis] - y[*axis] + shift;
                let dz0 = x[*axis] - y[*axis];
                let r2_image = r2 - dz0 * dz0 + dz * dz;
                Ok((gauss(d, t, r2) - gauss(d, t, r2_image)).max(0.0))
            }
            DomainKind::Box { lo, hi } => {
                let mut prod = 1.0;
                for k in 0..d {
                    prod *= interval_kernel(hi[k] - lo[k], t, x[k] - lo[k], y[k] - lo[k], self.series_terms)?;
                    if prod == 0.0 {
                        break;
                    }
                }
                Ok(prod)
            }
            DomainKind::Disk { .. } => {
                // The mode sum carries ~1e-15 absolute error relative to its
                // peak; projecting onto 0 ≤ p^D ≤ p never increases the error.
                let series = self.disk.as_ref().expect("disk table").kernel(t, x, y)?;
                Ok(series.min(gauss(d, t, dist2(x, y))))
            }
        }
    }

    /// `∫_0^τ p_s(x, y) ds` by a graded square-root substitution.
    pub fn time_integral(&self, tau: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        if !(tau > 0.0) {
            return input("time integral horizon must be positive");
        }
        self.check_points(x, y)?;
        self.time_integral_unchecked(tau, x, y)
    }

    pub(crate) fn time_integral_unchecked(&self, tau: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        let r = dist2(x, y).sqrt();
        if r == 0.0 && self.domain.d >= 2 {
            return input("time-integrated kernel is singular on the diagonal for d ≥ 2");
        }
        let levels = if r == 0.0 { 1 } else { ((tau.sqrt() / r).log2().ceil().max(0.0) as usize + 3).min(40) };
        let rule = SqrtGradedRule::new(levels, self.quad_nodes);
        let mut acc = 0.0;
        for (s, w) in rule.points(tau) {
            if s > 0.0 {
                acc += w * self.kernel_unchecked(s, x, y)?;
            }
        }
        Ok(acc)
    }

    /// `r_1(x, y) = ∫_0^∞ e^{-s} p_s(x, y) ds`, closed form where one exists.
    pub fn resolvent_r1(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_points(x, y)?;
        let d = self.domain.d;
        let r2 = dist2(x, y);
        if r2 == 0.0 && d >= 2 {
            return input("r_1 is singular on the diagonal for d ≥ 2");
        }
        match (&self.domain.kind, d) {
            (DomainKind::WholeSpace, 1) | (DomainKind::WholeSpace, 3) => Ok(free_resolvent(d, r2.sqrt())),
            (DomainKind::HalfSpace { axis, offset }, 1) | (DomainKind::HalfSpace { axis, offset }, 3) => {
                let dz0 = x[*axis] - y[*axis];
                let dz = dz0 + 2.0 * (y[*axis] - offset);
                let r2_image = r2 - dz0 * dz0 + dz * dz;
                Ok(free_resolvent(d, r2.sqrt()) - free_resolvent(d, r2_image.sqrt()))
            }
            (DomainKind::Box { lo, hi }, 1) => {
                let len = hi[0] - lo[0];
                let (a, b) = if x[0] <= y[0] { (x[0], y[0]) } else { (y[0], x[0]) };
                let m = SQRT_2;
                Ok(2.0 * (m * (a - lo[0])).sinh() * (m * (hi[0] - b)).sinh() / (m * (m * len).sinh()))
            }
            _ => self.resolvent_r1_quadrature(x, y),
        }
    }

    /// `r_1` by quadrature of the killed kernel: a square-root-graded first
    /// panel on `[0, s₀]`, `s₀ = max(|x-y|², 10⁻⁴)`, then geometric panels.
    pub fn resolvent_r1_quadrature(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_points(x, y)?;
        let r2 = dist2(x, y);
        if r2 == 0.0 && self.domain.d >= 2 {
            return input("r_1 is singular on the diagonal for d ≥ 2");
        }
        self.laplace_at_one(r2, |s| self.kernel_unchecked(s, x, y))
    }

    /// `∫_0^∞ e^{-s} g(s) ds` for a kernel-like `g` whose short-time layer
    /// has width `r2`.
    fn laplace_at_one(&self, r2: f64, g: impl Fn(f64) -> Result<f64>) -> Result<f64> {
        let s0 = r2.clamp(1e-4, 1.0);
        let head = SqrtGradedRule::new(4, self.quad_nodes);
        let mut acc = 0.0;
        for (s, w) in head.points(s0) {
            if s > 0.0 {
                acc += w * (-s).exp() * g(s)?;
            }
        }
        let gl = GaussLegendre::new(self.quad_nodes);
        let mut a = s0;
        while a < RESOLVENT_HORIZON {
            let b = (2.0 * a).min(RESOLVENT_HORIZON).max(a + 0.5f64.min(a));
            for (s, w) in gl.on(a, b) {
                acc += w * (-s).exp() * g(s)?;
            }
            a = b;
        }
        Ok(acc)
    }

    /// Lattice form of `p_s(x, y)` for spacing `h`: exact unless `d ≥ 2` and
    /// `y` lies in the cell of `x`, where the Gaussian part is replaced by
    /// its average over the cell centred at `y` (finite as `s → 0`).
    pub(crate) fn cell_kernel(&self, s: f64, x: &[f64], y: &[f64], h: f64) -> Result<f64> {
        let p = self.kernel_unchecked(s, x, y)?;
        if self.domain.d >= 2 && same_cell(x, y, h) {
            Ok(p - gauss(self.domain.d, s, dist2(x, y)) + gauss_cell_average(s, x, y, h))
        } else {
            Ok(p)
        }
    }

    /// Lattice form of `∫_0^τ p_s(x, y) ds`; see [`cell_kernel`](Self::cell_kernel).
    pub(crate) fn cell_time_integral(&self, tau: f64, x: &[f64], y: &[f64], h: f64) -> Result<f64> {
        if self.domain.d >= 2 && same_cell(x, y, h) {
            let levels = ((tau.sqrt() / h).log2().ceil().max(0.0) as usize + 4).min(40);
            let rule = SqrtGradedRule::new(levels, self.quad_nodes);
            let mut acc = 0.0;
            for (s, w) in rule.points(tau) {
                if s > 0.0 {
                    acc += w * self.cell_kernel(s, x, y, h)?;
                }
            }
            Ok(acc)
        } else {
            self.time_integral_unchecked(tau, x, y)
        }
    }

    /// Lattice form of `r_1(x, y)`; see [`cell_kernel`](Self::cell_kernel).
    pub(crate) fn cell_resolvent(&self, x: &[f64], y: &[f64], h: f64) -> Result<f64> {
        if self.domain.d >= 2 && same_cell(x, y, h) {
            self.laplace_at_one(h * h, |s| self.cell_kernel(s, x, y, h))
        } else {
            self.resolvent_r1(x, y)
        }
    }

    /// `∫_D p_t(x, y) dy`, the survival probability from `x`.
    pub fn kernel_mass(&self, t: f64, x: &[f64]) -> Result<f64> {
        if !self.domain.contains(x)? {
            return input("kernel_mass requires x ∈ D");
        }
        let pts = self.integration_points(x, x, t, t)?;
        let mut acc = 0.0;
        for (z, w) in &pts {
            if self.domain.contains_unchecked(z) {
                acc += w * self.kernel_unchecked(t, x, z)?;
            }
        }
        Ok(acc)
    }

    /// Tensor Gauss-Legendre points covering the part of `D` where
    /// `p_s(x, ·) p_t(·, y)` is non-negligible.
    fn integration_points(&self, x: &[f64], y: &[f64], s: f64, t: f64) -> Result<Vec<(Vec<f64>, f64)>> {
        let d = self.domain.d;
        let sigma = s.max(t).sqrt();
        let narrow = (s * t / (s + t)).sqrt();
        let mut axes: Vec<Rule> = Vec::with_capacity(d);
        for k in 0..d {
            let (mut a, mut b) = (x[k].min(y[k]) - 6.0 * sigma, x[k].max(y[k]) + 6.0 * sigma);
            match &self.domain.kind {
                DomainKind::Box { lo, hi } => {
                    a = lo[k];
                    b = hi[k];
                }
                DomainKind::HalfSpace { axis, offset } if *axis == k => a = a.max(*offset),
                DomainKind::Disk { .. } => return input("disk integration uses the polar grid"),
                _ => {}
            }
            let panels = (((b - a) / narrow).ceil() as usize).clamp(2, 400);
            axes.push(Rule::composite(a, b, panels, self.quad_nodes.max(10)));
        }
        let mut pts: Vec<(Vec<f64>, f64)> = vec![(Vec::with_capacity(d), 1.0)];
        for rule in &axes {
            let mut next = Vec::with_capacity(pts.len() * rule.len());
            for (p, w) in &pts {
                for &(z, wz) in &rule.points {
                    let mut q = p.clone();
                    q.push(z);
                    next.push((q, w * wz));
                }
            }
            pts = next;
        }
        Ok(pts)
    }
}

pub(crate) fn same_cell(x: &[f64], y: &[f64], h: f64) -> bool {
    x.iter().zip(y).all(|(a, b)| (a - b).abs() < 0.5 * h)
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Gaussian kernel averaged over the cube of side `h` centred at `y`.
fn gauss_cell_average(s: f64, x: &[f64], y: &[f64], h: f64) -> f64 {
    let rs = s.sqrt();
    x.iter()
        .zip(y)
        .map(|(a, b)| (std_normal_cdf((b + 0.5 * h - a) / rs) - std_normal_cdf((b - 0.5 * h - a) / rs)) / h)
        .product()
}

fn free_resolvent(d: usize, r: f64) -> f64 {
    match d {
        1 => (-SQRT_2 * r).exp() / SQRT_2,
        3 => (-SQRT_2 * r).exp() / (2.0 * PI * r),
        _ => unreachable!("closed-form resolvent only for d = 1, 3"),
    }
}

/// `p_t(x, y)` for the evaluator's domain.
pub fn killed_kernel(k: &KernelEval, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    k.kernel(t, x, y)
}

/// `r_1(x, y)` for the evaluator's domain.
pub fn resolvent_r1(k: &KernelEval, x: &[f64], y: &[f64]) -> Result<f64> {
    k.resolvent_r1(x, y)
}

/// `|p_{s+t}(x,y) - ∫_D p_s(x,z) p_t(z,y) dz|` with the integral by
/// composite Gauss-Legendre (polar for the disk).
pub fn ck_residual(k: &KernelEval, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if !(s > 0.0 && t > 0.0) {
        return input("Chapman-Kolmogorov times must be positive");
    }
    k.check_points(x, y)?;
    let direct = k.kernel_unchecked(s + t, x, y)?;
    let composed = if let Some(disk) = &k.disk {
        let used_s = disk.check_time(s)?;
        let used_t = disk.check_time(t)?;
        let vx = disk.mode_vector(x);
        let vy = disk.mode_vector(y);
        let quad = disk.quadrature();
        quad.weights
            .iter()
            .zip(&quad.vectors)
            .map(|(w, vz)| w * disk.kernel_from_vectors(s, &vx, vz, used_s) * disk.kernel_from_vectors(t, vz, &vy, used_t))
            .sum()
    } else {
        let mut acc = 0.0;
        for (z, w) in k.integration_points(x, y, s, t)? {
            if k.domain.contains_unchecked(&z) {
                acc += w * k.kernel_unchecked(s, x, &z)? * k.kernel_unchecked(t, &z, y)?;
            }
        }
        acc
    };
    Ok((direct - composed).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval() -> KernelEval {
        KernelEval::for_domain(DomainSpec::interval(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn free_kernel_examples() {
        assert!((free_kernel(1, 1.0, &[0.3], &[0.3]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        let v = free_kernel(2, 0.5, &[0.0, 0.0], &[0.6, 0.8]).unwrap();
        assert!((v - (-1.0f64).exp() / PI).abs() < 1e-15);
        assert!((v - 0.117_099_6).abs() < 1e-7);
        assert!(free_kernel(1, 0.0, &[0.0], &[0.0]).is_err());
        assert!(free_kernel(1, -1.0, &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn half_line_single_image() {
        let k = KernelEval::for_domain(DomainSpec::half_space(1, 0, 0.0).unwrap()).unwrap();
        let v = k.kernel(1.0, &[1.0], &[1.0]).unwrap();
        let expected = gauss1(1.0, 0.0) - gauss1(1.0, 2.0);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.344_951_3).abs() < 1e-7);
    }

    #[test]
    fn interval_images_agree_with_eigen_series() {
        let e = interval_kernel_eigen(1.0, 1.0, 0.5, 0.5, 400).unwrap();
        let i = interval_kernel_images(1.0, 1.0, 0.5, 0.5, 400).unwrap();
        assert!((e - i).abs() < 1e-10);
        assert!((e - 0.014_383_7).abs() < 1e-7, "{e}");
        for &(t, x, y) in &[(0.05, 0.1, 0.7), (0.3, 0.5, 0.52), (2.0, 0.9, 0.05), (0.01, 0.4, 0.45)] {
            let e = interval_kernel_eigen(1.0, t, x, y, 4000).unwrap();
            let i = interval_kernel_images(1.0, t, x, y, 400).unwrap();
            assert!((e - i).abs() < 1e-10, "t={t} x={x} y={y}: {e} vs {i}");
        }
    }

    #[test]
    fn eigen_series_reports_truncation() {
        assert!(matches!(interval_kernel_eigen(1.0, 1e-4, 0.5, 0.5, 10), Err(ImlError::Accuracy(_))));
    }

    #[test]
    fn kernel_rejects_exterior_points() {
        let k = interval();
        assert!(k.kernel(0.5, &[1.5], &[0.5]).is_err());
        assert!(k.kernel(0.5, &[0.0], &[0.5]).is_err());
    }

    #[test]
    fn resolvent_closed_forms() {
        let w = KernelEval::for_domain(DomainSpec::whole(1).unwrap()).unwrap();
        assert!((w.resolvent_r1(&[0.2], &[0.2]).unwrap() - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((w.resolvent_r1(&[0.0], &[1.0]).unwrap() - 0.171_909_5).abs() < 1e-7);
        let q = w.resolvent_r1_quadrature(&[0.0], &[1.0]).unwrap();
        assert!((q - (-SQRT_2).exp() / SQRT_2).abs() < 1e-9, "{q}");

        let h = KernelEval::for_domain(DomainSpec::half_space(1, 0, 0.0).unwrap()).unwrap();
        let closed = h.resolvent_r1(&[1.0], &[1.0]).unwrap();
        assert!((closed - (1.0 - (-2.0 * SQRT_2).exp()) / SQRT_2).abs() < 1e-15);
        assert!((closed - 0.6654).abs() < 1e-4);
        let quad = h.resolvent_r1_quadrature(&[1.0], &[1.0]).unwrap();
        assert!(((quad - closed) / closed).abs() < 1e-8, "{quad} vs {closed}");

        let i = interval();
        for &(x, y) in &[(0.3, 0.3), (0.2, 0.9), (0.05, 0.5)] {
            let c = i.resolvent_r1(&[x], &[y]).unwrap();
            let q = i.resolvent_r1_quadrature(&[x], &[y]).unwrap();
            assert!(((q - c) / c).abs() < 1e-8, "x={x} y={y}: {q} vs {c}");
        }

        let w3 = KernelEval::for_domain(DomainSpec::whole(3).unwrap()).unwrap();
        let c = w3.resolvent_r1(&[0.0, 0.0, 0.0], &[0.3, 0.4, 0.0]).unwrap();
        let q = w3.resolvent_r1_quadrature(&[0.0, 0.0, 0.0], &[0.3, 0.4, 0.0]).unwrap();
        assert!(((q - c) / c).abs() < 1e-8, "{q} vs {c}");
    }

    #[test]
    fn resolvent_diagonal_singular_in_2d() {
        let w = KernelEval::for_domain(DomainSpec::whole(2).unwrap()).unwrap();
        assert!(w.resolvent_r1(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn ck_residual_examples() {
        let i = interval();
        assert!(ck_residual(&i, 0.5, 0.5, &[0.3], &[0.7]).unwrap() < 1e-8);
        let w = KernelEval::for_domain(DomainSpec::whole(1).unwrap()).unwrap();
        for &(s, t) in &[(0.1, 0.2), (1.0, 3.0), (0.01, 0.5)] {
            assert!(ck_residual(&w, s, t, &[0.1], &[-0.4]).unwrap() < 1e-10);
        }
        let hs = KernelEval::for_domain(DomainSpec::half_space(2, 0, 0.0).unwrap()).unwrap();
        assert!(ck_residual(&hs, 0.2, 0.3, &[0.4, 0.1], &[0.9, -0.3]).unwrap() < 1e-6);
    }

    #[test]
    fn disk_principal_eigenvalue_and_symmetry() {
        let k = KernelEval::for_domain(DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap()).unwrap();
        let disk = k.disk_modes().unwrap();
        let j01 = 2.404_825_557_695_773;
        assert!((disk.principal_eigenvalue() - j01 * j01 / 2.0).abs() < 1e-12);
        let a = k.kernel(0.1, &[0.3, -0.2], &[-0.1, 0.5]).unwrap();
        let b = k.kernel(0.1, &[-0.1, 0.5], &[0.3, -0.2]).unwrap();
        assert!((a - b).abs() < 1e-14 * a.max(1.0));
        assert!(matches!(k.kernel(0.001, &[0.0, 0.0], &[0.1, 0.0]), Err(ImlError::Accuracy(_))));
    }

    #[test]
    fn disk_kernel_matches_free_kernel_deep_inside_at_short_times() {
        let k = KernelEval::for_domain(DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap()).unwrap();
        let t = 0.02;
        let x = [0.05, 0.0];
        let y = [-0.05, 0.1];
        let killed = k.kernel(t, &x, &y).unwrap();
        let free = free_kernel(2, t, &x, &y).unwrap();
        // boundary correction is below e^{-0.9²/(2t)} relative
        assert!(((killed - free) / free).abs() < 1e-6, "{killed} vs {free}");
    }

    #[test]
    fn disk_ck_residual_small() {
        let k = KernelEval::for_domain(DomainSpec::disk(vec![0.0, 0.0], 1.0).unwrap()).unwrap();
        let r = ck_residual(&k, 0.05, 0.1, &[0.2, 0.3], &[-0.4, 0.1]).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn sub_markov_mass_matches_eigen_survival() {
        let k = interval();
        let t = 0.3;
        let x = 0.37;
        let mass = k.kernel_mass(t, &[x]).unwrap();
        let oracle: f64 = (0..200)
            .map(|m| {
                let n = (2 * m + 1) as f64;
                4.0 / (n * PI) * (n * PI * x).sin() * (-0.5 * n * n * PI * PI * t).exp()
            })
            .sum();
        assert!((mass - oracle).abs() < 1e-10, "{mass} vs {oracle}");
        assert!(mass < 1.0);
    }

    #[test]
    fn time_integral_closed_form_at_origin() {
        let w = KernelEval::for_domain(DomainSpec::whole(1).unwrap()).unwrap();
        let v = w.time_integral(1.0, &[0.0], &[0.0]).unwrap();
        assert!((v - (2.0 / PI).sqrt()).abs() < 1e-13);
    }
}
