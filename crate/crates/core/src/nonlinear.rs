//! Nonlinear Brascamp–Lieb experiments on grids: the class of functions that
//! are essentially constant at scale `δ`, Poisson smoothing, composed
//! integrals `∫_U Π (f_j ∘ B_j)^{p_j}`, and linearisation defects.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::datum::BlDatum;
use crate::error::{invalid, Error, Result};
use crate::kakeya::DatumRef;
use crate::linalg;
use crate::rng::{self, tags};

/// Truncation radius of the Poisson kernel in units of `t`.
pub const POISSON_RADIUS: f64 = 40.0;
/// Default smoothing constant `c` in `P_{cδ}`; see `poisson_smooth`.
pub const DEFAULT_SMOOTHING: f64 = 2.5;
/// Bound on `sup_U ‖dB(x) - dB(0)‖` accepted by the sweep.
pub const PERTURBATION_GUARD: f64 = 0.05;
/// Samples per axis for suprema over boxes and cubes.
const SUP_SAMPLES: usize = 17;

/// Axis-aligned box `Π [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::Shape(
                "box corners must have equal positive length".into(),
            ));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box corner".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(invalid("box", "lo exceeds hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(center: &[f64], side: f64) -> Result<Self> {
        Self::new(
            center.iter().map(|c| c - side / 2.0).collect(),
            center.iter().map(|c| c + side / 2.0).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| *v >= a - tol && *v <= b + tol)
    }

    /// `k^d` evenly spaced points including the corners.
    pub fn lattice(&self, k: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        let total = k.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                DVector::from_fn(d, |i, _| {
                    let t = idx % k;
                    idx /= k;
                    if k == 1 {
                        (self.lo[i] + self.hi[i]) / 2.0
                    } else {
                        self.lo[i] + (self.hi[i] - self.lo[i]) * t as f64 / (k - 1) as f64
                    }
                })
            })
            .collect()
    }

    /// Midpoints of the `res^d` equal cells.
    pub fn midpoints(&self, res: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
        let d = self.dim();
        (0..res.pow(d as u32)).map(move |mut idx| {
            (0..d)
                .map(|i| {
                    let t = idx % res;
                    idx /= res;
                    let h = (self.hi[i] - self.lo[i]) / res as f64;
                    self.lo[i] + (t as f64 + 0.5) * h
                })
                .collect()
        })
    }
}

/// Nonnegative samples on the nodes `lo + k·h`, `k < shape`, stored with the
/// first axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridFunction {
    lo: Vec<f64>,
    shape: Vec<usize>,
    spacing: f64,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(lo: Vec<f64>, shape: Vec<usize>, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != shape.len() || shape.iter().any(|&s| s == 0) {
            return Err(Error::Shape("grid origin and shape disagree".into()));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(invalid("spacing", "must be positive and finite"));
        }
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(
                "value count does not match the grid shape".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("values", "must be finite and nonnegative"));
        }
        Ok(Self {
            lo,
            shape,
            spacing,
            values,
        })
    }

    /// Grid with nodes covering `bx` at spacing at most `spacing`.
    pub fn from_fn(bx: &AxisBox, spacing: f64, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        let shape: Vec<usize> = bx
            .lo
            .iter()
            .zip(&bx.hi)
            .map(|(a, b)| ((b - a) / spacing).ceil() as usize + 1)
            .collect();
        let total: usize = shape.iter().product();
        let mut x = vec![0.0; shape.len()];
        let mut values = Vec::with_capacity(total);
        for idx in 0..total {
            let mut r = idx;
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = bx.lo[i] + (r % shape[i]) as f64 * spacing;
                r /= shape[i];
            }
            values.push(f(&x));
        }
        Self::new(bx.lo.clone(), shape, spacing, values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> AxisBox {
        AxisBox {
            lo: self.lo.clone(),
            hi: self
                .lo
                .iter()
                .zip(&self.shape)
                .map(|(a, s)| a + (s - 1) as f64 * self.spacing)
                .collect(),
        }
    }

    pub fn node(&self, mut idx: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                let k = idx % self.shape[i];
                idx /= self.shape[i];
                self.lo[i] + k as f64 * self.spacing
            })
            .collect()
    }

    fn flat(&self, k: &[usize]) -> usize {
        let mut idx = 0;
        for i in (0..k.len()).rev() {
            idx = idx * self.shape[i] + k[i];
        }
        idx
    }

    /// Riemann sum `Σ f · h^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spacing.powi(self.dim() as i32)
    }

    /// Multilinear interpolation; `None` outside the node range.
    pub fn sample(&self, x: &[f64]) -> Option<f64> {
        let d = self.dim();
        if x.len() != d {
            return None;
        }
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let s = (x[i] - self.lo[i]) / self.spacing;
            let last = (self.shape[i] - 1) as f64;
            if !(s >= -1e-9 && s <= last + 1e-9) {
                return None;
            }
            let s = s.clamp(0.0, last);
            let k = (s.floor() as usize).min(self.shape[i].saturating_sub(2));
            base[i] = k;
            frac[i] = if self.shape[i] == 1 {
                0.0
            } else {
                s - k as f64
            };
        }
        let mut acc = 0.0;
        let mut k = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                let up = corner >> i & 1 == 1;
                if up && self.shape[i] == 1 {
                    w = 0.0;
                    break;
                }
                k[i] = base[i] + usize::from(up);
                w *= if up { frac[i] } else { 1.0 - frac[i] };
            }
            if w != 0.0 {
                acc += w * self.values[self.flat(&k)];
            }
        }
        Some(acc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaClassReport {
    pub member: bool,
    /// Pair with the largest ratio `max(f(x)/f(y), f(y)/f(x))`; infinite when
    /// one value vanishes and the other does not.
    pub worst_pair: Option<PairWitness>,
}

/// Nonzero lattice offsets of Euclidean length at most `radius` cells, one
/// from each `±` pair.
fn half_stencil(d: usize, radius: f64) -> Vec<Vec<isize>> {
    let r = radius.floor() as isize;
    let side = (2 * r + 1) as usize;
    let mut out = Vec::new();
    for mut idx in 0..side.pow(d as u32) {
        let k: Vec<isize> = (0..d)
            .map(|_| {
                let v = (idx % side) as isize - r;
                idx /= side;
                v
            })
            .collect();
        let norm2: isize = k.iter().map(|v| v * v).sum();
        let positive = k.iter().rev().find(|v| **v != 0).is_some_and(|v| *v > 0);
        if positive && (norm2 as f64).sqrt() <= radius + 1e-9 {
            out.push(k);
        }
    }
    out
}

/// Checks `f(y)/2 <= f(x) <= 2 f(y)` over all node pairs at distance at most
/// `delta`, via the stencil of offsets within that distance.
pub fn l1delta_check(f: &GridFunction, delta: f64) -> Result<DeltaClassReport> {
    if !(delta >= f.spacing) {
        return Err(invalid(
            "delta",
            "smaller than the grid spacing; the class is untestable",
        ));
    }
    let d = f.dim();
    let stencil = half_stencil(d, delta / f.spacing);
    let total = f.values.len();
    let worst = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut k = vec![0isize; d];
            let mut r = idx;
            for i in 0..d {
                k[i] = (r % f.shape[i]) as isize;
                r /= f.shape[i];
            }
            let a = f.values[idx];
            let mut best = (1.0f64, idx, idx);
            let mut other = vec![0usize; d];
            'offsets: for off in &stencil {
                for i in 0..d {
                    let v = k[i] + off[i];
                    if v < 0 || v >= f.shape[i] as isize {
                        continue 'offsets;
                    }
                    other[i] = v as usize;
                }
                let j = f.flat(&other);
                let b = f.values[j];
                let ratio = if a == 0.0 && b == 0.0 {
                    1.0
                } else if a == 0.0 || b == 0.0 {
                    f64::INFINITY
                } else {
                    (a / b).max(b / a)
                };
                if ratio > best.0 {
                    best = (ratio, idx, j);
                }
            }
            best
        })
        .reduce(
            || (1.0, 0, 0),
            |x, y| {
                if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2) && y.0 > 1.0) {
                    y
                } else {
                    x
                }
            },
        );
    let worst_pair = (worst.0 > 1.0).then(|| PairWitness {
        x: f.node(worst.1),
        y: f.node(worst.2),
        ratio: worst.0,
    });
    Ok(DeltaClassReport {
        member: worst.0 <= 2.0 * (1.0 + 1e-12),
        worst_pair,
    })
}

/// Normalising constant `Γ((d+1)/2)/π^{(d+1)/2}` of the Poisson kernel.
pub fn poisson_constant(d: usize) -> f64 {
    let s = (d as f64 + 1.0) / 2.0;
    gamma(s) / PI.powf(s)
}

pub fn poisson_kernel(d: usize, t: f64, r2: f64) -> f64 {
    poisson_constant(d) * t / (t * t + r2).powf((d as f64 + 1.0) / 2.0)
}

fn fft_axis(
    data: &mut [Complex64],
    shape: &[usize],
    axis: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    let len = shape[axis];
    let fft = if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    };
    let stride: usize = shape[..axis].iter().product();
    let block = stride * len;
    let mut line = vec![Complex64::new(0.0, 0.0); len];
    for start in (0..data.len()).step_by(block) {
        for offset in 0..stride {
            for (k, z) in line.iter_mut().enumerate() {
                *z = data[start + offset + k * stride];
            }
            fft.process(&mut line);
            for (k, z) in line.iter().enumerate() {
                data[start + offset + k * stride] = *z;
            }
        }
    }
}

fn fft_nd(data: &mut [Complex64], shape: &[usize], inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..shape.len() {
        fft_axis(data, shape, axis, &mut planner, inverse);
    }
}

/// Convolution with the Poisson kernel `P_t`, truncated at radius `40t` and
/// normalised to unit discrete mass, evaluated on the same nodes. Mass that
/// the kernel carries beyond the grid is lost, so mass is preserved only when
/// the grid extends `40t` past the support of `f`.
///
/// Smoothing at `t = cδ` yields a member of the scale-`δ` class once
/// `((c² + (s+1)²)/(c² + s²))^{(d+1)/2} <= 2` for all `s >= 0`, i.e. for
/// `c >~ 1.42` when `d = 1` and `c >~ 2.2` when `d = 2`.
pub fn poisson_smooth(f: &GridFunction, t: f64) -> Result<GridFunction> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid("t", "must be positive and finite"));
    }
    let d = f.dim();
    let h = f.spacing;
    let radius_cells = (POISSON_RADIUS * t / h).floor() as usize;

    // Normalisation over the whole truncated kernel, before cropping to the grid.
    let full_side = 2 * radius_cells + 1;
    let r2max = (POISSON_RADIUS * t).powi(2);
    let mut norm = 0.0;
    let count = full_side
        .checked_pow(d as u32)
        .filter(|c| *c <= 50_000_000)
        .ok_or_else(|| invalid("t", "kernel too large for the grid spacing"))?;
    for mut idx in 0..count {
        let mut r2 = 0.0;
        for _ in 0..d {
            let k = (idx % full_side) as f64 - radius_cells as f64;
            idx /= full_side;
            r2 += (k * h) * (k * h);
        }
        if r2 <= r2max {
            norm += poisson_kernel(d, t, r2);
        }
    }
    norm *= h.powi(d as i32);

    // Offsets beyond the grid extent cannot reach another node.
    let reach: Vec<usize> = f.shape.iter().map(|&s| radius_cells.min(s - 1)).collect();
    let kshape: Vec<usize> = reach.iter().map(|r| 2 * r + 1).collect();
    let cshape: Vec<usize> = f
        .shape
        .iter()
        .zip(&kshape)
        .map(|(a, b)| a + b - 1)
        .collect();
    let ctotal: usize = cshape.iter().product();

    let mut fa = vec![Complex64::new(0.0, 0.0); ctotal];
    let mut ka = vec![Complex64::new(0.0, 0.0); ctotal];
    let place = |k: &[usize]| {
        let mut idx = 0;
        for i in (0..d).rev() {
            idx = idx * cshape[i] + k[i];
        }
        idx
    };
    let mut k = vec![0usize; d];
    for (idx, v) in f.values.iter().enumerate() {
        let mut r = idx;
        for i in 0..d {
            k[i] = r % f.shape[i];
            r /= f.shape[i];
        }
        fa[place(&k)] = Complex64::new(*v, 0.0);
    }
    let ktotal: usize = kshape.iter().product();
    for idx in 0..ktotal {
        let mut r = idx;
        let mut r2 = 0.0;
        for i in 0..d {
            k[i] = r % kshape[i];
            r /= kshape[i];
            let off = k[i] as f64 - reach[i] as f64;
            r2 += (off * h) * (off * h);
        }
        if r2 <= r2max {
            ka[place(&k)] = Complex64::new(poisson_kernel(d, t, r2) / norm, 0.0);
        }
    }
    fft_nd(&mut fa, &cshape, false);
    fft_nd(&mut ka, &cshape, false);
    for (a, b) in fa.iter_mut().zip(&ka) {
        *a *= b;
    }
    fft_nd(&mut fa, &cshape, true);

    let scale = h.powi(d as i32) / ctotal as f64;
    let mut values = Vec::with_capacity(f.values.len());
    for idx in 0..f.values.len() {
        let mut r = idx;
        for i in 0..d {
            k[i] = r % f.shape[i] + reach[i];
            r /= f.shape[i];
        }
        values.push((fa[place(&k)].re * scale).max(0.0));
    }
    GridFunction::new(f.lo.clone(), f.shape.clone(), h, values)
}

/// Closed-form maps `B: R^n -> R^{n_j}` with exact derivatives.
#[derive(Clone, Debug, PartialEq)]
pub enum SubmersionSpec {
    /// `B(x) = Lx`.
    Linear { l: DMatrix<f64> },
    /// `B(x)_i = (Lx)_i + x^T Q_i x / 2` with symmetric `Q_i`.
    QuadraticPerturbed {
        l: DMatrix<f64>,
        q: Vec<DMatrix<f64>>,
    },
}

impl SubmersionSpec {
    pub fn linear(l: DMatrix<f64>) -> Self {
        SubmersionSpec::Linear { l }
    }

    /// Symmetrises each `Q_i`.
    pub fn quadratic(l: DMatrix<f64>, q: Vec<DMatrix<f64>>) -> Result<Self> {
        if q.len() != l.nrows() {
            return Err(Error::Shape(format!(
                "{} quadratic forms for {} output coordinates",
                q.len(),
                l.nrows()
            )));
        }
        if q.iter().any(|qi| qi.shape() != (l.ncols(), l.ncols())) {
            return Err(Error::Shape("quadratic forms must be n x n".into()));
        }
        Ok(SubmersionSpec::QuadraticPerturbed {
            q: q.iter().map(linalg::symmetrize).collect(),
            l,
        })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        match self {
            SubmersionSpec::Linear { l } | SubmersionSpec::QuadraticPerturbed { l, .. } => l,
        }
    }

    pub fn n(&self) -> usize {
        self.l().ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.l().nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let lin = self.l() * x;
        match self {
            SubmersionSpec::Linear { .. } => lin,
            SubmersionSpec::QuadraticPerturbed { q, .. } => {
                DVector::from_fn(lin.len(), |i, _| lin[i] + 0.5 * x.dot(&(&q[i] * x)))
            }
        }
    }

    pub fn derivative(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut d = self.l().clone();
        if let SubmersionSpec::QuadraticPerturbed { q, .. } = self {
            for (i, qi) in q.iter().enumerate() {
                let row = (qi * x).transpose();
                let mut target = d.row_mut(i);
                target += row;
            }
        }
        d
    }

    /// `sup ‖dB(x) - dB(0)‖` over a lattice of the box, in operator norm.
    pub fn derivative_drift(&self, bx: &AxisBox) -> f64 {
        let d0 = self.derivative(&DVector::zeros(self.n()));
        bx.lattice(SUP_SAMPLES)
            .iter()
            .map(|x| linalg::op_norm(&(self.derivative(x) - &d0)))
            .fold(0.0, f64::max)
    }

    /// Full row rank of `dB` on a lattice of the box.
    pub fn is_submersion_on(&self, bx: &AxisBox, rel_tol: f64) -> bool {
        bx.lattice(SUP_SAMPLES)
            .iter()
            .all(|x| linalg::numerical_rank(&self.derivative(x), rel_tol) == self.target_dim())
    }
}

fn check_spec_shapes(
    b: &[SubmersionSpec],
    f: &[GridFunction],
    p: &[f64],
    u: &AxisBox,
) -> Result<()> {
    if b.is_empty() || b.len() != f.len() || b.len() != p.len() {
        return Err(Error::Shape(
            "submersions, functions and exponents disagree in number".into(),
        ));
    }
    for (j, (bj, fj)) in b.iter().zip(f).enumerate() {
        if bj.n() != u.dim() {
            return Err(Error::Shape(format!("B_{j} acts on the wrong dimension")));
        }
        if bj.target_dim() != fj.dim() {
            return Err(Error::Shape(format!("f_{j} lives in the wrong dimension")));
        }
    }
    Ok(())
}

/// Midpoint rule for `∫_U Π_j f_j(B_j x)^{p_j}` on `res^n` cells.
pub fn nonlinear_lhs(
    b: &[SubmersionSpec],
    f: &[GridFunction],
    p: &[f64],
    u: &AxisBox,
    res: usize,
) -> Result<f64> {
    check_spec_shapes(b, f, p, u)?;
    if res == 0 {
        return Err(invalid("res", "must be positive"));
    }
    let points: Vec<Vec<f64>> = u.midpoints(res).collect();
    let values = points
        .par_iter()
        .map(|x| {
            let x = DVector::from_column_slice(x);
            let mut prod = 1.0;
            for (j, (bj, fj)) in b.iter().zip(f).enumerate() {
                let y = bj.eval(&x);
                let v = fj.sample(y.as_slice()).ok_or_else(|| {
                    invalid(
                        "f",
                        format!("B_{j} maps outside the sampling box of f_{j}; enlarge the box"),
                    )
                })?;
                if p[j] > 0.0 {
                    prod *= v.powf(p[j]);
                }
            }
            Ok(prod)
        })
        .collect::<Result<Vec<f64>>>()?;
    let cell = u.volume() / points.len() as f64;
    Ok(values.iter().sum::<f64>() * cell)
}

/// `sup ‖B(x) - B(x_Q) - dB(x_Q)(x - x_Q)‖` over a `17^n` lattice of the cube.
pub fn linearization_defect(b: &SubmersionSpec, center: &[f64], side: f64) -> Result<f64> {
    if center.len() != b.n() {
        return Err(Error::Shape("cube centre has the wrong dimension".into()));
    }
    let cube = AxisBox::cube(center, side)?;
    let xq = DVector::from_column_slice(center);
    let bq = b.eval(&xq);
    let dq = b.derivative(&xq);
    Ok(cube
        .lattice(SUP_SAMPLES)
        .iter()
        .map(|x| (b.eval(x) - &bq - &dq * (x - &xq)).norm())
        .fold(0.0, f64::max))
}

/// Bounding box of `B(U)` from a lattice of `U`, widened by `margin`.
pub fn image_box(b: &SubmersionSpec, u: &AxisBox, margin: f64) -> Result<AxisBox> {
    let k = b.target_dim();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for x in u.lattice(SUP_SAMPLES) {
        let y = b.eval(&x);
        for i in 0..k {
            lo[i] = lo[i].min(y[i]);
            hi[i] = hi[i].max(y[i]);
        }
    }
    AxisBox::new(
        lo.iter().map(|v| v - margin).collect(),
        hi.iter().map(|v| v + margin).collect(),
    )
}

/// Poisson smoothing at `t = c·δ` of 1 to 5 unit-order atoms placed uniformly
/// in `bx`, sampled at spacing `δ/8`.
pub fn random_atom_function(
    bx: &AxisBox,
    delta: f64,
    c: f64,
    rng: &mut rng::Rng,
) -> Result<GridFunction> {
    let h = delta / 8.0;
    let mut f = GridFunction::from_fn(bx, h, |_| 0.0)?;
    let atoms = rng.random_range(1..=5);
    for _ in 0..atoms {
        let w: f64 = rng.random_range(0.5..2.0);
        let mut idx = 0;
        for i in (0..f.dim()).rev() {
            let k = rng.random_range(0..f.shape[i]);
            idx = idx * f.shape[i] + k;
        }
        f.values[idx] += w / h.powi(f.dim() as i32);
    }
    poisson_smooth(&f, c * delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub draws: usize,
    pub grid_res: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    pub seed: u64,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub delta: f64,
    pub draw: usize,
    pub ratio: f64,
    pub class_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// `(δ, max ratio)` in the order of the requested deltas.
    pub max_ratios: Vec<(f64, f64)>,
    /// Least-squares slope of `log max ratio` against `log log(1/δ)`.
    pub slope: Option<f64>,
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Max over random class members of `nonlinear_lhs / Π (∫ f_j)^{p_j}` for
/// each `δ`. Requires `dB_j(0) = L_j` and a small derivative drift on `U`.
pub fn nonlinear_ratio_sweep(
    b: &[SubmersionSpec],
    datum: &BlDatum,
    u: &AxisBox,
    deltas: &[f64],
    opts: &SweepOptions,
) -> Result<SweepReport> {
    if b.len() != datum.m() {
        return Err(Error::Shape("one submersion per map".into()));
    }
    for (j, bj) in b.iter().enumerate() {
        let d0 = bj.derivative(&DVector::zeros(bj.n()));
        if d0.shape() != datum.map(j).matrix().shape()
            || (d0 - datum.map(j).matrix()).amax() > 1e-12
        {
            return Err(invalid(
                "submersions",
                format!("dB_{j}(0) differs from L_{j}"),
            ));
        }
        let drift = bj.derivative_drift(u);
        if drift > PERTURBATION_GUARD + 1e-12 {
            return Err(invalid(
                "box",
                format!("sup ‖dB_{j}(x) - dB_{j}(0)‖ = {drift:.4} exceeds {PERTURBATION_GUARD}; shrink U"),
            ));
        }
    }
    if deltas.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(invalid("deltas", "each delta must lie in (0, 1)"));
    }
    if opts.draws == 0 || opts.grid_res == 0 {
        return Err(invalid("draws", "draws and grid_res must be positive"));
    }
    let p = datum.exponents();
    let jobs: Vec<(usize, usize)> = (0..deltas.len())
        .flat_map(|i| (0..opts.draws).map(move |k| (i, k)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, k)| {
            let delta = deltas[i];
            let mut rng = rng::stream(opts.seed, tags::NONLINEAR_DRAW, (i * opts.draws + k) as u64);
            let mut fs = Vec::with_capacity(b.len());
            let mut class_ok = true;
            for bj in b {
                let bx = image_box(bj, u, 0.02 + delta / 4.0)?;
                let f = random_atom_function(&bx, delta, opts.smoothing, &mut rng)?;
                class_ok &= l1delta_check(&f, delta)?.member;
                fs.push(f);
            }
            let lhs = nonlinear_lhs(b, &fs, p, u, opts.grid_res)?;
            let rhs: f64 = fs.iter().zip(p).map(|(f, pj)| f.mass().powf(*pj)).product();
            Ok(SweepRow {
                delta,
                draw: k,
                ratio: lhs / rhs,
                class_ok,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_ratios: Vec<(f64, f64)> = deltas
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let m = rows[i * opts.draws..(i + 1) * opts.draws]
                .iter()
                .map(|r| r.ratio)
                .fold(f64::NEG_INFINITY, f64::max);
            (*d, m)
        })
        .collect();
    let xs: Vec<f64> = max_ratios
        .iter()
        .map(|(d, _)| (1.0 / d).ln().ln())
        .collect();
    let ys: Vec<f64> = max_ratios.iter().map(|(_, r)| r.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    Ok(SweepReport {
        rows,
        max_ratios,
        slope,
    })
}

/// Experiment config: the datum, optional symmetric quadratic forms (one list
/// of `n x n` matrices per map, one matrix per output coordinate), the box `U`
/// and the sweep parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearConfig {
    pub datum: DatumRef,
    #[serde(default)]
    pub quadratic: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    #[serde(rename = "box")]
    pub u: AxisBox,
    pub deltas: Vec<f64>,
    pub draws: usize,
    pub grid_res: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    pub seed: u64,
}

impl NonlinearConfig {
    pub fn submersions(&self, datum: &BlDatum) -> Result<Vec<SubmersionSpec>> {
        match &self.quadratic {
            None => Ok(datum
                .maps()
                .iter()
                .map(|l| SubmersionSpec::linear(l.matrix().clone()))
                .collect()),
            Some(qs) => {
                if qs.len() != datum.m() {
                    return Err(Error::Shape("one list of quadratic forms per map".into()));
                }
                datum
                    .maps()
                    .iter()
                    .zip(qs)
                    .map(|(l, q)| {
                        let mats = q
                            .iter()
                            .map(|rows| matrix_from_rows(rows))
                            .collect::<Result<Vec<_>>>()?;
                        SubmersionSpec::quadratic(l.matrix().clone(), mats)
                    })
                    .collect()
            }
        }
    }

    pub fn options(&self) -> SweepOptions {
        SweepOptions {
            draws: self.draws,
            grid_res: self.grid_res,
            smoothing: self.smoothing,
            seed: self.seed,
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |v| v.len());
    if r == 0 || rows.iter().any(|v| v.len() != c) {
        return Err(Error::Shape("ragged or empty matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, k| rows[i][k]))
}

/// `B_1(x, y) = x + a y²/2`, `B_2(x, y) = y + a x²/2`: Loomis–Whitney in the
/// plane bent by quadratic terms of strength `a`.
pub fn quadratic_loomis_whitney(a: f64) -> Vec<SubmersionSpec> {
    let q1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, a]);
    let q2 = DMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, 0.0]);
    vec![
        SubmersionSpec::quadratic(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![q1]).unwrap(),
        SubmersionSpec::quadratic(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), vec![q2]).unwrap(),
    ]
}
