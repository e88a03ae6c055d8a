//! Lieb's Gaussian quotient and its maximisation.
//!
//! For a datum `(L, p)` and positive-definite inputs `A_j` the quotient is
//!
//! ```text
//!     Π_j (det A_j)^{p_j/2} / det(M + G)^{1/2},   M = Σ_j p_j L_j^T A_j L_j,
//! ```
//!
//! with `G = 0` (global), `G = I` (unit-ball localisation) or a fixed positive
//! semi-definite `G` (partial localisation). Everything is evaluated in log
//! space through Cholesky factors.
//!
//! The optimiser iterates the stationarity map `A_j <- (L_j (M+G)^{-1} L_j^T)^{-1}`
//! along the affine-invariant geodesic from `A_j` towards the update, with a
//! step factor that is halved whenever the objective would drop and doubled
//! after every accepted step. Factors above one extrapolate; this is what lets
//! runs whose supremum sits at the boundary reach the blow-up threshold in a
//! bounded number of iterations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::datum::{validate_datum, BlDatum, NumericPolicy, ViolationCode};
use crate::error::{invalid, Error, Result};
use crate::finiteness::{check_scaling, PartialLocalization};
use crate::linalg;
use crate::rng::{self, tags};
use rand_distr::{Distribution, StandardNormal};

/// Relative tolerance on symmetry of input blocks.
const SYMMETRY_TOL: f64 = 1e-9;
/// `M + G` counts as singular when a squared Cholesky pivot falls below this
/// fraction of its largest diagonal entry.
const SINGULAR_PIVOT: f64 = 1e-14;
/// A run is not converged while it still moves further than this (in the
/// affine-invariant metric) per step.
const STEP_TOL: f64 = 1e-6;
/// Localised runs are declared diverging only past this magnitude.
const EXTREME_MAGNITUDE: f64 = 1e150;
const MAX_STEP_FACTOR: f64 = 1.0e18;
/// A failed line search is only blamed on round-off below this gradient norm.
const STALL_GRAD: f64 = 1e-6;
const MIN_STEP_FACTOR: f64 = 1.0e-12;
/// Relative objective loss tolerated while the gradient ranks candidates.
const FLAT_OBJECTIVE: f64 = 1e-14;
/// Consecutive iterations without objective or gradient progress before a
/// run is declared undetermined.
const MAX_STALLS: usize = 50;
/// Multistart results further apart than this (relative) are undetermined.
pub const MULTISTART_AGREEMENT: f64 = 1e-4;

/// Symmetric positive-definite inputs `A_1, ..., A_m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianInput {
    blocks: Vec<DMatrix<f64>>,
}

impl GaussianInput {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        for (index, b) in blocks.iter().enumerate() {
            if b.nrows() != b.ncols() || b.nrows() == 0 {
                return Err(Error::Shape(format!(
                    "input block {index} is {}x{}, expected square non-empty",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("input block {index}")));
            }
            if linalg::asymmetry(b) > SYMMETRY_TOL || linalg::min_eigenvalue(b) <= 0.0 {
                return Err(Error::NotPositiveDefinite { index });
            }
        }
        Ok(Self {
            blocks: blocks.iter().map(linalg::symmetrize).collect(),
        })
    }

    /// `A_j = I_{n_j}` for every map.
    pub fn identity(datum: &BlDatum) -> Self {
        Self {
            blocks: datum
                .target_dims()
                .into_iter()
                .map(|k| DMatrix::identity(k, k))
                .collect(),
        }
    }

    /// `A_j = a_j I_{n_j}`.
    pub fn scalar(datum: &BlDatum, values: &[f64]) -> Result<Self> {
        if values.len() != datum.m() {
            return Err(Error::Shape(format!(
                "{} scalars for {} maps",
                values.len(),
                datum.m()
            )));
        }
        Self::new(
            datum
                .target_dims()
                .into_iter()
                .zip(values)
                .map(|(k, &a)| DMatrix::identity(k, k) * a)
                .collect(),
        )
    }

    /// Random inputs `Q diag(e^{z}) Q^T` with Haar `Q` and standard normal `z`.
    pub fn random(datum: &BlDatum, rng: &mut rng::Rng) -> Self {
        let blocks = datum
            .target_dims()
            .into_iter()
            .map(|k| {
                let q = linalg::random_frame(rng, k, k);
                let z = DVector::from_fn(k, |_, _| {
                    let g: f64 = StandardNormal.sample(rng);
                    g.exp()
                });
                linalg::symmetrize(&(&q * DMatrix::from_diagonal(&z) * q.transpose()))
            })
            .collect();
        Self { blocks }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.blocks
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b * t).collect(),
        }
    }

    /// `max_j max(‖A_j‖, ‖A_j^{-1}‖)`.
    pub fn blow_up_measure(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let (vals, _) = linalg::sym_eigen_desc(b);
                let hi = vals.first().copied().unwrap_or(1.0);
                let lo = vals.last().copied().unwrap_or(1.0);
                if lo > 0.0 {
                    hi.max(1.0 / lo)
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    fn check_against(&self, datum: &BlDatum) -> Result<()> {
        if self.blocks.len() != datum.m() {
            return Err(Error::Shape(format!(
                "{} input blocks for {} maps",
                self.blocks.len(),
                datum.m()
            )));
        }
        for (j, (b, k)) in self.blocks.iter().zip(datum.target_dims()).enumerate() {
            if b.nrows() != k {
                return Err(Error::Shape(format!(
                    "input block {j} is {}x{}, map has target dimension {k}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(())
    }

    fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        self.blocks
            .iter()
            .map(|b| b.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect()
    }
}

impl Serialize for GaussianInput {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

/// Which `G` enters the denominator.
#[derive(Clone, Debug)]
pub enum LocalizationMode {
    Global,
    UnitBall,
    Partial(PartialLocalization),
}

impl LocalizationMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Global => "global",
            Self::UnitBall => "unit-ball",
            Self::Partial(_) => "partial",
        }
    }

    fn g(&self, n: usize) -> Result<Option<DMatrix<f64>>> {
        match self {
            Self::Global => Ok(None),
            Self::UnitBall => Ok(Some(DMatrix::identity(n, n))),
            Self::Partial(loc) => {
                if loc.n() != n {
                    return Err(Error::Shape(format!(
                        "G acts on R^{} but the datum on R^{n}",
                        loc.n()
                    )));
                }
                Ok(Some(loc.g().clone()))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct QuotientBreakdown {
    pub m: DMatrix<f64>,
    pub log_numerator: f64,
    /// `-inf` marker when `M + G` is numerically singular.
    pub log_denominator: f64,
    /// `+inf` marker when `M + G` is numerically singular.
    pub log_quotient: f64,
    pub note: Option<String>,
}

impl QuotientBreakdown {
    pub fn quotient(&self) -> f64 {
        self.log_quotient.exp()
    }

    pub fn is_singular(&self) -> bool {
        self.log_quotient == f64::INFINITY
    }
}

fn assemble_m(datum: &BlDatum, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = datum.n();
    let mut m = DMatrix::zeros(n, n);
    for ((l, a), p) in datum.maps().iter().zip(blocks).zip(datum.exponents()) {
        let lm = l.matrix();
        m += (lm.transpose() * a * lm) * *p;
    }
    linalg::symmetrize(&m)
}

/// `log det` with the singularity guard, or `None`.
fn guarded_log_det(s: &DMatrix<f64>) -> Option<f64> {
    let diag_max = (0..s.nrows()).map(|i| s[(i, i)]).fold(0.0, f64::max);
    let chol = nalgebra::Cholesky::new(s.clone())?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..s.nrows() {
        let d = l[(i, i)];
        if !(d * d > SINGULAR_PIVOT * diag_max) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

fn evaluate(
    datum: &BlDatum,
    blocks: &[DMatrix<f64>],
    g: Option<&DMatrix<f64>>,
) -> Result<QuotientBreakdown> {
    let mut log_numerator = 0.0;
    for (index, (a, p)) in blocks.iter().zip(datum.exponents()).enumerate() {
        let ld = linalg::spd_log_det(a).ok_or(Error::NotPositiveDefinite { index })?;
        log_numerator += 0.5 * p * ld;
    }
    let m = assemble_m(datum, blocks);
    let s = match g {
        Some(g) => &m + g,
        None => m.clone(),
    };
    Ok(match guarded_log_det(&s) {
        Some(ld) => QuotientBreakdown {
            m,
            log_numerator,
            log_denominator: 0.5 * ld,
            log_quotient: log_numerator - 0.5 * ld,
            note: None,
        },
        None => QuotientBreakdown {
            m,
            log_numerator,
            log_denominator: f64::NEG_INFINITY,
            log_quotient: f64::INFINITY,
            note: Some("M + G is numerically singular; the quotient is unbounded".into()),
        },
    })
}

fn preflight(
    datum: &BlDatum,
    a: &GaussianInput,
    mode: &LocalizationMode,
) -> Result<Option<DMatrix<f64>>> {
    datum.require_positive_exponents()?;
    a.check_against(datum)?;
    mode.g(datum.n())
}

/// Evaluates the quotient and its pieces.
pub fn lieb_quotient(
    datum: &BlDatum,
    a: &GaussianInput,
    mode: &LocalizationMode,
) -> Result<QuotientBreakdown> {
    let g = preflight(datum, a, mode)?;
    evaluate(datum, a.blocks(), g.as_ref())
}

/// `(L_j (M+G)^{-1} L_j^T)` for every `j`, or the singular `M + G`.
fn projected_inverses(
    datum: &BlDatum,
    blocks: &[DMatrix<f64>],
    g: Option<&DMatrix<f64>>,
) -> Option<Vec<DMatrix<f64>>> {
    let m = assemble_m(datum, blocks);
    let s = match g {
        Some(g) => &m + g,
        None => m,
    };
    guarded_log_det(&s)?;
    let inv = linalg::spd_inverse(&s)?;
    Some(
        datum
            .maps()
            .iter()
            .map(|l| linalg::symmetrize(&(l.matrix() * &inv * l.matrix().transpose())))
            .collect(),
    )
}

/// Euclidean gradient `(p_j/2)(A_j^{-1} - L_j (M+G)^{-1} L_j^T)` of the log quotient.
pub fn gradient_log_quotient(
    datum: &BlDatum,
    a: &GaussianInput,
    mode: &LocalizationMode,
) -> Result<Vec<DMatrix<f64>>> {
    let g = preflight(datum, a, mode)?;
    let proj = projected_inverses(datum, a.blocks(), g.as_ref())
        .ok_or_else(|| invalid("A", "M + G is numerically singular"))?;
    a.blocks()
        .iter()
        .zip(proj)
        .zip(datum.exponents())
        .enumerate()
        .map(|(index, ((aj, pj), p))| {
            let inv = linalg::spd_inverse(aj).ok_or(Error::NotPositiveDefinite { index })?;
            Ok((inv - pj) * (0.5 * p))
        })
        .collect()
}

fn updates(
    datum: &BlDatum,
    blocks: &[DMatrix<f64>],
    g: Option<&DMatrix<f64>>,
) -> Result<Vec<DMatrix<f64>>> {
    let proj = projected_inverses(datum, blocks, g).ok_or(Error::BlowUp { index: 0 })?;
    proj.iter()
        .enumerate()
        .map(|(index, pj)| linalg::spd_inverse(pj).ok_or(Error::BlowUp { index }))
        .collect()
}

/// One undamped update `A_j <- (L_j (M+G)^{-1} L_j^T)^{-1}`.
pub fn fixed_point_step(
    datum: &BlDatum,
    a: &GaussianInput,
    mode: &LocalizationMode,
) -> Result<GaussianInput> {
    damped_fixed_point_step(datum, a, mode, 1.0)
}

/// `A_j <- (1-λ) A_j + λ (L_j (M+G)^{-1} L_j^T)^{-1}` with `λ ∈ (0, 1]`.
pub fn damped_fixed_point_step(
    datum: &BlDatum,
    a: &GaussianInput,
    mode: &LocalizationMode,
    lambda: f64,
) -> Result<GaussianInput> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(invalid("lambda", "damping must lie in (0, 1]"));
    }
    let g = preflight(datum, a, mode)?;
    let u = updates(datum, a.blocks(), g.as_ref())?;
    let blocks: Vec<DMatrix<f64>> = a
        .blocks()
        .iter()
        .zip(u)
        .map(|(aj, uj)| linalg::symmetrize(&(aj * (1.0 - lambda) + uj * lambda)))
        .collect();
    for (index, b) in blocks.iter().enumerate() {
        if !(linalg::min_eigenvalue(b) > 0.0) {
            return Err(Error::BlowUp { index });
        }
    }
    Ok(GaussianInput { blocks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BoundaryPlateau,
    Diverging,
}

/// One accepted iteration.
#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub log_quotient: f64,
    pub grad_norm: f64,
    /// Geodesic step factor that was accepted (1 = plain update).
    pub step: f64,
    /// Halvings needed before the objective stopped decreasing.
    pub backtracks: u32,
    /// Whether the plain update alone would have been monotone.
    pub undamped_monotone: bool,
    pub blow_up_measure: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizerResult {
    pub status: Status,
    /// Quotient (not its log); `+inf` for diverging runs.
    pub value: f64,
    pub iterations: usize,
    pub final_input: GaussianInput,
    pub grad_norm: f64,
    pub mode: &'static str,
    pub trace: Vec<TraceEntry>,
}

fn serialize_value<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("+inf")
    }
}

#[derive(Serialize)]
struct OptimizerResultJson<'a> {
    status: Status,
    #[serde(serialize_with = "serialize_value")]
    value: f64,
    iterations: usize,
    grad_norm: f64,
    mode: &'static str,
    final_input: &'a GaussianInput,
    trace: &'a [TraceEntry],
}

impl OptimizerResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&OptimizerResultJson {
            status: self.status,
            value: self.value,
            iterations: self.iterations,
            grad_norm: self.grad_norm,
            mode: self.mode,
            final_input: &self.final_input,
            trace: &self.trace,
        })
        .expect("result serialises")
    }
}

/// Everything about the current iterate the optimiser needs.
struct Probe {
    obj: f64,
    grad_norm: f64,
    /// Per block: `S` and eigenvalues `w` with `A(t) = S diag(w^t) S^T`.
    geodesic: Vec<(DMatrix<f64>, Vec<f64>)>,
    /// Length of the plain update in the affine-invariant metric.
    update_len: f64,
}

fn probe(datum: &BlDatum, blocks: &[DMatrix<f64>], g: Option<&DMatrix<f64>>) -> Option<Probe> {
    let obj = evaluate(datum, blocks, g).ok()?.log_quotient;
    if !obj.is_finite() {
        return None;
    }
    let u = updates(datum, blocks, g).ok()?;
    let mut grad_sq = 0.0;
    let mut len_sq = 0.0;
    let mut geodesic = Vec::with_capacity(blocks.len());
    for ((a, uj), p) in blocks.iter().zip(&u).zip(datum.exponents()) {
        let half = linalg::spd_power(a, 0.5);
        let inv_half = linalg::spd_power(a, -0.5);
        let w = linalg::symmetrize(&(&inv_half * uj * &inv_half));
        let (vals, vecs) = linalg::sym_eigen_desc(&w);
        if vals.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return None;
        }
        // Riemannian gradient of block j is (p_j/2)(I - W^{-1}).
        for &v in &vals {
            grad_sq += (0.5 * p * (1.0 - 1.0 / v)).powi(2);
            len_sq += v.ln().powi(2);
        }
        geodesic.push((half * vecs, vals));
    }
    Some(Probe {
        obj,
        grad_norm: grad_sq.sqrt(),
        geodesic,
        update_len: len_sq.sqrt(),
    })
}

fn along_geodesic(geodesic: &[(DMatrix<f64>, Vec<f64>)], t: f64) -> Vec<DMatrix<f64>> {
    geodesic
        .iter()
        .map(|(s, w)| {
            let d = DVector::from_iterator(w.len(), w.iter().map(|v| v.powf(t)));
            linalg::symmetrize(&(s * DMatrix::from_diagonal(&d) * s.transpose()))
        })
        .collect()
}

/// Rescales all blocks by a common factor that balances the extreme
/// eigenvalues. The global quotient is invariant under this under scaling.
fn normalize(blocks: &mut [DMatrix<f64>]) {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    for b in blocks.iter() {
        let (vals, _) = linalg::sym_eigen_desc(b);
        hi = hi.max(vals[0].ln());
        lo = lo.min(vals[vals.len() - 1].ln());
    }
    let t = (-(hi + lo) / 2.0).exp();
    if t.is_finite() && t > 0.0 {
        for b in blocks.iter_mut() {
            *b *= t;
        }
    }
}

/// Blow-up measure of an iterate. In global mode only the spread between
/// the extreme eigenvalues is meaningful, so the product
/// `max_j ‖A_j‖ · max_j ‖A_j^{-1}‖` is used.
fn blow_up_measure(blocks: &[DMatrix<f64>], global: bool) -> f64 {
    if !global {
        return GaussianInput {
            blocks: blocks.to_vec(),
        }
        .blow_up_measure();
    }
    let mut hi = 0.0f64;
    let mut lo = f64::INFINITY;
    for b in blocks {
        let (vals, _) = linalg::sym_eigen_desc(b);
        hi = hi.max(vals[0]);
        lo = lo.min(vals[vals.len() - 1]);
    }
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn check_datum_for(datum: &BlDatum, mode: &LocalizationMode, policy: &NumericPolicy) -> Result<()> {
    datum.require_positive_exponents()?;
    let report = validate_datum(datum, policy);
    for v in &report.violations {
        let tolerated = v.code == ViolationCode::CommonKernelNontrivial
            && !matches!(mode, LocalizationMode::Global);
        if !tolerated {
            return Err(Error::InvalidDatum(v.detail.clone()));
        }
    }
    if matches!(mode, LocalizationMode::Global) {
        let slack = check_scaling(datum);
        if slack.abs() > 1e-9 {
            return Err(Error::ScalingViolated { slack });
        }
    }
    Ok(())
}

/// Maximises the quotient from `a0` (identities by default).
pub fn compute_bl(
    datum: &BlDatum,
    mode: &LocalizationMode,
    policy: &NumericPolicy,
    a0: Option<&GaussianInput>,
) -> Result<OptimizerResult> {
    policy.validate()?;
    check_datum_for(datum, mode, policy)?;
    let g = mode.g(datum.n())?;
    let g = g.as_ref();
    let global = matches!(mode, LocalizationMode::Global);
    let mut blocks = match a0 {
        Some(a) => {
            a.check_against(datum)?;
            a.blocks().to_vec()
        }
        None => GaussianInput::identity(datum).into_blocks(),
    };
    if global {
        normalize(&mut blocks);
    }

    let mut trace = Vec::new();
    let mut step = 1.0f64;
    let mut last_change = 0.0f64;
    let mut last_len = 0.0f64;
    let mut stalls = 0usize;
    let mut current = probe(datum, &blocks, g);

    let finish = |status: Status,
                  value: f64,
                  iterations: usize,
                  blocks: Vec<DMatrix<f64>>,
                  grad_norm: f64,
                  trace: Vec<TraceEntry>| OptimizerResult {
        status,
        value,
        iterations,
        final_input: GaussianInput { blocks },
        grad_norm,
        mode: mode.name(),
        trace,
    };

    for iteration in 0..policy.max_iter {
        let measure = blow_up_measure(&blocks, global);
        let Some(pr) = current.take() else {
            // Numerical breakdown: the iterate itself has left the
            // representable range.
            let status = if global && last_change <= policy.conv_tol {
                Status::BoundaryPlateau
            } else {
                Status::Diverging
            };
            let value = match status {
                Status::BoundaryPlateau => trace
                    .last()
                    .map(|t: &TraceEntry| t.log_quotient.exp())
                    .unwrap_or(f64::INFINITY),
                _ => f64::INFINITY,
            };
            let gn = trace.last().map(|t| t.grad_norm).unwrap_or(f64::NAN);
            return Ok(finish(status, value, iteration, blocks, gn, trace));
        };

        let plateaued = last_change < policy.conv_tol;
        if measure > policy.diverge_norm {
            if global {
                let status = if plateaued {
                    Status::BoundaryPlateau
                } else {
                    Status::Diverging
                };
                let value = if plateaued {
                    pr.obj.exp()
                } else {
                    f64::INFINITY
                };
                return Ok(finish(
                    status,
                    value,
                    iteration,
                    blocks,
                    pr.grad_norm,
                    trace,
                ));
            }
            if plateaued && iteration > 0 {
                return Ok(finish(
                    Status::BoundaryPlateau,
                    pr.obj.exp(),
                    iteration,
                    blocks,
                    pr.grad_norm,
                    trace,
                ));
            }
            if measure > EXTREME_MAGNITUDE || !measure.is_finite() {
                return Ok(finish(
                    Status::Diverging,
                    f64::INFINITY,
                    iteration,
                    blocks,
                    pr.grad_norm,
                    trace,
                ));
            }
        } else if pr.grad_norm < 10.0 * policy.conv_tol && plateaued && last_len < STEP_TOL {
            return Ok(finish(
                Status::Converged,
                pr.obj.exp(),
                iteration,
                blocks,
                pr.grad_norm,
                trace,
            ));
        }

        // Line search along the geodesic towards the plain update.
        let floor = pr.obj - 1e-15 * pr.obj.abs().max(1.0);
        let score = |t: f64| -> Option<(f64, Vec<DMatrix<f64>>)> {
            let cand = along_geodesic(&pr.geodesic, t);
            let q = evaluate(datum, &cand, g).ok()?.log_quotient;
            q.is_finite().then_some((q, cand))
        };
        let undamped_monotone = score(1.0).map(|(q, _)| q >= floor).unwrap_or(false);
        let mut backtracks = 0u32;
        let mut accepted = None;
        while step >= MIN_STEP_FACTOR {
            match score(step) {
                Some((q, cand)) if q >= floor => {
                    accepted = Some((q, cand));
                    break;
                }
                _ => {
                    step *= 0.5;
                    backtracks += 1;
                }
            }
        }
        let measurable = |q: f64| q > floor + 2e-15 * pr.obj.abs().max(1.0);
        let mut progressed = accepted.as_ref().is_some_and(|(q, _)| measurable(*q));
        if pr.grad_norm < STALL_GRAD && !progressed {
            // Objective differences have drowned in round-off; rank
            // candidates by gradient norm instead.
            let flat = pr.obj - FLAT_OBJECTIVE * pr.obj.abs().max(1.0);
            let mut t = 1.0;
            while t >= MIN_STEP_FACTOR {
                let cand = along_geodesic(&pr.geodesic, t);
                if let Some(next) = probe(datum, &cand, g) {
                    if next.grad_norm < pr.grad_norm && next.obj >= flat {
                        step = t;
                        accepted = Some((next.obj, cand));
                        progressed = true;
                        break;
                    }
                }
                t *= 0.5;
            }
        }
        stalls = if progressed { 0 } else { stalls + 1 };
        if stalls >= MAX_STALLS {
            return Err(Error::Undetermined {
                iterations: iteration,
                reason: format!(
                    "no progress at working precision; gradient norm {:.3e} stays above the convergence threshold",
                    pr.grad_norm
                ),
                trace,
            });
        }
        let (q, mut cand) = match accepted {
            Some(x) => x,
            None if pr.grad_norm < STALL_GRAD => {
                // Nothing improves at working precision: take the plain update.
                step = 1.0;
                (pr.obj, along_geodesic(&pr.geodesic, 1.0))
            }
            None => {
                return Err(Error::Undetermined {
                    iterations: iteration,
                    reason: format!(
                        "line search stalled with gradient norm {:.3e}",
                        pr.grad_norm
                    ),
                    trace,
                })
            }
        };
        if global {
            normalize(&mut cand);
        }
        let improved = measurable(q);
        last_change = (q - pr.obj).abs() / pr.obj.abs().max(1.0);
        last_len = if improved {
            step * pr.update_len
        } else {
            pr.update_len
        };
        trace.push(TraceEntry {
            iteration,
            log_quotient: pr.obj,
            grad_norm: pr.grad_norm,
            step,
            backtracks,
            undamped_monotone,
            blow_up_measure: measure,
        });
        blocks = cand;
        current = probe(datum, &blocks, g);
        if !improved {
            step = 1.0;
        } else if backtracks == 0 {
            step = (step * 2.0).min(MAX_STEP_FACTOR);
        }
    }
    Err(Error::Undetermined {
        iterations: policy.max_iter,
        reason: "iteration cap reached before the run converged, plateaued or diverged".into(),
        trace,
    })
}

/// Runs `starts` optimisations (start 0 from identities, the rest from random
/// inputs) and returns the best. Starts that disagree by more than
/// [`MULTISTART_AGREEMENT`] make the answer undetermined.
pub fn multistart(
    datum: &BlDatum,
    mode: &LocalizationMode,
    policy: &NumericPolicy,
    starts: usize,
    seed: u64,
) -> Result<OptimizerResult> {
    if starts == 0 {
        return Err(invalid("starts", "must be at least 1"));
    }
    let results: Vec<Result<OptimizerResult>> = (0..starts)
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                compute_bl(datum, mode, policy, None)
            } else {
                let mut rng = rng::stream(seed, tags::MULTISTART, i as u64);
                let a0 = GaussianInput::random(datum, &mut rng);
                compute_bl(datum, mode, policy, Some(&a0))
            }
        })
        .collect();
    let mut ok = Vec::new();
    for r in results {
        ok.push(r?);
    }
    let mut best = 0;
    for (i, r) in ok.iter().enumerate() {
        if r.value > ok[best].value {
            best = i;
        }
    }
    let top = ok[best].value;
    for (i, r) in ok.iter().enumerate() {
        let agree = if top.is_infinite() || r.value.is_infinite() {
            top == r.value
        } else {
            (top - r.value).abs() <= MULTISTART_AGREEMENT * top.abs().max(1.0)
        };
        if !agree {
            return Err(Error::Undetermined {
                iterations: ok.iter().map(|r| r.iterations).sum(),
                reason: format!(
                    "start {i} reached {} but start {best} reached {top}",
                    r.value
                ),
                trace: ok.swap_remove(best).trace,
            });
        }
    }
    Ok(ok.swap_remove(best))
}

/// Exact constant `1/|det[u; v]|` for two rank-one maps on `R^2` with `p = (1, 1)`.
pub fn rank_one_2d_oracle(datum: &BlDatum, policy: &NumericPolicy) -> Result<f64> {
    if datum.n() != 2
        || datum.m() != 2
        || datum.target_dims() != [1, 1]
        || datum.exponents() != [1.0, 1.0]
    {
        return Err(invalid(
            "datum",
            "oracle needs two rank-one maps on R^2 with p = (1, 1)",
        ));
    }
    let u = datum.map(0).matrix();
    let v = datum.map(1).matrix();
    let det = (u[(0, 0)] * v[(0, 1)] - u[(0, 1)] * v[(0, 0)]).abs();
    let scale = (u.norm() * v.norm()).max(f64::MIN_POSITIVE);
    if det < policy.rank_tol * scale {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / det)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::catalog::*;

    fn policy() -> NumericPolicy {
        NumericPolicy::default()
    }

    #[test]
    fn quotient_examples() {
        let lw = loomis_whitney_2();
        let q = lieb_quotient(
            &lw,
            &GaussianInput::identity(&lw),
            &LocalizationMode::Global,
        )
        .unwrap();
        assert!((q.quotient() - 1.0).abs() < 1e-14);
        assert!((q.m.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);

        let y = young_2();
        let q = lieb_quotient(&y, &GaussianInput::identity(&y), &LocalizationMode::Global).unwrap();
        assert!((q.quotient() - 3f64.sqrt() / 2.0).abs() < 1e-14);
        assert!((q.log_denominator - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-14);

        let d = single([1.0, 0.0], 1.0);
        let a = GaussianInput::scalar(&d, &[3.0]).unwrap();
        let q = lieb_quotient(&d, &a, &LocalizationMode::UnitBall).unwrap();
        assert!((q.quotient() - 0.75f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn singular_denominator_is_marked() {
        let d = single([1.0, 0.0], 1.0);
        let q = lieb_quotient(&d, &GaussianInput::identity(&d), &LocalizationMode::Global).unwrap();
        assert!(q.is_singular());
        assert!(q.note.is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = young_2();
        let bad = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(matches!(
            GaussianInput::new(vec![DMatrix::identity(1, 1), bad]),
            Err(Error::NotPositiveDefinite { index: 1 })
        ));
        let short = GaussianInput::new(vec![DMatrix::identity(1, 1)]).unwrap();
        assert!(lieb_quotient(&y, &short, &LocalizationMode::Global).is_err());
        let zero_p = holder(1, &[1.0, 0.0]);
        let a = GaussianInput::identity(&zero_p);
        assert!(lieb_quotient(&zero_p, &a, &LocalizationMode::Global).is_err());
    }

    #[test]
    fn gradient_examples() {
        let y = young_2();
        for gj in gradient_log_quotient(&y, &GaussianInput::identity(&y), &LocalizationMode::Global)
            .unwrap()
        {
            assert!(gj.amax() < 1e-14);
        }
        let lw = loomis_whitney_2();
        let a = GaussianInput::scalar(&lw, &[0.3, 7.0]).unwrap();
        for gj in gradient_log_quotient(&lw, &a, &LocalizationMode::Global).unwrap() {
            assert!(gj.amax() < 1e-14);
        }
    }

    #[test]
    fn fixed_point_examples() {
        let lw = loomis_whitney_2();
        let a = GaussianInput::scalar(&lw, &[0.3, 7.0]).unwrap();
        let b = fixed_point_step(&lw, &a, &LocalizationMode::Global).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks()) {
            assert!((x - y).amax() < 1e-13);
        }
        let y = young_2();
        let id = GaussianInput::identity(&y);
        let b = fixed_point_step(&y, &id, &LocalizationMode::Global).unwrap();
        for x in b.blocks() {
            assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
        }
        assert!(damped_fixed_point_step(&y, &id, &LocalizationMode::Global, 0.0).is_err());
        assert!(damped_fixed_point_step(&y, &id, &LocalizationMode::Global, 1.5).is_err());
    }

    #[test]
    fn fixed_point_blows_up_on_infinite_datum() {
        let d = infinite_example();
        let mut a = GaussianInput::identity(&d);
        let mut prev = a.blow_up_measure();
        let mut exceeded = false;
        for _ in 0..200 {
            a = match fixed_point_step(&d, &a, &LocalizationMode::Global) {
                Ok(next) => next,
                Err(Error::BlowUp { .. }) => {
                    exceeded = true;
                    break;
                }
                Err(e) => panic!("{e}"),
            };
            let m = a.blow_up_measure();
            assert!(m >= prev * (1.0 - 1e-12));
            prev = m;
            if m > 1e12 {
                exceeded = true;
                break;
            }
        }
        assert!(exceeded, "measure only reached {prev}");
    }

    #[test]
    fn compute_examples() {
        let p = policy();
        let r = compute_bl(&loomis_whitney_3(), &LocalizationMode::Global, &p, None).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!((r.value - 1.0).abs() < 1e-6);

        let r = compute_bl(&young_2(), &LocalizationMode::Global, &p, None).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!((r.value - 0.8660254).abs() < 1e-6);

        let r = compute_bl(
            &single([1.0, 0.0], 1.0),
            &LocalizationMode::UnitBall,
            &p,
            None,
        )
        .unwrap();
        assert_eq!(r.status, Status::BoundaryPlateau);
        assert!((r.value - 1.0).abs() < 1e-4);

        let r = compute_bl(&infinite_example(), &LocalizationMode::Global, &p, None).unwrap();
        assert_eq!(r.status, Status::Diverging);
        assert!(r.value.is_infinite());
    }

    #[test]
    fn compute_from_random_start_converges() {
        let y = young_2();
        let mut rng = rng::stream(3, 0, 0);
        let a0 = GaussianInput::random(&y, &mut rng);
        let r = compute_bl(&y, &LocalizationMode::Global, &policy(), Some(&a0)).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert!((r.value - 0.75f64.sqrt()).abs() < 1e-6);
        assert!(r.grad_norm < 10.0 * policy().conv_tol);
    }

    #[test]
    fn global_mode_requires_scaling() {
        let d = holder(2, &[0.3, 0.3]);
        assert!(matches!(
            compute_bl(&d, &LocalizationMode::Global, &policy(), None),
            Err(Error::ScalingViolated { .. })
        ));
    }

    #[test]
    fn iteration_cap_is_undetermined() {
        let mut p = policy();
        p.max_iter = 2;
        let mut rng = rng::stream(4, 0, 0);
        let a0 = GaussianInput::random(&young_2(), &mut rng);
        match compute_bl(&young_2(), &LocalizationMode::Global, &p, Some(&a0)) {
            Err(Error::Undetermined { trace, .. }) => assert_eq!(trace.len(), 2),
            other => panic!("expected undetermined, got {other:?}"),
        }
    }

    #[test]
    fn oracle_examples() {
        let p = policy();
        assert_eq!(rank_one_2d_oracle(&loomis_whitney_2(), &p).unwrap(), 1.0);
        let v = rank_one_2d_oracle(&rotated_pair(std::f64::consts::FRAC_PI_6), &p).unwrap();
        assert!((v - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        let same = rank_one_pair([1.0, 0.0], [1.0, 0.0]);
        assert!(rank_one_2d_oracle(&same, &p).unwrap().is_infinite());
        assert!(rank_one_2d_oracle(&young_2(), &p).is_err());
    }

    #[test]
    fn multistart_agrees_on_young() {
        let r = multistart(&young_2(), &LocalizationMode::Global, &policy(), 4, 11).unwrap();
        assert!((r.value - 0.75f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn result_json_marks_infinity() {
        let r = compute_bl(
            &infinite_example(),
            &LocalizationMode::Global,
            &policy(),
            None,
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["value"], "+inf");
        assert_eq!(v["status"], "diverging");
        assert_eq!(v["final_input"].as_array().unwrap().len(), 2);
    }
}
