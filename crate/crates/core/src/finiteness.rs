//! Scaling, dimension and codimension conditions, and the search for
//! subspaces that witness their failure.
//!
//! The conditions quantify over every subspace of `R^n`, so an exact decision
//! is out of reach in general. The search here is sound in one direction only:
//! a `witnessed-infinite` verdict comes with an explicit subspace whose slack is
//! negative, while `no-violation-found` means no candidate failed. Candidates
//! come from three sources:
//!
//! * the lattice generated by the kernels `ker L_j` under sum and intersection,
//! * all coordinate subspaces when `n <= 12`,
//! * `budget` Haar-random subspaces of every dimension `1..n-1`.
//!
//! For `n <= 2` these sources are exhaustive: on lines the slack only drops on
//! kernel lines, and every other line behaves like a generic one. A clean
//! search in that case is reported as `certified-finite-special-case`.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datum::{kernel_basis, BlDatum, NumericPolicy};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::{self, tags};

/// Cap on the number of distinct subspaces in the kernel lattice closure.
pub const LATTICE_CAP: usize = 4096;
/// Coordinate subspaces are enumerated up to this ambient dimension.
pub const COORDINATE_MAX_N: usize = 12;
const SLACK_TIE: f64 = 1e-12;

/// A linear subspace of `R^n`, stored as an orthonormal basis.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps an orthonormal basis; fails if `B^T B` is not the identity.
    pub fn from_orthonormal(basis: DMatrix<f64>) -> Result<Self> {
        if linalg::orthonormality_defect(&basis) > 1e-8 {
            return Err(invalid("basis", "columns are not orthonormal"));
        }
        Ok(Self { basis })
    }

    /// Span of arbitrary columns.
    pub fn span(vectors: &DMatrix<f64>, rel_tol: f64) -> Self {
        Self {
            basis: linalg::column_space(vectors, rel_tol, None),
        }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            basis: DMatrix::zeros(n, 0),
        }
    }

    pub fn whole(n: usize) -> Self {
        Self {
            basis: DMatrix::identity(n, n),
        }
    }

    /// Span of the standard basis vectors with the given (0-based) indices.
    pub fn coordinate(n: usize, indices: &[usize]) -> Self {
        let mut basis = DMatrix::zeros(n, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            basis[(i, c)] = 1.0;
        }
        Self { basis }
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn codim(&self) -> usize {
        self.n() - self.dim()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> DMatrix<f64> {
        linalg::projector(&self.basis)
    }

    pub fn sum(&self, other: &Self, rel_tol: f64) -> Self {
        let mut joined = DMatrix::zeros(self.n(), self.dim() + other.dim());
        joined.columns_mut(0, self.dim()).copy_from(&self.basis);
        joined
            .columns_mut(self.dim(), other.dim())
            .copy_from(&other.basis);
        Self {
            basis: linalg::column_space(&joined, rel_tol, Some(1.0)),
        }
    }

    pub fn complement(&self, rel_tol: f64) -> Self {
        Self {
            basis: linalg::complement(&self.basis, self.n(), rel_tol),
        }
    }

    /// `V ∩ W = (V^⊥ + W^⊥)^⊥`.
    pub fn intersection(&self, other: &Self, rel_tol: f64) -> Self {
        self.complement(rel_tol)
            .sum(&other.complement(rel_tol), rel_tol)
            .complement(rel_tol)
    }

    /// Same subspace, up to `tol` in projector distance.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.dim() == other.dim() && (self.projector() - other.projector()).amax() <= tol
    }

    /// Basis-independent key: projector entries rounded to `1e-9`.
    pub fn fingerprint(&self) -> Vec<i64> {
        self.projector()
            .iter()
            .map(|v| (v * 1e9).round() as i64)
            .collect()
    }

    /// Basis vectors as rows, the JSON witness layout.
    pub fn basis_vectors(&self) -> Vec<Vec<f64>> {
        self.basis
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect()
    }
}

/// A partial localisation by a positive semi-definite `G` with kernel `H_0`.
#[derive(Clone, Debug)]
pub struct PartialLocalization {
    g: DMatrix<f64>,
    h0: DMatrix<f64>,
}

impl PartialLocalization {
    pub fn new(g: DMatrix<f64>, policy: &NumericPolicy) -> Result<Self> {
        if g.nrows() != g.ncols() || g.nrows() == 0 {
            return Err(Error::Shape(format!(
                "G must be square and non-empty, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("G".into()));
        }
        if linalg::asymmetry(&g) > 1e-9 {
            return Err(invalid("G", "not symmetric"));
        }
        let g = linalg::symmetrize(&g);
        let (values, _) = linalg::sym_eigen_desc(&g);
        let top = values.first().copied().unwrap_or(0.0).abs().max(1.0);
        if values.iter().any(|&v| v < -1e-9 * top) {
            return Err(invalid("G", "not positive semi-definite"));
        }
        let scale = linalg::op_norm(&g);
        let h0 = if scale > 0.0 {
            linalg::null_space(&g, policy.rank_tol, None)
        } else {
            DMatrix::identity(g.nrows(), g.nrows())
        };
        Ok(Self { g, h0 })
    }

    /// `G = diag(values)`.
    pub fn diagonal(values: &[f64], policy: &NumericPolicy) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)),
            policy,
        )
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Orthonormal basis of `H_0 = ker G`.
    pub fn h0_basis(&self) -> &DMatrix<f64> {
        &self.h0
    }

    pub fn h0(&self) -> Subspace {
        Subspace {
            basis: self.h0.clone(),
        }
    }

    /// Orthogonal projection onto `H_0^⊥`, the normalised form of `G`.
    pub fn normalized_projection(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::identity(n, n) - linalg::projector(&self.h0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    WitnessedInfinite,
    NoViolationFound,
    CertifiedFiniteSpecialCase,
}

/// Candidate source that produced the reported extremal subspace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    KernelLattice,
    Coordinate,
    RandomSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Dimension condition together with scaling.
    Global,
    /// Codimension condition of the unit-ball localised constant.
    Localized,
}

#[derive(Clone, Debug)]
pub struct FinitenessReport {
    pub scaling_slack: f64,
    pub verdict: Verdict,
    pub min_slack: f64,
    /// Present exactly when the verdict is `witnessed-infinite`.
    pub witness: Option<Subspace>,
    pub method: SearchMethod,
}

#[derive(Serialize, Deserialize)]
pub struct FinitenessReportJson {
    pub scaling_slack: f64,
    pub verdict: Verdict,
    pub min_slack: f64,
    pub witness: Option<Vec<Vec<f64>>>,
    pub method: SearchMethod,
}

impl FinitenessReport {
    pub fn to_json_value(&self) -> FinitenessReportJson {
        FinitenessReportJson {
            scaling_slack: self.scaling_slack,
            verdict: self.verdict,
            min_slack: self.min_slack,
            witness: self.witness.as_ref().map(Subspace::basis_vectors),
            method: self.method,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("report serialises")
    }
}

/// `Σ p_j n_j - n`.
pub fn check_scaling(datum: &BlDatum) -> f64 {
    datum
        .maps()
        .iter()
        .zip(datum.exponents())
        .map(|(l, p)| p * l.target_dim() as f64)
        .sum::<f64>()
        - datum.n() as f64
}

/// `dim(L_j V)` for every map, judged against `rank_tol * ‖L_j‖`.
fn image_dims(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> Vec<usize> {
    datum
        .maps()
        .iter()
        .map(|l| {
            if v.dim() == 0 {
                0
            } else {
                linalg::rank_with_scale(&(l.matrix() * v.basis()), policy.rank_tol, l.op_norm())
            }
        })
        .collect()
}

/// `Σ p_j dim(L_j V) - dim V`.
pub fn dimension_slack(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> f64 {
    image_dims(datum, v, policy)
        .iter()
        .zip(datum.exponents())
        .map(|(&d, p)| p * d as f64)
        .sum::<f64>()
        - v.dim() as f64
}

/// `codim V - Σ p_j codim(L_j V)`.
pub fn codimension_slack(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> f64 {
    let dims = image_dims(datum, v, policy);
    v.codim() as f64
        - datum
            .maps()
            .iter()
            .zip(datum.exponents())
            .zip(dims)
            .map(|((l, p), d)| p * (l.target_dim() - d) as f64)
            .sum::<f64>()
}

fn check_dims(datum: &BlDatum, v: &Subspace) -> Result<()> {
    if v.n() != datum.n() {
        return Err(Error::Shape(format!(
            "subspace lives in R^{} but the datum in R^{}",
            v.n(),
            datum.n()
        )));
    }
    Ok(())
}

/// Checked variant of [`dimension_slack`].
pub fn try_dimension_slack(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> Result<f64> {
    check_dims(datum, v)?;
    Ok(dimension_slack(datum, v, policy))
}

/// Checked variant of [`codimension_slack`].
pub fn try_codimension_slack(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> Result<f64> {
    check_dims(datum, v)?;
    Ok(codimension_slack(datum, v, policy))
}

/// Slack used by global mode: `min(dimension slack, codimension slack)`.
///
/// The two differ by exactly the scaling slack, so requiring both to be
/// nonnegative for every `V` is the dimension condition plus scaling (at
/// `V = R^n` and `V = {0}`).
pub fn global_slack(datum: &BlDatum, v: &Subspace, policy: &NumericPolicy) -> f64 {
    dimension_slack(datum, v, policy).min(codimension_slack(datum, v, policy))
}

struct Candidate {
    subspace: Subspace,
    method: SearchMethod,
}

fn push_unique(set: &mut Vec<Subspace>, s: Subspace) -> bool {
    if set.iter().any(|t| t.approx_eq(&s, 1e-7)) {
        false
    } else {
        set.push(s);
        true
    }
}

/// Closure of `generators` under sum and intersection, at most `rounds`
/// passes and [`LATTICE_CAP`] elements.
pub fn lattice_closure(generators: Vec<Subspace>, rounds: usize, rel_tol: f64) -> Vec<Subspace> {
    let mut set: Vec<Subspace> = Vec::new();
    for g in generators {
        push_unique(&mut set, g);
    }
    let mut frontier_start = 0;
    for _ in 0..rounds.max(1) {
        let before = set.len();
        let mut fresh = Vec::new();
        for i in frontier_start..before {
            for j in 0..before {
                if j >= frontier_start && j < i {
                    continue;
                }
                for s in [
                    set[i].sum(&set[j], rel_tol),
                    set[i].intersection(&set[j], rel_tol),
                ] {
                    if !set
                        .iter()
                        .chain(&fresh)
                        .any(|t: &Subspace| t.approx_eq(&s, 1e-7))
                    {
                        fresh.push(s);
                    }
                }
            }
        }
        if fresh.is_empty() {
            break;
        }
        for s in fresh {
            if set.len() >= LATTICE_CAP {
                break;
            }
            set.push(s);
        }
        frontier_start = before;
        if set.len() >= LATTICE_CAP {
            break;
        }
    }
    set
}

/// Kernel lattice of a datum, including `{0}` and `R^n`.
pub fn kernel_lattice(datum: &BlDatum, rounds: usize, policy: &NumericPolicy) -> Vec<Subspace> {
    let n = datum.n();
    let mut gens = vec![Subspace::zero(n), Subspace::whole(n)];
    gens.extend(datum.maps().iter().map(|l| Subspace {
        basis: kernel_basis(l, policy),
    }));
    lattice_closure(gens, rounds, policy.rank_tol)
}

fn coordinate_subspaces(n: usize) -> Vec<Subspace> {
    (0u32..(1u32 << n))
        .map(|mask| {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            Subspace::coordinate(n, &idx)
        })
        .collect()
}

fn random_subspaces(container: &DMatrix<f64>, budget: usize, seed: u64, tag: u64) -> Vec<Subspace> {
    let d = container.ncols();
    let mut out = Vec::new();
    for k in 1..d {
        let mut rng = rng::stream(seed, tag, k as u64);
        for _ in 0..budget {
            let frame = linalg::random_frame(&mut rng, d, k);
            out.push(Subspace {
                basis: container * frame,
            });
        }
    }
    out
}

/// Picks the smallest slack; near-ties go to the first candidate in
/// `(method, dimension, fingerprint)` order so the result is deterministic.
fn select(candidates: Vec<Candidate>, slack: impl Fn(&Subspace) -> f64 + Sync) -> (f64, Candidate) {
    let mut scored: Vec<(f64, Candidate)> = candidates
        .into_par_iter()
        .map(|c| (slack(&c.subspace), c))
        .collect();
    let best = scored.iter().map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
    scored.retain(|(s, _)| *s <= best + SLACK_TIE);
    scored.sort_by(|(_, a), (_, b)| {
        a.method
            .cmp(&b.method)
            .then(a.subspace.dim().cmp(&b.subspace.dim()))
            .then_with(|| a.subspace.fingerprint().cmp(&b.subspace.fingerprint()))
    });
    let (s, c) = scored.swap_remove(0);
    (s.max(best), c)
}

fn verdict_for(n: usize, min_slack: f64, policy: &NumericPolicy) -> Verdict {
    if min_slack < -10.0 * policy.rank_tol {
        Verdict::WitnessedInfinite
    } else if n <= 2 {
        Verdict::CertifiedFiniteSpecialCase
    } else {
        Verdict::NoViolationFound
    }
}

fn whole_space_candidates(
    datum: &BlDatum,
    budget: usize,
    seed: u64,
    tag: u64,
    policy: &NumericPolicy,
) -> Vec<Candidate> {
    let n = datum.n();
    let mut out: Vec<Candidate> = kernel_lattice(datum, budget, policy)
        .into_iter()
        .map(|subspace| Candidate {
            subspace,
            method: SearchMethod::KernelLattice,
        })
        .collect();
    if n <= COORDINATE_MAX_N {
        out.extend(
            coordinate_subspaces(n)
                .into_iter()
                .map(|subspace| Candidate {
                    subspace,
                    method: SearchMethod::Coordinate,
                }),
        );
    }
    out.extend(
        random_subspaces(&DMatrix::identity(n, n), budget, seed, tag)
            .into_iter()
            .map(|subspace| Candidate {
                subspace,
                method: SearchMethod::RandomSearch,
            }),
    );
    out
}

/// Searches for a subspace violating the dimension condition (global mode) or
/// the codimension condition (localized mode).
pub fn search_critical_subspaces(
    datum: &BlDatum,
    mode: SearchMode,
    budget: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<FinitenessReport> {
    if budget == 0 {
        return Err(invalid("budget", "must be at least 1"));
    }
    let candidates = whole_space_candidates(datum, budget, seed, tags::SUBSPACE_SEARCH, policy);
    let (min_slack, best) = match mode {
        SearchMode::Global => select(candidates, |v| global_slack(datum, v, policy)),
        SearchMode::Localized => select(candidates, |v| codimension_slack(datum, v, policy)),
    };
    Ok(report(datum, min_slack, best, policy))
}

fn report(
    datum: &BlDatum,
    min_slack: f64,
    best: Candidate,
    policy: &NumericPolicy,
) -> FinitenessReport {
    let verdict = verdict_for(datum.n(), min_slack, policy);
    FinitenessReport {
        scaling_slack: check_scaling(datum),
        verdict,
        min_slack,
        witness: (verdict == Verdict::WitnessedInfinite).then_some(best.subspace),
        method: best.method,
    }
}

/// Checks the partially localised conditions: the dimension condition on
/// subspaces of `H_0` and the codimension condition on all subspaces.
pub fn check_partial(
    datum: &BlDatum,
    loc: &PartialLocalization,
    budget: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<FinitenessReport> {
    if loc.n() != datum.n() {
        return Err(Error::Shape(format!(
            "G acts on R^{} but the datum on R^{}",
            loc.n(),
            datum.n()
        )));
    }
    let codim_report =
        search_critical_subspaces(datum, SearchMode::Localized, budget, seed, policy)?;
    let h0 = loc.h0();
    if h0.dim() == 0 {
        return Ok(codim_report);
    }

    let n = datum.n();
    let rel = policy.rank_tol;
    let mut gens = vec![Subspace::zero(n), h0.clone()];
    gens.extend(datum.maps().iter().map(|l| {
        Subspace {
            basis: kernel_basis(l, policy),
        }
        .intersection(&h0, rel)
    }));
    let mut candidates: Vec<Candidate> = lattice_closure(gens, budget, rel)
        .into_iter()
        .map(|subspace| Candidate {
            subspace,
            method: SearchMethod::KernelLattice,
        })
        .collect();
    if n <= COORDINATE_MAX_N {
        let mut seen: Vec<Subspace> = Vec::new();
        for c in coordinate_subspaces(n) {
            push_unique(&mut seen, c.intersection(&h0, rel));
        }
        candidates.extend(seen.into_iter().map(|subspace| Candidate {
            subspace,
            method: SearchMethod::Coordinate,
        }));
    }
    candidates.extend(
        random_subspaces(loc.h0_basis(), budget, seed, tags::PARTIAL_SEARCH)
            .into_iter()
            .map(|subspace| Candidate {
                subspace,
                method: SearchMethod::RandomSearch,
            }),
    );
    let (dim_min, dim_best) = select(candidates, |v| dimension_slack(datum, v, policy));
    match dim_min.partial_cmp(&(codim_report.min_slack - SLACK_TIE)) {
        Some(Ordering::Less) => Ok(report(datum, dim_min, dim_best, policy)),
        _ => Ok(codim_report),
    }
}
