//! Wedge products of frame images, greedy index selection, admissible index
//! tuples, the `h` functions and Monte-Carlo estimates of their infima.
//!
//! Indices are 0-based throughout: frame vector `i` is column `i`, and an
//! index set `{0}` corresponds to the first frame vector.

use nalgebra::DMatrix;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::datum::{BlDatum, LinearMap, NumericPolicy};
use crate::error::{invalid, Error, Result};
use crate::finiteness::kernel_lattice;
use crate::linalg;
use crate::rng::{self, tags};

/// Largest ambient dimension accepted by the tuple enumeration.
pub const ENUMERATION_MAX_N: usize = 14;
/// Cap on the number of raw tuples visited by the enumeration.
pub const ENUMERATION_MAX_TUPLES: u128 = 20_000_000;
/// Tolerance on the real sums in the tuple constraints.
pub const CONSTRAINT_TOL: f64 = 1e-12;
/// Rejection attempts per near-basis sample.
pub const MAX_REJECTIONS: usize = 100;

/// `sqrt(det(V^T V))` for the columns of `vectors`; `|det V|` when square.
pub fn wedge_magnitude(vectors: &DMatrix<f64>) -> f64 {
    let (d, k) = vectors.shape();
    if k == 0 {
        return 1.0;
    }
    if k > d {
        return 0.0;
    }
    if k == d {
        return vectors.determinant().abs();
    }
    let gram = vectors.transpose() * vectors;
    gram.determinant().max(0.0).sqrt()
}

/// Orthonormal frame (`n x k`, columns ordered).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Frame {
    vectors: DMatrix<f64>,
}

impl Frame {
    pub fn new(vectors: DMatrix<f64>) -> Result<Self> {
        if linalg::orthonormality_defect(&vectors) > 1e-8 {
            return Err(invalid("frame", "columns are not orthonormal"));
        }
        Ok(Self { vectors })
    }

    pub fn standard(n: usize) -> Self {
        Self {
            vectors: DMatrix::identity(n, n),
        }
    }

    /// Standard frame of `R^2` rotated by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            vectors: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
        }
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }
}

/// Ordered basis `v_1..v_n` with `‖v_i‖ <= 1`, `|det| >= alpha` and the
/// columns after `ell` inside `H_0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NearBasis {
    pub vectors: DMatrix<f64>,
    pub alpha: f64,
    pub ell: usize,
}

impl NearBasis {
    /// Checks the membership conditions; `h0` is an orthonormal basis of `H_0`.
    pub fn check(&self, h0: &DMatrix<f64>, tol: f64) -> Result<()> {
        let n = self.vectors.nrows();
        if self.vectors.ncols() != n {
            return Err(Error::Shape("near basis must be square".into()));
        }
        for (i, c) in self.vectors.column_iter().enumerate() {
            if c.norm() > 1.0 + tol {
                return Err(invalid(
                    "near basis",
                    format!("vector {i} is longer than 1"),
                ));
            }
        }
        if wedge_magnitude(&self.vectors) < self.alpha - tol {
            return Err(invalid("near basis", "determinant below alpha"));
        }
        let out_of_h0 = DMatrix::identity(n, n) - linalg::projector(h0);
        for i in self.ell..n {
            if (&out_of_h0 * self.vectors.column(i)).norm() > tol {
                return Err(invalid("near basis", format!("vector {i} is not in H0")));
            }
        }
        Ok(())
    }
}

/// Images `L e_i`, `i in indices`, as columns.
fn images(map: &LinearMap, basis: &DMatrix<f64>, indices: &[usize]) -> DMatrix<f64> {
    let mut cols = DMatrix::zeros(map.target_dim(), indices.len());
    for (c, &i) in indices.iter().enumerate() {
        cols.set_column(c, &(map.matrix() * basis.column(i)));
    }
    cols
}

/// Backwards greedy selection; may return fewer than `n_j` indices when the
/// frame does not span enough.
pub(crate) fn greedy_indices(
    map: &LinearMap,
    basis: &DMatrix<f64>,
    policy: &NumericPolicy,
) -> Vec<usize> {
    let k = basis.ncols();
    let scale = map.op_norm() * basis.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut later: Vec<usize> = Vec::new();
    let mut chosen = Vec::new();
    let mut rank = 0;
    for i in (0..k).rev() {
        later.push(i);
        let r = linalg::rank_with_scale(&images(map, basis, &later), policy.rank_tol, scale);
        if r > rank {
            chosen.push(i);
            rank = r;
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Scans the frame from the last vector to the first and keeps index `i`
/// whenever `L e_i` leaves the span of the images of all later vectors.
pub fn greedy_index_set(
    map: &LinearMap,
    frame: &DMatrix<f64>,
    policy: &NumericPolicy,
) -> Result<Vec<usize>> {
    if frame.nrows() != map.n() {
        return Err(Error::Shape(format!(
            "frame lives in R^{} but the map acts on R^{}",
            frame.nrows(),
            map.n()
        )));
    }
    let chosen = greedy_indices(map, frame, policy);
    if chosen.is_empty() {
        return Err(invalid("map", "numerically zero on the whole frame"));
    }
    Ok(chosen)
}

/// One index set per map.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct IndexTuple {
    pub sets: Vec<Vec<usize>>,
}

impl IndexTuple {
    /// `a_i = Σ_j p_j |I_j ∩ {i}|`.
    pub fn a(&self, exponents: &[f64], n: usize) -> Vec<f64> {
        let mut a = vec![0.0; n];
        for (set, p) in self.sets.iter().zip(exponents) {
            for &i in set {
                a[i] += p;
            }
        }
        a
    }

    /// `a_{>=ell} = Σ_{i >= ell} a_i` (0-based `ell`).
    pub fn a_from(&self, exponents: &[f64], n: usize, ell: usize) -> f64 {
        self.a(exponents, n)[ell.min(n)..].iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

/// `Σ_j p_j |I_j ∩ {0..k-1}| <= k` for `0 <= k <= n`.
pub fn satisfies_prefix(a: &[f64]) -> bool {
    let mut acc = 0.0;
    for (k, ai) in a.iter().enumerate() {
        acc += ai;
        if acc > (k + 1) as f64 + CONSTRAINT_TOL {
            return false;
        }
    }
    true
}

/// `Σ_j p_j |I_j ∩ {k..n-1}| >= n - k` for `ell <= k <= n`.
pub fn satisfies_suffix(a: &[f64], ell: usize) -> bool {
    let n = a.len();
    let mut acc = 0.0;
    for k in (ell..n).rev() {
        acc += a[k];
        if acc < (n - k) as f64 - CONSTRAINT_TOL {
            return false;
        }
    }
    true
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

/// Admissible tuples with per-map candidate subsets, for repeated `h` evaluation.
#[derive(Clone, Debug)]
pub struct AdmissibleSet {
    /// Candidate subsets per map, in lexicographic order.
    pub subsets: Vec<Vec<Vec<usize>>>,
    /// Tuples as positions into `subsets`, in lexicographic order.
    pub tuples: Vec<Vec<usize>>,
    /// 0-based counterpart of the paper's `ell` (`None` for the unconstrained set).
    pub ell: Option<usize>,
}

impl AdmissibleSet {
    pub fn build(datum: &BlDatum, ell: Option<usize>) -> Result<Self> {
        let n = datum.n();
        if n > ENUMERATION_MAX_N {
            return Err(Error::GuardExceeded(format!(
                "tuple enumeration needs n <= {ENUMERATION_MAX_N}, got {n}"
            )));
        }
        if let Some(l) = ell {
            if l > n {
                return Err(invalid("ell", format!("must be at most n = {n}")));
            }
        }
        let dims = datum.target_dims();
        let total: u128 = dims.iter().map(|&k| binomial(n, k)).product();
        if total > ENUMERATION_MAX_TUPLES {
            return Err(Error::GuardExceeded(format!(
                "{total} raw tuples exceed the cap of {ENUMERATION_MAX_TUPLES}"
            )));
        }
        let subsets: Vec<Vec<Vec<usize>>> = dims.iter().map(|&k| combinations(n, k)).collect();
        let p = datum.exponents();
        let mut tuples = Vec::new();
        let mut cur = Vec::with_capacity(datum.m());
        let mut a = vec![0.0; n];
        Self::search(&subsets, p, ell, 0, &mut cur, &mut a, &mut tuples);
        Ok(Self {
            subsets,
            tuples,
            ell,
        })
    }

    fn search(
        subsets: &[Vec<Vec<usize>>],
        p: &[f64],
        ell: Option<usize>,
        j: usize,
        cur: &mut Vec<usize>,
        a: &mut Vec<f64>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if j == subsets.len() {
            if satisfies_prefix(a) && ell.map_or(true, |l| satisfies_suffix(a, l)) {
                out.push(cur.clone());
            }
            return;
        }
        for (pos, set) in subsets[j].iter().enumerate() {
            for &i in set {
                a[i] += p[j];
            }
            // Prefix sums only grow with further maps, so a violation is final.
            if satisfies_prefix(a) {
                cur.push(pos);
                Self::search(subsets, p, ell, j + 1, cur, a, out);
                cur.pop();
            }
            for &i in set {
                a[i] -= p[j];
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuple(&self, t: usize) -> IndexTuple {
        IndexTuple {
            sets: self.tuples[t]
                .iter()
                .enumerate()
                .map(|(j, &pos)| self.subsets[j][pos].clone())
                .collect(),
        }
    }

    /// `h` at `basis`: the best tuple's smallest wedge, first tuple on ties.
    pub fn h(&self, datum: &BlDatum, basis: &DMatrix<f64>) -> (f64, IndexTuple) {
        if self.tuples.is_empty() {
            return (0.0, IndexTuple { sets: Vec::new() });
        }
        let wedges: Vec<Vec<f64>> = self
            .subsets
            .iter()
            .zip(datum.maps())
            .map(|(sets, map)| {
                sets.iter()
                    .map(|s| wedge_magnitude(&images(map, basis, s)))
                    .collect()
            })
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (t, tuple) in self.tuples.iter().enumerate() {
            let v = tuple
                .iter()
                .enumerate()
                .map(|(j, &pos)| wedges[j][pos])
                .fold(f64::INFINITY, f64::min);
            if v > best + CONSTRAINT_TOL {
                best = v;
                arg = t;
            }
        }
        (best, self.tuple(arg))
    }
}

/// All admissible tuples (`ell = None`), or those also satisfying the
/// suffix constraint from `ell` on.
pub fn enumerate_admissible(datum: &BlDatum, ell: Option<usize>) -> Result<Vec<IndexTuple>> {
    let set = AdmissibleSet::build(datum, ell)?;
    Ok((0..set.len()).map(|t| set.tuple(t)).collect())
}

/// `h` (or `h_ell`) at a basis given as columns.
pub fn h_value(
    datum: &BlDatum,
    basis: &DMatrix<f64>,
    ell: Option<usize>,
) -> Result<(f64, IndexTuple)> {
    if basis.shape() != (datum.n(), datum.n()) {
        return Err(Error::Shape(format!(
            "basis must be {0}x{0}, got {1}x{2}",
            datum.n(),
            basis.nrows(),
            basis.ncols()
        )));
    }
    Ok(AdmissibleSet::build(datum, ell)?.h(datum, basis))
}

/// Sampled class of bases.
#[derive(Clone, Copy, Debug)]
pub enum FrameClass<'a> {
    /// Orthonormal bases of `R^n`.
    Orthonormal,
    /// Near-bases with the columns from `ell` on inside `H_0`.
    NearBasis {
        h0: &'a DMatrix<f64>,
        ell: usize,
        alpha: f64,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct CEstimate {
    pub c_hat: f64,
    pub worst_frame: DMatrix<f64>,
    pub samples: usize,
    pub ell: Option<usize>,
    pub sampler: &'static str,
}

/// Draws one near-basis. Columns from `ell` on are Haar directions of `H_0`;
/// every column is perturbed (tail perturbations stay in `H_0`), rescaled to a
/// random length in `[alpha^{1/n}, 1]` and the draw is rejected while
/// `|det| < alpha`.
pub fn sample_near_basis(
    rng: &mut rng::Rng,
    n: usize,
    h0: &DMatrix<f64>,
    ell: usize,
    alpha: f64,
) -> Result<DMatrix<f64>> {
    let d0 = h0.ncols();
    if ell + d0 < n {
        return Err(invalid(
            "ell",
            format!("needs ell >= n - dim H0 = {}", n - d0),
        ));
    }
    let tail = n - ell;
    let min_len = alpha.powf(1.0 / n as f64);
    for _ in 0..MAX_REJECTIONS {
        let head = linalg::random_frame(rng, n, ell);
        let tail_frame = h0 * linalg::random_frame(rng, d0, tail);
        let mut v = DMatrix::zeros(n, n);
        v.columns_mut(0, ell).copy_from(&head);
        v.columns_mut(ell, tail).copy_from(&tail_frame);
        let noise = rng::gaussian_matrix(rng, n, n) * 0.25;
        for i in 0..n {
            let mut col = v.column(i) + noise.column(i);
            if i >= ell {
                col = h0 * (h0.transpose() * col);
            }
            let norm = col.norm();
            if norm == 0.0 {
                continue;
            }
            let len = rng.random_range(min_len..=1.0);
            v.set_column(i, &(col * (len / norm)));
        }
        if wedge_magnitude(&v) >= alpha {
            return Ok(v);
        }
    }
    Err(Error::Sampling(format!(
        "no near-basis with |det| >= {alpha} after {MAX_REJECTIONS} attempts; use a smaller alpha"
    )))
}

/// Minimum of `h` (or `h_ell`) over `samples` random bases of the class.
/// Sample `i` always comes from the same stream, so estimates with more
/// samples can only be smaller.
pub fn estimate_c(
    datum: &BlDatum,
    class: FrameClass<'_>,
    samples: usize,
    seed: u64,
) -> Result<CEstimate> {
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let n = datum.n();
    let (ell, sub_seed, sampler) = match class {
        FrameClass::Orthonormal => (
            None,
            rng::derive_seed(seed, tags::FRAMES, u64::MAX),
            "haar-orthonormal",
        ),
        FrameClass::NearBasis { ell, alpha, .. } => {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(invalid("alpha", "must lie in (0, 1]"));
            }
            (
                Some(ell),
                rng::derive_seed(seed, tags::FRAMES, ell as u64),
                "perturbed-frame-rejection",
            )
        }
    };
    let set = AdmissibleSet::build(datum, ell)?;
    let evaluated: Vec<Result<(f64, DMatrix<f64>)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(sub_seed, tags::FRAMES, i as u64);
            let basis = match class {
                FrameClass::Orthonormal => linalg::random_frame(&mut rng, n, n),
                FrameClass::NearBasis { h0, ell, alpha } => {
                    sample_near_basis(&mut rng, n, h0, ell, alpha)?
                }
            };
            Ok((set.h(datum, &basis).0, basis))
        })
        .collect();
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for r in evaluated {
        let (v, b) = r?;
        if best.as_ref().map_or(true, |(bv, _)| v < *bv) {
            best = Some((v, b));
        }
    }
    let (c_hat, worst_frame) = best.expect("samples >= 1");
    Ok(CEstimate {
        c_hat,
        worst_frame,
        samples,
        ell,
        sampler,
    })
}

/// `min_ell c_ell` over `n - dim H_0 <= ell <= n` for the partial certificate.
pub fn estimate_c_partial(
    datum: &BlDatum,
    h0: &DMatrix<f64>,
    alpha: f64,
    samples: usize,
    seed: u64,
) -> Result<CEstimate> {
    let n = datum.n();
    let mut best: Option<CEstimate> = None;
    for ell in (n - h0.ncols())..=n {
        let est = estimate_c(
            datum,
            FrameClass::NearBasis { h0, ell, alpha },
            samples,
            seed,
        )?;
        if best.as_ref().map_or(true, |b| est.c_hat < b.c_hat) {
            best = Some(est);
        }
    }
    Ok(best.expect("at least one ell"))
}

/// `Σ_j p_j rank(L_j F) - k` for a frame `F`, with ranks from the greedy selection.
pub fn frame_margin(datum: &BlDatum, frame: &DMatrix<f64>, policy: &NumericPolicy) -> f64 {
    datum
        .maps()
        .iter()
        .zip(datum.exponents())
        .map(|(l, p)| p * greedy_indices(l, frame, policy).len() as f64)
        .sum::<f64>()
        - frame.ncols() as f64
}

/// Smallest `Σ_j p_j dim(L_j span F) - k` over sampled `k`-frames, coordinate
/// frames and `k`-dimensional members of the kernel lattice.
pub fn openness_margin(
    datum: &BlDatum,
    k: usize,
    samples: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<f64> {
    let n = datum.n();
    if k == 0 || k > n {
        return Err(invalid("k", format!("must lie in 1..={n}")));
    }
    let mut frames: Vec<DMatrix<f64>> = Vec::new();
    if n <= crate::finiteness::COORDINATE_MAX_N {
        for idx in combinations(n, k) {
            let mut f = DMatrix::zeros(n, k);
            for (c, &i) in idx.iter().enumerate() {
                f[(i, c)] = 1.0;
            }
            frames.push(f);
        }
    }
    for s in kernel_lattice(datum, 8, policy) {
        if s.dim() == k {
            frames.push(s.basis().clone());
        }
    }
    frames.extend((0..samples).map(|i| {
        let mut rng = rng::stream(seed, tags::OPENNESS, i as u64);
        linalg::random_frame(&mut rng, n, k)
    }));
    Ok(frames
        .par_iter()
        .map(|f| frame_margin(datum, f, policy))
        .reduce(|| f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::catalog::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn policy() -> NumericPolicy {
        NumericPolicy::default()
    }

    fn tuple(sets: &[&[usize]]) -> IndexTuple {
        IndexTuple {
            sets: sets.iter().map(|s| s.to_vec()).collect(),
        }
    }

    #[test]
    fn wedge_examples() {
        assert_eq!(wedge_magnitude(&DMatrix::identity(2, 2)), 1.0);
        let e1e1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(wedge_magnitude(&e1e1), 0.0);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((wedge_magnitude(&v) - 1.0).abs() < 1e-15);
        let tall = DMatrix::from_row_slice(3, 1, &[3.0, 4.0, 0.0]);
        assert!((wedge_magnitude(&tall) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_examples() {
        let p = policy();
        let id = DMatrix::identity(2, 2);
        let l = LinearMap::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(greedy_index_set(&l, &id, &p).unwrap(), vec![0]);
        let l = LinearMap::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(greedy_index_set(&l, &id, &p).unwrap(), vec![0, 1]);
        let s = FRAC_1_SQRT_2;
        let l = LinearMap::from_rows(&[vec![s, s]]).unwrap();
        assert_eq!(greedy_index_set(&l, &id, &p).unwrap(), vec![1]);
        let l = LinearMap::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let y = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(greedy_index_set(&l, &y, &p).is_err());
    }

    #[test]
    fn admissible_examples() {
        let t = enumerate_admissible(&loomis_whitney_2(), None).unwrap();
        assert_eq!(
            t,
            vec![
                tuple(&[&[0], &[1]]),
                tuple(&[&[1], &[0]]),
                tuple(&[&[1], &[1]])
            ]
        );
        let t = enumerate_admissible(&holder(1, &[1.0]), None).unwrap();
        assert_eq!(t, vec![tuple(&[&[0]])]);
        let t = enumerate_admissible(&single([0.0, 1.0], 1.0), Some(1)).unwrap();
        assert_eq!(t, vec![tuple(&[&[1]])]);
    }

    #[test]
    fn admissible_guard() {
        let d = holder(15, &[1.0]);
        assert!(matches!(
            enumerate_admissible(&d, None),
            Err(Error::GuardExceeded(_))
        ));
    }

    #[test]
    fn h_examples() {
        let lw = loomis_whitney_2();
        let (v, t) = h_value(&lw, &DMatrix::identity(2, 2), None).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(t, tuple(&[&[0], &[1]]));
        let (v, t) = h_value(&lw, Frame::rotation(FRAC_PI_4).vectors(), None).unwrap();
        assert!((v - FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(t, tuple(&[&[0], &[1]]));
        let (v, _) = h_value(&young_2(), &DMatrix::identity(2, 2), None).unwrap();
        assert!(v > 0.0);
    }

    #[test]
    fn h_of_empty_set_is_zero() {
        // Σ p_j n_j = 3 > 2 leaves no admissible tuple.
        let d = holder(2, &[1.0, 0.5]);
        let (v, t) = h_value(&d, &DMatrix::identity(2, 2), None).unwrap();
        assert_eq!(v, 0.0);
        assert!(t.is_empty());
    }

    #[test]
    fn estimate_examples() {
        let est = estimate_c(&loomis_whitney_2(), FrameClass::Orthonormal, 1000, 5).unwrap();
        // Dense sweep oracle: h(θ) = max(|cos θ|, |sin θ|) >= 1/√2.
        let sweep = (0..20000)
            .map(|i| {
                let th = i as f64 * std::f64::consts::PI / 20000.0;
                th.cos().abs().max(th.sin().abs())
            })
            .fold(f64::INFINITY, f64::min);
        assert!(est.c_hat >= sweep - 1e-9);
        assert!(est.c_hat < sweep + 0.02);
        let id = holder(2, &[1.0]);
        let est = estimate_c(&id, FrameClass::Orthonormal, 50, 5).unwrap();
        assert!((est.c_hat - 1.0).abs() < 1e-12);
        assert!(estimate_c(&id, FrameClass::Orthonormal, 0, 5).is_err());
    }

    #[test]
    fn estimate_is_monotone_in_samples() {
        let y = young_2();
        let mut prev = f64::INFINITY;
        for s in [10, 40, 160, 640] {
            let c = estimate_c(&y, FrameClass::Orthonormal, s, 9).unwrap().c_hat;
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn near_basis_samples_are_members() {
        let h0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut rng = rng::stream(1, 2, 3);
        for ell in 1..=2 {
            for _ in 0..50 {
                let v = sample_near_basis(&mut rng, 2, &h0, ell, 0.5).unwrap();
                NearBasis {
                    vectors: v,
                    alpha: 0.5,
                    ell,
                }
                .check(&h0, 1e-9)
                .unwrap();
            }
        }
        assert!(sample_near_basis(&mut rng, 2, &h0, 0, 0.5).is_err());
    }

    #[test]
    fn partial_c_for_single_projection() {
        let d = single([0.0, 1.0], 1.0);
        let h0 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let est = estimate_c_partial(&d, &h0, 0.5, 500, 3).unwrap();
        // Both h_1 and h_2 are bounded below by alpha / 2 on the class.
        assert!(est.c_hat >= 0.25 - 1e-9);
        assert!(est.c_hat < 1.0);
    }

    #[test]
    fn openness_examples() {
        let p = policy();
        assert_eq!(
            openness_margin(&loomis_whitney_2(), 1, 64, 1, &p).unwrap(),
            0.0
        );
        assert_eq!(
            openness_margin(&loomis_whitney_2(), 2, 64, 1, &p).unwrap(),
            0.0
        );
        let m = openness_margin(&infinite_example(), 1, 64, 1, &p).unwrap();
        assert!((m + 0.3).abs() < 1e-12);
        assert!(openness_margin(&young_2(), 0, 4, 1, &p).is_err());
    }
}
