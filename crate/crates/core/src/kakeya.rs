//! Grid quadrature for multilinear Kakeya-type sums of tube indicators.
//!
//! A tube of width `δ` around the affine subspace `center + span(D)` is the
//! closed Euclidean `δ`-neighbourhood, so its cross-section has thickness
//! `2δ`. Two transversal strips of width `δ` in the plane therefore meet in a
//! `2δ x 2δ` square and the ratio against `δ^n Π (#T_j)^{p_j}` is `4`.
//!
//! Integrals are taken over `[-1, 1]^n` with the midpoint rule; a cell counts
//! entirely or not at all according to its centre.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datum::{kernel_basis, BlDatum, DatumFile, NumericPolicy};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::rng::{self, tags};

/// Rejection attempts per tube direction.
const MAX_DIRECTION_TRIES: usize = 100;

/// `sqrt(k - ‖D^T K‖_F^2)`: the root sum of squared sines of the principal
/// angles between two `k`-dimensional subspaces with orthonormal bases.
pub fn grassmann_distance(d: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let dim = d.ncols() as f64;
    (dim - (d.transpose() * k).norm_squared()).max(0.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tube {
    pub center: DVector<f64>,
    pub directions: DMatrix<f64>,
    pub width: f64,
    pub family: usize,
}

impl Tube {
    pub fn new(
        center: DVector<f64>,
        directions: DMatrix<f64>,
        width: f64,
        family: usize,
    ) -> Result<Self> {
        if directions.nrows() != center.len() {
            return Err(Error::Shape("tube directions and centre disagree".into()));
        }
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid("width", "must be positive and finite"));
        }
        if linalg::orthonormality_defect(&directions) > 1e-9 {
            return Err(invalid("directions", "columns are not orthonormal"));
        }
        Ok(Self {
            center,
            directions,
            width,
            family,
        })
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let r = x - &self.center;
        let perp = &r - &self.directions * (self.directions.transpose() * &r);
        perp.norm() <= self.width
    }

    /// Row-major `I - D D^T` for the quadrature loop.
    fn normal_projector(&self) -> Vec<f64> {
        let n = self.n();
        let p = DMatrix::identity(n, n) - linalg::projector(&self.directions);
        p.transpose().iter().copied().collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TubeFamily {
    pub family: usize,
    pub tubes: Vec<Tube>,
    pub nu: f64,
    pub reference_kernel: DMatrix<f64>,
}

impl TubeFamily {
    /// Checks that every tube belongs to `family` and lies within `nu` of the
    /// reference subspace.
    pub fn new(
        family: usize,
        tubes: Vec<Tube>,
        nu: f64,
        reference_kernel: DMatrix<f64>,
    ) -> Result<Self> {
        for (i, t) in tubes.iter().enumerate() {
            if t.family != family {
                return Err(invalid(
                    "tubes",
                    format!("tube {i} belongs to family {}", t.family),
                ));
            }
            if t.directions.shape() != reference_kernel.shape() {
                return Err(Error::Shape(format!(
                    "tube {i} has the wrong direction dimension"
                )));
            }
            let dist = grassmann_distance(&t.directions, &reference_kernel);
            if dist > nu + 1e-9 {
                return Err(invalid(
                    "tubes",
                    format!("tube {i} is {dist:.4} from the reference subspace, beyond nu = {nu}"),
                ));
            }
        }
        Ok(Self {
            family,
            tubes,
            nu,
            reference_kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
}

impl GridSpec {
    pub fn new(resolution: usize) -> Result<Self> {
        if resolution < 8 {
            return Err(invalid("resolution", "needs at least 8 points per axis"));
        }
        Ok(Self { resolution })
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.resolution as f64
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        -1.0 + (k as f64 + 0.5) * self.spacing()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KakeyaResult {
    pub lhs: f64,
    pub rhs_base: f64,
    pub ratio: f64,
}

struct Packed {
    centers: Vec<f64>,
    projectors: Vec<f64>,
    widths_sq: Vec<f64>,
    family_of: Vec<usize>,
}

fn pack(families: &[TubeFamily]) -> Packed {
    let mut packed = Packed {
        centers: Vec::new(),
        projectors: Vec::new(),
        widths_sq: Vec::new(),
        family_of: Vec::new(),
    };
    for (f, fam) in families.iter().enumerate() {
        for t in &fam.tubes {
            packed.centers.extend(t.center.iter());
            packed.projectors.extend(t.normal_projector());
            packed.widths_sq.push(t.width * t.width);
            packed.family_of.push(f);
        }
    }
    packed
}

fn check_families(families: &[TubeFamily], p: &[f64]) -> Result<usize> {
    if families.is_empty() {
        return Err(invalid("families", "empty family list"));
    }
    if families.len() != p.len() {
        return Err(Error::Shape(format!(
            "{} families but {} exponents",
            families.len(),
            p.len()
        )));
    }
    let n = families[0].reference_kernel.nrows();
    for fam in families {
        if fam.reference_kernel.nrows() != n || fam.tubes.iter().any(|t| t.n() != n) {
            return Err(Error::Shape("tubes live in different dimensions".into()));
        }
    }
    Ok(n)
}

/// Midpoint-rule value of `∫_{[-1,1]^n} Π_j (Σ_{T in family j} χ_T)^{p_j}`.
pub fn kakeya_lhs(families: &[TubeFamily], p: &[f64], grid: GridSpec) -> Result<f64> {
    let n = check_families(families, p)?;
    let packed = pack(families);
    let res = grid.resolution;
    let h = grid.spacing();
    let m = families.len();
    let slabs: Vec<f64> = (0..res)
        .into_par_iter()
        .map(|i0| {
            let mut idx = vec![0usize; n];
            idx[0] = i0;
            let mut x = vec![0.0; n];
            let mut r = vec![0.0; n];
            let mut counts = vec![0usize; m];
            let mut acc = 0.0;
            let inner: usize = res.pow((n - 1) as u32);
            for _ in 0..inner {
                for (d, xi) in x.iter_mut().enumerate() {
                    *xi = grid.coordinate(idx[d]);
                }
                counts.iter_mut().for_each(|c| *c = 0);
                for t in 0..packed.widths_sq.len() {
                    let c = &packed.centers[t * n..(t + 1) * n];
                    for d in 0..n {
                        r[d] = x[d] - c[d];
                    }
                    let proj = &packed.projectors[t * n * n..(t + 1) * n * n];
                    let mut q = 0.0;
                    for a in 0..n {
                        let mut row = 0.0;
                        for b in 0..n {
                            row += proj[a * n + b] * r[b];
                        }
                        q += r[a] * row;
                    }
                    if q <= packed.widths_sq[t] {
                        counts[packed.family_of[t]] += 1;
                    }
                }
                let mut value = 1.0;
                for (c, pj) in counts.iter().zip(p) {
                    if *pj > 0.0 {
                        if *c == 0 {
                            value = 0.0;
                            break;
                        }
                        value *= (*c as f64).powf(*pj);
                    }
                }
                acc += value;
                // Advance the odometer over axes 1..n.
                for d in (1..n).rev() {
                    idx[d] += 1;
                    if idx[d] < res {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            acc
        })
        .collect();
    Ok(slabs.iter().sum::<f64>() * h.powi(n as i32))
}

/// Common tube width across all families.
fn common_width(families: &[TubeFamily]) -> Result<f64> {
    let mut width = None;
    for fam in families {
        for t in &fam.tubes {
            match width {
                None => width = Some(t.width),
                Some(w) if (w - t.width).abs() > 1e-12 * w => {
                    return Err(invalid(
                        "families",
                        "tube widths differ; one delta per experiment",
                    ))
                }
                _ => {}
            }
        }
    }
    width.ok_or_else(|| invalid("families", "no tubes"))
}

/// `kakeya_lhs / (δ^n Π_j (#T_j)^{p_j})`.
pub fn kakeya_ratio(families: &[TubeFamily], p: &[f64], grid: GridSpec) -> Result<KakeyaResult> {
    let n = check_families(families, p)?;
    let delta = common_width(families)?;
    let lhs = kakeya_lhs(families, p, grid)?;
    let rhs_base = delta.powi(n as i32)
        * families
            .iter()
            .zip(p)
            .map(|(f, pj)| (f.len() as f64).powf(*pj))
            .product::<f64>();
    Ok(KakeyaResult {
        lhs,
        rhs_base,
        ratio: lhs / rhs_base,
    })
}

/// Random direction within `nu` of `k`: Gaussian perturbation of scale `nu`,
/// re-orthonormalised and rejected while too far.
fn perturbed_direction(rng: &mut rng::Rng, k: &DMatrix<f64>, nu: f64) -> Result<DMatrix<f64>> {
    if nu == 0.0 || k.ncols() == 0 {
        return Ok(k.clone());
    }
    for _ in 0..MAX_DIRECTION_TRIES {
        let noisy = k + rng::gaussian_matrix(rng, k.nrows(), k.ncols()) * nu;
        if linalg::numerical_rank(&noisy, 1e-10) < k.ncols() {
            continue;
        }
        let d = linalg::orthonormalize(&noisy);
        if grassmann_distance(&d, k) <= nu {
            return Ok(d);
        }
    }
    Err(Error::Sampling(format!(
        "no direction within nu = {nu} after {MAX_DIRECTION_TRIES} attempts"
    )))
}

/// Families of `counts[j]` tubes of width `delta` with directions within `nu`
/// of `ker L_j` and centres uniform in `[-1, 1]^n`.
pub fn random_families(
    datum: &BlDatum,
    delta: f64,
    nu: f64,
    counts: &[usize],
    seed: u64,
    policy: &NumericPolicy,
) -> Result<Vec<TubeFamily>> {
    if !(nu >= 0.0) {
        return Err(invalid("nu", "must be nonnegative"));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    if counts.len() != datum.m() {
        return Err(Error::Shape(format!(
            "{} counts for {} maps",
            counts.len(),
            datum.m()
        )));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(invalid("counts", format!("family {j} is empty")));
    }
    let n = datum.n();
    datum
        .maps()
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(j, (l, &count))| {
            let kernel = kernel_basis(l, policy);
            let mut rng = rng::stream(seed, tags::TUBES, j as u64);
            let tubes = (0..count)
                .map(|_| {
                    let d = perturbed_direction(&mut rng, &kernel, nu)?;
                    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
                    Tube::new(c, d, delta, j)
                })
                .collect::<Result<Vec<_>>>()?;
            TubeFamily::new(j, tubes, nu, kernel)
        })
        .collect()
}

/// Widens every tube from `δ` to `δ + factor·δ/ν`.
pub fn coarsen_tubes(family: &TubeFamily, factor: f64, nu: f64) -> Result<TubeFamily> {
    if !(factor >= 0.0) {
        return Err(invalid("factor", "must be nonnegative"));
    }
    if factor > 0.0 && !(nu > 0.0) {
        return Err(invalid("nu", "must be positive when fattening"));
    }
    let mut out = family.clone();
    for t in &mut out.tubes {
        if factor > 0.0 {
            t.width += factor * t.width / nu;
        }
    }
    Ok(out)
}

/// Greedy complete-linkage clustering of tubes by direction: each tube joins
/// the first cluster all of whose members lie within `nu` of it.
pub fn partition_by_direction(family: &TubeFamily, nu: f64) -> Vec<TubeFamily> {
    let mut clusters: Vec<Vec<Tube>> = Vec::new();
    for t in &family.tubes {
        let home = clusters.iter_mut().find(|c| {
            c.iter()
                .all(|u| grassmann_distance(&t.directions, &u.directions) <= nu)
        });
        match home {
            Some(c) => c.push(t.clone()),
            None => clusters.push(vec![t.clone()]),
        }
    }
    clusters
        .into_iter()
        .map(|tubes| {
            let reference_kernel = tubes[0].directions.clone();
            TubeFamily {
                family: family.family,
                tubes,
                nu,
                reference_kernel,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KappaEstimate {
    pub c_fine: f64,
    pub c_coarse: f64,
    pub kappa_hat: f64,
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    rng::derive_seed(seed, tags::KAKEYA_TRIAL, trial as u64)
}

/// Ratios of `trials` random configurations at scale `delta`.
pub fn trial_ratios(
    datum: &BlDatum,
    delta: f64,
    nu: f64,
    trials: usize,
    counts: &[usize],
    grid: GridSpec,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<Vec<KakeyaResult>> {
    (0..trials)
        .map(|t| {
            let fams = random_families(datum, delta, nu, counts, trial_seed(seed, t), policy)?;
            kakeya_ratio(&fams, datum.exponents(), grid)
        })
        .collect()
}

/// Largest ratio over `trials` configurations at `δ` and at `δ/ν`, and their
/// quotient. Both scales reuse the same trial seeds.
#[allow(clippy::too_many_arguments)]
pub fn measure_kappa(
    datum: &BlDatum,
    delta: f64,
    nu: f64,
    trials: usize,
    counts: &[usize],
    grid: GridSpec,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<KappaEstimate> {
    if !(delta > 0.0 && delta < nu && nu <= 1.0) {
        return Err(invalid("delta", "needs 0 < delta < nu <= 1"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let max = |rs: Vec<KakeyaResult>| rs.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let c_fine = max(trial_ratios(
        datum, delta, nu, trials, counts, grid, seed, policy,
    )?);
    let c_coarse = max(trial_ratios(
        datum,
        delta / nu,
        nu,
        trials,
        counts,
        grid,
        seed,
        policy,
    )?);
    Ok(KappaEstimate {
        c_fine,
        c_coarse,
        kappa_hat: c_fine / c_coarse,
    })
}

/// Datum given inline or as a path relative to the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatumRef {
    Path(PathBuf),
    Inline(DatumFile),
}

impl DatumRef {
    pub fn load(&self, base: Option<&Path>) -> Result<BlDatum> {
        match self {
            DatumRef::Inline(f) => f.clone().into_datum(),
            DatumRef::Path(p) => {
                let path = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    invalid("datum", format!("cannot read {}: {e}", path.display()))
                })?;
                BlDatum::from_json(&text)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KakeyaConfig {
    pub datum: DatumRef,
    pub delta: f64,
    pub nu: f64,
    pub counts: Vec<usize>,
    pub grid_res: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KakeyaRow {
    pub trial: usize,
    pub delta: f64,
    pub nu: f64,
    pub lhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct KakeyaSummary {
    pub delta: f64,
    pub nu: f64,
    pub trials: usize,
    pub grid_res: usize,
    pub seed: u64,
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Present when `delta < nu`: the same trials rerun at `delta / nu`.
    pub kappa: Option<KappaEstimate>,
}

/// Runs a configured experiment: one row per trial and scale.
pub fn run_experiment(
    cfg: &KakeyaConfig,
    datum: &BlDatum,
    policy: &NumericPolicy,
) -> Result<(Vec<KakeyaRow>, KakeyaSummary)> {
    let grid = GridSpec::new(cfg.grid_res)?;
    if cfg.trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let rows_at = |delta: f64| -> Result<Vec<KakeyaRow>> {
        Ok(trial_ratios(
            datum,
            delta,
            cfg.nu,
            cfg.trials,
            &cfg.counts,
            grid,
            cfg.seed,
            policy,
        )?
        .into_iter()
        .enumerate()
        .map(|(trial, r)| KakeyaRow {
            trial,
            delta,
            nu: cfg.nu,
            lhs: r.lhs,
            ratio: r.ratio,
        })
        .collect())
    };
    let fine = rows_at(cfg.delta)?;
    let c_fine = fine
        .iter()
        .map(|r| r.ratio)
        .fold(f64::NEG_INFINITY, f64::max);
    let mean = fine.iter().map(|r| r.ratio).sum::<f64>() / fine.len() as f64;
    let mut rows = fine;
    let kappa = if cfg.delta < cfg.nu && cfg.nu <= 1.0 {
        let coarse = rows_at(cfg.delta / cfg.nu)?;
        let c_coarse = coarse
            .iter()
            .map(|r| r.ratio)
            .fold(f64::NEG_INFINITY, f64::max);
        rows.extend(coarse);
        Some(KappaEstimate {
            c_fine,
            c_coarse,
            kappa_hat: c_fine / c_coarse,
        })
    } else {
        None
    };
    Ok((
        rows,
        KakeyaSummary {
            delta: cfg.delta,
            nu: cfg.nu,
            trials: cfg.trials,
            grid_res: cfg.grid_res,
            seed: cfg.seed,
            max_ratio: c_fine,
            mean_ratio: mean,
            kappa,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::catalog::*;

    fn strip(n_center: [f64; 2], dir: [f64; 2], delta: f64, family: usize) -> Tube {
        Tube::new(
            DVector::from_column_slice(&n_center),
            DMatrix::from_column_slice(2, 1, &dir),
            delta,
            family,
        )
        .unwrap()
    }

    fn family(j: usize, tubes: Vec<Tube>, nu: f64, kernel: [f64; 2]) -> TubeFamily {
        TubeFamily::new(j, tubes, nu, DMatrix::from_column_slice(2, 1, &kernel)).unwrap()
    }

    /// Vertical strips are neighbourhoods of x = c, i.e. direction e_2 = ker [1 0].
    fn lw_strips(delta: f64, xs: &[f64], ys: &[f64]) -> Vec<TubeFamily> {
        vec![
            family(
                0,
                xs.iter()
                    .map(|&x| strip([x, 0.0], [0.0, 1.0], delta, 0))
                    .collect(),
                0.0,
                [0.0, 1.0],
            ),
            family(
                1,
                ys.iter()
                    .map(|&y| strip([0.0, y], [1.0, 0.0], delta, 1))
                    .collect(),
                0.0,
                [1.0, 0.0],
            ),
        ]
    }

    #[test]
    fn single_strip_pair() {
        let fams = lw_strips(0.1, &[0.0], &[0.0]);
        let lhs = kakeya_lhs(&fams, &[1.0, 1.0], GridSpec::new(400).unwrap()).unwrap();
        assert!((lhs - 0.04).abs() < 1e-9);
        let r = kakeya_ratio(&fams, &[1.0, 1.0], GridSpec::new(400).unwrap()).unwrap();
        assert!((r.ratio - 4.0).abs() < 0.08);
    }

    #[test]
    fn three_by_three_strips() {
        let fams = lw_strips(0.1, &[-0.5, 0.0, 0.5], &[-0.5, 0.0, 0.5]);
        let lhs = kakeya_lhs(&fams, &[1.0, 1.0], GridSpec::new(400).unwrap()).unwrap();
        assert!((lhs - 0.36).abs() < 0.36 * 0.02);
    }

    #[test]
    fn tilted_strip_parallelogram() {
        let (s, c) = 0.1f64.sin_cos();
        let fams = vec![
            family(
                0,
                vec![strip([0.0, 0.0], [0.0, 1.0], 0.1, 0)],
                0.0,
                [0.0, 1.0],
            ),
            family(1, vec![strip([0.0, 0.0], [c, s], 0.1, 1)], 0.2, [1.0, 0.0]),
        ];
        let lhs = kakeya_lhs(&fams, &[1.0, 1.0], GridSpec::new(800).unwrap()).unwrap();
        let exact = 0.04 / 0.1f64.cos();
        assert!((lhs - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn zero_count_zeroes_integrand() {
        let fams = lw_strips(0.1, &[0.0], &[0.9]);
        // The strips still meet; moving one outside the cube empties the product.
        let far = vec![
            fams[0].clone(),
            family(
                1,
                vec![strip([0.0, 5.0], [1.0, 0.0], 0.1, 1)],
                0.0,
                [1.0, 0.0],
            ),
        ];
        assert_eq!(
            kakeya_lhs(&far, &[1.0, 1.0], GridSpec::new(100).unwrap()).unwrap(),
            0.0
        );
        // p_j = 0 leaves the other factor alone.
        let v = kakeya_lhs(&far, &[1.0, 0.0], GridSpec::new(400).unwrap()).unwrap();
        assert!((v - 0.4).abs() < 0.01);
    }

    #[test]
    fn rejects_bad_families() {
        assert!(kakeya_lhs(&[], &[], GridSpec::new(8).unwrap()).is_err());
        assert!(GridSpec::new(7).is_err());
        let mixed = vec![
            family(
                0,
                vec![strip([0.0, 0.0], [0.0, 1.0], 0.1, 0)],
                0.0,
                [0.0, 1.0],
            ),
            family(
                1,
                vec![strip([0.0, 0.0], [1.0, 0.0], 0.2, 1)],
                0.0,
                [1.0, 0.0],
            ),
        ];
        assert!(kakeya_ratio(&mixed, &[1.0, 1.0], GridSpec::new(64).unwrap()).is_err());
        let far = strip([0.0, 0.0], [1.0, 0.0], 0.1, 0);
        assert!(TubeFamily::new(
            0,
            vec![far],
            0.1,
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
        )
        .is_err());
    }

    #[test]
    fn random_families_examples() {
        let p = NumericPolicy::default();
        let lw = loomis_whitney_2();
        let fams = random_families(&lw, 0.05, 0.0, &[3, 3], 1, &p).unwrap();
        for f in &fams {
            for t in &f.tubes {
                assert!(grassmann_distance(&t.directions, &f.reference_kernel) < 1e-12);
            }
        }
        let fams = random_families(&lw, 0.05, 0.1, &[20, 20], 1, &p).unwrap();
        assert_eq!(fams.iter().map(|f| f.len()).sum::<usize>(), 40);
        for f in &fams {
            for t in &f.tubes {
                assert!(grassmann_distance(&t.directions, &f.reference_kernel) <= 0.1);
            }
        }
        assert!(random_families(&lw, 0.05, 0.1, &[0, 5], 1, &p).is_err());
        let again = random_families(&lw, 0.05, 0.1, &[20, 20], 1, &p).unwrap();
        assert_eq!(fams[0].tubes, again[0].tubes);
    }

    #[test]
    fn coarsen_examples() {
        let fams = lw_strips(0.01, &[0.0], &[0.0]);
        let wide = coarsen_tubes(&fams[0], 2.0, 0.1).unwrap();
        assert!((wide.tubes[0].width - 0.21).abs() < 1e-15);
        let same = coarsen_tubes(&fams[0], 0.0, 0.1).unwrap();
        assert_eq!(same.tubes, fams[0].tubes);
    }

    #[test]
    fn partition_examples() {
        let k = [0.0, 1.0];
        let tubes: Vec<Tube> = (0..5)
            .map(|i| strip([i as f64 * 0.1, 0.0], k, 0.1, 0))
            .collect();
        let fam = family(0, tubes, 0.0, k);
        assert_eq!(partition_by_direction(&fam, 0.05).len(), 1);

        let nu = 0.05;
        let th = (3.0 * nu as f64).asin();
        let a = strip([0.0, 0.0], [0.0, 1.0], 0.1, 0);
        let b = strip([0.0, 0.0], [th.sin(), th.cos()], 0.1, 0);
        let fam = family(0, vec![a, b], 1.0, k);
        assert_eq!(partition_by_direction(&fam, nu).len(), 2);
    }

    #[test]
    fn measure_kappa_degenerate_scale() {
        let p = NumericPolicy::default();
        let g = GridSpec::new(64).unwrap();
        let k = measure_kappa(&loomis_whitney_2(), 0.05, 1.0, 2, &[3, 3], g, 4, &p).unwrap();
        assert_eq!(k.c_fine, k.c_coarse);
        assert_eq!(k.kappa_hat, 1.0);
        assert!(measure_kappa(&loomis_whitney_2(), 0.2, 0.1, 2, &[3, 3], g, 4, &p).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let text = r#"{"datum": "lw.json", "delta": 0.1, "nu": 0.1, "counts": [1,1],
                       "grid_res": 64, "trials": 1, "seed": 0, "extra": 1}"#;
        assert!(serde_json::from_str::<KakeyaConfig>(text).is_err());
        let inline = r#"{"datum": {"n": 2, "maps": [{"p": 1, "rows": [[1, 0]]}, {"p": 1, "rows": [[0, 1]]}]},
                         "delta": 0.1, "nu": 0.1, "counts": [1,1], "grid_res": 64, "trials": 1, "seed": 0}"#;
        let cfg: KakeyaConfig = serde_json::from_str(inline).unwrap();
        assert_eq!(cfg.datum.load(None).unwrap().m(), 2);
    }
}
