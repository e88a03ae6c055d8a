//! Brascamp–Lieb data: linear maps, exponents, numeric policy, validation and
//! the JSON datum file format.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;

/// Tolerances and caps shared by the numerical routines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericPolicy {
    /// Singular values below `rank_tol * σ_max` count as zero.
    pub rank_tol: f64,
    /// Relative change of the log-objective below which iteration stops.
    pub conv_tol: f64,
    pub max_iter: usize,
    /// Magnitude beyond which an iterate is considered to be blowing up.
    pub diverge_norm: f64,
    /// Default quadrature resolution (points per axis).
    pub grid_res: usize,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            rank_tol: 1e-9,
            conv_tol: 1e-10,
            max_iter: 100_000,
            diverge_norm: 1e12,
            grid_res: 400,
        }
    }
}

impl NumericPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_tol", self.rank_tol),
            ("conv_tol", self.conv_tol),
            ("diverge_norm", self.diverge_norm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if self.grid_res < 1 {
            return Err(invalid("grid_res", "must be at least 1"));
        }
        Ok(())
    }
}

/// A linear map `L: R^n -> R^{n_j}` stored as its `n_j x n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    rows: DMatrix<f64>,
}

impl LinearMap {
    /// Wraps a matrix. Fails on empty shapes or non-finite entries; rank is
    /// judged later by [`validate_datum`].
    pub fn new(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::Shape(format!(
                "linear map must be non-empty, got {}x{}",
                rows.nrows(),
                rows.ncols()
            )));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear map".into()));
        }
        Ok(Self { rows })
    }

    /// Builds a map from row vectors. Ragged rows are rejected.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), n, &flat))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Ambient dimension `n`.
    pub fn n(&self) -> usize {
        self.rows.ncols()
    }

    /// Target dimension `n_j`.
    pub fn target_dim(&self) -> usize {
        self.rows.nrows()
    }

    /// `n_j' = n - n_j`, the dimension of the kernel of a surjective map.
    pub fn kernel_dim(&self) -> usize {
        self.n().saturating_sub(self.target_dim())
    }

    pub fn op_norm(&self) -> f64 {
        linalg::op_norm(&self.rows)
    }

    pub fn rows_vec(&self) -> Vec<Vec<f64>> {
        self.rows
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// A Brascamp–Lieb datum `(L, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlDatum {
    n: usize,
    maps: Vec<LinearMap>,
    exponents: Vec<f64>,
}

impl BlDatum {
    /// Structural construction: one exponent per map, all maps on the same
    /// ambient space, finite exponents. Invariants such as surjectivity are
    /// reported by [`validate_datum`] rather than rejected here.
    pub fn new(maps: Vec<LinearMap>, exponents: Vec<f64>) -> Result<Self> {
        if maps.len() != exponents.len() {
            return Err(Error::Shape(format!(
                "{} maps but {} exponents",
                maps.len(),
                exponents.len()
            )));
        }
        let n = maps.first().map(LinearMap::n).unwrap_or(0);
        if let Some((j, m)) = maps.iter().enumerate().find(|(_, m)| m.n() != n) {
            return Err(Error::Shape(format!(
                "map {j} acts on R^{} but map 0 acts on R^{n}",
                m.n()
            )));
        }
        if exponents.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("exponents".into()));
        }
        Ok(Self { n, maps, exponents })
    }

    /// Convenience constructor from nested row vectors.
    pub fn from_rows(maps: &[(&[&[f64]], f64)]) -> Result<Self> {
        let mut ls = Vec::with_capacity(maps.len());
        let mut ps = Vec::with_capacity(maps.len());
        for (rows, p) in maps {
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
            ls.push(LinearMap::from_rows(&rows)?);
            ps.push(*p);
        }
        Self::new(ls, ps)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[LinearMap] {
        &self.maps
    }

    pub fn map(&self, j: usize) -> &LinearMap {
        &self.maps[j]
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    /// Lebesgue exponents `q_j = 1 / p_j` of the multilinear form.
    pub fn lebesgue_exponents(&self) -> Vec<f64> {
        self.exponents.iter().map(|p| 1.0 / p).collect()
    }

    pub fn target_dims(&self) -> Vec<usize> {
        self.maps.iter().map(LinearMap::target_dim).collect()
    }

    /// Vertical stack of all map matrices, `(Σ n_j) x n`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let total: usize = self.target_dims().iter().sum();
        let mut out = DMatrix::zeros(total, self.n);
        let mut r = 0;
        for l in &self.maps {
            out.view_mut((r, 0), (l.target_dim(), self.n))
                .copy_from(l.matrix());
            r += l.target_dim();
        }
        out
    }

    /// Same exponents, new maps (used by perturbation experiments).
    pub fn with_maps(&self, maps: Vec<LinearMap>) -> Result<Self> {
        Self::new(maps, self.exponents.clone())
    }

    /// Fails unless every exponent is strictly positive; used by entry points
    /// whose objective needs `p_j > 0`.
    pub fn require_positive_exponents(&self) -> Result<()> {
        match self.exponents.iter().position(|&p| !(p > 0.0)) {
            Some(j) => Err(invalid(
                "exponents",
                format!(
                    "p_{j} = {} but this operation needs p_j > 0",
                    self.exponents[j]
                ),
            )),
            None => Ok(()),
        }
    }

    pub fn to_file(&self) -> DatumFile {
        DatumFile {
            n: self.n,
            maps: self
                .maps
                .iter()
                .zip(&self.exponents)
                .map(|(l, &p)| MapEntry {
                    p,
                    rows: l.rows_vec(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatumFile = serde_json::from_str(text)?;
        file.into_datum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("datum serialises")
    }
}

/// On-disk datum: `{ "n": 2, "maps": [{ "p": 1.0, "rows": [[1, 0]] }, ...] }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumFile {
    pub n: usize,
    pub maps: Vec<MapEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    pub p: f64,
    pub rows: Vec<Vec<f64>>,
}

impl DatumFile {
    pub fn into_datum(self) -> Result<BlDatum> {
        if self.n == 0 {
            return Err(Error::Shape("n must be positive".into()));
        }
        let mut maps = Vec::with_capacity(self.maps.len());
        let mut ps = Vec::with_capacity(self.maps.len());
        for (j, entry) in self.maps.into_iter().enumerate() {
            if !entry.p.is_finite() {
                return Err(Error::NonFinite(format!("exponent of map {j}")));
            }
            if entry.rows.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("rows of map {j}")));
            }
            if let Some(r) = entry.rows.iter().find(|r| r.len() != self.n) {
                return Err(Error::Shape(format!(
                    "map {j} has a row of length {} but n = {}",
                    r.len(),
                    self.n
                )));
            }
            maps.push(LinearMap::from_rows(&entry.rows)?);
            ps.push(entry.p);
        }
        BlDatum::new(maps, ps)
    }
}

/// Kinds of invariant violation reported by [`validate_datum`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationCode {
    EmptyDatum,
    TargetExceedsAmbient,
    NotSurjective,
    ExponentOutOfRange,
    CommonKernelNontrivial,
    /// Warning only: `p_j = 0` is allowed by the type.
    ZeroExponent,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("code serialises");
        write!(f, "{}", s.as_str().unwrap_or("?"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub map: Option<usize>,
    pub detail: String,
}

/// Outcome of [`validate_datum`]. `ok` holds exactly when `violations` is
/// empty; warnings never affect `ok`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    /// Converts a failed report into [`Error::InvalidDatum`].
    pub fn into_result(self) -> Result<()> {
        if self.ok {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| match v.map {
                Some(j) => format!("{} (map {j}): {}", v.code, v.detail),
                None => format!("{}: {}", v.code, v.detail),
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidDatum(msg))
    }
}

/// Checks every invariant of a datum and reports all violations.
pub fn validate_datum(datum: &BlDatum, policy: &NumericPolicy) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    if datum.m() == 0 {
        violations.push(Violation {
            code: ViolationCode::EmptyDatum,
            map: None,
            detail: "a datum needs at least one map".into(),
        });
    }
    for (j, (l, &p)) in datum.maps().iter().zip(datum.exponents()).enumerate() {
        if l.target_dim() > l.n() {
            violations.push(Violation {
                code: ViolationCode::TargetExceedsAmbient,
                map: Some(j),
                detail: format!("n_j = {} exceeds n = {}", l.target_dim(), l.n()),
            });
        }
        let rank = linalg::numerical_rank(l.matrix(), policy.rank_tol);
        if rank < l.target_dim() {
            violations.push(Violation {
                code: ViolationCode::NotSurjective,
                map: Some(j),
                detail: format!("rank {rank} < n_j = {}", l.target_dim()),
            });
        }
        if !(0.0..=1.0).contains(&p) {
            violations.push(Violation {
                code: ViolationCode::ExponentOutOfRange,
                map: Some(j),
                detail: format!("p_j = {p} outside [0, 1]"),
            });
        } else if p == 0.0 {
            warnings.push(Violation {
                code: ViolationCode::ZeroExponent,
                map: Some(j),
                detail: "p_j = 0: optimiser entry points will reject this datum".into(),
            });
        }
    }
    if datum.m() > 0 {
        let rank = linalg::numerical_rank(&datum.stacked(), policy.rank_tol);
        if rank < datum.n() {
            violations.push(Violation {
                code: ViolationCode::CommonKernelNontrivial,
                map: None,
                detail: format!(
                    "common kernel has dimension {} (stacked rank {rank} < n = {})",
                    datum.n() - rank,
                    datum.n()
                ),
            });
        }
    }
    ValidationReport {
        ok: violations.is_empty(),
        violations,
        warnings,
    }
}

/// Orthonormal basis of `ker L`, an `n x (n - rank L)` matrix.
pub fn kernel_basis(map: &LinearMap, policy: &NumericPolicy) -> DMatrix<f64> {
    linalg::null_space(map.matrix(), policy.rank_tol, None)
}

/// Named data used throughout tests, examples and documentation.
pub mod catalog {
    use super::*;

    fn must(d: Result<BlDatum>) -> BlDatum {
        d.expect("catalog datum is well formed")
    }

    /// Coordinate projections onto the axes of `R^2`, `p = (1, 1)`.
    pub fn loomis_whitney_2() -> BlDatum {
        must(BlDatum::from_rows(&[
            (&[&[1.0, 0.0]], 1.0),
            (&[&[0.0, 1.0]], 1.0),
        ]))
    }

    /// Projections of `R^3` onto the three coordinate planes, `p_j = 1/2`.
    pub fn loomis_whitney_3() -> BlDatum {
        must(BlDatum::from_rows(&[
            (&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], 0.5),
            (&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], 0.5),
            (&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], 0.5),
        ]))
    }

    /// Young's convolution datum on `R^2`: `x`, `y`, `x - y`, each `p = 2/3`.
    pub fn young_2() -> BlDatum {
        let p = 2.0 / 3.0;
        must(BlDatum::from_rows(&[
            (&[&[1.0, 0.0]], p),
            (&[&[0.0, 1.0]], p),
            (&[&[1.0, -1.0]], p),
        ]))
    }

    /// Hölder's datum: `m` copies of the identity on `R^n` with the given exponents.
    pub fn holder(n: usize, exponents: &[f64]) -> BlDatum {
        let maps = exponents
            .iter()
            .map(|_| LinearMap::new(DMatrix::identity(n, n)).expect("identity"))
            .collect();
        must(BlDatum::new(maps, exponents.to_vec()))
    }

    /// `{[1 0] p = 0.6, id_{R^2} p = 0.7}`: scaling holds but the dimension
    /// condition fails on the `y`-axis.
    pub fn infinite_example() -> BlDatum {
        must(BlDatum::from_rows(&[
            (&[&[1.0, 0.0]], 0.6),
            (&[&[1.0, 0.0], &[0.0, 1.0]], 0.7),
        ]))
    }

    /// Two rank-one maps on `R^2` with rows `u`, `v` and `p = (1, 1)`.
    pub fn rank_one_pair(u: [f64; 2], v: [f64; 2]) -> BlDatum {
        must(BlDatum::from_rows(&[(&[&u], 1.0), (&[&v], 1.0)]))
    }

    /// `u = e_1`, `v = (-sin θ, cos θ)`.
    pub fn rotated_pair(theta: f64) -> BlDatum {
        rank_one_pair([1.0, 0.0], [-theta.sin(), theta.cos()])
    }

    /// A single map on `R^2`.
    pub fn single(row: [f64; 2], p: f64) -> BlDatum {
        must(BlDatum::from_rows(&[(&[&row], p)]))
    }
}

#[cfg(test)]
mod tests {
    use super::catalog::*;
    use super::*;

    fn policy() -> NumericPolicy {
        NumericPolicy::default()
    }

    #[test]
    fn loomis_whitney_is_valid() {
        let r = validate_datum(&loomis_whitney_2(), &policy());
        assert!(r.ok, "{r:?}");
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn zero_map_is_not_surjective() {
        let d = BlDatum::from_rows(&[(&[&[0.0, 0.0]], 1.0), (&[&[0.0, 1.0], &[1.0, 0.0]], 0.5)])
            .unwrap();
        let r = validate_datum(&d, &policy());
        assert!(!r.ok);
        assert!(r.has(ViolationCode::NotSurjective));
        assert_eq!(r.violations[0].map, Some(0));
    }

    #[test]
    fn single_projection_has_common_kernel() {
        let r = validate_datum(&single([1.0, 0.0], 1.0), &policy());
        assert!(r.has(ViolationCode::CommonKernelNontrivial));
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn exponent_range_and_zero_warning() {
        let d = BlDatum::from_rows(&[(&[&[1.0, 0.0]], 1.5), (&[&[0.0, 1.0]], 0.0)]).unwrap();
        let r = validate_datum(&d, &policy());
        assert!(r.has(ViolationCode::ExponentOutOfRange));
        assert!(!r.has(ViolationCode::ZeroExponent));
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.warnings[0].code, ViolationCode::ZeroExponent);
        assert!(d.require_positive_exponents().is_err());
    }

    #[test]
    fn too_many_rows_reported() {
        let d = BlDatum::from_rows(&[(&[&[1.0], &[2.0]], 1.0)]).unwrap();
        let r = validate_datum(&d, &policy());
        assert!(r.has(ViolationCode::TargetExceedsAmbient));
        assert!(r.has(ViolationCode::NotSurjective));
    }

    #[test]
    fn shape_mismatch_is_structural_error() {
        let l = LinearMap::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            BlDatum::new(vec![l.clone()], vec![1.0, 0.5]),
            Err(Error::Shape(_))
        ));
        let l3 = LinearMap::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            BlDatum::new(vec![l, l3], vec![1.0, 1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            LinearMap::from_rows(&[vec![1.0, 0.0], vec![1.0]]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kernel_of_axis_projection() {
        let k = kernel_basis(&single([1.0, 0.0], 1.0).maps()[0], &policy());
        assert_eq!(k.shape(), (2, 1));
        assert!(k[(0, 0)].abs() < 1e-15);
        assert!((k[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn kernel_of_identity_is_empty() {
        let id = LinearMap::new(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(kernel_basis(&id, &policy()).shape(), (2, 0));
    }

    #[test]
    fn kernel_of_difference_map() {
        // Oracle: 1x2 null space of [1 -1] by hand is span{(1,1)}.
        let l = LinearMap::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let k = kernel_basis(&l, &policy());
        assert_eq!(k.shape(), (2, 1));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((k[(0, 0)].abs() - s).abs() < 1e-14);
        assert!((k[(0, 0)] - k[(1, 0)]).abs() < 1e-14);
        assert!((l.matrix() * &k).amax() < 1e-14);
        assert!(linalg::orthonormality_defect(&k) < 1e-14);
    }

    #[test]
    fn json_round_trip_and_rejections() {
        let d = young_2();
        let back = BlDatum::from_json(&d.to_json()).unwrap();
        assert_eq!(back, d);
        let ragged = r#"{"n": 2, "maps": [{"p": 1, "rows": [[1, 0], [1]]}]}"#;
        assert!(BlDatum::from_json(ragged).is_err());
        let wrong_n = r#"{"n": 3, "maps": [{"p": 1, "rows": [[1, 0]]}]}"#;
        assert!(BlDatum::from_json(wrong_n).is_err());
        let nan = r#"{"n": 2, "maps": [{"p": NaN, "rows": [[1, 0]]}]}"#;
        assert!(BlDatum::from_json(nan).is_err());
        let huge = r#"{"n": 2, "maps": [{"p": 1, "rows": [[1e999, 0]]}]}"#;
        assert!(BlDatum::from_json(huge).is_err());
        let unknown = r#"{"n": 2, "maps": [], "extra": 1}"#;
        assert!(BlDatum::from_json(unknown).is_err());
    }

    #[test]
    fn derived_accessors() {
        let d = loomis_whitney_3();
        assert_eq!(d.target_dims(), vec![2, 2, 2]);
        assert_eq!(d.maps()[0].kernel_dim(), 1);
        assert_eq!(d.lebesgue_exponents(), vec![2.0, 2.0, 2.0]);
    }
}
