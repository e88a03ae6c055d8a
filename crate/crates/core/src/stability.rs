//! Behaviour of the global constant under small perturbations of the maps.
//!
//! Perturbations `ΔL = (ΔL_j)` are drawn uniformly from the product of
//! operator-norm balls `‖ΔL_j‖₂ <= r` by rejection from the entrywise cube,
//! which contains each ball.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::Serialize;

use crate::datum::{BlDatum, LinearMap, NumericPolicy};
use crate::error::{invalid, Error, Result};
use crate::gauss::{compute_bl, LocalizationMode, Status};
use crate::linalg;
use crate::rng::{self, tags};

const MAX_REJECTIONS: usize = 10_000;
/// Evaluation budget of the supremum refinement.
const REFINE_BUDGET: usize = 4000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityRow {
    pub sample: usize,
    /// `max_j ‖ΔL_j‖₂`.
    pub norm: f64,
    /// Constant of the perturbed datum; `+inf` when diverging, NaN when no
    /// value was obtained.
    pub value: f64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub radius: f64,
    pub base_value: f64,
    pub rows: Vec<StabilityRow>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    /// Largest value found by refining the worst sample with a pattern search
    /// over the ball; never below `max`.
    pub sup: f64,
    pub non_finite: usize,
}

/// Uniform draw from `{Δ : ‖Δ‖₂ <= radius}` of the given shape.
pub fn sample_ball(
    rng: &mut rng::Rng,
    rows: usize,
    cols: usize,
    radius: f64,
) -> Result<DMatrix<f64>> {
    if radius == 0.0 {
        return Ok(DMatrix::zeros(rows, cols));
    }
    for _ in 0..MAX_REJECTIONS {
        let d = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-radius..=radius));
        if linalg::op_norm(&d) <= radius {
            return Ok(d);
        }
    }
    Err(Error::Sampling(format!(
        "no perturbation inside the ball after {MAX_REJECTIONS} draws"
    )))
}

fn perturbed(datum: &BlDatum, deltas: &[DMatrix<f64>]) -> Result<BlDatum> {
    let maps = datum
        .maps()
        .iter()
        .zip(deltas)
        .map(|(l, d)| LinearMap::new(l.matrix() + d))
        .collect::<Result<Vec<_>>>()?;
    datum.with_maps(maps)
}

/// `(value, status)` of the perturbed global constant.
fn evaluate(datum: &BlDatum, deltas: &[DMatrix<f64>], policy: &NumericPolicy) -> (f64, String) {
    let d = match perturbed(datum, deltas) {
        Ok(d) => d,
        Err(_) => return (f64::NAN, "invalid".into()),
    };
    match compute_bl(&d, &LocalizationMode::Global, policy, None) {
        Ok(r) => match r.status {
            Status::Diverging => (f64::INFINITY, "diverging".into()),
            Status::Converged => (r.value, "converged".into()),
            Status::BoundaryPlateau => (r.value, "boundary_plateau".into()),
        },
        Err(Error::Undetermined { .. }) => (f64::NAN, "undetermined".into()),
        Err(_) => (f64::NAN, "invalid".into()),
    }
}

fn project(deltas: &mut [DMatrix<f64>], radius: f64) {
    for d in deltas {
        let norm = linalg::op_norm(d);
        if norm > radius {
            *d *= radius / norm;
        }
    }
}

/// Compass search for a larger finite value inside the ball, starting at
/// `start`, with steps halved from `radius/2` down to `1e-7·radius`.
fn refine_sup(
    datum: &BlDatum,
    start: Vec<DMatrix<f64>>,
    start_value: f64,
    radius: f64,
    policy: &NumericPolicy,
) -> f64 {
    let mut best = start;
    let mut best_value = start_value;
    let mut step = radius / 2.0;
    let mut evals = 0;
    while step > 1e-7 * radius && evals < REFINE_BUDGET {
        let mut improved = false;
        for j in 0..best.len() {
            for idx in 0..best[j].len() {
                for sign in [1.0, -1.0] {
                    let mut trial = best.clone();
                    trial[j][idx] += sign * step;
                    project(&mut trial, radius);
                    let (v, _) = evaluate(datum, &trial, policy);
                    evals += 1;
                    if v.is_finite() && v > best_value {
                        best_value = v;
                        best = trial;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }
    best_value
}

/// Samples `samples` perturbations of radius at most `radius`, recomputes the
/// constant for each, and refines the supremum from the worst sample.
pub fn stability_sweep(
    datum: &BlDatum,
    radius: f64,
    samples: usize,
    seed: u64,
    policy: &NumericPolicy,
) -> Result<StabilityReport> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(invalid("radius", "must be finite and nonnegative"));
    }
    if samples == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    let base = compute_bl(datum, &LocalizationMode::Global, policy, None)?;
    if base.status == Status::Diverging {
        return Err(invalid("datum", "the base constant diverges"));
    }
    let mut rows = Vec::with_capacity(samples);
    let mut worst: Option<(f64, Vec<DMatrix<f64>>)> = None;
    for i in 0..samples {
        let mut r = rng::stream(seed, tags::PERTURBATION, i as u64);
        let deltas = datum
            .maps()
            .iter()
            .map(|l| sample_ball(&mut r, l.target_dim(), l.n(), radius))
            .collect::<Result<Vec<_>>>()?;
        let norm = deltas.iter().map(linalg::op_norm).fold(0.0, f64::max);
        let (value, status) = evaluate(datum, &deltas, policy);
        if value.is_finite() && worst.as_ref().is_none_or(|(w, _)| value > *w) {
            worst = Some((value, deltas));
        }
        rows.push(StabilityRow {
            sample: i,
            norm,
            value,
            status,
        });
    }
    let mut finite: Vec<f64> = rows
        .iter()
        .map(|r| r.value)
        .filter(|v| v.is_finite())
        .collect();
    finite.sort_by(f64::total_cmp);
    let non_finite = samples - finite.len();
    let (min, median, max) = if finite.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let k = finite.len();
        let median = if k % 2 == 1 {
            finite[k / 2]
        } else {
            (finite[k / 2 - 1] + finite[k / 2]) / 2.0
        };
        (finite[0], median, finite[k - 1])
    };
    let sup = match worst {
        Some((v, d)) if radius > 0.0 => refine_sup(datum, d, v, radius, policy),
        Some((v, _)) => v,
        None => f64::NAN,
    };
    let sup = if non_finite > 0 { f64::INFINITY } else { sup };
    Ok(StabilityReport {
        radius,
        base_value: base.value,
        rows,
        min,
        median,
        max,
        sup,
        non_finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::catalog::*;

    #[test]
    fn zero_radius_reproduces_base() {
        let p = NumericPolicy::default();
        let r = stability_sweep(&young_2(), 0.0, 5, 1, &p).unwrap();
        for row in &r.rows {
            assert_eq!(row.value, r.base_value);
            assert_eq!(row.norm, 0.0);
        }
        assert_eq!(r.sup, r.base_value);
    }

    #[test]
    fn ball_samples_respect_radius() {
        let mut r = rng::stream(3, tags::PERTURBATION, 0);
        for _ in 0..50 {
            let d = sample_ball(&mut r, 2, 3, 0.1).unwrap();
            assert!(linalg::op_norm(&d) <= 0.1);
        }
    }

    #[test]
    fn diverging_base_is_error() {
        let p = NumericPolicy::default();
        assert!(stability_sweep(&infinite_example(), 0.01, 2, 0, &p).is_err());
    }

    #[test]
    fn reproducible() {
        let p = NumericPolicy::default();
        let a = stability_sweep(&loomis_whitney_2(), 0.05, 10, 9, &p).unwrap();
        let b = stability_sweep(&loomis_whitney_2(), 0.05, 10, 9, &p).unwrap();
        assert_eq!(a, b);
        assert!(a.sup >= a.max);
    }
}
