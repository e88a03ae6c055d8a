//! Numeric traces of the determinant bounds behind local boundedness.
//!
//! Given a datum, Gaussian inputs `A_j` and a sampled constant `c`, the
//! functions here replay the chain of inequalities that bounds
//! `Π_j (det A_j)^{p_j}` by a constant times `det(M + G)`, recording every
//! intermediate inequality with both sides evaluated. A trace is `ok` when
//! every step holds up to a relative slack of `1e-9`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::datum::{BlDatum, NumericPolicy};
use crate::error::{invalid, Error, Result};
use crate::finiteness::PartialLocalization;
use crate::frames::{
    greedy_indices, satisfies_prefix, satisfies_suffix, wedge_magnitude, AdmissibleSet, IndexTuple,
};
use crate::gauss::GaussianInput;
use crate::linalg;

const REL_SLACK: f64 = 1e-9;
const ABS_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct Step {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateTrace {
    pub steps: Vec<Step>,
    pub overall_ok: bool,
    pub constant_used: f64,
    /// Which branch of the partial argument ran (`localized` for the plain one).
    pub branch: &'static str,
}

impl CertificateTrace {
    fn new(branch: &'static str) -> Self {
        Self {
            steps: Vec::new(),
            overall_ok: true,
            constant_used: f64::NAN,
            branch,
        }
    }

    /// `lhs <= rhs` up to the trace slack.
    fn le(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        let ok = lhs <= rhs * (1.0 + REL_SLACK) + ABS_SLACK || lhs <= rhs;
        self.push(label, lhs, rhs, ok);
    }

    /// `lhs == rhs` up to the trace slack.
    fn eq(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        let ok = (lhs - rhs).abs() <= REL_SLACK * lhs.abs().max(rhs.abs()) + ABS_SLACK;
        self.push(label, lhs, rhs, ok);
    }

    fn push(&mut self, label: impl Into<String>, lhs: f64, rhs: f64, ok: bool) {
        self.overall_ok &= ok;
        self.steps.push(Step {
            label: label.into(),
            lhs,
            rhs,
            ok,
        });
    }

    /// Failing step with a message, for preconditions that do not hold.
    fn fail(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        self.push(label, lhs, rhs, false);
    }

    pub fn failures(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| !s.ok)
    }

    /// One JSON object per step.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serialises"));
            out.push('\n');
        }
        out
    }
}

/// `C = (c^{2 Σ p_j} Π_j p_j^{p_j n_j})^{-1}`.
pub fn localized_constant(datum: &BlDatum, c: f64) -> f64 {
    let sum_p: f64 = datum.exponents().iter().sum();
    let prod: f64 = datum
        .exponents()
        .iter()
        .zip(datum.target_dims())
        .map(|(p, k)| p.powf(p * k as f64))
        .product();
    1.0 / (c.powf(2.0 * sum_p) * prod)
}

/// `γ = min{((1-α)/n)^2, (c / (2 max_j n_j (‖L_j‖ + δ̂)^{n_j}))^2}` with operator norms.
pub fn gamma(datum: &BlDatum, alpha: f64, c: f64, deltahat: f64) -> f64 {
    let n = datum.n() as f64;
    let worst = datum
        .maps()
        .iter()
        .map(|l| {
            let k = l.target_dim() as f64;
            k * (l.op_norm() + deltahat).powf(k)
        })
        .fold(0.0, f64::max);
    ((1.0 - alpha) / n).powi(2).min((c / (2.0 * worst)).powi(2))
}

struct Setup {
    m: DMatrix<f64>,
    mu: Vec<f64>,
    e: DMatrix<f64>,
    lhs_total: f64,
    det_a: Vec<f64>,
}

fn setup(datum: &BlDatum, a: &GaussianInput, g: &DMatrix<f64>) -> Result<Setup> {
    datum.require_positive_exponents()?;
    if a.blocks().len() != datum.m() {
        return Err(Error::Shape(format!(
            "{} input blocks for {} maps",
            a.blocks().len(),
            datum.m()
        )));
    }
    let n = datum.n();
    let mut m = DMatrix::zeros(n, n);
    let mut det_a = Vec::with_capacity(datum.m());
    for (j, ((l, aj), p)) in datum
        .maps()
        .iter()
        .zip(a.blocks())
        .zip(datum.exponents())
        .enumerate()
    {
        if aj.nrows() != l.target_dim() {
            return Err(Error::Shape(format!("input block {j} has the wrong size")));
        }
        m += l.matrix().transpose() * aj * l.matrix() * *p;
        det_a.push(aj.determinant());
    }
    let m = linalg::symmetrize(&m);
    let (mu, e) = linalg::sym_eigen_desc(&(&m + g));
    let lhs_total = det_a
        .iter()
        .zip(datum.exponents())
        .map(|(d, p)| d.powf(*p))
        .product();
    Ok(Setup {
        m,
        mu,
        e,
        lhs_total,
        det_a,
    })
}

/// Steps shared by both certificates: the diagonal (Hadamard) bound and the
/// per-vector bound `<A_j L_j e_i, L_j e_i> <= μ_i / p_j` for the indices of
/// `tuple`, evaluated on the frame `e`.
fn diagonal_steps(
    trace: &mut CertificateTrace,
    datum: &BlDatum,
    a: &GaussianInput,
    s: &Setup,
    tuple: &IndexTuple,
) {
    for (j, ((l, aj), set)) in datum
        .maps()
        .iter()
        .zip(a.blocks())
        .zip(&tuple.sets)
        .enumerate()
    {
        let p = datum.exponents()[j];
        let q = l.matrix().transpose() * aj * l.matrix();
        let mut images = DMatrix::zeros(l.target_dim(), set.len());
        let mut diag_prod = 1.0;
        for (c, &i) in set.iter().enumerate() {
            let ei = s.e.column(i);
            images.set_column(c, &(l.matrix() * ei));
            let d = (ei.transpose() * &q * ei)[(0, 0)];
            diag_prod *= d;
            trace.le(format!("quadratic-form j={j} i={i}"), d, s.mu[i] / p);
        }
        let w = wedge_magnitude(&images);
        trace.le(
            format!("diagonal-bound j={j}"),
            s.det_a[j],
            diag_prod / (w * w),
        );
    }
}

/// Greedy selections from the frame `e`, one per map.
fn greedy_tuple(datum: &BlDatum, e: &DMatrix<f64>, policy: &NumericPolicy) -> IndexTuple {
    IndexTuple {
        sets: datum
            .maps()
            .iter()
            .map(|l| greedy_indices(l, e, policy))
            .collect(),
    }
}

fn prefix_steps(trace: &mut CertificateTrace, name: &str, a: &[f64]) {
    let mut acc = 0.0;
    for (k, ai) in a.iter().enumerate() {
        acc += ai;
        trace.le(format!("{name} prefix k={}", k + 1), acc, (k + 1) as f64);
    }
}

fn suffix_steps(trace: &mut CertificateTrace, name: &str, a: &[f64], from: usize) {
    let n = a.len();
    for k in from..=n {
        let tail: f64 = a[k..].iter().sum();
        trace.le(format!("{name} suffix k={k}"), (n - k) as f64, tail);
    }
}

/// Bound `Π_j (det A_j)^{p_j} <= C det(M + I)` with `C` built from `c_hat`.
pub fn certify_localized(
    datum: &BlDatum,
    a: &GaussianInput,
    c_hat: f64,
    policy: &NumericPolicy,
) -> Result<CertificateTrace> {
    if !(c_hat > 0.0) {
        return Err(invalid("c_hat", "must be positive"));
    }
    let n = datum.n();
    let s = setup(datum, a, &DMatrix::identity(n, n))?;
    let mut trace = CertificateTrace::new("localized");
    let constant = localized_constant(datum, c_hat);
    trace.constant_used = constant;
    trace.le("eigenvalue mu_n > 1", 1.0 - 1e-9, s.mu[n - 1]);

    let greedy = greedy_tuple(datum, &s.e, policy);
    for (j, set) in greedy.sets.iter().enumerate() {
        trace.eq(
            format!("greedy cardinality j={j}"),
            set.len() as f64,
            datum.map(j).target_dim() as f64,
        );
    }
    prefix_steps(&mut trace, "greedy", &greedy.a(datum.exponents(), n));

    let set = AdmissibleSet::build(datum, None)?;
    let (h, tuple) = set.h(datum, &s.e);
    if tuple.is_empty() {
        trace.fail("admissible tuple exists", 0.0, 1.0);
        return Ok(trace);
    }
    trace.le("h(e) >= c", c_hat, h);
    let a_vec = tuple.a(datum.exponents(), n);
    prefix_steps(&mut trace, "tuple", &a_vec);
    diagonal_steps(&mut trace, datum, a, &s, &tuple);
    for (j, set) in tuple.sets.iter().enumerate() {
        let p = datum.exponents()[j];
        let prod: f64 = set.iter().map(|&i| s.mu[i]).product();
        let bound = prod / (c_hat * c_hat * p.powi(set.len() as i32));
        trace.le(
            format!("det A_j <= (c^2 p_j^n_j)^-1 prod mu j={j}"),
            s.det_a[j],
            bound,
        );
    }
    let mu_a: f64 = s.mu.iter().zip(&a_vec).map(|(m, ai)| m.powf(*ai)).product();
    trace.le("prod det^p <= C prod mu^a", s.lhs_total, constant * mu_a);

    let det_s: f64 = s.mu.iter().product();
    let mut tele = det_s;
    let mut acc = 0.0;
    for k in 0..n {
        acc += a_vec[k];
        let next = if k + 1 < n { s.mu[k + 1] } else { 1.0 };
        let exponent = (k + 1) as f64 - acc;
        let factor = (next / s.mu[k]).powf(exponent);
        tele *= factor;
        trace.le(format!("telescoping factor k={}", k + 1), factor, 1.0);
    }
    trace.eq("telescoping identity", mu_a, tele);
    trace.le("final bound", s.lhs_total, constant * det_s);
    Ok(trace)
}

/// Bound `Π_j (det A_j)^{p_j} <= C det(M + G)` for a partial localisation,
/// with `G` replaced by the orthogonal projection onto `(ker G)^⊥`.
pub fn certify_partial(
    datum: &BlDatum,
    loc: &PartialLocalization,
    a: &GaussianInput,
    alpha: f64,
    c_hat: f64,
    deltahat: f64,
) -> Result<CertificateTrace> {
    if !(c_hat > 0.0) {
        return Err(invalid("c_hat", "must be positive"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1)"));
    }
    if !(deltahat >= 0.0) {
        return Err(invalid("deltahat", "must be nonnegative"));
    }
    let n = datum.n();
    if loc.n() != n {
        return Err(Error::Shape(format!(
            "G acts on R^{} but the datum on R^{n}",
            loc.n()
        )));
    }
    let g = loc.normalized_projection();
    let h0 = loc.h0_basis();
    let dim_h0 = h0.ncols();
    let s = setup(datum, a, &g)?;
    let gam = gamma(datum, alpha, c_hat, deltahat);
    let sum_pn: f64 = datum
        .exponents()
        .iter()
        .zip(datum.target_dims())
        .map(|(p, k)| p * k as f64)
        .sum();
    let det_s: f64 = s.mu.iter().product();
    let base = localized_constant(datum, c_hat);

    if s.mu[n - 1] >= gam {
        let mut trace = CertificateTrace::new("mu_n >= gamma");
        let constant = gam.powf(sum_pn - n as f64) * base;
        trace.constant_used = constant;
        trace.le("gamma <= mu_n", gam, s.mu[n - 1]);
        let set = AdmissibleSet::build(datum, None)?;
        let (h, tuple) = set.h(datum, &s.e);
        if tuple.is_empty() {
            trace.fail("admissible tuple exists", 0.0, 1.0);
            return Ok(trace);
        }
        trace.le("h(e) >= c", c_hat, h);
        let a_vec = tuple.a(datum.exponents(), n);
        prefix_steps(&mut trace, "tuple", &a_vec);
        diagonal_steps(&mut trace, datum, a, &s, &tuple);
        let mu_a: f64 = s.mu.iter().zip(&a_vec).map(|(m, ai)| m.powf(*ai)).product();
        trace.le("prod det^p <= C prod mu^a", s.lhs_total, base * mu_a);
        // Rescaled eigenvalues μ_i / γ >= 1 telescope as in the localised case.
        let mut acc = 0.0;
        for k in 0..n {
            acc += a_vec[k];
            let next = if k + 1 < n { s.mu[k + 1] / gam } else { 1.0 };
            let factor = (next / (s.mu[k] / gam)).powf((k + 1) as f64 - acc);
            trace.le(
                format!("rescaled telescoping factor k={}", k + 1),
                factor,
                1.0,
            );
        }
        trace.le(
            "prod mu^a <= gamma^(sum p n - n) det(M+G)",
            mu_a,
            gam.powf(sum_pn - n as f64) * det_s,
        );
        trace.le("final bound", s.lhs_total, constant * det_s);
        return Ok(trace);
    }

    let mut trace = CertificateTrace::new("mu_n < gamma");
    // 0-based position of the first eigenvalue below γ; the paper's ℓ is one more.
    let first_small = s.mu.iter().position(|&m| m < gam).expect("mu_n < gamma");
    let ell = first_small + 1;
    trace.le("n - dim H0 + 1 <= ell", (n - dim_h0 + 1) as f64, ell as f64);
    if ell < n - dim_h0 + 1 {
        return Ok(trace);
    }
    let mut v = s.e.clone();
    let mut max_dev: f64 = 0.0;
    for i in first_small..n {
        let ei = s.e.column(i);
        let gei = &g * ei;
        v.set_column(i, &(ei - &gei));
        max_dev = max_dev.max(gei.norm());
    }
    trace.le("max |e_i - v_i| <= gamma^1/2", max_dev, gam.sqrt());
    for i in 0..n {
        trace.le(format!("|v_{i}| <= 1"), v.column(i).norm(), 1.0);
    }
    let out_of_h0 = DMatrix::identity(n, n) - linalg::projector(h0);
    for i in first_small..n {
        trace.le(
            format!("v_{i} in H0"),
            (&out_of_h0 * v.column(i)).norm(),
            0.0,
        );
    }
    let det_v = v.determinant();
    let det_e = s.e.determinant();
    trace.le(
        "|wedge v - wedge e| <= (n-ell+1) max |e_i - v_i|",
        (det_v - det_e).abs(),
        (n - ell + 1) as f64 * max_dev,
    );
    trace.le("alpha <= |wedge v|", alpha, det_v.abs());

    // v has its columns from index ell - 1 on inside H0, so the suffix
    // constraint holds from ell - 1 on; that is what gives a_{>=ell} >= n-ell+1.
    let set = AdmissibleSet::build(datum, Some(first_small))?;
    let (h, tuple) = set.h(datum, &v);
    if tuple.is_empty() {
        trace.fail("admissible tuple exists", 0.0, 1.0);
        return Ok(trace);
    }
    trace.le("h_ell(v) >= c", c_hat, h);
    let a_vec = tuple.a(datum.exponents(), n);
    if !satisfies_prefix(&a_vec) || !satisfies_suffix(&a_vec, first_small) {
        trace.fail("tuple admissible", 0.0, 1.0);
    }
    prefix_steps(&mut trace, "tuple", &a_vec);
    suffix_steps(&mut trace, "tuple", &a_vec, first_small);

    for (j, (l, set)) in datum.maps().iter().zip(&tuple.sets).enumerate() {
        let mut lv = DMatrix::zeros(l.target_dim(), set.len());
        let mut le = DMatrix::zeros(l.target_dim(), set.len());
        for (c, &i) in set.iter().enumerate() {
            lv.set_column(c, &(l.matrix() * v.column(i)));
            le.set_column(c, &(l.matrix() * s.e.column(i)));
        }
        let wv = wedge_magnitude(&lv);
        let we = wedge_magnitude(&le);
        let k = l.target_dim() as f64;
        trace.le(format!("wedge L v >= c j={j}"), c_hat, wv);
        trace.le(
            format!("|wedge L v - wedge L e| <= n_j |L|^n_j gamma^1/2 j={j}"),
            (lv.determinant() - le.determinant()).abs(),
            k * l.op_norm().powf(k) * gam.sqrt(),
        );
        trace.le(format!("wedge L e >= c/2 j={j}"), c_hat / 2.0, we);
    }
    diagonal_steps(&mut trace, datum, a, &s, &tuple);

    let half = localized_constant(datum, c_hat / 2.0);
    let mu_a: f64 = s.mu.iter().zip(&a_vec).map(|(m, ai)| m.powf(*ai)).product();
    trace.le("prod det^p <= C(c/2) prod mu^a", s.lhs_total, half * mu_a);

    let head_a: f64 = a_vec[..first_small].iter().sum();
    let head_mu_a: f64 = (0..first_small).map(|i| s.mu[i].powf(a_vec[i])).product();
    let head_mu: f64 = s.mu[..first_small].iter().product();
    let head_gamma = gam.powf(head_a - first_small as f64);
    trace.le(
        "prod_{i<ell} mu^a <= gamma^(sum a - (ell-1)) prod mu",
        head_mu_a,
        head_gamma * head_mu,
    );

    let tail_mu_a: f64 = (first_small..n).map(|i| s.mu[i].powf(a_vec[i])).product();
    let tail_mu: f64 = s.mu[first_small..].iter().product();
    let a_ge = |i: usize| -> f64 { a_vec[i..].iter().sum() };
    for i in first_small..n.saturating_sub(1) {
        let ratio = s.mu[i + 1] / s.mu[i];
        trace.le(
            format!(
                "(mu_(i+1)/mu_i)^a_ge(i+1) <= (mu_(i+1)/mu_i)^(n-i) i={}",
                i + 1
            ),
            ratio.powf(a_ge(i + 1)),
            ratio.powf((n - i - 1) as f64),
        );
    }
    let a_tail = a_ge(first_small);
    let needed = (n - first_small) as f64;
    trace.le("a_ge(ell) >= n - ell + 1", needed, a_tail);
    trace.le(
        "prod_{i>=ell} mu^a <= mu_ell^(a_ge - (n-ell+1)) prod mu",
        tail_mu_a,
        s.mu[first_small].powf(a_tail - needed) * tail_mu,
    );
    trace.le("prod_{i>=ell} mu^a <= prod_{i>=ell} mu", tail_mu_a, tail_mu);

    let constant = head_gamma * half;
    trace.constant_used = constant;
    trace.le("final bound", s.lhs_total, constant * det_s);
    // The quadratic form of M is dominated by M + G: <e_i, M e_i> <= μ_i.
    for i in 0..n {
        let ei = s.e.column(i);
        trace.le(
            format!("<e_i, M e_i> <= mu_i i={i}"),
            (ei.transpose() * &s.m * ei)[(0, 0)],
            s.mu[i],
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::catalog::*;
    use crate::frames::{estimate_c, estimate_c_partial, FrameClass};
    use crate::rng;

    fn policy() -> NumericPolicy {
        NumericPolicy::default()
    }

    #[test]
    fn localized_loomis_whitney() {
        let lw = loomis_whitney_2();
        let c = estimate_c(&lw, FrameClass::Orthonormal, 1000, 1)
            .unwrap()
            .c_hat;
        let t = certify_localized(&lw, &GaussianInput::identity(&lw), c, &policy()).unwrap();
        assert!(t.overall_ok, "{}", t.to_json_lines());
        let last = t.steps.last().unwrap();
        assert!((last.lhs - 1.0).abs() < 1e-12);
        assert!((last.rhs - 4.0 * localized_constant(&lw, c)).abs() < 1e-9);
    }

    #[test]
    fn localized_holder_one_dimensional() {
        let d = holder(1, &[1.0]);
        for a in [1e-3, 0.5, 1.0, 7.0, 1e3] {
            let t = certify_localized(
                &d,
                &GaussianInput::scalar(&d, &[a]).unwrap(),
                1.0,
                &policy(),
            )
            .unwrap();
            assert!(t.overall_ok);
            assert_eq!(t.constant_used, 1.0);
        }
    }

    #[test]
    fn localized_rejects_zero_c() {
        let lw = loomis_whitney_2();
        assert!(certify_localized(&lw, &GaussianInput::identity(&lw), 0.0, &policy()).is_err());
    }

    #[test]
    fn partial_both_branches() {
        let p = policy();
        let d = single([0.0, 1.0], 1.0);
        let loc = PartialLocalization::diagonal(&[1.0, 0.0], &p).unwrap();
        let c = estimate_c_partial(&d, loc.h0_basis(), 0.5, 1000, 2)
            .unwrap()
            .c_hat;
        let mut branches = std::collections::BTreeSet::new();
        for a in [1e-4, 1e-2, 1.0, 1e2, 1e4] {
            let a = GaussianInput::scalar(&d, &[a]).unwrap();
            let t = certify_partial(&d, &loc, &a, 0.5, c, 0.05).unwrap();
            assert!(t.overall_ok, "{}", t.to_json_lines());
            branches.insert(t.branch);
        }
        assert_eq!(branches.len(), 2);
    }

    #[test]
    fn partial_identity_matches_rescaled_localized() {
        let p = policy();
        let y = young_2();
        let loc = PartialLocalization::diagonal(&[1.0, 1.0], &p).unwrap();
        let c = estimate_c(&y, FrameClass::Orthonormal, 1000, 3)
            .unwrap()
            .c_hat;
        let a = GaussianInput::scalar(&y, &[1.0, 2.0, 3.0]).unwrap();
        let t = certify_partial(&y, &loc, &a, 0.5, c, 0.05).unwrap();
        assert_eq!(t.branch, "mu_n >= gamma");
        assert!(t.overall_ok);
        let g = gamma(&y, 0.5, c, 0.05);
        let expect = g.powf(0.0) * localized_constant(&y, c);
        assert!((t.constant_used - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn json_lines_layout() {
        let lw = loomis_whitney_2();
        let t = certify_localized(&lw, &GaussianInput::identity(&lw), 0.7, &policy()).unwrap();
        let text = t.to_json_lines();
        assert_eq!(text.lines().count(), t.steps.len());
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            for key in ["label", "lhs", "rhs", "ok"] {
                assert!(v.get(key).is_some());
            }
        }
    }

    #[test]
    fn failing_step_fails_trace() {
        // A c larger than any wedge cannot be certified.
        let y = young_2();
        let mut r = rng::stream(0, 0, 0);
        let a = GaussianInput::random(&y, &mut r);
        let t = certify_localized(&y, &a, 5.0, &policy()).unwrap();
        assert!(!t.overall_ok);
        assert!(t.failures().count() > 0);
    }
}
