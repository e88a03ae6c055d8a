use blconst::datum::catalog::{loomis_whitney_2, rotated_pair};
use blconst::datum::NumericPolicy;
use blconst::gauss::{compute_bl, rank_one_2d_oracle, LocalizationMode};
use blconst::stability::stability_sweep;

/// `max 1/|det|` over rows `e_1 + u`, `e_2 + v` with `|u|, |v| <= r`, by a
/// grid over both boundary circles (the minimum of `|det|` is attained with
/// both perturbations on the boundary).
fn lw_ball_sup(r: f64) -> f64 {
    let k = 2000;
    let mut best = f64::INFINITY;
    let angles: Vec<f64> = (0..k)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / k as f64)
        .collect();
    for a in &angles {
        let (r1x, r1y) = (1.0 + r * a.cos(), r * a.sin());
        for b in &angles {
            let (r2x, r2y) = (r * b.cos(), 1.0 + r * b.sin());
            best = best.min((r1x * r2y - r1y * r2x).abs());
        }
    }
    1.0 / best
}

#[test]
fn lw_ball_supremum() {
    let p = NumericPolicy::default();
    let rep = stability_sweep(&loomis_whitney_2(), 0.05, 200, 1, &p).unwrap();
    assert_eq!(rep.non_finite, 0);
    let oracle = lw_ball_sup(0.05);
    assert!((oracle - 1.0 / 0.95f64.powi(2)).abs() < 1e-9);
    assert!(rep.max <= oracle + 1e-4);
    assert!((rep.sup - oracle).abs() < 1e-4, "{} vs {oracle}", rep.sup);
    for row in &rep.rows {
        assert!(row.value.is_finite());
    }
}

#[test]
fn samples_agree_with_rank_one_oracle() {
    let p = NumericPolicy::default();
    let rep = stability_sweep(&loomis_whitney_2(), 0.2, 20, 4, &p).unwrap();
    assert!(rep.min >= 1.0 / 1.2f64.powi(2) - 1e-6);
    assert!(rep.max <= 1.0 / 0.8f64.powi(2) + 1e-6);
}

#[test]
fn rotated_family_secant() {
    let p = NumericPolicy::default();
    for (theta, expect) in [
        (0.0, 1.0),
        (std::f64::consts::PI / 6.0, 1.1547005383792517),
        (std::f64::consts::PI / 3.0, 2.0),
    ] {
        let d = rotated_pair(theta);
        let v = compute_bl(&d, &LocalizationMode::Global, &p, None)
            .unwrap()
            .value;
        assert!((v - expect).abs() < 1e-6, "{theta}: {v}");
        assert!((rank_one_2d_oracle(&d, &p).unwrap() - expect).abs() < 1e-9);
        let rep = stability_sweep(&d, 0.0, 3, 0, &p).unwrap();
        assert!(rep.rows.iter().all(|r| (r.value - expect).abs() < 1e-6));
    }
}
