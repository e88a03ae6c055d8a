use blconst::datum::catalog::loomis_whitney_2;
use blconst::datum::NumericPolicy;
use blconst::kakeya::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn policy() -> NumericPolicy {
    NumericPolicy::default()
}

/// Area of `{|(x - c)·u| <= δ} ∩ [-1,1]^2` for a unit normal `u`, by slicing
/// along the axis where the normal is largest and integrating the clipped
/// chord length with a fine midpoint rule.
fn strip_area_oracle(c: [f64; 2], normal: [f64; 2], delta: f64) -> f64 {
    let (a, b, ca, cb) = if normal[1].abs() >= normal[0].abs() {
        (normal[0], normal[1], c[0], c[1])
    } else {
        (normal[1], normal[0], c[1], c[0])
    };
    let steps = 200_000;
    let h = 2.0 / steps as f64;
    let mut area = 0.0;
    for k in 0..steps {
        let s = -1.0 + (k as f64 + 0.5) * h;
        // |a (s - ca) + b (t - cb)| <= δ solved for t.
        let mid = cb - a * (s - ca) / b;
        let half = delta / b.abs();
        let lo = (mid - half).max(-1.0);
        let hi = (mid + half).min(1.0);
        area += (hi - lo).max(0.0) * h;
    }
    area
}

#[test]
fn single_family_matches_strip_areas() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let delta = 0.05;
    let mut tubes = Vec::new();
    let mut exact = 0.0;
    for _ in 0..12 {
        let th: f64 = rng.random_range(-0.3..0.3);
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let dir = [th.sin(), th.cos()];
        exact += strip_area_oracle(c, [dir[1], -dir[0]], delta);
        tubes.push(
            Tube::new(
                DVector::from_column_slice(&c),
                DMatrix::from_column_slice(2, 1, &dir),
                delta,
                0,
            )
            .unwrap(),
        );
    }
    let fam =
        TubeFamily::new(0, tubes, 0.3, DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
    for res in [400, 800] {
        let lhs = kakeya_lhs(&[fam.clone()], &[1.0], GridSpec::new(res).unwrap()).unwrap();
        assert!(
            (lhs - exact).abs() < 0.02 * exact,
            "res {res}: {lhs} vs {exact}"
        );
    }
}

#[test]
fn fattening_never_decreases_lhs() {
    let lw = loomis_whitney_2();
    let grid = GridSpec::new(200).unwrap();
    for seed in 0..3 {
        let fams = random_families(&lw, 0.02, 0.1, &[8, 8], seed, &policy()).unwrap();
        let base = kakeya_lhs(&fams, lw.exponents(), grid).unwrap();
        let mut prev = base;
        for c in [0.05, 0.2, 0.5] {
            let wide: Vec<_> = fams
                .iter()
                .map(|f| coarsen_tubes(f, c, 0.1).unwrap())
                .collect();
            let v = kakeya_lhs(&wide, lw.exponents(), grid).unwrap();
            assert!(v >= prev, "c = {c}: {v} < {prev}");
            prev = v;
        }
    }
}

#[test]
fn fattened_tube_contains_meeting_cubes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (delta, nu) = (0.01, 0.1);
    let side = delta / nu;
    let fams = random_families(&loomis_whitney_2(), delta, nu, &[10, 10], 3, &policy()).unwrap();
    let c = 2.0 * 2f64.sqrt();
    for fam in &fams {
        let wide = coarsen_tubes(fam, c, nu).unwrap();
        for (t, tw) in fam.tubes.iter().zip(&wide.tubes) {
            let mut hits = 0;
            while hits < 50 {
                // A cube whose centre lies within δ + side·√2/2 may meet T; keep those that do.
                let lo = DVector::from_fn(2, |i, _| t.center[i] + rng.random_range(-0.5..0.5));
                let probe = DVector::from_fn(2, |i, _| lo[i] + rng.random_range(0.0..side));
                if !t.contains(&probe) {
                    continue;
                }
                hits += 1;
                for corner in 0..4 {
                    let p = DVector::from_fn(2, |i, _| {
                        lo[i] + if corner >> i & 1 == 1 { side } else { 0.0 }
                    });
                    assert!(tw.contains(&p));
                }
            }
        }
    }
}

#[test]
fn grid_refinement_is_stable() {
    let lw = loomis_whitney_2();
    let fams = random_families(&lw, 0.05, 0.1, &[10, 10], 2, &policy()).unwrap();
    let at = |r| kakeya_lhs(&fams, lw.exponents(), GridSpec::new(r).unwrap()).unwrap();
    let (a, b, c) = (at(200), at(400), at(800));
    let est = (b - a).abs();
    assert!((c - b).abs() < 2.0 * est + 1e-3 * b, "{a} {b} {c}");
}

#[test]
fn tilted_random_families_respect_pair_bound() {
    let lw = loomis_whitney_2();
    let fams = random_families(&lw, 0.02, 0.2, &[50, 50], 9, &policy()).unwrap();
    let r = kakeya_ratio(&fams, lw.exponents(), GridSpec::new(800).unwrap()).unwrap();
    assert!(r.ratio <= 4.0 / 0.2f64.cos() * 1.02, "{}", r.ratio);
}

#[test]
fn partition_of_tight_cluster_is_single() {
    let nu = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tubes: Vec<_> = (0..100)
        .map(|_| {
            let th: f64 = rng.random_range(-nu / 2.0..nu / 2.0) / 2.0;
            Tube::new(
                DVector::zeros(2),
                DMatrix::from_column_slice(2, 1, &[th.sin(), th.cos()]),
                0.1,
                0,
            )
            .unwrap()
        })
        .collect();
    let fam = TubeFamily::new(0, tubes, nu, DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
    let parts = partition_by_direction(&fam, nu);
    assert_eq!(parts.len(), 1);
    assert_eq!(parts[0].len(), 100);
}

#[test]
fn partition_subfamilies_satisfy_invariant() {
    let fams = random_families(&loomis_whitney_2(), 0.05, 0.8, &[60, 60], 4, &policy()).unwrap();
    for fam in &fams {
        let parts = partition_by_direction(fam, 0.1);
        assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), fam.len());
        for p in parts {
            TubeFamily::new(p.family, p.tubes.clone(), 0.1, p.reference_kernel.clone()).unwrap();
        }
    }
}

#[test]
fn kappa_is_reproducible() {
    let g = GridSpec::new(100).unwrap();
    let a = measure_kappa(&loomis_whitney_2(), 0.02, 0.2, 1, &[5, 5], g, 77, &policy()).unwrap();
    let b = measure_kappa(&loomis_whitney_2(), 0.02, 0.2, 1, &[5, 5], g, 77, &policy()).unwrap();
    assert_eq!(a.kappa_hat.to_bits(), b.kappa_hat.to_bits());
}
