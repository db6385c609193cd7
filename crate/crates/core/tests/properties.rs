use ndarray::Array2;
use proptest::prelude::*;

use sparsecov::cvselect::{cv_threshold, CvConfig, SplitRule};
use sparsecov::estimators::{self, OffDiagProfile};
use sparsecov::rates::{self, RateQuery};
use sparsecov::twosample::bh_discoveries;
use sparsecov::{Centering, RngSeed, SampleMatrix};

fn sample_strategy(max_n: usize, max_p: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..=max_n, 2..=max_p).prop_flat_map(|(n, p)| {
        prop::collection::vec(-3.0f64..3.0, n * p).prop_map(move |v| Array2::from_shape_vec((n, p), v).unwrap())
    })
}

fn cov(x: &Array2<f64>) -> Array2<f64> {
    estimators::empirical_cov_array(x.view(), Centering::KnownZeroMean).unwrap()
}

fn q_direct(s: &Array2<f64>, tau: f64) -> f64 {
    let p = s.nrows();
    let mut total = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j && s[[i, j]].abs() > tau {
                total += s[[i, j]] * s[[i, j]];
            }
        }
    }
    total
}

fn q_at(s: &Array2<f64>, tau: f64) -> f64 {
    estimators::q_offdiag(&estimators::threshold_array(s, tau).unwrap()).value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn q_is_nonincreasing_in_tau(x in sample_strategy(12, 8), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let s = cov(&x);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(q_at(&s, hi) <= q_at(&s, lo) + 1e-12);
    }

    #[test]
    fn mask_is_strict_and_diagonal_untouched(x in sample_strategy(12, 8), tau in 0.0f64..2.0) {
        let s = cov(&x);
        let t = estimators::threshold_array(&s, tau).unwrap();
        for ((i, j), &v) in s.indexed_iter() {
            if i == j {
                prop_assert_eq!(t.entries[[i, j]], v);
                prop_assert!(!t.kept_mask[[i, j]]);
            } else {
                prop_assert_eq!(t.kept_mask[[i, j]], v.abs() > tau);
                prop_assert_eq!(t.entries[[i, j]], if v.abs() > tau { v } else { 0.0 });
            }
        }
        // an entry sitting exactly on the threshold is dropped
        let boundary = s[[0, 1]].abs();
        prop_assert!(!estimators::threshold_array(&s, boundary).unwrap().kept_mask[[0, 1]]);
    }

    #[test]
    fn q_endpoints(x in sample_strategy(12, 8)) {
        let s = cov(&x);
        let q0 = q_at(&s, 0.0);
        let p = s.nrows();
        let all: f64 = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| s[[i, j]].powi(2)).sum();
        prop_assert!((q0 - all).abs() <= 1e-12 * (1.0 + all));
        let max_off = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| s[[i, j]].abs()).fold(0.0, f64::max);
        prop_assert_eq!(q_at(&s, max_off), 0.0);
    }

    #[test]
    fn profile_matches_direct(x in sample_strategy(12, 8), tau in 0.0f64..2.0) {
        let s = cov(&x);
        let prof = OffDiagProfile::squares(s.view());
        let direct = q_direct(&s, tau);
        prop_assert!((prof.eval(tau) - direct).abs() <= 1e-10 * (1.0 + direct));
    }

    #[test]
    fn coordinate_permutation_invariance(x in sample_strategy(10, 6), tau in 0.0f64..1.5, shift in 1usize..6) {
        let p = x.ncols();
        let perm: Vec<usize> = (0..p).map(|j| (j + shift) % p).collect();
        let xp = x.select(ndarray::Axis(1), &perm);
        let (s, sp) = (cov(&x), cov(&xp));
        prop_assert!((q_at(&s, tau) - q_at(&sp, tau)).abs() <= 1e-10 * (1.0 + q_at(&s, tau)));
        let lr = |m: &Array2<f64>| estimators::lr_functional(&estimators::threshold_array(m, tau).unwrap(), 1.0).unwrap().value;
        prop_assert!((lr(&s) - lr(&sp)).abs() <= 1e-10 * (1.0 + lr(&s)));
        let d = |m: Array2<f64>| estimators::d_diag(&SampleMatrix::new(m, Centering::KnownZeroMean).unwrap()).unwrap().value;
        let (d1, d2) = (d(x.clone()), d(xp));
        prop_assert!((d1 - d2).abs() <= 1e-10 * (1.0 + d1.abs()));
    }

    #[test]
    fn scaling_covariance(x in sample_strategy(10, 6), tau in 0.0f64..1.5, c in 0.2f64..5.0, r in 0.5f64..2.0) {
        let s = cov(&x);
        let sc = cov(&(&x * c));
        let c2 = c * c;
        let (q, qc) = (q_at(&s, tau), q_at(&sc, tau * c2));
        prop_assert!((qc - q * c2 * c2).abs() <= 1e-9 * (1.0 + qc));
        let lr = |m: &Array2<f64>, t: f64| estimators::lr_functional(&estimators::threshold_array(m, t).unwrap(), r).unwrap().value;
        let (l, lc) = (lr(&s, tau), lr(&sc, tau * c2));
        prop_assert!((lc - l * c2.powf(r)).abs() <= 1e-9 * (1.0 + lc));
    }

    #[test]
    fn cv_is_deterministic_and_on_grid(x in sample_strategy(30, 6).prop_filter("n ≥ 10", |x| x.nrows() >= 10), seed in any::<u64>(), j in 2usize..30) {
        let xs = SampleMatrix::new(x, Centering::KnownZeroMean).unwrap();
        let cfg = CvConfig { m: 3, j, split_rule: SplitRule::Fraction(0.5), seed: RngSeed::new(seed), ..CvConfig::default() };
        let a = cv_threshold(&xs, &cfg).unwrap();
        let b = cv_threshold(&xs, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.grid.len(), j);
        prop_assert!((1..=j).contains(&a.j_star));
        let best = a.losses.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(a.losses[a.j_star - 1], best);
        prop_assert!(a.losses[..a.j_star - 1].iter().all(|&l| l > best));
        let (n, p) = (xs.n() as f64, xs.p() as f64);
        let expect = a.j_star as f64 * a.delta * (p.ln() / n).sqrt();
        prop_assert!((a.tau_final - expect).abs() <= 1e-12 * (1.0 + expect));
        prop_assert!(a.tau_final >= 0.0 && a.tau_final <= a.m_hat * (a.n1 as f64 / n).sqrt() + 1e-12);
    }

    #[test]
    fn quadratic_rates_monotone(n in 10usize..2000, p in 3usize..5000, q in 0.0f64..1.9, radius in 0.1f64..10.0) {
        let base = RateQuery { n, p, q, radius, ..RateQuery::default() };
        let psi = rates::psi_quad(&base).unwrap();
        prop_assert!(rates::phi_quad(&base).unwrap() <= psi + 1e-15);
        let v = rates::psi_quad(&RateQuery { n: n * 2, ..base }).unwrap();
        prop_assert!(v <= psi + 1e-15);
        let v = rates::psi_quad(&RateQuery { p: p * 2, ..base }).unwrap();
        prop_assert!(v >= psi - 1e-15);
        let v = rates::psi_quad(&RateQuery { radius: radius * 2.0, ..base }).unwrap();
        prop_assert!(v >= psi - 1e-15);
    }

    #[test]
    fn lr_rates_monotone(n in 10usize..2000, p in 3usize..5000, r in 0.2f64..3.0, qf in 0.0f64..0.99, radius in 0.1f64..10.0) {
        let base = RateQuery { n, p, q: qf * r, radius, r, ..RateQuery::default() };
        let psi = rates::psi_lr(&base).unwrap();
        prop_assert!(rates::phi_lr(&base).unwrap() <= psi + 1e-15);
        let v = rates::psi_lr(&RateQuery { n: n * 2, ..base }).unwrap();
        prop_assert!(v <= psi + 1e-15);
        let v = rates::psi_lr(&RateQuery { p: p * 2, ..base }).unwrap();
        prop_assert!(v >= psi - 1e-15);
        let v = rates::psi_lr(&RateQuery { radius: radius * 2.0, ..base }).unwrap();
        prop_assert!(v >= psi - 1e-15);
    }

    #[test]
    fn detection_envelope(n in 20usize..2000, p in 3usize..5000, r in 1.0f64..2.5, qf in 0.0f64..0.9, delta in 0.01f64..0.5, extra in 0.0f64..2.0) {
        let qr = RateQuery { n, p, q: qf * r, r, ..RateQuery::default() };
        let kb = rates::kappa_bar(&qr, 1.0, delta).unwrap();
        if let Ok(kl) = rates::kappa_lower(&qr) {
            prop_assert!(kl <= kb + 1e-12);
        }
        let env = rates::envelope(&qr, 1.0, delta, kb * (1.0 + extra) + 1e-9).unwrap();
        prop_assert!(env.separates());
        prop_assert!(env.s0 < env.s1);
    }

    #[test]
    fn bh_at_least_bonferroni(pv in prop::collection::vec(0.0f64..1.0, 1..60), alpha in 0.001f64..0.3) {
        let m = pv.len() as f64;
        let bonf = pv.iter().filter(|&&v| v <= alpha / m).count();
        prop_assert!(bh_discoveries(&pv, alpha) >= bonf);
    }
}
