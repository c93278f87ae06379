use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pf2::cp::{cp_als_single, FitOptions};
use pf2::falff::{falff_window, preprocess_tensor, Centering, WindowSpec};
use pf2::metrics::{fms, match_components, two_sample_ttest};
use pf2::numerics::{nnls, orthogonal_procrustes, random_gaussian_matrix, Seed};
use pf2::parafac2::{pf2_als_single, pf2_constraint_gap};
use pf2::simgen::add_noise;
use pf2::{io, khatri_rao, reconstruct_cp, DenseTensor3};

fn tensor(dims: (usize, usize, usize), seed: u64) -> DenseTensor3 {
    let n = dims.0 * dims.1 * dims.2;
    DenseTensor3::new(dims, random_gaussian_matrix(n, 1, Seed(seed)).as_slice().to_vec()).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6)
}

fn non_increasing(trace: &[f64], norm_sq: f64) -> bool {
    trace.windows(2).all(|w| w[1] - w[0] <= 1e-10 * norm_sq)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unfoldings_preserve_norm(d in dims(), seed in any::<u64>()) {
        let t = tensor(d, seed);
        for mode in 1..=3 {
            let u = t.unfold(mode).unwrap();
            prop_assert!((u.norm_squared() - t.squared_norm()).abs() <= 1e-12 * t.squared_norm().max(1.0));
        }
    }

    #[test]
    fn cp_unfoldings_factor(d in dims(), r in 1usize..4, seed in any::<u64>()) {
        let a = random_gaussian_matrix(d.0, r, Seed(seed));
        let b = random_gaussian_matrix(d.1, r, Seed(seed ^ 1));
        let c = random_gaussian_matrix(d.2, r, Seed(seed ^ 2));
        let t = reconstruct_cp(&a, &b, &c).unwrap();
        let cases = [
            (1, &a * khatri_rao(&c, &b).unwrap().transpose()),
            (2, &b * khatri_rao(&c, &a).unwrap().transpose()),
            (3, &c * khatri_rao(&b, &a).unwrap().transpose()),
        ];
        for (mode, expected) in cases {
            prop_assert!((t.unfold(mode).unwrap() - expected).amax() <= 1e-10);
        }
    }

    #[test]
    fn tns3_round_trip_is_bit_exact(d in dims(), seed in any::<u64>()) {
        let t = tensor(d, seed);
        let mut buf = Vec::new();
        io::write_tns3(&t, &mut buf).unwrap();
        prop_assert_eq!(io::read_tns3(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn fms_ignores_sign_and_scale(rows in 3usize..12, r in 1usize..5, seed in any::<u64>(),
                                  scales in prop::collection::vec(0.01f64..100.0, 4),
                                  signs in prop::collection::vec(any::<bool>(), 4)) {
        let u = random_gaussian_matrix(rows, r, Seed(seed));
        let mut v = u.clone();
        for c in 0..r {
            v.column_mut(c).scale_mut(if signs[c] { -scales[c] } else { scales[c] });
        }
        let m = match_components(&[&u], &[&v]).unwrap();
        prop_assert!((fms(&u, &v, &m).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn matching_inverts_applied_permutation(r in 1usize..6, seed in any::<u64>(), shuffle in any::<u64>()) {
        let u = random_gaussian_matrix(30, r, Seed(seed));
        let mut perm: Vec<usize> = (0..r).collect();
        let mut rng = Seed(shuffle).rng();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let mut w = u.clone();
        for (dst, &src) in perm.iter().enumerate() {
            w.set_column(dst, &u.column(src));
        }
        let m = match_components(&[&u], &[&w]).unwrap();
        for c in 0..r {
            prop_assert_eq!(perm[m.perm[c]], c);
        }
    }

    #[test]
    fn preprocess_is_idempotent(d in (1usize..5, 2usize..8, 1usize..5), seed in any::<u64>()) {
        let t = tensor(d, seed);
        let once = preprocess_tensor(&t, Centering::Fiber).unwrap();
        let twice = preprocess_tensor(&once, Centering::Fiber).unwrap();
        let drift = once.values().iter().zip(twice.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(drift <= 1e-12);
    }

    #[test]
    fn falff_is_a_scale_free_fraction(seed in any::<u64>(), scale in 1e-3f64..1e3, neg in any::<bool>()) {
        let x = random_gaussian_matrix(32, 1, Seed(seed)).as_slice().to_vec();
        let spec = WindowSpec { window: 32, stride: 32, f_lo: 0.05, f_hi: 0.2 };
        let f = falff_window(&x, &spec, 1.0).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let s = if neg { -scale } else { scale };
        let y: Vec<f64> = x.iter().map(|v| v * s).collect();
        prop_assert!((falff_window(&y, &spec, 1.0).unwrap() - f).abs() <= 1e-12);
    }

    #[test]
    fn noise_has_exact_relative_norm(d in dims(), eta in 0.0f64..2.0, seed in any::<u64>()) {
        let t = tensor(d, seed);
        let y = add_noise(&t, eta, Seed(seed ^ 7)).unwrap();
        let diff = y.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        prop_assert!((diff - eta * t.frobenius_norm()).abs() <= 1e-12 * t.frobenius_norm());
    }

    #[test]
    fn ttest_swaps_sign(x in prop::collection::vec(-5.0f64..5.0, 3..10), y in prop::collection::vec(-5.0f64..5.0, 3..10)) {
        let a = two_sample_ttest(&x, &y);
        let b = two_sample_ttest(&y, &x);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a.t + b.t).abs() <= 1e-9 * a.t.abs().max(1.0));
            prop_assert!((a.p - b.p).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p));
            prop_assert_eq!(a.df, (x.len() + y.len() - 2) as f64);
        }
    }

    #[test]
    fn nnls_satisfies_kkt(rows in 3usize..10, cols in 1usize..5, seed in any::<u64>()) {
        let m = random_gaussian_matrix(rows, cols, Seed(seed));
        let y = DVector::from_column_slice(random_gaussian_matrix(rows, 1, Seed(seed ^ 3)).as_slice());
        let sol = nnls(&m, &y).unwrap();
        let grad = m.transpose() * (&m * &sol.x - &y);
        for i in 0..cols {
            prop_assert!(sol.x[i] >= 0.0);
            if sol.x[i] > 0.0 {
                prop_assert!(grad[i].abs() <= 1e-8);
            } else {
                prop_assert!(grad[i] >= -1e-8);
            }
        }
    }

    #[test]
    fn procrustes_is_orthonormal(rows in 2usize..9, cols in 1usize..4, seed in any::<u64>()) {
        prop_assume!(cols <= rows);
        let f = random_gaussian_matrix(rows, cols, Seed(seed));
        let p = orthogonal_procrustes(&f).unwrap().p;
        prop_assert!((p.transpose() * &p - DMatrix::<f64>::identity(cols, cols)).amax() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn als_traces_never_increase(d in (3usize..7, 4usize..8, 2usize..6), r in 1usize..4, seed in any::<u64>()) {
        let t = tensor(d, seed);
        let opts = FitOptions { rank: r.min(d.1), max_iterations: 150, n_starts: 1, ..Default::default() };
        let nsq = t.squared_norm();
        let cp = cp_als_single(&t, &opts, Seed(seed ^ 11)).unwrap();
        prop_assert!(non_increasing(&cp.report.loss_trace, nsq));
        for nonneg in [false, true] {
            let run = pf2_als_single(&t, &opts, nonneg, Seed(seed ^ 13)).unwrap();
            prop_assert!(non_increasing(&run.report.loss_trace, nsq));
            prop_assert!(pf2_constraint_gap(&run.model.b_k()) <= 1e-8);
            if nonneg {
                prop_assert!(run.model.c.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
