use proptest::prelude::*;
use xgoal_core::numkit::{DenseMatrix, Rng, SparseMatrix};
use xgoal_core::transform::{negative_transform, permute_rows, positive_transform, DropoutMask, TransformConfig};

const DRAWS: usize = 10_000;

/// Entry-wise means of `DRAWS` positive views of a 4×4 ones matrix and a
/// 4-cycle adjacency of ones.
fn dropout_means(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let x = DenseMatrix::from_fn(4, 4, |_, _| 1.0);
    let a = SparseMatrix::from_triplets(
        4,
        4,
        &[
            (0, 1, 1.0),
            (1, 0, 1.0),
            (1, 2, 1.0),
            (2, 1, 1.0),
            (2, 3, 1.0),
            (3, 2, 1.0),
        ],
    )
    .unwrap();
    let cfg = TransformConfig::new(0.5, seed).unwrap();
    let mut rng = Rng::new(seed);
    let mut sx = vec![0.0; 16];
    let mut sa = vec![0.0; a.nnz()];
    for _ in 0..DRAWS {
        let (xp, ap) = positive_transform(&x, &a, &cfg, &mut rng).unwrap();
        sx.iter_mut().zip(xp.data()).for_each(|(s, v)| *s += v);
        sa.iter_mut().zip(ap.values()).for_each(|(s, v)| *s += v);
    }
    let mean = |s: Vec<f64>| s.into_iter().map(|v| v / DRAWS as f64).collect();
    (mean(sx), mean(sa))
}

#[test]
fn inverted_dropout_is_unbiased() {
    let (mx, ma) = dropout_means(2024);
    // each entry of a draw is 0 or 2, so one mean has standard deviation 1/sqrt(DRAWS)
    let band = 3.0 / (DRAWS as f64).sqrt();
    for m in mx.iter().chain(&ma) {
        assert!((m - 1.0).abs() < band, "{m}");
    }
    let grand = mx.iter().sum::<f64>() / mx.len() as f64;
    assert!((grand - 1.0).abs() < 0.01, "{grand}");
}

#[test]
fn keep_all_and_zero_inputs() {
    let mut rng = Rng::new(5);
    let x = DenseMatrix::from_fn(3, 2, |_, _| rng.normal());
    let a = SparseMatrix::from_triplets(3, 3, &[(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
    let (xi, ai) = DropoutMask::keep_all(6, 2).apply(&x, &a).unwrap();
    assert_eq!((xi, ai), (x.clone(), a.clone()));

    let cfg = TransformConfig::new(0.3, 1).unwrap();
    let (xz, az) = positive_transform(
        &DenseMatrix::zeros(3, 2),
        &a.with_values(vec![0.0, 0.0]).unwrap(),
        &cfg,
        &mut rng,
    )
    .unwrap();
    assert!(xz.data().iter().chain(az.values()).all(|&v| v == 0.0));
}

#[test]
fn config_rejects_degenerate_probabilities() {
    for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
        assert!(TransformConfig::new(p, 0).is_err(), "{p}");
    }
}

fn row_bits(m: &DenseMatrix) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = m.row_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    rows.sort();
    rows
}

#[test]
fn identity_permutation_is_a_no_op() {
    let x = DenseMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64);
    assert_eq!(permute_rows(&x, &[0, 1, 2, 3, 4]).unwrap(), x);
    assert!(permute_rows(&x, &[0, 0, 2, 3, 4]).is_err());
    assert!(negative_transform(&DenseMatrix::zeros(1, 3), &mut Rng::new(0)).is_err());
}

proptest! {
    #[test]
    fn negative_view_preserves_row_multiset(seed in any::<u64>(), n in 2usize..40, d in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = DenseMatrix::from_fn(n, d, |_, _| rng.normal());
        let y = negative_transform(&x, &mut rng).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert_eq!(row_bits(&y), row_bits(&x));
    }

    #[test]
    fn transforms_replay_from_seed(seed in any::<u64>()) {
        let x = DenseMatrix::from_fn(8, 3, |i, j| (i * 3 + j) as f64);
        let a = SparseMatrix::identity(8);
        let cfg = TransformConfig::new(0.5, seed).unwrap();
        let run = || {
            let mut rng = Rng::new(seed);
            (positive_transform(&x, &a, &cfg, &mut rng).unwrap(), negative_transform(&x, &mut rng).unwrap())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn random_8x3_multiset() {
    let mut rng = Rng::new(31);
    let x = DenseMatrix::from_fn(8, 3, |_, _| rng.normal());
    assert_eq!(row_bits(&negative_transform(&x, &mut rng).unwrap()), row_bits(&x));
}
