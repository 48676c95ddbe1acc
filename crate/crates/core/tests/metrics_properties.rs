use schedlab::data::ar1_covariance;
use schedlab::metrics::{covariance_error, mmd_rbf, sliced_wasserstein};
use schedlab::numeric::{gaussian, Cholesky, Rng, Tensor};

fn shifted(x: &Tensor, mu: &[f64]) -> Tensor {
    let mut y = x.clone();
    for i in 0..y.rows() {
        for (v, m) in y.row_mut(i).iter_mut().zip(mu) {
            *v += m;
        }
    }
    y
}

fn rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let d = x.row_len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new(vec![idx.len(), d], data).unwrap()
}

fn shuffle(rng: &mut Rng, v: &mut [usize]) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.below(i + 1));
    }
}

#[test]
fn sliced_wasserstein_mean_shift_band() {
    let n = 10_000;
    let a = gaussian(&mut Rng::seed(1), &[n, 2]).unwrap();
    let b = shifted(&gaussian(&mut Rng::seed(2), &[n, 2]).unwrap(), &[0.6, 0.8]);
    let v = sliced_wasserstein(&a, &b, 128, &mut Rng::seed(3)).unwrap();
    // Expected |<mu, theta>| over the circle is 2/pi.
    assert!((0.5..=0.95).contains(&v), "{v}");
    assert!((v - 2.0 / std::f64::consts::PI).abs() < 0.1, "{v}");
}

#[test]
fn sliced_wasserstein_zero_only_for_same_multiset() {
    let a = gaussian(&mut Rng::seed(4), &[64, 3]).unwrap();
    let mut idx: Vec<usize> = (0..64).collect();
    shuffle(&mut Rng::seed(5), &mut idx);
    let permuted = rows(&a, &idx);
    assert!(sliced_wasserstein(&a, &permuted, 32, &mut Rng::seed(6)).unwrap() < 1e-12);
    let mut moved = a.clone();
    moved.row_mut(0)[0] += 1.0;
    assert!(sliced_wasserstein(&a, &moved, 32, &mut Rng::seed(6)).unwrap() > 1e-6);
}

/// Unbiased MMD² averaged over disjoint splits of same-distribution data
/// stays within three permutation-null standard deviations of zero.
#[test]
fn mmd_unbiased_against_permutation_null() {
    let mut rng = Rng::seed(7);
    let half = 40;
    let trials = 200;
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let x = gaussian(&mut rng, &[2 * half, 2]).unwrap();
        let a = rows(&x, &(0..half).collect::<Vec<_>>());
        let b = rows(&x, &(half..2 * half).collect::<Vec<_>>());
        values.push(mmd_rbf(&a, &b, 1.0).unwrap());
    }
    let mean = values.iter().sum::<f64>() / trials as f64;

    // Null spread from random relabelings of one pooled draw.
    let pool = gaussian(&mut rng, &[2 * half, 2]).unwrap();
    let mut null = Vec::new();
    let mut idx: Vec<usize> = (0..2 * half).collect();
    for _ in 0..trials {
        shuffle(&mut rng, &mut idx);
        let a = rows(&pool, &idx[..half]);
        let b = rows(&pool, &idx[half..]);
        null.push(mmd_rbf(&a, &b, 1.0).unwrap());
    }
    let nm = null.iter().sum::<f64>() / trials as f64;
    let null_sd = (null.iter().map(|v| (v - nm).powi(2)).sum::<f64>() / trials as f64).sqrt();
    // Standard error of the mean of `trials` draws.
    let se = null_sd / (trials as f64).sqrt();
    assert!(mean.abs() < 3.0 * se, "mean {mean}, null sd {null_sd}");
    // A single split is also inside the null band.
    assert!(values[0].abs() < 3.0 * null_sd);
}

#[test]
fn mmd_detects_separated_clusters() {
    let a = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.1, 0.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![5.0, 5.0], vec![5.1, 5.0]]).unwrap();
    assert!(mmd_rbf(&a, &b, 1.0).unwrap() > 0.5);
}

#[test]
fn covariance_error_sampling_bound_and_permutation() {
    let sigma = ar1_covariance(8, 0.7).unwrap();
    let chol = Cholesky::factor(&sigma).unwrap();
    let z = gaussian(&mut Rng::seed(8), &[100_000, 8]).unwrap();
    let x = chol.color_rows(&z).unwrap();
    let err = covariance_error(&x, &sigma).unwrap();
    assert!(err < 0.05, "{err}");

    let small = rows(&x, &(0..500).collect::<Vec<_>>());
    let mut idx: Vec<usize> = (0..500).collect();
    shuffle(&mut Rng::seed(9), &mut idx);
    let a = covariance_error(&small, &sigma).unwrap();
    let b = covariance_error(&rows(&small, &idx), &sigma).unwrap();
    assert!((a - b).abs() < 1e-12);
}
