use crate::error::{Error, Result};

const MIN_FREQ: f64 = 1.0;
const MAX_FREQ: f64 = 1e4;

/// Sinusoidal features of `t`: `[sin(ω_0 t) .. sin(ω_{k-1} t), cos(ω_0 t) .. cos(ω_{k-1} t)]`
/// with `k = dim / 2` frequencies log-spaced over `[1, 10⁴]`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "time embedding dim must be even, got {dim}"
        )));
    }
    let mut out = vec![0.0; dim];
    write_time_embedding(t, &mut out);
    Ok(out)
}

/// Writes the embedding into `out`, whose length must be even.
pub(crate) fn write_time_embedding(t: f64, out: &mut [f64]) {
    let k = out.len() / 2;
    let (sin, cos) = out.split_at_mut(k);
    for i in 0..k {
        let w = frequency(i, k);
        sin[i] = (w * t).sin();
        cos[i] = (w * t).cos();
    }
}

fn frequency(i: usize, k: usize) -> f64 {
    if k == 1 {
        return MIN_FREQ;
    }
    let frac = i as f64 / (k - 1) as f64;
    MIN_FREQ * (MAX_FREQ / MIN_FREQ).powf(frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time() {
        let e = time_embedding(0.0, 8).unwrap();
        assert!(e[..4].iter().all(|&v| v == 0.0));
        assert!(e[4..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(time_embedding(0.37, 4).unwrap(), time_embedding(0.37, 4).unwrap());
        let a = time_embedding(0.3, 4).unwrap();
        let b = time_embedding(0.7, 4).unwrap();
        let diff = a.iter().zip(&b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff > 1e-6);
    }

    #[test]
    fn frequencies_span_range() {
        assert_eq!(frequency(0, 8), 1.0);
        assert!((frequency(7, 8) - 1e4).abs() < 1e-8);
        assert!(time_embedding(0.5, 3).is_err());
    }
}
