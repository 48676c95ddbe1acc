use super::Tensor;
use crate::error::{Error, Result};

/// Pivots at or below this are treated as a failed decomposition.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `a = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &Tensor) -> Result<Self> {
        let (n, m) = a.dims2()?;
        if n != m {
            return Err(Error::Shape(format!("cholesky of non-square {n}x{m}")));
        }
        let a = a.data();
        for i in 0..n {
            for j in 0..i {
                let (x, y) = (a[i * n + j], a[j * n + i]);
                if (x - y).abs() > 1e-10 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > PIVOT_FLOOR) {
                return Err(Error::Decomposition { row: j, pivot: d });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> Tensor {
        Tensor::new(vec![self.n, self.n], self.lower.clone()).expect("square")
    }

    /// Solves `a x = b` for an `n×k` right-hand side.
    pub fn solve(&self, b: &Tensor) -> Result<Tensor> {
        let (n, k) = b.dims2()?;
        if n != self.n {
            return Err(Error::Shape(format!(
                "rhs has {n} rows, factor is {0}x{0}",
                self.n
            )));
        }
        let l = &self.lower;
        let mut x = b.data().to_vec();
        for c in 0..k {
            // forward: L y = b
            for i in 0..n {
                let mut s = x[i * k + c];
                for j in 0..i {
                    s -= l[i * n + j] * x[j * k + c];
                }
                x[i * k + c] = s / l[i * n + i];
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x[i * k + c];
                for j in i + 1..n {
                    s -= l[j * n + i] * x[j * k + c];
                }
                x[i * k + c] = s / l[i * n + i];
            }
        }
        Tensor::new(vec![n, k], x)?.check_finite("cholesky_solve")
    }

    /// `L z` for each row `z` of a `[batch, n]` tensor, i.e. maps white
    /// noise to draws with covariance `L Lᵀ`.
    pub fn color_rows(&self, z: &Tensor) -> Result<Tensor> {
        let (rows, n) = z.dims2()?;
        if n != self.n {
            return Err(Error::Shape(format!("rows of width {n}, factor {}", self.n)));
        }
        let mut out = Tensor::zeros(&[rows, n]);
        super::gemm(
            rows,
            n,
            n,
            1.0,
            z.data(),
            (n, 1),
            &self.lower,
            (1, n),
            0.0,
            out.data_mut(),
        );
        Ok(out)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn cholesky_solve(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Cholesky::factor(a)?.solve(b)
}

/// Population mean and standard deviation.
///
/// With `per_example` the first axis is the batch axis and the statistics
/// have one entry per example; otherwise they are scalars (shape `[1]`).
pub fn mean_std(x: &Tensor, per_example: bool) -> Result<(Tensor, Tensor)> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("mean_std of an empty tensor".into()));
    }
    let stats = |s: &[f64]| {
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    if per_example {
        if x.row_len() == 0 {
            return Err(Error::InvalidArgument("examples are empty".into()));
        }
        let (means, stds): (Vec<_>, Vec<_>) = (0..x.rows()).map(|i| stats(x.row(i))).unzip();
        Ok((Tensor::vector(means), Tensor::vector(stds)))
    } else {
        let (m, s) = stats(x.data());
        Ok((Tensor::vector(vec![m]), Tensor::vector(vec![s])))
    }
}

/// Population covariance of the rows of a `[n, dim]` sample matrix.
pub fn covariance(samples: &Tensor) -> Result<Tensor> {
    let (n, d) = samples.dims2()?;
    if n == 0 {
        return Err(Error::InvalidArgument("covariance of zero samples".into()));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = samples.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = Tensor::zeros(&[d, d]);
    super::gemm(
        d,
        n,
        d,
        1.0 / n as f64,
        centered.data(),
        (1, d),
        centered.data(),
        (d, 1),
        0.0,
        cov.data_mut(),
    );
    Ok(cov)
}
