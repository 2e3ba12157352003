use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims<T: Scalar>(op: &str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Dimension(format!(
            "{op}: expected a matrix, got shape {:?}",
            t.shape()
        ))),
    }
}

/// Row-major transpose of an `rows x cols` buffer.
pub(crate) fn transpose_buf<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Tensor::from_op(
            "add",
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Tensor::from_op(
            "sub",
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(|g| vec![Some(g.to_vec()), Some(g.iter().map(|&v| -v).collect())]),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "mul",
            data,
            self.shape(),
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let da = a.requires_grad().then(|| {
                    g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect()
                });
                let db = b.requires_grad().then(|| {
                    g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect()
                });
                vec![da, db]
            }),
        )
    }

    pub fn scale(&self, alpha: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v * alpha).collect();
        Tensor::from_op(
            "scale",
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * alpha).collect())]),
        )
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, n) = matrix_dims("add_bias", self)?;
        if bias.numel() != n {
            return Err(Error::Dimension(format!(
                "add_bias: bias of {} values for {n} columns",
                bias.numel()
            )));
        }
        let mut data = self.to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(bias.data()).for_each(|(x, &b)| *x += b);
        }
        Tensor::from_op(
            "add_bias",
            data,
            self.shape(),
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let mut db = vec![T::zero(); n];
                for row in g.chunks_exact(n) {
                    db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                }
                vec![Some(g.to_vec()), Some(db)]
            }),
        )
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v.max(T::zero())).collect();
        let x = self.clone();
        Tensor::from_op(
            "relu",
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                let dx = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                vec![Some(dx)]
            }),
        )
    }

    /// Matrix product `[m x k] * [k x n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = matrix_dims("matmul", self)?;
        let (k2, n) = matrix_dims("matmul", other)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner extents {k} and {k2} differ"
            )));
        }
        let mut data = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.data(),
            (k as isize, 1),
            other.data(),
            (n as isize, 1),
            T::zero(),
            &mut data,
            (n as isize, 1),
        );
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            data,
            &[m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC * B^T, dB = A^T * dC
                let da = a.requires_grad().then(|| {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        (n as isize, 1),
                        b.data(),
                        (1, n as isize),
                        T::zero(),
                        &mut da,
                        (k as isize, 1),
                    );
                    da
                });
                let db = b.requires_grad().then(|| {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        a.data(),
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        T::zero(),
                        &mut db,
                        (n as isize, 1),
                    );
                    db
                });
                vec![da, db]
            }),
        )
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = matrix_dims("transpose", self)?;
        let data = transpose_buf(self.data(), r, c);
        Tensor::from_op(
            "transpose",
            data,
            &[c, r],
            vec![self.clone()],
            Box::new(move |g| vec![Some(transpose_buf(g, c, r))]),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape()
            )));
        }
        Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape,
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        )
    }

    /// Collapses all but the leading (batch) axis.
    pub fn flatten(&self) -> Result<Tensor<T>> {
        let n = self.shape()[0];
        self.reshape(&[n, self.numel() / n])
    }

    pub fn sum(&self) -> Result<Tensor<T>> {
        let total = self.data().iter().copied().sum();
        let len = self.numel();
        Tensor::from_op(
            "sum",
            vec![total],
            &[1],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; len])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let inv = T::one() / T::from_f64(self.numel() as f64);
        self.sum()?.scale(inv)
    }

    /// `[n, c, ...spatial] -> [n, c]` by averaging over the spatial axes.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        if self.ndim() < 3 {
            return Err(Error::Dimension(format!(
                "global_avg_pool: expected [n, c, ...], got {:?}",
                self.shape()
            )));
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        let s = self.numel() / (n * c);
        let inv = T::one() / T::from_f64(s as f64);
        let data = self
            .data()
            .chunks_exact(s)
            .map(|ch| ch.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_op(
            "global_avg_pool",
            data,
            &[n, c],
            vec![self.clone()],
            Box::new(move |g| {
                let dx = g.iter().flat_map(|&v| std::iter::repeat_n(v * inv, s)).collect();
                vec![Some(dx)]
            }),
        )
    }

    /// Subtracts the per-column mean of an `[n x d]` matrix.
    pub fn center_columns(&self) -> Result<Tensor<T>> {
        let (n, d) = matrix_dims("center_columns", self)?;
        let inv = T::one() / T::from_f64(n as f64);
        let mut mean = vec![T::zero(); d];
        for row in self.data().chunks_exact(d) {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m *= inv);
        let mut data = self.to_vec();
        for row in data.chunks_exact_mut(d) {
            row.iter_mut().zip(&mean).for_each(|(v, &m)| *v -= m);
        }
        Tensor::from_op(
            "center_columns",
            data,
            &[n, d],
            vec![self.clone()],
            Box::new(move |g| {
                let mut gm = vec![T::zero(); d];
                for row in g.chunks_exact(d) {
                    gm.iter_mut().zip(row).for_each(|(m, &v)| *m += v);
                }
                gm.iter_mut().for_each(|m| *m *= inv);
                let mut dx = g.to_vec();
                for row in dx.chunks_exact_mut(d) {
                    row.iter_mut().zip(&gm).for_each(|(v, &m)| *v -= m);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Divides each column of an `[n x d]` matrix by `sqrt(sum of squares + eps)`.
    pub fn normalize_columns(&self, eps: T) -> Result<Tensor<T>> {
        let (_, d) = matrix_dims("normalize_columns", self)?;
        let mut sq = vec![T::zero(); d];
        for row in self.data().chunks_exact(d) {
            sq.iter_mut().zip(row).for_each(|(s, &v)| *s += v * v);
        }
        let norm: Vec<T> = sq.iter().map(|&s| (s + eps).sqrt()).collect();
        let mut data = self.to_vec();
        for row in data.chunks_exact_mut(d) {
            row.iter_mut().zip(&norm).for_each(|(v, &r)| *v = *v / r);
        }
        let y = data.clone();
        Tensor::from_op(
            "normalize_columns",
            data,
            self.shape(),
            vec![self.clone()],
            Box::new(move |g| {
                // y = x / r, r = sqrt(sum x^2 + eps): dx = (g - y * sum(g * y)) / r
                let mut gy = vec![T::zero(); d];
                for (grow, yrow) in g.chunks_exact(d).zip(y.chunks_exact(d)) {
                    for j in 0..d {
                        gy[j] += grow[j] * yrow[j];
                    }
                }
                let mut dx = vec![T::zero(); g.len()];
                for ((drow, grow), yrow) in dx
                    .chunks_exact_mut(d)
                    .zip(g.chunks_exact(d))
                    .zip(y.chunks_exact(d))
                {
                    for j in 0..d {
                        drow[j] = (grow[j] - yrow[j] * gy[j]) / norm[j];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Row-wise softmax probabilities of an `[n x g]` logits matrix (no graph).
    pub fn softmax_rows(&self) -> Result<Vec<T>> {
        let (_, g) = matrix_dims("softmax_rows", self)?;
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(g) {
            softmax_in_place(row);
        }
        Ok(out)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    row.iter_mut().for_each(|v| *v = *v / z);
}

/// Mean cross-entropy of `[n x g]` logits against integer labels.
///
/// Stabilized by subtracting each row's maximum before exponentiation.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, g) = matrix_dims("softmax_cross_entropy", logits)?;
    if labels.len() != n {
        return Err(Error::Label(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= g) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {g} classes"
        )));
    }
    let mut probs = logits.to_vec();
    let mut loss = T::zero();
    for (row, (&label, lrow)) in probs
        .chunks_exact_mut(g)
        .zip(labels.iter().zip(logits.data().chunks_exact(g)))
    {
        let max = lrow.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = lrow.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        loss += lse - lrow[label];
        softmax_in_place(row);
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let labels = labels.to_vec();
    Tensor::from_op(
        "softmax_cross_entropy",
        vec![loss * inv_n],
        &[1],
        vec![logits.clone()],
        Box::new(move |gr| {
            let scale = gr[0] * inv_n;
            let mut dx = probs.clone();
            for (row, &label) in dx.chunks_exact_mut(g).zip(&labels) {
                row[label] -= T::one();
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(dx)]
        }),
    )
}
