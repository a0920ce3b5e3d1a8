//! Dense row-major matrices and the handful of vector kernels the model needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Norm floor used wherever a vector is normalized.
pub const NORM_EPS: f64 = 1e-12;

/// Independent random stream `stream` derived from a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match shape");
        Self { rows, cols, data }
    }

    /// Xavier-uniform init: entries drawn from `U(-a, a)`, `a = sqrt(6 / (rows + cols))`.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// `out = self · x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), out);
            }
        }
    }

    /// `self += scale · a bᵀ`
    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            let s = scale * ai;
            if s != 0.0 {
                axpy(s, b, self.row_mut(i));
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes `x / max(‖x‖, NORM_EPS)` into `out` and returns the floored norm.
pub fn normalize_into(x: &[f64], out: &mut [f64]) -> f64 {
    let n = norm(x).max(NORM_EPS);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi / n;
    }
    n
}

/// Backprop through `y = x / max(‖x‖, eps)`.
///
/// `y` is the forward output and `floored_norm` the value returned by
/// [`normalize_into`]. Accumulates the input gradient into `dx`.
pub fn normalize_backward_acc(y: &[f64], floored_norm: f64, dy: &[f64], dx: &mut [f64]) {
    if floored_norm > NORM_EPS {
        let proj = dot(y, dy);
        for ((d, yi), dyi) in dx.iter_mut().zip(y).zip(dy) {
            *d += (dyi - yi * proj) / floored_norm;
        }
    } else {
        axpy(1.0 / floored_norm, dy, dx);
    }
}

/// Numerically stable `log Σ exp(z)`.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Rounds every entry to the nearest `f32`.
pub fn snap_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_and_transpose_agree() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = vec![0.0; 2];
        m.matvec(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, vec![-2.0, -2.0]);
        let mut back = vec![0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut back);
        assert_eq!(back, vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let x = [0.3, -1.2, 0.7];
        let dy = [0.5, 0.1, -0.4];
        let mut y = [0.0; 3];
        let n = normalize_into(&x, &mut y);
        let mut dx = [0.0; 3];
        normalize_backward_acc(&y, n, &dy, &mut dx);
        let h = 1e-6;
        for i in 0..3 {
            let f = |xi: f64| {
                let mut xp = x;
                xp[i] = xi;
                let mut yp = [0.0; 3];
                normalize_into(&xp, &mut yp);
                dot(&yp, &dy)
            };
            let fd = (f(x[i] + h) - f(x[i] - h)) / (2.0 * h);
            assert_relative_eq!(dx[i], fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_vector_normalizes_without_nan() {
        let mut y = [1.0; 2];
        let n = normalize_into(&[0.0, 0.0], &mut y);
        assert_eq!(n, NORM_EPS);
        assert_eq!(y, [0.0, 0.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp(&[1000.0, 0.0]), 1000.0, epsilon = 1e-12);
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
    }
}
