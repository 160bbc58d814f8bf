//! Small dense matrix/vector helpers used by the forward and backward passes.
//!
//! Vectors here are ordinary `Vec<f64>`; matrices are row-major. Everything is
//! tiny (class counts, not feature maps), so clarity wins over cleverness.

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// Identity block padded with zero columns, `rows x cols`.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y += A x
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            y[r] += acc;
        }
    }

    /// x = Aᵀ y
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut x = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let yr = y[r];
            for c in 0..self.cols {
                x[c] += row[c] * yr;
            }
        }
        x
    }

    /// A += y xᵀ (outer product accumulate)
    pub fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            let yr = y[r];
            for c in 0..self.cols {
                row[c] += yr * x[c];
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// y += a * x
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn scale(x: &[f64], a: f64) -> Vec<f64> {
    x.iter().map(|v| v * a).collect()
}

pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i] > x[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Given y = softmax(z) and dL/dy, returns dL/dz = y ⊙ (dy − ⟨dy, y⟩).
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(dy, y);
    y.iter().zip(dy).map(|(yi, dyi)| yi * (dyi - inner)).collect()
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree_with_hand_computation() {
        let a = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(a.matvec(&[1.0, -1.0]), vec![-1.0, -1.0, -1.0]);
        assert_eq!(a.matvec_t(&[1.0, 0.0, -1.0]), vec![-4.0, -4.0]);
    }

    #[test]
    fn outer_accumulates() {
        let mut a = Mat::zeros(2, 3);
        a.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        a.add_outer(&[1.0, 2.0], &[1.0, 0.0, -1.0]);
        assert_eq!(a.data, vec![2.0, 0.0, -2.0, 4.0, 0.0, -4.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = softmax(&[0.0; 4]);
        for v in &y {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_scalar_computation() {
        // softmax([0, 1]) = [1/(1+e), e/(1+e)]
        let y = softmax(&[0.0, 1.0]);
        let e = 1.0f64.exp();
        assert!((y[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((y[1] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let y1 = softmax(&[100.0, 101.0, 99.5]);
        let y2 = softmax(&[0.0, 1.0, -0.5]);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_and_centered() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-30.0) > 0.0);
        assert!(sigmoid(800.0).is_finite() && sigmoid(-800.0).is_finite());
        assert!((sigmoid(0.5) - 0.622_459_331_201_854_6).abs() < 1e-12);
    }

    #[test]
    fn softmax_backward_matches_finite_difference() {
        let z = vec![0.3, -0.7, 1.1, 0.0];
        let dy = vec![0.2, -1.0, 0.5, 0.9];
        let analytic = softmax_backward(&softmax(&z), &dy);
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let f = |y: Vec<f64>| dot(&y, &dy);
            let numeric = (f(softmax(&zp)) - f(softmax(&zm))) / (2.0 * eps);
            assert!(
                (analytic[i] - numeric).abs() < 1e-8,
                "entry {i}: {} vs {}",
                analytic[i],
                numeric
            );
        }
    }
}
