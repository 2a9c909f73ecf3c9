//! Dense row-major f64 tensors.
//!
//! The carrier type for everything in this crate: features, logits, weights,
//! gradients, optimizer state. Rank 0 (empty shape) holds a single scalar.

use serde::{Deserialize, Serialize};

/// Dense tensor: `values.len()` always equals the product of `shape`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            values.len(),
            "shape {:?} does not match value count {}",
            shape,
            values.len()
        );
        Tensor { shape, values }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![value; numel] }
    }

    /// Rank-0 scalar.
    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![], values: vec![value] }
    }

    /// 1-d tensor from a flat vector.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor { shape: vec![values.len()], values }
    }

    /// 2-d tensor from a flat row-major vector.
    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.values[0]
    }

    /// (rows, cols) of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "dims2() on shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (r, c) = self.dims2();
        assert!(i < r);
        &self.values[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        let (m, k) = self.dims2();
        let (k2, n) = rhs.dims2();
        assert_eq!(k, k2, "matmul inner dims {} vs {}", k, k2);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.values[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.values[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `self^T x rhs`: `[k,m]^T [k,n] -> [m,n]`. Used by matmul backward.
    pub fn t_matmul(&self, rhs: &Tensor) -> Tensor {
        let (k, m) = self.dims2();
        let (k2, n) = rhs.dims2();
        assert_eq!(k, k2, "t_matmul inner dims {} vs {}", k, k2);
        let mut out = vec![0.0; m * n];
        for p in 0..k {
            let a_row = &self.values[p * m..(p + 1) * m];
            let b_row = &rhs.values[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `self x rhs^T`: `[m,k] [n,k]^T -> [m,n]`. Used by matmul backward.
    pub fn matmul_t(&self, rhs: &Tensor) -> Tensor {
        let (m, k) = self.dims2();
        let (n, k2) = rhs.dims2();
        assert_eq!(k, k2, "matmul_t inner dims {} vs {}", k, k2);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.values[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (j, o) in o_row.iter_mut().enumerate() {
                let b_row = &rhs.values[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Tensor::new(vec![m, n], out)
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / z).collect()
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
    xs.iter().map(|&x| x - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let p = softmax(&[1.0, 2.0, -0.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[1001.0, 1002.0, 999.5]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_has_rank_zero() {
        let t = Tensor::scalar(3.5);
        assert_eq!(t.shape(), &[] as &[usize]);
        assert_eq!(t.item(), 3.5);
        assert!(t.is_scalar());
    }

    #[test]
    #[should_panic(expected = "does not match")]
    fn shape_value_mismatch_panics() {
        Tensor::new(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn matmul_matches_hand_product() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.values(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.5, 2.5]);
        let b = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect());
        // a^T b via t_matmul vs building the transpose by hand
        let at = Tensor::matrix(2, 3, vec![1.0, 0.5, -1.5, -2.0, 3.0, 2.5]);
        assert_eq!(a.t_matmul(&b), at.matmul(&b));
        // b a^T? check matmul_t: [3,4] x [?,4]^T
        let c = Tensor::matrix(2, 4, (0..8).map(|i| 0.5 * i as f64).collect());
        let ct = Tensor::matrix(4, 2, vec![0.0, 2.0, 0.5, 2.5, 1.0, 3.0, 1.5, 3.5]);
        assert_eq!(b.matmul_t(&c), b.matmul(&ct));
    }
}
