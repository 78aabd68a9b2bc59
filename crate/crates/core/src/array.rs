//! Dense third-order arrays.

use serde::{Deserialize, Serialize};

/// A dense `d × d × d` array stored in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    d: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(d: usize) -> Self {
        Tensor3 { d, data: vec![0.0; d * d * d] }
    }

    pub fn from_fn(d: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Tensor3::zeros(d);
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    t.data[(i * d + j) * d + k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.d + j) * self.d + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.d + j) * self.d + k] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scale(&self, c: f64) -> Self {
        Tensor3 { d: self.d, data: self.data.iter().map(|v| v * c).collect() }
    }

    pub fn zip_with(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.d, other.d);
        Tensor3 { d: self.d, data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Average over all six index permutations.
    pub fn symmetrized(&self) -> Self {
        Tensor3::from_fn(self.d, |i, j, k| {
            (self.get(i, j, k)
                + self.get(i, k, j)
                + self.get(j, i, k)
                + self.get(j, k, i)
                + self.get(k, i, j)
                + self.get(k, j, i))
                / 6.0
        })
    }

    /// Average over swaps of the first two indices only.
    pub fn symmetrized_first_two(&self) -> Self {
        Tensor3::from_fn(self.d, |i, j, k| 0.5 * (self.get(i, j, k) + self.get(j, i, k)))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let s = self.symmetrized();
        self.data.iter().zip(&s.data).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrization_is_idempotent() {
        let t = Tensor3::from_fn(3, |i, j, k| (i * 9 + j * 3 + k) as f64);
        let s = t.symmetrized();
        assert!(s.is_symmetric(1e-15));
        assert_eq!(s, s.symmetrized());
        let p = t.symmetrized_first_two();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert_eq!(p.get(i, j, k), p.get(j, i, k));
                }
            }
        }
    }
}
