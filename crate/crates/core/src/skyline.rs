//! Symmetric positive definite solver in envelope (skyline) storage.
//!
//! Pose chains give banded normal equations with a few long rows from loop
//! edges; the envelope keeps the factor inside those rows.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    n: usize,
    /// First stored column of each row.
    first: Vec<usize>,
    /// Start of each row in `values`.
    start: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Zero matrix whose lower triangle may hold entries `(row, col)` with
    /// `col >= first[row]`.
    pub fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        let mut len = 0;
        for (r, &f) in first.iter().enumerate() {
            assert!(f <= r, "profile column beyond the diagonal");
            start.push(len);
            len += r - f + 1;
        }
        start.push(len);
        Self {
            n,
            first,
            start,
            values: vec![0.0; len],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn index(&self, r: usize, c: usize) -> usize {
        let (r, c) = if c > r { (c, r) } else { (r, c) };
        assert!(c >= self.first[r], "entry ({r}, {c}) outside the profile");
        self.start[r] + c - self.first[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if c > r { (c, r) } else { (r, c) };
        if c < self.first[r] {
            0.0
        } else {
            self.values[self.index(r, c)]
        }
    }

    /// Adds `v` to the symmetric pair `(r, c)`, `(c, r)`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.index(r, c);
        self.values[k] += v;
    }

    /// In-place Cholesky factorization `A = L Lᵀ`; the lower factor replaces
    /// the stored triangle.
    pub fn factorize(&mut self) -> Result<()> {
        for i in 0..self.n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let lo = fi.max(fj);
                let mut s = self.values[self.start[i] + j - fi];
                for k in lo..j {
                    s -= self.values[self.start[i] + k - fi] * self.values[self.start[j] + k - fj];
                }
                if j < i {
                    let d = self.values[self.start[j] + j - fj];
                    self.values[self.start[i] + j - fi] = s / d;
                } else {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { row: i });
                    }
                    self.values[self.start[i] + i - fi] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` with a factorized matrix.
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[self.start[i] + k - fi] * y[k];
            }
            y[i] = s / self.values[self.start[i] + i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            y[i] /= self.values[self.start[i] + i - fi];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[self.start[i] + k - fi] * yi;
            }
        }
        y
    }
}
