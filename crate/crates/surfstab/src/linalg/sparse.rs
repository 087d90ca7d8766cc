//! Minimal compressed-sparse-row matrices.
//!
//! Covers exactly what the assembly and solver code needs: triplet
//! construction with duplicate merging, matrix-vector products, transpose,
//! and dense conversion. Triplets are sorted before merging, so assembly is
//! deterministic regardless of insertion order.

use nalgebra::DMatrix;

#[derive(Clone, Debug)]
pub struct Csr {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        for &(r, c, _) in &trip {
            assert!(r < nrows && c < ncols, "triplet index out of range");
        }
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, v) in &trip {
            if prev == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] = col_idx.len();
                prev = Some((r, c));
            }
        }
        // make row_ptr cumulative over empty rows too
        for r in 1..=nrows {
            if row_ptr[r] < row_ptr[r - 1] {
                row_ptr[r] = row_ptr[r - 1];
            }
        }
        Csr {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.vals[lo..hi])
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            *out = acc;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 1..=self.ncols {
            counts[c] += counts[c - 1];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = counts;
        for r in 0..self.nrows {
            let (cols, vs) = self.row(r);
            for (c, v) in cols.iter().zip(vs) {
                let slot = next[*c];
                col_idx[slot] = r;
                vals[slot] = *v;
                next[*c] += 1;
            }
        }
        Csr {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr,
            col_idx,
            vals,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                a[(r, *c)] += *v;
            }
        }
        a
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows.min(self.ncols)];
        for (r, out) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c == r {
                    *out += *v;
                }
            }
        }
        d
    }

    /// Largest absolute difference between A and its transpose; test helper.
    pub fn max_abs_asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = t.row(r);
            // both rows are sorted by column; walk them together
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                match (ca.get(i), cb.get(j)) {
                    (Some(&c1), Some(&c2)) if c1 == c2 => {
                        worst = worst.max((va[i] - vb[j]).abs());
                        i += 1;
                        j += 1;
                    }
                    (Some(&c1), Some(&c2)) if c1 < c2 => {
                        worst = worst.max(va[i].abs());
                        i += 1;
                    }
                    (Some(_), Some(_)) => {
                        worst = worst.max(vb[j].abs());
                        j += 1;
                    }
                    (Some(_), None) => {
                        worst = worst.max(va[i].abs());
                        i += 1;
                    }
                    (None, Some(_)) => {
                        worst = worst.max(vb[j].abs());
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
        }
        worst
    }
}
