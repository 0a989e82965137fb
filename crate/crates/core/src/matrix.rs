//! Dense matrices over a [`FiniteField`] with exact Gaussian elimination.
//!
//! Entries are `u32` residues stored row-major. The matrix does not own its
//! field; every arithmetic method takes the field explicitly.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::field::FiniteField;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
}

/// Result of reducing a matrix to reduced row echelon form.
#[derive(Debug, Clone)]
pub struct Echelon {
    pub reduced: Matrix,
    /// Pivot column of each nonzero row, increasing.
    pub pivots: Vec<usize>,
}

impl Echelon {
    pub fn rank(&self) -> usize {
        self.pivots.len()
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<u32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has the wrong length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows; `None` if the rows are ragged.
    pub fn from_rows<R: AsRef<[u32]>>(rows: &[R]) -> Option<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return None;
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<u32> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    pub fn all_in(&self, field: &FiniteField) -> bool {
        self.data.iter().all(|&x| field.contains(x))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn select_rows(&self, sel: &[usize]) -> Self {
        let mut data = Vec::with_capacity(sel.len() * self.cols);
        for &r in sel {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: sel.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, sel: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, sel.len());
        for r in 0..self.rows {
            for (j, &c) in sel.iter().enumerate() {
                out[(r, j)] = self[(r, c)];
            }
        }
        out
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Self {
        assert_eq!(self.rows, other.rows, "hstack needs equal row counts");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    pub fn mul(&self, other: &Matrix, field: &FiniteField) -> Self {
        assert_eq!(self.cols, other.rows, "matrix product shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(r);
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d = field.add(*d, field.mul(a, b));
                }
            }
        }
        out
    }

    /// Reduced row echelon form by Gauss-Jordan elimination.
    pub fn echelon(&self, field: &FiniteField) -> Echelon {
        let mut m = self.clone();
        let pivots = m.reduce_in_place(field);
        Echelon { reduced: m, pivots }
    }

    fn reduce_in_place(&mut self, field: &FiniteField) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut lead = 0;
        for c in 0..self.cols {
            if lead == self.rows {
                break;
            }
            let Some(p) = (lead..self.rows).find(|&r| self[(r, c)] != 0) else {
                continue;
            };
            if p != lead {
                self.swap_rows(p, lead);
            }
            let inv = field.inv(self[(lead, c)]).expect("pivot is nonzero");
            if inv != 1 {
                for x in self.row_mut(lead)[c..].iter_mut() {
                    *x = field.mul(*x, inv);
                }
            }
            for r in 0..self.rows {
                if r == lead {
                    continue;
                }
                let factor = self[(r, c)];
                if factor == 0 {
                    continue;
                }
                let neg = field.neg(factor);
                let (src, dst) = self.two_rows(lead, r);
                for (d, &s) in dst[c..].iter_mut().zip(&src[c..]) {
                    *d = field.add(*d, field.mul(neg, s));
                }
            }
            pivots.push(c);
            lead += 1;
        }
        pivots
    }

    pub fn rank(&self, field: &FiniteField) -> usize {
        self.clone().reduce_in_place(field).len()
    }

    /// Inverse of a square matrix, `None` if singular.
    pub fn inverse(&self, field: &FiniteField) -> Option<Matrix> {
        assert_eq!(self.rows, self.cols, "only square matrices have inverses");
        let n = self.rows;
        let mut aug = self.hstack(&Matrix::identity(n));
        let pivots = aug.reduce_in_place(field);
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        let right: Vec<usize> = (n..2 * n).collect();
        Some(aug.select_cols(&right))
    }

    /// Solves `self * x = rhs` for one column `rhs`; `None` if inconsistent.
    /// Free variables are set to zero.
    pub fn solve(&self, rhs: &[u32], field: &FiniteField) -> Option<Vec<u32>> {
        assert_eq!(rhs.len(), self.rows);
        let b = Matrix::from_vec(self.rows, 1, rhs.to_vec());
        let ech = self.hstack(&b).echelon(field);
        if ech.pivots.last() == Some(&self.cols) {
            return None;
        }
        let mut x = vec![0u32; self.cols];
        for (r, &p) in ech.pivots.iter().enumerate() {
            x[p] = ech.reduced[(r, self.cols)];
        }
        Some(x)
    }

    /// Matrix-vector product `self * v`.
    pub fn apply(&self, v: &[u32], field: &FiniteField) -> Vec<u32> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(0, |acc, (&a, &b)| field.add(acc, field.mul(a, b)))
            })
            .collect()
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let cols = self.cols;
        let (lo, hi) = (a.min(b), a.max(b));
        let (head, tail) = self.data.split_at_mut(hi * cols);
        head[lo * cols..(lo + 1) * cols].swap_with_slice(&mut tail[..cols]);
    }

    /// Borrows row `src` immutably and row `dst` mutably.
    fn two_rows(&mut self, src: usize, dst: usize) -> (&[u32], &mut [u32]) {
        assert_ne!(src, dst);
        let cols = self.cols;
        if src < dst {
            let (head, tail) = self.data.split_at_mut(dst * cols);
            (&head[src * cols..(src + 1) * cols], &mut tail[..cols])
        } else {
            let (head, tail) = self.data.split_at_mut(src * cols);
            (&tail[..cols], &mut head[dst * cols..(dst + 1) * cols])
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = u32;

    fn index(&self, (r, c): (usize, usize)) -> &u32 {
        assert!(
            r < self.rows && c < self.cols,
            "index ({r}, {c}) out of bounds"
        );
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut u32 {
        assert!(
            r < self.rows && c < self.cols,
            "index ({r}, {c}) out of bounds"
        );
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gf(q: u64) -> FiniteField {
        FiniteField::new(q).unwrap()
    }

    #[test]
    fn rank_examples() {
        let f = gf(3);
        let m = Matrix::from_rows(&[[1, 2, 0], [2, 1, 0], [0, 0, 1]]).unwrap();
        // row 2 = 2 * row 1 over GF(3)
        assert_eq!(m.rank(&f), 2);
        assert_eq!(Matrix::identity(4).rank(&f), 4);
        assert_eq!(Matrix::zeros(3, 5).rank(&f), 0);
        // the same integer matrix has rank 3 over GF(5)
        assert_eq!(m.rank(&gf(5)), 3);
    }

    #[test]
    fn inverse_and_solve() {
        let f = gf(7);
        let m = Matrix::from_rows(&[[1, 2], [3, 4]]).unwrap();
        let inv = m.inverse(&f).unwrap();
        assert_eq!(m.mul(&inv, &f), Matrix::identity(2));
        let x = m.solve(&[5, 6], &f).unwrap();
        assert_eq!(m.apply(&x, &f), vec![5, 6]);
        let singular = Matrix::from_rows(&[[1, 2], [2, 4]]).unwrap();
        assert!(singular.inverse(&f).is_none());
        assert!(singular.solve(&[1, 0], &f).is_none());
        assert!(singular.solve(&[1, 2], &f).is_some());
    }

    #[test]
    fn binary_extension_inverse() {
        let f = gf(8);
        let m = Matrix::from_rows(&[[1, 1, 1], [0, 1, 2], [0, 1, 4]]).unwrap();
        let inv = m.inverse(&f).unwrap();
        assert_eq!(inv.mul(&m, &f), Matrix::identity(3));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1, 2], vec![3]]).is_none());
    }

    proptest! {
        #[test]
        fn rank_bounded_and_transpose_invariant(data in prop::collection::vec(0u32..5, 12)) {
            let f = gf(5);
            let m = Matrix::from_vec(3, 4, data);
            let r = m.rank(&f);
            prop_assert!(r <= 3);
            prop_assert_eq!(r, m.transpose().rank(&f));
        }

        #[test]
        fn invertible_round_trip(data in prop::collection::vec(0u32..11, 16)) {
            let f = gf(11);
            let m = Matrix::from_vec(4, 4, data);
            match m.inverse(&f) {
                Some(inv) => prop_assert_eq!(m.mul(&inv, &f), Matrix::identity(4)),
                None => prop_assert!(m.rank(&f) < 4),
            }
        }
    }
}
