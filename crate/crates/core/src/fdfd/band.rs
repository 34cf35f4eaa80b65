//! Complex banded LU factorization with partial pivoting.
//!
//! LAPACK-style band storage: a matrix with `kl` sub- and `ku`
//! super-diagonals is held column-major in `2kl + ku + 1` rows, the extra
//! `kl` rows absorbing fill from row interchanges. This covers the 2D
//! Helmholtz operator in x-fastest ordering, where every coupling (including
//! the periodic wrap) lies within `nx` diagonals of the main one.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    /// Column-major band storage, `ldab × n`.
    ab: Vec<Complex64>,
    ipiv: Vec<usize>,
    factored: bool,
}

impl BandedMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        assert!(n > 0 && kl < n && ku < n, "band widths must be below n");
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            ab: vec![Complex64::new(0.0, 0.0); ldab * n],
            ipiv: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.n && j < self.n);
        debug_assert!(
            i + self.ku + self.kl >= j && j + self.kl >= i,
            "entry ({i}, {j}) outside band"
        );
        i + self.kl + self.ku - j + j * self.ldab
    }

    /// Accumulate into entry `(i, j)`; entries start at zero.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(!self.factored, "matrix already factored");
        let s = self.slot(i, j);
        self.ab[s] += v;
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> Complex64 {
        self.ab[self.slot(i, j)]
    }

    /// In-place LU with partial pivoting. Fails on an exactly singular pivot.
    pub fn factor(&mut self) -> Result<()> {
        assert!(!self.factored, "matrix already factored");
        let (n, kl, ku, _ldab) = (self.n, self.kl, self.ku, self.ldab);
        let kv = kl + ku; // effective superdiagonal count after pivoting
        for k in 0..n {
            let i_max = (k + kl).min(n - 1);
            // Pivot search down column k.
            let mut piv = k;
            let mut piv_mag = self.get(k, k).norm_sqr();
            for i in (k + 1)..=i_max {
                let mag = self.get(i, k).norm_sqr();
                if mag > piv_mag {
                    piv = i;
                    piv_mag = mag;
                }
            }
            if piv_mag == 0.0 {
                return Err(Error::Solver(format!(
                    "singular pivot at column {k} of {n}"
                )));
            }
            self.ipiv[k] = piv;
            let j_max = (k + kv).min(n - 1);
            if piv != k {
                for j in k..=j_max {
                    let a = self.slot(k, j);
                    let b = self.slot(piv, j);
                    self.ab.swap(a, b);
                }
            }
            let akk = self.get(k, k);
            // Scale the multipliers (stored in place of the eliminated column).
            for i in (k + 1)..=i_max {
                let s = self.slot(i, k);
                self.ab[s] /= akk;
            }
            if i_max <= k {
                continue;
            }
            // Rank-1 band update, contiguous down each column.
            for j in (k + 1)..=j_max {
                let ukj = self.get(k, j);
                if ukj.re == 0.0 && ukj.im == 0.0 {
                    continue;
                }
                let col_k = self.slot(k + 1, k);
                let col_j = self.slot(k + 1, j);
                let len = i_max - k;
                for m in 0..len {
                    let l = self.ab[col_k + m];
                    self.ab[col_j + m] -= l * ukj;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `Ax = b` in place using the stored factors.
    pub fn solve(&self, b: &mut [Complex64]) -> Result<()> {
        if !self.factored {
            return Err(Error::Solver("matrix not factored".into()));
        }
        assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku;
        // Forward substitution with the recorded row interchanges.
        for k in 0..n {
            let piv = self.ipiv[k];
            if piv != k {
                b.swap(k, piv);
            }
            let i_max = (k + kl).min(n - 1);
            let bk = b[k];
            for i in (k + 1)..=i_max {
                b[i] -= self.get(i, k) * bk;
            }
        }
        // Back substitution.
        for k in (0..n).rev() {
            let j_max = (k + kv).min(n - 1);
            let mut s = b[k];
            for j in (k + 1)..=j_max {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
        Ok(())
    }
}
