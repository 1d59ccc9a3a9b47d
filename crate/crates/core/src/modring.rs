//! Arithmetic over the ring Z/2^64.
//!
//! Every value is a plain `u64` and every operation wraps, so the ring
//! structure comes for free from two's-complement hardware. A matrix over
//! this ring is invertible exactly when its determinant is odd: odd scalars
//! are the units of Z/2^64.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Element of Z/2^64.
pub type Word = u64;

/// Multiplicative inverse of an odd word.
///
/// Newton iteration `y <- y * (2 - x*y)` doubles the number of correct low
/// bits each step. Any odd `x` satisfies `x*x = 1 mod 8`, so `y = x` starts
/// with three correct bits and five steps reach 96 > 64.
pub fn scalar_inv(x: Word) -> Result<Word> {
    if x & 1 == 0 {
        return Err(Error::NotInvertible);
    }
    let mut y = x;
    for _ in 0..5 {
        y = y.wrapping_mul(2u64.wrapping_sub(x.wrapping_mul(y)));
    }
    debug_assert_eq!(x.wrapping_mul(y), 1);
    Ok(y)
}

/// A 2x2 matrix over Z/2^64, row-major.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Mat2(pub [[Word; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1, 0], [0, 1]]);
    pub const SWAP: Mat2 = Mat2([[0, 1], [1, 0]]);

    pub const fn new(m11: Word, m12: Word, m21: Word, m22: Word) -> Self {
        Mat2([[m11, m12], [m21, m22]])
    }

    #[inline]
    pub fn det(&self) -> Word {
        let [[a, b], [c, d]] = self.0;
        a.wrapping_mul(d).wrapping_sub(b.wrapping_mul(c))
    }

    #[inline]
    pub fn is_invertible(&self) -> bool {
        self.det() & 1 == 1
    }

    pub fn is_involutory(&self) -> bool {
        self.mul(self) == Mat2::IDENTITY
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let [[a, b], [c, d]] = self.0;
        let [[e, f], [g, h]] = rhs.0;
        Mat2([
            [
                a.wrapping_mul(e).wrapping_add(b.wrapping_mul(g)),
                a.wrapping_mul(f).wrapping_add(b.wrapping_mul(h)),
            ],
            [
                c.wrapping_mul(e).wrapping_add(d.wrapping_mul(g)),
                c.wrapping_mul(f).wrapping_add(d.wrapping_mul(h)),
            ],
        ])
    }

    /// Applies the matrix to the column vector `(x, y)`.
    #[inline]
    pub fn apply(&self, x: Word, y: Word) -> (Word, Word) {
        let [[a, b], [c, d]] = self.0;
        (
            a.wrapping_mul(x).wrapping_add(b.wrapping_mul(y)),
            c.wrapping_mul(x).wrapping_add(d.wrapping_mul(y)),
        )
    }

    /// Adjugate scaled by the inverse determinant.
    pub fn inverse(&self) -> Result<Mat2> {
        let inv_det = scalar_inv(self.det())?;
        let [[a, b], [c, d]] = self.0;
        Ok(Mat2([
            [d.wrapping_mul(inv_det), b.wrapping_neg().wrapping_mul(inv_det)],
            [c.wrapping_neg().wrapping_mul(inv_det), a.wrapping_mul(inv_det)],
        ]))
    }

    pub fn to_le_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, w) in out.chunks_exact_mut(8).zip(self.0.iter().flatten()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8; 32]) -> Mat2 {
        let w = |i: usize| Word::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        Mat2::new(w(0), w(1), w(2), w(3))
    }
}

impl fmt::Debug for Mat2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [[a, b], [c, d]] = self.0;
        write!(f, "[[{a:#x}, {b:#x}], [{c:#x}, {d:#x}]]")
    }
}

/// Builds the involutory matrix `[[a, b], [c, -a]]` with `b` forced odd and
/// `c = (1 - a^2) / b`.
///
/// Squaring gives `[[a^2 + bc, 0], [0, bc + a^2]]`, which is the identity by
/// the choice of `c`. The determinant is `-a^2 - bc = -1`.
pub fn gen_involutory(rand_a: Word, rand_b: Word) -> Mat2 {
    let a = rand_a;
    let b = rand_b | 1;
    let b_inv = scalar_inv(b).expect("b is odd");
    let c = 1u64.wrapping_sub(a.wrapping_mul(a)).wrapping_mul(b_inv);
    Mat2::new(a, b, c, a.wrapping_neg())
}

/// A square matrix over Z/2^64, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct MatN {
    n: usize,
    data: Vec<Word>,
}

impl MatN {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "matrix dimension must be positive");
        MatN { n, data: vec![0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = MatN::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1;
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<Word>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(MatN { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Word) -> Self {
        let mut m = MatN::zeros(n);
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] = f(r, c);
            }
        }
        m
    }

    /// Matrix whose `i`-th column is `columns[i]`.
    pub fn from_columns<C: AsRef<[Word]>>(columns: &[C]) -> Result<Self> {
        let n = columns.len();
        if n == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        let mut m = MatN::zeros(n);
        for (c, col) in columns.iter().enumerate() {
            let col = col.as_ref();
            if col.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: col.len() });
            }
            for (r, &v) in col.iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, r: usize) -> &[Word] {
        &self.data[r * self.n..(r + 1) * self.n]
    }

    pub fn column(&self, c: usize) -> Vec<Word> {
        (0..self.n).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> MatN {
        MatN::from_fn(self.n, |r, c| self[(c, r)])
    }

    pub fn is_identity(&self) -> bool {
        *self == MatN::identity(self.n)
    }

    pub fn mul(&self, rhs: &MatN) -> Result<MatN> {
        if self.n != rhs.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: rhs.n });
        }
        let n = self.n;
        let mut out = MatN::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                if a == 0 {
                    continue;
                }
                let rhs_row = rhs.row(k);
                let out_row = &mut out.data[r * n..(r + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o = o.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[Word]) -> Result<Vec<Word>> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: v.len() });
        }
        Ok((0..self.n)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .fold(0u64, |acc, (&a, &x)| acc.wrapping_add(a.wrapping_mul(x)))
            })
            .collect())
    }

    /// Gauss-Jordan inversion over Z/2^64.
    ///
    /// Each column takes the first row at or below the diagonal with an odd
    /// entry as pivot. If no such row exists the matrix is singular mod 2 and
    /// hence mod 2^64.
    pub fn inverse(&self) -> Result<MatN> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = MatN::identity(n);
        for col in 0..n {
            let pivot = (col..n).find(|&r| a[(r, col)] & 1 == 1).ok_or(Error::NotInvertible)?;
            if pivot != col {
                a.swap_rows(pivot, col);
                inv.swap_rows(pivot, col);
            }
            let scale = scalar_inv(a[(col, col)])?;
            a.scale_row(col, scale);
            inv.scale_row(col, scale);
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a[(r, col)];
                if factor != 0 {
                    a.sub_scaled_row(r, col, factor);
                    inv.sub_scaled_row(r, col, factor);
                }
            }
        }
        debug_assert!(a.is_identity());
        Ok(inv)
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        let n = self.n;
        for c in 0..n {
            self.data.swap(i * n + c, j * n + c);
        }
    }

    fn scale_row(&mut self, r: usize, s: Word) {
        let n = self.n;
        for v in &mut self.data[r * n..(r + 1) * n] {
            *v = v.wrapping_mul(s);
        }
    }

    /// row[dst] -= factor * row[src]
    fn sub_scaled_row(&mut self, dst: usize, src: usize, factor: Word) {
        let n = self.n;
        for c in 0..n {
            let s = self.data[src * n + c];
            let d = &mut self.data[dst * n + c];
            *d = d.wrapping_sub(factor.wrapping_mul(s));
        }
    }
}

impl Index<(usize, usize)> for MatN {
    type Output = Word;
    fn index(&self, (r, c): (usize, usize)) -> &Word {
        assert!(r < self.n && c < self.n);
        &self.data[r * self.n + c]
    }
}

impl IndexMut<(usize, usize)> for MatN {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Word {
        assert!(r < self.n && c < self.n);
        &mut self.data[r * self.n + c]
    }
}

impl fmt::Debug for MatN {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatN").field("n", &self.n).finish_non_exhaustive()
    }
}
