//! Transparent sector encryption as 125 butterfly rounds.
//!
//! A sector is 64 words. Round `i` multiplies the adjacent pair starting at
//! 1-based position `i` (rounds 1..=63) or `126 - i` (rounds 63..=125) by
//! the 2x2 matrix `M^(i)`, so the active pair sweeps (1,2) up to (63,64) and
//! back down to (1,2). This is the sparse form of the product
//! `H^(125) ... H^(1)` where `H^(i)` embeds `M^(i)` at diagonal offset
//! `62 - |63 - i|`. Decryption walks the same schedule with the inverse
//! matrices taken in reverse order.

use std::ops::{Add, AddAssign, Mul};

use crate::keymgr::{TempKey, ROUNDS};
use crate::modring::{Mat2, MatN, Word};

pub const SECTOR_BYTES: usize = 512;
pub const SECTOR_WORDS: usize = 64;

/// 512 bytes viewed as 64 little-endian words.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sector(pub [Word; SECTOR_WORDS]);

impl Sector {
    pub const ZERO: Sector = Sector([0; SECTOR_WORDS]);

    pub fn from_bytes(bytes: &[u8; SECTOR_BYTES]) -> Sector {
        Sector(core::array::from_fn(|i| Word::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap())))
    }

    /// Zero-pads inputs shorter than a sector. Panics on longer input.
    pub fn from_slice(bytes: &[u8]) -> Sector {
        assert!(bytes.len() <= SECTOR_BYTES, "sector input longer than {SECTOR_BYTES} bytes");
        let mut buf = [0u8; SECTOR_BYTES];
        buf[..bytes.len()].copy_from_slice(bytes);
        Sector::from_bytes(&buf)
    }

    pub fn to_bytes(&self) -> [u8; SECTOR_BYTES] {
        let mut out = [0u8; SECTOR_BYTES];
        for (chunk, w) in out.chunks_exact_mut(8).zip(self.0) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn words(&self) -> &[Word; SECTOR_WORDS] {
        &self.0
    }

    /// Word-wise sum mod 2^64.
    pub fn wrapping_add(&self, other: &Sector) -> Sector {
        Sector(core::array::from_fn(|i| self.0[i].wrapping_add(other.0[i])))
    }
}

impl std::fmt::Debug for Sector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Sector({:#x}, {:#x}, ..)", self.0[0], self.0[1])
    }
}

/// 0-based index of the first word touched in 1-based `round`.
#[inline]
pub const fn active_pair(round: usize) -> usize {
    if round <= 63 {
        round - 1
    } else {
        125 - round
    }
}

/// Instrumented operation counts for sector work.
///
/// `word_io` counts 64-bit loads and stores of sector data; a sector pass
/// loads 64 words and stores 64 words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OpCount {
    pub multiplies: u64,
    pub additions: u64,
    pub word_io: u64,
}

impl OpCount {
    pub fn arithmetic(&self) -> u64 {
        self.multiplies + self.additions
    }

    pub fn total(&self) -> u64 {
        self.arithmetic() + self.word_io
    }
}

impl Add for OpCount {
    type Output = OpCount;
    fn add(self, rhs: OpCount) -> OpCount {
        OpCount {
            multiplies: self.multiplies + rhs.multiplies,
            additions: self.additions + rhs.additions,
            word_io: self.word_io + rhs.word_io,
        }
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, rhs: OpCount) {
        *self = *self + rhs;
    }
}

impl Mul<u64> for OpCount {
    type Output = OpCount;
    fn mul(self, k: u64) -> OpCount {
        OpCount { multiplies: self.multiplies * k, additions: self.additions * k, word_io: self.word_io * k }
    }
}

/// Hook that lets the hot path stay uninstrumented.
pub trait OpCounter {
    fn record(&mut self, ops: OpCount);
}

impl OpCounter for () {
    #[inline(always)]
    fn record(&mut self, _: OpCount) {}
}

impl OpCounter for OpCount {
    #[inline]
    fn record(&mut self, ops: OpCount) {
        *self += ops;
    }
}

const ROUND_OPS: OpCount = OpCount { multiplies: 4, additions: 2, word_io: 0 };
const SECTOR_IO: OpCount = OpCount { multiplies: 0, additions: 0, word_io: 2 * SECTOR_WORDS as u64 };

fn run_rounds<'a, C: OpCounter>(
    input: &Sector,
    matrices: impl Iterator<Item = &'a Mat2>,
    counter: &mut C,
) -> Sector {
    let mut w = input.0;
    for (idx, m) in matrices.enumerate() {
        let a = active_pair(idx + 1);
        let (x, y) = m.apply(w[a], w[a + 1]);
        w[a] = x;
        w[a + 1] = y;
        counter.record(ROUND_OPS);
    }
    counter.record(SECTOR_IO);
    Sector(w)
}

pub fn encrypt_sector(p: &Sector, key: &TempKey) -> Sector {
    run_rounds(p, key.matrices().iter(), &mut ())
}

pub fn encrypt_sector_counted(p: &Sector, key: &TempKey, ops: &mut OpCount) -> Sector {
    run_rounds(p, key.matrices().iter(), ops)
}

/// Inverse round matrices of a temporary key, computed once per key.
pub struct DecryptKey {
    inverses: Box<[Mat2; ROUNDS]>,
}

impl DecryptKey {
    pub fn new(key: &TempKey) -> DecryptKey {
        DecryptKey { inverses: key.inverses() }
    }

    /// `(M^(round))^-1`, 1-based.
    pub fn round(&self, round: usize) -> &Mat2 {
        &self.inverses[round - 1]
    }
}

impl From<&TempKey> for DecryptKey {
    fn from(key: &TempKey) -> Self {
        DecryptKey::new(key)
    }
}

pub fn decrypt_sector(c: &Sector, key: &TempKey) -> Sector {
    decrypt_sector_with(c, &DecryptKey::new(key))
}

/// Round `i` applies `(M^(126 - i))^-1` on the pair of round `i`.
pub fn decrypt_sector_with(c: &Sector, key: &DecryptKey) -> Sector {
    run_rounds(c, key.inverses.iter().rev(), &mut ())
}

pub fn decrypt_sector_counted(c: &Sector, key: &DecryptKey, ops: &mut OpCount) -> Sector {
    run_rounds(c, key.inverses.iter().rev(), ops)
}

/// The encryption map of `key` as a dense 64x64 matrix.
///
/// Column `k` is the ciphertext of the `k`-th unit vector.
pub fn composite_matrix(key: &TempKey) -> MatN {
    let columns: Vec<Vec<Word>> = (0..SECTOR_WORDS)
        .map(|k| {
            let mut e = Sector::ZERO;
            e.0[k] = 1;
            encrypt_sector(&e, key).0.to_vec()
        })
        .collect();
    MatN::from_columns(&columns).expect("64 columns of 64 words")
}

/// General dense 64x64 matrix-vector product, instrumented.
///
/// Each output word takes 64 multiplies and 63 additions.
pub fn dense_apply_counted(matrix: &MatN, p: &Sector, ops: &mut OpCount) -> Sector {
    assert_eq!(matrix.dim(), SECTOR_WORDS, "dense sector map must be 64x64");
    let mut out = [0; SECTOR_WORDS];
    for (r, o) in out.iter_mut().enumerate() {
        let row = matrix.row(r);
        let mut acc = row[0].wrapping_mul(p.0[0]);
        for (a, x) in row.iter().zip(&p.0).skip(1) {
            acc = acc.wrapping_add(a.wrapping_mul(*x));
        }
        *o = acc;
    }
    let n = SECTOR_WORDS as u64;
    ops.record(OpCount { multiplies: n * n, additions: n * (n - 1), word_io: 0 });
    ops.record(SECTOR_IO);
    Sector(out)
}
