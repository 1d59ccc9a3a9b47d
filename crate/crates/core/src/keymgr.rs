//! Master key, per-write temporary keys and RT-PRN allocation.
//!
//! A temporary key differs from the master key only in matrices 1, 63 and
//! 125. Each entry there becomes `2 * (u ^ x) + (u & 1)` for a mask `x`
//! drawn from the write's PRN pair, which keeps the low bit of every entry
//! and therefore the parity of every determinant. Master matrices are
//! involutory with determinant -1, so every temporary key is invertible.

use crate::error::{Error, Result};
use crate::keystream::{PrnStream, MK_PRN_COUNT};
use crate::modring::{gen_involutory, Mat2, Word};

pub const ROUNDS: usize = 125;

/// Serialized master key size: 125 matrices of four 8-byte words.
pub const MASTER_KEY_BYTES: usize = ROUNDS * 2 * 2 * 8;

/// Bytes of RT-PRN pool consumed by one temporary key.
pub const TEMP_KEY_POOL_BYTES: usize = 16;

/// 1-based rounds whose matrices are re-randomized per write.
pub const PERTURBED_ROUNDS: [usize; 3] = [1, 63, 125];

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MasterKey {
    matrices: Box<[Mat2; ROUNDS]>,
}

impl MasterKey {
    /// Builds the master key from MK-PRN pairs `(2i, 2i + 1)`.
    pub fn generate(stream: &PrnStream) -> MasterKey {
        let prns = stream.mk_prns();
        debug_assert_eq!(prns.len() as u64, MK_PRN_COUNT);
        MasterKey::from_prns(&prns)
    }

    pub fn from_prns(prns: &[Word; 2 * ROUNDS]) -> MasterKey {
        let matrices = Box::new(core::array::from_fn(|i| gen_involutory(prns[2 * i], prns[2 * i + 1])));
        MasterKey { matrices }
    }

    /// Rejects matrices that are not involutory.
    pub fn from_matrices(matrices: [Mat2; ROUNDS]) -> Result<MasterKey> {
        if let Some(i) = matrices.iter().position(|m| !m.is_involutory()) {
            return Err(Error::InvalidKey { round: i + 1 });
        }
        Ok(MasterKey { matrices: Box::new(matrices) })
    }

    pub fn matrices(&self) -> &[Mat2; ROUNDS] {
        &self.matrices
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MASTER_KEY_BYTES);
        for m in self.matrices.iter() {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MasterKey> {
        if bytes.len() != MASTER_KEY_BYTES {
            return Err(Error::DimensionMismatch { expected: MASTER_KEY_BYTES, got: bytes.len() });
        }
        let matrices = core::array::from_fn(|i| Mat2::from_le_bytes(bytes[32 * i..32 * i + 32].try_into().unwrap()));
        MasterKey::from_matrices(matrices)
    }
}

/// The 125 matrices used for one sector encryption. Always invertible.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TempKey {
    matrices: Box<[Mat2; ROUNDS]>,
}

impl TempKey {
    pub fn new(matrices: [Mat2; ROUNDS]) -> Result<TempKey> {
        if let Some(i) = matrices.iter().position(|m| !m.is_invertible()) {
            return Err(Error::InvalidKey { round: i + 1 });
        }
        Ok(TempKey { matrices: Box::new(matrices) })
    }

    pub fn identity() -> TempKey {
        TempKey { matrices: Box::new([Mat2::IDENTITY; ROUNDS]) }
    }

    pub fn matrices(&self) -> &[Mat2; ROUNDS] {
        &self.matrices
    }

    /// Matrix `M^(round)`, 1-based.
    pub fn round(&self, round: usize) -> &Mat2 {
        &self.matrices[round - 1]
    }

    /// `(M^(i))^-1` for every round, in round order.
    pub fn inverses(&self) -> Box<[Mat2; ROUNDS]> {
        Box::new(core::array::from_fn(|i| {
            self.matrices[i].inverse().expect("TempKey matrices are invertible")
        }))
    }
}

#[inline]
fn perturb(u: Word, mask: Word) -> Word {
    (u ^ mask).wrapping_shl(1).wrapping_add(u & 1)
}

/// Temporary key for the pair `(R_{2j-1}, R_{2j})`.
pub fn derive_temp_key(master: &MasterKey, r_odd: Word, r_even: Word) -> TempKey {
    let mut matrices = *master.matrices();
    for (round, mask) in [(1, r_odd), (63, r_odd ^ r_even), (125, r_even)] {
        let m = &mut matrices[round - 1];
        for entry in m.0.iter_mut().flatten() {
            *entry = perturb(*entry, mask);
        }
    }
    debug_assert!(matrices.iter().all(Mat2::is_invertible));
    TempKey { matrices: Box::new(matrices) }
}

/// Anything that can produce RT-PRN `R_i` (1-based).
pub trait RtPrnSource {
    fn rt_prn(&self, i: u64) -> Result<Word>;
}

impl RtPrnSource for [Word] {
    fn rt_prn(&self, i: u64) -> Result<Word> {
        i.checked_sub(1)
            .and_then(|k| self.get(usize::try_from(k).ok()?))
            .copied()
            .ok_or(Error::IndexOutOfRange { index: i, limit: self.len() as u64 })
    }
}

impl RtPrnSource for Vec<Word> {
    fn rt_prn(&self, i: u64) -> Result<Word> {
        self.as_slice().rt_prn(i)
    }
}

/// Keystream-backed RT-PRNs; the pool size bound is enforced by the allocator.
impl RtPrnSource for PrnStream {
    fn rt_prn(&self, i: u64) -> Result<Word> {
        let k = i.checked_sub(1).ok_or(Error::IndexOutOfRange { index: 0, limit: u64::MAX })?;
        PrnStream::rt_prn(self, k, u64::MAX)
    }
}

/// Temporary key for the `j`-th encryption.
pub fn temp_key_for_j<S: RtPrnSource + ?Sized>(master: &MasterKey, source: &S, j: u64) -> Result<TempKey> {
    if j == 0 {
        return Err(Error::IndexOutOfRange { index: 0, limit: u64::MAX });
    }
    let r_odd = source.rt_prn(2 * j - 1)?;
    let r_even = source.rt_prn(2 * j)?;
    Ok(derive_temp_key(master, r_odd, r_even))
}

/// Tracks which PRN pair each sector was last written with.
///
/// `j` is a single global write counter starting at 1; write `j` consumes
/// `R_{2j-1}` and `R_{2j}`. A table entry of 0 means the sector has never
/// been written. Mutation requires exclusive access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyAllocator {
    d: u64,
    next_j: u64,
    sector_j: Vec<u64>,
}

impl KeyAllocator {
    pub fn new(d: u64, sectors: u64) -> Result<KeyAllocator> {
        if d < 2 || !d.is_multiple_of(2) {
            return Err(Error::InvalidGeometry(format!("pool size d = {d} must be even and at least 2")));
        }
        let sectors = usize::try_from(sectors)
            .map_err(|_| Error::InvalidGeometry(format!("{sectors} sectors do not fit in memory")))?;
        Ok(KeyAllocator { d, next_j: 1, sector_j: vec![0; sectors] })
    }

    /// Restores persisted state, checking every recorded `j` against the cursor.
    pub fn from_parts(d: u64, next_j: u64, sector_j: Vec<u64>) -> Result<KeyAllocator> {
        let mut alloc = KeyAllocator::new(d, 0)?;
        if next_j == 0 || (next_j - 1).checked_mul(2).is_none_or(|used| used > d) {
            return Err(Error::CorruptImage(format!("allocator cursor {next_j} inconsistent with d = {d}")));
        }
        if let Some(bad) = sector_j.iter().find(|&&j| j >= next_j) {
            return Err(Error::CorruptImage(format!("sector key index {bad} is not below cursor {next_j}")));
        }
        alloc.next_j = next_j;
        alloc.sector_j = sector_j;
        Ok(alloc)
    }

    pub fn pool_size(&self) -> u64 {
        self.d
    }

    pub fn next_j(&self) -> u64 {
        self.next_j
    }

    pub fn sector_count(&self) -> u64 {
        self.sector_j.len() as u64
    }

    pub fn sector_table(&self) -> &[u64] {
        &self.sector_j
    }

    /// Writes still possible before the pool runs dry.
    pub fn remaining(&self) -> u64 {
        self.d / 2 + 1 - self.next_j
    }

    /// `j` recorded for `sector`, if written.
    pub fn recorded_j(&self, sector: u64) -> Result<Option<u64>> {
        let j = *self.slot(sector)?;
        Ok((j != 0).then_some(j))
    }

    fn slot(&self, sector: u64) -> Result<&u64> {
        usize::try_from(sector)
            .ok()
            .and_then(|s| self.sector_j.get(s))
            .ok_or(Error::IndexOutOfRange { index: sector, limit: self.sector_count() })
    }

    /// Consumes a fresh PRN pair for a write to `sector`.
    pub fn allocate_write_key<S: RtPrnSource + ?Sized>(
        &mut self,
        sector: u64,
        source: &S,
        master: &MasterKey,
    ) -> Result<TempKey> {
        let (j, key) = self.peek_write_key(sector, source, master)?;
        self.sector_j[sector as usize] = j;
        self.next_j += 1;
        Ok(key)
    }

    /// The `j` and key the next write to `sector` would use, without
    /// consuming them. Pair with [`apply_record`](Self::apply_record) once
    /// the write is durable.
    pub fn peek_write_key<S: RtPrnSource + ?Sized>(
        &self,
        sector: u64,
        source: &S,
        master: &MasterKey,
    ) -> Result<(u64, TempKey)> {
        self.slot(sector)?;
        let j = self.next_j;
        if 2 * j - 1 > self.d {
            return Err(Error::PoolExhausted { d: self.d, next_j: j });
        }
        Ok((j, temp_key_for_j(master, source, j)?))
    }

    /// Re-derives the key of the last write to `sector`. Consumes nothing.
    pub fn lookup_read_key<S: RtPrnSource + ?Sized>(
        &self,
        sector: u64,
        source: &S,
        master: &MasterKey,
    ) -> Result<TempKey> {
        let j = self.recorded_j(sector)?.ok_or(Error::NeverWritten(sector))?;
        temp_key_for_j(master, source, j)
    }

    /// Records a write already applied elsewhere, e.g. during journal replay.
    pub fn apply_record(&mut self, sector: u64, j: u64, next_j: u64) -> Result<()> {
        self.slot(sector)?;
        if j == 0 || j >= next_j || 2 * (next_j - 1) > self.d {
            return Err(Error::CorruptImage(format!("write record j = {j}, cursor {next_j} out of range")));
        }
        self.sector_j[sector as usize] = j;
        self.next_j = self.next_j.max(next_j);
        Ok(())
    }
}
