//! Linear key recovery against a fixed sector key.
//!
//! Under one temporary key the whole cipher is a 64x64 matrix `L` over
//! Z/2^64, so 64 plaintext/ciphertext pairs with an invertible plaintext
//! matrix pin it down: `L = C P^-1`. A fresh key per write makes every pair
//! come from a different `L` and the recovered matrix predicts nothing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::keymgr::{KeyAllocator, MasterKey, RtPrnSource};
use crate::modring::{MatN, Word};
use crate::sectorcipher::{encrypt_sector, Sector, SECTOR_WORDS};

/// Plaintext/ciphertext pairs. `same_key` records whether all pairs were
/// produced under one temporary key.
#[derive(Clone, Debug)]
pub struct PairSet {
    pub pairs: Vec<(Sector, Sector)>,
    pub same_key: bool,
}

/// Parity bits of a sector: bit `k` is the low bit of word `k`.
fn parity_mask(s: &Sector) -> u64 {
    s.0.iter().enumerate().fold(0, |m, (k, w)| m | ((w & 1) << k))
}

/// Incremental GF(2) basis over 64-bit vectors, keyed by leading bit.
struct Gf2Basis {
    rows: [u64; 64],
    rank: usize,
}

impl Gf2Basis {
    fn new() -> Self {
        Gf2Basis { rows: [0; 64], rank: 0 }
    }

    /// Adds `v` if it is independent of the basis so far.
    fn insert(&mut self, mut v: u64) -> bool {
        while v != 0 {
            let lead = 63 - v.leading_zeros() as usize;
            if self.rows[lead] == 0 {
                self.rows[lead] = v;
                self.rank += 1;
                return true;
            }
            v ^= self.rows[lead];
        }
        false
    }
}

/// Recovers the 64x64 map behind `pairs`.
///
/// The first 64 pairs whose plaintexts are independent modulo 2 are used;
/// a matrix over Z/2^64 is invertible exactly when it is invertible mod 2.
pub fn recover_key(pairs: &PairSet) -> Result<MatN> {
    if pairs.pairs.len() < SECTOR_WORDS {
        return Err(Error::InsufficientPairs { needed: SECTOR_WORDS, got: pairs.pairs.len() });
    }
    let mut basis = Gf2Basis::new();
    let mut chosen = Vec::with_capacity(SECTOR_WORDS);
    for (p, c) in &pairs.pairs {
        if basis.insert(parity_mask(p)) {
            chosen.push((p, c));
            if chosen.len() == SECTOR_WORDS {
                break;
            }
        }
    }
    if chosen.len() < SECTOR_WORDS {
        return Err(Error::SingularPlaintexts { rank: basis.rank });
    }
    let p = MatN::from_columns(&chosen.iter().map(|(p, _)| p.0).collect::<Vec<_>>())?;
    let c = MatN::from_columns(&chosen.iter().map(|(_, c)| c.0).collect::<Vec<_>>())?;
    c.mul(&p.inverse()?)
}

/// `L p` as a sector.
pub fn predict(l: &MatN, p: &Sector) -> Sector {
    let v = l.mul_vec(&p.0).expect("64x64 map");
    Sector(v.try_into().expect("64 words"))
}

/// Random sectors where the first 64 are independent modulo 2, as a
/// chosen-plaintext attacker would pick them.
pub fn chosen_plaintexts<R: Rng>(count: usize, rng: &mut R) -> Vec<Sector> {
    let mut basis = Gf2Basis::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = Sector(core::array::from_fn(|_| rng.gen::<Word>()));
        if out.len() >= SECTOR_WORDS || basis.insert(parity_mask(&s)) {
            out.push(s);
        }
    }
    out
}

/// Outcome of one attack run against a held-out pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackOutcome {
    pub pairs: usize,
    pub rotate: bool,
    /// Words of the held-out ciphertext the recovered map got wrong.
    pub mismatched_words: usize,
}

impl AttackOutcome {
    pub fn predicted(&self) -> bool {
        self.mismatched_words == 0
    }
}

/// Collects `pairs` chosen-plaintext pairs plus one held-out pair from a
/// one-sector store and runs the recovery.
///
/// With `rotate` every encryption is a separate write and draws a fresh
/// temporary key, as in normal operation. Without it the key of the first
/// write is reused for everything.
pub fn attack_demo<S, R>(
    master: &MasterKey,
    source: &S,
    pool: u64,
    pairs: usize,
    rotate: bool,
    rng: &mut R,
) -> Result<AttackOutcome>
where
    S: RtPrnSource + ?Sized,
    R: Rng,
{
    let plaintexts = chosen_plaintexts(pairs + 1, rng);
    let mut alloc = KeyAllocator::new(pool, 1)?;
    let fixed = alloc.allocate_write_key(0, source, master)?;
    let mut encrypt = |p: &Sector| -> Result<Sector> {
        if rotate {
            Ok(encrypt_sector(p, &alloc.allocate_write_key(0, source, master)?))
        } else {
            Ok(encrypt_sector(p, &fixed))
        }
    };
    let (held_out, known) = plaintexts.split_last().expect("at least one plaintext");
    let set = PairSet {
        pairs: known.iter().map(|p| Ok((*p, encrypt(p)?))).collect::<Result<_>>()?,
        same_key: !rotate,
    };
    let actual = encrypt(held_out)?;
    let l = recover_key(&set)?;
    let guess = predict(&l, held_out);
    let mismatched_words = guess.0.iter().zip(&actual.0).filter(|(a, b)| a != b).count();
    Ok(AttackOutcome { pairs, rotate, mismatched_words })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keymgr::temp_key_for_j;
    use crate::keystream::{derive_hash_key, PrnStream};
    use crate::sectorcipher::composite_matrix;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn setup(seed: &[u8]) -> (MasterKey, PrnStream) {
        let s = PrnStream::new(derive_hash_key(seed).unwrap());
        (MasterKey::generate(&s), s)
    }

    #[test]
    fn unit_plaintexts_give_ciphertext_matrix() {
        let (m, s) = setup(b"unit");
        let key = temp_key_for_j(&m, &s, 1).unwrap();
        let pairs: Vec<_> = (0..64)
            .map(|k| {
                let mut e = Sector::ZERO;
                e.0[k] = 1;
                (e, encrypt_sector(&e, &key))
            })
            .collect();
        let c = MatN::from_columns(&pairs.iter().map(|(_, c)| c.0).collect::<Vec<_>>()).unwrap();
        let l = recover_key(&PairSet { pairs, same_key: true }).unwrap();
        assert_eq!(l, c);
        assert_eq!(l, composite_matrix(&key));
    }

    #[test]
    fn too_few_or_dependent_pairs() {
        let p = PairSet { pairs: vec![(Sector::ZERO, Sector::ZERO); 63], same_key: true };
        assert!(matches!(recover_key(&p), Err(Error::InsufficientPairs { needed: 64, got: 63 })));
        // all-even plaintexts have rank 0 mod 2
        let even = Sector([2; 64]);
        let p = PairSet { pairs: vec![(even, even); 100], same_key: true };
        assert!(matches!(recover_key(&p), Err(Error::SingularPlaintexts { rank: 0 })));
    }

    #[test]
    fn skips_dependent_pairs() {
        let (m, s) = setup(b"skip");
        let key = temp_key_for_j(&m, &s, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let mut ps = chosen_plaintexts(64, &mut rng);
        // a repeated plaintext in front must be passed over
        ps.insert(1, ps[0]);
        let pairs = ps.iter().map(|p| (*p, encrypt_sector(p, &key))).collect();
        let l = recover_key(&PairSet { pairs, same_key: true }).unwrap();
        assert_eq!(l, composite_matrix(&key));
    }

    #[test]
    fn chosen_plaintexts_are_invertible() {
        let mut rng = StdRng::seed_from_u64(1);
        let ps = chosen_plaintexts(64, &mut rng);
        let p = MatN::from_columns(&ps.iter().map(|s| s.0).collect::<Vec<_>>()).unwrap();
        assert!(p.inverse().is_ok());
    }

    #[test]
    fn same_key_predicts_rotation_does_not() {
        let (m, s) = setup(b"demo");
        let mut rng = StdRng::seed_from_u64(9);
        let fixed = attack_demo(&m, &s, 200, 64, false, &mut rng).unwrap();
        assert!(fixed.predicted(), "{fixed:?}");
        let rotating = attack_demo(&m, &s, 200, 64, true, &mut rng).unwrap();
        assert!(!rotating.predicted(), "{rotating:?}");
    }

    #[test]
    fn rotation_needs_a_pool() {
        let (m, s) = setup(b"pool");
        let mut rng = StdRng::seed_from_u64(2);
        let r = attack_demo(&m, &s, 20, 64, true, &mut rng);
        assert!(matches!(r, Err(Error::PoolExhausted { .. })));
    }
}
