//! PRN pipeline: user key -> SHA3-384 -> 320-bit hash key -> Salsa20/12.
//!
//! The first 256 bits of the hash key are the Salsa20 key and the remaining
//! 64 bits are the nonce. The keystream is read as little-endian words, so
//! word `i` lives at byte offset `8 * i`. Words `[0, 250)` feed master-key
//! generation (MK-PRNs); RT-PRNs start at word 250.

use salsa20::cipher::{KeyIvInit, StreamCipher, StreamCipherSeek};
use salsa20::Salsa12;
use sha3::{Digest, Sha3_384};

use crate::error::{Error, Result};
use crate::modring::Word;

pub const HASH_KEY_BYTES: usize = 40;

/// Words consumed by master-key generation: 125 matrices, two words each.
pub const MK_PRN_COUNT: u64 = 250;

/// First stream index of the RT-PRN region.
pub const RT_PRN_OFFSET: u64 = MK_PRN_COUNT;

/// Exclusive upper bound on word indices.
pub const MAX_WORD_INDEX: u64 = 1 << 58;

/// First 320 bits of SHA3-384 over the user key.
#[derive(Clone, PartialEq, Eq)]
pub struct HashKey([u8; HASH_KEY_BYTES]);

impl HashKey {
    pub fn from_bytes(bytes: [u8; HASH_KEY_BYTES]) -> Self {
        HashKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; HASH_KEY_BYTES] {
        &self.0
    }

    fn cipher_key(&self) -> [u8; 32] {
        self.0[..32].try_into().unwrap()
    }

    fn nonce(&self) -> [u8; 8] {
        self.0[32..].try_into().unwrap()
    }

    /// Independent hash key for a tagged sub-stream.
    pub fn derive(&self, tag: &[u8]) -> HashKey {
        let mut h = Sha3_384::new();
        h.update(self.0);
        h.update(tag);
        let digest = h.finalize();
        HashKey(digest[..HASH_KEY_BYTES].try_into().unwrap())
    }
}

impl std::fmt::Debug for HashKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("HashKey(..)")
    }
}

pub fn derive_hash_key(user_key: &[u8]) -> Result<HashKey> {
    if user_key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let digest = Sha3_384::digest(user_key);
    Ok(HashKey(digest[..HASH_KEY_BYTES].try_into().unwrap()))
}

/// Random-access view of the Salsa20/12 word stream under one hash key.
///
/// Holds no cursor: every read seeks, so a word is a pure function of
/// `(hash_key, index)`.
#[derive(Clone, Debug)]
pub struct PrnStream {
    key: HashKey,
}

impl PrnStream {
    pub fn new(key: HashKey) -> Self {
        PrnStream { key }
    }

    pub fn hash_key(&self) -> &HashKey {
        &self.key
    }

    pub fn word(&self, index: u64) -> Result<Word> {
        let mut w = [0];
        self.fill(index, &mut w)?;
        Ok(w[0])
    }

    /// Fills `out` with words `start .. start + out.len()`.
    pub fn fill(&self, start: u64, out: &mut [Word]) -> Result<()> {
        let end = start
            .checked_add(out.len() as u64)
            .filter(|&e| e <= MAX_WORD_INDEX)
            .ok_or(Error::IndexOutOfRange {
                index: start.saturating_add(out.len() as u64).saturating_sub(1),
                limit: MAX_WORD_INDEX,
            })?;
        debug_assert!(end <= MAX_WORD_INDEX);
        let mut cipher = Salsa12::new(&self.key.cipher_key().into(), &self.key.nonce().into());
        cipher.seek(start * 8);
        const CHUNK: usize = 512;
        let mut buf = [0u8; CHUNK * 8];
        for words in out.chunks_mut(CHUNK) {
            let bytes = &mut buf[..words.len() * 8];
            bytes.fill(0);
            cipher.apply_keystream(bytes);
            for (w, b) in words.iter_mut().zip(bytes.chunks_exact(8)) {
                *w = Word::from_le_bytes(b.try_into().unwrap());
            }
        }
        Ok(())
    }

    pub fn words(&self, start: u64, count: usize) -> Result<Vec<Word>> {
        let mut out = vec![0; count];
        self.fill(start, &mut out)?;
        Ok(out)
    }

    pub fn mk_prn(&self, i: u64) -> Result<Word> {
        if i >= MK_PRN_COUNT {
            return Err(Error::IndexOutOfRange { index: i, limit: MK_PRN_COUNT });
        }
        self.word(i)
    }

    pub fn mk_prns(&self) -> [Word; MK_PRN_COUNT as usize] {
        let mut out = [0; MK_PRN_COUNT as usize];
        self.fill(0, &mut out).expect("MK-PRN range is in bounds");
        out
    }

    /// RT-PRN `i` (0-based) of a pool holding `d` words.
    pub fn rt_prn(&self, i: u64, d: u64) -> Result<Word> {
        if i >= d {
            return Err(Error::IndexOutOfRange { index: i, limit: d });
        }
        self.word(RT_PRN_OFFSET + i)
    }

    pub fn rt_pool(&self, d: u64) -> Result<Vec<Word>> {
        let count = usize::try_from(d).map_err(|_| Error::IndexOutOfRange { index: d, limit: usize::MAX as u64 })?;
        self.words(RT_PRN_OFFSET, count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Salsa20 block function written from the algorithm description, with a
    /// configurable double-round count.
    fn salsa_block(key: &[u8; 32], nonce: &[u8; 8], counter: u64, rounds: usize) -> [u8; 64] {
        fn le(b: &[u8]) -> u32 {
            u32::from_le_bytes(b.try_into().unwrap())
        }
        let c = b"expand 32-byte k";
        let mut x = [0u32; 16];
        x[0] = le(&c[0..4]);
        x[5] = le(&c[4..8]);
        x[10] = le(&c[8..12]);
        x[15] = le(&c[12..16]);
        for i in 0..4 {
            x[1 + i] = le(&key[4 * i..4 * i + 4]);
            x[11 + i] = le(&key[16 + 4 * i..16 + 4 * i + 4]);
        }
        x[6] = le(&nonce[0..4]);
        x[7] = le(&nonce[4..8]);
        x[8] = counter as u32;
        x[9] = (counter >> 32) as u32;
        let input = x;
        fn qr(x: &mut [u32; 16], a: usize, b: usize, c: usize, d: usize) {
            x[b] ^= x[a].wrapping_add(x[d]).rotate_left(7);
            x[c] ^= x[b].wrapping_add(x[a]).rotate_left(9);
            x[d] ^= x[c].wrapping_add(x[b]).rotate_left(13);
            x[a] ^= x[d].wrapping_add(x[c]).rotate_left(18);
        }
        for _ in 0..rounds / 2 {
            qr(&mut x, 0, 4, 8, 12);
            qr(&mut x, 5, 9, 13, 1);
            qr(&mut x, 10, 14, 2, 6);
            qr(&mut x, 15, 3, 7, 11);
            qr(&mut x, 0, 1, 2, 3);
            qr(&mut x, 5, 6, 7, 4);
            qr(&mut x, 10, 11, 8, 9);
            qr(&mut x, 15, 12, 13, 14);
        }
        let mut out = [0u8; 64];
        for i in 0..16 {
            out[4 * i..4 * i + 4].copy_from_slice(&x[i].wrapping_add(input[i]).to_le_bytes());
        }
        out
    }

    fn hex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    #[test]
    fn reference_salsa_matches_published_salsa20_20() {
        // Salsa20/20, all-zero key and nonce, block 0.
        let expected = hex(
            "9a97f65b9b4c721b960a672145fca8d4e32e67f9111ea979ce9c4826806aeee6\
             3de9c0da2bd7f91ebcb2639bf989c6251b29bf38d39a9bdce7c55f4b2ac12a39",
        );
        assert_eq!(salsa_block(&[0; 32], &[0; 8], 0, 20).to_vec(), expected);
    }

    #[test]
    fn salsa12_stream_matches_reference() {
        let cases: [([u8; 32], [u8; 8]); 3] = [
            ([0; 32], [0; 8]),
            (core::array::from_fn(|i| i as u8), core::array::from_fn(|i| 0xa0 + i as u8)),
            ([0xff; 32], [0x5a; 8]),
        ];
        for (key, nonce) in cases {
            let mut hk = [0u8; HASH_KEY_BYTES];
            hk[..32].copy_from_slice(&key);
            hk[32..].copy_from_slice(&nonce);
            let stream = PrnStream::new(HashKey::from_bytes(hk));
            let words = stream.words(0, 8 * 4).unwrap();
            for block in 0..4u64 {
                let reference = salsa_block(&key, &nonce, block, 12);
                for i in 0..8 {
                    let w = u64::from_le_bytes(reference[8 * i..8 * i + 8].try_into().unwrap());
                    assert_eq!(words[block as usize * 8 + i], w);
                }
            }
            // random access agrees with the sequential read
            assert_eq!(stream.word(17).unwrap(), words[17]);
        }
    }

    #[test]
    fn salsa12_zero_key_known_answer() {
        // Salsa20/12, all-zero key and nonce, block 0; computed with an
        // independent Python transcription of the block function.
        let expected = hex(
            "bd78a2f8118a563c761db4f2fbe055da97f90988d27594d9c5dfd13a3efeaa3f\
             68f0d2564850adf5017433968e4b3405ac49a39532124fcd6f47e415c7028a83",
        );
        assert_eq!(salsa_block(&[0; 32], &[0; 8], 0, 12).to_vec(), expected);
        let stream = PrnStream::new(HashKey::from_bytes([0; HASH_KEY_BYTES]));
        let bytes: Vec<u8> = stream.words(0, 8).unwrap().iter().flat_map(|w| w.to_le_bytes()).collect();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn sha3_384_known_answer() {
        let hk = derive_hash_key(b"abc").unwrap();
        let full = hex(
            "ec01498288516fc926459f58e2c6ad8df9b473cb0fc08c2596da7cf0e49be4b2\
             98d88cea927ac7f539f1edf228376d25",
        );
        assert_eq!(hk.as_bytes().to_vec(), full[..40].to_vec());
        assert_eq!(derive_hash_key(b"abc").unwrap(), hk);
        assert!(matches!(derive_hash_key(b""), Err(Error::EmptyKey)));
    }

    #[test]
    fn distinct_keys_distinct_hash_keys() {
        let keys: HashSet<[u8; 40]> = (0u32..2000)
            .map(|i| *derive_hash_key(&i.to_le_bytes()).unwrap().as_bytes())
            .collect();
        assert_eq!(keys.len(), 2000);
    }

    #[test]
    fn prn_partition() {
        let stream = PrnStream::new(derive_hash_key(b"partition").unwrap());
        assert_eq!(stream.rt_prn(0, 10).unwrap(), stream.word(250).unwrap());
        assert_eq!(stream.mk_prn(249).unwrap(), stream.word(249).unwrap());
        assert!(matches!(stream.mk_prn(250), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(stream.rt_prn(10, 10), Err(Error::IndexOutOfRange { .. })));
        assert_eq!(stream.mk_prns().to_vec(), stream.words(0, 250).unwrap());
        assert_eq!(stream.rt_pool(6).unwrap(), stream.words(250, 6).unwrap());
        const { assert!(RT_PRN_OFFSET >= MK_PRN_COUNT) };
    }

    #[test]
    fn index_bound() {
        let stream = PrnStream::new(derive_hash_key(b"k").unwrap());
        assert!(stream.word(MAX_WORD_INDEX - 1).is_ok());
        assert!(matches!(stream.word(MAX_WORD_INDEX), Err(Error::IndexOutOfRange { .. })));
        assert!(stream.word(u64::MAX).is_err());
    }

    #[test]
    fn streams_under_different_keys_are_unrelated() {
        let a = PrnStream::new(derive_hash_key(b"alpha").unwrap()).words(0, 1 << 16).unwrap();
        let b = PrnStream::new(derive_hash_key(b"beta").unwrap()).words(0, 1 << 16).unwrap();
        let equal = a.iter().zip(&b).filter(|(x, y)| x == y).count();
        // expected 2^16 / 2^64 coincidences
        assert_eq!(equal, 0);
    }

    #[test]
    fn derived_keys_differ_from_parent() {
        let k = derive_hash_key(b"parent").unwrap();
        assert_ne!(k.derive(b"a"), k);
        assert_ne!(k.derive(b"a"), k.derive(b"b"));
        assert_eq!(k.derive(b"a"), k.derive(b"a"));
    }
}
