//! Iterative protection of the precomputed key material (IFCR).
//!
//! A payload of `k > 9` sectors is encrypted sector by sector with the
//! butterfly cipher under a freshly generated key material: one master key
//! plus two RT-PRNs per protected sector, `16k + 4000` bytes in total. That
//! key material is itself the payload of the next level, which occupies
//! `ceil((16k + 4000) / 512)` sectors. Once a payload fits in nine sectors
//! it is sealed with AES-256-CBC. Each level shrinks the payload by roughly
//! a factor of 32, so the chain depth is logarithmic in the payload size.
//!
//! Level `l` draws its key material from a keystream sub-key tagged with
//! `l`, so the whole chain can be regenerated from the user's hash key. The
//! base key is SHA3-256 over the hash key and a domain tag; only the base IV
//! is random.
//!
//! Serialized chain (little-endian):
//!
//! ```text
//! "PIFC" | version u16 | depth u16 | base IV [16]
//! depth x { sector count u32 | j offset u64 }     outermost first
//! depth x level ciphertext (sector count * 512)  outermost first
//! base ciphertext                                 rest of the blob
//! ```
//!
//! The base plaintext is framed as
//! `"PIFB" | version u16 | 0u16 | outer len u64 | inner len u64 | outer crc32 | inner crc32`
//! followed by the innermost payload, zero-padded to the AES block size.

use aes::Aes256;
use cbc::cipher::block_padding::NoPadding;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::RngCore;
use sha3::{Digest, Sha3_256};

use crate::error::{Error, Result};
use crate::keymgr::{temp_key_for_j, MasterKey, MASTER_KEY_BYTES, TEMP_KEY_POOL_BYTES};
use crate::keystream::{HashKey, PrnStream};
use crate::modring::Word;
use crate::sectorcipher::{decrypt_sector, encrypt_sector, Sector, SECTOR_BYTES};

/// Largest payload, in sectors, sealed directly by the base cipher.
pub const BASE_MAX_SECTORS: u64 = 9;

pub const CHAIN_MAGIC: [u8; 4] = *b"PIFC";
pub const CHAIN_VERSION: u16 = 1;
const BASE_MAGIC: [u8; 4] = *b"PIFB";
const BASE_VERSION: u16 = 1;
const BASE_FRAME_BYTES: usize = 32;
const LEVEL_ENTRY_BYTES: usize = 12;
const CHAIN_FIXED_BYTES: usize = 4 + 2 + 2 + 16;
const AES_BLOCK: usize = 16;

/// Sector footprint of the key material that protects `k` sectors.
pub fn next_level_size(k: u64) -> u64 {
    (TEMP_KEY_POOL_BYTES as u64 * k + MASTER_KEY_BYTES as u64).div_ceil(SECTOR_BYTES as u64)
}

/// Sector counts of every level for an `n`-sector payload, outermost first,
/// ending with the base payload size.
pub fn chain_sizes(n: u64) -> Vec<u64> {
    let mut sizes = vec![n];
    let mut k = n;
    while k > BASE_MAX_SECTORS {
        k = next_level_size(k);
        sizes.push(k);
    }
    sizes
}

/// Number of butterfly-encrypted levels for an `n`-sector payload.
pub fn chain_depth(n: u64) -> usize {
    chain_sizes(n).len() - 1
}

pub fn sectors_for_bytes(len: usize) -> u64 {
    len.div_ceil(SECTOR_BYTES) as u64
}

/// A master key plus an RT-PRN pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMaterial {
    pub master: MasterKey,
    pub pool: Vec<Word>,
}

impl KeyMaterial {
    /// Master key from the stream's MK-PRNs, pool of `d` RT-PRNs.
    pub fn generate(stream: &PrnStream, d: u64) -> Result<KeyMaterial> {
        Ok(KeyMaterial { master: MasterKey::generate(stream), pool: stream.rt_pool(d)? })
    }

    pub fn encoded_len(pool_words: u64) -> u64 {
        MASTER_KEY_BYTES as u64 + 8 * pool_words
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(KeyMaterial::encoded_len(self.pool.len() as u64) as usize);
        out.extend_from_slice(&self.master.to_bytes());
        for w in &self.pool {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KeyMaterial> {
        if bytes.len() < MASTER_KEY_BYTES || !(bytes.len() - MASTER_KEY_BYTES).is_multiple_of(8) {
            return Err(Error::DimensionMismatch { expected: MASTER_KEY_BYTES, got: bytes.len() });
        }
        let master = MasterKey::from_bytes(&bytes[..MASTER_KEY_BYTES])?;
        let pool = bytes[MASTER_KEY_BYTES..]
            .chunks_exact(8)
            .map(|c| Word::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(KeyMaterial { master, pool })
    }
}

fn level_stream(hash_key: &HashKey, level: u16) -> PrnStream {
    let mut tag = b"ifcr-level".to_vec();
    tag.extend_from_slice(&level.to_le_bytes());
    PrnStream::new(hash_key.derive(&tag))
}

/// AES-256 key for the chain's base block.
pub fn base_key(hash_key: &HashKey) -> [u8; 32] {
    let mut h = Sha3_256::new();
    h.update(hash_key.as_bytes());
    h.update(b"ifcr-base");
    h.finalize().into()
}

/// AES-256-CBC without padding.
pub fn spn_base_encrypt(blob: &[u8], key: &[u8; 32], iv: &[u8; 16]) -> Result<Vec<u8>> {
    if !blob.len().is_multiple_of(AES_BLOCK) {
        return Err(Error::BadLength(blob.len()));
    }
    Ok(cbc::Encryptor::<Aes256>::new(key.into(), iv.into()).encrypt_padded_vec_mut::<NoPadding>(blob))
}

pub fn spn_base_decrypt(blob: &[u8], key: &[u8; 32], iv: &[u8; 16]) -> Result<Vec<u8>> {
    if !blob.len().is_multiple_of(AES_BLOCK) {
        return Err(Error::BadLength(blob.len()));
    }
    cbc::Decryptor::<Aes256>::new(key.into(), iv.into())
        .decrypt_padded_vec_mut::<NoPadding>(blob)
        .map_err(|_| Error::BadLength(blob.len()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IfcrLevel {
    pub sector_count: u32,
    /// Sector `s` of this level was encrypted with `j = j_offset + s + 1` of
    /// the next level's pool.
    pub j_offset: u64,
    pub ciphertext: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IfcrChain {
    /// Outermost first.
    pub levels: Vec<IfcrLevel>,
    pub base_iv: [u8; 16],
    pub base: Vec<u8>,
}

impl IfcrChain {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let body: usize = self.levels.iter().map(|l| l.ciphertext.len()).sum();
        let mut out =
            Vec::with_capacity(CHAIN_FIXED_BYTES + LEVEL_ENTRY_BYTES * self.depth() + body + self.base.len());
        out.extend_from_slice(&CHAIN_MAGIC);
        out.extend_from_slice(&CHAIN_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.depth() as u16).to_le_bytes());
        out.extend_from_slice(&self.base_iv);
        for level in &self.levels {
            out.extend_from_slice(&level.sector_count.to_le_bytes());
            out.extend_from_slice(&level.j_offset.to_le_bytes());
        }
        for level in &self.levels {
            out.extend_from_slice(&level.ciphertext);
        }
        out.extend_from_slice(&self.base);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<IfcrChain> {
        let corrupt = |msg: &str| Error::CorruptChain(msg.to_string());
        if bytes.len() < CHAIN_FIXED_BYTES {
            return Err(corrupt("truncated header"));
        }
        if bytes[..4] != CHAIN_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHAIN_VERSION {
            return Err(Error::CorruptChain(format!("unsupported version {version}")));
        }
        let depth = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let base_iv: [u8; 16] = bytes[8..24].try_into().unwrap();
        let table_end = CHAIN_FIXED_BYTES + depth * LEVEL_ENTRY_BYTES;
        if bytes.len() < table_end {
            return Err(corrupt("truncated level table"));
        }
        let mut entries = Vec::with_capacity(depth);
        for e in bytes[CHAIN_FIXED_BYTES..table_end].chunks_exact(LEVEL_ENTRY_BYTES) {
            let k = u32::from_le_bytes(e[..4].try_into().unwrap());
            let j_offset = u64::from_le_bytes(e[4..].try_into().unwrap());
            entries.push((k, j_offset));
        }
        let mut pos = table_end;
        let mut levels = Vec::with_capacity(depth);
        for (k, j_offset) in entries {
            let len = k as usize * SECTOR_BYTES;
            let end = pos.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated level"))?;
            levels.push(IfcrLevel { sector_count: k, j_offset, ciphertext: bytes[pos..end].to_vec() });
            pos = end;
        }
        let base = bytes[pos..].to_vec();
        if base.is_empty() || !base.len().is_multiple_of(AES_BLOCK) {
            return Err(Error::CorruptChain(format!("base block of {} bytes", base.len())));
        }
        Ok(IfcrChain { levels, base_iv, base })
    }
}

fn sectors_of(bytes: &[u8]) -> impl Iterator<Item = Sector> + '_ {
    bytes.chunks(SECTOR_BYTES).map(Sector::from_slice)
}

/// Encrypts `payload` with a random base IV.
pub fn ifcr_encrypt(payload: &[u8], hash_key: &HashKey) -> Result<IfcrChain> {
    let mut iv = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut iv);
    ifcr_encrypt_with_iv(payload, hash_key, iv)
}

pub fn ifcr_encrypt_with_iv(payload: &[u8], hash_key: &HashKey, iv: [u8; 16]) -> Result<IfcrChain> {
    let mut levels = Vec::new();
    let mut current: Vec<u8> = payload.to_vec();
    let mut k = sectors_for_bytes(current.len());
    while k > BASE_MAX_SECTORS {
        let level = u16::try_from(levels.len()).map_err(|_| Error::CorruptChain("chain too deep".into()))?;
        let sector_count = u32::try_from(k)
            .map_err(|_| Error::InvalidGeometry(format!("level of {k} sectors exceeds the chain format")))?;
        let material = KeyMaterial::generate(&level_stream(hash_key, level), 2 * k)?;
        let mut ciphertext = Vec::with_capacity(k as usize * SECTOR_BYTES);
        for (s, p) in sectors_of(&current).enumerate() {
            let key = temp_key_for_j(&material.master, &material.pool, s as u64 + 1)?;
            ciphertext.extend_from_slice(&encrypt_sector(&p, &key).to_bytes());
        }
        levels.push(IfcrLevel { sector_count, j_offset: 0, ciphertext });
        current = material.to_bytes();
        debug_assert_eq!(sectors_for_bytes(current.len()), next_level_size(k));
        k = next_level_size(k);
    }

    let mut framed = Vec::with_capacity(BASE_FRAME_BYTES + current.len() + AES_BLOCK);
    framed.extend_from_slice(&BASE_MAGIC);
    framed.extend_from_slice(&BASE_VERSION.to_le_bytes());
    framed.extend_from_slice(&0u16.to_le_bytes());
    framed.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    framed.extend_from_slice(&(current.len() as u64).to_le_bytes());
    framed.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    framed.extend_from_slice(&crc32fast::hash(&current).to_le_bytes());
    framed.extend_from_slice(&current);
    framed.resize(framed.len().next_multiple_of(AES_BLOCK), 0);
    let base = spn_base_encrypt(&framed, &base_key(hash_key), &iv)?;
    Ok(IfcrChain { levels, base_iv: iv, base })
}

struct BaseFrame {
    outer_len: u64,
    outer_crc: u32,
    inner: Vec<u8>,
}

fn open_base(chain: &IfcrChain, hash_key: &HashKey) -> Result<BaseFrame> {
    let plain = spn_base_decrypt(&chain.base, &base_key(hash_key), &chain.base_iv)
        .map_err(|e| Error::BadBase(e.to_string()))?;
    if plain.len() < BASE_FRAME_BYTES || plain[..4] != BASE_MAGIC {
        return Err(Error::BadBase("bad frame magic (wrong key or corrupted base)".into()));
    }
    let u64_at = |at: usize| u64::from_le_bytes(plain[at..at + 8].try_into().unwrap());
    let u32_at = |at: usize| u32::from_le_bytes(plain[at..at + 4].try_into().unwrap());
    let version = u16::from_le_bytes([plain[4], plain[5]]);
    if version != BASE_VERSION {
        return Err(Error::BadBase(format!("unsupported frame version {version}")));
    }
    let outer_len = u64_at(8);
    let inner_len = u64_at(16);
    let (outer_crc, inner_crc) = (u32_at(24), u32_at(28));
    let inner_end = usize::try_from(inner_len)
        .ok()
        .and_then(|l| l.checked_add(BASE_FRAME_BYTES))
        .filter(|&e| e <= plain.len() && plain.len() - e < AES_BLOCK)
        .ok_or_else(|| Error::BadBase(format!("inner length {inner_len} does not fit the base block")))?;
    let inner = plain[BASE_FRAME_BYTES..inner_end].to_vec();
    if crc32fast::hash(&inner) != inner_crc {
        return Err(Error::BadBase("inner checksum mismatch".into()));
    }
    if sectors_for_bytes(inner.len()) > BASE_MAX_SECTORS {
        return Err(Error::BadBase(format!("base payload of {} bytes exceeds nine sectors", inner.len())));
    }
    Ok(BaseFrame { outer_len, outer_crc, inner })
}

pub fn ifcr_decrypt(chain: &IfcrChain, hash_key: &HashKey) -> Result<Vec<u8>> {
    let frame = open_base(chain, hash_key)?;
    let mut current = frame.inner;
    for (idx, level) in chain.levels.iter().enumerate().rev() {
        let k = level.sector_count as u64;
        if level.ciphertext.len() != k as usize * SECTOR_BYTES {
            return Err(Error::CorruptChain(format!("level {idx} ciphertext length mismatch")));
        }
        if k <= BASE_MAX_SECTORS {
            return Err(Error::CorruptChain(format!("level {idx} holds only {k} sectors")));
        }
        let material = KeyMaterial::from_bytes(&current)
            .map_err(|e| Error::CorruptChain(format!("level {idx} key material: {e}")))?;
        let needed = level.j_offset.checked_add(k).and_then(|x| x.checked_mul(2));
        if needed.is_none_or(|n| n > material.pool.len() as u64) {
            return Err(Error::CorruptChain(format!("level {idx} needs more PRNs than its key material holds")));
        }
        let mut plain = Vec::with_capacity(level.ciphertext.len());
        for (s, c) in sectors_of(&level.ciphertext).enumerate() {
            let key = temp_key_for_j(&material.master, &material.pool, level.j_offset + s as u64 + 1)?;
            plain.extend_from_slice(&decrypt_sector(&c, &key).to_bytes());
        }
        let expected_len = if idx == 0 {
            frame.outer_len
        } else {
            let inner_k = chain.levels[idx - 1].sector_count as u64;
            let inner_j = chain.levels[idx - 1].j_offset;
            KeyMaterial::encoded_len(2 * (inner_j + inner_k))
        };
        let expected_len = usize::try_from(expected_len)
            .ok()
            .filter(|&l| l <= plain.len() && plain.len() - l < SECTOR_BYTES)
            .ok_or_else(|| Error::CorruptChain(format!("level {idx} plaintext length mismatch")))?;
        plain.truncate(expected_len);
        current = plain;
    }
    if current.len() as u64 != frame.outer_len {
        return Err(Error::CorruptChain("outer payload length mismatch".into()));
    }
    if crc32fast::hash(&current) != frame.outer_crc {
        return Err(Error::CorruptChain("payload checksum mismatch".into()));
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::derive_hash_key;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn hk() -> HashKey {
        derive_hash_key(b"ifcr test key").unwrap()
    }

    fn payload(sectors: usize, seed: u64) -> Vec<u8> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut v = vec![0u8; sectors * SECTOR_BYTES];
        rng.fill(&mut v[..]);
        v
    }

    /// Iterates the size recurrence with plain integer arithmetic.
    fn recurrence_oracle(mut k: u64) -> Vec<u64> {
        let mut out = vec![k];
        while k > 9 {
            k = (16 * k + 4000).div_ceil(512);
            out.push(k);
        }
        out
    }

    #[test]
    fn size_recurrence() {
        assert_eq!(next_level_size(10), 9);
        assert_eq!(next_level_size(16393), 521);
        assert_eq!(chain_sizes(524_296), vec![524_296, 16_393, 521, 25, 9]);
        assert_eq!(chain_depth(524_296), 4);
        assert_eq!(chain_depth(9), 0);
        assert_eq!(chain_depth(10), 1);
        for n in [1, 9, 10, 11, 100, 1000, 4_321, 99_999, 10_000_000] {
            assert_eq!(chain_sizes(n), recurrence_oracle(n));
        }
    }

    #[test]
    fn depth_is_logarithmic() {
        let mut n = 10u64;
        while n <= 10_000_000 {
            let bound = (n as f64).log(32.0).ceil() as usize + 2;
            assert!(chain_depth(n) <= bound, "n = {n}");
            n = n * 3 + 1;
        }
    }

    #[test]
    fn aes_256_cbc_known_answer() {
        let key: [u8; 32] = hex("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4");
        let iv: [u8; 16] = hex("000102030405060708090a0b0c0d0e0f");
        let pt: [u8; 32] = hex("6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51");
        let ct: [u8; 32] = hex("f58c4c04d6e5f1ba779eabfb5f7bfbd69cfc4e967edb808d679f777bc6702c7d");
        assert_eq!(spn_base_encrypt(&pt, &key, &iv).unwrap(), ct);
        assert_eq!(spn_base_encrypt(&pt[..16], &key, &iv).unwrap(), ct[..16]);
        assert_eq!(spn_base_decrypt(&ct, &key, &iv).unwrap(), pt);
        assert!(matches!(spn_base_encrypt(&pt[..15], &key, &iv), Err(Error::BadLength(15))));
        let other = spn_base_encrypt(&pt, &key, &[1; 16]).unwrap();
        assert_ne!(other, ct);
    }

    fn hex<const N: usize>(s: &str) -> [u8; N] {
        core::array::from_fn(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap())
    }

    #[test]
    fn depth_matches_payload_size() {
        let k = hk();
        assert_eq!(ifcr_encrypt(&payload(9, 1), &k).unwrap().depth(), 0);
        let c10 = ifcr_encrypt(&payload(10, 1), &k).unwrap();
        assert_eq!(c10.depth(), 1);
        assert_eq!(c10.levels[0].sector_count, 10);
    }

    #[test]
    fn roundtrip_various_sizes() {
        let k = hk();
        for (sectors, seed) in [(1, 1), (9, 2), (10, 3), (100, 4)] {
            let p = payload(sectors, seed);
            let chain = ifcr_encrypt(&p, &k).unwrap();
            assert_eq!(chain.depth(), chain_depth(sectors as u64));
            let restored = IfcrChain::from_bytes(&chain.to_bytes()).unwrap();
            assert_eq!(restored, chain);
            assert_eq!(ifcr_decrypt(&restored, &k).unwrap(), p);
        }
        // unaligned and empty payloads
        for len in [0, 1, 511, 513, 5000] {
            let p: Vec<u8> = (0..len).map(|i| i as u8).collect();
            assert_eq!(ifcr_decrypt(&ifcr_encrypt(&p, &k).unwrap(), &k).unwrap(), p);
        }
    }

    #[test]
    fn deterministic_except_iv() {
        let k = hk();
        let p = payload(40, 9);
        let a = ifcr_encrypt_with_iv(&p, &k, [1; 16]).unwrap();
        let b = ifcr_encrypt_with_iv(&p, &k, [1; 16]).unwrap();
        assert_eq!(a, b);
        let c = ifcr_encrypt_with_iv(&p, &k, [2; 16]).unwrap();
        assert_eq!(a.levels, c.levels);
        assert_ne!(a.base, c.base);
    }

    #[test]
    fn ephemeral_keys_not_persisted() {
        let k = hk();
        let p = payload(200, 5);
        let chain = ifcr_encrypt(&p, &k).unwrap();
        let blob = chain.to_bytes();
        for level in 0..chain.depth() as u16 {
            let eph = MasterKey::generate(&level_stream(&k, level)).to_bytes();
            assert!(!blob.windows(64).any(|w| w == &eph[..64]), "level {level} master key leaked");
        }
        assert!(!blob.windows(64).any(|w| w == &p[..64]));
    }

    #[test]
    fn tampering_is_detected() {
        let k = hk();
        let p = payload(30, 6);
        let chain = ifcr_encrypt(&p, &k).unwrap();

        for pos in [0, 17, chain.base.len() - 1] {
            let mut bad = chain.clone();
            bad.base[pos] ^= 0x40;
            assert!(matches!(ifcr_decrypt(&bad, &k), Err(Error::BadBase(_))), "base byte {pos}");
        }

        let mut bad = chain.clone();
        bad.levels[0].ciphertext[100] ^= 1;
        assert!(matches!(ifcr_decrypt(&bad, &k), Err(Error::CorruptChain(_))));

        let wrong = derive_hash_key(b"wrong").unwrap();
        assert!(matches!(ifcr_decrypt(&chain, &wrong), Err(Error::BadBase(_))));

        let blob = chain.to_bytes();
        assert!(matches!(IfcrChain::from_bytes(&blob[..10]), Err(Error::CorruptChain(_))));
        assert!(matches!(IfcrChain::from_bytes(&blob[..blob.len() - 3]), Err(Error::CorruptChain(_))));
        let mut bad_magic = blob.clone();
        bad_magic[0] = b'X';
        assert!(matches!(IfcrChain::from_bytes(&bad_magic), Err(Error::CorruptChain(_))));
    }

    #[test]
    fn key_material_sizes() {
        let s = PrnStream::new(hk());
        let km = KeyMaterial::generate(&s, 10).unwrap();
        let bytes = km.to_bytes();
        assert_eq!(bytes.len(), 4000 + 80);
        assert_eq!(KeyMaterial::from_bytes(&bytes).unwrap(), km);
        // two more pool words -> one more temporary key -> 16 more bytes
        let km12 = KeyMaterial::generate(&s, 12).unwrap();
        assert_eq!(km12.to_bytes().len() - bytes.len(), TEMP_KEY_POOL_BYTES);
        // paper-scale pool: 2^25 words is 256 MiB plus the master key
        assert_eq!(KeyMaterial::encoded_len(1 << 25), (256 << 20) + 4000);
    }
}
