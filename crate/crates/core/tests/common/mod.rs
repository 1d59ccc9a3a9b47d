#![allow(dead_code)]

use populus::keymgr::{derive_temp_key, MasterKey, TempKey, ROUNDS};
use populus::modring::{Mat2, MatN, Word};
use populus::sectorcipher::Sector;
use rand::Rng;

pub fn random_sector<R: Rng>(rng: &mut R) -> Sector {
    Sector(core::array::from_fn(|_| rng.gen()))
}

pub fn random_master<R: Rng>(rng: &mut R) -> MasterKey {
    let prns: [Word; 2 * ROUNDS] = core::array::from_fn(|_| rng.gen());
    MasterKey::from_prns(&prns)
}

pub fn random_temp_key<R: Rng>(rng: &mut R) -> TempKey {
    derive_temp_key(&random_master(rng), rng.gen(), rng.gen())
}

/// `H^(i)`: the 64x64 identity with `M^(i)` placed on the diagonal at
/// 0-based offset `62 - |63 - i|`.
pub fn h_round(i: usize, m: &Mat2) -> MatN {
    let o = 62 - (63i64 - i as i64).unsigned_abs() as usize;
    let mut h = MatN::identity(64);
    h[(o, o)] = m.0[0][0];
    h[(o, o + 1)] = m.0[0][1];
    h[(o + 1, o)] = m.0[1][0];
    h[(o + 1, o + 1)] = m.0[1][1];
    h
}

/// `H^(125) ... H^(1)` by dense multiplication.
pub fn dense_from_blocks(key: &TempKey) -> MatN {
    (1..=ROUNDS).fold(MatN::identity(64), |acc, i| h_round(i, key.round(i)).mul(&acc).unwrap())
}

pub fn dense_encrypt(m: &MatN, p: &Sector) -> Sector {
    Sector(m.mul_vec(&p.0).unwrap().try_into().unwrap())
}

/// Salsa20 block function transcribed from the reference description,
/// `rounds` in {12, 20}.
pub fn salsa_block(key: &[u8; 32], nonce: &[u8; 8], counter: u64, rounds: usize) -> [u8; 64] {
    fn le(b: &[u8]) -> u32 {
        u32::from_le_bytes(b.try_into().unwrap())
    }
    fn qr(x: &mut [u32; 16], a: usize, b: usize, c: usize, d: usize) {
        x[b] ^= x[a].wrapping_add(x[d]).rotate_left(7);
        x[c] ^= x[b].wrapping_add(x[a]).rotate_left(9);
        x[d] ^= x[c].wrapping_add(x[b]).rotate_left(13);
        x[a] ^= x[d].wrapping_add(x[c]).rotate_left(18);
    }
    let c = b"expand 32-byte k";
    let mut x = [0u32; 16];
    for (slot, i) in [0, 5, 10, 15].into_iter().enumerate() {
        x[i] = le(&c[4 * slot..4 * slot + 4]);
    }
    for i in 0..4 {
        x[1 + i] = le(&key[4 * i..4 * i + 4]);
        x[11 + i] = le(&key[16 + 4 * i..16 + 4 * i + 4]);
    }
    x[6] = le(&nonce[0..4]);
    x[7] = le(&nonce[4..8]);
    x[8] = counter as u32;
    x[9] = (counter >> 32) as u32;
    let input = x;
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

pub fn hex(s: &str) -> Vec<u8> {
    let s: String = s.split_whitespace().collect();
    (0..s.len() / 2).map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap()).collect()
}
