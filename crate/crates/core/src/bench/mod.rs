//! Throughput and operation-count benchmarks.
//!
//! A workload writes `sectors` random sectors and then reads every one back,
//! producing one report row per phase. Runs are in memory: the cipher and
//! key-management path is exercised, the file store is not.
//!
//! # Counting convention
//!
//! Counts cover the per-sector transform only. Key setup (temporary-key
//! derivation, matrix inversion, AES key expansion) is input-free work and
//! is left out.
//!
//! * `populus`: 4 multiplies and 2 additions per butterfly round, 125
//!   rounds, plus 64 word loads and 64 word stores.
//! * `dense`: a general 64x64 matrix-vector product, 64 multiplies and 63
//!   additions per output word, plus the same 128 word transfers.
//! * `aes_baseline`: AES-256-CBC over 32 blocks. Per block, MixColumns in
//!   13 rounds costs 2 GF(2^8) multiplies per output byte (416), xors cost
//!   3 per MixColumns output byte, 16 per AddRoundKey (15 of them) and 16 for
//!   the CBC chain (880), and the 14 x 16 S-box lookups are table loads
//!   counted as `word_io` (224). Decryption is charged the same.
//! * `none`: the 128 word transfers.

mod energy;

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use aes::Aes256;
use cbc::cipher::block_padding::NoPadding;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifcr::KeyMaterial;
use crate::keymgr::{temp_key_for_j, KeyAllocator};
use crate::keystream::{derive_hash_key, PrnStream};
use crate::modring::MatN;
use crate::sectorcipher::{
    composite_matrix, decrypt_sector_counted, dense_apply_counted, encrypt_sector_counted, DecryptKey, OpCount,
    Sector, SECTOR_BYTES,
};

pub use energy::{
    compute_ge, compute_ge_with, parse_energy_csv, write_ge_csv, write_ge_json, EnergyTrace, GeResult, SizeTrace,
    DEFAULT_GE_EPSILON, REFERENCE_GE_RANGE, REFERENCE_IDLE_POWER_W,
};

/// Column order of the report CSV.
pub const CSV_HEADER: [&str; 8] = ["workload", "mode", "sectors", "bytes", "wall_ns", "mul", "add", "word_io"];

pub const COUNTING_CONVENTION: &str = "per-sector transform only; populus: 125 rounds x (4 mul + 2 add) + 128 \
     word_io; dense: 64x64 (4096 mul + 4032 add) + 128 word_io; aes_baseline: 32 blocks x (416 GF(2^8) mul, \
     880 xor, 224 S-box loads as word_io) + 128 word_io; none: 128 word_io; key setup excluded";

const SECTOR_IO: OpCount = OpCount { multiplies: 0, additions: 0, word_io: 2 * 64 };
const AES_BLOCKS_PER_SECTOR: u64 = (SECTOR_BYTES / 16) as u64;
const AES_BLOCK_OPS: OpCount = OpCount { multiplies: 13 * 32, additions: 16 + 16 + 13 * (48 + 16) + 16, word_io: 14 * 16 };

/// Modelled cost of one AES-256-CBC sector under the counting convention.
pub fn aes_sector_ops() -> OpCount {
    AES_BLOCK_OPS * AES_BLOCKS_PER_SECTOR + SECTOR_IO
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Populus,
    AesBaseline,
    None,
    Dense,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Populus, Mode::AesBaseline, Mode::None, Mode::Dense];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Populus => "populus",
            Mode::AesBaseline => "aes_baseline",
            Mode::None => "none",
            Mode::Dense => "dense",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::ParamOutOfRange(format!("unknown bench mode {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub id: String,
    pub sectors: u64,
    pub mode: Mode,
    pub seed: u64,
    /// RT-PRN pool size; defaults to exactly one pair per write.
    pub pool: Option<u64>,
}

impl Workload {
    pub fn new(id: impl Into<String>, sectors: u64, mode: Mode) -> Workload {
        Workload { id: id.into(), sectors, mode, seed: 0, pool: None }
    }
}

/// One CSV row: a phase of a workload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchReport {
    pub workload: String,
    pub mode: Mode,
    pub sectors: u64,
    pub bytes: u64,
    pub wall_ns: u64,
    pub mul: u64,
    pub add: u64,
    pub word_io: u64,
}

impl BenchReport {
    pub fn ops(&self) -> OpCount {
        OpCount { multiplies: self.mul, additions: self.add, word_io: self.word_io }
    }

    pub fn mib_per_s(&self) -> f64 {
        if self.wall_ns == 0 {
            return f64::INFINITY;
        }
        (self.bytes as f64 / (1 << 20) as f64) / (self.wall_ns as f64 * 1e-9)
    }

    pub fn ops_per_mib(&self) -> f64 {
        self.ops().total() as f64 / (self.bytes as f64 / (1 << 20) as f64)
    }

    pub fn arithmetic_per_sector(&self) -> f64 {
        self.ops().arithmetic() as f64 / self.sectors as f64
    }

    fn phase(workload: &Workload, phase: &str, wall_ns: u128, ops: OpCount) -> BenchReport {
        BenchReport {
            workload: format!("{}/{phase}", workload.id),
            mode: workload.mode,
            sectors: workload.sectors,
            bytes: workload.sectors * SECTOR_BYTES as u64,
            wall_ns: wall_ns.min(u64::MAX as u128) as u64,
            mul: ops.multiplies,
            add: ops.additions,
            word_io: ops.word_io,
        }
    }

    /// Sums rows of the same workload, e.g. per-thread results.
    pub fn merge(rows: &[BenchReport]) -> Option<BenchReport> {
        let first = rows.first()?;
        let mut out = first.clone();
        for r in &rows[1..] {
            out.sectors += r.sectors;
            out.bytes += r.bytes;
            out.wall_ns += r.wall_ns;
            out.mul += r.mul;
            out.add += r.add;
            out.word_io += r.word_io;
        }
        Some(out)
    }
}

fn random_sectors(seed: u64, n: u64) -> Vec<Sector> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..n).map(|_| Sector(core::array::from_fn(|_| rng.gen()))).collect()
}

fn mismatch(sector: u64) -> Error {
    Error::CorruptImage(format!("benchmark read-back mismatch at sector {sector}"))
}

/// Runs the write phase and then the read phase, returning one row each.
pub fn run_bench(workload: &Workload) -> Result<Vec<BenchReport>> {
    let n = workload.sectors;
    if n == 0 {
        return Err(Error::InvalidGeometry("a benchmark needs at least one sector".into()));
    }
    let plain = random_sectors(workload.seed, n);
    let mut stored = vec![Sector::ZERO; plain.len()];
    let (mut w_ops, mut r_ops) = (OpCount::default(), OpCount::default());
    let stream = PrnStream::new(derive_hash_key(&workload.seed.to_le_bytes())?);

    let (w_ns, r_ns) = match workload.mode {
        Mode::Populus => {
            let pool = workload.pool.unwrap_or(2 * n);
            let mut alloc = KeyAllocator::new(pool, n)?;
            let material = KeyMaterial::generate(&stream, pool)?;
            let t = Instant::now();
            for (s, p) in plain.iter().enumerate() {
                let key = alloc.allocate_write_key(s as u64, &material.pool, &material.master)?;
                stored[s] = encrypt_sector_counted(p, &key, &mut w_ops);
            }
            let w = t.elapsed().as_nanos();
            let t = Instant::now();
            for (s, c) in stored.iter().enumerate() {
                let key = alloc.lookup_read_key(s as u64, &material.pool, &material.master)?;
                if decrypt_sector_counted(c, &DecryptKey::new(&key), &mut r_ops) != plain[s] {
                    return Err(mismatch(s as u64));
                }
            }
            (w, t.elapsed().as_nanos())
        }
        Mode::Dense => {
            let material = KeyMaterial::generate(&stream, 2)?;
            let forward = composite_matrix(&temp_key_for_j(&material.master, &material.pool, 1)?);
            let inverse: MatN = forward.inverse()?;
            let t = Instant::now();
            for (s, p) in plain.iter().enumerate() {
                stored[s] = dense_apply_counted(&forward, p, &mut w_ops);
            }
            let w = t.elapsed().as_nanos();
            let t = Instant::now();
            for (s, c) in stored.iter().enumerate() {
                if dense_apply_counted(&inverse, c, &mut r_ops) != plain[s] {
                    return Err(mismatch(s as u64));
                }
            }
            (w, t.elapsed().as_nanos())
        }
        Mode::AesBaseline => {
            let mut key = [0u8; 32];
            for (chunk, w) in key.chunks_exact_mut(8).zip(stream.words(0, 4)?) {
                chunk.copy_from_slice(&w.to_le_bytes());
            }
            let iv = |s: usize| {
                let mut iv = [0u8; 16];
                iv[..8].copy_from_slice(&(s as u64).to_le_bytes());
                iv
            };
            let t = Instant::now();
            for (s, p) in plain.iter().enumerate() {
                let mut buf = p.to_bytes();
                cbc::Encryptor::<Aes256>::new(&key.into(), &iv(s).into())
                    .encrypt_padded_mut::<NoPadding>(&mut buf, SECTOR_BYTES)
                    .expect("sector is a whole number of blocks");
                stored[s] = Sector::from_bytes(&buf);
                w_ops += aes_sector_ops();
            }
            let w = t.elapsed().as_nanos();
            let t = Instant::now();
            for (s, c) in stored.iter().enumerate() {
                let mut buf = c.to_bytes();
                cbc::Decryptor::<Aes256>::new(&key.into(), &iv(s).into())
                    .decrypt_padded_mut::<NoPadding>(&mut buf)
                    .expect("sector is a whole number of blocks");
                r_ops += aes_sector_ops();
                if Sector::from_bytes(&buf) != plain[s] {
                    return Err(mismatch(s as u64));
                }
            }
            (w, t.elapsed().as_nanos())
        }
        Mode::None => {
            let t = Instant::now();
            for (s, p) in plain.iter().enumerate() {
                stored[s] = *p;
                w_ops += SECTOR_IO;
            }
            let w = t.elapsed().as_nanos();
            let t = Instant::now();
            for (s, c) in stored.iter().enumerate() {
                r_ops += SECTOR_IO;
                if *c != plain[s] {
                    return Err(mismatch(s as u64));
                }
            }
            (w, t.elapsed().as_nanos())
        }
    };
    Ok(vec![BenchReport::phase(workload, "write", w_ns, w_ops), BenchReport::phase(workload, "read", r_ns, r_ops)])
}

/// Splits the sectors over `threads` independent workers and sums their rows.
pub fn run_bench_threads(workload: &Workload, threads: usize) -> Result<Vec<BenchReport>> {
    let threads = threads.max(1).min(workload.sectors.max(1) as usize);
    if threads == 1 {
        return run_bench(workload);
    }
    let parts: Vec<Workload> = (0..threads as u64)
        .map(|t| {
            let share = workload.sectors / threads as u64 + u64::from(t < workload.sectors % threads as u64);
            Workload {
                sectors: share,
                seed: workload.seed.wrapping_add(t),
                pool: workload.pool.map(|d| (d / threads as u64) & !1),
                ..workload.clone()
            }
        })
        .collect();
    let results: Vec<Result<Vec<BenchReport>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = parts.iter().map(|w| scope.spawn(move || run_bench(w))).collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let phases = results[0].len();
    Ok((0..phases)
        .map(|p| {
            let rows: Vec<BenchReport> = results.iter().map(|r| r[p].clone()).collect();
            BenchReport::merge(&rows).expect("at least one worker")
        })
        .collect())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}"))),
    }
}

pub fn write_reports_csv<W: io::Write>(out: W, rows: &[BenchReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record(CSV_HEADER).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a report CSV, insisting on the exact column schema.
pub fn parse_reports_csv<R: io::Read>(input: R) -> Result<Vec<BenchReport>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected CSV header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// JSON document with the rows, derived rates and the counting convention.
pub fn reports_to_json(rows: &[BenchReport]) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("report serializes");
            v["mib_per_s"] = r.mib_per_s().into();
            v["ops_per_mib"] = r.ops_per_mib().into();
            v["arithmetic_per_sector"] = r.arithmetic_per_sector().into();
            v
        })
        .collect();
    serde_json::json!({
        "schema_version": 1,
        "counting_convention": COUNTING_CONVENTION,
        "reports": rows,
    })
}

pub fn write_reports_json<W: io::Write>(out: W, rows: &[BenchReport]) -> Result<()> {
    serde_json::to_writer_pretty(out, &reports_to_json(rows)).map_err(|e| Error::Io(e.into()))
}
