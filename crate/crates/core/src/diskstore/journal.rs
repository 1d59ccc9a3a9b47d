//! Single-record write-ahead journal kept next to the image.
//!
//! ```text
//! "PJNL" | version u16 | 0u16 | sector u64 | j u64 | next j u64
//!        | header crc after commit u32 | ciphertext [512] | record crc32
//! "PCMT" | record crc32                          commit marker, written last
//! ```
//!
//! A record without a valid commit marker is discarded on open; a committed
//! record is replayed into the image.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use crate::sectorcipher::SECTOR_BYTES;

const RECORD_MAGIC: [u8; 4] = *b"PJNL";
const COMMIT_MAGIC: [u8; 4] = *b"PCMT";
const VERSION: u16 = 1;

pub const RECORD_BYTES: usize = 4 + 2 + 2 + 8 + 8 + 8 + 4 + SECTOR_BYTES + 4;
pub const COMMIT_BYTES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub sector: u64,
    pub j: u64,
    pub next_j: u64,
    pub header_crc: u32,
    pub ciphertext: [u8; SECTOR_BYTES],
}

impl Record {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_BYTES);
        out.extend_from_slice(&RECORD_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&self.sector.to_le_bytes());
        out.extend_from_slice(&self.j.to_le_bytes());
        out.extend_from_slice(&self.next_j.to_le_bytes());
        out.extend_from_slice(&self.header_crc.to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Option<(Record, u32)> {
        if bytes.len() < RECORD_BYTES || bytes[0..4] != RECORD_MAGIC {
            return None;
        }
        let body = &bytes[..RECORD_BYTES - 4];
        let crc = u32::from_le_bytes(bytes[RECORD_BYTES - 4..RECORD_BYTES].try_into().unwrap());
        if crc32fast::hash(body) != crc || u16::from_le_bytes([bytes[4], bytes[5]]) != VERSION {
            return None;
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let record = Record {
            sector: u64_at(8),
            j: u64_at(16),
            next_j: u64_at(24),
            header_crc: u32::from_le_bytes(bytes[32..36].try_into().unwrap()),
            ciphertext: bytes[36..36 + SECTOR_BYTES].try_into().unwrap(),
        };
        Some((record, crc))
    }
}

/// What was found beside the image.
#[derive(Debug, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Pending {
    None,
    /// Written but never committed, or torn.
    Uncommitted,
    Committed(Record),
}

pub fn path_for(image: &Path) -> PathBuf {
    let mut name = image.as_os_str().to_owned();
    name.push(".journal");
    PathBuf::from(name)
}

pub fn inspect(path: &Path) -> io::Result<Pending> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Pending::None),
        Err(e) => return Err(e),
    };
    let Some((record, crc)) = Record::decode(&bytes) else {
        return Ok(Pending::Uncommitted);
    };
    let marker = &bytes[RECORD_BYTES..];
    let committed = marker.len() == COMMIT_BYTES
        && marker[0..4] == COMMIT_MAGIC
        && u32::from_le_bytes(marker[4..8].try_into().unwrap()) == crc;
    Ok(if committed { Pending::Committed(record) } else { Pending::Uncommitted })
}

/// Writes the record, optionally syncing, and returns the open file so the
/// commit marker can follow.
pub fn write_record(path: &Path, record: &Record, sync: bool) -> io::Result<File> {
    let mut f = OpenOptions::new().write(true).create(true).truncate(true).open(path)?;
    f.write_all(&record.encode())?;
    if sync {
        f.sync_all()?;
    }
    Ok(f)
}

pub fn write_commit(f: &mut File, record: &Record, sync: bool) -> io::Result<()> {
    let encoded = record.encode();
    let crc = &encoded[RECORD_BYTES - 4..];
    let mut marker = [0u8; COMMIT_BYTES];
    marker[0..4].copy_from_slice(&COMMIT_MAGIC);
    marker[4..8].copy_from_slice(crc);
    f.write_all(&marker)?;
    if sync {
        f.sync_all()?;
    }
    Ok(())
}

pub fn remove(path: &Path) -> io::Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
        _ => Ok(()),
    }
}
