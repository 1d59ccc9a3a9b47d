//! On-disk header layout.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "PPLS"
//! 4       2         version
//! 6       8         N, sector count
//! 14      8         d, RT-PRN pool size
//! 22      8         allocator cursor (next j)
//! 30      8         L, chain blob length
//! 38      L         IFCR chain blob
//! 38+L    8N        sector -> j table (0 = never written)
//! 38+L+8N 4         CRC-32 of everything above
//! ```
//!
//! All integers are little-endian. Sector data starts at the first
//! 4096-byte boundary after the checksum.

use crc32fast::Hasher;

use crate::error::{Error, Result};
use crate::sectorcipher::SECTOR_BYTES;

pub const MAGIC: [u8; 4] = *b"PPLS";
pub const VERSION: u16 = 1;
pub const SECTOR_ALIGN: u64 = 4096;

pub const CURSOR_OFFSET: u64 = 22;
pub const FIXED_BYTES: u64 = 38;

/// Geometry read from the fixed-size prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub sectors: u64,
    pub pool: u64,
    pub cursor: u64,
    pub chain_len: u64,
}

impl Geometry {
    pub fn table_offset(&self) -> u64 {
        FIXED_BYTES + self.chain_len
    }

    pub fn crc_offset(&self) -> u64 {
        self.table_offset() + 8 * self.sectors
    }

    pub fn header_len(&self) -> u64 {
        self.crc_offset() + 4
    }

    pub fn sector_offset(&self) -> u64 {
        self.header_len().next_multiple_of(SECTOR_ALIGN)
    }

    pub fn image_len(&self) -> u64 {
        self.sector_offset() + self.sectors * SECTOR_BYTES as u64
    }

    pub fn fixed_bytes(&self) -> [u8; FIXED_BYTES as usize] {
        let mut out = [0u8; FIXED_BYTES as usize];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6..14].copy_from_slice(&self.sectors.to_le_bytes());
        out[14..22].copy_from_slice(&self.pool.to_le_bytes());
        out[22..30].copy_from_slice(&self.cursor.to_le_bytes());
        out[30..38].copy_from_slice(&self.chain_len.to_le_bytes());
        out
    }

    pub fn parse_fixed(bytes: &[u8], file_len: u64) -> Result<Geometry> {
        if bytes.len() < FIXED_BYTES as usize || bytes[0..4] != MAGIC {
            return Err(Error::CorruptImage("missing PPLS magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::CorruptImage(format!("unsupported image version {version}")));
        }
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let g = Geometry { sectors: u64_at(6), pool: u64_at(14), cursor: u64_at(22), chain_len: u64_at(30) };
        // reject lengths that would overflow or point past the file before allocating
        let fits = g
            .chain_len
            .checked_add(FIXED_BYTES)
            .and_then(|x| g.sectors.checked_mul(8 + SECTOR_BYTES as u64).and_then(|y| x.checked_add(y)))
            .is_some_and(|needed| needed <= file_len);
        if g.sectors == 0 || !fits {
            return Err(Error::CorruptImage(format!(
                "geometry (N = {}, chain {} bytes) does not fit a {file_len}-byte image",
                g.sectors, g.chain_len
            )));
        }
        if g.image_len() > file_len {
            return Err(Error::CorruptImage(format!("image truncated: {file_len} < {} bytes", g.image_len())));
        }
        Ok(g)
    }
}

pub fn encode_table(table: &[u64]) -> Vec<u8> {
    table.iter().flat_map(|j| j.to_le_bytes()).collect()
}

pub fn decode_table(bytes: &[u8]) -> Vec<u64> {
    bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}

/// CRC state over `L | chain`, which never changes after init.
pub fn chain_hasher(chain: &[u8]) -> Hasher {
    let mut h = Hasher::new();
    h.update(&(chain.len() as u64).to_le_bytes());
    h.update(chain);
    h
}

/// Table bytes hashed per chunk so one changed entry costs one chunk.
const TABLE_CHUNK: usize = 4096;

/// CRC-32 of the sector table, kept as one CRC per 4 KiB chunk.
#[derive(Clone, Debug)]
pub struct TableCrc {
    chunks: Vec<u32>,
    len: usize,
}

impl TableCrc {
    pub fn new(table: &[u8]) -> TableCrc {
        TableCrc { chunks: table.chunks(TABLE_CHUNK).map(crc32fast::hash).collect(), len: table.len() }
    }

    /// Chunk index and CRC after entry `index` of `table` becomes `j`.
    pub fn with_entry(&self, table: &[u8], index: usize, j: u64) -> (usize, u32) {
        let chunk = 8 * index / TABLE_CHUNK;
        let start = chunk * TABLE_CHUNK;
        let mut bytes = table[start..(start + TABLE_CHUNK).min(table.len())].to_vec();
        let at = 8 * index - start;
        bytes[at..at + 8].copy_from_slice(&j.to_le_bytes());
        (chunk, crc32fast::hash(&bytes))
    }

    pub fn set_chunk(&mut self, chunk: usize, crc: u32) {
        self.chunks[chunk] = crc;
    }

    fn hasher(&self, replace: Option<(usize, u32)>) -> Hasher {
        let mut h = Hasher::new();
        for (i, &crc) in self.chunks.iter().enumerate() {
            let crc = match replace {
                Some((c, v)) if c == i => v,
                _ => crc,
            };
            let len = TABLE_CHUNK.min(self.len - i * TABLE_CHUNK);
            h.combine(&Hasher::new_with_initial_len(crc, len as u64));
        }
        h
    }
}

/// Header checksum assembled from cached pieces, so a commit only rehashes
/// the fixed prefix and one table chunk. `replace` substitutes the CRC of one
/// table chunk.
pub fn header_crc(geometry: &Geometry, chain: &Hasher, table: &TableCrc, replace: Option<(usize, u32)>) -> u32 {
    let mut h = Hasher::new();
    h.update(&geometry.fixed_bytes()[..30]);
    h.combine(chain);
    h.combine(&table.hasher(replace));
    h.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_crc(g: &Geometry, chain: &[u8], table: &[u8]) -> u32 {
        let mut flat = g.fixed_bytes().to_vec();
        flat.extend_from_slice(chain);
        flat.extend_from_slice(table);
        assert_eq!(flat.len() as u64, g.crc_offset());
        crc32fast::hash(&flat)
    }

    #[test]
    fn assembled_crc_matches_flat_crc() {
        let chain = vec![7u8; 1000];
        let table = encode_table(&[0, 3, 1, 0]);
        let g = Geometry { sectors: 4, pool: 8, cursor: 4, chain_len: 1000 };
        let crc = header_crc(&g, &chain_hasher(&chain), &TableCrc::new(&table), None);
        assert_eq!(crc, flat_crc(&g, &chain, &table));
    }

    #[test]
    fn chunked_update_matches_flat_crc() {
        // 1500 entries span three chunks, the last one partial
        let chain = vec![1u8; 77];
        let mut entries: Vec<u64> = (0..1500).map(|i| i % 7).collect();
        let mut table = encode_table(&entries);
        let mut g = Geometry { sectors: 1500, pool: 4000, cursor: 8, chain_len: 77 };
        let chain_crc = chain_hasher(&chain);
        let mut tc = TableCrc::new(&table);
        for (idx, j) in [(0usize, 8u64), (511, 9), (512, 10), (1499, 11), (1024, 12)] {
            let replace = tc.with_entry(&table, idx, j);
            g.cursor = j + 1;
            let crc = header_crc(&g, &chain_crc, &tc, Some(replace));
            entries[idx] = j;
            table = encode_table(&entries);
            assert_eq!(crc, flat_crc(&g, &chain, &table), "entry {idx}");
            tc.set_chunk(replace.0, replace.1);
            assert_eq!(header_crc(&g, &chain_crc, &tc, None), crc);
        }
    }

    #[test]
    fn sector_region_is_aligned() {
        for chain_len in [0, 1, 4058, 4059, 100_000] {
            let g = Geometry { sectors: 3, pool: 2, cursor: 1, chain_len };
            assert_eq!(g.sector_offset() % SECTOR_ALIGN, 0);
            assert!(g.sector_offset() >= g.header_len());
        }
    }
}
