//! File-backed virtual disk of 512-byte sectors.
//!
//! Every sector of the image is private: writes are encrypted under a fresh
//! temporary key and reads re-derive the key recorded for the sector. The
//! master key and RT-PRN pool live in the header as an IFCR chain that is
//! opened with the user key.
//!
//! A write goes through a sidecar journal (`<image>.journal`): the record is
//! written and synced, a commit marker follows, the image is updated in
//! place, and the journal is removed. Opening an image replays a committed
//! journal and drops an uncommitted one, so an interrupted write leaves
//! either the old or the new state.
//!
//! A read-write handle holds an exclusive advisory lock for its lifetime;
//! read-only handles share a lock.

mod format;
mod journal;

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crc32fast::Hasher;

use crate::error::{Error, Result};
use crate::ifcr::{ifcr_decrypt, ifcr_encrypt, IfcrChain, KeyMaterial};
use crate::keymgr::KeyAllocator;
use crate::keystream::{derive_hash_key, PrnStream};
use crate::sectorcipher::{decrypt_sector, encrypt_sector, Sector, SECTOR_BYTES};

use format::{chain_hasher, decode_table, encode_table, header_crc, Geometry, TableCrc, CURSOR_OFFSET, FIXED_BYTES};
use journal::{Pending, Record};

pub use format::{MAGIC, SECTOR_ALIGN, VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Clone, Copy, Debug)]
pub struct DiskOptions {
    /// fsync the journal and image at each step of a write. Turning this off
    /// keeps the ordering but not the durability.
    pub sync: bool,
}

impl Default for DiskOptions {
    fn default() -> Self {
        DiskOptions { sync: true }
    }
}

/// Where a fault-injected write stops, as if the process died there.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// Journal record written, no commit marker.
    BeforeCommit,
    /// Commit marker written, image untouched.
    AfterCommit,
    /// Sector data written in place, header not yet updated.
    MidApply,
}

pub struct DiskImage {
    file: File,
    path: PathBuf,
    access: Access,
    options: DiskOptions,
    geometry: Geometry,
    chain_crc: Hasher,
    table_bytes: Vec<u8>,
    table_crc: TableCrc,
    alloc: KeyAllocator,
    material: KeyMaterial,
}

impl std::fmt::Debug for DiskImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiskImage")
            .field("path", &self.path)
            .field("access", &self.access)
            .field("sectors", &self.geometry.sectors)
            .field("pool", &self.geometry.pool)
            .field("next_j", &self.alloc.next_j())
            .finish_non_exhaustive()
    }
}

/// Creates a new image at `path` (which must not exist) and opens it for
/// writing.
pub fn init_device(path: impl AsRef<Path>, user_key: &[u8], sectors: u64, pool: u64) -> Result<DiskImage> {
    DiskImage::init(path, user_key, sectors, pool, DiskOptions::default())
}

fn read_at(file: &File, offset: u64, buf: &mut [u8]) -> io::Result<()> {
    let mut f = file;
    f.seek(SeekFrom::Start(offset))?;
    f.read_exact(buf)
}

fn write_at(file: &File, offset: u64, buf: &[u8]) -> io::Result<()> {
    let mut f = file;
    f.seek(SeekFrom::Start(offset))?;
    f.write_all(buf)
}

fn lock(file: &File, access: Access) -> io::Result<()> {
    let res = match access {
        Access::ReadOnly => file.try_lock_shared(),
        Access::ReadWrite => file.try_lock(),
    };
    res.map_err(|e| match io::Error::from(e) {
        e if e.kind() == io::ErrorKind::WouldBlock => {
            io::Error::new(io::ErrorKind::WouldBlock, "image is locked by another writer")
        }
        e => e,
    })
}

fn read_geometry(file: &File) -> Result<Geometry> {
    let len = file.metadata()?.len();
    let mut fixed = [0u8; FIXED_BYTES as usize];
    if len < FIXED_BYTES {
        return Err(Error::CorruptImage(format!("{len} bytes is too short for a header")));
    }
    read_at(file, 0, &mut fixed)?;
    Geometry::parse_fixed(&fixed, len)
}

impl DiskImage {
    pub fn init(
        path: impl AsRef<Path>,
        user_key: &[u8],
        sectors: u64,
        pool: u64,
        options: DiskOptions,
    ) -> Result<DiskImage> {
        let path = path.as_ref();
        if sectors == 0 {
            return Err(Error::InvalidGeometry("an image needs at least one sector".into()));
        }
        let hash_key = derive_hash_key(user_key)?;
        let alloc = KeyAllocator::new(pool, sectors)?;
        let material = KeyMaterial::generate(&PrnStream::new(hash_key.clone()), pool)?;
        let chain = ifcr_encrypt(&material.to_bytes(), &hash_key)?.to_bytes();

        let geometry = Geometry { sectors, pool, cursor: alloc.next_j(), chain_len: chain.len() as u64 };
        let table_bytes = encode_table(alloc.sector_table());
        let chain_crc = chain_hasher(&chain);
        let table_crc = TableCrc::new(&table_bytes);
        let crc = header_crc(&geometry, &chain_crc, &table_crc, None);

        let file = OpenOptions::new().read(true).write(true).create_new(true).open(path)?;
        lock(&file, Access::ReadWrite)?;
        journal::remove(&journal::path_for(path))?;
        let mut header = Vec::with_capacity(geometry.header_len() as usize);
        header.extend_from_slice(&geometry.fixed_bytes());
        header.extend_from_slice(&chain);
        header.extend_from_slice(&table_bytes);
        header.extend_from_slice(&crc.to_le_bytes());
        write_at(&file, 0, &header)?;
        file.set_len(geometry.image_len())?;
        if options.sync {
            file.sync_all()?;
        }
        Ok(DiskImage {
            file,
            path: path.to_path_buf(),
            access: Access::ReadWrite,
            options,
            geometry,
            chain_crc,
            table_bytes,
            table_crc,
            alloc,
            material,
        })
    }

    pub fn open(path: impl AsRef<Path>, user_key: &[u8], access: Access) -> Result<DiskImage> {
        DiskImage::open_with(path, user_key, access, DiskOptions::default())
    }

    pub fn open_with(
        path: impl AsRef<Path>,
        user_key: &[u8],
        access: Access,
        options: DiskOptions,
    ) -> Result<DiskImage> {
        let path = path.as_ref();
        let hash_key = derive_hash_key(user_key)?;
        let file = OpenOptions::new().read(true).write(access == Access::ReadWrite).open(path)?;
        lock(&file, access)?;

        let journal_path = journal::path_for(path);
        match (journal::inspect(&journal_path)?, access) {
            (Pending::None, _) => {}
            (Pending::Uncommitted, Access::ReadWrite) => journal::remove(&journal_path)?,
            (Pending::Uncommitted, Access::ReadOnly) => {}
            (Pending::Committed(record), Access::ReadWrite) => {
                replay(&file, &record, options.sync)?;
                journal::remove(&journal_path)?;
            }
            (Pending::Committed(_), Access::ReadOnly) => {
                return Err(Error::CorruptImage(
                    "a committed write is still journaled; open read-write once to recover it".into(),
                ))
            }
        }

        let geometry = read_geometry(&file)?;
        let mut chain = vec![0u8; geometry.chain_len as usize];
        read_at(&file, FIXED_BYTES, &mut chain)?;
        let mut table_bytes = vec![0u8; 8 * geometry.sectors as usize];
        read_at(&file, geometry.table_offset(), &mut table_bytes)?;
        let mut stored = [0u8; 4];
        read_at(&file, geometry.crc_offset(), &mut stored)?;
        let chain_crc = chain_hasher(&chain);
        let table_crc = TableCrc::new(&table_bytes);
        if header_crc(&geometry, &chain_crc, &table_crc, None) != u32::from_le_bytes(stored) {
            return Err(Error::CorruptImage("header checksum mismatch".into()));
        }
        let alloc = KeyAllocator::from_parts(geometry.pool, geometry.cursor, decode_table(&table_bytes))?;

        let chain = IfcrChain::from_bytes(&chain)?;
        let material = KeyMaterial::from_bytes(&ifcr_decrypt(&chain, &hash_key)?)
            .map_err(|e| Error::CorruptImage(format!("key material: {e}")))?;
        if material.pool.len() as u64 != geometry.pool {
            return Err(Error::CorruptImage(format!(
                "header declares d = {} but the key material holds {} RT-PRNs",
                geometry.pool,
                material.pool.len()
            )));
        }
        Ok(DiskImage {
            file,
            path: path.to_path_buf(),
            access,
            options,
            geometry,
            chain_crc,
            table_bytes,
            table_crc,
            alloc,
            material,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn access(&self) -> Access {
        self.access
    }

    pub fn sector_count(&self) -> u64 {
        self.geometry.sectors
    }

    pub fn pool_size(&self) -> u64 {
        self.geometry.pool
    }

    pub fn next_j(&self) -> u64 {
        self.alloc.next_j()
    }

    /// Writes left before the RT-PRN pool is exhausted.
    pub fn remaining_writes(&self) -> u64 {
        self.alloc.remaining()
    }

    pub fn recorded_j(&self, index: u64) -> Result<Option<u64>> {
        self.check_index(index)?;
        self.alloc.recorded_j(index)
    }

    /// Byte offset of the sector region.
    pub fn sector_offset(&self) -> u64 {
        self.geometry.sector_offset()
    }

    fn check_index(&self, index: u64) -> Result<()> {
        if index >= self.geometry.sectors {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("sector {index} out of range for a {}-sector image", self.geometry.sectors),
            )));
        }
        Ok(())
    }

    fn sector_pos(&self, index: u64) -> u64 {
        self.geometry.sector_offset() + index * SECTOR_BYTES as u64
    }

    pub fn write_sector(&mut self, index: u64, plaintext: &Sector) -> Result<()> {
        self.write_inner(index, plaintext, None)
    }

    /// Runs a write up to `at` and then drops the handle without finishing.
    #[doc(hidden)]
    pub fn write_sector_interrupted(mut self, index: u64, plaintext: &Sector, at: CrashPoint) -> Result<()> {
        self.write_inner(index, plaintext, Some(at))
    }

    fn write_inner(&mut self, index: u64, plaintext: &Sector, crash: Option<CrashPoint>) -> Result<()> {
        if self.access != Access::ReadWrite {
            return Err(Error::Io(io::Error::new(io::ErrorKind::PermissionDenied, "image is open read-only")));
        }
        self.check_index(index)?;
        let (j, key) = self.alloc.peek_write_key(index, &self.material.pool, &self.material.master)?;
        let ciphertext = encrypt_sector(plaintext, &key).to_bytes();

        let mut geometry = self.geometry;
        geometry.cursor = j + 1;
        let slot = 8 * index as usize;
        let chunk = self.table_crc.with_entry(&self.table_bytes, index as usize, j);
        let crc = header_crc(&geometry, &self.chain_crc, &self.table_crc, Some(chunk));

        let record = Record { sector: index, j, next_j: j + 1, header_crc: crc, ciphertext };
        let journal_path = journal::path_for(&self.path);
        let mut jf = journal::write_record(&journal_path, &record, self.options.sync)?;
        if crash == Some(CrashPoint::BeforeCommit) {
            return Ok(());
        }
        journal::write_commit(&mut jf, &record, self.options.sync)?;
        drop(jf);
        if crash == Some(CrashPoint::AfterCommit) {
            return Ok(());
        }
        write_at(&self.file, self.sector_pos(index), &ciphertext)?;
        if crash == Some(CrashPoint::MidApply) {
            return Ok(());
        }
        write_at(&self.file, geometry.table_offset() + slot as u64, &j.to_le_bytes())?;
        write_at(&self.file, CURSOR_OFFSET, &geometry.cursor.to_le_bytes())?;
        write_at(&self.file, geometry.crc_offset(), &crc.to_le_bytes())?;
        if self.options.sync {
            self.file.sync_data()?;
        }
        journal::remove(&journal_path)?;

        self.alloc.apply_record(index, j, j + 1)?;
        self.geometry = geometry;
        self.table_bytes[slot..slot + 8].copy_from_slice(&j.to_le_bytes());
        self.table_crc.set_chunk(chunk.0, chunk.1);
        Ok(())
    }

    /// Decrypts sector `index` under the key of its last write.
    pub fn read_sector(&self, index: u64) -> Result<Sector> {
        self.check_index(index)?;
        let key = self.alloc.lookup_read_key(index, &self.material.pool, &self.material.master)?;
        Ok(decrypt_sector(&self.read_raw_sector(index)?, &key))
    }

    /// The stored ciphertext of sector `index`.
    pub fn read_raw_sector(&self, index: u64) -> Result<Sector> {
        self.check_index(index)?;
        let mut buf = [0u8; SECTOR_BYTES];
        read_at(&self.file, self.sector_pos(index), &mut buf)?;
        Ok(Sector::from_bytes(&buf))
    }

    pub fn flush(&self) -> Result<()> {
        Ok(self.file.sync_all()?)
    }
}

/// Applies a committed journal record to the image in place.
fn replay(file: &File, record: &Record, sync: bool) -> Result<()> {
    let geometry = read_geometry(file)?;
    if record.sector >= geometry.sectors || record.j == 0 || record.next_j != record.j + 1 {
        return Err(Error::CorruptImage(format!(
            "journal record for sector {} (j = {}) does not fit the image",
            record.sector, record.j
        )));
    }
    let pos = geometry.sector_offset() + record.sector * SECTOR_BYTES as u64;
    write_at(file, pos, &record.ciphertext)?;
    write_at(file, geometry.table_offset() + 8 * record.sector, &record.j.to_le_bytes())?;
    write_at(file, CURSOR_OFFSET, &record.next_j.to_le_bytes())?;
    write_at(file, geometry.crc_offset(), &record.header_crc.to_le_bytes())?;
    if sync {
        file.sync_data()?;
    }
    Ok(())
}
