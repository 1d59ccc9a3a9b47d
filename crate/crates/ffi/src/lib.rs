//! C ABI over the `populus` crate.
//!
//! Every fallible function returns a [`PopulusStatus`]; on anything but
//! `POPULUS_STATUS_OK` a message is kept per thread for
//! [`populus_last_error_message`]. Handles are opaque and must be released
//! with their matching `_free`/`_close` function. Panics never cross the
//! boundary; they surface as `POPULUS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use populus::analysis::{event_probability, union_bound};
use populus::diskstore::{Access, DiskImage, DiskOptions};
use populus::keymgr::{derive_temp_key, MasterKey, TempKey};
use populus::keystream::{derive_hash_key, PrnStream};
use populus::sectorcipher::{decrypt_sector, encrypt_sector, Sector, SECTOR_BYTES};
use populus::Error;

pub const POPULUS_SECTOR_BYTES: usize = 512;
const _: () = assert!(POPULUS_SECTOR_BYTES == SECTOR_BYTES);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PopulusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    EmptyKey = 4,
    IndexOutOfRange = 5,
    PoolExhausted = 6,
    NeverWritten = 7,
    InvalidGeometry = 8,
    CorruptImage = 9,
    BadKey = 10,
    Numeric = 11,
    Other = 12,
    Panic = 99,
}

/// An open virtual disk image.
pub struct PopulusDisk {
    image: DiskImage,
}

/// A temporary key: 125 round matrices derived from a user key and two RT-PRNs.
pub struct PopulusTempKey {
    key: TempKey,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> PopulusStatus {
    match err {
        Error::Io(_) => PopulusStatus::Io,
        Error::EmptyKey => PopulusStatus::EmptyKey,
        Error::IndexOutOfRange { .. } => PopulusStatus::IndexOutOfRange,
        Error::PoolExhausted { .. } => PopulusStatus::PoolExhausted,
        Error::NeverWritten(_) => PopulusStatus::NeverWritten,
        Error::InvalidGeometry(_) => PopulusStatus::InvalidGeometry,
        Error::CorruptImage(_) | Error::CorruptChain(_) => PopulusStatus::CorruptImage,
        Error::BadBase(_) | Error::InvalidKey { .. } => PopulusStatus::BadKey,
        Error::DomainError(_) | Error::ParamOutOfRange(_) => PopulusStatus::Numeric,
        _ => PopulusStatus::Other,
    }
}

enum Failure {
    Status(PopulusStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn null() -> Failure {
    Failure::Status(PopulusStatus::NullPointer, "null pointer argument".into())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Status(PopulusStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PopulusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PopulusStatus::Ok,
        Ok(Err(Failure::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(format!("{}: {e}", e.kind()));
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PopulusStatus::Panic
        }
    }
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null());
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn sector_arg(data: *const u8) -> Result<Sector, Failure> {
    let raw = bytes(data, SECTOR_BYTES)?;
    Ok(Sector::from_bytes(raw.try_into().unwrap()))
}

unsafe fn write_sector_out(out: *mut u8, s: &Sector) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    ptr::copy_nonoverlapping(s.to_bytes().as_ptr(), out, SECTOR_BYTES);
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null());
    }
    out.write(value);
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn populus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn populus_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates a new image at `path` (which must not exist) and returns it open
/// for writing.
///
/// # Safety
/// `path` must be a NUL-terminated string, `key` must point to `key_len`
/// bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_init(
    path: *const c_char,
    key: *const u8,
    key_len: usize,
    sectors: u64,
    pool: u64,
    out: *mut *mut PopulusDisk,
) -> PopulusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let image = DiskImage::init(path_arg(path)?, bytes(key, key_len)?, sectors, pool, DiskOptions::default())?;
        put(out, Box::into_raw(Box::new(PopulusDisk { image })))
    })
}

/// Opens an existing image. With `read_only` set it takes a shared lock and
/// refuses writes.
///
/// # Safety
/// As for [`populus_disk_init`].
#[no_mangle]
pub unsafe extern "C" fn populus_disk_open(
    path: *const c_char,
    key: *const u8,
    key_len: usize,
    read_only: bool,
    out: *mut *mut PopulusDisk,
) -> PopulusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let access = if read_only { Access::ReadOnly } else { Access::ReadWrite };
        let image = DiskImage::open(path_arg(path)?, bytes(key, key_len)?, access)?;
        put(out, Box::into_raw(Box::new(PopulusDisk { image })))
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `disk` must come from `populus_disk_init`/`populus_disk_open` and not
/// have been closed already.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_close(disk: *mut PopulusDisk) {
    if !disk.is_null() {
        drop(Box::from_raw(disk));
    }
}

/// Encrypts `len <= 512` bytes (zero-padded) into sector `index`.
///
/// # Safety
/// `disk` must be a live handle and `data` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_write(
    disk: *mut PopulusDisk,
    index: u64,
    data: *const u8,
    len: usize,
) -> PopulusStatus {
    guard(|| {
        let disk = disk.as_mut().ok_or_else(null)?;
        let data = bytes(data, len)?;
        if data.len() > SECTOR_BYTES {
            return Err(invalid(format!("{} bytes do not fit in a sector", data.len())));
        }
        disk.image.write_sector(index, &Sector::from_slice(data))?;
        Ok(())
    })
}

/// Decrypts sector `index` into the 512 bytes at `out`.
///
/// # Safety
/// `disk` must be a live handle and `out` must point to 512 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_read(disk: *const PopulusDisk, index: u64, out: *mut u8) -> PopulusStatus {
    guard(|| {
        let disk = disk.as_ref().ok_or_else(null)?;
        let sector = disk.image.read_sector(index)?;
        write_sector_out(out, &sector)
    })
}

/// # Safety
/// `disk` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_sector_count(disk: *const PopulusDisk, out: *mut u64) -> PopulusStatus {
    guard(|| put(out, disk.as_ref().ok_or_else(null)?.image.sector_count()))
}

/// Writes left before the RT-PRN pool runs out.
///
/// # Safety
/// `disk` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn populus_disk_remaining_writes(disk: *const PopulusDisk, out: *mut u64) -> PopulusStatus {
    guard(|| put(out, disk.as_ref().ok_or_else(null)?.image.remaining_writes()))
}

/// Derives the master key from `key` and perturbs it with `r_odd`/`r_even`.
///
/// # Safety
/// `key` must point to `key_len` bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn populus_temp_key_new(
    key: *const u8,
    key_len: usize,
    r_odd: u64,
    r_even: u64,
    out: *mut *mut PopulusTempKey,
) -> PopulusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let master = MasterKey::generate(&PrnStream::new(derive_hash_key(bytes(key, key_len)?)?));
        let key = derive_temp_key(&master, r_odd, r_even);
        put(out, Box::into_raw(Box::new(PopulusTempKey { key })))
    })
}

/// # Safety
/// `key` must come from `populus_temp_key_new` and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn populus_temp_key_free(key: *mut PopulusTempKey) {
    if !key.is_null() {
        drop(Box::from_raw(key));
    }
}

/// Encrypts one 512-byte sector. `input` and `output` may alias.
///
/// # Safety
/// `key` must be live; `input` and `output` must each span 512 bytes.
#[no_mangle]
pub unsafe extern "C" fn populus_encrypt_sector(
    key: *const PopulusTempKey,
    input: *const u8,
    output: *mut u8,
) -> PopulusStatus {
    guard(|| {
        let key = key.as_ref().ok_or_else(null)?;
        let c = encrypt_sector(&sector_arg(input)?, &key.key);
        write_sector_out(output, &c)
    })
}

/// Inverse of [`populus_encrypt_sector`].
///
/// # Safety
/// As for [`populus_encrypt_sector`].
#[no_mangle]
pub unsafe extern "C" fn populus_decrypt_sector(
    key: *const PopulusTempKey,
    input: *const u8,
    output: *mut u8,
) -> PopulusStatus {
    guard(|| {
        let key = key.as_ref().ok_or_else(null)?;
        let p = decrypt_sector(&sector_arg(input)?, &key.key);
        write_sector_out(output, &p)
    })
}

/// `log2` of the probability that `r` temporary keys contain 64 equal to a
/// fixed one. Negative infinity below 64.
#[no_mangle]
pub extern "C" fn populus_event_probability(r: f64) -> f64 {
    catch_unwind(|| event_probability(r)).unwrap_or(f64::NAN)
}

/// `log2` of the union bound over `theta` attack attempts with `r` writes each.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn populus_union_bound(theta: f64, r: f64, out: *mut f64) -> PopulusStatus {
    guard(|| put(out, union_bound(theta, r)?))
}
