//! Energy-lean sector encryption built on precomputed key material.
//!
//! Each 512-byte sector is encrypted by 125 rounds of 2x2 matrix
//! multiplication modulo 2^64 under a temporary key that is used once. The
//! expensive, input-independent work (master key, PRN pool) happens at
//! initialization and is stored encrypted on disk through an iterative
//! scheme whose cost is logarithmic in its size.
//!
//! Module map:
//!
//! - [`modring`]: arithmetic and linear algebra over Z/2^64
//! - [`keystream`]: SHA3-384 + Salsa20/12 PRN pipeline
//! - [`keymgr`]: master key, temporary keys, RT-PRN allocation
//! - [`sectorcipher`]: the butterfly sector cipher with op counters
//! - [`ifcr`]: iterative encryption of key material
//! - [`diskstore`]: file-backed encrypted virtual disk
//! - [`bench`]: throughput / op-count benchmarks and the energy estimator
//! - [`analysis`]: linear key-recovery attack and indistinguishability bounds

pub mod analysis;
pub mod bench;
pub mod diskstore;
mod error;
pub mod ifcr;
pub mod keymgr;
pub mod keystream;
pub mod modring;
pub mod sectorcipher;

pub use error::{Error, Result};
