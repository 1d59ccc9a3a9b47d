#ifndef POPULUS_H
#define POPULUS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define POPULUS_SECTOR_BYTES 512

typedef enum PopulusStatus {
  POPULUS_STATUS_OK = 0,
  POPULUS_STATUS_NULL_POINTER = 1,
  POPULUS_STATUS_INVALID_ARGUMENT = 2,
  POPULUS_STATUS_IO = 3,
  POPULUS_STATUS_EMPTY_KEY = 4,
  POPULUS_STATUS_INDEX_OUT_OF_RANGE = 5,
  POPULUS_STATUS_POOL_EXHAUSTED = 6,
  POPULUS_STATUS_NEVER_WRITTEN = 7,
  POPULUS_STATUS_INVALID_GEOMETRY = 8,
  POPULUS_STATUS_CORRUPT_IMAGE = 9,
  POPULUS_STATUS_BAD_KEY = 10,
  POPULUS_STATUS_NUMERIC = 11,
  POPULUS_STATUS_OTHER = 12,
  POPULUS_STATUS_PANIC = 99,
} PopulusStatus;

// An open virtual disk image.
typedef struct PopulusDisk PopulusDisk;

// A temporary key: 125 round matrices derived from a user key and two RT-PRNs.
typedef struct PopulusTempKey PopulusTempKey;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *populus_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length
// in bytes, excluding the terminator.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t populus_last_error_message(char *buf, size_t len);

// Creates a new image at `path` (which must not exist) and returns it open
// for writing.
//
// # Safety
// `path` must be a NUL-terminated string, `key` must point to `key_len`
// bytes and `out` must be writable.
enum PopulusStatus populus_disk_init(const char *path,
                                     const uint8_t *key,
                                     size_t key_len,
                                     uint64_t sectors,
                                     uint64_t pool,
                                     struct PopulusDisk **out);

// Opens an existing image. With `read_only` set it takes a shared lock and
// refuses writes.
//
// # Safety
// As for [`populus_disk_init`].
enum PopulusStatus populus_disk_open(const char *path,
                                     const uint8_t *key,
                                     size_t key_len,
                                     bool read_only,
                                     struct PopulusDisk **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `disk` must come from `populus_disk_init`/`populus_disk_open` and not
// have been closed already.
void populus_disk_close(struct PopulusDisk *disk);

// Encrypts `len <= 512` bytes (zero-padded) into sector `index`.
//
// # Safety
// `disk` must be a live handle and `data` must point to `len` bytes.
enum PopulusStatus populus_disk_write(struct PopulusDisk *disk,
                                      uint64_t index,
                                      const uint8_t *data,
                                      size_t len);

// Decrypts sector `index` into the 512 bytes at `out`.
//
// # Safety
// `disk` must be a live handle and `out` must point to 512 writable bytes.
enum PopulusStatus populus_disk_read(const struct PopulusDisk *disk, uint64_t index, uint8_t *out);

// # Safety
// `disk` must be a live handle and `out` writable.
enum PopulusStatus populus_disk_sector_count(const struct PopulusDisk *disk, uint64_t *out);

// Writes left before the RT-PRN pool runs out.
//
// # Safety
// `disk` must be a live handle and `out` writable.
enum PopulusStatus populus_disk_remaining_writes(const struct PopulusDisk *disk, uint64_t *out);

// Derives the master key from `key` and perturbs it with `r_odd`/`r_even`.
//
// # Safety
// `key` must point to `key_len` bytes and `out` must be writable.
enum PopulusStatus populus_temp_key_new(const uint8_t *key,
                                        size_t key_len,
                                        uint64_t r_odd,
                                        uint64_t r_even,
                                        struct PopulusTempKey **out);

// # Safety
// `key` must come from `populus_temp_key_new` and not be freed already.
void populus_temp_key_free(struct PopulusTempKey *key);

// Encrypts one 512-byte sector. `input` and `output` may alias.
//
// # Safety
// `key` must be live; `input` and `output` must each span 512 bytes.
enum PopulusStatus populus_encrypt_sector(const struct PopulusTempKey *key,
                                          const uint8_t *input,
                                          uint8_t *output);

// Inverse of [`populus_encrypt_sector`].
//
// # Safety
// As for [`populus_encrypt_sector`].
enum PopulusStatus populus_decrypt_sector(const struct PopulusTempKey *key,
                                          const uint8_t *input,
                                          uint8_t *output);

// `log2` of the probability that `r` temporary keys contain 64 equal to a
// fixed one. Negative infinity below 64.
double populus_event_probability(double r);

// `log2` of the union bound over `theta` attack attempts with `r` writes each.
//
// # Safety
// `out` must be writable.
enum PopulusStatus populus_union_bound(double theta, double r, double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* POPULUS_H */
