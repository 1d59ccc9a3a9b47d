//! Builds a small C program against the generated header and the static
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "populus.h"

int main(int argc, char **argv) {
    uint8_t p[POPULUS_SECTOR_BYTES], c[POPULUS_SECTOR_BYTES], out[POPULUS_SECTOR_BYTES];
    const char *key = "c key";
    PopulusTempKey *tk = NULL;
    PopulusDisk *disk = NULL;
    char err[128];
    for (int i = 0; i < POPULUS_SECTOR_BYTES; i++) p[i] = (uint8_t)i;

    if (populus_temp_key_new((const uint8_t *)key, strlen(key), 1, 2, &tk) != POPULUS_STATUS_OK) return 1;
    if (populus_encrypt_sector(tk, p, c) != POPULUS_STATUS_OK) return 2;
    if (populus_decrypt_sector(tk, c, out) != POPULUS_STATUS_OK) return 3;
    if (memcmp(p, out, sizeof p) != 0 || memcmp(p, c, sizeof p) == 0) return 4;
    populus_temp_key_free(tk);

    if (populus_disk_init(argv[1], (const uint8_t *)key, strlen(key), 2, 4, &disk) != POPULUS_STATUS_OK) return 5;
    if (populus_disk_read(disk, 0, out) != POPULUS_STATUS_NEVER_WRITTEN) return 6;
    populus_last_error_message(err, sizeof err);
    if (strncmp(err, "NeverWritten", 12) != 0) return 7;
    if (populus_disk_write(disk, 0, p, sizeof p) != POPULUS_STATUS_OK) return 8;
    if (populus_disk_read(disk, 0, out) != POPULUS_STATUS_OK || memcmp(p, out, sizeof p) != 0) return 9;
    populus_disk_close(disk);
    printf("ok %s\n", populus_version());
    return argc == 2 ? 0 : 10;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<this test>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libpopulus_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let exe = dir.path().join("client");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(dir.path().join("img")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
