// SPDX-License-Identifier: Apache-2.0

//! Compiles `tests/c/smoke.c` against the generated header and the shared
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

use omnilive::backends::hashed_vector;

#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libomnilive_ffi.so").exists(), "shared library missing in {}", lib_dir.display());
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ol_smoke");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-o")
        .arg(&out)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lomnilive_ffi", "-lm"])
        .status()
        .expect("a C compiler is installed");
    assert!(status.success());
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let want: String = hashed_vector(b"umbrella", 4)
        .unwrap()
        .iter()
        .map(|x| format!("{:016x}\n", x.to_bits()))
        .collect();
    assert_eq!(String::from_utf8(run.stdout).unwrap(), want);
}
