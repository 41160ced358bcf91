//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "kgdelta.h"

int main(void) {
    KgParams *params = NULL;
    KgGrid *grid = NULL;
    if (kg_params_new(3.0, 1.0, -1.0, &params) != KG_STATUS_OK) return 10;
    if (kg_grid_new(20.0, 401, &grid) != KG_STATUS_OK) return 11;
    size_t n = kg_grid_len(grid);
    double u[401], v[401];
    if (kg_profile_sample_q_gamma(params, grid, u, n) != KG_STATUS_OK) return 12;
    for (size_t j = 0; j < n; j++) v[j] = 0.0;
    u[0] = 0.0;
    u[n - 1] = 0.0;
    KgSim *sim = NULL;
    if (kg_sim_new(params, grid, u, v, n, 0.025, &sim) != KG_STATUS_OK) return 13;
    if (kg_sim_advance(sim, 40) != KG_STATUS_OK) return 14;
    double e = 0.0;
    if (kg_sim_energy(sim, &e) != KG_STATUS_OK) return 15;
    if (fabs(kg_sim_time(sim) - 1.0) > 1e-12) return 16;
    kg_sim_free(sim);

    KgParams *bad = NULL;
    if (kg_params_new(1.0, 1.0, 0.0, &bad) != KG_STATUS_INVALID_ARGUMENT) return 17;
    char msg[256];
    if (kg_last_error_message(msg, sizeof msg) == 0) return 18;

    kg_params_free(params);
    kg_grid_free(grid);
    printf("%.6f\n", e);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let lib = target_dir().join("libkgdelta_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke program exited with {:?}", out.status.code());
    let e: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(e.is_finite() && e > 0.0);
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
