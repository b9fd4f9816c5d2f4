//! Compiles and runs a small C program against the generated header and the
//! static library.

use std::path::PathBuf;
use std::process::Command;

fn staticlib() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary> -> target/<profile>/libsetnet_ffi.a
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libsetnet_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = staticlib() else {
        eprintln!("libsetnet_ffi.a not built yet; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "setnet.h"

int main(void) {
    SetnetDataset *ds = NULL;
    if (setnet_dataset_generate(SETNET_TASK_NORMAL_VAR, 4, 8, 1, 0, &ds) != SETNET_STATUS_OK) return 10;
    size_t n, m, d;
    if (setnet_dataset_shape(ds, &n, &m, &d) != SETNET_STATUS_OK || n != 4 || m != 8 || d != 1) return 11;
    setnet_dataset_free(ds);

    SetnetModel *model = NULL;
    const char *cfg = "{\"family\":\"deep_sets\",\"input_dim\":1,\"encoder_depth\":2,\"hidden\":4}";
    if (setnet_model_new(cfg, &model) != SETNET_STATUS_OK) return 12;
    double x[6] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    double y[2];
    if (setnet_model_predict(model, x, 2, 3, 1, y, 2) != SETNET_STATUS_OK) return 13;
    setnet_model_free(model);

    if (setnet_model_new("{", &model) != SETNET_STATUS_INVALID_ARGUMENT) return 14;
    if (setnet_last_error() == NULL) return 15;
    if (setnet_check_prop1() != SETNET_STATUS_OK) return 16;
    printf("ok %s\n", setnet_version());
    return 0;
}
"#,
    )
    .unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
