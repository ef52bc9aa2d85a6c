use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("manifest dir"));
    let header = crate_dir.join("include").join("rhythmvec.h");
    std::fs::create_dir_all(header.parent().expect("include dir")).expect("mkdir include");

    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            // write_to_file only touches the file when the content changed,
            // which keeps incremental builds quiet.
            bindings.write_to_file(&header);
        }
        Err(err) => {
            // Header generation failing should not break `cargo build` for
            // users without the committed header being stale; surface it.
            println!("cargo:warning=cbindgen failed: {err}");
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
