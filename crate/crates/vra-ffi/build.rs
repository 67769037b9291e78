fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR not set");
    let header = std::path::Path::new(&crate_dir).join("include").join("vra.h");
    std::fs::create_dir_all(header.parent().unwrap()).expect("create include dir");
    cbindgen::generate(&crate_dir)
        .expect("generate C header")
        .write_to_file(&header);
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
