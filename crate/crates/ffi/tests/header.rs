use std::path::Path;
use std::process::Command;

#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/hybridscore.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["hd_model_load", "hd_model_score", "hd_roc_auc", "hd_embeddings_read", "HD_STATUS_OK"] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"hybridscore.h\"\nint f(void) { HdModel *m = 0; return (int)hd_model_load(\"x\", &m) + (int)HD_STATUS_OK; }\n",
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler found; skipped");
            return;
        }
    };
    assert!(status.success());
}
