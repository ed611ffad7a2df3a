mod common;

use std::path::Path;
use std::process::{Command, Output};

fn nfsdf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nfsdf"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), common::tiny_toml(Path::new("run"))).unwrap();
    dir
}

#[test]
fn usage_errors_exit_1() {
    let d = setup();
    assert_eq!(code(&nfsdf(d.path(), &["bogus"])), 1);
    assert_eq!(code(&nfsdf(d.path(), &["--mode", "full", "eval"])), 1);
    assert_eq!(code(&nfsdf(d.path(), &["--seed", "x", "eval"])), 1);
    std::fs::write(d.path().join("bad.toml"), "sed = 3\n").unwrap();
    let o = nfsdf(d.path(), &["--config", "bad.toml", "gen-corpus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("sed"));
    assert_eq!(code(&nfsdf(d.path(), &["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let d = setup();
    let c = ["--config", "c.toml"];
    // missing corpus
    assert_eq!(code(&nfsdf(d.path(), &[&c[..], &["train"]].concat())), 2);
    assert_eq!(code(&nfsdf(d.path(), &[&c[..], &["gen-corpus"]].concat())), 0);
    // existing output without --force
    let o = nfsdf(d.path(), &[&c[..], &["gen-corpus"]].concat());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    // stage order: the flow needs the decoder codes
    let o = nfsdf(d.path(), &[&c[..], &["train", "--stage", "flow"]].concat());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("decoder"));
    assert!(!d.path().join("run/weights/flow.nfwt").exists());
    // nothing to report yet
    assert_eq!(code(&nfsdf(d.path(), &[&c[..], &["report"]].concat())), 2);
}

#[test]
fn gen_corpus_rerun_is_byte_identical() {
    let d = setup();
    let c = ["--config", "c.toml"];
    assert_eq!(code(&nfsdf(d.path(), &[&c[..], &["gen-corpus"]].concat())), 0);
    let path = d.path().join("run/corpus/manifest.json");
    let first = std::fs::read(&path).unwrap();
    assert_eq!(
        code(&nfsdf(d.path(), &[&c[..], &["gen-corpus", "--force"]].concat())),
        0
    );
    assert_eq!(std::fs::read(&path).unwrap(), first);
    // the effective configuration is echoed
    let echoed = std::fs::read_to_string(d.path().join("run/corpus/config.toml")).unwrap();
    let cfg = nfsdf::config::ExperimentConfig::from_toml(&echoed).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.decoder.seed, nfsdf::seed::derive_seed(11, "train/decoder", 0));
    // a different master seed gives a different corpus
    assert_eq!(
        code(&nfsdf(
            d.path(),
            &[&c[..], &["--seed", "12", "--out", "other", "gen-corpus"]].concat()
        )),
        0
    );
    assert_ne!(std::fs::read(d.path().join("other/corpus/manifest.json")).unwrap(), first);
}

#[test]
fn numerical_failure_exits_3() {
    let d = setup();
    let c = ["--config", "c.toml"];
    assert_eq!(code(&nfsdf(d.path(), &[&c[..], &["gen-corpus"]].concat())), 0);
    // a learning rate this large drives the decoder loss to infinity
    let mut cfg = common::tiny_config(Path::new("run"));
    cfg.decoder.lr_weights = 1e200;
    cfg.decoder.lr_codes = 1e200;
    std::fs::write(d.path().join("diverge.toml"), cfg.to_toml()).unwrap();
    let o = nfsdf(d.path(), &["--config", "diverge.toml", "train"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn end_to_end_through_the_binary() {
    let d = setup();
    let c = ["--config", "c.toml"];
    for args in [
        &["gen-corpus"][..],
        &["train"],
        &["optimize", "--mode", "mask-only"],
        &["optimize", "--mode", "mask-only", "--flow", "bypass"],
        &["eval", "--mode", "mask-only"],
        &["report"],
    ] {
        let o = nfsdf(d.path(), &[&c[..], args].concat());
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let table = std::fs::read_to_string(d.path().join("run/eval/report.md")).unwrap();
    assert!(table.contains("| mask-only | gn-flow |"));
    assert!(table.contains("| mask-only | gn-bypass |"));
    // optimize refuses to overwrite a finished run
    let o = nfsdf(d.path(), &[&c[..], &["optimize", "--mode", "mask-only"]].concat());
    assert_eq!(code(&o), 2);
}
