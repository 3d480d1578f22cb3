use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn dmpvae(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmpvae"))
        .arg("--out")
        .arg(out)
        .arg("--single-thread")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = dmpvae(out, args);
    assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Small dataset and a briefly trained model in `out`.
fn trained(out: &Path, seed: &str) {
    ok(out, &["--seed", seed, "augment", "--copies", "3"]);
    ok(out, &["--seed", seed, "train", "--epochs", "2"]);
}

fn stamp_line(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let at = text.find("seed=").unwrap_or_else(|| panic!("{} is not stamped", path.display()));
    text[at..].lines().next().unwrap().trim_end_matches(" -->").to_string()
}

#[test]
fn full_pipeline_writes_stamped_artifacts() {
    let out = workdir("pipeline");
    trained(&out, "4");
    let s = |args: &[&str]| {
        let mut v = vec!["--seed", "4"];
        v.extend_from_slice(args);
        ok(&out, &v)
    };
    let gen = s(&["generate", "--task", "3", "--goal", "0.5,0.5"]);
    assert!(gen.contains("end error"), "{gen}");
    s(&["finetune", "--task", "2", "--goal", "1,0", "--via", "0.3,0.5", "--name", "tuned"]);
    let table = s(&["eval-handwriting", "--endpoints", "2"]);
    assert!(table.lines().any(|l| l.starts_with('7')), "{table}");
    s(&["eval-sim", "--episodes", "1"]);
    s(&["plot", out.join("dataset.csv").to_str().unwrap(), out.join("tuned.csv").to_str().unwrap()]);

    let well_formed = |hash: &str| hash.len() == 64 && hash.bytes().all(|b| b.is_ascii_hexdigit());
    for name in [
        "dataset.csv",
        "loss.csv",
        "generated.csv",
        "generated.svg",
        "tuned.csv",
        "tuned.svg",
        "handwriting.csv",
        "plot.svg",
        "traces/push_4.csv",
        "traces/reach_4.svg",
    ] {
        let line = stamp_line(&out.join(name));
        let hash = line.strip_prefix("seed=4 config_hash=").unwrap_or_else(|| panic!("{name}: {line}"));
        assert!(well_formed(hash), "{name}: {line}");
    }
    for name in ["generated.csv.json", "tuned.csv.json", "handwriting.json", "sim_reach.json", "sim_push.json"] {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap();
        assert_eq!(v["seed"], 4, "{name}");
        assert!(well_formed(v["config_hash"].as_str().unwrap()), "{name}");
    }
    let model = dmpvae::cvae::load(&out.join("model.ckpt")).unwrap();
    assert_eq!(model.meta.seed, 4);
    assert!(well_formed(model.meta.config_hash.as_deref().unwrap()));
}

#[test]
fn same_seed_same_bytes_in_any_directory() {
    let (a, b) = (workdir("det-a"), workdir("det-b"));
    trained(&a, "9");
    trained(&b, "9");
    for f in ["dataset.csv", "model.ckpt", "loss.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = workdir("det-c");
    trained(&c, "10");
    assert_ne!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(c.join("model.ckpt")).unwrap());
}

#[test]
fn usage_errors_exit_with_one() {
    let out = workdir("usage");
    assert_eq!(code(&dmpvae(&out, &["frobnicate"])), 1);
    assert_eq!(code(&dmpvae(&out, &["plot"])), 1);
    assert_eq!(code(&dmpvae(&out, &["--help"])), 0);

    let cfg = out.join("bad.json");
    fs::write(&cfg, r#"{"train": {"epocks": 3}}"#).unwrap();
    let o = dmpvae(&out, &["--config", cfg.to_str().unwrap(), "augment"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epocks"));

    trained(&out, "0");
    assert_eq!(code(&dmpvae(&out, &["generate", "--task", "5", "--goal", "1,0"])), 1);
    assert_eq!(code(&dmpvae(&out, &["generate", "--task", "3", "--goal", "1,0,2"])), 1);
    assert_eq!(code(&dmpvae(&out, &["finetune", "--task", "3", "--goal", "1,0"])), 1);
}

#[test]
fn bad_data_exits_with_two() {
    let out = workdir("data");
    let o = dmpvae(&out, &["train"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    trained(&out, "0");
    let ckpt = out.join("model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 3] ^= 0xff;
    fs::write(&ckpt, &bytes).unwrap();
    let o = dmpvae(&out, &["generate", "--task", "1", "--goal", "1,0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}

#[test]
fn numerical_failures_exit_with_three() {
    let out = workdir("numeric");
    let cfg = out.join("stiff.json");
    fs::write(&cfg, r#"{"dmp": {"alpha": 1e6, "dt": 1.0}}"#).unwrap();
    let o = dmpvae(&out, &["--config", cfg.to_str().unwrap(), "augment", "--copies", "1"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));

    ok(&out, &["augment", "--copies", "1"]);
    fs::write(&cfg, r#"{"train": {"lr": 1e30, "epochs": 3}}"#).unwrap();
    let o = dmpvae(&out, &["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
