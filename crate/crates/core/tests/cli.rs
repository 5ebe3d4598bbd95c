use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_nleq");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, variant: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{variant}.toml"));
    let text = format!(
        r#"seed = 3
out_dir = "out"

[channel]
isi_taps = [0.9, 0.3, -0.1]
nl_a3 = 0.1
snr_db = 18.0
seed = 4

[data]
n_frames = 3
frame_len = 1500
{extra}
[model]
variant = "{variant}"
taps = 17

[training]
epochs = 2

[sweep]
nl_a3_values = [0.0, 0.1]
"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_frames_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_mse", "");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o = run(&["generate", "--config", s(&cfg), "--out", s(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("empirical SNR"));
    assert!(run(&["generate", "--config", s(&cfg), "--out", s(&b), "--quiet"]).status.success());
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# nleq "));
    assert_eq!(lines.next().unwrap(), "frame_id,index,tx_symbol,tx_bits_as_int,rx_sample");
    assert_eq!(lines.count(), 3 * 1500);
}

#[test]
fn unknown_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_mse", "frames_per_second = 2\n");
    let o = run(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("frames_per_second"), "{}", stderr(&o));
}

#[test]
fn train_writes_results_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_msex", "");
    let out1 = dir.path().join("r1");
    let out2 = dir.path().join("r2");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(line.contains("BER=") && line.contains("AIR=") && line.contains("GMI="), "{line}");
    assert!(run(&["train", "--config", s(&cfg), "--out", s(&out2), "--quiet"]).status.success());
    for f in ["config.toml", "model.ckpt", "loss_trace.csv", "eval.txt", "eval.csv", "scatter.csv", "scatter_raw.csv"] {
        let a = fs::read(out1.join("eq_msex").join(f)).unwrap();
        let b = fs::read(out2.join("eq_msex").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
    let eval = fs::read_to_string(out1.join("eq_msex/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 2 + 2, "header, columns, two eval frames");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "linear", "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["train", "--config", s(&cfg), "--out", s(&a), "--quiet"]).status.success());
    assert!(run(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "77", "--quiet"]).status.success());
    let ca = fs::read_to_string(a.join("linear/model.ckpt")).unwrap();
    let cb = fs::read_to_string(b.join("linear/model.ckpt")).unwrap();
    assert!(cb.contains("seed=77"));
    assert_ne!(ca, cb);
}

#[test]
fn missing_data_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_mse", "path = \"nowhere.csv\"\n");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn train_reads_generated_frames() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = write_config(dir.path(), "eq_mse", "");
    assert!(run(&["generate", "--config", s(&gen_cfg), "--out", s(&dir.path().join("frames.csv")), "--quiet"])
        .status
        .success());
    let cfg = write_config(dir.path(), "joint1", "path = \"frames.csv\"\n");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r")), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Joint networks expose no equalized signal, so no scatter files.
    assert!(dir.path().join("r/joint1/eval.csv").exists());
    assert!(!dir.path().join("r/joint1/scatter.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_mse", "");
    let out = dir.path().join("sw");
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&out), "--threads", "2", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# nleq "));
    assert_eq!(
        lines[1],
        "variant,nl_a3,status,ber,air_symbolwise,gmi_bitwise,sigma2,mean_conditional_variance,best_epoch,seed"
    );
    assert_eq!(lines.len(), 2 + 10);
    assert!(lines[2..].iter().all(|l| l.split(',').nth(2) == Some("ok")));
    // Joint rows have no symbol-wise AIR.
    let joint = lines.iter().find(|l| l.starts_with("joint1,")).unwrap();
    assert_eq!(joint.split(',').nth(4), Some("n/a"));
    assert!(out.join("a3_01_eq_msex/model.ckpt").exists());
}

#[test]
fn sweep_without_section_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq_mse", "");
    let text = fs::read_to_string(&cfg).unwrap();
    let cut = text.find("[sweep]").unwrap();
    fs::write(&cfg, &text[..cut]).unwrap();
    let o = run(&["sweep", "--config", s(&cfg), "--out", s(&dir.path().join("sw"))]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sweep"));
}

#[test]
fn scatter_exports_equalizer_but_refuses_joint_network() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames.csv");
    let gen_cfg = write_config(dir.path(), "eq_mse", "");
    assert!(run(&["generate", "--config", s(&gen_cfg), "--out", s(&frames), "--quiet"]).status.success());
    for variant in ["eq_mse", "joint2"] {
        let cfg = write_config(dir.path(), variant, "");
        assert!(run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r")), "--quiet"])
            .status
            .success());
    }
    let out = dir.path().join("sc");
    let eq_ckpt = dir.path().join("r/eq_mse/model.ckpt");
    let o = run(&["scatter", "--checkpoint", s(&eq_ckpt), "--data", s(&frames), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let sc = fs::read_to_string(out.join("scatter.csv")).unwrap();
    assert_eq!(sc.lines().nth(1), Some("tx_point,y"));
    assert_eq!(sc.lines().count(), 2 + 1500 - 16);
    assert!(out.join("scatter_raw.csv").exists());

    let joint_ckpt = dir.path().join("r/joint2/model.ckpt");
    let o = run(&["scatter", "--checkpoint", s(&joint_ckpt), "--data", s(&frames), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("equalized"), "{}", stderr(&o));

    // 16-ASK data do not fit an 8-ASK checkpoint's frames.
    let o = run(&[
        "scatter",
        "--checkpoint",
        s(&eq_ckpt),
        "--data",
        s(&frames),
        "--out",
        s(&out),
        "--bits-per-symbol",
        "4",
    ]);
    assert!(!o.status.success());
}
