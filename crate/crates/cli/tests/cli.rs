// End-to-end checks of the `tgavc` binary: argument handling and exit
// codes, the full corpus -> features -> training -> conversion ->
// evaluation -> plots pipeline, configuration precedence, and
// run-to-run determinism of the training logs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tgavc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tgavc"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (code {:?}):\n--- stdout ---\n{}\n--- stderr ---\n{}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

/// A run configuration small enough that every training regime finishes
/// in well under a second per step on one core. Two speakers reading the
/// same eight two-syllable lines gives parallel pairs in every split.
const TINY_CONFIG: &str = r#"
[model]
d_model = 6
d_style = 4
n_heads = 2
n_enc_blocks = 1
n_dec_blocks = 1
ff_hidden = 8
fft_kernel = 3
content_kernel = 3
content_channels = 6
content_lstm = 3
style_lstm = 4
clf_lstm = 4
n_mels = 8
autovc_bottleneck = 2
autovc_downsample = 2

[dsp]
sample_rate = 8000
n_fft = 256
hop = 64
n_mels = 8
fmin = 60.0
fmax = 3800.0

[train]
batch_size = 4
ge2e_speakers = 2
ge2e_utts = 3
ge2e_crop_frames = 16

[probe]
steps = 10
batch_size = 4

[corpus]
num_speakers = 2
utts_per_speaker = 8
seed = 11
min_syllables = 2
max_syllables = 2
"#;

/// Writes the tiny config and builds corpus + features under `root`.
/// Returns (config file, corpus dir, features dir).
fn setup_corpus(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = root.join("run.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let corpus = root.join("corpus");
    let feats = root.join("feats");
    let out = tgavc()
        .args(["make-toy-corpus", "--out"])
        .arg(&corpus)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "make-toy-corpus");
    let out = tgavc()
        .args(["prepare-data", "--corpus"])
        .arg(&corpus)
        .arg("--out")
        .arg(&feats)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "prepare-data");
    (cfg, corpus, feats)
}

fn train(
    cfg: &Path,
    corpus: &Path,
    feats: &Path,
    regime: &str,
    out_dir: &Path,
    seed: u64,
    steps: u64,
    extra: &[(&str, &Path)],
) -> Output {
    let mut cmd = tgavc();
    cmd.args(["train", "--regime", regime, "--corpus"])
        .arg(corpus)
        .arg("--features")
        .arg(feats)
        .arg("--out")
        .arg(out_dir)
        .arg("--seed")
        .arg(seed.to_string())
        .arg("--steps")
        .arg(steps.to_string())
        .arg("--config")
        .arg(cfg);
    for (flag, value) in extra {
        cmd.arg(flag).arg(value);
    }
    cmd.output().unwrap()
}

#[test]
fn help_lists_every_subcommand_and_exits_zero() {
    let out = tgavc().arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for sub in [
        "make-toy-corpus",
        "prepare-data",
        "pretrain-style",
        "train-tts",
        "train",
        "convert",
        "evaluate",
        "plots",
    ] {
        assert!(text.contains(sub), "--help must mention {sub}:\n{text}");
    }
    assert!(text.contains("config.schema.json"), "--help points at the schema file");
}

#[test]
fn unknown_subcommand_and_unknown_flag_print_usage_and_exit_one() {
    let out = tgavc().arg("frobnicate").output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).to_lowercase().contains("usage"), "{}", stderr(&out));

    let out = tgavc().args(["train", "--bogus-flag", "1"]).output().unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).to_lowercase().contains("usage"), "{}", stderr(&out));
}

#[test]
fn train_without_seed_is_rejected() {
    let out = tgavc()
        .args(["train", "--regime", "tgavc", "--corpus", "c", "--out", "o"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--seed"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_exit_one_with_the_key_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlerning_rate = 0.1\n").unwrap();
    let out = tgavc()
        .args(["make-toy-corpus", "--out"])
        .arg(dir.path().join("c"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("train.lerning_rate"), "{}", stderr(&out));
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (cfg, corpus, feats) = setup_corpus(root);

    assert!(corpus.join("manifest.jsonl").is_file());
    assert!(corpus.join("resolved_config.json").is_file());
    assert!(feats.join("spk00_utt000.mel").is_file());
    assert!(feats.join("resolved_config.json").is_file());

    // Style pretraining and the synthesis trio, then the three
    // conversion regimes that build on them.
    let style_dir = root.join("style");
    let out = tgavc()
        .args(["pretrain-style", "--corpus"])
        .arg(&corpus)
        .arg("--features")
        .arg(&feats)
        .arg("--out")
        .arg(&style_dir)
        .args(["--seed", "3", "--steps", "2", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "pretrain-style");
    let style_ckpt = style_dir.join("ge2e.ckpt");
    assert!(style_ckpt.is_file());

    let tts_dir = root.join("tts");
    let out = tgavc()
        .args(["train-tts", "--corpus"])
        .arg(&corpus)
        .arg("--features")
        .arg(&feats)
        .arg("--out")
        .arg(&tts_dir)
        .args(["--seed", "3", "--steps", "2", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "train-tts");
    let tts_ckpt = tts_dir.join("tts.ckpt");
    assert!(tts_ckpt.is_file());

    let tgavc_dir = root.join("tgavc");
    let out = train(&cfg, &corpus, &feats, "tgavc", &tgavc_dir, 5, 3, &[]);
    assert_ok(&out, "train tgavc");
    let tgavc_ckpt = tgavc_dir.join("tgavc.ckpt");
    assert!(tgavc_ckpt.is_file());
    assert!(tgavc_dir.join("train_log.jsonl").is_file());
    assert!(tgavc_dir.join("resolved_config.json").is_file());

    let tgavcs_dir = root.join("tgavcs");
    let out = train(
        &cfg,
        &corpus,
        &feats,
        "tgavcs",
        &tgavcs_dir,
        5,
        2,
        &[("--tts-ckpt", tts_ckpt.as_path())],
    );
    assert_ok(&out, "train tgavcs");
    assert!(tgavcs_dir.join("tgavcs.ckpt").is_file());

    let autovc_dir = root.join("autovc");
    let out = train(
        &cfg,
        &corpus,
        &feats,
        "autovc",
        &autovc_dir,
        5,
        2,
        &[("--style-ckpt", style_ckpt.as_path())],
    );
    assert_ok(&out, "train autovc");
    let autovc_ckpt = autovc_dir.join("autovc.ckpt");
    assert!(autovc_ckpt.is_file());

    // Convert one spk00 utterance toward spk01's style.
    let styles_dir = root.join("styles");
    std::fs::create_dir_all(&styles_dir).unwrap();
    for utt in ["spk01_utt000.wav", "spk01_utt001.wav"] {
        std::fs::copy(corpus.join("wav").join(utt), styles_dir.join(utt)).unwrap();
    }
    let conv_dir = root.join("converted");
    let conv_wav = conv_dir.join("spk00_to_spk01.wav");
    let out = tgavc()
        .args(["convert", "--source"])
        .arg(corpus.join("wav/spk00_utt000.wav"))
        .arg("--target-dir")
        .arg(&styles_dir)
        .arg("--ckpt")
        .arg(&tgavc_ckpt)
        .arg("--out")
        .arg(&conv_wav)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "convert");
    assert!(conv_wav.is_file());
    let conv_mel = conv_dir.join("spk00_to_spk01.mel");
    assert!(conv_mel.is_file(), "conversion writes a feature sidecar");
    assert!(conv_dir.join("resolved_config.json").is_file());

    // Evaluate the trained model against the baseline in one report.
    let eval_dir = root.join("eval");
    let out = tgavc()
        .args(["evaluate", "--ckpt"])
        .arg(&tgavc_ckpt)
        .arg("--baseline-ckpt")
        .arg(&autovc_ckpt)
        .arg("--corpus")
        .arg(&corpus)
        .arg("--features")
        .arg(&feats)
        .arg("--out")
        .arg(&eval_dir)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "evaluate");
    let report_path = eval_dir.join("eval_report.json");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["kind"], "tgavc");
    assert_eq!(report["baseline"]["kind"], "autovc");
    assert!(report["mcd_mean"].as_f64().unwrap().is_finite());
    assert!(report["baseline"]["mcd_mean"].as_f64().unwrap().is_finite());
    assert!(report["probe_accuracy"].as_f64().is_some(), "probe ran for the primary model");

    // Draw everything the pipeline produced.
    let plots_dir = root.join("plots");
    let spec = format!(
        "demo={},{},{}",
        feats.join("spk00_utt000.mel").display(),
        conv_mel.display(),
        feats.join("spk01_utt000.mel").display()
    );
    let out = tgavc()
        .args(["plots", "--metrics-log"])
        .arg(tgavc_dir.join("train_log.jsonl"))
        .arg("--report")
        .arg(&report_path)
        .args(["--triptych", &spec, "--out"])
        .arg(&plots_dir)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_ok(&out, "plots");
    assert!(plots_dir.join("loss_curves.png").is_file());
    assert!(plots_dir.join("mcd_comparison.png").is_file());
    assert!(plots_dir.join("mel_triptych_demo.png").is_file());
}

#[test]
fn frozen_variant_without_a_synthesis_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus, feats) = setup_corpus(dir.path());
    let out = train(&cfg, &corpus, &feats, "tgavcs", &dir.path().join("run"), 1, 1, &[]);
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("error:"), "{}", stderr(&out));
}

#[test]
fn unknown_regime_exits_one_naming_the_choices() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus, feats) = setup_corpus(dir.path());
    let out = train(&cfg, &corpus, &feats, "cyclegan", &dir.path().join("run"), 1, 1, &[]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown training regime"), "{}", stderr(&out));
    assert!(stderr(&out).contains("tgavc"), "{}", stderr(&out));
}

#[test]
fn same_seed_reproduces_the_training_log_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus, feats) = setup_corpus(dir.path());
    let out = train(&cfg, &corpus, &feats, "tgavc", &dir.path().join("a"), 7, 3, &[]);
    assert_ok(&out, "first run");
    let out = train(&cfg, &corpus, &feats, "tgavc", &dir.path().join("b"), 7, 3, &[]);
    assert_ok(&out, "second run");
    let a = std::fs::read(dir.path().join("a/train_log.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/train_log.jsonl")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "identical seeds must produce identical metrics logs");
}

#[test]
fn environment_overrides_beat_the_file_and_flags_beat_both() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus, feats) = setup_corpus(dir.path());

    // Environment only: the env step budget wins over the file default.
    let run_env = dir.path().join("env_run");
    let mut cmd = tgavc();
    cmd.args(["pretrain-style", "--corpus"])
        .arg(&corpus)
        .arg("--features")
        .arg(&feats)
        .arg("--out")
        .arg(&run_env)
        .args(["--seed", "2", "--config"])
        .arg(&cfg)
        .env("TGAVC_TRAIN_MAX_STEPS", "2");
    let out = cmd.output().unwrap();
    assert_ok(&out, "env-budget run");
    let snap: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run_env.join("resolved_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(snap["config"]["train"]["max_steps"], 2);
    assert!(
        stderr(&out).contains("env TGAVC_TRAIN_MAX_STEPS"),
        "provenance is logged at startup: {}",
        stderr(&out)
    );

    // Flag beats environment.
    let run_flag = dir.path().join("flag_run");
    let mut cmd = tgavc();
    cmd.args(["pretrain-style", "--corpus"])
        .arg(&corpus)
        .arg("--features")
        .arg(&feats)
        .arg("--out")
        .arg(&run_flag)
        .args(["--seed", "2", "--steps", "3", "--config"])
        .arg(&cfg)
        .env("TGAVC_TRAIN_MAX_STEPS", "2");
    let out = cmd.output().unwrap();
    assert_ok(&out, "flag-budget run");
    let snap: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(run_flag.join("resolved_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(snap["config"]["train"]["max_steps"], 3);
}

#[test]
fn plots_with_nothing_drawable_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("empty.jsonl");
    std::fs::write(&log, "").unwrap();
    let out = tgavc()
        .args(["plots", "--metrics-log"])
        .arg(&log)
        .arg("--out")
        .arg(dir.path().join("plots"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("no plots"), "{}", stderr(&out));

    let out = tgavc()
        .args(["plots", "--out"])
        .arg(dir.path().join("plots2"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nothing to plot"), "{}", stderr(&out));
}

#[test]
fn convert_with_an_empty_style_directory_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let styles = dir.path().join("styles");
    std::fs::create_dir_all(&styles).unwrap();
    // The style directory check runs before the checkpoint loads, so a
    // placeholder checkpoint path is enough to reach it.
    let out = tgavc()
        .args(["convert", "--source", "missing.wav", "--target-dir"])
        .arg(&styles)
        .args(["--ckpt", "missing.ckpt", "--out"])
        .arg(dir.path().join("o.wav"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("no .wav files"), "{}", stderr(&out));
}
