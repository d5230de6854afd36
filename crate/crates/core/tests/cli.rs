//! Drives every `pesc` subcommand except the long-running `serve`.

use std::path::Path;
use std::process::{Command, Output, Stdio};

fn pesc(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_pesc")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "pesc {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

const SETTINGS: &str = r#"
[synth]
n_conversations = 20
n_turns = 6
seed = 4

[model]
d_model = 8
n_heads = 2
n_layers = 1
d_ff = 16
max_len = 96

[train]
preset = "desk"
epochs = 2

[decode]
max_new_tokens = 5
"#;

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("pesc.toml"), SETTINGS).unwrap();
    let cfg = ["--config", "pesc.toml"];
    let with = |args: &[&'static str]| [&cfg[..], args].concat();

    pesc(d, &with(&["corpus", "synth", "--out", "corpus.json"]));
    let corpus: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("corpus.json")).unwrap()).unwrap();
    assert_eq!(corpus["conversations"].as_array().unwrap().len(), 20);
    assert_eq!(corpus["format_version"], "1");

    let out = pesc(d, &with(&["corpus", "split", "--corpus", "corpus.json", "--ratio", "7:2:1", "--seed", "1", "--out-dir", "split"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("train 14 / valid 4 / test 2"));

    pesc(d, &["annotate", "--in", "split/train.json", "--out", "train.pes.json", "--extractor", "rule", "--audit", "audit.json", "--audit-n", "3"]);
    pesc(d, &["annotate", "--in", "split/valid.json", "--out", "valid.pes.json"]);
    let pes: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("train.pes.json")).unwrap()).unwrap();
    assert!(pes["conversations"][0]["persona_at_turn"].is_object());
    assert!(d.join("audit.json").exists());

    pesc(d, &with(&["train", "--corpus", "train.pes.json", "--valid", "valid.pes.json", "--out", "model.ckpt", "--report", "report.csv"]));
    let report = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("epoch,train_loss,valid_loss,selected"));
    assert_eq!(report.lines().count(), 3);

    std::fs::write(d.join("dialogue.txt"), "i am a nurse .\nhow are you feeling ?\ni feel anxious about my job .\n").unwrap();
    std::fs::write(d.join("persona.txt"), "i am a nurse\n").unwrap();
    let gen = |extra: &[&'static str]| {
        let base = ["generate", "--ckpt", "model.ckpt", "--dialogue", "dialogue.txt", "--persona", "persona.txt", "--seed", "3"];
        String::from_utf8(pesc(d, &with(&[&base[..], extra].concat())).stdout).unwrap()
    };
    let first = gen(&["--strategy", "Providing Suggestions", "--trace", "trace.json", "--trace-distributions"]);
    assert!(first.starts_with("[Providing Suggestions] (alpha 0.75)"), "{first}");
    assert_eq!(first, gen(&["--strategy", "Providing Suggestions"]));
    assert!(gen(&["--strategy", "Providing Suggestions", "--alpha", "0"]).contains("(alpha 0)"));
    let trace: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("trace.json")).unwrap()).unwrap();
    let steps = trace["per_step_trace"].as_array().unwrap();
    assert!(!steps.is_empty() && steps[0]["distribution"].is_array());

    pesc(d, &with(&["evaluate", "--ckpt", "model.ckpt", "--corpus", "valid.pes.json", "--seed", "2", "--out", "eval.json", "--generations", "gen.jsonl"]));
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval.json")).unwrap()).unwrap();
    let n = eval["n_items"].as_u64().unwrap();
    assert!(n > 0);
    assert_eq!(std::fs::read_to_string(d.join("gen.jsonl")).unwrap().lines().count() as u64, n);

    pesc(d, &["analyze", "--corpus", "train.pes.json", "--out", "corr.csv"]);
    let csv = std::fs::read_to_string(d.join("corr.csv")).unwrap();
    assert!(csv.starts_with("axis,score,mean_sim,n,slope,intercept,r_squared"));
    assert_eq!(csv.lines().filter(|l| l.contains(",summary,")).count(), 3);

    let mut chat = Command::new(env!("CARGO_BIN_EXE_pesc"))
        .current_dir(d)
        .args(["--config", "pesc.toml", "chat", "--ckpt", "model.ckpt", "--store", "sessions"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    chat.stdin.take().unwrap().write_all(b"i am a nurse .\n/strategy Question\ni feel sad .\n/persona\n/quit\n").unwrap();
    let out = chat.wait_with_output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success());
    assert!(text.contains("bot [Question α=0]"), "{text}");
    assert!(text.contains("i am a nurse"), "{text}");
    assert_eq!(std::fs::read_dir(d.join("sessions")).unwrap().count(), 1);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_pesc")).current_dir(dir.path()).args(args).output().unwrap();
    let out = run(&["corpus", "split", "--corpus", "missing.json", "--out-dir", "x"]);
    assert!(!out.status.success());
    std::fs::write(dir.path().join("bad.toml"), "[train]\nepochz = 1\n").unwrap();
    let out = run(&["--config", "bad.toml", "corpus", "synth", "--out", "c.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    let out = run(&["corpus", "synth", "--out", "c.json"]);
    assert!(out.status.success());
    let out = run(&["corpus", "split", "--corpus", "c.json", "--ratio", "7-2-1", "--out-dir", "x"]);
    assert!(!out.status.success());
}
