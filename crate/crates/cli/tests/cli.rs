//! End-to-end contracts of the `ape` binary: exit codes, idempotence,
//! ensembling identities, and resume behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn ape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ape(args);
    assert!(
        out.status.success(),
        "ape {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(path: &Path, lines: &[&str]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// A small copy-task corpus in out-of-the-box English casing.
fn toy_corpus(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let sentences = [
        "The cat sat on the mat .",
        "A dog ran in the park .",
        "The bird sang a song .",
        "The cat ran to the dog .",
        "A song from the park .",
        "The mat lay on the floor .",
        "The dog sat by the bird .",
        "A cat in the park sang .",
    ];
    let src = dir.join("raw.src");
    let mt = dir.join("raw.mt");
    let pe = dir.join("raw.pe");
    write(&src, &sentences);
    write(&mt, &sentences);
    write(&pe, &sentences);
    (src, mt, pe)
}

fn prepare(dir: &Path, src: &Path, mt: &Path, pe: &Path, out: &Path) {
    let _ = dir;
    ok(&[
        "prepare",
        "--src",
        &s(src),
        "--mt",
        &s(mt),
        "--pe",
        &s(pe),
        "--out",
        &s(out),
        "--bpe-merges",
        "60",
        "--vocab-size",
        "200",
    ]);
}

#[test]
fn prepare_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    let out1 = tmp.path().join("prep1");
    let out2 = tmp.path().join("prep2");
    prepare(tmp.path(), &src, &mt, &pe, &out1);
    prepare(tmp.path(), &src, &mt, &pe, &out2);
    let manifest = read(&out1.join("manifest.txt"));
    assert_eq!(manifest, read(&out2.join("manifest.txt")));
    assert_eq!(manifest.lines().count(), 7, "all outputs hashed");
    for line in manifest.lines() {
        let (digest, name) = line.split_once("  ").expect("hash  name");
        assert_eq!(digest.len(), 64);
        assert_eq!(
            std::fs::read(out1.join(name)).unwrap(),
            std::fs::read(out2.join(name)).unwrap()
        );
    }
}

#[test]
fn prepare_missing_file_exits_2_and_names_the_path() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, _) = toy_corpus(tmp.path());
    let ghost = tmp.path().join("no-such-file.pe");
    let out = ape(&[
        "prepare",
        "--src",
        &s(&src),
        "--mt",
        &s(&mt),
        "--pe",
        &s(&ghost),
        "--out",
        &s(&tmp.path().join("prep")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("no-such-file.pe"),
        "message names the missing path"
    );
}

#[test]
fn prepare_uses_provided_codes_verbatim() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    // Zero merges: every word must come out character-segmented.
    let codes = tmp.path().join("empty.codes");
    write(&codes, &["#version: 0.2"]);
    let out = tmp.path().join("prep");
    ok(&[
        "prepare",
        "--src",
        &s(&src),
        "--mt",
        &s(&mt),
        "--pe",
        &s(&pe),
        "--out",
        &s(&out),
        "--codes",
        &s(&codes),
    ]);
    assert_eq!(read(&out.join("bpe.codes")), read(&codes), "no learning happened");
    let first = read(&out.join("corpus.pe")).lines().next().unwrap().to_string();
    assert!(
        first.starts_with("t@@ h@@ e"),
        "character segmentation, got {first:?}"
    );
}

#[test]
fn score_identity_reports_perfect_and_json_parses() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("text");
    write(&file, &["The cat sat .", "A dog ran ."]);
    let out = ok(&["score", "--hyp", &s(&file), "--ref", &s(&file), "--json"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next().unwrap(), "TER 0.0000 BLEU 100.00");
    let record: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(record["ter_score"], 0.0);
    assert_eq!(record["bleu"]["score"], 100.0);
    assert_eq!(record["segments"], 2);
}

#[test]
fn score_line_count_mismatch_exits_2() {
    let tmp = TempDir::new().unwrap();
    let hyp = tmp.path().join("hyp");
    let reference = tmp.path().join("ref");
    write(&hyp, &["a b", "c d"]);
    write(&reference, &["a b"]);
    let out = ape(&["score", "--hyp", &s(&hyp), "--ref", &s(&reference)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn score_lowercase_flag_changes_only_casing_pairs() {
    let tmp = TempDir::new().unwrap();
    let hyp = tmp.path().join("hyp");
    let reference = tmp.path().join("ref");
    write(&hyp, &["the Cat sat ."]);
    write(&reference, &["the cat sat ."]);
    let cased = ok(&["score", "--hyp", &s(&hyp), "--ref", &s(&reference)]);
    assert_eq!(
        String::from_utf8_lossy(&cased.stdout).trim(),
        "TER 0.2500 BLEU 0.00"
    );
    let folded = ok(&[
        "score", "--hyp", &s(&hyp), "--ref", &s(&reference), "--lowercase",
    ]);
    assert_eq!(
        String::from_utf8_lossy(&folded.stdout).trim(),
        "TER 0.0000 BLEU 100.00"
    );
}

#[test]
fn lm_trains_loads_and_rejects_empty_corpus() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus");
    write(&corpus, &["a b c", "a b d", "b c a"]);
    let model_path = tmp.path().join("toy.lm");
    ok(&[
        "lm", "--corpus", &s(&corpus), "--order", "3", "--out", &s(&model_path),
    ]);
    let loaded = ape_core::dataselect::NGramModel::load(&model_path).unwrap();
    let direct =
        ape_core::dataselect::lm_train(&["a b c".into(), "a b d".into(), "b c a".into()], 3)
            .unwrap();
    let tokens: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
    assert_eq!(
        loaded.cross_entropy(&tokens).to_bits(),
        direct.cross_entropy(&tokens).to_bits(),
        "round trip preserves scores"
    );
    let empty = tmp.path().join("empty");
    write(&empty, &[]);
    assert_eq!(code(&ape(&["lm", "--corpus", &s(&empty), "--out", &s(&model_path)])), 2);
}

#[test]
fn select_writes_sorted_scores_and_nested_subsets() {
    let tmp = TempDir::new().unwrap();
    let in_domain = tmp.path().join("tech");
    write(
        &in_domain,
        &["compile the kernel", "link the kernel module", "compile the module"],
    );
    let general = tmp.path().join("mixed");
    write(
        &general,
        &[
            "compile the kernel module",
            "rain falls in spring",
            "link the kernel",
            "birds fly south",
            "compile the kernel",
            "the sun rose today",
            "link the module",
            "clouds cover the sky",
        ],
    );
    let prefix = tmp.path().join("sel");
    ok(&[
        "select",
        "--in-domain",
        &s(&in_domain),
        "--general",
        &s(&general),
        "--out",
        &s(&prefix),
        "--sizes",
        "1,2,4",
        "--order",
        "3",
    ]);
    let scores = read(&prefix.with_extension("scores"));
    let indices: Vec<usize> = scores
        .lines()
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(indices, (0..8).collect::<Vec<_>>(), "scores keep corpus order");
    let subset = |n: &str| -> Vec<String> {
        read(&prefix.with_extension(n)).lines().map(String::from).collect()
    };
    let (one, two, four) = (subset("1"), subset("2"), subset("4"));
    assert_eq!((one.len(), two.len(), four.len()), (1, 2, 4));
    assert!(one.iter().all(|l| two.contains(l)), "subsets nest");
    assert!(two.iter().all(|l| four.contains(l)), "subsets nest");
    // With disjoint wording, the kernel sentences win.
    assert!(four.iter().filter(|l| l.contains("kernel")).count() >= 3);
}

#[test]
fn select_identical_corpora_score_zero_with_stable_order() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus");
    write(&corpus, &["a b c", "c b a", "b a c", "a c b"]);
    let prefix = tmp.path().join("same");
    ok(&[
        "select",
        "--in-domain",
        &s(&corpus),
        "--general",
        &s(&corpus),
        "--out",
        &s(&prefix),
        "--sizes",
        "2",
        "--order",
        "2",
    ]);
    for line in read(&prefix.with_extension("scores")).lines() {
        let score: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
        assert_eq!(score, 0.0);
    }
    // All ties: the tie rule keeps the first sentences in original order.
    assert_eq!(read(&prefix.with_extension("2")), "a b c\nc b a\n");
}

// ── Training and decoding round trips (micro model for speed) ──

fn micro_sets(extra: &[(&str, &str)]) -> Vec<String> {
    let mut args = vec![
        "model.d_model=16".to_string(),
        "model.n_heads=2".to_string(),
        "model.d_ff=32".to_string(),
        "model.n_layers=1".to_string(),
        "model.max_len=64".to_string(),
        "model.dropout=0.0".to_string(),
        "train.batch_tokens=128".to_string(),
        "train.warmup_steps=20".to_string(),
        "train.validate_every=5".to_string(),
        "train.patience=1000".to_string(),
    ];
    args.extend(extra.iter().map(|(k, v)| format!("{k}={v}")));
    args.into_iter().flat_map(|kv| ["--set".to_string(), kv]).collect()
}

fn train_micro(prep: &Path, out: &Path, extra: &[(&str, &str)]) {
    let mut args: Vec<String> = vec![
        "train".into(),
        "--data".into(),
        s(prep),
        "--dev".into(),
        s(prep),
        "--out".into(),
        s(out),
    ];
    args.extend(micro_sets(extra));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
}

#[test]
fn postedit_ensemble_identity_and_line_counts() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    let prep = tmp.path().join("prep");
    prepare(tmp.path(), &src, &mt, &pe, &prep);
    let model = tmp.path().join("model.bin");
    train_micro(&prep, &model, &[("train.max_steps", "30")]);
    assert!(model.exists());
    assert!(model.with_file_name("model.bin.last").exists());
    assert!(model.with_file_name("model.bin.state").exists());
    assert!(model.with_file_name("model.bin.log").exists());

    let single = tmp.path().join("single.out");
    let quad = tmp.path().join("quad.out");
    let m = s(&model);
    ok(&[
        "postedit", "--model", &m, "--prep", &s(&prep), "--src", &s(&src),
        "--mt", &s(&mt), "--out", &s(&single),
    ]);
    ok(&[
        "postedit", "--model", &m, "--model", &m, "--model", &m, "--model", &m,
        "--prep", &s(&prep), "--src", &s(&src), "--mt", &s(&mt), "--out", &s(&quad),
    ]);
    assert_eq!(
        std::fs::read(&single).unwrap(),
        std::fs::read(&quad).unwrap(),
        "4-copy ensemble reproduces the single model byte for byte"
    );
    assert_eq!(read(&single).lines().count(), 8, "one output line per input line");

    let missing = ape(&[
        "postedit", "--model", &s(&tmp.path().join("ghost.bin")), "--prep", &s(&prep),
        "--src", &s(&src), "--mt", &s(&mt), "--out", &s(&single),
    ]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn train_divergence_exits_3() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    let prep = tmp.path().join("prep");
    prepare(tmp.path(), &src, &mt, &pe, &prep);
    let mut args: Vec<String> = vec![
        "train".into(),
        "--data".into(),
        s(&prep),
        "--dev".into(),
        s(&prep),
        "--out".into(),
        s(&tmp.path().join("diverged.bin")),
    ];
    args.extend(micro_sets(&[("train.max_steps", "20"), ("train.lr_scale", "1e30"), ("train.clip_norm", "0")]));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ape(&refs);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn train_resume_continues_the_schedule_step() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    let prep = tmp.path().join("prep");
    prepare(tmp.path(), &src, &mt, &pe, &prep);
    let first = tmp.path().join("run.bin");
    train_micro(&prep, &first, &[("train.max_steps", "2"), ("train.validate_every", "1")]);
    let log1 = read(&first.with_file_name("run.bin.log"));
    assert!(log1.lines().last().unwrap().starts_with("step 2 "));

    let second = tmp.path().join("resumed.bin");
    let mut args: Vec<String> = vec![
        "train".into(),
        "--data".into(),
        s(&prep),
        "--dev".into(),
        s(&prep),
        "--out".into(),
        s(&second),
        "--resume".into(),
        s(&first.with_file_name("run.bin.last")),
        "--resume-state".into(),
        s(&first.with_file_name("run.bin.state")),
    ];
    args.extend(micro_sets(&[("train.max_steps", "3"), ("train.validate_every", "1")]));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
    let log2 = read(&second.with_file_name("resumed.bin.log"));
    assert!(
        log2.lines().next().unwrap().starts_with("step 3 "),
        "resumed run continues at step 3, got {log2:?}"
    );
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let (src, mt, pe) = toy_corpus(tmp.path());
    let prep = tmp.path().join("prep");
    prepare(tmp.path(), &src, &mt, &pe, &prep);
    let out = ape(&[
        "train", "--data", &s(&prep), "--dev", &s(&prep),
        "--out", &s(&tmp.path().join("x.bin")),
        "--set", "train.typo_key=1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_key"));
}
