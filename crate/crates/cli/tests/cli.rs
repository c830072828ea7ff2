use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_domadapt");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("DOMADAPT_WORKSPACE")
        .output()
        .expect("spawn domadapt")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

const SYNTHETIC: &str = r#"
workspace = "ws"
seed = 7

[preprocess]
bpe_merges = 40
vocab_limit = 500
max_len = 40
domain_tags = true

[synthetic]
shared_vocab_size = 30
per_domain_lexicon_size = 6
domain_count = 2
sentence_length_range = [2, 5]
pair_counts = [80, 30]
seed = 3
dev_count = 8
test_count = 8

[model]
embedding_dim = 8
hidden_dim = 10
encoder_layers = 1
decoder_layers = 1
cell = "gru"

[train]
name = "base"
hyper = { learning_rate = 0.1, batch_size = 8, optimizer = "adagrad", clip_norm = 5.0 }
beam = 2
max_len = 12
metric = "perplexity"

[selection]
in_domain = "in"
fraction = 1.0

[[plan.stages]]
domains = ["od1", "in"]
epochs = 1
"#;

/// Writes `config.toml` (with `extra` appended) into a fresh directory.
fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, format!("{SYNTHETIC}{extra}")).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_is_idempotent_and_records_checksums() {
    let (dir, cfg) = setup("");
    ok(&["prepare", "--config", s(&cfg)]);
    let ws = dir.path().join("ws");
    let manifest = fs::read_to_string(ws.join("manifest.tsv")).unwrap();
    let first: Vec<(PathBuf, Vec<u8>)> = ["corpus/od1.src", "corpus/in.tgt", "eval/in.dev.src", "bpe.model", "vocab.tgt"]
        .iter()
        .map(|f| (ws.join(f), fs::read(ws.join(f)).unwrap()))
        .collect();
    assert!(manifest.lines().any(|l| l.starts_with("param\tsynthetic\t")));
    assert!(manifest.lines().any(|l| l.starts_with("output\tcorpus:in\tcorpus/in.src\t")));
    for l in manifest.lines().skip(1) {
        let sha = l.split('\t').nth(3).unwrap();
        assert_eq!(sha.len(), 64, "{l}");
    }
    // tagged sources
    let src = fs::read_to_string(ws.join("corpus/od1.src")).unwrap();
    assert!(src.lines().all(|l| l.starts_with("<dom:od1> ")));

    ok(&["prepare", "--config", s(&cfg)]);
    assert_eq!(fs::read_to_string(ws.join("manifest.tsv")).unwrap(), manifest);
    for (p, bytes) in first {
        assert_eq!(fs::read(&p).unwrap(), bytes, "{}", p.display());
    }
}

#[test]
fn stale_workspace_is_refused() {
    let (dir, cfg) = setup("");
    ok(&["prepare", "--config", s(&cfg)]);
    let text = fs::read_to_string(&cfg).unwrap().replace("bpe_merges = 40", "bpe_merges = 41");
    fs::write(&cfg, text).unwrap();
    let out = run(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stale"));
    drop(dir);
}

#[test]
fn full_selection_reproduces_the_corpus() {
    let (dir, cfg) = setup("");
    ok(&["prepare", "--config", s(&cfg)]);
    ok(&["select", "--config", s(&cfg)]);
    let ws = dir.path().join("ws");
    for side in ["src", "tgt"] {
        assert_eq!(
            fs::read_to_string(ws.join(format!("corpus/od1.sel.{side}"))).unwrap(),
            fs::read_to_string(ws.join(format!("corpus/od1.{side}"))).unwrap()
        );
    }
    let scores = fs::read_to_string(ws.join("selected/od1.scores.tsv")).unwrap();
    let n = fs::read_to_string(ws.join("corpus/od1.src")).unwrap().lines().count();
    assert_eq!(scores.lines().filter(|l| !l.starts_with('#')).count(), n);
    // selected corpora are ordinary domains afterwards
    assert!(fs::read_to_string(ws.join("manifest.tsv")).unwrap().contains("corpus:od1.sel"));
}

#[test]
fn train_then_resume_and_translate() {
    let (dir, cfg) = setup("");
    ok(&["prepare", "--config", s(&cfg)]);
    let out = ok(&["train", "--config", s(&cfg)]);
    assert!(out.contains("run base"), "{out}");
    let run = dir.path().join("ws/runs/base");
    for f in ["best.ckpt", "final.ckpt", "report.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let best = run.join("best.ckpt");
    ok(&["train", "--config", s(&cfg), "--from-checkpoint", s(&best), "--name", "more"]);
    let report = fs::read_to_string(dir.path().join("ws/runs/more/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);

    let hyp = dir.path().join("hyp.txt");
    ok(&["translate", "--config", s(&cfg), "--checkpoint", s(&best), "--set", "in.test", "--output", s(&hyp), "--beam", "2"]);
    let refs = dir.path().join("ws/eval/in.test.ref");
    assert_eq!(
        fs::read_to_string(&hyp).unwrap().lines().count(),
        fs::read_to_string(&refs).unwrap().lines().count()
    );

    let raw = dir.path().join("raw.txt");
    fs::write(&raw, "first line .\nsecond , line\n").unwrap();
    let out = ok(&["translate", "--config", s(&cfg), "--checkpoint", s(&best), "--input", s(&raw), "--tag", "in"]);
    assert_eq!(out.lines().count(), 2);

    let report = ok(&["evaluate", "--config", s(&cfg), "--checkpoint", &format!("base={}", s(&best)), "--set", "in.dev", "--set", "in.test"]);
    assert_eq!(report.lines().count(), 3, "{report}");
    assert!(report.lines().nth(1).unwrap().starts_with("base\tin.dev\t"));
}

#[test]
fn single_member_ensemble_matches_translate() {
    let (dir, cfg) = setup("");
    ok(&["prepare", "--config", s(&cfg)]);
    ok(&["train", "--config", s(&cfg)]);
    let best = dir.path().join("ws/runs/base/best.ckpt");
    let spec = dir.path().join("members.txt");
    fs::write(&spec, format!("{}\n", s(&best))).unwrap();
    let single = ok(&["translate", "--config", s(&cfg), "--checkpoint", s(&best), "--set", "in.dev", "--beam", "4", "--max-len", "80"]);
    let ens = ok(&["ensemble", "--config", s(&cfg), "--spec", s(&spec), "--set", "in.dev"]);
    assert_eq!(single, ens);

    let weights = dir.path().join("tuned.txt");
    let audit = dir.path().join("audit.tsv");
    let spec2 = dir.path().join("two.txt");
    fs::write(&spec2, format!("{0}\n{0}\n", s(&best))).unwrap();
    let tuned = ok(&[
        "ensemble", "--config", s(&cfg), "--spec", s(&spec2), "--set", "in.dev", "--tune-dev", "in.dev",
        "--weights-out", s(&weights), "--audit-out", s(&audit),
    ]);
    assert_eq!(tuned, single);
    assert_eq!(fs::read_to_string(&weights).unwrap().lines().count(), 2);
    assert!(fs::read_to_string(&audit).unwrap().lines().count() >= 3);
}

#[test]
fn divergence_exits_with_code_3() {
    let extra = "\n[plan.stages.overrides]\nlearning_rate = 1e300\noptimizer = \"sgd\"\n";
    let (dir, cfg) = setup(extra);
    ok(&["prepare", "--config", s(&cfg)]);
    let out = run(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    drop(dir);
}

#[test]
fn evaluate_identical_files_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("a.txt");
    fs::write(&f, "the cat sat on the mat .\na small test here\n").unwrap();
    let out = ok(&["evaluate", "--hyp", s(&f), "--ref", s(&f), "--system", "copy"]);
    let row = out.lines().nth(1).unwrap();
    assert_eq!(row.split('\t').nth(2), Some("100.00"), "{out}");

    let g = dir.path().join("b.txt");
    fs::write(&g, "THE CAT SAT ON THE MAT .\nA SMALL TEST HERE\n").unwrap();
    let batch = dir.path().join("batch.tsv");
    fs::write(&batch, "copy\tt\ta.txt\ta.txt\nupper\tt\tb.txt\ta.txt\n").unwrap();
    let out = ok(&["evaluate", "--batch", s(&batch)]);
    assert_eq!(out.lines().count(), 3);
    assert_eq!(out.lines().nth(2).unwrap().split('\t').nth(2), Some("0.00"));
    let out = ok(&["evaluate", "--batch", s(&batch), "--lowercase"]);
    assert_eq!(out.lines().nth(2).unwrap().split('\t').nth(2), Some("100.00"));
}

#[test]
fn usage_and_data_errors() {
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&["evaluate", "--hyp", s(&missing), "--ref", s(&missing)]), 2);
    // unknown config key
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "workspace = \"w\"\nseed = 1\nbogus = 2\n").unwrap();
    assert_eq!(code(&["prepare", "--config", s(&cfg)]), 1);
    // data file named by the config is missing
    fs::write(
        &cfg,
        "workspace = \"w\"\nseed = 1\n[[domain]]\nname = \"a\"\nsource = \"x.src\"\ntarget = \"x.tgt\"\n",
    )
    .unwrap();
    assert_eq!(code(&["prepare", "--config", s(&cfg)]), 2);
}

#[test]
fn file_corpora_with_devsets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let src: String = (0..40).map(|i| format!("the house number {} is red .\n", i % 7)).collect();
    let tgt: String = (0..40).map(|i| format!("das haus nummer {} ist rot .\n", i % 7)).collect();
    fs::write(d.join("a.src"), &src).unwrap();
    fs::write(d.join("a.tgt"), &tgt).unwrap();
    fs::write(d.join("dev.src"), "the house is red .\n").unwrap();
    fs::write(d.join("dev.tgt"), "das haus ist rot .\n").unwrap();
    let cfg = d.join("c.toml");
    fs::write(
        &cfg,
        r#"workspace = "ws"
seed = 1
[preprocess]
bpe_merges = 20
[model]
embedding_dim = 6
hidden_dim = 6
[train]
skip_bleu = true
metric = "perplexity"
[[domain]]
name = "a"
source = "a.src"
target = "a.tgt"
[[devset]]
name = "dev"
source = "dev.src"
target = "dev.tgt"
domain = "a"
[[plan.stages]]
domains = ["a"]
epochs = 1
"#,
    )
    .unwrap();
    ok(&["prepare", "--config", s(&cfg)]);
    assert_eq!(fs::read_to_string(d.join("ws/eval/dev.ref")).unwrap(), "das haus ist rot .\n");
    ok(&["train", "--config", s(&cfg)]);
    assert!(d.join("ws/runs/run/best.ckpt").exists());
}

#[test]
fn shipped_config_prepares_and_selects() {
    let dir = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    let cfg = dir.path().join("synthetic.toml");
    let text = fs::read_to_string(shipped).unwrap().replace("../work/synthetic", "ws");
    fs::write(&cfg, text).unwrap();
    ok(&["prepare", "--config", s(&cfg)]);
    let out = ok(&["select", "--config", s(&cfg)]);
    assert_eq!(out.lines().count(), 2, "{out}");
    let sel = fs::read_to_string(dir.path().join("ws/corpus/od1.sel.src")).unwrap();
    assert_eq!(sel.lines().count(), 225);
}
