use seedmem_harness::ExperimentReport;
use seedmem_toyldm::{DatasetSpec, ModelConfig};
use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 9] =
    ["make-data", "train", "erase", "invert", "concept-exp", "image-exp", "shuffle-exp", "norm-sweep", "report"];

fn seedmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seedmem")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(code(&seedmem(&["--help"])), 0);
    for sub in SUBCOMMANDS {
        let o = seedmem(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub}");
    }
}

#[test]
fn bad_invocations_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "counts = [").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["frobnicate"],
        vec!["concept-exp", "--bogus", "1"],
        vec!["concept-exp", "--counts.erased"],
        vec!["concept-exp", "--config", "/nonexistent/c.toml"],
        vec!["concept-exp", "--config", p(&bad)],
        vec!["concept-exp", "--counts.erased", "many"],
        vec!["concept-exp"],
        vec!["train", "--out", "x.ckpt", "--train.nope", "3"],
        vec!["invert", "--checkpoint", "a", "--data", "b", "--out", "c", "--seed", "1"],
        vec!["report", "--dir", "/nonexistent"],
    ];
    for args in cases {
        let o = seedmem(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    let o = seedmem(&["concept-exp", "--bogus", "1"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

fn without_timestamp(json: &str) -> String {
    json.lines().filter(|l| !l.contains("\"created_unix\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn pipeline_from_training_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let mut mc = ModelConfig::default();
    mc.dataset = DatasetSpec::default().with_counts(40);
    mc.denoiser.hidden = 32;
    mc.denoiser.time_dim = 8;
    mc.schedule.steps = 20;
    mc.train.steps = 60;
    mc.train.batch = 16;
    std::fs::write(d.join("model.toml"), toml::to_string(&mc).unwrap()).unwrap();
    let (model, vanilla, erased, data) = (d.join("model.toml"), d.join("v.ckpt"), d.join("e.ckpt"), d.join("d.bin"));

    assert_eq!(code(&seedmem(&["train", "--config", p(&model), "--out", p(&vanilla)])), 0);
    let erase = ["erase", "--checkpoint", p(&vanilla), "--out", p(&erased), "--steps", "5", "--batch", "8", "--pool_seeds", "4"];
    assert_eq!(code(&seedmem(&erase)), 0);
    assert_eq!(code(&seedmem(&["make-data", "--config", p(&model), "--out", p(&data), "--per-class", "2"])), 0);
    assert_eq!(seedmem_harness::cli::read_dataset(&data).unwrap().len(), 6);

    let inv = d.join("inv");
    let o = seedmem(&["invert", "--checkpoint", p(&vanilla), "--data", p(&data), "--out", p(&inv), "--limit", "3", "--renoise-iters", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(inv.join("rows.csv")).unwrap().lines().count(), 4);
    assert_eq!(seedmem_inversion::read_seed_file(&inv.join("seeds.bin")).unwrap().len(), 3);

    let cfg = format!(
        "seed = 5\ncompare_vanilla = true\n[checkpoints]\nvanilla = {:?}\nerased = {:?}\n\
         [counts]\nerased = 4\nreference = 4\nclassifier_per_class = 150\n[inversion]\nrenoise_iters = 1\n",
        p(&vanilla),
        p(&erased)
    );
    std::fs::write(d.join("c.toml"), cfg).unwrap();
    let (r1, r2) = (d.join("r1"), d.join("r2"));
    let first = seedmem(&["concept-exp", "--config", p(&d.join("c.toml")), "--out", p(&r1)]);
    let second = seedmem(&["concept-exp", "--config", p(&d.join("c.toml")), "--out", p(&r2), "--threads", "1"]);
    assert!(r1.join("report.json").is_file(), "{}{}", String::from_utf8_lossy(&first.stdout), String::from_utf8_lossy(&first.stderr));
    for f in ["report.json", "rows.csv", "histogram.csv", "config.toml"] {
        assert!(r1.join(f).is_file(), "{f}");
    }
    let text = std::fs::read_to_string(r1.join("report.json")).unwrap();
    let report = ExperimentReport::from_json(&text).unwrap();
    let expected = if report.all_gates_pass() { 0 } else { 1 };
    assert_eq!(code(&first), expected);
    assert_eq!(code(&second), expected);
    assert_eq!(without_timestamp(&text), without_timestamp(&std::fs::read_to_string(r2.join("report.json")).unwrap()));
    assert_eq!(std::fs::read(r1.join("rows.csv")).unwrap(), std::fs::read(r2.join("rows.csv")).unwrap());

    let o = seedmem(&["report", "--dir", p(&r1)]);
    assert_eq!(code(&o), expected);
    assert!(String::from_utf8_lossy(&o.stdout).contains("concept experiment"));

    assert!(text.contains("\"count\": 4"));
    std::fs::write(r2.join("report.json"), text.replacen("\"count\": 4", "\"count\": 3", 1)).unwrap();
    assert_ne!(code(&seedmem(&["report", "--dir", p(&r2)])), 0);
}
