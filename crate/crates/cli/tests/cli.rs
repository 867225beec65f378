use std::path::Path;
use std::process::{Command, Output};

struct Shell {
    dir: tempfile::TempDir,
}

impl Shell {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, p: &str) -> String {
        self.dir.path().join(p).display().to_string()
    }

    fn raw(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_taxoscope"))
            .args(args)
            .current_dir(self.dir.path())
            .env("TAXOSCOPE_STORE", self.dir.path().join("store"))
            .env("TAXOSCOPE_FIXED_CLOCK", "")
            .env_remove("TAXOSCOPE_PROVIDER")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.raw(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }
}

fn manifest_lines(root: &Path) -> usize {
    std::fs::read_to_string(root.join("store/manifest.jsonl")).unwrap().lines().count()
}

#[test]
fn scripted_end_to_end_run() {
    let sh = Shell::new();
    let provider = sh.ok(&["mock-scenario", "--out", "mock"]).trim().to_string();
    sh.ok(&["ingest", "--input", "mock/corpus.jsonl", "--name", "logs"]);
    sh.ok(&["split", "--dataset", "logs", "--seed", "7"]);
    let gen = sh.ok(&["generate", "--dataset", "logs-split", "--provider", &provider, "--runs", "5"]);
    assert_eq!(gen.lines().filter(|l| l.ends_with("\tok")).count(), 5);
    let t = sh.ok(&["consolidate", "--id", "intents", "--aliases", "aliases/synthetic"]);
    assert_eq!(t.trim(), "intents@1");
    let t2 = sh.ok(&["clarify", "--taxonomy", "intents@1", "--provider", &provider]);
    assert_eq!(t2.trim(), "intents@2");
    let ann = |slice: &str| {
        sh.ok(&[
            "annotate", "--dataset", "logs-split", "--taxonomy", "intents@2", "--slice", slice, "--provider",
            &provider, "--aliases", "aliases/synthetic",
        ])
        .split('\t')
        .next()
        .unwrap()
        .to_string()
    };
    let train = ann("train");
    let test = ann("test");

    let spot = sh.ok(&["spot-check", "--run", &train, "--k", "10", "--seed", "3", "--dataset", "logs-split"]);
    let tasks = sh.ok(&["review", "list", "--state", "open", "--kind", "spot-check-verdict"]);
    assert_eq!(tasks.lines().count(), 10);
    for line in tasks.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["task_id"].as_str().unwrap();
        sh.ok(&["review", "submit", "--task", id, "--as", "reviewer", "--verdict", "follows"]);
    }
    assert_eq!(sh.ok(&["review", "list", "--state", "open"]).lines().count(), 0);

    let gates = sh.ok(&[
        "gates", "run", "--taxonomy", "intents@2", "--annotation-run", &train, "--share-run", &test,
        "--spot-check", spot.trim(), "--strict",
    ]);
    for g in ["comprehensiveness\tpass", "clarity\tpass", "accuracy\tpass", "conciseness\tpass"] {
        assert!(gates.contains(g), "{gates}");
    }
    let files = sh.ok(&["report", "--run", &test, "--dataset", "logs-split", "--out", "report", "--gates", "gate-0001"]);
    assert!(files.lines().any(|l| l.ends_with("summary.md")));
    let summary = std::fs::read_to_string(sh.path("report/summary.md")).unwrap();
    assert!(summary.contains("accuracy: pass"));
    assert!(manifest_lines(sh.dir.path()) > 1000);
}

#[test]
fn gates_without_a_run_names_the_flag() {
    let sh = Shell::new();
    let out = sh.raw(&["gates", "run", "--taxonomy", "intents@1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--annotation-run"));
}

#[test]
fn missing_artifacts_fail_with_a_diagnostic() {
    let sh = Shell::new();
    let out = sh.raw(&["gates", "run", "--taxonomy", "intents@1", "--annotation-run", "ann-0001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("intents@1"));
    let out = sh.raw(&["split", "--dataset", "logs", "--frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn pair_agreement_on_the_human_llm_fixture() {
    let sh = Shell::new();
    let runs = sh.ok(&["fixtures"]);
    assert!(runs.contains("ann-human") && runs.contains("ann-gpt4"));
    let out = sh.ok(&["agree", "--pair", "ann-human,ann-gpt4"]);
    assert!(out.starts_with("cohen_kappa\t0.6564\tsubstantial\tn=124"), "{out}");
    let out = sh.ok(&["agree", "--pair", "ann-a1,ann-a2"]);
    assert!(out.starts_with("cohen_kappa\t0.7667\tsubstantial\tn=123"), "{out}");
    let table = sh.ok(&["agree", "--pairwise", "ann-a1,ann-a2"]);
    assert!(table.contains("0.7667"));
    let out = sh.raw(&["agree", "--pair", "ann-a1"]);
    assert!(!out.status.success());
}

#[test]
fn disagreements_can_be_resolved_headlessly() {
    let sh = Shell::new();
    sh.ok(&["fixtures"]);
    let adj = sh.ok(&["review", "disagreements", "--runs", "ann-a1,ann-a2"]);
    let open = sh.ok(&["review", "list", "--state", "open", "--kind", "resolve-disagreement"]);
    assert_eq!(open.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(open.lines().next().unwrap()).unwrap();
    let id = first["task_id"].as_str().unwrap();
    let bad = sh.raw(&["review", "submit", "--task", id, "--as", "lead", "--label", "Astrology"]);
    assert!(!bad.status.success());
    sh.ok(&["review", "claim", "--task", id, "--as", "lead"]);
    let other = sh.raw(&["review", "submit", "--task", id, "--as", "someone", "--label", "Learning"]);
    assert!(String::from_utf8_lossy(&other.stderr).contains("claimed by lead"));
    sh.ok(&["review", "submit", "--task", id, "--as", "lead", "--label", "Learning"]);
    assert!(adj.trim().starts_with("adj-"));
}

#[test]
fn help_names_the_workflow_phase_of_each_command() {
    let sh = Shell::new();
    let help = sh.ok(&["--help"]);
    for phase in [
        "Data preparation",
        "Taxonomy generation",
        "Taxonomy refinement",
        "Application",
        "Validation",
        "Human review",
        "Insights",
    ] {
        assert!(help.contains(phase), "{phase}");
    }
    for cmd in [
        "ingest", "split", "generate", "consolidate", "multilevel", "annotate", "vote", "agree", "gates", "report",
        "serve", "mock-scenario",
    ] {
        assert!(help.contains(cmd), "{cmd}");
    }
}

#[test]
fn bootstrap_scenarios_reproduce_the_frequency_table() {
    let sh = Shell::new();
    let providers = sh.ok(&["mock-scenario", "--kind", "bootstrap", "--out", "boot"]);
    let records: String = (0..20).map(|i| format!("{{\"id\":\"q{i}\",\"modality\":\"search\",\"turns\":[{{\"speaker\":\"user\",\"text\":\"query {i}\"}}]}}\n")).collect();
    std::fs::write(sh.path("logs.jsonl"), records).unwrap();
    sh.ok(&["ingest", "--input", "logs.jsonl", "--name", "logs"]);
    sh.ok(&["split", "--dataset", "logs", "--train-fraction", "0.8"]);
    for p in providers.lines() {
        sh.ok(&["generate", "--dataset", "logs-split", "--provider", p, "--runs", "10"]);
    }
    let out = sh.raw(&["consolidate", "--id", "boot", "--aliases", "aliases/bootstrap", "--reference",
        "Information retrieval/seeking/finding,Problem solving,Learning,Content creation,Leisure/Entertainment,Ask for advice/opinion,Chat,Verify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stderr);
    assert!(table.contains("Information retrieval/seeking/finding\ttrue\t10\t10\t9\t29"), "{table}");
    assert!(table.contains("Verify\ttrue\t0\t2\t2\t4"), "{table}");
}
