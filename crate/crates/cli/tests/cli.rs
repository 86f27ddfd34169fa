use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::Parser;
use kgsynth_cli::{exit, Cli, ModelArtifact};
use kgsynth_core::dp::{report_epsilon, AccountantState};
use kgsynth_core::eval::EvalReport;
use tempfile::TempDir;

fn kgsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgsynth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    /// A 400-row fixture with its schema and rule files.
    fn new() -> Self {
        let w = Work {
            dir: TempDir::new().unwrap(),
        };
        let o = kgsynth(&[
            "fixture", "--name", "mini-network", "--rows", "400", "--seed", "3", "--out", &w.s("data.csv"),
            "--schema", &w.s("schema.toml"), "--rules", &w.s("rules.toml"),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        w
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_string_lossy().into_owned()
    }

    fn fit(&self, model: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "fit".to_string(),
            "--data".into(),
            self.s("data.csv"),
            "--schema".into(),
            self.s("schema.toml"),
            "--rules".into(),
            self.s("rules.toml"),
            "--model".into(),
            self.s(model),
            "--seed".into(),
            "1".into(),
            "--profile".into(),
            "desk".into(),
        ];
        if !extra.contains(&"--epochs") {
            args.extend(["--epochs".to_string(), "2".to_string()]);
        }
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        kgsynth(&refs)
    }

    fn sample(&self, model: &str, rows: usize, seed: u64, out: &str) -> Output {
        kgsynth(&[
            "sample", "--model", &self.s(model), "--rows", &rows.to_string(), "--seed", &seed.to_string(), "--out",
            &self.s(out),
        ])
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap()
}

#[test]
fn fixture_output_is_deterministic() {
    let w = Work::new();
    let o = kgsynth(&["fixture", "--name", "mini-network", "--rows", "400", "--seed", "3", "--out", &w.s("again.csv")]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&w.p("data.csv")), read(&w.p("again.csv")));
    assert_eq!(read(&w.p("data.csv")).lines().count(), 401);
}

#[test]
fn fit_is_deterministic_and_sample_counts_rows() {
    let w = Work::new();
    let a = w.fit("a.json", &[]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert!(stdout(&a).contains("final losses"));
    let b = w.fit("b.json", &[]);
    assert_eq!(code(&b), 0);
    let ma = ModelArtifact::load(&w.p("a.json")).unwrap();
    let mb = ModelArtifact::load(&w.p("b.json")).unwrap();
    assert_eq!(ma.fingerprint, mb.fingerprint);
    assert_eq!(read(&w.p("a.json")), read(&w.p("b.json")));

    assert_eq!(code(&w.sample("a.json", 5, 9, "s1.csv")), 0);
    let s1 = read(&w.p("s1.csv"));
    assert_eq!(s1.lines().count(), 6);
    assert_eq!(s1.lines().next().unwrap(), "protocol,dst_port,src_zone,bytes");
    assert_eq!(code(&w.sample("a.json", 5, 9, "s2.csv")), 0);
    assert_eq!(s1, read(&w.p("s2.csv")));
    assert_eq!(code(&w.sample("a.json", 5, 10, "s3.csv")), 0);
    assert_ne!(s1, read(&w.p("s3.csv")));
}

#[test]
fn artifact_round_trip_is_bit_exact() {
    let w = Work::new();
    assert_eq!(code(&w.fit("m.json", &[])), 0);
    let text = read(&w.p("m.json"));
    let m = ModelArtifact::from_json(&text).unwrap();
    assert_eq!(m.to_json().unwrap(), text);
    let again = ModelArtifact::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(again, m);
    assert_eq!(ModelArtifact::new(m.body.clone()).unwrap().fingerprint, m.fingerprint);
}

#[test]
fn tampered_or_foreign_artifacts_are_refused() {
    let w = Work::new();
    assert_eq!(code(&w.fit("m.json", &[])), 0);
    let text = read(&w.p("m.json"));

    // Flip one digit inside the body.
    let body_at = text.find("\"body\"").unwrap();
    let pos = body_at + text[body_at..].find(|c: char| c.is_ascii_digit()).unwrap();
    let mut bytes = text.clone().into_bytes();
    bytes[pos] = if bytes[pos] == b'7' { b'8' } else { b'7' };
    fs::write(w.p("tampered.json"), &bytes).unwrap();
    let o = w.sample("tampered.json", 5, 1, "x.csv");
    assert_eq!(code(&o), exit::ARTIFACT, "{}", stderr(&o));
    assert!(stderr(&o).contains("fingerprint"));
    assert!(!w.p("x.csv").exists());

    let newer = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    fs::write(w.p("newer.json"), newer).unwrap();
    let o = w.sample("newer.json", 5, 1, "x.csv");
    assert_eq!(code(&o), exit::ARTIFACT);
    assert!(stderr(&o).contains("version 2"), "{}", stderr(&o));

    fs::write(w.p("garbage.json"), &text[..text.len() / 2]).unwrap();
    assert_eq!(code(&w.sample("garbage.json", 5, 1, "x.csv")), exit::ARTIFACT);
}

#[test]
fn missing_rules_file_is_a_config_error() {
    let w = Work::new();
    let o = kgsynth(&[
        "fit", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--rules", &w.s("absent.toml"), "--model",
        &w.s("m.json"), "--seed", "1",
    ]);
    assert_eq!(code(&o), exit::CONFIG);
    assert!(!w.p("m.json").exists());
}

#[test]
fn invalid_rules_are_refused() {
    let w = Work::new();
    fs::write(
        w.p("bad.toml"),
        "[[rules]]\nid = \"x\"\nantecedent = [{ column = \"protocol\", value = \"SMTP\" }]\nconsequent = [{ column = \"src_zone\", value = \"home\" }]\n",
    )
    .unwrap();
    let o = kgsynth(&[
        "fit", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--rules", &w.s("bad.toml"), "--model",
        &w.s("m.json"), "--seed", "1",
    ]);
    assert_eq!(code(&o), exit::CONFIG, "{}", stderr(&o));
    assert!(!w.p("m.json").exists());
}

#[test]
fn budget_exhaustion_saves_a_flagged_model() {
    let w = Work::new();
    let o = w.fit("dp.json", &["--epochs", "50", "--dp", "--sigma", "1.0", "--epsilon-ceiling", "6"]);
    assert_eq!(code(&o), exit::BUDGET_EXHAUSTED, "{}", stderr(&o));
    assert!(stderr(&o).contains("budget_exhausted"));
    let m = ModelArtifact::load(&w.p("dp.json")).unwrap();
    assert!(m.budget_exhausted());
    let dp = m.body.state.dp.as_ref().unwrap();
    assert!(dp.epsilon <= 6.0 && dp.accountant.steps > 0);
    // The flagged model still samples.
    assert_eq!(code(&w.sample("dp.json", 3, 1, "s.csv")), 0);
}

#[test]
fn dp_fit_reports_epsilon() {
    let w = Work::new();
    let o = w.fit("dp.json", &["--dp", "--epsilon-ceiling", "8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("epsilon 8.0000"), "{}", stdout(&o));
    let m = ModelArtifact::load(&w.p("dp.json")).unwrap();
    let dp = m.body.state.dp.unwrap();
    assert_eq!(report_epsilon(&dp.accountant, dp.config.delta).unwrap().epsilon, dp.epsilon);
}

#[test]
fn dp_flags_require_dp() {
    let w = Work::new();
    assert_eq!(code(&w.fit("m.json", &["--sigma", "1.0"])), exit::CONFIG);
}

fn eval_args(w: &Work, synthetic: &str, extra: &[&str]) -> Vec<String> {
    let mut a: Vec<String> = [
        "kgsynth", "eval", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--synthetic", &w.s(synthetic),
        "--seed", "4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    a.extend(extra.iter().map(|s| s.to_string()));
    a
}

#[test]
fn eval_of_an_identical_table_and_report_round_trip() {
    let w = Work::new();
    fs::copy(w.p("data.csv"), w.p("copy.csv")).unwrap();
    // With an explicit holdout both classifier families train on identical
    // tables.
    let args = eval_args(
        &w,
        "copy.csv",
        &["--report", &w.s("r.json"), "--metrics", "pmse,chi2,ks,utility,aia", "--holdout", &w.s("data.csv")],
    );
    let cli = Cli::try_parse_from(&args).unwrap();
    let mut out = Vec::new();
    let kgsynth_cli::args::Command::Eval(a) = cli.command else { unreachable!() };
    let report = kgsynth_cli::commands::cmd_eval(&a, &mut out).unwrap();
    assert_eq!(EvalReport::from_json(&read(&w.p("r.json"))).unwrap(), report);
    assert_eq!(report.pmse, Some(0.0));
    assert_eq!(report.chi2_avg_p, Some(1.0));
    assert_eq!(report.ks_avg_p, Some(1.0));
    let u = report.utility.unwrap();
    assert!(u.classifiers.iter().all(|c| c.gap == Some(0.0)));
    assert!(String::from_utf8(out).unwrap().contains("pmse"));
}

#[test]
fn eval_against_a_bootstrap() {
    let w = Work::new();
    let text = read(&w.p("data.csv"));
    let lines: Vec<&str> = text.lines().collect();
    let mut boot = String::from(lines[0]);
    boot.push('\n');
    // Deterministic resample with replacement.
    let mut state = 12345u64;
    for _ in 1..lines.len() {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        boot.push_str(lines[1 + (state >> 33) as usize % (lines.len() - 1)]);
        boot.push('\n');
    }
    fs::write(w.p("boot.csv"), boot).unwrap();
    let o = kgsynth(&eval_args(&w, "boot.csv", &["--report", &w.s("r.json")]).iter().skip(1).map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = EvalReport::from_json(&read(&w.p("r.json"))).unwrap();
    assert!(r.pmse.unwrap() <= 0.02, "{r:?}");
    assert!(r.pmse_ratio.unwrap() <= 2.0);
}

#[test]
fn regression_without_a_target_names_the_option() {
    let w = Work::new();
    let schema = read(&w.p("schema.toml")).replace("target = \"protocol\"\n", "");
    fs::write(w.p("schema.toml"), schema).unwrap();
    let args = eval_args(&w, "data.csv", &["--metrics", "regression"]);
    let o = kgsynth(&args.iter().skip(1).map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), exit::CONFIG);
    assert!(stderr(&o).contains("--target"), "{}", stderr(&o));
}

#[test]
fn accountant_examples() {
    let o = kgsynth(&["accountant", "--q", "1", "--sigma", "2", "--steps", "1", "--orders", "8", "--delta", "1e-6"]);
    assert_eq!(code(&o), 0);
    let expected = 1.0 + (1e6f64).ln() / 7.0;
    assert_eq!(stdout(&o).trim(), format!("epsilon {expected} at order 8"));

    let o = kgsynth(&["accountant", "--q", "0.01", "--sigma", "1", "--steps", "0"]);
    assert!(stdout(&o).contains("no steps"));

    for (q, sigma, steps) in [(0.001, 0.5, 1u64), (0.01, 1.0, 100), (0.1, 4.0, 10_000)] {
        let o = kgsynth(&[
            "accountant", "--q", &q.to_string(), "--sigma", &sigma.to_string(), "--steps", &steps.to_string(),
        ]);
        let mut s = AccountantState::default();
        let per = s.step_rdp(q, sigma).unwrap();
        s.compose(&per, steps);
        let r = report_epsilon(&s, 1e-5).unwrap();
        assert_eq!(stdout(&o).trim(), format!("epsilon {} at order {}", r.epsilon, r.order));
    }

    assert_eq!(code(&kgsynth(&["accountant", "--q", "1.5", "--sigma", "1", "--steps", "1"])), exit::CONFIG);
    assert_eq!(code(&kgsynth(&["accountant", "--q", "0.1", "--sigma", "0", "--steps", "1"])), exit::CONFIG);
    assert_eq!(
        code(&kgsynth(&["accountant", "--q", "0.1", "--sigma", "1", "--steps", "1", "--orders", "0.5"])),
        exit::CONFIG
    );
}

#[test]
fn attacks_from_the_command_line() {
    let w = Work::new();
    let o = kgsynth(&[
        "attack", "--mode", "mia", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--synthesizer",
        "copy", "--seed", "2", "--report", &w.s("mia.json"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: kgsynth_cli::commands::AttackReport = serde_json::from_str(&read(&w.p("mia.json"))).unwrap();
    let mia = report.mia.unwrap();
    assert!(mia.accuracy >= 0.9);
    assert_eq!(mia.members, 50);

    let o = kgsynth(&[
        "attack", "--mode", "mia", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--synthesizer",
        "copy", "--members", "300", "--seed", "2",
    ]);
    assert_eq!(code(&o), exit::CONFIG);
    assert!(stderr(&o).contains("population"));

    let o = kgsynth(&[
        "attack", "--mode", "aia", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--synthetic",
        &w.s("data.csv"), "--sensitive", "protocol", "--seed", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy 1.0000"), "{}", stdout(&o));

    let o = kgsynth(&[
        "attack", "--mode", "aia", "--data", &w.s("data.csv"), "--schema", &w.s("schema.toml"), "--seed", "2",
    ]);
    assert_eq!(code(&o), exit::CONFIG);
}

#[test]
fn data_errors_have_their_own_code() {
    let w = Work::new();
    fs::write(w.p("broken.csv"), "protocol,dst_port,src_zone,bytes\nDNS,53,home,abc\n").unwrap();
    let o = kgsynth(&[
        "fit", "--data", &w.s("broken.csv"), "--schema", &w.s("schema.toml"), "--rules", &w.s("rules.toml"),
        "--model", &w.s("m.json"), "--seed", "1", "--missing", "error",
    ]);
    assert_eq!(code(&o), exit::DATA, "{}", stderr(&o));
}

#[test]
fn adult_fixture_converts_raw_files() {
    let w = Work::new();
    let raw = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/adult/adult.data");
    let o = kgsynth(&[
        "fixture", "--name", "adult", "--data", raw, "--rows", "500", "--seed", "1", "--out", &w.s("adult.csv"),
        "--schema", &w.s("adult.toml"), "--rules", &w.s("adult_rules.toml"),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = read(&w.p("adult.csv"));
    assert_eq!(csv.lines().count(), 501);
    assert!(csv.starts_with("age,workclass,education,"));
    assert!(read(&w.p("adult_rules.toml")).contains("husband_male"));
}
