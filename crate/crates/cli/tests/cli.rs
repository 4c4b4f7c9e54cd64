use std::path::Path;
use std::process::{Command, Output};

fn cate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cate"))
        .args(args)
        .env_remove("CATE_WORKERS")
        .output()
        .expect("binary runs")
}

const SMALL: [&str; 14] = [
    "--learners",
    "S,DR",
    "--n-train",
    "200",
    "--replications",
    "3",
    "--n-validation",
    "50",
    "--trees",
    "20",
    "--seed",
    "7",
    // Twenty-tree propensity forests hit exact zeros and ones.
    "--propensity-clip",
    "0.01",
];

fn simulate(extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--design", "6"];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    cate(&args)
}

#[test]
fn simulate_writes_csv_with_expected_header_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let res = simulate(&["--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "design,learner,procedure,n_train,replications,rmse_mean,abs_bias_mean,bias_mean,sd_mean,skew_mean,\
         kurt_mean,jb_mean,jb_reject_share,corr,varr,se_rmse,runtime_s,warnings"
    );
    // S collapses to one full-sample cell; DR keeps all three procedures.
    assert_eq!(lines.count(), 4);
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let a = simulate(&["--format", "json"]);
    let b = simulate(&["--format", "json", "--workers", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).trim_start().starts_with('['));
}

#[test]
fn panels_round_trip_through_metrics_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.csv");
    let panels = dir.path().join("p.json");
    let res = simulate(&["--out", results.to_str().unwrap(), "--save-panels", panels.to_str().unwrap()]);
    assert!(res.status.success());
    let again = dir.path().join("again.csv");
    let res = cate(&["metrics", "--panels", panels.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // Panels carry no warning counters, so compare everything before them.
    let summaries = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.split(',').take(16).collect::<Vec<_>>().join(","))
            .collect()
    };
    assert_eq!(summaries(&results), summaries(&again));
}

#[test]
fn plot_data_is_long_format() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("r.json");
    assert!(simulate(&["--out", results.to_str().unwrap()]).status.success());
    let plot = dir.path().join("plot.csv");
    let res = cate(&["emit-plotdata", "--results", results.to_str().unwrap(), "--out", plot.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(plot).unwrap();
    assert!(text.starts_with("design,learner,procedure,cell,n_train,metric,value\n"));
    assert!(text.lines().any(|l| l.starts_with("6,DR,crossfit,DR-C,200,rmse_mean,")));
}

#[test]
fn invalid_arguments_fail_with_a_message() {
    let res = cate(&["simulate", "--design", "9"]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("design"));

    let res = simulate(&["--learners", "Q"]);
    assert!(!res.status.success());

    let res = cate(&["simulate", "--n-train", "100,200", "--replications", "2,3,4"]);
    assert!(!res.status.success());
}

#[test]
fn strict_mode_fails_on_aborted_cells() {
    // A training set this small cannot be split into three folds that
    // each hold a forest's minimum leaf in both arms.
    let args = [
        "--learners", "X", "--procedures", "crossfit", "--n-train", "12", "--replications", "2", "--n-validation",
        "20", "--trees", "5",
    ];
    let mut lenient = vec!["simulate"];
    lenient.extend_from_slice(&args);
    let res = cate(&lenient);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("error="));

    let mut strict = lenient.clone();
    strict.push("--strict");
    let res = cate(&strict);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("aborted"));
}

#[test]
fn semisynth_runs_on_a_small_file() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/acic_rows.csv");
    let dir = tempfile::tempdir().unwrap();
    // Replicate the fixture so there is room for a training pool and a holdout.
    let text = std::fs::read_to_string(&fixture).unwrap();
    let mut lines = text.lines();
    let mut big = format!("{}\n", lines.next().unwrap());
    let body: Vec<&str> = lines.collect();
    for _ in 0..30 {
        for l in &body {
            big.push_str(l);
            big.push('\n');
        }
    }
    let data = dir.path().join("data.csv");
    std::fs::write(&data, big).unwrap();
    let res = cate(&[
        "semisynth",
        "--data",
        data.to_str().unwrap(),
        "--augment-p",
        "5",
        "--learners",
        "T",
        "--n-train",
        "200",
        "--replications",
        "2",
        "--n-validation",
        "100",
        "--trees",
        "10",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let out = String::from_utf8_lossy(&res.stdout);
    assert!(out.lines().nth(1).unwrap().starts_with("semisynthetic,T,full,200,2,"));
}
