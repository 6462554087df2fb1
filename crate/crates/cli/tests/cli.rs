use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use disk_cli::commands::{self, ASSIGNMENT_FILE, CHAINS_DIR, EVAL_FILE, POSTERIOR_FILE, TRAIN_FILE};
use disk_cli::{RunConfig, EXIT_INPUT};
use disk_core::combine::{empirical_quantiles, QuantileGrid};
use disk_core::formats::{parse_kv, read_chain, read_dataset, read_disk_posterior};
use disk_core::sampler::run_subset_chain;
use disk_core::DiskError;

fn config(pairs: &[(&str, &str)]) -> RunConfig {
    let kv: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::from_kv(&kv).unwrap()
}

fn small(k: &str, rank: &str) -> RunConfig {
    config(&[
        ("n_train", "80"),
        ("n_test", "6"),
        ("k", k),
        ("rank", rank),
        ("n_iter", "120"),
        ("burn_in", "60"),
        ("thin", "1"),
        ("xi", "0.01"),
        ("seed", "17"),
    ])
}

fn disk() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_disk"));
    c.env_remove("DISK_THREADS").env("RUST_LOG", "error");
    c
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// File contents with the timing line of chain metadata dropped.
fn stable_bytes(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with("wall_time_s"))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn assert_same_tree(a: &Path, b: &Path) {
    let fa = files_under(a);
    assert_eq!(fa, files_under(b));
    for f in &fa {
        assert_eq!(stable_bytes(&a.join(f)), stable_bytes(&b.join(f)), "{} differs", f.display());
    }
}

#[test]
fn generate_creates_directory_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.txt");
    fs::write(&cfg_path, "n_train = 100\nn_test = 10\n").unwrap();
    let run = |out: &Path| {
        let st = disk()
            .args(["generate", "--seed", "3", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        String::from_utf8(st.stdout).unwrap()
    };
    let a = tmp.path().join("not/yet/there");
    let b = tmp.path().join("b");
    let summary = parse_kv(&run(&a), "stdout").unwrap();
    assert_eq!(summary["n_train"], "100");
    run(&b);

    let train = fs::read_to_string(a.join(TRAIN_FILE)).unwrap();
    assert_eq!(train.lines().next(), Some("s1,s2,x1,y"));
    assert_eq!(train.lines().count(), 101);
    assert_same_tree(&a, &b);
}

#[test]
fn single_subset_fit_equals_direct_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("1", "12");
    commands::generate(&cfg, tmp.path()).unwrap();
    let (assignment, chains) = commands::fit_chains(&cfg, tmp.path()).unwrap();
    assert_eq!(assignment.exponents, vec![1.0]);

    let train = read_dataset(&tmp.path().join(TRAIN_FILE)).unwrap();
    let test = read_dataset(&tmp.path().join("test.csv")).unwrap();
    let model = commands::model_config(&cfg, &train).unwrap();
    let direct =
        run_subset_chain(&train, test.locations(), test.x(), &model, &commands::chain_mcmc(&cfg, 0), 1.0).unwrap();
    let got = &chains[0];
    assert_eq!(got.iterations, direct.iterations);
    assert_eq!(got.beta_draws, direct.beta_draws);
    assert_eq!(got.alpha_draws, direct.alpha_draws);
    assert_eq!(got.wstar_draws, direct.wstar_draws);
    assert_eq!(got.ystar_draws, direct.ystar_draws);
}

#[test]
fn worker_count_does_not_change_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut cfg = small("4", "8");
    for (dir, workers) in [(&a, 1), (&b, 4)] {
        cfg.workers = workers;
        commands::generate(&cfg, dir).unwrap();
        commands::fit(&cfg, dir).unwrap();
    }
    assert_same_tree(&a, &b);
}

#[test]
fn rank_not_below_subset_size_fails_before_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("4", "20");
    commands::generate(&cfg, tmp.path()).unwrap();
    let err = commands::fit(&cfg, tmp.path()).unwrap_err();
    assert!(matches!(err, DiskError::Input(_)), "{err}");
    assert!(!tmp.path().join(CHAINS_DIR).exists());
}

#[test]
fn assignment_with_other_k_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("2", "8");
    commands::generate(&cfg, tmp.path()).unwrap();
    commands::partition(&cfg, tmp.path()).unwrap();
    let err = commands::fit(&small("4", "8"), tmp.path()).unwrap_err();
    assert!(err.to_string().contains(ASSIGNMENT_FILE), "{err}");
}

#[test]
fn refit_with_smaller_k_drops_old_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("3", "8");
    commands::generate(&cfg, tmp.path()).unwrap();
    commands::fit(&cfg, tmp.path()).unwrap();
    fs::remove_file(tmp.path().join(ASSIGNMENT_FILE)).unwrap();
    commands::fit(&small("2", "8"), tmp.path()).unwrap();
    let chains = tmp.path().join(CHAINS_DIR);
    assert!(chains.join("subset_001").exists());
    assert!(!chains.join("subset_002").exists());
}

#[test]
fn combining_one_subset_returns_its_quantiles() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("1", "12");
    commands::generate(&cfg, tmp.path()).unwrap();
    commands::fit(&cfg, tmp.path()).unwrap();
    commands::combine(&cfg, tmp.path()).unwrap();
    let chain = read_chain(&tmp.path().join(CHAINS_DIR).join("subset_000")).unwrap();
    let post = read_disk_posterior(&tmp.path().join(POSTERIOR_FILE)).unwrap();
    let grid = QuantileGrid::new(cfg.xi).unwrap();
    let cols = [
        ("beta_1", chain.beta_draws.column(0)),
        ("phi", chain.alpha_draws.column(2)),
        ("wstar_3", chain.wstar_draws.column(2)),
        ("ystar_6", chain.ystar_draws.column(5)),
    ];
    for (label, col) in cols {
        let want = empirical_quantiles(col.as_slice(), grid).unwrap();
        assert_eq!(post.get(label).unwrap().values(), want.values(), "{label}");
    }
}

fn copy_tree(from: &Path, to: &Path) {
    for f in files_under(from) {
        let dst = to.join(&f);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::copy(from.join(&f), dst).unwrap();
    }
}

#[test]
fn evaluate_matches_golden_report() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/eval");
    let tmp = tempfile::tempdir().unwrap();
    copy_tree(&fixture, tmp.path());
    let cfg = RunConfig::load(&tmp.path().join("config.txt")).unwrap();
    commands::combine(&cfg, tmp.path()).unwrap();
    commands::evaluate(&cfg, tmp.path()).unwrap();

    let golden = parse_kv(&fs::read_to_string(fixture.join("golden.txt")).unwrap(), "golden").unwrap();
    let got = parse_kv(&fs::read_to_string(tmp.path().join(EVAL_FILE)).unwrap(), "report").unwrap();
    assert_eq!(golden.keys().collect::<Vec<_>>(), got.keys().collect::<Vec<_>>());
    for (key, want) in &golden {
        let (w, g): (f64, f64) = (want.parse().unwrap(), got[key].parse().unwrap());
        assert!((w - g).abs() <= 1e-10, "{key}: {g} vs golden {w}");
    }
}

#[test]
fn subcommands_are_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("2", "8");
    commands::pipeline(&cfg, tmp.path()).unwrap();
    let before = fs::read(tmp.path().join(POSTERIOR_FILE)).unwrap();
    let report = fs::read(tmp.path().join(EVAL_FILE)).unwrap();
    commands::combine(&cfg, tmp.path()).unwrap();
    commands::evaluate(&cfg, tmp.path()).unwrap();
    assert_eq!(before, fs::read(tmp.path().join(POSTERIOR_FILE)).unwrap());
    assert_eq!(report, fs::read(tmp.path().join(EVAL_FILE)).unwrap());
}

#[test]
fn default_risk_study_slope() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = commands::risk_study(&RunConfig::default(), tmp.path()).unwrap();
    let slope: f64 = summary.iter().find(|(k, _)| k == "slope").unwrap().1.parse().unwrap();
    assert!((-1.3..=-0.7).contains(&slope), "slope {slope}");
    assert!(tmp.path().join(commands::RISK_FILE).exists());
}

#[test]
fn missing_artifacts_name_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("2", "8");
    let err = commands::combine(&cfg, tmp.path()).unwrap_err();
    assert!(matches!(err, DiskError::Input(_)));
    assert!(err.to_string().contains("subset_000"), "{err}");
    let err = commands::evaluate(&cfg, tmp.path()).unwrap_err();
    assert!(err.to_string().contains(POSTERIOR_FILE), "{err}");
    let err = commands::fit(&cfg, tmp.path()).unwrap_err();
    assert!(err.to_string().contains(TRAIN_FILE), "{err}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.txt");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let code = |cmd: &mut Command| cmd.output().unwrap().status.code();

    assert_eq!(code(disk().args(["generate", "--config"]).arg(&bad).arg("--out").arg(tmp.path())), Some(EXIT_INPUT));
    assert_eq!(code(disk().args(["combine", "--out"]).arg(tmp.path().join("empty"))), Some(EXIT_INPUT));
    assert_eq!(
        code(disk().env("DISK_THREADS", "zero").args(["generate", "--out"]).arg(tmp.path().join("g"))),
        Some(EXIT_INPUT)
    );

    let out = disk().args(["evaluate", "--out"]).arg(tmp.path().join("nothing")).output().unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:") && stderr.contains(POSTERIOR_FILE), "{stderr}");
    assert!(out.stdout.is_empty());
}
