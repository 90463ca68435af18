use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_relsurv");

fn repo_data(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn relsurv(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate_small(dir: &Path, n: usize) -> PathBuf {
    let out = dir.join("sim");
    let o = relsurv(&["simulate", "--scenario", "sc1", "--n", &n.to_string(), "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn simulate_writes_cohort_table_and_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 250);
    let data = std::fs::read_to_string(sim.join("data.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next().unwrap(), "time,status,agec,sex,x1,x2,age,year,sex_group");
    assert_eq!(lines.count(), 250);
    assert!(sim.join("lifetable.csv").exists());
    let scenario = std::fs::read_to_string(sim.join("scenario.toml")).unwrap();
    assert!(scenario.contains("n = 250"));
    assert!(scenario.contains("seed = 5"));
}

#[test]
fn bundled_lung_cohort_is_regenerated_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let o = relsurv(&["simulate", "--scenario", "lung", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fresh = std::fs::read(dir.path().join("data.csv")).unwrap();
    assert!(fresh == std::fs::read(repo_data("lung/cohort.csv")).unwrap());
    let table = std::fs::read(dir.path().join("lifetable.csv")).unwrap();
    assert!(table == std::fs::read(repo_data("lung/lifetable.csv")).unwrap());
    assert!(table == std::fs::read(repo_data("lifetable_synthetic.csv")).unwrap());
}

#[test]
fn missing_covariate_is_a_schema_error_naming_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 100);
    let o = relsurv(&[
        "fit",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--lifetable",
        "synthetic",
        "--x",
        "agec,stage9",
        "--seed",
        "1",
        "--out",
        dir.path().join("fit").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("stage9"), "{}", stderr(&o));
}

#[test]
fn config_and_flag_for_the_same_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 1\nlifetable = \"synthetic\"\n").unwrap();
    let o = relsurv(&["fit", "--config", cfg.to_str().unwrap(), "--seed", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn fit_and_netsurv_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 400);
    let data = sim.join("data.csv");
    let run = |tag: &str| {
        let fit_dir = dir.path().join(format!("fit-{tag}"));
        let o = relsurv(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--lifetable",
            "synthetic",
            "--frailty",
            "gamma",
            "--x",
            "agec,sex",
            "--w",
            "agec",
            "--seed",
            "9",
            "--out",
            fit_dir.to_str().unwrap(),
        ]);
        assert!(matches!(o.status.code(), Some(0) | Some(5)), "{}", stderr(&o));
        let ns_dir = dir.path().join(format!("ns-{tag}"));
        let o = relsurv(&[
            "netsurv",
            "--data",
            data.to_str().unwrap(),
            "--lifetable",
            "synthetic",
            "--fit",
            fit_dir.to_str().unwrap(),
            "--by",
            "sex",
            "--grid",
            "0:3:7",
            "--draws",
            "200",
            "--seed",
            "4",
            "--out",
            ns_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run("a");
    run("b");
    for (sub, file) in [
        ("fit", "fit.json"),
        ("fit", "estimates.csv"),
        ("fit", "summary.txt"),
        ("ns", "curves.csv"),
        ("ns", "curve_sex_1.csv"),
    ] {
        let a = std::fs::read(dir.path().join(format!("{sub}-a")).join(file)).unwrap();
        let b = std::fs::read(dir.path().join(format!("{sub}-b")).join(file)).unwrap();
        assert!(a == b, "{sub}/{file} differs between runs");
    }
    let curves = std::fs::read_to_string(dir.path().join("ns-a/curves.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "time,estimate,lower,upper,label,model");
    assert_eq!(curves.lines().count(), 1 + 3 * 7);
}

#[test]
fn netsurv_rejects_a_fit_from_other_data() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 150);
    let fit_dir = dir.path().join("fit");
    let o = relsurv(&[
        "fit",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--lifetable",
        "synthetic",
        "--x",
        "agec",
        "--seed",
        "1",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = relsurv(&[
        "netsurv",
        "--data",
        repo_data("lung/cohort.csv").to_str().unwrap(),
        "--lifetable",
        "synthetic",
        "--fit",
        fit_dir.to_str().unwrap(),
        "--draws",
        "0",
        "--out",
        dir.path().join("ns").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn unconverged_fit_exits_with_its_own_code_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 200);
    let fit_dir = dir.path().join("fit");
    let o = relsurv(&[
        "fit",
        "--data",
        sim.join("data.csv").to_str().unwrap(),
        "--lifetable",
        "synthetic",
        "--frailty",
        "gamma",
        "--x",
        "agec,sex,x1,x2",
        "--max-iter",
        "1",
        "--restarts",
        "0",
        "--seed",
        "1",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(fit_dir.join("fit.json").exists());
}

#[test]
fn compare_ranks_by_aic() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path(), 300);
    let data = sim.join("data.csv");
    for (name, x) in [("small", "agec"), ("full", "agec,sex,x1,x2")] {
        let o = relsurv(&[
            "fit",
            "--data",
            data.to_str().unwrap(),
            "--lifetable",
            "synthetic",
            "--x",
            x,
            "--seed",
            "1",
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fits = format!("{},{}", dir.path().join("small").display(), dir.path().join("full").display());
    let out = dir.path().join("aic");
    let o = relsurv(&["compare", "--fits", &fits, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("aic.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][6], "0.0");
    let aic: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    assert!(aic[0] <= aic[1]);
}

#[test]
fn bench_writes_performance_and_replicate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = relsurv(&[
        "bench",
        "--scenario",
        "sc1",
        "--n",
        "300",
        "--replicates",
        "2",
        "--classical",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let perf = std::fs::read_to_string(out.join("performance.csv")).unwrap();
    // baseline (3), alpha (4), beta (4), variance
    assert_eq!(perf.lines().count(), 1 + 12);
    let reps = std::fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2);
}
