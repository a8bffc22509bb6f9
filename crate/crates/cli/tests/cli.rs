use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatial_heckit::dataset::{write_csv, ClusteredDataset};
use spatial_heckit::montecarlo::{generate_sample, SimCell};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spatial-heckit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 19 locations, 403 observations, with coordinates and a within-location
/// chain adjacency.
fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let cell = SimCell {
        locations: 19,
        sublocations: 3,
        size: 8,
        ..SimCell::default()
    };
    // 4 locations keep 22 observations, the other 15 keep 21
    let mut obs: Vec<_> = generate_sample(&cell, 403)
        .observations()
        .chunks(24)
        .enumerate()
        .flat_map(|(j, loc)| loc[..if j < 4 { 22 } else { 21 }].to_vec())
        .collect();
    let mut edges = String::from("from,to\n");
    for (i, o) in obs.iter_mut().enumerate() {
        o.coords = Some(((i % 7) as f64, (i / 7) as f64 * 0.5));
    }
    for w in obs.windows(2) {
        if w[0].location_id == w[1].location_id {
            edges.push_str(&format!("{},{}\n", w[0].obs_id, w[1].obs_id));
        }
    }
    let ds = ClusteredDataset::new(obs).unwrap();
    assert_eq!(ds.len(), 403);
    assert_eq!(ds.locations().len(), 19);
    let data = dir.join("data.csv");
    write_csv(&ds, &data).unwrap();
    let adj = dir.join("adjacency.csv");
    std::fs::write(&adj, edges).unwrap();
    (data, adj)
}

fn coef_lines(report: &str) -> usize {
    report.lines().filter(|l| l.starts_with("coef.")).count()
}

#[test]
fn fit_reports_p_plus_one_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let o = run(&["fit", "--input", data.to_str().unwrap(), "--op", "fixed-effect", "--rule", "sublocation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = String::from_utf8(o.stdout).unwrap();
    assert_eq!(coef_lines(&report), 2, "{report}");
    assert!(report.contains("coef.x1 = "));
    assert!(report.contains("coef.lambda = "));
    assert!(report.contains("operator = fixed-effect"));
}

#[test]
fn every_operator_and_rule_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, adj) = fixture(dir.path());
    let data = data.to_str().unwrap();
    let adj = adj.to_str().unwrap();
    for extra in [
        vec!["--op", "pairwise", "--rule", "edges", "--adjacency", adj],
        vec!["--op", "fixed-effect", "--rule", "distance", "--d", "1.5"],
        vec!["--op", "fixed-effect", "--rule", "location", "--include-self"],
        vec!["--op", "kernel", "--rule", "location", "--bandwidth", "2", "--kernel", "gaussian"],
        vec!["--op", "fixed-effect", "--probit-dummies", "--variance", "residual-augmented"],
    ] {
        let mut args = vec!["fit", "--input", data];
        args.extend(&extra);
        let o = run(&args);
        assert!(o.status.success(), "{extra:?}: {}", stderr(&o));
        assert_eq!(coef_lines(&String::from_utf8_lossy(&o.stdout)), 2);
    }
}

#[test]
fn zero_distance_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let o = run(&["fit", "--input", data.to_str().unwrap(), "--op", "pairwise", "--rule", "distance", "--d", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--d"), "{}", stderr(&o));
}

#[test]
fn missing_input_and_bad_columns_exit_2() {
    let o = run(&["fit", "--input", "/nonexistent/data.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--input"));

    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let o = run(&["fit", "--input", data.to_str().unwrap(), "--outcome-col", "wage"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("wage"));

    let o = run(&["fit", "--input", data.to_str().unwrap(), "--op", "kernel"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--bandwidth"));
}

#[test]
fn estimation_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sep.csv");
    std::fs::write(
        &path,
        "obs_id,location,sublocation,selected,y2,x1,z1\n\
         a,1,s,1,1,0.3,1\nb,1,s,1,2,0.1,2\nc,1,s,0,,0.5,-1\nd,2,s,1,3,0.2,3\ne,2,s,0,,0.9,-2\nf,2,s,1,1,0.4,1.5\n",
    )
    .unwrap();
    let o = run(&["fit", "--input", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bootstrap_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, adj) = fixture(dir.path());
    let out = |name: &str| dir.path().join(name);
    for name in ["a", "b"] {
        let o = run(&[
            "fit",
            "--input",
            data.to_str().unwrap(),
            "--rule",
            "edges",
            "--adjacency",
            adj.to_str().unwrap(),
            "--boot",
            "999",
            "--seed",
            "42",
            "--boot-null",
            "1",
            "--ci",
            "0.95",
            "--out",
            out(name).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["report.txt", "coefficients.csv"] {
        let a = std::fs::read(out("a").join(file)).unwrap();
        let b = std::fs::read(out("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let report = std::fs::read_to_string(out("a").join("report.txt")).unwrap();
    assert!(report.contains("p_boot.x1 = "));
    assert!(report.contains("ci_low.x1 = "));
    let csv = std::fs::read_to_string(out("a").join("coefficients.csv")).unwrap();
    assert!(csv.starts_with("name,estimate,se,t,p_boot,ci_low,ci_high,B,seed\n"));
}

#[test]
fn small_boot_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let o = run(&["fit", "--input", data.to_str().unwrap(), "--boot", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--boot"));
}

#[test]
fn dump_operator_writes_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path());
    let out = dir.path().join("op.csv");
    let o = run(&["dump-operator", "--input", data.to_str().unwrap(), "--op", "pairwise", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out).unwrap();
    assert!(text.starts_with("row,col,weight\n"));
    let lines = text.lines().skip(1);
    assert!(lines.clone().count() > 0);
    // pairwise rows carry +1 and -1
    assert!(lines.map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).all(|w| w.abs() == 1.0));
}

#[test]
fn simulate_small_grid_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.cfg");
    std::fs::write(&cfg, "J_list = 4, 6\ns_list = 2\nn_list = 3\nreps = 100\nseed = 9\n").unwrap();
    for (name, threads) in [("a", "1"), ("b", "2")] {
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.path().join(name).to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("[2/2]"));
        assert!(String::from_utf8_lossy(&o.stdout).contains("Simulation results with 6 locations"));
    }
    for file in ["table_J4.csv", "table_J6.csv", "report.txt"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn simulate_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--J-list",
        "3",
        "--s-list",
        "2",
        "--n-list",
        "2",
        "--reps",
        "100",
        "--variance",
        "residual-augmented",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("table_J3.csv").exists());

    let o = run(&["simulate", "--reps", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("reps"));
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.cfg");
    std::fs::write(&cfg, "J_list = 20\nsigma = 2\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sigma"), "{}", stderr(&o));
}

#[test]
fn help_lists_every_flag() {
    let o = run(&["fit", "--help"]);
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--input", "--adjacency", "--op", "--rule", "--d", "--bandwidth", "--kernel", "--probit-dummies", "--boot",
        "--seed", "--out", "--threads",
    ] {
        assert!(help.contains(flag), "fit --help lacks {flag}");
    }
    let o = run(&["simulate", "--help"]);
    let help = String::from_utf8_lossy(&o.stdout);
    for flag in [
        "--config", "--J-list", "--s-list", "--n-list", "--rho", "--delta", "--beta", "--reps", "--seed",
        "--probit-dummies", "--variance",
    ] {
        assert!(help.contains(flag), "simulate --help lacks {flag}");
    }
}
