use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use khop_ppo::config::LoadedConfig;
use khop_ppo::sim::Scenario;

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn khop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_khop"))
        .args(args)
        .env_remove("KHOP_OUT_DIR")
        .output()
        .expect("khop runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn scenario(name: &str) -> String {
    scenarios().join(format!("{name}.toml")).display().to_string()
}

const SHORT: [&str; 4] = ["--set", "horizon=0.5", "--set", "record_interval=0.01"];

fn run_minimal(dir: &Path) -> Output {
    let out_dir = dir.display().to_string();
    let config = scenario("minimal");
    let mut args = vec!["run", "--config", &config, "--out", &out_dir];
    args.extend(SHORT);
    khop(&args)
}

#[test]
fn paper8_run_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = khop(&["run", "--config", &scenario("paper8"), "--out", &dir.path().display().to_string()]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(text(&out).contains("certified: true"));
    for file in ["trajectory.csv", "assertions.csv", "summary.txt"] {
        assert!(dir.path().join(file).is_file(), "{file}");
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "-c"];
    let config = scenario("minimal");
    args.push(&config);
    args.extend(SHORT);
    let out = Command::new(env!("CARGO_BIN_EXE_khop"))
        .args(&args)
        .env("KHOP_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(dir.path().join("trajectory.csv").is_file());
}

#[test]
fn zero_funnel_is_rejected_as_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = khop(&[
        "run",
        "--config",
        &scenario("paper8"),
        "--out",
        &dir.path().display().to_string(),
        "--set",
        "funnels.rho={rho0=0.0, rho_inf=0.0, decay=5.0}",
    ]);
    assert_eq!(code(&out), 3, "{}", text(&out));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn malformed_configs_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nk = [oops\n").unwrap();
    let out = khop(&["run", "--config", &bad.display().to_string()]);
    assert_eq!(code(&out), 2, "{}", text(&out));

    let out = khop(&["run", "--config", &scenario("minimal"), "--set", "no_such_key=1"]);
    assert_eq!(code(&out), 2, "{}", text(&out));

    let out = khop(&["run", "--config", &dir.path().join("missing.toml").display().to_string()]);
    assert_eq!(code(&out), 2, "{}", text(&out));
}

#[test]
fn verify_graph_reports_spectra() {
    let path5 = scenarios().join("graphs/path5.txt").display().to_string();
    let out = khop(&["verify-graph", &path5, "--k", "3", "--agent", "1"]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let expected = format!("{:.9}", (3.0 - 5f64.sqrt()) / 2.0);
    assert!(text(&out).contains(&expected), "{}", text(&out));

    let dir = tempfile::tempdir().unwrap();
    let cycle = dir.path().join("cycle.txt");
    std::fs::write(&cycle, "4\n1 2\n2 3\n3 4\n4 1\n").unwrap();
    let out = khop(&["verify-graph", &cycle.display().to_string(), "--k", "2"]);
    assert_eq!(code(&out), 0);
    let standard: Vec<String> = text(&out)
        .lines()
        .skip_while(|l| !l.starts_with("mode Standard"))
        .skip(2)
        .take(4)
        .map(str::to_string)
        .collect();
    for line in standard {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[1], "1", "{line}");
        assert_eq!(cols[2], "2.000000000", "{line}");
    }
}

#[test]
fn disconnected_graph_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("split.txt");
    std::fs::write(&g, "4\n1 2\n3 4\n").unwrap();
    let out = khop(&["verify-graph", &g.display().to_string()]);
    assert_ne!(code(&out), 0);
    assert!(text(&out).contains("not connected"));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn plot_data_recomputes_the_bounds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_minimal(dir.path())), 0);
    let traj = dir.path().join("trajectory.csv").display().to_string();
    let config = scenario("minimal");
    let mut args = vec!["plot-data", "--trajectory", &traj, "--config", &config, "--select", "agent1.state", "--svg"];
    args.extend(SHORT);
    let out = khop(&args);
    assert_eq!(code(&out), 0, "{}", text(&out));
    assert!(dir.path().join("agent1_state.svg").is_file());

    let (header, rows) = read_csv(&dir.path().join("agent1_state.csv"));
    assert_eq!(header, ["t", "max_abs_error", "delta", "max_abs_disagreement", "rho"]);
    assert_eq!(rows.len(), 51);
    let overrides: Vec<String> = SHORT.iter().skip(1).step_by(2).map(|s| s.to_string()).collect();
    let loaded = LoadedConfig::load(Path::new(&config), None, &overrides).unwrap();
    let sc = Scenario::build(loaded.to_spec().unwrap()).unwrap();
    let bank = sc.state_banks[0].as_ref().unwrap();
    for row in &rows {
        let t = row[0];
        let rho = bank.funnels.iter().map(|f| f.value(t)).fold(f64::INFINITY, f64::min);
        assert!((row[4] - rho).abs() <= 1e-12 * rho.max(1.0));
        assert!((row[2] - bank.target_bound.value(t)).abs() <= 1e-12);
        assert!(row[1] < row[2] && row[3] < row[4]);
    }
}

#[test]
fn plot_data_without_selection_writes_every_series() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_minimal(dir.path())), 0);
    let traj = dir.path().join("trajectory.csv").display().to_string();
    let plots = dir.path().join("plots");
    let plots_arg = plots.display().to_string();
    let config = scenario("minimal");
    let out = khop(&["plot-data", "--trajectory", &traj, "--config", &config, "--out", &plots_arg]);
    assert_eq!(code(&out), 0, "{}", text(&out));
    let mut files: Vec<String> = std::fs::read_dir(&plots)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    let mut expected: Vec<String> = (1..=5)
        .flat_map(|i| [format!("agent{i}_input.csv"), format!("agent{i}_state.csv")])
        .collect();
    expected.push("consensus.csv".into());
    expected.sort();
    assert_eq!(files, expected);
}

#[test]
fn plot_data_rejects_foreign_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("trajectory.csv");
    std::fs::write(&traj, "t,agent1.self.x.1\n0,1\n").unwrap();
    let out = khop(&[
        "plot-data",
        "--trajectory",
        &traj.display().to_string(),
        "--config",
        &scenario("minimal"),
        "--select",
        "agent1.state",
    ]);
    assert_eq!(code(&out), 2, "{}", text(&out));
    assert!(text(&out).contains("no column"));
}
