use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etcsim::design::Report;
use etcsim::io::{self, Table};

const BIN: &str = env!("CARGO_BIN_EXE_etcsim");

fn unstable_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/unstable_plant")
}

fn short_scenario(dir: &Path, t_end: f64) -> PathBuf {
    let text = fs::read_to_string(unstable_dir().join("scenario.toml")).unwrap();
    let path = dir.join("short.toml");
    fs::write(&path, text.replace("t_end = 10000.0", &format!("t_end = {t_end}"))).unwrap();
    path
}

fn etcsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ETCSIM_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn design_report_contains_published_values_and_round_trips() {
    let o = etcsim(&["design", "--scenario", unstable_dir().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let report = Report::parse(&text).unwrap();
    assert!((report.num("alpha").unwrap() - 0.09).abs() <= 0.005);
    assert!((report.num("chi_o").unwrap() - 37.54).abs() <= 0.2);
    assert_eq!(report.num("output.bits"), Some(7.0));
    assert_eq!(report.to_text(), text);
    for line in text.lines() {
        assert!(line.contains(" = "), "{line}");
    }
}

#[test]
fn unobservable_pair_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(unstable_dir().join("scenario.toml")).unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, text.replace("C = [[1.0, 0.0]]", "C = [[0.0, 1.0]]")).unwrap();
    let o = etcsim(&["design", "--scenario", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("observability"));
}

#[test]
fn dimension_mismatch_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(unstable_dir().join("scenario.toml")).unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, text.replace("L = [[4.0], [3.0]]", "L = [[4.0], [3.0], [1.0]]")).unwrap();
    let o = etcsim(&["run", "--scenario", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gains.L"));
}

#[test]
fn run_writes_schema_and_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 40.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = etcsim(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [io::TRAJECTORY_CSV, io::TRANSMISSIONS_CSV, io::SUMMARY_TXT, io::REPORT_TXT] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let traj = Table::read_csv(&a.join(io::TRAJECTORY_CSV)).unwrap();
    assert_eq!(
        traj.header[..10],
        ["t", "x1", "x2", "z1", "z2", "u1", "nu", "mu", "V_o", "V_c"].map(String::from)
    );
    let tx = Table::read_csv(&a.join(io::TRANSMISSIONS_CSV)).unwrap();
    assert_eq!(tx.header, ["channel", "index", "time", "trigger", "s1", "zoom", "v1", "sampled1", "wire_hex"]);
    let time = tx.column("time").unwrap();
    let s1 = tx.column("s1").unwrap();
    let wire = tx.column("wire_hex").unwrap();
    for row in &tx.rows {
        let bytes = hex::decode(&row[wire]).unwrap();
        let (t, sym) = etcsim::quantizer::Symbol::from_wire(&bytes, 1).unwrap();
        assert_eq!(t.to_bits(), row[time].parse::<f64>().unwrap().to_bits());
        assert_eq!(sym.indices[0], row[s1].parse::<i64>().unwrap());
    }
    let summary = Report::parse(&fs::read_to_string(a.join(io::SUMMARY_TXT)).unwrap()).unwrap();
    assert_eq!(summary.flag("output.dwell_respected"), Some(true));
    assert_eq!(summary.flag("input.dwell_respected"), Some(true));
    assert_eq!(summary.num("t_end"), Some(40.0));
}

#[test]
fn env_var_sets_output_directory_and_step_flag_applies() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 5.0);
    let out = dir.path().join("from_env");
    let o = Command::new(BIN)
        .args(["run", "--scenario", scenario.to_str().unwrap(), "--step", "0.0025"])
        .env("ETCSIM_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join(io::TRAJECTORY_CSV).exists());
}

#[test]
fn strict_run_aborts_on_invariant_warning() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(unstable_dir().join("scenario.toml")).unwrap()
        .replace("time_regularization = true", "time_regularization = false")
        .replace("t_end = 10000.0", "t_end = 60.0");
    let path = dir.path().join("literal.toml");
    fs::write(&path, text).unwrap();
    let out = dir.path().join("o");
    let o = etcsim(&["run", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "--strict"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant violated"));
    let o = etcsim(&["run", "--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(!fs::read_to_string(out.join(io::WARNINGS_TXT)).unwrap().is_empty());
}

#[test]
fn plot_data_parse_back_to_plotted_csv_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 30.0);
    let out = dir.path().join("run");
    assert!(etcsim(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let o = etcsim(&["plot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let traj = Table::read_csv(&out.join(io::TRAJECTORY_CSV)).unwrap();
    let tx = Table::read_csv(&out.join(io::TRANSMISSIONS_CSV)).unwrap();
    let col = |t: &Table, n: &str| t.column(n).unwrap();
    let ch = col(&tx, "channel");
    let expect = [
        (io::PLOT_YTILDE, traj.select(&[col(&traj, "t"), col(&traj, "ytilde1")], |_| true).unwrap()),
        (io::PLOT_UNOM, traj.select(&[col(&traj, "t"), col(&traj, "unom1")], |_| true).unwrap()),
        (io::PLOT_YSAMPLES, tx.select(&[col(&tx, "time"), col(&tx, "v1")], |r| r[ch] == "output").unwrap()),
        (io::PLOT_USTAIRS, tx.select(&[col(&tx, "time"), col(&tx, "v1")], |r| r[ch] == "input").unwrap()),
    ];
    for (file, rows) in expect {
        let (_, parsed) = io::read_dat(&out.join(file)).unwrap();
        assert!(!rows.is_empty(), "{file}");
        let bits = |v: &Vec<Vec<f64>>| v.iter().map(|r| r.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        assert_eq!(bits(&parsed), bits(&rows), "{file}");
    }
    let script = fs::read_to_string(out.join(io::PLOT_SCRIPT)).unwrap();
    assert!(script.contains("multiplot layout 2,1"));
    assert!(script.contains(io::PLOT_YSAMPLES) && script.contains("with steps"));
}

#[test]
fn plot_without_transmissions_draws_continuous_curves_only() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = short_scenario(dir.path(), 3.0);
    let out = dir.path().join("run");
    assert!(etcsim(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let tx_path = out.join(io::TRANSMISSIONS_CSV);
    let header = fs::read_to_string(&tx_path).unwrap().lines().next().unwrap().to_string();
    fs::write(&tx_path, header + "\n").unwrap();
    let o = etcsim(&["plot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let script = fs::read_to_string(out.join(io::PLOT_SCRIPT)).unwrap();
    assert!(!script.contains(io::PLOT_YSAMPLES) && !script.contains(io::PLOT_USTAIRS));
    assert!(script.contains(io::PLOT_YTILDE) && script.contains(io::PLOT_UNOM));
    assert!(io::read_dat(&out.join(io::PLOT_YSAMPLES)).unwrap().1.is_empty());
}

#[test]
fn plot_reports_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = etcsim(&["plot", "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing run artifact"));
}
