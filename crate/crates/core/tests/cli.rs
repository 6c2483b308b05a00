use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_breakline");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let path = dir.join("data.csv");
    let mut args = vec!["synth", "--n", "80", "--sigma", "0.3", "--seed", "5", "--out", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    assert!(run(&args).status.success());
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_then_plrm_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let out = tmp.path().join("out");
    let o = run(&["plrm", "--input", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["plrm_fit.json", "plrm_params.csv", "plrm_band_g80.csv", "plrm_band_g95.csv", "plrm.svg", "plrm_geometry.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let fit = json(&out.join("plrm_fit.json"));
    let alpha = &fit["fit"]["model"]["alpha"];
    assert!((alpha[0].as_f64().unwrap() - 0.3).abs() < 0.1);
    assert!((alpha[1].as_f64().unwrap() - 0.6).abs() < 0.1);

    let params = std::fs::read_to_string(out.join("plrm_params.csv")).unwrap();
    assert!(params.starts_with("parameter,estimate,se,t,p,ci_lower,ci_upper,significant"));
    let band = std::fs::read_to_string(out.join("plrm_band_g80.csv")).unwrap();
    assert!(band.starts_with("# {\"gamma\":0.8"));
    assert_eq!(band.lines().count(), 2 + 80);

    let geometry = std::fs::read_to_string(out.join("plrm_geometry.csv")).unwrap();
    assert!(geometry.contains("x_interval,alpha1 95% CI"));
}

#[test]
fn three_taus_give_three_rows_and_one_band() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &["--wedge", "0.2,1.5"]);
    let out = tmp.path().join("q");
    let o = run(&[
        "pqrm",
        "--input",
        data.to_str().unwrap(),
        "--tau-grid",
        "0.1,0.5,0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("pqrm_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().take_while(|l| !l.is_empty()).skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(table.contains("coverage,80%,80%"));
    let bands: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("pqrm_band"))
        .collect();
    assert_eq!(bands.len(), 1);
    let fit = json(&out.join("pqrm_fit.json"));
    assert_eq!(fit["fits"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_column_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let out = tmp.path().join("bad");
    let o = run(&["plrm", "--input", data.to_str().unwrap(), "--y", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = json(&out.join("error.json"));
    assert_eq!(err["kind"], "missing_column");
    assert!(!out.join("plrm_fit.json").exists());
}

#[test]
fn bad_flags_exit_with_input_code() {
    assert_eq!(run(&["pqrm", "--input", "x.csv", "--tau-grid", "0.5,0.3"]).status.code(), Some(2));
    assert_eq!(run(&["plrm"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn too_few_replicates_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let out = tmp.path().join("lb");
    let o = run(&["loess-band", "--input", data.to_str().unwrap(), "--bootstrap", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out.join("error.json"))["kind"], "too_few_replicates");
}

#[test]
fn fit_failure_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("tiny.csv");
    std::fs::write(&data, "x,y\n0,1\n1,2\n2,3\n3,5\n4,4\n").unwrap();
    let out = tmp.path().join("o");
    let o = run(&["plrm", "--input", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = json(&out.join("error.json"));
    assert_eq!(err["exit_code"], 3);
}

#[test]
fn failed_tau_rows_give_partial_result() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    assert!(run(&["synth", "--n", "20", "--seed", "2", "--out", data.to_str().unwrap()]).status.success());
    let out = tmp.path().join("p");
    let o = run(&[
        "pqrm",
        "--input",
        data.to_str().unwrap(),
        "--tau-grid",
        "0.02,0.5,0.9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let err = json(&out.join("error.json"));
    assert_eq!(err["kind"], "partial");
    let table = std::fs::read_to_string(out.join("pqrm_table.csv")).unwrap();
    assert!(table.contains("partial,true,true"));
    assert!(table.lines().nth(1).unwrap().starts_with("0.02,,,"));
    assert!(out.join("pqrm_band_g80.csv").exists());
}

#[test]
fn reads_standard_input_and_honours_format() {
    let tmp = tempfile::tempdir().unwrap();
    let data = std::fs::read(synth(tmp.path(), &[])).unwrap();
    let out = tmp.path().join("s");
    let mut child = Command::new(BIN)
        .args(["plrm", "--input", "-", "--format", "json", "--out", out.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&data).unwrap();
    assert!(child.wait().unwrap().success());
    let names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["plrm_fit.json"]);
}

#[test]
fn synth_writes_csv_to_stdout() {
    let o = run(&["synth", "--n", "5", "--design", "equispaced", "--sigma", "0"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y");
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[1], "0,10");
    assert_eq!(lines[5], "1,8.5");
}

#[test]
fn transforms_apply_before_fitting() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("raw.csv");
    let mut csv = String::from("tp,chl\n");
    for i in 0..40 {
        let x = 10f64.powf(0.5 + i as f64 / 39.0 * 1.5);
        csv.push_str(&format!("{x},{}\n", 1.0 + (i % 7) as f64));
    }
    std::fs::write(&data, csv).unwrap();
    let out = tmp.path().join("t");
    let o = run(&[
        "loess-band",
        "--input",
        data.to_str().unwrap(),
        "--x",
        "tp",
        "--y",
        "chl",
        "--x-transform",
        "log10",
        "--bootstrap",
        "50",
        "--gamma",
        "0.8",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let band = std::fs::read_to_string(out.join("loess_band_g80.csv")).unwrap();
    let first_x: f64 = band.lines().nth(2).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((first_x - 0.5).abs() < 1e-12);
    assert!(!out.join("loess_band_g95.csv").exists());
}
