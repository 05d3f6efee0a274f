//! End-to-end checks of the `csw` binary: exit codes, output formats,
//! and cross-format value identity.

use std::path::Path;
use std::process::Command;

use convsw::dataio::write_tensor_file;
use convsw::rng::{sample_unit_tensor, RandomSource};
use convsw::tensor::{EmpiricalMeasure, Tensor3};

fn csw() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csw"))
}

fn write_idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    use std::io::Write;
    let images_path = dir.join("images.idx");
    let labels_path = dir.join("labels.idx");
    let src = RandomSource::new(55);
    let mut rng = src.substream(0);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0u8..3 {
        for _ in 0..12 {
            let t = sample_unit_tensor(1, 4, &mut rng).unwrap();
            // shift per class so classes separate
            let img: Vec<u8> = t
                .data()
                .iter()
                .map(|v| ((v.abs() * 100.0) as u8).saturating_add(class * 60))
                .collect();
            images.push(img);
            labels.push(class);
        }
    }
    let mut f = std::fs::File::create(&images_path).unwrap();
    f.write_all(&0x0000_0803u32.to_be_bytes()).unwrap();
    f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
    f.write_all(&4u32.to_be_bytes()).unwrap();
    f.write_all(&4u32.to_be_bytes()).unwrap();
    for img in &images {
        f.write_all(img).unwrap();
    }
    let mut f = std::fs::File::create(&labels_path).unwrap();
    f.write_all(&0x0000_0801u32.to_be_bytes()).unwrap();
    f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
    f.write_all(&labels).unwrap();
    (images_path, labels_path)
}

#[test]
fn slicer_info_reports_params_and_exits_zero() {
    let out = csw()
        .args(["slicer-info", "--variant", "base", "-d", "28"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("params: 338"), "{text}");

    let json = csw()
        .args(["slicer-info", "--variant", "stride", "-d", "28", "--format", "json"])
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["param_count"], 57);
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.cswt");
    let out = csw()
        .args([
            "distance",
            "--a",
            path.to_str().unwrap(),
            "--b",
            path.to_str().unwrap(),
            "--method",
            "not-a-method",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_a_runtime_error_with_json_stderr() {
    let out = csw()
        .args([
            "distance",
            "--a",
            "/nonexistent/a.cswt",
            "--b",
            "/nonexistent/b.cswt",
            "--method",
            "sw",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().next().unwrap();
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["code"], 1);
    assert!(v["message"].as_str().unwrap().contains("a.cswt"));
}

#[test]
fn distance_on_same_file_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cswt");
    let src = RandomSource::new(8);
    let mut rng = src.substream(0);
    let supports: Vec<Tensor3> =
        (0..6).map(|_| sample_unit_tensor(1, 4, &mut rng).unwrap()).collect();
    write_tensor_file(&path, &EmpiricalMeasure::new(supports).unwrap()).unwrap();
    for method in ["sw", "csw-s", "exact"] {
        let out = csw()
            .args([
                "distance",
                "--a",
                path.to_str().unwrap(),
                "--b",
                path.to_str().unwrap(),
                "--method",
                method,
                "--L",
                "5",
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{method}");
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["value"], 0.0, "{method}");
    }
}

#[test]
fn compare_csv_and_json_carry_identical_values() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx_fixture(dir.path());
    let run = |format: &str| {
        let out = csw()
            .args([
                "compare",
                "--images",
                images.to_str().unwrap(),
                "--labels",
                labels.to_str().unwrap(),
                "--method",
                "csw-s",
                "--L",
                "10",
                "--format",
                format,
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let csv = run("csv");
    let json = run("json");
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    let matrix = report["matrix"].as_array().unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "class,0,1,2");
    for (row_json, line) in matrix.iter().zip(lines) {
        let cells: Vec<&str> = line.split(',').collect();
        for (v_json, cell) in row_json.as_array().unwrap().iter().zip(&cells[1..]) {
            assert_eq!(v_json.as_f64().unwrap(), cell.parse::<f64>().unwrap());
        }
    }
}

#[test]
fn compare_is_deterministic_across_thread_env() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx_fixture(dir.path());
    let run = |threads: &str| {
        let out = csw()
            .env("CSW_THREADS", threads)
            .args([
                "compare",
                "--images",
                images.to_str().unwrap(),
                "--labels",
                labels.to_str().unwrap(),
                "--method",
                "csw-d",
                "--L",
                "16",
                "--format",
                "csv",
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn bench_runs_and_reports_param_counts() {
    let out = csw()
        .args([
            "bench", "-d", "8", "-n", "8", "--L", "4", "--methods", "sw,csw-s", "--format", "json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["method"], "sw");
    assert_eq!(rows[0]["param_count"], 64);
    assert!(rows[1]["param_count"].as_u64().unwrap() < 64);
}
