use std::fs;
use std::path::{Path, PathBuf};

use spt_uts::cli;
use spt_uts::dataset::{load_curves, read_truth};
use spt_uts::{fit_pipeline, rmse, GridSpec, ModelFile, PipelineSpec};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Out {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let mut all = vec!["spt-uts"];
    all.extend_from_slice(args);
    let code = cli::run(all, &mut stdout, &mut stderr);
    Out {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--materials", "2", "--per-material", "8", "-o", s(dir)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(out.code, 0, "{}", out.stderr);
    dir.join("manifest.csv")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_full_dataset_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["synth", "--seed", "7", "-o", s(d)]);
        assert_eq!(out.code, 0, "{}", out.stderr);
    }
    let files = dir_bytes(&a);
    assert_eq!(files.iter().filter(|(n, _)| n.starts_with("curve_")).count(), 120);
    assert!(files.iter().any(|(n, _)| n == "manifest.csv"));
    assert!(files.iter().any(|(n, _)| n == "truth.csv"));
    assert_eq!(files, dir_bytes(&b));
}

#[test]
fn synth_rejects_negative_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--noise-sigma", "-1", "-o", s(tmp.path())]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("--noise-sigma"), "{}", out.stderr);
}

#[test]
fn bad_flags_exit_two() {
    assert_eq!(run(&["cv", "--bogus"]).code, 2);
    assert_eq!(run(&[]).code, 2);
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let out = run(&["cv", "--manifest", s(&manifest), "--k", "1", "-o", s(&tmp.path().join("cv"))]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("--k"));
    let out = run(&["train", "--manifest", s(&manifest), "--markers", "per-curve", "-o", s(&tmp.path().join("m.json"))]);
    assert_eq!(out.code, 2, "{}", out.stderr);
}

#[test]
fn missing_manifest_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "--manifest", s(&tmp.path().join("nope.csv")), "-o", s(&tmp.path().join("m.json"))]);
    assert_eq!(out.code, 3, "{}", out.stderr);
}

#[test]
fn cv_report_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--noise-sigma", "5"]);
    let mut reports = Vec::new();
    for name in ["r1", "r2"] {
        let dir = tmp.path().join(name);
        let out = run(&["cv", "--manifest", s(&manifest), "--k", "4", "--trees", "20", "--seed", "3", "-o", s(&dir)]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        let lines: Vec<&str> = out.stdout.lines().collect();
        assert_eq!(lines[0], "pipeline,k,mean_rmse_MPa,std_rmse_MPa");
        assert_eq!(lines.len(), 4);
        for (line, name) in lines[1..].iter().zip(["empirical", "pca-lm", "rf"]) {
            assert!(line.starts_with(&format!("{name},4,")), "{line}");
        }
        reports.push(dir_bytes(&dir));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0].len(), 7);
}

#[test]
fn train_reports_pca_variance() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--noise-sigma", "2"]);
    let out = run(&["train", "--manifest", s(&manifest), "--pipeline", "pca-lm", "-o", s(&tmp.path().join("m.json"))]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let cum: f64 = out
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("cumulative_explained="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(cum >= 0.99);
}

#[test]
fn train_empirical_zero_noise_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let truth = tmp.path().join("truth.csv");
    let out = run(&[
        "train", "--manifest", s(&manifest), "--truth", s(&truth), "--markers", "per-curve",
        "-o", s(&tmp.path().join("m.json")),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let err: f64 = out
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("training_rmse_MPa="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn train_then_predict_matches_in_memory_model() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &["--noise-sigma", "3"]);
    let grid = GridSpec::default();
    let curves: Vec<_> = load_curves(&manifest, &grid, None).unwrap().into_iter().map(|r| r.1).collect();
    for pipeline in ["empirical", "pca-lm", "rf"] {
        let model = tmp.path().join(format!("{pipeline}.json"));
        let preds = tmp.path().join(format!("{pipeline}.csv"));
        let out = run(&["train", "--manifest", s(&manifest), "--pipeline", pipeline, "--trees", "25", "-o", s(&model)]);
        assert_eq!(out.code, 0, "{}", out.stderr);
        let out = run(&["predict", "--model", s(&model), "--manifest", s(&manifest), "-o", s(&preds)]);
        assert_eq!(out.code, 0, "{}", out.stderr);

        let file = ModelFile::from_json(&fs::read_to_string(&model).unwrap()).unwrap();
        let spec: PipelineSpec = file.pipeline.clone();
        let expected = fit_pipeline(&curves, &spec).unwrap().predict(&curves).unwrap();
        let text = fs::read_to_string(&preds).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("file,material_id,temperature_C,pred_rm_MPa"));
        let got: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.to_bits(), e.to_bits(), "{pipeline}");
        }

        // retraining gives the same bytes
        let again = tmp.path().join(format!("{pipeline}_again.json"));
        run(&["train", "--manifest", s(&manifest), "--pipeline", pipeline, "--trees", "25", "-o", s(&again)]);
        assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    }
}

#[test]
fn predict_compatibility_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let model = tmp.path().join("m.json");
    assert_eq!(run(&["train", "--manifest", s(&manifest), "--pipeline", "pca-lm", "-o", s(&model)]).code, 0);
    let preds = tmp.path().join("p.csv");

    let out = run(&["predict", "--model", s(&model), "--manifest", s(&manifest), "--grid-points", "100", "-o", s(&preds)]);
    assert_eq!(out.code, 5);
    assert!(out.stderr.contains("100") && out.stderr.contains("151"), "{}", out.stderr);

    let v2 = tmp.path().join("v2.json");
    fs::write(&v2, fs::read_to_string(&model).unwrap().replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    let out = run(&["predict", "--model", s(&v2), "--manifest", s(&manifest), "-o", s(&preds)]);
    assert_eq!(out.code, 5);
    assert!(out.stderr.contains("format_version"));

    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "file,material_id,temperature_C,thickness_mm,rm_MPa\n").unwrap();
    let out = run(&["predict", "--model", s(&model), "--manifest", s(&empty), "-o", s(&preds)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(fs::read_to_string(&preds).unwrap(), "file,material_id,temperature_C,pred_rm_MPa\n");
}

#[test]
fn corrupt_curve_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    fs::write(tmp.path().join("curve_0003.csv"), "displacement_um,force_N\n0,0\n1,abc\n").unwrap();
    let out = run(&["train", "--manifest", s(&manifest), "-o", s(&tmp.path().join("m.json"))]);
    assert_eq!(out.code, 4);
    assert!(out.stderr.contains("curve_0003.csv"), "{}", out.stderr);
}

#[test]
fn report_rows_and_footer() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.csv");
    let output = tmp.path().join("out.csv");

    fs::write(&input, "row,true_MPa,pred_MPa\n0,700,700\n1,500,500\n2,900,900\n").unwrap();
    assert_eq!(run(&["report", "--input", s(&input), "-o", s(&output)]).code, 0);
    let text = fs::read_to_string(&output).unwrap();
    assert!(text.ends_with("# rmse_MPa=0\n"), "{text}");
    assert!(text.lines().skip(1).filter(|l| !l.starts_with('#')).all(|l| l.ends_with(",0")));

    fs::write(&input, "true_MPa,pred_MPa\n700,690\n500,530\n900,901.5\n650,640\n").unwrap();
    assert_eq!(run(&["report", "--input", s(&input), "-o", s(&output)]).code, 0);
    let text = fs::read_to_string(&output).unwrap();
    let rows: Vec<(f64, f64, f64)> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect();
    assert!(rows.windows(2).all(|w| w[0].0 <= w[1].0));
    assert!(rows.iter().all(|r| r.2 == (r.1 - r.0).abs()));
    let expected = rmse(&[690.0, 530.0, 901.5, 640.0], &[700.0, 500.0, 900.0, 650.0]).unwrap();
    assert!(text.ends_with(&format!("# rmse_MPa={expected}\n")));

    fs::write(&input, "a,b\n1,2\n").unwrap();
    assert_eq!(run(&["report", "--input", s(&input), "-o", s(&output)]).code, 4);
}

#[test]
fn truth_hint_flows_through_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), &[]);
    let truth_path = tmp.path().join("truth.csv");
    let model = tmp.path().join("m.json");
    let preds = tmp.path().join("p.csv");
    let common = ["--manifest", s(&manifest), "--truth", s(&truth_path)];
    let mut args = vec!["train", "--markers", "per-curve", "-o", s(&model)];
    args.extend_from_slice(&common);
    assert_eq!(run(&args).code, 0);
    let mut args = vec!["predict", "--model", s(&model), "-o", s(&preds)];
    args.extend_from_slice(&common);
    let out = run(&args);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let truth = read_truth(&truth_path).unwrap();
    for line in fs::read_to_string(&preds).unwrap().lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let p: f64 = cells[3].parse().unwrap();
        let t = truth[cells[0]].rm_mpa;
        assert!((p - t).abs() <= 1e-6 * t, "{p} vs {t}");
    }
}
