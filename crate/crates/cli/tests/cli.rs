mod common;

use std::fs;

use common::*;
use cubepose::geometry::{Pose, Rotation, Vec3};
use cubepose::ingest::{mesh_cube, write_ply, MeshModel, PlyFormat, Source};

fn gt_set() -> Vec<cubepose::ingest::AnnotationRecord> {
    let mut out = Vec::new();
    for (ci, class) in ["driller", "eggbox"].iter().enumerate() {
        for i in 0..5 {
            out.push(record(&format!("{i:06}"), class, base_pose(i + 5 * ci), false, Source::GroundTruth));
        }
    }
    out
}

fn shifted(records: &[cubepose::ingest::AnnotationRecord], shift: impl Fn(usize) -> Vec3) -> Vec<cubepose::ingest::AnnotationRecord> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut p = r.clone();
            p.pose = Pose::new(r.pose.rotation, r.pose.translation + shift(i));
            p.source = Source::Prediction;
            p
        })
        .collect()
}

fn evaluate(dir: &std::path::Path, gt: &[cubepose::ingest::AnnotationRecord], pred: &[cubepose::ingest::AnnotationRecord]) -> Vec<Vec<String>> {
    let (g, p, out) = (dir.join("gt.jsonl"), dir.join("pred.jsonl"), dir.join("out"));
    write_jsonl(&g, gt);
    write_jsonl(&p, pred);
    let o = run_paths("evaluate", &[("--gt", &g), ("--pred", &p), ("--out", &out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    csv_rows(&out.join("eval.csv"))
}

#[test]
fn evaluate_identical_predictions_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let gt = gt_set();
    let rows = evaluate(dir.path(), &gt, &shifted(&gt, |_| Vec3::zeros()));
    for key in ["driller", "eggbox", "overall"] {
        assert_eq!(cell(&rows, key, "accuracy"), "1.000000", "{key}");
        assert_eq!(cell(&rows, key, "mean_error_mm"), "0.000000");
    }
    assert_eq!(cell(&rows, "eggbox", "metric"), "ADD-S");
    assert_eq!(cell(&rows, "driller", "metric"), "ADD");
}

#[test]
fn evaluate_large_shift_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt = gt_set();
    let d = 0.2 * box_diameter();
    let pred = shifted(&gt, |i| Rotation::about_z(i as f64).rotate(&Vec3::new(d, 0.0, 0.0)));
    let rows = evaluate(dir.path(), &gt, &pred);
    for key in ["driller", "eggbox", "overall"] {
        assert_eq!(cell(&rows, key, "accuracy"), "0.000000", "{key}");
    }
}

#[test]
fn evaluate_mixed_errors_match_hand_count() {
    // threshold is 12.33 mm; a pure translation gives ADD = |shift|, and
    // ADD-S = |shift| too while the shift stays under half the 40 mm extent
    let errors = [2.0, 11.0, 13.0, 30.0, 12.0, 0.5, 12.5, 5.0, 19.0, 1.0];
    let dir = tempfile::tempdir().unwrap();
    let gt = gt_set();
    let pred = shifted(&gt, |i| Vec3::new(0.0, 0.0, errors[i]));
    let rows = evaluate(dir.path(), &gt, &pred);
    assert_eq!(cell(&rows, "driller", "accuracy"), "0.600000");
    assert_eq!(cell(&rows, "eggbox", "accuracy"), "0.600000");
    assert_eq!(cell(&rows, "overall", "accuracy"), "0.600000");
    assert_eq!(cell(&rows, "driller", "mean_error_mm"), format!("{:.6}", 68.0 / 5.0));
    let recs = csv_rows(&dir.path().join("out/eval_records.csv"));
    let err = column(&recs, "error_mm");
    for (row, e) in recs[1..].iter().zip(errors) {
        assert!((row[err].parse::<f64>().unwrap() - e).abs() < 1e-6);
    }
}

#[test]
fn evaluate_counts_missed_extra_and_unmatched() {
    let dir = tempfile::tempdir().unwrap();
    let gt = gt_set();
    let mut pred = shifted(&gt, |_| Vec3::zeros());
    pred.remove(0);
    let extra = pred[0].clone();
    pred.push(extra);
    let mut stray = pred[1].clone();
    stray.image_id = "999999".into();
    pred.push(stray);
    let rows = evaluate(dir.path(), &gt, &pred);
    assert_eq!(cell(&rows, "driller", "missed"), "1");
    assert_eq!(cell(&rows, "driller", "extra_pred"), "1");
    assert_eq!(cell(&rows, "driller", "unmatched_pred"), "1");
    assert_eq!(cell(&rows, "driller", "count"), "7");
    assert_eq!(cell(&rows, "driller", "correct"), "4");
    assert_eq!(cell(&rows, "overall", "count"), "12");
}

#[test]
fn evaluate_golden_fixture_matches_checked_in_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_paths(
        "evaluate",
        &[
            ("--gt", &fixture("golden_gt.jsonl")),
            ("--pred", &fixture("golden_pred.jsonl")),
            ("--out", dir.path()),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["eval.csv", "eval_records.csv"] {
        let got = fs::read_to_string(dir.path().join(name)).unwrap();
        let want = fs::read_to_string(fixture(&format!("golden_{name}"))).unwrap();
        assert_eq!(got, want, "{name}");
    }
}

#[test]
fn evaluate_output_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "k = 0.2\neval_direction = pred_to_gt\n").unwrap();
    let out = dir.path().join("out");
    let o = run_paths(
        "evaluate",
        &[
            ("--gt", &fixture("golden_gt.jsonl")),
            ("--pred", &fixture("golden_pred.jsonl")),
            ("--config", &cfg),
            ("--out", &out),
        ],
    );
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(text.contains("# k = 0.2\n"));
    assert!(text.contains("# eval_direction = pred_to_gt\n"));
    assert!(text.contains("# gradcheck_tol = 0.00001\n"));
}

#[test]
fn malformed_annotations_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let good = fs::read_to_string(fixture("golden_gt.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    fs::write(&bad, format!("{first}\n\n{{\"image_id\": 3}}\n")).unwrap();
    let o = run_paths("evaluate", &[("--gt", &bad), ("--pred", &bad), ("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let mut v: serde_json::Value = serde_json::from_str(first).unwrap();
    v["rotation"][0] = serde_json::json!(2.0);
    fs::write(&bad, format!("{v}\n")).unwrap();
    let o = run_paths("evaluate", &[("--gt", &bad), ("--pred", &bad), ("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1: rotation is invalid"), "{}", stderr(&o));
}

#[test]
fn missing_files_and_bad_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope.jsonl");
    let o = run_paths("prior", &[("--gt", &nope), ("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "k = 0.1\nbogus_key = 3\n").unwrap();
    let o = run_paths("gradcheck", &[("--config", &cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus_key"));
    let o = run_paths("gradcheck", &[("--config", &nope)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_default_passes() {
    let o = run(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "PASS"));
    let err: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-5);
    assert!(out.contains("# gradcheck_instances = 100"));
}

#[test]
fn gradcheck_sign_flip_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("flip.cfg");
    fs::write(&cfg, "inject_sign_flip = true\n").unwrap();
    let o = run_paths("gradcheck", &[("--config", &cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("FAIL"));
    assert!(out.contains("worst instance: seed 0 index"));
    assert!(out.contains("analytic ["));
}

#[test]
fn gradcheck_seed_pins_worst_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seed.cfg");
    fs::write(&cfg, "seed = 7\n").unwrap();
    let a = run_paths("gradcheck", &[("--config", &cfg)]);
    let b = run_paths("gradcheck", &[("--config", &cfg)]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

fn write_prior_ply(dir: &std::path::Path, format: PlyFormat) -> std::path::PathBuf {
    let mesh = MeshModel::new(box_cube().points(), None).unwrap();
    let path = dir.join("prior.ply");
    fs::write(&path, write_ply(&mesh, format)).unwrap();
    path
}

#[test]
fn fit_from_gt_init_is_single_zero_row() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write_prior_ply(dir.path(), PlyFormat::Ascii);
    let cfg = dir.path().join("gt.cfg");
    fs::write(&cfg, "fit_init = gt\n").unwrap();
    let out = dir.path().join("out");
    let o = run_paths(
        "fit",
        &[("--prior", &prior), ("--gt", &fixture("golden_gt.jsonl")), ("--config", &cfg), ("--out", &out)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("trace.csv"));
    assert_eq!(rows, vec![vec!["iter", "loss_mm", "adds_vs_true"], vec!["0", "0.000000", "0.000000"]]);
}

#[test]
fn fit_perturbed_converges_and_svg_parses() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write_prior_ply(dir.path(), PlyFormat::BinaryLittleEndian);
    let out = dir.path().join("out");
    let o = run_paths("fit", &[("--prior", &prior), ("--gt", &fixture("golden_gt.jsonl")), ("--out", &out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("trace.csv"));
    assert!(rows.len() > 2);
    let last: f64 = rows.last().unwrap()[2].parse().unwrap();
    assert!(last < 0.1 * box_diameter());

    let svg = fs::read_to_string(out.join("trace.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).expect("trace.svg is well-formed XML");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    assert!(svg.contains("fit_init = perturbed"));
}

#[test]
fn fit_accepts_priors_json() {
    let dir = tempfile::tempdir().unwrap();
    let pdir = dir.path().join("p");
    let o = run_paths("prior", &[("--gt", &fixture("golden_gt.jsonl")), ("--out", &pdir)]);
    assert!(o.status.success());
    let out = dir.path().join("out");
    let o = run_paths(
        "fit",
        &[("--prior", &pdir.join("priors.json")), ("--gt", &fixture("golden_gt.jsonl")), ("--out", &out)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let bad = dir.path().join("prior.txt");
    fs::write(&bad, "x").unwrap();
    let o = run_paths("fit", &[("--prior", &bad), ("--gt", &fixture("golden_gt.jsonl")), ("--out", &out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write_prior_ply(dir.path(), PlyFormat::Ascii);
    let cfg = dir.path().join("huge.cfg");
    fs::write(&cfg, "step_size = 1e308\n").unwrap();
    let out = dir.path().join("out");
    let o = run_paths(
        "fit",
        &[("--prior", &prior), ("--gt", &fixture("golden_gt.jsonl")), ("--config", &cfg), ("--out", &out)],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn prior_writes_one_entry_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_paths("prior", &[("--gt", &fixture("golden_gt.jsonl")), ("--out", dir.path())]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("priors.json")).unwrap()).unwrap();
    let priors = doc["priors"].as_array().unwrap();
    assert_eq!(priors.len(), 2);
    assert_eq!(priors[0]["class_id"], "driller");
    assert_eq!(priors[0]["count"], 4);
    assert!((priors[0]["avg_diameter_mm"].as_f64().unwrap() - box_diameter()).abs() < 1e-9);
    assert_eq!(doc["config"]["k"], "0.1");
    let cube = cubepose::geometry::BoundingCube::from_flat(
        &priors[1]["cube_mm"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!((cube.volume() - box_cube().volume()).abs() < 1e-6);
}

#[test]
fn prior_diameter_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("o.cfg");
    fs::write(&cfg, "avg_diameter_override = 170\n").unwrap();
    let o = run_paths("prior", &[("--gt", &fixture("golden_gt.jsonl")), ("--config", &cfg), ("--out", dir.path())]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("priors.json")).unwrap()).unwrap();
    for p in doc["priors"].as_array().unwrap() {
        assert_eq!(p["avg_diameter_mm"].as_f64().unwrap(), 170.0);
    }
}

#[test]
fn prior_on_empty_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "\n").unwrap();
    let o = run_paths("prior", &[("--gt", &empty), ("--out", dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn audit_flags_each_reason() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("camera.txt");
    fs::write(&k, "fx = 572.4\nfy = 573.6\ncx = 325.3\ncy = 242.0\nwidth = 640\nheight = 480\n").unwrap();
    let at = |t: Vec3| Pose::new(Rotation::identity(), t);
    let recs = vec![
        record("a", "driller", at(Vec3::new(0.0, 0.0, 800.0)), false, Source::GroundTruth),
        record("b", "driller", at(Vec3::new(0.0, 0.0, -800.0)), false, Source::GroundTruth),
        record("c", "driller", at(Vec3::new(5000.0, 0.0, 800.0)), false, Source::GroundTruth),
        record("d", "driller", at(Vec3::new(0.0, 0.0, 400_000.0)), false, Source::GroundTruth),
    ];
    let gt = dir.path().join("gt.jsonl");
    write_jsonl(&gt, &recs);
    let out = dir.path().join("out");
    let o = run_paths("audit", &[("--gt", &gt), ("--intrinsics", &k), ("--out", &out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("3 flagged (BehindCamera 1, OutOfFrame 1, TinyProjection 1)"));
    let rows = csv_rows(&out.join("audit.csv"));
    assert_eq!(
        rows[1..],
        [
            vec!["b", "driller", "BehindCamera"],
            vec!["c", "driller", "OutOfFrame"],
            vec!["d", "driller", "TinyProjection"],
        ]
    );
    fs::write(&k, "fx = 572.4\n").unwrap();
    let o = run_paths("audit", &[("--gt", &gt), ("--intrinsics", &k), ("--out", &out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn every_command_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prior = write_prior_ply(dir.path(), PlyFormat::Ascii);
    let gt = fixture("golden_gt.jsonl");
    let pred = fixture("golden_pred.jsonl");
    let k = dir.path().join("camera.txt");
    fs::write(&k, "fx = 500\nfy = 500\ncx = 320\ncy = 240\nwidth = 640\nheight = 480\n").unwrap();
    let mut outputs = Vec::new();
    for run_no in 0..2 {
        let d = dir.path().join(format!("run{run_no}"));
        let cmds: Vec<(&str, Vec<(&str, std::path::PathBuf)>)> = vec![
            ("evaluate", vec![("--gt", gt.clone()), ("--pred", pred.clone()), ("--out", d.join("e"))]),
            ("fit", vec![("--prior", prior.clone()), ("--gt", gt.clone()), ("--out", d.join("f"))]),
            ("audit", vec![("--gt", gt.clone()), ("--intrinsics", k.clone()), ("--out", d.join("a"))]),
            ("prior", vec![("--gt", gt.clone()), ("--out", d.join("p"))]),
        ];
        for (cmd, args) in &cmds {
            let refs: Vec<(&str, &std::path::Path)> = args.iter().map(|(f, p)| (*f, p.as_path())).collect();
            let o = run_paths(cmd, &refs);
            assert!(o.status.success(), "{cmd}: {}", stderr(&o));
            outputs.push(o.stdout);
        }
        for f in ["e/eval.csv", "e/eval_records.csv", "f/trace.csv", "f/trace.svg", "a/audit.csv", "p/priors.json"] {
            outputs.push(fs::read(d.join(f)).unwrap());
        }
    }
    let half = outputs.len() / 2;
    assert_eq!(outputs[..half], outputs[half..]);
}

#[test]
fn model_units_scale_ply_priors() {
    let dir = tempfile::tempdir().unwrap();
    let metres: Vec<Vec3> = box_cube().points().points().iter().map(|p| p / 1000.0).collect();
    let mesh = MeshModel::new(cubepose::geometry::PointSet::new(metres).unwrap(), None).unwrap();
    let prior = dir.path().join("m.ply");
    fs::write(&prior, write_ply(&mesh, PlyFormat::Ascii)).unwrap();
    assert!((mesh_cube(&mesh).unwrap().volume() - box_cube().volume() * 1e-9).abs() < 1e-12);
    let cfg = dir.path().join("m.cfg");
    fs::write(&cfg, "model_units = m\nfit_init = gt\n").unwrap();
    let out = dir.path().join("out");
    let o = run_paths(
        "fit",
        &[("--prior", &prior), ("--gt", &fixture("golden_gt.jsonl")), ("--config", &cfg), ("--out", &out)],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&out.join("trace.csv"));
    assert_eq!(rows[1], vec!["0", "0.000000", "0.000000"]);
}
