#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cubepose::geometry::{cube_from_aabb, BoundingCube, Pose, Rotation, Vec3};
use cubepose::ingest::{record_to_json, AnnotationRecord, Source};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cubepose"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cubepose")
}

pub fn run_paths(cmd: &str, args: &[(&str, &Path)]) -> Output {
    let mut c = bin();
    c.arg(cmd);
    for (flag, p) in args {
        c.arg(flag).arg(p);
    }
    c.output().expect("spawn cubepose")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// 100 × 60 × 40 mm box centred at the origin; diameter √15200 ≈ 123.29 mm.
pub fn box_cube() -> BoundingCube {
    cube_from_aabb(&Vec3::new(-50.0, -30.0, -20.0), &Vec3::new(50.0, 30.0, 20.0)).unwrap()
}

pub fn box_diameter() -> f64 {
    15200f64.sqrt()
}

pub fn record(image: &str, class: &str, pose: Pose, symmetric: bool, source: Source) -> AnnotationRecord {
    AnnotationRecord {
        image_id: image.into(),
        class_id: class.into(),
        pose,
        cube: box_cube(),
        symmetric,
        source,
    }
}

pub fn base_pose(i: usize) -> Pose {
    Pose::new(
        Rotation::about_y(0.1 * i as f64).compose(&Rotation::about_z(0.05 * i as f64)),
        Vec3::new(10.0 * i as f64, -5.0, 800.0 + 20.0 * i as f64),
    )
}

pub fn write_jsonl(path: &Path, records: &[AnnotationRecord]) {
    let text: String = records.iter().map(|r| record_to_json(r) + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// Parses the CSV part of an output file, skipping `#` echo lines.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(body.as_bytes());
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

pub fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

/// The value of `col` in the row whose first cell is `key`.
pub fn cell<'a>(rows: &'a [Vec<String>], key: &str, col: &str) -> &'a str {
    let c = column(rows, col);
    &rows.iter().find(|r| r[0] == key).unwrap_or_else(|| panic!("no row {key}"))[c]
}
