use std::collections::BTreeMap;
use std::io::Write;

use anyhow::anyhow;

use cubepose::config::ExperimentConfig;
use cubepose::geometry::diameter;
use cubepose::ingest::AnnotationRecord;
use cubepose::metrics::{add_error, add_s_error_with, is_correct};

use crate::{create_out_dir, csv_with_echo, load_config, load_records, model_points, write_file, CmdResult, EvaluateArgs, Failure};

#[derive(Debug, Default, Clone)]
struct ClassStats {
    gt: usize,
    matched: usize,
    missed: usize,
    unmatched_pred: usize,
    extra_pred: usize,
    correct: usize,
    error_sum: f64,
    symmetric: bool,
    asymmetric: bool,
}

impl ClassStats {
    /// Ground truths plus every prediction that could not be the best match.
    fn count(&self) -> usize {
        self.gt + self.unmatched_pred + self.extra_pred
    }

    fn accuracy(&self) -> f64 {
        if self.count() == 0 {
            0.0
        } else {
            self.correct as f64 / self.count() as f64
        }
    }

    fn mean_error(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.error_sum / self.matched as f64)
    }

    fn add(&mut self, o: &ClassStats) {
        self.gt += o.gt;
        self.matched += o.matched;
        self.missed += o.missed;
        self.unmatched_pred += o.unmatched_pred;
        self.extra_pred += o.extra_pred;
        self.correct += o.correct;
        self.error_sum += o.error_sum;
        self.symmetric |= o.symmetric;
        self.asymmetric |= o.asymmetric;
    }

    fn metric(&self) -> &'static str {
        match (self.symmetric, self.asymmetric) {
            (true, true) => "ADD(-S)",
            (true, false) => "ADD-S",
            _ => "ADD",
        }
    }

    fn row(&self, name: &str, cfg: &ExperimentConfig) -> Vec<String> {
        vec![
            name.to_string(),
            self.count().to_string(),
            self.gt.to_string(),
            self.matched.to_string(),
            self.missed.to_string(),
            self.unmatched_pred.to_string(),
            self.extra_pred.to_string(),
            self.correct.to_string(),
            self.mean_error().map_or(String::new(), |e| format!("{e:.6}")),
            format!("{:.6}", self.accuracy()),
            self.metric().to_string(),
            cfg.eval_direction.to_string(),
        ]
    }
}

type Key = (String, String);

fn key_of(r: &AnnotationRecord) -> Key {
    (r.class_id.clone(), r.image_id.clone())
}

/// Joins predictions to ground truth on (image_id, class_id), keeps the best
/// prediction per key and writes per-class and per-record CSVs.
pub fn cmd_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let gts = load_records(&args.gt)?;
    let preds = load_records(&args.pred)?;

    let mut gt_by_key: BTreeMap<Key, &AnnotationRecord> = BTreeMap::new();
    for g in &gts {
        if gt_by_key.insert(key_of(g), g).is_some() {
            return Err(Failure::Input(anyhow!(
                "duplicate ground truth for image {:?} class {:?}",
                g.image_id,
                g.class_id
            )));
        }
    }
    let mut preds_by_key: BTreeMap<Key, Vec<&AnnotationRecord>> = BTreeMap::new();
    for p in &preds {
        preds_by_key.entry(key_of(p)).or_default().push(p);
    }

    let mut classes: BTreeMap<String, ClassStats> = BTreeMap::new();
    let mut record_rows = Vec::new();
    for ((class_id, image_id), gt) in &gt_by_key {
        let stats = classes.entry(class_id.clone()).or_default();
        stats.gt += 1;
        let symmetric = gt.symmetric || cfg.is_symmetric(class_id);
        stats.symmetric |= symmetric;
        stats.asymmetric |= !symmetric;
        let points = model_points(&cfg, class_id, &gt.cube)?;
        let diam = match cfg.avg_diameter_override {
            Some(d) => d,
            None => diameter(&points)?,
        };
        let candidates = preds_by_key.get(&(class_id.clone(), image_id.clone()));
        let Some(candidates) = candidates else {
            stats.missed += 1;
            record_rows.push(vec![image_id.clone(), class_id.clone(), "missed".into(), String::new(), format!("{diam:.6}"), "false".into()]);
            continue;
        };
        let mut best = f64::INFINITY;
        for p in candidates {
            let e = if symmetric {
                add_s_error_with(&p.pose, &gt.pose, &points, cfg.eval_direction, cfg.nn_crossover)?
            } else {
                add_error(&p.pose, &gt.pose, &points)?
            };
            best = best.min(e);
        }
        let ok = is_correct(best, diam, cfg.k);
        stats.matched += 1;
        stats.extra_pred += candidates.len() - 1;
        stats.error_sum += best;
        stats.correct += ok as usize;
        record_rows.push(vec![image_id.clone(), class_id.clone(), "matched".into(), format!("{best:.6}"), format!("{diam:.6}"), ok.to_string()]);
        for _ in 1..candidates.len() {
            record_rows.push(vec![image_id.clone(), class_id.clone(), "extra_pred".into(), String::new(), format!("{diam:.6}"), "false".into()]);
        }
    }
    for ((class_id, image_id), ps) in &preds_by_key {
        if gt_by_key.contains_key(&(class_id.clone(), image_id.clone())) {
            continue;
        }
        let stats = classes.entry(class_id.clone()).or_default();
        stats.unmatched_pred += ps.len();
        for _ in ps {
            record_rows.push(vec![image_id.clone(), class_id.clone(), "unmatched_pred".into(), String::new(), String::new(), "false".into()]);
        }
    }

    let mut overall = ClassStats::default();
    let mut rows = Vec::new();
    for (name, s) in &classes {
        overall.add(s);
        rows.push(s.row(name, &cfg));
    }
    rows.push(overall.row("overall", &cfg));

    create_out_dir(&args.out)?;
    let header = [
        "class_id",
        "count",
        "gt",
        "matched",
        "missed",
        "unmatched_pred",
        "extra_pred",
        "correct",
        "mean_error_mm",
        "accuracy",
        "metric",
        "direction",
    ];
    write_file(&args.out.join("eval.csv"), csv_with_echo(&cfg, &header, &rows)?)?;
    let rec_header = ["image_id", "class_id", "status", "error_mm", "diameter_mm", "correct"];
    write_file(&args.out.join("eval_records.csv"), csv_with_echo(&cfg, &rec_header, &record_rows)?)?;

    for (name, s) in classes.iter().chain([(&"overall".to_string(), &overall)]) {
        writeln!(stdout, "{name}: accuracy {:.4} ({} / {}) at k = {}", s.accuracy(), s.correct, s.count(), cfg.k)?;
    }
    Ok(())
}
