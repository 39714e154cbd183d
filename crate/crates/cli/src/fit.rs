use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};

use cubepose::config::{ExperimentConfig, FitInit};
use cubepose::geometry::{diameter, BoundingCube};
use cubepose::ingest::mesh_cube;
use cubepose::losses::{LossSetup, PoseScaleParams};
use cubepose::optim::experiments::{perturb, trial_rng, Perturbation};
use cubepose::optim::{fit_pose, EvalModel};

use crate::svg::trace_chart;
use crate::{create_out_dir, csv_with_echo, load_config, load_mesh, load_records, model_points, write_file, CmdResult, Failure, FitArgs};

/// Reads the prior cube from a PLY model or from `priors.json`, picking the
/// entry for `class_id` (or the only entry).
fn load_prior(path: &Path, cfg: &ExperimentConfig, class_id: &str) -> Result<BoundingCube, Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "ply" => Ok(mesh_cube(&load_mesh(path, cfg)?)?),
        "json" => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let priors = doc
                .get("priors")
                .and_then(|p| p.as_array())
                .ok_or_else(|| anyhow!("{} has no `priors` array", path.display()))?;
            let entry = match priors.iter().find(|p| p.get("class_id").and_then(|c| c.as_str()) == Some(class_id)) {
                Some(e) => e,
                None if priors.len() == 1 => &priors[0],
                None => return Err(Failure::Input(anyhow!("no prior for class {class_id:?} in {}", path.display()))),
            };
            let flat: Vec<f64> = entry
                .get("cube_mm")
                .and_then(|c| c.as_array())
                .ok_or_else(|| anyhow!("prior entry lacks cube_mm"))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| anyhow!("cube_mm holds a non-number")))
                .collect::<anyhow::Result<_>>()?;
            Ok(BoundingCube::from_flat(&flat).context("prior cube_mm")?)
        }
        _ => Err(Failure::Input(anyhow!("prior must be a .ply model or a priors .json file, got {}", path.display()))),
    }
}

/// Fits the first record of `--gt` starting from the configured init and
/// writes `trace.csv` and `trace.svg`.
pub fn cmd_fit(args: &FitArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let records = load_records(&args.gt)?;
    let gt = records
        .first()
        .ok_or_else(|| Failure::Input(anyhow!("{} has no records", args.gt.display())))?;
    let prior = load_prior(&args.prior, &cfg, &gt.class_id)?;
    let symmetric = gt.symmetric || cfg.is_symmetric(&gt.class_id);
    let setup = LossSetup {
        prior,
        gt_pose: gt.pose,
        gt_cube: gt.cube,
        dir: cfg.loss_direction,
        symmetric,
        weights: cfg.weights,
    };
    let points = model_points(&cfg, &gt.class_id, &gt.cube)?;
    let diam = match cfg.avg_diameter_override {
        Some(d) => d,
        None => diameter(&points)?,
    };
    let eval = EvalModel {
        points,
        symmetric,
        dir: cfg.eval_direction,
    };
    let init_pose = match cfg.fit_init {
        FitInit::GroundTruth => gt.pose,
        FitInit::Perturbed => {
            let how = Perturbation::Fixed {
                angle: cfg.init_angle_deg.to_radians(),
                translation_frac: cfg.init_translation_frac,
            };
            perturb(&gt.pose, diam, &how, &mut trial_rng(cfg.seed, 0))
        }
    };
    let init = PoseScaleParams::from_pose(&init_pose, cfg.offset)?;
    let trace = fit_pose(&init, &setup, &eval, &cfg.fit_config())?;

    let rows: Vec<Vec<String>> = trace
        .rows
        .iter()
        .map(|r| vec![r.iter.to_string(), format!("{:.6}", r.loss), format!("{:.6}", r.add_vs_true)])
        .collect();
    create_out_dir(&args.out)?;
    write_file(&args.out.join("trace.csv"), csv_with_echo(&cfg, &["iter", "loss_mm", "adds_vs_true"], &rows)?)?;
    let title = format!("{} / {}", gt.image_id, gt.class_id);
    write_file(&args.out.join("trace.svg"), trace_chart(&title, &trace.rows, diam * cfg.k, &cfg))?;

    let last = trace.rows.last().expect("trace has the initial row");
    writeln!(
        stdout,
        "{} iterations, loss {:.6} mm, {} {:.6} mm (threshold {:.3} mm), converged {}",
        last.iter,
        last.loss,
        if symmetric { "ADD-S" } else { "ADD" },
        last.add_vs_true,
        diam * cfg.k,
        trace.converged
    )?;
    Ok(())
}
