//! Experiment configuration in a flat `key = value` text format, and the
//! per-φ shape of the rotation/translation/scale subnetworks.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::DEFAULT_SCALE_OFFSET;
use crate::losses::LossWeights;
use crate::metrics::{ChamferDirection, DEFAULT_NN_CROSSOVER, DEFAULT_THRESHOLD};
use crate::optim::{FitConfig, GradcheckConfig};

/// Depth and repetition counts of an iterative refinement subnetwork.
/// The scale head is a copy of the rotation head, so it shares `d_rot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubnetShape {
    pub n_iter: u32,
    pub d_iter: u32,
    pub d_rot: u32,
}

pub fn subnet_shape(phi: u32) -> SubnetShape {
    SubnetShape {
        n_iter: 1 + phi / 3,
        d_iter: 2 + phi / 3,
        d_rot: 2 + phi / 3,
    }
}

/// Linear-unit multiplier applied to PLY model coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelUnits {
    Millimeters,
    Centimeters,
    Meters,
}

impl ModelUnits {
    pub fn to_mm(&self) -> f64 {
        match self {
            ModelUnits::Millimeters => 1.0,
            ModelUnits::Centimeters => 10.0,
            ModelUnits::Meters => 1000.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelUnits::Millimeters => "mm",
            ModelUnits::Centimeters => "cm",
            ModelUnits::Meters => "m",
        }
    }
}

/// How `fit` initializes the pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitInit {
    GroundTruth,
    Perturbed,
}

impl FitInit {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitInit::GroundTruth => "gt",
            FitInit::Perturbed => "perturbed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub k: f64,
    pub eval_direction: ChamferDirection,
    pub loss_direction: ChamferDirection,
    pub offset: f64,
    pub weights: LossWeights,
    pub symmetric_classes: BTreeSet<String>,
    pub seed: u64,
    pub max_iters: usize,
    pub step_size: f64,
    pub converge_tol: f64,
    pub patience: usize,
    pub fit_scale: bool,
    pub fit_init: FitInit,
    pub init_angle_deg: f64,
    pub init_translation_frac: f64,
    pub nn_crossover: usize,
    pub min_area_px: f64,
    pub model_units: ModelUnits,
    pub model_dir: Option<String>,
    pub avg_diameter_override: Option<f64>,
    pub gradcheck_instances: usize,
    pub gradcheck_h: f64,
    pub gradcheck_tol: f64,
    pub inject_sign_flip: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k: DEFAULT_THRESHOLD,
            eval_direction: ChamferDirection::GtToPred,
            loss_direction: ChamferDirection::PredToGt,
            offset: DEFAULT_SCALE_OFFSET,
            weights: LossWeights::default(),
            symmetric_classes: ["eggbox", "glue"].iter().map(|s| s.to_string()).collect(),
            seed: 0,
            max_iters: 2000,
            step_size: 1e-2,
            converge_tol: 1e-6,
            patience: 20,
            fit_scale: false,
            fit_init: FitInit::Perturbed,
            init_angle_deg: 20.0,
            init_translation_frac: 0.3,
            nn_crossover: DEFAULT_NN_CROSSOVER,
            min_area_px: crate::audit::DEFAULT_MIN_AREA_PX,
            model_units: ModelUnits::Millimeters,
            model_dir: None,
            avg_diameter_override: None,
            gradcheck_instances: 100,
            gradcheck_h: 1e-5,
            gradcheck_tol: 1e-5,
            inject_sign_flip: false,
        }
    }
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are
/// skipped. Returns `(line, key, value)` triples in file order.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::BadValue {
                key: line.to_string(),
                msg: format!("line {} is not `key = value`", i + 1),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::BadValue {
                key: String::new(),
                msg: format!("line {} has an empty key", i + 1),
            });
        }
        if out.iter().any(|(_, seen, _)| seen == k) {
            return Err(Error::BadValue {
                key: k.to_string(),
                msg: format!("duplicate key on line {}", i + 1),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::BadValue {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn real(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| bad(key, format!("expected a number, got {v:?}")))?;
    if !x.is_finite() {
        return Err(bad(key, "must be finite"));
    }
    Ok(x)
}

fn positive(key: &str, v: &str) -> Result<f64> {
    let x = real(key, v)?;
    if x <= 0.0 {
        return Err(bad(key, "must be positive"));
    }
    Ok(x)
}

fn count(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, format!("expected a non-negative integer, got {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, "expected true or false")),
    }
}

fn direction(key: &str, v: &str) -> Result<ChamferDirection> {
    v.parse().map_err(|e: String| bad(key, e))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let (mut w_cube, mut w_volume, mut w_riou) = (c.weights.cube, c.weights.volume, c.weights.riou);
        for (_, key, v) in parse_key_values(text)? {
            let k = key.as_str();
            match k {
                "k" => c.k = positive(k, &v)?,
                "eval_direction" => c.eval_direction = direction(k, &v)?,
                "loss_direction" => c.loss_direction = direction(k, &v)?,
                "offset" => c.offset = positive(k, &v)?,
                "w_cube" => w_cube = real(k, &v)?,
                "w_volume" => w_volume = real(k, &v)?,
                "w_riou" => w_riou = real(k, &v)?,
                "symmetric_classes" => {
                    c.symmetric_classes = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect()
                }
                "seed" => c.seed = v.parse().map_err(|_| bad(k, "expected a non-negative integer"))?,
                "max_iters" => {
                    c.max_iters = count(k, &v)?;
                    if c.max_iters < 1 {
                        return Err(bad(k, "must be at least 1"));
                    }
                }
                "step_size" => c.step_size = positive(k, &v)?,
                "converge_tol" => {
                    c.converge_tol = real(k, &v)?;
                    if c.converge_tol < 0.0 {
                        return Err(bad(k, "must be non-negative"));
                    }
                }
                "patience" => c.patience = count(k, &v)?,
                "fit_scale" => c.fit_scale = flag(k, &v)?,
                "fit_init" => {
                    c.fit_init = match v.as_str() {
                        "gt" => FitInit::GroundTruth,
                        "perturbed" => FitInit::Perturbed,
                        _ => return Err(bad(k, "expected gt or perturbed")),
                    }
                }
                "init_angle_deg" => {
                    c.init_angle_deg = real(k, &v)?;
                    if !(0.0..=180.0).contains(&c.init_angle_deg) {
                        return Err(bad(k, "must lie in [0, 180]"));
                    }
                }
                "init_translation_frac" => {
                    c.init_translation_frac = real(k, &v)?;
                    if c.init_translation_frac < 0.0 {
                        return Err(bad(k, "must be non-negative"));
                    }
                }
                "nn_crossover" => c.nn_crossover = count(k, &v)?,
                "min_area_px" => {
                    c.min_area_px = real(k, &v)?;
                    if c.min_area_px < 0.0 {
                        return Err(bad(k, "must be non-negative"));
                    }
                }
                "model_units" => {
                    c.model_units = match v.as_str() {
                        "mm" => ModelUnits::Millimeters,
                        "cm" => ModelUnits::Centimeters,
                        "m" => ModelUnits::Meters,
                        _ => return Err(bad(k, "expected mm, cm or m")),
                    }
                }
                "model_dir" => c.model_dir = Some(v.clone()).filter(|s| !s.is_empty()),
                "avg_diameter_override" => c.avg_diameter_override = Some(positive(k, &v)?),
                "gradcheck_instances" => {
                    c.gradcheck_instances = count(k, &v)?;
                    if c.gradcheck_instances < 1 {
                        return Err(bad(k, "must be at least 1"));
                    }
                }
                "gradcheck_h" => c.gradcheck_h = positive(k, &v)?,
                "gradcheck_tol" => c.gradcheck_tol = positive(k, &v)?,
                "inject_sign_flip" => c.inject_sign_flip = flag(k, &v)?,
                _ => return Err(bad(k, "unknown key")),
            }
        }
        c.weights = LossWeights::new(w_cube, w_volume, w_riou).map_err(|_| {
            bad("w_cube", "loss weights must be non-negative and not all zero")
        })?;
        Ok(c)
    }

    /// Loads a config file; a missing file is an error, an empty one gives defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.display().to_string()),
            _ => Error::from(e),
        })?;
        ExperimentConfig::parse(&text)
    }

    /// Every effective value in a fixed order; parsing the echo reproduces
    /// this config.
    pub fn echo(&self) -> Vec<(&'static str, String)> {
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        let mut out = vec![
            ("k", self.k.to_string()),
            ("eval_direction", self.eval_direction.to_string()),
            ("loss_direction", self.loss_direction.to_string()),
            ("offset", self.offset.to_string()),
            ("w_cube", self.weights.cube.to_string()),
            ("w_volume", self.weights.volume.to_string()),
            ("w_riou", self.weights.riou.to_string()),
            (
                "symmetric_classes",
                self.symmetric_classes.iter().cloned().collect::<Vec<_>>().join(","),
            ),
            ("seed", self.seed.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("step_size", self.step_size.to_string()),
            ("converge_tol", self.converge_tol.to_string()),
            ("patience", self.patience.to_string()),
            ("fit_scale", self.fit_scale.to_string()),
            ("fit_init", self.fit_init.as_str().to_string()),
            ("init_angle_deg", self.init_angle_deg.to_string()),
            ("init_translation_frac", self.init_translation_frac.to_string()),
            ("nn_crossover", self.nn_crossover.to_string()),
            ("min_area_px", self.min_area_px.to_string()),
            ("model_units", self.model_units.as_str().to_string()),
            ("model_dir", opt(&self.model_dir)),
        ];
        if let Some(d) = self.avg_diameter_override {
            out.push(("avg_diameter_override", d.to_string()));
        }
        out.extend([
            ("gradcheck_instances", self.gradcheck_instances.to_string()),
            ("gradcheck_h", self.gradcheck_h.to_string()),
            ("gradcheck_tol", self.gradcheck_tol.to_string()),
            ("inject_sign_flip", self.inject_sign_flip.to_string()),
        ]);
        out
    }

    /// The echo as `key = value` lines, each prefixed by `prefix`.
    pub fn echo_lines(&self, prefix: &str) -> String {
        self.echo()
            .iter()
            .map(|(k, v)| format!("{prefix}{k} = {v}\n"))
            .collect()
    }

    pub fn is_symmetric(&self, class_id: &str) -> bool {
        self.symmetric_classes.contains(class_id)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            max_iters: self.max_iters,
            step_size: self.step_size,
            converge_tol: self.converge_tol,
            patience: self.patience,
            fit_rotation: true,
            fit_translation: true,
            fit_scale: self.fit_scale,
            seed: self.seed,
        }
    }

    pub fn gradcheck_config(&self) -> GradcheckConfig {
        GradcheckConfig {
            instances: self.gradcheck_instances,
            h: self.gradcheck_h,
            tolerance: self.gradcheck_tol,
            seed: self.seed,
            ..GradcheckConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subnet_shapes() {
        assert_eq!(subnet_shape(0), SubnetShape { n_iter: 1, d_iter: 2, d_rot: 2 });
        assert_eq!(subnet_shape(3), SubnetShape { n_iter: 2, d_iter: 3, d_rot: 3 });
        assert_eq!(subnet_shape(6), SubnetShape { n_iter: 3, d_iter: 4, d_rot: 4 });
        for phi in 0..20 {
            let (a, b) = (subnet_shape(phi), subnet_shape(phi + 1));
            assert!(b.n_iter >= a.n_iter && b.d_iter >= a.d_iter && b.d_rot >= a.d_rot);
        }
    }

    #[test]
    fn empty_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.k, 0.1);
        assert_eq!(c.offset, 0.2);
        assert_eq!(c.weights, LossWeights::new(1.0, 0.1, 0.0).unwrap());
        assert!(c.is_symmetric("glue") && c.is_symmetric("eggbox") && !c.is_symmetric("ape"));
    }

    #[test]
    fn overrides_and_comments() {
        let c = ExperimentConfig::parse("# linemod\nk = 0.07  # tighter\nsymmetric_classes = bowl, cup\neval_direction=pred_to_gt\nmodel_dir =\n").unwrap();
        assert_eq!(c.k, 0.07);
        assert!(c.echo_lines("# ").contains("# k = 0.07\n"));
        assert!(c.is_symmetric("cup") && !c.is_symmetric("glue"));
        assert_eq!(c.eval_direction, ChamferDirection::PredToGt);
        assert_eq!(c.model_dir, None);
    }

    #[test]
    fn bad_values_name_their_key() {
        let key_of = |text: &str| match ExperimentConfig::parse(text) {
            Err(Error::BadValue { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of("k = -0.1"), "k");
        assert_eq!(key_of("k = abc"), "k");
        assert_eq!(key_of("offset = 0"), "offset");
        assert_eq!(key_of("loss_direction = both"), "loss_direction");
        assert_eq!(key_of("colour = red"), "colour");
        assert_eq!(key_of("k = 0.1\nk = 0.2"), "k");
        assert_eq!(key_of("w_cube = 0\nw_volume = 0"), "w_cube");
        assert_eq!(key_of("just words"), "just words");
    }

    #[test]
    fn echo_round_trips() {
        let mut c = ExperimentConfig::parse("k = 0.07\nseed = 42\navg_diameter_override = 170\nmodel_dir = /tmp/m\nfit_scale = true").unwrap();
        assert_eq!(ExperimentConfig::parse(&c.echo_lines("")).unwrap(), c);
        c.step_size = 0.1 + 0.2;
        assert_eq!(ExperimentConfig::parse(&c.echo_lines("")).unwrap(), c);
    }

    #[test]
    fn missing_file() {
        let e = ExperimentConfig::load(Path::new("/nonexistent/cubepose.conf")).unwrap_err();
        assert!(matches!(e, Error::MissingFile(_)));
    }
}
