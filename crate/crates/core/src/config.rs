//! JSON run configuration for the command-line tool.
//!
//! Every block is optional except `output_dir`; omitted values fall back to
//! the default tracking scenario. Errors carry the offending field path and,
//! where it can be found, the line in the source document.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::estimators::{EstimatorKind, MkcConfig};
use crate::harness::{eta_sweep_estimators, MonteCarloConfig, NamedEstimator};
use crate::model::GaussianBelief;
use crate::scenario::{
    default_tracking_system, DisturbanceProfile, TruthModel, DEFAULT_D_STAR, DEFAULT_LEVELS, DEFAULT_QX, DEFAULT_R,
    DEFAULT_STARTS, DEFAULT_STEPS, DEFAULT_T, DEFAULT_WINDOW, DEFAULT_X0_VAR,
};
use crate::verify::default_eta_grid;

/// Overrides `scenario.seed` when set.
pub const SEED_ENV: &str = "DOBLAB_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub file: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        if self.field.is_empty() {
            write!(f, ": {}", self.message)
        } else {
            write!(f, ": `{}`: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    pub estimators: Option<Vec<EstimatorConfig>>,
    #[serde(default)]
    pub harness: HarnessConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub q_x: f64,
    pub r: f64,
    pub d_star: f64,
    pub x0_var: f64,
    pub steps: usize,
    pub seed: u64,
    pub profile: ProfileConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_T,
            q_x: DEFAULT_QX,
            r: DEFAULT_R,
            d_star: DEFAULT_D_STAR,
            x0_var: DEFAULT_X0_VAR,
            steps: DEFAULT_STEPS,
            seed: 1,
            profile: ProfileConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    /// Segment start steps; levels are assigned cyclically.
    pub starts: Vec<usize>,
    pub levels: Vec<f64>,
    /// Variance of the white noise added to the step levels.
    pub noise_var: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            starts: DEFAULT_STARTS.to_vec(),
            levels: DEFAULT_LEVELS.to_vec(),
            noise_var: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub trials: usize,
    /// Inclusive 1-based `[m1, m2]`.
    pub window: Option<[usize; 2]>,
    pub eta_grid: Option<Vec<f64>>,
    /// Natural logs of the grid values; exclusive with `eta_grid`.
    pub log_eta_grid: Option<Vec<f64>>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            window: None,
            eta_grid: None,
            log_eta_grid: None,
        }
    }
}

/// Disturbance covariance scale `D = eta D*`, given as `eta` or `log_eta`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scale {
    pub eta: Option<f64>,
    pub log_eta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    Sise {
        name: Option<String>,
    },
    Kfdob {
        name: Option<String>,
        eta: Option<f64>,
        log_eta: Option<f64>,
    },
    KfdobPartitioned {
        name: Option<String>,
        eta: Option<f64>,
        log_eta: Option<f64>,
    },
    Nkfdob {
        name: Option<String>,
        eta: Option<f64>,
        log_eta: Option<f64>,
    },
    Mkckfdob {
        name: Option<String>,
        eta: Option<f64>,
        log_eta: Option<f64>,
        sigma_d: Option<f64>,
        sigma_x: Option<f64>,
        sigma_r: Option<f64>,
        epsilon: Option<f64>,
        max_iters: Option<usize>,
    },
    Immkfdob {
        name: Option<String>,
        etas: Option<Vec<f64>>,
        log_etas: Option<Vec<f64>>,
        transition: Option<Vec<Vec<f64>>>,
    },
}

/// A parsed and validated configuration with the derived model objects.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub truth: TruthModel,
    pub profile: DisturbanceProfile,
    pub estimators: Vec<NamedEstimator>,
    pub eta_grid: Vec<f64>,
    pub window: (usize, usize),
}

impl ResolvedConfig {
    pub fn d_star(&self) -> DMatrix<f64> {
        DMatrix::identity(1, 1) * self.raw.scenario.d_star
    }

    pub fn seed(&self) -> u64 {
        self.raw.scenario.seed
    }

    pub fn steps(&self) -> usize {
        self.raw.scenario.steps
    }

    pub fn dt(&self) -> f64 {
        self.raw.scenario.dt
    }

    pub fn output_dir(&self) -> &Path {
        &self.raw.output_dir
    }

    /// Monte Carlo setup with the eta-grid KF-DOB estimators first, followed
    /// by the configured estimators.
    pub fn sweep_config(&self, threads: Option<usize>) -> MonteCarloConfig {
        let s = &self.raw.scenario;
        let mut mc = MonteCarloConfig::new(self.truth.clone(), self.profile.clone(), s.steps, self.raw.harness.trials, s.seed, s.dt);
        mc.window = self.window;
        mc.threads = threads;
        mc.estimators = eta_sweep_estimators(&self.d_star(), &self.eta_grid);
        mc.estimators.extend(self.estimators.iter().cloned());
        mc
    }
}

struct Doc<'a> {
    file: String,
    text: &'a str,
}

impl Doc<'_> {
    /// Line of the `nth` occurrence of `"key"` as a JSON key.
    fn locate(&self, key: &str, nth: usize) -> Option<usize> {
        let needle = format!("\"{key}\"");
        self.text
            .lines()
            .enumerate()
            .filter(|(_, l)| {
                l.find(&needle)
                    .is_some_and(|i| l[i + needle.len()..].trim_start().starts_with(':'))
            })
            .nth(nth)
            .map(|(i, _)| i + 1)
    }

    fn err(&self, field: &str, line: Option<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line,
            column: None,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn field_err(&self, field: &str, message: impl Into<String>) -> ConfigError {
        let key = field.rsplit('.').next().unwrap_or(field);
        self.err(field, self.locate(key, 0), message)
    }
}

fn resolve_scale(doc: &Doc, field: &str, nth: usize, eta: Option<f64>, log_eta: Option<f64>) -> Result<f64, ConfigError> {
    let value = match (eta, log_eta) {
        (Some(_), Some(_)) => {
            return Err(doc.err(field, doc.locate("log_eta", nth), "give either `eta` or `log_eta`, not both"));
        }
        (Some(e), None) => e,
        (None, Some(l)) => l.exp(),
        (None, None) => 1.0,
    };
    if !(value > 0.0 && value.is_finite()) {
        return Err(doc.err(field, doc.locate("kind", nth), format!("eta must be positive and finite, got {value}")));
    }
    Ok(value)
}

fn default_estimators(d_star: &DMatrix<f64>) -> Vec<NamedEstimator> {
    let wide = d_star * 20f64.exp();
    let mut list = vec![
        NamedEstimator::new("sise", EstimatorKind::Sise),
        NamedEstimator::new("nkfdob", EstimatorKind::NkfDob { d: wide.clone() }),
        NamedEstimator::new("kfdob", EstimatorKind::KfDob { d: wide }),
    ];
    let remedies = crate::verify::default_comparison_estimators().expect("default remedies are valid");
    list.extend(remedies.into_iter().filter(|e| !e.name.starts_with("kfdob_eta")));
    list
}

fn resolve_estimator(doc: &Doc, i: usize, cfg: &EstimatorConfig, d_star: &DMatrix<f64>) -> Result<NamedEstimator, ConfigError> {
    let field = format!("estimators[{i}]");
    let line = doc.locate("kind", i);
    let err = |msg: String| doc.err(&field, line, msg);
    let (name, kind) = match cfg {
        EstimatorConfig::Sise { name } => (name, EstimatorKind::Sise),
        EstimatorConfig::Kfdob { name, eta, log_eta } => {
            let d = d_star * resolve_scale(doc, &field, i, *eta, *log_eta)?;
            (name, EstimatorKind::KfDob { d })
        }
        EstimatorConfig::KfdobPartitioned { name, eta, log_eta } => {
            let d = d_star * resolve_scale(doc, &field, i, *eta, *log_eta)?;
            (name, EstimatorKind::KfDobPartitioned { d })
        }
        EstimatorConfig::Nkfdob { name, eta, log_eta } => {
            let d = d_star * resolve_scale(doc, &field, i, *eta, *log_eta)?;
            (name, EstimatorKind::NkfDob { d })
        }
        EstimatorConfig::Mkckfdob {
            name,
            eta,
            log_eta,
            sigma_d,
            sigma_x,
            sigma_r,
            epsilon,
            max_iters,
        } => {
            let d = d_star * resolve_scale(doc, &field, i, *eta, *log_eta)?;
            let mut config = MkcConfig::new(vec![sigma_d.unwrap_or(3.0)], 2, 2).map_err(|e| err(e.to_string()))?;
            if let Some(s) = sigma_x {
                config.sigma_x = vec![*s; 2];
            }
            if let Some(s) = sigma_r {
                config.sigma_r = vec![*s; 2];
            }
            if let Some(e) = epsilon {
                config.epsilon = *e;
            }
            if let Some(m) = max_iters {
                config.max_iters = *m;
            }
            config.validate().map_err(|e| err(e.to_string()))?;
            (name, EstimatorKind::MkckfDob { d, config })
        }
        EstimatorConfig::Immkfdob {
            name,
            etas,
            log_etas,
            transition,
        } => {
            let etas = match (etas, log_etas) {
                (Some(_), Some(_)) => return Err(err("give either `etas` or `log_etas`, not both".into())),
                (Some(e), None) => e.clone(),
                (None, Some(l)) => l.iter().map(|v| v.exp()).collect(),
                (None, None) => vec![1.0, 5f64.exp()],
            };
            if etas.is_empty() || etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(err("IMM etas must be a nonempty list of positive values".into()));
            }
            let q = etas.len();
            let transition = match transition {
                Some(rows) => {
                    if rows.len() != q || rows.iter().any(|r| r.len() != q) {
                        return Err(err(format!("transition must be {q}x{q} to match the IMM models")));
                    }
                    DMatrix::from_fn(q, q, |i, j| rows[i][j])
                }
                None if q == 2 => DMatrix::from_row_slice(2, 2, &[0.98, 0.02, 0.5, 0.5]),
                None => DMatrix::from_element(q, q, 1.0 / q as f64),
            };
            let bad_row = (0..q).any(|i| {
                let row = transition.row(i);
                row.iter().any(|v| *v < 0.0) || (row.sum() - 1.0).abs() > 1e-12
            });
            if bad_row {
                return Err(err("transition rows must be nonnegative and sum to 1".into()));
            }
            let d_list = etas.iter().map(|e| d_star * *e).collect();
            (name, EstimatorKind::ImmkfDob { d_list, transition })
        }
    };
    let name = name.clone().unwrap_or_else(|| kind.label().to_string());
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(err(format!("name `{name}` must be nonempty and use only letters, digits, `_` or `-`")));
    }
    Ok(NamedEstimator::new(name, kind))
}

fn resolve(doc: &Doc, mut raw: RunConfig) -> Result<ResolvedConfig, ConfigError> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        raw.scenario.seed = v
            .trim()
            .parse()
            .map_err(|_| doc.err(SEED_ENV, None, format!("environment override `{v}` is not an unsigned integer")))?;
    }
    let s = &raw.scenario;
    let positive = |v: f64| v > 0.0 && v.is_finite();
    if !positive(s.dt) {
        return Err(doc.field_err("scenario.dt", "must be positive"));
    }
    if !(s.q_x >= 0.0 && s.q_x.is_finite()) {
        return Err(doc.field_err("scenario.q_x", "must be nonnegative"));
    }
    if !positive(s.r) {
        return Err(doc.field_err("scenario.r", "must be positive"));
    }
    if !positive(s.d_star) {
        return Err(doc.field_err("scenario.d_star", "must be positive"));
    }
    if !(s.x0_var >= 0.0 && s.x0_var.is_finite()) {
        return Err(doc.field_err("scenario.x0_var", "must be nonnegative"));
    }
    if s.steps == 0 {
        return Err(doc.field_err("scenario.steps", "must be at least 1"));
    }
    if !(s.profile.noise_var >= 0.0 && s.profile.noise_var.is_finite()) {
        return Err(doc.field_err("scenario.profile.noise_var", "must be nonnegative"));
    }
    if s.profile.levels.is_empty() {
        return Err(doc.field_err("scenario.profile.levels", "must not be empty"));
    }
    let profile = DisturbanceProfile::cycled(&s.profile.starts, &s.profile.levels)
        .and_then(|p| p.with_noise(DMatrix::identity(1, 1) * s.profile.noise_var))
        .map_err(|e| doc.field_err("scenario.profile.starts", e.to_string()))?;
    let sys = default_tracking_system(s.dt, s.q_x, s.r).map_err(|e| doc.field_err("scenario", e.to_string()))?;
    let x0 = GaussianBelief::new(nalgebra::DVector::zeros(2), DMatrix::identity(2, 2) * s.x0_var)
        .map_err(|e| doc.field_err("scenario.x0_var", e.to_string()))?;
    let truth = TruthModel::from_system(&sys)
        .with_initial(x0)
        .map_err(|e| doc.field_err("scenario.x0_var", e.to_string()))?;

    let h = &raw.harness;
    if h.trials == 0 {
        return Err(doc.field_err("harness.trials", "must be at least 1"));
    }
    let window = match h.window {
        Some([m1, m2]) => (m1, m2),
        None if DEFAULT_WINDOW.1 <= s.steps => DEFAULT_WINDOW,
        None => (1, s.steps),
    };
    if window.0 == 0 || window.0 > window.1 || window.1 > s.steps {
        return Err(doc.field_err(
            "harness.window",
            format!("[{}, {}] must satisfy 1 <= m1 <= m2 <= steps = {}", window.0, window.1, s.steps),
        ));
    }
    let eta_grid = match (&h.eta_grid, &h.log_eta_grid) {
        (Some(_), Some(_)) => return Err(doc.field_err("harness.log_eta_grid", "give either `eta_grid` or `log_eta_grid`, not both")),
        (Some(g), None) => g.clone(),
        (None, Some(l)) => l.iter().map(|v| v.exp()).collect(),
        (None, None) => default_eta_grid(),
    };
    let grid_field = if h.log_eta_grid.is_some() { "harness.log_eta_grid" } else { "harness.eta_grid" };
    if eta_grid.is_empty() {
        return Err(doc.field_err(grid_field, "must not be empty"));
    }
    if eta_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(doc.field_err(grid_field, "values must be positive and finite"));
    }

    let d_star = DMatrix::identity(1, 1) * s.d_star;
    let estimators = match &raw.estimators {
        None => default_estimators(&d_star),
        Some(list) => list
            .iter()
            .enumerate()
            .map(|(i, e)| resolve_estimator(doc, i, e, &d_star))
            .collect::<Result<_, _>>()?,
    };
    let mut names: Vec<&str> = estimators.iter().map(|e| e.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(doc.field_err("estimators", format!("duplicate estimator name `{}`; set `name` explicitly", w[0])));
    }
    if let Some(n) = names.iter().find(|n| n.starts_with("kfdob_eta")) {
        return Err(doc.field_err("estimators", format!("name `{n}` is reserved for the eta sweep")));
    }

    Ok(ResolvedConfig {
        raw,
        truth,
        profile,
        estimators,
        eta_grid,
        window,
    })
}

/// Parses and validates a configuration document. `file` only labels errors.
pub fn parse_config(text: &str, file: &str) -> Result<ResolvedConfig, ConfigError> {
    let doc = Doc {
        file: file.to_string(),
        text,
    };
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ConfigError {
            file: file.to_string(),
            line: Some(inner.line()),
            column: Some(inner.column()),
            field: if path == "." { String::new() } else { path },
            message: inner.to_string(),
        }
    })?;
    resolve(&doc, raw)
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let file = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        file: file.clone(),
        line: None,
        column: None,
        field: String::new(),
        message: format!("cannot read config: {e}"),
    })?;
    parse_config(&text, &file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = parse_config(r#"{"output_dir": "out"}"#, "c.json").unwrap();
        assert_eq!(c.steps(), DEFAULT_STEPS);
        assert_eq!(c.window, DEFAULT_WINDOW);
        assert_eq!(c.eta_grid.len(), 5);
        let names: Vec<_> = c.estimators.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["sise", "nkfdob", "kfdob", "mkckfdob", "immkfdob"]);
    }

    #[test]
    fn negative_trials_names_field_and_line() {
        let text = "{\n  \"output_dir\": \"o\",\n  \"harness\": {\n    \"trials\": -3\n  }\n}";
        let e = parse_config(text, "c.json").unwrap_err();
        assert_eq!(e.field, "harness.trials");
        assert_eq!(e.line, Some(4));
        assert!(e.to_string().starts_with("c.json:4:"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config(r#"{"output_dir": "o", "scenario": {"qx": 1}}"#, "c.json").unwrap_err();
        assert!(e.message.contains("unknown field"), "{e}");
        let e = parse_config(r#"{"output_dir": "o", "estimators": [{"kind": "sise", "eta": 1}]}"#, "c.json").unwrap_err();
        assert!(e.to_string().contains("estimators"), "{e}");
    }

    #[test]
    fn semantic_errors_are_anchored() {
        let text = "{\n\"output_dir\": \"o\",\n\"scenario\": {\"steps\": 100},\n\"harness\": {\n\"window\": [50, 200]\n}\n}";
        let e = parse_config(text, "c.json").unwrap_err();
        assert_eq!(e.field, "harness.window");
        assert_eq!(e.line, Some(5));
        let e = parse_config(r#"{"output_dir": "o", "harness": {"eta_grid": []}}"#, "c.json").unwrap_err();
        assert_eq!(e.field, "harness.eta_grid");
    }

    #[test]
    fn estimator_blocks() {
        let text = r#"{"output_dir": "o", "estimators": [
            {"kind": "kfdob", "name": "slow"},
            {"kind": "kfdob", "name": "fast", "log_eta": 20},
            {"kind": "mkckfdob", "sigma_d": 2.5},
            {"kind": "immkfdob", "log_etas": [0, 5]}
        ]}"#;
        let c = parse_config(text, "c.json").unwrap();
        assert_eq!(c.estimators.len(), 4);
        match &c.estimators[1].kind {
            EstimatorKind::KfDob { d } => assert!((d[(0, 0)] - DEFAULT_D_STAR * 20f64.exp()).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
        let dup = r#"{"output_dir": "o", "estimators": [{"kind": "sise"}, {"kind": "sise"}]}"#;
        assert!(parse_config(dup, "c.json").unwrap_err().message.contains("duplicate"));
    }
}
