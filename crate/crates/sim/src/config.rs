//! Experiment configuration: a TOML file of `[section]` tables with scalar
//! or array values, plus `--set section.key=value` overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use gpmpcc_core::mpcc::MpccConfig;
use gpmpcc_core::solver::SqpOptions;
use sha2::{Digest, Sha256};
use toml::Value;

use crate::variant::Variant;

/// One problem found in a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigIssue {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

/// All problems found, in file order.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub source_name: String,
    pub issues: Vec<ConfigIssue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} invalid configuration value(s) in {}", self.issues.len(), self.source_name)?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(source_name: &str, key: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Self { source_name: source_name.into(), issues: vec![ConfigIssue { line, key: key.into(), message: message.into() }] }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: Value,
    line: Option<usize>,
}

/// Flattened `section.key → value` map with source lines.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RawConfig {
    source_name: String,
    entries: BTreeMap<String, Entry>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

impl RawConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        type Doc = BTreeMap<String, toml::Spanned<BTreeMap<String, toml::Spanned<Value>>>>;
        let doc: Doc = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            ConfigError::single(source_name, "<syntax>", line, e.message().trim().to_string())
        })?;
        let mut entries = BTreeMap::new();
        for (section, table) in doc {
            for (key, value) in table.into_inner() {
                let line = line_of(text, value.span().start);
                entries.insert(format!("{section}.{key}"), Entry { value: value.into_inner(), line: Some(line) });
            }
        }
        Ok(Self { source_name: source_name.into(), entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::single(&name, "<file>", None, format!("cannot read {name}: {e}")))?;
        Self::parse(&text, &name)
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    /// Apply `section.key=value`. The value is read as TOML, falling back to a
    /// bare string.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::single("--set", assignment, None, "expected key=value"));
        };
        let key = key.trim();
        if key.split('.').count() != 2 || key.split('.').any(str::is_empty) {
            return Err(ConfigError::single("--set", key, None, "keys have the form section.key"));
        }
        let raw = value.trim();
        let value = toml::from_str::<BTreeMap<String, Value>>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut m| m.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.entries.insert(key.to_string(), Entry { value, line: None });
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Hex SHA-256 of the sorted `key=value` lines; independent of key order
    /// and formatting in the file.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, e) in &self.entries {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(canonical(&e.value).as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn canonical(v: &Value) -> String {
    match v {
        Value::Float(f) => format!("{f:?}"),
        Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        Value::Table(t) => format!("{{{}}}", t.iter().map(|(k, v)| format!("{k}={}", canonical(v))).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Typed access that records every problem instead of stopping at the first.
pub struct Reader<'a> {
    raw: &'a RawConfig,
    issues: Vec<ConfigIssue>,
    used: BTreeSet<String>,
}

impl<'a> Reader<'a> {
    pub fn new(raw: &'a RawConfig) -> Self {
        Self { raw, issues: Vec::new(), used: BTreeSet::new() }
    }

    fn entry(&mut self, key: &str) -> Option<&'a Entry> {
        self.used.insert(key.to_string());
        self.raw.entries.get(key)
    }

    pub fn line(&self, key: &str) -> Option<usize> {
        self.raw.entries.get(key).and_then(|e| e.line)
    }

    pub fn fail(&mut self, key: &str, message: impl Into<String>) {
        let line = self.line(key);
        self.issues.push(ConfigIssue { line, key: key.into(), message: message.into() });
    }

    /// Record `message` unless `ok`.
    pub fn check(&mut self, key: &str, ok: bool, message: &str) {
        if !ok {
            self.fail(key, message);
        }
    }

    pub fn f64(&mut self, key: &str, default: f64) -> f64 {
        match self.entry(key).map(|e| &e.value) {
            None => default,
            Some(Value::Float(f)) => *f,
            Some(Value::Integer(i)) => *i as f64,
            Some(_) => {
                self.fail(key, "expected a number");
                default
            }
        }
    }

    pub fn usize(&mut self, key: &str, default: usize) -> usize {
        match self.entry(key).map(|e| &e.value) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as usize,
            Some(_) => {
                self.fail(key, "expected a non-negative integer");
                default
            }
        }
    }

    pub fn u64(&mut self, key: &str, default: u64) -> u64 {
        self.usize(key, default as usize) as u64
    }

    pub fn bool(&mut self, key: &str, default: bool) -> bool {
        match self.entry(key).map(|e| &e.value) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(_) => {
                self.fail(key, "expected true or false");
                default
            }
        }
    }

    pub fn string(&mut self, key: &str, default: &str) -> String {
        match self.entry(key).map(|e| &e.value) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.fail(key, "expected a string");
                default.to_string()
            }
        }
    }

    pub fn f64_array<const N: usize>(&mut self, key: &str, default: [f64; N]) -> [f64; N] {
        match self.entry(key).map(|e| &e.value) {
            None => default,
            Some(Value::Array(a)) if a.len() == N => {
                let mut out = default;
                for (o, v) in out.iter_mut().zip(a) {
                    match v {
                        Value::Float(f) => *o = *f,
                        Value::Integer(i) => *o = *i as f64,
                        _ => {
                            self.fail(key, "expected numbers");
                            return default;
                        }
                    }
                }
                out
            }
            Some(_) => {
                self.fail(key, format!("expected an array of {N} numbers"));
                default
            }
        }
    }

    /// Strings from an array or one comma-separated string.
    pub fn string_list(&mut self, key: &str, default: &[&str]) -> Vec<String> {
        match self.entry(key).map(|e| &e.value) {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(Value::String(s)) => s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect(),
            Some(Value::Array(a)) if a.iter().all(|v| v.is_str()) => a.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect(),
            Some(_) => {
                self.fail(key, "expected a list of strings");
                default.iter().map(|s| s.to_string()).collect()
            }
        }
    }

    /// Seeds from an integer array or a range string such as `"1..20"` (inclusive).
    pub fn seeds(&mut self, key: &str, default: &[u64]) -> Vec<u64> {
        match self.entry(key).map(|e| &e.value) {
            None => default.to_vec(),
            Some(Value::Integer(i)) if *i >= 0 => vec![*i as u64],
            Some(Value::Array(a)) if a.iter().all(|v| matches!(v, Value::Integer(i) if *i >= 0)) => {
                a.iter().map(|v| v.as_integer().unwrap_or_default() as u64).collect()
            }
            Some(Value::String(s)) => match parse_seed_range(s) {
                Some(v) => v,
                None => {
                    self.fail(key, "expected a range like \"1..20\" or a list of integers");
                    default.to_vec()
                }
            },
            Some(_) => {
                self.fail(key, "expected a range like \"1..20\" or a list of integers");
                default.to_vec()
            }
        }
    }

    /// Keys present in the file but never read.
    pub fn reject_unknown(&mut self) {
        let unknown: Vec<String> = self.raw.entries.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        for k in unknown {
            self.fail(&k, "unknown key");
        }
    }

    pub fn finish(mut self) -> Result<(), ConfigError> {
        if self.issues.is_empty() {
            Ok(())
        } else {
            self.issues.sort_by_key(|i| (i.line.unwrap_or(usize::MAX), i.key.clone()));
            Err(ConfigError { source_name: self.raw.source_name.clone(), issues: self.issues })
        }
    }
}

/// Inclusive `a..b` or a comma list such as `1,2,5`.
pub fn parse_seed_range(s: &str) -> Option<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().ok()?;
        let b: u64 = b.trim().trim_start_matches('=').parse().ok()?;
        return (a <= b).then(|| (a..=b).collect());
    }
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

/// Gaussian process and sparse-approximation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct GpSettings {
    pub data_points: usize,
    pub training_seed: u64,
    pub fit_hyperparameters: bool,
    pub hyper_budget: usize,
    /// Lower bound of the fitted noise variance.
    pub noise_floor: f64,
    pub inducing_points: usize,
    pub inducing_decay: f64,
    pub reuse_tolerance: f64,
}

/// Tube settings beyond the ones in [`MpccConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TubeSettings {
    pub min_radius_fraction: f64,
    pub include_process_noise: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub track_file: PathBuf,
    pub track_half_width: f64,
    pub track_closed: bool,
    pub vehicle_file: Option<PathBuf>,
    pub perturbation: f64,
    pub perturbation_seed: u64,
    pub substeps: usize,
    /// Noise power spectral density on `(vx, vy, ω)`; per-step variance is `psd·Ts`.
    pub noise_psd: [f64; 3],
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub max_steps: usize,
    pub divergence_factor: f64,
    pub mpcc: MpccConfig,
    pub sqp: SqpOptions,
    pub tube: TubeSettings,
    pub cold_start_rounds: usize,
    pub gp: GpSettings,
    pub hash: String,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

impl ExperimentConfig {
    /// Validate `raw`; relative paths are resolved against `base_dir`.
    pub fn from_raw(raw: &RawConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut r = Reader::new(raw);
        let d = MpccConfig::default();
        let s = SqpOptions::default();

        let track = r.string("track.file", "");
        r.check("track.file", !track.is_empty(), "a track file is required");
        let track_file = resolve(base_dir, &track);
        if !track.is_empty() && !track_file.is_file() {
            r.fail("track.file", format!("track file not found: {}", track_file.display()));
        }
        let track_half_width = r.f64("track.half_width", 0.18);
        r.check("track.half_width", track_half_width > 0.0, "must be positive");
        let track_closed = r.bool("track.closed", true);

        let vehicle = r.string("vehicle.file", "");
        let vehicle_file = (!vehicle.is_empty()).then(|| resolve(base_dir, &vehicle));
        if let Some(p) = &vehicle_file {
            if !p.is_file() {
                r.fail("vehicle.file", format!("vehicle file not found: {}", p.display()));
            }
        }
        let perturbation = r.f64("vehicle.perturbation", 0.15);
        r.check("vehicle.perturbation", (0.0..1.0).contains(&perturbation), "must lie in [0, 1)");
        let perturbation_seed = r.u64("vehicle.perturbation_seed", 1);
        let substeps = r.usize("vehicle.substeps", 1);
        r.check("vehicle.substeps", substeps >= 1, "must be at least 1");

        let noise_psd = r.f64_array("noise.psd", [0.0; 3]);
        r.check("noise.psd", noise_psd.iter().all(|v| *v >= 0.0 && v.is_finite()), "entries must be finite and non-negative");

        let names = r.string_list("experiment.variants", &["baseline", "gp-full", "gp-sparse", "reference"]);
        let mut variants = Vec::new();
        for n in &names {
            match n.parse::<Variant>() {
                Ok(v) if !variants.contains(&v) => variants.push(v),
                Ok(_) => r.fail("experiment.variants", format!("duplicate variant `{n}`")),
                Err(e) => r.fail("experiment.variants", e),
            }
        }
        r.check("experiment.variants", !names.is_empty(), "at least one variant is required");
        let seeds = r.seeds("experiment.seeds", &[1]);
        r.check("experiment.seeds", !seeds.is_empty(), "at least one seed is required");
        let output_dir = resolve(base_dir, &r.string("experiment.output_dir", "out"));
        let max_steps = r.usize("experiment.max_steps", 1000);
        r.check("experiment.max_steps", max_steps >= 1, "must be at least 1");
        let divergence_factor = r.f64("experiment.divergence_factor", 5.0);
        r.check("experiment.divergence_factor", divergence_factor > 1.0, "must exceed 1");

        let rate = r.f64_array("mpcc.input_rate_weight", [d.input_rate_weight[0][0], d.input_rate_weight[1][1]]);
        let rate_cross = r.f64("mpcc.input_rate_cross_weight", d.input_rate_weight[0][1]);
        let mpcc = MpccConfig {
            horizon: r.usize("mpcc.horizon", d.horizon),
            contouring_weight: r.f64("mpcc.contouring_weight", d.contouring_weight),
            lag_weight: r.f64("mpcc.lag_weight", d.lag_weight),
            progress_weight: r.f64("mpcc.progress_weight", d.progress_weight),
            input_rate_weight: [[rate[0], rate_cross], [rate_cross, rate[1]]],
            progress_rate_weight: r.f64("mpcc.progress_rate_weight", d.progress_rate_weight),
            slack_quadratic: r.f64("mpcc.slack_quadratic", d.slack_quadratic),
            slack_linear: r.f64("mpcc.slack_linear", d.slack_linear),
            tightened_steps: r.usize("mpcc.tightened_steps", d.tightened_steps),
            chi2_level: r.f64("mpcc.chi2_level", d.chi2_level),
            progress_max: r.f64("mpcc.progress_max", d.progress_max),
            steer_max: d.steer_max,
        };
        mpcc_issues(&mut r, &mpcc);

        let sqp = SqpOptions {
            max_iterations: r.usize("solver.max_iterations", s.max_iterations),
            tolerance: r.f64("solver.tolerance", s.tolerance),
            levenberg: r.f64("solver.levenberg", s.levenberg),
            ..s
        };
        r.check("solver.max_iterations", sqp.max_iterations >= 1, "must be at least 1");
        r.check("solver.tolerance", sqp.tolerance > 0.0, "must be positive");
        r.check("solver.levenberg", sqp.levenberg >= 0.0, "must be non-negative");
        let cold_start_rounds = r.usize("solver.cold_start_rounds", 2);

        let tube = TubeSettings {
            min_radius_fraction: r.f64("tube.min_radius_fraction", 0.1),
            include_process_noise: r.bool("tube.include_process_noise", true),
        };
        r.check("tube.min_radius_fraction", (0.0..1.0).contains(&tube.min_radius_fraction), "must lie in [0, 1)");

        let gp = GpSettings {
            data_points: r.usize("gp.data_points", 350),
            training_seed: r.u64("gp.training_seed", 1000),
            fit_hyperparameters: r.bool("gp.fit_hyperparameters", true),
            hyper_budget: r.usize("gp.hyper_budget", 400),
            noise_floor: r.f64("gp.noise_floor", 1e-6),
            inducing_points: r.usize("gp.inducing_points", 10),
            inducing_decay: r.f64("gp.inducing_decay", 1.15),
            reuse_tolerance: r.f64("gp.reuse_tolerance", 0.05),
        };
        r.check("gp.data_points", gp.data_points >= 1, "must be at least 1");
        r.check("gp.noise_floor", gp.noise_floor > 0.0 && gp.noise_floor < 1e2, "must lie in (0, 100)");
        r.check("gp.inducing_points", gp.inducing_points >= 1, "must be at least 1");
        r.check("gp.inducing_decay", gp.inducing_decay > 0.0, "must be positive");
        r.check("gp.reuse_tolerance", gp.reuse_tolerance >= 0.0, "must be non-negative");

        r.reject_unknown();
        r.finish()?;
        Ok(Self {
            track_file,
            track_half_width,
            track_closed,
            vehicle_file,
            perturbation,
            perturbation_seed,
            substeps,
            noise_psd,
            variants,
            seeds,
            output_dir,
            max_steps,
            divergence_factor,
            mpcc,
            sqp,
            tube,
            cold_start_rounds,
            gp,
            hash: raw.hash(),
        })
    }

    /// Load, apply overrides and validate. Paths are relative to the file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.set(o)?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_raw(&raw, &base)
    }
}

fn mpcc_issues(r: &mut Reader<'_>, m: &MpccConfig) {
    r.check("mpcc.horizon", m.horizon >= 2, "must be at least 2");
    for (key, v) in [
        ("mpcc.contouring_weight", m.contouring_weight),
        ("mpcc.lag_weight", m.lag_weight),
        ("mpcc.progress_weight", m.progress_weight),
        ("mpcc.progress_rate_weight", m.progress_rate_weight),
        ("mpcc.slack_quadratic", m.slack_quadratic),
        ("mpcc.chi2_level", m.chi2_level),
    ] {
        r.check(key, v >= 0.0 && v.is_finite(), "must be finite and non-negative");
    }
    r.check("mpcc.slack_linear", m.slack_linear > 0.0, "must be positive (exact penalty)");
    let w = m.input_rate_weight;
    r.check("mpcc.input_rate_weight", w[0][0] >= 0.0 && w[1][1] >= 0.0 && w[0][0] * w[1][1] >= w[0][1] * w[0][1], "must form a positive semidefinite matrix with mpcc.input_rate_cross_weight");
    r.check("mpcc.tightened_steps", m.tightened_steps >= 1 && m.tightened_steps <= m.horizon, "must lie in 1..=mpcc.horizon");
    r.check("mpcc.progress_max", m.progress_max > 0.0, "must be positive");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse(text, "test.toml").unwrap()
    }

    #[test]
    fn flattens_sections_with_lines() {
        let r = raw("[a]\nx = 1\n\n[b]\ny = \"s\"\n");
        assert_eq!(r.keys().collect::<Vec<_>>(), vec!["a.x", "b.y"]);
        let mut rd = Reader::new(&r);
        assert_eq!(rd.line("b.y"), Some(5));
        assert_eq!(rd.usize("a.x", 0), 1);
    }

    #[test]
    fn hash_ignores_order_and_formatting() {
        let a = raw("[a]\nx = 1\ny = 2.5\n[b]\nz = [1, 2]\n");
        let b = raw("[b]\nz=[1,2]\n\n[a]\ny   = 2.50\nx = 1 # comment\n");
        assert_eq!(a.hash(), b.hash());
        let c = raw("[a]\nx = 2\ny = 2.5\n[b]\nz = [1, 2]\n");
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn overrides_parse_values() {
        let mut r = raw("[mpcc]\nhorizon = 30\n");
        r.set("mpcc.horizon=20").unwrap();
        r.set("experiment.variants=baseline,gp-sparse").unwrap();
        let mut rd = Reader::new(&r);
        assert_eq!(rd.usize("mpcc.horizon", 0), 20);
        assert_eq!(rd.string_list("experiment.variants", &[]), vec!["baseline", "gp-sparse"]);
        assert!(r.clone().set("nodot=1").is_err());
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let e = RawConfig::parse("[a]\nx = 1\ny = = 2\n", "bad.toml").unwrap_err();
        assert_eq!(e.issues[0].line, Some(3));
    }

    #[test]
    fn reader_aggregates_issues() {
        let r = raw("[mpcc]\ncontouring_weight = -1\nhorizon = \"x\"\n[zzz]\nq = 1\n");
        let mut rd = Reader::new(&r);
        let m = rd.f64("mpcc.contouring_weight", 0.0);
        rd.check("mpcc.contouring_weight", m >= 0.0, "must be non-negative");
        rd.usize("mpcc.horizon", 30);
        rd.reject_unknown();
        let e = rd.finish().unwrap_err();
        let lines: Vec<_> = e.issues.iter().map(|i| (i.line, i.key.as_str())).collect();
        assert_eq!(lines, vec![(Some(2), "mpcc.contouring_weight"), (Some(3), "mpcc.horizon"), (Some(5), "zzz.q")]);
    }

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("1..5"), Some(vec![1, 2, 3, 4, 5]));
        assert_eq!(parse_seed_range("3,1"), Some(vec![3, 1]));
        assert_eq!(parse_seed_range("5..1"), None);
    }
}
