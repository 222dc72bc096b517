//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! [problem]
//! kind = quartic
//! dim = 4
//! noise = 0.1
//!
//! [algorithm]
//! tag = sotrgs
//! epsilon = 0.05
//!
//! [run]
//! seeds = 0, 1, 2
//! ```
//!
//! Unknown keys, duplicate keys, missing required keys and malformed values
//! are all errors that carry the offending line number.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use trgs_core::algorithms::{BtPolicy, TheoremTag};
use trgs_core::dro::Conjugate;
use trgs_core::problems::IMBALANCE_RATIOS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, when the error can be pinned to one.
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub features: usize,
    pub classes: usize,
    pub base_per_class: usize,
    pub ratios: Vec<f64>,
    /// `None` draws a fresh training set from each run seed.
    pub data_seed: Option<u64>,
    /// Per-class base count of the held-out test set.
    pub test_base: usize,
    /// Defaults to the training seed plus 1000.
    pub test_seed: Option<u64>,
}

impl DataSpec {
    /// Training and test seeds for a run.
    pub fn seeds(&self, run_seed: u64) -> (u64, u64) {
        let train = self.data_seed.unwrap_or(run_seed);
        (train, self.test_seed.unwrap_or(train + 1000))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Quartic { dim: usize, noise: f64 },
    Exp { dim: usize },
    Logistic(DataSpec),
    Mlp { data: DataSpec, hidden: usize },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Quartic { .. } => "quartic",
            ProblemKind::Exp { .. } => "exp",
            ProblemKind::Logistic(_) => "logistic",
            ProblemKind::Mlp { .. } => "mlp",
        }
    }

    pub fn data(&self) -> Option<&DataSpec> {
        match self {
            ProblemKind::Logistic(d) | ProblemKind::Mlp { data: d, .. } => Some(d),
            _ => None,
        }
    }

    fn has_hessian(&self) -> bool {
        !matches!(self, ProblemKind::Mlp { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Theorem(TheoremTag),
    /// Hand-set schedule; variance reduced when `s3` is given.
    Manual,
    Sgd { lr: f64, momentum: f64, batch: usize },
}

/// Smoothness constants; unset entries get problem defaults at run time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProfileOverrides {
    pub l0: Option<f64>,
    pub l1: Option<f64>,
    pub g0: Option<f64>,
    pub g1: Option<f64>,
    pub delta_f: Option<f64>,
    pub m0: Option<f64>,
    pub m1: Option<f64>,
    pub k0: Option<f64>,
    pub k1: Option<f64>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSpec {
    pub method: Method,
    pub policy: Option<BtPolicy>,
    pub epsilon: Option<f64>,
    pub profile: ProfileOverrides,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub s1: Option<usize>,
    pub s2: Option<usize>,
    pub s3: Option<usize>,
    pub q: Option<usize>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroSpec {
    pub conjugate: Conjugate,
    pub penalty: f64,
    pub eta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopKind {
    Fosp,
    Sosp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub seeds: Vec<u64>,
    pub full_batch: bool,
    pub lambda_min: bool,
    pub estimator_error: bool,
    pub check_invariants: bool,
    pub timing: bool,
    pub stop: Option<StopKind>,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    pub dro: Option<DroSpec>,
    pub run: RunSpec,
}

impl ExperimentConfig {
    /// Resolved `B_t` policy (`None` for SGD).
    pub fn policy(&self) -> Option<BtPolicy> {
        if let Some(p) = self.algorithm.policy {
            return Some(p);
        }
        Some(match self.algorithm.method {
            Method::Sgd { .. } => return None,
            Method::Theorem(TheoremTag::Sotrgs | TheoremTag::SotrgsVr) => BtPolicy::SampledHessian,
            Method::Theorem(TheoremTag::Drtr) => BtPolicy::ProjectedSubspaceHessian,
            _ => BtPolicy::Zero,
        })
    }

    /// Classification problems get per-class accuracy columns.
    pub fn is_classification(&self) -> bool {
        self.problem.kind.data().is_some()
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Section {
    header_line: usize,
    entries: BTreeMap<String, Entry>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError::at(e.line, format!("`{key}` expects {what}, got `{}`", e.value))),
        }
    }

    fn real(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        let v: Option<f64> = self.parse(key, "a real number")?;
        match (v, line) {
            (Some(x), Some(l)) if !x.is_finite() => Err(ConfigError::at(l, format!("`{key}` must be finite"))),
            _ => Ok(v),
        }
    }

    fn positive(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        let v = self.real(key)?;
        match (v, line) {
            (Some(x), Some(l)) if x <= 0.0 => Err(ConfigError::at(l, format!("`{key}` must be positive"))),
            _ => Ok(v),
        }
    }

    fn nonneg(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        let v = self.real(key)?;
        match (v, line) {
            (Some(x), Some(l)) if x < 0.0 => Err(ConfigError::at(l, format!("`{key}` must be nonnegative"))),
            _ => Ok(v),
        }
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        let line = self.entries.get(key).map(|e| e.line);
        let v: Option<usize> = self.parse(key, "a nonnegative integer")?;
        match (v, line) {
            (Some(0), Some(l)) if key != "iterations" => Err(ConfigError::at(l, format!("`{key}` must be at least 1"))),
            _ => Ok(v),
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                other => Err(ConfigError::at(e.line, format!("`{key}` expects true or false, got `{other}`"))),
            },
        }
    }

    fn required(&mut self, key: &str, section: &str) -> Result<Entry, ConfigError> {
        self.take(key)
            .ok_or_else(|| ConfigError::at(self.header_line, format!("missing required key `{key}` in [{section}]")))
    }

    fn reals(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        let Some(e) = self.take(key) else { return Ok(None) };
        e.value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ConfigError::at(e.line, format!("`{key}` expects a comma-separated list of reals")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn finish(self, section: &str) -> Result<(), ConfigError> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((k, e)) => Err(ConfigError::at(e.line, format!("unknown key `{k}` in [{section}]"))),
        }
    }
}

const SECTIONS: [&str; 4] = ["problem", "algorithm", "dro", "run"];

/// Every key a section may hold. Misspellings are caught here, before any
/// missing-key error could mask them; keys that do not apply to the chosen
/// problem or method are rejected later by `finish`.
fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "problem" => &[
            "kind", "dim", "noise", "x0", "features", "classes", "base_per_class", "ratios", "data_seed", "test_base",
            "test_seed", "hidden",
        ],
        "algorithm" => &[
            "tag", "policy", "rho", "epsilon", "delta", "s1", "s2", "s3", "q", "iterations", "beta", "lr", "momentum",
            "batch", "l0", "l1", "g0", "g1", "delta_f", "m0", "m1", "k0", "k1", "radius",
        ],
        "dro" => &["conjugate", "alpha", "penalty", "eta0"],
        "run" => &["seeds", "full_batch", "lambda_min", "estimator_error", "check_invariants", "timing", "stop", "c1", "c2"],
        _ => &[],
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>, ConfigError> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line_no, "malformed section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::at(line_no, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(ConfigError::at(line_no, format!("section [{name}] appears twice")));
            }
            sections.insert(name.to_string(), Section { header_line: line_no, entries: BTreeMap::new() });
            current = Some(name.to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line_no, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::at(line_no, "empty key"));
        }
        let sec = current
            .as_ref()
            .ok_or_else(|| ConfigError::at(line_no, "key outside of any section"))?;
        if !known_keys(sec).contains(&k) {
            return Err(ConfigError::at(line_no, format!("unknown key `{k}` in [{sec}]")));
        }
        let entries = &mut sections.get_mut(sec).expect("section was inserted").entries;
        if let Some(prev) = entries.get(k) {
            return Err(ConfigError::at(line_no, format!("duplicate key `{k}` (first set on line {})", prev.line)));
        }
        entries.insert(k.to_string(), Entry { value: v.to_string(), line: line_no });
    }
    Ok(sections)
}

fn parse_data(sec: &mut Section) -> Result<DataSpec, ConfigError> {
    let features = sec.count("features")?.unwrap_or(10);
    let classes_line = sec.entries.get("classes").map(|e| e.line).unwrap_or(sec.header_line);
    let classes = sec.count("classes")?.unwrap_or(10);
    let ratios_line = sec.entries.get("ratios").map(|e| e.line);
    let ratios = match sec.take("ratios") {
        None if classes == IMBALANCE_RATIOS.len() => IMBALANCE_RATIOS.to_vec(),
        None => return Err(ConfigError::at(classes_line, "`ratios` is required unless classes = 10")),
        Some(e) if e.value == "reference" => IMBALANCE_RATIOS.to_vec(),
        Some(e) if e.value == "balanced" => vec![1.0; classes],
        Some(e) => {
            sec.entries.insert("ratios".into(), e);
            sec.reals("ratios")?.unwrap_or_default()
        }
    };
    let rl = ratios_line.unwrap_or(classes_line);
    if ratios.len() != classes {
        return Err(ConfigError::at(rl, format!("{} ratios given for {classes} classes", ratios.len())));
    }
    if ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(ConfigError::at(rl, "ratios must lie in (0, 1]"));
    }
    if features < classes {
        return Err(ConfigError::at(classes_line, "the class means need features >= classes"));
    }
    let base_per_class = sec.count("base_per_class")?.unwrap_or(100);
    let data_seed = match sec.take("data_seed") {
        None => Some(0),
        Some(e) if e.value == "per-run" => None,
        Some(e) => Some(e.value.parse::<u64>().map_err(|_| {
            ConfigError::at(e.line, format!("`data_seed` expects a nonnegative integer or `per-run`, got `{}`", e.value))
        })?),
    };
    let test_base = sec.count("test_base")?.unwrap_or(300);
    let test_seed = sec.parse::<u64>("test_seed", "a nonnegative integer")?;
    Ok(DataSpec { features, classes, base_per_class, ratios, data_seed, test_base, test_seed })
}

fn parse_problem(mut sec: Section) -> Result<ProblemSpec, ConfigError> {
    let kind_entry = sec.required("kind", "problem")?;
    let kind = match kind_entry.value.as_str() {
        "quartic" => {
            let dim = sec.count("dim")?.unwrap_or(4);
            if dim < 2 {
                return Err(ConfigError::at(kind_entry.line, "the quartic saddle needs dim >= 2"));
            }
            ProblemKind::Quartic { dim, noise: sec.nonneg("noise")?.unwrap_or(0.0) }
        }
        "exp" => ProblemKind::Exp { dim: sec.count("dim")?.unwrap_or(2) },
        "logistic" => ProblemKind::Logistic(parse_data(&mut sec)?),
        "mlp" => {
            let data = parse_data(&mut sec)?;
            let hidden = sec.count("hidden")?.unwrap_or(16);
            ProblemKind::Mlp { data, hidden }
        }
        other => {
            return Err(ConfigError::at(
                kind_entry.line,
                format!("unknown problem kind `{other}` (expected quartic, exp, logistic or mlp)"),
            ))
        }
    };
    let x0 = sec.reals("x0")?;
    sec.finish("problem")?;
    Ok(ProblemSpec { kind, x0 })
}

fn parse_policy(e: &Entry, rho: Option<f64>) -> Result<BtPolicy, ConfigError> {
    Ok(match e.value.as_str() {
        "zero" | "normalized" => BtPolicy::Zero,
        "clipped" | "identity" => BtPolicy::ScaledIdentity {
            rho: rho.ok_or_else(|| ConfigError::at(e.line, "policy `clipped` needs `rho`"))?,
        },
        "hessian" => BtPolicy::SampledHessian,
        "subspace" => BtPolicy::ProjectedSubspaceHessian,
        other => {
            return Err(ConfigError::at(
                e.line,
                format!("unknown policy `{other}` (expected zero, clipped, hessian or subspace)"),
            ))
        }
    })
}

fn parse_algorithm(mut sec: Section) -> Result<(AlgorithmSpec, usize), ConfigError> {
    let tag_entry = sec.required("tag", "algorithm")?;
    let method = match tag_entry.value.as_str() {
        "sgd" => {
            let lr_line = sec.header_line;
            let lr = sec.nonneg("lr")?.ok_or_else(|| ConfigError::at(lr_line, "missing required key `lr` for sgd"))?;
            let m_line = sec.entries.get("momentum").map(|e| e.line);
            let momentum = sec.nonneg("momentum")?.unwrap_or(0.0);
            if momentum >= 1.0 {
                return Err(ConfigError::at(m_line.unwrap_or(lr_line), "momentum must lie in [0, 1)"));
            }
            Method::Sgd { lr, momentum, batch: sec.count("batch")?.unwrap_or(1) }
        }
        "manual" => Method::Manual,
        other => Method::Theorem(TheoremTag::parse(other).ok_or_else(|| {
            ConfigError::at(
                tag_entry.line,
                format!("unknown algorithm `{other}` (expected fotrgs, sotrgs, fotrgs-vr, sotrgs-vr, drtr, manual or sgd)"),
            )
        })?),
    };
    let rho = sec.positive("rho")?;
    let policy = match sec.take("policy") {
        None if rho.is_some() => Some(BtPolicy::ScaledIdentity { rho: rho.unwrap() }),
        None => None,
        Some(e) => {
            if matches!(method, Method::Sgd { .. }) {
                return Err(ConfigError::at(e.line, "sgd takes no trust-region policy"));
            }
            let p = parse_policy(&e, rho)?;
            let is_drtr = matches!(method, Method::Theorem(TheoremTag::Drtr));
            if (p == BtPolicy::ProjectedSubspaceHessian) != is_drtr {
                return Err(ConfigError::at(e.line, "the subspace policy is used exactly by drtr"));
            }
            Some(p)
        }
    };
    let eps_line = sec.entries.get("epsilon").map(|e| e.line);
    let epsilon = sec.positive("epsilon")?;
    if let (Some(eps), Some(l)) = (epsilon, eps_line) {
        if eps >= 1.0 {
            return Err(ConfigError::at(l, "epsilon must lie in (0, 1)"));
        }
    }
    if matches!(method, Method::Theorem(_)) && epsilon.is_none() {
        return Err(ConfigError::at(sec.header_line, "missing required key `epsilon` for a theorem schedule"));
    }
    let profile = ProfileOverrides {
        l0: sec.positive("l0")?,
        l1: sec.nonneg("l1")?,
        g0: sec.nonneg("g0")?,
        g1: sec.nonneg("g1")?,
        delta_f: sec.nonneg("delta_f")?,
        m0: sec.positive("m0")?,
        m1: sec.nonneg("m1")?,
        k0: sec.nonneg("k0")?,
        k1: sec.nonneg("k1")?,
        radius: sec.positive("radius")?,
    };
    let spec = AlgorithmSpec {
        method,
        policy,
        epsilon,
        profile,
        beta: sec.nonneg("beta")?,
        delta: sec.positive("delta")?,
        s1: sec.count("s1")?,
        s2: sec.count("s2")?,
        s3: sec.count("s3")?,
        q: sec.count("q")?,
        iterations: sec.count("iterations")?,
    };
    let header = sec.header_line;
    if method == Method::Manual {
        for (name, missing) in [("delta", spec.delta.is_none()), ("s1", spec.s1.is_none()), ("iterations", spec.iterations.is_none())] {
            if missing {
                return Err(ConfigError::at(header, format!("missing required key `{name}` for a manual schedule")));
            }
        }
    }
    if matches!(method, Method::Sgd { .. }) && spec.iterations.is_none() {
        return Err(ConfigError::at(header, "missing required key `iterations` for sgd"));
    }
    sec.finish("algorithm")?;
    Ok((spec, tag_entry.line))
}

fn parse_dro(mut sec: Section) -> Result<DroSpec, ConfigError> {
    let e = sec.required("conjugate", "dro")?;
    let alpha_line = sec.entries.get("alpha").map(|a| a.line);
    let alpha = sec.real("alpha")?;
    let need_alpha = || {
        let a = alpha.ok_or_else(|| ConfigError::at(e.line, format!("conjugate `{}` needs `alpha`", e.value)))?;
        if !(a > 0.0 && a < 1.0) {
            return Err(ConfigError::at(alpha_line.unwrap_or(e.line), "alpha must lie in (0, 1)"));
        }
        Ok(a)
    };
    let conjugate = match e.value.as_str() {
        "chi2" => Conjugate::ChiSquare,
        "smoothed-chi2" => Conjugate::SmoothedChiSquare,
        "kl" => Conjugate::Kl,
        "cvar" => Conjugate::Cvar { alpha: need_alpha()? },
        "smoothed-cvar" => Conjugate::SmoothedCvar { alpha: need_alpha()? },
        other => {
            return Err(ConfigError::at(
                e.line,
                format!("unknown conjugate `{other}` (expected chi2, smoothed-chi2, kl, cvar or smoothed-cvar)"),
            ))
        }
    };
    if alpha.is_some() && !matches!(conjugate, Conjugate::Cvar { .. } | Conjugate::SmoothedCvar { .. }) {
        return Err(ConfigError::at(alpha_line.unwrap_or(e.line), "`alpha` applies only to CVaR conjugates"));
    }
    let penalty = sec.positive("penalty")?.unwrap_or(1.0);
    let eta0 = sec.real("eta0")?.unwrap_or(0.0);
    sec.finish("dro")?;
    Ok(DroSpec { conjugate, penalty, eta0 })
}

fn parse_seeds(e: &Entry) -> Result<Vec<u64>, ConfigError> {
    let bad = || ConfigError::at(e.line, format!("`seeds` expects integers like `0, 1, 2` or `0..5`, got `{}`", e.value));
    let seeds = if let Some((a, b)) = e.value.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        e.value.split(',').map(|s| s.trim().parse::<u64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err(ConfigError::at(e.line, "`seeds` is empty"));
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(ConfigError::at(e.line, "`seeds` contains duplicates"));
    }
    Ok(seeds)
}

fn parse_run(mut sec: Section) -> Result<RunSpec, ConfigError> {
    let seeds = parse_seeds(&sec.required("seeds", "run")?)?;
    let stop = match sec.take("stop") {
        None => None,
        Some(e) => match e.value.as_str() {
            "none" => None,
            "fosp" => Some(StopKind::Fosp),
            "sosp" => Some(StopKind::Sosp),
            other => return Err(ConfigError::at(e.line, format!("unknown stop rule `{other}` (expected none, fosp or sosp)"))),
        },
    };
    let spec = RunSpec {
        seeds,
        full_batch: sec.flag("full_batch", true)?,
        lambda_min: sec.flag("lambda_min", false)?,
        estimator_error: sec.flag("estimator_error", false)?,
        check_invariants: sec.flag("check_invariants", true)?,
        timing: sec.flag("timing", false)?,
        stop,
        c1: sec.positive("c1")?.unwrap_or(1.0),
        c2: sec.positive("c2")?.unwrap_or(1.0),
    };
    sec.finish("run")?;
    Ok(spec)
}

/// Parses and validates a configuration, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut sections = split_sections(text)?;
    let mut need = |name: &str| sections.remove(name).ok_or_else(|| ConfigError::general(format!("missing section [{name}]")));
    let problem = parse_problem(need("problem")?)?;
    let (algorithm, tag_line) = parse_algorithm(need("algorithm")?)?;
    let run = parse_run(need("run")?)?;
    let dro_line = sections.get("dro").map(|s| s.header_line);
    let dro = sections.remove("dro").map(parse_dro).transpose()?;

    let config = ExperimentConfig { problem, algorithm, dro, run };
    // capability gates
    let policy = config.policy();
    let needs_hessian = matches!(policy, Some(BtPolicy::SampledHessian));
    if needs_hessian && !config.problem.kind.has_hessian() {
        return Err(ConfigError::at(
            tag_line,
            format!("capability: this method samples Hessians, which problem `{}` does not provide", config.problem.kind.name()),
        ));
    }
    if let (true, Some(d)) = (needs_hessian, &config.dro) {
        if !d.conjugate.is_smooth() {
            return Err(ConfigError::at(
                dro_line.unwrap_or(tag_line),
                "capability: sampled Hessians of the DRO objective need a smooth conjugate",
            ));
        }
    }
    if config.dro.is_some() && config.problem.kind.data().is_none() {
        return Err(ConfigError::at(dro_line.unwrap_or(1), "the [dro] section needs a classification problem"));
    }
    if config.run.stop.is_some() && config.algorithm.epsilon.is_none() {
        return Err(ConfigError::general("a stop rule needs `epsilon` in [algorithm]"));
    }
    if config.run.stop == Some(StopKind::Sosp) && !config.problem.kind.has_hessian() {
        return Err(ConfigError::general("capability: the sosp stop rule needs full Hessians"));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\nkind = quartic\n[algorithm]\ntag = sotrgs\nepsilon = 0.05\n[run]\nseeds = 0\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.problem.kind, ProblemKind::Quartic { dim: 4, noise: 0.0 });
        assert_eq!(c.run.seeds, vec![0]);
        assert_eq!(c.policy(), Some(BtPolicy::SampledHessian));
        assert!(c.run.check_invariants && c.run.full_batch && !c.run.timing);
        assert_eq!((c.run.c1, c.run.c2), (1.0, 1.0));
    }

    #[test]
    fn unknown_key_names_line() {
        let text = MINIMAL.replace("epsilon = 0.05\n", "epsilon = 0.05\nlearnig_rate = 0.1\n");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("learnig_rate"));
    }

    #[test]
    fn type_mismatch_and_missing_key() {
        let e = parse_config(&MINIMAL.replace("0.05", "small")).unwrap_err();
        assert_eq!(e.line, Some(5));
        let e = parse_config(&MINIMAL.replace("seeds = 0\n", "")).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(e.message.contains("seeds"));
        let e = parse_config(&MINIMAL.replace("kind = quartic\n", "")).unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn second_order_on_mlp_is_rejected() {
        let e = parse_config(&MINIMAL.replace("quartic", "mlp")).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(e.message.starts_with("capability"));
    }

    #[test]
    fn duplicates_and_sections() {
        let e = parse_config(&MINIMAL.replace("kind = quartic\n", "kind = quartic\nkind = exp\n")).unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(parse_config(&format!("{MINIMAL}[extra]\n")).is_err());
        assert!(parse_config("dim = 3\n").unwrap_err().message.contains("outside"));
    }

    #[test]
    fn seed_lists_and_ranges() {
        let c = parse_config(&MINIMAL.replace("seeds = 0", "seeds = 2..5")).unwrap();
        assert_eq!(c.run.seeds, vec![2, 3, 4]);
        assert!(parse_config(&MINIMAL.replace("seeds = 0", "seeds = 1, 1")).is_err());
    }

    #[test]
    fn fairness_config() {
        let text = "[problem]\nkind = logistic\n[algorithm]\ntag = fotrgs\nepsilon = 0.1\n[dro]\nconjugate = smoothed-cvar\nalpha = 0.5\npenalty = 0.3\n[run]\nseeds = 0..5\n";
        let c = parse_config(text).unwrap();
        assert!(c.is_classification());
        assert_eq!(c.dro.unwrap().conjugate, Conjugate::SmoothedCvar { alpha: 0.5 });
        assert_eq!(c.problem.kind.data().unwrap().ratios.len(), 10);
        let bad = text.replace("alpha = 0.5", "alpha = 1.5");
        assert_eq!(parse_config(&bad).unwrap_err().line, Some(8));
    }
}
