//! Run configuration: defaults, validation and the flat `key = value` file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::perturb::PolicyName;

/// Loss weights λ0..λ4 for info, info_fg, img_cont, entropy, mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub info: f64,
    pub info_fg: f64,
    pub img_cont: f64,
    pub entropy: f64,
    pub mask: f64,
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.info, self.info_fg, self.img_cont, self.entropy, self.mask]
    }

    pub fn from_array(l: [f64; 5]) -> Self {
        Self { info: l[0], info_fg: l[1], img_cont: l[2], entropy: l[3], mask: l[4] }
    }

    pub fn zero() -> Self {
        Self::from_array([0.0; 5])
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::from_array([5.0, 1.0, 1.0, 0.1, 1.0])
    }
}

/// Adam settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 0.0002, beta1: 0.5, beta2: 0.999 }
    }
}

/// Complete, validated settings of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Number of clusters Y before overclustering.
    pub num_clusters: usize,
    pub overcluster_factor: usize,
    pub d_z: usize,
    pub d_c: usize,
    pub d_h: usize,
    /// Square image side H = W.
    pub image_size: usize,
    pub temperature: f64,
    pub loss_weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub perturb_policy: PolicyName,
    pub seed: u64,
    /// Channel width at the 4×4 bottleneck; 512 reproduces the reference
    /// architecture, smaller values scale every layer proportionally.
    pub base_channels: usize,
    /// Training budget in iterations (one D update and one G update each).
    pub steps: u64,
    pub checkpoint_interval: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            num_clusters: 200,
            overcluster_factor: default_overcluster_factor(PolicyName::Weak),
            d_z: 64,
            d_c: 8,
            d_h: 512,
            image_size: 128,
            temperature: 0.1,
            loss_weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            batch_size: 32,
            perturb_policy: PolicyName::Weak,
            seed: 0,
            base_channels: 512,
            steps: 1000,
            checkpoint_interval: 1000,
        }
    }
}

/// ×2 for bird-like data (trained with the strong policy), ×3 otherwise.
pub fn default_overcluster_factor(policy: PolicyName) -> usize {
    match policy {
        PolicyName::Strong => 2,
        PolicyName::Weak => 3,
    }
}

/// Every key accepted in a configuration file or override.
pub const KEYS: &[&str] = &[
    "num_clusters",
    "overcluster_factor",
    "d_z",
    "d_c",
    "d_h",
    "image_size",
    "temperature",
    "loss_weights",
    "lambda0",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda4",
    "learning_rate",
    "beta1",
    "beta2",
    "batch_size",
    "perturb_policy",
    "seed",
    "base_channels",
    "steps",
    "checkpoint_interval",
];

impl RunConfig {
    /// Y × overcluster factor: the width of the latent code and the number
    /// of centroids.
    pub fn effective_clusters(&self) -> usize {
        self.num_clusters * self.overcluster_factor
    }

    /// Number of 2× resolution stages between the 4×4 bottleneck and the image.
    pub fn stages(&self) -> usize {
        self.image_size.trailing_zeros() as usize - 2
    }

    /// Serializes to the flat key-value format accepted by [`validate_config`].
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let l = self.loss_weights.as_array();
        let entries = [
            ("num_clusters", self.num_clusters.to_string()),
            ("overcluster_factor", self.overcluster_factor.to_string()),
            ("d_z", self.d_z.to_string()),
            ("d_c", self.d_c.to_string()),
            ("d_h", self.d_h.to_string()),
            ("image_size", self.image_size.to_string()),
            ("temperature", self.temperature.to_string()),
            ("loss_weights", l.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")),
            ("learning_rate", self.optimizer.learning_rate.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("perturb_policy", self.perturb_policy.to_string()),
            ("seed", self.seed.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("steps", self.steps.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Reads a configuration file and validates it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        validate_config(&parse_kv(&text)?)
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Config(vec![violation(&format!("line {}", n + 1), "expected key = value")]))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Parses `KEY=VALUE` overrides and merges them over `base`.
pub fn apply_overrides(base: &mut BTreeMap<String, String>, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(vec![violation(o, "override must be KEY=VALUE")]))?;
        base.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(())
}

fn violation(field: &str, message: &str) -> Violation {
    Violation { field: field.to_string(), message: message.to_string() }
}

/// Builds a fully defaulted [`RunConfig`] from raw key-value pairs, or
/// returns every violated constraint.
pub fn validate_config(raw: &BTreeMap<String, String>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut errs = Vec::new();

    for k in raw.keys() {
        if !KEYS.contains(&k.as_str()) {
            errs.push(violation(k, "unknown key"));
        }
    }

    fn get<T: FromStr>(raw: &BTreeMap<String, String>, key: &str, slot: &mut T, errs: &mut Vec<Violation>) {
        if let Some(v) = raw.get(key) {
            match v.parse() {
                Ok(x) => *slot = x,
                Err(_) => errs.push(violation(key, &format!("cannot parse {v:?}"))),
            }
        }
    }

    get(raw, "perturb_policy", &mut cfg.perturb_policy, &mut errs);
    cfg.overcluster_factor = default_overcluster_factor(cfg.perturb_policy);
    get(raw, "num_clusters", &mut cfg.num_clusters, &mut errs);
    get(raw, "overcluster_factor", &mut cfg.overcluster_factor, &mut errs);
    get(raw, "d_z", &mut cfg.d_z, &mut errs);
    get(raw, "d_c", &mut cfg.d_c, &mut errs);
    get(raw, "d_h", &mut cfg.d_h, &mut errs);
    get(raw, "image_size", &mut cfg.image_size, &mut errs);
    get(raw, "temperature", &mut cfg.temperature, &mut errs);
    get(raw, "learning_rate", &mut cfg.optimizer.learning_rate, &mut errs);
    get(raw, "beta1", &mut cfg.optimizer.beta1, &mut errs);
    get(raw, "beta2", &mut cfg.optimizer.beta2, &mut errs);
    get(raw, "batch_size", &mut cfg.batch_size, &mut errs);
    get(raw, "seed", &mut cfg.seed, &mut errs);
    get(raw, "base_channels", &mut cfg.base_channels, &mut errs);
    get(raw, "steps", &mut cfg.steps, &mut errs);
    get(raw, "checkpoint_interval", &mut cfg.checkpoint_interval, &mut errs);

    let mut lambdas = cfg.loss_weights.as_array();
    if let Some(v) = raw.get("loss_weights") {
        let parts: Vec<_> = v.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts.iter().cloned().collect::<std::result::Result<Vec<_>, _>>() {
            Ok(p) if p.len() == 5 => lambdas.copy_from_slice(&p),
            _ => errs.push(violation("loss_weights", "expected five comma-separated numbers")),
        }
    }
    for (i, l) in lambdas.iter_mut().enumerate() {
        get(raw, &format!("lambda{i}"), l, &mut errs);
    }
    cfg.loss_weights = LossWeights::from_array(lambdas);

    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        errs.push(violation("temperature", "must be > 0"));
    }
    if cfg.num_clusters < 2 {
        errs.push(violation("num_clusters", "must be >= 2"));
    }
    if cfg.overcluster_factor < 1 {
        errs.push(violation("overcluster_factor", "must be >= 1"));
    }
    for (i, l) in lambdas.iter().enumerate() {
        if !(*l >= 0.0 && l.is_finite()) {
            errs.push(violation(&format!("lambda{i}"), "must be >= 0"));
        }
    }
    for (name, v) in [("d_z", cfg.d_z), ("d_c", cfg.d_c), ("d_h", cfg.d_h)] {
        if v < 1 {
            errs.push(violation(name, "must be >= 1"));
        }
    }
    if !cfg.image_size.is_power_of_two() || cfg.image_size < 16 {
        errs.push(violation("image_size", "must be a power of two >= 16"));
    }
    if cfg.batch_size < 2 {
        errs.push(violation("batch_size", "must be >= 2"));
    }
    if cfg.optimizer.learning_rate.is_nan() || cfg.optimizer.learning_rate <= 0.0 {
        errs.push(violation("learning_rate", "must be > 0"));
    }
    for (name, b) in [("beta1", cfg.optimizer.beta1), ("beta2", cfg.optimizer.beta2)] {
        if !(0.0..1.0).contains(&b) {
            errs.push(violation(name, "must lie in [0, 1)"));
        }
    }
    if cfg.base_channels < 32 || cfg.base_channels % 32 != 0 {
        errs.push(violation("base_channels", "must be a positive multiple of 32"));
    }
    if cfg.checkpoint_interval < 1 {
        errs.push(violation("checkpoint_interval", "must be >= 1"));
    }

    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}
