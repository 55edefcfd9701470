//! Experiment configuration: a flat key-value text format with section
//! headers, plus typed accessors that assemble the library's config
//! structs. The grammar is documented in `docs/FORMATS.md`.

use crate::data::{self, DatasetSplit};
use crate::dbn::{FinetuneConfig, RecoveryGuard};
use crate::error::{Error, Result};
use crate::evaluation::{AisConfig, BetaSchedule, DEFAULT_EXACT_LIMIT};
use crate::math::derive_seed;
use crate::pruning::{PruneSchedule, PruneStrategy};
use crate::rbm::{Schedule, TrainConfig};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Seed-derivation tags for the pipeline stages, so one experiment seed
/// drives every stage through disjoint streams.
pub mod seed_tags {
    pub const AIS: u64 = 0x0A15;
    pub const FINETUNE: u64 = 0x0F17;
    pub const EXPORT: u64 = 0x0E86;
    pub const PRUNE_RETRAIN: u64 = 0x0987;
}

/// Parsed config file: `[section]` headers over `key = value` lines.
/// `#` starts a comment (whole line, or after ` #`).
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    raw: Vec<u8>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new(); // top-level section
        sections.entry(current.clone()).or_default();

        for (line_no, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find(" #") {
                Some(idx) => &raw_line[..idx],
                None => raw_line,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", line_no + 1))
                })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            sections
                .get_mut(&current)
                .expect("current section inserted above")
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections, raw: text.as_bytes().to_vec() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(|v| v.as_str())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.get(section).is_some_and(|s| !s.is_empty())
    }

    fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing [{section}].{key}")))
    }

    fn parse_value<T: std::str::FromStr>(&self, section: &str, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("[{section}].{key}: cannot parse {v:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => self.parse_value(section, key, v).map(Some),
        }
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let v = self.require(section, key)?;
        self.parse_value(section, key, v)
    }

    /// SHA-256 of the raw config text, hex-encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(&self.raw);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `"0.05"` as a constant or `"0.5@0 0.9@5"` as milestones.
fn parse_schedule_f64(section: &str, key: &str, v: &str) -> Result<Schedule<f64>> {
    let bad = || Error::Config(format!("[{section}].{key}: bad schedule {v:?}"));
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() == 1 && !parts[0].contains('@') {
        return Ok(Schedule::Constant(parts[0].parse().map_err(|_| bad())?));
    }
    let mut ms = Vec::new();
    for p in parts {
        let (val, epoch) = p.split_once('@').ok_or_else(bad)?;
        ms.push((epoch.parse().map_err(|_| bad())?, val.parse().map_err(|_| bad())?));
    }
    Ok(Schedule::Milestones(ms))
}

/// Parses CD steps: `"1"`, `"ramp:25"`, or `"1@0 5@10"` milestones.
fn parse_cd_schedule(section: &str, key: &str, v: &str, epochs: usize) -> Result<Schedule<u32>> {
    let bad = || Error::Config(format!("[{section}].{key}: bad schedule {v:?}"));
    if let Some(target) = v.strip_prefix("ramp:") {
        return Ok(Schedule::cd_ramp(target.trim().parse().map_err(|_| bad())?, epochs));
    }
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() == 1 && !parts[0].contains('@') {
        return Ok(Schedule::Constant(parts[0].parse().map_err(|_| bad())?));
    }
    let mut ms = Vec::new();
    for p in parts {
        let (val, epoch) = p.split_once('@').ok_or_else(bad)?;
        ms.push((epoch.parse().map_err(|_| bad())?, val.parse().map_err(|_| bad())?));
    }
    Ok(Schedule::Milestones(ms))
}

/// A config file resolved against the CLI flags: the mandatory seed, the
/// output directory, and every referenced path checked at startup.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub file: ConfigFile,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// CLI flags override the file; the seed is mandatory in one of the
    /// two places.
    pub fn resolve(
        file: ConfigFile,
        seed_flag: Option<u64>,
        out_flag: Option<PathBuf>,
    ) -> Result<Self> {
        let seed = match seed_flag {
            Some(s) => s,
            None => file
                .get_parsed::<u64>("", "seed")?
                .ok_or_else(|| Error::Config("a seed is mandatory: set top-level `seed` or pass --seed".into()))?,
        };
        let out_dir = out_flag
            .or_else(|| file.get("output", "dir").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(ExperimentConfig { file, seed, out_dir })
    }

    fn dataset_path(&self, key: &str) -> Result<PathBuf> {
        let p = PathBuf::from(self.file.require("dataset", key)?);
        if !p.exists() {
            return Err(Error::Config(format!(
                "[dataset].{key}: path {} does not exist",
                p.display()
            )));
        }
        Ok(p)
    }

    fn load_split(&self, images_key: &str, labels_key: &str, tag: &str) -> Result<DatasetSplit> {
        let loader = self.file.get("dataset", "loader").unwrap_or("idx");
        let mut split = match loader {
            "idx" => {
                let images = self.dataset_path(images_key)?;
                let labels = match self.file.get("dataset", labels_key) {
                    Some(_) => Some(self.dataset_path(labels_key)?),
                    None => None,
                };
                data::load_idx(&images, labels.as_deref())?
            }
            "delimited" => {
                let path = self.dataset_path(&format!("{tag}"))?;
                let width = self.file.require_parsed::<usize>("dataset", "width")?;
                let height = self.file.require_parsed::<usize>("dataset", "height")?;
                let has_label =
                    self.file.get_parsed::<bool>("dataset", "has_label")?.unwrap_or(false);
                data::load_delimited(&path, width, height, has_label)?
            }
            "canonical" => data::load_canonical(&self.dataset_path(tag)?)?,
            other => {
                return Err(Error::Config(format!(
                    "[dataset].loader: unknown loader {other:?} (idx, delimited, canonical)"
                )))
            }
        };
        split.set_split_tag(tag);
        let limit_key = format!("{tag}_limit");
        if let Some(limit) = self.file.get_parsed::<usize>("dataset", &limit_key)? {
            split = split.head(limit);
        }
        Ok(split)
    }

    pub fn train_split(&self) -> Result<DatasetSplit> {
        self.load_split("train_images", "train_labels", "train")
    }

    pub fn test_split(&self) -> Result<DatasetSplit> {
        self.load_split("test_images", "test_labels", "test")
    }

    pub fn n_hidden(&self) -> Result<usize> {
        self.file.require_parsed("model", "n_hidden")
    }

    pub fn layer_sizes(&self) -> Result<Vec<usize>> {
        let v = self.file.require("model", "layer_sizes")?;
        let sizes: std::result::Result<Vec<usize>, _> =
            v.split_whitespace().map(|s| s.parse()).collect();
        sizes.map_err(|_| Error::Config(format!("[model].layer_sizes: cannot parse {v:?}")))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(self.seed);
        let s = "train";
        if let Some(e) = self.file.get_parsed::<usize>(s, "epochs")? {
            cfg.epochs = e;
        }
        if let Some(b) = self.file.get_parsed::<usize>(s, "batch_size")? {
            cfg.batch_size = b;
        }
        if let Some(v) = self.file.get(s, "learning_rate") {
            cfg.learning_rate = parse_schedule_f64(s, "learning_rate", v)?;
        }
        if let Some(v) = self.file.get(s, "momentum") {
            cfg.momentum = parse_schedule_f64(s, "momentum", v)?;
        }
        if let Some(v) = self.file.get(s, "cd_steps") {
            cfg.cd_steps = parse_cd_schedule(s, "cd_steps", v, cfg.epochs)?;
        }
        if let Some(l2) = self.file.get_parsed::<f64>(s, "l2")? {
            cfg.l2_coeff = l2;
        }
        if let Some(l1) = self.file.get_parsed::<f64>(s, "l1")? {
            cfg.l1_coeff = l1;
            if l1 > 0.0 && self.file.get(s, "l2").is_none() {
                cfg.l2_coeff = 0.0; // picking L1 switches the penalty
            }
        }
        cfg.validate().map_err(|e| Error::Config(format!("[train]: {e}")))?;
        Ok(cfg)
    }

    /// Prune schedule from the given section (`prune`, `prune-percentile`
    /// or `prune-stddev`). Retraining reuses [train] with
    /// `retrain_epochs` (default: a quarter of the training epochs).
    pub fn prune_schedule(&self, section: &str) -> Result<PruneSchedule> {
        let strategy = match self.file.get(section, "strategy") {
            None if section == "prune-percentile" => PruneStrategy::Percentile,
            None if section == "prune-stddev" => PruneStrategy::StdDev,
            Some("percentile") => PruneStrategy::Percentile,
            Some("stddev") => PruneStrategy::StdDev,
            Some(other) => {
                return Err(Error::Config(format!(
                    "[{section}].strategy: unknown strategy {other:?}"
                )))
            }
            None => return Err(Error::Config(format!("missing [{section}].strategy"))),
        };
        let steps_raw = self.file.require(section, "steps")?;
        let steps: std::result::Result<Vec<f64>, _> =
            steps_raw.split_whitespace().map(|s| s.parse()).collect();
        let steps = steps
            .map_err(|_| Error::Config(format!("[{section}].steps: cannot parse {steps_raw:?}")))?;

        let base = self.train_config()?;
        let mut retrain = base.clone();
        retrain.epochs = match self.file.get_parsed::<usize>(section, "retrain_epochs")? {
            Some(e) => e,
            None => (base.epochs / 4).max(1),
        };
        if let Some(v) = self.file.get(section, "retrain_learning_rate") {
            retrain.learning_rate = parse_schedule_f64(section, "retrain_learning_rate", v)?;
        }
        retrain.seed = derive_seed(self.seed, seed_tags::PRUNE_RETRAIN);
        let schedule = PruneSchedule { strategy, steps, retrain };
        schedule.validate().map_err(|e| Error::Config(format!("[{section}]: {e}")))?;
        Ok(schedule)
    }

    pub fn ais_config(&self) -> Result<AisConfig> {
        let mut cfg = AisConfig::new(derive_seed(self.seed, seed_tags::AIS));
        let s = "ais";
        if let Some(r) = self.file.get_parsed::<usize>(s, "runs")? {
            cfg.num_runs = r;
        }
        if let Some(t) = self.file.get_parsed::<usize>(s, "temperatures")? {
            cfg.num_temperatures = t;
        }
        if let Some(sm) = self.file.get_parsed::<f64>(s, "smoothing")? {
            cfg.base_rate_smoothing = sm;
        }
        match self.file.get(s, "schedule") {
            None | Some("uniform") => {}
            Some("three-segment") => cfg.beta_schedule = BetaSchedule::ThreeSegment,
            Some(other) => {
                return Err(Error::Config(format!(
                    "[ais].schedule: unknown preset {other:?} (uniform, three-segment)"
                )))
            }
        }
        cfg.validate().map_err(|e| Error::Config(format!("[ais]: {e}")))?;
        Ok(cfg)
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        let mut cfg = FinetuneConfig::new(derive_seed(self.seed, seed_tags::FINETUNE));
        let s = "finetune";
        if let Some(e) = self.file.get_parsed::<usize>(s, "epochs")? {
            cfg.epochs = e;
        }
        if let Some(b) = self.file.get_parsed::<usize>(s, "batch_size")? {
            cfg.batch_size = b;
        }
        if let Some(m) = self.file.get_parsed::<f64>(s, "momentum")? {
            cfg.momentum = m;
        }
        if let Some(t) = self.file.get_parsed::<usize>(s, "trials")? {
            cfg.trials = t;
        }
        let lr = self.file.get_parsed::<f64>(s, "learning_rate")?.unwrap_or(0.1);
        let factor = self.file.get_parsed::<f64>(s, "lr_decay_factor")?.unwrap_or(0.5);
        let every = self.file.get_parsed::<usize>(s, "lr_decay_every")?.unwrap_or(20);
        cfg.learning_rate = Schedule::step_decay(lr, factor, every, cfg.epochs);
        cfg.validate().map_err(|e| Error::Config(format!("[finetune]: {e}")))?;
        Ok(cfg)
    }

    pub fn exact_limit(&self) -> Result<usize> {
        Ok(self.file.get_parsed::<usize>("eval", "exact_limit")?.unwrap_or(DEFAULT_EXACT_LIMIT))
    }

    /// Recovery guard for sparse pretraining: `recon:<factor>` or
    /// `logprob:<nats>`; defaults to `recon:1.02`.
    pub fn recovery_guard(&self) -> Result<RecoveryGuard> {
        match self.file.get("dbn", "guard") {
            None => Ok(RecoveryGuard::default()),
            Some(v) => {
                let bad = || Error::Config(format!("[dbn].guard: bad guard {v:?}"));
                let (kind, num) = v.split_once(':').ok_or_else(bad)?;
                let x: f64 = num.trim().parse().map_err(|_| bad())?;
                match kind.trim() {
                    "recon" => Ok(RecoveryGuard::ReconstructionFactor(x)),
                    "logprob" => Ok(RecoveryGuard::LogProbNats(x)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# top comment
seed = 42

[model]
n_hidden = 20 # inline comment

[train]
epochs = 12
momentum = 0.5@0 0.9@5
cd_steps = ramp:25
l2 = 1e-4

[prune]
strategy = percentile
steps = 0.5 0.32
";

    #[test]
    fn parses_sections_and_comments() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(f.get("", "seed"), Some("42"));
        assert_eq!(f.get("model", "n_hidden"), Some("20"));
        assert_eq!(f.get("train", "epochs"), Some("12"));
        assert!(f.get("nope", "x").is_none());
    }

    #[test]
    fn resolves_seed_and_overrides() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        let cfg = ExperimentConfig::resolve(f.clone(), None, None).unwrap();
        assert_eq!(cfg.seed, 42);
        let cfg = ExperimentConfig::resolve(f, Some(7), Some(PathBuf::from("x"))).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("x"));

        let bare = ConfigFile::parse("[model]\nn_hidden = 2\n").unwrap();
        assert!(matches!(
            ExperimentConfig::resolve(bare, None, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn builds_train_config() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        let cfg = ExperimentConfig::resolve(f, None, None).unwrap();
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.epochs, 12);
        assert_eq!(tc.momentum.at(0), 0.5);
        assert_eq!(tc.momentum.at(5), 0.9);
        assert_eq!(tc.cd_steps.at(11), 25);
        assert_eq!(tc.seed, 42);
    }

    #[test]
    fn builds_prune_schedule_with_retrain_default() {
        let f = ConfigFile::parse(SAMPLE).unwrap();
        let cfg = ExperimentConfig::resolve(f, None, None).unwrap();
        let sched = cfg.prune_schedule("prune").unwrap();
        assert_eq!(sched.strategy, PruneStrategy::Percentile);
        assert_eq!(sched.steps, vec![0.5, 0.32]);
        assert_eq!(sched.retrain.epochs, 3); // 12 / 4
        assert_ne!(sched.retrain.seed, 42); // derived, not the raw seed
    }

    #[test]
    fn config_hash_is_stable() {
        let a = ConfigFile::parse(SAMPLE).unwrap();
        let b = ConfigFile::parse(SAMPLE).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ConfigFile::parse("seed = 43\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(ConfigFile::parse("[oops\n"), Err(Error::Config(_))));
        assert!(matches!(ConfigFile::parse("just a line\n"), Err(Error::Config(_))));
    }

    #[test]
    fn guard_parsing() {
        let f = ConfigFile::parse("seed = 1\n[dbn]\nguard = logprob:1.5\n").unwrap();
        let cfg = ExperimentConfig::resolve(f, None, None).unwrap();
        assert_eq!(cfg.recovery_guard().unwrap(), RecoveryGuard::LogProbNats(1.5));
        let f = ConfigFile::parse("seed = 1\n").unwrap();
        let cfg = ExperimentConfig::resolve(f, None, None).unwrap();
        assert_eq!(cfg.recovery_guard().unwrap(), RecoveryGuard::ReconstructionFactor(1.02));
    }
}
