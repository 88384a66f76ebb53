//! Whole-pipeline configuration, per-section digests and artifact stamps.
//!
//! Every artifact written by a pipeline stage gets a JSON stamp next to it
//! (`<artifact>.stamp.json`) recording the command, the root seed and the
//! configuration sections the artifact depends on. A later stage compares
//! the sections it shares with the stamp and refuses to run on a mismatch.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use log::warn;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{invalid_arg, Error, Result};
use crate::eval::{EvalConfig, Task};
use crate::patch::ExtractConfig;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Palette size for per-patch color quantization.
    pub n_colors: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_colors: 32 }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=256).contains(&self.n_colors) {
            return Err(invalid_arg(format!("n_colors must lie in 2..=256, got {}", self.n_colors)));
        }
        Ok(())
    }
}

/// Parameters of every stage. The serialized form is the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub patch: ExtractConfig,
    pub features: FeatureConfig,
    pub eval: EvalConfig,
    pub synth: SyntheticSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Both,
            patch: ExtractConfig::default(),
            features: FeatureConfig::default(),
            eval: EvalConfig::default(),
            synth: SyntheticSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.patch.validate()?;
        self.features.validate()?;
        self.eval.validate()?;
        self.synth.validate()
    }

    /// The value under a dotted path such as `eval.reduce`; `""` is the
    /// whole configuration.
    pub fn section(&self, name: &str) -> Result<Value> {
        let all = serde_json::to_value(self)?;
        if name.is_empty() {
            return Ok(all);
        }
        let pointer: String = name.split('.').map(|p| format!("/{p}")).collect();
        all.pointer(&pointer)
            .cloned()
            .ok_or_else(|| invalid_arg(format!("unknown config section `{name}`")))
    }

    pub fn sections(&self, names: &[&str]) -> Result<BTreeMap<String, Value>> {
        names.iter().map(|&n| Ok((n.to_string(), self.section(n)?))).collect()
    }
}

/// Lowercase hex SHA-256 of the compact JSON encoding of `sections`.
pub fn digest(sections: &BTreeMap<String, Value>) -> Result<String> {
    let bytes = serde_json::to_vec(sections)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Provenance record written next to an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stamp {
    pub command: String,
    pub seed: u64,
    pub digest: String,
    pub sections: BTreeMap<String, Value>,
}

impl Stamp {
    pub fn new(command: &str, seed: u64, sections: BTreeMap<String, Value>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            seed,
            digest: digest(&sections)?,
            sections,
        })
    }

    pub fn path_for(artifact: &Path) -> PathBuf {
        let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".stamp.json");
        artifact.with_file_name(name)
    }

    pub fn save(&self, artifact: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(Self::path_for(artifact), text)?;
        Ok(())
    }

    /// `Ok(None)` when the artifact has no stamp.
    pub fn load(artifact: &Path) -> Result<Option<Self>> {
        let path = Self::path_for(artifact);
        if !path.exists() {
            return Ok(None);
        }
        let stamp: Stamp = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if digest(&stamp.sections)? != stamp.digest {
            return Err(Error::Format(format!("{}: digest does not match its sections", path.display())));
        }
        Ok(Some(stamp))
    }

    /// Compares every configuration leaf present both in the stamp and in
    /// `current` and fails with a per-key diff when any differs. Leaves named
    /// `seed` only produce a warning, so one artifact can be evaluated under
    /// several root seeds.
    pub fn check(&self, current: &BTreeMap<String, Value>, artifact: &Path) -> Result<()> {
        let (mut then, mut now) = (BTreeMap::new(), BTreeMap::new());
        for (name, v) in &self.sections {
            flatten(name, v, &mut then);
        }
        for (name, v) in current {
            flatten(name, v, &mut now);
        }
        let mut diffs = Vec::new();
        for (key, old) in &then {
            let Some(new) = now.get(key) else { continue };
            if old == new {
                continue;
            }
            if key == "seed" || key.ends_with(".seed") {
                warn!("{}: `{key}` was {old} when written, now {new}", artifact.display());
            } else {
                diffs.push(format!("{key}: {old} -> {new}"));
            }
        }
        if diffs.is_empty() {
            return Ok(());
        }
        Err(Error::StaleArtifact(format!(
            "{} (written by `{}`) was produced under a different configuration:\n  {}",
            artifact.display(),
            self.command,
            diffs.join("\n  ")
        )))
    }
}

/// Maps every leaf of `v` to its dotted path below `prefix`. Arrays are
/// leaves.
pub fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&format!("{prefix}.{k}"), child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&text).unwrap(), cfg);
        let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 9, "features": {"n_colors": 16}}"#).unwrap();
        assert_eq!((partial.seed, partial.features.n_colors, partial.patch.size), (9, 16, 64));
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn invalid_fields_rejected() {
        let mut cfg = PipelineConfig::default();
        cfg.features.n_colors = 1;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        let mut cfg = PipelineConfig::default();
        cfg.eval.reduce.variance = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dotted_sections() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.section("eval.reduce.variance").unwrap(), serde_json::json!(0.95));
        assert!(cfg.section("eval.nope").is_err());
        assert!(cfg.section("").unwrap().is_object());
    }

    #[test]
    fn seed_leaves_only_warn() {
        let mut a = PipelineConfig::default();
        let stamp = Stamp::new("synth", 7, a.sections(&["synth"]).unwrap()).unwrap();
        a.synth.seed = 99;
        stamp.check(&a.sections(&["synth"]).unwrap(), Path::new("x")).unwrap();
        a.synth.witness_rate = 0.5;
        assert!(matches!(
            stamp.check(&a.sections(&["synth"]).unwrap(), Path::new("x")),
            Err(Error::StaleArtifact(_))
        ));
    }

    #[test]
    fn digest_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        let names = ["patch", "eval"];
        assert_eq!(digest(&a.sections(&names).unwrap()).unwrap(), digest(&b.sections(&names).unwrap()).unwrap());
        b.eval.method.vbgmm.k_init = 7;
        let (da, db) = (digest(&a.sections(&names).unwrap()).unwrap(), digest(&b.sections(&names).unwrap()).unwrap());
        assert_ne!(da, db);
        assert_eq!(da.len(), 64);
    }

    #[test]
    fn stamp_check_reports_changed_keys() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("x.manifest");
        let a = PipelineConfig::default();
        let stamp = Stamp::new("featurize", 3, a.sections(&["patch", "features"]).unwrap()).unwrap();
        stamp.save(&artifact).unwrap();
        assert_eq!(Stamp::path_for(&artifact), dir.path().join("x.manifest.stamp.json"));
        let loaded = Stamp::load(&artifact).unwrap().unwrap();
        assert_eq!(loaded, stamp);
        loaded.check(&a.sections(&["patch", "eval"]).unwrap(), &artifact).unwrap();
        let mut b = a.clone();
        b.patch.size = 32;
        let err = loaded.check(&b.sections(&["patch"]).unwrap(), &artifact).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("patch.size: 64 -> 32"), "{msg}");
        b.patch.size = 64;
        b.features.n_colors = 8;
        let err = loaded.check(&b.sections(&["features.n_colors"]).unwrap(), &artifact).unwrap_err();
        assert!(err.to_string().contains("features.n_colors: 32 -> 8"));
        assert!(Stamp::load(&dir.path().join("missing")).unwrap().is_none());
    }
}
