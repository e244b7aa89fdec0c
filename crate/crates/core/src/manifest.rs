//! Run manifests: which oracles, which classes, which starting points.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::oracle::{Budget, BudgetCounts, OracleSuite};
use crate::remote::{remote_suite, EndpointConfig, ResponseCache};
use crate::synthetic::{token_name, Universe, UniverseSpec};
use crate::types::{ClassLabel, Description};

pub const IMAGENET_1000: &str = include_str!("../data/imagenet-1000.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDescriptions {
    List(Vec<Description>),
    Preset { preset: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub config: Config,
    pub oracle_mode: OracleMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub universe_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shim_endpoint_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_endpoint_file: Option<PathBuf>,
    pub classes: Vec<ClassLabel>,
    pub initial_descriptions: InitialDescriptions,
    /// Per-oracle call limits shared by all classes. Missing kinds are unlimited.
    #[serde(default)]
    pub budget: BudgetCounts,
}

/// Oracles built from a manifest. `universe` is set in synthetic mode.
pub struct Oracles {
    pub suite: OracleSuite,
    pub universe: Option<Arc<Universe>>,
}

impl RunManifest {
    /// Parses and validates; relative file paths resolve against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::invalid(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut manifest = RunManifest::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for file in [&mut manifest.universe_file, &mut manifest.shim_endpoint_file, &mut manifest.llm_endpoint_file]
            .into_iter()
            .flatten()
        {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(manifest)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let manifest: RunManifest = serde_path_to_error::deserialize(de)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.classes.is_empty() {
            return Err(Error::invalid("manifest lists no classes"));
        }
        if self.classes.iter().collect::<BTreeSet<_>>().len() != self.classes.len() {
            return Err(Error::invalid("manifest lists a class twice"));
        }
        match self.oracle_mode {
            OracleMode::Synthetic => {
                if self.universe_file.is_none() {
                    return Err(Error::invalid("synthetic mode needs universe_file"));
                }
                if self.shim_endpoint_file.is_some() || self.llm_endpoint_file.is_some() {
                    return Err(Error::invalid("synthetic mode takes no endpoint files"));
                }
            }
            OracleMode::Remote => {
                if self.shim_endpoint_file.is_none() || self.llm_endpoint_file.is_none() {
                    return Err(Error::invalid("remote mode needs shim_endpoint_file and llm_endpoint_file"));
                }
                if self.universe_file.is_some() {
                    return Err(Error::invalid("remote mode takes no universe_file"));
                }
            }
        }
        if let InitialDescriptions::List(list) = &self.initial_descriptions {
            if list.is_empty() {
                return Err(Error::invalid("initial_descriptions is empty"));
            }
        }
        Ok(())
    }

    pub fn universe_spec(&self) -> Result<Option<UniverseSpec>> {
        match &self.universe_file {
            None => Ok(None),
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| Error::invalid(format!("cannot read universe {}: {e}", path.display())))?;
                Ok(Some(UniverseSpec::from_json(&bytes)?))
            }
        }
    }

    pub fn build_oracles(&self) -> Result<Oracles> {
        let (suite, universe) = match self.oracle_mode {
            OracleMode::Synthetic => {
                let spec = self.universe_spec()?.expect("validated");
                let universe = Arc::new(Universe::build(spec)?);
                let suite = Universe::shared_suite(universe.clone());
                (suite, Some(universe))
            }
            OracleMode::Remote => {
                let read = |p: &Option<PathBuf>| -> Result<EndpointConfig> {
                    let path = p.as_ref().expect("validated");
                    let bytes = std::fs::read(path)
                        .map_err(|e| Error::invalid(format!("cannot read endpoint {}: {e}", path.display())))?;
                    EndpointConfig::from_json(&bytes)
                };
                let cache = Arc::new(ResponseCache::from_env()?);
                (remote_suite(read(&self.shim_endpoint_file)?, read(&self.llm_endpoint_file)?, Some(cache))?, None)
            }
        };
        if let Some(n) = suite.target.num_classes() {
            if let Some(bad) = self.classes.iter().find(|c| c.0 >= n) {
                return Err(Error::invalid(format!("class {bad} is outside the target's {n} classes")));
            }
        }
        Ok(Oracles { suite: suite.with_budget(Budget::with_limits(&self.budget)), universe })
    }

    pub fn initial(&self, universe: Option<&UniverseSpec>) -> Result<Vec<Description>> {
        match &self.initial_descriptions {
            InitialDescriptions::List(list) => Ok(list.clone()),
            InitialDescriptions::Preset { preset } => preset_descriptions(preset, universe),
        }
    }
}

/// Named initial-description sets: `imagenet-1000` (bundled word list) and
/// `vocabulary` (every single token of a synthetic universe).
pub fn preset_descriptions(name: &str, universe: Option<&UniverseSpec>) -> Result<Vec<Description>> {
    match name {
        "imagenet-1000" => IMAGENET_1000.lines().filter(|l| !l.trim().is_empty()).map(Description::new).collect(),
        "vocabulary" => {
            let spec = universe.ok_or_else(|| Error::invalid("the vocabulary preset needs a synthetic universe"))?;
            (0..spec.vocab_size).map(|t| Description::new(token_name(t, spec.vocab_size))).collect()
        }
        other => Err(Error::invalid(format!("unknown initial-description preset `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imagenet_preset_has_a_thousand_entries() {
        let list = preset_descriptions("imagenet-1000", None).unwrap();
        assert_eq!(list.len(), 1000);
        assert_eq!(list[0].as_str(), "tench");
    }

    #[test]
    fn mode_files_must_match() {
        let bad = br#"{"oracle_mode": "synthetic", "classes": [0], "initial_descriptions": ["a"]}"#;
        assert!(matches!(RunManifest::from_json(bad), Err(Error::InvalidInput(_))));
        let bad = br#"{"oracle_mode": "remote", "universe_file": "u.json", "shim_endpoint_file": "s",
                       "llm_endpoint_file": "l", "classes": [0], "initial_descriptions": ["a"]}"#;
        assert!(RunManifest::from_json(bad).is_err());
        let ok = br#"{"oracle_mode": "synthetic", "universe_file": "u.json", "classes": [0, 2],
                      "initial_descriptions": {"preset": "vocabulary"}}"#;
        let m = RunManifest::from_json(ok).unwrap();
        assert_eq!(m.initial_descriptions, InitialDescriptions::Preset { preset: "vocabulary".into() });
    }

    #[test]
    fn classes_non_empty_and_unique() {
        let empty = br#"{"oracle_mode": "synthetic", "universe_file": "u", "classes": [], "initial_descriptions": ["a"]}"#;
        assert!(RunManifest::from_json(empty).is_err());
        let dup = br#"{"oracle_mode": "synthetic", "universe_file": "u", "classes": [1, 1], "initial_descriptions": ["a"]}"#;
        assert!(RunManifest::from_json(dup).is_err());
    }

    #[test]
    fn unknown_field_is_named() {
        let bad = br#"{"oracle_mode": "synthetic", "universe_file": "u", "classes": [0],
                       "initial_descriptions": ["a"], "config": {"lambda": 0.5, "lamda": 1.0}}"#;
        let err = RunManifest::from_json(bad).unwrap_err();
        assert!(err.to_string().contains("config"), "{err}");
    }
}
