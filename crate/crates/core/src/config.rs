//! Flat run configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::appc::ApConfig;
use crate::error::{Error, Result};
use crate::rap::{Algorithm, RapConfig};
use crate::simfn::{PreferenceRule, Scheme, SimilarityConfig};
use crate::synthgen::GenConfig;

/// Every knob of a run. All keys have defaults except the input paths;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub top_k: usize,
    pub common_j: usize,
    pub blend_rootroot: f64,
    pub blend_rootleaf: f64,
    pub scheme: Scheme,
    pub preference: PreferenceRule,

    pub algorithm: Algorithm,
    pub damping: f64,
    pub max_iter: usize,
    pub converge_window: usize,
    pub min_roots: usize,
    pub neg_cap_scale: f64,

    /// Drop leaves that too few of a root's users share before clustering.
    pub prune: bool,
    /// Restrict the corpus to saplings reachable from this term.
    pub seed_term: Option<String>,
    pub hops: usize,

    pub input: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,

    pub synth: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimilarityConfig::default();
        let rap = RapConfig::default();
        RunConfig {
            top_k: sim.top_k,
            common_j: sim.common_j,
            blend_rootroot: sim.blend_rootroot,
            blend_rootleaf: sim.blend_rootleaf,
            scheme: sim.scheme,
            preference: sim.preference,
            algorithm: rap.algorithm,
            damping: rap.ap.damping,
            max_iter: rap.ap.max_iter,
            converge_window: rap.ap.converge_window,
            min_roots: rap.min_roots,
            neg_cap_scale: rap.neg_cap_scale,
            prune: true,
            seed_term: None,
            hops: 2,
            input: None,
            reference: None,
            output: None,
            synth: GenConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn similarity(&self) -> SimilarityConfig {
        SimilarityConfig {
            top_k: self.top_k,
            common_j: self.common_j,
            blend_rootroot: self.blend_rootroot,
            blend_rootleaf: self.blend_rootleaf,
            scheme: self.scheme,
            preference: self.preference,
        }
    }

    pub fn rap(&self) -> RapConfig {
        RapConfig {
            ap: ApConfig {
                damping: self.damping,
                max_iter: self.max_iter,
                converge_window: self.converge_window,
            },
            algorithm: self.algorithm,
            min_roots: self.min_roots,
            neg_cap_scale: self.neg_cap_scale,
        }
    }

    /// Short name of the clustering setting, e.g. `rap-class_hybrid`.
    pub fn strategy(&self) -> String {
        format!("{}-{}", self.algorithm, self.scheme)
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity().validate()?;
        self.rap().validate()?;
        if self.hops == 0 {
            return Err(Error::Config("hops must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_and_sections() {
        let cfg = RunConfig::from_toml_str(
            "algorithm = \"ap\"\nscheme = \"class_hybrid\"\npreference = \"median\"\n[synth]\nconcepts = 12\n",
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Ap);
        assert_eq!(cfg.scheme, Scheme::ClassHybrid);
        assert_eq!(cfg.preference, PreferenceRule::MEDIAN);
        assert_eq!(cfg.synth.concepts, 12);
        assert_eq!(cfg.synth.users, GenConfig::default().users);
        assert_eq!(cfg.strategy(), "ap-class_hybrid");
        let absolute = RunConfig::from_toml_str("preference = 0.25").unwrap();
        assert_eq!(absolute.preference, PreferenceRule::Absolute(0.25));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("alpha = 3"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("[synth]\nwidth = 3").is_err());
        assert!(RunConfig::from_toml_str("algorithm = \"sap\"").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let cfg = RunConfig {
            damping: 1.2,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            hops: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
