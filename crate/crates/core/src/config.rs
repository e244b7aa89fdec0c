use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::error::{Error, Result};

/// Search and estimation parameters. Every field participates in the config
/// digest stored in tree files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub run_seed: u64,
    /// Samples per node for relevance and probes.
    pub m_samples_per_node: usize,
    /// Weight of the specificity penalty.
    pub lambda: f64,
    /// Samples per term during final selection.
    pub n_final_samples: usize,
    pub max_depth: usize,
    /// Nodes at depth <= this are eligible for enrichment.
    pub enrich_depth_limit: usize,
    /// Word count above which a caption is summarized.
    pub verbosity_threshold: usize,
    pub l_summaries: usize,
    /// Grouping kicks in above this many child descriptions.
    pub group_threshold: usize,
    pub group_target: usize,
    pub n_enrich_variants: usize,
    /// Decoder generality level per iteration; the last entry repeats and is
    /// also the level used for final selection.
    pub generality_schedule: Vec<f64>,
    pub no_improvement_patience: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            run_seed: 0,
            m_samples_per_node: 32,
            lambda: 0.25,
            n_final_samples: 64,
            max_depth: 6,
            enrich_depth_limit: 1,
            verbosity_threshold: 20,
            l_summaries: 3,
            group_threshold: 6,
            group_target: 3,
            n_enrich_variants: 3,
            generality_schedule: vec![1.0, 0.7, 0.4, 0.2, 0.1, 0.0],
            no_improvement_patience: 2,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be a finite non-negative real"));
        }
        let counts = [
            ("m_samples_per_node", self.m_samples_per_node),
            ("n_final_samples", self.n_final_samples),
            ("max_depth", self.max_depth),
            ("verbosity_threshold", self.verbosity_threshold),
            ("l_summaries", self.l_summaries),
            ("group_threshold", self.group_threshold),
            ("group_target", self.group_target),
            ("n_enrich_variants", self.n_enrich_variants),
            ("no_improvement_patience", self.no_improvement_patience),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.generality_schedule.is_empty() {
            return Err(Error::invalid("generality_schedule must not be empty"));
        }
        if self.generality_schedule.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::invalid("generality levels must lie in [0, 1]"));
        }
        if self.generality_schedule.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("generality_schedule must be non-increasing"));
        }
        Ok(())
    }

    /// Generality level used at iteration `t`.
    pub fn generality_at(&self, iteration: usize) -> f64 {
        let last = self.generality_schedule.len() - 1;
        self.generality_schedule[iteration.min(last)]
    }

    /// Generality level for final selection and exact evaluation.
    pub fn final_generality(&self) -> f64 {
        *self.generality_schedule.last().expect("validated non-empty")
    }

    /// 64-bit digest of the canonical JSON form.
    pub fn digest(&self) -> u64 {
        canonical::digest64(self).expect("config serializes")
    }

    pub fn digest_hex(&self) -> String {
        format!("{:016x}", self.digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = Config { lambda: -0.1, ..Config::default() };
        assert!(c.validate().is_err());
        c = Config { m_samples_per_node: 0, ..Config::default() };
        assert!(c.validate().is_err());
        c = Config { generality_schedule: vec![0.2, 0.5], ..Config::default() };
        assert!(c.validate().is_err());
        c = Config { generality_schedule: vec![], ..Config::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn schedule_clamps_to_last_entry() {
        let c = Config::default();
        assert_eq!(c.generality_at(0), 1.0);
        assert_eq!(c.generality_at(3), 0.2);
        assert_eq!(c.generality_at(40), 0.0);
        let levels: Vec<f64> = (0..10).map(|t| c.generality_at(t)).collect();
        assert!(levels.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn digest_tracks_lambda() {
        let a = Config::default();
        let b = Config { lambda: 0.5, ..Config::default() };
        assert_eq!(a.digest(), Config::default().digest());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: Config = serde_json::from_str(r#"{"lambda": 0.0, "run_seed": 9}"#).unwrap();
        assert_eq!(c.lambda, 0.0);
        assert_eq!(c.run_seed, 9);
        assert_eq!(c.m_samples_per_node, 32);
        assert!(serde_json::from_str::<Config>(r#"{"lamda": 1}"#).is_err());
    }
}
