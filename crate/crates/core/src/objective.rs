//! Monte Carlo estimates of relevance, the specificity penalty, and the
//! combined objective `relevance - lambda * penalty`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::oracle::OracleSuite;
use crate::seed::{Purpose, SeedPlan};
use crate::tree::Relevance;
use crate::types::{ClassLabel, Description, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceEstimate {
    pub k: usize,
    pub m: usize,
    pub value: f64,
    pub per_sample_labels: Vec<ClassLabel>,
    /// The `k` samples labelled with the target class, in seed order.
    pub correct_samples: Vec<Sample>,
}

impl RelevanceEstimate {
    pub fn relevance(&self) -> Relevance {
        Relevance { k: self.k, m: self.m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralityEstimate {
    pub mean_cosine: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub relevance: f64,
    pub penalty: f64,
    pub lambda: f64,
    pub value: f64,
}

impl ObjectiveValue {
    pub fn new(relevance: f64, penalty: f64, lambda: f64) -> Self {
        ObjectiveValue { relevance, penalty, lambda, value: relevance - lambda * penalty }
    }
}

fn seeds_for(plan: &SeedPlan, description: &Description, purpose: Purpose, n: usize) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let seeds = plan.seeds(description, purpose, n);
    if seeds.len() < n {
        return Err(Error::invalid(format!("seed plan holds {} seeds, {n} requested", seeds.len())));
    }
    Ok(seeds)
}

/// Decodes `m` samples and counts how many the target assigns to `target_class`.
pub fn estimate_relevance(
    description: &Description,
    target_class: ClassLabel,
    m: usize,
    generality_level: f64,
    suite: &OracleSuite,
    seeds: &SeedPlan,
) -> Result<RelevanceEstimate> {
    relevance_for_purpose(description, target_class, m, generality_level, suite, seeds, Purpose::Relevance)
}

pub(crate) fn relevance_for_purpose(
    description: &Description,
    target_class: ClassLabel,
    m: usize,
    generality_level: f64,
    suite: &OracleSuite,
    seeds: &SeedPlan,
    purpose: Purpose,
) -> Result<RelevanceEstimate> {
    let seeds = seeds_for(seeds, description, purpose, m)?;
    let labelled: Vec<(Sample, ClassLabel)> = seeds
        .par_iter()
        .map(|&seed| {
            let sample = suite.decode(description, seed, generality_level)?;
            let label = suite.classify(&sample)?;
            Ok((sample, label))
        })
        .collect::<Result<_>>()?;

    let per_sample_labels: Vec<ClassLabel> = labelled.iter().map(|(_, l)| *l).collect();
    let correct_samples: Vec<Sample> =
        labelled.into_iter().filter(|(_, l)| *l == target_class).map(|(s, _)| s).collect();
    let k = correct_samples.len();
    Ok(RelevanceEstimate { k, m, value: k as f64 / m as f64, per_sample_labels, correct_samples })
}

/// Mean cosine between the description's text embedding and the
/// re-encoded embeddings of `n` decoded samples.
pub fn estimate_generality_penalty(
    description: &Description,
    n: usize,
    generality_level: f64,
    suite: &OracleSuite,
    seeds: &SeedPlan,
) -> Result<GeneralityEstimate> {
    let seeds = seeds_for(seeds, description, Purpose::Generality, n)?;
    let anchor = suite.embed_text(description)?;
    let cosines: Vec<f64> = seeds
        .par_iter()
        .map(|&seed| {
            let sample = suite.decode(description, seed, generality_level)?;
            Ok(suite.embed_image(&sample)?.cosine(&anchor))
        })
        .collect::<Result<_>>()?;
    // Sequential sum in seed order keeps the result schedule-independent.
    let mean_cosine = cosines.iter().sum::<f64>() / n as f64;
    Ok(GeneralityEstimate { mean_cosine, n })
}

/// Full objective at the final generality level with `n_final_samples`
/// per term. Derived plans use disjoint streams for the two terms; explicit
/// plans use the same list for both.
pub fn objective_value(
    description: &Description,
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
    seeds: &SeedPlan,
) -> Result<ObjectiveValue> {
    let g = cfg.final_generality();
    let relevance = relevance_for_purpose(
        description,
        target_class,
        cfg.n_final_samples,
        g,
        suite,
        seeds,
        Purpose::FinalRelevance,
    )?;
    let penalty = estimate_generality_penalty(description, cfg.n_final_samples, g, suite, seeds)?;
    Ok(ObjectiveValue::new(relevance.value, penalty.mean_cosine, cfg.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let v = ObjectiveValue::new(0.8, 0.6, 0.5);
        assert!((v.value - 0.5).abs() < 1e-15);
        let v = ObjectiveValue::new(0.8, 0.6, 0.0);
        assert_eq!(v.value, 0.8);
    }

    #[test]
    fn value_non_increasing_in_lambda() {
        for penalty in [0.0, 0.3, 0.99] {
            let values: Vec<f64> =
                (0..=40).map(|i| ObjectiveValue::new(0.7, penalty, i as f64 * 0.25).value).collect();
            assert!(values.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
