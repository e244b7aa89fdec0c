//! A seeded token-vector world implementing every oracle contract exactly.
//!
//! Descriptions are sets of vocabulary tokens (`t00`, `t01`, ...) rendered
//! as sorted, space-joined names. The decoder completes a description to
//! `max_tokens` tokens with seeded random fillers, embeds the completed set,
//! and perturbs it with Gaussian noise whose scale grows with the generality
//! level. Because everything is a pure function of the `UniverseSpec` and
//! the call arguments, the objective can be evaluated exactly over an
//! explicit seed set and its maximum found by enumeration.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical::digest64_bytes;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::objective::ObjectiveValue;
use crate::oracle::{
    Budget, Decoder, Enricher, Grouper, ImageEncoder, OracleSuite, Summarizer, TargetModel, TextEmbedder,
};
use crate::seed::{derive_seed, splitmix64, Purpose};
use crate::types::{dot, norm, ClassLabel, Description, Embedding, Sample};

/// Largest candidate space the exhaustive search accepts.
pub const MAX_BRUTE_FORCE_CANDIDATES: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub label: ClassLabel,
    /// Sorted token names; the minimal ground-truth description.
    pub required_tokens: Vec<String>,
    /// Normalized sum of the required token vectors. Filled in by
    /// [`UniverseSpec::generate`]; checked against the tokens when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    pub universe_seed: u64,
    pub vocab_size: usize,
    pub dim: usize,
    pub max_tokens: usize,
    pub classes: Vec<ClassSpec>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub accept_threshold: f64,
    pub caption_gain: f64,
}

impl Default for UniverseSpec {
    fn default() -> Self {
        UniverseSpec {
            universe_seed: 0,
            vocab_size: 24,
            dim: 32,
            max_tokens: 4,
            classes: Vec::new(),
            sigma_min: 0.05,
            sigma_max: 0.6,
            accept_threshold: 0.8,
            caption_gain: 0.01,
        }
    }
}

pub fn token_name(index: usize, vocab_size: usize) -> String {
    let width = vocab_size.saturating_sub(1).to_string().len().max(2);
    format!("t{index:0width$}")
}

fn token_vectors(universe_seed: u64, vocab_size: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(universe_seed ^ 0x746f_6b65_6e73));
    (0..vocab_size)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

fn normalized_sum(vectors: &[Vec<f64>], set: &[usize], dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    for &t in set {
        for (s, x) in sum.iter_mut().zip(&vectors[t]) {
            *s += x;
        }
    }
    let n = norm(&sum);
    sum.into_iter().map(|x| x / n).collect()
}

impl UniverseSpec {
    /// Samples class token sets until every pair of class centroids has
    /// cosine below the accept threshold.
    pub fn generate(
        universe_seed: u64,
        vocab_size: usize,
        dim: usize,
        max_tokens: usize,
        class_sizes: &[usize],
        accept_threshold: f64,
    ) -> Result<Self> {
        let mut spec = UniverseSpec {
            universe_seed,
            vocab_size,
            dim,
            max_tokens,
            accept_threshold,
            ..UniverseSpec::default()
        };
        spec.validate_shape()?;
        if class_sizes.iter().any(|&s| s == 0 || s > max_tokens) {
            return Err(Error::invalid("class sizes must lie in 1..=max_tokens"));
        }
        let vectors = token_vectors(universe_seed, vocab_size, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(universe_seed ^ 0x636c_6173_7365_73));
        const ATTEMPTS: usize = 1000;
        for _ in 0..ATTEMPTS {
            let sets: Vec<Vec<usize>> = class_sizes
                .iter()
                .map(|&size| {
                    let mut s = index::sample(&mut rng, vocab_size, size).into_vec();
                    s.sort_unstable();
                    s
                })
                .collect();
            let centroids: Vec<Vec<f64>> = sets.iter().map(|s| normalized_sum(&vectors, s, dim)).collect();
            let distinct = sets.iter().collect::<BTreeSet<_>>().len() == sets.len();
            let separated = (0..sets.len())
                .all(|i| (i + 1..sets.len()).all(|j| dot(&centroids[i], &centroids[j]) < accept_threshold));
            if distinct && separated {
                spec.classes = sets
                    .iter()
                    .zip(centroids)
                    .enumerate()
                    .map(|(i, (set, c))| ClassSpec {
                        label: ClassLabel(i),
                        required_tokens: set.iter().map(|&t| token_name(t, vocab_size)).collect(),
                        centroid: Some(Embedding::new(c).expect("non-zero centroid")),
                    })
                    .collect();
                return Ok(spec);
            }
        }
        Err(Error::UniverseConstructionFailed(format!(
            "no separated class layout found in {ATTEMPTS} attempts"
        )))
    }

    fn validate_shape(&self) -> Result<()> {
        if self.max_tokens == 0 || self.vocab_size < self.max_tokens {
            return Err(Error::invalid("need vocab_size >= max_tokens >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be at least 1"));
        }
        if !(self.sigma_min >= 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::invalid("need 0 <= sigma_min <= sigma_max"));
        }
        if !(-1.0..1.0).contains(&self.accept_threshold) {
            return Err(Error::invalid("accept_threshold must lie in [-1, 1)"));
        }
        if !(self.caption_gain >= 0.0 && self.caption_gain.is_finite()) {
            return Err(Error::invalid("caption_gain must be non-negative"));
        }
        Ok(())
    }

    /// Number of token-set descriptions with 1..=max_tokens tokens.
    pub fn candidate_count(&self) -> u128 {
        let t = self.vocab_size as u128;
        let mut total = 0u128;
        let mut binom = 1u128;
        for j in 1..=self.max_tokens as u128 {
            binom = binom.saturating_mul(t + 1 - j) / j;
            total = total.saturating_add(binom);
        }
        total
    }

    pub fn background_label(&self) -> ClassLabel {
        ClassLabel(self.classes.len())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        Ok(serde_path_to_error::deserialize(de)?)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::canonical::to_canonical_string(self)
    }
}

/// A built universe: token vectors, class centroids, and the oracle behaviours.
#[derive(Debug)]
pub struct Universe {
    spec: UniverseSpec,
    names: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
    class_sets: Vec<Vec<usize>>,
    centroids: Vec<Embedding>,
    complete: bool,
}

impl Universe {
    pub fn build(spec: UniverseSpec) -> Result<Self> {
        spec.validate_shape()?;
        let names: Vec<String> = (0..spec.vocab_size).map(|i| token_name(i, spec.vocab_size)).collect();
        let index: HashMap<String, usize> = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        let vectors = token_vectors(spec.universe_seed, spec.vocab_size, spec.dim);

        let mut class_sets = Vec::new();
        let mut centroids = Vec::new();
        for (i, class) in spec.classes.iter().enumerate() {
            if class.label != ClassLabel(i) {
                return Err(Error::invalid(format!("class {i} carries label {}", class.label)));
            }
            let mut set = Vec::new();
            for tok in &class.required_tokens {
                set.push(*index.get(tok).ok_or_else(|| Error::invalid(format!("class {i}: unknown token {tok}")))?);
            }
            set.sort_unstable();
            set.dedup();
            if set.is_empty() || set.len() > spec.max_tokens {
                return Err(Error::invalid(format!("class {i}: required token count must lie in 1..=max_tokens")));
            }
            let centroid = Embedding::new(normalized_sum(&vectors, &set, spec.dim))?;
            if let Some(stored) = &class.centroid {
                let drift = stored.values().iter().zip(centroid.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if stored.dim() != centroid.dim() || drift > 1e-6 {
                    return Err(Error::invalid(format!("class {i}: stored centroid disagrees with its tokens")));
                }
            }
            class_sets.push(set);
            centroids.push(centroid);
        }
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                if centroids[i].cosine(&centroids[j]) >= spec.accept_threshold {
                    return Err(Error::invalid(format!(
                        "classes {i} and {j} have centroid cosine at or above the accept threshold"
                    )));
                }
            }
        }
        Ok(Universe { spec, names, index, vectors, class_sets, centroids, complete: true })
    }

    /// Disables completion to `max_tokens` in the decoder.
    pub fn without_completion(mut self) -> Self {
        self.complete = false;
        self
    }

    pub fn spec(&self) -> &UniverseSpec {
        &self.spec
    }

    pub fn token_vector(&self, token: usize) -> &[f64] {
        &self.vectors[token]
    }

    pub fn token_names(&self) -> &[String] {
        &self.names
    }

    pub fn class_tokens(&self, class: ClassLabel) -> Option<&[usize]> {
        self.class_sets.get(class.0).map(|v| v.as_slice())
    }

    pub fn centroid(&self, class: ClassLabel) -> Option<&Embedding> {
        self.centroids.get(class.0)
    }

    /// Ground-truth minimal description of a class.
    pub fn class_description(&self, class: ClassLabel) -> Option<Description> {
        self.class_tokens(class).map(|s| self.render(s))
    }

    pub fn background_label(&self) -> ClassLabel {
        self.spec.background_label()
    }

    /// Token indices of a description, sorted and deduplicated.
    pub fn parse(&self, description: &Description) -> Result<Vec<usize>> {
        let mut set = description
            .words()
            .map(|w| {
                self.index
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("`{w}` is not a token of this universe")))
            })
            .collect::<Result<Vec<_>>>()?;
        set.sort_unstable();
        set.dedup();
        Ok(set)
    }

    pub fn render(&self, set: &[usize]) -> Description {
        let mut sorted = set.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let text = sorted.iter().map(|&t| self.names[t].as_str()).collect::<Vec<_>>().join(" ");
        Description::new(text).expect("token sets are non-empty")
    }

    pub fn embed_set(&self, set: &[usize]) -> Embedding {
        Embedding::new(normalized_sum(&self.vectors, set, self.spec.dim)).expect("token sums are non-zero")
    }

    pub fn noise_scale(&self, generality_level: f64) -> f64 {
        self.spec.sigma_min + generality_level * (self.spec.sigma_max - self.spec.sigma_min)
    }

    /// The tokens the decoder adds to `set` for `seed`.
    pub fn completion(&self, set: &[usize], seed: u64) -> Vec<usize> {
        self.decode_parts(set, seed).0
    }

    fn decoder_rng(&self, seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(self.spec.universe_seed)))
    }

    /// Completed token set and the unit-variance noise direction for `seed`.
    fn decode_parts(&self, set: &[usize], seed: u64) -> (Vec<usize>, Vec<f64>) {
        let mut rng = self.decoder_rng(seed);
        let mut completed = set.to_vec();
        if self.complete && set.len() < self.spec.max_tokens {
            let unused: Vec<usize> = (0..self.spec.vocab_size).filter(|t| !set.contains(t)).collect();
            let extra = index::sample(&mut rng, unused.len(), self.spec.max_tokens - set.len());
            completed.extend(extra.into_iter().map(|i| unused[i]));
            completed.sort_unstable();
        }
        let noise: Vec<f64> = (0..self.spec.dim).map(|_| rng.sample(StandardNormal)).collect();
        (completed, noise)
    }

    /// Sample vector for a token set. Noise has per-component standard
    /// deviation `sigma(g) / sqrt(dim)`, so its expected norm is about `sigma(g)`.
    pub fn decode_vector(&self, set: &[usize], seed: u64, generality_level: f64) -> Embedding {
        let (completed, noise) = self.decode_parts(set, seed);
        let clean = normalized_sum(&self.vectors, &completed, self.spec.dim);
        let scale = self.noise_scale(generality_level) / (self.spec.dim as f64).sqrt();
        let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, n)| c + scale * n).collect();
        Embedding::new(noisy).unwrap_or_else(|_| Embedding::new(clean).expect("clean vector is unit"))
    }

    /// Greedy token reconstruction of a vector.
    pub fn caption_set(&self, v: &Embedding) -> Vec<usize> {
        let dim = self.spec.dim;
        let mut chosen: Vec<usize> = Vec::new();
        let mut sum = vec![0.0; dim];
        let mut current = f64::NEG_INFINITY;
        while chosen.len() < self.spec.max_tokens {
            let mut best: Option<(usize, f64)> = None;
            for t in 0..self.spec.vocab_size {
                if chosen.contains(&t) {
                    continue;
                }
                let cand: Vec<f64> = sum.iter().zip(&self.vectors[t]).map(|(a, b)| a + b).collect();
                let n = norm(&cand);
                if n == 0.0 {
                    continue;
                }
                let cos = dot(&cand, v.values()) / n;
                if best.is_none_or(|(_, c)| cos > c) {
                    best = Some((t, cos));
                }
            }
            let Some((t, cos)) = best else { break };
            if !chosen.is_empty() && cos - current < self.spec.caption_gain {
                break;
            }
            chosen.push(t);
            for (s, x) in sum.iter_mut().zip(&self.vectors[t]) {
                *s += x;
            }
            current = cos;
        }
        chosen.sort_unstable();
        chosen
    }

    pub fn classify_vector(&self, v: &Embedding) -> ClassLabel {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.centroids.iter().enumerate() {
            let cos = v.cosine(c);
            if best.is_none_or(|(_, b)| cos > b) {
                best = Some((i, cos));
            }
        }
        match best {
            Some((i, cos)) if cos >= self.spec.accept_threshold => ClassLabel(i),
            _ => self.background_label(),
        }
    }

    fn sample_vector(&self, sample: &Sample) -> Result<Embedding> {
        let bytes = sample.payload();
        if bytes.len() != 8 * self.spec.dim {
            return Err(Error::MalformedSample(format!(
                "payload has {} bytes, expected {}",
                bytes.len(),
                8 * self.spec.dim
            )));
        }
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Embedding::new(values).map_err(|e| Error::MalformedSample(e.to_string()))
    }

    fn oracle_rng(&self, description: &Description) -> ChaCha8Rng {
        let stream = digest64_bytes(description.as_str().as_bytes());
        ChaCha8Rng::seed_from_u64(derive_seed(self.spec.universe_seed, stream, 0, Purpose::Oracle))
    }

    fn medoid(&self, members: &[Vec<usize>]) -> usize {
        let embeds: Vec<Embedding> = members.iter().map(|s| self.embed_set(s)).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, e) in embeds.iter().enumerate() {
            let score: f64 = embeds.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| e.cosine(o)).sum();
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }

    /// A suite with every oracle backed by this universe and no budget limit.
    pub fn into_suite(self) -> OracleSuite {
        Universe::shared_suite(Arc::new(self))
    }

    /// Like [`Universe::into_suite`] for a universe the caller keeps using.
    pub fn shared_suite(u: Arc<Universe>) -> OracleSuite {
        OracleSuite {
            decoder: u.clone(),
            text_embedder: u.clone(),
            image_encoder: u.clone(),
            target: u.clone(),
            summarizer: u.clone(),
            grouper: u.clone(),
            enricher: u,
            budget: Arc::new(Budget::unlimited()),
            cache: None,
        }
    }
}

fn intersect(sets: &[&Vec<usize>]) -> Vec<usize> {
    let mut iter = sets.iter();
    let mut acc: Vec<usize> = iter.next().map(|s| s.to_vec()).unwrap_or_default();
    for s in iter {
        acc.retain(|t| s.contains(t));
    }
    acc
}

/// Builds a universe and returns its oracle suite.
pub fn build_universe(spec: UniverseSpec) -> Result<OracleSuite> {
    Ok(Universe::build(spec)?.into_suite())
}

impl Decoder for Universe {
    fn decode(&self, description: &Description, seed: u64, generality_level: f64) -> Result<Sample> {
        let set = self.parse(description)?;
        let v = self.decode_vector(&set, seed, generality_level);
        let payload: Vec<u8> = v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
        Sample::new(payload, seed, description.clone())
    }
}

impl TextEmbedder for Universe {
    fn embed(&self, description: &Description) -> Result<Embedding> {
        Ok(self.embed_set(&self.parse(description)?))
    }
}

impl ImageEncoder for Universe {
    fn embed(&self, sample: &Sample) -> Result<Embedding> {
        self.sample_vector(sample)
    }

    fn caption(&self, sample: &Sample) -> Result<Description> {
        let v = self.sample_vector(sample)?;
        Ok(self.render(&self.caption_set(&v)))
    }
}

impl TargetModel for Universe {
    fn classify(&self, sample: &Sample) -> Result<ClassLabel> {
        Ok(self.classify_vector(&self.sample_vector(sample)?))
    }

    fn num_classes(&self) -> Option<usize> {
        Some(self.spec.classes.len() + 1)
    }
}

impl Summarizer for Universe {
    /// All subsets with one token fewer (capped at `max_words`), in
    /// lexicographic order, truncated to `l`.
    fn summarize(&self, description: &Description, l: usize, max_words: usize) -> Result<Vec<Description>> {
        let set = self.parse(description)?;
        if set.len() <= 1 {
            return Ok(vec![self.render(&set)]);
        }
        let size = (set.len() - 1).min(max_words).max(1);
        let mut out = Vec::new();
        for combo in combinations(set.len(), size) {
            if out.len() == l {
                break;
            }
            let subset: Vec<usize> = combo.iter().map(|&i| set[i]).collect();
            out.push(self.render(&subset));
        }
        Ok(out)
    }
}

impl Grouper for Universe {
    /// One representative per cluster: the cluster's token intersection when
    /// non-empty, otherwise its medoid. If all inputs share tokens they form
    /// a single cluster; otherwise clusters are merged greedily by shared
    /// tokens, then by embedding similarity, until at most `target_count`.
    fn group(&self, descriptions: &[Description], target_count: usize) -> Result<Vec<Description>> {
        if descriptions.is_empty() {
            return Err(Error::invalid("cannot group an empty list"));
        }
        let sets = descriptions.iter().map(|d| self.parse(d)).collect::<Result<Vec<_>>>()?;
        let all: Vec<&Vec<usize>> = sets.iter().collect();
        let common = intersect(&all);
        if !common.is_empty() {
            return Ok(vec![self.render(&common)]);
        }

        let mut clusters: Vec<Vec<usize>> = (0..sets.len()).map(|i| vec![i]).collect();
        let cluster_embedding = |members: &[usize]| {
            let mut sum = vec![0.0; self.spec.dim];
            for &m in members {
                for (s, x) in sum.iter_mut().zip(self.embed_set(&sets[m]).values()) {
                    *s += x;
                }
            }
            Embedding::new(sum).ok()
        };
        while clusters.len() > target_count.max(1) {
            let mut best: Option<((usize, f64), usize, usize)> = None;
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let members: Vec<&Vec<usize>> =
                        clusters[i].iter().chain(&clusters[j]).map(|&m| &sets[m]).collect();
                    let shared = intersect(&members).len();
                    let sim = match (cluster_embedding(&clusters[i]), cluster_embedding(&clusters[j])) {
                        (Some(a), Some(b)) => a.cosine(&b),
                        _ => -1.0,
                    };
                    let better = match best {
                        None => true,
                        Some(((s, c), _, _)) => shared > s || (shared == s && sim > c),
                    };
                    if better {
                        best = Some(((shared, sim), i, j));
                    }
                }
            }
            let (_, i, j) = best.expect("at least two clusters");
            let merged = clusters.remove(j);
            clusters[i].extend(merged);
        }

        let mut out = Vec::new();
        for members in &clusters {
            let member_sets: Vec<&Vec<usize>> = members.iter().map(|&m| &sets[m]).collect();
            let common = intersect(&member_sets);
            let rep = if common.is_empty() {
                let owned: Vec<Vec<usize>> = member_sets.iter().map(|s| s.to_vec()).collect();
                owned[self.medoid(&owned)].clone()
            } else {
                common
            };
            let d = self.render(&rep);
            if !out.contains(&d) {
                out.push(d);
            }
        }
        Ok(out)
    }
}

impl Enricher for Universe {
    /// Supersets adding one distinct seeded-uniform unused token each.
    /// Sets already at `max_tokens` have no variants.
    fn enrich(&self, description: &Description, n_variants: usize) -> Result<Vec<Description>> {
        let set = self.parse(description)?;
        if set.len() >= self.spec.max_tokens {
            return Ok(Vec::new());
        }
        let unused: Vec<usize> = (0..self.spec.vocab_size).filter(|t| !set.contains(t)).collect();
        let n = n_variants.min(unused.len());
        let mut rng = self.oracle_rng(description);
        Ok(index::sample(&mut rng, unused.len(), n)
            .into_iter()
            .map(|i| {
                let mut s = set.clone();
                s.push(unused[i]);
                self.render(&s)
            })
            .collect())
    }
}

/// Index combinations of `size` out of `n`, lexicographic.
fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if size == 0 || size > n {
        return out;
    }
    let mut combo: Vec<usize> = (0..size).collect();
    loop {
        out.push(combo.clone());
        let mut i = size;
        while i > 0 && combo[i - 1] == n - size + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        combo[i - 1] += 1;
        for j in i..size {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// Every token-set description with 1..=max_tokens tokens, ordered by size
/// then lexicographically.
pub fn enumerate_candidates(universe: &Universe) -> Vec<Vec<usize>> {
    let spec = universe.spec();
    (1..=spec.max_tokens).flat_map(|size| combinations(spec.vocab_size, size)).collect()
}

/// Exact objective of a token set over an explicit seed list, computed
/// directly on the universe (no suite, no budget). Both terms use the same
/// seeds, matching an explicit seed plan.
pub fn exact_objective(
    universe: &Universe,
    set: &[usize],
    target_class: ClassLabel,
    lambda: f64,
    generality_level: f64,
    seeds: &[u64],
) -> ObjectiveValue {
    let anchor = universe.embed_set(set);
    let mut hits = 0usize;
    let mut cosines = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let v = universe.decode_vector(set, s, generality_level);
        if universe.classify_vector(&v) == target_class {
            hits += 1;
        }
        cosines.push(v.cosine(&anchor));
    }
    let n = seeds.len() as f64;
    ObjectiveValue::new(hits as f64 / n, cosines.iter().sum::<f64>() / n, lambda)
}

/// Exhaustive maximizer of the objective over all token-set descriptions.
/// Ties (within 1e-12) go to fewer tokens, then lexicographic order.
pub fn brute_force_optimum(
    spec: &UniverseSpec,
    target_class: ClassLabel,
    cfg: &Config,
    seed_set: &[u64],
) -> Result<(Description, ObjectiveValue)> {
    let count = spec.candidate_count();
    if count > MAX_BRUTE_FORCE_CANDIDATES {
        return Err(Error::invalid(format!(
            "{count} candidate descriptions exceed the brute-force limit of {MAX_BRUTE_FORCE_CANDIDATES}"
        )));
    }
    if seed_set.is_empty() {
        return Err(Error::invalid("seed set is empty"));
    }
    let universe = Universe::build(spec.clone())?;
    let g = cfg.final_generality();
    let candidates = enumerate_candidates(&universe);
    let values: Vec<ObjectiveValue> = candidates
        .par_iter()
        .map(|set| exact_objective(&universe, set, target_class, cfg.lambda, g, seed_set))
        .collect();
    let mut best = 0;
    for i in 1..candidates.len() {
        if values[i].value > values[best].value + 1e-12 {
            best = i;
        }
    }
    // Candidates are already ordered by (size, lexicographic); among the
    // tolerance ties of the winner pick the first.
    let top = values[best].value;
    let first = (0..candidates.len()).find(|&i| (values[i].value - top).abs() <= 1e-12).unwrap_or(best);
    Ok((universe.render(&candidates[first]), values[first]))
}

/// Parameters of the cloning follow-up.
#[derive(Debug, Clone)]
pub struct CloneCheck {
    pub n_train: usize,
    pub n_holdout_per_class: usize,
    pub generality_level: f64,
    pub run_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CloneReport {
    pub agreement: f64,
    pub holdout_size: usize,
    pub train_size: usize,
    pub train_label_counts: BTreeMap<ClassLabel, usize>,
}

/// Generates `n_train` samples per class from the found descriptions, labels
/// them with the target, fits a nearest-centroid learner, and measures label
/// agreement with the target on held-out samples decoded from the
/// ground-truth class descriptions.
pub fn clone_follow_up(
    universe: &Universe,
    found: &[(ClassLabel, Description)],
    check: &CloneCheck,
) -> Result<CloneReport> {
    if check.n_train == 0 || check.n_holdout_per_class == 0 {
        return Err(Error::invalid("n_train and n_holdout_per_class must be at least 1"));
    }
    if found.is_empty() {
        return Err(Error::invalid("no found descriptions"));
    }
    let dim = universe.spec().dim;
    let mut sums: BTreeMap<ClassLabel, (Vec<f64>, usize)> = BTreeMap::new();
    for (class, description) in found {
        let set = universe.parse(description)?;
        let stream = digest64_bytes(format!("{}:{}", class.0, description).as_bytes());
        for i in 0..check.n_train as u64 {
            let seed = derive_seed(check.run_seed, stream, i, Purpose::CloneTrain);
            let v = universe.decode_vector(&set, seed, check.generality_level);
            let label = universe.classify_vector(&v);
            let entry = sums.entry(label).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, x) in entry.0.iter_mut().zip(v.values()) {
                *s += x;
            }
            entry.1 += 1;
        }
    }
    let centroids: Vec<(ClassLabel, Vec<f64>)> =
        sums.iter().map(|(l, (s, n))| (*l, s.iter().map(|x| x / *n as f64).collect())).collect();
    let predict = |v: &Embedding| {
        let mut best = (centroids[0].0, f64::INFINITY);
        for (label, c) in &centroids {
            let d: f64 = c.iter().zip(v.values()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (*label, d);
            }
        }
        best.0
    };

    let mut agree = 0usize;
    let mut total = 0usize;
    for class in &universe.spec().classes {
        let set = universe.class_tokens(class.label).expect("class exists");
        for i in 0..check.n_holdout_per_class as u64 {
            let seed = derive_seed(check.run_seed, class.label.0 as u64, i, Purpose::Holdout);
            let v = universe.decode_vector(set, seed, check.generality_level);
            if predict(&v) == universe.classify_vector(&v) {
                agree += 1;
            }
            total += 1;
        }
    }
    Ok(CloneReport {
        agreement: agree as f64 / total as f64,
        holdout_size: total,
        train_size: check.n_train * found.len(),
        train_label_counts: sums.iter().map(|(l, (_, n))| (*l, *n)).collect(),
    })
}

/// Target that accepts a sample into class 0 with probability `rho` over the
/// randomness of the payload, and labels everything else class 1.
#[derive(Debug, Clone)]
pub struct BernoulliTarget {
    pub rho: f64,
    pub salt: u64,
}

impl TargetModel for BernoulliTarget {
    fn classify(&self, sample: &Sample) -> Result<ClassLabel> {
        let h = splitmix64(digest64_bytes(sample.payload()) ^ self.salt);
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        Ok(ClassLabel(if u < self.rho { 0 } else { 1 }))
    }

    fn num_classes(&self) -> Option<usize> {
        Some(2)
    }
}

/// Target that emits the same label for everything.
#[derive(Debug, Clone)]
pub struct ConstantTarget(pub ClassLabel);

impl TargetModel for ConstantTarget {
    fn classify(&self, _sample: &Sample) -> Result<ClassLabel> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> UniverseSpec {
        UniverseSpec::generate(11, 12, 32, 3, &[2, 2, 2], 0.7).unwrap()
    }

    fn d(s: &str) -> Description {
        Description::new(s).unwrap()
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        assert_eq!(combinations(4, 2), vec![
            vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]
        ]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert!(combinations(2, 3).is_empty());
    }

    #[test]
    fn candidate_counts() {
        let spec = UniverseSpec { vocab_size: 24, max_tokens: 4, ..UniverseSpec::default() };
        assert_eq!(spec.candidate_count(), 12_950);
        let spec = UniverseSpec { vocab_size: 12, max_tokens: 3, ..UniverseSpec::default() };
        assert_eq!(spec.candidate_count(), 298);
        let u = Universe::build(spec).unwrap();
        assert_eq!(enumerate_candidates(&u).len(), 298);
    }

    #[test]
    fn token_names_are_padded() {
        assert_eq!(token_name(3, 24), "t03");
        assert_eq!(token_name(3, 150), "t003");
    }

    #[test]
    fn generated_classes_are_separated() {
        let spec = small_spec();
        let u = Universe::build(spec.clone()).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(u.centroid(ClassLabel(i)).unwrap().cosine(u.centroid(ClassLabel(j)).unwrap()) < 0.7);
            }
        }
        let back = UniverseSpec::from_json(spec.to_json().unwrap().as_bytes()).unwrap();
        for (a, b) in back.classes.iter().zip(&spec.classes) {
            assert_eq!(a.required_tokens, b.required_tokens);
            assert!(a.centroid.as_ref().unwrap().cosine(b.centroid.as_ref().unwrap()) > 1.0 - 1e-12);
        }
        Universe::build(back).unwrap();
    }

    #[test]
    fn unsatisfiable_separation_fails() {
        // Two classes out of a two-token vocabulary with one token each can
        // only be separated if the tokens are nearly opposite.
        let err = UniverseSpec::generate(1, 2, 4, 1, &[1, 1], -0.999).unwrap_err();
        assert!(matches!(err, Error::UniverseConstructionFailed(_)));
    }

    #[test]
    fn tampered_centroid_is_rejected() {
        let mut spec = small_spec();
        spec.classes[0].centroid = spec.classes[1].centroid.clone();
        assert!(Universe::build(spec).is_err());
    }

    #[test]
    fn single_token_embedding_is_token_vector() {
        let u = Universe::build(small_spec()).unwrap();
        for t in 0..12 {
            let e = u.embed_set(&[t]);
            for (a, b) in e.values().iter().zip(u.token_vector(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_is_pure_and_completes() {
        let u = Universe::build(small_spec()).unwrap();
        let a = Decoder::decode(&u, &d("t01"), 42, 0.5).unwrap();
        let b = Decoder::decode(&u, &d("t01"), 42, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed(), 42);
        let completion = u.completion(&[1], 42);
        assert_eq!(completion.len(), 3);
        assert!(completion.contains(&1));
    }

    #[test]
    fn malformed_payload_rejected() {
        let u = Universe::build(small_spec()).unwrap();
        let s = Sample::new(vec![1, 2, 3], 0, d("t00")).unwrap();
        assert!(matches!(ImageEncoder::embed(&u, &s), Err(Error::MalformedSample(_))));
    }

    #[test]
    fn unknown_tokens_rejected() {
        let u = Universe::build(small_spec()).unwrap();
        assert!(u.parse(&d("t00 parrot")).is_err());
    }

    #[test]
    fn summarizer_returns_smaller_subsets() {
        let u = Universe::build(small_spec()).unwrap();
        let out = Summarizer::summarize(&u, &d("t01 t02 t03"), 3, 20).unwrap();
        let texts: Vec<&str> = out.iter().map(|d| d.as_str()).collect();
        assert_eq!(texts, ["t01 t02", "t01 t03", "t02 t03"]);
        let out = Summarizer::summarize(&u, &d("t01 t02 t03"), 2, 20).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(Summarizer::summarize(&u, &d("t05"), 3, 20).unwrap(), vec![d("t05")]);
        let out = Summarizer::summarize(&u, &d("t01 t02 t03"), 3, 1).unwrap();
        assert!(out.iter().all(|x| x.word_count() <= 1));
    }

    #[test]
    fn grouper_intersects() {
        let u = Universe::build(small_spec()).unwrap();
        let out = Grouper::group(&u, &[d("t00 t01"), d("t00 t02"), d("t00 t03")], 1).unwrap();
        assert_eq!(out, vec![d("t00")]);
        assert_eq!(Grouper::group(&u, &[d("t04 t07")], 3).unwrap(), vec![d("t04 t07")]);
        assert!(Grouper::group(&u, &[], 3).is_err());
    }

    #[test]
    fn grouper_clusters_disjoint_inputs() {
        let u = Universe::build(small_spec()).unwrap();
        let input = [d("t00 t01"), d("t00 t02"), d("t05 t06"), d("t05 t07"), d("t09")];
        let out = Grouper::group(&u, &input, 3).unwrap();
        assert!(out.len() <= 3);
        assert!(out.contains(&d("t00")));
        assert!(out.contains(&d("t05")));
        let again = Grouper::group(&u, &input, 3).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn enricher_adds_one_distinct_token() {
        let u = Universe::build(small_spec()).unwrap();
        let out = Enricher::enrich(&u, &d("t03"), 2).unwrap();
        assert_eq!(out.len(), 2);
        assert_ne!(out[0], out[1]);
        for v in &out {
            let set = u.parse(v).unwrap();
            assert_eq!(set.len(), 2);
            assert!(set.contains(&3));
        }
        assert!(Enricher::enrich(&u, &d("t03"), 0).unwrap().is_empty());
        assert_eq!(out, Enricher::enrich(&u, &d("t03"), 2).unwrap());
    }

    #[test]
    fn centroid_vector_gets_its_label() {
        let u = Universe::build(small_spec()).unwrap();
        for i in 0..3 {
            assert_eq!(u.classify_vector(u.centroid(ClassLabel(i)).unwrap()), ClassLabel(i));
        }
    }

    #[test]
    fn accept_all_universe_labels_everything_zero() {
        let spec = UniverseSpec::generate(5, 12, 32, 3, &[2], -1.0).unwrap();
        let u = Universe::build(spec).unwrap();
        for seed in 0..32 {
            let v = u.decode_vector(&[seed as usize % 12], seed, 1.0);
            assert_eq!(u.classify_vector(&v), ClassLabel(0));
        }
    }

    #[test]
    fn bernoulli_target_rate() {
        let t = BernoulliTarget { rho: 0.3, salt: 1 };
        let hits = (0..20_000u32)
            .filter(|i| {
                let s = Sample::new(i.to_le_bytes().to_vec(), 0, d("x")).unwrap();
                t.classify(&s).unwrap() == ClassLabel(0)
            })
            .count();
        assert!((hits as f64 / 20_000.0 - 0.3).abs() < 0.02);
    }

    #[test]
    fn oversized_brute_force_refused() {
        let spec = UniverseSpec { vocab_size: 200, max_tokens: 4, ..UniverseSpec::default() };
        assert!(spec.candidate_count() > MAX_BRUTE_FORCE_CANDIDATES);
        assert!(brute_force_optimum(&spec, ClassLabel(0), &Config::default(), &[1]).is_err());
    }

    #[test]
    fn clone_check_rejects_zero_training() {
        let u = Universe::build(small_spec()).unwrap();
        let check = CloneCheck { n_train: 0, n_holdout_per_class: 8, generality_level: 0.0, run_seed: 0 };
        assert!(clone_follow_up(&u, &[(ClassLabel(0), d("t00"))], &check).is_err());
    }
}
