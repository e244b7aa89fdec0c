//! Reference computations for synthetic universes, written from the
//! universe definition rather than through the engine's estimators.

use domain_bridge::synthetic::Universe;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normalize(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// normalize(sum of the token vectors).
pub fn text_embedding(u: &Universe, set: &[usize]) -> Vec<f64> {
    let mut sum = vec![0.0; u.spec().dim];
    for &t in set {
        for (s, x) in sum.iter_mut().zip(u.token_vector(t)) {
            *s += x;
        }
    }
    normalize(sum)
}

pub fn class_sets(u: &Universe) -> Vec<Vec<usize>> {
    let names = u.token_names();
    u.spec()
        .classes
        .iter()
        .map(|c| {
            let mut s: Vec<usize> =
                c.required_tokens.iter().map(|t| names.iter().position(|n| n == t).unwrap()).collect();
            s.sort_unstable();
            s
        })
        .collect()
}

/// Nearest class centroid when its cosine reaches the accept threshold,
/// otherwise the background label (one past the last class).
pub fn classify(u: &Universe, v: &[f64]) -> usize {
    let sets = class_sets(u);
    let mut best = (sets.len(), f64::NEG_INFINITY);
    for (i, s) in sets.iter().enumerate() {
        let c = cosine(v, &text_embedding(u, s));
        if c > best.1 {
            best = (i, c);
        }
    }
    if best.1 >= u.spec().accept_threshold {
        best.0
    } else {
        sets.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Exact {
    pub relevance: f64,
    pub penalty: f64,
    pub value: f64,
}

/// Objective of `set` with both terms over the same seed list.
pub fn objective(u: &Universe, set: &[usize], class: usize, lambda: f64, g: f64, seeds: &[u64]) -> Exact {
    let anchor = text_embedding(u, set);
    let sets = class_sets(u);
    let centroids: Vec<Vec<f64>> = sets.iter().map(|s| text_embedding(u, s)).collect();
    let mut hits = 0usize;
    let mut cos_sum = 0.0;
    for &s in seeds {
        let v = u.decode_vector(set, s, g);
        let v = v.values();
        let (mut bi, mut bc) = (sets.len(), f64::NEG_INFINITY);
        for (i, c) in centroids.iter().enumerate() {
            let x = cosine(v, c);
            if x > bc {
                (bi, bc) = (i, x);
            }
        }
        if bc >= u.spec().accept_threshold && bi == class {
            hits += 1;
        }
        cos_sum += cosine(v, &anchor);
    }
    let n = seeds.len() as f64;
    let (relevance, penalty) = (hits as f64 / n, cos_sum / n);
    Exact { relevance, penalty, value: relevance - lambda * penalty }
}

/// All token sets of size 1..=max_tokens.
pub fn all_sets(vocab: usize, max_tokens: usize) -> Vec<Vec<usize>> {
    fn grow(start: usize, vocab: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for t in start..vocab {
            cur.push(t);
            grow(t + 1, vocab, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(0, vocab, max_tokens, &mut Vec::new(), &mut out);
    out
}

/// Every candidate with its exact value, best first.
pub fn ranking(u: &Universe, class: usize, lambda: f64, g: f64, seeds: &[u64]) -> Vec<(Vec<usize>, Exact)> {
    let mut all: Vec<(Vec<usize>, Exact)> = all_sets(u.spec().vocab_size, u.spec().max_tokens)
        .into_iter()
        .map(|s| {
            let e = objective(u, &s, class, lambda, g, seeds);
            (s, e)
        })
        .collect();
    all.sort_by(|a, b| b.1.value.total_cmp(&a.1.value));
    all
}

/// Population variance (trace of the covariance) of the sample vectors.
pub fn embedding_variance(u: &Universe, set: &[usize], g: f64, seeds: &[u64]) -> f64 {
    let vs: Vec<Vec<f64>> = seeds.iter().map(|&s| u.decode_vector(set, s, g).values().to_vec()).collect();
    let n = vs.len() as f64;
    let dim = u.spec().dim;
    let mean: Vec<f64> = (0..dim).map(|d| vs.iter().map(|v| v[d]).sum::<f64>() / n).collect();
    vs.iter().map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>()).sum::<f64>() / n
}

pub fn token_set(u: &Universe, text: &str) -> Vec<usize> {
    let names = u.token_names();
    let mut s: Vec<usize> = text.split_whitespace().map(|w| names.iter().position(|n| n == w).unwrap()).collect();
    s.sort_unstable();
    s
}
