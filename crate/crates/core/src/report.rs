//! Tree statistics and the human-readable report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::objective::ObjectiveValue;
use crate::oracle::BudgetCounts;
use crate::search::Candidate;
use crate::tree::{NodeStatus, SearchTree};
use crate::types::{ClassLabel, Description};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthRow {
    pub depth: usize,
    pub nodes: usize,
    pub scored: usize,
    pub best_relevance: Option<f64>,
    pub mean_relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeStats {
    pub nodes: usize,
    pub partial: bool,
    pub status_counts: BTreeMap<NodeStatus, usize>,
    pub by_depth: Vec<DepthRow>,
    /// Non-root descriptions (captions after summarization and grouping)
    /// with their occurrence counts, most frequent first.
    pub description_frequency: Vec<(Description, usize)>,
    pub word_frequency: Vec<(String, usize)>,
    pub mean_words: f64,
}

fn ranked<K: Ord + Clone>(counts: BTreeMap<K, usize>) -> Vec<(K, usize)> {
    let mut v: Vec<(K, usize)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

impl TreeStats {
    pub fn from_tree(tree: &SearchTree) -> Self {
        let mut status_counts = BTreeMap::new();
        let mut depth_rel: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
        let mut descriptions = BTreeMap::new();
        let mut words = BTreeMap::new();
        let mut word_total = 0usize;
        let mut children = 0usize;
        for node in tree.nodes.values() {
            *status_counts.entry(node.status).or_insert(0) += 1;
            let row = depth_rel.entry(node.depth).or_insert((0, Vec::new()));
            row.0 += 1;
            if let Some(r) = node.relevance {
                row.1.push(r.value());
            }
            if node.parent_id.is_some() {
                children += 1;
                *descriptions.entry(node.description.clone()).or_insert(0) += 1;
                word_total += node.description.word_count();
                for w in node.description.words() {
                    *words.entry(w.to_string()).or_insert(0) += 1;
                }
            }
        }
        let by_depth = depth_rel
            .into_iter()
            .map(|(depth, (nodes, rels))| DepthRow {
                depth,
                nodes,
                scored: rels.len(),
                best_relevance: rels.iter().copied().reduce(f64::max),
                mean_relevance: (!rels.is_empty()).then(|| rels.iter().sum::<f64>() / rels.len() as f64),
            })
            .collect();
        TreeStats {
            nodes: tree.nodes.len(),
            partial: !tree.is_complete(),
            status_counts,
            by_depth,
            description_frequency: ranked(descriptions),
            word_frequency: ranked(words),
            mean_words: if children == 0 { 0.0 } else { word_total as f64 / children as f64 },
        }
    }
}

/// The fields of a persisted `class_<i>.report.json` that the text report uses.
#[derive(Debug, Clone, Deserialize)]
pub struct ReportSummary {
    pub target_class: ClassLabel,
    pub best_description: Option<Description>,
    pub best_objective: Option<ObjectiveValue>,
    pub iterations_run: usize,
    pub budget_spent: BudgetCounts,
    pub candidates: Vec<Candidate>,
    pub partial: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Plain-text rendering of a tree and, when available, its report.
pub fn render_text(tree: &SearchTree, report: Option<&ReportSummary>, top: usize) -> String {
    let stats = TreeStats::from_tree(tree);
    let partial = stats.partial || report.is_some_and(|r| r.partial);
    let mut out = String::new();
    let class = report.map_or_else(|| "?".to_string(), |r| r.target_class.to_string());
    let _ = writeln!(
        out,
        "class {class}: {}  iterations {}  nodes {}  lambda {}",
        if partial { "PARTIAL" } else { "COMPLETE" },
        tree.iteration,
        stats.nodes,
        tree.config.lambda
    );
    if let Some(r) = report {
        if let Some(best) = &r.best_description {
            match &r.best_objective {
                Some(o) => {
                    let _ = writeln!(
                        out,
                        "best: {best}  V={:.4} (relevance {:.4}, penalty {:.4})",
                        o.value, o.relevance, o.penalty
                    );
                }
                None => {
                    let _ = writeln!(out, "best so far (by relevance): {best}");
                }
            }
        }
        if !r.candidates.is_empty() {
            let _ = writeln!(out, "\n{:>4}  {:>5}  {:>8}  {:>9}  {:>7}  description", "rank", "node", "V", "relevance", "penalty");
            for (i, c) in r.candidates.iter().take(top).enumerate() {
                let _ = writeln!(
                    out,
                    "{:>4}  {:>5}  {:>8.4}  {:>9.4}  {:>7.4}  {}",
                    i + 1,
                    c.node_id,
                    c.objective.value,
                    c.objective.relevance,
                    c.objective.penalty,
                    c.description
                );
            }
        }
    }
    let _ = writeln!(out, "\n{:>5}  {:>5}  {:>6}  {:>6}  {:>6}", "depth", "nodes", "scored", "best", "mean");
    for row in &stats.by_depth {
        let _ = writeln!(
            out,
            "{:>5}  {:>5}  {:>6}  {:>6}  {:>6}",
            row.depth,
            row.nodes,
            row.scored,
            fmt_opt(row.best_relevance),
            fmt_opt(row.mean_relevance)
        );
    }
    let statuses: Vec<String> = stats.status_counts.iter().map(|(s, n)| format!("{} {n}", s.name())).collect();
    let _ = writeln!(out, "\nstatus: {}", statuses.join(", "));
    if let Some(r) = report {
        let spent: Vec<String> =
            r.budget_spent.iter().filter(|(_, n)| **n > 0).map(|(k, n)| format!("{k} {n}")).collect();
        let _ = writeln!(out, "calls: {}", if spent.is_empty() { "none".to_string() } else { spent.join(", ") });
    }
    if !stats.description_frequency.is_empty() {
        let _ = writeln!(out, "\nchild descriptions: {} distinct, {:.2} words on average", stats.description_frequency.len(), stats.mean_words);
        for (d, n) in stats.description_frequency.iter().take(top) {
            let _ = writeln!(out, "{n:>5}  {d}");
        }
        let words: Vec<String> = stats.word_frequency.iter().take(top).map(|(w, n)| format!("{w} {n}")).collect();
        let _ = writeln!(out, "top words: {}", words.join(", "));
    }
    out
}
