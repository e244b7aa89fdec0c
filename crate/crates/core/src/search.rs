//! Breadth-first description refinement.
//!
//! Each iteration scores every pending node of the current generation, then
//! either enriches nodes that produced no target-class samples (shallow
//! nodes only) or prunes against the parent and spawns children from the
//! captions of the correctly classified samples. After termination every
//! surviving node is scored with the full objective and the best one wins.
//!
//! All per-node work is computed first and applied to the tree afterwards,
//! so a budget failure part-way through an iteration leaves the tree in a
//! state that a resumed run continues from exactly.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::objective::{estimate_relevance, objective_value, ObjectiveValue, RelevanceEstimate};
use crate::oracle::{counts_since, dedup, BudgetCounts, OracleSuite};
use crate::seed::SeedPlan;
use crate::tree::{NodeId, NodeStatus, Relevance, SearchTree};
use crate::types::{ClassLabel, Description, Sample};

/// Values within this distance of the top objective count as tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node_id: NodeId,
    pub description: Description,
    pub objective: ObjectiveValue,
}

#[derive(Debug, Clone)]
pub struct SearchReport {
    pub target_class: ClassLabel,
    /// `None` only for partial reports that never reached final selection.
    pub best_description: Option<Description>,
    pub best_objective: Option<ObjectiveValue>,
    pub tree: SearchTree,
    pub iterations_run: usize,
    /// Calls made by this invocation, final selection included.
    pub budget_spent: BudgetCounts,
    /// Calls made by the refinement iterations only.
    pub search_budget: BudgetCounts,
    /// Sorted by objective value descending, ties by node id.
    pub candidates: Vec<Candidate>,
    pub partial: bool,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    target_class: ClassLabel,
    best_description: &'a Option<Description>,
    best_objective: &'a Option<ObjectiveValue>,
    iterations_run: usize,
    budget_spent: &'a BudgetCounts,
    search_budget: &'a BudgetCounts,
    candidates: &'a [Candidate],
    partial: bool,
    lambda: f64,
    config_digest: String,
}

impl SearchReport {
    /// Canonical JSON of everything except the tree, which has its own file.
    pub fn to_json(&self) -> Result<String> {
        let file = ReportFile {
            target_class: self.target_class,
            best_description: &self.best_description,
            best_objective: &self.best_objective,
            iterations_run: self.iterations_run,
            budget_spent: &self.budget_spent,
            search_budget: &self.search_budget,
            candidates: &self.candidates,
            partial: self.partial,
            lambda: self.tree.config.lambda,
            config_digest: format!("{:016x}", self.tree.config_digest),
        };
        let mut text = canonical::to_canonical_string(&file)?;
        text.push('\n');
        Ok(text)
    }
}

/// Builds the initial forest: one pending depth-0 root per distinct
/// description. The forest's common super-root is implicit.
pub fn init_tree(initial_descriptions: &[Description], cfg: &Config) -> Result<SearchTree> {
    if initial_descriptions.is_empty() {
        return Err(Error::invalid("at least one initial description is required"));
    }
    cfg.validate()?;
    let mut tree = SearchTree::empty(cfg.clone());
    for d in dedup(initial_descriptions.to_vec()) {
        tree.add_root(d);
    }
    tree.debug_validate();
    Ok(tree)
}

/// Status of a child given its relevance and its parent's.
fn prune_status(child: Relevance, parent: Relevance) -> NodeStatus {
    if child.is_saturated() && parent.is_saturated() {
        NodeStatus::Saturated
    } else if child.exceeds(&parent) {
        NodeStatus::Scored
    } else {
        NodeStatus::Terminated
    }
}

/// A scored non-root node survives only by strictly beating its
/// parent, except that a perfect child of a perfect parent is kept as
/// saturated. Updates the node's status.
pub fn prune_check(tree: &mut SearchTree, node_id: NodeId) -> Result<bool> {
    let node = tree.node(node_id)?;
    let parent_id = node.parent_id.ok_or_else(|| Error::invalid("root nodes are never pruned"))?;
    if node.status != NodeStatus::Scored {
        return Err(Error::NoOp(format!("node {node_id} is not in the scored state")));
    }
    let rel = node.relevance.ok_or_else(|| Error::invariant("scored node without relevance"))?;
    let parent_rel =
        tree.node(parent_id)?.relevance.ok_or_else(|| Error::invariant("parent of a scored node is unscored"))?;
    let status = prune_status(rel, parent_rel);
    tree.node_mut(node_id)?.status = status;
    tree.debug_validate();
    Ok(status != NodeStatus::Terminated)
}

/// Captions of the correctly classified samples, deduplicated.
pub fn extract_child_descriptions(correct_samples: &[Sample], suite: &OracleSuite) -> Result<Vec<Description>> {
    let captions: Vec<Description> =
        correct_samples.par_iter().map(|s| suite.caption(s)).collect::<Result<_>>()?;
    Ok(dedup(captions))
}

/// Collapses the child list through the grouper when it is too long.
pub fn group_if_needed(descriptions: &[Description], cfg: &Config, suite: &OracleSuite) -> Result<Vec<Description>> {
    if descriptions.len() > cfg.group_threshold {
        suite.group(descriptions, cfg.group_target)
    } else {
        Ok(descriptions.to_vec())
    }
}

/// Shortens a verbose description to the summary with the best relevance
/// at `generality_level`. Ties go to the shorter summary.
pub fn summarize_and_select(
    description: &Description,
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
    generality_level: f64,
) -> Result<Description> {
    Search::new(target_class, cfg, suite)?.summarize_and_select(description, generality_level)
}

/// Scores a pending node.
pub fn expand_node(
    tree: &mut SearchTree,
    node_id: NodeId,
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
) -> Result<RelevanceEstimate> {
    let node = tree.node(node_id)?;
    if node.status != NodeStatus::Pending {
        return Err(Error::NoOp(format!("node {node_id} has already been expanded")));
    }
    let g = cfg.generality_at(tree.generations()[&node_id]);
    let est = Search::new(target_class, cfg, suite)?.relevance(&node.description, g)?;
    let node = tree.node_mut(node_id)?;
    node.status = NodeStatus::Scored;
    node.relevance = Some(est.relevance());
    tree.frontier.retain(|id| *id != node_id);
    tree.debug_validate();
    Ok((*est).clone())
}

/// Shallow nodes that produced no target-class sample get enriched
/// variants, and variants that do produce one become scored children.
/// Returns the new child ids.
pub fn maybe_enrich(
    tree: &mut SearchTree,
    node_id: NodeId,
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
) -> Result<Vec<NodeId>> {
    let node = tree.node(node_id)?;
    let eligible = matches!(node.status, NodeStatus::Scored | NodeStatus::Terminated)
        && node.child_ids.is_empty()
        && node.relevance.is_some_and(|r| r.k == 0)
        && node.depth <= cfg.enrich_depth_limit;
    if !eligible {
        return Ok(Vec::new());
    }
    let g = cfg.generality_at(tree.generations()[&node_id]);
    let search = Search::new(target_class, cfg, suite)?;
    let kept = search.enriched_variants(&node.description.clone(), g)?;
    let mut ids = Vec::new();
    for (description, est) in kept {
        ids.push(tree.add_child(node_id, description, Some(est.relevance()), NodeStatus::Scored)?);
    }
    tree.debug_validate();
    Ok(ids)
}

/// Runs a full investigation of one class.
pub fn run_search(
    initial: &[Description],
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
) -> Result<SearchReport> {
    let tree = init_tree(initial, cfg)?;
    Search::new(target_class, cfg, suite)?.run(tree, None)
}

/// Continues a persisted tree to completion.
pub fn resume_search(
    tree: SearchTree,
    target_class: ClassLabel,
    cfg: &Config,
    suite: &OracleSuite,
) -> Result<SearchReport> {
    if tree.config_digest != cfg.digest() {
        return Err(Error::ConfigMismatch {
            tree: format!("{:016x}", tree.config_digest),
            config: cfg.digest_hex(),
        });
    }
    tree.validate()?;
    Search::new(target_class, cfg, suite)?.run(tree, None)
}

/// Children planned for one node, applied to the tree after all of the
/// node's oracle work has succeeded.
#[derive(Debug, Clone)]
struct NewNode {
    description: Description,
    relevance: Option<Relevance>,
    status: NodeStatus,
    children: Vec<NewNode>,
}

#[derive(Debug)]
struct NodePlan {
    id: NodeId,
    relevance: Relevance,
    status: NodeStatus,
    children: Vec<NewNode>,
}

/// Outcome of advancing a tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    /// Termination reached; the frontier has been cleared.
    Complete,
    /// Stopped at the requested iteration limit.
    Interrupted,
}

type MemoKey = (Description, u64);

/// Search state for one target class. Holds memo tables so repeated
/// descriptions at the same generality level are never re-sampled.
pub struct Search<'a> {
    target_class: ClassLabel,
    cfg: &'a Config,
    suite: &'a OracleSuite,
    seeds: SeedPlan,
    relevance_memo: Mutex<HashMap<MemoKey, Arc<RelevanceEstimate>>>,
    spawn_memo: Mutex<HashMap<MemoKey, Vec<Description>>>,
}

impl<'a> Search<'a> {
    pub fn new(target_class: ClassLabel, cfg: &'a Config, suite: &'a OracleSuite) -> Result<Self> {
        cfg.validate()?;
        if let Some(n) = suite.target.num_classes() {
            if target_class.0 >= n {
                return Err(Error::invalid(format!("class {target_class} is outside the target's {n} classes")));
            }
        }
        Ok(Search {
            target_class,
            cfg,
            suite,
            seeds: SeedPlan::Derived { run_seed: cfg.run_seed },
            relevance_memo: Mutex::new(HashMap::new()),
            spawn_memo: Mutex::new(HashMap::new()),
        })
    }

    fn relevance(&self, description: &Description, g: f64) -> Result<Arc<RelevanceEstimate>> {
        let key = (description.clone(), g.to_bits());
        if let Some(hit) = self.relevance_memo.lock().expect("memo lock").get(&key) {
            return Ok(hit.clone());
        }
        let est = Arc::new(estimate_relevance(
            description,
            self.target_class,
            self.cfg.m_samples_per_node,
            g,
            self.suite,
            &self.seeds,
        )?);
        self.relevance_memo.lock().expect("memo lock").insert(key, est.clone());
        Ok(est)
    }

    fn summarize_and_select(&self, description: &Description, g: f64) -> Result<Description> {
        if description.word_count() <= self.cfg.verbosity_threshold {
            return Ok(description.clone());
        }
        let variants = self.suite.summarize(description, self.cfg.l_summaries, self.cfg.verbosity_threshold)?;
        let mut best = (description.clone(), self.relevance(description, g)?.relevance());
        for v in variants {
            let rel = self.relevance(&v, g)?.relevance();
            let (ref b, ref b_rel) = best;
            let better = rel.exceeds(b_rel)
                || (!b_rel.exceeds(&rel)
                    && (v.word_count(), v.as_str()) < (b.word_count(), b.as_str()));
            if better {
                best = (v, rel);
            }
        }
        Ok(best.0)
    }

    /// Children spawned from a node's correct samples.
    fn spawn(&self, description: &Description, est: &RelevanceEstimate, g: f64) -> Result<Vec<Description>> {
        let key = (description.clone(), g.to_bits());
        if let Some(hit) = self.spawn_memo.lock().expect("memo lock").get(&key) {
            return Ok(hit.clone());
        }
        let captions = extract_child_descriptions(&est.correct_samples, self.suite)?;
        let mut processed = Vec::with_capacity(captions.len());
        for c in &captions {
            processed.push(self.summarize_and_select(c, g)?);
        }
        let children = group_if_needed(&dedup(processed), self.cfg, self.suite)?;
        self.spawn_memo.lock().expect("memo lock").insert(key, children.clone());
        Ok(children)
    }

    /// Enriched variants that yield at least one target-class sample.
    fn enriched_variants(
        &self,
        description: &Description,
        g: f64,
    ) -> Result<Vec<(Description, Arc<RelevanceEstimate>)>> {
        let variants = self.suite.enrich(description, self.cfg.n_enrich_variants)?;
        let mut kept = Vec::new();
        for v in variants {
            let est = self.relevance(&v, g)?;
            if est.k >= 1 {
                kept.push((v, est));
            } else {
                log::debug!("enriched variant `{v}` of `{description}` discarded: no target-class samples");
            }
        }
        Ok(kept)
    }

    fn plan_node(&self, tree: &SearchTree, id: NodeId, iteration: usize) -> Result<NodePlan> {
        let node = tree.node(id)?;
        let g = self.cfg.generality_at(iteration);
        let may_spawn = iteration + 1 < self.cfg.max_depth;
        let est = self.relevance(&node.description, g)?;
        let relevance = est.relevance();

        let status = match node.parent_id {
            None => NodeStatus::Scored,
            Some(p) => {
                let parent_rel = tree
                    .node(p)?
                    .relevance
                    .ok_or_else(|| Error::invariant(format!("parent {p} of pending node {id} is unscored")))?;
                prune_status(relevance, parent_rel)
            }
        };

        if est.k == 0 && node.depth <= self.cfg.enrich_depth_limit {
            let mut children = Vec::new();
            for (description, child_est) in self.enriched_variants(&node.description, g)? {
                let grandchildren = if may_spawn {
                    self.spawn(&description, &child_est, g)?.into_iter().map(pending).collect()
                } else {
                    Vec::new()
                };
                children.push(NewNode {
                    description,
                    relevance: Some(child_est.relevance()),
                    status: NodeStatus::Scored,
                    children: grandchildren,
                });
            }
            return Ok(NodePlan { id, relevance, status, children });
        }

        let children = if status == NodeStatus::Scored && may_spawn {
            self.spawn(&node.description, &est, g)?.into_iter().map(pending).collect()
        } else {
            Vec::new()
        };
        Ok(NodePlan { id, relevance, status, children })
    }

    fn apply(tree: &mut SearchTree, plan: NodePlan) -> Result<()> {
        fn attach(tree: &mut SearchTree, parent: NodeId, nodes: Vec<NewNode>) -> Result<()> {
            for n in nodes {
                let id = tree.add_child(parent, n.description, n.relevance, n.status)?;
                attach(tree, id, n.children)?;
            }
            Ok(())
        }
        let node = tree.node_mut(plan.id)?;
        node.relevance = Some(plan.relevance);
        node.status = plan.status;
        tree.frontier.retain(|id| *id != plan.id);
        attach(tree, plan.id, plan.children)?;
        tree.debug_validate();
        Ok(())
    }

    /// Best relevance after each completed iteration.
    fn best_by_iteration(tree: &SearchTree) -> Vec<Option<Relevance>> {
        let gens = tree.generations();
        let mut best: Vec<Option<Relevance>> = vec![None; tree.iteration];
        for node in tree.nodes.values() {
            let Some(rel) = node.relevance else { continue };
            for slot in best.iter_mut().skip(gens[&node.id]) {
                if slot.is_none_or(|b| rel.exceeds(&b)) {
                    *slot = Some(rel);
                }
            }
        }
        best
    }

    /// Iterations at the end of the history without strict improvement.
    fn stale_iterations(tree: &SearchTree) -> usize {
        let best = Self::best_by_iteration(tree);
        let mut stale = 0;
        for t in (0..best.len()).rev() {
            let improved = match (t.checked_sub(1).and_then(|p| best[p]), best[t]) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(prev), Some(now)) => now.exceeds(&prev),
            };
            if improved {
                break;
            }
            stale += 1;
        }
        stale
    }

    /// Runs refinement iterations until termination, or until
    /// `max_iterations` more iterations have completed.
    pub fn advance(&self, tree: &mut SearchTree, max_iterations: Option<usize>) -> Result<Progress> {
        if tree.config_digest != self.cfg.digest() {
            return Err(Error::ConfigMismatch {
                tree: format!("{:016x}", tree.config_digest),
                config: self.cfg.digest_hex(),
            });
        }
        let mut done = 0;
        loop {
            if tree.frontier.is_empty() {
                return Ok(Progress::Complete);
            }
            if tree.iteration >= self.cfg.max_depth {
                tree.frontier.clear();
                return Ok(Progress::Complete);
            }
            if max_iterations.is_some_and(|limit| done >= limit) {
                return Ok(Progress::Interrupted);
            }
            let t = tree.iteration;
            let gens = tree.generations();
            let mut current: Vec<NodeId> = tree.frontier.iter().copied().filter(|id| gens[id] == t).collect();
            current.sort_unstable();
            for id in current {
                let plan = self.plan_node(tree, id, t)?;
                Self::apply(tree, plan)?;
            }
            tree.iteration += 1;
            done += 1;
            log::debug!(
                "class {} iteration {t} done: {} nodes, {} pending",
                self.target_class,
                tree.nodes.len(),
                tree.frontier.len()
            );
            if Self::stale_iterations(tree) >= self.cfg.no_improvement_patience {
                tree.frontier.clear();
                return Ok(Progress::Complete);
            }
        }
    }

    /// Final selection over a completed tree.
    pub fn select(&self, tree: &SearchTree) -> Result<(Vec<Candidate>, Description, ObjectiveValue)> {
        let mut seen = BTreeMap::new();
        for node in tree.nodes.values() {
            if matches!(node.status, NodeStatus::Scored | NodeStatus::Saturated) {
                seen.entry(node.description.clone()).or_insert(node.id);
            }
        }
        let mut firsts: Vec<(NodeId, Description)> = seen.into_iter().map(|(d, id)| (id, d)).collect();
        firsts.sort_unstable_by_key(|(id, _)| *id);
        if firsts.is_empty() {
            return Err(Error::invalid("tree has no scored nodes to select from"));
        }
        let mut candidates = Vec::with_capacity(firsts.len());
        for (node_id, description) in firsts {
            let objective = objective_value(&description, self.target_class, self.cfg, self.suite, &self.seeds)?;
            candidates.push(Candidate { node_id, description, objective });
        }
        candidates.sort_by(|a, b| {
            b.objective.value.total_cmp(&a.objective.value).then(a.node_id.cmp(&b.node_id))
        });
        let top = candidates[0].objective;
        let tied: Vec<Description> = candidates
            .iter()
            .filter(|c| (c.objective.value - top.value).abs() <= TIE_TOLERANCE)
            .map(|c| c.description.clone())
            .collect();
        let best = if tied.len() > 1 {
            let representative = self.suite.group(&tied, 1)?.remove(0);
            self.summarize_and_select(&representative, self.cfg.final_generality())?
        } else {
            candidates[0].description.clone()
        };
        Ok((candidates, best, top))
    }

    /// Advances `tree` to completion (or `max_iterations`) and builds the report.
    pub fn run(&self, mut tree: SearchTree, max_iterations: Option<usize>) -> Result<SearchReport> {
        let start = self.suite.budget.snapshot();
        let progress = match self.advance(&mut tree, max_iterations) {
            Ok(p) => Some(p),
            Err(e) if e.is_budget() => {
                log::warn!("class {}: {e}; returning a partial report", self.target_class);
                None
            }
            Err(e) => return Err(e),
        };
        let search_budget = counts_since(&self.suite.budget.snapshot(), &start);
        let mut report = SearchReport {
            target_class: self.target_class,
            best_description: None,
            best_objective: None,
            iterations_run: tree.iteration,
            budget_spent: search_budget.clone(),
            search_budget,
            candidates: Vec::new(),
            partial: true,
            tree,
        };
        if progress != Some(Progress::Complete) {
            report.best_description = best_relevance_description(&report.tree);
            return Ok(report);
        }
        match self.select(&report.tree) {
            Ok((candidates, best, top)) => {
                report.candidates = candidates;
                report.best_description = Some(best);
                report.best_objective = Some(top);
                report.partial = false;
            }
            Err(e) if e.is_budget() => {
                log::warn!("class {}: {e} during final selection", self.target_class);
                report.best_description = best_relevance_description(&report.tree);
            }
            Err(e) => return Err(e),
        }
        report.budget_spent = counts_since(&self.suite.budget.snapshot(), &start);
        Ok(report)
    }
}

fn pending(description: Description) -> NewNode {
    NewNode { description, relevance: None, status: NodeStatus::Pending, children: Vec::new() }
}

fn best_relevance_description(tree: &SearchTree) -> Option<Description> {
    let mut best: Option<(&Description, Relevance)> = None;
    for node in tree.nodes.values() {
        if let Some(rel) = node.relevance {
            if best.is_none_or(|(_, b)| rel.exceeds(&b)) {
                best = Some((&node.description, rel));
            }
        }
    }
    best.map(|(d, _)| d.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(k: usize, m: usize) -> Relevance {
        Relevance::new(k, m).unwrap()
    }

    #[test]
    fn prune_rules() {
        assert_eq!(prune_status(rel(7, 10), rel(5, 10)), NodeStatus::Scored);
        assert_eq!(prune_status(rel(7, 10), rel(7, 10)), NodeStatus::Terminated);
        assert_eq!(prune_status(rel(3, 10), rel(7, 10)), NodeStatus::Terminated);
        assert_eq!(prune_status(rel(10, 10), rel(10, 10)), NodeStatus::Saturated);
        assert_eq!(prune_status(rel(10, 10), rel(9, 10)), NodeStatus::Scored);
    }

    #[test]
    fn init_tree_guards() {
        let cfg = Config::default();
        assert!(matches!(init_tree(&[], &cfg), Err(Error::InvalidInput(_))));
        let t = init_tree(&[Description::new("bird").unwrap()], &cfg).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.frontier, vec![0]);
        assert_eq!(t.nodes[&0].status, NodeStatus::Pending);
    }

    #[test]
    fn stale_counting() {
        let mut t = SearchTree::empty(Config::default());
        let a = t.add_root(Description::new("a").unwrap());
        t.frontier.clear();
        t.node_mut(a).unwrap().status = NodeStatus::Scored;
        t.node_mut(a).unwrap().relevance = Some(rel(3, 8));
        t.iteration = 1;
        assert_eq!(Search::stale_iterations(&t), 0);
        let b = t.add_child(a, Description::new("a b").unwrap(), Some(rel(3, 8)), NodeStatus::Terminated).unwrap();
        t.iteration = 2;
        assert_eq!(Search::stale_iterations(&t), 1);
        t.node_mut(b).unwrap().relevance = Some(rel(5, 8));
        t.node_mut(b).unwrap().status = NodeStatus::Scored;
        assert_eq!(Search::stale_iterations(&t), 0);
    }
}
