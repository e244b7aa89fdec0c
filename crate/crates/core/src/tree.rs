//! Search tree state and its canonical file format.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::types::Description;

pub type NodeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Pending,
    Scored,
    Terminated,
    Saturated,
}

impl NodeStatus {
    pub fn name(self) -> &'static str {
        match self {
            NodeStatus::Pending => "pending",
            NodeStatus::Scored => "scored",
            NodeStatus::Terminated => "terminated",
            NodeStatus::Saturated => "saturated",
        }
    }
}

/// Relevance stored as the exact ratio `k / m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relevance {
    pub k: usize,
    pub m: usize,
}

impl Relevance {
    pub fn new(k: usize, m: usize) -> Result<Self> {
        if m == 0 || k > m {
            return Err(Error::invariant(format!("relevance {k}/{m} out of range")));
        }
        Ok(Relevance { k, m })
    }

    pub fn value(&self) -> f64 {
        self.k as f64 / self.m as f64
    }

    pub fn is_saturated(&self) -> bool {
        self.k == self.m
    }

    /// Exact comparison by cross-multiplication.
    pub fn exceeds(&self, other: &Relevance) -> bool {
        (self.k as u128) * (other.m as u128) > (other.k as u128) * (self.m as u128)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent_id: Option<NodeId>,
    pub depth: usize,
    pub description: Description,
    pub relevance: Option<Relevance>,
    pub status: NodeStatus,
    pub child_ids: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    pub config: Config,
    pub nodes: BTreeMap<NodeId, SearchNode>,
    pub frontier: Vec<NodeId>,
    /// Number of completed iterations.
    pub iteration: usize,
    pub config_digest: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    config: Config,
    nodes: Vec<SearchNode>,
    frontier: Vec<NodeId>,
    iteration: usize,
    config_digest: String,
}

impl SearchTree {
    /// Empty tree bound to `config`. Roots are added with [`SearchTree::add_root`].
    pub fn empty(config: Config) -> Self {
        let config_digest = config.digest();
        SearchTree { config, nodes: BTreeMap::new(), frontier: Vec::new(), iteration: 0, config_digest }
    }

    fn next_id(&self) -> NodeId {
        self.nodes.keys().next_back().map_or(0, |id| id + 1)
    }

    pub fn add_root(&mut self, description: Description) -> NodeId {
        let id = self.next_id();
        self.nodes.insert(
            id,
            SearchNode {
                id,
                parent_id: None,
                depth: 0,
                description,
                relevance: None,
                status: NodeStatus::Pending,
                child_ids: Vec::new(),
            },
        );
        self.frontier.push(id);
        id
    }

    /// Attaches a child. Pending children join the frontier.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        description: Description,
        relevance: Option<Relevance>,
        status: NodeStatus,
    ) -> Result<NodeId> {
        let depth = self
            .nodes
            .get(&parent)
            .ok_or_else(|| Error::invariant(format!("unknown parent {parent}")))?
            .depth
            + 1;
        let id = self.next_id();
        self.nodes.insert(
            id,
            SearchNode { id, parent_id: Some(parent), depth, description, relevance, status, child_ids: Vec::new() },
        );
        self.nodes.get_mut(&parent).expect("checked above").child_ids.push(id);
        if status == NodeStatus::Pending {
            self.frontier.push(id);
        }
        Ok(id)
    }

    pub fn node(&self, id: NodeId) -> Result<&SearchNode> {
        self.nodes.get(&id).ok_or_else(|| Error::invalid(format!("no node with id {id}")))
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Result<&mut SearchNode> {
        self.nodes.get_mut(&id).ok_or_else(|| Error::invalid(format!("no node with id {id}")))
    }

    pub fn roots(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.values().filter(|n| n.parent_id.is_none())
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_empty()
    }

    /// The iteration in which each node is (or will be) scored.
    ///
    /// Roots belong to iteration 0. Children of a parent with `k > 0` come
    /// from captions and are expanded one iteration after the parent;
    /// children of a `k = 0` parent come from enrichment and are scored in
    /// the parent's own iteration.
    pub fn generations(&self) -> BTreeMap<NodeId, usize> {
        let mut gens = BTreeMap::new();
        for node in self.nodes.values() {
            let gen = match node.parent_id {
                None => 0,
                Some(p) => {
                    let parent = &self.nodes[&p];
                    let bump = usize::from(parent.relevance.is_some_and(|r| r.k > 0));
                    gens[&p] + bump
                }
            };
            gens.insert(node.id, gen);
        }
        gens
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.config_digest != self.config.digest() {
            return Err(Error::ConfigMismatch {
                tree: format!("{:016x}", self.config_digest),
                config: self.config.digest_hex(),
            });
        }
        for (id, node) in &self.nodes {
            if *id != node.id {
                return Err(Error::invariant(format!("node keyed {id} carries id {}", node.id)));
            }
            match node.parent_id {
                None if node.depth != 0 => {
                    return Err(Error::invariant(format!("root {id} has depth {}", node.depth)))
                }
                None => {}
                Some(p) => {
                    // Ids are assigned in creation order, so a parent always
                    // precedes its children; this also rules out cycles.
                    if p >= *id {
                        return Err(Error::invariant(format!("node {id} has parent {p} not created before it")));
                    }
                    let parent = self
                        .nodes
                        .get(&p)
                        .ok_or_else(|| Error::invariant(format!("node {id} references missing parent {p}")))?;
                    if node.depth != parent.depth + 1 {
                        return Err(Error::invariant(format!("node {id} depth is not parent depth + 1")));
                    }
                    if !parent.child_ids.contains(id) {
                        return Err(Error::invariant(format!("parent {p} does not list child {id}")));
                    }
                }
            }
            let mut seen = BTreeSet::new();
            for c in &node.child_ids {
                if !seen.insert(*c) {
                    return Err(Error::invariant(format!("node {id} lists child {c} twice")));
                }
                match self.nodes.get(c) {
                    Some(child) if child.parent_id == Some(*id) => {}
                    _ => return Err(Error::invariant(format!("child link {id} -> {c} is not mutual"))),
                }
            }
            match (node.status, node.relevance) {
                (NodeStatus::Pending, _) => {}
                (_, None) => {
                    return Err(Error::invariant(format!("non-pending node {id} has no relevance")))
                }
                (_, Some(r)) => {
                    Relevance::new(r.k, r.m)?;
                }
            }
            if node.status == NodeStatus::Pending {
                if let Some(p) = node.parent_id {
                    if self.nodes[&p].status != NodeStatus::Scored {
                        return Err(Error::invariant(format!("pending node {id} hangs off a node that is not scored")));
                    }
                }
            }
        }
        let mut in_frontier = BTreeSet::new();
        for id in &self.frontier {
            if !in_frontier.insert(*id) {
                return Err(Error::invariant(format!("frontier lists {id} twice")));
            }
            match self.nodes.get(id) {
                Some(n) if n.status == NodeStatus::Pending => {}
                _ => return Err(Error::invariant(format!("frontier entry {id} is not a pending node"))),
            }
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn debug_validate(&self) {
        #[cfg(debug_assertions)]
        if let Err(e) = self.validate() {
            panic!("tree invariant violated: {e}");
        }
    }

    /// Canonical JSON bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let file = TreeFile {
            config: self.config.clone(),
            nodes: self.nodes.values().cloned().collect(),
            frontier: self.frontier.clone(),
            iteration: self.iteration,
            config_digest: format!("{:016x}", self.config_digest),
        };
        let mut text = canonical::to_canonical_string(&file)?;
        text.push('\n');
        Ok(text.into_bytes())
    }

    /// Parses and validates a tree file.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        let file: TreeFile = serde_path_to_error::deserialize(de)?;
        let config_digest = u64::from_str_radix(&file.config_digest, 16).map_err(|e| Error::Parse {
            field: "config_digest".into(),
            message: e.to_string(),
        })?;
        file.config.validate().map_err(|e| Error::Parse { field: "config".into(), message: e.to_string() })?;
        let mut nodes = BTreeMap::new();
        for (i, node) in file.nodes.into_iter().enumerate() {
            let id = node.id;
            if nodes.insert(id, node).is_some() {
                return Err(Error::Parse { field: format!("nodes[{i}].id"), message: format!("duplicate id {id}") });
            }
        }
        let tree = SearchTree {
            config: file.config,
            nodes,
            frontier: file.frontier,
            iteration: file.iteration,
            config_digest,
        };
        tree.validate()?;
        Ok(tree)
    }
}
