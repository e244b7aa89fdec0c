//! Structural and pruning checks on a serialized tree, reading the JSON
//! directly rather than through the engine's tree type.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

#[derive(Debug, Default)]
pub struct Checked {
    pub nodes: usize,
    pub paths: usize,
    pub complete: bool,
}

fn rel(node: &Value) -> Option<(u64, u64)> {
    let r = node.get("relevance")?;
    Some((r.get("k")?.as_u64()?, r.get("m")?.as_u64()?))
}

fn greater(a: (u64, u64), b: (u64, u64)) -> bool {
    (a.0 as u128) * (b.1 as u128) > (b.0 as u128) * (a.1 as u128)
}

fn full(r: (u64, u64)) -> bool {
    r.0 == r.1
}

/// Checks parent/child links, depths, frontier membership, and that every
/// surviving path strictly increases in relevance except for saturated tails.
pub fn validate(bytes: &[u8]) -> Result<Checked, String> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let keys: Vec<&String> = doc.as_object().ok_or("not an object")?.keys().collect();
    if keys != ["config", "config_digest", "frontier", "iteration", "nodes"] {
        return Err(format!("top-level keys {keys:?}"));
    }
    let nodes = doc["nodes"].as_array().ok_or("nodes is not a list")?;
    let mut by_id: BTreeMap<u64, &Value> = BTreeMap::new();
    for n in nodes {
        let id = n["id"].as_u64().ok_or("node without id")?;
        if by_id.insert(id, n).is_some() {
            return Err(format!("duplicate id {id}"));
        }
    }
    let frontier: BTreeSet<u64> =
        doc["frontier"].as_array().ok_or("frontier")?.iter().map(|v| v.as_u64().unwrap()).collect();
    for (&id, n) in &by_id {
        let status = n["status"].as_str().ok_or("status")?;
        let depth = n["depth"].as_u64().ok_or("depth")?;
        // A stopped search clears the frontier but leaves unexpanded nodes pending.
        let expected_in_frontier = status == "pending" && !frontier.is_empty();
        if expected_in_frontier != frontier.contains(&id) {
            return Err(format!("node {id} is {status} but frontier membership disagrees"));
        }
        if (status == "pending") != rel(n).is_none() {
            return Err(format!("node {id}: relevance presence does not match status {status}"));
        }
        for c in n["child_ids"].as_array().ok_or("child_ids")? {
            let c = c.as_u64().unwrap();
            let child = by_id.get(&c).ok_or(format!("node {id} lists missing child {c}"))?;
            if child["parent_id"].as_u64() != Some(id) {
                return Err(format!("child {c} does not point back to {id}"));
            }
        }
        match n["parent_id"].as_u64() {
            None => {
                if depth != 0 {
                    return Err(format!("root {id} at depth {depth}"));
                }
            }
            Some(p) => {
                let parent = by_id.get(&p).ok_or(format!("node {id} has missing parent {p}"))?;
                if parent["depth"].as_u64() != Some(depth - 1) {
                    return Err(format!("node {id} depth does not follow its parent"));
                }
                if !parent["child_ids"].as_array().unwrap().iter().any(|c| c.as_u64() == Some(id)) {
                    return Err(format!("parent {p} does not list {id}"));
                }
                if p >= id {
                    return Err(format!("child {id} numbered before parent {p}"));
                }
                let pr = rel(parent).ok_or(format!("parent {p} of {id} has no relevance"))?;
                let ps = parent["status"].as_str().unwrap();
                // A terminated node keeps children only when it was enriched.
                let enriched_parent = ps == "terminated" && pr.0 == 0;
                if ps != "scored" && ps != "saturated" && !enriched_parent {
                    return Err(format!("{ps} node {p} has child {id}"));
                }
                if enriched_parent && !(status == "scored" && rel(n).is_some_and(|r| r.0 >= 1)) {
                    return Err(format!("child {id} of terminated node {p} is not a scored enriched variant"));
                }
                match (status, rel(n)) {
                    ("scored", Some(r)) if !greater(r, pr) => {
                        return Err(format!("scored node {id} does not exceed parent {p}"))
                    }
                    ("saturated", Some(r)) if !(full(r) && full(pr)) => {
                        return Err(format!("saturated node {id} without a saturated parent"))
                    }
                    ("terminated", Some(r)) if greater(r, pr) || (full(r) && full(pr)) => {
                        return Err(format!("terminated node {id} should have survived"))
                    }
                    _ => {}
                }
            }
        }
    }
    // Surviving paths: walk down through scored/saturated nodes only.
    let survives = |n: &Value| matches!(n["status"].as_str(), Some("scored" | "saturated"));
    let mut paths = 0;
    for (&id, n) in &by_id {
        if !survives(n) {
            continue;
        }
        let has_surviving_child =
            n["child_ids"].as_array().unwrap().iter().any(|c| survives(by_id[&c.as_u64().unwrap()]));
        if has_surviving_child {
            continue;
        }
        paths += 1;
        let mut cur = id;
        let mut saturated_tail = true;
        while let Some(p) = by_id[&cur]["parent_id"].as_u64() {
            let (c, pn) = (by_id[&cur], by_id[&p]);
            if !survives(pn) {
                // Enriched variants start a fresh path under a failed node.
                break;
            }
            let (cr, pr) = (rel(c).unwrap(), rel(pn).unwrap());
            if saturated_tail && full(cr) && full(pr) {
                cur = p;
                continue;
            }
            saturated_tail = false;
            if !greater(cr, pr) {
                return Err(format!("path through {cur} does not increase over {p}"));
            }
            cur = p;
        }
    }
    Ok(Checked { nodes: by_id.len(), paths, complete: frontier.is_empty() })
}
