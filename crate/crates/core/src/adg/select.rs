//! Budgeted multi-path selection over a dependence graph.
//!
//! Breadth-first backward traversal from the criterion. At each expanded node
//! the predecessors are grouped by control region (in order of first
//! appearance); within a region, one predecessor is accepted per distinct set
//! of delivered variables (the lowest id wins ties). Every accepted branch is
//! completed into a full path by a seeded random walk to a source node.
//! Identical completed paths are kept once.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ApiDependenceGraph, DependencePath, NodeId};

/// Result of a selection run, with the branches that were accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub paths: Vec<DependencePath>,
    /// Accepted `(node, predecessor)` pairs, in acceptance order.
    pub branches: Vec<(NodeId, NodeId)>,
}

/// Extends a backward prefix (starting at the criterion) by a random walk
/// over predecessors until a source node is reached.
pub fn pick_a_path_with<R: Rng + ?Sized>(
    prefix: &[NodeId],
    graph: &ApiDependenceGraph,
    rng: &mut R,
) -> DependencePath {
    let mut backward = prefix.to_vec();
    let mut cur = *prefix.last().expect("non-empty prefix");
    loop {
        let preds: Vec<NodeId> = graph.predecessors(cur).map(|(p, _)| p).collect();
        if preds.is_empty() {
            break;
        }
        cur = preds[rng.gen_range(0..preds.len())];
        backward.push(cur);
    }
    let forward: Vec<NodeId> = backward
        .into_iter()
        .rev()
        .filter(|&n| n != graph.sc())
        .collect();
    DependencePath::from_nodes(graph, forward)
}

pub fn pick_a_path(prefix: &[NodeId], graph: &ApiDependenceGraph, rng_seed: u64) -> DependencePath {
    pick_a_path_with(prefix, graph, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

/// Selects at most `budget` paths covering distinct nearby branches.
pub fn select_paths(graph: &ApiDependenceGraph, budget: usize, rng_seed: u64) -> Vec<DependencePath> {
    select_paths_traced(graph, budget, rng_seed).paths
}

pub fn select_paths_traced(graph: &ApiDependenceGraph, budget: usize, rng_seed: u64) -> Selection {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Selection {
        paths: Vec::new(),
        branches: Vec::new(),
    };
    if budget == 0 {
        return out;
    }
    let sc = graph.sc();
    let mut spine: HashMap<NodeId, Vec<NodeId>> = HashMap::from([(sc, vec![sc])]);
    let mut seen_paths: HashSet<Vec<NodeId>> = HashSet::new();
    let mut expanded: HashSet<NodeId> = HashSet::new();
    let mut queue = VecDeque::from([sc]);

    while let Some(cur) = queue.pop_front() {
        if !expanded.insert(cur) {
            continue;
        }
        let preds: Vec<(NodeId, &BTreeSet<String>)> = graph.predecessors(cur).collect();
        let mut regions: Vec<&str> = Vec::new();
        for (p, _) in &preds {
            let cd = graph.node(*p).control_dep.as_str();
            if !regions.contains(&cd) {
                regions.push(cd);
            }
        }
        for region in regions {
            let mut delivered: Vec<&BTreeSet<String>> = Vec::new();
            for &(p, vars) in preds.iter().filter(|(p, _)| graph.node(*p).control_dep == region) {
                if delivered.contains(&vars) {
                    continue;
                }
                delivered.push(vars);
                out.branches.push((cur, p));
                let mut prefix = spine[&cur].clone();
                prefix.push(p);
                spine.entry(p).or_insert_with(|| prefix.clone());
                queue.push_back(p);
                let path = pick_a_path_with(&prefix, graph, &mut rng);
                if seen_paths.insert(path.nodes.clone()) {
                    out.paths.push(path);
                    if out.paths.len() == budget {
                        return out;
                    }
                }
            }
        }
    }
    out
}
