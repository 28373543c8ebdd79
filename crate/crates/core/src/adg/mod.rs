//! API dependence graphs (ADGs).
//!
//! An ADG keeps only API calls and constants from a slice. Non-API statements
//! (assignments, parameter bindings, opaque local calls) are merged away so
//! that two data-dependent APIs are connected directly. The slicing criterion
//! is the unique sink.

mod format;
mod select;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use thiserror::Error;

use crate::ir::{ApiSignature, StmtKind};
use crate::slicer::{reaching_defs, ProgramSlice};

pub use format::{parse_graphs, write_graphs};
pub use select::{pick_a_path, pick_a_path_with, select_paths, select_paths_traced, Selection};

pub type NodeId = usize;

pub const DEFAULT_MAX_LEN: usize = 10;
pub const DEFAULT_PATH_BUDGET: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdgError {
    #[error("dependence cycle through node {0}")]
    Cycle(NodeId),
    #[error("empty slice")]
    EmptySlice,
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph format error at line {line}: {message}")]
    Format { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdgNode {
    pub id: NodeId,
    pub token: ApiSignature,
    pub control_dep: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdgEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub flow_vars: BTreeSet<String>,
}

/// A validated dependence DAG whose unique sink is the slicing criterion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiDependenceGraph {
    nodes: Vec<AdgNode>,
    edges: Vec<AdgEdge>,
    sc: NodeId,
    preds: BTreeMap<NodeId, Vec<usize>>,
}

impl ApiDependenceGraph {
    /// Validates and normalizes a graph: self-loops are dropped, parallel
    /// edges merged, nodes and edges sorted by id.
    pub fn new(mut nodes: Vec<AdgNode>, edges: Vec<AdgEdge>, sc: NodeId) -> Result<Self, AdgError> {
        nodes.sort_by_key(|n| n.id);
        if nodes.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(AdgError::Invalid("duplicate node id".into()));
        }
        let ids: HashSet<NodeId> = nodes.iter().map(|n| n.id).collect();
        if !ids.contains(&sc) {
            return Err(AdgError::Invalid(format!("criterion node {sc} missing")));
        }
        let mut merged: BTreeMap<(NodeId, NodeId), BTreeSet<String>> = BTreeMap::new();
        for e in edges {
            if !ids.contains(&e.from) || !ids.contains(&e.to) {
                return Err(AdgError::Invalid(format!("edge {}->{} names a missing node", e.from, e.to)));
            }
            if e.flow_vars.is_empty() {
                return Err(AdgError::Invalid(format!("edge {}->{} carries no variable", e.from, e.to)));
            }
            if e.from == e.to {
                continue;
            }
            merged.entry((e.from, e.to)).or_default().extend(e.flow_vars);
        }
        let edges: Vec<AdgEdge> = merged
            .into_iter()
            .map(|((from, to), flow_vars)| AdgEdge { from, to, flow_vars })
            .collect();
        let mut preds: BTreeMap<NodeId, Vec<usize>> = nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for (i, e) in edges.iter().enumerate() {
            preds.get_mut(&e.to).unwrap().push(i);
        }
        for list in preds.values_mut() {
            list.sort_by_key(|&i| edges[i].from);
        }
        let g = ApiDependenceGraph { nodes, edges, sc, preds };
        g.check_shape()?;
        Ok(g)
    }

    fn check_shape(&self) -> Result<(), AdgError> {
        // Kahn's algorithm for acyclicity.
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        for e in &self.edges {
            *indeg.get_mut(&e.to).unwrap() += 1;
        }
        let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut seen = 0;
        while let Some(n) = ready.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.from == n) {
                let d = indeg.get_mut(&e.to).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(e.to);
                }
            }
        }
        if seen != self.nodes.len() {
            let stuck = indeg.iter().find(|(_, &d)| d > 0).map(|(&n, _)| n).unwrap();
            return Err(AdgError::Cycle(stuck));
        }
        if self.edges.iter().any(|e| e.from == self.sc) {
            return Err(AdgError::Invalid("criterion node has outgoing edges".into()));
        }
        let mut reach: HashSet<NodeId> = HashSet::from([self.sc]);
        let mut stack = vec![self.sc];
        while let Some(n) = stack.pop() {
            for (p, _) in self.predecessors(n) {
                if reach.insert(p) {
                    stack.push(p);
                }
            }
        }
        if reach.len() != self.nodes.len() {
            return Err(AdgError::Invalid("some node has no path to the criterion".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[AdgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[AdgEdge] {
        &self.edges
    }

    pub fn sc(&self) -> NodeId {
        self.sc
    }

    pub fn node(&self, id: NodeId) -> &AdgNode {
        let i = self.nodes.binary_search_by_key(&id, |n| n.id).expect("node id in graph");
        &self.nodes[i]
    }

    /// Predecessors of `id` with the variables each delivers, ascending by id.
    pub fn predecessors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, &BTreeSet<String>)> + '_ {
        self.preds
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| (self.edges[i].from, &self.edges[i].flow_vars))
    }

    pub fn has_edge(&self, from: NodeId, to: NodeId) -> bool {
        self.edges.iter().any(|e| e.from == from && e.to == to)
    }

    /// DOT rendering for debugging.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph adg {\n");
        for n in &self.nodes {
            let shape = if n.id == self.sc { ", shape=doubleoctagon" } else { "" };
            out.push_str(&format!(
                "  n{} [label=\"{}\\n{}\"{shape}];\n",
                n.id,
                n.token.text.replace('"', "\\\""),
                n.control_dep
            ));
        }
        for e in &self.edges {
            let vars: Vec<&str> = e.flow_vars.iter().map(String::as_str).collect();
            out.push_str(&format!("  n{} -> n{} [label=\"{}\"];\n", e.from, e.to, vars.join(",")));
        }
        out.push_str("}\n");
        out
    }
}

/// A token sequence ending at the recommendation target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DependencePath {
    /// Oldest first; excludes the criterion.
    pub tokens: Vec<ApiSignature>,
    /// Token of the criterion node.
    pub label: ApiSignature,
    /// Graph nodes behind `tokens`, same order.
    pub nodes: Vec<NodeId>,
}

impl DependencePath {
    pub fn from_nodes(graph: &ApiDependenceGraph, nodes: Vec<NodeId>) -> Self {
        DependencePath {
            tokens: nodes.iter().map(|&n| graph.node(n).token.clone()).collect(),
            label: graph.node(graph.sc()).token.clone(),
            nodes,
        }
    }

    /// Keeps only the `max_len` tokens nearest the label.
    pub fn truncated(mut self, max_len: usize) -> Self {
        if self.tokens.len() > max_len {
            let cut = self.tokens.len() - max_len;
            self.tokens.drain(..cut);
            self.nodes.drain(..cut);
        }
        self
    }

    /// Every consecutive pair (and the last token to the criterion) is an edge.
    pub fn is_connected_in(&self, graph: &ApiDependenceGraph) -> bool {
        let mut chain = self.nodes.clone();
        chain.push(graph.sc());
        chain.windows(2).all(|w| graph.has_edge(w[0], w[1]))
            && self.label == graph.node(graph.sc()).token
    }
}

/// Builds the dependence graph of a slice.
///
/// Nodes are the slice's API calls and constant loads; an edge `u -> v`
/// exists when a value defined by `u` reaches a use in `v`, possibly through
/// merged non-API statements. Edges record the variables used at `v`.
pub fn build_adg(slice: &ProgramSlice) -> Result<ApiDependenceGraph, AdgError> {
    if slice.statements.is_empty() {
        return Err(AdgError::EmptySlice);
    }
    let stmts: Vec<_> = slice.statements.iter().map(|s| &s.statement).collect();
    let at = |q: usize| stmts[q];
    let is_node = |q: usize| matches!(stmts[q].kind, StmtKind::ApiCall | StmtKind::ConstLoad);
    let crit = stmts.len() - 1;

    let mut edges: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for v in (0..stmts.len()).filter(|&q| is_node(q)) {
        for var in stmts[v].use_set() {
            // Resolve through merged statements to API/constant sources.
            let mut sources = BTreeSet::new();
            let mut visited = HashSet::new();
            let mut work = vec![(v, var.to_string())];
            while let Some((pos, name)) = work.pop() {
                if !visited.insert((pos, name.clone())) {
                    continue;
                }
                for q in reaching_defs(at, pos, &name, &stmts[pos].control_dep, &slice.region_parents) {
                    if is_node(q) {
                        sources.insert(q);
                    } else if stmts[q].kind != StmtKind::Branch {
                        work.extend(stmts[q].uses.iter().map(|u| (q, u.clone())));
                    }
                }
            }
            for s in sources {
                if s != v {
                    edges.entry((s, v)).or_default().insert(var.to_string());
                }
            }
        }
    }

    // Keep only nodes that flow into the criterion.
    let mut live: BTreeSet<usize> = BTreeSet::from([crit]);
    for q in (0..stmts.len()).rev() {
        if live.contains(&q) {
            continue;
        }
        if edges.keys().any(|&(from, to)| from == q && live.contains(&to)) {
            live.insert(q);
        }
    }
    let ids: BTreeMap<usize, NodeId> = live.iter().enumerate().map(|(id, &q)| (q, id)).collect();
    let nodes = live
        .iter()
        .map(|&q| AdgNode {
            id: ids[&q],
            token: stmts[q].token().cloned().expect("node statement carries a token"),
            control_dep: stmts[q].control_dep.clone(),
        })
        .collect();
    let edges = edges
        .into_iter()
        .filter(|((from, to), _)| live.contains(from) && live.contains(to))
        .map(|((from, to), flow_vars)| AdgEdge {
            from: ids[&from],
            to: ids[&to],
            flow_vars,
        })
        .collect();
    if !is_node(crit) {
        return Err(AdgError::Invalid("slice does not end in an api call".into()));
    }
    ApiDependenceGraph::new(nodes, edges, ids[&crit])
}

/// Enumerates maximal backward paths from the criterion to source nodes in
/// DFS order (predecessors ascending by id), stopping after `max_paths`.
pub fn extract_all_paths(
    graph: &ApiDependenceGraph,
    max_len: usize,
    max_paths: usize,
) -> Vec<DependencePath> {
    fn dfs(
        g: &ApiDependenceGraph,
        node: NodeId,
        stack: &mut Vec<NodeId>,
        out: &mut Vec<DependencePath>,
        max_len: usize,
        max_paths: usize,
    ) {
        if out.len() >= max_paths {
            return;
        }
        let preds: Vec<NodeId> = g.predecessors(node).map(|(p, _)| p).collect();
        if preds.is_empty() {
            if stack.len() > 1 {
                let forward: Vec<NodeId> = stack[1..].iter().rev().copied().collect();
                out.push(DependencePath::from_nodes(g, forward).truncated(max_len));
            }
            return;
        }
        for p in preds {
            stack.push(p);
            dfs(g, p, stack, out, max_len, max_paths);
            stack.pop();
            if out.len() >= max_paths {
                return;
            }
        }
    }
    let mut out = Vec::new();
    if max_paths == 0 {
        return out;
    }
    dfs(graph, graph.sc(), &mut vec![graph.sc()], &mut out, max_len.max(1), max_paths);
    out
}
