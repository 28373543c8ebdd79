//! Text format for dependence graphs.
//!
//! ```text
//! graph <key>
//! sc <id>
//! node <id>\t<control_dep or ->\t<token>
//! edge <from>\t<to>\t<var>,<var>
//! end
//! ```
//!
//! Nodes and edges are written in ascending id order; any number of graphs
//! may follow each other in one file.

use std::collections::BTreeSet;

use super::{AdgEdge, AdgError, AdgNode, ApiDependenceGraph, NodeId};
use crate::ir::canonicalize_signature;

pub fn write_graphs<'a, I>(graphs: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a ApiDependenceGraph)>,
{
    let mut out = String::new();
    for (key, g) in graphs {
        out.push_str(&format!("graph {key}\nsc {}\n", g.sc()));
        for n in g.nodes() {
            let cd = if n.control_dep.is_empty() { "-" } else { &n.control_dep };
            out.push_str(&format!("node {}\t{cd}\t{}\n", n.id, n.token));
        }
        for e in g.edges() {
            let vars: Vec<&str> = e.flow_vars.iter().map(String::as_str).collect();
            out.push_str(&format!("edge {}\t{}\t{}\n", e.from, e.to, vars.join(",")));
        }
        out.push_str("end\n");
    }
    out
}

pub fn parse_graphs(text: &str) -> Result<Vec<(String, ApiDependenceGraph)>, AdgError> {
    struct Pending {
        key: String,
        sc: Option<NodeId>,
        nodes: Vec<AdgNode>,
        edges: Vec<AdgEdge>,
    }
    let mut out = Vec::new();
    let mut cur: Option<Pending> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |m: &str| AdgError::Format {
            line: line_no,
            message: m.to_string(),
        };
        let id = |s: &str| s.trim().parse::<NodeId>().map_err(|_| err("bad node id"));
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
        match (head, cur.as_mut()) {
            ("graph", None) => {
                let key = rest.trim();
                if key.is_empty() || key.contains(char::is_whitespace) {
                    return Err(err("graph key must be a single word"));
                }
                cur = Some(Pending {
                    key: key.to_string(),
                    sc: None,
                    nodes: Vec::new(),
                    edges: Vec::new(),
                });
            }
            ("sc", Some(p)) => p.sc = Some(id(rest)?),
            ("node", Some(p)) => {
                let f: Vec<&str> = rest.splitn(3, '\t').collect();
                if f.len() != 3 {
                    return Err(err("node needs id, control_dep and token"));
                }
                let token = canonicalize_signature(f[2]).map_err(|e| err(&e.to_string()))?;
                p.nodes.push(AdgNode {
                    id: id(f[0])?,
                    token,
                    control_dep: if f[1] == "-" { String::new() } else { f[1].to_string() },
                });
            }
            ("edge", Some(p)) => {
                let f: Vec<&str> = rest.split('\t').collect();
                if f.len() != 3 {
                    return Err(err("edge needs from, to and variables"));
                }
                let flow_vars: BTreeSet<String> =
                    f[2].split(',').filter(|v| !v.is_empty()).map(String::from).collect();
                p.edges.push(AdgEdge {
                    from: id(f[0])?,
                    to: id(f[1])?,
                    flow_vars,
                });
            }
            ("end", Some(_)) => {
                let p = cur.take().unwrap();
                let sc = p.sc.ok_or_else(|| err("graph without sc"))?;
                let g = ApiDependenceGraph::new(p.nodes, p.edges, sc)?;
                out.push((p.key, g));
            }
            _ => return Err(err(&format!("unexpected `{head}`"))),
        }
    }
    if cur.is_some() {
        return Err(AdgError::Format {
            line: text.lines().count(),
            message: "missing `end`".into(),
        });
    }
    Ok(out)
}
