//! Line-by-line transcription of the multi-path selection pseudocode, kept
//! as an executable reference for checking `select_paths`.
//!
//! It follows the pseudocode's loop structure (`D_control`, nested region and
//! predecessor loops, a FIFO queue, early return once `C` holds `n` paths)
//! with the agreed readings applied:
//!
//! * a predecessor is accepted only if its delivered variables are new for
//!   the current region (the pseudocode's `if node.cd == cd` plus the
//!   flow-in variable rule);
//! * each accepted branch extends the traversal spine to that node instead of
//!   a single shared `path` list;
//! * `C` is a set, and a node is expanded once.
//!
//! Not optimized and not used by the pipeline.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use depgraph_rec::adg::{ApiDependenceGraph, NodeId};

pub struct ReferenceSelection {
    /// Selected paths as forward node sequences (criterion excluded).
    pub paths: Vec<Vec<NodeId>>,
    pub branches: BTreeSet<(NodeId, NodeId)>,
}

fn pick_a_path_reference(path: &[NodeId], g: &ApiDependenceGraph, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let mut new_path: Vec<NodeId> = Vec::new();
    let mut curr_node = *path.last().unwrap();
    loop {
        let predecessors: Vec<NodeId> = g.predecessors(curr_node).map(|(p, _)| p).collect();
        if predecessors.is_empty() {
            break;
        }
        let next_node = predecessors[rng.gen_range(0..predecessors.len())];
        new_path.push(next_node);
        curr_node = next_node;
    }
    new_path
}

pub fn multi_path_selection(n: usize, g: &ApiDependenceGraph, seed: u64) -> ReferenceSelection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sc = g.sc();
    let mut c: Vec<Vec<NodeId>> = Vec::new();
    let mut branches = BTreeSet::new();
    let mut route: Vec<(NodeId, Vec<NodeId>)> = vec![(sc, vec![sc])];
    let mut done: Vec<NodeId> = Vec::new();
    let mut q: Vec<NodeId> = vec![sc];
    let mut head = 0;
    if n == 0 {
        return ReferenceSelection { paths: c, branches };
    }
    while head < q.len() {
        let curr_node = q[head];
        head += 1;
        if done.contains(&curr_node) {
            continue;
        }
        done.push(curr_node);

        let mut d_control: Vec<String> = Vec::new();
        for (node, _) in g.predecessors(curr_node) {
            let cd = g.node(node).control_dep.clone();
            if !d_control.contains(&cd) {
                d_control.push(cd);
            }
        }
        for cd in &d_control {
            let mut flow_in_taken: Vec<BTreeSet<String>> = Vec::new();
            for (node, flow_in) in g.predecessors(curr_node) {
                if &g.node(node).control_dep == cd && !flow_in_taken.contains(flow_in) {
                    flow_in_taken.push(flow_in.clone());
                    q.push(node);
                    let mut path = route.iter().find(|(n, _)| *n == curr_node).unwrap().1.clone();
                    path.push(node);
                    if !route.iter().any(|(n, _)| *n == node) {
                        route.push((node, path.clone()));
                    }
                    branches.insert((curr_node, node));
                    let walk = pick_a_path_reference(&path, g, &mut rng);
                    let mut full: Vec<NodeId> = path.iter().chain(walk.iter()).copied().collect();
                    full.reverse();
                    full.pop(); // the criterion
                    if !c.contains(&full) {
                        c.push(full);
                    }
                    if c.len() == n {
                        return ReferenceSelection { paths: c, branches };
                    }
                }
            }
        }
    }
    ReferenceSelection { paths: c, branches }
}
