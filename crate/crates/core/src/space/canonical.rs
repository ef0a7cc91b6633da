//! Dead-branch pruning and structural hashing of decoded graphs.
//!
//! A cell node survives when it lies on some path from the network input to
//! the classifier. Nodes of the fixed skeleton always survive. Summation
//! nodes drop operands that were pruned.
//!
//! Cell nodes keep their position label through pruning, so two cells that
//! route the same computation through different intermediate nodes stay
//! distinct.
//!
//! Pruning preserves outputs bit-for-bit at any weights where batch-norm
//! shifts are zero (the initialization default): a forward-dead branch
//! computes exact zeros, and adding `+0.0` to a sum changes nothing.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::graph::{ComputationGraph, NodeId, NodeRole, OpKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalGraph {
    pub graph: ComputationGraph,
    /// First 128 bits of SHA-256 over the canonical serialization.
    pub hash: u128,
    /// `origin[k]` is the id in the uncanonicalized graph of pruned node `k`.
    pub origin: Vec<NodeId>,
}

impl CanonicalGraph {
    pub fn hash_hex(&self) -> String {
        format!("{:032x}", self.hash)
    }
}

pub fn canonicalize(graph: &ComputationGraph) -> CanonicalGraph {
    let n = graph.nodes.len();
    let mut forward = vec![false; n];
    for (id, node) in graph.nodes.iter().enumerate() {
        forward[id] = match node.op {
            OpKind::Input => true,
            _ => node.inputs.iter().any(|&i| forward[i]),
        };
    }
    let mut backward = vec![false; n];
    backward[graph.output()] = true;
    for id in (0..n).rev() {
        if backward[id] {
            for &i in &graph.nodes[id].inputs {
                backward[i] = true;
            }
        }
    }
    let keep: Vec<bool> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| node.role == NodeRole::Fixed || (forward[id] && backward[id]))
        .collect();

    let mut new_id = vec![usize::MAX; n];
    let mut origin = Vec::new();
    let mut nodes = Vec::new();
    for (id, node) in graph.nodes.iter().enumerate() {
        if !keep[id] {
            continue;
        }
        let mut node = node.clone();
        node.inputs = node.inputs.iter().filter(|&&i| keep[i]).map(|&i| new_id[i]).collect();
        new_id[id] = nodes.len();
        origin.push(id);
        nodes.push(node);
    }
    let pruned = ComputationGraph {
        nodes,
        input_shape: graph.input_shape,
        num_classes: graph.num_classes,
    };
    let hash = structural_hash(&pruned);
    CanonicalGraph {
        graph: pruned,
        hash,
        origin,
    }
}

/// Hash of operations, shapes, cell-node labels and connectivity.
fn structural_hash(graph: &ComputationGraph) -> u128 {
    let mut text = String::new();
    let (c, h, w) = graph.input_shape;
    let _ = write!(text, "in={c}x{h}x{w};classes={};", graph.num_classes);
    for node in &graph.nodes {
        let _ = match node.op {
            OpKind::Conv { kernel, in_ch, out_ch } => write!(text, "conv{kernel}:{in_ch}>{out_ch}"),
            OpKind::BatchNorm { channels } => write!(text, "bn:{channels}"),
            OpKind::Linear {
                in_features,
                out_features,
                bias,
            } => write!(text, "linear:{in_features}>{out_features}:{bias}"),
            other => write!(text, "{}", other.name()),
        };
        let mut inputs = node.inputs.clone();
        if node.op == OpKind::Sum {
            inputs.sort_unstable();
        }
        if let NodeRole::Cell { cell, node } = node.role {
            let _ = write!(text, "#{cell}.{node}");
        }
        let (c, h, w) = node.shape;
        let _ = write!(text, "@{c}x{h}x{w}{inputs:?};");
    }
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    u128::from_be_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ArchEncoding, SpaceSpec};

    fn canon(s: &str) -> CanonicalGraph {
        let enc: ArchEncoding = s.parse().unwrap();
        canonicalize(&SpaceSpec::nb201_toy().decode(&enc).unwrap())
    }

    #[test]
    fn op_without_live_consumer_is_pruned() {
        // Edge (0->1) is a conv, but both edges leaving node 1 are 'none'.
        let dead = canon("nb201toy:3-2-0-1-0-4");
        let absent = canon("nb201toy:0-2-0-1-0-4");
        assert_eq!(dead.hash, absent.hash);
        assert_eq!(dead.graph.nodes.len(), absent.graph.nodes.len());
        let raw = SpaceSpec::nb201_toy()
            .decode(&"nb201toy:3-2-0-1-0-4".parse().unwrap())
            .unwrap();
        assert!(dead.graph.nodes.len() < raw.nodes.len());
    }

    #[test]
    fn op_without_live_input_is_pruned() {
        // Node 1 receives nothing, so the conv on (1->3) sees no input.
        assert_eq!(canon("nb201toy:0-3-0-1-3-1").hash, canon("nb201toy:0-3-0-1-0-1").hash);
    }

    #[test]
    fn canonicalization_is_idempotent() {
        for s in ["nb201toy:3-2-0-1-0-4", "nb201toy:0-0-0-0-0-0", "nb201toy:4-4-4-4-4-4"] {
            let once = canon(s);
            let twice = canonicalize(&once.graph);
            assert_eq!(once.graph, twice.graph);
            assert_eq!(once.hash, twice.hash);
            assert_eq!(twice.origin, (0..once.graph.nodes.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pruned_graph_is_valid() {
        canon("nb201toy:0-0-0-0-0-0").graph.validate().unwrap();
        canon("nb201toy:2-0-0-0-2-0").graph.validate().unwrap();
    }

    #[test]
    fn distinct_live_structures_hash_differently() {
        assert_ne!(canon("nb201toy:3-3-3-3-3-3").hash, canon("nb201toy:2-3-3-3-3-3").hash);
        assert_ne!(canon("nb201toy:1-0-0-0-0-1").hash, canon("nb201toy:0-0-0-1-0-0").hash);
        // Same computation relayed through cell node 1 or cell node 2.
        assert_ne!(canon("nb201toy:1-0-0-0-3-0").hash, canon("nb201toy:0-1-0-0-0-3").hash);
    }
}
