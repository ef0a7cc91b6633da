//! Cell-based search spaces: encodings, decoding to computation graphs,
//! enumeration and mutation.
//!
//! A cell is a small DAG over `nodes` feature maps. Node 0 is the cell input,
//! the last node is the cell output, and every edge `(i, j)` with `i < j`
//! carries one operation. Node `j` sums the results of its incoming edges.
//!
//! The macro skeleton around the cells is fixed:
//! `input -> conv3x3 -> bn -> cell x repeats -> bn -> relu -> gap -> linear`.
//! There is no residual path around a cell, so a cell whose output receives
//! no live edge produces zero features and the classifier sees only its bias.

mod canonical;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, Node, NodeId, NodeRole, OpKind, Shape};

pub use canonical::{canonicalize, CanonicalGraph};

/// Operation that can label a cell edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellOp {
    None,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl CellOp {
    pub fn name(self) -> &'static str {
        match self {
            CellOp::None => "none",
            CellOp::Skip => "skip_connect",
            CellOp::Conv1x1 => "nor_conv_1x1",
            CellOp::Conv3x3 => "nor_conv_3x3",
            CellOp::AvgPool3x3 => "avg_pool_3x3",
        }
    }
}

/// The five-operation set, indexed by op id.
pub const NB201_OPS: [CellOp; 5] = [
    CellOp::None,
    CellOp::Skip,
    CellOp::Conv1x1,
    CellOp::Conv3x3,
    CellOp::AvgPool3x3,
];

/// Encodings above this count are refused by [`SpaceSpec::enumerate`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub id: String,
    /// Cell nodes including the cell input and output.
    pub nodes: usize,
    /// Edge list `(source, target)`, in encoding order.
    pub edges: Vec<(usize, usize)>,
    /// Operation for each op id.
    pub ops: Vec<CellOp>,
    pub input_shape: Shape,
    pub channels: usize,
    pub num_classes: usize,
    pub cell_repeats: usize,
    pub enumeration_cap: u128,
}

/// All edges `(i, j)`, `i < j`, ordered by target and then source.
fn dense_edges(nodes: usize) -> Vec<(usize, usize)> {
    (1..nodes).flat_map(|j| (0..j).map(move |i| (i, j))).collect()
}

impl SpaceSpec {
    /// Four-node, six-edge cell space at desk scale.
    pub fn nb201_toy() -> Self {
        Self {
            id: "nb201toy".into(),
            nodes: 4,
            edges: dense_edges(4),
            ops: NB201_OPS.to_vec(),
            input_shape: (3, 8, 8),
            channels: 4,
            num_classes: 10,
            cell_repeats: 1,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Three-node, three-edge variant with 125 encodings.
    pub fn nb201_tiny() -> Self {
        Self {
            id: "nb201tiny".into(),
            nodes: 3,
            edges: dense_edges(3),
            ..Self::nb201_toy()
        }
    }

    /// Looks up a built-in space by id.
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "nb201toy" => Ok(Self::nb201_toy()),
            "nb201tiny" => Ok(Self::nb201_tiny()),
            other => Err(Error::UnknownSpace(other.to_string())),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// `O^E`, saturating at `u128::MAX`.
    pub fn cardinality(&self) -> u128 {
        (0..self.num_edges()).fold(1u128, |acc, _| acc.saturating_mul(self.num_ops() as u128))
    }

    pub fn encoding(&self, ops: Vec<u8>) -> Result<ArchEncoding> {
        let enc = ArchEncoding {
            space_id: self.id.clone(),
            ops,
        };
        self.check(&enc)?;
        Ok(enc)
    }

    fn check(&self, enc: &ArchEncoding) -> Result<()> {
        if enc.space_id != self.id {
            return Err(Error::UnknownSpace(enc.space_id.clone()));
        }
        if enc.ops.len() != self.num_edges() {
            return Err(Error::InvalidEncoding {
                position: 0,
                message: format!("expected {} ops, got {}", self.num_edges(), enc.ops.len()),
            });
        }
        if let Some(pos) = enc.ops.iter().position(|&o| o as usize >= self.num_ops()) {
            return Err(Error::InvalidEncoding {
                position: pos,
                message: format!("op id {} outside [0, {})", enc.ops[pos], self.num_ops()),
            });
        }
        Ok(())
    }

    /// Parses `<space_id>:o0-o1-...`; error positions are character offsets into `text`.
    pub fn parse_encoding(&self, text: &str) -> Result<ArchEncoding> {
        let colon = text.find(':').ok_or(Error::InvalidEncoding {
            position: text.len(),
            message: "missing ':' after the space id".into(),
        })?;
        if text[..colon] != self.id {
            return Err(Error::UnknownSpace(text[..colon].to_string()));
        }
        let mut ops = Vec::with_capacity(self.num_edges());
        let mut offset = colon + 1;
        for field in text[colon + 1..].split('-') {
            let bad = |message: String| Error::InvalidEncoding {
                position: offset,
                message,
            };
            if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad(format!("expected an op id, found {field:?}")));
            }
            let id: usize = field.parse().map_err(|_| bad(format!("op id {field} too large")))?;
            if id >= self.num_ops() {
                return Err(bad(format!("op id {id} outside [0, {})", self.num_ops())));
            }
            if ops.len() == self.num_edges() {
                return Err(bad(format!("more than {} ops", self.num_edges())));
            }
            ops.push(id as u8);
            offset += field.len() + 1;
        }
        if ops.len() != self.num_edges() {
            return Err(Error::InvalidEncoding {
                position: text.len(),
                message: format!("expected {} ops, got {}", self.num_edges(), ops.len()),
            });
        }
        Ok(ArchEncoding {
            space_id: self.id.clone(),
            ops,
        })
    }

    /// Builds the full (unpruned) computation graph of an encoding.
    pub fn decode(&self, enc: &ArchEncoding) -> Result<ComputationGraph> {
        self.check(enc)?;
        let ch = self.channels;
        let (_, h, w) = self.input_shape;
        let fmap = (ch, h, w);
        let mut b = Builder::default();
        let input = b.push(OpKind::Input, vec![], NodeRole::Fixed, self.input_shape);
        let stem = b.push(
            OpKind::Conv {
                kernel: 3,
                in_ch: self.input_shape.0,
                out_ch: ch,
            },
            vec![input],
            NodeRole::Fixed,
            fmap,
        );
        let mut prev = b.push(OpKind::BatchNorm { channels: ch }, vec![stem], NodeRole::Fixed, fmap);
        for cell in 0..self.cell_repeats {
            let mut cell_nodes: Vec<NodeId> = vec![prev];
            for j in 1..self.nodes {
                let role = NodeRole::Cell { cell, node: j };
                let mut terms = Vec::new();
                for (e, &(src, dst)) in self.edges.iter().enumerate() {
                    if dst != j {
                        continue;
                    }
                    let from = cell_nodes[src];
                    let op = self.ops[enc.ops[e] as usize];
                    match op {
                        CellOp::None => {}
                        CellOp::Skip => terms.push(from),
                        CellOp::AvgPool3x3 => terms.push(b.push(OpKind::AvgPool3x3, vec![from], role, fmap)),
                        CellOp::Conv1x1 | CellOp::Conv3x3 => {
                            let kernel = if op == CellOp::Conv1x1 { 1 } else { 3 };
                            let r = b.push(OpKind::Relu, vec![from], role, fmap);
                            let c = b.push(
                                OpKind::Conv {
                                    kernel,
                                    in_ch: ch,
                                    out_ch: ch,
                                },
                                vec![r],
                                role,
                                fmap,
                            );
                            terms.push(b.push(OpKind::BatchNorm { channels: ch }, vec![c], role, fmap));
                        }
                    }
                }
                let sum_role = if j == self.nodes - 1 { NodeRole::Fixed } else { role };
                cell_nodes.push(b.push(OpKind::Sum, terms, sum_role, fmap));
            }
            prev = *cell_nodes.last().unwrap();
        }
        let bn = b.push(OpKind::BatchNorm { channels: ch }, vec![prev], NodeRole::Fixed, fmap);
        let relu = b.push(OpKind::Relu, vec![bn], NodeRole::Fixed, fmap);
        let gap = b.push(OpKind::GlobalAvgPool, vec![relu], NodeRole::Fixed, (ch, 1, 1));
        b.push(
            OpKind::Linear {
                in_features: ch,
                out_features: self.num_classes,
                bias: true,
            },
            vec![gap],
            NodeRole::Fixed,
            (self.num_classes, 1, 1),
        );
        let graph = ComputationGraph {
            nodes: b.nodes,
            input_shape: self.input_shape,
            num_classes: self.num_classes,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Every encoding in lexicographic order, the first edge most significant.
    pub fn enumerate(&self) -> Result<impl Iterator<Item = ArchEncoding> + '_> {
        let count = self.cardinality();
        if count > self.enumeration_cap {
            return Err(Error::EnumerationTooLarge {
                count,
                cap: self.enumeration_cap,
            });
        }
        let o = self.num_ops() as u128;
        let e = self.num_edges();
        Ok((0..count).map(move |mut k| {
            let mut ops = vec![0u8; e];
            for slot in ops.iter_mut().rev() {
                *slot = (k % o) as u8;
                k /= o;
            }
            ArchEncoding {
                space_id: self.id.clone(),
                ops,
            }
        }))
    }

    pub fn random_encoding(&self, rng: &mut impl Rng) -> ArchEncoding {
        ArchEncoding {
            space_id: self.id.clone(),
            ops: (0..self.num_edges())
                .map(|_| rng.random_range(0..self.num_ops()) as u8)
                .collect(),
        }
    }

    /// Resamples one uniformly chosen edge to a uniformly chosen different op.
    pub fn mutate(&self, enc: &ArchEncoding, seed: u64) -> Result<ArchEncoding> {
        self.check(enc)?;
        if self.num_ops() < 2 || self.num_edges() == 0 {
            return Err(Error::NoLegalMutation);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = rng.random_range(0..self.num_edges());
        let old = enc.ops[pos] as usize;
        let shift = rng.random_range(1..self.num_ops());
        let mut child = enc.clone();
        child.ops[pos] = ((old + shift) % self.num_ops()) as u8;
        Ok(child)
    }

    /// FLOPs of the fixed skeleton alone (every edge 'none').
    pub fn skeleton_flops(&self) -> u64 {
        let none = self.encoding(vec![0; self.num_edges()]).expect("op id 0 always exists");
        crate::graph::count_flops(&self.decode(&none).expect("skeleton decodes"))
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, op: OpKind, inputs: Vec<NodeId>, role: NodeRole, shape: Shape) -> NodeId {
        self.nodes.push(Node {
            op,
            inputs,
            role,
            shape,
        });
        self.nodes.len() - 1
    }
}

/// One op id per cell edge, tagged with the space it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArchEncoding {
    pub space_id: String,
    pub ops: Vec<u8>,
}

impl fmt::Display for ArchEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.space_id)?;
        for (i, op) in self.ops.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{op}")?;
        }
        Ok(())
    }
}

/// Parses against the built-in space named by the prefix.
impl FromStr for ArchEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id = s.split(':').next().unwrap_or_default();
        if !s.contains(':') {
            return Err(Error::InvalidEncoding {
                position: s.len(),
                message: "missing ':' after the space id".into(),
            });
        }
        SpaceSpec::by_id(id)?.parse_encoding(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{count_flops, trainable_layer_count};
    use crate::net::{build_network, InitConfig, InputBatch};

    fn toy(s: &str) -> ComputationGraph {
        SpaceSpec::nb201_toy().decode(&s.parse().unwrap()).unwrap()
    }

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["nb201toy:0-0-0-0-0-0", "nb201toy:4-3-2-1-0-4", "nb201tiny:1-2-3"] {
            assert_eq!(s.parse::<ArchEncoding>().unwrap().to_string(), s);
        }
        let none: ArchEncoding = "nb201toy:0-0-0-0-0-0".parse().unwrap();
        assert!(none.ops.iter().all(|&o| o == 0));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err = "nb201toy:5-0-0-0-0-0".parse::<ArchEncoding>().unwrap_err();
        assert!(matches!(err, Error::InvalidEncoding { position: 9, .. }), "{err:?}");
        let err = "nb201toy:0-0-x-0-0-0".parse::<ArchEncoding>().unwrap_err();
        assert!(matches!(err, Error::InvalidEncoding { position: 13, .. }), "{err:?}");
        assert!("nb201toy:0-0-0".parse::<ArchEncoding>().is_err());
        assert!("nb201toy:0-0-0-0-0-0-0".parse::<ArchEncoding>().is_err());
        assert!(matches!("foo:0".parse::<ArchEncoding>(), Err(Error::UnknownSpace(_))));
        assert!("nb201toy".parse::<ArchEncoding>().is_err());
    }

    #[test]
    fn all_skip_cell_sums_identities() {
        let g = toy("nb201toy:1-1-1-1-1-1");
        let net = build_network(&g, &InitConfig::default(), 1).unwrap();
        let acts = net
            .activations(&InputBatch::random_gaussian(2, g.input_shape, 2))
            .unwrap();
        // node1 = x, node2 = x + node1, node3 = x + node1 + node2 = 4x
        let stem_out = &acts[2];
        let cell_out = g.nodes.iter().rposition(|n| n.op == OpKind::Sum).unwrap();
        for (a, b) in acts[cell_out].data.iter().zip(&stem_out.data) {
            assert_eq!(*a, 4.0 * b);
        }
        assert_eq!(trainable_layer_count(&g), 2);
    }

    #[test]
    fn all_none_cell_gives_zero_features() {
        let g = toy("nb201toy:0-0-0-0-0-0");
        let net = build_network(&g, &InitConfig::default(), 1).unwrap();
        let acts = net
            .activations(&InputBatch::random_gaussian(3, g.input_shape, 2))
            .unwrap();
        let gap = g.nodes.iter().position(|n| n.op == OpKind::GlobalAvgPool).unwrap();
        assert!(acts[gap].data.iter().all(|&v| v == 0.0));
        // stem conv3x3 3->4 on 8x8 plus the 4->10 classifier
        assert_eq!(count_flops(&g), 2 * 64 * 9 * 3 * 4 + 2 * 4 * 10);
        assert_eq!(SpaceSpec::nb201_toy().skeleton_flops(), 13_904);
    }

    #[test]
    fn all_conv_cell_has_six_weighted_nodes() {
        let g = toy("nb201toy:3-3-3-3-3-3");
        let cell_weighted = g
            .nodes
            .iter()
            .filter(|n| n.op.is_weighted() && matches!(n.role, NodeRole::Cell { .. }))
            .count();
        assert_eq!(cell_weighted, 6);
    }

    #[test]
    fn enumeration_counts() {
        let toy = SpaceSpec::nb201_toy();
        assert_eq!(toy.enumerate().unwrap().count(), 15_625);
        let tiny = SpaceSpec::nb201_tiny();
        let all: Vec<_> = tiny.enumerate().unwrap().collect();
        assert_eq!(all.len(), 125);
        assert!(all.windows(2).all(|w| w[0].ops < w[1].ops));
        let single = SpaceSpec {
            ops: vec![CellOp::Conv3x3],
            ..SpaceSpec::nb201_toy()
        };
        assert_eq!(single.enumerate().unwrap().count(), 1);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let big = SpaceSpec {
            nodes: 8,
            edges: dense_edges(8),
            ..SpaceSpec::nb201_toy()
        };
        assert!(matches!(big.enumerate().err(), Some(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn single_op_space_cannot_mutate() {
        let single = SpaceSpec {
            ops: vec![CellOp::Skip],
            ..SpaceSpec::nb201_toy()
        };
        let enc = single.encoding(vec![0; 6]).unwrap();
        assert!(matches!(single.mutate(&enc, 1), Err(Error::NoLegalMutation)));
    }

    #[test]
    fn mutation_is_deterministic() {
        let space = SpaceSpec::nb201_toy();
        let enc: ArchEncoding = "nb201toy:1-2-3-4-0-1".parse().unwrap();
        assert_eq!(space.mutate(&enc, 99).unwrap(), space.mutate(&enc, 99).unwrap());
    }
}
