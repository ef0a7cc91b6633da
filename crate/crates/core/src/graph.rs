//! Computation-graph IR shared by decoding, canonicalization and evaluation.
//!
//! Nodes are stored in topological order: every input id is smaller than the
//! id of the node consuming it. Node 0 is the network input and the last node
//! is the classifier producing `num_classes` logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Per-sample activation shape `(channels, height, width)`.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Input,
    /// Stride 1, same padding, no bias.
    Conv {
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
    },
    /// Inference-mode normalization with unit running variance, affine `gamma`, `beta`.
    BatchNorm {
        channels: usize,
    },
    Relu,
    AvgPool3x3,
    /// Elementwise sum of all inputs; zeros of the node's shape when it has none.
    Sum,
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
        bias: bool,
    },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Conv { kernel: 1, .. } => "conv1x1",
            OpKind::Conv { kernel: 3, .. } => "conv3x3",
            OpKind::Conv { .. } => "conv",
            OpKind::BatchNorm { .. } => "batchnorm",
            OpKind::Relu => "relu",
            OpKind::AvgPool3x3 => "avgpool3x3",
            OpKind::Sum => "sum",
            OpKind::GlobalAvgPool => "gap",
            OpKind::Linear { .. } => "linear",
        }
    }

    /// Number of trainable scalars owned by the node.
    pub fn param_count(&self) -> usize {
        match *self {
            OpKind::Conv { kernel, in_ch, out_ch } => out_ch * in_ch * kernel * kernel,
            OpKind::BatchNorm { channels } => 2 * channels,
            OpKind::Linear {
                in_features,
                out_features,
                bias,
            } => out_features * in_features + if bias { out_features } else { 0 },
            _ => 0,
        }
    }

    pub fn is_batchnorm(&self) -> bool {
        matches!(self, OpKind::BatchNorm { .. })
    }

    /// Weighted layers that count towards the layer-count proxy and may be sampled.
    pub fn is_weighted(&self) -> bool {
        matches!(self, OpKind::Conv { .. } | OpKind::Linear { .. })
    }
}

/// Whether canonicalization may remove a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRole {
    /// Part of the fixed macro skeleton (stem, cell ports, head). Never pruned.
    Fixed,
    /// Internal to cell number `cell`; pruned when it is off every input-to-output path.
    /// `node` is the cell-node index the value belongs to (the edge target for edge ops).
    Cell { cell: usize, node: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub op: OpKind,
    pub inputs: Vec<NodeId>,
    pub role: NodeRole,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub nodes: Vec<Node>,
    pub input_shape: Shape,
    pub num_classes: usize,
}

impl ComputationGraph {
    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// Checks topological order, operator arity and shape consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |node: usize, reason: String| Err(Error::InvalidGraph { node, reason });
        if self.nodes.is_empty() {
            return bad(0, "graph has no nodes".into());
        }
        if self.num_classes == 0 {
            return bad(0, "num_classes must be positive".into());
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if let Some(&late) = node.inputs.iter().find(|&&i| i >= id) {
                return bad(id, format!("input {late} does not precede the node"));
            }
            let in_shapes: Vec<Shape> = node.inputs.iter().map(|&i| self.nodes[i].shape).collect();
            let expect = match node.op {
                OpKind::Input => {
                    if id != 0 {
                        return bad(id, "input node must be node 0".into());
                    }
                    if !node.inputs.is_empty() {
                        return bad(id, "input node takes no inputs".into());
                    }
                    self.input_shape
                }
                OpKind::Sum => {
                    if let Some(s) = in_shapes.iter().find(|&&s| s != node.shape) {
                        return bad(id, format!("sum operand shape {s:?} differs from {:?}", node.shape));
                    }
                    node.shape
                }
                OpKind::Linear {
                    in_features,
                    out_features,
                    ..
                } => {
                    let s = unary(id, &in_shapes)?;
                    if s.0 * s.1 * s.2 != in_features {
                        return bad(id, format!("linear expects {in_features} features, got {s:?}"));
                    }
                    (out_features, 1, 1)
                }
                OpKind::Conv { kernel, in_ch, out_ch } => {
                    let s = unary(id, &in_shapes)?;
                    if kernel % 2 == 0 {
                        return bad(id, "even kernels are unsupported".into());
                    }
                    if s.0 != in_ch {
                        return bad(id, format!("conv expects {in_ch} channels, got {}", s.0));
                    }
                    (out_ch, s.1, s.2)
                }
                OpKind::BatchNorm { channels } => {
                    let s = unary(id, &in_shapes)?;
                    if s.0 != channels {
                        return bad(id, format!("batchnorm expects {channels} channels, got {}", s.0));
                    }
                    s
                }
                OpKind::Relu | OpKind::AvgPool3x3 => unary(id, &in_shapes)?,
                OpKind::GlobalAvgPool => {
                    let s = unary(id, &in_shapes)?;
                    (s.0, 1, 1)
                }
            };
            if expect != node.shape {
                return bad(id, format!("declared shape {:?}, inferred {expect:?}", node.shape));
            }
            if id > 0 && node.op == OpKind::Input {
                return bad(id, "duplicate input node".into());
            }
        }
        if self.nodes[0].op != OpKind::Input {
            return bad(0, "node 0 must be the input".into());
        }
        let out = self.output();
        match self.nodes[out].op {
            OpKind::Linear { out_features, .. } if out_features == self.num_classes => {}
            _ => {
                return bad(
                    out,
                    "last node must be a linear classifier with num_classes outputs".into(),
                )
            }
        }
        if self.nodes.iter().any(|n| n.inputs.contains(&out)) {
            return bad(out, "classifier output must not be consumed".into());
        }
        Ok(())
    }

    /// Trainable (weight-owning) node ids, in topological order.
    pub fn trainable_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op.param_count() > 0)
            .map(|(i, _)| i)
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.op.param_count()).sum()
    }
}

fn unary(id: usize, shapes: &[Shape]) -> Result<Shape> {
    match shapes {
        [s] => Ok(*s),
        _ => Err(Error::InvalidGraph {
            node: id,
            reason: format!("expected exactly one input, got {}", shapes.len()),
        }),
    }
}

/// FLOPs of a single node for one sample. One multiply-accumulate counts as
/// two FLOPs; only convolutions and dense layers contribute.
pub fn node_flops(node: &Node) -> u64 {
    match node.op {
        OpKind::Conv { kernel, in_ch, out_ch } => {
            let (_, h, w) = node.shape;
            2 * (h * w * kernel * kernel * in_ch * out_ch) as u64
        }
        OpKind::Linear {
            in_features,
            out_features,
            ..
        } => 2 * (in_features * out_features) as u64,
        _ => 0,
    }
}

pub fn count_flops(graph: &ComputationGraph) -> u64 {
    graph.nodes.iter().map(node_flops).sum()
}

/// Number of weighted layers, batch normalization excluded.
pub fn trainable_layer_count(graph: &ComputationGraph) -> usize {
    graph.nodes.iter().filter(|n| n.op.is_weighted()).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_node(input: NodeId, cin: usize, cout: usize, k: usize, hw: usize) -> Node {
        Node {
            op: OpKind::Conv {
                kernel: k,
                in_ch: cin,
                out_ch: cout,
            },
            inputs: vec![input],
            role: NodeRole::Fixed,
            shape: (cout, hw, hw),
        }
    }

    fn head(graph: &mut ComputationGraph, from: NodeId, ch: usize) {
        let gap = graph.nodes.len();
        graph.nodes.push(Node {
            op: OpKind::GlobalAvgPool,
            inputs: vec![from],
            role: NodeRole::Fixed,
            shape: (ch, 1, 1),
        });
        graph.nodes.push(Node {
            op: OpKind::Linear {
                in_features: ch,
                out_features: graph.num_classes,
                bias: true,
            },
            inputs: vec![gap],
            role: NodeRole::Fixed,
            shape: (graph.num_classes, 1, 1),
        });
    }

    fn input_only(c: usize, hw: usize) -> ComputationGraph {
        ComputationGraph {
            nodes: vec![Node {
                op: OpKind::Input,
                inputs: vec![],
                role: NodeRole::Fixed,
                shape: (c, hw, hw),
            }],
            input_shape: (c, hw, hw),
            num_classes: 10,
        }
    }

    #[test]
    fn conv3x3_flops_closed_form() {
        let node = conv_node(0, 4, 4, 3, 8);
        assert_eq!(node_flops(&node), 18_432);
        assert_eq!(node_flops(&node), 2 * 8 * 8 * 9 * 4 * 4);
    }

    #[test]
    fn flops_are_additive_over_nodes() {
        let mut g = input_only(4, 8);
        g.nodes.push(conv_node(0, 4, 4, 3, 8));
        let mut bigger = g.clone();
        head(&mut g, 1, 4);
        bigger.nodes.push(conv_node(1, 4, 4, 1, 8));
        head(&mut bigger, 2, 4);
        g.validate().unwrap();
        bigger.validate().unwrap();
        let extra = node_flops(&bigger.nodes[2]);
        assert_eq!(count_flops(&bigger), count_flops(&g) + extra);
        assert_eq!(trainable_layer_count(&bigger), trainable_layer_count(&g) + 1);
    }

    #[test]
    fn validation_rejects_out_of_order_inputs() {
        let mut g = input_only(4, 8);
        g.nodes.push(conv_node(2, 4, 4, 3, 8));
        head(&mut g, 1, 4);
        assert!(matches!(g.validate(), Err(Error::InvalidGraph { node: 1, .. })));
    }

    #[test]
    fn validation_rejects_channel_mismatch() {
        let mut g = input_only(3, 8);
        g.nodes.push(conv_node(0, 4, 4, 3, 8));
        head(&mut g, 1, 4);
        assert!(g.validate().is_err());
    }

    #[test]
    fn batchnorm_is_not_a_weighted_layer() {
        let op = OpKind::BatchNorm { channels: 4 };
        assert_eq!(op.param_count(), 8);
        assert!(!op.is_weighted());
    }
}
