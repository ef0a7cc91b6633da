//! Instantiated networks: weights, forward evaluation, exact logit Jacobians
//! and plain gradient-descent training.

mod backprop;
mod input;
mod jacobian;
mod select;

use std::collections::BTreeMap;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ComputationGraph, NodeId, OpKind};
use crate::tensor::{self, Tensor};

pub use backprop::{cross_entropy, train_steps, LabeledBatch, LabeledBatchStream, RepeatBatch, Training};
pub use input::{InputBatch, InputSource};
pub use jacobian::JacobianStack;
pub use select::{IndexRule, ParamEntry, ParamSelection, SamplingPolicy, DEFAULT_MAX_LAYERS};

pub(crate) const BN_EPS: f64 = 1e-5;

/// How weights are drawn at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Zero-mean Gaussian with standard deviation `sqrt(gain / fan_in)`.
    FanInGaussian { gain: f64 },
    /// Every weight and bias zero; batch-norm scales stay at one.
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub scheme: InitScheme,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            scheme: InitScheme::FanInGaussian { gain: 2.0 },
        }
    }
}

/// A graph with a concrete, immutable weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    graph: ComputationGraph,
    weights: Vec<f64>,
    seed: u64,
    layers: BTreeMap<NodeId, Range<usize>>,
}

pub fn build_network(graph: &ComputationGraph, init: &InitConfig, seed: u64) -> Result<NetworkInstance> {
    graph.validate()?;
    let mut layers = BTreeMap::new();
    let mut offset = 0;
    for id in graph.trainable_nodes() {
        let len = graph.nodes[id].op.param_count();
        layers.insert(id, offset..offset + len);
        offset += len;
    }
    let mut weights = vec![0.0; offset];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (&id, range) in &layers {
        let seg = &mut weights[range.clone()];
        match graph.nodes[id].op {
            OpKind::BatchNorm { channels } => {
                seg[..channels].fill(1.0);
            }
            OpKind::Conv { kernel, in_ch, out_ch } => fill_weights(
                seg,
                init.scheme,
                in_ch * kernel * kernel,
                &mut rng,
                out_ch * in_ch * kernel * kernel,
            ),
            OpKind::Linear {
                in_features,
                out_features,
                ..
            } => fill_weights(seg, init.scheme, in_features, &mut rng, out_features * in_features),
            _ => unreachable!("only parameterized nodes own segments"),
        }
    }
    Ok(NetworkInstance {
        graph: graph.clone(),
        weights,
        seed,
        layers,
    })
}

/// Fills the first `n_weights` entries; trailing entries (biases) stay zero.
fn fill_weights(seg: &mut [f64], scheme: InitScheme, fan_in: usize, rng: &mut ChaCha8Rng, n_weights: usize) {
    if let InitScheme::FanInGaussian { gain } = scheme {
        let std = (gain / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut seg[..n_weights] {
            *v = normal.sample(rng);
        }
    }
}

impl NetworkInstance {
    pub fn graph(&self) -> &ComputationGraph {
        &self.graph
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    /// Map from trainable node id to its segment in the flat weight vector.
    pub fn layers(&self) -> &BTreeMap<NodeId, Range<usize>> {
        &self.layers
    }

    pub fn layer_weights(&self, node: NodeId) -> Option<&[f64]> {
        self.layers.get(&node).map(|r| &self.weights[r.clone()])
    }

    /// Same graph and layout with a replacement weight vector.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                what: "weight vector",
                expected: self.weights.len(),
                got: weights.len(),
            });
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Copy of the network with `delta[j]` added to the j-th selected parameter.
    pub fn perturbed(&self, sel: &ParamSelection, delta: &[f64]) -> Result<Self> {
        if delta.len() != sel.len() {
            return Err(Error::DimensionMismatch {
                what: "perturbation",
                expected: sel.len(),
                got: delta.len(),
            });
        }
        let mut w = self.weights.clone();
        for (entry, d) in sel.entries.iter().zip(delta) {
            w[self.flat_index(entry)?] += d;
        }
        self.with_weights(w)
    }

    /// Values of the selected parameters.
    pub fn selected_values(&self, sel: &ParamSelection) -> Result<Vec<f64>> {
        sel.entries
            .iter()
            .map(|e| self.flat_index(e).map(|i| self.weights[i]))
            .collect()
    }

    pub(crate) fn flat_index(&self, entry: &ParamEntry) -> Result<usize> {
        let range = self.layers.get(&entry.layer).ok_or(Error::MissingLayer(entry.layer))?;
        if entry.index >= range.len() {
            return Err(Error::SelectionOutOfBounds {
                layer: entry.layer,
                index: entry.index,
                len: range.len(),
            });
        }
        Ok(range.start + entry.index)
    }

    /// Builds a network over `graph` taking each layer's weights from `self`,
    /// where `origin[k]` names the node of `self` that node `k` of `graph` came from.
    pub fn restrict_to(&self, graph: &ComputationGraph, origin: &[NodeId]) -> Result<Self> {
        let mut net = build_network(
            graph,
            &InitConfig {
                scheme: InitScheme::Zeros,
            },
            self.seed,
        )?;
        for (&id, range) in net.layers.clone().iter() {
            let src = self.layer_weights(origin[id]).ok_or(Error::MissingLayer(origin[id]))?;
            if src.len() != range.len() {
                return Err(Error::DimensionMismatch {
                    what: "restricted layer",
                    expected: range.len(),
                    got: src.len(),
                });
            }
            net.weights[range.clone()].copy_from_slice(src);
        }
        Ok(net)
    }

    fn check_batch(&self, batch: &InputBatch) -> Result<()> {
        let t = &batch.data;
        if (t.c, t.h, t.w) != self.graph.input_shape || t.n == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("(N>=1, {:?})", self.graph.input_shape),
                got: format!("{:?}", t.shape()),
            });
        }
        Ok(())
    }

    /// Evaluates every node, returning all activations in node order.
    pub(crate) fn activations(&self, batch: &InputBatch) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let n = batch.data.n;
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.graph.nodes.len());
        for (id, node) in self.graph.nodes.iter().enumerate() {
            let input = |k: usize| &acts[node.inputs[k]];
            let out = match node.op {
                OpKind::Input => batch.data.clone(),
                OpKind::Conv { kernel, out_ch, .. } => {
                    tensor::conv2d(input(0), self.layer_weights(id).unwrap(), kernel, out_ch)
                }
                OpKind::BatchNorm { channels } => batchnorm(input(0), self.layer_weights(id).unwrap(), channels),
                OpKind::Relu => tensor::relu(input(0)),
                OpKind::AvgPool3x3 => tensor::avg_pool3x3(input(0)),
                OpKind::Sum => {
                    let (c, h, w) = node.shape;
                    let mut acc = Tensor::zeros(n, c, h, w);
                    for &i in &node.inputs {
                        acc.add_assign(&acts[i]);
                    }
                    acc
                }
                OpKind::GlobalAvgPool => tensor::global_avg_pool(input(0)),
                OpKind::Linear {
                    in_features,
                    out_features,
                    bias,
                } => {
                    let seg = self.layer_weights(id).unwrap();
                    let (w, b) = seg.split_at(in_features * out_features);
                    tensor::linear(input(0), w, bias.then_some(b), out_features)
                }
            };
            if !out.is_finite() {
                return Err(Error::NonFinite {
                    node: id,
                    op: node.op.name().to_string(),
                });
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Logits with shape `(N, C)`, row-major.
    pub fn forward(&self, batch: &InputBatch) -> Result<Logits> {
        let mut acts = self.activations(batch)?;
        let out = acts.pop().expect("non-empty graph");
        Ok(Logits {
            n: out.n,
            classes: out.c,
            data: out.data,
        })
    }
}

fn batchnorm(x: &Tensor, seg: &[f64], channels: usize) -> Tensor {
    let (gamma, beta) = seg.split_at(channels);
    let scale = 1.0 / (1.0 + BN_EPS).sqrt();
    let plane = x.plane();
    let mut y = x.clone();
    for s in 0..x.n {
        for c in 0..channels {
            let g = gamma[c] * scale;
            let b = beta[c];
            let off = (s * channels + c) * plane;
            for v in &mut y.data[off..off + plane] {
                *v = *v * g + b;
            }
        }
    }
    y
}

/// Row-major `(N, C)` logit matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub n: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.classes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, NodeRole};

    fn linear_graph(inputs: usize, classes: usize, bias: bool) -> ComputationGraph {
        ComputationGraph {
            nodes: vec![
                Node {
                    op: OpKind::Input,
                    inputs: vec![],
                    role: NodeRole::Fixed,
                    shape: (inputs, 1, 1),
                },
                Node {
                    op: OpKind::Linear {
                        in_features: inputs,
                        out_features: classes,
                        bias,
                    },
                    inputs: vec![0],
                    role: NodeRole::Fixed,
                    shape: (classes, 1, 1),
                },
            ],
            input_shape: (inputs, 1, 1),
            num_classes: classes,
        }
    }

    #[test]
    fn hand_computed_linear_logits() {
        let g = linear_graph(2, 2, true);
        let net = build_network(&g, &InitConfig::default(), 1).unwrap();
        // W = [[1, 2], [3, 4]], b = [0.5, -1]
        let net = net.with_weights(vec![1.0, 2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let x = InputBatch::from_tensor(Tensor::from_vec(1, 2, 1, 1, vec![1.0, -2.0]));
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits.data, vec![1.0 - 4.0 + 0.5, 3.0 - 8.0 - 1.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let g = crate::space::SpaceSpec::nb201_toy()
            .decode(&"nb201toy:3-3-3-3-3-3".parse().unwrap())
            .unwrap();
        let net = build_network(
            &g,
            &InitConfig {
                scheme: InitScheme::Zeros,
            },
            0,
        )
        .unwrap();
        let batch = InputBatch::random_gaussian(4, g.input_shape, 3);
        let logits = net.forward(&batch).unwrap();
        assert!(logits.data.iter().all(|&v| v == 0.0));
        let p = crate::fim::ProbVector::from_logits(logits.row(0)).unwrap();
        assert!(p.probs().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn graph_without_weighted_layers_has_zero_params() {
        // A classifier over zero features owns no weights and no bias.
        let g = linear_graph(0, 3, false);
        let net = build_network(&g, &InitConfig::default(), 9).unwrap();
        assert_eq!(net.num_params(), 0);
        assert!(net.layers().is_empty());
    }

    #[test]
    fn build_is_deterministic() {
        let g = crate::space::SpaceSpec::nb201_toy()
            .decode(&"nb201toy:3-2-4-1-3-2".parse().unwrap())
            .unwrap();
        let a = build_network(&g, &InitConfig::default(), 42).unwrap();
        let b = build_network(&g, &InitConfig::default(), 42).unwrap();
        let c = build_network(&g, &InitConfig::default(), 43).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert_ne!(a.weights(), c.weights());
        let total: usize = a.layers().values().map(|r| r.len()).sum();
        assert_eq!(total, a.num_params());
    }

    #[test]
    fn fan_in_init_standard_deviation() {
        // One conv3x3 with fan_in = 3 * 3 * 3 = 27 and enough outputs for 1e5 samples.
        let out_ch = 3704;
        let g = ComputationGraph {
            nodes: vec![
                Node {
                    op: OpKind::Input,
                    inputs: vec![],
                    role: NodeRole::Fixed,
                    shape: (3, 2, 2),
                },
                Node {
                    op: OpKind::Conv {
                        kernel: 3,
                        in_ch: 3,
                        out_ch,
                    },
                    inputs: vec![0],
                    role: NodeRole::Fixed,
                    shape: (out_ch, 2, 2),
                },
                Node {
                    op: OpKind::GlobalAvgPool,
                    inputs: vec![1],
                    role: NodeRole::Fixed,
                    shape: (out_ch, 1, 1),
                },
                Node {
                    op: OpKind::Linear {
                        in_features: out_ch,
                        out_features: 2,
                        bias: true,
                    },
                    inputs: vec![2],
                    role: NodeRole::Fixed,
                    shape: (2, 1, 1),
                },
            ],
            input_shape: (3, 2, 2),
            num_classes: 2,
        };
        let net = build_network(&g, &InitConfig::default(), 5).unwrap();
        let w = net.layer_weights(1).unwrap();
        assert!(w.len() >= 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 27.0).sqrt();
        assert!(
            (var.sqrt() / target - 1.0).abs() < 0.02,
            "std {} vs {}",
            var.sqrt(),
            target
        );
    }

    #[test]
    fn duplicated_batch_duplicates_rows() {
        let g = crate::space::SpaceSpec::nb201_toy()
            .decode(&"nb201toy:3-4-2-1-3-3".parse().unwrap())
            .unwrap();
        let net = build_network(&g, &InitConfig::default(), 8).unwrap();
        let b = InputBatch::random_gaussian(3, g.input_shape, 11);
        let doubled = InputBatch::from_tensor(b.data.concat(&b.data));
        let l1 = net.forward(&b).unwrap();
        let l2 = net.forward(&doubled).unwrap();
        assert_eq!(&l2.data[..l1.data.len()], &l1.data[..]);
        assert_eq!(&l2.data[l1.data.len()..], &l1.data[..]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = linear_graph(2, 2, true);
        let net = build_network(&g, &InitConfig::default(), 1).unwrap();
        let bad = InputBatch::from_tensor(Tensor::zeros(1, 3, 1, 1));
        assert!(matches!(net.forward(&bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn overflow_names_the_node() {
        let g = linear_graph(1, 2, false);
        let net = build_network(&g, &InitConfig::default(), 1)
            .unwrap()
            .with_weights(vec![f64::MAX, 1.0])
            .unwrap();
        let x = InputBatch::from_tensor(Tensor::from_vec(1, 1, 1, 1, vec![10.0]));
        match net.forward(&x) {
            Err(Error::NonFinite { node, op }) => {
                assert_eq!(node, 1);
                assert_eq!(op, "linear");
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
