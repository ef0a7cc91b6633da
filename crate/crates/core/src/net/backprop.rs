//! Reverse-mode gradients of the cross-entropy loss and plain gradient descent.

use super::{InputBatch, Logits, NetworkInstance, BN_EPS};
use crate::error::{Error, Result};
use crate::graph::OpKind;
use crate::tensor::{self, Tensor};

/// Inputs with integer class labels and optional per-sample weights.
///
/// With weights the loss is the weighted mean `sum_s w_s l_s / sum_s w_s`,
/// which lets a dataset drawn from a small discrete support be stored as
/// one row per distinct `(input, label)` pair with its count as the weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: InputBatch,
    pub labels: Vec<usize>,
    pub weights: Option<Vec<f64>>,
}

impl LabeledBatch {
    pub fn new(inputs: InputBatch, labels: Vec<usize>) -> Self {
        Self {
            inputs,
            labels,
            weights: None,
        }
    }

    pub fn weighted(inputs: InputBatch, labels: Vec<usize>, weights: Vec<f64>) -> Self {
        Self {
            inputs,
            labels,
            weights: Some(weights),
        }
    }
}

/// Source of the batch used at each gradient step.
pub trait LabeledBatchStream {
    fn batch(&mut self, step: usize) -> &LabeledBatch;
}

/// Full-batch training: the same batch at every step.
#[derive(Debug, Clone)]
pub struct RepeatBatch(pub LabeledBatch);

impl LabeledBatchStream for RepeatBatch {
    fn batch(&mut self, _step: usize) -> &LabeledBatch {
        &self.0
    }
}

/// Mean (or weighted mean) cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Logits, labels: &[usize], weights: Option<&[f64]>) -> Result<(f64, Vec<f64>)> {
    if labels.len() != logits.n {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: logits.n,
            got: labels.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != logits.n {
            return Err(Error::DimensionMismatch {
                what: "sample weights",
                expected: logits.n,
                got: w.len(),
            });
        }
    }
    let total: f64 = weights.map_or(logits.n as f64, |w| w.iter().sum());
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.data.len()];
    for (s, (row, &label)) in logits.rows().zip(labels).enumerate() {
        if label >= logits.classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: logits.classes,
            });
        }
        let w = weights.map_or(1.0, |w| w[s]) / total;
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[label]);
        let g = &mut grad[s * logits.classes..(s + 1) * logits.classes];
        for (gc, v) in g.iter_mut().zip(row) {
            *gc = w * (v - lse).exp();
        }
        g[label] -= w;
    }
    Ok((loss, grad))
}

impl NetworkInstance {
    /// Gradient of `sum_{s,c} upstream[s][c] * logit[s][c]` with respect to every weight.
    pub fn vjp(&self, batch: &InputBatch, upstream: &[f64]) -> Result<Vec<f64>> {
        let acts = self.activations(batch)?;
        Ok(self.vjp_with(&acts, upstream))
    }

    fn vjp_with(&self, acts: &[Tensor], upstream: &[f64]) -> Vec<f64> {
        let graph = self.graph();
        let out = graph.output();
        let mut grads: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
        let last = &acts[out];
        grads[out] = Some(Tensor::from_vec(last.n, last.c, last.h, last.w, upstream.to_vec()));
        let mut wgrad = vec![0.0; self.num_params()];
        for id in (1..=out).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &graph.nodes[id];
            let range = self.layers().get(&id).cloned();
            let send = |grads: &mut Vec<Option<Tensor>>, to: usize, g: Tensor| match &mut grads[to] {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            };
            match node.op {
                OpKind::Input => {}
                OpKind::Sum => {
                    for &i in &node.inputs {
                        send(&mut grads, i, gy.clone());
                    }
                }
                OpKind::Conv { kernel, in_ch, .. } => {
                    let x = &acts[node.inputs[0]];
                    let range = range.unwrap();
                    tensor::conv2d_backward_weight(x, &gy, kernel, &mut wgrad[range.clone()]);
                    let gx = tensor::conv2d_backward_input(&gy, &self.weights()[range], kernel, in_ch);
                    send(&mut grads, node.inputs[0], gx);
                }
                OpKind::BatchNorm { channels } => {
                    let x = &acts[node.inputs[0]];
                    let range = range.unwrap();
                    let gamma = &self.weights()[range.start..range.start + channels];
                    let scale = 1.0 / (1.0 + BN_EPS).sqrt();
                    let plane = x.plane();
                    let mut gx = gy.clone();
                    for s in 0..x.n {
                        for c in 0..channels {
                            let off = (s * channels + c) * plane;
                            let g = &gy.data[off..off + plane];
                            let xv = &x.data[off..off + plane];
                            wgrad[range.start + c] += scale * g.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                            wgrad[range.start + channels + c] += g.iter().sum::<f64>();
                            for v in &mut gx.data[off..off + plane] {
                                *v *= gamma[c] * scale;
                            }
                        }
                    }
                    send(&mut grads, node.inputs[0], gx);
                }
                OpKind::Relu => {
                    let gx = tensor::relu_mask(&gy, &acts[node.inputs[0]]);
                    send(&mut grads, node.inputs[0], gx);
                }
                OpKind::AvgPool3x3 => send(&mut grads, node.inputs[0], tensor::avg_pool3x3_backward(&gy)),
                OpKind::GlobalAvgPool => {
                    let x = &acts[node.inputs[0]];
                    send(
                        &mut grads,
                        node.inputs[0],
                        tensor::global_avg_pool_backward(&gy, x.h, x.w),
                    );
                }
                OpKind::Linear {
                    in_features,
                    out_features,
                    bias,
                } => {
                    let x = &acts[node.inputs[0]];
                    let range = range.unwrap();
                    let seg = &mut wgrad[range.clone()];
                    for s in 0..x.n {
                        let xs = x.sample(s);
                        for o in 0..out_features {
                            let g = gy.data[s * out_features + o];
                            if g == 0.0 {
                                continue;
                            }
                            for (d, v) in seg[o * in_features..(o + 1) * in_features].iter_mut().zip(xs) {
                                *d += g * v;
                            }
                            if bias {
                                seg[in_features * out_features + o] += g;
                            }
                        }
                    }
                    let w = &self.weights()[range.start..range.start + in_features * out_features];
                    let gx = tensor::linear_backward_input(&gy, w, graph.nodes[node.inputs[0]].shape);
                    send(&mut grads, node.inputs[0], gx);
                }
            }
        }
        wgrad
    }

    /// Loss and weight gradient for one labeled batch.
    pub fn loss_and_gradient(&self, batch: &LabeledBatch) -> Result<(f64, Vec<f64>)> {
        let acts = self.activations(&batch.inputs)?;
        let last = acts.last().expect("non-empty graph");
        let logits = Logits {
            n: last.n,
            classes: last.c,
            data: last.data.clone(),
        };
        let (loss, upstream) = cross_entropy(&logits, &batch.labels, batch.weights.as_deref())?;
        Ok((loss, self.vjp_with(&acts, &upstream)))
    }
}

/// Result of [`train_steps`]: the trained network and the loss before each step.
#[derive(Debug, Clone)]
pub struct Training {
    pub network: NetworkInstance,
    pub losses: Vec<f64>,
}

/// Plain gradient descent on the cross-entropy over all weights.
pub fn train_steps(
    net: &NetworkInstance,
    data: &mut dyn LabeledBatchStream,
    steps: usize,
    lr: f64,
) -> Result<Training> {
    let mut current = net.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let (loss, grad) = match current.loss_and_gradient(data.batch(step)) {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Divergence { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        let mut w = current.weights().to_vec();
        for (v, g) in w.iter_mut().zip(&grad) {
            *v -= lr * g;
        }
        current = current.with_weights(w)?;
    }
    Ok(Training {
        network: current,
        losses,
    })
}
