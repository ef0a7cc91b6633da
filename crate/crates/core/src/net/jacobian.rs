//! Exact logit Jacobians by forward-mode differentiation, one tangent pass per
//! selected parameter.

use nalgebra::DMatrix;

use super::{InputBatch, NetworkInstance, ParamEntry, ParamSelection, BN_EPS};
use crate::error::Result;
use crate::graph::OpKind;
use crate::tensor::{self, Tensor};

/// Derivatives of every logit with respect to every selected parameter,
/// laid out `[sample][class][param]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianStack {
    pub n: usize,
    pub classes: usize,
    pub params: usize,
    pub data: Vec<f64>,
}

impl JacobianStack {
    pub fn get(&self, sample: usize, class: usize, param: usize) -> f64 {
        self.data[(sample * self.classes + class) * self.params + param]
    }

    /// The `C x p'` Jacobian of one sample.
    pub fn sample_matrix(&self, sample: usize) -> DMatrix<f64> {
        let block = self.classes * self.params;
        DMatrix::from_row_slice(
            self.classes,
            self.params,
            &self.data[sample * block..(sample + 1) * block],
        )
    }

    /// Column `param` as an `(N, C)` row-major vector.
    pub fn column(&self, param: usize) -> Vec<f64> {
        (0..self.n * self.classes)
            .map(|row| self.data[row * self.params + param])
            .collect()
    }
}

impl NetworkInstance {
    pub fn logit_jacobian(&self, batch: &InputBatch, sel: &ParamSelection) -> Result<JacobianStack> {
        for entry in &sel.entries {
            self.flat_index(entry)?;
        }
        let acts = self.activations(batch)?;
        let n = batch.len();
        let classes = self.graph().num_classes;
        let params = sel.len();
        let mut data = vec![0.0; n * classes * params];
        for (j, entry) in sel.entries.iter().enumerate() {
            if let Some(t) = self.tangent(&acts, entry) {
                for (row, v) in t.data.iter().enumerate() {
                    data[row * params + j] = *v;
                }
            }
        }
        Ok(JacobianStack {
            n,
            classes,
            params,
            data,
        })
    }

    /// Logit tangent along one parameter, `None` when no path reaches the output.
    fn tangent(&self, acts: &[Tensor], entry: &ParamEntry) -> Option<Tensor> {
        let graph = self.graph();
        let mut tangents: Vec<Option<Tensor>> = vec![None; graph.nodes.len()];
        for id in entry.layer..graph.nodes.len() {
            let node = &graph.nodes[id];
            let own = (id == entry.layer).then(|| self.seed_tangent(acts, id, entry.index));
            let carried = match node.op {
                OpKind::Sum => {
                    let mut acc: Option<Tensor> = None;
                    for &i in &node.inputs {
                        if let Some(t) = &tangents[i] {
                            match &mut acc {
                                Some(a) => a.add_assign(t),
                                None => acc = Some(t.clone()),
                            }
                        }
                    }
                    acc
                }
                OpKind::Input => None,
                _ => tangents[node.inputs[0]]
                    .as_ref()
                    .map(|t| self.push_tangent(acts, id, t)),
            };
            tangents[id] = match (own, carried) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    Some(a)
                }
                (a, b) => a.or(b),
            };
        }
        tangents.pop().flatten()
    }

    /// Derivative of node `id`'s output with respect to its own parameter `index`.
    fn seed_tangent(&self, acts: &[Tensor], id: usize, index: usize) -> Tensor {
        let node = &self.graph().nodes[id];
        let x = &acts[node.inputs[0]];
        match node.op {
            OpKind::Conv { kernel, out_ch, .. } => tensor::conv2d_unit_weight(x, index, kernel, out_ch),
            OpKind::BatchNorm { channels } => {
                let mut t = Tensor::zeros_like(x);
                let plane = x.plane();
                let scale = 1.0 / (1.0 + BN_EPS).sqrt();
                let c = index % channels;
                for s in 0..x.n {
                    let off = (s * channels + c) * plane;
                    let dst = &mut t.data[off..off + plane];
                    if index < channels {
                        for (d, v) in dst.iter_mut().zip(&x.data[off..off + plane]) {
                            *d = v * scale;
                        }
                    } else {
                        dst.fill(1.0);
                    }
                }
                t
            }
            OpKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                let mut t = Tensor::zeros(x.n, out_features, 1, 1);
                let n_weights = in_features * out_features;
                for s in 0..x.n {
                    if index < n_weights {
                        let (o, i) = (index / in_features, index % in_features);
                        t.data[s * out_features + o] = x.sample(s)[i];
                    } else {
                        t.data[s * out_features + index - n_weights] = 1.0;
                    }
                }
                t
            }
            _ => unreachable!("parameter-free nodes own no parameters"),
        }
    }

    /// Pushes an input tangent through node `id` with its weights held fixed.
    fn push_tangent(&self, acts: &[Tensor], id: usize, t: &Tensor) -> Tensor {
        let node = &self.graph().nodes[id];
        match node.op {
            OpKind::Conv { kernel, out_ch, .. } => tensor::conv2d(t, self.layer_weights(id).unwrap(), kernel, out_ch),
            OpKind::BatchNorm { channels } => {
                let gamma = &self.layer_weights(id).unwrap()[..channels];
                let scale = 1.0 / (1.0 + BN_EPS).sqrt();
                let plane = t.plane();
                let mut out = t.clone();
                for s in 0..t.n {
                    for (c, g) in gamma.iter().enumerate() {
                        let off = (s * channels + c) * plane;
                        for v in &mut out.data[off..off + plane] {
                            *v *= g * scale;
                        }
                    }
                }
                out
            }
            OpKind::Relu => tensor::relu_mask(t, &acts[node.inputs[0]]),
            OpKind::AvgPool3x3 => tensor::avg_pool3x3(t),
            OpKind::GlobalAvgPool => tensor::global_avg_pool(t),
            OpKind::Linear {
                in_features,
                out_features,
                ..
            } => {
                let w = &self.layer_weights(id).unwrap()[..in_features * out_features];
                tensor::linear(t, w, None, out_features)
            }
            OpKind::Input | OpKind::Sum => unreachable!("handled by the caller"),
        }
    }
}
