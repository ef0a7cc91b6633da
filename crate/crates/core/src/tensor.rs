//! Dense NCHW tensors and the handful of kernels the tiny networks need.
//!
//! All convolutions are stride 1 with "same" zero padding, so spatial size is
//! preserved through every cell. Kernels are plain loops; summation order is
//! fixed so results are bit-reproducible.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.n, other.c, other.h, other.w)
    }

    #[inline]
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenate two batches along the sample axis.
    pub fn concat(&self, other: &Tensor) -> Tensor {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w));
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Tensor::from_vec(self.n + other.n, self.c, self.h, self.w, data)
    }
}

/// Weight layout is `[out][in][ky][kx]`.
pub fn conv2d(x: &Tensor, weight: &[f64], k: usize, out_ch: usize) -> Tensor {
    let (n, cin, h, w) = x.shape();
    let pad = k / 2;
    let mut y = Tensor::zeros(n, out_ch, h, w);
    let plane = h * w;
    for s in 0..n {
        for o in 0..out_ch {
            let out = &mut y.data[(s * out_ch + o) * plane..(s * out_ch + o + 1) * plane];
            for i in 0..cin {
                let inp = &x.data[(s * cin + i) * plane..(s * cin + i + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((o * cin + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        accumulate_shifted(
                            out,
                            inp,
                            h,
                            w,
                            ky as isize - pad as isize,
                            kx as isize - pad as isize,
                            wv,
                        );
                    }
                }
            }
        }
    }
    y
}

/// `out[r][c] += scale * inp[r + dy][c + dx]` wherever the source is in bounds.
#[inline]
fn accumulate_shifted(out: &mut [f64], inp: &[f64], h: usize, w: usize, dy: isize, dx: isize, scale: f64) {
    let r0 = (-dy).max(0) as usize;
    let r1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let c0 = (-dx).max(0) as usize;
    let c1 = (w as isize - dx).min(w as isize).max(0) as usize;
    for r in r0..r1 {
        let sr = (r as isize + dy) as usize;
        let orow = &mut out[r * w + c0..r * w + c1];
        let start = (sr as isize * w as isize + c0 as isize + dx) as usize;
        let irow = &inp[start..start + (c1 - c0)];
        for (o, i) in orow.iter_mut().zip(irow) {
            *o += scale * *i;
        }
    }
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_backward_input(gy: &Tensor, weight: &[f64], k: usize, in_ch: usize) -> Tensor {
    let (n, cout, h, w) = gy.shape();
    let pad = k / 2;
    let plane = h * w;
    let mut gx = Tensor::zeros(n, in_ch, h, w);
    for s in 0..n {
        for i in 0..in_ch {
            let out = &mut gx.data[(s * in_ch + i) * plane..(s * in_ch + i + 1) * plane];
            for o in 0..cout {
                let g = &gy.data[(s * cout + o) * plane..(s * cout + o + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = weight[((o * in_ch + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        // y[r][c] += w * x[r+dy][c+dx]  =>  gx[r'][c'] += w * gy[r'-dy][c'-dx]
                        accumulate_shifted(out, g, h, w, pad as isize - ky as isize, pad as isize - kx as isize, wv);
                    }
                }
            }
        }
    }
    gx
}

/// Gradient of `conv2d` with respect to its weights, summed over the batch.
pub fn conv2d_backward_weight(x: &Tensor, gy: &Tensor, k: usize, grad: &mut [f64]) {
    let (n, cin, h, w) = x.shape();
    let cout = gy.c;
    let pad = k / 2;
    let plane = h * w;
    for o in 0..cout {
        for i in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    let dy = ky as isize - pad as isize;
                    let dx = kx as isize - pad as isize;
                    let mut acc = 0.0;
                    for s in 0..n {
                        let g = &gy.data[(s * cout + o) * plane..(s * cout + o + 1) * plane];
                        let inp = &x.data[(s * cin + i) * plane..(s * cin + i + 1) * plane];
                        acc += shifted_dot(g, inp, h, w, dy, dx);
                    }
                    grad[((o * cin + i) * k + ky) * k + kx] += acc;
                }
            }
        }
    }
}

#[inline]
fn shifted_dot(g: &[f64], inp: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let r0 = (-dy).max(0) as usize;
    let r1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let c0 = (-dx).max(0) as usize;
    let c1 = (w as isize - dx).min(w as isize).max(0) as usize;
    let mut acc = 0.0;
    for r in r0..r1 {
        let sr = (r as isize + dy) as usize;
        let start = (sr as isize * w as isize + c0 as isize + dx) as usize;
        let grow = &g[r * w + c0..r * w + c1];
        let irow = &inp[start..start + (c1 - c0)];
        for (a, b) in grow.iter().zip(irow) {
            acc += a * b;
        }
    }
    acc
}

/// Output of a convolution whose weights are the unit vector at `flat`:
/// channel `o` receives the shifted input channel `i`, all others are zero.
pub fn conv2d_unit_weight(x: &Tensor, flat: usize, k: usize, out_ch: usize) -> Tensor {
    let (n, cin, h, w) = x.shape();
    let pad = k / 2;
    let kx = flat % k;
    let ky = (flat / k) % k;
    let i = (flat / (k * k)) % cin;
    let o = flat / (k * k * cin);
    let plane = h * w;
    let mut y = Tensor::zeros(n, out_ch, h, w);
    for s in 0..n {
        let out = &mut y.data[(s * out_ch + o) * plane..(s * out_ch + o + 1) * plane];
        let inp = &x.data[(s * cin + i) * plane..(s * cin + i + 1) * plane];
        accumulate_shifted(
            out,
            inp,
            h,
            w,
            ky as isize - pad as isize,
            kx as isize - pad as isize,
            1.0,
        );
    }
    y
}

/// 3x3 average pooling, stride 1, padding 1, padded cells excluded from the count.
pub fn avg_pool3x3(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.shape();
    let plane = h * w;
    let mut y = Tensor::zeros(n, c, h, w);
    for p in 0..n * c {
        let inp = &x.data[p * plane..(p + 1) * plane];
        let out = &mut y.data[p * plane..(p + 1) * plane];
        for r in 0..h {
            let ra = r.saturating_sub(1);
            let rb = (r + 1).min(h - 1);
            for col in 0..w {
                let ca = col.saturating_sub(1);
                let cb = (col + 1).min(w - 1);
                let mut acc = 0.0;
                for rr in ra..=rb {
                    for cc in ca..=cb {
                        acc += inp[rr * w + cc];
                    }
                }
                out[r * w + col] = acc / ((rb - ra + 1) * (cb - ca + 1)) as f64;
            }
        }
    }
    y
}

/// Adjoint of `avg_pool3x3`.
pub fn avg_pool3x3_backward(gy: &Tensor) -> Tensor {
    let (n, c, h, w) = gy.shape();
    let plane = h * w;
    let mut gx = Tensor::zeros(n, c, h, w);
    for p in 0..n * c {
        let g = &gy.data[p * plane..(p + 1) * plane];
        let out = &mut gx.data[p * plane..(p + 1) * plane];
        for r in 0..h {
            let ra = r.saturating_sub(1);
            let rb = (r + 1).min(h - 1);
            for col in 0..w {
                let ca = col.saturating_sub(1);
                let cb = (col + 1).min(w - 1);
                let share = g[r * w + col] / ((rb - ra + 1) * (cb - ca + 1)) as f64;
                for rr in ra..=rb {
                    for cc in ca..=cb {
                        out[rr * w + cc] += share;
                    }
                }
            }
        }
    }
    gx
}

pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.shape();
    let plane = h * w;
    let mut y = Tensor::zeros(n, c, 1, 1);
    for p in 0..n * c {
        let s: f64 = x.data[p * plane..(p + 1) * plane].iter().sum();
        y.data[p] = s / plane as f64;
    }
    y
}

pub fn global_avg_pool_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c, _, _) = gy.shape();
    let plane = h * w;
    let mut gx = Tensor::zeros(n, c, h, w);
    for p in 0..n * c {
        let share = gy.data[p] / plane as f64;
        gx.data[p * plane..(p + 1) * plane].fill(share);
    }
    gx
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Multiplies `g` by the ReLU derivative evaluated at the pre-activation `x`.
pub fn relu_mask(g: &Tensor, x: &Tensor) -> Tensor {
    let mut out = g.clone();
    for (o, &xv) in out.data.iter_mut().zip(&x.data) {
        if xv <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

/// Dense layer on flattened samples. Weight layout `[out][in]`.
pub fn linear(x: &Tensor, weight: &[f64], bias: Option<&[f64]>, out_features: usize) -> Tensor {
    let n = x.n;
    let inf = x.sample_len();
    let mut y = Tensor::zeros(n, out_features, 1, 1);
    for s in 0..n {
        let xs = x.sample(s);
        for o in 0..out_features {
            let row = &weight[o * inf..(o + 1) * inf];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xs) {
                acc += a * b;
            }
            if let Some(b) = bias {
                acc += b[o];
            }
            y.data[s * out_features + o] = acc;
        }
    }
    y
}

pub fn linear_backward_input(gy: &Tensor, weight: &[f64], in_shape: (usize, usize, usize)) -> Tensor {
    let (c, h, w) = in_shape;
    let inf = c * h * w;
    let n = gy.n;
    let outf = gy.c;
    let mut gx = Tensor::zeros(n, c, h, w);
    for s in 0..n {
        let dst = &mut gx.data[s * inf..(s + 1) * inf];
        for o in 0..outf {
            let g = gy.data[s * outf + o];
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dst.iter_mut().zip(&weight[o * inf..(o + 1) * inf]) {
                *d += g * wv;
            }
        }
    }
    gx
}
