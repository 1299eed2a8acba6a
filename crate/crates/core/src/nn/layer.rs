use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gemm::gemm;
use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He,
    Normal(f64),
    Zeros,
}

impl Init {
    fn sample(self, n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
        let std = match self {
            Init::Zeros => return vec![0.0; n],
            Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
            Init::Normal(s) => s,
        };
        let dist = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| dist.sample(rng)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    /// `y = x W^T + b` with `W` stored `outputs x inputs` row-major.
    Dense {
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// NCHW convolution, weight stored `out x (in * k * k)`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    /// Nearest-neighbour 2x upsampling.
    Upsample2x,
    MaxPool2x,
    GlobalAvgPool,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    /// Reinterprets each row with the given per-sample dims.
    Reshape {
        dims: Vec<usize>,
    },
    Flatten,
}

impl Layer {
    pub fn dense(inputs: usize, outputs: usize, init: Init, rng: &mut impl Rng) -> Self {
        Layer::Dense {
            inputs,
            outputs,
            weight: init.sample(inputs * outputs, inputs, rng),
            bias: vec![0.0; outputs],
        }
    }

    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Layer::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: init.sample(out_channels * fan_in, fan_in, rng),
            bias: vec![0.0; out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }

    fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Layer::Dense { weight, bias, .. } | Layer::Conv2d { weight, bias, .. } => {
                Some((weight, bias))
            }
            _ => None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                let (n, i, o) = (x.batch(), *inputs, *outputs);
                assert_eq!(x.row_len(), i, "dense layer expects {i} inputs, got {:?}", x.shape());
                let mut y = Vec::with_capacity(n * o);
                for _ in 0..n {
                    y.extend_from_slice(bias);
                }
                gemm(n, i, o, x.data(), (i as isize, 1), weight, (1, i as isize), 1.0, &mut y, (o as isize, 1));
                Tensor::new(vec![n, o], y)
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                bias,
            } => {
                let g = ConvGeom::new(x.shape(), *in_channels, *kernel, *stride, *padding);
                let (n, o) = (x.batch(), *out_channels);
                let p = g.oh * g.ow;
                let ckk = g.c * g.k * g.k;
                let mut y = vec![0.0; n * o * p];
                let mut col = vec![0.0; ckk * p];
                for s in 0..n {
                    g.im2col(x.row(s), &mut col);
                    let out = &mut y[s * o * p..(s + 1) * o * p];
                    for (oc, chunk) in out.chunks_mut(p).enumerate() {
                        chunk.fill(bias[oc]);
                    }
                    gemm(o, ckk, p, weight, (ckk as isize, 1), &col, (p as isize, 1), 1.0, out, (p as isize, 1));
                }
                Tensor::new(vec![n, o, g.oh, g.ow], y)
            }
            Layer::Upsample2x => {
                let (n, c, h, w) = nchw(x);
                let mut y = vec![0.0; n * c * h * w * 4];
                for plane in 0..n * c {
                    let src = &x.data()[plane * h * w..(plane + 1) * h * w];
                    let dst = &mut y[plane * h * w * 4..(plane + 1) * h * w * 4];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[yy * 2 * w + xx] = src[(yy / 2) * w + xx / 2];
                        }
                    }
                }
                Tensor::new(vec![n, c, 2 * h, 2 * w], y)
            }
            Layer::MaxPool2x => {
                let (n, c, h, w) = nchw(x);
                let (oh, ow) = (h / 2, w / 2);
                let mut y = vec![0.0; n * c * oh * ow];
                for plane in 0..n * c {
                    let src = &x.data()[plane * h * w..(plane + 1) * h * w];
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let (_, m) = pool_argmax(src, w, yy, xx);
                            y[plane * oh * ow + yy * ow + xx] = m;
                        }
                    }
                }
                Tensor::new(vec![n, c, oh, ow], y)
            }
            Layer::GlobalAvgPool => {
                let (n, c, h, w) = nchw(x);
                let hw = (h * w) as f64;
                let y = x.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
                Tensor::new(vec![n, c], y)
            }
            Layer::Relu => map(x, |v| v.max(0.0)),
            Layer::LeakyRelu { slope } => map(x, |v| if v > 0.0 { v } else { slope * v }),
            Layer::Sigmoid => map(x, sigmoid),
            Layer::Reshape { dims } => {
                let mut shape = vec![x.batch()];
                shape.extend_from_slice(dims);
                x.clone().reshape(shape)
            }
            Layer::Flatten => {
                let shape = vec![x.batch(), x.row_len()];
                x.clone().reshape(shape)
            }
        }
    }

    /// Returns the gradient with respect to the layer input. Parameter
    /// gradients are accumulated into `param_grad` when provided.
    fn backward(&self, input: &Tensor, output: &Tensor, grad: &Tensor, param_grad: Option<&mut [f64]>) -> Tensor {
        match self {
            Layer::Dense {
                inputs,
                outputs,
                weight,
                ..
            } => {
                let (n, i, o) = (input.batch(), *inputs, *outputs);
                if let Some(pg) = param_grad {
                    let (dw, db) = pg.split_at_mut(i * o);
                    gemm(o, n, i, grad.data(), (1, o as isize), input.data(), (i as isize, 1), 1.0, dw, (i as isize, 1));
                    for row in grad.data().chunks(o) {
                        for (b, g) in db.iter_mut().zip(row) {
                            *b += g;
                        }
                    }
                }
                let mut dx = vec![0.0; n * i];
                gemm(n, o, i, grad.data(), (o as isize, 1), weight, (i as isize, 1), 0.0, &mut dx, (i as isize, 1));
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                weight,
                ..
            } => {
                let g = ConvGeom::new(input.shape(), *in_channels, *kernel, *stride, *padding);
                let (n, o) = (input.batch(), *out_channels);
                let p = g.oh * g.ow;
                let ckk = g.c * g.k * g.k;
                let mut col = vec![0.0; ckk * p];
                let mut dcol = vec![0.0; ckk * p];
                let mut dx = vec![0.0; input.data().len()];
                let row_in = g.c * g.h * g.w;
                let mut pg = param_grad;
                for s in 0..n {
                    let gy = &grad.data()[s * o * p..(s + 1) * o * p];
                    if let Some(pg) = pg.as_deref_mut() {
                        g.im2col(input.row(s), &mut col);
                        let (dw, db) = pg.split_at_mut(o * ckk);
                        gemm(o, p, ckk, gy, (p as isize, 1), &col, (1, p as isize), 1.0, dw, (ckk as isize, 1));
                        for (oc, chunk) in gy.chunks(p).enumerate() {
                            db[oc] += chunk.iter().sum::<f64>();
                        }
                    }
                    gemm(ckk, o, p, weight, (1, ckk as isize), gy, (p as isize, 1), 0.0, &mut dcol, (p as isize, 1));
                    g.col2im(&dcol, &mut dx[s * row_in..(s + 1) * row_in]);
                }
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Upsample2x => {
                let (n, c, h, w) = nchw(input);
                let mut dx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &grad.data()[plane * h * w * 4..(plane + 1) * h * w * 4];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for yy in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::MaxPool2x => {
                let (n, c, h, w) = nchw(input);
                let (oh, ow) = (h / 2, w / 2);
                let mut dx = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &input.data()[plane * h * w..(plane + 1) * h * w];
                    for yy in 0..oh {
                        for xx in 0..ow {
                            let (idx, _) = pool_argmax(src, w, yy, xx);
                            dx[plane * h * w + idx] += grad.data()[plane * oh * ow + yy * ow + xx];
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::GlobalAvgPool => {
                let (_, _, h, w) = nchw(input);
                let hw = h * w;
                let mut dx = Vec::with_capacity(input.data().len());
                for &g in grad.data() {
                    dx.extend(std::iter::repeat_n(g / hw as f64, hw));
                }
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Relu => zip_map(input, grad, |x, g| if x > 0.0 { g } else { 0.0 }),
            Layer::LeakyRelu { slope } => zip_map(input, grad, |x, g| if x > 0.0 { g } else { slope * g }),
            Layer::Sigmoid => zip_map(output, grad, |y, g| g * y * (1.0 - y)),
            Layer::Reshape { .. } | Layer::Flatten => grad.clone().reshape(input.shape().to_vec()),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn zip_map(a: &Tensor, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect(),
    )
}

fn nchw(x: &Tensor) -> (usize, usize, usize, usize) {
    match *x.shape() {
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("expected an NCHW tensor, got shape {s:?}"),
    }
}

fn pool_argmax(plane: &[f64], w: usize, yy: usize, xx: usize) -> (usize, f64) {
    let mut best = (2 * yy * w + 2 * xx, f64::NEG_INFINITY);
    for dy in 0..2 {
        for dx in 0..2 {
            let idx = (2 * yy + dy) * w + 2 * xx + dx;
            if plane[idx] > best.1 {
                best = (idx, plane[idx]);
            }
        }
    }
    best
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(shape: &[usize], in_channels: usize, k: usize, stride: usize, pad: usize) -> Self {
        let (c, h, w) = match *shape {
            [_, c, h, w] => (c, h, w),
            ref s => panic!("conv expects NCHW input, got {s:?}"),
        };
        assert_eq!(c, in_channels, "conv expects {in_channels} channels, got {c}");
        assert!(h + 2 * pad >= k && w + 2 * pad >= k, "conv kernel larger than padded input");
        ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (w + 2 * pad - k) / stride + 1,
        }
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let p = self.oh * self.ow;
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ch * self.k + ky) * self.k + kx;
                    let dst = &mut col[r * p..(r + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.ow + ox] = if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
                                0.0
                            } else {
                                x[(ch * self.h + iy as usize) * self.w + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let p = self.oh * self.ow;
        for ch in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ch * self.k + ky) * self.k + kx;
                    let src = &col[r * p..(r + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            dx[(ch * self.h + iy as usize) * self.w + ix as usize] += src[oy * self.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Per-layer parameter gradients laid out as `[weight..., bias...]`;
/// parameter-free layers hold an empty vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(net: &Sequential) -> Self {
        Grads(net.layers.iter().map(|l| vec![0.0; l.param_count()]).collect())
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

/// Activations recorded by [`Sequential::forward_tape`]: the input followed by
/// every layer output.
#[derive(Clone, Debug)]
pub struct Tape(Vec<Tensor>);

impl Tape {
    pub fn output(&self) -> &Tensor {
        self.0.last().expect("tape holds at least the input")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }

    pub fn forward_tape(&self, x: &Tensor) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap());
            acts.push(next);
        }
        Tape(acts)
    }

    /// Back-propagates `grad_out` through the recorded tape. Returns the input
    /// gradient and, when `with_params` is set, the parameter gradients.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor, with_params: bool) -> (Tensor, Option<Grads>) {
        let mut grads = with_params.then(|| Grads::zeros_like(self));
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pg = grads.as_mut().map(|gr| gr.0[i].as_mut_slice());
            let pg = pg.filter(|s| !s.is_empty());
            g = layer.backward(&tape.0[i], &tape.0[i + 1], &g, pg);
        }
        (g, grads)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.layers.iter().filter_map(Layer::params) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length mismatch");
        let mut off = 0;
        for (w, b) in self.layers.iter_mut().filter_map(Layer::params_mut) {
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
    }

    /// Applies `f(param, grad)` layer by layer.
    pub(crate) fn update_with(&mut self, grads: &Grads, mut f: impl FnMut(usize, usize, &mut f64, f64)) {
        for (li, (layer, g)) in self.layers.iter_mut().zip(&grads.0).enumerate() {
            if let Some((w, b)) = layer.params_mut() {
                for (j, p) in w.iter_mut().chain(b.iter_mut()).enumerate() {
                    f(li, j, p, g[j]);
                }
            }
        }
    }

    /// SHA-256 of all parameter bits.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.params_flat() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::{central_difference, relative_error};
    use super::*;
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(17)
    }

    fn random_tensor(shape: Vec<usize>, r: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random::<f64>() - 0.5).collect())
    }

    /// Loss = sum(w_i * y_i) with fixed random weights, so dL/dy = w.
    fn check_net(net: &Sequential, x: &Tensor, r: &mut impl Rng) {
        let y = net.forward(x);
        let probe = random_tensor(y.shape().to_vec(), r);
        let loss = |n: &Sequential, x: &Tensor| -> f64 {
            n.forward(x).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let tape = net.forward_tape(x);
        let (dx, grads) = net.backward(&tape, &probe, true);
        let analytic = grads.unwrap().flat();

        let mut params = net.params_flat();
        let mut probe_net = net.clone();
        for i in 0..params.len() {
            let numeric = central_difference(&mut params, i, 1e-6, |p| {
                probe_net.set_params_flat(p);
                loss(&probe_net, x)
            });
            let err = relative_error(analytic[i], numeric);
            assert!(err < 1e-4, "param {i}: analytic {} numeric {numeric}", analytic[i]);
        }
        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            let numeric = central_difference(&mut xs, i, 1e-6, |v| {
                loss(net, &Tensor::new(x.shape().to_vec(), v.to_vec()))
            });
            assert!(relative_error(dx.data()[i], numeric) < 1e-4, "input {i}");
        }
    }

    #[test]
    fn dense_gradients() {
        let mut r = rng();
        let net = Sequential::new(vec![
            Layer::dense(5, 4, Init::He, &mut r),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::dense(4, 3, Init::He, &mut r),
            Layer::Sigmoid,
        ]);
        check_net(&net, &random_tensor(vec![3, 5], &mut r), &mut r);
    }

    #[test]
    fn conv_stack_gradients() {
        let mut r = rng();
        let net = Sequential::new(vec![
            Layer::conv(2, 3, 3, 1, 1, Init::He, &mut r),
            Layer::Relu,
            Layer::MaxPool2x,
            Layer::conv(3, 4, 4, 2, 1, Init::He, &mut r),
            Layer::LeakyRelu { slope: 0.1 },
            Layer::Upsample2x,
            Layer::GlobalAvgPool,
            Layer::dense(4, 2, Init::He, &mut r),
        ]);
        check_net(&net, &random_tensor(vec![2, 2, 8, 8], &mut r), &mut r);
    }

    #[test]
    fn reshape_flatten_gradients() {
        let mut r = rng();
        let net = Sequential::new(vec![
            Layer::dense(3, 8, Init::He, &mut r),
            Layer::Reshape { dims: vec![2, 2, 2] },
            Layer::Upsample2x,
            Layer::conv(2, 1, 3, 1, 1, Init::He, &mut r),
            Layer::Flatten,
        ]);
        check_net(&net, &random_tensor(vec![2, 3], &mut r), &mut r);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut r = rng();
        let layer = Layer::conv(2, 2, 3, 2, 1, Init::He, &mut r);
        let x = random_tensor(vec![1, 2, 5, 5], &mut r);
        let y = layer.forward(&x);
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
        let Layer::Conv2d { weight, bias, .. } = &layer else { unreachable!() };
        for oc in 0..2 {
            for oy in 0..3 {
                for ox in 0..3 {
                    let mut acc = bias[oc];
                    for ic in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..5).contains(&ix) {
                                    acc += weight[((oc * 2 + ic) * 3 + ky) * 3 + kx]
                                        * x.data()[(ic * 5 + iy as usize) * 5 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = y.data()[(oc * 3 + oy) * 3 + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn params_round_trip_and_checksum() {
        let mut r = rng();
        let mut net = Sequential::new(vec![Layer::dense(3, 2, Init::He, &mut r)]);
        let before = net.checksum();
        let p = net.params_flat();
        net.set_params_flat(&p);
        assert_eq!(net.checksum(), before);
        let mut q = p.clone();
        q[0] += 1.0;
        net.set_params_flat(&q);
        assert_ne!(net.checksum(), before);
    }
}
