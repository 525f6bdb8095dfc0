//! Layers, forward pass and exact backpropagation for a small CHW convnet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageTensor, VisionError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(c: usize, h: usize, w: usize) -> Shape {
        Shape { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Activation tensor in channel-major (C, H, W) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Tensor {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    pub fn flip_horizontal(&self) -> Tensor {
        let Shape { c, h, w } = self.shape;
        let mut out = Tensor::zeros(self.shape);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.data[(ch * h + y) * w + x] = self.at(ch, y, w - 1 - x);
                }
            }
        }
        out
    }
}

impl From<&ImageTensor> for Tensor {
    fn from(img: &ImageTensor) -> Tensor {
        Tensor {
            shape: Shape::new(img.channels(), img.height(), img.width()),
            data: img.data().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Dense {
        out: usize,
    },
}

impl LayerSpec {
    pub fn output_shape(&self, input: Shape) -> Result<Shape, VisionError> {
        let bad = |m: String| Err(VisionError::Config(m));
        match *self {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad("conv needs positive channels, kernel and stride".into());
                }
                if input.h + 2 * padding < kernel || input.w + 2 * padding < kernel {
                    return bad(format!("conv kernel {kernel} larger than padded input {input:?}"));
                }
                Ok(Shape::new(
                    out_channels,
                    (input.h + 2 * padding - kernel) / stride + 1,
                    (input.w + 2 * padding - kernel) / stride + 1,
                ))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return bad("max-pool needs positive kernel and stride".into());
                }
                if input.h < kernel || input.w < kernel {
                    return bad(format!("max-pool kernel {kernel} larger than input {input:?}"));
                }
                Ok(Shape::new(input.c, (input.h - kernel) / stride + 1, (input.w - kernel) / stride + 1))
            }
            LayerSpec::GlobalAvgPool => Ok(Shape::new(input.c, 1, 1)),
            LayerSpec::Dense { out } => {
                if out == 0 {
                    return bad("dense needs a positive output size".into());
                }
                Ok(Shape::new(out, 1, 1))
            }
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. })
    }
}

/// Layer with its parameters. Conv weights are laid out (out, in, ky, kx);
/// dense weights (out, in) over the flattened input.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of one layer's parameters (empty for parameter-free layers).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn add(&mut self, other: &LayerGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl Layer {
    fn new(spec: LayerSpec, input: Shape, rng: &mut ChaCha8Rng) -> Result<Layer, VisionError> {
        let output = spec.output_shape(input)?;
        let (fan_in, n_weight, n_bias) = match spec {
            LayerSpec::Conv { out_channels, kernel, .. } => {
                let fan = input.c * kernel * kernel;
                (fan, out_channels * fan, out_channels)
            }
            LayerSpec::Dense { out } => (input.len(), out * input.len(), out),
            _ => (1, 0, 0),
        };
        // He initialization, biases at zero
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weight = (0..n_weight).map(|_| normal.sample(rng)).collect();
        Ok(Layer {
            spec,
            input,
            output,
            weight,
            bias: vec![0.0; n_bias],
        })
    }

    pub fn has_params(&self) -> bool {
        !self.weight.is_empty()
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = Tensor::zeros(self.output);
        let (ins, outs) = (self.input, self.output);
        match self.spec {
            LayerSpec::Conv { kernel: k, stride: s, padding: p, .. } => {
                for o in 0..outs.c {
                    let plane = &mut y.data[o * outs.h * outs.w..(o + 1) * outs.h * outs.w];
                    plane.fill(self.bias[o]);
                    for i in 0..ins.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wv = self.weight[((o * ins.c + i) * k + ky) * k + kx];
                                for oy in 0..outs.h {
                                    let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < ins.h) else {
                                        continue;
                                    };
                                    for ox in 0..outs.w {
                                        let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < ins.w)
                                        else {
                                            continue;
                                        };
                                        plane[oy * outs.w + ox] += wv * x.at(i, iy, ix);
                                    }
                                }
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for (o, &v) in y.data.iter_mut().zip(&x.data) {
                    *o = v.max(0.0);
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                for c in 0..outs.c {
                    for oy in 0..outs.h {
                        for ox in 0..outs.w {
                            let (iy, ix) = self.argmax(x, c, oy, ox, kernel, stride);
                            y.data[(c * outs.h + oy) * outs.w + ox] = x.at(c, iy, ix);
                        }
                    }
                }
            }
            LayerSpec::GlobalAvgPool => {
                let area = (ins.h * ins.w) as f64;
                for c in 0..ins.c {
                    let plane = &x.data[c * ins.h * ins.w..(c + 1) * ins.h * ins.w];
                    y.data[c] = plane.iter().sum::<f64>() / area;
                }
            }
            LayerSpec::Dense { out } => {
                let n = ins.len();
                for o in 0..out {
                    let row = &self.weight[o * n..(o + 1) * n];
                    y.data[o] = self.bias[o] + row.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        y
    }

    /// First maximum of a pooling window in row-major scan order.
    fn argmax(&self, x: &Tensor, c: usize, oy: usize, ox: usize, kernel: usize, stride: usize) -> (usize, usize) {
        let mut best = (oy * stride, ox * stride);
        let mut best_v = f64::NEG_INFINITY;
        for ky in 0..kernel {
            for kx in 0..kernel {
                let (iy, ix) = (oy * stride + ky, ox * stride + kx);
                let v = x.at(c, iy, ix);
                if v > best_v {
                    best_v = v;
                    best = (iy, ix);
                }
            }
        }
        best
    }

    /// Gradient w.r.t. the layer input given `dy`; parameter gradients are
    /// accumulated into `grad`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut LayerGrad) -> Tensor {
        let mut dx = Tensor::zeros(self.input);
        let (ins, outs) = (self.input, self.output);
        match self.spec {
            LayerSpec::Conv { kernel: k, stride: s, padding: p, .. } => {
                for o in 0..outs.c {
                    let dplane = &dy.data[o * outs.h * outs.w..(o + 1) * outs.h * outs.w];
                    grad.bias[o] += dplane.iter().sum::<f64>();
                    for i in 0..ins.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let wi = ((o * ins.c + i) * k + ky) * k + kx;
                                let wv = self.weight[wi];
                                let mut gw = 0.0;
                                for oy in 0..outs.h {
                                    let Some(iy) = (oy * s + ky).checked_sub(p).filter(|&v| v < ins.h) else {
                                        continue;
                                    };
                                    for ox in 0..outs.w {
                                        let Some(ix) = (ox * s + kx).checked_sub(p).filter(|&v| v < ins.w)
                                        else {
                                            continue;
                                        };
                                        let d = dplane[oy * outs.w + ox];
                                        let xi = (i * ins.h + iy) * ins.w + ix;
                                        gw += d * x.data[xi];
                                        dx.data[xi] += wv * d;
                                    }
                                }
                                grad.weight[wi] += gw;
                            }
                        }
                    }
                }
            }
            LayerSpec::Relu => {
                for ((g, &v), &d) in dx.data.iter_mut().zip(&x.data).zip(&dy.data) {
                    if v > 0.0 {
                        *g = d;
                    }
                }
            }
            LayerSpec::MaxPool { kernel, stride } => {
                for c in 0..outs.c {
                    for oy in 0..outs.h {
                        for ox in 0..outs.w {
                            let (iy, ix) = self.argmax(x, c, oy, ox, kernel, stride);
                            let xi = dx.idx(c, iy, ix);
                            dx.data[xi] += dy.data[(c * outs.h + oy) * outs.w + ox];
                        }
                    }
                }
            }
            LayerSpec::GlobalAvgPool => {
                let area = (ins.h * ins.w) as f64;
                for c in 0..ins.c {
                    let g = dy.data[c] / area;
                    dx.data[c * ins.h * ins.w..(c + 1) * ins.h * ins.w].fill(g);
                }
            }
            LayerSpec::Dense { out } => {
                let n = ins.len();
                for o in 0..out {
                    let d = dy.data[o];
                    grad.bias[o] += d;
                    let row = &self.weight[o * n..(o + 1) * n];
                    let grow = &mut grad.weight[o * n..(o + 1) * n];
                    for j in 0..n {
                        grow[j] += d * x.data[j];
                        dx.data[j] += row[j] * d;
                    }
                }
            }
        }
        dx
    }

    /// Piecewise-linear branch pattern of this layer on input `x`: ReLU
    /// signs or pooling argmax positions. Used to detect kinks.
    pub(crate) fn branch_pattern(&self, x: &Tensor) -> Vec<usize> {
        match self.spec {
            LayerSpec::Relu => x.data.iter().map(|&v| usize::from(v > 0.0)).collect(),
            LayerSpec::MaxPool { kernel, stride } => {
                let o = self.output;
                let mut out = Vec::with_capacity(o.len());
                for c in 0..o.c {
                    for oy in 0..o.h {
                        for ox in 0..o.w {
                            let (iy, ix) = self.argmax(x, c, oy, ox, kernel, stride);
                            out.push(iy * self.input.w + ix);
                        }
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }
}

/// Trained or freshly initialized network with a scalar logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub input: Shape,
    pub layers: Vec<Layer>,
    pub frozen_prefix: usize,
}

/// Result of a full backward pass from the logit.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Vec<LayerGrad>,
    /// `acts[i]` gradient, where `acts[0]` is the input and `acts[i + 1]`
    /// the output of layer i.
    pub acts: Vec<Tensor>,
}

impl CnnModel {
    /// Checks that specs compose from `input` and end in a scalar dense
    /// layer, then draws seeded He-initialized weights.
    pub fn init(input: Shape, specs: &[LayerSpec], frozen_prefix: usize, seed: u64) -> Result<CnnModel, VisionError> {
        if input.is_empty() {
            return Err(VisionError::Config("input shape must be positive".into()));
        }
        match specs.last() {
            Some(LayerSpec::Dense { out: 1 }) => {}
            _ => return Err(VisionError::Config("last layer must be dense with one output".into())),
        }
        if frozen_prefix >= specs.len() {
            return Err(VisionError::Config(format!(
                "frozen prefix {frozen_prefix} would freeze the output layer of {}",
                specs.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::new(*spec, shape, &mut rng)
                .map_err(|e| VisionError::Config(format!("layer {i}: {e}")))?;
            shape = layer.output;
            layers.push(layer);
        }
        Ok(CnnModel { input, layers, frozen_prefix })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn check_input(&self, x: &Tensor) -> Result<(), VisionError> {
        if x.shape != self.input {
            return Err(VisionError::Shape(format!(
                "image is {:?}, model expects {:?}",
                x.shape, self.input
            )));
        }
        Ok(())
    }

    /// All activations: input first, logit tensor last.
    pub fn forward(&self, x: &Tensor) -> Vec<Tensor> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        acts
    }

    pub fn logit(&self, x: &Tensor) -> f64 {
        self.forward(x).last().expect("non-empty").data[0]
    }

    /// Backpropagates `dlogit` through the recorded activations.
    pub fn backward(&self, acts: &[Tensor], dlogit: f64) -> Backward {
        let mut params: Vec<LayerGrad> = self.layers.iter().map(Layer::zero_grad).collect();
        let mut grads = vec![Tensor::zeros(Shape::new(1, 1, 1)); self.layers.len() + 1];
        grads[self.layers.len()].data[0] = dlogit;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grads[i] = layer.backward(&acts[i], &grads[i + 1], &mut params[i]);
        }
        Backward { params, acts: grads }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// FNV-1a over the bit patterns of the parameters of layers `[0, upto)`.
    pub fn param_checksum(&self, upto: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers[..upto.min(self.layers.len())] {
            for v in l.weight.iter().chain(&l.bias) {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}
