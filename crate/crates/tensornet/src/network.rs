use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::layers::{self, BatchNorm, BnCache, Conv2d};
use crate::spec::Symbolic;
use crate::{LayerSpec, NetError, NetworkSpec, Result, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers; activations are cached for backward.
    Train,
    /// Running statistics; nothing cached.
    Eval,
}

#[derive(Debug, Clone)]
enum Layer<T> {
    Conv(Conv2d<T>),
    Norm(BatchNorm<T>),
    Relu,
    MaxPool2,
    Upsample2,
    Concat(usize),
    Sigmoid,
}

/// Activations kept by a train-mode forward pass.
#[derive(Debug, Clone)]
struct Cache<T> {
    input: Tensor<T>,
    outputs: Vec<Tensor<T>>,
    bn: Vec<Option<BnCache>>,
}

/// Result of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub output: Tensor<T>,
    cache: Option<Cache<T>>,
}

impl<T> Forward<T> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Parameter gradients in [`Network::params`] order plus the input gradient.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

/// A sequential network with optional skip concatenations.
#[derive(Debug, Clone)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    symbolic: Vec<Symbolic>,
    /// `true` for layers whose output is referenced by a later concat.
    is_skip: Vec<bool>,
}

impl<T: Scalar> Network<T> {
    /// Builds the network and draws He-normal conv weights from `spec.seed`.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let symbolic = spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut is_skip = vec![false; spec.layers.len()];
        let mut in_ch = spec.in_ch;
        for (i, l) in spec.layers.iter().enumerate() {
            let layer = match *l {
                LayerSpec::Conv2d {
                    out_ch,
                    k,
                    pad,
                    bias,
                } => {
                    let fan_in = (in_ch * k * k) as f64;
                    let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                    let weight = (0..out_ch * in_ch * k * k)
                        .map(|_| T::from_f64(normal.sample(&mut rng)))
                        .collect();
                    Layer::Conv(Conv2d {
                        in_ch,
                        out_ch,
                        k,
                        pad,
                        weight,
                        bias: bias.then(|| vec![T::zero(); out_ch]),
                    })
                }
                LayerSpec::BatchNorm { ch } => Layer::Norm(BatchNorm::new(ch)),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool2 => Layer::MaxPool2,
                LayerSpec::UpsampleNearest2 => Layer::Upsample2,
                LayerSpec::Concat { skip } => {
                    is_skip[skip] = true;
                    Layer::Concat(skip)
                }
                LayerSpec::Sigmoid => Layer::Sigmoid,
            };
            layers.push(layer);
            in_ch = symbolic[i].channels;
        }
        Ok(Self {
            spec,
            layers,
            symbolic,
            is_skip,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn in_channels(&self) -> usize {
        self.spec.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.symbolic.last().map_or(self.spec.in_ch, |s| s.channels)
    }

    /// Converts every parameter and running statistic to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d {
                    in_ch: c.in_ch,
                    out_ch: c.out_ch,
                    k: c.k,
                    pad: c.pad,
                    weight: conv(&c.weight),
                    bias: c.bias.as_ref().map(conv),
                }),
                Layer::Norm(b) => Layer::Norm(BatchNorm {
                    ch: b.ch,
                    gamma: conv(&b.gamma),
                    beta: conv(&b.beta),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2 => Layer::MaxPool2,
                Layer::Upsample2 => Layer::Upsample2,
                Layer::Concat(s) => Layer::Concat(*s),
                Layer::Sigmoid => Layer::Sigmoid,
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            layers,
            symbolic: self.symbolic.clone(),
            is_skip: self.is_skip.clone(),
        }
    }

    /// Trainable parameters: conv weight, conv bias, BN gamma, BN beta, in layer order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&c.weight);
                    if let Some(b) = &c.bias {
                        out.push(b);
                    }
                }
                Layer::Norm(b) => {
                    out.push(&b.gamma);
                    out.push(&b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(c) => {
                    out.push(&mut c.weight);
                    if let Some(b) = &mut c.bias {
                        out.push(b);
                    }
                }
                Layer::Norm(b) => {
                    out.push(&mut b.gamma);
                    out.push(&mut b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Parameters followed by BN running mean/variance, flattened in layer order.
    pub fn export_state(&self) -> Vec<T> {
        let mut out: Vec<T> = self.params().iter().flat_map(|p| p.iter().copied()).collect();
        for l in &self.layers {
            if let Layer::Norm(b) = l {
                out.extend_from_slice(&b.running_mean);
                out.extend_from_slice(&b.running_var);
            }
        }
        out
    }

    pub fn state_len(&self) -> usize {
        let buffers: usize = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Norm(b) => 2 * b.ch,
                _ => 0,
            })
            .sum();
        self.param_count() + buffers
    }

    /// Inverse of [`export_state`](Self::export_state).
    pub fn import_state(&mut self, state: &[T]) -> Result<()> {
        if state.len() != self.state_len() {
            return Err(NetError::Shape(format!(
                "state vector has {} values, network expects {}",
                state.len(),
                self.state_len()
            )));
        }
        let mut pos = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.copy_from_slice(&state[pos..pos + n]);
            pos += n;
        }
        for l in &mut self.layers {
            if let Layer::Norm(b) = l {
                b.running_mean.copy_from_slice(&state[pos..pos + b.ch]);
                pos += b.ch;
                b.running_var.copy_from_slice(&state[pos..pos + b.ch]);
                pos += b.ch;
            }
        }
        Ok(())
    }

    fn structural(&self, layer: usize, reason: String) -> NetError {
        NetError::Structural {
            layer,
            op: self.spec.layers[layer].name(),
            reason,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.c != self.spec.in_ch {
            return Err(NetError::Structural {
                layer: 0,
                op: "input",
                reason: format!("expected {} input channels, got {}", self.spec.in_ch, s.c),
            });
        }
        Ok(())
    }

    /// Validates a layer against its actual input shape.
    fn check_layer(&self, i: usize, s: Shape, outputs_shape: impl Fn(usize) -> Shape) -> Result<()> {
        match &self.layers[i] {
            Layer::Conv(c) => {
                if s.c != c.in_ch {
                    return Err(self.structural(i, format!("expected {} channels, got {}", c.in_ch, s.c)));
                }
                if c.out_dims(s.h, s.w).is_none() {
                    return Err(self.structural(
                        i,
                        format!("input {}x{} smaller than kernel {}", s.h, s.w, c.k),
                    ));
                }
            }
            Layer::Norm(b) => {
                if s.c != b.ch {
                    return Err(self.structural(i, format!("expected {} channels, got {}", b.ch, s.c)));
                }
            }
            Layer::MaxPool2 => {
                if s.h % 2 != 0 || s.w % 2 != 0 {
                    return Err(self.structural(
                        i,
                        format!("spatial size {}x{} not divisible by 2", s.h, s.w),
                    ));
                }
            }
            Layer::Concat(skip) => {
                let k = outputs_shape(*skip);
                if (k.n, k.h, k.w) != (s.n, s.h, s.w) {
                    return Err(self.structural(i, format!("skip {skip} shape {k} does not match {s}")));
                }
            }
            Layer::Relu | Layer::Upsample2 | Layer::Sigmoid => {}
        }
        Ok(())
    }

    /// Runs the network. Train mode updates BN running statistics and
    /// returns the activation cache needed by [`backward`](Self::backward).
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        match mode {
            Mode::Eval => Ok(Forward {
                output: self.infer(x)?,
                cache: None,
            }),
            Mode::Train => self.forward_train(x),
        }
    }

    /// Eval-mode forward that keeps only skip activations alive.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut skips: Vec<Option<Tensor<T>>> = vec![None; self.layers.len()];
        let mut cur: Option<Tensor<T>> = None;
        for i in 0..self.layers.len() {
            let input = cur.as_ref().unwrap_or(x);
            self.check_layer(i, input.shape(), |k| {
                skips[k].as_ref().map(|t| t.shape()).unwrap_or(Shape::new(0, 0, 0, 0))
            })?;
            let out = match &self.layers[i] {
                Layer::Conv(c) => c.forward(input),
                Layer::Norm(b) => b.forward_eval(input),
                Layer::Relu => layers::relu(input),
                Layer::MaxPool2 => layers::max_pool2(input),
                Layer::Upsample2 => layers::upsample2(input),
                Layer::Concat(k) => layers::concat(input, skips[*k].as_ref().expect("skip kept")),
                Layer::Sigmoid => layers::sigmoid(input),
            };
            if self.is_skip[i] {
                skips[i] = Some(out.clone());
            }
            cur = Some(out);
        }
        let out = cur.unwrap_or_else(|| x.clone());
        if !out.all_finite() {
            return Err(NetError::NonFinite("forward".into()));
        }
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Result<Forward<T>> {
        self.check_input(x)?;
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        let mut bn = vec![None; self.layers.len()];
        for i in 0..self.layers.len() {
            let input = outputs.last().unwrap_or(x);
            self.check_layer(i, input.shape(), |k| outputs[k].shape())?;
            let out = match &mut self.layers[i] {
                Layer::Conv(c) => c.forward(input),
                Layer::Norm(b) => {
                    let (y, cache) = b.forward_train(input);
                    bn[i] = Some(cache);
                    y
                }
                Layer::Relu => layers::relu(input),
                Layer::MaxPool2 => layers::max_pool2(input),
                Layer::Upsample2 => layers::upsample2(input),
                Layer::Concat(k) => layers::concat(input, &outputs[*k]),
                Layer::Sigmoid => layers::sigmoid(input),
            };
            outputs.push(out);
        }
        let output = outputs.last().cloned().unwrap_or_else(|| x.clone());
        if !output.all_finite() {
            return Err(NetError::NonFinite("forward".into()));
        }
        Ok(Forward {
            output,
            cache: Some(Cache {
                input: x.clone(),
                outputs,
                bn,
            }),
        })
    }

    /// Back-propagates `upstream` (gradient of a scalar loss w.r.t. the output).
    pub fn backward(&self, pass: &Forward<T>, upstream: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = pass
            .cache
            .as_ref()
            .ok_or_else(|| NetError::Usage("backward requires a train-mode forward pass".into()))?;
        upstream.assert_shape(pass.output.shape(), "upstream gradient")?;
        let nl = self.layers.len();
        if nl == 0 {
            return Ok(Gradients {
                params: Vec::new(),
                input: upstream.clone(),
            });
        }

        // grads[i] accumulates d loss / d outputs[i].
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nl];
        grads[nl - 1] = Some(upstream.clone());
        let mut param_grads: Vec<Vec<Vec<T>>> = vec![Vec::new(); nl];
        let mut input_grad: Option<Tensor<T>> = None;

        for i in (0..nl).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => Tensor::zeros(cache.outputs[i].shape()),
            };
            let input = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            let gin = match &self.layers[i] {
                Layer::Conv(c) => {
                    let (gin, gw, gb) = c.backward(input, &g);
                    param_grads[i].push(gw);
                    if let Some(gb) = gb {
                        param_grads[i].push(gb);
                    }
                    gin
                }
                Layer::Norm(b) => {
                    let bc = cache.bn[i].as_ref().expect("train-mode BN cache");
                    let (gin, gg, gbeta) = b.backward(input, bc, &g);
                    param_grads[i].push(gg);
                    param_grads[i].push(gbeta);
                    gin
                }
                Layer::Relu => layers::relu_backward(&cache.outputs[i], &g),
                Layer::Sigmoid => layers::sigmoid_backward(&cache.outputs[i], &g),
                Layer::MaxPool2 => layers::max_pool2_backward(input, &g),
                Layer::Upsample2 => layers::upsample2_backward(input.shape(), &g),
                Layer::Concat(k) => {
                    let (ga, gs) = layers::concat_backward(&g, input.shape().c);
                    accumulate(&mut grads[*k], gs);
                    ga
                }
            };
            if i == 0 {
                input_grad = Some(gin);
            } else {
                accumulate(&mut grads[i - 1], gin);
            }
        }

        let params: Vec<Vec<T>> = param_grads.into_iter().flatten().collect();
        for p in &params {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite("backward".into()));
            }
        }
        Ok(Gradients {
            params,
            input: input_grad.expect("at least one layer"),
        })
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}
