use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Float, Tensor};
use crate::{Error, Result};

/// Architecture of one layer, without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    /// Stride 1, zero padding that keeps the length unchanged.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    /// Kernel 2, stride 2.
    MaxPool1d,
    Relu,
    Dropout {
        p: f64,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                if in_channels == 0 || out_channels == 0 {
                    return Err(Error::config("conv channels must be positive"));
                }
                if kernel_size % 2 == 0 {
                    return Err(Error::config(format!(
                        "conv kernel size must be odd for symmetric padding, got {kernel_size}"
                    )));
                }
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return Err(Error::config(format!("dropout p must lie in [0, 1), got {p}")));
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::config("dense features must be positive"));
                }
            }
            LayerSpec::MaxPool1d | LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Shapes of this layer's parameter tensors, weight first.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => vec![vec![out_channels, in_channels, kernel_size], vec![out_channels]],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            _ => Vec::new(),
        }
    }
}

/// Convolution weights `[out_channels, in_channels, kernel]` and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Fully connected weights `[out_features, in_features]` and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    MaxPool1d,
    Relu,
    Dropout(f64),
    Flatten,
    Dense(Dense<T>),
}

/// Activations a layer keeps from its forward pass for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv {
        cols: Vec<T>,
        input_shape: Vec<usize>,
    },
    Pool {
        argmax: Vec<usize>,
        input_shape: Vec<usize>,
    },
    Relu {
        input: Tensor<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        input: Tensor<T>,
    },
}

impl<T: Float> Layer<T> {
    pub fn zeros(spec: &LayerSpec) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        Ok(match *spec {
            LayerSpec::Conv1d { .. } => Layer::Conv1d(Conv1d {
                weight: Tensor::zeros(shapes[0].clone()),
                bias: Tensor::zeros(shapes[1].clone()),
            }),
            LayerSpec::Dense { .. } => Layer::Dense(Dense {
                weight: Tensor::zeros(shapes[0].clone()),
                bias: Tensor::zeros(shapes[1].clone()),
            }),
            LayerSpec::MaxPool1d => Layer::MaxPool1d,
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Dropout { p } => Layer::Dropout(p),
            LayerSpec::Flatten => Layer::Flatten,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.weight.shape()[1],
                out_channels: c.weight.shape()[0],
                kernel_size: c.weight.shape()[2],
            },
            Layer::Dense(d) => LayerSpec::Dense {
                in_features: d.weight.shape()[1],
                out_features: d.weight.shape()[0],
            },
            Layer::MaxPool1d => LayerSpec::MaxPool1d,
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout(p) => LayerSpec::Dropout { p: *p },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Forward pass. `rng` enables training behaviour (dropout active).
    pub fn forward<R: Rng + ?Sized>(&self, input: &Tensor<T>, rng: Option<&mut R>) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Conv1d(c) => {
                let (out, cols) = conv1d_forward(input, &c.weight, &c.bias)?;
                Ok((
                    out,
                    Cache::Conv {
                        cols,
                        input_shape: input.shape().to_vec(),
                    },
                ))
            }
            Layer::MaxPool1d => {
                let (out, argmax) = maxpool1d_forward(input)?;
                Ok((
                    out,
                    Cache::Pool {
                        argmax,
                        input_shape: input.shape().to_vec(),
                    },
                ))
            }
            Layer::Relu => Ok((relu_forward(input), Cache::Relu { input: input.clone() })),
            Layer::Dropout(p) => {
                let (out, mask) = dropout_forward(input, *p, rng)?;
                Ok((out, Cache::Dropout { mask }))
            }
            Layer::Flatten => Ok((
                flatten_forward(input)?,
                Cache::Flatten {
                    input_shape: input.shape().to_vec(),
                },
            )),
            Layer::Dense(d) => Ok((
                dense_forward(input, &d.weight, &d.bias)?,
                Cache::Dense { input: input.clone() },
            )),
        }
    }

    /// Inference-only forward pass that keeps no cache.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv1d(c) => Ok(conv1d_forward(input, &c.weight, &c.bias)?.0),
            Layer::MaxPool1d => Ok(maxpool1d_forward(input)?.0),
            Layer::Relu => Ok(relu_forward(input)),
            Layer::Dropout(_) => Ok(input.clone()),
            Layer::Flatten => flatten_forward(input),
            Layer::Dense(d) => dense_forward(input, &d.weight, &d.bias),
        }
    }

    /// Returns the input gradient and the parameter gradients (same order as
    /// [`Layer::params`]).
    pub fn backward(&self, cache: Option<&Cache<T>>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let name = layer_name(self);
        let cache = cache.ok_or(Error::MissingCache(name))?;
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Conv { cols, input_shape }) => {
                let (gi, gw, gb) = conv1d_backward(cols, input_shape, &c.weight, grad_out)?;
                Ok((gi, vec![gw, gb]))
            }
            (Layer::MaxPool1d, Cache::Pool { argmax, input_shape }) => {
                Ok((maxpool1d_backward(argmax, input_shape, grad_out)?, Vec::new()))
            }
            (Layer::Relu, Cache::Relu { input }) => Ok((relu_backward(input, grad_out)?, Vec::new())),
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                Ok((dropout_backward(mask.as_deref(), grad_out)?, Vec::new()))
            }
            (Layer::Flatten, Cache::Flatten { input_shape }) => {
                Ok((flatten_backward(input_shape, grad_out)?, Vec::new()))
            }
            (Layer::Dense(d), Cache::Dense { input }) => {
                let (gi, gw, gb) = dense_backward(input, &d.weight, grad_out)?;
                Ok((gi, vec![gw, gb]))
            }
            _ => Err(Error::MissingCache(name)),
        }
    }
}

fn layer_name<T>(layer: &Layer<T>) -> &'static str {
    match layer {
        Layer::Conv1d(_) => "conv1d",
        Layer::MaxPool1d => "maxpool1d",
        Layer::Relu => "relu",
        Layer::Dropout(_) => "dropout",
        Layer::Flatten => "flatten",
        Layer::Dense(_) => "dense",
    }
}

fn seq_dims(t: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match *t {
        [b, l, c] => Ok((b, l, c)),
        _ => Err(Error::shape(format!(
            "{what} expects [batch, length, channels], got {t:?}"
        ))),
    }
}

/// `out[b, x, co] = bias[co] + sum_{ci,k} w[co, ci, k] * in[b, x + k - (K-1)/2, ci]`,
/// zero outside the sequence. Also returns the unfolded input (im2col),
/// laid out `[(b, x), (ci, k)]`, which the backward pass reuses.
pub fn conv1d_forward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (batch, len, cin) = seq_dims(input.shape(), "conv1d")?;
    let (cout, wcin, k) = match *weight.shape() {
        [a, b, c] => (a, b, c),
        ref s => return Err(Error::shape(format!("conv weight must be 3-D, got {s:?}"))),
    };
    if wcin != cin {
        return Err(Error::shape(format!("conv expects {wcin} input channels, got {cin}")));
    }
    if k % 2 == 0 {
        return Err(Error::shape(format!("conv kernel must be odd, got {k}")));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "conv bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    let pad = (k - 1) / 2;
    let ck = cin * k;
    let rows = batch * len;
    let x = input.data();
    let mut cols = vec![T::zero(); rows * ck];
    for b in 0..batch {
        for pos in 0..len {
            let row = &mut cols[(b * len + pos) * ck..(b * len + pos + 1) * ck];
            for tap in 0..k {
                let src = pos + tap;
                if src < pad || src - pad >= len {
                    continue;
                }
                let src_row = &x[(b * len + src - pad) * cin..(b * len + src - pad + 1) * cin];
                for (ci, &v) in src_row.iter().enumerate() {
                    row[ci * k + tap] = v;
                }
            }
        }
    }
    let mut out = vec![T::zero(); rows * cout];
    for r in 0..rows {
        out[r * cout..(r + 1) * cout].copy_from_slice(bias.data());
    }
    T::gemm(
        rows,
        ck,
        cout,
        T::one(),
        (&cols, ck, 1),
        (weight.data(), 1, ck),
        T::one(),
        (&mut out, cout, 1),
    );
    Ok((Tensor::new(vec![batch, len, cout], out)?, cols))
}

/// Gradients of [`conv1d_forward`] w.r.t. its input, weight and bias.
pub fn conv1d_backward<T: Float>(
    cols: &[T],
    input_shape: &[usize],
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (batch, len, cin) = seq_dims(input_shape, "conv1d backward")?;
    let (cout, _, k) = match *weight.shape() {
        [a, b, c] => (a, b, c),
        ref s => return Err(Error::shape(format!("conv weight must be 3-D, got {s:?}"))),
    };
    if grad_out.shape() != [batch, len, cout] {
        return Err(Error::shape(format!(
            "conv upstream gradient {:?} does not match output [{batch}, {len}, {cout}]",
            grad_out.shape()
        )));
    }
    let ck = cin * k;
    let rows = batch * len;
    if cols.len() != rows * ck {
        return Err(Error::shape("stale conv cache"));
    }
    let g = grad_out.data();

    let mut gw = vec![T::zero(); cout * ck];
    T::gemm(
        cout,
        rows,
        ck,
        T::one(),
        (g, 1, cout),
        (cols, ck, 1),
        T::zero(),
        (&mut gw, ck, 1),
    );
    let mut gb = vec![T::zero(); cout];
    for r in 0..rows {
        for (acc, &v) in gb.iter_mut().zip(&g[r * cout..(r + 1) * cout]) {
            *acc += v;
        }
    }

    let mut gcols = vec![T::zero(); rows * ck];
    T::gemm(
        rows,
        cout,
        ck,
        T::one(),
        (g, cout, 1),
        (weight.data(), ck, 1),
        T::zero(),
        (&mut gcols, ck, 1),
    );
    let pad = (k - 1) / 2;
    let mut gi = vec![T::zero(); batch * len * cin];
    for b in 0..batch {
        for pos in 0..len {
            let row = &gcols[(b * len + pos) * ck..(b * len + pos + 1) * ck];
            for tap in 0..k {
                let src = pos + tap;
                if src < pad || src - pad >= len {
                    continue;
                }
                let dst = &mut gi[(b * len + src - pad) * cin..(b * len + src - pad + 1) * cin];
                for (ci, d) in dst.iter_mut().enumerate() {
                    *d += row[ci * k + tap];
                }
            }
        }
    }
    Ok((
        Tensor::new(input_shape.to_vec(), gi)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![cout], gb)?,
    ))
}

/// Kernel-2 stride-2 max pooling. Returns the pooled tensor and, for every
/// output element, the flat input index that won (ties go to the earlier
/// position).
pub fn maxpool1d_forward<T: Float>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (batch, len, c) = seq_dims(input.shape(), "maxpool1d")?;
    if len % 2 != 0 {
        return Err(Error::shape(format!("maxpool needs an even length, got {len}")));
    }
    let half = len / 2;
    let x = input.data();
    let mut out = Vec::with_capacity(batch * half * c);
    let mut argmax = Vec::with_capacity(batch * half * c);
    for b in 0..batch {
        for p in 0..half {
            let first = (b * len + 2 * p) * c;
            let second = first + c;
            for ch in 0..c {
                let (i, j) = (first + ch, second + ch);
                let win = if x[j] > x[i] { j } else { i };
                out.push(x[win]);
                argmax.push(win);
            }
        }
    }
    Ok((Tensor::new(vec![batch, half, c], out)?, argmax))
}

pub fn maxpool1d_backward<T: Float>(
    argmax: &[usize],
    input_shape: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool upstream gradient does not match cache"));
    }
    let mut gi = Tensor::zeros(input_shape.to_vec());
    let data = gi.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let slot = data
            .get_mut(idx)
            .ok_or_else(|| Error::shape("maxpool cache index out of range"))?;
        *slot += g;
    }
    Ok(gi)
}

pub fn relu_forward<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Float>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu upstream gradient does not match input"));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// `[batch, length, channels]` to `[batch, length * channels]`, position-major
/// (feature index `x * C + c`).
pub fn flatten_forward<T: Float>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, len, c) = seq_dims(input.shape(), "flatten")?;
    input.clone().reshape(vec![batch, len * c])
}

pub fn flatten_backward<T: Float>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.clone().reshape(input_shape.to_vec())
}

/// Inverted dropout. With an RNG each element is zeroed with probability `p`
/// and survivors are scaled by `1 / (1 - p)`; without one it is the identity.
pub fn dropout_forward<T: Float, R: Rng + ?Sized>(
    input: &Tensor<T>,
    p: f64,
    rng: Option<&mut R>,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout p must lie in [0, 1), got {p}")));
    }
    let Some(rng) = rng else {
        return Ok((input.clone(), None));
    };
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Float>(mask: Option<&[T]>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) => {
            if mask.len() != grad_out.len() {
                return Err(Error::shape("dropout upstream gradient does not match mask"));
            }
            let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
    }
}

/// `out[b] = W in[b] + bias`.
pub fn dense_forward<T: Float>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fin) = match *input.shape() {
        [b, f] => (b, f),
        ref s => return Err(Error::shape(format!("dense expects [batch, features], got {s:?}"))),
    };
    let (fout, wfin) = match *weight.shape() {
        [o, i] => (o, i),
        ref s => return Err(Error::shape(format!("dense weight must be 2-D, got {s:?}"))),
    };
    if wfin != fin {
        return Err(Error::shape(format!("dense expects {wfin} features, got {fin}")));
    }
    if bias.shape() != [fout] {
        return Err(Error::shape(format!(
            "dense bias must be [{fout}], got {:?}",
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(batch * fout);
    for _ in 0..batch {
        out.extend_from_slice(bias.data());
    }
    T::gemm(
        batch,
        fin,
        fout,
        T::one(),
        (input.data(), fin, 1),
        (weight.data(), 1, fin),
        T::one(),
        (&mut out, fout, 1),
    );
    Tensor::new(vec![batch, fout], out)
}

pub fn dense_backward<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (batch, fin) = match *input.shape() {
        [b, f] => (b, f),
        ref s => return Err(Error::shape(format!("dense expects [batch, features], got {s:?}"))),
    };
    let fout = weight.shape()[0];
    if grad_out.shape() != [batch, fout] {
        return Err(Error::shape(format!(
            "dense upstream gradient {:?} does not match [{batch}, {fout}]",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let mut gw = vec![T::zero(); fout * fin];
    T::gemm(
        fout,
        batch,
        fin,
        T::one(),
        (g, 1, fout),
        (input.data(), fin, 1),
        T::zero(),
        (&mut gw, fin, 1),
    );
    let mut gb = vec![T::zero(); fout];
    for r in 0..batch {
        for (acc, &v) in gb.iter_mut().zip(&g[r * fout..(r + 1) * fout]) {
            *acc += v;
        }
    }
    let mut gi = vec![T::zero(); batch * fin];
    T::gemm(
        batch,
        fout,
        fin,
        T::one(),
        (g, fout, 1),
        (weight.data(), fin, 1),
        T::zero(),
        (&mut gi, fin, 1),
    );
    Ok((
        Tensor::new(vec![batch, fin], gi)?,
        Tensor::new(weight.shape().to_vec(), gw)?,
        Tensor::new(vec![fout], gb)?,
    ))
}
