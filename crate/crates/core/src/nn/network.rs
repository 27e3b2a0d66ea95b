use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Cache, Float, Layer, LayerSpec, Tensor};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Sequential stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
}

/// One row of an architecture table: a CONV, MAX or FC stage with the
/// activation/dropout layers that follow it folded in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArchRow {
    pub kind: &'static str,
    pub input: String,
    pub output: String,
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub dropout: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    dtype: String,
    layers: Vec<ManifestLayer>,
    /// Length of the weight blob in bytes.
    total_bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLayer {
    layer: LayerSpec,
    param_shapes: Vec<Vec<usize>>,
}

fn shape_label(shape: &[usize]) -> String {
    match shape {
        [f] => format!("1×{f}"),
        dims => dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×"),
    }
}

impl<T: Float> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Network { layers }
    }

    /// Network with every parameter zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        Ok(Network {
            layers: specs.iter().map(Layer::zeros).collect::<Result<_>>()?,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Parameter tensors in layer order, weight before bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Per-layer output shapes (without the batch axis) for a given
    /// per-sample input shape, validating that the stack composes.
    pub fn shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut cur = input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.specs().iter().enumerate() {
            cur = match (*spec, cur.as_slice()) {
                (
                    LayerSpec::Conv1d {
                        in_channels,
                        out_channels,
                        ..
                    },
                    &[len, c],
                ) if c == in_channels => vec![len, out_channels],
                (LayerSpec::MaxPool1d, &[len, c]) if len % 2 == 0 => vec![len / 2, c],
                (LayerSpec::Flatten, &[len, c]) => vec![len * c],
                (
                    LayerSpec::Dense {
                        in_features,
                        out_features,
                    },
                    &[f],
                ) if f == in_features => vec![out_features],
                (LayerSpec::Relu | LayerSpec::Dropout { .. }, _) => cur.clone(),
                (spec, shape) => {
                    return Err(Error::shape(format!(
                        "layer {i} ({spec:?}) cannot take input {shape:?}"
                    )))
                }
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Architecture table for a per-sample input shape.
    pub fn architecture(&self, input: &[usize]) -> Result<Vec<ArchRow>> {
        let shapes = self.shapes(input)?;
        let mut rows: Vec<ArchRow> = Vec::new();
        let mut cur = input.to_vec();
        let mut pre_flatten: Option<Vec<usize>> = None;
        for (spec, next) in self.specs().into_iter().zip(shapes) {
            let (kind, kernel, stride) = match spec {
                LayerSpec::Conv1d { kernel_size, .. } => ("CONV", Some(kernel_size), Some(1)),
                LayerSpec::MaxPool1d => ("MAX", Some(2), Some(2)),
                LayerSpec::Dense { .. } => ("FC", None, None),
                LayerSpec::Flatten => {
                    pre_flatten.get_or_insert_with(|| cur.clone());
                    cur = next;
                    continue;
                }
                LayerSpec::Dropout { .. } => {
                    if let Some(row) = rows.last_mut() {
                        row.dropout = true;
                    }
                    continue;
                }
                LayerSpec::Relu => continue,
            };
            let input = pre_flatten.take().unwrap_or_else(|| cur.clone());
            rows.push(ArchRow {
                kind,
                input: shape_label(&input),
                output: shape_label(&next),
                kernel,
                stride,
                dropout: false,
            });
            cur = next;
        }
        Ok(rows)
    }

    /// Inference pass (dropout disabled).
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = self
            .layers
            .first()
            .map(|l| l.infer(input))
            .unwrap_or_else(|| Ok(input.clone()))?;
        for layer in self.layers.iter().skip(1) {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Training pass: dropout active, caches kept for [`Network::backward`].
    pub fn forward_train<R: Rng + ?Sized>(&self, input: &Tensor<T>, rng: &mut R) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (y, cache) = layer.forward(&x, Some(&mut *rng))?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Returns the input gradient and parameter gradients ordered like
    /// [`Network::params`].
    pub fn backward(&self, caches: &[Cache<T>], grad_out: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::MissingCache("network"));
        }
        let mut grad = grad_out.clone();
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            let (g, params) = layer.backward(Some(cache), &grad)?;
            per_layer.push(params);
            grad = g;
        }
        per_layer.reverse();
        Ok((grad, per_layer.into_iter().flatten().collect()))
    }

    pub fn to_bytes(&self) -> Result<(String, Vec<u8>)> {
        let mut blob = Vec::with_capacity(self.param_count() * T::BYTES);
        for p in self.params() {
            for &v in p.data() {
                v.write_le(&mut blob);
            }
        }
        let manifest = Manifest {
            dtype: T::DTYPE.to_string(),
            layers: self
                .specs()
                .into_iter()
                .map(|layer| ManifestLayer {
                    param_shapes: layer.param_shapes(),
                    layer,
                })
                .collect(),
            total_bytes: blob.len(),
        };
        Ok((serde_json::to_string_pretty(&manifest)?, blob))
    }

    /// Rebuilds a network from a manifest and its weight blob. Shapes are
    /// checked against the blob before anything is allocated.
    pub fn from_bytes(manifest: &[u8], blob: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(manifest)?;
        if manifest.dtype != T::DTYPE {
            return Err(Error::format(format!(
                "weights are {}, expected {}",
                manifest.dtype,
                T::DTYPE
            )));
        }
        if manifest.total_bytes != blob.len() {
            return Err(Error::format(format!(
                "manifest declares {} bytes, blob has {}",
                manifest.total_bytes,
                blob.len()
            )));
        }
        let mut total = 0usize;
        for (i, entry) in manifest.layers.iter().enumerate() {
            entry.layer.validate()?;
            if entry.param_shapes != entry.layer.param_shapes() {
                return Err(Error::format(format!(
                    "layer {i}: parameter shapes disagree with layer type"
                )));
            }
            for shape in &entry.param_shapes {
                let n = shape
                    .iter()
                    .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                    .ok_or_else(|| Error::format(format!("layer {i}: shape overflows")))?;
                total = total
                    .checked_add(n)
                    .ok_or_else(|| Error::format("parameter count overflows"))?;
            }
        }
        if total.checked_mul(T::BYTES) != Some(blob.len()) {
            return Err(Error::format(format!(
                "layers need {total} values, blob holds {} bytes",
                blob.len()
            )));
        }
        let mut values = blob.chunks_exact(T::BYTES).map(T::read_le);
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for entry in &manifest.layers {
            let mut layer = Layer::zeros(&entry.layer)?;
            for p in layer.params_mut() {
                for slot in p.data_mut() {
                    *slot = values.next().expect("blob length checked above");
                }
            }
            layers.push(layer);
        }
        Ok(Network { layers })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (manifest, blob) = self.to_bytes()?;
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        fs::write(dir.join(WEIGHTS_FILE), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read(dir.join(MANIFEST_FILE))?;
        let blob = fs::read(dir.join(WEIGHTS_FILE))?;
        Self::from_bytes(&manifest, &blob)
    }
}
