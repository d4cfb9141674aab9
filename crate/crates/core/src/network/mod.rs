//! CNN classifiers whose last two stages are global average pooling and a
//! dense head, the structure that makes class activation maps exact.

mod arch;
mod checkpoint;

pub use arch::{Architecture, Stage};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    input_shape: [usize; 3],
    num_classes: usize,
    feature_shape: [usize; 3],
    params: Vec<Param<T>>,
}

/// Graph handles for a network's parameters, in [`Network::params`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

/// Graph handles produced by [`Network::forward_vars`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Penultimate feature maps `[B, K, h, w]`.
    pub features: Var,
    /// Class scores without the head bias, `[B, C]`.
    pub scores: Var,
    /// Logits including the head bias, `[B, C]`.
    pub logits: Var,
}

/// Plain (graph-free) forward results.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    pub logits: Tensor<T>,
    pub scores: Tensor<T>,
    /// `[B, K, u]`
    pub features: Tensor<T>,
}

impl<T: Scalar> Network<T> {
    /// He fan-in normal initialization with zero biases, deterministic in `seed`.
    pub fn new(arch: Architecture, input_shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        let feature_shape = arch.feature_shape(input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut channels = input_shape[0];
        for (i, stage) in arch.stages.iter().enumerate() {
            if let Stage::Conv { filters, kernel, .. } = *stage {
                let fan_in = channels * kernel * kernel;
                params.push(Param {
                    name: format!("conv{i}.weight"),
                    value: he_normal(&mut rng, vec![filters, channels, kernel, kernel], fan_in),
                });
                params.push(Param {
                    name: format!("conv{i}.bias"),
                    value: Tensor::zeros([filters]),
                });
                channels = filters;
            }
        }
        params.push(Param {
            name: HEAD_WEIGHT.into(),
            value: he_normal(&mut rng, vec![num_classes, feature_shape[0]], feature_shape[0]),
        });
        params.push(Param {
            name: HEAD_BIAS.into(),
            value: Tensor::zeros([num_classes]),
        });
        Ok(Network {
            arch,
            input_shape,
            num_classes,
            feature_shape,
            params,
        })
    }

    /// Reassembles a network from named parameters, validating every shape.
    pub fn from_params(
        arch: Architecture,
        input_shape: [usize; 3],
        num_classes: usize,
        params: Vec<Param<T>>,
    ) -> Result<Self> {
        let mut net = Network::new(arch, input_shape, num_classes, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                net.params.len(),
                params.len()
            )));
        }
        for p in params {
            net.set_param(&p.name, p.value)?;
        }
        Ok(net)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// K: channels of the penultimate feature maps.
    pub fn feature_channels(&self) -> usize {
        self.feature_shape[0]
    }

    /// u: spatial units per penultimate channel.
    pub fn spatial_units(&self) -> usize {
        self.feature_shape[1] * self.feature_shape[2]
    }

    /// `[K, h, w]`
    pub fn feature_shape(&self) -> [usize; 3] {
        self.feature_shape
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                left: slot.value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        slot.value = value;
        Ok(())
    }

    /// Head weights `[C, K]`; row `c` is `w^c`.
    pub fn head_weight(&self) -> &Tensor<T> {
        &self.params[self.params.len() - 2].value
    }

    pub fn head_bias(&self) -> &Tensor<T> {
        &self.params[self.params.len() - 1].value
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            input_shape: self.input_shape,
            num_classes: self.num_classes,
            feature_shape: self.feature_shape,
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Adds every parameter to `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1..] != self.input_shape {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                op: "network input",
                left: expected,
                right: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Records the forward pass of `x: [B, C, H, W]` into `g`.
    pub fn forward_vars(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<ForwardVars> {
        self.check_input(g.shape(x))?;
        let mut h = x;
        let mut p = 0;
        for stage in &self.arch.stages {
            match *stage {
                Stage::Conv { stride, pad, .. } => {
                    let c = g.conv2d(h, bound.vars[p], Some(bound.vars[p + 1]), stride, pad)?;
                    h = g.relu(c);
                    p += 2;
                }
                Stage::MaxPool { size, stride } => h = g.max_pool(h, size, stride)?,
            }
        }
        let features = h;
        let pooled = g.global_avg_pool(features)?;
        let w = bound.vars[p];
        let b = bound.vars[p + 1];
        let scores = g.dense(pooled, w, None)?;
        let logits = g.dense(pooled, w, Some(b))?;
        Ok(ForwardVars {
            features,
            scores,
            logits,
        })
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<Forward<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward_vars(&mut g, &bound, x)?;
        let b = batch.batch();
        let features = g
            .value(out.features)
            .clone()
            .reshape(vec![b, self.feature_channels(), self.spatial_units()])?;
        Ok(Forward {
            logits: g.value(out.logits).clone(),
            scores: g.value(out.scores).clone(),
            features,
        })
    }

    pub fn logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(batch)?.logits)
    }

    /// Predicted labels, evaluated in chunks of `chunk` examples.
    pub fn predict(&self, batch: &Tensor<T>, chunk: usize) -> Result<Vec<usize>> {
        let n = batch.batch();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            out.extend(self.logits(&batch.select_rows(&idx))?.argmax_rows());
            start = end;
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

fn he_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(normal.sample(rng)))
        .collect();
    Tensor::from_parts(shape, data)
}
