//! Interpretation maps: CAM, GradCAM, GradCAM++, integrated gradients and
//! the penultimate representation.
//!
//! CAM-family maps have one entry per penultimate spatial unit and are kept
//! signed. The "classification score" used throughout is the pre-bias score,
//! so `sum(cam(x, c)) == score_c(x)` holds exactly up to float accumulation.

use crate::error::{Error, Result};
use crate::network::{Bound, ForwardVars, Network};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InterpKind {
    Cam,
    GradCam,
    GradCamPp,
    Ig,
    Repr,
}

/// An interpreter together with its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpreter {
    Cam,
    GradCam,
    GradCamPp,
    /// Integrated gradients from the all-zeros baseline.
    Ig { steps: usize },
    Repr,
}

impl Interpreter {
    pub fn kind(self) -> InterpKind {
        match self {
            Interpreter::Cam => InterpKind::Cam,
            Interpreter::GradCam => InterpKind::GradCam,
            Interpreter::GradCamPp => InterpKind::GradCamPp,
            Interpreter::Ig { .. } => InterpKind::Ig,
            Interpreter::Repr => InterpKind::Repr,
        }
    }

    pub fn is_class_dependent(self) -> bool {
        !matches!(self, Interpreter::Repr)
    }

    /// Whether the map can be differentiated w.r.t. the input with
    /// first-order autodiff (needed inside attack objectives).
    pub fn is_input_differentiable(self) -> bool {
        matches!(self, Interpreter::Cam | Interpreter::GradCam | Interpreter::Repr)
    }
}

impl std::str::FromStr for Interpreter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "cam" => Ok(Interpreter::Cam),
            "gradcam" => Ok(Interpreter::GradCam),
            "gradcampp" | "gradcam++" => Ok(Interpreter::GradCamPp),
            "repr" => Ok(Interpreter::Repr),
            "ig" => Ok(Interpreter::Ig { steps: 32 }),
            other => match other.strip_prefix("ig") {
                Some(n) => n
                    .parse()
                    .ok()
                    .filter(|&m| m >= 1)
                    .map(|steps| Interpreter::Ig { steps })
                    .ok_or_else(|| Error::invalid(format!("bad IG step count in `{s}`"))),
                None => Err(Error::invalid(format!("unknown interpreter `{s}`"))),
            },
        }
    }
}

impl std::fmt::Display for Interpreter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Interpreter::Cam => f.write_str("cam"),
            Interpreter::GradCam => f.write_str("gradcam"),
            Interpreter::GradCamPp => f.write_str("gradcampp"),
            Interpreter::Ig { steps } => write!(f, "ig{steps}"),
            Interpreter::Repr => f.write_str("repr"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpMap<T> {
    pub values: Vec<T>,
    pub kind: InterpKind,
    /// `None` for the class-independent representation map.
    pub class_label: Option<usize>,
}

impl<T: Scalar> InterpMap<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum()
    }
}

/// Accepts `[C, H, W]` or `[1, C, H, W]` and returns the batched form.
fn single<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let x = if x.shape().len() == 3 {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        x.clone().reshape(s)?
    } else {
        x.clone()
    };
    net.check_input(x.shape())?;
    if x.batch() != 1 {
        return Err(Error::invalid(format!(
            "expected a single example, got batch of {}",
            x.batch()
        )));
    }
    Ok(x)
}

fn check_class<T: Scalar>(net: &Network<T>, c: usize) -> Result<()> {
    if c >= net.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: c,
            num_classes: net.num_classes(),
        });
    }
    Ok(())
}

/// Records CAM for every class: `[B, C, u]`.
pub fn cam_var<T: Scalar>(
    g: &mut Graph<T>,
    net: &Network<T>,
    bound: &Bound,
    fv: &ForwardVars,
) -> Result<Var> {
    let (c, k, u) = (net.num_classes(), net.feature_channels(), net.spatial_units());
    let head = bound.vars[bound.vars.len() - 2];
    let kernel = g.reshape(head, &[c, k, 1, 1])?;
    let maps = g.conv2d(fv.features, kernel, None, 1, 0)?;
    let b = g.shape(maps)[0];
    let maps = g.reshape(maps, &[b, c, u])?;
    Ok(g.scale(maps, T::from_f64_lossy(1.0 / u as f64)))
}

/// Records the flattened penultimate representation: `[B, 1, K*u]`.
pub fn repr_var<T: Scalar>(g: &mut Graph<T>, net: &Network<T>, fv: &ForwardVars) -> Result<Var> {
    let b = g.shape(fv.features)[0];
    g.reshape(fv.features, &[b, 1, net.feature_channels() * net.spatial_units()])
}

/// Differentiable per-class maps for attack and training objectives:
/// `[B, C, u]` for CAM/GradCAM, `[B, 1, K*u]` for Repr.
pub fn maps_var<T: Scalar>(
    g: &mut Graph<T>,
    net: &Network<T>,
    bound: &Bound,
    fv: &ForwardVars,
    interp: Interpreter,
) -> Result<Var> {
    match interp {
        // GradCAM coincides with CAM on a GAP + dense head.
        Interpreter::Cam | Interpreter::GradCam => cam_var(g, net, bound, fv),
        Interpreter::Repr => repr_var(g, net, fv),
        other => Err(Error::invalid(format!(
            "{other} maps are not differentiable w.r.t. the input with first-order autodiff"
        ))),
    }
}

/// CAM for every class of every example: `[B, C, u]`.
pub fn cam_all<T: Scalar>(net: &Network<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let x = g.constant(batch.clone());
    let fv = net.forward_vars(&mut g, &bound, x)?;
    let v = cam_var(&mut g, net, &bound, &fv)?;
    Ok(g.value(v).clone())
}

pub fn cam<T: Scalar>(net: &Network<T>, x: &Tensor<T>, c: usize) -> Result<InterpMap<T>> {
    check_class(net, c)?;
    let all = cam_all(net, &single(net, x)?)?;
    let u = net.spatial_units();
    Ok(InterpMap {
        values: all.data()[c * u..(c + 1) * u].to_vec(),
        kind: InterpKind::Cam,
        class_label: Some(c),
    })
}

/// Features `[K*u]` and `d score_c / d features` `[K*u]` for one example.
fn feature_gradients<T: Scalar>(net: &Network<T>, x: &Tensor<T>, c: usize) -> Result<(Vec<T>, Vec<T>)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    // A trainable input makes every downstream node, features included,
    // carry a gradient.
    let xv = g.param(x.clone());
    let fv = net.forward_vars(&mut g, &bound, xv)?;
    let score = g.gather(fv.scores, &[c])?;
    let grads = g.backward(score)?;
    let dfeat = grads
        .get(fv.features)
        .unwrap_or_else(|| Tensor::zeros(g.shape(fv.features).to_vec()));
    Ok((g.value(fv.features).data().to_vec(), dfeat.into_data()))
}

fn combine<T: Scalar>(features: &[T], weights: &[f64], u: usize) -> Vec<T> {
    let mut out = vec![0.0f64; u];
    for (k, &w) in weights.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(&features[k * u..(k + 1) * u]) {
            *o += w * a.as_f64();
        }
    }
    out.into_iter().map(|v| T::from_f64_lossy(v / u as f64)).collect()
}

/// GradCAM with channel weights `sum_i d score_c / d A_{k,i}`, combined as CAM.
pub fn gradcam<T: Scalar>(net: &Network<T>, x: &Tensor<T>, c: usize) -> Result<InterpMap<T>> {
    check_class(net, c)?;
    let x = single(net, x)?;
    let (feat, grad) = feature_gradients(net, &x, c)?;
    let u = net.spatial_units();
    let weights: Vec<f64> = grad
        .chunks(u)
        .map(|gk| gk.iter().map(|v| v.as_f64()).sum())
        .collect();
    Ok(InterpMap {
        values: combine(&feat, &weights, u),
        kind: InterpKind::GradCam,
        class_label: Some(c),
    })
}

/// GradCAM++ channel weights from first-order gradients `g`:
/// `alpha = g^2 / (2 g^2 + sum_i A_i g^3)`, `w_k = sum_i alpha_i relu(g_i)`.
pub fn gradcampp_weights<T: Scalar>(features: &[T], grads: &[T], u: usize) -> Vec<f64> {
    features
        .chunks(u)
        .zip(grads.chunks(u))
        .map(|(a, g)| {
            let a_sum: f64 = a.iter().map(|v| v.as_f64()).sum();
            g.iter()
                .map(|gi| {
                    let gi = gi.as_f64();
                    let g2 = gi * gi;
                    let denom = 2.0 * g2 + a_sum * g2 * gi;
                    let alpha = if denom != 0.0 { g2 / denom } else { 0.0 };
                    alpha * gi.max(0.0)
                })
                .sum()
        })
        .collect()
}

pub fn gradcampp<T: Scalar>(net: &Network<T>, x: &Tensor<T>, c: usize) -> Result<InterpMap<T>> {
    check_class(net, c)?;
    let x = single(net, x)?;
    let (feat, grad) = feature_gradients(net, &x, c)?;
    let u = net.spatial_units();
    let weights = gradcampp_weights(&feat, &grad, u);
    Ok(InterpMap {
        values: combine(&feat, &weights, u),
        kind: InterpKind::GradCamPp,
        class_label: Some(c),
    })
}

/// Integrated gradients with the right-endpoint Riemann sum over `steps`
/// points `a + (j/m)(x - a)`, `j = 1..=m`.
pub fn ig<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    c: usize,
    baseline: &Tensor<T>,
    steps: usize,
) -> Result<InterpMap<T>> {
    check_class(net, c)?;
    if steps == 0 {
        return Err(Error::invalid("integrated gradients need at least one step"));
    }
    let x = single(net, x)?;
    let a = single(net, baseline).map_err(|_| Error::ShapeMismatch {
        op: "ig baseline",
        left: x.shape().to_vec(),
        right: baseline.shape().to_vec(),
    })?;
    let d = x.len();
    let mut path = Vec::with_capacity(steps * d);
    for j in 1..=steps {
        let t = j as f64 / steps as f64;
        path.extend(
            x.data()
                .iter()
                .zip(a.data())
                .map(|(&xi, &ai)| T::from_f64_lossy(ai.as_f64() + t * (xi.as_f64() - ai.as_f64()))),
        );
    }
    let mut shape = x.shape().to_vec();
    shape[0] = steps;
    let path = Tensor::new(shape, path)?;

    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let xv = g.param(path);
    let fv = net.forward_vars(&mut g, &bound, xv)?;
    let picked = g.gather(fv.scores, &vec![c; steps])?;
    let total = g.sum_all(picked);
    let grad = g.gradients(total, &[xv])?.remove(0);

    let mut avg = vec![0.0f64; d];
    for j in 0..steps {
        for (s, v) in avg.iter_mut().zip(grad.row(j)) {
            *s += v.as_f64();
        }
    }
    let values = avg
        .iter()
        .zip(x.data().iter().zip(a.data()))
        .map(|(s, (xi, ai))| T::from_f64_lossy((xi.as_f64() - ai.as_f64()) * s / steps as f64))
        .collect();
    Ok(InterpMap {
        values,
        kind: InterpKind::Ig,
        class_label: Some(c),
    })
}

/// Flattened penultimate feature maps (`K*u` values, class-independent).
pub fn repr<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<InterpMap<T>> {
    let out = net.forward(&single(net, x)?)?;
    Ok(InterpMap {
        values: out.features.into_data(),
        kind: InterpKind::Repr,
        class_label: None,
    })
}

/// Map of `interp` for class `c` (ignored by Repr).
pub fn interpret<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    c: usize,
    interp: Interpreter,
) -> Result<InterpMap<T>> {
    match interp {
        Interpreter::Cam => cam(net, x, c),
        Interpreter::GradCam => gradcam(net, x, c),
        Interpreter::GradCamPp => gradcampp(net, x, c),
        Interpreter::Ig { steps } => {
            let a = Tensor::zeros(x.shape().to_vec());
            ig(net, x, c, &a, steps)
        }
        Interpreter::Repr => repr(net, x),
    }
}
