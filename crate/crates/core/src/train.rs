//! Training loops: standard, adversarial and interpretation-regularized
//! (worst-case discrepancy found by misinterpretation or misclassification).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{self, AttackConfig, Objective};
use crate::data::Dataset;
use crate::discrepancy::{discrepancy_var, ClassSet, Norm};
use crate::error::{Error, Result};
use crate::interpret::{self, Interpreter};
use crate::network::{Bound, Network};
use crate::tensor::{lit, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Normal,
    Adv,
    Int,
    IntAdv,
    Int2,
    Int2Adv,
    IntOneClass,
}

impl Method {
    /// Whether the cross-entropy is taken at the perturbed input.
    pub fn adversarial_loss(self) -> bool {
        matches!(self, Method::Adv | Method::IntAdv | Method::Int2Adv)
    }

    pub fn has_discrepancy(self) -> bool {
        !matches!(self, Method::Normal | Method::Adv)
    }

    /// Whether the inner adversary maximizes the discrepancy (otherwise the
    /// training loss).
    pub fn misinterpretation_inner(self) -> bool {
        matches!(self, Method::Int | Method::IntAdv | Method::IntOneClass)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Normal => "normal",
            Method::Adv => "adv",
            Method::Int => "int",
            Method::IntAdv => "int-adv",
            Method::Int2 => "int2",
            Method::Int2Adv => "int2-adv",
            Method::IntOneClass => "int-one-class",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Method::Normal,
            "adv" => Method::Adv,
            "int" => Method::Int,
            "int-adv" | "intadv" => Method::IntAdv,
            "int2" => Method::Int2,
            "int2-adv" | "int2adv" => Method::Int2Adv,
            "int-one-class" | "intoneclass" => Method::IntOneClass,
            other => return Err(Error::invalid(format!("unknown training method `{other}`"))),
        })
    }
}

/// Zero for `warmup_steps`, then linear up to `eps_final` at the last step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsSchedule {
    pub eps_final: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl EpsSchedule {
    pub fn at(&self, step: usize) -> f64 {
        let last = self.total_steps.saturating_sub(1);
        if step <= self.warmup_steps {
            return 0.0;
        }
        if last <= self.warmup_steps {
            return self.eps_final;
        }
        let t = (step.min(last) - self.warmup_steps) as f64 / (last - self.warmup_steps) as f64;
        self.eps_final * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub gamma: f64,
    pub eps_final: f64,
    pub warmup_steps: usize,
    pub inner_steps: usize,
    pub inner_step_size: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Normal,
            gamma: 0.01,
            eps_final: 0.3,
            warmup_steps: 2000,
            inner_steps: 40,
            inner_step_size: 0.01,
            epochs: 100,
            batch_size: 50,
            lr: 1e-4,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.eps_final >= 0.0) {
            return Err(Error::invalid("eps_final must be >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be positive"));
        }
        if !(self.lr > 0.0) || !(self.inner_step_size > 0.0) {
            return Err(Error::invalid("learning rate and inner step size must be > 0"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, n: usize) -> EpsSchedule {
        EpsSchedule {
            eps_final: self.eps_final,
            warmup_steps: self.warmup_steps,
            total_steps: self.epochs * self.steps_per_epoch(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let m: Vec<Tensor<T>> = shapes.into_iter().map(|s| Tensor::zeros(s.to_vec())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = lit::<T>(self.lr * c2.sqrt() / c1);
        let eps_hat = lit::<T>(self.eps * c2.sqrt());
        let (b1, b2, ob1, ob2) = (lit::<T>(b1), lit::<T>(b2), lit::<T>(1.0 - b1), lit::<T>(1.0 - b2));
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p -= step * *m / (v.sqrt() + eps_hat);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    pub eps: f64,
    pub loss: f64,
    pub clean_acc: f64,
}

pub const METRICS_HEADER: &str = "step,epoch,eps,loss,clean_acc";

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.step, r.epoch, r.eps, r.loss, r.clean_acc);
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub network: Network<T>,
    pub optimizer: Adam<T>,
    pub step: usize,
    pub history: Vec<MetricRow>,
}

/// Where periodic checkpoints and the metrics CSV go.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

impl TrainOutput {
    pub fn to(dir: impl AsRef<Path>) -> Self {
        TrainOutput {
            dir: Some(dir.as_ref().to_path_buf()),
        }
    }
}

/// Target-label-free discrepancy of CAM maps, softmax-weighted, or the l1
/// true-label discrepancy for the one-class baseline.
fn discrepancy_sets(method: Method, labels: &[usize]) -> Vec<ClassSet> {
    labels
        .iter()
        .map(|&y| {
            if method == Method::IntOneClass {
                ClassSet::OneClass(y)
            } else {
                ClassSet::SoftmaxWeighted(y)
            }
        })
        .collect()
}

fn inner_config(eps: f64, steps: usize, step_size: f64) -> Result<AttackConfig> {
    AttackConfig::new(eps, steps, step_size)
}

/// Signed-gradient ascent of the discrepancy between `x` and `x + delta`
/// over the `eps`-ball intersected with `[0, 1]`, from a uniform random
/// start (the l1 discrepancy has a zero subgradient at `delta = 0`).
#[allow(clippy::too_many_arguments)]
pub fn inner_max_discrepancy_sets<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    sets: &[ClassSet],
    eps: f64,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    inner_config(eps, steps, step_size)?;
    let benign = attack::benign_maps(net, x, Interpreter::Cam)?;
    let objective = |g: &mut Graph<T>, bound: &Bound, xv: Var, rows: &[usize]| -> Result<Var> {
        let fv = net.forward_vars(g, bound, xv)?;
        let maps = interpret::cam_var(g, net, bound, &fv)?;
        let m0 = g.constant(benign.select_rows(rows));
        discrepancy_var(g, m0, maps, fv.logits, &attack::pick(sets, rows), Norm::L1)
    };
    let objective: &Objective<'_, T> = &objective;
    let n = x.batch();
    Ok(attack::ascend(net, x, &vec![eps; n], &vec![step_size; n], steps, Some(seed), objective)?.0)
}

/// Worst-case softmax-weighted CAM discrepancy within radius `eps`.
pub fn inner_max_discrepancy<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    eps: f64,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    let sets = discrepancy_sets(Method::Int, labels);
    inner_max_discrepancy_sets(net, x, &sets, eps, steps, step_size, seed)
}

/// Worst-case training loss within radius `eps` (untargeted PGD).
pub fn inner_max_loss<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    eps: f64,
    steps: usize,
    step_size: f64,
) -> Result<Tensor<T>> {
    let cfg = inner_config(eps, steps, step_size)?;
    let out = attack::pgd_batch(net, x, labels, None, &cfg)?;
    let parts: Vec<Tensor<T>> = out.into_iter().map(|o| o.x_adv).collect();
    let mut shape = x.shape().to_vec();
    shape[0] = parts.len();
    Tensor::new(shape, parts.into_iter().flat_map(|p| p.into_data()).collect())
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Loss and parameter gradients for one batch; `xp` is the perturbed
/// input, ignored by `Normal`.
fn batch_loss<T: Scalar>(
    net: &Network<T>,
    method: Method,
    gamma: f64,
    x: &Tensor<T>,
    xp: Option<&Tensor<T>>,
    labels: &[usize],
) -> Result<(f64, f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true);
    let n = labels.len();
    let inv_n = lit::<T>(1.0 / n as f64);
    let xv = g.constant(x.clone());
    let fx = net.forward_vars(&mut g, &bound, xv)?;
    let correct = g
        .value(fx.logits)
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let fxp = match xp {
        Some(xp) => {
            let v = g.constant(xp.clone());
            Some(net.forward_vars(&mut g, &bound, v)?)
        }
        None => None,
    };
    let ce_logits = match (method.adversarial_loss(), &fxp) {
        (true, Some(f)) => f.logits,
        _ => fx.logits,
    };
    let ce = g.cross_entropy(ce_logits, labels)?;
    let ce = g.sum_all(ce);
    let mut loss = g.scale(ce, inv_n);
    if method.has_discrepancy() {
        if let Some(fxp) = fxp {
            let mx = interpret::cam_var(&mut g, net, &bound, &fx)?;
            let mxp = interpret::cam_var(&mut g, net, &bound, &fxp)?;
            let d = discrepancy_var(&mut g, mx, mxp, fxp.logits, &discrepancy_sets(method, labels), Norm::L1)?;
            let d = g.sum_all(d);
            let d = g.scale(d, lit::<T>(gamma / n as f64));
            loss = g.add(loss, d)?;
        }
    }
    let value = g.value(loss).data()[0].as_f64();
    let grads = g.gradients(loss, &bound.vars)?;
    Ok((value, correct as f64 / n as f64, grads))
}

/// Trains `net` in place of a fresh state; see [`train_with`].
pub fn train<T: Scalar>(net: Network<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<TrainState<T>> {
    train_with(net, data, cfg, &TrainOutput::default())
}

/// Minibatch Adam on the configured objective. Writes `metrics.csv` and,
/// when enabled, `step_<n>.ckpt` checkpoints into `out.dir`.
pub fn train_with<T: Scalar>(
    net: Network<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    out: &TrainOutput,
) -> Result<TrainState<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    net.check_input(data.images.shape())?;
    if data.num_classes > net.num_classes() {
        return Err(Error::invalid("dataset has more classes than the network"));
    }
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let schedule = cfg.schedule(data.len());
    let optimizer = Adam::new(cfg.lr, net.params().iter().map(|p| p.value.shape()));
    let mut state = TrainState {
        network: net,
        optimizer,
        step: 0,
        history: Vec::with_capacity(schedule.total_steps),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.images.select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let eps = schedule.at(state.step);
            let net = &state.network;
            let xp = match cfg.method {
                Method::Normal => None,
                m if m.misinterpretation_inner() => {
                    let sets = discrepancy_sets(m, &labels);
                    Some(inner_max_discrepancy_sets(
                        net,
                        &x,
                        &sets,
                        eps,
                        cfg.inner_steps,
                        cfg.inner_step_size,
                        step_seed(cfg.seed, state.step),
                    )?)
                }
                _ => Some(inner_max_loss(net, &x, &labels, eps, cfg.inner_steps, cfg.inner_step_size)?),
            };
            let (loss, acc, grads) = batch_loss(net, cfg.method, cfg.gamma, &x, xp.as_ref(), &labels)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "training diverged at step {}, epoch {epoch}, batch {b}, eps {eps}",
                    state.step
                )));
            }
            let mut params: Vec<Tensor<T>> = state.network.params().iter().map(|p| p.value.clone()).collect();
            state.optimizer.step(&mut params, &grads);
            for (p, v) in state.network.params_mut().iter_mut().zip(params) {
                p.value = v;
            }
            if !state.network.all_finite() {
                return Err(Error::NonFinite(format!(
                    "non-finite parameters after step {}, epoch {epoch}, batch {b}, eps {eps}",
                    state.step
                )));
            }
            state.history.push(MetricRow {
                step: state.step,
                epoch,
                eps,
                loss,
                clean_acc: acc,
            });
            state.step += 1;
            if let Some(dir) = &out.dir {
                if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
                    state.network.save(dir.join(format!("step_{}.ckpt", state.step)))?;
                }
            }
        }
    }
    if let Some(dir) = &out.dir {
        let path = dir.join("metrics.csv");
        std::fs::write(&path, metrics_csv(&state.history)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(state)
}
