//! l-infinity attacks: PGD, the interpretability-sneaking attack (ISA) with
//! bisection on its trade-off weight, the attack against interpretability
//! (AAI) and minimal-radius search.
//!
//! Every attack is batched: a batch is split into chunks that run
//! independently (in parallel when rayon has threads), and each example's
//! trajectory depends only on its own data, so results do not depend on
//! batching or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discrepancy::{discrepancy_var, ClassSet, Measure, Norm};
use crate::error::{Error, Result};
use crate::interpret::{self, Interpreter};
use crate::network::{Bound, Network};
use crate::tensor::{lit, Graph, Scalar, Tensor, Var};

/// Examples per independent chunk.
pub const CHUNK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub eps: f64,
    pub steps: usize,
    pub step_size: f64,
    pub targeted: Option<usize>,
    pub rand_init: bool,
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(eps: f64, steps: usize, step_size: f64) -> Result<Self> {
        let cfg = AttackConfig {
            eps,
            steps,
            step_size,
            targeted: None,
            rand_init: false,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::invalid(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid(format!("step size must be > 0, got {}", self.step_size)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome<T> {
    /// `[1, C, H, W]`
    pub x_adv: Tensor<T>,
    pub success: bool,
    pub margin: f64,
    pub prediction: usize,
    pub discrepancy: Option<f64>,
    pub lambda_used: Option<f64>,
    pub loss_trace: Vec<f64>,
}

/// A per-example objective to maximize, recorded on `g` for inputs `x`;
/// `rows` are the example indices within the full batch.
pub(crate) type Objective<'a, T> = dyn Fn(&mut Graph<T>, &Bound, Var, &[usize]) -> Result<Var> + Sync + 'a;

fn as_batch<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let x = if x.shape().len() == 3 {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        x.clone().reshape(s)?
    } else {
        x.clone()
    };
    net.check_input(x.shape())?;
    Ok(x)
}

fn check_labels<T: Scalar>(net: &Network<T>, labels: &[usize], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} examples", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= net.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label: l,
            num_classes: net.num_classes(),
        });
    }
    Ok(())
}

fn concat_rows<T: Scalar>(parts: Vec<Tensor<T>>) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let mut shape = first.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.batch()).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend(p.into_data());
    }
    Tensor::new(shape, data)
}

/// Signed-gradient ascent of `objective` inside the per-example
/// `eps`-balls around `x0`, clipped to `[0, 1]`. Returns the final iterate
/// and the objective trace per example.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ascend<T: Scalar>(
    net: &Network<T>,
    x0: &Tensor<T>,
    eps: &[f64],
    step_size: &[f64],
    steps: usize,
    rand_init: Option<u64>,
    objective: &Objective<'_, T>,
) -> Result<(Tensor<T>, Vec<Vec<f64>>)> {
    let n = x0.batch();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK).min(n))).collect();
    let results: Vec<Result<(Tensor<T>, Vec<Vec<f64>>)>> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let rows: Vec<usize> = (s..e).collect();
            ascend_chunk(net, &x0.select_rows(&rows), &rows, eps, step_size, steps, rand_init, objective)
        })
        .collect();
    let mut parts = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(n);
    for r in results {
        let (x, t) = r?;
        parts.push(x);
        traces.extend(t);
    }
    Ok((concat_rows(parts)?, traces))
}

#[allow(clippy::too_many_arguments)]
fn ascend_chunk<T: Scalar>(
    net: &Network<T>,
    x0: &Tensor<T>,
    rows: &[usize],
    eps: &[f64],
    step_size: &[f64],
    steps: usize,
    rand_init: Option<u64>,
    objective: &Objective<'_, T>,
) -> Result<(Tensor<T>, Vec<Vec<f64>>)> {
    let d = x0.row_len();
    let lo: Vec<T> = (0..x0.len()).map(|i| project_bound(x0.data()[i], -eps[rows[i / d]])).collect();
    let hi: Vec<T> = (0..x0.len()).map(|i| project_bound(x0.data()[i], eps[rows[i / d]])).collect();
    let mut x = x0.clone();
    if let Some(seed) = rand_init {
        for (k, &r) in rows.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            for v in x.row_mut(k) {
                let e = eps[r];
                *v += lit::<T>(if e > 0.0 { rng.gen_range(-e..=e) } else { 0.0 });
            }
        }
        clamp_into(&mut x, &lo, &hi);
    }
    let mut traces = vec![Vec::with_capacity(steps); rows.len()];
    for _ in 0..steps {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let xv = g.param(x.clone());
        let obj = objective(&mut g, &bound, xv, rows)?;
        for (t, v) in traces.iter_mut().zip(g.value(obj).data()) {
            t.push(v.as_f64());
        }
        let total = g.sum_all(obj);
        let grad = g.gradients(total, &[xv])?.pop().expect("one gradient");
        for (k, &r) in rows.iter().enumerate() {
            let s = lit::<T>(step_size[r]);
            for (v, &gi) in x.row_mut(k).iter_mut().zip(grad.row(k)) {
                if gi > T::zero() {
                    *v += s;
                } else if gi < T::zero() {
                    *v -= s;
                }
            }
        }
        clamp_into(&mut x, &lo, &hi);
    }
    Ok((x, traces))
}

fn project_bound<T: Scalar>(x: T, offset: f64) -> T {
    let v = x + lit::<T>(offset);
    v.max(T::zero()).min(T::one())
}

fn clamp_into<T: Scalar>(x: &mut Tensor<T>, lo: &[T], hi: &[T]) {
    for ((v, &l), &h) in x.data_mut().iter_mut().zip(lo).zip(hi) {
        *v = v.max(l).min(h);
    }
}

/// `max_{j != t} f_j - f_t` per row of `logits`.
fn runner_up_gap<T: Scalar>(logits: &[T], t: usize) -> f64 {
    let best_other = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t)
        .map(|(_, v)| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    best_other - logits[t].as_f64()
}

fn others_mask(n: usize, c: usize, excluded: &[usize]) -> Vec<bool> {
    (0..n * c).map(|i| i % c != excluded[i / c]).collect()
}

/// `max{max_{j != t} f_j - f_t, floor}` per example, from full logits.
fn hinge_var<T: Scalar>(g: &mut Graph<T>, logits: Var, t: &[usize], floor: f64) -> Result<Var> {
    let c = g.shape(logits)[1];
    let other = g.masked_max(logits, &others_mask(t.len(), c, t))?;
    let own = g.gather(logits, t)?;
    let gap = g.sub(other, own)?;
    Ok(g.clamp_min(gap, lit(floor)))
}

pub(crate) fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| v[r]).collect()
}

fn outcomes<T: Scalar>(
    net: &Network<T>,
    x_adv: &Tensor<T>,
    traces: Vec<Vec<f64>>,
    judge: impl Fn(usize, &[T]) -> (bool, f64),
) -> Result<Vec<AttackOutcome<T>>> {
    let logits = logits_chunked(net, x_adv)?;
    Ok(traces
        .into_iter()
        .enumerate()
        .map(|(i, loss_trace)| {
            let row = logits.row(i);
            let (success, margin) = judge(i, row);
            AttackOutcome {
                x_adv: x_adv.select_rows(&[i]),
                success,
                margin,
                prediction: crate::tensor::argmax(row),
                discrepancy: None,
                lambda_used: None,
                loss_trace,
            }
        })
        .collect())
}

fn logits_chunked<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = x.batch();
    let parts: Result<Vec<Tensor<T>>> = (0..n)
        .step_by(CHUNK)
        .map(|s| net.logits(&x.select_rows(&(s..(s + CHUNK).min(n)).collect::<Vec<_>>())))
        .collect();
    concat_rows(parts?)
}

/// Batched PGD with a radius per example. Untargeted ascent on the
/// cross-entropy at `labels`, or descent on the cross-entropy at `targets`.
pub fn pgd_radii<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    targets: Option<&[usize]>,
    eps: &[f64],
    cfg: &AttackConfig,
) -> Result<Vec<AttackOutcome<T>>> {
    cfg.validate()?;
    let x = as_batch(net, x)?;
    check_labels(net, labels, x.batch())?;
    if let Some(t) = targets {
        check_labels(net, t, x.batch())?;
    }
    if eps.len() != x.batch() {
        return Err(Error::invalid("one radius per example required"));
    }
    let objective = move |g: &mut Graph<T>, bound: &Bound, xv: Var, rows: &[usize]| -> Result<Var> {
        let fv = net.forward_vars(g, bound, xv)?;
        match targets {
            None => g.cross_entropy(fv.logits, &pick(labels, rows)),
            Some(t) => {
                let ce = g.cross_entropy(fv.logits, &pick(t, rows))?;
                Ok(g.scale(ce, -T::one()))
            }
        }
    };
    let steps = vec![cfg.step_size; x.batch()];
    let (x_adv, traces) = ascend(
        net,
        &x,
        eps,
        &steps,
        cfg.steps,
        cfg.rand_init.then_some(cfg.seed),
        &objective,
    )?;
    outcomes(net, &x_adv, traces, |i, row| match targets {
        None => {
            let m = -runner_up_gap(row, labels[i]);
            (crate::tensor::argmax(row) != labels[i], m)
        }
        Some(t) => (crate::tensor::argmax(row) == t[i], runner_up_gap(row, t[i])),
    })
}

/// Batched PGD at the configured radius; `cfg.targeted` applies to every
/// example unless `targets` is given.
pub fn pgd_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    targets: Option<&[usize]>,
    cfg: &AttackConfig,
) -> Result<Vec<AttackOutcome<T>>> {
    let n = as_batch(net, x)?.batch();
    let shared;
    let targets = match (targets, cfg.targeted) {
        (Some(t), _) => Some(t),
        (None, Some(t)) => {
            shared = vec![t; n];
            Some(shared.as_slice())
        }
        (None, None) => None,
    };
    pgd_radii(net, x, labels, targets, &vec![cfg.eps; n], cfg)
}

pub fn pgd<T: Scalar>(net: &Network<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig) -> Result<AttackOutcome<T>> {
    Ok(pgd_batch(net, x, &[y], None, cfg)?.remove(0))
}

/// Settings shared by ISA runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsaConfig {
    pub tau: f64,
    pub steps: usize,
    /// Step size as a fraction of the radius.
    pub step_fraction: f64,
    pub measure: Measure,
}

impl Default for IsaConfig {
    fn default() -> Self {
        IsaConfig {
            tau: 0.1,
            steps: 200,
            step_fraction: 0.1,
            measure: Measure::new(crate::discrepancy::ClassChoice::Two, Norm::L1, Interpreter::Cam),
        }
    }
}

impl IsaConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.step_fraction > 0.0) {
            return Err(Error::invalid("ISA step fraction must be > 0"));
        }
        if !self.measure.interpreter.is_input_differentiable() {
            return Err(Error::invalid(format!(
                "{} maps cannot drive an attack objective",
                self.measure.interpreter
            )));
        }
        Ok(())
    }
}

pub(crate) fn benign_maps<T: Scalar>(net: &Network<T>, x: &Tensor<T>, interp: Interpreter) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let fv = net.forward_vars(&mut g, &bound, xv)?;
    let m = interpret::maps_var(&mut g, net, &bound, &fv, interp)?;
    Ok(g.value(m).clone())
}

/// Records `D(x0, x)` per example for the given class sets.
fn discrepancy_to<T: Scalar>(
    g: &mut Graph<T>,
    net: &Network<T>,
    bound: &Bound,
    xv: Var,
    benign: &Tensor<T>,
    sets: &[ClassSet],
    norm: Norm,
    interp: Interpreter,
) -> Result<(Var, Var)> {
    let fv = net.forward_vars(g, bound, xv)?;
    let maps = interpret::maps_var(g, net, bound, &fv, interp)?;
    let m0 = g.constant(benign.clone());
    let d = discrepancy_var(g, m0, maps, fv.logits, sets, norm)?;
    Ok((d, fv.logits))
}

/// Discrepancy between `x0` and `x` per example, for reporting.
pub fn batch_discrepancy<T: Scalar>(
    net: &Network<T>,
    x0: &Tensor<T>,
    x: &Tensor<T>,
    sets: &[ClassSet],
    norm: Norm,
    interp: Interpreter,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(sets.len());
    let n = x0.batch();
    for s in (0..n).step_by(CHUNK) {
        let rows: Vec<usize> = (s..(s + CHUNK).min(n)).collect();
        let x0c = x0.select_rows(&rows);
        let benign = benign_maps(net, &x0c, interp)?;
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let xv = g.constant(x.select_rows(&rows));
        let (d, _) = discrepancy_to(&mut g, net, &bound, xv, &benign, &pick(sets, &rows), norm, interp)?;
        out.extend(g.value(d).data().iter().map(|v| v.as_f64()));
    }
    Ok(out)
}

/// ISA for a batch with per-example radius and weight: signed-gradient
/// descent on `lambda * max{max_{j != t} f_j - f_t, -tau} + D(x, x + delta)`.
/// Success means the attack term sits at `-tau` at the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn isa_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    targets: &[usize],
    eps: &[f64],
    lambdas: &[f64],
    cfg: &IsaConfig,
) -> Result<Vec<AttackOutcome<T>>> {
    cfg.validate()?;
    let x = as_batch(net, x)?;
    let n = x.batch();
    check_labels(net, labels, n)?;
    check_labels(net, targets, n)?;
    if eps.len() != n || lambdas.len() != n {
        return Err(Error::invalid("one radius and one weight per example required"));
    }
    if let Some(i) = (0..n).find(|&i| labels[i] == targets[i]) {
        return Err(Error::invalid(format!("ISA target equals the true label at example {i}")));
    }
    let sets: Vec<ClassSet> = (0..n).map(|i| cfg.measure.class_set(labels[i], targets[i])).collect();
    let interp = cfg.measure.interpreter;
    let benign = benign_maps(net, &x, interp)?;
    let objective = |g: &mut Graph<T>, bound: &Bound, xv: Var, rows: &[usize]| -> Result<Var> {
        let (d, logits) = discrepancy_to(
            g,
            net,
            bound,
            xv,
            &benign.select_rows(rows),
            &pick(&sets, rows),
            cfg.measure.norm,
            interp,
        )?;
        let h = hinge_var(g, logits, &pick(targets, rows), -cfg.tau)?;
        let lam = g.constant(Tensor::new(vec![rows.len()], rows.iter().map(|&r| lit(lambdas[r])).collect())?);
        let h = g.mul(h, lam)?;
        let loss = g.add(h, d)?;
        Ok(g.scale(loss, -T::one()))
    };
    let steps: Vec<f64> = eps.iter().map(|e| (e * cfg.step_fraction).max(f64::MIN_POSITIVE)).collect();
    let (x_adv, traces) = ascend(net, &x, eps, &steps, cfg.steps, None, &objective)?;
    let traces = traces.into_iter().map(|t| t.into_iter().map(|v| -v).collect()).collect();
    let mut out = outcomes(net, &x_adv, traces, |i, row| {
        let gap = runner_up_gap(row, targets[i]);
        (gap <= -cfg.tau, gap)
    })?;
    let d = batch_discrepancy(net, &x, &x_adv, &sets, cfg.measure.norm, interp)?;
    for (i, o) in out.iter_mut().enumerate() {
        o.discrepancy = Some(d[i]);
        o.lambda_used = Some(lambdas[i]);
    }
    Ok(out)
}

pub fn isa<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    target: usize,
    eps: f64,
    lambda: f64,
    cfg: &IsaConfig,
) -> Result<AttackOutcome<T>> {
    Ok(isa_batch(net, x, &[y], &[target], &[eps], &[lambda], cfg)?.remove(0))
}

/// Vectorized bisection on a weight whose success predicate is assumed
/// monotone. `run(active, lambdas)` evaluates the examples in `active` at
/// the given weights and returns `Some(outcome)` on success. Each example
/// ends with the outcome at its smallest successful weight, or an error
/// if `hi` itself fails.
pub fn bisect_lambda<O>(
    n: usize,
    lo: f64,
    hi: f64,
    iters: usize,
    mut run: impl FnMut(&[usize], &[f64]) -> Result<Vec<Option<O>>>,
) -> Result<Vec<Result<(f64, O)>>> {
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::invalid(format!("bad weight range [{lo}, {hi}]")));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut best: Vec<Option<(f64, O)>> = (0..n).map(|_| None).collect();
    let mut upper = vec![hi; n];
    let mut lower = vec![lo; n];
    for (i, o) in all.iter().zip(run(&all, &vec![hi; n])?) {
        if let Some(o) = o {
            best[*i] = Some((hi, o));
        }
    }
    let mut active: Vec<usize> = all.iter().copied().filter(|&i| best[i].is_some()).collect();
    if !active.is_empty() {
        let res = run(&active, &vec![lo; active.len()])?;
        let mut still = Vec::new();
        for (&i, o) in active.iter().zip(res) {
            match o {
                Some(o) => best[i] = Some((lo, o)),
                None => still.push(i),
            }
        }
        active = still;
    }
    for _ in 0..iters {
        if active.is_empty() {
            break;
        }
        let mids: Vec<f64> = active.iter().map(|&i| 0.5 * (lower[i] + upper[i])).collect();
        for ((&i, o), &m) in active.iter().zip(run(&active, &mids)?).zip(&mids) {
            match o {
                Some(o) => {
                    upper[i] = m;
                    best[i] = Some((m, o));
                }
                None => lower[i] = m,
            }
        }
    }
    Ok(best
        .into_iter()
        .map(|b| {
            b.ok_or_else(|| {
                Error::AttackFailed(format!(
                    "no successful attack at weight {hi}; increase the radius or the upper weight"
                ))
            })
        })
        .collect())
}

/// ISA at the smallest successful weight in `lambda_range`, per example.
#[allow(clippy::too_many_arguments)]
pub fn isa_bisect_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    targets: &[usize],
    eps: &[f64],
    lambda_range: (f64, f64),
    iters: usize,
    cfg: &IsaConfig,
) -> Result<Vec<Result<AttackOutcome<T>>>> {
    let x = as_batch(net, x)?;
    let res = bisect_lambda(x.batch(), lambda_range.0, lambda_range.1, iters, |active, lambdas| {
        let out = isa_batch(
            net,
            &x.select_rows(active),
            &pick(labels, active),
            &pick(targets, active),
            &pick(eps, active),
            lambdas,
            cfg,
        )?;
        Ok(out.into_iter().map(|o| o.success.then_some(o)).collect())
    })?;
    Ok(res.into_iter().map(|r| r.map(|(_, o)| o)).collect())
}

#[allow(clippy::too_many_arguments)]
pub fn isa_bisect<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    y: usize,
    target: usize,
    eps: f64,
    lambda_range: (f64, f64),
    iters: usize,
    cfg: &IsaConfig,
) -> Result<AttackOutcome<T>> {
    isa_bisect_batch(net, x, &[y], &[target], &[eps], lambda_range, iters, cfg)?.remove(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AaiObjective {
    /// Maximize the l1 one-class CAM discrepancy at the true label.
    L1OneClass,
    /// Push down the benign top-k CAM cells at the true label.
    TopK(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AaiConfig {
    pub eps: f64,
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    pub objective: AaiObjective,
    /// Uniform random start in the ball, seeded per example.
    pub rand_init: Option<u64>,
}

impl AaiConfig {
    pub fn new(eps: f64) -> Self {
        AaiConfig {
            eps,
            lambda: 1.0,
            steps: 200,
            step_size: 0.01,
            objective: AaiObjective::TopK(8),
            rand_init: Some(0),
        }
    }
}

/// Top-`k` cell indices of a map, ties broken by lower index.
pub fn top_k(values: &[impl Scalar], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

/// AAI on correctly classified examples: signed-gradient descent on
/// `lambda * max{max_{j != y} f_j - f_y, 0} - D(x, x + delta)`. Success
/// means the prediction is still `y` at the final iterate; the reported
/// discrepancy is the l1 one-class CAM discrepancy.
pub fn aai_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AaiConfig,
) -> Result<Vec<AttackOutcome<T>>> {
    AttackConfig::new(cfg.eps, cfg.steps, cfg.step_size)?;
    let x = as_batch(net, x)?;
    let n = x.batch();
    check_labels(net, labels, n)?;
    let preds = net.predict(&x, CHUNK)?;
    if let Some(i) = (0..n).find(|&i| preds[i] != labels[i]) {
        return Err(Error::invalid(format!(
            "AAI needs correctly classified inputs; example {i} is predicted {} instead of {}",
            preds[i], labels[i]
        )));
    }
    let benign = benign_maps(net, &x, Interpreter::Cam)?;
    let (c, u) = (net.num_classes(), net.spatial_units());
    let sets: Vec<ClassSet> = labels.iter().map(|&y| ClassSet::OneClass(y)).collect();
    let mask = match cfg.objective {
        AaiObjective::L1OneClass => None,
        AaiObjective::TopK(k) => {
            if k == 0 || k > u {
                return Err(Error::invalid(format!("top-k needs 1 <= k <= {u}, got {k}")));
            }
            let mut m = vec![T::zero(); n * c * u];
            for (i, &y) in labels.iter().enumerate() {
                let base = (i * c + y) * u;
                for j in top_k(&benign.data()[base..base + u], k) {
                    m[base + j] = T::one();
                }
            }
            Some(Tensor::new(vec![n, c, u], m)?)
        }
    };
    let objective = |g: &mut Graph<T>, bound: &Bound, xv: Var, rows: &[usize]| -> Result<Var> {
        let fv = net.forward_vars(g, bound, xv)?;
        let h = hinge_var(g, fv.logits, &pick(labels, rows), 0.0)?;
        let h = g.scale(h, lit(cfg.lambda));
        let interp_term = match &mask {
            None => {
                let maps = interpret::cam_var(g, net, bound, &fv)?;
                let m0 = g.constant(benign.select_rows(rows));
                let d = discrepancy_var(g, m0, maps, fv.logits, &pick(&sets, rows), Norm::L1)?;
                g.scale(d, -T::one())
            }
            Some(mask) => {
                let maps = interpret::cam_var(g, net, bound, &fv)?;
                let mv = g.constant(mask.select_rows(rows));
                let sel = g.mul(maps, mv)?;
                let s = g.sum_last(sel);
                g.sum_last(s)
            }
        };
        let loss = g.add(h, interp_term)?;
        Ok(g.scale(loss, -T::one()))
    };
    let (x_adv, traces) = ascend(net, &x, &vec![cfg.eps; n], &vec![cfg.step_size; n], cfg.steps, cfg.rand_init, &objective)?;
    let traces = traces.into_iter().map(|t| t.into_iter().map(|v| -v).collect()).collect();
    let mut out = outcomes(net, &x_adv, traces, |i, row| {
        (crate::tensor::argmax(row) == labels[i], -runner_up_gap(row, labels[i]))
    })?;
    let d = batch_discrepancy(net, &x, &x_adv, &sets, Norm::L1, Interpreter::Cam)?;
    for (o, d) in out.iter_mut().zip(d) {
        o.discrepancy = Some(d);
        o.lambda_used = Some(cfg.lambda);
    }
    Ok(out)
}

pub fn aai<T: Scalar>(net: &Network<T>, x: &Tensor<T>, y: usize, cfg: &AaiConfig) -> Result<AttackOutcome<T>> {
    Ok(aai_batch(net, x, &[y], cfg)?.remove(0))
}

pub const MIN_EPS_TOLERANCE: f64 = 1e-3;

/// Smallest radius (to within `tol`) at which untargeted PGD with `cfg`'s
/// steps and step size misclassifies, searched in `[0, upper]`. Already
/// misclassified examples get 0.
pub fn min_eps_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    upper: f64,
    tol: f64,
) -> Result<Vec<Result<f64>>> {
    min_eps_margin_batch(net, x, labels, cfg, upper, tol, 0.0)
}

/// As [`min_eps_batch`], but success also requires the adversarial margin
/// `f_y - max_{j != y} f_j` to reach `-margin`.
pub fn min_eps_margin_batch<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
    upper: f64,
    tol: f64,
    margin: f64,
) -> Result<Vec<Result<f64>>> {
    if !(margin >= 0.0) {
        return Err(Error::invalid(format!("required margin must be >= 0, got {margin}")));
    }
    let x = as_batch(net, x)?;
    let n = x.batch();
    check_labels(net, labels, n)?;
    if !(upper > 0.0 && tol > 0.0) {
        return Err(Error::invalid("radius search needs upper > 0 and tol > 0"));
    }
    let preds = net.predict(&x, CHUNK)?;
    let mut lo = vec![0.0; n];
    let mut hi = vec![upper; n];
    let mut result: Vec<Option<Result<f64>>> = (0..n).map(|_| None).collect();
    let mut active: Vec<usize> = Vec::new();
    for i in 0..n {
        if preds[i] != labels[i] {
            result[i] = Some(Ok(0.0));
        } else {
            active.push(i);
        }
    }
    let run = |active: &[usize], eps: &[f64]| -> Result<Vec<bool>> {
        let out = pgd_radii(net, &x.select_rows(active), &pick(labels, active), None, eps, cfg)?;
        Ok(out.iter().map(|o| o.success && o.margin <= -margin).collect())
    };
    if !active.is_empty() {
        let ok = run(&active, &vec![upper; active.len()])?;
        let mut still = Vec::new();
        for (&i, s) in active.iter().zip(ok) {
            if s {
                still.push(i);
            } else {
                result[i] = Some(Err(Error::AttackFailed(format!(
                    "PGD does not misclassify example {i} by margin {margin} at radius {upper}"
                ))));
            }
        }
        active = still;
    }
    while !active.is_empty() && hi[active[0]] - lo[active[0]] > tol {
        let mids: Vec<f64> = active.iter().map(|&i| 0.5 * (lo[i] + hi[i])).collect();
        for ((&i, s), m) in active.iter().zip(run(&active, &mids)?).zip(mids) {
            if s {
                hi[i] = m;
            } else {
                lo[i] = m;
            }
        }
    }
    for i in active {
        result[i] = Some(Ok(hi[i]));
    }
    Ok(result.into_iter().map(|r| r.expect("every example resolved")).collect())
}

pub fn min_eps<T: Scalar>(net: &Network<T>, x: &Tensor<T>, y: usize, cfg: &AttackConfig, upper: f64) -> Result<f64> {
    min_eps_batch(net, x, &[y], cfg, upper, MIN_EPS_TOLERANCE)?.remove(0)
}
