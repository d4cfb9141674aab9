//! Interpretation-discrepancy measures, the margin lower-bound check,
//! normalized discrepancy/slope scores and Kendall's tau-b.

use crate::error::{Error, Result};
use crate::interpret::{self, InterpMap, Interpreter};
use crate::network::Network;
use crate::tensor::{lit, Graph, Scalar, Tensor, Var};

/// Which class maps enter a discrepancy, for one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassSet {
    OneClass(usize),
    /// True label and target label; they must differ.
    TwoClass(usize, usize),
    AllClass,
    /// Half weight on the true label plus half the softmax-weighted sum over
    /// the other classes, softmax taken over the perturbed logits.
    SoftmaxWeighted(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    fn of(self, diff: impl Iterator<Item = f64>) -> f64 {
        match self {
            Norm::L1 => diff.map(f64::abs).sum(),
            Norm::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscrepancySpec {
    pub class_set: ClassSet,
    pub norm: Norm,
    pub interpreter: Interpreter,
}

impl DiscrepancySpec {
    pub fn new(class_set: ClassSet, norm: Norm, interpreter: Interpreter) -> Result<Self> {
        if let ClassSet::TwoClass(y, t) = class_set {
            if y == t {
                return Err(Error::invalid(format!("two-class measure needs distinct labels, got {y} twice")));
            }
        }
        if !interpreter.is_class_dependent() && matches!(class_set, ClassSet::SoftmaxWeighted(_)) {
            return Err(Error::invalid(
                "the class-free representation cannot be softmax-weighted over classes",
            ));
        }
        Ok(DiscrepancySpec {
            class_set,
            norm,
            interpreter,
        })
    }

    /// The 2-class l1 measure with `interpreter`.
    pub fn two_class_l1(y: usize, target: usize, interpreter: Interpreter) -> Result<Self> {
        Self::new(ClassSet::TwoClass(y, target), Norm::L1, interpreter)
    }
}

/// Class-set shape of a measure, before labels are known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassChoice {
    One,
    Two,
    All,
    SoftmaxWeighted,
}

/// A discrepancy measure template, instantiated per example with labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Measure {
    pub classes: ClassChoice,
    pub norm: Norm,
    pub interpreter: Interpreter,
}

impl Measure {
    pub fn new(classes: ClassChoice, norm: Norm, interpreter: Interpreter) -> Self {
        Measure {
            classes,
            norm,
            interpreter,
        }
    }

    pub fn class_set(&self, y: usize, target: usize) -> ClassSet {
        match self.classes {
            ClassChoice::One => ClassSet::OneClass(y),
            ClassChoice::Two => ClassSet::TwoClass(y, target),
            ClassChoice::All => ClassSet::AllClass,
            ClassChoice::SoftmaxWeighted => ClassSet::SoftmaxWeighted(y),
        }
    }

    pub fn spec(&self, y: usize, target: usize) -> Result<DiscrepancySpec> {
        DiscrepancySpec::new(self.class_set(y, target), self.norm, self.interpreter)
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let classes = match self.classes {
            ClassChoice::One => "1class",
            ClassChoice::Two => "2class",
            ClassChoice::All => "allclass",
            ClassChoice::SoftmaxWeighted => "softmax",
        };
        let norm = match self.norm {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        };
        write!(f, "{}-{norm}-{classes}", self.interpreter)
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    /// `<interpreter>-<l1|l2>-<1class|2class|allclass|softmax>`, e.g. `cam-l1-2class`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let [interp, norm, classes] = parts.as_slice() else {
            return Err(Error::invalid(format!("measure `{s}` is not <interp>-<norm>-<classes>")));
        };
        let norm = match *norm {
            "l1" => Norm::L1,
            "l2" => Norm::L2,
            n => return Err(Error::invalid(format!("unknown norm `{n}`"))),
        };
        let classes = match *classes {
            "1class" => ClassChoice::One,
            "2class" => ClassChoice::Two,
            "allclass" => ClassChoice::All,
            "softmax" => ClassChoice::SoftmaxWeighted,
            c => return Err(Error::invalid(format!("unknown class set `{c}`"))),
        };
        Ok(Measure::new(classes, norm, interp.parse()?))
    }
}

/// Per-class weights `[C]` for a class set; the softmax part of
/// [`ClassSet::SoftmaxWeighted`] is excluded (only the true-label half).
fn fixed_weights(set: ClassSet, num_classes: usize) -> Result<Vec<f64>> {
    let mut w = vec![0.0; num_classes];
    let check = |c: usize| {
        if c >= num_classes {
            Err(Error::LabelOutOfRange {
                label: c,
                num_classes,
            })
        } else {
            Ok(())
        }
    };
    match set {
        ClassSet::OneClass(y) => {
            check(y)?;
            w[y] = 1.0;
        }
        ClassSet::TwoClass(y, t) => {
            check(y)?;
            check(t)?;
            if y == t {
                return Err(Error::invalid("two-class measure needs distinct labels"));
            }
            w[y] = 0.5;
            w[t] = 0.5;
        }
        ClassSet::AllClass => w.fill(1.0 / num_classes as f64),
        ClassSet::SoftmaxWeighted(y) => {
            check(y)?;
            w[y] = 0.5;
        }
    }
    Ok(w)
}

/// Row-wise per-class distances `[B, C']` between two `[B, C', L]` map stacks.
pub fn class_distances_var<T: Scalar>(g: &mut Graph<T>, maps_x: Var, maps_xp: Var, norm: Norm) -> Result<Var> {
    let d = g.sub(maps_x, maps_xp)?;
    match norm {
        Norm::L1 => {
            let a = g.abs(d);
            Ok(g.sum_last(a))
        }
        Norm::L2 => {
            let s = g.square(d);
            let s = g.sum_last(s);
            g.sqrt(s)
        }
    }
}

/// Discrepancy per example, `[B]`, from benign maps, perturbed maps and the
/// perturbed logits (the latter only used by the softmax-weighted set).
///
/// Map stacks are `[B, C, L]`, or `[B, 1, L]` for the class-free
/// representation, which is then evaluated once with unit weight.
pub fn discrepancy_var<T: Scalar>(
    g: &mut Graph<T>,
    maps_x: Var,
    maps_xp: Var,
    logits_xp: Var,
    sets: &[ClassSet],
    norm: Norm,
) -> Result<Var> {
    let shape = g.shape(maps_x).to_vec();
    if shape.len() != 3 || shape[0] != sets.len() {
        return Err(Error::ShapeMismatch {
            op: "discrepancy",
            left: shape,
            right: vec![sets.len()],
        });
    }
    let (b, rows) = (shape[0], shape[1]);
    let dist = class_distances_var(g, maps_x, maps_xp, norm)?;
    if rows == 1 {
        if sets.iter().any(|s| matches!(s, ClassSet::SoftmaxWeighted(_))) {
            return Err(Error::invalid("class-free maps cannot be softmax-weighted"));
        }
        return g.reshape(dist, &[b]);
    }
    let mut fixed = Vec::with_capacity(b * rows);
    let mut soft_mask = Vec::with_capacity(b * rows);
    let mut any_soft = false;
    for &set in sets {
        fixed.extend(fixed_weights(set, rows)?.into_iter().map(lit::<T>));
        if let ClassSet::SoftmaxWeighted(y) = set {
            any_soft = true;
            soft_mask.extend((0..rows).map(|i| if i == y { T::zero() } else { lit(0.5) }));
        } else {
            soft_mask.extend(std::iter::repeat_n(T::zero(), rows));
        }
    }
    let fixed = g.constant(Tensor::new(vec![b, rows], fixed)?);
    let weights = if any_soft {
        let p = g.softmax(logits_xp)?;
        let mask = g.constant(Tensor::new(vec![b, rows], soft_mask)?);
        let soft = g.mul(p, mask)?;
        g.add(fixed, soft)?
    } else {
        fixed
    };
    let weighted = g.mul(dist, weights)?;
    Ok(g.sum_last(weighted))
}

fn classes_of(set: ClassSet, num_classes: usize) -> Vec<usize> {
    match set {
        ClassSet::OneClass(y) => vec![y],
        ClassSet::TwoClass(y, t) => vec![y, t],
        ClassSet::AllClass | ClassSet::SoftmaxWeighted(_) => (0..num_classes).collect(),
    }
}

/// Maps of `x` for each class in `classes` (a single map for Repr).
pub fn class_maps<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    interp: Interpreter,
    classes: &[usize],
) -> Result<Vec<InterpMap<T>>> {
    if !interp.is_class_dependent() {
        return Ok(vec![interpret::repr(net, x)?]);
    }
    classes
        .iter()
        .map(|&c| interpret::interpret(net, x, c, interp))
        .collect()
}

/// Class weights for a plain (graph-free) evaluation.
fn eval_weights<T: Scalar>(net: &Network<T>, spec: &DiscrepancySpec, xp: &Tensor<T>) -> Result<Vec<(usize, f64)>> {
    let c = net.num_classes();
    let classes = classes_of(spec.class_set, c);
    let fixed = fixed_weights(spec.class_set, c)?;
    let soft = if let ClassSet::SoftmaxWeighted(_) = spec.class_set {
        let logits = net.logits(&as_batch(xp)?)?;
        softmax_f64(logits.row(0))
    } else {
        vec![0.0; c]
    };
    Ok(classes
        .into_iter()
        .map(|i| {
            let w = match spec.class_set {
                ClassSet::SoftmaxWeighted(y) if i != y => 0.5 * soft[i],
                _ => fixed[i],
            };
            (i, w)
        })
        .collect())
}

fn as_batch<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape().len() == 3 {
        let mut s = vec![1];
        s.extend_from_slice(x.shape());
        x.clone().reshape(s)
    } else {
        Ok(x.clone())
    }
}

pub fn softmax_f64<T: Scalar>(row: &[T]) -> Vec<f64> {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v.as_f64() - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Weighted per-class distances; `normalize` divides each class difference
/// by the range of the benign map. Returns the score and the number of
/// classes skipped because their benign map had zero range.
fn evaluate<T: Scalar>(
    spec: &DiscrepancySpec,
    net: &Network<T>,
    x: &Tensor<T>,
    xp: &Tensor<T>,
    normalize: bool,
) -> Result<(f64, usize)> {
    x.check_same(xp, "discrepancy")?;
    let weights = if spec.interpreter.is_class_dependent() {
        eval_weights(net, spec, xp)?
    } else {
        if matches!(spec.class_set, ClassSet::SoftmaxWeighted(_)) {
            return Err(Error::invalid("class-free maps cannot be softmax-weighted"));
        }
        fixed_weights(spec.class_set, net.num_classes())?;
        vec![(0, 1.0)]
    };
    let classes: Vec<usize> = weights.iter().map(|&(c, _)| c).collect();
    let mx = class_maps(net, x, spec.interpreter, &classes)?;
    let mxp = class_maps(net, xp, spec.interpreter, &classes)?;
    let mut total = 0.0;
    let mut degenerate = 0;
    for ((a, b), &(_, w)) in mx.iter().zip(&mxp).zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let scale = if normalize {
            let (lo, hi) = a.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v.as_f64()), hi.max(v.as_f64()))
            });
            let range = hi - lo;
            if range <= 0.0 {
                degenerate += 1;
                continue;
            }
            1.0 / range
        } else {
            1.0
        };
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(p, q)| (p.as_f64() - q.as_f64()) * scale);
        total += w * spec.norm.of(diff);
    }
    Ok((total, degenerate))
}

/// `(1/|C|) sum_{i in C} ||I(x, i) - I(x', i)||_p`, or the softmax-weighted
/// variant, depending on the spec's class set.
pub fn generic_discrepancy<T: Scalar>(
    spec: &DiscrepancySpec,
    net: &Network<T>,
    x: &Tensor<T>,
    xp: &Tensor<T>,
) -> Result<f64> {
    Ok(evaluate(spec, net, x, xp, false)?.0)
}

/// `1/2 (||I(x,y) - I(x',y)||_1 + ||I(x,t) - I(x',t)||_1)`.
pub fn two_class_l1<T: Scalar>(
    net: &Network<T>,
    interp: Interpreter,
    x: &Tensor<T>,
    xp: &Tensor<T>,
    y: usize,
    target: usize,
) -> Result<f64> {
    generic_discrepancy(&DiscrepancySpec::two_class_l1(y, target, interp)?, net, x, xp)
}

/// Target-label-free measure: the true-label half plus the other classes'
/// distances weighted by half their softmax probability at `x'`.
pub fn softmax_weighted_discrepancy<T: Scalar>(
    net: &Network<T>,
    interp: Interpreter,
    x: &Tensor<T>,
    xp: &Tensor<T>,
    y: usize,
) -> Result<f64> {
    generic_discrepancy(
        &DiscrepancySpec::new(ClassSet::SoftmaxWeighted(y), Norm::L1, interp)?,
        net,
        x,
        xp,
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub discrepancy: f64,
    /// `1/2 (f_y(x) - f_t(x))` on the benign input.
    pub half_margin: f64,
    pub holds: bool,
}

pub const BOUND_SLACK: f64 = 1e-5;

impl BoundCheck {
    pub fn new(discrepancy: f64, half_margin: f64) -> Self {
        BoundCheck {
            discrepancy,
            half_margin,
            holds: discrepancy >= half_margin - BOUND_SLACK,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.discrepancy / self.half_margin
    }
}

/// Checks `D_{2,l1}(x, x') >= 1/2 (f_y(x) - f_t(x))` for a benign `x`
/// predicted as `y` and a perturbed `x'` predicted as `t != y`.
///
/// Predictions and margins use the full (bias-including) logits; the bias
/// cancels from the completeness identity, so the bound holds exactly for
/// completeness-bearing interpreters.
pub fn check_prop1<T: Scalar>(
    net: &Network<T>,
    interp: Interpreter,
    x: &Tensor<T>,
    xp: &Tensor<T>,
    y: usize,
    target: usize,
) -> Result<BoundCheck> {
    if matches!(interp, Interpreter::Repr | Interpreter::GradCamPp) {
        return Err(Error::Hypothesis(format!("{interp} does not satisfy completeness")));
    }
    if y == target {
        return Err(Error::Hypothesis("benign and perturbed labels coincide".into()));
    }
    let lx = net.logits(&as_batch(x)?)?;
    let lxp = net.logits(&as_batch(xp)?)?;
    let (px, pxp) = (lx.argmax_rows()[0], lxp.argmax_rows()[0]);
    if px != y || pxp != target {
        return Err(Error::Hypothesis(format!(
            "expected predictions ({y}, {target}), got ({px}, {pxp})"
        )));
    }
    let d = two_class_l1(net, interp, x, xp, y, target)?;
    let half = 0.5 * (lx.row(0)[y].as_f64() - lx.row(0)[target].as_f64());
    Ok(BoundCheck::new(d, half))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NdsScore {
    pub value: f64,
    /// Classes whose benign map had zero range and were skipped.
    pub degenerate: usize,
}

/// Discrepancy with each class difference divided by the value range of the
/// benign map for that class.
pub fn nds<T: Scalar>(spec: &DiscrepancySpec, net: &Network<T>, x: &Tensor<T>, xp: &Tensor<T>) -> Result<NdsScore> {
    let (value, degenerate) = evaluate(spec, net, x, xp, true)?;
    Ok(NdsScore { value, degenerate })
}

/// Relative change of NDS per relative change of perturbation size.
pub fn nsl(nds_low: f64, nds_high: f64, eps_low: f64, eps_high: f64) -> Result<f64> {
    if !(nds_low > 0.0) {
        return Err(Error::invalid(format!("NSL needs a positive NDS at the lower radius, got {nds_low}")));
    }
    if !(eps_low > 0.0 && eps_high > eps_low) {
        return Err(Error::invalid(format!(
            "NSL needs 0 < eps_low < eps_high, got {eps_low} and {eps_high}"
        )));
    }
    Ok(((nds_high - nds_low).abs() / nds_low) / ((eps_high - eps_low) / eps_low))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TauResult {
    pub tau: f64,
    /// Set when a map is constant and tau is undefined (reported as 0).
    pub degenerate: bool,
}

/// Kendall's tau-b with tie correction.
pub fn kendall_tau_values(a: &[f64], b: &[f64]) -> Result<TauResult> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(format!(
            "kendall tau needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i] - a[j];
            let db = b[i] - b[j];
            match (da == 0.0, db == 0.0) {
                (true, true) => {
                    ties_a += 1;
                    ties_b += 1;
                }
                (true, false) => ties_a += 1,
                (false, true) => ties_b += 1,
                (false, false) => {
                    if (da > 0.0) == (db > 0.0) {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    let denom = (((pairs - ties_a) as f64) * ((pairs - ties_b) as f64)).sqrt();
    if denom == 0.0 {
        return Ok(TauResult {
            tau: 0.0,
            degenerate: true,
        });
    }
    Ok(TauResult {
        tau: (concordant - discordant) as f64 / denom,
        degenerate: false,
    })
}

pub fn kendall_tau<T: Scalar>(a: &InterpMap<T>, b: &InterpMap<T>) -> Result<TauResult> {
    let fa: Vec<f64> = a.values.iter().map(|v| v.as_f64()).collect();
    let fb: Vec<f64> = b.values.iter().map(|v| v.as_f64()).collect();
    kendall_tau_values(&fa, &fb)
}
