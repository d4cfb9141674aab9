//! Experiment harness: robustness sweeps, AAI rank-correlation sweeps,
//! bound-tightness deciles, NDS/NSL tables, regularization sweeps and
//! feature visualization. Every sweep renders to CSV.

use std::fmt::Write as _;

use crate::attack::{self, AaiConfig, AttackConfig, AttackOutcome, IsaConfig};
use crate::data::Dataset;
use crate::discrepancy::{self, check_prop1, kendall_tau, Measure};
use crate::error::{Error, Result};
use crate::interpret::{self, Interpreter};
use crate::network::{Architecture, Network};
use crate::tensor::{Graph, Scalar, Tensor};
use crate::train::{self, Method, TrainConfig};

/// One table: an axis (epsilons, step counts, measures, ...) and one row of
/// metric cells per axis value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub axis: String,
    pub labels: Vec<String>,
    pub metrics: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    /// Examples behind each row.
    pub samples: Vec<usize>,
    pub seed: u64,
    /// Successful attacks that violated the margin bound (expected 0).
    pub bound_violations: usize,
}

impl SweepResult {
    fn new(axis: &str, metrics: &[&str], seed: u64) -> Self {
        SweepResult {
            axis: axis.to_string(),
            labels: Vec::new(),
            metrics: metrics.iter().map(|m| m.to_string()).collect(),
            cells: Vec::new(),
            samples: Vec::new(),
            seed,
            bound_violations: 0,
        }
    }

    fn push(&mut self, label: impl ToString, row: Vec<f64>, n: usize) {
        self.labels.push(label.to_string());
        self.cells.push(row);
        self.samples.push(n);
    }

    /// Column `metric` as a vector, one entry per axis value.
    pub fn column(&self, metric: &str) -> Option<Vec<f64>> {
        let j = self.metrics.iter().position(|m| m == metric)?;
        Some(self.cells.iter().map(|r| r[j]).collect())
    }

    /// Header `axis,metric...,n`, then one row per axis value.
    pub fn to_csv(&self) -> String {
        let mut s = self.axis.clone();
        for m in &self.metrics {
            s.push(',');
            s.push_str(m);
        }
        s.push_str(",n\n");
        for ((label, row), n) in self.labels.iter().zip(&self.cells).zip(&self.samples) {
            s.push_str(label);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{n}");
        }
        s
    }
}

/// Ten quantiles (10%, 20%, ..., 100%) of the two-class discrepancy and
/// of the classification margin over successful attacks.
#[derive(Clone, Debug, PartialEq)]
pub struct DecileTable {
    pub discrepancy: [f64; 10],
    pub margin: [f64; 10],
    pub checks: Vec<discrepancy::BoundCheck>,
}

impl DecileTable {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.holds).count()
    }

    /// Median of `D / (margin / 2)` over all checks.
    pub fn median_ratio(&self) -> f64 {
        let r: Vec<f64> = self.checks.iter().map(|c| c.ratio()).collect();
        quantile(&r, 0.5)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("quantile,discrepancy,margin\n");
        for i in 0..10 {
            let _ = writeln!(s, "{},{},{}", (i + 1) as f64 / 10.0, self.discrepancy[i], self.margin[i]);
        }
        s
    }
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sampled<T: Scalar>(data: &Dataset<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    if data.is_empty() || n == 0 {
        return Err(Error::invalid("sweep needs a non-empty dataset and n >= 1"));
    }
    Ok(data.sample(n, seed))
}

fn count_violations<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    outcomes: &[AttackOutcome<T>],
) -> Result<usize> {
    let mut bad = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if !o.success {
            continue;
        }
        let x = data.images.select_rows(&[i]);
        match check_prop1(net, Interpreter::Cam, &x, &o.x_adv, data.labels[i], o.prediction) {
            Ok(c) if !c.holds => bad += 1,
            Ok(_) | Err(Error::Hypothesis(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(bad)
}

fn accuracy_after<T: Scalar>(data: &Dataset<T>, outcomes: &[AttackOutcome<T>]) -> f64 {
    let ok = outcomes.iter().zip(&data.labels).filter(|(o, &y)| o.prediction == y).count();
    ok as f64 / data.len() as f64
}

/// Accuracy under untargeted PGD per radius on the first `n` points of a
/// seeded shuffle. The zero radius gives clean accuracy.
pub fn ata_sweep<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    eps_list: &[f64],
    steps: usize,
    step_size: f64,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    let data = sampled(data, n, seed)?;
    let mut res = SweepResult::new("eps", &["ata"], seed);
    for &eps in eps_list {
        let cfg = AttackConfig::new(eps, steps, step_size)?;
        let out = attack::pgd_batch(net, &data.images, &data.labels, None, &cfg)?;
        res.bound_violations += count_violations(net, &data, &out)?;
        res.push(eps, vec![accuracy_after(&data, &out)], data.len());
    }
    Ok(res)
}

/// Accuracy under untargeted PGD per step count at a fixed radius.
pub fn multistep_sweep<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    step_list: &[usize],
    eps: f64,
    step_size: f64,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    let data = sampled(data, n, seed)?;
    let mut res = SweepResult::new("steps", &["ata"], seed);
    for &steps in step_list {
        let cfg = AttackConfig::new(eps, steps, step_size)?;
        let out = attack::pgd_batch(net, &data.images, &data.labels, None, &cfg)?;
        res.bound_violations += count_violations(net, &data, &out)?;
        res.push(steps, vec![accuracy_after(&data, &out)], data.len());
    }
    Ok(res)
}

/// Mean Kendall tau between the benign and the AAI-perturbed true-label
/// CAM, per radius, over sampled points the net classifies correctly and
/// whose label the attack keeps. Also reports how many sampled points
/// were excluded as misclassified.
pub fn aai_sweep<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    eps_list: &[f64],
    base: &AaiConfig,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    let data = sampled(data, n, seed)?;
    let preds = net.predict(&data.images, attack::CHUNK)?;
    let keep: Vec<usize> = (0..data.len()).filter(|&i| preds[i] == data.labels[i]).collect();
    if keep.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let data = data.subset(&keep);
    let excluded = n.min(preds.len()) - keep.len();
    let mut res = SweepResult::new("eps", &["tau", "excluded", "degenerate"], seed);
    for &eps in eps_list {
        let cfg = AaiConfig { eps, ..*base };
        let out = attack::aai_batch(net, &data.images, &data.labels, &cfg)?;
        let mut taus = Vec::new();
        let mut degenerate = 0;
        for (i, o) in out.iter().enumerate() {
            if !o.success {
                continue;
            }
            let y = data.labels[i];
            let a = interpret::cam(net, &data.images.select_rows(&[i]), y)?;
            let b = interpret::cam(net, &o.x_adv, y)?;
            let t = kendall_tau(&a, &b)?;
            degenerate += t.degenerate as usize;
            taus.push(t.tau);
        }
        let m = taus.len();
        res.push(eps, vec![mean(&taus), excluded as f64, degenerate as f64], m);
    }
    Ok(res)
}

/// Untargeted PGD on sampled points; for every success, the two-class l1
/// CAM discrepancy and the margin `f_y - f_t` at the benign input, where
/// `t` is the adversarial prediction.
pub fn prop1_deciles<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    cfg: &AttackConfig,
    n: usize,
    seed: u64,
) -> Result<DecileTable> {
    let data = sampled(data, n, seed)?;
    let preds = net.predict(&data.images, attack::CHUNK)?;
    let out = attack::pgd_batch(net, &data.images, &data.labels, None, cfg)?;
    decile_table(net, &data, &preds, &out)
}

/// As [`prop1_deciles`], but each point is attacked at its own minimal
/// misclassifying radius (searched up to `upper`), so `x'` sits just past
/// the decision boundary.
pub fn prop1_deciles_minimal<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    cfg: &AttackConfig,
    upper: f64,
    n: usize,
    seed: u64,
) -> Result<DecileTable> {
    let data = sampled(data, n, seed)?;
    let preds = net.predict(&data.images, attack::CHUNK)?;
    let radii = attack::min_eps_batch(net, &data.images, &data.labels, cfg, upper, attack::MIN_EPS_TOLERANCE)?;
    let usable: Vec<usize> = (0..data.len())
        .filter(|&i| matches!(radii[i], Ok(e) if e > 0.0))
        .collect();
    let data = data.subset(&usable);
    let preds: Vec<usize> = usable.iter().map(|&i| preds[i]).collect();
    let eps: Vec<f64> = usable.iter().map(|&i| *radii[i].as_ref().expect("filtered")).collect();
    let out = attack::pgd_radii(net, &data.images, &data.labels, None, &eps, cfg)?;
    decile_table(net, &data, &preds, &out)
}

fn decile_table<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    preds: &[usize],
    out: &[AttackOutcome<T>],
) -> Result<DecileTable> {
    let mut checks = Vec::new();
    for (i, o) in out.iter().enumerate() {
        if !o.success || preds[i] != data.labels[i] {
            continue;
        }
        let x = data.images.select_rows(&[i]);
        checks.push(check_prop1(net, Interpreter::Cam, &x, &o.x_adv, data.labels[i], o.prediction)?);
    }
    if checks.len() < 10 {
        return Err(Error::TooFewSamples {
            needed: 10,
            got: checks.len(),
        });
    }
    let d: Vec<f64> = checks.iter().map(|c| c.discrepancy).collect();
    let m: Vec<f64> = checks.iter().map(|c| 2.0 * c.half_margin).collect();
    let mut table = DecileTable {
        discrepancy: [0.0; 10],
        margin: [0.0; 10],
        checks,
    };
    for i in 0..10 {
        let q = (i + 1) as f64 / 10.0;
        table.discrepancy[i] = quantile(&d, q);
        table.margin[i] = quantile(&m, q);
    }
    Ok(table)
}

/// Settings of the NDS/NSL table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NdsConfig {
    /// PGD used for the minimal radius search and the target label.
    pub pgd: AttackConfig,
    pub eps_upper: f64,
    pub isa: IsaConfig,
    pub lambda_range: (f64, f64),
    pub bisect_iters: usize,
    /// Ratio of the upper to the lower radius of the slope.
    pub eps_ratio: f64,
}

impl Default for NdsConfig {
    fn default() -> Self {
        NdsConfig {
            pgd: AttackConfig::new(0.0, 200, 0.01).expect("valid"),
            eps_upper: 0.5,
            isa: IsaConfig {
                step_fraction: 0.02,
                ..IsaConfig::default()
            },
            lambda_range: (0.0, 100.0),
            bisect_iters: 10,
            eps_ratio: 1.6,
        }
    }
}

/// Mean NDS of successful minimal-weight ISAs at the minimal radius, and
/// the mean normalized slope to `eps_ratio` times that radius, for each
/// measure. The minimal radius is the smallest one at which untargeted PGD
/// misclassifies by the ISA margin `tau`; the ISA target is the PGD
/// prediction there. Failed attacks and degenerate slopes are excluded.
pub fn nds_table<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    measures: &[Measure],
    cfg: &NdsConfig,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    let data = sampled(data, n, seed)?;
    let preds = net.predict(&data.images, attack::CHUNK)?;
    let correct: Vec<usize> = (0..data.len()).filter(|&i| preds[i] == data.labels[i]).collect();
    let data = data.subset(&correct);
    let radii = attack::min_eps_margin_batch(
        net,
        &data.images,
        &data.labels,
        &cfg.pgd,
        cfg.eps_upper,
        attack::MIN_EPS_TOLERANCE,
        cfg.isa.tau,
    )?;
    let usable: Vec<usize> = (0..data.len()).filter(|&i| radii[i].is_ok()).collect();
    let data = data.subset(&usable);
    let eps_low: Vec<f64> = usable.iter().map(|&i| *radii[i].as_ref().expect("filtered")).collect();
    let eps_high: Vec<f64> = eps_low.iter().map(|e| e * cfg.eps_ratio).collect();
    let at_low = attack::pgd_radii(net, &data.images, &data.labels, None, &eps_low, &cfg.pgd)?;
    let targets: Vec<usize> = at_low.iter().map(|o| o.prediction).collect();
    let ok: Vec<usize> = (0..data.len()).filter(|&i| targets[i] != data.labels[i]).collect();
    let data = data.subset(&ok);
    let targets = attack::pick(&targets, &ok);
    let eps_low = attack::pick(&eps_low, &ok);
    let eps_high = attack::pick(&eps_high, &ok);

    let mut res = SweepResult::new("measure", &["nds", "nsl", "degenerate"], seed);
    for &measure in measures {
        let isa = IsaConfig { measure, ..cfg.isa };
        let run = |eps: &[f64]| {
            attack::isa_bisect_batch(
                net,
                &data.images,
                &data.labels,
                &targets,
                eps,
                cfg.lambda_range,
                cfg.bisect_iters,
                &isa,
            )
        };
        let low = run(&eps_low)?;
        let high = run(&eps_high)?;
        let (mut nds_vals, mut nsl_vals, mut degenerate) = (Vec::new(), Vec::new(), 0);
        for i in 0..data.len() {
            let (Ok(lo), Ok(hi)) = (&low[i], &high[i]) else {
                continue;
            };
            let spec = measure.spec(data.labels[i], targets[i])?;
            let x = data.images.select_rows(&[i]);
            let a = discrepancy::nds(&spec, net, &x, &lo.x_adv)?;
            let b = discrepancy::nds(&spec, net, &x, &hi.x_adv)?;
            degenerate += a.degenerate + b.degenerate;
            match discrepancy::nsl(a.value, b.value, eps_low[i], eps_high[i]) {
                Ok(s) => {
                    nds_vals.push(a.value);
                    nsl_vals.push(s);
                }
                Err(_) => degenerate += 1,
            }
        }
        let m = nds_vals.len();
        res.push(measure, vec![mean(&nds_vals), mean(&nsl_vals), degenerate as f64], m);
    }
    Ok(res)
}

/// Trains one interpretation-regularized network per `gamma` (starting
/// from the same initialization) and reports clean accuracy and accuracy
/// under PGD at `attack`'s radius on the test sample.
#[allow(clippy::too_many_arguments)]
pub fn gamma_sweep<T: Scalar>(
    train_data: &Dataset<T>,
    test_data: &Dataset<T>,
    gamma_list: &[f64],
    cfg: &TrainConfig,
    arch: &Architecture,
    attack_cfg: &AttackConfig,
    n: usize,
    seed: u64,
) -> Result<SweepResult> {
    let mut res = SweepResult::new("gamma", &["clean_acc", "ata"], seed);
    let test = sampled(test_data, n, seed)?;
    for &gamma in gamma_list {
        let net = Network::new(arch.clone(), train_data.image_shape(), train_data.num_classes, cfg.seed)?;
        let tc = TrainConfig {
            gamma,
            method: Method::Int,
            ..cfg.clone()
        };
        let state = train::train(net, train_data, &tc)?;
        let preds = state.network.predict(&test.images, attack::CHUNK)?;
        let clean = preds.iter().zip(&test.labels).filter(|(p, l)| p == l).count() as f64 / test.len() as f64;
        let out = attack::pgd_batch(&state.network, &test.images, &test.labels, None, attack_cfg)?;
        res.push(gamma, vec![clean, accuracy_after(&test, &out)], test.len());
    }
    Ok(res)
}

/// Mean activation of penultimate channel `k` at a single input.
pub fn channel_activation<T: Scalar>(net: &Network<T>, x: &Tensor<T>, k: usize) -> Result<f64> {
    let f = net.forward(&single(net, x)?)?.features;
    let u = net.spatial_units();
    Ok(f.data()[k * u..(k + 1) * u].iter().map(|v| v.as_f64()).sum::<f64>() / u as f64)
}

fn single<T: Scalar>(net: &Network<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
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

/// Signed-gradient ascent of the mean activation of penultimate channel
/// `neuron` from `seed_image`, pixels clamped to `[0, 1]`.
pub fn visualize_features<T: Scalar>(
    net: &Network<T>,
    seed_image: &Tensor<T>,
    neuron: usize,
    steps: usize,
    eps_step: f64,
) -> Result<Tensor<T>> {
    let k = net.feature_channels();
    if neuron >= k {
        return Err(Error::invalid(format!("neuron {neuron} out of range for {k} channels")));
    }
    let mut x = single(net, seed_image)?;
    let u = net.spatial_units();
    let mut sel = vec![T::zero(); k * u];
    for v in &mut sel[neuron * u..(neuron + 1) * u] {
        *v = T::one();
    }
    let step = T::from_f64_lossy(eps_step);
    for _ in 0..steps {
        let mut g = Graph::new();
        let bound = net.bind(&mut g, false);
        let xv = g.param(x.clone());
        let fv = net.forward_vars(&mut g, &bound, xv)?;
        let f = g.reshape(fv.features, &[1, k * u])?;
        let m = g.constant(Tensor::new(vec![1, k * u], sel.clone())?);
        let a = g.mul(f, m)?;
        let total = g.sum_all(a);
        let grad = g.gradients(total, &[xv])?.pop().expect("one gradient");
        for (v, &gi) in x.data_mut().iter_mut().zip(grad.data()) {
            if gi > T::zero() {
                *v += step;
            } else if gi < T::zero() {
                *v -= step;
            }
            *v = v.max(T::zero()).min(T::one());
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_two_class;
    use crate::discrepancy::{ClassChoice, Norm};

    fn fitted() -> (Network<f64>, Dataset<f64>) {
        let data = synth_two_class::<f64>(64, 8, 0).unwrap();
        let net = Network::<f64>::new("conv4k3s1p1".parse().unwrap(), [1, 8, 8], 2, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 25,
            batch_size: 8,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        (train::train(net, &data, &cfg).unwrap().network, data)
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(quantile(&[1.0, 2.0], 1.0), 2.0);
    }

    #[test]
    fn csv_layout() {
        let mut r = SweepResult::new("eps", &["ata"], 0);
        r.push(0.1, vec![0.5], 200);
        assert_eq!(r.to_csv(), "eps,ata,n\n0.1,0.5,200\n");
        assert_eq!(r.column("ata"), Some(vec![0.5]));
    }

    #[test]
    fn sweeps_on_synthetic_net() {
        let (net, data) = fitted();
        let ata = ata_sweep(&net, &data, &[0.0, 0.1, 0.3, 0.6], 10, 0.05, 32, 0).unwrap();
        let acc = ata.column("ata").unwrap();
        assert_eq!(acc[0], 1.0);
        assert!(acc.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(ata.bound_violations, 0);
        assert_eq!(ata.to_csv(), ata_sweep(&net, &data, &[0.0, 0.1, 0.3, 0.6], 10, 0.05, 32, 0).unwrap().to_csv());

        let ms = multistep_sweep(&net, &data, &[1, 10], 0.0, 0.05, 16, 0).unwrap();
        assert_eq!(ms.column("ata").unwrap(), vec![1.0, 1.0]);

        let aai = aai_sweep(&net, &data, &[0.0, 0.2], &AaiConfig { steps: 5, ..AaiConfig::new(0.0) }, 16, 0)
            .unwrap();
        let tau = aai.column("tau").unwrap();
        assert_eq!(tau[0], 1.0);
        assert!(tau[1] <= 1.0);

        assert!(matches!(
            prop1_deciles(&net, &data, &AttackConfig::new(0.0, 1, 0.01).unwrap(), 16, 0),
            Err(Error::TooFewSamples { .. })
        ));
        let table = prop1_deciles(&net, &data, &AttackConfig::new(1.0, 20, 0.1).unwrap(), 64, 0).unwrap();
        assert_eq!(table.violations(), 0);
        assert!(table.discrepancy.windows(2).all(|w| w[0] <= w[1]));
        assert!(table.margin.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn nds_table_runs() {
        let (net, data) = fitted();
        let cfg = NdsConfig {
            pgd: AttackConfig::new(0.0, 20, 0.05).unwrap(),
            eps_upper: 1.0,
            isa: IsaConfig {
                steps: 20,
                ..IsaConfig::default()
            },
            bisect_iters: 3,
            ..NdsConfig::default()
        };
        let measures = [
            Measure::new(ClassChoice::Two, Norm::L1, Interpreter::Cam),
            Measure::new(ClassChoice::One, Norm::L1, Interpreter::Cam),
        ];
        let t = nds_table(&net, &data, &measures, &cfg, 8, 0).unwrap();
        assert_eq!(t.labels, vec!["cam-l1-2class", "cam-l1-1class"]);
        for row in &t.cells {
            assert!(row[0].is_nan() || row[0] >= 0.0);
        }
    }

    #[test]
    fn feature_visualization_raises_activation() {
        let (net, data) = fitted();
        let x = data.images.select_rows(&[0]);
        assert_eq!(visualize_features(&net, &x, 0, 0, 0.01).unwrap(), x);
        assert!(visualize_features(&net, &x, 4, 1, 0.01).is_err());
        for k in 0..4 {
            let before = channel_activation(&net, &x, k).unwrap();
            let y = visualize_features(&net, &x, k, 10, 0.02).unwrap();
            assert!(channel_activation(&net, &y, k).unwrap() >= before);
        }
    }

    #[test]
    fn gamma_zero_row_matches_normal() {
        let data = synth_two_class::<f64>(16, 6, 1).unwrap();
        let arch: Architecture = "conv4k3s1p1".parse().unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            inner_steps: 2,
            warmup_steps: 0,
            eps_final: 0.1,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let pgd = AttackConfig::new(0.1, 5, 0.02).unwrap();
        let sweep = gamma_sweep(&data, &data, &[0.0], &cfg, &arch, &pgd, 16, 0).unwrap();
        let normal = train::train(
            Network::new(arch.clone(), [1, 6, 6], 2, 0).unwrap(),
            &data,
            &TrainConfig {
                method: Method::Normal,
                ..cfg.clone()
            },
        )
        .unwrap()
        .network;
        let test = data.sample(16, 0);
        let p = normal.predict(&test.images, 16).unwrap();
        let clean = p.iter().zip(&test.labels).filter(|(a, b)| a == b).count() as f64 / 16.0;
        assert_eq!(sweep.cells[0][0], clean);
    }
}
