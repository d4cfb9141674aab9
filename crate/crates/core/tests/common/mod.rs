#![allow(dead_code)]

use interp_robust::network::{Architecture, Network, Stage};
use interp_robust::tensor::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_ABS_FLOOR: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1]` kept at least `gap` away from zero.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn positive_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.2..2.0)).collect()).unwrap()
}

/// Worst gradient mismatch of `op` against central differences. The op's
/// output is contracted with fixed random weights so every output entry
/// carries a distinct upstream gradient.
pub fn fd_check<F>(inputs: &[Tensor<f64>], seed: u64, op: F) -> FdReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let weights = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let y = op(&mut g, &vars);
        random_tensor(&mut rng(seed), g.shape(y), 0.1)
    };
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let y = op(&mut g, &vars);
        g.value(y)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = op(&mut g, &vars);
    let w = g.constant(weights.clone());
    let prod = g.mul(y, w).unwrap();
    let s = g.sum_all(prod);
    let analytic = g.gradients(s, &vars).unwrap();

    let h = 1e-6;
    let mut report = FdReport::default();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += h;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * h;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * h);
            report.record(analytic[k].data()[i], numeric);
        }
    }
    report
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
}

impl FdReport {
    fn record(&mut self, a: f64, n: f64) {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(1e-8);
        self.checked += 1;
        self.worst_rel = self.worst_rel.max(rel);
        if abs > FD_ABS_FLOOR && rel >= FD_REL_TOL {
            self.failures += 1;
        }
    }

    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.failures += o.failures;
        self.worst_rel = self.worst_rel.max(o.worst_rel);
    }
}

/// Every differentiable op, each with an input generator, as `(name, check)`.
pub type LayerCheck = (&'static str, fn(u64) -> FdReport);

pub fn layer_checks() -> Vec<LayerCheck> {
    vec![
        ("conv2d", |s| {
            let mut r = rng(s);
            let stride = 1 + (s as usize % 2);
            let pad = s as usize % 2;
            let x = random_tensor(&mut r, &[2, 2, 5, 5], 0.05);
            let w = random_tensor(&mut r, &[3, 2, 3, 3], 0.05);
            let b = random_tensor(&mut r, &[3], 0.05);
            fd_check(&[x, w, b], s, move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap())
        }),
        ("dense", |s| {
            let mut r = rng(s);
            let x = random_tensor(&mut r, &[3, 4], 0.05);
            let w = random_tensor(&mut r, &[5, 4], 0.05);
            let b = random_tensor(&mut r, &[5], 0.05);
            fd_check(&[x, w, b], s, |g, v| g.dense(v[0], v[1], Some(v[2])).unwrap())
        }),
        ("relu", |s| {
            let x = random_tensor(&mut rng(s), &[2, 7], 0.01);
            fd_check(&[x], s, |g, v| g.relu(v[0]))
        }),
        ("max_pool", |s| {
            let x = random_tensor(&mut rng(s), &[2, 2, 4, 4], 0.01);
            fd_check(&[x], s, |g, v| g.max_pool(v[0], 2, 2).unwrap())
        }),
        ("global_avg_pool", |s| {
            let x = random_tensor(&mut rng(s), &[2, 3, 3, 3], 0.01);
            fd_check(&[x], s, |g, v| g.global_avg_pool(v[0]).unwrap())
        }),
        ("reshape", |s| {
            let x = random_tensor(&mut rng(s), &[2, 6], 0.01);
            fd_check(&[x], s, |g, v| g.reshape(v[0], &[3, 4]).unwrap())
        }),
        ("add_sub_mul", |s| {
            let mut r = rng(s);
            let a = random_tensor(&mut r, &[3, 4], 0.01);
            let b = random_tensor(&mut r, &[3, 4], 0.01);
            fd_check(&[a, b], s, |g, v| {
                let p = g.add(v[0], v[1]).unwrap();
                let m = g.sub(v[0], v[1]).unwrap();
                g.mul(p, m).unwrap()
            })
        }),
        ("scale", |s| {
            let x = random_tensor(&mut rng(s), &[5], 0.01);
            fd_check(&[x], s, |g, v| g.scale(v[0], -1.7))
        }),
        ("abs", |s| {
            let x = random_tensor(&mut rng(s), &[8], 0.01);
            fd_check(&[x], s, |g, v| g.abs(v[0]))
        }),
        ("square", |s| {
            let x = random_tensor(&mut rng(s), &[8], 0.01);
            fd_check(&[x], s, |g, v| g.square(v[0]))
        }),
        ("sqrt", |s| {
            let x = positive_tensor(&mut rng(s), &[8]);
            fd_check(&[x], s, |g, v| g.sqrt(v[0]).unwrap())
        }),
        ("clamp_min", |s| {
            let x = random_tensor(&mut rng(s), &[8], 0.3);
            fd_check(&[x], s, |g, v| g.clamp_min(v[0], 0.1))
        }),
        ("sum_last", |s| {
            let x = random_tensor(&mut rng(s), &[2, 3, 4], 0.01);
            fd_check(&[x], s, |g, v| g.sum_last(v[0]))
        }),
        ("sum_all", |s| {
            let x = random_tensor(&mut rng(s), &[3, 4], 0.01);
            fd_check(&[x], s, |g, v| g.sum_all(v[0]))
        }),
        ("softmax", |s| {
            let x = random_tensor(&mut rng(s), &[3, 5], 0.01);
            fd_check(&[x], s, |g, v| g.softmax(v[0]).unwrap())
        }),
        ("cross_entropy", |s| {
            let x = random_tensor(&mut rng(s), &[4, 5], 0.01);
            let labels = [s as usize % 5, 1, 4, 0];
            fd_check(&[x], s, move |g, v| g.cross_entropy(v[0], &labels).unwrap())
        }),
        ("masked_max", |s| {
            let x = random_tensor(&mut rng(s), &[3, 5], 0.01);
            let allowed = [true, false, true, true, false, false, true, true, true, true, true, false, false, true, true];
            fd_check(&[x], s, move |g, v| g.masked_max(v[0], &allowed).unwrap())
        }),
        ("gather", |s| {
            let x = random_tensor(&mut rng(s), &[3, 5], 0.01);
            fd_check(&[x], s, |g, v| g.gather(v[0], &[4, 0, 2]).unwrap())
        }),
        ("l1_distance", |s| {
            let mut r = rng(s);
            let a = random_tensor(&mut r, &[2, 6], 0.01);
            let b = random_tensor(&mut r, &[2, 6], 0.01);
            fd_check(&[a, b], s, |g, v| g.l1_distance(v[0], v[1]).unwrap())
        }),
        ("l2_distance", |s| {
            let mut r = rng(s);
            let a = random_tensor(&mut r, &[2, 6], 0.01);
            let b = random_tensor(&mut r, &[2, 6], 0.01);
            fd_check(&[a, b], s, |g, v| g.l2_distance(v[0], v[1]).unwrap())
        }),
    ]
}

/// Small random conv net on `[1, size, size]` inputs.
pub fn tiny_net(seed: u64, size: usize, classes: usize) -> Network<f64> {
    let arch = Architecture {
        stages: vec![
            Stage::Conv { filters: 4, kernel: 3, stride: 1, pad: 1 },
            Stage::Conv { filters: 6, kernel: 3, stride: 2, pad: 1 },
        ],
    };
    Network::new(arch, [1, size, size], classes, seed).unwrap()
}

/// Linear model: global average pooling of the raw input into a dense head.
pub fn linear_net(seed: u64, channels: usize, size: usize, classes: usize) -> Network<f64> {
    Network::new(Architecture { stages: vec![] }, [channels, size, size], classes, seed).unwrap()
}

pub fn random_image(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(vec![1, shape[0], shape[1], shape[2]], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}
