//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::Path;

use interp_robust::attack::{self, AaiConfig, AaiObjective, AttackConfig, AttackOutcome, IsaConfig};
use interp_robust::data::{self, Dataset, Split};
use interp_robust::discrepancy::{kendall_tau, ClassSet, Measure, Norm};
use interp_robust::eval::{self, NdsConfig};
use interp_robust::interpret::{self, Interpreter};
use interp_robust::network::{Architecture, Network};
use interp_robust::train::{self, Method, TrainConfig, TrainOutput};
use interp_robust::Tensor32;

use crate::config::RunConfig;
use crate::{pgm, CliError};

type Net = Network<f32>;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn load_data(cfg: &RunConfig, split: Split) -> Result<Dataset<f32>, CliError> {
    let seed: u64 = cfg.or("seed", 0)?;
    match cfg.or("dataset", "idx".to_string())?.as_str() {
        "synth" => {
            let n = cfg.or("synth_n", 200)?;
            let size = cfg.or("synth_size", 8)?;
            let offset = if split == Split::Test { 1 } else { 0 };
            Ok(data::synth_two_class(n, size, seed.wrapping_add(offset))?)
        }
        "idx" => {
            let (img, lab) = match split {
                Split::Test => ("test_images", "test_labels"),
                _ => ("train_images", "train_labels"),
            };
            let ds = data::load_idx::<f32>(cfg.path(img)?, cfg.path(lab)?, split)?;
            match (split, cfg.get::<usize>("train_subset")?) {
                (Split::Train, Some(n)) => Ok(ds.sample(n, seed)),
                _ => Ok(ds),
            }
        }
        other => Err(CliError::config(format!("key `dataset`: expected `idx` or `synth`, got `{other}`"))),
    }
}

fn has_test_data(cfg: &RunConfig) -> Result<bool, CliError> {
    Ok(cfg.or("dataset", "idx".to_string())? == "synth" || cfg.has("test_images"))
}

fn accuracy(net: &Net, ds: &Dataset<f32>) -> Result<f64, CliError> {
    let p = net.predict(&ds.images, attack::CHUNK)?;
    Ok(p.iter().zip(&ds.labels).filter(|(a, b)| a == b).count() as f64 / ds.len() as f64)
}

fn train_config(cfg: &RunConfig) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        method: cfg.or("method", Method::Normal)?,
        gamma: cfg.or("gamma", d.gamma)?,
        eps_final: cfg.or("eps", d.eps_final)?,
        warmup_steps: cfg.or("warmup_steps", d.warmup_steps)?,
        inner_steps: cfg.or("inner_steps", d.inner_steps)?,
        inner_step_size: cfg.or("inner_step_size", d.inner_step_size)?,
        epochs: cfg.or("epochs", d.epochs)?,
        batch_size: cfg.or("batch_size", d.batch_size)?,
        lr: cfg.or("lr", d.lr)?,
        seed: cfg.or("seed", d.seed)?,
        checkpoint_every: cfg.or("checkpoint_every", d.checkpoint_every)?,
    })
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let ds = load_data(cfg, Split::Train)?;
    let arch: Architecture = cfg.or("arch", Architecture::small())?;
    let tc = train_config(cfg)?;
    let net = Net::new(arch, ds.image_shape(), ds.num_classes, tc.seed)?;
    let state = train::train_with(net, &ds, &tc, &TrainOutput::to(out))?;
    state.network.save(out.join("model.ckpt"))?;
    let (which, acc) = if has_test_data(cfg)? {
        ("test", accuracy(&state.network, &load_data(cfg, Split::Test)?)?)
    } else {
        ("train", accuracy(&state.network, &ds)?)
    };
    Ok(format!(
        "trained {} for {} steps; clean {which} accuracy {acc:.4}",
        tc.method, state.step
    ))
}

fn load_net(cfg: &RunConfig) -> Result<Net, CliError> {
    Ok(Net::load(cfg.path("checkpoint")?)?)
}

fn sample(cfg: &RunConfig, ds: &Dataset<f32>, default_n: usize) -> Result<Dataset<f32>, CliError> {
    Ok(ds.sample(cfg.or("n_samples", default_n)?, cfg.or("seed", 0)?))
}

fn cam_values(net: &Net, x: &Tensor32, c: usize) -> Result<Vec<f64>, CliError> {
    Ok(interpret::cam(net, x, c)?.values.iter().map(|&v| v as f64).collect())
}

fn save_pair(net: &Net, out: &Path, i: usize, x: &Tensor32, xp: &Tensor32, c: usize) -> Result<(), CliError> {
    let [_, h, w] = net.feature_shape();
    let a = cam_values(net, x, c)?;
    let b = cam_values(net, xp, c)?;
    let scale = pgm::common_max(&a, &b);
    let dir = out.join("maps");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    write(&dir.join(format!("{i}_benign_c{c}.pgm")), pgm::encode(&a, w, h, scale))?;
    write(&dir.join(format!("{i}_adv_c{c}.pgm")), pgm::encode(&b, w, h, scale))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn attack(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let kind = cfg.or("attack", "pgd".to_string())?;
    if !["pgd", "isa", "aai"].contains(&kind.as_str()) {
        return Err(CliError::config(format!("key `attack`: unknown `{kind}`")));
    }
    let eps: f64 = cfg.require("attack_eps")?;
    let net = load_net(cfg)?;
    let ds = sample(cfg, &load_data(cfg, Split::Test)?, 200)?;
    let steps = cfg.or("attack_steps", 200)?;
    let step_size = cfg.or("step_size", 0.01)?;
    let c = net.num_classes();
    let (rows, outcomes): (Vec<usize>, Vec<Option<AttackOutcome<f32>>>) = match kind.as_str() {
        "pgd" => {
            let ac = AttackConfig {
                targeted: cfg.get("target")?,
                seed: cfg.or("seed", 0)?,
                ..AttackConfig::new(eps, steps, step_size)?
            };
            let o = attack::pgd_batch(&net, &ds.images, &ds.labels, None, &ac)?;
            ((0..ds.len()).collect(), o.into_iter().map(Some).collect())
        }
        "isa" => {
            let measure: Measure = cfg.or("measure", IsaConfig::default().measure)?;
            let ic = IsaConfig {
                tau: cfg.or("tau", 0.1)?,
                steps,
                measure,
                ..IsaConfig::default()
            };
            let targets: Vec<usize> = match cfg.get::<usize>("target")? {
                Some(t) => vec![t; ds.len()],
                None => ds.labels.iter().map(|&y| (y + 1) % c).collect(),
            };
            let keep: Vec<usize> = (0..ds.len()).filter(|&i| targets[i] != ds.labels[i]).collect();
            let sub = ds.subset(&keep);
            let o = attack::isa_bisect_batch(
                &net,
                &sub.images,
                &sub.labels,
                &keep.iter().map(|&i| targets[i]).collect::<Vec<_>>(),
                &vec![eps; keep.len()],
                (0.0, cfg.or("lambda_hi", 100.0)?),
                cfg.or("bisect_iters", 10)?,
                &ic,
            )?;
            (keep, o.into_iter().map(|r| r.ok()).collect())
        }
        "aai" => {
            let objective = match cfg.or("aai_objective", "topk".to_string())?.as_str() {
                "topk" => AaiObjective::TopK(cfg.or("topk", 8)?),
                "l1" => AaiObjective::L1OneClass,
                other => return Err(CliError::config(format!("key `aai_objective`: unknown `{other}`"))),
            };
            let ac = AaiConfig {
                lambda: cfg.or("lambda", 1.0)?,
                steps,
                step_size,
                objective,
                rand_init: Some(cfg.or("seed", 0)?),
                ..AaiConfig::new(eps)
            };
            let preds = net.predict(&ds.images, attack::CHUNK)?;
            let keep: Vec<usize> = (0..ds.len()).filter(|&i| preds[i] == ds.labels[i]).collect();
            if keep.is_empty() {
                return Err(interp_robust::error::Error::TooFewSamples { needed: 1, got: 0 }.into());
            }
            let sub = ds.subset(&keep);
            let o = attack::aai_batch(&net, &sub.images, &sub.labels, &ac)?;
            (keep, o.into_iter().map(Some).collect())
        }
        other => return Err(CliError::config(format!("key `attack`: unknown `{other}`"))),
    };
    let save_maps = cfg.or("save_maps", false)?;
    let mut csv = String::from("index,label,prediction,success,margin,discrepancy,tau,lambda\n");
    let mut successes = 0;
    for (&i, o) in rows.iter().zip(&outcomes) {
        let x = ds.images.select_rows(&[i]);
        let y = ds.labels[i];
        let Some(o) = o else {
            let _ = writeln!(csv, "{i},{y},,false,,,,");
            continue;
        };
        successes += o.success as usize;
        let d = match o.discrepancy {
            Some(d) => Some(d),
            None if o.prediction != y => Some(attack::batch_discrepancy(
                &net,
                &x,
                &o.x_adv,
                &[ClassSet::TwoClass(y, o.prediction)],
                Norm::L1,
                Interpreter::Cam,
            )?[0]),
            None => None,
        };
        let tau = kendall_tau(&interpret::cam(&net, &x, y)?, &interpret::cam(&net, &o.x_adv, y)?)?.tau;
        let _ = writeln!(
            csv,
            "{i},{y},{},{},{},{},{tau},{}",
            o.prediction,
            o.success,
            o.margin,
            opt(d),
            opt(o.lambda_used)
        );
        if save_maps {
            save_pair(&net, out, i, &x, &o.x_adv, y)?;
        }
    }
    write(&out.join("attack.csv"), csv)?;
    Ok(format!("{kind}: {successes}/{} successful at eps {eps}", rows.len()))
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let net = load_net(cfg)?;
    let test = load_data(cfg, Split::Test)?;
    let seed = cfg.or("seed", 0)?;
    let n = cfg.or("n_samples", 200)?;
    let steps = cfg.or("attack_steps", 200)?;
    let step_size = cfg.or("step_size", 0.01)?;
    let eps_list = cfg.list("eps_list", &[0.0, 0.05, 0.1, 0.2, 0.3])?;
    let mut done = Vec::new();
    for sweep in cfg.list::<String>("sweeps", &["ata".to_string()])? {
        let csv = match sweep.as_str() {
            "ata" => eval::ata_sweep(&net, &test, &eps_list, steps, step_size, n, seed)?.to_csv(),
            "multistep" => {
                let list = cfg.list("step_list", &[1, 10, 100, 200])?;
                eval::multistep_sweep(&net, &test, &list, cfg.or("attack_eps", 0.3)?, step_size, n, seed)?.to_csv()
            }
            "aai" => {
                let base = AaiConfig {
                    lambda: cfg.or("lambda", 1.0)?,
                    steps,
                    step_size,
                    objective: AaiObjective::TopK(cfg.or("topk", 8)?),
                    rand_init: Some(seed),
                    ..AaiConfig::new(0.0)
                };
                eval::aai_sweep(&net, &test, &eps_list, &base, n, seed)?.to_csv()
            }
            "prop1" => {
                let ac = AttackConfig::new(cfg.or("attack_eps", 0.3)?, steps, step_size)?;
                eval::prop1_deciles(&net, &test, &ac, n, seed)?.to_csv()
            }
            "prop1-minimal" => {
                let ac = AttackConfig::new(0.0, steps, step_size)?;
                eval::prop1_deciles_minimal(&net, &test, &ac, cfg.or("eps_upper", 0.5)?, n, seed)?.to_csv()
            }
            "nds" => {
                let measures = cfg.list::<Measure>("measures", &[
                    "cam-l1-2class".parse()?,
                    "cam-l1-1class".parse()?,
                ])?;
                let nc = NdsConfig {
                    pgd: AttackConfig::new(0.0, steps, step_size)?,
                    eps_upper: cfg.or("eps_upper", 0.5)?,
                    isa: IsaConfig {
                        tau: cfg.or("tau", 0.1)?,
                        steps,
                        ..NdsConfig::default().isa
                    },
                    lambda_range: (0.0, cfg.or("lambda_hi", 100.0)?),
                    bisect_iters: cfg.or("bisect_iters", 10)?,
                    ..NdsConfig::default()
                };
                eval::nds_table(&net, &test, &measures, &nc, n, seed)?.to_csv()
            }
            "gamma" => {
                let train_data = load_data(cfg, Split::Train)?;
                let gammas = cfg.list("gamma_list", &[0.0, 0.005, 0.01])?;
                let arch: Architecture = cfg.or("arch", net.architecture().clone())?;
                let ac = AttackConfig::new(cfg.or("attack_eps", 0.3)?, steps, step_size)?;
                eval::gamma_sweep(&train_data, &test, &gammas, &train_config(cfg)?, &arch, &ac, n, seed)?.to_csv()
            }
            other => return Err(CliError::config(format!("key `sweeps`: unknown sweep `{other}`"))),
        };
        write(&out.join(format!("{sweep}.csv")), csv)?;
        done.push(sweep);
    }
    Ok(format!("wrote {} sweep(s): {}", done.len(), done.join(", ")))
}

pub fn visualize(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let net = load_net(cfg)?;
    let test = load_data(cfg, Split::Test)?;
    let idx: usize = cfg.or("image_index", 0)?;
    if idx >= test.len() {
        return Err(CliError::config(format!("key `image_index`: {idx} out of range for {} images", test.len())));
    }
    let neuron: usize = cfg.require("neuron")?;
    let x = test.images.select_rows(&[idx]);
    let y = eval::visualize_features(&net, &x, neuron, cfg.or("vis_steps", 100)?, cfg.or("vis_step", 0.01)?)?;
    let before = eval::channel_activation(&net, &x, neuron)?;
    let after = eval::channel_activation(&net, &y, neuron)?;
    let [_, h, w] = net.input_shape();
    let pixels: Vec<f64> = y.data().iter().map(|&v| v as f64).collect();
    write(&out.join(format!("feature_{neuron}.pgm")), pgm::encode(&pixels, w, h, 1.0))?;
    Ok(format!("channel {neuron}: activation {before:.4} -> {after:.4}"))
}
