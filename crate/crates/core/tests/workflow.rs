use interp_robust::attack::{min_eps, pgd_batch, AttackConfig};
use interp_robust::data::synth_two_class;
use interp_robust::discrepancy::check_prop1;
use interp_robust::eval::ata_sweep;
use interp_robust::interpret::Interpreter;
use interp_robust::network::{Architecture, Network};
use interp_robust::train::{train, Method, TrainConfig};
use interp_robust::{Dataset32, Network32};

fn trained(method: Method, gamma: f64) -> (Network32, Dataset32) {
    let data = synth_two_class::<f32>(120, 8, 3).unwrap();
    let net = Network::new(Architecture::small(), [1, 8, 8], 2, 1).unwrap();
    let cfg = TrainConfig {
        method,
        gamma,
        epochs: 3,
        batch_size: 20,
        lr: 1e-3,
        warmup_steps: 4,
        eps_final: 0.1,
        inner_steps: 3,
        ..TrainConfig::default()
    };
    (train(net, &data, &cfg).unwrap().network, data)
}

#[test]
fn int_with_zero_gamma_is_normal_training() {
    let (a, _) = trained(Method::Normal, 0.0);
    let (b, _) = trained(Method::Int, 0.0);
    assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
    let (c, _) = trained(Method::Adv, 0.0);
    let (d, _) = trained(Method::Int2Adv, 0.0);
    assert_eq!(c.to_checkpoint_bytes(), d.to_checkpoint_bytes());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (net, data) = trained(Method::Normal, 0.0);
    let cfg = AttackConfig { rand_init: true, seed: 9, ..AttackConfig::new(0.2, 10, 0.05).unwrap() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| pgd_batch(&net, &data.images, &data.labels, None, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn ata_falls_with_radius_and_bound_holds() {
    let (net, data) = trained(Method::Normal, 0.0);
    let sweep = ata_sweep(&net, &data, &[0.0, 0.1, 0.3, 0.6], 20, 0.05, 60, 0).unwrap();
    let ata = sweep.column("ata").unwrap();
    assert!(ata.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{ata:?}");

    let cfg = AttackConfig::new(0.6, 40, 0.05).unwrap();
    let outs = pgd_batch(&net, &data.images, &data.labels, None, &cfg).unwrap();
    let mut checked = 0;
    for (i, o) in outs.iter().enumerate().filter(|(_, o)| o.success) {
        let x = data.images.select_rows(&[i]);
        let b = check_prop1(&net, Interpreter::Cam, &x, &o.x_adv, data.labels[i], o.prediction).unwrap();
        assert!(b.holds, "{b:?}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn min_eps_separates_success_and_failure() {
    let (net, data) = trained(Method::Normal, 0.0);
    let cfg = AttackConfig::new(0.0, 20, 0.05).unwrap();
    for i in 0..5 {
        let x = data.images.select_rows(&[i]);
        let y = data.labels[i];
        let e = min_eps(&net, &x, y, &cfg, 1.0).unwrap();
        let at = |eps: f64| {
            let c = AttackConfig { eps, ..cfg };
            pgd_batch(&net, &x, &[y], None, &c).unwrap()[0].success
        };
        assert!(at(e));
        if e > 1e-3 {
            assert!(!at(e - 1e-3));
        }
    }
}
