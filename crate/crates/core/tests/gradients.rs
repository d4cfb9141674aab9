mod common;

use common::{fd_check, layer_checks, random_tensor, rng};

#[test]
fn every_layer_matches_finite_differences() {
    for (name, check) in layer_checks() {
        for seed in 0..20 {
            let r = check(seed);
            assert!(r.checked > 0, "{name}");
            assert_eq!(r.failures, 0, "{name} seed {seed}: worst rel err {}", r.worst_rel);
        }
    }
}

#[test]
fn composed_network_matches_finite_differences() {
    for seed in 0..5 {
        let net = common::tiny_net(seed, 6, 3);
        let x = common::random_image(&mut rng(seed), [1, 6, 6]);
        let r = fd_check(&[x], seed, |g, v| {
            let bound = net.bind(g, false);
            let fv = net.forward_vars(g, &bound, v[0]).unwrap();
            g.cross_entropy(fv.logits, &[seed as usize % 3]).unwrap()
        });
        assert_eq!(r.failures, 0, "worst rel err {}", r.worst_rel);
    }
}

#[test]
fn broadcasting_free_ops_reject_shape_mismatch() {
    let mut g = interp_robust::Graph32::new();
    let a = g.param(random_tensor(&mut rng(0), &[2, 3], 0.1).cast());
    let b = g.param(random_tensor(&mut rng(1), &[3, 2], 0.1).cast());
    assert!(g.add(a, b).is_err());
    assert!(g.l1_distance(a, b).is_err());
}
