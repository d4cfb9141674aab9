use std::path::Path;
use std::process::{Command, Output};

use interp_robust::data::{self, Dataset};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interp-robust"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = "dataset = synth\nsynth_n = 60\nepochs = 1\nbatch_size = 20\nlr = 0.001\n\
                     warmup_steps = 1\ninner_steps = 2\neps = 0.1\ncheckpoint = out/model.ckpt\n\
                     attack_eps = 0.2\nattack_steps = 5\nn_samples = 12\ntopk = 2\n";

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), format!("{SYNTH}{extra}")).unwrap();
    dir
}

#[test]
fn synthetic_train_attack_eval_visualize() {
    let dir = setup("method = int\nsweeps = ata,aai\neps_list = 0,0.2\nneuron = 3\nvis_steps = 3\n");
    let d = dir.path();
    for sub in ["train", "attack", "eval", "visualize"] {
        let o = run(d, &["--config", "run.cfg", "--out", "out", sub]);
        assert_eq!(code(&o), 0, "{sub}: {}", stderr(&o));
    }
    for f in ["model.ckpt", "metrics.csv", "attack.csv", "ata.csv", "aai.csv", "feature_3.pgm"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(d.join("out/metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,epoch,eps,loss,clean_acc\n"));
    let ata = std::fs::read_to_string(d.join("out/ata.csv")).unwrap();
    assert!(ata.starts_with("eps,ata,n\n0,"));
}

#[test]
fn every_attack_kind_writes_rows_and_maps() {
    let dir = setup("save_maps = true\n");
    let d = dir.path();
    assert_eq!(code(&run(d, &["--config", "run.cfg", "--out", "out", "train"])), 0);
    for kind in ["pgd", "isa", "aai"] {
        let cfg = format!("{SYNTH}save_maps = true\nattack = {kind}\n");
        std::fs::write(d.join(format!("{kind}.cfg")), cfg).unwrap();
        let o = run(d, &["--config", &format!("{kind}.cfg"), "--out", kind, "attack"]);
        assert_eq!(code(&o), 0, "{kind}: {}", stderr(&o));
        let csv = std::fs::read_to_string(d.join(kind).join("attack.csv")).unwrap();
        assert!(csv.starts_with("index,label,prediction,success,margin,discrepancy,tau,lambda\n"));
        assert!(csv.lines().count() > 1);
    }
    let maps: Vec<_> = std::fs::read_dir(d.join("aai/maps")).unwrap().collect();
    assert!(!maps.is_empty());
}

#[test]
fn identical_configs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b", "c"] {
        let cfg = SYNTH.replace("out/model.ckpt", &format!("{out}/model.ckpt"));
        let extra = "method = int2\nsweeps = ata,multistep\neps_list = 0,0.2\nstep_list = 1,5\n";
        std::fs::write(d.join(format!("{out}.cfg")), format!("{cfg}{extra}")).unwrap();
    }
    for out in ["a", "b"] {
        for sub in ["train", "eval"] {
            let o = run(d, &["--config", &format!("{out}.cfg"), "--out", out, sub]);
            assert_eq!(code(&o), 0, "{sub}: {}", stderr(&o));
        }
    }
    for f in ["model.ckpt", "metrics.csv", "ata.csv", "multistep.csv"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let o = run(d, &["--config", "c.cfg", "--out", "c", "--threads", "1", "train"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.join("a/model.ckpt")).unwrap(), std::fs::read(d.join("c/model.ckpt")).unwrap());
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("missing.cfg"), "dataset = idx\n").unwrap();
    let o = run(d, &["--config", "missing.cfg", "--out", "x", "train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("train_images"));

    std::fs::write(d.join("unknown.cfg"), "colour = blue\n").unwrap();
    let o = run(d, &["--config", "unknown.cfg", "--out", "x", "train"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("colour"));

    std::fs::write(d.join("attack.cfg"), format!("{SYNTH}attack = fgsm\n")).unwrap();
    let o = run(d, &["--config", "attack.cfg", "--out", "x", "attack"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));

    assert_eq!(code(&run(d, &["train"])), 1);
    assert_eq!(code(&run(d, &["--config", "missing.cfg", "frobnicate"])), 1);
}

#[test]
fn corrupted_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ds: Dataset<f32> = data::synth_two_class(10, 8, 0).unwrap();
    let (images, labels) = data::to_idx_bytes(&ds);
    let mut magic = images.clone();
    magic[3] = 0x01;
    std::fs::write(d.join("magic.idx"), magic).unwrap();
    std::fs::write(d.join("short.idx"), &images[..images.len() - 1]).unwrap();
    std::fs::write(d.join("labels.idx"), &labels).unwrap();
    std::fs::write(d.join("labels_short.idx"), &labels[..labels.len() - 2]).unwrap();
    for (img, lab) in [
        ("magic.idx", "labels.idx"),
        ("short.idx", "labels.idx"),
        ("labels.idx", "labels.idx"),
        ("nowhere.idx", "labels.idx"),
    ] {
        std::fs::write(d.join("c.cfg"), format!("train_images = {img}\ntrain_labels = {lab}\n")).unwrap();
        let o = run(d, &["--config", "c.cfg", "--out", "x", "train"]);
        assert_eq!(code(&o), 2, "{img}/{lab}: {}", stderr(&o));
    }
    std::fs::write(d.join("ckpt.bin"), b"not a checkpoint").unwrap();
    std::fs::write(d.join("a.cfg"), format!("{SYNTH}checkpoint = ckpt.bin\n").replace("checkpoint = out/model.ckpt\n", "")).unwrap();
    let o = run(d, &["--config", "a.cfg", "--out", "x", "attack"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn too_few_bound_checks_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = SYNTH.replace("attack_eps = 0.2", "attack_eps = 0.01").replace("attack_steps = 5", "attack_steps = 1");
    std::fs::write(d.join("run.cfg"), format!("{cfg}sweeps = prop1\n")).unwrap();
    assert_eq!(code(&run(d, &["--config", "run.cfg", "--out", "out", "train"])), 0);
    let o = run(d, &["--config", "run.cfg", "--out", "out", "eval"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
