mod common;

use logictree::data;
use logictree::layers::Shape;
use logictree::model::{Init, LayerSpec};
use logictree::train::{self, load_checkpoint, save_checkpoint, TrainConfig, TrainError};
use logictree::{with_threads, Network};

fn xor_setup(steps: usize) -> (Network<f32>, TrainConfig) {
    let spec = common::custom_spec(Shape::flat(2), 2, vec![LayerSpec::Random { out: 4 }, LayerSpec::Random { out: 4 }], 1.0);
    let cfg = TrainConfig { batch_size: 4, eval_interval: 50, ..TrainConfig::from_spec(&spec, steps, 0) };
    (Network::new(spec, Init::default(), 0).unwrap(), cfg)
}

#[test]
fn xor_is_learned_exactly() {
    let set = data::xor_dataset();
    let (net, cfg) = xor_setup(600);
    let r = train::fit(net, &set, &set, &cfg).unwrap();
    assert_eq!(r.best_val_acc, 1.0);
    assert_eq!(train::hard_accuracy(&r.net, &set), 1.0);
    // The best-so-far trace never decreases.
    assert!(r.best_trace.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let set = data::motif_dataset(200, 1, 3);
    let spec = common::tiny_conv_spec(4.0);
    let mut spec = spec;
    spec.input = Shape::new(1, 8, 8);
    spec.classes = 3;
    spec.layers.pop();
    spec.layers.push(LayerSpec::Random { out: 12 });
    let run = |threads| {
        with_threads(threads, || {
            let net = Network::<f32>::new(spec.clone(), Init::default(), 4).unwrap();
            let cfg = TrainConfig { batch_size: 70, eval_interval: 5, ..TrainConfig::from_spec(&spec, 10, 9) };
            train::fit(net, &set, &set, &cfg).unwrap().last_logits
        })
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.json");
    let (mut net, cfg) = xor_setup(10);
    net.logits.iter_mut().enumerate().for_each(|(i, z)| *z = i as f32 * 0.25 - 3.0);
    save_checkpoint(&path, &net, Some(&cfg), 10).unwrap();
    let (back, manifest) = load_checkpoint(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(manifest.step, 10);
    assert_eq!(manifest.config, Some(cfg));
    std::fs::write(dir.path().join("ckpt.json.bin"), [0u8; 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(TrainError::Checkpoint { .. })));
}

#[test]
fn bad_config_is_rejected() {
    let set = data::xor_dataset();
    let (net, cfg) = xor_setup(10);
    let cfg = TrainConfig { batch_size: 0, ..cfg };
    assert!(matches!(train::fit(net, &set, &set, &cfg), Err(TrainError::Config(_))));
}

#[test]
fn divergence_is_reported_with_its_step() {
    let set = data::xor_dataset();
    let (mut net, cfg) = xor_setup(10);
    net.logits[0] = f32::NAN;
    match train::fit(net, &set, &set, &cfg) {
        Err(TrainError::Diverged { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.best_step)),
    }
}
