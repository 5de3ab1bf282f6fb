use logictree_wasm::{gradient_decay_curve, mixture_heatmap, MotifDemo};

#[test]
fn heatmap_of_a_pass_through_gate_is_a() {
    let mut z = [0.0; 16];
    z[3] = 60.0;
    let out = mixture_heatmap(&z, 5).unwrap();
    assert_eq!(out.len(), 25 + 16);
    for i in 0..5 {
        for j in 0..5 {
            assert!((out[i * 5 + j] - i as f64 / 4.0).abs() < 1e-9);
        }
    }
    assert!((out[25 + 3] - 1.0).abs() < 1e-9);
}

#[test]
fn residual_curve_decays_slower() {
    let g = gradient_decay_curve("gaussian", 6, 64, 1).unwrap();
    let r = gradient_decay_curve("residual", 6, 64, 1).unwrap();
    assert_eq!(g.len(), 7);
    assert!(r[6] > g[6] * 10.0, "{r:?} vs {g:?}");
}

#[test]
fn motif_demo_trains_and_classifies() {
    let mut demo = MotifDemo::new(2).unwrap();
    let before = demo.train(1);
    let after = demo.train(60);
    assert!(after < before);
    assert_eq!(demo.step(), 61);
    let stats: serde_json::Value = serde_json::from_str(&demo.stats()).unwrap();
    assert!(stats["gates_after"].as_u64().unwrap() <= stats["gates_before"].as_u64().unwrap());
    let sample = demo.sample(0);
    assert_eq!(sample.len(), 65);
    assert_eq!(demo.classify(&sample[..64]).unwrap().len(), 3);
}
