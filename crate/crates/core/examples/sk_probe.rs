//! Scratch probe: Sinkhorn re-basin recovery rate and runtime.

use rebasin_core::baselines::{sinkhorn_rebasin, SinkhornRebasinConfig};
use rebasin_core::mlp::{train_mlp, MlpTrainConfig, TaskSpec};
use rebasin_core::rng::substream;
use rebasin_core::weight_space::{
    apply_action, Activation, PermutationSequence, WeightSpaceVector,
};
use rand::Rng;
use std::time::Instant;

fn main() {
    let mut rng = substream(7, "sk-trained");
    let n = 10;
    let mut nets = Vec::new();
    for i in 0..n {
        let a = rng.gen_range(0.5..10.0);
        let task = TaskSpec::<f32>::sine_wave(a, 128);
        let tcfg = MlpTrainConfig { steps: 1000, lr: 5e-3, weight_decay: 0.0 };
        let (v, _) = train_mlp(&[1, 32, 32, 1], Activation::Sine, 2000 + i, &task, &tcfg).unwrap();
        nets.push((a, v));
    }
    for lr in [0.1, 0.3] {
        let mut hits = 0;
        let t0 = Instant::now();
        for (i, (a, v)) in nets.iter().enumerate() {
            let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let task = TaskSpec::<f32>::sine_wave(*a, 128);
            let cfg = SinkhornRebasinConfig { iters: 300, lr, seed: 50 + i as u64, ..Default::default() };
            let res = sinkhorn_rebasin(v, &apply_action(&g, v), &task, &cfg).unwrap();
            if res.perm == g.transpose_inverse() {
                hits += 1;
            } else {
                println!("  lr {lr} trial {i}: miss, obj {:.3e}", res.objective);
            }
        }
        println!(
            "lr {lr}: {hits}/{n} recovered, {:.2}s/pair",
            t0.elapsed().as_secs_f64() / n as f64
        );
    }
}
