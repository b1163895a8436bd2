//! Scratch probe: weight-matching recovery rates across instance types.

use rebasin_core::baselines::{weight_matching, WeightMatchingConfig};
use rebasin_core::mlp::{train_mlp, MlpTrainConfig, TaskSpec};
use rebasin_core::rng::{substream, substream_indexed};
use rebasin_core::weight_space::{
    apply_action, Activation, PermutationSequence, WeightSpaceVector,
};
use rand::Rng;

fn main() {
    let cfg = WeightMatchingConfig::default();

    for dims in [vec![1usize, 4, 4, 1], vec![1, 32, 32, 1]] {
        let mut rng = substream(42, "wm-random");
        let mut hits = 0;
        let n = 40;
        for _ in 0..n {
            let v = WeightSpaceVector::<f64>::random(&dims, Activation::Sine, 1.0, &mut rng);
            let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let res = weight_matching(&v, &apply_action(&g, &v), &cfg).unwrap();
            if res.perm == g.transpose_inverse() {
                hits += 1;
            }
        }
        println!("random weights dims {dims:?}: {hits}/{n} recovered");
    }

    // trained sine INRs
    let mut hits = 0;
    let n = 20;
    let mut rng = substream(7, "wm-trained");
    for i in 0..n {
        let a = rng.gen_range(0.5..10.0);
        let task = TaskSpec::<f32>::sine_wave(a, 128);
        let tcfg = MlpTrainConfig { steps: 1000, lr: 5e-3, weight_decay: 0.0 };
        let (v, _) =
            train_mlp(&[1, 32, 32, 1], Activation::Sine, 1000 + i, &task, &tcfg).unwrap();
        let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
        let res = weight_matching(&v, &apply_action(&g, &v), &cfg).unwrap();
        if res.perm == g.transpose_inverse() {
            hits += 1;
        }
    }
    println!("trained 32-wide INRs: {hits}/{n} recovered");
}
