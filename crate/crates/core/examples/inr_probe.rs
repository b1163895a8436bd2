//! Scratch probe: sine-INR fit quality and wall time across frequencies,
//! learning rates, and step counts. Run with --release.

use rebasin_core::mlp::{train_mlp, task_loss, MlpTrainConfig, TaskSpec};
use rebasin_core::weight_space::Activation;
use std::time::Instant;

fn main() {
    let dims = [1usize, 32, 32, 1];
    for &(lr, steps) in &[(1e-4, 2000), (5e-3, 1000)] {
        let mut line = format!("lr {lr:>7} steps {steps:>5}: ");
        let t0 = Instant::now();
        for &a in &[0.5, 1.0, 2.0, 5.0, 8.0, 10.0] {
            let task = TaskSpec::<f32>::sine_wave(a, 128);
            let eval = TaskSpec::<f32>::sine_wave_eval(a, 100);
            let cfg = MlpTrainConfig { steps, lr, weight_decay: 0.0 };
            match train_mlp(&dims, Activation::Sine, 11, &task, &cfg) {
                Ok((v, train_loss)) => {
                    let ev = task_loss(&v, &eval, None).unwrap();
                    line += &format!("a={a}: {train_loss:.1e}/{ev:.1e}  ");
                }
                Err(e) => line += &format!("a={a}: DIVERGED({e})  "),
            }
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("{line} [{dt:.1}s for 6 fits]");
    }
}
