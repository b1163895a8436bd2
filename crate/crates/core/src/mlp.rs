//! Forward evaluation and training of the input MLPs.
//!
//! The forward pass applies `M` affine layers with the pointwise activation
//! after layers `1..M-1`; the last layer stays linear. Classification
//! applies softmax only inside the cross-entropy loss.

use crate::optim::{adamw_step, AdamConfig, AdamState};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::weight_space::{Activation, Layer, WeightSpaceVector};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("input width {got} does not match d_0 = {want}")]
    WidthMismatch { got: usize, want: usize },
    #[error("empty data subset")]
    EmptySubset,
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("loss kind incompatible with task kind")]
    IncompatibleLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    InrRegression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone)]
pub enum Targets<S: Scalar> {
    Values(Array2<S>),
    Classes(Vec<usize>),
}

/// A task the input networks were trained on: data plus the loss under
/// which alignment quality is judged.
#[derive(Debug, Clone)]
pub struct TaskSpec<S: Scalar> {
    pub kind: TaskKind,
    pub loss: LossKind,
    pub inputs: Array2<S>,
    pub targets: Targets<S>,
}

impl<S: Scalar> TaskSpec<S> {
    pub fn new(
        kind: TaskKind,
        loss: LossKind,
        inputs: Array2<S>,
        targets: Targets<S>,
    ) -> Result<Self, MlpError> {
        let compatible = matches!(
            (kind, loss, &targets),
            (TaskKind::InrRegression, LossKind::Mse, Targets::Values(_))
                | (TaskKind::Classification, LossKind::CrossEntropy, Targets::Classes(_))
        );
        if !compatible {
            return Err(MlpError::IncompatibleLoss);
        }
        let rows = match &targets {
            Targets::Values(t) => t.nrows(),
            Targets::Classes(c) => c.len(),
        };
        assert_eq!(inputs.nrows(), rows, "input/target row mismatch");
        Ok(TaskSpec { kind, loss, inputs, targets })
    }

    /// Regression task for fitting `x -> sin(a x)` on a uniform grid over
    /// `[-pi, pi]`.
    pub fn sine_wave(a: f64, points: usize) -> Self {
        let xs: Vec<S> = (0..points)
            .map(|i| {
                let t = i as f64 / (points - 1) as f64;
                S::cast(-std::f64::consts::PI + 2.0 * std::f64::consts::PI * t)
            })
            .collect();
        let ys: Vec<S> = xs.iter().map(|&x| S::cast((x.as_f64() * a).sin())).collect();
        TaskSpec {
            kind: TaskKind::InrRegression,
            loss: LossKind::Mse,
            inputs: Array2::from_shape_vec((points, 1), xs).unwrap(),
            targets: Targets::Values(Array2::from_shape_vec((points, 1), ys).unwrap()),
        }
    }

    /// Held-out grid for the same wave: midpoints of the training grid.
    pub fn sine_wave_eval(a: f64, points: usize) -> Self {
        let step = 2.0 * std::f64::consts::PI / points as f64;
        let xs: Vec<S> = (0..points)
            .map(|i| S::cast(-std::f64::consts::PI + step * (i as f64 + 0.5)))
            .collect();
        let ys: Vec<S> = xs.iter().map(|&x| S::cast((x.as_f64() * a).sin())).collect();
        TaskSpec {
            kind: TaskKind::InrRegression,
            loss: LossKind::Mse,
            inputs: Array2::from_shape_vec((points, 1), xs).unwrap(),
            targets: Targets::Values(Array2::from_shape_vec((points, 1), ys).unwrap()),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row subset as a new task over the same kind/loss.
    pub fn subset(&self, indices: &[usize]) -> Result<TaskSpec<S>, MlpError> {
        if indices.is_empty() {
            return Err(MlpError::EmptySubset);
        }
        let inputs = self.inputs.select(Axis(0), indices);
        let targets = match &self.targets {
            Targets::Values(t) => Targets::Values(t.select(Axis(0), indices)),
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
        };
        Ok(TaskSpec { kind: self.kind, loss: self.loss, inputs, targets })
    }
}

/// Batched forward pass: `x` is `N x d_0`, result is `N x d_M`.
pub fn forward<S: Scalar>(v: &WeightSpaceVector<S>, x: &Array2<S>) -> Array2<S> {
    check_width(v, x).expect("forward width");
    let depth = v.depth();
    let mut h = x.clone();
    for (idx, layer) in v.layers().iter().enumerate() {
        h = h.dot(&layer.w.t()) + &layer.b;
        if idx + 1 < depth {
            let act = v.activation();
            h.mapv_inplace(|z| act.apply(z));
        }
    }
    h
}

/// As [`forward`], additionally returning every post-activation hidden
/// state `x_1..x_{M-1}` (each `N x d_m`).
pub fn forward_with_activations<S: Scalar>(
    v: &WeightSpaceVector<S>,
    x: &Array2<S>,
) -> (Vec<Array2<S>>, Array2<S>) {
    check_width(v, x).expect("forward width");
    let depth = v.depth();
    let mut h = x.clone();
    let mut acts = Vec::with_capacity(depth - 1);
    for (idx, layer) in v.layers().iter().enumerate() {
        h = h.dot(&layer.w.t()) + &layer.b;
        if idx + 1 < depth {
            let act = v.activation();
            h.mapv_inplace(|z| act.apply(z));
            acts.push(h.clone());
        }
    }
    (acts, h)
}

fn check_width<S: Scalar>(v: &WeightSpaceVector<S>, x: &Array2<S>) -> Result<(), MlpError> {
    if x.ncols() != v.dims()[0] {
        return Err(MlpError::WidthMismatch { got: x.ncols(), want: v.dims()[0] });
    }
    Ok(())
}

/// Mean task loss of `v` on a row subset (all rows if `None`).
pub fn task_loss<S: Scalar>(
    v: &WeightSpaceVector<S>,
    task: &TaskSpec<S>,
    subset: Option<&[usize]>,
) -> Result<S, MlpError> {
    let scoped;
    let task = match subset {
        Some(idx) => {
            scoped = task.subset(idx)?;
            &scoped
        }
        None => {
            if task.is_empty() {
                return Err(MlpError::EmptySubset);
            }
            task
        }
    };
    let pred = forward(v, &task.inputs);
    Ok(loss_value(&pred, &task.targets, task.loss))
}

fn loss_value<S: Scalar>(pred: &Array2<S>, targets: &Targets<S>, loss: LossKind) -> S {
    match (loss, targets) {
        (LossKind::Mse, Targets::Values(t)) => {
            let n = S::cast(pred.len() as f64);
            pred.iter()
                .zip(t.iter())
                .map(|(&p, &y)| (p - y) * (p - y))
                .sum::<S>()
                / n
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            let n = S::cast(pred.nrows() as f64);
            let mut total = S::zero();
            for (row, &class) in pred.rows().into_iter().zip(c.iter()) {
                let m = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
                let lse: S = row.iter().map(|&z| (z - m).exp()).sum::<S>().ln() + m;
                total = total + lse - row[class];
            }
            total / n
        }
        _ => unreachable!("TaskSpec construction enforces compatibility"),
    }
}

// ── Tape-level forward for differentiable merging ───────────────────────

/// Weights of one network lifted onto a tape: `(w, b)` per layer with `w`
/// of shape `d_m x d_{m-1}` and `b` of shape `1 x d_m`.
pub type TapedWeights<S> = Vec<(Var<S>, Var<S>)>;

pub fn lift_weights<S: Scalar>(
    tape: &Tape<S>,
    v: &WeightSpaceVector<S>,
    differentiable: bool,
) -> TapedWeights<S> {
    v.layers()
        .iter()
        .map(|layer| {
            let w = Tensor::new(layer.w.clone());
            let b = Tensor::from_vec(1, layer.b.len(), layer.b.to_vec());
            if differentiable {
                (tape.leaf(w), tape.leaf(b))
            } else {
                (tape.constant(w), tape.constant(b))
            }
        })
        .collect()
}

/// Forward pass over taped weights; gradients flow into the weight vars.
pub fn forward_var<S: Scalar>(
    weights: &TapedWeights<S>,
    activation: Activation,
    x: &Var<S>,
) -> Var<S> {
    let depth = weights.len();
    let mut h = x.clone();
    for (idx, (w, b)) in weights.iter().enumerate() {
        h = h.matmul(&w.transpose()).add_row(b);
        if idx + 1 < depth {
            h = match activation {
                Activation::Relu => h.relu(),
                Activation::Sine => h.sin(),
                Activation::Tanh => h.tanh(),
            };
        }
    }
    h
}

/// Mean task loss as a tape value.
pub fn task_loss_var<S: Scalar>(
    tape: &Tape<S>,
    weights: &TapedWeights<S>,
    activation: Activation,
    task: &TaskSpec<S>,
) -> Var<S> {
    let x = tape.constant(Tensor::new(task.inputs.clone()));
    let pred = forward_var(weights, activation, &x);
    match (&task.targets, task.loss) {
        (Targets::Values(t), LossKind::Mse) => {
            let y = tape.constant(Tensor::new(t.clone()));
            let d = pred.sub(&y);
            d.mul(&d).mean_all()
        }
        (Targets::Classes(c), LossKind::CrossEntropy) => {
            let (n, k) = (pred.rows(), pred.cols());
            let mut onehot = Tensor::zeros(n, k);
            for (i, &class) in c.iter().enumerate() {
                onehot.array_mut()[(i, class)] = S::one();
            }
            let mask = tape.constant(onehot);
            pred.row_softmax_log()
                .mul(&mask)
                .sum_all()
                .scale(-1.0 / n as f64)
        }
        _ => unreachable!("TaskSpec construction enforces compatibility"),
    }
}

/// Applies a relaxed (doubly stochastic) group element to taped weights:
/// matrix products stand in for the hard permutation gathers.
pub fn relaxed_action<S: Scalar>(qs: &[Var<S>], vp: &TapedWeights<S>) -> TapedWeights<S> {
    let depth = vp.len();
    assert_eq!(qs.len(), depth - 1, "relaxed_action: need M-1 matrices");
    (0..depth)
        .map(|idx| {
            let (w, b) = &vp[idx];
            let row_q = if idx < depth - 1 { Some(&qs[idx]) } else { None };
            let col_q = if idx > 0 { Some(&qs[idx - 1]) } else { None };
            let mut w2 = w.clone();
            if let Some(q) = row_q {
                w2 = q.matmul(&w2);
            }
            if let Some(q) = col_q {
                w2 = w2.matmul(&q.transpose());
            }
            let b2 = match row_q {
                Some(q) => b.matmul(&q.transpose()),
                None => b.clone(),
            };
            (w2, b2)
        })
        .collect()
}

/// Entrywise blend of two taped weight lists.
pub fn lerp_weights_var<S: Scalar>(
    lambda: f64,
    v: &TapedWeights<S>,
    vp: &TapedWeights<S>,
) -> TapedWeights<S> {
    assert_eq!(v.len(), vp.len());
    v.iter()
        .zip(vp)
        .map(|((wa, ba), (wb, bb))| {
            (
                wa.scale(lambda).add(&wb.scale(1.0 - lambda)),
                ba.scale(lambda).add(&bb.scale(1.0 - lambda)),
            )
        })
        .collect()
}

/// Entrywise `lambda * v + (1 - lambda) * v_prime`.
pub fn lerp_weights<S: Scalar>(
    lambda: f64,
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
) -> WeightSpaceVector<S> {
    assert!(v.same_dims(v_prime), "lerp_weights: dims mismatch");
    let l = S::cast(lambda);
    let one_m = S::cast(1.0 - lambda);
    v.zip(v_prime, |a, b| l * a + one_m * b)
}

// ── Training ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct MlpTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        MlpTrainConfig { steps: 2000, lr: 1e-3, weight_decay: 0.0 }
    }
}

/// Fresh initialization for the given architecture. Sine networks follow
/// the wide-first-layer scheme used for INR fitting; ReLU/tanh use a
/// fan-in uniform.
pub fn init_mlp<S: Scalar>(
    dims: &[usize],
    activation: Activation,
    seed: u64,
) -> WeightSpaceVector<S> {
    let mut rng = substream(seed, "mlp-init");
    let depth = dims.len() - 1;
    let layers = (0..depth)
        .map(|m| {
            let fan_in = dims[m];
            let (w_scale, b_scale) = match activation {
                // first-layer span covers wave frequencies up to ~10 without
                // leaving room to oscillate between grid points
                Activation::Sine if m == 0 => (12.0 / fan_in as f64, std::f64::consts::PI),
                Activation::Sine => ((6.0 / fan_in as f64).sqrt(), 0.0),
                _ => ((6.0 / fan_in as f64).sqrt(), 0.0),
            };
            let w = Array2::from_shape_fn((dims[m + 1], dims[m]), |_| {
                S::cast(rng.gen_range(-w_scale..w_scale))
            });
            let b = if b_scale > 0.0 {
                Array1::from_shape_fn(dims[m + 1], |_| S::cast(rng.gen_range(-b_scale..b_scale)))
            } else {
                Array1::zeros(dims[m + 1])
            };
            Layer { w, b }
        })
        .collect();
    WeightSpaceVector::new(dims.to_vec(), layers, activation)
}

/// Full-batch AdamW fit; deterministic given the seed. Returns the trained
/// weights and the final training loss.
pub fn train_mlp<S: Scalar>(
    dims: &[usize],
    activation: Activation,
    seed: u64,
    task: &TaskSpec<S>,
    cfg: &MlpTrainConfig,
) -> Result<(WeightSpaceVector<S>, f64), MlpError> {
    let mut v = init_mlp::<S>(dims, activation, seed);
    if cfg.steps == 0 {
        let loss = task_loss(&v, task, None)?.as_f64();
        return Ok((v, loss));
    }

    let mut params: Vec<Tensor<S>> = Vec::new();
    for layer in v.layers() {
        params.push(Tensor::new(layer.w.clone()));
        params.push(Tensor::from_vec(1, layer.b.len(), layer.b.to_vec()));
    }
    let mut state = AdamState::new(&params);
    let adam = AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() };

    let mut last_loss = f64::NAN;
    for step in 0..cfg.steps {
        let tape: Tape<S> = Tape::new();
        let vars: Vec<Var<S>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let weights: TapedWeights<S> = vars.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect();
        let loss = task_loss_var(&tape, &weights, activation, task);
        last_loss = loss.item().as_f64();
        if !last_loss.is_finite() {
            return Err(MlpError::Diverged { step, loss: last_loss });
        }
        let grads = tape
            .backward(&loss)
            .map_err(|_| MlpError::Diverged { step, loss: last_loss })?;
        let grad_list: Vec<Tensor<S>> = vars.iter().map(|v| grads.of(v)).collect();
        adamw_step(&mut params, &grad_list, &mut state, &adam)
            .map_err(|_| MlpError::Diverged { step, loss: last_loss })?;
    }

    for (idx, layer) in v.layers_mut().iter_mut().enumerate() {
        layer.w = params[2 * idx].array().clone();
        layer.b = Array1::from_vec(params[2 * idx + 1].as_slice().to_vec());
    }
    Ok((v, last_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_space::{apply_action, PermutationSequence};
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_output() {
        let v = WeightSpaceVector::<f64>::zeros(&[2, 3, 2], Activation::Relu);
        let x = array![[1.0, -2.0], [0.5, 0.0]];
        let y = forward(&v, &x);
        assert!(y.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn single_frequency_sine_inr_is_exact() {
        // W_1 = [[a]], rest identity-like: f(x) = sin(a x)
        let a = 2.5_f64;
        let v = WeightSpaceVector::new(
            vec![1, 1, 1],
            vec![
                Layer { w: array![[a]], b: array![0.0] },
                Layer { w: array![[1.0]], b: array![0.0] },
            ],
            Activation::Sine,
        );
        let x = array![[0.3], [-1.2], [2.0]];
        let y = forward(&v, &x);
        for (i, &xi) in [0.3, -1.2, 2.0].iter().enumerate() {
            assert!((y[(i, 0)] - (a * xi).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_invariant_under_group_action() {
        let mut rng = crate::rng::substream(30, "fwd-inv");
        for _ in 0..100 {
            let v = WeightSpaceVector::<f64>::random(&[2, 4, 3, 2], Activation::Tanh, 1.0, &mut rng);
            let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let x = Array2::from_shape_fn((3, 2), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let y1 = forward(&v, &x);
            let y2 = forward(&apply_action(&g, &v), &x);
            let diff = (&y1 - &y2).iter().fold(0.0_f64, |m, &d| m.max(d.abs()));
            assert!(diff < 1e-10, "function changed under action: {diff}");
        }
    }

    #[test]
    fn activations_permute_with_action() {
        let mut rng = crate::rng::substream(31, "act-equi");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 4, 1], Activation::Sine, 1.0, &mut rng);
        let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
        let x = Array2::from_shape_fn((5, 1), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let (acts, _) = forward_with_activations(&v, &x);
        let (acts_g, _) = forward_with_activations(&apply_action(&g, &v), &x);
        for (m, (a, ag)) in acts.iter().zip(&acts_g).enumerate() {
            assert_eq!(a.nrows(), 5);
            let perm = &g.perms()[m];
            for i in 0..a.nrows() {
                for j in 0..a.ncols() {
                    assert!((ag[(i, j)] - a[(i, perm[j])]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hidden_state_is_sigma_x_for_identityish_net() {
        let v = WeightSpaceVector::new(
            vec![1, 1, 1],
            vec![
                Layer { w: array![[1.0]], b: array![0.0] },
                Layer { w: array![[1.0]], b: array![0.0] },
            ],
            Activation::Tanh,
        );
        let x = array![[0.7], [-0.2]];
        let (acts, _) = forward_with_activations(&v, &x);
        assert_eq!(acts.len(), 1);
        assert!((acts[0][(0, 0)] - 0.7_f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_mse() {
        let task =
            TaskSpec::<f64>::new(
                TaskKind::InrRegression,
                LossKind::Mse,
                array![[0.0], [1.0]],
                Targets::Values(array![[0.0], [0.0]]),
            )
            .unwrap();
        let v = WeightSpaceVector::<f64>::zeros(&[1, 2, 1], Activation::Relu);
        assert_eq!(task_loss(&v, &task, None).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln_k() {
        let k = 5;
        let task = TaskSpec::<f64>::new(
            TaskKind::Classification,
            LossKind::CrossEntropy,
            array![[1.0], [2.0]],
            Targets::Classes(vec![0, 3]),
        )
        .unwrap();
        // zero weights -> uniform (all-zero) logits over k classes
        let v = WeightSpaceVector::<f64>::zeros(&[1, 4, k], Activation::Relu);
        let loss = task_loss(&v, &task, None).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn incompatible_loss_rejected() {
        let err = TaskSpec::<f64>::new(
            TaskKind::InrRegression,
            LossKind::CrossEntropy,
            array![[0.0]],
            Targets::Values(array![[0.0]]),
        );
        assert!(matches!(err, Err(MlpError::IncompatibleLoss)));
    }

    #[test]
    fn empty_subset_rejected() {
        let task = TaskSpec::<f64>::sine_wave(1.0, 8);
        let v = WeightSpaceVector::<f64>::zeros(&[1, 2, 1], Activation::Sine);
        assert!(matches!(
            task_loss(&v, &task, Some(&[])),
            Err(MlpError::EmptySubset)
        ));
    }

    #[test]
    fn lerp_endpoints_and_midpoint() {
        let mut rng = crate::rng::substream(32, "lerp");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 1], Activation::Sine, 1.0, &mut rng);
        let u = WeightSpaceVector::<f64>::random(&[1, 3, 1], Activation::Sine, 1.0, &mut rng);
        assert_eq!(lerp_weights(1.0, &v, &u), v);
        assert_eq!(lerp_weights(0.0, &v, &u), u);
        let neg = v.map(|x| -x);
        let mid = lerp_weights(0.5, &v, &neg);
        assert!(mid.sq_norm() < 1e-20);
    }

    #[test]
    fn lerp_commutes_with_group_action() {
        let mut rng = crate::rng::substream(33, "lerp-equi");
        let v = WeightSpaceVector::<f64>::random(&[1, 4, 1], Activation::Sine, 1.0, &mut rng);
        let u = WeightSpaceVector::<f64>::random(&[1, 4, 1], Activation::Sine, 1.0, &mut rng);
        let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
        let a = apply_action(&g, &lerp_weights(0.3, &v, &u));
        let b = lerp_weights(0.3, &apply_action(&g, &v), &apply_action(&g, &u));
        assert!(a.zip(&b, |x, y| x - y).sq_norm() < 1e-24);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let task = TaskSpec::<f64>::sine_wave(1.0, 16);
        let cfg = MlpTrainConfig { steps: 0, ..Default::default() };
        let (v, _) = train_mlp(&[1, 8, 1], Activation::Sine, 7, &task, &cfg).unwrap();
        assert_eq!(v, init_mlp::<f64>(&[1, 8, 1], Activation::Sine, 7));
    }

    #[test]
    fn two_seeds_two_views() {
        let task = TaskSpec::<f32>::sine_wave(2.0, 64);
        let cfg = MlpTrainConfig { steps: 200, lr: 1e-3, weight_decay: 0.0 };
        let (v1, _) = train_mlp(&[1, 8, 8, 1], Activation::Sine, 1, &task, &cfg).unwrap();
        let (v2, _) = train_mlp(&[1, 8, 8, 1], Activation::Sine, 2, &task, &cfg).unwrap();
        assert!(v1.zip(&v2, |a, b| a - b).sq_norm() > 1e-4, "independently trained views differ");
    }

    #[test]
    fn slow_lr_recipe_converges_below_1e2() {
        let task = TaskSpec::<f32>::sine_wave(1.0, 128);
        let cfg = MlpTrainConfig { steps: 2000, lr: 1e-4, weight_decay: 0.0 };
        let (_, train_loss) = train_mlp(&[1, 32, 32, 1], Activation::Sine, 3, &task, &cfg).unwrap();
        assert!(train_loss < 1e-2, "train loss {train_loss}");
    }

    #[test]
    fn fitted_sin2x_generalizes_below_1e3() {
        let task = TaskSpec::<f32>::sine_wave(2.0, 128);
        let cfg = MlpTrainConfig { steps: 1000, lr: 5e-3, weight_decay: 0.0 };
        let (v, _) = train_mlp(&[1, 32, 32, 1], Activation::Sine, 4, &task, &cfg).unwrap();
        let eval = TaskSpec::<f32>::sine_wave_eval(2.0, 100);
        let loss = task_loss(&v, &eval, None).unwrap();
        assert!(loss < 1e-3, "eval loss {loss}");
    }

    #[test]
    fn task_loss_invariant_under_action() {
        let mut rng = crate::rng::substream(34, "loss-inv");
        let task = TaskSpec::<f64>::sine_wave(1.5, 32);
        for _ in 0..20 {
            let v = WeightSpaceVector::<f64>::random(&[1, 5, 5, 1], Activation::Sine, 1.0, &mut rng);
            let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let l1 = task_loss(&v, &task, None).unwrap();
            let l2 = task_loss(&apply_action(&g, &v), &task, None).unwrap();
            assert!((l1 - l2).abs() < 1e-10);
        }
    }
}
