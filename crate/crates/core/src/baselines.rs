//! The compared alignment methods: naive averaging, weight matching,
//! activation matching, and Sinkhorn re-basin.

use crate::assignment::{round_mats, sinkhorn_project_var, solve_lap_max};
use crate::mlp::{
    forward_with_activations, lerp_weights_var, lift_weights, relaxed_action, task_loss_var,
    MlpError, TapedWeights, TaskSpec,
};
use crate::optim::{adamw_step, AdamConfig, AdamState};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::weight_space::{alignment_objective, PermutationSequence, WeightSpaceVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dims mismatch: {0:?} vs {1:?}")]
    DimsMismatch(Vec<usize>, Vec<usize>),
    #[error("empty probe set")]
    EmptyProbes,
    #[error(transparent)]
    Assignment(#[from] crate::assignment::AssignmentError),
    #[error(transparent)]
    Task(#[from] MlpError),
    #[error("optimization diverged: {0}")]
    Diverged(String),
}

/// Output of one alignment run.
#[derive(Debug, Clone)]
pub struct AlignResult {
    pub perm: PermutationSequence,
    /// Alignment energy of `perm`, recomputed from the inputs.
    pub objective: f64,
    pub wall_time: f64,
    pub iterations: usize,
    /// Per-step losses for iterative methods.
    pub loss_trace: Vec<f64>,
}

impl AlignResult {
    fn from_perm<S: Scalar>(
        v: &WeightSpaceVector<S>,
        v_prime: &WeightSpaceVector<S>,
        perm: PermutationSequence,
        started: Instant,
        iterations: usize,
        loss_trace: Vec<f64>,
    ) -> Self {
        let objective = alignment_objective(v, v_prime, &perm).as_f64();
        AlignResult {
            perm,
            objective,
            wall_time: started.elapsed().as_secs_f64(),
            iterations,
            loss_trace,
        }
    }
}

fn check_dims<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
) -> Result<(), BaselineError> {
    if !v.same_dims(v_prime) {
        return Err(BaselineError::DimsMismatch(
            v.dims().to_vec(),
            v_prime.dims().to_vec(),
        ));
    }
    Ok(())
}

/// No alignment: the identity permutation.
pub fn naive<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
) -> Result<AlignResult, BaselineError> {
    let started = Instant::now();
    check_dims(v, v_prime)?;
    let perm = PermutationSequence::identity(v.hidden_dims());
    Ok(AlignResult::from_perm(v, v_prime, perm, started, 0, Vec::new()))
}

#[derive(Debug, Clone, Copy)]
pub struct WeightMatchingConfig {
    pub max_sweeps: usize,
    pub seed: u64,
    /// Include the bias outer-product term in the layer cost.
    pub include_bias: bool,
}

impl Default for WeightMatchingConfig {
    fn default() -> Self {
        WeightMatchingConfig { max_sweeps: 20, seed: 0, include_bias: true }
    }
}

/// Coordinate ascent over hidden layers: each visit solves a linear
/// assignment on the cost built from the two adjacent weight matrices
/// (and the bias outer product), holding the other layers fixed. Layer
/// order is re-shuffled every sweep from the seeded stream; stops at the first
/// sweep that changes nothing.
pub fn weight_matching<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
    cfg: &WeightMatchingConfig,
) -> Result<AlignResult, BaselineError> {
    let started = Instant::now();
    check_dims(v, v_prime)?;
    let hidden = v.hidden_dims().to_vec();
    let n_hidden = hidden.len();
    let mut perms = PermutationSequence::identity(&hidden);
    let mut rng = substream(cfg.seed, "wm-layer-order");
    let mut trace = vec![alignment_objective(v, v_prime, &perms).as_f64()];

    let mut sweeps = 0;
    for _ in 0..cfg.max_sweeps {
        let mut order: Vec<usize> = (0..n_hidden).collect();
        order.shuffle(&mut rng);
        let mut changed = false;
        for &h in &order {
            let cost = wm_layer_cost(v, v_prime, &perms, h, cfg.include_bias);
            let new_p = solve_lap_max(&cost)?;
            if new_p != perms.perms()[h] {
                let mut raw = perms.perms().to_vec();
                raw[h] = new_p;
                perms = PermutationSequence::new(raw);
                changed = true;
            }
        }
        sweeps += 1;
        let obj = alignment_objective(v, v_prime, &perms).as_f64();
        let prev = *trace.last().unwrap();
        debug_assert!(
            obj <= prev * (1.0 + 1e-6) + 1e-9,
            "objective increased across sweep: {prev} -> {obj}"
        );
        trace.push(obj);
        if !changed {
            break;
        }
    }
    Ok(AlignResult::from_perm(v, v_prime, perms, started, sweeps, trace))
}

/// Cost matrix for hidden layer `h` (0-based): entry `[i, l]` scores
/// matching unit `i` of `v` with unit `l` of `v_prime`, given the current
/// permutations of the neighboring layers.
fn wm_layer_cost<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
    perms: &PermutationSequence,
    h: usize,
    include_bias: bool,
) -> Tensor<S> {
    let n_hidden = perms.layer_count();
    let d = v.dims()[h + 1];
    let w_in = &v.layers()[h].w; // d x d_{h}
    let wp_in = &v_prime.layers()[h].w;
    let w_out = &v.layers()[h + 1].w; // d_{h+2} x d
    let wp_out = &v_prime.layers()[h + 1].w;

    // incoming term: sum_k W[i,k] W'[l, p_prev(k)]
    let prev = if h > 0 { Some(&perms.perms()[h - 1]) } else { None };
    let wp_in_aligned = match prev {
        Some(p) => {
            Array2::from_shape_fn(wp_in.dim(), |(l, k)| wp_in[(l, p[k])])
        }
        None => wp_in.clone(),
    };
    let mut cost = w_in.dot(&wp_in_aligned.t());

    // outgoing term: sum_i W_out[i,j] W'_out[p_next(i), l]
    let next = if h + 1 < n_hidden { Some(&perms.perms()[h + 1]) } else { None };
    let wp_out_aligned = match next {
        Some(p) => Array2::from_shape_fn(wp_out.dim(), |(i, l)| wp_out[(p[i], l)]),
        None => wp_out.clone(),
    };
    cost = cost + w_out.t().dot(&wp_out_aligned);

    if include_bias {
        let b = &v.layers()[h].b;
        let bp = &v_prime.layers()[h].b;
        for i in 0..d {
            for l in 0..d {
                cost[(i, l)] = cost[(i, l)] + b[i] * bp[l];
            }
        }
    }
    Tensor::new(cost)
}

/// Per-layer linear assignment on activation outer products over a probe
/// set; layers are solved independently.
pub fn activation_matching<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
    probes: &Array2<S>,
) -> Result<AlignResult, BaselineError> {
    let started = Instant::now();
    check_dims(v, v_prime)?;
    if probes.nrows() == 0 {
        return Err(BaselineError::EmptyProbes);
    }
    let (acts, _) = forward_with_activations(v, probes);
    let (acts_p, _) = forward_with_activations(v_prime, probes);
    let mats: Vec<Tensor<S>> = acts
        .iter()
        .zip(&acts_p)
        .map(|(a, ap)| Tensor::new(a.t().dot(ap)))
        .collect();
    let perm = round_mats(&mats)?;
    Ok(AlignResult::from_perm(v, v_prime, perm, started, 1, Vec::new()))
}

#[derive(Debug, Clone)]
pub struct SinkhornRebasinConfig {
    pub iters: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub tau: f64,
    pub sinkhorn_iters: usize,
    /// Optional initial logits, one square matrix per hidden layer
    /// (zeros when absent: the uniform doubly stochastic start).
    pub init: Option<Vec<Tensor<f64>>>,
}

impl Default for SinkhornRebasinConfig {
    fn default() -> Self {
        SinkhornRebasinConfig {
            iters: 1000,
            lr: 0.1,
            batch: 64,
            seed: 0,
            tau: 1.0,
            sinkhorn_iters: 20,
            init: None,
        }
    }
}

/// Direct optimization of relaxed permutations against the task loss on
/// the line segment between the models: per step, sample `lambda` and a
/// minibatch, evaluate the loss of `lambda v + (1-lambda) S(X) # v'`, and
/// step the unconstrained logits `X` with AdamW. Rounds the final relaxed
/// stack with one exact assignment per layer.
pub fn sinkhorn_rebasin<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
    task: &TaskSpec<S>,
    cfg: &SinkhornRebasinConfig,
) -> Result<AlignResult, BaselineError> {
    let started = Instant::now();
    check_dims(v, v_prime)?;
    let hidden = v.hidden_dims().to_vec();

    let mut params: Vec<Tensor<S>> = match &cfg.init {
        Some(init) => {
            assert_eq!(init.len(), hidden.len(), "init size mismatch");
            init.iter()
                .zip(&hidden)
                .map(|(x, &d)| {
                    assert_eq!(x.shape(), (d, d), "init shape mismatch");
                    Tensor::new(x.array().mapv(|z| S::cast(z)))
                })
                .collect()
        }
        None => hidden.iter().map(|&d| Tensor::zeros(d, d)).collect(),
    };
    let mut state = AdamState::new(&params);
    let adam = AdamConfig { lr: cfg.lr, ..Default::default() };
    let mut rng = substream(cfg.seed, "sinkhorn-rebasin");
    let mut trace = Vec::with_capacity(cfg.iters);

    for step in 0..cfg.iters {
        let lambda: f64 = rng.gen_range(0.0..1.0);
        let idx: Vec<usize> = if task.len() <= cfg.batch {
            (0..task.len()).collect()
        } else {
            (0..cfg.batch).map(|_| rng.gen_range(0..task.len())).collect()
        };
        let batch = task.subset(&idx)?;

        let tape: Tape<S> = Tape::new();
        let x_vars: Vec<Var<S>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let qs: Vec<Var<S>> = x_vars
            .iter()
            .map(|x| sinkhorn_project_var(x, cfg.tau, cfg.sinkhorn_iters))
            .collect();
        let vw = lift_weights(&tape, v, false);
        let vpw = lift_weights(&tape, v_prime, false);
        let aligned = relaxed_action(&qs, &vpw);
        let merged = lerp_weights_var(lambda, &vw, &aligned);
        let loss = task_loss_var(&tape, &merged, v.activation(), &batch);
        let loss_val = loss.item().as_f64();
        if !loss_val.is_finite() {
            return Err(BaselineError::Diverged(format!(
                "non-finite loss at iteration {step}"
            )));
        }
        trace.push(loss_val);
        let grads = tape
            .backward(&loss)
            .map_err(|e| BaselineError::Diverged(e.to_string()))?;
        let grad_list: Vec<Tensor<S>> = x_vars.iter().map(|x| grads.of(x)).collect();
        adamw_step(&mut params, &grad_list, &mut state, &adam)
            .map_err(|e| BaselineError::Diverged(e.to_string()))?;
    }

    let mats: Vec<Tensor<S>> = params
        .iter()
        .map(|x| crate::assignment::sinkhorn_project(x, cfg.tau, cfg.sinkhorn_iters))
        .collect();
    let perm = round_mats(&mats)?;
    Ok(AlignResult::from_perm(v, v_prime, perm, started, cfg.iters, trace))
}
