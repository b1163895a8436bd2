//! Weight-space vectors, the hidden-unit permutation group, and the
//! alignment objective.
//!
//! # Permutation convention
//!
//! A permutation is stored as an index array with `perm[i] = j` meaning
//! **row `i` of the aligned object is row `j` of the original**; as a matrix
//! this is `P[i, perm[i]] = 1`, and applying it to a matrix `W` computes
//! `(P W)[i, :] = W[perm[i], :]` (a row gather). Every use of a permutation
//! in this crate goes through this one convention.
//!
//! For an `M`-layer MLP with widths `d_0..d_M`, a group element is a
//! sequence of `M-1` such permutations, one per hidden layer. Acting on
//! weights `v = [W_m, b_m]`:
//!
//! ```text
//! W'_1 = P_1 W_1          b'_m = P_m b_m   (m < M)
//! W'_m = P_m W_m P_{m-1}ᵀ  b'_M = b_M
//! W'_M = W_M P_{M-1}ᵀ
//! ```
//!
//! which leaves the network function unchanged. Alignment seeks the group
//! element `k` minimizing `‖v - k#v'‖²` over all weight and bias entries.
//! Note that undoing a scramble `v' = t#v` requires `k = tᵀ`, the group
//! inverse, not `t` itself.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WeightSpaceError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("brute-force search space {0} exceeds limit {1}")]
    SearchTooLarge(f64, f64),
}

/// Pointwise activation of the input networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sine,
    Tanh,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Sine => x.sin(),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sine => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sine),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One layer's parameters: `w` is `d_m x d_{m-1}`, `b` is `d_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S: Scalar> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

/// All parameters of one MLP, the point `v` in weight space.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpaceVector<S: Scalar> {
    dims: Vec<usize>,
    layers: Vec<Layer<S>>,
    activation: Activation,
}

impl<S: Scalar> WeightSpaceVector<S> {
    pub fn new(dims: Vec<usize>, layers: Vec<Layer<S>>, activation: Activation) -> Self {
        assert!(dims.len() >= 3, "need at least one hidden layer (M >= 2)");
        assert_eq!(layers.len(), dims.len() - 1, "layer count must be M");
        for (m, layer) in layers.iter().enumerate() {
            assert_eq!(
                layer.w.dim(),
                (dims[m + 1], dims[m]),
                "W_{} shape inconsistent with dims",
                m + 1
            );
            assert_eq!(layer.b.len(), dims[m + 1], "b_{} length inconsistent", m + 1);
        }
        WeightSpaceVector { dims, layers, activation }
    }

    /// I.i.d. uniform entries in `[-scale, scale]`; generic test weights.
    pub fn random<R: Rng>(
        dims: &[usize],
        activation: Activation,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let layers = (0..dims.len() - 1)
            .map(|m| Layer {
                w: Array2::from_shape_fn((dims[m + 1], dims[m]), |_| {
                    S::cast(rng.gen_range(-scale..scale))
                }),
                b: Array1::from_shape_fn(dims[m + 1], |_| {
                    S::cast(rng.gen_range(-scale..scale))
                }),
            })
            .collect();
        WeightSpaceVector::new(dims.to_vec(), layers, activation)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Self {
        let layers = (0..dims.len() - 1)
            .map(|m| Layer {
                w: Array2::zeros((dims[m + 1], dims[m])),
                b: Array1::zeros(dims[m + 1]),
            })
            .collect();
        WeightSpaceVector::new(dims.to_vec(), layers, activation)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Number of affine layers `M`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Widths of the permutable hidden layers `d_1..d_{M-1}`.
    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<S>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn set_activation(&mut self, a: Activation) {
        self.activation = a;
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn iter_params(&self) -> impl Iterator<Item = S> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().copied().chain(l.b.iter().copied()))
    }

    pub fn map(&self, f: impl Fn(S) -> S + Copy) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { w: l.w.mapv(f), b: l.b.mapv(f) })
            .collect();
        WeightSpaceVector::new(self.dims.clone(), layers, self.activation)
    }

    /// Entrywise combination of two same-shaped vectors.
    pub fn zip(&self, other: &Self, f: impl Fn(S, S) -> S + Copy) -> Self {
        assert!(self.same_dims(other), "zip: dims mismatch");
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| Layer {
                w: ndarray::Zip::from(&a.w).and(&b.w).map_collect(|&x, &y| f(x, y)),
                b: ndarray::Zip::from(&a.b).and(&b.b).map_collect(|&x, &y| f(x, y)),
            })
            .collect();
        WeightSpaceVector::new(self.dims.clone(), layers, self.activation)
    }

    pub fn sq_norm(&self) -> S {
        self.iter_params().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter_params().all(|x| x.is_finite())
    }

    pub fn to_f64(&self) -> WeightSpaceVector<f64> {
        let layers = self
            .layers
            .iter()
            .map(|l| Layer { w: l.w.mapv(|x| x.as_f64()), b: l.b.mapv(|x| x.as_f64()) })
            .collect();
        WeightSpaceVector::new(self.dims.clone(), layers, self.activation)
    }
}

/// A group element: one permutation per hidden layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSequence {
    perms: Vec<Vec<usize>>,
}

impl PermutationSequence {
    /// Wraps raw index arrays; each must be a bijection on its length.
    pub fn new(perms: Vec<Vec<usize>>) -> Self {
        for (m, p) in perms.iter().enumerate() {
            assert!(is_bijection(p), "perms[{m}] is not a bijection: {p:?}");
        }
        PermutationSequence { perms }
    }

    pub fn identity(hidden_dims: &[usize]) -> Self {
        PermutationSequence { perms: hidden_dims.iter().map(|&d| (0..d).collect()).collect() }
    }

    pub fn random<R: Rng>(hidden_dims: &[usize], rng: &mut R) -> Self {
        let perms = hidden_dims
            .iter()
            .map(|&d| {
                let mut p: Vec<usize> = (0..d).collect();
                p.shuffle(rng);
                p
            })
            .collect();
        PermutationSequence { perms }
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.perms.iter().map(|p| p.len()).collect()
    }

    pub fn layer_count(&self) -> usize {
        self.perms.len()
    }

    pub fn is_identity(&self) -> bool {
        self.perms.iter().all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }

    pub fn matches_dims(&self, dims: &[usize]) -> bool {
        let hidden = &dims[1..dims.len() - 1];
        self.perms.len() == hidden.len()
            && self.perms.iter().zip(hidden).all(|(p, &d)| p.len() == d)
    }

    /// Group product: per-layer matrix product `P_m P'_m`. In index form,
    /// the result gathers first through `self`, then through `other`.
    pub fn compose(&self, other: &PermutationSequence) -> PermutationSequence {
        assert_eq!(
            self.hidden_dims(),
            other.hidden_dims(),
            "compose: dims mismatch"
        );
        let perms = self
            .perms
            .iter()
            .zip(&other.perms)
            .map(|(p, q)| p.iter().map(|&i| q[i]).collect())
            .collect();
        PermutationSequence { perms }
    }

    /// Group inverse `gᵀ`: each index array inverted as a bijection.
    pub fn transpose_inverse(&self) -> PermutationSequence {
        let perms = self
            .perms
            .iter()
            .map(|p| {
                let mut inv = vec![0; p.len()];
                for (i, &j) in p.iter().enumerate() {
                    inv[j] = i;
                }
                inv
            })
            .collect();
        PermutationSequence { perms }
    }

    /// Dense matrix of layer `m` under the `P[i, perm[i]] = 1` convention.
    pub fn dense_matrix<S: Scalar>(&self, m: usize) -> Array2<S> {
        let p = &self.perms[m];
        let mut mat = Array2::zeros((p.len(), p.len()));
        for (i, &j) in p.iter().enumerate() {
            mat[(i, j)] = S::one();
        }
        mat
    }
}

fn is_bijection(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &j in p {
        if j >= p.len() || seen[j] {
            return false;
        }
        seen[j] = true;
    }
    true
}

/// Validating constructor used by file readers.
pub fn try_permutation(perms: Vec<Vec<usize>>) -> Result<PermutationSequence, WeightSpaceError> {
    for (m, p) in perms.iter().enumerate() {
        if !is_bijection(p) {
            return Err(WeightSpaceError::DimMismatch(format!(
                "perms[{m}] is not a bijection"
            )));
        }
    }
    Ok(PermutationSequence::new(perms))
}

/// Applies the group action `g # v`.
pub fn apply_action<S: Scalar>(
    g: &PermutationSequence,
    v: &WeightSpaceVector<S>,
) -> WeightSpaceVector<S> {
    assert!(
        g.matches_dims(v.dims()),
        "apply_action: permutation incompatible with dims {:?}",
        v.dims()
    );
    let m_layers = v.depth();
    let layers = v
        .layers()
        .iter()
        .enumerate()
        .map(|(idx, layer)| {
            let m = idx + 1; // 1-based layer number
            let row_perm = if m < m_layers { Some(&g.perms[m - 1]) } else { None };
            let col_perm = if m > 1 { Some(&g.perms[m - 2]) } else { None };
            let (rows, cols) = layer.w.dim();
            let w = Array2::from_shape_fn((rows, cols), |(i, j)| {
                let si = row_perm.map_or(i, |p| p[i]);
                let sj = col_perm.map_or(j, |p| p[j]);
                layer.w[(si, sj)]
            });
            let b = Array1::from_shape_fn(rows, |i| {
                let si = row_perm.map_or(i, |p| p[i]);
                layer.b[si]
            });
            Layer { w, b }
        })
        .collect();
    WeightSpaceVector::new(v.dims().to_vec(), layers, v.activation())
}

/// The alignment energy `‖v - k#v'‖²`, weights and biases summed equally.
pub fn alignment_objective<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
    k: &PermutationSequence,
) -> S {
    assert!(v.same_dims(v_prime), "alignment_objective: dims mismatch");
    assert!(k.matches_dims(v.dims()), "alignment_objective: perm/dims mismatch");
    let m_layers = v.depth();
    let mut total = S::zero();
    for (idx, (a, b)) in v.layers().iter().zip(v_prime.layers()).enumerate() {
        let m = idx + 1;
        let row_perm = if m < m_layers { Some(&k.perms[m - 1]) } else { None };
        let col_perm = if m > 1 { Some(&k.perms[m - 2]) } else { None };
        let (rows, cols) = a.w.dim();
        for i in 0..rows {
            let si = row_perm.map_or(i, |p| p[i]);
            for j in 0..cols {
                let sj = col_perm.map_or(j, |p| p[j]);
                let d = a.w[(i, j)] - b.w[(si, sj)];
                total = total + d * d;
            }
            let d = a.b[i] - b.b[si];
            total = total + d * d;
        }
    }
    total
}

/// Exhaustive minimizer of the alignment objective; the test oracle for
/// every other method. Ties break to the lexicographically smallest
/// permutation sequence.
pub fn brute_force_align<S: Scalar>(
    v: &WeightSpaceVector<S>,
    v_prime: &WeightSpaceVector<S>,
) -> Result<(PermutationSequence, S), WeightSpaceError> {
    if !v.same_dims(v_prime) {
        return Err(WeightSpaceError::DimMismatch(format!(
            "{:?} vs {:?}",
            v.dims(),
            v_prime.dims()
        )));
    }
    let hidden = v.hidden_dims();
    let space: f64 = hidden.iter().map(|&d| factorial(d)).product();
    const LIMIT: f64 = 1e6;
    if space > LIMIT {
        return Err(WeightSpaceError::SearchTooLarge(space, LIMIT));
    }

    // All permutations per layer, in lexicographic order.
    let options: Vec<Vec<Vec<usize>>> = hidden.iter().map(|&d| all_permutations(d)).collect();
    let mut index = vec![0usize; hidden.len()];
    let mut best: Option<(Vec<usize>, S)> = None;
    loop {
        let candidate = PermutationSequence {
            perms: index
                .iter()
                .zip(&options)
                .map(|(&i, opts)| opts[i].clone())
                .collect(),
        };
        let obj = alignment_objective(v, v_prime, &candidate);
        // strict improvement keeps the lexicographically first optimum
        if best.as_ref().map_or(true, |(_, b)| obj < *b) {
            best = Some((index.clone(), obj));
        }
        // odometer, last layer fastest: lexicographic order over the product
        let mut pos = index.len();
        loop {
            if pos == 0 {
                let (idx, obj) = best.unwrap();
                let perm = PermutationSequence {
                    perms: idx
                        .iter()
                        .zip(&options)
                        .map(|(&i, opts)| opts[i].clone())
                        .collect(),
                };
                return Ok((perm, obj));
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < options[pos].len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Permutations of `0..n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                current.push(j);
                rec(n, current, used, out);
                current.pop();
                used[j] = false;
            }
        }
    }
    current.clear();
    rec(n, &mut current, &mut used, &mut out);
    out
}

// ── Channelled features over weight space ───────────────────────────────

/// Per-summand feature tensors over a weight space, `c` channels per
/// parameter. Boundary axes that are never permuted (`d_0` of `W_1`, `d_M`
/// of `W_M` and `b_M`) are folded into the channel dimension, so every `w`
/// entry is a flattened `rows x cols` grid with grid sides taken from
/// `grids` (boundary sides collapse to 1).
#[derive(Debug, Clone)]
pub struct FeatureStack<T> {
    /// Flattened `grid.0 * grid.1` x channels matrix per affine layer.
    pub w: Vec<T>,
    /// `grid.0` x channels matrix per affine layer (`1 x c` for the last).
    pub b: Vec<T>,
    /// Logical `(rows, cols)` of each `w` grid.
    pub grids: Vec<(usize, usize)>,
}

impl<T> FeatureStack<T> {
    pub fn layer_count(&self) -> usize {
        self.w.len()
    }
}

/// Activation-space features: one `d_m x c` matrix per hidden layer.
#[derive(Debug, Clone)]
pub struct ActivationFeatures<S: Scalar> {
    pub mats: Vec<Tensor<S>>,
}

/// Lifts raw weights to a 1-channel feature stack with folded boundaries.
pub fn lift_features<S: Scalar>(v: &WeightSpaceVector<S>) -> FeatureStack<Tensor<S>> {
    let m_layers = v.depth();
    let mut w = Vec::with_capacity(m_layers);
    let mut b = Vec::with_capacity(m_layers);
    let mut grids = Vec::with_capacity(m_layers);
    for (idx, layer) in v.layers().iter().enumerate() {
        let m = idx + 1;
        let (dr, dc) = layer.w.dim();
        if m == 1 {
            // rows d_1, singleton col axis, d_0 folded into channels
            grids.push((dr, 1));
            w.push(Tensor::new(layer.w.clone()));
        } else if m == m_layers {
            // singleton row axis, cols d_{M-1}, d_M folded into channels
            grids.push((1, dc));
            w.push(Tensor::new(layer.w.t().as_standard_layout().to_owned()));
        } else {
            grids.push((dr, dc));
            let flat = layer.w.iter().copied().collect();
            w.push(Tensor::from_vec(dr * dc, 1, flat));
        }
        if m == m_layers {
            b.push(Tensor::from_vec(1, layer.b.len(), layer.b.to_vec()));
        } else {
            b.push(Tensor::from_vec(layer.b.len(), 1, layer.b.to_vec()));
        }
    }
    FeatureStack { w, b, grids }
}

/// Applies `g` to a feature stack: permutes grid rows/cols of each summand
/// the same way the action permutes the underlying weights. Used to state
/// equivariance in tests.
pub fn permute_features<S: Scalar>(
    g: &PermutationSequence,
    feats: &FeatureStack<Tensor<S>>,
) -> FeatureStack<Tensor<S>> {
    let m_layers = feats.layer_count();
    let mut w = Vec::with_capacity(m_layers);
    let mut b = Vec::with_capacity(m_layers);
    for idx in 0..m_layers {
        let m = idx + 1;
        let row_perm = if m < m_layers { Some(&g.perms()[m - 1]) } else { None };
        let col_perm = if m > 1 { Some(&g.perms()[m - 2]) } else { None };
        let (rows, cols) = feats.grids[idx];
        let src = feats.w[idx].array();
        let c = src.ncols();
        let mut dst = Array2::zeros((rows * cols, c));
        for i in 0..rows {
            let si = row_perm.map_or(i, |p| p[i]);
            for j in 0..cols {
                let sj = col_perm.map_or(j, |p| p[j]);
                for ch in 0..c {
                    dst[(i * cols + j, ch)] = src[(si * cols + sj, ch)];
                }
            }
        }
        w.push(Tensor::new(dst));

        let bsrc = feats.b[idx].array();
        let mut bdst = Array2::zeros(bsrc.dim());
        for i in 0..bsrc.nrows() {
            let si = row_perm.map_or(i, |p| p[i]);
            for ch in 0..bsrc.ncols() {
                bdst[(i, ch)] = bsrc[(si, ch)];
            }
        }
        b.push(Tensor::new(bdst));
    }
    FeatureStack { w, b, grids: feats.grids.clone() }
}

/// Maps a feature stack to activation space by taking its bias components
/// for the hidden layers `m = 1..M-1`.
pub fn extract_bias_features<S: Scalar>(
    feats: &FeatureStack<Tensor<S>>,
) -> ActivationFeatures<S> {
    let hidden = feats.layer_count() - 1;
    ActivationFeatures { mats: feats.b[..hidden].to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn tiny() -> WeightSpaceVector<f64> {
        // M=2, dims (2,2,1)
        WeightSpaceVector::new(
            vec![2, 2, 1],
            vec![
                Layer {
                    w: ndarray::array![[1.0, 2.0], [3.0, 4.0]],
                    b: ndarray::array![5.0, 6.0],
                },
                Layer { w: ndarray::array![[7.0, 8.0]], b: ndarray::array![9.0] },
            ],
            Activation::Tanh,
        )
    }

    #[test]
    fn identity_action_is_noop() {
        let v = tiny();
        let g = PermutationSequence::identity(v.hidden_dims());
        assert_eq!(apply_action(&g, &v), v);
    }

    #[test]
    fn swap_action_hand_example() {
        let v = tiny();
        let g = PermutationSequence::new(vec![vec![1, 0]]);
        let v2 = apply_action(&g, &v);
        assert_eq!(v2.layers()[0].w, ndarray::array![[3.0, 4.0], [1.0, 2.0]]);
        assert_eq!(v2.layers()[0].b, ndarray::array![6.0, 5.0]);
        assert_eq!(v2.layers()[1].w, ndarray::array![[8.0, 7.0]]);
        assert_eq!(v2.layers()[1].b, ndarray::array![9.0]);
    }

    #[test]
    fn compose_with_identity() {
        let mut rng = substream(1, "compose-id");
        let g = PermutationSequence::random(&[4, 3], &mut rng);
        let e = PermutationSequence::identity(&[4, 3]);
        assert_eq!(g.compose(&e), g);
        assert_eq!(e.compose(&g), g);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = substream(2, "compose-inv");
        for _ in 0..20 {
            let g = PermutationSequence::random(&[5, 4], &mut rng);
            assert!(g.compose(&g.transpose_inverse()).is_identity());
            assert!(g.transpose_inverse().compose(&g).is_identity());
        }
    }

    #[test]
    fn compose_matches_dense_matrix_product() {
        let mut rng = substream(3, "compose-dense");
        for _ in 0..20 {
            let g = PermutationSequence::random(&[2, 2], &mut rng);
            let h = PermutationSequence::random(&[2, 2], &mut rng);
            let ghc = g.compose(&h);
            for m in 0..2 {
                let dense: Array2<f64> = g.dense_matrix(m).dot(&h.dense_matrix::<f64>(m));
                assert_eq!(dense, ghc.dense_matrix::<f64>(m));
            }
        }
    }

    #[test]
    fn transpose_inverse_examples() {
        let e = PermutationSequence::identity(&[3]);
        assert_eq!(e.transpose_inverse(), e);
        let swap = PermutationSequence::new(vec![vec![1, 0]]);
        assert_eq!(swap.transpose_inverse(), swap);
        let cycle = PermutationSequence::new(vec![vec![1, 2, 0]]);
        assert_eq!(cycle.transpose_inverse(), PermutationSequence::new(vec![vec![2, 0, 1]]));
    }

    #[test]
    fn objective_zero_cases() {
        let mut rng = substream(4, "obj-zero");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 3, 1], Activation::Sine, 1.0, &mut rng);
        let e = PermutationSequence::identity(v.hidden_dims());
        assert_eq!(alignment_objective(&v, &v, &e), 0.0);

        let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
        let scrambled = apply_action(&g, &v);
        // undoing the scramble takes the group inverse
        let obj = alignment_objective(&v, &scrambled, &g.transpose_inverse());
        assert!(obj < 1e-20, "obj {obj}");
    }

    #[test]
    fn objective_matches_apply_route() {
        let mut rng = substream(5, "obj-route");
        for _ in 0..10 {
            let v = WeightSpaceVector::<f64>::random(&[2, 3, 4, 2], Activation::Relu, 1.0, &mut rng);
            let u = WeightSpaceVector::<f64>::random(&[2, 3, 4, 2], Activation::Relu, 1.0, &mut rng);
            let k = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let direct = alignment_objective(&v, &u, &k);
            let via_apply = v.zip(&apply_action(&k, &u), |a, b| a - b).sq_norm();
            assert!((direct - via_apply).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_min_over_s2_matches_brute_force() {
        let mut rng = substream(6, "obj-s2");
        for _ in 0..20 {
            let v = WeightSpaceVector::<f64>::random(&[1, 2, 1], Activation::Sine, 1.0, &mut rng);
            let u = WeightSpaceVector::<f64>::random(&[1, 2, 1], Activation::Sine, 1.0, &mut rng);
            let id = PermutationSequence::identity(&[2]);
            let swap = PermutationSequence::new(vec![vec![1, 0]]);
            let manual = alignment_objective(&v, &u, &id).min(alignment_objective(&v, &u, &swap));
            let (_, best) = brute_force_align(&v, &u).unwrap();
            assert_eq!(best, manual);
        }
    }

    #[test]
    fn brute_force_aligns_self_to_identity() {
        let mut rng = substream(7, "bf-self");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 1], Activation::Sine, 1.0, &mut rng);
        let (g, obj) = brute_force_align(&v, &v).unwrap();
        assert!(g.is_identity());
        assert_eq!(obj, 0.0);
    }

    #[test]
    fn brute_force_recovers_scramble() {
        let mut rng = substream(8, "bf-recover");
        for _ in 0..10 {
            let v = WeightSpaceVector::<f64>::random(&[1, 4, 4, 1], Activation::Sine, 1.0, &mut rng);
            let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
            let scrambled = apply_action(&g, &v);
            let (found, obj) = brute_force_align(&v, &scrambled).unwrap();
            assert_eq!(found, g.transpose_inverse());
            assert!(obj < 1e-18);
        }
    }

    #[test]
    fn brute_force_beats_identity() {
        let mut rng = substream(9, "bf-beat");
        for _ in 0..10 {
            let v = WeightSpaceVector::<f64>::random(&[1, 3, 3, 1], Activation::Sine, 1.0, &mut rng);
            let u = WeightSpaceVector::<f64>::random(&[1, 3, 3, 1], Activation::Sine, 1.0, &mut rng);
            let (_, best) = brute_force_align(&v, &u).unwrap();
            let id = PermutationSequence::identity(v.hidden_dims());
            assert!(best <= alignment_objective(&v, &u, &id));
        }
    }

    #[test]
    fn brute_force_guard_rejects_large_spaces() {
        let v = WeightSpaceVector::<f64>::zeros(&[1, 16, 16, 1], Activation::Sine);
        assert!(matches!(
            brute_force_align(&v, &v),
            Err(WeightSpaceError::SearchTooLarge(_, _))
        ));
    }

    #[test]
    fn bias_feature_extraction() {
        let v = tiny();
        let feats = lift_features(&v);
        let acts = extract_bias_features(&feats);
        assert_eq!(acts.mats.len(), 1);
        assert_eq!(acts.mats[0].as_slice(), &[5.0, 6.0]);
        assert_eq!(acts.mats[0].shape(), (2, 1));
    }

    #[test]
    fn bias_features_cover_hidden_layers_only() {
        let mut rng = substream(10, "bias-hidden");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 4, 1], Activation::Sine, 1.0, &mut rng);
        let acts = extract_bias_features(&lift_features(&v));
        assert_eq!(acts.mats.len(), 2);
        assert_eq!(acts.mats[0].rows(), 3);
        assert_eq!(acts.mats[1].rows(), 4);
    }

    #[test]
    fn bias_features_permute_with_action() {
        let mut rng = substream(11, "bias-equi");
        let v = WeightSpaceVector::<f64>::random(&[1, 3, 4, 1], Activation::Sine, 1.0, &mut rng);
        let g = PermutationSequence::random(v.hidden_dims(), &mut rng);
        let direct = extract_bias_features(&lift_features(&apply_action(&g, &v)));
        let permuted = extract_bias_features(&permute_features(&g, &lift_features(&v)));
        for (a, b) in direct.mats.iter().zip(&permuted.mats) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn lift_grid_shapes() {
        let v = WeightSpaceVector::<f64>::zeros(&[3, 4, 5, 2], Activation::Relu);
        let feats = lift_features(&v);
        assert_eq!(feats.grids, vec![(4, 1), (5, 4), (1, 5)]);
        assert_eq!(feats.w[0].shape(), (4, 3)); // d_0 folded into channels
        assert_eq!(feats.w[1].shape(), (20, 1));
        assert_eq!(feats.w[2].shape(), (5, 2)); // d_M folded into channels
        assert_eq!(feats.b[2].shape(), (1, 2));
    }
}
