//! The two projection primitives: exact linear assignment onto hard
//! permutations, and Sinkhorn projection onto doubly stochastic matrices.

use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::weight_space::PermutationSequence;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("assignment needs a square matrix, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("assignment input contains a non-finite entry")]
    NonFinite,
}

/// Exact maximizer of `sum_i Q[i, p(i)]` over permutations.
///
/// Solved as a min-cost assignment with an augmenting-path solver in f64,
/// then refined to the lexicographically smallest optimal permutation via
/// the tight-edge graph of the optimal duals. Deterministic for any input.
pub fn solve_lap_max<S: Scalar>(q: &Tensor<S>) -> Result<Vec<usize>, AssignmentError> {
    let (n, m) = q.shape();
    if n != m {
        return Err(AssignmentError::NotSquare(n, m));
    }
    if !q.is_finite() {
        return Err(AssignmentError::NonFinite);
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -q.get(i, j).as_f64()).collect())
        .collect();
    let (row_to_col, u, v) = jv_assign(&cost);

    // Tight edges of the optimal duals carry every optimal assignment.
    let scale = cost
        .iter()
        .flatten()
        .fold(1.0_f64, |acc, &c| acc.max(c.abs()));
    let tol = 1e-9 * scale;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| cost[i][j] - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();
    if adj.iter().map(|a| a.len()).sum::<usize>() == n {
        // unique optimum, nothing to refine
        return Ok(row_to_col);
    }
    Ok(lex_smallest_matching(&adj))
}

/// Min-cost assignment via shortest augmenting paths with dual potentials.
/// Returns (row -> col assignment, row duals, col duals) satisfying
/// `u[i] + v[j] <= cost[i][j]` with equality on assigned edges.
fn jv_assign(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    const FREE: usize = usize::MAX;
    let virt = n; // virtual column
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n + 1];
    let mut col_row = vec![FREE; n + 1]; // column -> assigned row

    for i in 0..n {
        col_row[virt] = i;
        let mut j0 = virt;
        let mut min_to = vec![f64::INFINITY; n];
        let mut way = vec![virt; n];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = virt;
            for j in 0..n {
                if !used[j] {
                    let cur = cost[i0][j] - u[i0] - v[j];
                    if cur < min_to[j] {
                        min_to[j] = cur;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else if j < n {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == FREE {
                break;
            }
        }
        // augment along the alternating path
        while j0 != virt {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }

    let mut row_to_col = vec![FREE; n];
    for j in 0..n {
        if col_row[j] != FREE {
            row_to_col[col_row[j]] = j;
        }
    }
    v.truncate(n);
    (row_to_col, u, v)
}

/// Lexicographically smallest perfect matching of a bipartite graph that is
/// known to contain one. `adj[i]` lists candidate columns in ascending order.
fn lex_smallest_matching(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut chosen = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    for i in 0..n {
        let mut picked = false;
        for &c in &adj[i] {
            if col_used[c] {
                continue;
            }
            col_used[c] = true;
            if rows_saturate(adj, i + 1, &col_used) {
                chosen[i] = c;
                picked = true;
                break;
            }
            col_used[c] = false;
        }
        assert!(picked, "tight graph lost its perfect matching");
    }
    chosen
}

/// Kuhn's algorithm: can rows `from..` all be matched into unused columns?
fn rows_saturate(adj: &[Vec<usize>], from: usize, col_used: &[bool]) -> bool {
    let n = adj.len();
    let mut col_row = vec![usize::MAX; n];
    fn try_row(
        adj: &[Vec<usize>],
        col_used: &[bool],
        col_row: &mut [usize],
        visited: &mut [bool],
        i: usize,
    ) -> bool {
        for &c in &adj[i] {
            if col_used[c] || visited[c] {
                continue;
            }
            visited[c] = true;
            if col_row[c] == usize::MAX
                || try_row(adj, col_used, col_row, visited, col_row[c])
            {
                col_row[c] = i;
                return true;
            }
        }
        false
    }
    for i in from..n {
        let mut visited = vec![false; n];
        if !try_row(adj, col_used, &mut col_row, &mut visited, i) {
            return false;
        }
    }
    true
}

// ── Sinkhorn projection ─────────────────────────────────────────────────

/// Differentiable approximate projection of `exp(Q/tau)` onto the doubly
/// stochastic matrices: `iters` rounds of row then column normalization,
/// all in log space.
pub fn sinkhorn_project_var<S: Scalar>(q: &Var<S>, tau: f64, iters: usize) -> Var<S> {
    assert!(tau > 0.0, "sinkhorn temperature must be positive, got {tau}");
    assert!(iters >= 1, "sinkhorn needs at least one iteration");
    let mut log_q = q.scale(1.0 / tau);
    for _ in 0..iters {
        log_q = log_q.sub_col(&log_q.row_logsumexp());
        log_q = log_q.sub_row(&log_q.col_logsumexp());
    }
    log_q.exp()
}

/// Value-level Sinkhorn projection, identical math to the tape version.
pub fn sinkhorn_project<S: Scalar>(q: &Tensor<S>, tau: f64, iters: usize) -> Tensor<S> {
    let tape: Tape<S> = Tape::new();
    sinkhorn_project_var(&tape.constant(q.clone()), tau, iters).value()
}

/// Relaxed output of an alignment method: one square matrix per hidden
/// layer, rows and columns approximately summing to one.
#[derive(Debug, Clone)]
pub struct DoublyStochasticStack<S: Scalar> {
    pub mats: Vec<Tensor<S>>,
}

impl<S: Scalar> DoublyStochasticStack<S> {
    pub fn new(mats: Vec<Tensor<S>>) -> Self {
        for m in &mats {
            assert_eq!(m.rows(), m.cols(), "stack matrices must be square");
        }
        DoublyStochasticStack { mats }
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.mats.iter().map(|m| m.rows()).collect()
    }

    /// Worst row- or column-sum deviation from 1 across all layers.
    pub fn max_marginal_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for m in &self.mats {
            let a = m.array();
            for i in 0..a.nrows() {
                worst = worst.max((a.row(i).sum().as_f64() - 1.0).abs());
            }
            for j in 0..a.ncols() {
                worst = worst.max((a.column(j).sum().as_f64() - 1.0).abs());
            }
        }
        worst
    }
}

/// Hard projection: per-layer exact linear assignment.
pub fn round_stack<S: Scalar>(
    stack: &DoublyStochasticStack<S>,
) -> Result<PermutationSequence, AssignmentError> {
    round_mats(&stack.mats)
}

/// As [`round_stack`] but for any stack of square score matrices.
pub fn round_mats<S: Scalar>(mats: &[Tensor<S>]) -> Result<PermutationSequence, AssignmentError> {
    let perms = mats
        .iter()
        .map(solve_lap_max)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PermutationSequence::new(perms))
}
