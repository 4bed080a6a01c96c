//! Exact persuasion solvers: the obedience LP, the Lagrangian saddle-point route with
//! bisection on the sender threshold, and a zero-sum matrix-game solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{obedience_violation, BpInstance, SignalingScheme, OPT_TOL};
use crate::lp::{LinearProgram, LpOutcome, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub scheme: SignalingScheme,
    pub sender_value: f64,
    pub receiver_value: f64,
    pub max_violation: f64,
    pub status: LpStatus,
}

impl LpSolution {
    fn from_scheme(inst: &BpInstance, scheme: SignalingScheme) -> Result<Self> {
        let (sender_value, receiver_value) = obedient_values(inst, &scheme);
        let max_violation = obedience_violation(inst, &scheme)?;
        Ok(LpSolution { scheme, sender_value, receiver_value, max_violation, status: LpStatus::Optimal })
    }

    /// JSON form with the scheme written as a bare matrix.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme.matrix(),
            "sender_value": self.sender_value,
            "receiver_value": self.receiver_value,
            "max_violation": self.max_violation,
            "status": self.status,
        })
    }
}

/// Payoffs when the receiver follows every recommendation.
pub fn obedient_values(inst: &BpInstance, scheme: &SignalingScheme) -> (f64, f64) {
    let mut v = (0.0, 0.0);
    for (w, &p) in inst.prior.iter().enumerate() {
        for a in 0..inst.n_actions() {
            let q = p * scheme.prob(w, a);
            v.0 += q * inst.u_sender[w][a];
            v.1 += q * inst.u_receiver[w][a];
        }
    }
    v
}

fn require_direct(inst: &BpInstance) -> Result<()> {
    if inst.is_direct() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "instance {:?} is not in direct-recommendation form ({} signals, {} actions)",
            inst.label,
            inst.n_signals(),
            inst.n_actions()
        )))
    }
}

/// Overwrites rows of zero-prior states with the honest recommendation.
fn patch_null_states(inst: &BpInstance, matrix: &mut [Vec<f64>]) -> Result<()> {
    if inst.prior.iter().all(|&p| p > 0.0) {
        return Ok(());
    }
    let honest = SignalingScheme::honest(inst)?;
    for (w, row) in matrix.iter_mut().enumerate() {
        if inst.prior[w] == 0.0 {
            row.clone_from(&honest.matrix()[w]);
        }
    }
    Ok(())
}

/// Sender-optimal obedient direct scheme.
pub fn solve_direct_lp(inst: &BpInstance) -> Result<LpSolution> {
    require_direct(inst)?;
    let (nw, na) = (inst.n_states(), inst.n_actions());
    let var = |w: usize, a: usize| w * na + a;
    let mut objective = vec![0.0; nw * na];
    for w in 0..nw {
        for a in 0..na {
            objective[var(w, a)] = inst.prior[w] * inst.u_sender[w][a];
        }
    }
    let mut lp = LinearProgram::maximize(objective);
    for a in 0..na {
        for alt in (0..na).filter(|&alt| alt != a) {
            let mut row = vec![0.0; nw * na];
            for w in 0..nw {
                row[var(w, a)] = inst.prior[w] * (inst.u_receiver[w][a] - inst.u_receiver[w][alt]);
            }
            lp.constrain(row, Relation::Ge, 0.0);
        }
    }
    for w in 0..nw {
        let mut row = vec![0.0; nw * na];
        (0..na).for_each(|a| row[var(w, a)] = 1.0);
        lp.constrain(row, Relation::Eq, 1.0);
    }
    match lp.solve()? {
        LpOutcome::Optimal { x, .. } => {
            let mut matrix: Vec<Vec<f64>> = x.chunks(na).map(<[f64]>::to_vec).collect();
            patch_null_states(inst, &mut matrix)?;
            LpSolution::from_scheme(inst, SignalingScheme::direct_from_solver(matrix)?)
        }
        other => Err(Error::Internal(format!("obedience LP returned {other:?}; honest scheme is always feasible"))),
    }
}

/// Multipliers of the Lagrangian at a fixed threshold: weight on the objective term and on
/// each (recommended, deviation) constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagrangianPoint {
    pub tau: f64,
    pub lambda0: f64,
    pub lambdas: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub value: f64,
    /// The sender's maximin scheme, a mixture of deterministic recommendation rules.
    pub scheme: SignalingScheme,
    pub multipliers: LagrangianPoint,
}

const MAX_DETERMINISTIC_SCHEMES: usize = 1 << 16;

fn deterministic_assignments(n_states: usize, n_actions: usize) -> Result<Vec<Vec<usize>>> {
    let count = (n_actions as u128).checked_pow(n_states as u32).unwrap_or(u128::MAX);
    if count > MAX_DETERMINISTIC_SCHEMES as u128 {
        return Err(Error::domain(format!("{count} deterministic schemes is too many to enumerate")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for mut code in 0..count as usize {
        let mut assignment = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            assignment.push(code % n_actions);
            code /= n_actions;
        }
        out.push(assignment);
    }
    Ok(out)
}

/// Solves the Lagrangian game at threshold `tau`: the sender mixes deterministic recommendation
/// rules, the adversary picks the objective-minus-threshold term or one obedience constraint.
pub fn saddle_point(inst: &BpInstance, tau: f64) -> Result<SaddlePoint> {
    require_direct(inst)?;
    let (nw, na) = (inst.n_states(), inst.n_actions());
    let assignments = deterministic_assignments(nw, na)?;
    let pairs: Vec<(usize, usize)> =
        (0..na).flat_map(|a| (0..na).filter(move |&b| b != a).map(move |b| (a, b))).collect();
    let matrix: Vec<Vec<f64>> = assignments
        .iter()
        .map(|d| {
            let objective: f64 = (0..nw).map(|w| inst.prior[w] * inst.u_sender[w][d[w]]).sum::<f64>() - tau;
            let mut row = Vec::with_capacity(1 + pairs.len());
            row.push(objective);
            row.extend(pairs.iter().map(|&(a, alt)| {
                (0..nw)
                    .filter(|&w| d[w] == a)
                    .map(|w| inst.prior[w] * (inst.u_receiver[w][a] - inst.u_receiver[w][alt]))
                    .sum::<f64>()
            }));
            row
        })
        .collect();
    let game = solve_zero_sum(&matrix)?;
    let mut scheme = vec![vec![0.0; na]; nw];
    for (d, &p) in assignments.iter().zip(&game.row_strategy) {
        for w in 0..nw {
            scheme[w][d[w]] += p;
        }
    }
    patch_null_states(inst, &mut scheme)?;
    Ok(SaddlePoint {
        value: game.value,
        scheme: SignalingScheme::direct_from_solver(scheme)?,
        multipliers: LagrangianPoint {
            tau,
            lambda0: game.col_strategy[0],
            lambdas: game.col_strategy[1..].to_vec(),
            pairs,
        },
    })
}

/// Non-negative iff some obedient scheme reaches sender value `tau`.
pub fn saddle_point_value(inst: &BpInstance, tau: f64) -> Result<f64> {
    saddle_point(inst, tau).map(|s| s.value)
}

/// Bisects the threshold over `[min u_sender, max u_sender]` until the bracket is narrower than `tol`.
pub fn binary_search_optimal(inst: &BpInstance, tol: f64) -> Result<LpSolution> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    require_direct(inst)?;
    let (mut lo, mut hi) = (inst.min_sender_utility(), inst.max_sender_utility());
    let mut best = saddle_point(inst, lo)?;
    if hi - lo == 0.0 {
        let mut sol = LpSolution::from_scheme(inst, best.scheme)?;
        sol.sender_value = lo;
        return Ok(sol);
    }
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        let point = saddle_point(inst, mid)?;
        if point.value >= -OPT_TOL {
            lo = mid;
            best = point;
        } else {
            hi = mid;
        }
    }
    LpSolution::from_scheme(inst, best.scheme)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGameSolution {
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    pub value: f64,
}

/// Maximin strategies of the zero-sum game where the row player receives `matrix[i][j]`.
pub fn solve_zero_sum(matrix: &[Vec<f64>]) -> Result<MatrixGameSolution> {
    let m = matrix.len();
    let n = matrix.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(Error::domain("empty payoff matrix"));
    }
    if matrix.iter().any(|r| r.len() != n) {
        return Err(Error::shape("payoff matrix rows differ in length"));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("payoff matrix has a non-finite entry"));
    }
    let min = matrix.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;
    let shifted = |i: usize, j: usize| matrix[i][j] + shift;

    // Column player: max Σv s.t. Σ_j M'[i][j] v_j ≤ 1 for every row.
    let mut col_lp = LinearProgram::maximize(vec![1.0; n]);
    for i in 0..m {
        col_lp.constrain((0..n).map(|j| shifted(i, j)).collect(), Relation::Le, 1.0);
    }
    // Row player: min Σu s.t. Σ_i M'[i][j] u_i ≥ 1 for every column.
    let mut row_lp = LinearProgram::maximize(vec![-1.0; m]);
    for j in 0..n {
        row_lp.constrain((0..m).map(|i| shifted(i, j)).collect(), Relation::Ge, 1.0);
    }
    let normalize = |outcome: LpOutcome, who: &str| -> Result<Vec<f64>> {
        match outcome {
            LpOutcome::Optimal { x, .. } => {
                let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
                let total: f64 = x.iter().sum();
                if total <= 0.0 {
                    return Err(Error::Internal(format!("{who} LP returned a zero vector")));
                }
                Ok(x.into_iter().map(|v| v / total).collect())
            }
            other => Err(Error::Internal(format!("{who} LP returned {other:?}"))),
        }
    };
    let col_strategy = normalize(col_lp.solve()?, "column")?;
    let row_strategy = normalize(row_lp.solve()?, "row")?;
    let value = bilinear(matrix, &row_strategy, &col_strategy);
    Ok(MatrixGameSolution { row_strategy, col_strategy, value })
}

pub fn bilinear(matrix: &[Vec<f64>], x: &[f64], y: &[f64]) -> f64 {
    matrix
        .iter()
        .zip(x)
        .map(|(row, xi)| xi * row.iter().zip(y).map(|(v, yj)| v * yj).sum::<f64>())
        .sum()
}

/// Checks that a matrix-game solution is minimax optimal within `tol`.
pub fn minimax_gap(matrix: &[Vec<f64>], sol: &MatrixGameSolution) -> f64 {
    let best_row = matrix
        .iter()
        .map(|row| row.iter().zip(&sol.col_strategy).map(|(v, y)| v * y).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let n = matrix[0].len();
    let worst_col = (0..n)
        .map(|j| matrix.iter().zip(&sol.row_strategy).map(|(row, x)| row[j] * x).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (best_row - sol.value).max(sol.value - worst_col).max(0.0)
}

#[cfg(test)]
pub(crate) fn is_distribution(v: &[f64]) -> bool {
    v.iter().all(|p| *p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= crate::game::STRUCT_TOL * v.len().max(1) as f64
}
