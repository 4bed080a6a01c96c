//! Policy-space response oracles over persuasion strategies: payoff tensors, meta-solvers,
//! exploitability and the expansion loop.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::VerbalizedEnv;
use crate::error::{Error, Result};
use crate::game::{obedience_violation, ReceiverPolicy, SchemeMode, SignalingScheme};
use crate::lp::{LinearProgram, LpOutcome, Relation};
use crate::metrics::{rates_from_mass, MetricsRow};
use crate::oracles::{
    categorical_search, conditional_search, exact_receiver_response, exact_sender_response, receiver_catalog,
    BestResponse, OracleBudget, TraceEntry,
};
use crate::playout::{Arena, CellStats, Player, Setting, Strategy};
use crate::prompt::{PromptAction, PromptFunction, PromptStrategy};
use crate::solver::{bilinear, solve_zero_sum};

/// Sender and receiver payoffs of every pool pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffTensor {
    pub sender: Vec<Vec<f64>>,
    pub receiver: Vec<Vec<f64>>,
    pub penalty: Vec<Vec<f64>>,
    pub cells: Vec<Vec<CellStats>>,
}

pub fn estimate_payoff_tensor(arena: &Arena, senders: &[Strategy], receivers: &[Strategy]) -> Result<PayoffTensor> {
    PayoffTensor::estimate(arena, senders, receivers)
}

impl PayoffTensor {
    /// Evaluates all cells in parallel; already evaluated pairs come from the arena cache.
    pub fn estimate(arena: &Arena, senders: &[Strategy], receivers: &[Strategy]) -> Result<Self> {
        if senders.is_empty() || receivers.is_empty() {
            return Err(Error::domain("strategy pools must be non-empty"));
        }
        let pairs: Vec<(usize, usize)> =
            (0..senders.len()).flat_map(|i| (0..receivers.len()).map(move |j| (i, j))).collect();
        let cells: Vec<CellStats> = pairs
            .par_iter()
            .map(|&(i, j)| {
                arena
                    .cell(&senders[i], &receivers[j])
                    .map_err(|e| Error::Cell { sender: i, receiver: j, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        let m = receivers.len();
        let grid: Vec<Vec<CellStats>> = cells.chunks(m.max(1)).map(<[CellStats]>::to_vec).collect();
        let table = |f: &dyn Fn(&CellStats) -> f64| grid.iter().map(|r| r.iter().map(f).collect()).collect();
        Ok(PayoffTensor {
            sender: table(&|c| c.sender),
            receiver: table(&|c| c.receiver),
            penalty: table(&|c| c.penalty()),
            cells: grid,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.sender.len(), self.sender.first().map_or(0, Vec::len))
    }

    /// Sender payoffs minus the scaled obedience penalty.
    pub fn shaped_sender(&self, coef: f64) -> Vec<Vec<f64>> {
        self.sender
            .iter()
            .zip(&self.penalty)
            .map(|(r, p)| r.iter().zip(p).map(|(a, q)| a - coef * q).collect())
            .collect()
    }

    fn restrict(&self, rows: &[usize], cols: &[usize]) -> Self {
        let pick = |t: &Vec<Vec<f64>>| rows.iter().map(|&i| cols.iter().map(|&j| t[i][j]).collect()).collect();
        PayoffTensor {
            sender: pick(&self.sender),
            receiver: pick(&self.receiver),
            penalty: pick(&self.penalty),
            cells: rows.iter().map(|&i| cols.iter().map(|&j| self.cells[i][j].clone()).collect()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStrategy {
    pub sender: Vec<f64>,
    pub receiver: Vec<f64>,
}

impl MetaStrategy {
    pub fn uniform(n: usize, m: usize) -> Self {
        MetaStrategy { sender: vec![1.0 / n as f64; n], receiver: vec![1.0 / m as f64; m] }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaSolverKind {
    Uniform,
    SenderStackelberg,
    #[default]
    LagrangianZeroSum,
}

impl FromStr for MetaSolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(MetaSolverKind::Uniform),
            "stackelberg" | "sender-stackelberg" => Ok(MetaSolverKind::SenderStackelberg),
            "lagrangian" | "lagrangian-zero-sum" => Ok(MetaSolverKind::LagrangianZeroSum),
            other => Err(Error::domain(format!(
                "unknown meta-solver {other:?} (expected uniform, stackelberg or lagrangian)"
            ))),
        }
    }
}

/// A sender mixture over pool rows together with the receiver column it makes optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct Commitment {
    pub x: Vec<f64>,
    pub target: usize,
    pub value: f64,
}

fn check_matrices(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(usize, usize)> {
    let n = a.len();
    let m = a.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Err(Error::domain("empty meta-game"));
    }
    if b.len() != n || a.iter().chain(b).any(|r| r.len() != m) {
        return Err(Error::shape("sender and receiver payoff tables differ in shape"));
    }
    Ok((n, m))
}

fn column(a: &[Vec<f64>], x: &[f64], j: usize) -> f64 {
    a.iter().zip(x).map(|(r, xi)| xi * r[j]).sum()
}

fn normalized(x: Vec<f64>) -> Vec<f64> {
    let x: Vec<f64> = x.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = x.iter().sum();
    x.into_iter().map(|v| v / total).collect()
}

/// Best sender commitment: for each target column, the mixture maximizing the sender's
/// payoff subject to the receiver preferring that column (when `deviation` is set).
pub fn stackelberg_commitment(a: &[Vec<f64>], b: &[Vec<f64>], deviation: bool) -> Result<Commitment> {
    let (n, m) = check_matrices(a, b)?;
    let mut best: Option<Commitment> = None;
    for j in 0..m {
        let mut lp = LinearProgram::maximize((0..n).map(|i| a[i][j]).collect());
        lp.constrain(vec![1.0; n], Relation::Eq, 1.0);
        if deviation {
            for k in (0..m).filter(|&k| k != j) {
                lp.constrain((0..n).map(|i| b[i][j] - b[i][k]).collect(), Relation::Ge, 0.0);
            }
        }
        match lp.solve()? {
            LpOutcome::Optimal { x, .. } => {
                let x = normalized(x);
                let value = column(a, &x, j);
                if best.as_ref().map_or(true, |c| value > c.value + 1e-12) {
                    best = Some(Commitment { x, target: j, value });
                }
            }
            LpOutcome::Infeasible => {}
            LpOutcome::Unbounded => return Err(Error::Internal("meta LP unbounded".into())),
        }
    }
    best.ok_or_else(|| Error::Internal("no receiver column can be induced".into()))
}

/// The same commitment found through a zero-sum reformulation: for a sender threshold `tau`,
/// a matrix game whose columns are the payoff shortfall and the receiver deviation gains has
/// non-negative value exactly when `tau` is attainable. Bisection on `tau` to `tol`.
pub fn lagrangian_commitment(a: &[Vec<f64>], b: &[Vec<f64>], deviation: bool, tol: f64) -> Result<Commitment> {
    let (n, m) = check_matrices(a, b)?;
    let mut best: Option<Commitment> = None;
    for j in 0..m {
        let game = |tau: f64| -> Result<Option<Vec<f64>>> {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let mut row = vec![a[i][j] - tau];
                    if deviation {
                        row.extend((0..m).filter(|&k| k != j).map(|k| b[i][j] - b[i][k]));
                    }
                    row
                })
                .collect();
            let sol = solve_zero_sum(&rows)?;
            Ok((sol.value >= -1e-9).then_some(sol.row_strategy))
        };
        let mut lo = (0..n).map(|i| a[i][j]).fold(f64::INFINITY, f64::min);
        let mut hi = (0..n).map(|i| a[i][j]).fold(f64::NEG_INFINITY, f64::max);
        let Some(mut x) = game(lo)? else { continue };
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            match game(mid)? {
                Some(xm) => {
                    lo = mid;
                    x = xm;
                }
                None => hi = mid,
            }
        }
        let x = normalized(x);
        let value = column(a, &x, j);
        if best.as_ref().map_or(true, |c| value > c.value + tol) {
            best = Some(Commitment { x, target: j, value });
        }
    }
    best.ok_or_else(|| Error::Internal("no receiver column can be induced".into()))
}

/// Uniform over the receiver's best columns against `x`, restricted to those the sender likes best.
pub fn receiver_reply(a: &[Vec<f64>], b: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let m = b.first().map_or(0, Vec::len);
    let rv: Vec<f64> = (0..m).map(|j| column(b, x, j)).collect();
    let top = rv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let br: Vec<usize> = (0..m).filter(|&j| rv[j] >= top - 1e-6).collect();
    let sv: Vec<f64> = br.iter().map(|&j| column(a, x, j)).collect();
    let stop = sv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let chosen: Vec<usize> = br.iter().zip(&sv).filter(|(_, v)| **v >= stop - 1e-6).map(|(j, _)| *j).collect();
    let mut y = vec![0.0; m];
    for &j in &chosen {
        y[j] = 1.0 / chosen.len() as f64;
    }
    y
}

pub fn solve_meta(kind: MetaSolverKind, tensor: &PayoffTensor, deviation: bool) -> Result<MetaStrategy> {
    let (n, m) = tensor.shape();
    if n == 0 || m == 0 || tensor.receiver.len() != n || tensor.cells.len() != n {
        return Err(Error::domain("payoff tensor is not populated"));
    }
    let x = match kind {
        MetaSolverKind::Uniform => return Ok(MetaStrategy::uniform(n, m)),
        MetaSolverKind::SenderStackelberg => stackelberg_commitment(&tensor.sender, &tensor.receiver, deviation)?.x,
        MetaSolverKind::LagrangianZeroSum => {
            lagrangian_commitment(&tensor.sender, &tensor.receiver, deviation, 1e-9)?.x
        }
    };
    let receiver = receiver_reply(&tensor.sender, &tensor.receiver, &x);
    Ok(MetaStrategy { sender: x, receiver })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Schemes and policies from the exact solvers.
    #[default]
    Exact,
    /// Prompt strategies found by backend-guided search.
    Search,
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(OracleKind::Exact),
            "search" => Ok(OracleKind::Search),
            other => Err(Error::domain(format!("unknown oracle {other:?} (expected exact or search)"))),
        }
    }
}

/// A sender that never changes: one that reveals nothing, or one that tells the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedSender {
    NoSignal,
    Honest,
}

impl FromStr for FixedSender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("fixed:").unwrap_or(s) {
            "no-signal" => Ok(FixedSender::NoSignal),
            "honest" => Ok(FixedSender::Honest),
            other => Err(Error::domain(format!("unknown fixed sender {other:?} (expected no-signal or honest)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsroConfig {
    pub iterations: usize,
    pub meta: MetaSolverKind,
    pub oracle: OracleKind,
    pub budget: OracleBudget,
    /// Largest pool kept after each meta-solve; entries with the least meta weight go first.
    pub prune_k: Option<usize>,
    pub fixed_sender: Option<FixedSender>,
    /// A response must beat the best pool entry by more than this to be added.
    pub improvement_eps: f64,
}

impl Default for PsroConfig {
    fn default() -> Self {
        PsroConfig {
            iterations: 10,
            meta: MetaSolverKind::LagrangianZeroSum,
            oracle: OracleKind::Exact,
            budget: OracleBudget::default(),
            prune_k: Some(10),
            fixed_sender: None,
            improvement_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub exploitability: f64,
    pub sender_gain: f64,
    pub receiver_gain: f64,
    pub sender_value: f64,
    pub receiver_value: f64,
    pub lie_prob: Option<f64>,
    pub honest_prob: Option<f64>,
    pub sender_pool: usize,
    pub receiver_pool: usize,
    pub new_sender: bool,
    pub new_receiver: bool,
}

impl IterationRecord {
    pub fn metrics_row(&self) -> MetricsRow {
        MetricsRow {
            iteration_or_stage: self.iteration,
            sender_reward: self.sender_value,
            receiver_reward: self.receiver_value,
            lie_prob: self.lie_prob,
            honest_prob: self.honest_prob,
            exploitability: Some(self.exploitability),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsroResult {
    pub sender_pool: Vec<Strategy>,
    pub receiver_pool: Vec<Strategy>,
    pub tensor: PayoffTensor,
    pub meta: MetaStrategy,
    pub iterations: Vec<IterationRecord>,
    /// `None` while the run is in progress.
    pub termination: Option<Termination>,
    pub search_trace: Vec<TraceEntry>,
}

impl PsroResult {
    pub fn metrics(&self) -> Vec<MetricsRow> {
        self.iterations.iter().map(IterationRecord::metrics_row).collect()
    }

    pub fn final_exploitability(&self) -> Option<f64> {
        self.iterations.last().map(|r| r.exploitability)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exploitability {
    pub value: f64,
    pub sender_gain: f64,
    pub receiver_gain: f64,
}

fn weighted_pairs<'a>(meta: &'a MetaStrategy) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    meta.sender.iter().enumerate().flat_map(move |(i, &x)| {
        meta.receiver.iter().enumerate().filter(move |_| x > 0.0).map(move |(j, &y)| (i, j, x * y))
    })
}

/// The sender mixture and receiver mixture as a single scheme and policy. Prompt pools are
/// summarized by their observed label and decision frequencies.
pub fn induced_profile(
    env: &VerbalizedEnv,
    senders: &[Strategy],
    receivers: &[Strategy],
    tensor: &PayoffTensor,
    meta: &MetaStrategy,
) -> Result<(SignalingScheme, ReceiverPolicy)> {
    let schemes: Option<Vec<&SignalingScheme>> = senders.iter().map(Strategy::as_scheme).collect();
    let policies: Option<Vec<&ReceiverPolicy>> = receivers.iter().map(Strategy::as_policy).collect();
    if let (Some(schemes), Some(policies)) = (schemes, policies) {
        return Ok((
            SignalingScheme::mixture(&schemes, &normalized(meta.sender.clone()))?,
            ReceiverPolicy::mixture(&policies, &normalized(meta.receiver.clone()))?,
        ));
    }
    let inst = &env.base;
    let (ns, na) = (inst.n_states(), inst.n_actions());
    let mut labels = vec![vec![0.0; na]; ns];
    let mut decisions = vec![vec![0.0; na]; na];
    for (i, j, p) in weighted_pairs(meta) {
        let c = &tensor.cells[i][j];
        if p <= 0.0 || c.weight <= 0.0 {
            continue;
        }
        for w in 0..ns {
            for s in 0..na {
                labels[w][s] += p * c.label_mass[w][s] / c.weight;
            }
        }
        for s in 0..na {
            for b in 0..na {
                decisions[s][b] += p * c.decision_mass[s][b] / c.weight;
            }
        }
    }
    let rows = |m: Vec<Vec<f64>>, fallback: &dyn Fn(usize) -> Vec<f64>| -> Vec<Vec<f64>> {
        m.into_iter()
            .enumerate()
            .map(|(k, r)| if r.iter().sum::<f64>() > 0.0 { normalized(r) } else { fallback(k) })
            .collect()
    };
    let uniform = |_: usize| vec![1.0 / na as f64; na];
    let obedient = |s: usize| (0..na).map(|b| f64::from(u8::from(b == s))).collect();
    Ok((
        SignalingScheme::new(rows(labels, &uniform), SchemeMode::Direct)?,
        ReceiverPolicy::new(rows(decisions, &obedient))?,
    ))
}

/// Sum of both players' clamped gains from best-responding exactly to the induced profile.
pub fn exploitability(
    env: &VerbalizedEnv,
    senders: &[Strategy],
    receivers: &[Strategy],
    tensor: &PayoffTensor,
    meta: &MetaStrategy,
) -> Result<Exploitability> {
    let (pi, rho) = induced_profile(env, senders, receivers, tensor, meta)?;
    let sender_now = bilinear(&tensor.sender, &meta.sender, &meta.receiver);
    let receiver_now = bilinear(&tensor.receiver, &meta.sender, &meta.receiver);
    let sender_gain = (exact_sender_response(env, &rho)?.value - sender_now).max(0.0);
    let receiver_gain = (exact_receiver_response(env, &pi)?.value - receiver_now).max(0.0);
    Ok(Exploitability { value: sender_gain + receiver_gain, sender_gain, receiver_gain })
}

fn prompt(setting: Setting, a: PromptAction) -> Strategy {
    Strategy::Prompt(match setting {
        Setting::S3 => PromptStrategy::Function(PromptFunction::constant(a)),
        Setting::S1 | Setting::S2 => PromptStrategy::Action(a),
    })
}

/// Starting pools: a sender that reveals nothing (or the fixed sender) and a receiver that
/// follows recommendations.
pub fn initial_pools(arena: &Arena, cfg: &PsroConfig) -> Result<(Vec<Strategy>, Vec<Strategy>)> {
    let env = &arena.env;
    match cfg.oracle {
        OracleKind::Exact => {
            let sender = match cfg.fixed_sender {
                Some(FixedSender::Honest) => SignalingScheme::honest(&env.base)?,
                _ => SignalingScheme::uninformative(&env.base)?,
            };
            Ok((vec![Strategy::Scheme(sender)], vec![Strategy::Policy(ReceiverPolicy::obedient(env.base.n_actions())?)]))
        }
        OracleKind::Search => {
            let setting = arena.options.setting;
            let sender = match cfg.fixed_sender {
                Some(FixedSender::NoSignal) => PromptAction::new("Disclosure", "none")?,
                _ => PromptAction::new("Tone", "neutral")?,
            };
            let receiver = receiver_catalog(env)
                .into_iter()
                .next()
                .ok_or_else(|| Error::domain(format!("no receiver styles for {}", env.id)))?;
            Ok((vec![prompt(setting, sender)], vec![prompt(setting, receiver)]))
        }
    }
}

/// Keeps the `k` entries with the largest meta weight (earlier entries win ties) and
/// renormalizes the weights. Returns the kept indices.
pub fn prune_pool(pool: &mut Vec<Strategy>, weights: &mut Vec<f64>, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::domain("pruned pool size must be at least 1"));
    }
    if pool.len() != weights.len() {
        return Err(Error::shape("one meta weight per pool entry"));
    }
    if pool.len() <= k {
        return Ok((0..pool.len()).collect());
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    *pool = keep.iter().map(|&i| pool[i].clone()).collect();
    let kept: Vec<f64> = keep.iter().map(|&i| weights[i]).collect();
    let total: f64 = kept.iter().sum();
    *weights = if total > 0.0 { kept.iter().map(|w| w / total).collect() } else { vec![1.0 / k as f64; k] };
    Ok(keep)
}

fn meta_rates(tensor: &PayoffTensor, meta: &MetaStrategy) -> (Option<f64>, Option<f64>) {
    let Some(first) = tensor.cells.first().and_then(|r| r.first()) else { return (None, None) };
    let mut mass = vec![vec![0.0; first.label_mass[0].len()]; first.label_mass.len()];
    for (i, j, p) in weighted_pairs(meta) {
        let c = &tensor.cells[i][j];
        if c.weight <= 0.0 {
            continue;
        }
        for (acc, row) in mass.iter_mut().zip(&c.label_mass) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += p * v / c.weight);
        }
    }
    rates_from_mass(&mass)
}

fn sender_response(
    arena: &Arena,
    cfg: &PsroConfig,
    receivers: &[Strategy],
    tensor: &PayoffTensor,
    senders: &[Strategy],
    meta: &MetaStrategy,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<(BestResponse, f64)> {
    let y = &meta.receiver;
    match cfg.oracle {
        OracleKind::Exact => {
            let policies: Vec<&ReceiverPolicy> = receivers.iter().filter_map(Strategy::as_policy).collect();
            let rho = ReceiverPolicy::mixture(&policies, &normalized(y.clone()))?;
            let br = exact_sender_response(&arena.env, &rho)?;
            let pool_best = senders
                .iter()
                .enumerate()
                .filter(|(_, s)| {
                    s.as_scheme().is_some_and(|sc| obedience_violation(&arena.env.base, sc).is_ok_and(|v| v <= 1e-9))
                })
                .map(|(i, _)| tensor.sender[i].iter().zip(y).map(|(a, w)| a * w).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((br, pool_best))
        }
        OracleKind::Search => {
            let opponents: Vec<(Strategy, f64)> = receivers.iter().cloned().zip(y.iter().copied()).collect();
            let br = search(arena, Player::Sender, &opponents, cfg, iteration, trace)?;
            let coef = if arena.options.obedience { arena.options.penalty_coef } else { 0.0 };
            let shaped = tensor.shaped_sender(coef);
            let pool_best = shaped
                .iter()
                .map(|r| r.iter().zip(y).map(|(a, w)| a * w).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((br, pool_best))
        }
    }
}

fn receiver_response(
    arena: &Arena,
    cfg: &PsroConfig,
    senders: &[Strategy],
    tensor: &PayoffTensor,
    meta: &MetaStrategy,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<(BestResponse, f64)> {
    let x = &meta.sender;
    let m = tensor.shape().1;
    let pool_best = (0..m).map(|j| column(&tensor.receiver, x, j)).fold(f64::NEG_INFINITY, f64::max);
    let br = match cfg.oracle {
        OracleKind::Exact => {
            let schemes: Vec<&SignalingScheme> = senders.iter().filter_map(Strategy::as_scheme).collect();
            exact_receiver_response(&arena.env, &SignalingScheme::mixture(&schemes, &normalized(x.clone()))?)?
        }
        OracleKind::Search => {
            let opponents: Vec<(Strategy, f64)> = senders.iter().cloned().zip(x.iter().copied()).collect();
            search(arena, Player::Receiver, &opponents, cfg, iteration, trace)?
        }
    };
    Ok((br, pool_best))
}

fn search(
    arena: &Arena,
    player: Player,
    opponents: &[(Strategy, f64)],
    cfg: &PsroConfig,
    iteration: usize,
    trace: &mut Vec<TraceEntry>,
) -> Result<BestResponse> {
    match arena.options.setting {
        Setting::S3 => conditional_search(arena, player, opponents, &cfg.budget, iteration, trace),
        Setting::S1 | Setting::S2 => categorical_search(arena, player, opponents, &cfg.budget, iteration, trace),
    }
}

/// Runs the expansion loop from the default pools. `on_iteration` sees the partial result
/// after every iteration.
pub fn run_psro(
    arena: &Arena,
    cfg: &PsroConfig,
    on_iteration: &mut dyn FnMut(&PsroResult) -> Result<()>,
) -> Result<PsroResult> {
    let (senders, receivers) = initial_pools(arena, cfg)?;
    run_psro_from(arena, cfg, senders, receivers, on_iteration)
}

pub fn run_psro_from(
    arena: &Arena,
    cfg: &PsroConfig,
    mut senders: Vec<Strategy>,
    mut receivers: Vec<Strategy>,
    on_iteration: &mut dyn FnMut(&PsroResult) -> Result<()>,
) -> Result<PsroResult> {
    if senders.is_empty() || receivers.is_empty() {
        return Err(Error::domain("strategy pools must be non-empty"));
    }
    if cfg.prune_k == Some(0) {
        return Err(Error::domain("pruned pool size must be at least 1"));
    }
    let deviation = arena.options.obedience;
    let mut tensor = PayoffTensor::estimate(arena, &senders, &receivers)?;
    let mut result = PsroResult {
        sender_pool: senders.clone(),
        receiver_pool: receivers.clone(),
        meta: MetaStrategy::uniform(senders.len(), receivers.len()),
        tensor: tensor.clone(),
        iterations: Vec::new(),
        termination: None,
        search_trace: Vec::new(),
    };
    let mut termination = Termination::BudgetExhausted;
    for iteration in 0..cfg.iterations {
        let mut meta = solve_meta(cfg.meta, &tensor, deviation)?;
        if let Some(k) = cfg.prune_k {
            if senders.len() > k || receivers.len() > k {
                let rows = prune_pool(&mut senders, &mut meta.sender, k)?;
                let cols = prune_pool(&mut receivers, &mut meta.receiver, k)?;
                tensor = tensor.restrict(&rows, &cols);
            }
        }
        let expl = exploitability(&arena.env, &senders, &receivers, &tensor, &meta)?;
        let (lie_prob, honest_prob) = meta_rates(&tensor, &meta);
        let mut trace = Vec::new();
        let sender_br = if cfg.fixed_sender.is_some() {
            None
        } else {
            Some(sender_response(arena, cfg, &receivers, &tensor, &senders, &meta, iteration, &mut trace)?)
        };
        let receiver_br = receiver_response(arena, cfg, &senders, &tensor, &meta, iteration, &mut trace)?;
        let is_new = |pool: &[Strategy], (br, best): &(BestResponse, f64)| {
            br.value > best + cfg.improvement_eps && !pool.iter().any(|s| s.key() == br.strategy.key())
        };
        let new_sender = sender_br.as_ref().filter(|r| is_new(&senders, r)).map(|r| r.0.strategy.clone());
        let new_receiver = is_new(&receivers, &receiver_br).then(|| receiver_br.0.strategy.clone());
        result.iterations.push(IterationRecord {
            iteration,
            exploitability: expl.value,
            sender_gain: expl.sender_gain,
            receiver_gain: expl.receiver_gain,
            sender_value: bilinear(&tensor.sender, &meta.sender, &meta.receiver),
            receiver_value: bilinear(&tensor.receiver, &meta.sender, &meta.receiver),
            lie_prob,
            honest_prob,
            sender_pool: senders.len(),
            receiver_pool: receivers.len(),
            new_sender: new_sender.is_some(),
            new_receiver: new_receiver.is_some(),
        });
        result.search_trace.extend(trace);
        result.sender_pool = senders.clone();
        result.receiver_pool = receivers.clone();
        result.tensor = tensor.clone();
        result.meta = meta;
        on_iteration(&result)?;
        if new_sender.is_none() && new_receiver.is_none() {
            termination = Termination::Converged;
            break;
        }
        senders.extend(new_sender);
        receivers.extend(new_receiver);
        tensor = PayoffTensor::estimate(arena, &senders, &receivers)?;
    }
    if termination == Termination::BudgetExhausted {
        result.meta = if cfg.iterations == 0 {
            MetaStrategy::uniform(senders.len(), receivers.len())
        } else {
            solve_meta(cfg.meta, &tensor, deviation)?
        };
        result.sender_pool = senders;
        result.receiver_pool = receivers;
        result.tensor = tensor;
    }
    result.termination = Some(termination);
    Ok(result)
}
