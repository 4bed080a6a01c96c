//! Finite Bayesian-persuasion games: instances, signaling schemes, posteriors and best responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for structural checks (distributions summing to one).
pub const STRUCT_TOL: f64 = 1e-12;
/// Tolerance for optimization comparisons (ties, feasibility).
pub const OPT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct BpInstance {
    pub label: String,
    pub states: Vec<String>,
    pub signals: Vec<String>,
    pub actions: Vec<String>,
    pub prior: Vec<f64>,
    /// Sender utility, indexed `[state][action]`.
    pub u_sender: Vec<Vec<f64>>,
    /// Receiver utility, indexed `[state][action]`.
    pub u_receiver: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawInstance {
    label: String,
    states: Vec<String>,
    signals: Vec<String>,
    actions: Vec<String>,
    prior: Vec<f64>,
    u_sender: Vec<Vec<f64>>,
    u_receiver: Vec<Vec<f64>>,
}

impl TryFrom<RawInstance> for BpInstance {
    type Error = Error;

    fn try_from(r: RawInstance) -> Result<Self> {
        BpInstance::new(r.label, r.states, r.signals, r.actions, r.prior, r.u_sender, r.u_receiver)
    }
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::domain(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > STRUCT_TOL {
        return Err(Error::domain(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    for (i, id) in ids.iter().enumerate() {
        if ids[..i].contains(id) {
            return Err(Error::domain(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

impl BpInstance {
    pub fn new(
        label: impl Into<String>,
        states: Vec<String>,
        signals: Vec<String>,
        actions: Vec<String>,
        prior: Vec<f64>,
        u_sender: Vec<Vec<f64>>,
        u_receiver: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if states.is_empty() || actions.is_empty() || signals.is_empty() {
            return Err(Error::domain("states, signals and actions must be non-empty"));
        }
        check_unique(&states, "state")?;
        check_unique(&signals, "signal")?;
        check_unique(&actions, "action")?;
        if prior.len() != states.len() {
            return Err(Error::shape(format!(
                "prior has {} entries for {} states",
                prior.len(),
                states.len()
            )));
        }
        check_distribution(&prior, "prior")?;
        if signals.len() < actions.len().min(states.len()) {
            return Err(Error::domain(format!(
                "{} signals cannot express {} actions over {} states",
                signals.len(),
                actions.len(),
                states.len()
            )));
        }
        for (name, table) in [("u_sender", &u_sender), ("u_receiver", &u_receiver)] {
            if table.len() != states.len() || table.iter().any(|row| row.len() != actions.len()) {
                return Err(Error::shape(format!(
                    "{name} must be {}x{}",
                    states.len(),
                    actions.len()
                )));
            }
            if table.iter().flatten().any(|u| !u.is_finite()) {
                return Err(Error::domain(format!("{name} has a non-finite entry")));
            }
        }
        Ok(BpInstance { label: label.into(), states, signals, actions, prior, u_sender, u_receiver })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    /// Signals are identified with actions by position.
    pub fn is_direct(&self) -> bool {
        self.signals.len() == self.actions.len()
    }

    pub fn state_index(&self, id: &str) -> Result<usize> {
        self.states
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::domain(format!("unknown state {id:?}")))
    }

    pub fn signal_index(&self, id: &str) -> Result<usize> {
        self.signals
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::domain(format!("unknown signal {id:?}")))
    }

    pub fn action_index(&self, id: &str) -> Result<usize> {
        self.actions
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::domain(format!("unknown action {id:?}")))
    }

    pub fn min_sender_utility(&self) -> f64 {
        self.u_sender.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_sender_utility(&self) -> f64 {
        self.u_sender.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Expected (receiver, sender) utility of `action` under `belief`.
    fn action_values(&self, belief: &[f64], action: usize) -> (f64, f64) {
        belief.iter().enumerate().fold((0.0, 0.0), |(r, s), (w, p)| {
            (r + p * self.u_receiver[w][action], s + p * self.u_sender[w][action])
        })
    }

    fn check_scheme(&self, scheme: &SignalingScheme) -> Result<()> {
        if scheme.n_states() != self.n_states() || scheme.n_signals() != self.n_signals() {
            return Err(Error::shape(format!(
                "scheme is {}x{}, instance needs {}x{}",
                scheme.n_states(),
                scheme.n_signals(),
                self.n_states(),
                self.n_signals()
            )));
        }
        if scheme.mode == SchemeMode::Direct && !self.is_direct() {
            return Err(Error::domain("direct scheme on an instance whose signals are not actions"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeMode {
    General,
    /// Signal `i` is a recommendation to play action `i`.
    Direct,
}

/// Row-stochastic map from states to signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingScheme {
    matrix: Vec<Vec<f64>>,
    mode: SchemeMode,
}

impl SignalingScheme {
    pub fn new(matrix: Vec<Vec<f64>>, mode: SchemeMode) -> Result<Self> {
        let width = matrix.first().map_or(0, Vec::len);
        if matrix.is_empty() || width == 0 || matrix.iter().any(|r| r.len() != width) {
            return Err(Error::shape("scheme must be a non-empty rectangular matrix"));
        }
        for (w, row) in matrix.iter().enumerate() {
            check_distribution(row, &format!("scheme row {w}"))?;
        }
        Ok(SignalingScheme { matrix, mode })
    }

    pub fn direct(matrix: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(matrix, SchemeMode::Direct)
    }

    /// Clamps tiny negatives produced by a solver and renormalizes rows.
    pub fn direct_from_solver(mut matrix: Vec<Vec<f64>>) -> Result<Self> {
        for row in &mut matrix {
            row.iter_mut().for_each(|p| *p = p.max(0.0));
            let total: f64 = row.iter().sum();
            if total <= 0.0 {
                return Err(Error::Internal("solver returned an all-zero scheme row".into()));
            }
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self::direct(matrix)
    }

    /// Recommends, in every state, the receiver's best action under full information.
    pub fn honest(inst: &BpInstance) -> Result<Self> {
        let rows = (0..inst.n_states())
            .map(|w| {
                let mut point = vec![0.0; inst.n_states()];
                point[w] = 1.0;
                let a = receiver_best_response(inst, &point)?;
                Ok(one_hot(inst.n_actions(), a))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::direct(rows)
    }

    /// Recommends the prior-optimal action regardless of the state.
    pub fn uninformative(inst: &BpInstance) -> Result<Self> {
        let a = receiver_best_response(inst, &inst.prior)?;
        Self::direct(vec![one_hot(inst.n_actions(), a); inst.n_states()])
    }

    /// Deterministic direct scheme recommending `assignment[w]` in state `w`.
    pub fn deterministic(assignment: &[usize], n_actions: usize) -> Result<Self> {
        if assignment.iter().any(|&a| a >= n_actions) {
            return Err(Error::domain("recommended action out of range"));
        }
        Self::direct(assignment.iter().map(|&a| one_hot(n_actions, a)).collect())
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn mode(&self) -> SchemeMode {
        self.mode
    }

    pub fn n_states(&self) -> usize {
        self.matrix.len()
    }

    pub fn n_signals(&self) -> usize {
        self.matrix[0].len()
    }

    pub fn prob(&self, state: usize, signal: usize) -> f64 {
        self.matrix[state][signal]
    }

    /// Mixture `Σ weights[k] · schemes[k]`; the weights must form a distribution.
    pub fn mixture(schemes: &[&SignalingScheme], weights: &[f64]) -> Result<Self> {
        if schemes.is_empty() || schemes.len() != weights.len() {
            return Err(Error::shape("mixture needs one weight per scheme"));
        }
        check_distribution(weights, "mixture weights")?;
        let first = schemes[0];
        if schemes.iter().any(|s| s.n_states() != first.n_states() || s.n_signals() != first.n_signals()) {
            return Err(Error::shape("mixture components differ in shape"));
        }
        let mut matrix = vec![vec![0.0; first.n_signals()]; first.n_states()];
        for (s, &wt) in schemes.iter().zip(weights) {
            for (acc, row) in matrix.iter_mut().zip(&s.matrix) {
                acc.iter_mut().zip(row).for_each(|(a, p)| *a += wt * p);
            }
        }
        let mode = if schemes.iter().all(|s| s.mode == SchemeMode::Direct) {
            SchemeMode::Direct
        } else {
            SchemeMode::General
        };
        for row in &mut matrix {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
        }
        Self::new(matrix, mode)
    }

    /// Marginal probability of each signal under `prior`.
    pub fn signal_marginals(&self, prior: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.n_signals()];
        for (row, p) in self.matrix.iter().zip(prior) {
            m.iter_mut().zip(row).for_each(|(acc, q)| *acc += p * q);
        }
        m
    }
}

pub(crate) fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Receiver's mixed action for each signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverPolicy {
    rows: Vec<Vec<f64>>,
}

impl ReceiverPolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::shape("policy must be a non-empty rectangular matrix"));
        }
        for (s, row) in rows.iter().enumerate() {
            check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(ReceiverPolicy { rows })
    }

    /// Plays action `a` after signal `a`.
    pub fn obedient(n: usize) -> Result<Self> {
        Self::new((0..n).map(|a| one_hot(n, a)).collect())
    }

    pub fn constant(n_signals: usize, n_actions: usize, action: usize) -> Result<Self> {
        if action >= n_actions {
            return Err(Error::domain("action out of range"));
        }
        Self::new(vec![one_hot(n_actions, action); n_signals])
    }

    /// Pure policy from a signal → action lookup.
    pub fn pure(choice: &[usize], n_actions: usize) -> Result<Self> {
        if choice.iter().any(|&a| a >= n_actions) {
            return Err(Error::domain("action out of range"));
        }
        Self::new(choice.iter().map(|&a| one_hot(n_actions, a)).collect())
    }

    /// Posterior-argmax response to `scheme`, using the prior at unreachable signals.
    pub fn best_response(inst: &BpInstance, scheme: &SignalingScheme) -> Result<Self> {
        inst.check_scheme(scheme)?;
        let choice = (0..inst.n_signals())
            .map(|s| {
                let post = posterior_at(inst, scheme, s);
                receiver_best_response(inst, &post.belief)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::pure(&choice, inst.n_actions())
    }

    pub fn mixture(policies: &[&ReceiverPolicy], weights: &[f64]) -> Result<Self> {
        if policies.is_empty() || policies.len() != weights.len() {
            return Err(Error::shape("mixture needs one weight per policy"));
        }
        check_distribution(weights, "mixture weights")?;
        let (ns, na) = (policies[0].n_signals(), policies[0].n_actions());
        if policies.iter().any(|p| p.n_signals() != ns || p.n_actions() != na) {
            return Err(Error::shape("mixture components differ in shape"));
        }
        let mut rows = vec![vec![0.0; na]; ns];
        for (p, &wt) in policies.iter().zip(weights) {
            for (acc, row) in rows.iter_mut().zip(&p.rows) {
                acc.iter_mut().zip(row).for_each(|(a, q)| *a += wt * q);
            }
        }
        for row in &mut rows {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|q| *q /= total);
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_signals(&self) -> usize {
        self.rows.len()
    }

    pub fn n_actions(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prob(&self, signal: usize, action: usize) -> f64 {
        self.rows[signal][action]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    pub signal: String,
    pub belief: Vec<f64>,
    /// False when the signal has zero marginal probability; `belief` is then the prior.
    pub reachable: bool,
}

pub(crate) fn posterior_at(inst: &BpInstance, scheme: &SignalingScheme, s: usize) -> Posterior {
    let joint: Vec<f64> = inst.prior.iter().enumerate().map(|(w, p)| p * scheme.prob(w, s)).collect();
    let total: f64 = joint.iter().sum();
    let (belief, reachable) = if total > 0.0 {
        (joint.iter().map(|j| j / total).collect(), true)
    } else {
        (inst.prior.clone(), false)
    };
    Posterior { signal: inst.signals[s].clone(), belief, reachable }
}

/// Bayes update of the prior after observing `signal` under `scheme`.
pub fn posterior(inst: &BpInstance, scheme: &SignalingScheme, signal: &str) -> Result<Posterior> {
    let s = inst.signal_index(signal)?;
    inst.check_scheme(scheme)?;
    Ok(posterior_at(inst, scheme, s))
}

/// Receiver-optimal action at `belief`; ties go to the sender's preferred action, then the lowest index.
pub fn receiver_best_response(inst: &BpInstance, belief: &[f64]) -> Result<usize> {
    if belief.len() != inst.n_states() {
        return Err(Error::domain(format!(
            "belief has {} entries for {} states",
            belief.len(),
            inst.n_states()
        )));
    }
    check_distribution(belief, "belief").map_err(|_| Error::domain("malformed belief"))?;
    let values: Vec<(f64, f64)> = (0..inst.n_actions()).map(|a| inst.action_values(belief, a)).collect();
    let best_r = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let best_s = values
        .iter()
        .filter(|v| v.0 >= best_r - OPT_TOL)
        .map(|v| v.1)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(values
        .iter()
        .position(|v| v.0 >= best_r - OPT_TOL && v.1 >= best_s - OPT_TOL)
        .expect("some action attains the maximum"))
}

/// Exact expected payoffs of a scheme and receiver policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Values {
    pub sender: f64,
    pub receiver: f64,
}

pub fn expected_utilities(
    inst: &BpInstance,
    scheme: &SignalingScheme,
    policy: &ReceiverPolicy,
) -> Result<Values> {
    inst.check_scheme(scheme)?;
    if policy.n_signals() != inst.n_signals() || policy.n_actions() != inst.n_actions() {
        return Err(Error::shape(format!(
            "policy is {}x{}, instance needs {}x{}",
            policy.n_signals(),
            policy.n_actions(),
            inst.n_signals(),
            inst.n_actions()
        )));
    }
    let mut v = Values { sender: 0.0, receiver: 0.0 };
    for (w, &p) in inst.prior.iter().enumerate() {
        for s in 0..inst.n_signals() {
            let ps = p * scheme.prob(w, s);
            if ps == 0.0 {
                continue;
            }
            for a in 0..inst.n_actions() {
                let pa = ps * policy.prob(s, a);
                v.sender += pa * inst.u_sender[w][a];
                v.receiver += pa * inst.u_receiver[w][a];
            }
        }
    }
    Ok(v)
}

/// Largest violated obedience constraint of a direct scheme, together with its (recommended, deviation) pair.
pub fn worst_obedience_constraint(inst: &BpInstance, scheme: &SignalingScheme) -> Result<(f64, usize, usize)> {
    if scheme.mode() != SchemeMode::Direct {
        return Err(Error::domain("obedience is defined for direct-recommendation schemes"));
    }
    inst.check_scheme(scheme)?;
    let mut worst = (0.0, 0, 0);
    for a in 0..inst.n_actions() {
        for alt in (0..inst.n_actions()).filter(|&alt| alt != a) {
            let slack: f64 = (0..inst.n_states())
                .map(|w| {
                    inst.prior[w] * scheme.prob(w, a) * (inst.u_receiver[w][a] - inst.u_receiver[w][alt])
                })
                .sum();
            if -slack > worst.0 {
                worst = (-slack, a, alt);
            }
        }
    }
    Ok(worst)
}

pub fn obedience_violation(inst: &BpInstance, scheme: &SignalingScheme) -> Result<f64> {
    worst_obedience_constraint(inst, scheme).map(|(v, _, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel() -> BpInstance {
        BpInstance::new(
            "rel",
            vec!["strong".into(), "weak".into()],
            vec!["recommend".into(), "not_recommend".into()],
            vec!["hire".into(), "reject".into()],
            vec![1.0 / 3.0, 2.0 / 3.0],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
        )
        .unwrap()
    }

    fn eps_scheme(eps: f64) -> SignalingScheme {
        SignalingScheme::direct(vec![vec![1.0, 0.0], vec![eps, 1.0 - eps]]).unwrap()
    }

    #[test]
    fn fully_informative_posterior_is_degenerate() {
        let inst = rel();
        let p = posterior(&inst, &eps_scheme(0.0), "recommend").unwrap();
        assert!(p.reachable);
        assert_eq!(p.belief, vec![1.0, 0.0]);
    }

    #[test]
    fn half_lying_posterior_matches_joint_enumeration() {
        let inst = rel();
        let scheme = eps_scheme(0.5);
        let p = posterior(&inst, &scheme, "recommend").unwrap();
        // joint mass on (strong, rec) and (weak, rec), enumerated directly
        let strong = (1.0 / 3.0) * 1.0;
        let weak = (2.0 / 3.0) * 0.5;
        assert!((p.belief[0] - strong / (strong + weak)).abs() < 1e-15);
        assert!((p.belief[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_leave_prior_unchanged() {
        let inst = rel();
        let scheme = SignalingScheme::direct(vec![vec![0.3, 0.7], vec![0.3, 0.7]]).unwrap();
        for s in &inst.signals {
            let p = posterior(&inst, &scheme, s).unwrap();
            for (b, q) in p.belief.iter().zip(&inst.prior) {
                assert!((b - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_signal_falls_back_to_prior() {
        let inst = rel();
        let scheme = SignalingScheme::direct(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let p = posterior(&inst, &scheme, "not_recommend").unwrap();
        assert!(!p.reachable);
        assert_eq!(p.belief, inst.prior);
    }

    #[test]
    fn unknown_signal_is_domain_error() {
        assert!(matches!(posterior(&rel(), &eps_scheme(0.0), "maybe"), Err(Error::Domain(_))));
    }

    #[test]
    fn best_response_breaks_ties_for_sender() {
        let inst = rel();
        assert_eq!(receiver_best_response(&inst, &[1.0, 0.0]).unwrap(), 0);
        assert_eq!(receiver_best_response(&inst, &[0.5, 0.5]).unwrap(), 0);
        assert_eq!(receiver_best_response(&inst, &[0.4, 0.6]).unwrap(), 1);
        assert!(receiver_best_response(&inst, &[0.5, 0.6]).is_err());
        assert!(receiver_best_response(&inst, &[1.0]).is_err());
    }

    #[test]
    fn honest_and_lying_values() {
        let inst = rel();
        let obey = ReceiverPolicy::obedient(2).unwrap();
        let v = expected_utilities(&inst, &eps_scheme(0.0), &obey).unwrap();
        assert!((v.sender - 1.0 / 3.0).abs() < 1e-12);
        assert!((v.receiver - 1.0 / 3.0).abs() < 1e-12);
        let v = expected_utilities(&inst, &eps_scheme(0.3), &obey).unwrap();
        assert!((v.sender - 1.6 / 3.0).abs() < 1e-12);
        assert!((v.receiver - 0.4 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_policy_ignores_scheme() {
        let inst = rel();
        let hire = ReceiverPolicy::constant(2, 2, 0).unwrap();
        for eps in [0.0, 0.2, 0.9] {
            let v = expected_utilities(&inst, &eps_scheme(eps), &hire).unwrap();
            assert!((v.sender - 1.0).abs() < 1e-12);
            assert!((v.receiver - (1.0 / 3.0 - 2.0 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn obedience_violation_examples() {
        let inst = rel();
        assert_eq!(obedience_violation(&inst, &eps_scheme(0.0)).unwrap(), 0.0);
        let (v, a, alt) = worst_obedience_constraint(&inst, &eps_scheme(0.6)).unwrap();
        assert!((v - 1.0 / 15.0).abs() < 1e-12);
        assert_eq!((a, alt), (0, 1));
        assert!(obedience_violation(&inst, &eps_scheme(0.5)).unwrap() < 1e-15);
        let general = SignalingScheme::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], SchemeMode::General).unwrap();
        assert!(obedience_violation(&inst, &general).is_err());
    }

    #[test]
    fn honest_scheme_recommends_full_information_action() {
        let inst = rel();
        let h = SignalingScheme::honest(&inst).unwrap();
        assert_eq!(h.matrix(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let u = SignalingScheme::uninformative(&inst).unwrap();
        assert_eq!(u.matrix(), &[vec![0.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad_prior = BpInstance::new(
            "x",
            vec!["a".into(), "b".into()],
            vec!["s".into(), "t".into()],
            vec!["x".into(), "y".into()],
            vec![0.5, 0.6],
            vec![vec![0.0; 2]; 2],
            vec![vec![0.0; 2]; 2],
        );
        assert!(bad_prior.is_err());
        let too_few_signals = BpInstance::new(
            "x",
            vec!["a".into(), "b".into()],
            vec!["s".into()],
            vec!["x".into(), "y".into()],
            vec![0.5, 0.5],
            vec![vec![0.0; 2]; 2],
            vec![vec![0.0; 2]; 2],
        );
        assert!(too_few_signals.is_err());
        assert!(SignalingScheme::direct(vec![vec![0.5, 0.4]]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let inst = rel();
        let back = BpInstance::from_json(&inst.to_json().unwrap()).unwrap();
        assert_eq!(back, inst);
        let broken = inst.to_json().unwrap().replace("0.6666666666666666", "0.9");
        assert!(BpInstance::from_json(&broken).is_err());
    }
}
