//! The recommendation-letter, courtroom and law-enforcement persuasion environments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{BpInstance, STRUCT_TOL};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Rel,
    Cor,
    Lae,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::Rel => "rel",
            EnvId::Cor => "cor",
            EnvId::Lae => "lae",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rel" => Ok(EnvId::Rel),
            "cor" => Ok(EnvId::Cor),
            "lae" => Ok(EnvId::Lae),
            other => Err(Error::domain(format!("unknown environment {other:?} (expected rel, cor or lae)"))),
        }
    }
}

/// Law-enforcement parameters: `miles` of road, `officers` patrols, speeding worth
/// `speed_value` per mile and a `fine` when caught.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaeParams {
    pub miles: u32,
    pub officers: u32,
    pub speed_value: f64,
    pub fine: f64,
}

impl Default for LaeParams {
    fn default() -> Self {
        LaeParams { miles: 3, officers: 2, speed_value: 1.0, fine: 1.2 }
    }
}

impl LaeParams {
    pub fn validate(&self) -> Result<()> {
        if self.miles == 0 || self.officers == 0 || self.officers >= self.miles {
            return Err(Error::domain(format!(
                "need 0 < officers < miles, got {} officers on {} miles",
                self.officers, self.miles
            )));
        }
        if !(self.speed_value > 0.0) || !(self.fine > self.speed_value) || !self.fine.is_finite() {
            return Err(Error::domain(format!(
                "need 0 < speed value < fine, got {} and {}",
                self.speed_value, self.fine
            )));
        }
        Ok(())
    }

    pub fn patrol_share(&self) -> f64 {
        f64::from(self.officers) / f64::from(self.miles)
    }
}

/// Environment selector with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lae: Option<LaeParams>,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        EnvSpec { id, lae: (id == EnvId::Lae).then(LaeParams::default) }
    }

    pub fn build(&self) -> Result<VerbalizedEnv> {
        match self.id {
            EnvId::Rel => make_rel(),
            EnvId::Cor => make_cor(),
            EnvId::Lae => make_lae(self.lae.unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolePrompts {
    pub sender: String,
    pub receiver: String,
}

/// A persuasion instance with its text rendering. State, signal and action index 0 is the
/// "positive" one (strong / guilty / patrolled, recommend / guilty / patrolled, hire / convict / obey).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerbalizedEnv {
    pub id: EnvId,
    pub base: BpInstance,
    pub state_templates: BTreeMap<String, Vec<String>>,
    slots: BTreeMap<String, Vec<String>>,
    /// Positive extreme first.
    pub signal_labels: [String; 2],
    pub role_prompts: RolePrompts,
    pub classification_labels: Vec<String>,
    pub lae: Option<LaeParams>,
}

pub const POSITIVE: usize = 0;
pub const NEGATIVE: usize = 1;

struct Fixtures {
    templates: &'static [(&'static str, &'static str)],
    slots: &'static str,
    sender_role: &'static str,
    receiver_role: &'static str,
}

const REL_FIXTURES: Fixtures = Fixtures {
    templates: &[
        ("strong", include_str!("../fixtures/rel/states/strong_0.txt")),
        ("strong", include_str!("../fixtures/rel/states/strong_1.txt")),
        ("weak", include_str!("../fixtures/rel/states/weak_0.txt")),
        ("weak", include_str!("../fixtures/rel/states/weak_1.txt")),
    ],
    slots: include_str!("../fixtures/rel/slots.json"),
    sender_role: include_str!("../fixtures/rel/roles/sender.txt"),
    receiver_role: include_str!("../fixtures/rel/roles/receiver.txt"),
};

const COR_FIXTURES: Fixtures = Fixtures {
    templates: &[
        ("guilty", include_str!("../fixtures/cor/states/guilty_0.txt")),
        ("guilty", include_str!("../fixtures/cor/states/guilty_1.txt")),
        ("innocent", include_str!("../fixtures/cor/states/innocent_0.txt")),
        ("innocent", include_str!("../fixtures/cor/states/innocent_1.txt")),
    ],
    slots: include_str!("../fixtures/cor/slots.json"),
    sender_role: include_str!("../fixtures/cor/roles/sender.txt"),
    receiver_role: include_str!("../fixtures/cor/roles/receiver.txt"),
};

const LAE_FIXTURES: Fixtures = Fixtures {
    templates: &[
        ("patrolled", include_str!("../fixtures/lae/states/patrolled_0.txt")),
        ("patrolled", include_str!("../fixtures/lae/states/patrolled_1.txt")),
        ("unpatrolled", include_str!("../fixtures/lae/states/unpatrolled_0.txt")),
        ("unpatrolled", include_str!("../fixtures/lae/states/unpatrolled_1.txt")),
    ],
    slots: include_str!("../fixtures/lae/slots.json"),
    sender_role: include_str!("../fixtures/lae/roles/sender.txt"),
    receiver_role: include_str!("../fixtures/lae/roles/receiver.txt"),
};

fn strings(ids: &[&str]) -> Vec<String> {
    ids.iter().map(|s| (*s).to_owned()).collect()
}

fn assemble(
    id: EnvId,
    base: BpInstance,
    fixtures: &Fixtures,
    fill: &[(&str, String)],
    lae: Option<LaeParams>,
) -> Result<VerbalizedEnv> {
    let mut state_templates: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (state, text) in fixtures.templates {
        state_templates.entry((*state).to_owned()).or_default().push(text.trim_end().to_owned());
    }
    let slots: BTreeMap<String, Vec<String>> = serde_json::from_str(fixtures.slots)?;
    let fill_role = |text: &str| {
        fill.iter().fold(text.trim_end().to_owned(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
    };
    let env = VerbalizedEnv {
        id,
        signal_labels: [base.signals[POSITIVE].clone(), base.signals[NEGATIVE].clone()],
        classification_labels: base.signals.clone(),
        role_prompts: RolePrompts {
            sender: fill_role(fixtures.sender_role),
            receiver: fill_role(fixtures.receiver_role),
        },
        base,
        state_templates,
        slots,
        lae,
    };
    for s in &env.base.states {
        if env.state_templates.get(s).map_or(true, Vec::is_empty) {
            return Err(Error::Internal(format!("no template for state {s:?}")));
        }
    }
    Ok(env)
}

/// Recommendation letters: a professor writes for strong or weak students, a recruiter hires or rejects.
pub fn make_rel() -> Result<VerbalizedEnv> {
    let base = BpInstance::new(
        "rel",
        strings(&["strong", "weak"]),
        strings(&["recommend", "not_recommend"]),
        strings(&["hire", "reject"]),
        vec![1.0 / 3.0, 2.0 / 3.0],
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
    )?;
    assemble(EnvId::Rel, base, &REL_FIXTURES, &[], None)
}

/// Courtroom: a prosecutor presents evidence, a judge convicts or acquits.
pub fn make_cor() -> Result<VerbalizedEnv> {
    let base = BpInstance::new(
        "cor",
        strings(&["guilty", "innocent"]),
        strings(&["guilty", "not_guilty"]),
        strings(&["convict", "acquit"]),
        vec![0.3, 0.7],
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
    )?;
    assemble(EnvId::Cor, base, &COR_FIXTURES, &[], None)
}

/// Law enforcement, one mile at a time: police announce patrols, a driver obeys or speeds.
pub fn make_lae(p: LaeParams) -> Result<VerbalizedEnv> {
    p.validate()?;
    let share = p.patrol_share();
    let base = BpInstance::new(
        "lae",
        strings(&["patrolled", "unpatrolled"]),
        strings(&["patrolled", "unpatrolled"]),
        strings(&["obey", "speed"]),
        vec![share, 1.0 - share],
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, p.speed_value - p.fine], vec![0.0, p.speed_value]],
    )?;
    let fill = [
        ("officers", p.officers.to_string()),
        ("miles", p.miles.to_string()),
        ("share", format!("{}/{}", p.officers, p.miles)),
        ("value", p.speed_value.to_string()),
        ("fine", p.fine.to_string()),
    ];
    assemble(EnvId::Lae, base, &LAE_FIXTURES, &fill, Some(p))
}

impl VerbalizedEnv {
    pub fn positive_signal(&self) -> &str {
        &self.signal_labels[POSITIVE]
    }

    pub fn negative_signal(&self) -> &str {
        &self.signal_labels[NEGATIVE]
    }

    /// Receiver decisions that make up one playout: each mile in the law-enforcement game, one otherwise.
    pub fn units_per_playout(&self) -> usize {
        self.lae.map_or(1, |p| p.miles as usize)
    }

    /// Draws the states of one playout. Law enforcement deploys exactly `officers` of the miles.
    pub fn draw_states(&self, rng: &mut impl Rng) -> Vec<usize> {
        match self.lae {
            Some(p) => {
                let mut miles: Vec<usize> = (0..p.miles as usize)
                    .map(|m| if m < p.officers as usize { POSITIVE } else { NEGATIVE })
                    .collect();
                miles.shuffle(rng);
                miles
            }
            None => vec![self.draw_state(rng)],
        }
    }

    /// One state drawn from the prior.
    pub fn draw_state(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, p) in self.base.prior.iter().enumerate() {
            acc += p;
            if u < acc {
                return w;
            }
        }
        self.base.n_states() - 1
    }

    /// Fills template `template` of `state` with slot values chosen by `seed`.
    pub fn render_state(&self, state: &str, template: usize, seed: u64) -> Result<String> {
        let templates = self
            .state_templates
            .get(state)
            .ok_or_else(|| Error::domain(format!("unknown state {state:?}")))?;
        let text = templates
            .get(template % templates.len())
            .ok_or_else(|| Error::domain("no templates for state"))?;
        let mut rng = seed::rng(seed, &["render", self.id.as_str(), state, &template.to_string()]);
        let mut out = text.clone();
        for (slot, values) in &self.slots {
            let key = format!("{{{slot}}}");
            if out.contains(&key) {
                let v = &values[rng.gen_range(0..values.len())];
                out = out.replace(&key, v);
            }
        }
        Ok(out)
    }

    pub fn n_templates(&self, state: &str) -> usize {
        self.state_templates.get(state).map_or(0, Vec::len)
    }

    /// Smallest belief in the positive state at which the receiver takes the positive action.
    pub fn belief_threshold(&self) -> f64 {
        let u = &self.base.u_receiver;
        let gain_pos = u[POSITIVE][POSITIVE] - u[POSITIVE][NEGATIVE];
        let gain_neg = u[NEGATIVE][POSITIVE] - u[NEGATIVE][NEGATIVE];
        if gain_neg >= 0.0 {
            0.0
        } else if gain_pos <= 0.0 {
            1.0
        } else {
            gain_neg / (gain_neg - gain_pos)
        }
    }
}

/// Closed-form payoffs of the lying-with-probability-ε scheme (positive state always signalled
/// truthfully, negative state signalled positive with probability ε) under an obedient receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticEquilibrium {
    pub sender: f64,
    pub receiver: f64,
    pub eps_star: f64,
}

/// Largest lie rate the receiver still obeys in the law-enforcement game, clamped to [0, 1].
pub fn lae_eps_star(p: &LaeParams) -> f64 {
    let (z, g, v, k) = (f64::from(p.miles), f64::from(p.officers), p.speed_value, p.fine);
    (1.0 - (v * z - g * k) / (v * z - v * g)).clamp(0.0, 1.0)
}

pub fn analytic_equilibrium(spec: &EnvSpec, eps: f64) -> Result<AnalyticEquilibrium> {
    let eps_star = match spec.id {
        EnvId::Rel => 0.5,
        EnvId::Cor => 3.0 / 7.0,
        EnvId::Lae => {
            let p = spec.lae.unwrap_or_default();
            p.validate()?;
            lae_eps_star(&p)
        }
    };
    if !(0.0..=eps_star + STRUCT_TOL).contains(&eps) {
        return Err(Error::domain(format!("lie rate {eps} outside [0, {eps_star}]")));
    }
    let (sender, receiver) = match spec.id {
        EnvId::Rel => ((1.0 + 2.0 * eps) / 3.0, (1.0 - 2.0 * eps) / 3.0),
        EnvId::Cor => (0.7 * eps + 0.3, 1.0 - 0.7 * eps),
        EnvId::Lae => {
            let p = spec.lae.unwrap_or_default();
            let (z, g, v) = (f64::from(p.miles), f64::from(p.officers), p.speed_value);
            (g / z + eps * (1.0 - g / z), (1.0 - eps) * v * (z - g) / z)
        }
    };
    Ok(AnalyticEquilibrium { sender, receiver, eps_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{expected_utilities, ReceiverPolicy, SignalingScheme};
    use crate::solver::solve_direct_lp;

    #[test]
    fn rel_tables() {
        let env = make_rel().unwrap();
        assert_eq!(env.base.prior, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(env.base.u_receiver[0][0], 1.0);
        assert_eq!(env.base.u_sender[1][0], 1.0);
        assert_eq!(env.belief_threshold(), 0.5);
    }

    #[test]
    fn cor_tables() {
        let env = make_cor().unwrap();
        assert_eq!(env.base.prior[0], 0.3);
        assert_eq!(env.base.u_receiver[0][0], 1.0);
        assert_eq!(env.base.u_receiver[1][0], 0.0);
        assert_eq!(env.base.u_sender[1][0], 1.0);
    }

    #[test]
    fn lae_tables_and_validation() {
        let env = make_lae(LaeParams::default()).unwrap();
        assert!((env.base.prior[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((env.base.u_receiver[0][1] + 0.2).abs() < 1e-12);
        assert_eq!(env.base.u_receiver[1][0], 0.0);
        assert!((env.belief_threshold() - 1.0 / 1.2).abs() < 1e-12);
        assert!(make_lae(LaeParams { fine: 0.5, ..LaeParams::default() }).is_err());
        assert!(make_lae(LaeParams { officers: 3, ..LaeParams::default() }).is_err());
        assert!(env.role_prompts.sender.contains("2 officers cover 3 miles"));
    }

    #[test]
    fn analytic_values() {
        let rel = analytic_equilibrium(&EnvSpec::new(EnvId::Rel), 0.0).unwrap();
        assert!((rel.sender - 1.0 / 3.0).abs() < 1e-15 && (rel.receiver - 1.0 / 3.0).abs() < 1e-15);
        let cor = analytic_equilibrium(&EnvSpec::new(EnvId::Cor), 3.0 / 7.0).unwrap();
        assert!((cor.sender - 0.6).abs() < 1e-12 && (cor.receiver - 0.7).abs() < 1e-12);
        let lae = analytic_equilibrium(&EnvSpec::new(EnvId::Lae), 0.0).unwrap();
        assert!((lae.eps_star - 0.4).abs() < 1e-12);
        assert!(analytic_equilibrium(&EnvSpec::new(EnvId::Rel), 0.6).is_err());
        assert!(analytic_equilibrium(&EnvSpec::new(EnvId::Cor), -0.1).is_err());
    }

    #[test]
    fn analytic_star_matches_lp() {
        for id in [EnvId::Rel, EnvId::Cor, EnvId::Lae] {
            let spec = EnvSpec::new(id);
            let env = spec.build().unwrap();
            let sol = solve_direct_lp(&env.base).unwrap();
            let a = analytic_equilibrium(&spec, 0.0).unwrap();
            let at_star = analytic_equilibrium(&spec, a.eps_star).unwrap();
            assert!((at_star.sender - sol.sender_value).abs() < 1e-9, "{id}");
            assert!((at_star.receiver - sol.receiver_value).abs() < 1e-9, "{id}");
            assert!((sol.scheme.prob(NEGATIVE, POSITIVE) - a.eps_star).abs() < 1e-9, "{id}");
        }
    }

    #[test]
    fn analytic_matches_expected_utilities() {
        let spec = EnvSpec::new(EnvId::Cor);
        let env = spec.build().unwrap();
        let obey = ReceiverPolicy::obedient(2).unwrap();
        for eps in [0.0, 0.1, 0.25, 3.0 / 7.0] {
            let scheme = SignalingScheme::direct(vec![vec![1.0, 0.0], vec![eps, 1.0 - eps]]).unwrap();
            let v = expected_utilities(&env.base, &scheme, &obey).unwrap();
            let a = analytic_equilibrium(&spec, eps).unwrap();
            assert!((v.sender - a.sender).abs() < 1e-12);
            assert!((v.receiver - a.receiver).abs() < 1e-12);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let env = make_rel().unwrap();
        let a = env.render_state("strong", 0, 42).unwrap();
        assert_eq!(a, env.render_state("strong", 0, 42).unwrap());
        assert!(!a.contains('{'));
        assert!(env.render_state("average", 0, 1).is_err());
        let cor = make_cor().unwrap();
        let text = cor.render_state("innocent", 1, 3).unwrap();
        assert!(text.contains("Decisive item"));
        assert!(!text.contains('{'));
    }

    #[test]
    fn lae_deployment_has_fixed_patrol_count() {
        let env = make_lae(LaeParams::default()).unwrap();
        let mut rng = seed::rng(1, &["t"]);
        for _ in 0..50 {
            let states = env.draw_states(&mut rng);
            assert_eq!(states.len(), 3);
            assert_eq!(states.iter().filter(|&&s| s == POSITIVE).count(), 2);
        }
    }

    #[test]
    fn env_id_parsing() {
        assert_eq!("REL".parse::<EnvId>().unwrap(), EnvId::Rel);
        assert!("xyz".parse::<EnvId>().is_err());
    }
}
