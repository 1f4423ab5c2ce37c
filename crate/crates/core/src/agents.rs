//! Baseline solvers and the train/test evaluation harness.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{generate_game, normalized_score, parse_command, Env, EnvError, Game, Info};
use crate::par::{self, Exec};
use crate::rules::{apply, result_id, valid_actions, GroundedAction, Verb};
use crate::world::{Fact, Lexicon, Relation, WorldState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("search budget of {budget} nodes exhausted")]
    BudgetExhausted { budget: usize },
    #[error("bad policy document: {0}")]
    PolicyFormat(String),
}

/// What an agent did during one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub actions: Vec<GroundedAction>,
    pub rewards: Vec<i32>,
    pub goal_satisfied: bool,
}

impl Episode {
    pub fn score(&self, game: &Game) -> Result<f64, EnvError> {
        normalized_score(&self.rewards, game.reference.len())
    }
}

/// Runs one episode, asking `choose` for every command until it ends.
pub fn play<F>(game: &Game, mut choose: F) -> Result<Episode, EnvError>
where
    F: FnMut(&Env<'_>, &Info) -> GroundedAction,
{
    let mut env = Env::new(game)?;
    let (_, mut info) = env.reset();
    let mut actions = Vec::new();
    while !env.is_done() {
        let action = choose(&env, &info);
        info = env.step(&action)?.info;
        actions.push(action);
    }
    Ok(Episode {
        actions,
        rewards: env.rewards().to_vec(),
        goal_satisfied: info.goal_satisfied,
    })
}

/// Steps `actions` in order, stopping early if the episode ends.
pub fn replay_episode(game: &Game, actions: &[GroundedAction]) -> Result<Episode, EnvError> {
    let mut env = Env::new(game)?;
    env.reset();
    let mut done = Vec::new();
    let mut satisfied = false;
    for a in actions {
        if env.is_done() {
            break;
        }
        satisfied = env.step(a)?.info.goal_satisfied;
        done.push(a.clone());
    }
    Ok(Episode {
        actions: done,
        rewards: env.rewards().to_vec(),
        goal_satisfied: satisfied,
    })
}

/// Score of stepping the reference sequence through the environment.
pub fn oracle_replay(game: &Game) -> Result<f64, EnvError> {
    if game.reference.is_empty() {
        return Err(EnvError::EmptyReference);
    }
    replay_episode(game, &game.reference)?.score(game)
}

/// Uniform choice among valid actions at every step.
pub fn random_rollout<R: Rng + ?Sized>(game: &Game, rng: &mut R) -> Result<Episode, EnvError> {
    play(game, |_, info| {
        info.valid_actions
            .choose(rng)
            .cloned()
            .expect("examine is always available")
    })
}

/// The goal fact an action exists to add; `None` for neutral verbs.
fn primary_fact(a: &GroundedAction) -> Option<Fact> {
    let b = a.arg2.as_ref();
    match a.verb {
        Verb::LinkDescriptor => b.map(|b| Fact::binary(Relation::Describes, &a.arg1, b)),
        Verb::InputAssign => b.map(|b| Fact::binary(Relation::Input, &a.arg1, b)),
        Verb::Locate => b.map(|b| Fact::binary(Relation::Located, &a.arg1, b)),
        Verb::RunOp => Some(Fact::unary(Relation::OpRun, &a.arg1)),
        Verb::Obtain => Some(Fact::unary(Relation::Obtained, &result_id(&a.arg1))),
        Verb::Take | Verb::Drop | Verb::Examine => None,
    }
}

/// Whether a missing goal fact can no longer be added from `state`.
fn unreachable(state: &WorldState, fact: &Fact) -> bool {
    let consumed = |id| state.has_unary(Relation::Consumed, id);
    let bound_elsewhere = |rel: Relation| {
        state
            .facts_with(rel)
            .any(|f| f.head == fact.head && f.tail != fact.tail)
    };
    match fact.relation {
        Relation::Describes => {
            bound_elsewhere(Relation::Describes) || fact.tail.as_ref().is_some_and(consumed)
        }
        Relation::Input => {
            consumed(&fact.head)
                || bound_elsewhere(Relation::Input)
                || state.has_unary(Relation::Obtained, &fact.head)
                || fact.tail.as_ref().is_some_and(|op| state.has_unary(Relation::OpRun, op))
        }
        Relation::Located => {
            consumed(&fact.head)
                || bound_elsewhere(Relation::Located)
                || state.has_unary(Relation::OpRun, &fact.head)
        }
        Relation::Obtained => {
            consumed(&fact.head) || state.facts_with(Relation::Input).any(|f| f.head == fact.head)
        }
        _ => false,
    }
}

struct Node {
    state: WorldState,
    parent: Option<(usize, GroundedAction)>,
}

/// Best-first search from `s0` to a state containing `goal`.
///
/// Only actions adding a missing goal fact are expanded, states that can no
/// longer reach the goal are dropped and repeated fact sets are skipped.
/// `budget` bounds the number of expanded nodes.
pub fn plan(s0: &WorldState, goal: &BTreeSet<Fact>, budget: usize) -> Result<Vec<GroundedAction>, AgentError> {
    let missing = |s: &WorldState| goal.iter().filter(|f| !s.contains(f)).count();
    if missing(s0) == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut nodes = vec![Node {
        state: s0.clone(),
        parent: None,
    }];
    let mut seen: HashSet<BTreeSet<Fact>> = HashSet::from([s0.facts.clone()]);
    let mut open = BinaryHeap::from([Reverse((missing(s0), 0usize))]);
    let mut expanded = 0;
    while let Some(Reverse((left, i))) = open.pop() {
        if left == 0 {
            let mut path = Vec::new();
            let mut at = i;
            while let Some((p, a)) = &nodes[at].parent {
                path.push(a.clone());
                at = *p;
            }
            path.reverse();
            return Ok(path);
        }
        if expanded == budget {
            return Err(AgentError::BudgetExhausted { budget });
        }
        expanded += 1;
        let state = nodes[i].state.clone();
        for a in valid_actions(&state) {
            if !primary_fact(&a).is_some_and(|f| goal.contains(&f) && !state.contains(&f)) {
                continue;
            }
            let next = apply(&state, &a, &mut rng).expect("valid actions apply").next_state;
            if !seen.insert(next.facts.clone()) {
                continue;
            }
            if goal.iter().any(|f| !next.contains(f) && unreachable(&next, f)) {
                continue;
            }
            open.push(Reverse((missing(&next), nodes.len())));
            nodes.push(Node {
                state: next,
                parent: Some((i, a)),
            });
        }
    }
    Err(AgentError::BudgetExhausted { budget })
}

/// Plans from the game's start state and goal without its reference.
pub fn plan_search(game: &Game, budget: usize) -> Result<Vec<GroundedAction>, AgentError> {
    plan(&game.s0, &game.goal, budget)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub episodes_per_game: usize,
    pub seed: u64,
}

impl Default for QConfig {
    fn default() -> Self {
        QConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            episodes_per_game: 50,
            seed: 0,
        }
    }
}

/// State features: the unsatisfied goal facts plus the recent commands.
pub fn feature_key<'a>(unsatisfied: &[Fact], recent: impl Iterator<Item = &'a str>) -> String {
    let mut key = String::new();
    for f in unsatisfied {
        key.push_str(&f.to_string());
        key.push(';');
    }
    key.push('|');
    for c in recent {
        key.push_str(c);
        key.push(';');
    }
    key
}

/// Tabular action values over feature keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: QConfig,
    table: HashMap<String, HashMap<GroundedAction, f64>>,
}

impl Policy {
    pub fn untrained(config: QConfig) -> Self {
        Policy {
            config,
            table: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.table.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn value(&self, key: &str, action: &GroundedAction) -> f64 {
        self.table
            .get(key)
            .and_then(|row| row.get(action))
            .copied()
            .unwrap_or(0.0)
    }

    fn best_value(&self, key: &str, valid: &[GroundedAction]) -> f64 {
        let Some(row) = self.table.get(key) else {
            return 0.0;
        };
        valid
            .iter()
            .map(|a| row.get(a).copied().unwrap_or(0.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued valid action; ties, including unseen keys, are broken
    /// uniformly at random.
    pub fn choose<R: Rng + ?Sized>(&self, key: &str, valid: &[GroundedAction], rng: &mut R) -> GroundedAction {
        let best = self.best_value(key, valid);
        let ties: Vec<&GroundedAction> = valid.iter().filter(|a| self.value(key, a) == best).collect();
        (*ties.choose(rng).expect("non-empty action list")).clone()
    }

    fn update(&mut self, key: &str, action: &GroundedAction, target: f64) {
        let alpha = self.config.alpha;
        let q = self
            .table
            .entry(key.to_string())
            .or_default()
            .entry(action.clone())
            .or_insert(0.0);
        *q += alpha * (target - *q);
    }

    pub fn to_json(&self) -> String {
        let table: BTreeMap<&str, BTreeMap<String, f64>> = self
            .table
            .iter()
            .map(|(k, row)| (k.as_str(), row.iter().map(|(a, q)| (a.to_string(), *q)).collect()))
            .collect();
        let doc = serde_json::json!({
            "format": "tl-policy/1",
            "config": self.config,
            "table": table,
        });
        serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            config: QConfig,
            table: BTreeMap<String, BTreeMap<String, f64>>,
        }
        let bad = |m: String| AgentError::PolicyFormat(m);
        let doc: Doc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if doc.format != "tl-policy/1" {
            return Err(bad(format!("unknown format `{}`", doc.format)));
        }
        let mut table = HashMap::new();
        for (key, row) in doc.table {
            let mut parsed = HashMap::new();
            for (action, q) in row {
                parsed.insert(parse_command(&action).map_err(|e| bad(e.to_string()))?, q);
            }
            table.insert(key, parsed);
        }
        Ok(Policy {
            config: doc.config,
            table,
        })
    }
}

/// Epsilon-greedy tabular Q-learning restricted to valid actions. Episodes
/// cycle over the games; epsilon decays linearly over all episodes.
pub fn q_train(games: &[Game], config: QConfig) -> Result<Policy, EnvError> {
    let mut policy = Policy::untrained(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.episodes_per_game * games.len();
    let mut t = 0usize;
    for _ in 0..config.episodes_per_game {
        for game in games {
            let frac = if total > 1 { t as f64 / (total - 1) as f64 } else { 1.0 };
            let epsilon = config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac;
            t += 1;
            let mut env = Env::new(game)?;
            let (_, mut info) = env.reset();
            let mut key = feature_key(&info.unsatisfied_goal, env.recent());
            while !env.is_done() {
                let action = if rng.gen::<f64>() < epsilon {
                    info.valid_actions.choose(&mut rng).expect("non-empty").clone()
                } else {
                    policy.choose(&key, &info.valid_actions, &mut rng)
                };
                let out = env.step(&action)?;
                let next_key = feature_key(&out.info.unsatisfied_goal, env.recent());
                let future = match out.done {
                    true => 0.0,
                    false => config.gamma * policy.best_value(&next_key, &out.info.valid_actions),
                };
                policy.update(&key, &action, f64::from(out.reward) + future);
                key = next_key;
                info = out.info;
            }
        }
    }
    Ok(policy)
}

/// Greedy episode under `policy`; `rng` only breaks ties.
pub fn policy_rollout<R: Rng + ?Sized>(game: &Game, policy: &Policy, rng: &mut R) -> Result<Episode, EnvError> {
    play(game, |env, info| {
        let key = feature_key(&info.unsatisfied_goal, env.recent());
        policy.choose(&key, &info.valid_actions, rng)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Oracle,
    Random,
    Search,
    Qlearn,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Oracle, AgentKind::Random, AgentKind::Search, AgentKind::Qlearn];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Oracle => "oracle",
            AgentKind::Random => "random",
            AgentKind::Search => "search",
            AgentKind::Qlearn => "qlearn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        AgentKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

/// Train/test protocol settings. Train and test seeds are disjoint ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub levels: Vec<u8>,
    pub train_games: usize,
    pub test_games: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub budget: usize,
    pub q: QConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            levels: (1..=5).collect(),
            train_games: 100,
            test_games: 10,
            train_seed: 0,
            test_seed: 1000,
            budget: 200_000,
            q: QConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    pub n_games: usize,
    pub mean_score: f64,
    /// Mean reference length of the test games.
    pub mean_len: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: AgentKind,
    pub protocol: Protocol,
    pub levels: Vec<LevelReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("json values serialize") + "\n"
    }

    /// Tab-separated `level, n_games, mean_score, mean_len` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::from("level\tn_games\tmean_score\tmean_len\n");
        for l in &self.levels {
            out.push_str(&format!("{}\t{}\t{:.4}\t{:.2}\n", l.level, l.n_games, l.mean_score, l.mean_len));
        }
        out
    }

    pub fn level(&self, level: u8) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Generates games for consecutive seeds starting at `first_seed`.
pub fn corpus(level: u8, first_seed: u64, count: usize, lexicon: &Lexicon, exec: Exec) -> Result<Vec<Game>, EnvError> {
    let seeds: Vec<u64> = (first_seed..first_seed + count as u64).collect();
    par::map(exec, &seeds, |&s| generate_game(level, s, lexicon))
        .into_iter()
        .collect()
}

/// Scores one test game. Search failures and unsolved plans count as the
/// episode they produce; a failed search scores 0.
fn score_game(kind: AgentKind, game: &Game, policy: Option<&Policy>, budget: usize) -> Result<f64, AgentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(game.seed);
    let score = match kind {
        AgentKind::Oracle => oracle_replay(game)?,
        AgentKind::Random => random_rollout(game, &mut rng)?.score(game)?,
        AgentKind::Qlearn => {
            let policy = policy.expect("q-learning evaluation has a policy");
            policy_rollout(game, policy, &mut rng)?.score(game)?
        }
        AgentKind::Search => match plan_search(game, budget) {
            Ok(plan) => replay_episode(game, &plan)?.score(game)?,
            Err(AgentError::BudgetExhausted { .. }) => 0.0,
            Err(e) => return Err(e),
        },
    };
    Ok(score)
}

/// Runs the train/test protocol for one agent kind over every level.
pub fn evaluate(kind: AgentKind, protocol: &Protocol, lexicon: &Lexicon, exec: Exec) -> Result<EvalReport, AgentError> {
    let per_level = par::map(exec, &protocol.levels, |&level| -> Result<LevelReport, AgentError> {
        let tests = corpus(level, protocol.test_seed, protocol.test_games, lexicon, exec)?;
        let policy = match kind {
            AgentKind::Qlearn => {
                let train = corpus(level, protocol.train_seed, protocol.train_games, lexicon, exec)?;
                Some(q_train(&train, protocol.q)?)
            }
            _ => None,
        };
        let scores = par::map(exec, &tests, |g| score_game(kind, g, policy.as_ref(), protocol.budget))
            .into_iter()
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(LevelReport {
            level,
            n_games: tests.len(),
            mean_score: mean(scores.iter().copied()),
            mean_len: mean(tests.iter().map(|g| g.reference.len() as f64)),
            scores,
        })
    });
    Ok(EvalReport {
        agent: kind,
        protocol: protocol.clone(),
        levels: per_level.into_iter().collect::<Result<_, _>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questgen::equivalent;

    fn game(level: u8, seed: u64) -> Game {
        generate_game(level, seed, &Lexicon::builtin()).unwrap()
    }

    #[test]
    fn oracle_is_exact() {
        for level in 1..=5 {
            for seed in 0..10 {
                assert_eq!(oracle_replay(&game(level, seed)), Ok(1.0));
            }
        }
    }

    #[test]
    fn oracle_without_collection() {
        let mut g = game(3, 4);
        let k = g.reference.len();
        let mut env_game = g.clone();
        env_game.reference.pop();
        let ep = replay_episode(&g, &env_game.reference).unwrap();
        assert_eq!(ep.score(&g), Ok((k as f64 - 1.0) / k as f64));
        assert!(!ep.goal_satisfied);
        g.reference.clear();
        g.goal.clear();
        assert_eq!(oracle_replay(&g), Err(EnvError::EmptyReference));
    }

    #[test]
    fn planner_matches_reference() {
        for level in 1..=3 {
            for seed in 0..10 {
                let g = game(level, seed);
                let plan = plan_search(&g, 200_000).unwrap();
                assert_eq!(replay_episode(&g, &plan).unwrap().score(&g), Ok(1.0));
                assert!(equivalent(&plan, &g.reference, &g.s0).unwrap());
            }
        }
    }

    #[test]
    fn planner_edge_cases() {
        let g = game(5, 0);
        assert_eq!(plan_search(&g, 1), Err(AgentError::BudgetExhausted { budget: 1 }));
        assert_eq!(plan(&g.s0, &BTreeSet::new(), 1), Ok(Vec::new()));
    }

    #[test]
    fn random_is_deterministic_and_capped() {
        let g = game(2, 3);
        let a = random_rollout(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_rollout(&g, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.actions.len() <= g.episode_cap);
        assert!(a.score(&g).unwrap() < 1.0);
    }

    #[test]
    fn untrained_policy_is_uniform() {
        let p = Policy::untrained(QConfig::default());
        let g = game(1, 0);
        let valid = valid_actions(&g.s0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks: HashSet<GroundedAction> = (0..500).map(|_| p.choose("k", &valid, &mut rng)).collect();
        assert_eq!(picks.len(), valid.len());
    }

    #[test]
    fn training_is_reproducible_and_persists() {
        let games: Vec<Game> = (0..5).map(|s| game(1, s)).collect();
        let config = QConfig {
            episodes_per_game: 5,
            ..QConfig::default()
        };
        let a = q_train(&games, config).unwrap();
        let b = q_train(&games, config).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let text = a.to_json();
        let back = Policy::from_json(&text).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json(), text);
        assert!(Policy::from_json("{}").is_err());
    }

    #[test]
    fn report_shape() {
        let protocol = Protocol {
            levels: vec![1, 2, 3],
            test_games: 3,
            ..Protocol::default()
        };
        let r = evaluate(AgentKind::Oracle, &protocol, &Lexicon::builtin(), Exec::available()).unwrap();
        assert_eq!(r.levels.len(), 3);
        assert!(r.levels.iter().all(|l| l.mean_score == 1.0 && l.n_games == 3));
        assert!(r.levels.windows(2).all(|w| w[0].mean_len <= w[1].mean_len));
        let table = r.to_table();
        assert_eq!(table.lines().count(), 4);
        assert!(table.starts_with("level\tn_games\tmean_score\tmean_len\n1\t3\t1.0000\t"));
        assert_eq!(r.to_json(), r.to_json());
    }
}
