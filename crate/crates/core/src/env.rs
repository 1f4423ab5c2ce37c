//! The text game: command parsing, reward accounting, observations and
//! episode control.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::questgen::{dependencies, generate, replay_from, ActionGraph, QuestError};
use crate::rules::{apply, preconditions_hold, valid_actions, GroundedAction, Verb};
use crate::surface::{realize_instructions, realize_surface, SurfaceError, TemplateSet};
use crate::world::{EntityId, Fact, Lexicon, Relation, WorldState};

pub const DEFAULT_EPISODE_CAP: usize = 50;
/// Commands echoed back in every observation.
pub const RECENT_COMMANDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse `{token}`: {message}")]
pub struct ParseError {
    pub token: String,
    pub message: &'static str,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("corrupt game: {0}")]
    CorruptGame(String),
    #[error("the episode is over")]
    EpisodeOver,
    #[error("the game has no reference sequence")]
    EmptyReference,
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error(transparent)]
    Quest(#[from] QuestError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    pub id: String,
    pub s0: WorldState,
    pub surface: String,
    pub instructions: String,
    pub goal: BTreeSet<Fact>,
    pub reference: Vec<GroundedAction>,
    pub level: u8,
    pub seed: u64,
    pub episode_cap: usize,
    /// Kept for completeness; scoring is undiscounted.
    pub discount: f64,
}

impl Game {
    /// Realizes text for a generated quest. Surface wording is seeded by the
    /// quest seed.
    pub fn from_graph(graph: &ActionGraph, templates: &TemplateSet) -> Result<Self, SurfaceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(graph.seed);
        let surface = realize_surface(graph, templates, &mut rng)?;
        Ok(Game {
            id: format!("level{}-seed{}", graph.level, graph.seed),
            s0: graph.s0.clone(),
            surface,
            instructions: realize_instructions(&graph.goal, &graph.s0.entities),
            goal: graph.goal.clone(),
            reference: graph.actions.clone(),
            level: graph.level,
            seed: graph.seed,
            episode_cap: DEFAULT_EPISODE_CAP.max(graph.actions.len()),
            discount: 1.0,
        })
    }

    /// A game without goal or reference; every reward is 0.
    pub fn reward_free(id: impl Into<String>, s0: WorldState, surface: impl Into<String>) -> Self {
        Game {
            id: id.into(),
            s0,
            surface: surface.into(),
            instructions: realize_instructions(&BTreeSet::new(), &Default::default()),
            goal: BTreeSet::new(),
            reference: Vec::new(),
            level: 0,
            seed: 0,
            episode_cap: DEFAULT_EPISODE_CAP,
            discount: 1.0,
        }
    }

    pub fn is_reward_free(&self) -> bool {
        self.reference.is_empty() && self.goal.is_empty()
    }

    pub fn graph(&self) -> ActionGraph {
        ActionGraph {
            s0: self.s0.clone(),
            actions: self.reference.clone(),
            goal: self.goal.clone(),
            level: self.level,
            seed: self.seed,
        }
    }

    /// Checks that the reference replays to the goal within the cap.
    pub fn check(&self) -> Result<(), EnvError> {
        if self.episode_cap < self.reference.len() {
            return Err(EnvError::CorruptGame(format!(
                "episode cap {} is shorter than the reference ({})",
                self.episode_cap,
                self.reference.len()
            )));
        }
        if self.reference.is_empty() {
            return match self.goal.is_empty() {
                true => Ok(()),
                false => Err(EnvError::CorruptGame("goal without reference".into())),
            };
        }
        let end = replay_from(&self.s0, &self.reference, self.seed)
            .map_err(|e| EnvError::CorruptGame(e.to_string()))?;
        match self.goal.iter().find(|f| !end.contains(f)) {
            Some(f) => Err(EnvError::CorruptGame(format!("reference does not reach `{f}`"))),
            None => Ok(()),
        }
    }
}

/// Generates a quest and realizes it with the built-in templates.
pub fn generate_game(level: u8, seed: u64, lexicon: &Lexicon) -> Result<Game, EnvError> {
    let graph = generate(level, seed, lexicon)?;
    Ok(Game::from_graph(&graph, &TemplateSet::builtin())?)
}

/// Parses `verb arg1 [arg2]` with canonical verb names and entity ids.
pub fn parse_command(text: &str) -> Result<GroundedAction, ParseError> {
    let mut tokens = text.split_whitespace();
    let err = |token: &str, message| ParseError {
        token: token.to_string(),
        message,
    };
    let head = tokens.next().ok_or_else(|| err("", "empty command"))?;
    let verb = Verb::from_name(&head.to_ascii_lowercase()).ok_or_else(|| err(head, "unknown verb"))?;
    let mut args = Vec::with_capacity(2);
    for token in tokens {
        if args.len() == verb.arity() {
            return Err(err(token, "too many arguments"));
        }
        args.push(EntityId::parse(token).map_err(|_| err(token, "not an entity id"))?);
    }
    match args.as_slice() {
        [a] if verb.arity() == 1 => Ok(GroundedAction::unary(verb, a)),
        [a, b] => Ok(GroundedAction::binary(verb, a, b)),
        _ => Err(err(head, "missing argument")),
    }
}

/// Tracks which reference actions have been credited.
#[derive(Debug, Clone)]
pub struct QuestMonitor {
    reference: Vec<GroundedAction>,
    deps: Vec<Vec<usize>>,
    credited: Vec<bool>,
}

impl QuestMonitor {
    pub fn new(reference: &[GroundedAction]) -> Self {
        QuestMonitor {
            reference: reference.to_vec(),
            deps: dependencies(reference),
            credited: vec![false; reference.len()],
        }
    }

    pub fn remaining(&self) -> impl Iterator<Item = &GroundedAction> {
        self.reference
            .iter()
            .zip(&self.credited)
            .filter(|(_, c)| !**c)
            .map(|(a, _)| a)
    }

    fn ready(&self, i: usize) -> bool {
        !self.credited[i] && self.deps[i].iter().all(|&j| self.credited[j])
    }

    /// Uncredited actions whose dependencies are credited and whose
    /// preconditions hold in `state`.
    pub fn frontier(&self, state: &WorldState) -> Vec<&GroundedAction> {
        (0..self.reference.len())
            .filter(|&i| self.ready(i) && preconditions_hold(state, &self.reference[i]).is_ok())
            .map(|i| &self.reference[i])
            .collect()
    }

    /// Credits the first ready reference action equal to `action`.
    fn credit(&mut self, action: &GroundedAction) -> bool {
        let hit = (0..self.reference.len()).find(|&i| self.ready(i) && &self.reference[i] == action);
        if let Some(i) = hit {
            self.credited[i] = true;
        }
        hit.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Info {
    pub valid_actions: Vec<GroundedAction>,
    pub goal_satisfied: bool,
    pub unsatisfied_goal: Vec<Fact>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub observation: String,
    pub reward: i32,
    pub done: bool,
    pub info: Info,
}

/// `Σ r / |K|`, undiscounted.
pub fn normalized_score(rewards: &[i32], reference_len: usize) -> Result<f64, EnvError> {
    if reference_len == 0 {
        return Err(EnvError::EmptyReference);
    }
    Ok(rewards.iter().map(|&r| f64::from(r)).sum::<f64>() / reference_len as f64)
}

/// One episode over a borrowed game.
#[derive(Debug, Clone)]
pub struct Env<'g> {
    game: &'g Game,
    state: WorldState,
    monitor: QuestMonitor,
    rng: ChaCha8Rng,
    recent: VecDeque<String>,
    rewards: Vec<i32>,
    done: bool,
}

impl<'g> Env<'g> {
    pub fn new(game: &'g Game) -> Result<Self, EnvError> {
        game.check()?;
        Ok(Env {
            game,
            state: game.s0.clone(),
            monitor: QuestMonitor::new(&game.reference),
            rng: ChaCha8Rng::seed_from_u64(game.seed),
            recent: VecDeque::new(),
            rewards: Vec::new(),
            done: false,
        })
    }

    pub fn reset(&mut self) -> (String, Info) {
        self.state = self.game.s0.clone();
        self.monitor = QuestMonitor::new(&self.game.reference);
        self.rng = ChaCha8Rng::seed_from_u64(self.game.seed);
        self.recent.clear();
        self.rewards.clear();
        self.done = false;
        (self.observation(&self.game.surface), self.info())
    }

    pub fn step(&mut self, command: &GroundedAction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let (mut reward, feedback) = match apply(&self.state, command, &mut self.rng) {
            Ok(t) => {
                let credited = self.monitor.credit(command);
                self.state = t.next_state;
                let reward = match (credited, command.verb.is_neutral()) {
                    (true, _) => 1,
                    (false, true) => 0,
                    (false, false) => -1,
                };
                (reward, t.feedback)
            }
            Err(crate::rules::RuleError::PreconditionViolated { reason, .. }) => {
                (-1, format!("You can't do that: {reason}."))
            }
        };
        if self.game.is_reward_free() {
            reward = 0;
        }
        if self.recent.len() == RECENT_COMMANDS {
            self.recent.pop_front();
        }
        self.recent.push_back(command.to_string());
        self.rewards.push(reward);
        let info = self.info();
        self.done = info.goal_satisfied || self.rewards.len() >= self.game.episode_cap;
        let feedback = match info.goal_satisfied {
            true => format!("{feedback} All instructions are complete."),
            false => feedback,
        };
        Ok(StepOutcome {
            observation: self.observation(&feedback),
            reward,
            done: self.done,
            info,
        })
    }

    pub fn game(&self) -> &'g Game {
        self.game
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn monitor(&self) -> &QuestMonitor {
        &self.monitor
    }

    pub fn rewards(&self) -> &[i32] {
        &self.rewards
    }

    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn recent(&self) -> impl Iterator<Item = &str> {
        self.recent.iter().map(String::as_str)
    }

    pub fn score(&self) -> Result<f64, EnvError> {
        normalized_score(&self.rewards, self.game.reference.len())
    }

    pub fn goal_satisfied(&self) -> bool {
        !self.game.goal.is_empty() && self.state.is_subset_of(&self.game.goal)
    }

    pub fn unsatisfied_goal(&self) -> Vec<Fact> {
        self.game
            .goal
            .iter()
            .filter(|f| !self.state.contains(f))
            .cloned()
            .collect()
    }

    pub fn info(&self) -> Info {
        Info {
            valid_actions: valid_actions(&self.state),
            goal_satisfied: self.goal_satisfied(),
            unsatisfied_goal: self.unsatisfied_goal(),
        }
    }

    fn observation(&self, head: &str) -> String {
        format!(
            "{head}\n\n{}\n\n{}\n{}",
            self.game.instructions,
            RecentBanner(&self.recent),
            RoomListing(&self.state)
        )
    }
}

struct RecentBanner<'a>(&'a VecDeque<String>);

impl fmt::Display for RecentBanner<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "recent:")?;
        if self.0.is_empty() {
            return write!(f, " -");
        }
        for (i, c) in self.0.iter().enumerate() {
            write!(f, "{} {c}", if i == 0 { "" } else { " |" })?;
        }
        Ok(())
    }
}

struct RoomListing<'a>(&'a WorldState);

impl fmt::Display for RoomListing<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = self.0;
        write!(f, "room:")?;
        let mut first = true;
        for e in state.interactable() {
            if state.has_unary(Relation::Consumed, &e.id) {
                continue;
            }
            let held = matches!(state.location_of(&e.id), Some(l) if l.relation == Relation::Holds);
            let sep = if first { " " } else { ", " };
            first = false;
            write!(f, "{sep}{} ({})", e.name, e.id)?;
            if held {
                write!(f, " [held]")?;
            }
        }
        if first {
            write!(f, " -")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::EntityKind;

    fn id(s: &str) -> EntityId {
        EntityId::parse(s).unwrap()
    }

    fn game(level: u8, seed: u64) -> Game {
        generate_game(level, seed, &Lexicon::builtin()).unwrap()
    }

    #[test]
    fn parsing() {
        assert_eq!(
            parse_command("input-assign m-1 op-1"),
            Ok(GroundedAction::binary(Verb::InputAssign, &id("m-1"), &id("op-1")))
        );
        assert_eq!(parse_command("  obtain   op-2 "), Ok(GroundedAction::unary(Verb::Obtain, &id("op-2"))));
        assert_eq!(parse_command("mix m-1").unwrap_err().token, "mix");
        assert_eq!(parse_command("run-op op-1 op-2").unwrap_err().token, "op-2");
        assert_eq!(parse_command("locate op-1").unwrap_err().message, "missing argument");
        assert_eq!(parse_command("take NaCl").unwrap_err().token, "NaCl");
        assert!(parse_command("").is_err());
    }

    #[test]
    fn reference_earns_full_score() {
        for level in 1..=5 {
            let g = game(level, 3);
            let mut env = Env::new(&g).unwrap();
            let (obs, info) = env.reset();
            assert!(obs.contains(&g.instructions) && obs.contains(&g.surface));
            assert!(!info.goal_satisfied);
            for (i, a) in g.reference.iter().enumerate() {
                let out = env.step(a).unwrap();
                assert_eq!(out.reward, 1, "{a}");
                assert_eq!(out.done, i + 1 == g.reference.len());
            }
            assert_eq!(env.score(), Ok(1.0));
            assert_eq!(env.step(&g.reference[0]), Err(EnvError::EpisodeOver));
        }
    }

    #[test]
    fn neutral_wrong_and_invalid() {
        let g = game(2, 1);
        let mut env = Env::new(&g).unwrap();
        env.reset();
        let m = g.s0.interactable().find(|e| e.kind == EntityKind::Material).unwrap().id.clone();
        let before = env.state().clone();
        let out = env.step(&GroundedAction::unary(Verb::Examine, &m)).unwrap();
        assert_eq!(out.reward, 0);
        assert_eq!(env.state(), &before);

        // a legal link that is not in the reference
        let wrong = out
            .info
            .valid_actions
            .iter()
            .find(|a| a.verb == Verb::LinkDescriptor && !g.reference.contains(a))
            .cloned();
        if let Some(wrong) = wrong {
            assert_eq!(env.step(&wrong).unwrap().reward, -1);
            assert_ne!(env.state(), &before);
        }
        let state = env.state().clone();
        let bogus = GroundedAction::unary(Verb::Obtain, &id("op-9"));
        assert_eq!(env.step(&bogus).unwrap().reward, -1);
        assert_eq!(env.state(), &state);
    }

    #[test]
    fn duplicate_credit_is_penalized() {
        let g = game(1, 0);
        let mut env = Env::new(&g).unwrap();
        env.reset();
        let first = g.reference[0].clone();
        assert_eq!(env.step(&first).unwrap().reward, 1);
        assert_eq!(env.step(&first).unwrap().reward, -1);
    }

    #[test]
    fn recent_banner_keeps_four() {
        let g = game(1, 0);
        let mut env = Env::new(&g).unwrap();
        env.reset();
        let m = g.s0.interactable().next().unwrap().id.clone();
        let mut last = String::new();
        for _ in 0..6 {
            last = env.step(&GroundedAction::unary(Verb::Examine, &m)).unwrap().observation;
        }
        let banner = last.lines().find(|l| l.starts_with("recent:")).unwrap();
        assert_eq!(banner.matches("examine").count(), RECENT_COMMANDS);
        assert!(last.lines().any(|l| l.starts_with("room:")));
    }

    #[test]
    fn cap_ends_episode() {
        let g = game(1, 0);
        let mut env = Env::new(&g).unwrap();
        env.reset();
        let m = g.s0.interactable().next().unwrap().id.clone();
        let look = GroundedAction::unary(Verb::Examine, &m);
        for i in 1..=g.episode_cap {
            assert_eq!(env.step(&look).unwrap().done, i == g.episode_cap);
        }
        assert_eq!(env.score(), Ok(0.0));
    }

    #[test]
    fn reset_is_idempotent() {
        let g = game(3, 2);
        let mut env = Env::new(&g).unwrap();
        let a = env.reset();
        env.step(&g.reference[0]).unwrap();
        assert_eq!(env.reset(), a);
        assert_eq!(env.reset(), a);
    }

    #[test]
    fn frontier_play_has_no_dead_ends() {
        for level in 1..=5 {
            for seed in 0..20 {
                let g = game(level, seed);
                let mut env = Env::new(&g).unwrap();
                env.reset();
                let mut k = 0usize;
                while !env.is_done() {
                    let frontier = env.monitor().frontier(env.state());
                    assert!(!frontier.is_empty());
                    // walk the frontier from the back to stray from reference order
                    let pick = frontier[(k * 7) % frontier.len()].clone();
                    k += 1;
                    assert_eq!(env.step(&pick).unwrap().reward, 1);
                }
                assert!(env.goal_satisfied());
                assert_eq!(env.score(), Ok(1.0));
            }
        }
    }

    #[test]
    fn scores() {
        assert_eq!(normalized_score(&[1; 7], 7), Ok(1.0));
        assert_eq!(normalized_score(&[0; 50], 7), Ok(0.0));
        let mut r = vec![1; 7];
        r.push(-1);
        assert_eq!(normalized_score(&r, 7), Ok(6.0 / 7.0));
        assert_eq!(normalized_score(&[], 0), Err(EnvError::EmptyReference));
    }

    #[test]
    fn corrupt_games_are_rejected() {
        let mut g = game(2, 0);
        let last = g.reference.len() - 1;
        g.reference.swap(0, last);
        assert!(matches!(Env::new(&g), Err(EnvError::CorruptGame(_))));
        let mut g = game(2, 0);
        g.episode_cap = 2;
        assert!(matches!(Env::new(&g), Err(EnvError::CorruptGame(_))));
    }

    #[test]
    fn reward_free_mode() {
        let g = Game::reward_free("wild", game(1, 0).s0, "Mix it.");
        let mut env = Env::new(&g).unwrap();
        env.reset();
        let valid = env.info().valid_actions;
        for i in 0..g.episode_cap {
            let a = &valid[i % valid.len()];
            let out = env.step(a).unwrap();
            assert_eq!(out.reward, 0);
            assert_eq!(out.done, i + 1 == g.episode_cap);
        }
        assert_eq!(env.score(), Err(EnvError::EmptyReference));
    }
}
