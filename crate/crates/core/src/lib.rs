//! Turn materials-synthesis procedures into solvable text games.
//!
//! A linear production-rule world model ([`world`], [`rules`]) drives a quest
//! generator ([`questgen`]) and a rule-based surface realizer ([`surface`]).
//! [`env`] wraps a game as a step/reward environment ([`format`] stores it), [`agents`] holds the
//! baseline solvers and the train/test harness, and [`ingest`] builds games
//! from annotated documents or raw text.

pub mod agents;
pub mod env;
pub mod format;
pub mod ingest;
pub mod par;
pub mod questgen;
pub mod rules;
pub mod surface;
pub mod world;

pub use env::{Env, Game};
pub use rules::{GroundedAction, Verb};
pub use world::{Entity, EntityId, EntityKind, Fact, Lexicon, Relation, WorldState};
