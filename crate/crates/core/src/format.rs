//! JSON documents for games and action graphs.
//!
//! Keys are sorted, facts are `[relation, head, tail|null]` and actions are
//! `[verb, arg1, arg2|null]`. Saving the same value twice yields the same
//! bytes.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use crate::env::{EnvError, Game};
use crate::questgen::{replay_from, ActionGraph};
use crate::rules::{GroundedAction, Verb};
use crate::world::{validate_fact, Entity, EntityId, EntityKind, Fact, Relation, WorldState};

pub const GAME_FORMAT: &str = "tl-game/1";
pub const GRAPH_FORMAT: &str = "tl-graph/1";

fn fact_json(f: &Fact) -> Value {
    json!([f.relation.name(), f.head.as_str(), f.tail.as_ref().map(EntityId::as_str)])
}

fn action_json(a: &GroundedAction) -> Value {
    json!([a.verb.name(), a.arg1.as_str(), a.arg2.as_ref().map(EntityId::as_str)])
}

fn state_json(state: &WorldState) -> (Value, Value) {
    let entities: Vec<Value> = state
        .interactable()
        .map(|e| json!({"id": e.id.as_str(), "kind": e.kind.tag(), "name": e.name, "implicit": e.implicit}))
        .collect();
    let facts: Vec<Value> = state.facts.iter().map(fact_json).collect();
    (Value::Array(entities), Value::Array(facts))
}

fn render(doc: Value) -> String {
    let mut text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    text.push('\n');
    text
}

pub fn save_game(game: &Game) -> String {
    let (entities, facts) = state_json(&game.s0);
    render(json!({
        "format": GAME_FORMAT,
        "id": game.id,
        "level": game.level,
        "seed": game.seed,
        "episode_cap": game.episode_cap,
        "discount": game.discount,
        "surface": game.surface,
        "instructions": game.instructions,
        "entities": entities,
        "facts": facts,
        "goal": game.goal.iter().map(fact_json).collect::<Vec<_>>(),
        "reference": game.reference.iter().map(action_json).collect::<Vec<_>>(),
    }))
}

pub fn save_graph(graph: &ActionGraph) -> String {
    let (entities, facts) = state_json(&graph.s0);
    render(json!({
        "format": GRAPH_FORMAT,
        "level": graph.level,
        "seed": graph.seed,
        "entities": entities,
        "facts": facts,
        "goal": graph.goal.iter().map(fact_json).collect::<Vec<_>>(),
        "actions": graph.actions.iter().map(action_json).collect::<Vec<_>>(),
    }))
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> EnvError {
    EnvError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

struct Doc<'a> {
    map: &'a Map<String, Value>,
}

impl<'a> Doc<'a> {
    fn parse(text: &str, format: &str) -> Result<Value, EnvError> {
        let value: Value = serde_json::from_str(text).map_err(|e| violation("$", e.to_string()))?;
        match value.get("format").and_then(Value::as_str) {
            Some(f) if f == format => Ok(value),
            Some(f) => Err(violation("format", format!("expected `{format}`, found `{f}`"))),
            None => Err(violation("format", "missing")),
        }
    }

    fn field(&self, key: &str) -> Result<&'a Value, EnvError> {
        self.map.get(key).ok_or_else(|| violation(key, "missing"))
    }

    fn str(&self, key: &str) -> Result<&'a str, EnvError> {
        self.field(key)?.as_str().ok_or_else(|| violation(key, "expected a string"))
    }

    fn u64(&self, key: &str) -> Result<u64, EnvError> {
        self.field(key)?.as_u64().ok_or_else(|| violation(key, "expected an unsigned integer"))
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>, EnvError> {
        self.field(key)?.as_array().ok_or_else(|| violation(key, "expected an array"))
    }

    fn level(&self) -> Result<u8, EnvError> {
        u8::try_from(self.u64("level")?).map_err(|_| violation("level", "out of range"))
    }

    fn state(&self) -> Result<WorldState, EnvError> {
        let mut entities = Vec::new();
        for (i, v) in self.array("entities")?.iter().enumerate() {
            let path = |k: &str| format!("entities[{i}].{k}");
            let get_str = |k: &str| {
                v.get(k)
                    .and_then(Value::as_str)
                    .ok_or_else(|| violation(path(k), "expected a string"))
            };
            let id = EntityId::parse(get_str("id")?).map_err(|e| violation(path("id"), e.to_string()))?;
            let kind = EntityKind::from_tag(get_str("kind")?)
                .filter(|k| *k != EntityKind::Player)
                .ok_or_else(|| violation(path("kind"), "unknown entity kind"))?;
            let implicit = v
                .get("implicit")
                .and_then(Value::as_bool)
                .ok_or_else(|| violation(path("implicit"), "expected a boolean"))?;
            entities.push(Entity {
                id,
                kind,
                name: get_str("name")?.to_string(),
                implicit,
            });
        }
        let mut state = WorldState::initial(entities).map_err(|e| violation("entities", e.to_string()))?;
        // stored facts replace the default locations
        state.facts.clear();
        for (i, f) in self.array("facts")?.iter().enumerate() {
            let path = format!("facts[{i}]");
            let fact = parse_fact(f, &path)?;
            state.insert(fact).map_err(|e| violation(&path, e.to_string()))?;
        }
        let problems = state.audit();
        if let Some(p) = problems.first() {
            return Err(violation("facts", p.clone()));
        }
        Ok(state)
    }

    fn actions(&self, key: &str) -> Result<Vec<GroundedAction>, EnvError> {
        self.array(key)?
            .iter()
            .enumerate()
            .map(|(i, v)| parse_action(v, &format!("{key}[{i}]")))
            .collect()
    }

    fn goal(&self, end: &WorldState) -> Result<BTreeSet<Fact>, EnvError> {
        let mut goal = BTreeSet::new();
        for (i, f) in self.array("goal")?.iter().enumerate() {
            let path = format!("goal[{i}]");
            let fact = parse_fact(f, &path)?;
            validate_fact(&fact, &end.entities).map_err(|e| violation(&path, e.to_string()))?;
            goal.insert(fact);
        }
        Ok(goal)
    }
}

fn triple<'a>(v: &'a Value, path: &str) -> Result<(&'a str, &'a str, Option<&'a str>), EnvError> {
    match v.as_array().map(Vec::as_slice) {
        Some([Value::String(a), Value::String(b), c]) => match c {
            Value::Null => Ok((a, b, None)),
            Value::String(c) => Ok((a, b, Some(c))),
            _ => Err(violation(format!("{path}[2]"), "expected a string or null")),
        },
        _ => Err(violation(path, "expected [string, string, string|null]")),
    }
}

fn parse_id(raw: &str, path: String) -> Result<EntityId, EnvError> {
    EntityId::parse(raw).map_err(|e| violation(path, e.to_string()))
}

fn parse_fact(v: &Value, path: &str) -> Result<Fact, EnvError> {
    let (rel, head, tail) = triple(v, path)?;
    let relation = Relation::from_name(rel).ok_or_else(|| violation(format!("{path}[0]"), "unknown relation"))?;
    let head = parse_id(head, format!("{path}[1]"))?;
    let tail = tail.map(|t| parse_id(t, format!("{path}[2]"))).transpose()?;
    if usize::from(tail.is_some()) + 1 != relation.arity() {
        return Err(violation(path, format!("wrong arity for {relation}")));
    }
    Ok(Fact { relation, head, tail })
}

fn parse_action(v: &Value, path: &str) -> Result<GroundedAction, EnvError> {
    let (verb, a, b) = triple(v, path)?;
    let verb = Verb::from_name(verb).ok_or_else(|| violation(format!("{path}[0]"), "unknown verb"))?;
    let arg1 = parse_id(a, format!("{path}[1]"))?;
    let arg2 = b.map(|b| parse_id(b, format!("{path}[2]"))).transpose()?;
    if usize::from(arg2.is_some()) + 1 != verb.arity() {
        return Err(violation(path, format!("wrong arity for {verb}")));
    }
    Ok(GroundedAction { verb, arg1, arg2 })
}

fn replay_checked(
    s0: &WorldState,
    actions: &[GroundedAction],
    seed: u64,
    key: &str,
) -> Result<WorldState, EnvError> {
    replay_from(s0, actions, seed).map_err(|e| match e {
        crate::questgen::QuestError::ReplayFailed { step, reason, .. } => {
            violation(format!("{key}[{step}]"), reason)
        }
        other => violation(key, other.to_string()),
    })
}

pub fn load_game(text: &str) -> Result<Game, EnvError> {
    let value = Doc::parse(text, GAME_FORMAT)?;
    let doc = Doc {
        map: value.as_object().ok_or_else(|| violation("$", "expected an object"))?,
    };
    let s0 = doc.state()?;
    let seed = doc.u64("seed")?;
    let reference = doc.actions("reference")?;
    let end = replay_checked(&s0, &reference, seed, "reference")?;
    let game = Game {
        id: doc.str("id")?.to_string(),
        surface: doc.str("surface")?.to_string(),
        instructions: doc.str("instructions")?.to_string(),
        goal: doc.goal(&end)?,
        level: doc.level()?,
        episode_cap: usize::try_from(doc.u64("episode_cap")?)
            .map_err(|_| violation("episode_cap", "out of range"))?,
        discount: doc
            .field("discount")?
            .as_f64()
            .ok_or_else(|| violation("discount", "expected a number"))?,
        s0,
        reference,
        seed,
    };
    game.check().map_err(|e| violation("goal", e.to_string()))?;
    Ok(game)
}

pub fn load_graph(text: &str) -> Result<ActionGraph, EnvError> {
    let value = Doc::parse(text, GRAPH_FORMAT)?;
    let doc = Doc {
        map: value.as_object().ok_or_else(|| violation("$", "expected an object"))?,
    };
    let s0 = doc.state()?;
    let seed = doc.u64("seed")?;
    let actions = doc.actions("actions")?;
    let end = replay_checked(&s0, &actions, seed, "actions")?;
    let goal = doc.goal(&end)?;
    if let Some(f) = goal.iter().find(|f| !end.contains(f)) {
        return Err(violation("goal", format!("actions do not reach `{f}`")));
    }
    Ok(ActionGraph {
        s0,
        actions,
        goal,
        level: doc.level()?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_game;
    use crate::questgen::generate;
    use crate::world::Lexicon;

    #[test]
    fn game_round_trip() {
        let lex = Lexicon::builtin();
        for level in 1..=5 {
            let g = generate_game(level, 11, &lex).unwrap();
            let text = save_game(&g);
            assert_eq!(text, save_game(&generate_game(level, 11, &lex).unwrap()));
            let back = load_game(&text).unwrap();
            assert_eq!(back, g);
            assert_eq!(save_game(&back), text);
        }
    }

    #[test]
    fn graph_round_trip() {
        let g = generate(4, 2, &Lexicon::builtin()).unwrap();
        let text = save_graph(&g);
        assert_eq!(load_graph(&text).unwrap(), g);
    }

    #[test]
    fn keys_are_sorted() {
        let text = save_game(&generate_game(1, 0, &Lexicon::builtin()).unwrap());
        let keys: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("  \""))
            .map(|l| l.trim().split('"').nth(1).unwrap())
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    fn tamper(text: &str, f: impl FnOnce(&mut Value)) -> String {
        let mut v: Value = serde_json::from_str(text).unwrap();
        f(&mut v);
        serde_json::to_string(&v).unwrap()
    }

    fn path_of(e: EnvError) -> String {
        match e {
            EnvError::SchemaViolation { path, .. } => path,
            other => panic!("expected a schema violation, got {other:?}"),
        }
    }

    #[test]
    fn tampering_is_located() {
        let text = save_game(&generate_game(2, 5, &Lexicon::builtin()).unwrap());

        // an input fact whose head is an operation
        let bad = tamper(&text, |v| {
            let goal = v["goal"].as_array_mut().unwrap();
            let i = goal.iter().position(|f| f[0] == "input").unwrap();
            let op = goal[i][2].clone();
            goal[i][1] = op;
        });
        assert!(path_of(load_game(&bad).unwrap_err()).starts_with("goal["));

        let bad = tamper(&text, |v| v["goal"][0][0] = json!("teleported"));
        assert_eq!(path_of(load_game(&bad).unwrap_err()), "goal[0][0]");

        let bad = tamper(&text, |v| v["reference"][0][0] = json!("mix"));
        assert_eq!(path_of(load_game(&bad).unwrap_err()), "reference[0][0]");

        let bad = tamper(&text, |v| {
            v["reference"].as_array_mut().unwrap().remove(0);
        });
        assert!(matches!(load_game(&bad), Err(EnvError::SchemaViolation { .. })));

        let bad = tamper(&text, |v| v["entities"][0]["kind"] = json!("player"));
        assert_eq!(path_of(load_game(&bad).unwrap_err()), "entities[0].kind");

        let bad = tamper(&text, |v| v["format"] = json!("tl-game/0"));
        assert_eq!(path_of(load_game(&bad).unwrap_err()), "format");

        assert_eq!(path_of(load_game("{").unwrap_err()), "$");
    }
}
