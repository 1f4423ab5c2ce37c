//! The eight action verbs as linear production rules over a [`WorldState`].
//!
//! Application is irreversible for `link-descriptor`, `input-assign`,
//! `locate`, `run-op` and `obtain`: no verb removes the facts they add.
//! Only `take`/`drop` move an entity back and forth.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::world::{player_id, Entity, EntityId, EntityKind, Fact, Relation, Roster, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("precondition violated for `{action}`: {reason}")]
    PreconditionViolated {
        action: GroundedAction,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Verb {
    Take,
    Drop,
    Examine,
    LinkDescriptor,
    InputAssign,
    Locate,
    RunOp,
    Obtain,
}

impl Verb {
    pub const ALL: [Verb; 8] = [
        Verb::Take,
        Verb::Drop,
        Verb::Examine,
        Verb::LinkDescriptor,
        Verb::InputAssign,
        Verb::Locate,
        Verb::RunOp,
        Verb::Obtain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Verb::Take => "take",
            Verb::Drop => "drop",
            Verb::Examine => "examine",
            Verb::LinkDescriptor => "link-descriptor",
            Verb::InputAssign => "input-assign",
            Verb::Locate => "locate",
            Verb::RunOp => "run-op",
            Verb::Obtain => "obtain",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Verb::ALL.iter().copied().find(|v| v.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Verb::LinkDescriptor | Verb::InputAssign | Verb::Locate => 2,
            _ => 1,
        }
    }

    /// Verbs that never advance a quest and are rewarded 0.
    pub fn is_neutral(self) -> bool {
        matches!(self, Verb::Take | Verb::Drop | Verb::Examine)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundedAction {
    pub verb: Verb,
    pub arg1: EntityId,
    pub arg2: Option<EntityId>,
}

impl GroundedAction {
    pub fn unary(verb: Verb, arg: &EntityId) -> Self {
        GroundedAction {
            verb,
            arg1: arg.clone(),
            arg2: None,
        }
    }

    pub fn binary(verb: Verb, arg1: &EntityId, arg2: &EntityId) -> Self {
        GroundedAction {
            verb,
            arg1: arg1.clone(),
            arg2: Some(arg2.clone()),
        }
    }

    pub fn args(&self) -> impl Iterator<Item = &EntityId> {
        std::iter::once(&self.arg1).chain(self.arg2.as_ref())
    }

    pub fn mentions(&self, id: &EntityId) -> bool {
        self.args().any(|a| a == id)
    }
}

impl fmt::Display for GroundedAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.arg1)?;
        if let Some(a) = &self.arg2 {
            write!(f, " {a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionResult {
    pub next_state: WorldState,
    pub created: Vec<Entity>,
    pub feedback: String,
}

/// Names given to operation results. Kept disjoint from lexicon entries and
/// surface templates so results stay implicit in generated text.
pub const RESULT_NAMES: [&str; 5] = [
    "crude mixture",
    "intermediate slurry",
    "reaction blend",
    "precursor gel",
    "wet cake",
];

/// Canonical id of the mixture produced by `op`.
pub fn result_id(op: &EntityId) -> EntityId {
    EntityId::parse(&format!("{}-{}", EntityKind::Mixture.id_prefix(), op))
        .expect("operation ids yield well-formed result ids")
}

pub type Verdict = Result<(), &'static str>;

/// Decides applicability by direct fact lookups.
pub fn preconditions_hold(state: &WorldState, action: &GroundedAction) -> Verdict {
    let got = 1 + usize::from(action.arg2.is_some());
    if got != action.verb.arity() {
        return Err("wrong number of arguments");
    }
    let mut kinds = Vec::with_capacity(2);
    for arg in action.args() {
        match state.kind_of(arg) {
            None => return Err("unknown entity"),
            Some(EntityKind::Player) => return Err("the player is not an argument"),
            Some(k) => kinds.push(k),
        }
    }
    if action.arg2.as_ref() == Some(&action.arg1) {
        return Err("arguments must differ");
    }
    let a = &action.arg1;
    let consumed = |id: &EntityId| state.has_unary(Relation::Consumed, id);
    let player = player_id();

    if action.verb == Verb::Examine {
        return Ok(());
    }
    if consumed(a) {
        return Err("argument consumed");
    }
    match action.verb {
        Verb::Examine => Ok(()),
        Verb::Take => {
            if !kinds[0].is_substance() {
                Err("wrong argument kind")
            } else if !state.has_unary(Relation::InRoom, a) {
                Err("not in the room")
            } else {
                Ok(())
            }
        }
        Verb::Drop => {
            if !state.contains(&Fact::binary(Relation::Holds, &player, a)) {
                Err("not held")
            } else {
                Ok(())
            }
        }
        Verb::LinkDescriptor => {
            let target = action.arg2.as_ref().expect("binary");
            if !kinds[0].is_descriptor() {
                Err("wrong argument kind")
            } else if !kinds[0].describes().contains(&kinds[1]) {
                Err("descriptor does not fit target")
            } else if state.facts_with(Relation::Describes).any(|f| &f.head == a) {
                Err("descriptor already linked")
            } else if consumed(target) {
                Err("argument consumed")
            } else {
                Ok(())
            }
        }
        Verb::InputAssign => {
            let op = action.arg2.as_ref().expect("binary");
            if !kinds[0].is_substance() || kinds[1] != EntityKind::Operation {
                Err("wrong argument kind")
            } else if state.has_unary(Relation::OpRun, op) {
                Err("operation already run")
            } else if state.facts_with(Relation::Input).any(|f| &f.head == a) {
                Err("already assigned to an operation")
            } else if state.has_unary(Relation::Obtained, a) {
                Err("argument obtained")
            } else {
                Ok(())
            }
        }
        Verb::Locate => {
            let sa = action.arg2.as_ref().expect("binary");
            let locatable = matches!(
                kinds[0],
                EntityKind::Material | EntityKind::Mixture | EntityKind::Operation
            );
            if !locatable || kinds[1] != EntityKind::SynthesisApparatus {
                Err("wrong argument kind")
            } else if state.facts_with(Relation::Located).any(|f| &f.head == a) {
                Err("already located")
            } else if state.has_unary(Relation::OpRun, a) {
                Err("operation already run")
            } else if consumed(sa) {
                Err("argument consumed")
            } else {
                Ok(())
            }
        }
        Verb::RunOp => {
            if kinds[0] != EntityKind::Operation {
                return Err("wrong argument kind");
            }
            if state.has_unary(Relation::OpRun, a) {
                return Err("operation already run");
            }
            let mut inputs = state
                .facts_with(Relation::Input)
                .filter(|f| f.tail.as_ref() == Some(a))
                .peekable();
            if inputs.peek().is_none() {
                return Err("operation has no inputs");
            }
            if inputs.any(|f| consumed(&f.head)) {
                return Err("an input is consumed");
            }
            Ok(())
        }
        Verb::Obtain => {
            if kinds[0] != EntityKind::Operation {
                return Err("wrong argument kind");
            }
            if !state.has_unary(Relation::OpRun, a) {
                return Err("operation has not run");
            }
            let Some(out) = state
                .facts_with(Relation::Output)
                .find(|f| &f.head == a)
                .and_then(|f| f.tail.clone())
            else {
                return Err("operation has no output");
            };
            if state.has_unary(Relation::Obtained, &out) {
                Err("output already obtained")
            } else if consumed(&out) {
                Err("output consumed")
            } else if state.facts_with(Relation::Input).any(|f| f.head == out) {
                Err("output already used as an input")
            } else {
                Ok(())
            }
        }
    }
}

fn feedback(state: &WorldState, action: &GroundedAction) -> String {
    let name = |id: &EntityId| {
        state
            .entity(id)
            .map_or_else(|| id.to_string(), |e| e.name.clone())
    };
    let a = name(&action.arg1);
    let b = action.arg2.as_ref().map(name).unwrap_or_default();
    match action.verb {
        Verb::Take => format!("You take the {a}."),
        Verb::Drop => format!("You put down the {a}."),
        Verb::Examine => describe_entity(state, &action.arg1),
        Verb::LinkDescriptor => format!("The {b} is now described as {a}."),
        Verb::InputAssign => format!("The {a} is set aside for {b}."),
        Verb::Locate => format!("The {a} is placed in the {b}."),
        Verb::RunOp => format!("You {a}. A new {} is produced.", name(&result_id(&action.arg1))),
        Verb::Obtain => format!("You collect the product of {a}."),
    }
}

/// Text returned by `examine`.
pub fn describe_entity(state: &WorldState, id: &EntityId) -> String {
    let Some(entity) = state.entity(id) else {
        return format!("There is no {id} here.");
    };
    let mut text = format!("{} ({}): a {}.", entity.name, entity.id, entity.kind);
    let related: Vec<String> = state
        .facts
        .iter()
        .filter(|f| f.mentions(id) && !f.relation.is_location())
        .map(ToString::to_string)
        .collect();
    if state.has_unary(Relation::Consumed, id) {
        text.push_str(" It has been used up.");
    }
    if !related.is_empty() {
        text.push_str(" Known: ");
        text.push_str(&related.join(", "));
        text.push('.');
    }
    text
}

fn relocate(state: &mut WorldState, id: &EntityId, to: Fact) {
    if let Some(old) = state.location_of(id).cloned() {
        state.facts.remove(&old);
    }
    state.facts.insert(to);
}

/// Applies `action`. The rng only picks display names for created results.
pub fn apply<R: Rng + ?Sized>(
    state: &WorldState,
    action: &GroundedAction,
    rng: &mut R,
) -> Result<TransitionResult, RuleError> {
    preconditions_hold(state, action).map_err(|reason| RuleError::PreconditionViolated {
        action: action.clone(),
        reason,
    })?;
    let mut next = state.clone();
    let mut created = Vec::new();
    let a = &action.arg1;
    let player = player_id();
    match action.verb {
        Verb::Examine => {}
        Verb::Take => relocate(&mut next, a, Fact::binary(Relation::Holds, &player, a)),
        Verb::Drop => relocate(&mut next, a, Fact::unary(Relation::InRoom, a)),
        Verb::LinkDescriptor => {
            let target = action.arg2.as_ref().expect("binary");
            next.facts.insert(Fact::binary(Relation::Describes, a, target));
        }
        Verb::InputAssign => {
            let op = action.arg2.as_ref().expect("binary");
            next.facts.insert(Fact::binary(Relation::Input, a, op));
        }
        Verb::Locate => {
            let sa = action.arg2.as_ref().expect("binary");
            relocate(&mut next, a, Fact::binary(Relation::Located, a, sa));
        }
        Verb::RunOp => {
            let inputs: Vec<EntityId> = state
                .facts_with(Relation::Input)
                .filter(|f| f.tail.as_ref() == Some(a))
                .map(|f| f.head.clone())
                .collect();
            next.facts.insert(Fact::unary(Relation::OpRun, a));
            for m in &inputs {
                next.facts.insert(Fact::unary(Relation::Consumed, m));
            }
            let name = RESULT_NAMES.choose(rng).expect("non-empty");
            let mixture = Entity {
                id: result_id(a),
                kind: EntityKind::Mixture,
                name: (*name).to_string(),
                implicit: true,
            };
            next.add_entity(mixture.clone())
                .expect("result ids are unique because an operation runs once");
            next.facts.insert(Fact::binary(Relation::Output, a, &mixture.id));
            created.push(mixture);
        }
        Verb::Obtain => {
            let out = result_id(a);
            relocate(&mut next, &out, Fact::binary(Relation::Holds, &player, &out));
            next.facts.insert(Fact::unary(Relation::Obtained, &out));
        }
    }
    let feedback = feedback(&next, action);
    Ok(TransitionResult {
        next_state: next,
        created,
        feedback,
    })
}

/// Every arity-respecting combination over non-player entities, ordered by
/// verb then argument id.
pub fn full_action_space(roster: &Roster) -> Vec<GroundedAction> {
    let ids: Vec<&EntityId> = roster
        .values()
        .filter(|e| e.kind != EntityKind::Player)
        .map(|e| &e.id)
        .collect();
    let mut out = Vec::new();
    for verb in Verb::ALL {
        for a in &ids {
            if verb.arity() == 1 {
                out.push(GroundedAction::unary(verb, a));
            } else {
                for b in ids.iter().filter(|b| *b != a) {
                    out.push(GroundedAction::binary(verb, a, b));
                }
            }
        }
    }
    out
}

/// Per-entity flags gathered in one pass over the facts.
#[derive(Default, Clone, Copy)]
struct Flags {
    in_room: bool,
    held: bool,
    located: bool,
    consumed: bool,
    linked: bool,
    assigned: bool,
    run: bool,
    inputs: usize,
    obtained: bool,
}

/// Applicable actions, in [`full_action_space`] order.
///
/// Enumerates candidates by kind and checks them against a flag index
/// instead of filtering the full space.
pub fn valid_actions(state: &WorldState) -> Vec<GroundedAction> {
    let mut flags: HashMap<&EntityId, Flags> = state
        .interactable()
        .map(|e| (&e.id, Flags::default()))
        .collect();
    let mut input_heads = Vec::new();
    for fact in &state.facts {
        let tail = fact.tail.as_ref();
        match fact.relation {
            Relation::InRoom => flag(&mut flags, &fact.head, |f| f.in_room = true),
            Relation::Holds => {
                if let Some(t) = tail {
                    flag(&mut flags, t, |f| f.held = true)
                }
            }
            Relation::Located => flag(&mut flags, &fact.head, |f| f.located = true),
            Relation::Consumed => flag(&mut flags, &fact.head, |f| f.consumed = true),
            Relation::Describes => flag(&mut flags, &fact.head, |f| f.linked = true),
            Relation::Input => {
                flag(&mut flags, &fact.head, |f| f.assigned = true);
                if let Some(op) = tail {
                    flag(&mut flags, op, |f| f.inputs += 1);
                    input_heads.push((&fact.head, op));
                }
            }
            Relation::OpRun => flag(&mut flags, &fact.head, |f| f.run = true),
            Relation::Obtained => flag(&mut flags, &fact.head, |f| f.obtained = true),
            Relation::Output => {}
        }
    }
    let mut blocked_ops: Vec<&EntityId> = input_heads
        .iter()
        .filter(|(m, _)| flags.get(m).is_some_and(|f| f.consumed))
        .map(|(_, op)| *op)
        .collect();
    blocked_ops.sort();

    let entities: Vec<(&Entity, Flags)> = state
        .interactable()
        .map(|e| (e, flags[&e.id]))
        .collect();
    let of_kind = |pred: &dyn Fn(EntityKind) -> bool| -> Vec<(&Entity, Flags)> {
        entities.iter().filter(|(e, _)| pred(e.kind)).copied().collect()
    };
    let substances = of_kind(&|k| k.is_substance());
    let operations = of_kind(&|k| k == EntityKind::Operation);
    let apparatus = of_kind(&|k| k == EntityKind::SynthesisApparatus);
    let locatable = of_kind(&|k| {
        matches!(k, EntityKind::Material | EntityKind::Mixture | EntityKind::Operation)
    });

    let mut out = Vec::new();
    for verb in Verb::ALL {
        match verb {
            Verb::Take => out.extend(
                substances
                    .iter()
                    .filter(|(_, f)| f.in_room && !f.consumed)
                    .map(|(e, _)| GroundedAction::unary(verb, &e.id)),
            ),
            Verb::Drop => out.extend(
                substances
                    .iter()
                    .filter(|(_, f)| f.held && !f.consumed)
                    .map(|(e, _)| GroundedAction::unary(verb, &e.id)),
            ),
            Verb::Examine => out.extend(entities.iter().map(|(e, _)| GroundedAction::unary(verb, &e.id))),
            Verb::LinkDescriptor => {
                for (d, fd) in entities.iter().filter(|(e, _)| e.kind.is_descriptor()) {
                    if fd.linked || fd.consumed {
                        continue;
                    }
                    for (t, ft) in &entities {
                        if t.id != d.id && d.kind.describes().contains(&t.kind) && !ft.consumed {
                            out.push(GroundedAction::binary(verb, &d.id, &t.id));
                        }
                    }
                }
            }
            Verb::InputAssign => {
                for (m, fm) in &substances {
                    if fm.consumed || fm.assigned || fm.obtained {
                        continue;
                    }
                    for (op, fo) in &operations {
                        if !fo.run && !fo.consumed {
                            out.push(GroundedAction::binary(verb, &m.id, &op.id));
                        }
                    }
                }
            }
            Verb::Locate => {
                for (e, fe) in &locatable {
                    if fe.consumed || fe.located || fe.run {
                        continue;
                    }
                    for (sa, fs) in &apparatus {
                        if !fs.consumed {
                            out.push(GroundedAction::binary(verb, &e.id, &sa.id));
                        }
                    }
                }
            }
            Verb::RunOp => out.extend(
                operations
                    .iter()
                    .filter(|(e, f)| {
                        !f.run && !f.consumed && f.inputs > 0 && blocked_ops.binary_search(&&e.id).is_err()
                    })
                    .map(|(e, _)| GroundedAction::unary(verb, &e.id)),
            ),
            Verb::Obtain => out.extend(
                operations
                    .iter()
                    .filter(|(e, f)| {
                        f.run && !f.consumed && {
                            let out = result_id(&e.id);
                            flags.get(&out).is_some_and(|m| !m.obtained && !m.consumed && !m.assigned)
                        }
                    })
                    .map(|(e, _)| GroundedAction::unary(verb, &e.id)),
            ),
        }
    }
    out
}

fn flag<'a>(flags: &mut HashMap<&'a EntityId, Flags>, id: &'a EntityId, set: impl FnOnce(&mut Flags)) {
    if let Some(f) = flags.get_mut(id) {
        set(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{sample_entities, Lexicon};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn id(s: &str) -> EntityId {
        EntityId::parse(s).unwrap()
    }

    fn state(entries: &[(&str, EntityKind)]) -> WorldState {
        WorldState::initial(entries.iter().map(|(i, k)| Entity::new(id(i), *k, format!("{i}-name")))).unwrap()
    }

    fn lab() -> WorldState {
        state(&[
            ("m-1", EntityKind::Material),
            ("m-2", EntityKind::Material),
            ("op-1", EntityKind::Operation),
            ("md-1", EntityKind::MaterialDescriptor),
        ])
    }

    fn act(s: &WorldState, a: &GroundedAction) -> WorldState {
        apply(s, a, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().next_state
    }

    fn un(v: Verb, a: &str) -> GroundedAction {
        GroundedAction::unary(v, &id(a))
    }

    fn bi(v: Verb, a: &str, b: &str) -> GroundedAction {
        GroundedAction::binary(v, &id(a), &id(b))
    }

    #[test]
    fn precondition_examples() {
        let s = lab();
        assert_eq!(preconditions_hold(&s, &bi(Verb::LinkDescriptor, "md-1", "m-1")), Ok(()));
        assert_eq!(preconditions_hold(&s, &un(Verb::RunOp, "op-1")), Err("operation has no inputs"));

        let s = act(&s, &bi(Verb::InputAssign, "m-1", "op-1"));
        let s = act(&s, &un(Verb::RunOp, "op-1"));
        assert!(s.has_unary(Relation::Consumed, &id("m-1")));
        assert_eq!(preconditions_hold(&s, &bi(Verb::InputAssign, "m-1", "op-1")), Err("argument consumed"));
        assert_eq!(preconditions_hold(&s, &un(Verb::Examine, "m-1")), Ok(()));
    }

    #[test]
    fn run_op_consumes_inputs_and_creates_result() {
        let s = act(&lab(), &bi(Verb::InputAssign, "m-1", "op-1"));
        let s = act(&s, &bi(Verb::InputAssign, "m-2", "op-1"));
        let r = apply(&s, &un(Verb::RunOp, "op-1"), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let n = &r.next_state;
        let mx = id("mx-op-1");
        assert!(n.has_unary(Relation::OpRun, &id("op-1")));
        assert!(n.has_unary(Relation::Consumed, &id("m-1")));
        assert!(n.has_unary(Relation::Consumed, &id("m-2")));
        assert!(n.contains(&Fact::binary(Relation::Output, &id("op-1"), &mx)));
        assert!(n.has_unary(Relation::InRoom, &mx));
        assert_eq!(r.created.len(), 1);
        assert!(r.created[0].implicit);
        assert!(n.audit().is_empty());
        let obtained = act(n, &un(Verb::Obtain, "op-1"));
        assert!(obtained.has_unary(Relation::Obtained, &mx));
        assert!(obtained.contains(&Fact::binary(Relation::Holds, &player_id(), &mx)));
        assert!(obtained.audit().is_empty());
    }

    #[test]
    fn examine_and_premature_obtain() {
        let s = lab();
        let r = apply(&s, &un(Verb::Examine, "m-1"), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.next_state, s);
        assert!(!r.feedback.is_empty());
        assert!(matches!(
            apply(&s, &un(Verb::Obtain, "op-1"), &mut ChaCha8Rng::seed_from_u64(0)),
            Err(RuleError::PreconditionViolated { reason: "operation has not run", .. })
        ));
    }

    #[test]
    fn descriptor_links_once() {
        let s = act(&lab(), &bi(Verb::LinkDescriptor, "md-1", "m-1"));
        assert_eq!(
            preconditions_hold(&s, &bi(Verb::LinkDescriptor, "md-1", "m-2")),
            Err("descriptor already linked")
        );
    }

    #[test]
    fn take_and_drop_round_trip() {
        let s = lab();
        let held = act(&s, &un(Verb::Take, "m-1"));
        assert!(held.contains(&Fact::binary(Relation::Holds, &player_id(), &id("m-1"))));
        assert!(held.audit().is_empty());
        assert_eq!(act(&held, &un(Verb::Drop, "m-1")), s);
    }

    #[test]
    fn action_space_counts() {
        let s = state(&[
            ("m-1", EntityKind::Material),
            ("op-1", EntityKind::Operation),
            ("d-1", EntityKind::Descriptor),
        ]);
        let space = full_action_space(&s.entities);
        assert_eq!(space.len(), 5 * 3 + 3 * 3 * 2);
        let unique: BTreeSet<_> = space.iter().collect();
        assert_eq!(unique.len(), space.len());
        assert!(full_action_space(&Roster::new()).is_empty());
    }

    #[test]
    fn fresh_state_valid_actions() {
        let s = lab();
        let valid = valid_actions(&s);
        assert!(valid.contains(&un(Verb::Take, "m-1")));
        assert!(valid.contains(&un(Verb::Examine, "op-1")));
        assert!(valid.contains(&bi(Verb::LinkDescriptor, "md-1", "m-2")));
        assert!(valid.contains(&bi(Verb::InputAssign, "m-2", "op-1")));
        assert!(!valid.iter().any(|a| a.verb == Verb::RunOp));
    }

    #[test]
    fn obtain_offered_after_final_run() {
        let mut s = act(&lab(), &bi(Verb::InputAssign, "m-1", "op-1"));
        s = act(&s, &bi(Verb::InputAssign, "m-2", "op-1"));
        s = act(&s, &un(Verb::RunOp, "op-1"));
        assert!(valid_actions(&s).contains(&un(Verb::Obtain, "op-1")));
    }

    fn brute_force(s: &WorldState) -> Vec<GroundedAction> {
        full_action_space(&s.entities)
            .into_iter()
            .filter(|a| preconditions_hold(s, a).is_ok())
            .collect()
    }

    fn frame_ok(before: &WorldState, after: &WorldState, a: &GroundedAction) -> bool {
        // facts not touching the arguments (or the new result) stay verbatim
        let touched = |f: &Fact| {
            a.args().any(|x| f.mentions(x))
                || (a.verb == Verb::RunOp && before.facts.iter().any(|g| {
                    g.relation == Relation::Input && g.tail.as_ref() == Some(&a.arg1) && f.mentions(&g.head)
                }))
                || f.mentions(&result_id(&a.arg1))
        };
        before.facts.iter().filter(|f| !touched(f)).all(|f| after.facts.contains(f))
            && after.facts.iter().filter(|f| !touched(f)).all(|f| before.facts.contains(f))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_walks_keep_invariants(level in 1u8..=5, seed in 0u64..10_000, steps in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let roster = sample_entities(level, &mut rng, &Lexicon::builtin()).unwrap();
            let mut s = WorldState::initial(roster).unwrap();
            let mut consumed: BTreeSet<EntityId> = BTreeSet::new();
            for _ in 0..steps {
                let valid = valid_actions(&s);
                prop_assert_eq!(&valid, &brute_force(&s));
                for a in &valid {
                    if a.verb != Verb::Examine {
                        prop_assert!(a.args().all(|x| !consumed.contains(x)), "{} uses consumed arg", a);
                    }
                }
                let a = valid.choose(&mut rng).unwrap().clone();
                let next = apply(&s, &a, &mut rng).unwrap().next_state;
                prop_assert!(next.audit().is_empty(), "{:?}", next.audit());
                prop_assert!(frame_ok(&s, &next, &a), "frame violated by {}", a);
                consumed.extend(next.facts_with(Relation::Consumed).map(|f| f.head.clone()));
                s = next;
            }
        }

        #[test]
        fn apply_is_deterministic(level in 1u8..=3, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let roster = sample_entities(level, &mut rng, &Lexicon::builtin()).unwrap();
            let mut s = WorldState::initial(roster).unwrap();
            for step in 0..20u64 {
                let valid = valid_actions(&s);
                let a = valid.choose(&mut rng).unwrap().clone();
                let x = apply(&s, &a, &mut ChaCha8Rng::seed_from_u64(step)).unwrap();
                let y = apply(&s, &a, &mut ChaCha8Rng::seed_from_u64(step)).unwrap();
                prop_assert_eq!(&x, &y);
                s = x.next_state;
            }
        }
    }
}
