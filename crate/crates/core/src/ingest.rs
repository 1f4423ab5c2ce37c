//! Games from annotated documents and from raw text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{plan, AgentError};
use crate::env::{EnvError, Game, DEFAULT_EPISODE_CAP};
use crate::questgen::{goal_from_state, replay_from, QuestError};
use crate::rules::{result_id, GroundedAction, Verb};
use crate::surface::realize_instructions;
use crate::world::{sp_to_tl_kind, Entity, EntityId, EntityKind, Fact, Lexicon, WorldError, WorldState};

pub const ANNOTATION_SCHEMA: &str = "tl-annot/1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("invalid document at `{path}`: {message}")]
    InvalidDoc { path: String, message: String },
    #[error("relation {index} (`{relation}`) cannot be mapped: {reason}")]
    UnmappableRelation {
        index: usize,
        relation: String,
        reason: String,
    },
    #[error("operation order has a cycle through {0:?}")]
    CyclicOperationOrder(Vec<String>),
    #[error("operation order is ambiguous between {0:?}; give `operation_order`")]
    AmbiguousOperationOrder(Vec<String>),
    #[error("need at least one operation and one material, found {operations} and {materials}")]
    InsufficientEntities { operations: usize, materials: usize },
    #[error("term `{0}` appears under two kinds")]
    DuplicateTerm(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Quest(#[from] QuestError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedEntity {
    pub id: String,
    /// Character offsets, end exclusive.
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub sp_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRelation {
    #[serde(rename = "type")]
    pub sp_type: String,
    pub head: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedDoc {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub text: String,
    pub entities: Vec<AnnotatedEntity>,
    pub relations: Vec<AnnotatedRelation>,
    /// Annotation ids of operations in execution order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation_order: Option<Vec<String>>,
}

impl AnnotatedDoc {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let doc: AnnotatedDoc = serde_json::from_str(text).map_err(|e| invalid("$", e.to_string()))?;
        if doc.schema != ANNOTATION_SCHEMA {
            return Err(invalid("schema", format!("expected `{ANNOTATION_SCHEMA}`")));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("documents serialize");
        serde_json::to_string_pretty(&value).expect("json values serialize") + "\n"
    }
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::InvalidDoc {
        path: path.into(),
        message: message.into(),
    }
}

/// Link relations that attach a descriptor to what it describes.
const LINK_RELATIONS: [&str; 8] = [
    "Descriptor-of",
    "Condition-of",
    "Amount-of",
    "Number-of",
    "Brand-of",
    "Property-of",
    "Apparatus-Attr-Of",
    "Atmospheric-Material",
];

enum Mapped {
    Input(EntityId, EntityId),
    Locate(EntityId, EntityId),
    Link(EntityId, EntityId),
    Target(EntityId),
    Next(EntityId, EntityId),
}

/// A converted game plus what was dropped on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub game: Game,
    pub dropped_entities: usize,
    pub dropped_relations: usize,
    pub warnings: Vec<String>,
}

fn map_relation(
    index: usize,
    rel: &AnnotatedRelation,
    head: (&EntityId, EntityKind),
    tail: (&EntityId, EntityKind),
) -> Result<Mapped, IngestError> {
    let fail = |reason: &str| IngestError::UnmappableRelation {
        index,
        relation: rel.sp_type.clone(),
        reason: reason.to_string(),
    };
    // endpoints are matched by kind, so either direction is accepted
    let pick = |want: &dyn Fn(EntityKind) -> bool| {
        if want(head.1) {
            Some((head, tail))
        } else if want(tail.1) {
            Some((tail, head))
        } else {
            None
        }
    };
    let t = rel.sp_type.as_str();
    match t {
        "Participant-Material" => match pick(&|k| k == EntityKind::Operation) {
            Some((op, m)) if m.1 == EntityKind::Material => Ok(Mapped::Input(m.0.clone(), op.0.clone())),
            _ => Err(fail("expects a material and an operation")),
        },
        "Apparatus-of" => match pick(&|k| k == EntityKind::SynthesisApparatus) {
            Some((sa, x)) if matches!(x.1, EntityKind::Material | EntityKind::Operation) => {
                Ok(Mapped::Locate(x.0.clone(), sa.0.clone()))
            }
            _ => Err(fail("expects an apparatus and a material or operation")),
        },
        "Recipe-Target" => match pick(&|k| k == EntityKind::Operation) {
            Some((op, _)) => Ok(Mapped::Target(op.0.clone())),
            None => Err(fail("expects an operation")),
        },
        "Next-Operation" => {
            if head.1 == EntityKind::Operation && tail.1 == EntityKind::Operation {
                Ok(Mapped::Next(head.0.clone(), tail.0.clone()))
            } else {
                Err(fail("expects two operations"))
            }
        }
        _ if LINK_RELATIONS.contains(&t) => match pick(&|k| k.is_descriptor()) {
            Some((d, x)) if d.1.describes().contains(&x.1) => Ok(Mapped::Link(d.0.clone(), x.0.clone())),
            _ => Err(fail("descriptor does not fit its target")),
        },
        _ => Err(fail("unknown relation type")),
    }
}

fn operation_order(
    doc: &AnnotatedDoc,
    ops: &[EntityId],
    next: &[(EntityId, EntityId)],
    ann_of: &BTreeMap<EntityId, String>,
    tl_of: &BTreeMap<String, EntityId>,
) -> Result<Vec<EntityId>, IngestError> {
    let names = |ids: &[&EntityId]| ids.iter().map(|i| ann_of[*i].clone()).collect::<Vec<_>>();
    if let Some(order) = &doc.operation_order {
        let mut out = Vec::new();
        for (i, a) in order.iter().enumerate() {
            match tl_of.get(a) {
                Some(id) if ops.contains(id) && !out.contains(id) => out.push(id.clone()),
                _ => return Err(invalid(format!("operation_order[{i}]"), format!("`{a}` is not a distinct operation"))),
            }
        }
        if out.len() != ops.len() {
            return Err(invalid("operation_order", "must list every operation"));
        }
        let pos = |id: &EntityId| out.iter().position(|o| o == id).expect("listed");
        if let Some((a, b)) = next.iter().find(|(a, b)| pos(a) >= pos(b)) {
            return Err(IngestError::CyclicOperationOrder(names(&[a, b])));
        }
        return Ok(out);
    }
    let mut indegree: BTreeMap<&EntityId, usize> = ops.iter().map(|o| (o, 0)).collect();
    for (_, b) in next {
        *indegree.get_mut(b).expect("operation") += 1;
    }
    let mut out = Vec::new();
    loop {
        let ready: Vec<&EntityId> = indegree.iter().filter(|(_, d)| **d == 0).map(|(o, _)| *o).collect();
        match ready.as_slice() {
            [] => break,
            [one] => {
                let one = (*one).clone();
                indegree.remove(&one);
                for (_, b) in next.iter().filter(|(a, _)| *a == one) {
                    *indegree.get_mut(b).expect("operation") -= 1;
                }
                out.push(one);
            }
            many => return Err(IngestError::AmbiguousOperationOrder(names(many))),
        }
    }
    if !indegree.is_empty() {
        let left: Vec<&EntityId> = indegree.keys().copied().collect();
        return Err(IngestError::CyclicOperationOrder(names(&left)));
    }
    Ok(out)
}

/// Builds a game from an annotated document. Successor links between
/// operations become result mixtures assigned as inputs.
pub fn convert_annotated(doc: &AnnotatedDoc) -> Result<Conversion, IngestError> {
    let chars = doc.text.chars().count();
    let mut dropped_entities = 0;
    let mut kept: Vec<(&AnnotatedEntity, EntityKind)> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, e) in doc.entities.iter().enumerate() {
        if e.start >= e.end || e.end > chars {
            return Err(invalid(format!("entities[{i}]"), "span outside the text"));
        }
        if !seen.insert(&e.id) {
            return Err(invalid(format!("entities[{i}].id"), "duplicate id"));
        }
        match sp_to_tl_kind(&e.sp_type).map_err(|err| invalid(format!("entities[{i}].type"), err.to_string()))? {
            Some(kind) => kept.push((e, kind)),
            None => dropped_entities += 1,
        }
    }
    kept.sort_by_key(|(e, _)| (e.start, e.end));

    let mut counters: BTreeMap<EntityKind, usize> = BTreeMap::new();
    let mut tl_of: BTreeMap<String, EntityId> = BTreeMap::new();
    let mut ann_of: BTreeMap<EntityId, String> = BTreeMap::new();
    let mut roster = Vec::new();
    for (e, kind) in &kept {
        let n = counters.entry(*kind).or_insert(0);
        *n += 1;
        let id = EntityId::parse(&format!("{}-{}", kind.id_prefix(), n))?;
        let name: String = doc.text.chars().skip(e.start).take(e.end - e.start).collect();
        tl_of.insert(e.id.clone(), id.clone());
        ann_of.insert(id.clone(), e.id.clone());
        roster.push(Entity::new(id, *kind, name.trim()));
    }
    let s0 = WorldState::initial(roster)?;

    let mut dropped_relations = 0;
    let mut warnings = Vec::new();
    let mut mapped = Vec::new();
    for (i, rel) in doc.relations.iter().enumerate() {
        for end in [&rel.head, &rel.tail] {
            if !seen.contains(end) {
                return Err(invalid(format!("relations[{i}]"), format!("unknown entity `{end}`")));
            }
        }
        let (Some(h), Some(t)) = (tl_of.get(&rel.head), tl_of.get(&rel.tail)) else {
            dropped_relations += 1;
            warnings.push(format!("relation {i} touches an ignored entity"));
            continue;
        };
        let kind = |id| s0.kind_of(id).expect("in roster");
        mapped.push(map_relation(i, rel, (h, kind(h)), (t, kind(t)))?);
    }

    let ops: Vec<EntityId> = s0
        .interactable()
        .filter(|e| e.kind == EntityKind::Operation)
        .map(|e| e.id.clone())
        .collect();
    let next: Vec<(EntityId, EntityId)> = mapped
        .iter()
        .filter_map(|m| match m {
            Mapped::Next(a, b) => Some((a.clone(), b.clone())),
            _ => None,
        })
        .collect();
    let order = operation_order(doc, &ops, &next, &ann_of, &tl_of)?;

    let mut inputs: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    let mut locates: Vec<(EntityId, EntityId)> = Vec::new();
    let mut links: Vec<(EntityId, EntityId)> = Vec::new();
    let mut targets = BTreeSet::new();
    for m in mapped {
        match m {
            Mapped::Input(x, op) => inputs.entry(op).or_default().push(x),
            Mapped::Locate(x, sa) => locates.push((x, sa)),
            Mapped::Link(d, x) => links.push((d, x)),
            Mapped::Target(op) => {
                targets.insert(op);
            }
            Mapped::Next(_, _) => {}
        }
    }

    let mut ran = BTreeSet::new();
    let mut groups: Vec<Vec<GroundedAction>> = Vec::new();
    let mut placed_links = BTreeSet::new();
    let mut placed_locates = BTreeSet::new();
    for op in &order {
        let mut group_inputs = inputs.get(op).cloned().unwrap_or_default();
        for (a, _) in next.iter().filter(|(_, b)| b == op) {
            if ran.contains(a) {
                group_inputs.push(result_id(a));
            } else {
                warnings.push(format!("`{}` never runs, so nothing flows into `{}`", ann_of[a], ann_of[op]));
            }
        }
        if group_inputs.is_empty() {
            warnings.push(format!("operation `{}` has no inputs and is not run", ann_of[op]));
            continue;
        }
        let apparatus: Vec<EntityId> = locates.iter().filter(|(x, _)| x == op).map(|(_, sa)| sa.clone()).collect();
        let mut group = Vec::new();
        let touches = |x: &EntityId| group_inputs.contains(x) || x == op || apparatus.contains(x);
        for (i, (d, x)) in links.iter().enumerate() {
            if touches(x) && placed_links.insert(i) {
                group.push(GroundedAction::binary(Verb::LinkDescriptor, d, x));
            }
        }
        for x in &group_inputs {
            group.push(GroundedAction::binary(Verb::InputAssign, x, op));
        }
        for (i, (x, sa)) in locates.iter().enumerate() {
            if (x == op || group_inputs.contains(x)) && placed_locates.insert(i) {
                group.push(GroundedAction::binary(Verb::Locate, x, sa));
            }
        }
        group.push(GroundedAction::unary(Verb::RunOp, op));
        ran.insert(op.clone());
        groups.push(group);
    }

    let mut actions: Vec<GroundedAction> = Vec::new();
    for (i, (d, x)) in links.iter().enumerate() {
        if !placed_links.contains(&i) {
            actions.push(GroundedAction::binary(Verb::LinkDescriptor, d, x));
        }
    }
    for (i, (x, sa)) in locates.iter().enumerate() {
        if !placed_locates.contains(&i) && !ran.contains(x) {
            actions.push(GroundedAction::binary(Verb::Locate, x, sa));
        }
    }
    actions.extend(groups.into_iter().flatten());
    let feeds_later: BTreeSet<&EntityId> = next.iter().map(|(a, _)| a).collect();
    for op in &order {
        if !targets.contains(op) {
            continue;
        }
        if ran.contains(op) && !feeds_later.contains(op) {
            actions.push(GroundedAction::unary(Verb::Obtain, op));
        } else {
            warnings.push(format!("target operation `{}` is not a final step; not collected", ann_of[op]));
        }
    }

    let end = replay_from(&s0, &actions, 0)?;
    let goal = goal_from_state(&end);
    let game = Game {
        id: doc.id.clone().unwrap_or_else(|| "annotated".to_string()),
        instructions: realize_instructions(&goal, &s0.entities),
        surface: doc.text.clone(),
        goal,
        episode_cap: DEFAULT_EPISODE_CAP.max(actions.len()),
        reference: actions,
        level: 0,
        seed: 0,
        discount: 1.0,
        s0,
    };
    game.check()?;
    Ok(Conversion {
        game,
        dropped_entities,
        dropped_relations,
        warnings,
    })
}

/// Dictionary of lowercase terms, each bound to one kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gazetteer {
    /// (lowercase chars, canonical name, kind), longest first
    terms: Vec<(Vec<char>, String, EntityKind)>,
}

fn lower(text: &str) -> Vec<char> {
    text.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect()
}

impl Gazetteer {
    pub fn new<'a>(entries: impl IntoIterator<Item = (EntityKind, &'a str)>) -> Result<Self, IngestError> {
        let mut by_term: BTreeMap<Vec<char>, (String, EntityKind)> = BTreeMap::new();
        for (kind, name) in entries {
            let key = lower(name.trim());
            if key.is_empty() {
                continue;
            }
            match by_term.get(&key) {
                Some((_, k)) if *k != kind => return Err(IngestError::DuplicateTerm(name.to_string())),
                Some(_) => {}
                None => {
                    by_term.insert(key, (name.trim().to_string(), kind));
                }
            }
        }
        let mut terms: Vec<_> = by_term.into_iter().map(|(t, (n, k))| (t, n, k)).collect();
        terms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Gazetteer { terms })
    }

    pub fn from_lexicon(lexicon: &Lexicon) -> Result<Self, IngestError> {
        Gazetteer::new(
            lexicon
                .kinds()
                .flat_map(|(kind, names)| names.iter().map(move |n| (kind, n.as_str()))),
        )
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// One gazetteer hit; offsets are in characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub entity: Entity,
    pub start: usize,
    pub end: usize,
}

/// Left-to-right, longest-match, non-overlapping tagging on word
/// boundaries. Repeated terms map to the same entity; ids are numbered per
/// kind in order of first appearance.
pub fn tag_entities(text: &str, gazetteer: &Gazetteer) -> Vec<Mention> {
    let hay = lower(text);
    let boundary = |i: usize| i == 0 || i == hay.len() || !hay[i - 1].is_alphanumeric() || !hay[i].is_alphanumeric();
    let mut ids: BTreeMap<(EntityKind, &str), EntityId> = BTreeMap::new();
    let mut counters: BTreeMap<EntityKind, usize> = BTreeMap::new();
    let mut out = Vec::new();
    let mut i = 0;
    while i < hay.len() {
        let starts_word = i == 0 || !(hay[i - 1].is_alphanumeric() && hay[i].is_alphanumeric());
        let hit = starts_word
            .then(|| {
                self_match(&gazetteer.terms, &hay, i)
                    .find(|(term, _, _)| boundary(i + term.len()))
            })
            .flatten();
        let Some((term, name, kind)) = hit else {
            i += 1;
            continue;
        };
        let id = ids
            .entry((*kind, name.as_str()))
            .or_insert_with(|| {
                let n = counters.entry(*kind).or_insert(0);
                *n += 1;
                EntityId::parse(&format!("{}-{}", kind.id_prefix(), n)).expect("prefixes are well formed")
            })
            .clone();
        out.push(Mention {
            entity: Entity::new(id, *kind, name.clone()),
            start: i,
            end: i + term.len(),
        });
        i += term.len();
    }
    out
}

fn self_match<'a>(
    terms: &'a [(Vec<char>, String, EntityKind)],
    hay: &'a [char],
    at: usize,
) -> impl Iterator<Item = &'a (Vec<char>, String, EntityKind)> {
    terms
        .iter()
        .filter(move |(t, _, _)| hay.len() - at >= t.len() && hay[at..at + t.len()] == t[..])
}

/// Distinct tagged entities in id order.
pub fn tagged_roster(text: &str, gazetteer: &Gazetteer) -> Vec<Entity> {
    let unique: BTreeMap<EntityId, Entity> = tag_entities(text, gazetteer)
        .into_iter()
        .map(|m| (m.entity.id.clone(), m.entity))
        .collect();
    unique.into_values().collect()
}

/// A reward-free game whose start state holds the entities tagged in `text`.
pub fn game_from_text(text: &str, gazetteer: &Gazetteer) -> Result<Game, IngestError> {
    let roster = tagged_roster(text, gazetteer);
    let count = |k| roster.iter().filter(|e| e.kind == k).count();
    let (operations, materials) = (count(EntityKind::Operation), count(EntityKind::Material));
    if operations == 0 || materials == 0 {
        return Err(IngestError::InsufficientEntities { operations, materials });
    }
    Ok(Game::reward_free("text", WorldState::initial(roster)?, text))
}

fn map_id(id: &EntityId, map: &BTreeMap<EntityId, EntityId>) -> Option<EntityId> {
    if let Some(m) = map.get(id) {
        return Some(m.clone());
    }
    let op = id.as_str().strip_prefix("mx-")?;
    map.get(&EntityId::parse(op).ok()?).map(result_id)
}

fn map_fact(f: &Fact, map: &BTreeMap<EntityId, EntityId>) -> Option<Fact> {
    Some(Fact {
        relation: f.relation,
        head: map_id(&f.head, map)?,
        tail: match &f.tail {
            Some(t) => Some(map_id(t, map)?),
            None => None,
        },
    })
}

/// Recovers an action sequence for a generated game from its surface text
/// alone: tags the text, aligns tagged entities with the game's roster by
/// kind and name, plans towards the translated goal and translates the plan
/// back into the game's ids.
pub fn extract_action_graph(game: &Game, gazetteer: &Gazetteer, budget: usize) -> Result<Vec<GroundedAction>, IngestError> {
    let text_game = game_from_text(&game.surface, gazetteer)?;
    let by_name: BTreeMap<(EntityKind, &str), &EntityId> = text_game
        .s0
        .interactable()
        .map(|e| ((e.kind, e.name.as_str()), &e.id))
        .collect();
    let mut forward = BTreeMap::new();
    let mut back = BTreeMap::new();
    for e in game.s0.interactable() {
        if let Some(t) = by_name.get(&(e.kind, e.name.as_str())) {
            forward.insert(e.id.clone(), (*t).clone());
            back.insert((*t).clone(), e.id.clone());
        }
    }
    let mut goal = BTreeSet::new();
    for f in &game.goal {
        let mapped = map_fact(f, &forward).ok_or_else(|| {
            IngestError::InsufficientEntities {
                operations: text_game.s0.interactable().filter(|e| e.kind == EntityKind::Operation).count(),
                materials: text_game.s0.interactable().filter(|e| e.kind == EntityKind::Material).count(),
            }
        })?;
        goal.insert(mapped);
    }
    let found = plan(&text_game.s0, &goal, budget)?;
    Ok(found
        .into_iter()
        .map(|a| GroundedAction {
            verb: a.verb,
            arg1: map_id(&a.arg1, &back).expect("planned over tagged entities"),
            arg2: a.arg2.map(|b| map_id(&b, &back).expect("planned over tagged entities")),
        })
        .collect())
}
