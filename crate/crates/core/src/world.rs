//! Typed world model: entities, relations, facts, world states and the
//! domain lexicon that synthetic entities are drawn from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(EntityId),
    #[error("relation {relation} takes {expected} argument(s), got {got}")]
    ArityMismatch {
        relation: Relation,
        expected: usize,
        got: usize,
    },
    #[error("relation {relation} does not accept ({head}, {tail})")]
    KindMismatch {
        relation: Relation,
        head: EntityKind,
        tail: String,
    },
    #[error("lexicon has too few {kind} names: need {needed}, have {available}")]
    LexiconTooSmall {
        kind: EntityKind,
        needed: usize,
        available: usize,
    },
    #[error("unknown annotation schema type `{0}`")]
    UnknownSchemaType(String),
    #[error("difficulty level {0} is outside 1..=5")]
    InvalidLevel(u8),
    #[error("lexicon line {line}: {message}")]
    LexiconParse { line: usize, message: String },
    #[error("invalid entity id `{0}`")]
    InvalidId(String),
    #[error("duplicate entity id `{0}`")]
    DuplicateEntity(EntityId),
}

/// Entity handle such as `m-1`, `op-2` or `mx-op-1`.
///
/// Cheap to clone; world states are cloned on every transition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(Arc<str>);

impl EntityId {
    /// Accepts lowercase letter groups separated by `-` and ending in a
    /// numeric group: `m-1`, `sa-12`, `mx-op-3`.
    pub fn parse(raw: &str) -> Result<Self, WorldError> {
        if Self::is_well_formed(raw) {
            Ok(EntityId(Arc::from(raw)))
        } else {
            Err(WorldError::InvalidId(raw.to_string()))
        }
    }

    pub fn is_well_formed(raw: &str) -> bool {
        let parts: Vec<&str> = raw.split('-').collect();
        if parts.len() < 2 {
            return false;
        }
        let (last, init) = parts.split_last().expect("at least two parts");
        !last.is_empty()
            && last.bytes().all(|b| b.is_ascii_digit())
            && init
                .iter()
                .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_lowercase()))
    }

    pub(crate) fn from_parts(prefix: &str, n: usize) -> Self {
        EntityId(Arc::from(format!("{prefix}-{n}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for EntityId {
    type Err = WorldError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityId::parse(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityKind {
    Material,
    Mixture,
    Operation,
    Descriptor,
    MaterialDescriptor,
    OperationDescriptor,
    SynthesisApparatus,
    ApparatusDescriptor,
    Player,
}

impl EntityKind {
    pub const ALL: [EntityKind; 9] = [
        EntityKind::Material,
        EntityKind::Mixture,
        EntityKind::Operation,
        EntityKind::Descriptor,
        EntityKind::MaterialDescriptor,
        EntityKind::OperationDescriptor,
        EntityKind::SynthesisApparatus,
        EntityKind::ApparatusDescriptor,
        EntityKind::Player,
    ];

    pub const DESCRIPTORS: [EntityKind; 4] = [
        EntityKind::Descriptor,
        EntityKind::MaterialDescriptor,
        EntityKind::OperationDescriptor,
        EntityKind::ApparatusDescriptor,
    ];

    /// Name used in lexicon files and game documents.
    pub fn tag(self) -> &'static str {
        match self {
            EntityKind::Material => "material",
            EntityKind::Mixture => "mixture",
            EntityKind::Operation => "operation",
            EntityKind::Descriptor => "descriptor",
            EntityKind::MaterialDescriptor => "material-descriptor",
            EntityKind::OperationDescriptor => "operation-descriptor",
            EntityKind::SynthesisApparatus => "synthesis-apparatus",
            EntityKind::ApparatusDescriptor => "apparatus-descriptor",
            EntityKind::Player => "player",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        EntityKind::ALL.iter().copied().find(|k| k.tag() == tag)
    }

    pub fn id_prefix(self) -> &'static str {
        match self {
            EntityKind::Material => "m",
            EntityKind::Mixture => "mx",
            EntityKind::Operation => "op",
            EntityKind::Descriptor => "d",
            EntityKind::MaterialDescriptor => "md",
            EntityKind::OperationDescriptor => "od",
            EntityKind::SynthesisApparatus => "sa",
            EntityKind::ApparatusDescriptor => "ad",
            EntityKind::Player => "player",
        }
    }

    pub fn is_descriptor(self) -> bool {
        EntityKind::DESCRIPTORS.contains(&self)
    }

    /// Materials and mixtures: the things operations consume.
    pub fn is_substance(self) -> bool {
        matches!(self, EntityKind::Material | EntityKind::Mixture)
    }

    /// Kinds a descriptor of this kind may be linked to. Empty for
    /// non-descriptors.
    pub fn describes(self) -> &'static [EntityKind] {
        use EntityKind::*;
        match self {
            Descriptor => &[Material, Mixture, Operation, SynthesisApparatus],
            MaterialDescriptor => &[Material, Mixture],
            OperationDescriptor => &[Operation],
            ApparatusDescriptor => &[SynthesisApparatus],
            _ => &[],
        }
    }

    /// Kinds that can appear in a start roster.
    pub fn is_samplable(self) -> bool {
        !matches!(self, EntityKind::Mixture | EntityKind::Player)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: EntityId,
    pub kind: EntityKind,
    pub name: String,
    /// Operation results that exist in the world but not in the text.
    pub implicit: bool,
}

impl Entity {
    pub fn new(id: EntityId, kind: EntityKind, name: impl Into<String>) -> Self {
        Entity {
            id,
            kind,
            name: name.into(),
            implicit: false,
        }
    }
}

/// Relation vocabulary. Declaration order is the canonical fact order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Describes,
    Located,
    Input,
    OpRun,
    Output,
    Obtained,
    Holds,
    InRoom,
    Consumed,
}

impl Relation {
    pub const ALL: [Relation; 9] = [
        Relation::Describes,
        Relation::Located,
        Relation::Input,
        Relation::OpRun,
        Relation::Output,
        Relation::Obtained,
        Relation::Holds,
        Relation::InRoom,
        Relation::Consumed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Relation::Describes => "describes",
            Relation::Located => "located",
            Relation::Input => "input",
            Relation::OpRun => "op-run",
            Relation::Output => "output",
            Relation::Obtained => "obtained",
            Relation::Holds => "holds",
            Relation::InRoom => "in-room",
            Relation::Consumed => "consumed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Relation::ALL.iter().copied().find(|r| r.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Relation::Describes
            | Relation::Located
            | Relation::Input
            | Relation::Output
            | Relation::Holds => 2,
            Relation::OpRun | Relation::Obtained | Relation::InRoom | Relation::Consumed => 1,
        }
    }

    /// Bookkeeping relations have no annotation-schema counterpart.
    pub fn is_bookkeeping(self) -> bool {
        !matches!(
            self,
            Relation::Describes | Relation::Located | Relation::Input | Relation::Output
        )
    }

    pub fn is_location(self) -> bool {
        matches!(self, Relation::InRoom | Relation::Holds | Relation::Located)
    }

    /// Argument-kind compatibility table.
    pub fn accepts(self, head: EntityKind, tail: Option<EntityKind>) -> bool {
        use EntityKind::*;
        match (self, tail) {
            (Relation::Input, Some(t)) => head.is_substance() && t == Operation,
            (Relation::Output, Some(t)) => head == Operation && t == Mixture,
            (Relation::Describes, Some(t)) => head.describes().contains(&t),
            (Relation::Located, Some(t)) => {
                matches!(head, Material | Mixture | Operation) && t == SynthesisApparatus
            }
            (Relation::Holds, Some(t)) => head == Player && t.is_substance(),
            (Relation::InRoom, None) => true,
            (Relation::Consumed, None) => head.is_substance(),
            (Relation::OpRun, None) => head == Operation,
            (Relation::Obtained, None) => head == Mixture,
            _ => false,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grounded predicate `relation(head[, tail])`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub relation: Relation,
    pub head: EntityId,
    pub tail: Option<EntityId>,
}

impl Fact {
    pub fn unary(relation: Relation, head: &EntityId) -> Self {
        Fact {
            relation,
            head: head.clone(),
            tail: None,
        }
    }

    pub fn binary(relation: Relation, head: &EntityId, tail: &EntityId) -> Self {
        Fact {
            relation,
            head: head.clone(),
            tail: Some(tail.clone()),
        }
    }

    pub fn mentions(&self, id: &EntityId) -> bool {
        &self.head == id || self.tail.as_ref() == Some(id)
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tail {
            Some(t) => write!(f, "{}({}, {})", self.relation, self.head, t),
            None => write!(f, "{}({})", self.relation, self.head),
        }
    }
}

pub type Roster = BTreeMap<EntityId, Entity>;

/// Checks arity, entity existence and kind compatibility of `fact`.
pub fn validate_fact(fact: &Fact, roster: &Roster) -> Result<(), WorldError> {
    let got = 1 + usize::from(fact.tail.is_some());
    if got != fact.relation.arity() {
        return Err(WorldError::ArityMismatch {
            relation: fact.relation,
            expected: fact.relation.arity(),
            got,
        });
    }
    let head = roster
        .get(&fact.head)
        .ok_or_else(|| WorldError::UnknownEntity(fact.head.clone()))?;
    let tail = match &fact.tail {
        Some(t) => Some(
            roster
                .get(t)
                .ok_or_else(|| WorldError::UnknownEntity(t.clone()))?
                .kind,
        ),
        None => None,
    };
    if fact.relation.accepts(head.kind, tail) {
        Ok(())
    } else {
        Err(WorldError::KindMismatch {
            relation: fact.relation,
            head: head.kind,
            tail: tail.map_or_else(|| "-".to_string(), |k| k.to_string()),
        })
    }
}

pub fn player_id() -> EntityId {
    EntityId::from_parts("player", 1)
}

/// A set of facts over a roster of entities.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorldState {
    pub entities: Roster,
    pub facts: BTreeSet<Fact>,
}

impl WorldState {
    /// Single lab room holding the player and every roster entity.
    pub fn initial(roster: impl IntoIterator<Item = Entity>) -> Result<Self, WorldError> {
        let mut state = WorldState::default();
        let player = Entity::new(player_id(), EntityKind::Player, "you");
        for entity in std::iter::once(player).chain(roster) {
            state.add_entity(entity)?;
        }
        Ok(state)
    }

    /// Inserts an entity together with its `InRoom` location fact.
    pub fn add_entity(&mut self, entity: Entity) -> Result<(), WorldError> {
        if self.entities.contains_key(&entity.id) {
            return Err(WorldError::DuplicateEntity(entity.id));
        }
        self.facts.insert(Fact::unary(Relation::InRoom, &entity.id));
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    pub fn insert(&mut self, fact: Fact) -> Result<bool, WorldError> {
        validate_fact(&fact, &self.entities)?;
        Ok(self.facts.insert(fact))
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }

    pub fn has_unary(&self, relation: Relation, id: &EntityId) -> bool {
        self.facts.contains(&Fact::unary(relation, id))
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn kind_of(&self, id: &EntityId) -> Option<EntityKind> {
        self.entities.get(id).map(|e| e.kind)
    }

    /// Entities other than the player, in id order.
    pub fn interactable(&self) -> impl Iterator<Item = &Entity> {
        self.entities
            .values()
            .filter(|e| e.kind != EntityKind::Player)
    }

    pub fn facts_with(&self, relation: Relation) -> impl Iterator<Item = &Fact> {
        self.facts.iter().filter(move |f| f.relation == relation)
    }

    /// The location-class fact of `id`, if any.
    pub fn location_of(&self, id: &EntityId) -> Option<&Fact> {
        self.facts.iter().find(|f| match f.relation {
            Relation::InRoom | Relation::Located => &f.head == id,
            Relation::Holds => f.tail.as_ref() == Some(id),
            _ => false,
        })
    }

    pub fn is_subset_of(&self, goal: &BTreeSet<Fact>) -> bool {
        goal.is_subset(&self.facts)
    }

    /// Lists every violated state invariant; empty when the state is sound.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (id, entity) in &self.entities {
            if id != &entity.id {
                problems.push(format!("roster key {id} holds entity {}", entity.id));
            }
            if entity.implicit && entity.kind != EntityKind::Mixture {
                problems.push(format!("{id} is implicit but not a mixture"));
            }
        }
        for fact in &self.facts {
            if let Err(e) = validate_fact(fact, &self.entities) {
                problems.push(format!("{fact}: {e}"));
            }
        }
        let mut locations: BTreeMap<&EntityId, usize> = BTreeMap::new();
        for fact in self.facts.iter().filter(|f| f.relation.is_location()) {
            let located = if fact.relation == Relation::Holds {
                fact.tail.as_ref()
            } else {
                Some(&fact.head)
            };
            if let Some(id) = located {
                *locations.entry(id).or_default() += 1;
            }
        }
        for id in self.entities.keys() {
            let n = locations.get(id).copied().unwrap_or(0);
            if n != 1 {
                problems.push(format!("{id} has {n} location facts"));
            }
        }
        problems
    }
}

/// Per-kind display names for sampling synthetic entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    names: BTreeMap<EntityKind, Vec<String>>,
}

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

impl Lexicon {
    /// Parses `kind<TAB>name` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut names: BTreeMap<EntityKind, Vec<String>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| WorldError::LexiconParse {
                line: i + 1,
                message,
            };
            let (tag, name) = line
                .split_once('\t')
                .ok_or_else(|| err("expected kind<TAB>name".into()))?;
            let kind = EntityKind::from_tag(tag.trim())
                .filter(|k| *k != EntityKind::Player)
                .ok_or_else(|| err(format!("unknown kind `{tag}`")))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty name".into()));
            }
            let list = names.entry(kind).or_default();
            if list.iter().any(|n| n == name) {
                return Err(err(format!("duplicate {kind} name `{name}`")));
            }
            list.push(name.to_string());
        }
        Ok(Lexicon { names })
    }

    pub fn builtin() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("built-in lexicon parses")
    }

    pub fn names(&self, kind: EntityKind) -> &[String] {
        self.names.get(&kind).map_or(&[], |v| v.as_slice())
    }

    pub fn kinds(&self) -> impl Iterator<Item = (EntityKind, &[String])> {
        self.names.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::builtin()
    }
}

/// Entity counts per difficulty level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSpec {
    pub materials: usize,
    pub operations: usize,
    pub descriptors: usize,
    pub apparatus: usize,
}

pub const MAX_LEVEL: u8 = 5;

impl LevelSpec {
    pub fn for_level(level: u8) -> Result<Self, WorldError> {
        let (materials, operations, descriptors, apparatus) = match level {
            1 => (2, 1, 1, 0),
            2 => (3, 1, 2, 0),
            3 => (3, 2, 3, 1),
            4 => (4, 3, 4, 1),
            5 => (6, 4, 5, 2),
            other => return Err(WorldError::InvalidLevel(other)),
        };
        Ok(LevelSpec {
            materials,
            operations,
            descriptors,
            apparatus,
        })
    }
}

/// Draws a start roster for `level`. Ids are numbered per kind in draw
/// order; display names are sampled without replacement.
pub fn sample_entities<R: Rng + ?Sized>(
    level: u8,
    rng: &mut R,
    lexicon: &Lexicon,
) -> Result<Vec<Entity>, WorldError> {
    let spec = LevelSpec::for_level(level)?;
    let mut roster = Vec::new();
    let draw = |kind: EntityKind, count: usize, rng: &mut R| -> Result<Vec<Entity>, WorldError> {
        let pool = lexicon.names(kind);
        if pool.len() < count {
            return Err(WorldError::LexiconTooSmall {
                kind,
                needed: count,
                available: pool.len(),
            });
        }
        Ok(pool
            .choose_multiple(rng, count)
            .enumerate()
            .map(|(i, name)| Entity::new(EntityId::from_parts(kind.id_prefix(), i + 1), kind, name.clone()))
            .collect())
    };
    roster.extend(draw(EntityKind::Material, spec.materials, rng)?);
    roster.extend(draw(EntityKind::Operation, spec.operations, rng)?);
    roster.extend(draw(EntityKind::SynthesisApparatus, spec.apparatus, rng)?);

    let allowed: Vec<EntityKind> = EntityKind::DESCRIPTORS
        .into_iter()
        .filter(|k| spec.apparatus > 0 || *k != EntityKind::ApparatusDescriptor)
        .collect();
    let mut per_kind: BTreeMap<EntityKind, usize> = BTreeMap::new();
    let mut order = Vec::with_capacity(spec.descriptors);
    for _ in 0..spec.descriptors {
        let kind = *allowed.choose(rng).expect("descriptor kinds non-empty");
        *per_kind.entry(kind).or_default() += 1;
        order.push(kind);
    }
    let mut drawn: BTreeMap<EntityKind, std::vec::IntoIter<Entity>> = BTreeMap::new();
    for (kind, count) in &per_kind {
        drawn.insert(*kind, draw(*kind, *count, rng)?.into_iter());
    }
    for kind in order {
        roster.push(drawn.get_mut(&kind).and_then(Iterator::next).expect("drawn per kind"));
    }
    Ok(roster)
}

/// Maps an annotation-schema entity type onto the world's kinds. `Ok(None)`
/// marks types that are deliberately ignored.
pub fn sp_to_tl_kind(sp_type: &str) -> Result<Option<EntityKind>, WorldError> {
    use EntityKind::*;
    let kind = match sp_type {
        "Material" => Some(Material),
        "Number" | "Amount-Unit" | "Brand" | "Property-Misc" => Some(Descriptor),
        "Operation" => Some(Operation),
        "Condition-Unit" | "Condition-Misc" => Some(OperationDescriptor),
        "Material-Descriptor" => Some(MaterialDescriptor),
        "Synthesis-Apparatus" => Some(SynthesisApparatus),
        "Apparatus-Descriptor" => Some(ApparatusDescriptor),
        "Nonrecipe-Material" => None,
        other => return Err(WorldError::UnknownSchemaType(other.to_string())),
    };
    Ok(kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> EntityId {
        EntityId::parse(s).unwrap()
    }

    fn roster(entries: &[(&str, EntityKind)]) -> Roster {
        entries
            .iter()
            .map(|(i, k)| (id(i), Entity::new(id(i), *k, *i)))
            .collect()
    }

    #[test]
    fn validate_fact_verdicts() {
        let r = roster(&[
            ("d-1", EntityKind::MaterialDescriptor),
            ("m-1", EntityKind::Material),
            ("op-1", EntityKind::Operation),
            ("op-2", EntityKind::Operation),
        ]);
        assert_eq!(
            validate_fact(&Fact::binary(Relation::Describes, &id("d-1"), &id("m-1")), &r),
            Ok(())
        );
        assert!(matches!(
            validate_fact(&Fact::binary(Relation::Input, &id("op-1"), &id("op-2")), &r),
            Err(WorldError::KindMismatch { .. })
        ));
        assert_eq!(
            validate_fact(&Fact::binary(Relation::Describes, &id("d-9"), &id("m-1")), &r),
            Err(WorldError::UnknownEntity(id("d-9")))
        );
        assert!(matches!(
            validate_fact(&Fact::unary(Relation::Input, &id("m-1")), &r),
            Err(WorldError::ArityMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn id_shapes() {
        assert!(EntityId::is_well_formed("m-1"));
        assert!(EntityId::is_well_formed("mx-op-12"));
        assert!(!EntityId::is_well_formed("m1"));
        assert!(!EntityId::is_well_formed("M-1"));
        assert!(!EntityId::is_well_formed("m-"));
        assert!(!EntityId::is_well_formed("-1"));
    }

    #[test]
    fn level_counts() {
        let lex = Lexicon::builtin();
        let count = |roster: &[Entity], pred: &dyn Fn(EntityKind) -> bool| {
            roster.iter().filter(|e| pred(e.kind)).count()
        };
        for (level, want) in [(1u8, (2, 1, 1, 0)), (5, (6, 4, 5, 2))] {
            let r = sample_entities(level, &mut ChaCha8Rng::seed_from_u64(7), &lex).unwrap();
            let got = (
                count(&r, &|k| k == EntityKind::Material),
                count(&r, &|k| k == EntityKind::Operation),
                count(&r, &|k| k.is_descriptor()),
                count(&r, &|k| k == EntityKind::SynthesisApparatus),
            );
            assert_eq!(got, want, "level {level}");
            assert!(r.iter().all(|e| e.kind != EntityKind::Mixture));
        }
    }

    #[test]
    fn sampling_is_deterministic_and_injective() {
        let lex = Lexicon::builtin();
        for level in 1..=5 {
            let a = sample_entities(level, &mut ChaCha8Rng::seed_from_u64(7), &lex).unwrap();
            let b = sample_entities(level, &mut ChaCha8Rng::seed_from_u64(7), &lex).unwrap();
            assert_eq!(a, b);
            let ids: BTreeSet<_> = a.iter().map(|e| &e.id).collect();
            assert_eq!(ids.len(), a.len());
        }
    }

    #[test]
    fn lexicon_too_small() {
        let lex = Lexicon::parse("material\tNaCl\noperation\tmix\ndescriptor\t5 g\n").unwrap();
        let err = sample_entities(1, &mut ChaCha8Rng::seed_from_u64(0), &lex).unwrap_err();
        assert!(matches!(
            err,
            WorldError::LexiconTooSmall { kind: EntityKind::Material, needed: 2, available: 1 }
        ));
    }

    #[test]
    fn lexicon_rejects_garbage() {
        assert!(Lexicon::parse("metal\tFe\n").is_err());
        assert!(Lexicon::parse("material Fe\n").is_err());
        assert!(Lexicon::parse("material\tFe\nmaterial\tFe\n").is_err());
        assert!(Lexicon::parse("player\tme\n").is_err());
    }

    #[test]
    fn schema_mapping() {
        assert_eq!(sp_to_tl_kind("Condition-Misc"), Ok(Some(EntityKind::OperationDescriptor)));
        assert_eq!(sp_to_tl_kind("Nonrecipe-Material"), Ok(None));
        assert_eq!(sp_to_tl_kind("Apparatus-Descriptor"), Ok(Some(EntityKind::ApparatusDescriptor)));
        assert!(matches!(sp_to_tl_kind("Gizmo"), Err(WorldError::UnknownSchemaType(_))));
        // every samplable kind is reachable from some schema type
        let types = [
            "Material", "Number", "Operation", "Amount-Unit", "Condition-Unit",
            "Material-Descriptor", "Condition-Misc", "Synthesis-Apparatus", "Brand",
            "Apparatus-Descriptor",
        ];
        let image: BTreeSet<_> = types.iter().filter_map(|t| sp_to_tl_kind(t).unwrap()).collect();
        for kind in EntityKind::ALL.into_iter().filter(|k| k.is_samplable()) {
            assert!(image.contains(&kind), "{kind} unreachable");
        }
    }

    #[test]
    fn initial_state_is_sound() {
        let lex = Lexicon::builtin();
        let r = sample_entities(3, &mut ChaCha8Rng::seed_from_u64(1), &lex).unwrap();
        let s = WorldState::initial(r).unwrap();
        assert!(s.audit().is_empty(), "{:?}", s.audit());
    }
}
