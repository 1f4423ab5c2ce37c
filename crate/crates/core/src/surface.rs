//! Rule-based realization of quests as procedure text and instructions.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::questgen::ActionGraph;
use crate::rules::{result_id, GroundedAction, Verb};
use crate::world::{EntityId, EntityKind, Fact, Relation, Roster};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SurfaceError {
    #[error("no template for verb `{0}`")]
    MissingTemplate(Verb),
    #[error("template line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A verb pattern with `{a}`/`{b}` slots.
///
/// `run-op` aggregates: `{a}` is the operation name and `{b}` the joined
/// input list. `locate` wraps a clause: `{a}` is what is placed, `{b}` the
/// apparatus. `input-assign` renders a single list item `{a}`. `obtain` may
/// omit its slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub verb: Verb,
    pub pattern: String,
}

impl Template {
    pub fn new(verb: Verb, pattern: impl Into<String>) -> Result<Self, String> {
        let pattern = pattern.into();
        let slots = ["{a}", "{b}"]
            .iter()
            .filter(|s| pattern.contains(*s))
            .count();
        let has_b = pattern.contains("{b}");
        let ok = match verb {
            Verb::Obtain => !has_b,
            Verb::InputAssign => slots == 1 && !has_b,
            Verb::RunOp | Verb::Locate | Verb::LinkDescriptor => slots == 2,
            _ => slots == 1 && !has_b,
        };
        if ok {
            Ok(Template { verb, pattern })
        } else {
            Err(format!("pattern `{pattern}` has the wrong slots for {verb}"))
        }
    }

    pub fn fill(&self, a: &str, b: &str) -> String {
        self.pattern.replace("{a}", a).replace("{b}", b)
    }
}

const DEFAULT_TEMPLATES: &str = "\
take\tpick up the {a}
take\ttake the {a}
drop\tput down the {a}
drop\tset the {a} aside
examine\tinspect the {a}
examine\tlook at the {a}
link-descriptor\t{a} {b}
link-descriptor\t{b} ({a})
input-assign\tthe {a}
input-assign\tall of the {a}
run-op\t{a} {b}
run-op\tcarefully {a} {b}
run-op\t{a} {b} as described
locate\t{a} in the {b}
locate\t{a} inside the {b}
locate\t{a} using the {b}
obtain\tCollect the product.
obtain\tRecover the product.
obtain\tCollect the final product.
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    by_verb: BTreeMap<Verb, Vec<Template>>,
}

impl TemplateSet {
    /// Parses `verb<TAB>pattern` lines; several lines per verb are variants.
    pub fn parse(text: &str) -> Result<Self, SurfaceError> {
        let mut by_verb: BTreeMap<Verb, Vec<Template>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| SurfaceError::Parse { line: i + 1, message };
            let (verb, pattern) = line
                .split_once('\t')
                .ok_or_else(|| err("expected verb<TAB>pattern".into()))?;
            let verb = Verb::from_name(verb.trim()).ok_or_else(|| err(format!("unknown verb `{verb}`")))?;
            by_verb
                .entry(verb)
                .or_default()
                .push(Template::new(verb, pattern.trim_end_matches('\r')).map_err(err)?);
        }
        Ok(TemplateSet { by_verb })
    }

    pub fn builtin() -> Self {
        TemplateSet::parse(DEFAULT_TEMPLATES).expect("built-in templates parse")
    }

    pub fn variants(&self, verb: Verb) -> &[Template] {
        self.by_verb.get(&verb).map_or(&[], Vec::as_slice)
    }

    fn choose<R: Rng + ?Sized>(&self, verb: Verb, rng: &mut R) -> Result<&Template, SurfaceError> {
        self.variants(verb)
            .choose(rng)
            .ok_or(SurfaceError::MissingTemplate(verb))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet::builtin()
    }
}

const OPENERS: [&str; 2] = ["First", "To begin"];
const CONNECTIVES: [&str; 3] = ["Then", "Next", "After that"];

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

struct Realizer<'a, R: Rng + ?Sized> {
    graph: &'a ActionGraph,
    templates: &'a TemplateSet,
    rng: &'a mut R,
    /// descriptor ids linked to each target, in action order
    links: BTreeMap<&'a EntityId, Vec<&'a EntityId>>,
    /// sentence number (1-based) announcing each operation
    step_of: BTreeMap<&'a EntityId, usize>,
    mentioned: BTreeSet<EntityId>,
}

impl<'a, R: Rng + ?Sized> Realizer<'a, R> {
    fn name(&mut self, id: &EntityId) -> String {
        self.mentioned.insert(id.clone());
        self.graph
            .s0
            .entity(id)
            .map_or_else(|| id.to_string(), |e| e.name.clone())
    }

    fn kind(&self, id: &EntityId) -> Option<EntityKind> {
        self.graph.s0.kind_of(id)
    }

    /// Noun phrase (without article) with its descriptors folded in.
    fn noun(&mut self, id: &EntityId) -> Result<String, SurfaceError> {
        let mut np = match self.kind(id) {
            Some(_) => self.name(id),
            None => {
                let producer = self
                    .graph
                    .actions
                    .iter()
                    .find(|a| a.verb == Verb::RunOp && result_id(&a.arg1) == *id)
                    .map(|a| a.arg1.clone());
                match producer.and_then(|op| self.step_of.get(&op).copied()) {
                    Some(step) => format!("result of step {step}"),
                    None => "previous result".to_string(),
                }
            }
        };
        for d in self.links.get(id).cloned().unwrap_or_default() {
            let desc = self.name(d);
            np = self.templates.choose(Verb::LinkDescriptor, self.rng)?.fill(&desc, &np);
        }
        Ok(np)
    }

    fn op_sentence(&mut self, op: &EntityId, index: usize) -> Result<String, SurfaceError> {
        let inputs: Vec<&EntityId> = self
            .graph
            .actions
            .iter()
            .filter(|a| a.verb == Verb::InputAssign && a.arg2.as_ref() == Some(op))
            .map(|a| &a.arg1)
            .collect();
        let mut items = Vec::with_capacity(inputs.len());
        for m in inputs {
            let np = self.noun(m)?;
            items.push(self.templates.choose(Verb::InputAssign, self.rng)?.fill(&np, ""));
        }
        let op_name = self.name(op);
        let mut clause = self
            .templates
            .choose(Verb::RunOp, self.rng)?
            .fill(&op_name, &join_list(&items));
        let apparatus = self
            .graph
            .actions
            .iter()
            .find(|a| a.verb == Verb::Locate && &a.arg1 == op)
            .and_then(|a| a.arg2.clone());
        if let Some(sa) = apparatus {
            let np = self.noun(&sa)?;
            clause = self.templates.choose(Verb::Locate, self.rng)?.fill(&clause, &np);
        }
        for d in self.links.get(op).cloned().unwrap_or_default() {
            let desc = self.name(d);
            if self.kind(d) == Some(EntityKind::OperationDescriptor) {
                clause = format!("{clause} {desc}");
            } else {
                clause = format!("{clause} ({desc})");
            }
        }
        let opener = if index == 0 {
            OPENERS.choose(self.rng)
        } else {
            CONNECTIVES.choose(self.rng)
        }
        .expect("non-empty");
        Ok(format!("{opener}, {clause}."))
    }
}

/// Renders a quest as procedure text: one sentence per operation in run
/// order, then the collection step.
pub fn realize_surface<R: Rng + ?Sized>(
    graph: &ActionGraph,
    templates: &TemplateSet,
    rng: &mut R,
) -> Result<String, SurfaceError> {
    let mut links: BTreeMap<&EntityId, Vec<&EntityId>> = BTreeMap::new();
    for a in graph.actions.iter().filter(|a| a.verb == Verb::LinkDescriptor) {
        if let Some(t) = &a.arg2 {
            links.entry(t).or_default().push(&a.arg1);
        }
    }
    let ops: Vec<&EntityId> = graph
        .actions
        .iter()
        .filter(|a| a.verb == Verb::RunOp)
        .map(|a| &a.arg1)
        .collect();
    let step_of = ops.iter().enumerate().map(|(i, op)| (*op, i + 1)).collect();
    let mut r = Realizer {
        graph,
        templates,
        rng,
        links,
        step_of,
        mentioned: BTreeSet::new(),
    };
    let mut sentences = Vec::new();
    for (i, op) in ops.iter().enumerate() {
        sentences.push(r.op_sentence(op, i)?);
    }

    // anything the operation sentences did not reach
    let leftovers: Vec<EntityId> = graph
        .s0
        .interactable()
        .filter(|e| !e.implicit && !r.mentioned.contains(&e.id))
        .map(|e| e.id.clone())
        .collect();
    let mut extra = Vec::new();
    for id in &leftovers {
        // linked descriptors surface together with their target
        let linked = r.links.values().flatten().any(|d| *d == id);
        if r.mentioned.contains(id) || linked {
            continue;
        }
        let np = match graph.actions.iter().find(|a| a.verb == Verb::Locate && &a.arg1 == id) {
            Some(GroundedAction { arg2: Some(sa), .. }) => {
                let thing = format!("the {}", r.noun(id)?);
                let place = r.noun(sa)?;
                r.templates.choose(Verb::Locate, r.rng)?.fill(&thing, &place)
            }
            _ => format!("the {}", r.noun(id)?),
        };
        extra.push(np);
    }
    if !extra.is_empty() {
        sentences.push(format!("Keep {} at hand.", join_list(&extra)));
    }

    if graph.actions.iter().any(|a| a.verb == Verb::Obtain) {
        let op = graph
            .actions
            .iter()
            .rev()
            .find(|a| a.verb == Verb::Obtain)
            .map(|a| a.arg1.clone())
            .expect("checked above");
        let op_name = r.name(&op);
        sentences.push(r.templates.choose(Verb::Obtain, r.rng)?.fill(&op_name, ""));
    }
    Ok(sentences.join(" "))
}

pub const INSTRUCTIONS_HEADER: &str = "Instructions:";

fn reference(id: &EntityId, roster: &Roster) -> String {
    if let Some(e) = roster.get(id) {
        return format!("the {} ({})", e.name, id);
    }
    // result ids are `mx-<op id>`
    let producer = id
        .as_str()
        .strip_prefix("mx-")
        .and_then(|op| EntityId::parse(op).ok())
        .and_then(|op| roster.get(&op));
    match producer {
        Some(op) => format!("the result of {} ({})", op.name, id),
        None => id.to_string(),
    }
}

fn clause(fact: &Fact, roster: &Roster) -> String {
    let h = reference(&fact.head, roster);
    let t = fact.tail.as_ref().map(|t| reference(t, roster)).unwrap_or_default();
    match fact.relation {
        Relation::Describes => format!("describe {t} with {h}"),
        Relation::Located => format!("place {h} in {t}"),
        Relation::Input => format!("use {h} in {t}"),
        Relation::OpRun => format!("perform {h}"),
        Relation::Output => format!("let {h} yield {t}"),
        Relation::Obtained => format!("collect {h}"),
        _ => format!("make {fact} hold"),
    }
}

/// One imperative line per goal fact, in canonical fact order.
pub fn realize_instructions(goal: &BTreeSet<Fact>, roster: &Roster) -> String {
    let mut text = String::from(INSTRUCTIONS_HEADER);
    for fact in goal {
        text.push_str("\n- ");
        text.push_str(&clause(fact, roster));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::questgen::generate;
    use crate::world::{Entity, Lexicon, WorldState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(s: &str) -> EntityId {
        EntityId::parse(s).unwrap()
    }

    fn render(g: &ActionGraph, seed: u64) -> String {
        realize_surface(g, &TemplateSet::builtin(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn level_one_text() {
        let s0 = WorldState::initial([
            Entity::new(id("m-1"), EntityKind::Material, "NaCl"),
            Entity::new(id("m-2"), EntityKind::Material, "H2O"),
            Entity::new(id("op-1"), EntityKind::Operation, "mix"),
            Entity::new(id("md-1"), EntityKind::MaterialDescriptor, "powdered"),
        ])
        .unwrap();
        let actions = vec![
            GroundedAction::binary(Verb::LinkDescriptor, &id("md-1"), &id("m-1")),
            GroundedAction::binary(Verb::InputAssign, &id("m-1"), &id("op-1")),
            GroundedAction::binary(Verb::InputAssign, &id("m-2"), &id("op-1")),
            GroundedAction::unary(Verb::RunOp, &id("op-1")),
            GroundedAction::unary(Verb::Obtain, &id("op-1")),
        ];
        let g = ActionGraph { s0, actions, goal: BTreeSet::new(), level: 1, seed: 0 };
        for seed in 0..20 {
            let text = render(&g, seed);
            for needle in ["NaCl", "H2O", "mix", "powdered"] {
                assert!(text.contains(needle), "{text}");
            }
            let sentences = text.matches(". ").count() + 1;
            assert!((2..=3).contains(&sentences), "{text}");
        }
    }

    #[test]
    fn coverage_and_implicit_results() {
        let lex = Lexicon::builtin();
        for level in 1..=5 {
            for seed in 0..30 {
                let g = generate(level, seed, &lex).unwrap();
                let text = render(&g, seed);
                for e in g.s0.interactable() {
                    assert!(text.contains(&e.name), "{} missing from {text}", e.name);
                }
                for name in crate::rules::RESULT_NAMES {
                    assert!(!text.contains(name), "{name} leaked into {text}");
                }
                assert_eq!(text, render(&g, seed));
                if g.actions.iter().any(|a| a.verb == Verb::Locate) {
                    let sa = g.s0.interactable().find(|e| e.kind == EntityKind::SynthesisApparatus).unwrap();
                    assert!(text.contains(&sa.name));
                }
            }
        }
    }

    #[test]
    fn missing_template_is_reported() {
        let g = generate(1, 0, &Lexicon::builtin()).unwrap();
        let partial = TemplateSet::parse("input-assign\tthe {a}\nlink-descriptor\t{a} {b}\n").unwrap();
        assert_eq!(
            realize_surface(&g, &partial, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(SurfaceError::MissingTemplate(Verb::RunOp))
        );
    }

    #[test]
    fn template_slots_are_checked() {
        assert!(TemplateSet::parse("locate\tput it in the {b}\n").is_err());
        assert!(TemplateSet::parse("take\ttake {a} and {b}\n").is_err());
        assert!(TemplateSet::parse("fly\t{a}\n").is_err());
        let set = TemplateSet::builtin();
        for verb in Verb::ALL {
            assert!((2..=3).contains(&set.variants(verb).len()), "{verb}");
        }
    }

    #[test]
    fn instructions() {
        let g = generate(2, 4, &Lexicon::builtin()).unwrap();
        let text = realize_instructions(&g.goal, &g.s0.entities);
        assert!(text.starts_with(INSTRUCTIONS_HEADER));
        assert_eq!(text.lines().count(), g.goal.len() + 1);
        assert!(text.lines().last().unwrap().starts_with("- collect the result of"));
        assert_eq!(text, realize_instructions(&g.goal, &g.s0.entities));
        assert_eq!(realize_instructions(&BTreeSet::new(), &g.s0.entities), INSTRUCTIONS_HEADER);
    }
}
