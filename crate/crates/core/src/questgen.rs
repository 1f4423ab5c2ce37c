//! Quest generation by forward chaining, replay, goal extraction and
//! order-insensitive equivalence of action sequences.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::rules::{apply, result_id, GroundedAction, Verb};
use crate::world::{
    sample_entities, Entity, EntityId, EntityKind, Fact, Lexicon, Relation, WorldError, WorldState,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuestError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("replay failed at step {step} (`{action}`): {reason}")]
    ReplayFailed {
        step: usize,
        action: GroundedAction,
        reason: &'static str,
    },
    #[error("no valid quest for level {level} seed {seed} after {attempts} attempts: {last}")]
    GenerationFailed {
        level: u8,
        seed: u64,
        attempts: usize,
        last: String,
    },
}

/// Start state plus an ordered action sequence solving it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionGraph {
    pub s0: WorldState,
    pub actions: Vec<GroundedAction>,
    pub goal: BTreeSet<Fact>,
    pub level: u8,
    pub seed: u64,
}

pub const GENERATION_ATTEMPTS: usize = 8;

pub fn max_len(level: u8) -> usize {
    4 * usize::from(level) + 4
}

/// Relations that make up a goal; locations of entities are left out.
pub const GOAL_RELATIONS: [Relation; 6] = [
    Relation::Describes,
    Relation::Input,
    Relation::Located,
    Relation::OpRun,
    Relation::Output,
    Relation::Obtained,
];

pub fn goal_from_state(state: &WorldState) -> BTreeSet<Fact> {
    state
        .facts
        .iter()
        .filter(|f| GOAL_RELATIONS.contains(&f.relation))
        .cloned()
        .collect()
}

/// Folds `apply` over `actions`; `seed` drives result naming.
pub fn replay_from(
    s0: &WorldState,
    actions: &[GroundedAction],
    seed: u64,
) -> Result<WorldState, QuestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = s0.clone();
    for (step, action) in actions.iter().enumerate() {
        state = apply(&state, action, &mut rng)
            .map_err(|e| match e {
                crate::rules::RuleError::PreconditionViolated { reason, .. } => QuestError::ReplayFailed {
                    step,
                    action: action.clone(),
                    reason,
                },
            })?
            .next_state;
    }
    Ok(state)
}

pub fn replay(graph: &ActionGraph) -> Result<WorldState, QuestError> {
    replay_from(&graph.s0, &graph.actions, graph.seed)
}

pub fn goal_of(graph: &ActionGraph) -> Result<BTreeSet<Fact>, QuestError> {
    Ok(goal_from_state(&replay(graph)?))
}

/// Facts plus (id, kind) pairs. Result mixtures carry canonical ids, so
/// this drops only their rng-chosen display names.
fn canonical(state: &WorldState) -> (BTreeSet<Fact>, BTreeSet<(EntityId, EntityKind)>) {
    (
        state.facts.clone(),
        state.entities.values().map(|e| (e.id.clone(), e.kind)).collect(),
    )
}

pub fn states_equivalent(a: &WorldState, b: &WorldState) -> bool {
    canonical(a) == canonical(b)
}

/// Whether two sequences from `s0` reach the same final state.
pub fn equivalent(
    k1: &[GroundedAction],
    k2: &[GroundedAction],
    s0: &WorldState,
) -> Result<bool, QuestError> {
    let a = replay_from(s0, k1, 0)?;
    let b = replay_from(s0, k2, 0)?;
    Ok(states_equivalent(&a, &b))
}

/// For each action, the indices of earlier actions that must precede it.
///
/// An operation waits for its input assignments and for every link and
/// locate touching it or its inputs; anything mentioning a result mixture
/// waits for the operation producing it; `obtain` waits for its run.
pub fn dependencies(actions: &[GroundedAction]) -> Vec<Vec<usize>> {
    let mut run_at: BTreeMap<EntityId, usize> = BTreeMap::new();
    let mut deps = vec![Vec::new(); actions.len()];
    for (i, a) in actions.iter().enumerate() {
        if a.verb == Verb::RunOp {
            run_at.insert(result_id(&a.arg1), i);
        }
    }
    for (i, a) in actions.iter().enumerate() {
        let mut need = BTreeSet::new();
        for arg in a.args() {
            if let Some(&j) = run_at.get(arg) {
                need.insert(j);
            }
        }
        match a.verb {
            Verb::RunOp => {
                let op = &a.arg1;
                let inputs: Vec<&EntityId> = actions
                    .iter()
                    .filter(|b| b.verb == Verb::InputAssign && b.arg2.as_ref() == Some(op))
                    .map(|b| &b.arg1)
                    .collect();
                for (j, b) in actions.iter().enumerate() {
                    let feeds = b.verb == Verb::InputAssign && b.arg2.as_ref() == Some(op);
                    let prepares_input = matches!(b.verb, Verb::LinkDescriptor | Verb::Locate)
                        && b.arg2.as_ref().is_some_and(|t| inputs.contains(&t))
                        || b.verb == Verb::Locate && inputs.contains(&&b.arg1);
                    let places_op = b.verb == Verb::Locate && &b.arg1 == op;
                    if j != i && (feeds || prepares_input || places_op) {
                        need.insert(j);
                    }
                }
            }
            Verb::Obtain => {
                if let Some(j) = actions
                    .iter()
                    .position(|b| b.verb == Verb::RunOp && b.arg1 == a.arg1)
                {
                    need.insert(j);
                }
            }
            _ => {}
        }
        need.remove(&i);
        deps[i] = need.into_iter().collect();
    }
    deps
}

/// Operations linked by result mixtures feeding later operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationDag {
    pub nodes: Vec<EntityId>,
    pub edges: Vec<(EntityId, EntityId)>,
}

impl OperationDag {
    pub fn from_actions(actions: &[GroundedAction]) -> Self {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        for a in actions {
            match a.verb {
                Verb::RunOp if !nodes.contains(&a.arg1) => nodes.push(a.arg1.clone()),
                Verb::InputAssign => {
                    let op = a.arg2.clone().expect("binary");
                    if let Some(src) = actions
                        .iter()
                        .find(|b| b.verb == Verb::RunOp && result_id(&b.arg1) == a.arg1)
                    {
                        edges.push((src.arg1.clone(), op));
                    }
                }
                _ => {}
            }
        }
        OperationDag { nodes, edges }
    }

    pub fn sinks(&self) -> Vec<&EntityId> {
        self.nodes
            .iter()
            .filter(|n| !self.edges.iter().any(|(from, _)| &from == n))
            .collect()
    }

    /// Kahn's algorithm; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<EntityId>> {
        let mut indegree: BTreeMap<&EntityId, usize> = self.nodes.iter().map(|n| (n, 0)).collect();
        for (_, to) in &self.edges {
            *indegree.entry(to).or_default() += 1;
        }
        let mut ready: Vec<&EntityId> = self
            .nodes
            .iter()
            .filter(|n| indegree[n] == 0)
            .collect();
        let mut order = Vec::new();
        while let Some(n) = ready.pop() {
            order.push(n.clone());
            for (_, to) in self.edges.iter().filter(|(from, _)| from == n) {
                let d = indegree.get_mut(to).expect("edge target is a node");
                *d -= 1;
                if *d == 0 {
                    ready.push(to);
                }
            }
        }
        (order.len() == indegree.len()).then_some(order)
    }

    pub fn is_weakly_connected(&self) -> bool {
        let pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|(a, b)| {
                Some((
                    self.nodes.iter().position(|n| n == a)?,
                    self.nodes.iter().position(|n| n == b)?,
                ))
            })
            .collect();
        connected(self.nodes.len(), &pairs)
    }

    /// Acyclic, weakly connected, exactly one sink.
    pub fn is_well_formed(&self) -> bool {
        self.topological_order().is_some() && self.is_weakly_connected() && self.sinks().len() == 1
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let root = find(&mut parent, 0);
    (0..n).all(|x| find(&mut parent, x) == root)
}

impl ActionGraph {
    pub fn operation_dag(&self) -> OperationDag {
        OperationDag::from_actions(&self.actions)
    }

    /// Entities as nodes, actions as edges; true when every entity of the
    /// start roster (and every result) hangs together.
    pub fn dual_graph_connected(&self) -> bool {
        let mut ids: Vec<EntityId> = self.s0.interactable().map(|e| e.id.clone()).collect();
        for a in &self.actions {
            if a.verb == Verb::RunOp {
                ids.push(result_id(&a.arg1));
            }
        }
        let index = |id: &EntityId| ids.iter().position(|x| x == id);
        let mut edges = Vec::new();
        for a in &self.actions {
            let (x, y) = match a.verb {
                Verb::RunOp | Verb::Obtain => (index(&a.arg1), index(&result_id(&a.arg1))),
                _ => match &a.arg2 {
                    Some(b) => (index(&a.arg1), index(b)),
                    None => continue,
                },
            };
            if let (Some(x), Some(y)) = (x, y) {
                edges.push((x, y));
            }
        }
        connected(ids.len(), &edges)
    }

    /// Checks the structural promises of a generated quest.
    pub fn check(&self) -> Result<(), String> {
        let final_state = replay(self).map_err(|e| e.to_string())?;
        if !self.goal.is_subset(&final_state.facts) {
            return Err("final state misses goal facts".into());
        }
        for e in self.s0.interactable() {
            let used = match e.kind {
                EntityKind::Material => self
                    .actions
                    .iter()
                    .any(|a| a.verb == Verb::InputAssign && a.arg1 == e.id),
                k if k.is_descriptor() => self
                    .actions
                    .iter()
                    .any(|a| a.verb == Verb::LinkDescriptor && a.arg1 == e.id),
                _ => true,
            };
            if !used {
                return Err(format!("{} is never used", e.id));
            }
        }
        let dag = self.operation_dag();
        if !dag.is_well_formed() {
            return Err("operation graph is not a single-sink connected DAG".into());
        }
        let sink = dag.sinks()[0].clone();
        match self.actions.last() {
            Some(a) if a.verb == Verb::Obtain && a.arg1 == sink => {}
            _ => return Err("quest does not end by obtaining the sink operation".into()),
        }
        if self.actions.len() > max_len(self.level) {
            return Err(format!("{} actions exceed the cap {}", self.actions.len(), max_len(self.level)));
        }
        Ok(())
    }
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [EntityId]) -> &'a EntityId {
    items.choose(rng).expect("non-empty candidate list")
}

fn build_actions<R: Rng>(roster: &[Entity], rng: &mut R) -> Vec<GroundedAction> {
    let ids_of = |kind: EntityKind| -> Vec<EntityId> {
        roster.iter().filter(|e| e.kind == kind).map(|e| e.id.clone()).collect()
    };
    let materials = ids_of(EntityKind::Material);
    let apparatus = ids_of(EntityKind::SynthesisApparatus);
    let mut ops = ids_of(EntityKind::Operation);
    ops.shuffle(rng);
    let n = ops.len();

    // Each non-sink operation feeds exactly one later operation.
    let successor: Vec<Option<usize>> = (0..n)
        .map(|i| (i + 1 < n).then(|| rng.gen_range(i + 1..n)))
        .collect();
    let sources: Vec<usize> = (0..n)
        .filter(|&j| !successor.contains(&Some(j)))
        .collect();

    let mut inputs: Vec<Vec<EntityId>> = vec![Vec::new(); n];
    let mut shuffled = materials.clone();
    shuffled.shuffle(rng);
    for (k, m) in shuffled.into_iter().enumerate() {
        let slot = if k < sources.len() { sources[k] } else { *sources.choose(rng).expect("a source exists") };
        inputs[slot].push(m);
    }
    for i in 0..n {
        inputs[i].sort();
        if let Some(j) = successor[i] {
            inputs[j].push(result_id(&ops[i]));
        }
    }

    let mut located_at: Vec<Option<EntityId>> = vec![None; n];
    let mut hosts: Vec<usize> = (0..n).collect();
    hosts.shuffle(rng);
    for (sa, host) in apparatus.iter().zip(hosts) {
        located_at[host] = Some(sa.clone());
    }

    let mut links: Vec<(EntityId, EntityId)> = Vec::new();
    for d in roster.iter().filter(|e| e.kind.is_descriptor()) {
        let candidates: Vec<EntityId> = roster
            .iter()
            .filter(|t| d.kind.describes().contains(&t.kind))
            .map(|t| t.id.clone())
            .collect();
        links.push((d.id.clone(), pick(rng, &candidates).clone()));
    }

    let mut actions = Vec::new();
    for i in 0..n {
        let op = &ops[i];
        let mut touched: Vec<&EntityId> = inputs[i].iter().collect();
        touched.push(op);
        if let Some(sa) = &located_at[i] {
            touched.push(sa);
        }
        for (d, t) in links.iter().filter(|(_, t)| touched.contains(&t)) {
            actions.push(GroundedAction::binary(Verb::LinkDescriptor, d, t));
        }
        for m in &inputs[i] {
            actions.push(GroundedAction::binary(Verb::InputAssign, m, op));
        }
        if let Some(sa) = &located_at[i] {
            actions.push(GroundedAction::binary(Verb::Locate, op, sa));
        }
        actions.push(GroundedAction::unary(Verb::RunOp, op));
    }
    actions.push(GroundedAction::unary(Verb::Obtain, &ops[n - 1]));
    actions
}

/// Generates a quest for `level`; pure in `(level, seed, lexicon)`.
pub fn generate(level: u8, seed: u64, lexicon: &Lexicon) -> Result<ActionGraph, QuestError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..GENERATION_ATTEMPTS {
        let roster = sample_entities(level, &mut rng, lexicon)?;
        let actions = build_actions(&roster, &mut rng);
        let s0 = WorldState::initial(roster)?;
        let mut graph = ActionGraph {
            s0,
            actions,
            goal: BTreeSet::new(),
            level,
            seed,
        };
        match goal_of(&graph) {
            Ok(goal) => graph.goal = goal,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        }
        match graph.check() {
            Ok(()) => return Ok(graph),
            Err(e) => last = e,
        }
    }
    Err(QuestError::GenerationFailed {
        level,
        seed,
        attempts: GENERATION_ATTEMPTS,
        last,
    })
}

/// A random order of `actions` respecting [`dependencies`]; each step picks
/// uniformly among the actions that are ready.
pub fn random_linear_extension<R: Rng + ?Sized>(
    actions: &[GroundedAction],
    rng: &mut R,
) -> Vec<GroundedAction> {
    let deps = dependencies(actions);
    let mut placed = vec![false; actions.len()];
    let mut out = Vec::with_capacity(actions.len());
    while out.len() < actions.len() {
        let ready: Vec<usize> = (0..actions.len())
            .filter(|&i| !placed[i] && deps[i].iter().all(|&j| placed[j]))
            .collect();
        let &i = ready.choose(rng).expect("dependencies are acyclic");
        placed[i] = true;
        out.push(actions[i].clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::builtin()
    }

    #[test]
    fn level_one_shape() {
        for seed in 0..50 {
            let g = generate(1, seed, &lex()).unwrap();
            let verbs: Vec<Verb> = g.actions.iter().map(|a| a.verb).collect();
            assert_eq!(
                verbs,
                [Verb::LinkDescriptor, Verb::InputAssign, Verb::InputAssign, Verb::RunOp, Verb::Obtain],
                "seed {seed}"
            );
        }
    }

    #[test]
    fn generated_graphs_hold_their_promises() {
        for level in 1..=5 {
            for seed in 0..40 {
                let g = generate(level, seed, &lex()).unwrap();
                g.check().unwrap();
                assert!(g.dual_graph_connected());
                let dag = g.operation_dag();
                let runs: Vec<&EntityId> =
                    g.actions.iter().filter(|a| a.verb == Verb::RunOp).map(|a| &a.arg1).collect();
                for (from, to) in &dag.edges {
                    let pos = |x: &EntityId| runs.iter().position(|r| *r == x).unwrap();
                    assert!(pos(from) < pos(to));
                }
                let final_state = replay(&g).unwrap();
                assert!(g.goal.is_subset(&final_state.facts));
                assert!(final_state.audit().is_empty());
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for level in 1..=5 {
            assert_eq!(generate(level, 11, &lex()).unwrap(), generate(level, 11, &lex()).unwrap());
        }
    }

    #[test]
    fn level_one_goal_counts() {
        let g = generate(1, 3, &lex()).unwrap();
        let count = |r: Relation| g.goal.iter().filter(|f| f.relation == r).count();
        assert_eq!(
            [Relation::OpRun, Relation::Output, Relation::Obtained, Relation::Input, Relation::Describes].map(count),
            [1, 1, 1, 2, 1]
        );
        assert_eq!(g.goal.len(), 6);
        assert!(g.goal.iter().all(|f| !f.relation.is_location()));
    }

    #[test]
    fn swapped_independent_actions_commute() {
        let g = generate(1, 5, &lex()).unwrap();
        let mut k = g.actions.clone();
        k.swap(1, 2); // two input-assigns
        let a = replay(&g).unwrap();
        let b = replay_from(&g.s0, &k, g.seed).unwrap();
        assert!(states_equivalent(&a, &b));
    }

    #[test]
    fn run_before_inputs_fails() {
        let g = generate(1, 5, &lex()).unwrap();
        let mut k = g.actions.clone();
        let run = k.remove(3);
        k.insert(1, run);
        assert!(matches!(
            replay_from(&g.s0, &k, 0),
            Err(QuestError::ReplayFailed { step: 1, reason: "operation has no inputs", .. })
        ));
    }

    #[test]
    fn equivalence_examples() {
        let g = generate(4, 9, &lex()).unwrap();
        assert!(equivalent(&g.actions, &g.actions, &g.s0).unwrap());
        // move descriptor links to the front, in reverse
        let (mut links, rest): (Vec<_>, Vec<_>) =
            g.actions.iter().cloned().partition(|a| a.verb == Verb::LinkDescriptor);
        links.reverse();
        let reordered: Vec<_> = links.into_iter().chain(rest).collect();
        assert!(equivalent(&g.actions, &reordered, &g.s0).unwrap());
        let missing: Vec<_> = g
            .actions
            .iter()
            .filter(|a| a.verb != Verb::LinkDescriptor || a.arg1 != g.actions[0].arg1)
            .cloned()
            .collect();
        assert!(!equivalent(&g.actions, &missing, &g.s0).unwrap());
    }

    #[test]
    fn equivalence_is_an_equivalence_on_permutations() {
        let g = generate(3, 2, &lex()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let perms: Vec<_> = (0..5).map(|_| random_linear_extension(&g.actions, &mut rng)).collect();
        for a in &perms {
            for b in &perms {
                let ab = equivalent(a, b, &g.s0).unwrap();
                assert_eq!(ab, equivalent(b, a, &g.s0).unwrap());
                assert!(ab);
            }
        }
    }

    #[test]
    fn lengths_grow_with_level() {
        let mean = |level| {
            (0..100).map(|s| generate(level, s, &lex()).unwrap().actions.len()).sum::<usize>() as f64 / 100.0
        };
        let means: Vec<f64> = (1..=5).map(mean).collect();
        assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    }

    #[test]
    fn dag_rejects_cycles() {
        let id = |s: &str| EntityId::parse(s).unwrap();
        let dag = OperationDag {
            nodes: vec![id("op-1"), id("op-2")],
            edges: vec![(id("op-1"), id("op-2")), (id("op-2"), id("op-1"))],
        };
        assert!(dag.topological_order().is_none());
        assert!(!dag.is_well_formed());
    }
}
