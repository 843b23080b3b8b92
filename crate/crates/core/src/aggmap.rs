//! Agglomeration forests.
//!
//! For each species, phase cells that are too small or that appear or
//! disappear between two time steps (the sources) are merged into a
//! neighboring phase cell. The pipeline runs on every logical rank:
//!
//! 1. source filtration and ghost exchange of source flags,
//! 2. direct targets: the largest non-source face neighbor,
//! 3. chain formation: sources surrounded by sources attach to the closest
//!    mapped neighbor, pairing with that neighbor's target when it is visible,
//! 4. group formation for islands without any non-source cell,
//! 5. levels, so that pairs crossing ranks can be applied in order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cutcell::{detect_coinciding_fractions, CutCellMesh, Species};
use crate::error::{Error, Result};
use crate::grid::{CartesianGrid, CellIndex, Partition};
use crate::parallel::{
    exchange_boundary_pairs, exchange_ghost_flags, global_agree_max, run_rounds_to_fixpoint, BoundaryPair, Link,
    RankNetwork,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    Static,
    Splitting,
    Moving,
}

impl FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(TimeMode::Static),
            "splitting" => Ok(TimeMode::Splitting),
            "moving" => Ok(TimeMode::Moving),
            other => Err(Error::Config(format!("unknown mode '{other}' (static, splitting, moving)"))),
        }
    }
}

impl fmt::Display for TimeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeMode::Static => "static",
            TimeMode::Splitting => "splitting",
            TimeMode::Moving => "moving",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSets {
    pub vanishing: BTreeSet<CellIndex>,
    pub newborn: BTreeSet<CellIndex>,
    pub small: BTreeSet<CellIndex>,
    pub all: BTreeSet<CellIndex>,
}

impl SourceSets {
    pub fn is_topological(&self, cell: CellIndex) -> bool {
        self.vanishing.contains(&cell) || self.newborn.contains(&cell)
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        self.all.contains(&cell)
    }
}

fn check_inputs(prev: &CutCellMesh, next: &CutCellMesh, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    if !prev.same_grid(next) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Phase cells of `species` taking part in this step. Empty phases only
/// count when the coinciding-interface rule makes them sources, or when they
/// vanish in the moving-interface mode.
pub fn phase_universe(prev: &CutCellMesh, next: &CutCellMesh, mode: TimeMode, species: Species) -> BTreeSet<CellIndex> {
    let empties: BTreeSet<CellIndex> =
        detect_coinciding_fractions(next).into_iter().filter(|(_, s)| *s == species).map(|(c, _)| c).collect();
    next.grid()
        .cells()
        .filter(|c| {
            let f = next.fraction(*c, species);
            f > 0.0
                || empties.contains(c)
                || (mode == TimeMode::Moving && prev.fraction(*c, species) > 0.0)
        })
        .collect()
}

pub fn identify_sources(
    prev: &CutCellMesh,
    next: &CutCellMesh,
    alpha: f64,
    mode: TimeMode,
    species: Species,
) -> Result<SourceSets> {
    check_inputs(prev, next, alpha)?;
    let prev = if mode == TimeMode::Static { next } else { prev };
    let universe = phase_universe(prev, next, mode, species);
    let empties: BTreeSet<CellIndex> =
        detect_coinciding_fractions(next).into_iter().filter(|(_, s)| *s == species).map(|(c, _)| c).collect();
    let mut sets = SourceSets::default();
    for &c in &universe {
        let (fp, fn_) = (prev.fraction(c, species), next.fraction(c, species));
        if mode == TimeMode::Moving && fp > 0.0 && fn_ == 0.0 {
            sets.vanishing.insert(c);
        }
        if mode != TimeMode::Static && fp == 0.0 && fn_ > 0.0 {
            sets.newborn.insert(c);
        }
        if fn_ < alpha || fp < alpha || empties.contains(&c) {
            sets.small.insert(c);
        }
    }
    sets.all = sets.vanishing.iter().chain(&sets.newborn).chain(&sets.small).copied().collect();
    Ok(sets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    Direct,
    Chain,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggPair {
    pub source: CellIndex,
    pub target: CellIndex,
    pub species: Species,
    pub level: u32,
    pub kind: PairKind,
}

/// Agglomeration forest of one species.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeciesMap {
    pub species: Species,
    /// Sorted by source.
    pub pairs: Vec<AggPair>,
    /// Sources that became roots of an isolated group.
    pub promoted_roots: BTreeSet<CellIndex>,
    pub sources: SourceSets,
    pub universe: BTreeSet<CellIndex>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalGroup {
    pub root: CellIndex,
    pub members: Vec<CellIndex>,
}

/// Rank-independent view of a forest: every source with its final target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalMap {
    pub species: Species,
    pub pairs: Vec<(CellIndex, CellIndex)>,
    pub groups: Vec<CanonicalGroup>,
}

impl SpeciesMap {
    pub fn empty(species: Species) -> Self {
        SpeciesMap {
            species,
            pairs: Vec::new(),
            promoted_roots: BTreeSet::new(),
            sources: SourceSets::default(),
            universe: BTreeSet::new(),
        }
    }

    pub fn pair_of(&self, source: CellIndex) -> Option<&AggPair> {
        self.pairs.binary_search_by_key(&source, |p| p.source).ok().map(|i| &self.pairs[i])
    }

    /// Follows pairs up to the root; `None` on a cycle.
    pub fn final_target(&self, cell: CellIndex) -> Option<CellIndex> {
        let mut c = cell;
        for _ in 0..=self.pairs.len() {
            match self.pair_of(c) {
                Some(p) => c = p.target,
                None => return Some(c),
            }
        }
        None
    }

    pub fn is_mapped(&self, cell: CellIndex) -> bool {
        self.pair_of(cell).is_some()
    }

    /// Cells of the agglomerated mesh: phase cells without an outgoing pair.
    pub fn agglomerated_cells(&self) -> Vec<CellIndex> {
        self.universe.iter().copied().filter(|c| !self.is_mapped(*c)).collect()
    }

    /// Root to members (root included) for every group with at least one pair.
    pub fn groups(&self) -> BTreeMap<CellIndex, Vec<CellIndex>> {
        let mut groups: BTreeMap<CellIndex, Vec<CellIndex>> = BTreeMap::new();
        for p in &self.pairs {
            if let Some(root) = self.final_target(p.source) {
                groups.entry(root).or_insert_with(|| vec![root]).push(p.source);
            }
        }
        for members in groups.values_mut() {
            members.sort();
        }
        groups
    }

    pub fn max_level(&self) -> u32 {
        self.pairs.iter().map(|p| p.level).max().unwrap_or(0)
    }

    pub fn canonical(&self) -> CanonicalMap {
        let pairs = self
            .pairs
            .iter()
            .map(|p| (p.source, self.final_target(p.source).unwrap_or(p.target)))
            .collect();
        let mut groups: Vec<CanonicalGroup> =
            self.groups().into_iter().map(|(root, members)| CanonicalGroup { root, members }).collect();
        for r in &self.promoted_roots {
            if !groups.iter().any(|g| g.root == *r) {
                groups.push(CanonicalGroup { root: *r, members: vec![*r] });
            }
        }
        groups.sort_by_key(|g| g.root);
        CanonicalMap { species: self.species, pairs, groups }
    }

    /// Graphviz digraph; edges carry the level.
    pub fn to_dot(&self) -> String {
        let mut s = format!("digraph agg_{} {{\n", self.species);
        for r in &self.promoted_roots {
            s.push_str(&format!("  {} [shape=doublecircle];\n", r.0));
        }
        for p in &self.pairs {
            s.push_str(&format!(
                "  {} -> {} [label=\"{}\", kind=\"{:?}\"];\n",
                p.source.0, p.target.0, p.level, p.kind
            ));
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggMap {
    pub a: SpeciesMap,
    pub b: SpeciesMap,
}

impl AggMap {
    pub fn species(&self, s: Species) -> &SpeciesMap {
        match s {
            Species::A => &self.a,
            Species::B => &self.b,
        }
    }

    pub fn species_mut(&mut self, s: Species) -> &mut SpeciesMap {
        match s {
            Species::A => &mut self.a,
            Species::B => &mut self.b,
        }
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = &AggPair> {
        self.a.pairs.iter().chain(&self.b.pairs)
    }

    pub fn is_empty(&self) -> bool {
        self.a.pairs.is_empty() && self.b.pairs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Known {
    link: Link,
    dist: u32,
    root_fraction: f64,
}

#[derive(Clone, Debug, Default)]
struct RankState {
    sources_in_view: BTreeSet<CellIndex>,
    known: BTreeMap<CellIndex, Known>,
    outgoing: Vec<BoundaryPair>,
    chain: BTreeSet<CellIndex>,
    pairs: BTreeMap<CellIndex, AggPair>,
    roots: BTreeSet<CellIndex>,
}

impl RankState {
    fn record(&mut self, species: Species, pair: AggPair, known: Known) {
        self.chain.remove(&pair.source);
        self.pairs.insert(pair.source, pair);
        self.known.insert(pair.source, known);
        self.outgoing.push(BoundaryPair {
            source: pair.source,
            species,
            link: known.link,
            dist: known.dist,
            root_fraction: known.root_fraction,
        });
    }

    fn mapped_count(&self) -> u64 {
        (self.pairs.len() + self.roots.len()) as u64
    }
}

struct SpeciesCtx {
    grid: CartesianGrid,
    species: Species,
    frac: Vec<f64>,
    in_universe: Vec<bool>,
}

impl SpeciesCtx {
    fn neighbors(&self, c: CellIndex) -> impl Iterator<Item = CellIndex> + '_ {
        self.grid.neighbors_unchecked(c).filter(|n| self.in_universe[n.0])
    }
}

/// Distributed construction state of one species' forest.
pub struct ForestState {
    ctx: SpeciesCtx,
    sources: SourceSets,
    universe: BTreeSet<CellIndex>,
    ranks: Vec<RankState>,
}

impl ForestState {
    pub fn new(mesh_next: &CutCellMesh, species: Species, universe: BTreeSet<CellIndex>, sources: SourceSets, ranks: usize) -> Self {
        let grid = mesh_next.grid().clone();
        let mut in_universe = vec![false; grid.num_cells()];
        for c in &universe {
            in_universe[c.0] = true;
        }
        ForestState {
            ctx: SpeciesCtx { grid, species, frac: mesh_next.fractions(species).to_vec(), in_universe },
            sources,
            universe,
            ranks: vec![RankState::default(); ranks],
        }
    }

    /// Alg. 1 tail: every rank learns the source status of its ghost cells.
    pub fn exchange_sources(&mut self, network: &mut RankNetwork) -> Result<()> {
        let part = network.partition();
        let owned: Vec<BTreeSet<CellIndex>> = (0..part.rank_count())
            .map(|r| self.sources.all.iter().copied().filter(|c| part.is_owned(r, *c)).collect())
            .collect();
        let views = exchange_ghost_flags(network, &owned)?;
        for (state, view) in self.ranks.iter_mut().zip(views) {
            state.sources_in_view = view;
        }
        Ok(())
    }

    /// Alg. 2 on every rank.
    pub fn direct(&mut self, network: &RankNetwork) {
        let ctx = &self.ctx;
        let part = network.partition();
        network.for_each_rank(&mut self.ranks, |rank, state| {
            let owned: Vec<CellIndex> =
                state.sources_in_view.iter().copied().filter(|c| part.is_owned(rank, *c)).collect();
            for c in owned {
                let best = ctx
                    .neighbors(c)
                    .filter(|n| !state.sources_in_view.contains(n))
                    .max_by(|a, b| ctx.frac[a.0].total_cmp(&ctx.frac[b.0]).then(b.cmp(a)));
                match best {
                    Some(t) => {
                        let pair = AggPair { source: c, target: t, species: ctx.species, level: 0, kind: PairKind::Direct };
                        let known = Known { link: Link::Target(t), dist: 1, root_fraction: ctx.frac[t.0] };
                        state.record(ctx.species, pair, known);
                    }
                    None => {
                        state.chain.insert(c);
                    }
                }
            }
        });
    }

    fn chain_round(&mut self, network: &mut RankNetwork, kind: PairKind) -> Result<bool> {
        let outgoing: Vec<Vec<BoundaryPair>> = self.ranks.iter_mut().map(|s| std::mem::take(&mut s.outgoing)).collect();
        let received = exchange_boundary_pairs(network, &outgoing)?;
        for (state, inbox) in self.ranks.iter_mut().zip(received) {
            for p in inbox {
                state.known.insert(p.source, Known { link: p.link, dist: p.dist, root_fraction: p.root_fraction });
            }
        }
        let ctx = &self.ctx;
        let formed = network.for_each_rank(&mut self.ranks, |_, state| {
            let mut new = Vec::new();
            for &c in &state.chain {
                let best = ctx
                    .neighbors(c)
                    .filter_map(|n| state.known.get(&n).map(|k| (n, *k)))
                    .min_by(|(na, a), (nb, b)| {
                        a.dist.cmp(&b.dist).then(b.root_fraction.total_cmp(&a.root_fraction)).then(na.cmp(nb))
                    });
                if let Some((n, k)) = best {
                    let target = match k.link {
                        Link::Target(t) => t,
                        Link::Root | Link::Hidden => n,
                    };
                    let pair = AggPair { source: c, target, species: ctx.species, level: 0, kind };
                    new.push((pair, Known { link: Link::Target(target), dist: k.dist + 1, root_fraction: k.root_fraction }));
                }
            }
            let count = new.len();
            for (pair, known) in new {
                state.record(ctx.species, pair, known);
            }
            count > 0
        });
        Ok(network.any("chain-changed", formed))
    }

    /// Alg. 3: rounds until no rank forms a new pair. Returns the round count.
    pub fn chain(&mut self, network: &mut RankNetwork) -> Result<usize> {
        self.chain_with_kind(network, PairKind::Chain)
    }

    fn chain_with_kind(&mut self, network: &mut RankNetwork, kind: PairKind) -> Result<usize> {
        let limit = self.universe.len() + network.rank_count() + 2;
        run_rounds_to_fixpoint(
            network,
            self,
            |s| s.ranks.iter().map(RankState::mapped_count).sum(),
            |net, s| s.chain_round(net, kind),
            limit,
        )
    }

    /// Alg. 4: isolated islands get their largest admissible cell as root.
    pub fn group(&mut self, network: &mut RankNetwork) -> Result<()> {
        loop {
            let candidates: Vec<Option<(f64, CellIndex)>> = self
                .ranks
                .iter()
                .map(|s| {
                    s.chain
                        .iter()
                        .filter(|c| !self.sources.is_topological(**c))
                        .map(|c| (self.ctx.frac[c.0], *c))
                        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                })
                .collect();
            let Some(root) = global_agree_max(network, &candidates) else { break };
            let owner = network.partition().owner_of(root);
            let ctx = &self.ctx;
            let state = &mut self.ranks[owner];
            let root_fraction = ctx.frac[root.0];
            state.chain.remove(&root);
            state.roots.insert(root);
            state.known.insert(root, Known { link: Link::Root, dist: 0, root_fraction });
            state.outgoing.push(BoundaryPair { source: root, species: ctx.species, link: Link::Root, dist: 0, root_fraction });
            let members: Vec<CellIndex> = ctx.neighbors(root).filter(|n| state.chain.contains(n)).collect();
            for c in members {
                let pair = AggPair { source: c, target: root, species: ctx.species, level: 0, kind: PairKind::Group };
                state.record(ctx.species, pair, Known { link: Link::Target(root), dist: 1, root_fraction });
            }
            self.chain_with_kind(network, PairKind::Group)?;
        }
        let stranded: Vec<CellIndex> = self.ranks.iter().flat_map(|s| s.chain.iter().copied()).collect();
        if !stranded.is_empty() {
            let mut cells = stranded;
            cells.sort();
            return Err(Error::UnresolvableIsland { species: self.ctx.species, cells });
        }
        Ok(())
    }

    /// Unvalidated forest with all levels at zero.
    pub fn into_map(self) -> SpeciesMap {
        let mut pairs: Vec<AggPair> = self.ranks.iter().flat_map(|s| s.pairs.values().copied()).collect();
        pairs.sort_by_key(|p| p.source);
        SpeciesMap {
            species: self.ctx.species,
            pairs,
            promoted_roots: self.ranks.iter().flat_map(|s| s.roots.iter().copied()).collect(),
            sources: self.sources,
            universe: self.universe,
        }
    }

    pub fn chain_list(&self) -> BTreeSet<CellIndex> {
        self.ranks.iter().flat_map(|s| s.chain.iter().copied()).collect()
    }
}

/// Alg. 2 as seen by a single rank: its direct pairs and chain list.
pub fn direct_target_identification(
    mesh: &CutCellMesh,
    species: Species,
    universe: &BTreeSet<CellIndex>,
    sources: &SourceSets,
    partition: &Partition,
    rank: usize,
) -> (Vec<AggPair>, BTreeSet<CellIndex>) {
    let mut state = ForestState::new(mesh, species, universe.clone(), sources.clone(), partition.rank_count());
    for (r, s) in state.ranks.iter_mut().enumerate() {
        s.sources_in_view = sources.all.iter().copied().filter(|c| partition.in_view(r, *c)).collect();
    }
    state.direct(&RankNetwork::new(partition.clone()));
    let s = &state.ranks[rank];
    (s.pairs.values().copied().collect(), s.chain.clone())
}

pub fn chain_formation(state: &mut ForestState, network: &mut RankNetwork) -> Result<usize> {
    state.chain(network)
}

pub fn group_formation(state: &mut ForestState, network: &mut RankNetwork) -> Result<()> {
    state.group(network)
}

/// Alg. 5: a pair sits one level above the highest pair feeding its source.
/// Every rank handles the pairs of its owned sources and forwards level
/// requirements to the owner of remote targets. Returns the round count.
pub fn determine_levels(map: &mut SpeciesMap, network: &mut RankNetwork) -> Result<usize> {
    #[derive(Default)]
    struct LevelState {
        pairs: BTreeMap<CellIndex, AggPair>,
        inbox: Vec<(CellIndex, u32)>,
        sent: BTreeMap<CellIndex, u32>,
        outbox: Vec<(usize, (CellIndex, u32))>,
    }
    let part = network.partition().clone();
    let mut states: Vec<LevelState> = (0..part.rank_count()).map(|_| LevelState::default()).collect();
    for p in &map.pairs {
        let mut p = *p;
        p.level = 0;
        states[part.owner_of(p.source)].pairs.insert(p.source, p);
    }
    let limit = map.pairs.len() + part.rank_count() + 2;
    let rounds = run_rounds_to_fixpoint(
        network,
        &mut states,
        |s| s.iter().flat_map(|r| r.pairs.values().map(|p| p.level as u64)).sum(),
        |net, states| {
            let changed = net.for_each_rank(states, |rank, st| {
                let mut changed = false;
                for (c, lvl) in std::mem::take(&mut st.inbox) {
                    if let Some(p) = st.pairs.get_mut(&c) {
                        if p.level < lvl {
                            p.level = lvl;
                            changed = true;
                        }
                    }
                }
                loop {
                    let mut raised = false;
                    let reqs: Vec<(CellIndex, u32)> = st.pairs.values().map(|p| (p.target, p.level + 1)).collect();
                    for (t, lvl) in reqs {
                        if let Some(q) = st.pairs.get_mut(&t) {
                            if q.level < lvl {
                                q.level = lvl;
                                raised = true;
                            }
                        }
                    }
                    changed |= raised;
                    if !raised {
                        break;
                    }
                }
                for p in st.pairs.values() {
                    if part.is_owned(rank, p.target) {
                        continue;
                    }
                    let need = p.level + 1;
                    if st.sent.get(&p.target).is_none_or(|s| *s < need) {
                        st.sent.insert(p.target, need);
                        st.outbox.push((part.owner_of(p.target), (p.target, need)));
                    }
                }
                changed | !st.outbox.is_empty()
            });
            let outboxes = states.iter_mut().map(|s| std::mem::take(&mut s.outbox)).collect();
            let inboxes = net.exchange("levels", outboxes, |(c, _)| vec![*c])?;
            for (st, inbox) in states.iter_mut().zip(inboxes) {
                st.inbox = inbox.into_iter().map(|(_, m)| m).collect();
            }
            Ok(net.any("levels-changed", changed))
        },
        limit,
    )?;
    let mut pairs: Vec<AggPair> = states.into_iter().flat_map(|s| s.pairs.into_values()).collect();
    pairs.sort_by_key(|p| p.source);
    map.pairs = pairs;
    Ok(rounds)
}

/// Full pipeline for one species.
pub fn build_species_map(
    prev: &CutCellMesh,
    next: &CutCellMesh,
    alpha: f64,
    mode: TimeMode,
    species: Species,
    network: &mut RankNetwork,
) -> Result<SpeciesMap> {
    let sources = identify_sources(prev, next, alpha, mode, species)?;
    let prev_eff = if mode == TimeMode::Static { next } else { prev };
    let universe = phase_universe(prev_eff, next, mode, species);
    let mut state = ForestState::new(next, species, universe, sources, network.rank_count());
    state.exchange_sources(network)?;
    state.direct(network);
    state.chain(network)?;
    state.group(network)?;
    let mut map = state.into_map();
    determine_levels(&mut map, network)?;
    let violations = validate_map(&map, next, network.partition());
    if let Some(v) = violations.first() {
        return Err(Error::InvalidMap(format!("{v} ({} violations)", violations.len())));
    }
    Ok(map)
}

pub fn build_agglomeration(
    prev: &CutCellMesh,
    next: &CutCellMesh,
    alpha: f64,
    mode: TimeMode,
    network: &mut RankNetwork,
) -> Result<AggMap> {
    check_inputs(prev, next, alpha)?;
    Ok(AggMap {
        a: build_species_map(prev, next, alpha, mode, Species::A, network)?,
        b: build_species_map(prev, next, alpha, mode, Species::B, network)?,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Cycle(CellIndex),
    SelfPair(CellIndex),
    DuplicateSource(CellIndex),
    UnmappedSource(CellIndex),
    NonSourceMapped(CellIndex),
    RootIsSource(CellIndex),
    IneligibleRoot(CellIndex),
    NotPhaseCell(CellIndex),
    DirectNotAdjacent { source: CellIndex, target: CellIndex },
    DirectNotRoot { source: CellIndex, target: CellIndex },
    Level { source: CellIndex, found: u32, expected: u32 },
    TargetOutOfView { source: CellIndex, target: CellIndex },
    SpeciesMismatch(CellIndex),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(c) => write!(f, "cycle through cell {c}"),
            Violation::SelfPair(c) => write!(f, "cell {c} maps to itself"),
            Violation::DuplicateSource(c) => write!(f, "cell {c} is mapped more than once"),
            Violation::UnmappedSource(c) => write!(f, "source {c} has no target"),
            Violation::NonSourceMapped(c) => write!(f, "non-source {c} is mapped"),
            Violation::RootIsSource(c) => write!(f, "root {c} is a source"),
            Violation::IneligibleRoot(c) => write!(f, "root {c} is newborn or vanishing"),
            Violation::NotPhaseCell(c) => write!(f, "cell {c} is not a phase cell of the species"),
            Violation::DirectNotAdjacent { source, target } => {
                write!(f, "direct pair {source} -> {target} does not share a face")
            }
            Violation::DirectNotRoot { source, target } => write!(f, "direct pair {source} -> {target} ends at a source"),
            Violation::Level { source, found, expected } => {
                write!(f, "pair from {source} has level {found}, expected {expected}")
            }
            Violation::TargetOutOfView { source, target } => {
                write!(f, "target {target} is not visible on the rank owning {source}")
            }
            Violation::SpeciesMismatch(c) => write!(f, "pair from {c} carries the wrong species"),
        }
    }
}

/// Levels implied by the pair structure alone.
pub fn reference_levels(pairs: &[AggPair]) -> BTreeMap<CellIndex, u32> {
    let by_source: BTreeMap<CellIndex, &AggPair> = pairs.iter().map(|p| (p.source, p)).collect();
    let mut incoming: BTreeMap<CellIndex, Vec<CellIndex>> = BTreeMap::new();
    for p in pairs {
        incoming.entry(p.target).or_default().push(p.source);
    }
    let mut memo: BTreeMap<CellIndex, u32> = BTreeMap::new();
    fn level(
        c: CellIndex,
        incoming: &BTreeMap<CellIndex, Vec<CellIndex>>,
        memo: &mut BTreeMap<CellIndex, u32>,
        depth: usize,
    ) -> u32 {
        if let Some(l) = memo.get(&c) {
            return *l;
        }
        if depth > incoming.len() + 1 {
            return 0;
        }
        let l = incoming
            .get(&c)
            .map(|srcs| srcs.iter().map(|s| level(*s, incoming, memo, depth + 1) + 1).max().unwrap_or(0))
            .unwrap_or(0);
        memo.insert(c, l);
        l
    }
    by_source.keys().map(|c| (*c, level(*c, &incoming, &mut memo, 0))).collect()
}

pub fn validate_map(map: &SpeciesMap, mesh: &CutCellMesh, partition: &Partition) -> Vec<Violation> {
    let grid = mesh.grid();
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &map.pairs {
        if !seen.insert(p.source) {
            out.push(Violation::DuplicateSource(p.source));
        }
        if p.source == p.target {
            out.push(Violation::SelfPair(p.source));
        }
        if p.species != map.species {
            out.push(Violation::SpeciesMismatch(p.source));
        }
        for c in [p.source, p.target] {
            if !map.universe.contains(&c) {
                out.push(Violation::NotPhaseCell(c));
            }
        }
        if !map.sources.contains(p.source) {
            out.push(Violation::NonSourceMapped(p.source));
        }
        if !partition.in_view(partition.owner_of(p.source), p.target) {
            out.push(Violation::TargetOutOfView { source: p.source, target: p.target });
        }
    }
    if !out.is_empty() {
        return out;
    }
    for s in &map.sources.all {
        if !map.is_mapped(*s) && !map.promoted_roots.contains(s) {
            out.push(Violation::UnmappedSource(*s));
        }
    }
    let mut roots = BTreeSet::new();
    for p in &map.pairs {
        match map.final_target(p.source) {
            None => out.push(Violation::Cycle(p.source)),
            Some(root) => {
                roots.insert(root);
            }
        }
    }
    if out.iter().any(|v| matches!(v, Violation::Cycle(_))) {
        return out;
    }
    for r in roots.iter().chain(&map.promoted_roots) {
        if map.sources.contains(*r) && !map.promoted_roots.contains(r) {
            out.push(Violation::RootIsSource(*r));
        }
        if map.sources.is_topological(*r) {
            out.push(Violation::IneligibleRoot(*r));
        }
    }
    for p in map.pairs.iter().filter(|p| p.kind == PairKind::Direct) {
        if !grid.are_face_neighbors(p.source, p.target) {
            out.push(Violation::DirectNotAdjacent { source: p.source, target: p.target });
        }
        if map.is_mapped(p.target) || map.sources.contains(p.target) {
            out.push(Violation::DirectNotRoot { source: p.source, target: p.target });
        }
    }
    let expected = reference_levels(&map.pairs);
    for p in &map.pairs {
        let e = expected[&p.source];
        if p.level != e {
            out.push(Violation::Level { source: p.source, found: p.level, expected: e });
        }
    }
    out
}
