//! In-process logical ranks with bulk-synchronous message exchange.
//!
//! Every rank works on its own state and only learns about other ranks
//! through messages, which are delivered at round boundaries and sorted by
//! sender. Point-to-point messages may only mention cells that both the
//! sender and the receiver hold (owned or ghost).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cutcell::Species;
use crate::error::{Error, Result};
use crate::grid::{CellIndex, Partition};

/// `(0..n).map(f)`, evaluated concurrently when the `parallel` feature is on.
pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub from: usize,
    pub to: usize,
    pub kind: String,
    pub payload: usize,
}

#[derive(Clone, Debug)]
pub struct RankNetwork {
    partition: Partition,
    round: usize,
    schedule_seed: Option<u64>,
    trace: Vec<TraceRecord>,
    tracing: bool,
}

impl RankNetwork {
    pub fn new(partition: Partition) -> Self {
        RankNetwork { partition, round: 0, schedule_seed: None, trace: Vec::new(), tracing: false }
    }

    /// Runs per-rank work sequentially in a seeded random order each round.
    pub fn with_schedule_seed(mut self, seed: u64) -> Self {
        self.schedule_seed = Some(seed);
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.tracing = true;
        self
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn rank_count(&self) -> usize {
        self.partition.rank_count()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Order in which ranks execute their local work this round.
    pub fn schedule(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.rank_count()).collect();
        if let Some(seed) = self.schedule_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.shuffle(&mut rng);
        }
        order
    }

    /// Applies `work` to every rank's state. Each call only touches its own
    /// state, so the result does not depend on the execution order.
    pub fn for_each_rank<S: Send, T: Send>(
        &self,
        states: &mut [S],
        work: impl Fn(usize, &mut S) -> T + Sync + Send,
    ) -> Vec<T> {
        assert_eq!(states.len(), self.rank_count());
        if self.schedule_seed.is_none() {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                return states.par_iter_mut().enumerate().map(|(r, s)| work(r, s)).collect();
            }
        }
        let mut out: Vec<Option<T>> = (0..states.len()).map(|_| None).collect();
        for r in self.schedule() {
            out[r] = Some(work(r, &mut states[r]));
        }
        out.into_iter().map(|o| o.expect("every rank scheduled")).collect()
    }

    /// Delivers point-to-point messages at the end of the current round.
    /// `outboxes[r]` holds `(destination, message)` pairs; the result holds
    /// `(sender, message)` pairs per receiver, sorted by sender.
    pub fn exchange<M>(
        &mut self,
        kind: &str,
        outboxes: Vec<Vec<(usize, M)>>,
        cells_of: impl Fn(&M) -> Vec<CellIndex>,
    ) -> Result<Vec<Vec<(usize, M)>>> {
        let n = self.rank_count();
        assert_eq!(outboxes.len(), n);
        let mut inboxes: Vec<Vec<(usize, M)>> = (0..n).map(|_| Vec::new()).collect();
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (from, outbox) in outboxes.into_iter().enumerate() {
            for (to, msg) in outbox {
                if to == from {
                    continue;
                }
                for cell in cells_of(&msg) {
                    if !(self.partition.in_view(from, cell) && self.partition.in_view(to, cell)) {
                        return Err(Error::LocalityViolation { from, to, cell });
                    }
                }
                *counts.entry((from, to)).or_default() += 1;
                inboxes[to].push((from, msg));
            }
        }
        for inbox in &mut inboxes {
            inbox.sort_by_key(|(from, _)| *from);
        }
        if self.tracing {
            for ((from, to), payload) in counts {
                self.trace.push(TraceRecord { round: self.round, from, to, kind: kind.to_string(), payload });
            }
        }
        self.round += 1;
        Ok(inboxes)
    }

    /// Every rank contributes one value and receives all of them in rank order.
    pub fn all_gather<M: Clone>(&mut self, kind: &str, values: Vec<M>) -> Vec<Vec<M>> {
        let n = self.rank_count();
        assert_eq!(values.len(), n);
        if self.tracing {
            for from in 0..n {
                for to in (0..n).filter(|t| *t != from) {
                    self.trace.push(TraceRecord { round: self.round, from, to, kind: kind.to_string(), payload: 1 });
                }
            }
        }
        self.round += 1;
        (0..n).map(|_| values.clone()).collect()
    }

    /// True on every rank iff some rank reports true.
    pub fn any(&mut self, kind: &str, flags: Vec<bool>) -> bool {
        let views = self.all_gather(kind, flags);
        let verdicts: Vec<bool> = views.iter().map(|v| v.iter().any(|f| *f)).collect();
        debug_assert!(verdicts.windows(2).all(|w| w[0] == w[1]));
        verdicts[0]
    }
}

/// Makes each rank aware of the flags of its ghost cells. `owned_flags[r]`
/// lists the flagged cells owned by `r`; the result lists the flagged cells
/// in each rank's view.
pub fn exchange_ghost_flags(
    network: &mut RankNetwork,
    owned_flags: &[BTreeSet<CellIndex>],
) -> Result<Vec<BTreeSet<CellIndex>>> {
    let n = network.rank_count();
    let part = network.partition().clone();
    let mut outboxes: Vec<Vec<(usize, CellIndex)>> = vec![Vec::new(); n];
    for (r, flags) in owned_flags.iter().enumerate() {
        for &c in flags {
            debug_assert!(part.is_owned(r, c));
            for to in part.ghost_holders(c) {
                outboxes[r].push((to, c));
            }
        }
    }
    let inboxes = network.exchange("ghost-flags", outboxes, |c| vec![*c])?;
    Ok(owned_flags
        .iter()
        .zip(inboxes)
        .map(|(own, inbox)| own.iter().copied().chain(inbox.into_iter().map(|(_, c)| c)).collect())
        .collect())
}

/// Mapping information shared with neighbor ranks. `target` is only filled
/// in when the receiver can see that cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub source: CellIndex,
    pub species: Species,
    pub link: Link,
    /// Pairs to traverse before reaching the final target.
    pub dist: u32,
    /// Volume fraction of the final target.
    pub root_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    /// The source is itself the root of its group.
    Root,
    Target(CellIndex),
    /// Target outside the holder's view.
    Hidden,
}

impl BoundaryPair {
    fn cells(&self) -> Vec<CellIndex> {
        match self.link {
            Link::Target(t) => vec![self.source, t],
            _ => vec![self.source],
        }
    }
}

/// Sends every pair whose source is a ghost cell somewhere to those ranks.
pub fn exchange_boundary_pairs(
    network: &mut RankNetwork,
    new_pairs: &[Vec<BoundaryPair>],
) -> Result<Vec<Vec<BoundaryPair>>> {
    let n = network.rank_count();
    let part = network.partition().clone();
    let mut outboxes: Vec<Vec<(usize, BoundaryPair)>> = vec![Vec::new(); n];
    for (r, pairs) in new_pairs.iter().enumerate() {
        for p in pairs {
            debug_assert!(part.is_owned(r, p.source));
            for to in part.ghost_holders(p.source) {
                let mut msg = p.clone();
                if let Link::Target(t) = msg.link {
                    if !part.in_view(to, t) {
                        msg.link = Link::Hidden;
                    }
                }
                outboxes[r].push((to, msg));
            }
        }
    }
    let inboxes = network.exchange("boundary-pairs", outboxes, BoundaryPair::cells)?;
    Ok(inboxes.into_iter().map(|inbox| inbox.into_iter().map(|(_, p)| p).collect()).collect())
}

/// Agrees on the largest `(fraction, -index)` candidate across ranks.
/// Returns `None` on every rank when no rank has a candidate.
pub fn global_agree_max(network: &mut RankNetwork, candidates: &[Option<(f64, CellIndex)>]) -> Option<CellIndex> {
    let views = network.all_gather("agree-max", candidates.to_vec());
    let mut winners = views.iter().map(|view| {
        view.iter()
            .flatten()
            .copied()
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, c)| c)
    });
    let first = winners.next().flatten();
    debug_assert!(winners.all(|w| w == first));
    first
}

/// Repeats `round_fn` until it reports no change. `measure` must never
/// decrease between rounds.
pub fn run_rounds_to_fixpoint<S>(
    network: &mut RankNetwork,
    state: &mut S,
    measure: impl Fn(&S) -> u64,
    mut round_fn: impl FnMut(&mut RankNetwork, &mut S) -> Result<bool>,
    max_rounds: usize,
) -> Result<usize> {
    for round in 1..=max_rounds {
        let before = measure(state);
        let changed = round_fn(network, state)?;
        let after = measure(state);
        if after < before {
            return Err(Error::NonMonotoneRound { before, after });
        }
        if !changed {
            return Ok(round);
        }
    }
    Err(Error::NoConvergence(max_rounds))
}
