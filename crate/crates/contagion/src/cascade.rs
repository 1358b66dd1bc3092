//! The default cascade, two ways.
//!
//! [`run_discrete`] iterates rounds: every institution whose defaulted
//! debtor count (with multi-edge multiplicity) reaches its threshold
//! defaults, until a fixed point. It returns the smallest fixed-point
//! default set.
//!
//! [`run_death_process`] replays the same cascade as an event stream. Out
//! half-edges of defaulted institutions are *white* until processed; each
//! event kills the in half-edge matched to the previously recolored white
//! ball, possibly triggering a default (which whitens that node's out
//! half-edges), then recolors the next uniformly chosen white ball. The
//! process stops when a recolor finds no white ball, recording `W = -1`.
//! In exponential mode events carry time stamps accumulated from
//! exponential waits with rate equal to the remaining alive in-ball
//! count, aligning the trajectory with the analytic `z = e^{-t}` clock.
//! Because every in half-edge dies via its unique matched out half-edge,
//! the final default set is the same for every seed and equals the
//! discrete fixed point.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::model::{NetworkSpec, Threshold};
use crate::netgen::RealizedNetwork;
use crate::seed::{self, tag};

/// Dense per-(class, threshold-atom, defaulted-debtor-count) tables.
///
/// Atom index `t` in `0..=d` is threshold `t`; atom `d + 1` is immune.
#[derive(Debug, Clone)]
pub struct CellTable {
    /// counts[class][atom][ell]
    counts: Vec<Vec<Vec<u64>>>,
}

impl CellTable {
    fn new(spec_dims: &[(u32, u32)]) -> Self {
        CellTable {
            counts: spec_dims
                .iter()
                .map(|&(d_in, _)| vec![vec![0u64; d_in as usize + 1]; d_in as usize + 2])
                .collect(),
        }
    }

    fn atom(theta: Threshold, d: usize) -> usize {
        match theta {
            Threshold::Finite(t) => t as usize,
            Threshold::Immune => d + 1,
        }
    }

    pub fn get(&self, class: usize, theta: Threshold, ell: u32) -> u64 {
        let d = self.counts[class][0].len() - 1;
        self.counts[class][Self::atom(theta, d)][ell as usize]
    }

    fn add(&mut self, class: usize, theta: Threshold, ell: u32, delta: i64) {
        let d = self.counts[class][0].len() - 1;
        let c = &mut self.counts[class][Self::atom(theta, d)][ell as usize];
        *c = c.wrapping_add(delta as u64);
    }

    /// Iterates `(class, theta, ell, count)` over nonzero cells.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Threshold, u32, u64)> + '_ {
        self.counts.iter().enumerate().flat_map(|(x, per_atom)| {
            let d = per_atom[0].len() - 1;
            per_atom.iter().enumerate().flat_map(move |(a, row)| {
                let theta = if a == d + 1 {
                    Threshold::Immune
                } else {
                    Threshold::Finite(a as u32)
                };
                row.iter().enumerate().filter_map(move |(ell, &c)| {
                    (c > 0).then_some((x, theta, ell as u32, c))
                })
            })
        })
    }

    pub fn total(&self) -> u64 {
        self.counts
            .iter()
            .flat_map(|p| p.iter())
            .flat_map(|r| r.iter())
            .sum()
    }
}

/// Result of the round-based cascade.
#[derive(Debug, Clone)]
pub struct CascadeResult {
    /// Final default indicator per node.
    pub defaulted: Vec<bool>,
    /// Newly defaulted nodes per round; `rounds[0]` is the initial set.
    pub rounds: Vec<Vec<u32>>,
    /// First round index at which the default set repeats (cascade length).
    pub round_count: usize,
    /// Defaulted debtor count per node (multiplicity included).
    pub hits: Vec<u32>,
    /// Solvent institutions by (class, threshold, defaulted debtors).
    pub solvent_cells: CellTable,
    /// Defaulted institutions by (class, threshold); `ell` slot 0 is used.
    pub defaulted_by_class_theta: CellTable,
}

impl CascadeResult {
    pub fn default_count(&self) -> u64 {
        self.defaulted.iter().filter(|&&b| b).count() as u64
    }

    /// Cumulative default sets `D_0 ⊆ D_1 ⊆ ...` as sorted node lists.
    pub fn cumulative_rounds(&self) -> Vec<Vec<u32>> {
        let mut acc = Vec::new();
        let mut cur: Vec<u32> = Vec::new();
        for r in &self.rounds {
            cur.extend_from_slice(r);
            let mut sorted = cur.clone();
            sorted.sort_unstable();
            acc.push(sorted);
        }
        acc
    }
}

fn spec_dims(spec: &NetworkSpec) -> Vec<(u32, u32)> {
    spec.classes.iter().map(|c| (c.d_in, c.d_out)).collect()
}

fn out_adjacency(net: &RealizedNetwork) -> (Vec<u32>, Vec<u32>) {
    let n = net.n();
    let mut offsets = vec![0u32; n + 1];
    for &(s, _) in &net.edges {
        offsets[s as usize + 1] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut targets = vec![0u32; net.edges.len()];
    let mut cursor = offsets.clone();
    for &(s, d) in &net.edges {
        targets[cursor[s as usize] as usize] = d;
        cursor[s as usize] += 1;
    }
    (offsets, targets)
}

/// Runs the cascade round by round to its smallest fixed point.
pub fn run_discrete(net: &RealizedNetwork, spec: &NetworkSpec) -> CascadeResult {
    let n = net.n();
    let (offsets, targets) = out_adjacency(net);
    let mut defaulted = vec![false; n];
    let mut hits = vec![0u32; n];
    let mut rounds: Vec<Vec<u32>> = Vec::new();

    let initial: Vec<u32> = (0..n)
        .filter(|&i| net.pop.theta[i] == Threshold::Finite(0))
        .map(|i| i as u32)
        .collect();
    for &i in &initial {
        defaulted[i as usize] = true;
    }
    rounds.push(initial);

    let mut round_count = 1;
    loop {
        let frontier = rounds.last().unwrap();
        if rounds.len() > 1 && frontier.is_empty() {
            break;
        }
        let mut touched: Vec<u32> = Vec::new();
        for &i in frontier {
            for k in offsets[i as usize]..offsets[i as usize + 1] {
                let dst = targets[k as usize];
                hits[dst as usize] += 1;
                touched.push(dst);
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let newly: Vec<u32> = touched
            .into_iter()
            .filter(|&i| {
                !defaulted[i as usize]
                    && match net.pop.theta[i as usize] {
                        Threshold::Finite(t) => hits[i as usize] >= t,
                        Threshold::Immune => false,
                    }
            })
            .collect();
        for &i in &newly {
            defaulted[i as usize] = true;
        }
        let done = newly.is_empty();
        rounds.push(newly);
        if done {
            break;
        }
        round_count += 1;
    }
    // drop the terminal empty increment; round_count already reflects it
    if rounds.len() > 1 && rounds.last().unwrap().is_empty() {
        rounds.pop();
    }

    let (solvent_cells, defaulted_by_class_theta) = tally_cells(net, spec, &defaulted, &hits);
    CascadeResult {
        defaulted,
        rounds,
        round_count,
        hits,
        solvent_cells,
        defaulted_by_class_theta,
    }
}

fn tally_cells(
    net: &RealizedNetwork,
    spec: &NetworkSpec,
    defaulted: &[bool],
    hits: &[u32],
) -> (CellTable, CellTable) {
    let dims = spec_dims(spec);
    let mut solvent = CellTable::new(&dims);
    let mut dflt = CellTable::new(&dims);
    for i in 0..net.n() {
        let x = net.pop.class_of[i] as usize;
        let theta = net.pop.theta[i];
        if defaulted[i] {
            dflt.add(x, theta, 0, 1);
        } else {
            // hit counts on percolated graphs can exceed the class degree
            // table only if wiring was tampered with; clamp defensively
            let ell = hits[i].min(spec.classes[x].d_in);
            solvent.add(x, theta, ell, 1);
        }
    }
    (solvent, dflt)
}

/// Time stamping for the event stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMode {
    /// Accumulate exponential waits at the alive-in-ball rate.
    Exponential,
    /// Time stamp = event index.
    Sequential,
}

/// One recorded event of the death process.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryEvent {
    pub index: u32,
    pub time: f64,
    /// White out-ball count after the event (`-1` at the stopping event).
    pub white: i64,
    pub solvent: u64,
    pub defaulted: u64,
    pub healthy_in: u64,
    pub infected_in: u64,
    /// Node whose in-ball was killed this event (none at the bootstrap).
    pub killed: Option<u32>,
}

/// Event-indexed path of the death process.
#[derive(Debug, Clone)]
pub struct CascadeTrajectory {
    pub events: Vec<TrajectoryEvent>,
    /// Index of the stopping event (where `white = -1`).
    pub tau_star: u32,
    pub defaulted: Vec<bool>,
    pub hits: Vec<u32>,
    pub solvent_cells: CellTable,
    pub defaulted_by_class_theta: CellTable,
}

impl CascadeTrajectory {
    pub fn default_count(&self) -> u64 {
        self.defaulted.iter().filter(|&&b| b).count() as u64
    }

    /// State at continuous time `t` (last event with stamp `<= t`).
    pub fn state_at(&self, t: f64) -> &TrajectoryEvent {
        let mut last = &self.events[0];
        for e in &self.events {
            if e.time <= t {
                last = e;
            } else {
                break;
            }
        }
        last
    }

    /// CSV with one row per event: `event,time,W,S,D,Hplus,Iplus`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("event,time,W,S,D,Hplus,Iplus\n");
        for e in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.index,
                crate::cli::fmt_f64(e.time),
                e.white,
                e.solvent,
                e.defaulted,
                e.healthy_in,
                e.infected_in
            )
            .unwrap();
        }
        out
    }
}

/// Runs the death process; see the module docs for the event loop.
pub fn run_death_process(
    net: &RealizedNetwork,
    spec: &NetworkSpec,
    seed: u64,
    time_mode: TimeMode,
) -> CascadeTrajectory {
    let n = net.n();
    let mut rng = seed::rng(seed::derive(seed, tag::CLOCK));
    let (offsets, _) = out_adjacency(net);
    // out-edges of node i are edge indices out_order[offsets[i]..offsets[i+1]]
    let mut out_order = vec![0u32; net.edges.len()];
    {
        let mut cursor: Vec<u32> = offsets[..n].to_vec();
        for (k, &(s, _)) in net.edges.iter().enumerate() {
            out_order[cursor[s as usize] as usize] = k as u32;
            cursor[s as usize] += 1;
        }
    }

    let mut defaulted = vec![false; n];
    let mut hits = vec![0u32; n];
    let mut alive: u64 = net.pop.d_in.iter().map(|&d| d as u64).sum();
    let mut solvent_count = 0u64;
    let mut healthy_in = 0u64;
    let mut infected_in = 0u64;
    let mut white: Vec<u32> = Vec::new();

    for i in 0..n {
        if net.pop.theta[i] == Threshold::Finite(0) {
            defaulted[i] = true;
            infected_in += net.pop.d_in[i] as u64;
            for k in offsets[i]..offsets[i + 1] {
                white.push(out_order[k as usize]);
            }
        } else {
            solvent_count += 1;
            healthy_in += net.pop.d_in[i] as u64;
        }
    }

    let mut events = Vec::new();
    let mut time = 0.0f64;
    let record = |idx: u32,
                      time: f64,
                      white_count: i64,
                      solvent: u64,
                      healthy: u64,
                      infected: u64,
                      killed: Option<u32>,
                      events: &mut Vec<TrajectoryEvent>| {
        events.push(TrajectoryEvent {
            index: idx,
            time,
            white: white_count,
            solvent,
            defaulted: n as u64 - solvent,
            healthy_in: healthy,
            infected_in: infected,
            killed,
        });
    };

    // bootstrap: recolor one white ball before the first kill
    if white.is_empty() {
        record(0, 0.0, -1, solvent_count, healthy_in, infected_in, None, &mut events);
        let (solvent_cells, defaulted_by_class_theta) = tally_cells(net, spec, &defaulted, &hits);
        return CascadeTrajectory {
            events,
            tau_star: 0,
            defaulted,
            hits,
            solvent_cells,
            defaulted_by_class_theta,
        };
    }
    let pick = rng.gen_range(0..white.len());
    let mut designated = Some(white.swap_remove(pick));
    record(
        0,
        0.0,
        white.len() as i64,
        solvent_count,
        healthy_in,
        infected_in,
        None,
        &mut events,
    );

    let mut index = 0u32;
    loop {
        index += 1;
        match time_mode {
            TimeMode::Exponential => {
                let wait = Exp::new(alive as f64).unwrap().sample(&mut rng);
                time += wait;
            }
            TimeMode::Sequential => time = index as f64,
        }
        // kill the in-ball matched to the designated red out-ball
        let edge = designated.take().unwrap() as usize;
        let dst = net.edges[edge].1 as usize;
        alive -= 1;
        hits[dst] += 1;
        if defaulted[dst] {
            infected_in -= 1;
        } else {
            healthy_in -= 1;
            if let Threshold::Finite(t) = net.pop.theta[dst] {
                if hits[dst] >= t {
                    defaulted[dst] = true;
                    solvent_count -= 1;
                    let remaining = (net.pop.d_in[dst] - hits[dst]) as u64;
                    healthy_in -= remaining;
                    infected_in += remaining;
                    for k in offsets[dst]..offsets[dst + 1] {
                        white.push(out_order[k as usize]);
                    }
                }
            }
        }
        // recolor the next white ball, or stop
        if white.is_empty() {
            record(index, time, -1, solvent_count, healthy_in, infected_in, Some(dst as u32), &mut events);
            break;
        }
        let pick = rng.gen_range(0..white.len());
        designated = Some(white.swap_remove(pick));
        record(
            index,
            time,
            white.len() as i64,
            solvent_count,
            healthy_in,
            infected_in,
            Some(dst as u32),
            &mut events,
        );
    }

    let (solvent_cells, defaulted_by_class_theta) = tally_cells(net, spec, &defaulted, &hits);
    CascadeTrajectory {
        events,
        tau_star: index,
        defaulted,
        hits,
        solvent_cells,
        defaulted_by_class_theta,
    }
}

/// Long-format per-cell CSV (`event,class,theta,ell,count`) built by
/// replaying the event stream; rows are emitted for cells that changed.
pub fn cells_csv(net: &RealizedNetwork, spec: &NetworkSpec, traj: &CascadeTrajectory) -> String {
    use std::fmt::Write;
    let mut out = String::from("event,class,theta,ell,count\n");
    let dims = spec_dims(spec);
    let mut cells = CellTable::new(&dims);
    let mut hits = vec![0u32; net.n()];
    let mut defaulted = vec![false; net.n()];
    for i in 0..net.n() {
        if net.pop.theta[i] == Threshold::Finite(0) {
            defaulted[i] = true;
        } else {
            cells.add(net.pop.class_of[i] as usize, net.pop.theta[i], 0, 1);
        }
    }
    let emit = |event: u32, x: usize, theta: Threshold, ell: u32, cells: &CellTable, out: &mut String| {
        writeln!(
            out,
            "{},{},{},{},{}",
            event,
            spec.classes[x].id,
            theta,
            ell,
            cells.get(x, theta, ell)
        )
        .unwrap();
    };
    for (x, theta, ell, _) in cells.iter() {
        emit(0, x, theta, ell, &cells, &mut out);
    }
    for e in &traj.events {
        let Some(dst) = e.killed else { continue };
        let i = dst as usize;
        if defaulted[i] {
            continue;
        }
        let x = net.pop.class_of[i] as usize;
        let theta = net.pop.theta[i];
        let ell = hits[i];
        hits[i] += 1;
        match theta {
            Threshold::Finite(t) if hits[i] >= t => {
                defaulted[i] = true;
                cells.add(x, theta, ell, -1);
                emit(e.index, x, theta, ell, &cells, &mut out);
            }
            _ => {
                cells.add(x, theta, ell, -1);
                cells.add(x, theta, ell + 1, 1);
                emit(e.index, x, theta, ell, &cells, &mut out);
                emit(e.index, x, theta, ell + 1, &cells, &mut out);
            }
        }
    }
    out
}

/// Generates, wires and cascades a replication in one call.
pub fn replicate_discrete(
    spec: &NetworkSpec,
    n: usize,
    seed: u64,
) -> Result<(RealizedNetwork, CascadeResult), crate::netgen::NetgenError> {
    let net = crate::netgen::generate(spec, n, seed)?;
    let result = run_discrete(&net, spec);
    Ok((net, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Characteristic, NetworkSpec};
    use crate::netgen::{NodePopulation, RealizedNetwork};

    fn tiny_spec(d: u32) -> NetworkSpec {
        NetworkSpec {
            classes: vec![Characteristic {
                id: "a".into(),
                d_in: d,
                d_out: d,
                weight: 1.0,
                threshold_pmf: {
                    let mut p = vec![0.0; d as usize + 1];
                    p[0] = 1.0;
                    p
                },
                immune_mass: 0.0,
                finite_n: None,
            }],
        }
    }

    fn two_cycle(theta_a: Threshold, theta_b: Threshold) -> (RealizedNetwork, NetworkSpec) {
        let spec = tiny_spec(1);
        let pop = NodePopulation {
            class_of: vec![0, 0],
            d_in: vec![1, 1],
            d_out: vec![1, 1],
            theta: vec![theta_a, theta_b],
            class_count: 1,
        };
        (
            RealizedNetwork {
                pop,
                edges: vec![(0, 1), (1, 0)],
            },
            spec,
        )
    }

    #[test]
    fn two_cycle_cascade() {
        let (net, spec) = two_cycle(Threshold::Finite(0), Threshold::Finite(1));
        let r = run_discrete(&net, &spec);
        assert!(r.defaulted.iter().all(|&b| b));
        assert_eq!(r.round_count, 2);
        assert_eq!(r.cumulative_rounds(), vec![vec![0], vec![0, 1]]);
    }

    #[test]
    fn immunity_stops_spread() {
        let (net, spec) = two_cycle(Threshold::Finite(0), Threshold::Immune);
        let r = run_discrete(&net, &spec);
        assert_eq!(r.defaulted, vec![true, false]);
        assert_eq!(r.solvent_cells.get(0, Threshold::Immune, 1), 1);
    }

    #[test]
    fn no_seed_one_round() {
        let (net, spec) = two_cycle(Threshold::Finite(1), Threshold::Finite(1));
        let r = run_discrete(&net, &spec);
        assert_eq!(r.default_count(), 0);
        assert_eq!(r.round_count, 1);
    }

    #[test]
    fn death_process_two_cycle_matches() {
        let (net, spec) = two_cycle(Threshold::Finite(0), Threshold::Finite(1));
        for seed in 0..5 {
            let t = run_death_process(&net, &spec, seed, TimeMode::Sequential);
            assert!(t.defaulted.iter().all(|&b| b));
            assert_eq!(t.events.last().unwrap().white, -1);
        }
    }

    #[test]
    fn death_process_no_seed_stops_at_zero() {
        let (net, spec) = two_cycle(Threshold::Finite(1), Threshold::Finite(1));
        let t = run_death_process(&net, &spec, 3, TimeMode::Exponential);
        assert_eq!(t.tau_star, 0);
        assert_eq!(t.default_count(), 0);
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.events[0].white, -1);
    }

    #[test]
    fn death_process_conservation() {
        let spec = NetworkSpec {
            classes: vec![Characteristic {
                id: "a".into(),
                d_in: 3,
                d_out: 3,
                weight: 1.0,
                threshold_pmf: vec![0.15, 0.0, 0.35, 0.5],
                immune_mass: 0.0,
                finite_n: None,
            }],
        };
        let net = crate::netgen::generate(&spec, 300, 8).unwrap();
        let t = run_death_process(&net, &spec, 8, TimeMode::Exponential);
        let n = net.n() as u64;
        let total_in: u64 = net.pop.d_in.iter().map(|&d| d as u64).sum();
        let mut prev_alive = total_in;
        let mut prev_white = t.events[0].white;
        let mut prev_defaults = t.events[0].defaulted;
        for (k, e) in t.events.iter().enumerate() {
            assert_eq!(e.solvent + e.defaulted, n);
            let alive = e.healthy_in + e.infected_in;
            if k > 0 {
                assert_eq!(alive, prev_alive - 1);
                // white changes by (new defaulted out-balls - 1)
                let new_defaults = e.defaulted - prev_defaults;
                assert_eq!(e.white, prev_white + 3 * new_defaults as i64 - 1);
                prev_defaults = e.defaulted;
                prev_white = e.white;
            }
            prev_alive = alive;
        }
        // cell conservation at the final state
        assert_eq!(t.solvent_cells.total() + t.default_count(), n);
    }

    #[test]
    fn engines_agree_and_seed_invariance() {
        let spec = NetworkSpec {
            classes: vec![Characteristic {
                id: "a".into(),
                d_in: 2,
                d_out: 2,
                weight: 1.0,
                threshold_pmf: vec![0.2, 0.5, 0.3],
                immune_mass: 0.0,
                finite_n: None,
            }],
        };
        for inst in 0..20 {
            let net = crate::netgen::generate(&spec, 80, inst).unwrap();
            let d = run_discrete(&net, &spec);
            for seed in [1u64, 7, 2024] {
                let t = run_death_process(&net, &spec, seed, TimeMode::Sequential);
                assert_eq!(t.defaulted, d.defaulted, "instance {inst} seed {seed}");
                assert_eq!(t.hits, d.hits);
            }
        }
    }

    #[test]
    fn trajectory_time_is_monotone() {
        let spec = tiny_spec(2);
        let mut spec = spec;
        spec.classes[0].threshold_pmf = vec![0.3, 0.3, 0.4];
        let net = crate::netgen::generate(&spec, 100, 2).unwrap();
        let t = run_death_process(&net, &spec, 5, TimeMode::Exponential);
        for w in t.events.windows(2) {
            assert!(w[1].time > w[0].time);
        }
        let t2 = run_death_process(&net, &spec, 5, TimeMode::Sequential);
        for (k, e) in t2.events.iter().enumerate() {
            assert_eq!(e.time, k as f64);
        }
    }
}
