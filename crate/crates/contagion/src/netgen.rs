//! Finite populations and configuration-model wiring.
//!
//! [`sample_nodes`] draws classes i.i.d. from the spec weights and
//! thresholds i.i.d. from each class distribution, then repairs the
//! population until total in- and out-degree agree. [`wire_configuration`]
//! matches out half-edges to in half-edges by a uniform random
//! permutation, producing a directed multigraph (self-loops and parallel
//! edges stay).

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::model::{NetworkSpec, Threshold};
use crate::seed::{self, tag};

/// A sampled node population: per-node class, degrees and threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePopulation {
    pub class_of: Vec<u32>,
    pub d_in: Vec<u32>,
    pub d_out: Vec<u32>,
    pub theta: Vec<Threshold>,
    pub class_count: usize,
}

impl NodePopulation {
    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn total_in(&self) -> u64 {
        self.d_in.iter().map(|&d| d as u64).sum()
    }

    pub fn total_out(&self) -> u64 {
        self.d_out.iter().map(|&d| d as u64).sum()
    }
}

/// A wired multigraph: population plus directed edges `(src, dst)`.
///
/// Edge `k` pairs the `k`-th out half-edge with a uniformly matched in
/// half-edge; node degrees always equal the population's declared degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedNetwork {
    pub pop: NodePopulation,
    pub edges: Vec<(u32, u32)>,
}

#[derive(Debug, Error)]
pub enum NetgenError {
    #[error("population must have at least one node")]
    EmptyPopulation,
    #[error("in/out half-edge totals differ ({0} vs {1})")]
    TotalMismatch(u64, u64),
    #[error("degree parity repair did not converge within {0} attempts")]
    RepairCapExceeded(u64),
    #[error("bad edge list: {0}")]
    BadEdgeList(String),
}

fn sample_class<R: Rng>(rng: &mut R, cum: &[f64]) -> usize {
    let u: f64 = rng.gen();
    match cum.iter().position(|&c| u < c) {
        Some(i) => i,
        None => cum.len() - 1,
    }
}

fn sample_theta<R: Rng>(rng: &mut R, spec: &NetworkSpec, class: usize) -> Threshold {
    let c = &spec.classes[class];
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in c.threshold_pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return Threshold::Finite(k as u32);
        }
    }
    Threshold::Immune
}

/// Samples `n` nodes from `spec`, deterministic in `seed`.
///
/// After the i.i.d. draw the total in- and out-degrees rarely match; a
/// repair loop redraws the class (and threshold) of one uniformly chosen
/// node at a time, keeping only redraws that strictly shrink the
/// imbalance, until the totals agree. Attempts are capped at `10 n`;
/// exceeding the cap means the class degrees cannot balance (for example
/// when every imbalance step shares a divisor that the initial imbalance
/// does not).
pub fn sample_nodes(spec: &NetworkSpec, n: usize, seed: u64) -> Result<NodePopulation, NetgenError> {
    if n == 0 {
        return Err(NetgenError::EmptyPopulation);
    }
    let mut rng = seed::rng(seed::derive(seed, tag::POPULATION));
    let mut cum = Vec::with_capacity(spec.classes.len());
    let mut acc = 0.0;
    for c in &spec.classes {
        acc += c.weight;
        cum.push(acc);
    }
    let mut class_of = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    let mut imbalance: i64 = 0;
    for _ in 0..n {
        let x = sample_class(&mut rng, &cum);
        class_of.push(x as u32);
        theta.push(sample_theta(&mut rng, spec, x));
        let c = &spec.classes[x];
        imbalance += c.d_in as i64 - c.d_out as i64;
    }
    let cap = 10 * n as u64;
    let mut attempts = 0u64;
    while imbalance != 0 {
        if attempts >= cap {
            return Err(NetgenError::RepairCapExceeded(cap));
        }
        attempts += 1;
        let i = rng.gen_range(0..n);
        let old = &spec.classes[class_of[i] as usize];
        let x = sample_class(&mut rng, &cum);
        let new = &spec.classes[x];
        let step = (new.d_in as i64 - new.d_out as i64) - (old.d_in as i64 - old.d_out as i64);
        if (imbalance + step).abs() < imbalance.abs() {
            class_of[i] = x as u32;
            theta[i] = sample_theta(&mut rng, spec, x);
            imbalance += step;
        }
    }
    let d_in: Vec<u32> = class_of
        .iter()
        .map(|&x| spec.classes[x as usize].d_in)
        .collect();
    let d_out: Vec<u32> = class_of
        .iter()
        .map(|&x| spec.classes[x as usize].d_out)
        .collect();
    Ok(NodePopulation {
        class_of,
        d_in,
        d_out,
        theta,
        class_count: spec.classes.len(),
    })
}

/// Wires the population by a uniform matching of half-edges.
pub fn wire_configuration(pop: &NodePopulation, seed: u64) -> Result<RealizedNetwork, NetgenError> {
    let (t_in, t_out) = (pop.total_in(), pop.total_out());
    if t_in != t_out {
        return Err(NetgenError::TotalMismatch(t_in, t_out));
    }
    let mut rng = seed::rng(seed::derive(seed, tag::WIRING));
    let mut in_stubs = Vec::with_capacity(t_in as usize);
    for (i, &d) in pop.d_in.iter().enumerate() {
        for _ in 0..d {
            in_stubs.push(i as u32);
        }
    }
    in_stubs.shuffle(&mut rng);
    let mut edges = Vec::with_capacity(t_in as usize);
    let mut k = 0;
    for (i, &d) in pop.d_out.iter().enumerate() {
        for _ in 0..d {
            edges.push((i as u32, in_stubs[k]));
            k += 1;
        }
    }
    Ok(RealizedNetwork {
        pop: pop.clone(),
        edges,
    })
}

/// Convenience: sample and wire in one call (independent seed streams).
pub fn generate(spec: &NetworkSpec, n: usize, seed: u64) -> Result<RealizedNetwork, NetgenError> {
    let pop = sample_nodes(spec, n, seed)?;
    wire_configuration(&pop, seed)
}

impl RealizedNetwork {
    pub fn n(&self) -> usize {
        self.pop.len()
    }

    /// Serializes to the edge-list text format: a `<n> <m>` header line,
    /// one `src dst` line per edge, a `table` separator, then one
    /// `idx class_id d_in d_out theta` line per node.
    pub fn to_edge_list(&self, spec: &NetworkSpec) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{} {}", self.n(), self.edges.len()).unwrap();
        for &(s, d) in &self.edges {
            writeln!(out, "{s} {d}").unwrap();
        }
        writeln!(out, "table").unwrap();
        for i in 0..self.n() {
            writeln!(
                out,
                "{} {} {} {} {}",
                i,
                spec.classes[self.pop.class_of[i] as usize].id,
                self.pop.d_in[i],
                self.pop.d_out[i],
                self.pop.theta[i]
            )
            .unwrap();
        }
        out
    }

    /// Parses the format written by [`Self::to_edge_list`].
    pub fn from_edge_list(text: &str, spec: &NetworkSpec) -> Result<Self, NetgenError> {
        let bad = |m: &str| NetgenError::BadEdgeList(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad node count"))?;
        let m: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad edge count"))?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| bad("truncated edge list"))?;
            let mut it = line.split_whitespace();
            let s: u32 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad edge"))?;
            let d: u32 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad edge"))?;
            edges.push((s, d));
        }
        if lines.next() != Some("table") {
            return Err(bad("missing node table"));
        }
        let mut class_of = vec![0u32; n];
        let mut d_in = vec![0u32; n];
        let mut d_out = vec![0u32; n];
        let mut theta = vec![Threshold::Immune; n];
        for _ in 0..n {
            let line = lines.next().ok_or_else(|| bad("truncated node table"))?;
            let mut it = line.split_whitespace();
            let idx: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad node index"))?;
            if idx >= n {
                return Err(bad("node index out of range"));
            }
            let class_id = it.next().ok_or_else(|| bad("missing class id"))?;
            class_of[idx] = spec
                .class_index(class_id)
                .ok_or_else(|| bad(&format!("unknown class '{class_id}'")))?
                as u32;
            d_in[idx] = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad d_in"))?;
            d_out[idx] = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad d_out"))?;
            theta[idx] = match it.next().ok_or_else(|| bad("missing theta"))? {
                "immune" => Threshold::Immune,
                tok => Threshold::Finite(tok.parse().map_err(|_| bad("bad theta"))?),
            };
        }
        Ok(RealizedNetwork {
            pop: NodePopulation {
                class_of,
                d_in,
                d_out,
                theta,
                class_count: spec.classes.len(),
            },
            edges,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Characteristic, NetworkSpec};

    fn symmetric_spec() -> NetworkSpec {
        NetworkSpec {
            classes: vec![Characteristic {
                id: "a".into(),
                d_in: 3,
                d_out: 3,
                weight: 1.0,
                threshold_pmf: vec![0.1, 0.0, 0.0, 0.9],
                immune_mass: 0.0,
                finite_n: None,
            }],
        }
    }

    fn two_class_spec() -> NetworkSpec {
        // imbalance steps of +-1, means matched at mu = (1/2, 1/2)
        NetworkSpec {
            classes: vec![
                Characteristic {
                    id: "lender".into(),
                    d_in: 1,
                    d_out: 2,
                    weight: 0.5,
                    threshold_pmf: vec![0.05, 0.95],
                    immune_mass: 0.0,
                    finite_n: None,
                },
                Characteristic {
                    id: "borrower".into(),
                    d_in: 2,
                    d_out: 1,
                    weight: 0.5,
                    threshold_pmf: vec![0.05, 0.45, 0.5],
                    immune_mass: 0.0,
                    finite_n: None,
                },
            ],
        }
    }

    #[test]
    fn symmetric_class_needs_no_repair() {
        let pop = sample_nodes(&symmetric_spec(), 500, 7).unwrap();
        assert_eq!(pop.total_in(), pop.total_out());
        assert!(pop.theta.iter().all(|t| matches!(
            t,
            Threshold::Finite(0) | Threshold::Finite(3)
        )));
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let spec = two_class_spec();
        let a = sample_nodes(&spec, 1000, 11).unwrap();
        let b = sample_nodes(&spec, 1000, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_nodes(&spec, 1000, 12).unwrap();
        assert_ne!(a, c);

        let net1 = wire_configuration(&a, 99).unwrap();
        let net2 = wire_configuration(&a, 99).unwrap();
        assert_eq!(net1, net2);
    }

    #[test]
    fn class_fractions_concentrate() {
        let spec = two_class_spec();
        let n = 100_000;
        let pop = sample_nodes(&spec, n, 3).unwrap();
        let count0 = pop.class_of.iter().filter(|&&x| x == 0).count() as f64;
        assert!(
            (count0 / n as f64 - 0.5).abs() < 0.01,
            "fraction {}",
            count0 / n as f64
        );
        assert_eq!(pop.total_in(), pop.total_out());
    }

    #[test]
    fn degrees_preserved_by_wiring() {
        let spec = two_class_spec();
        let pop = sample_nodes(&spec, 2000, 5).unwrap();
        let net = wire_configuration(&pop, 5).unwrap();
        assert_eq!(net.edges.len() as u64, pop.total_in());
        let mut din = vec![0u32; pop.len()];
        let mut dout = vec![0u32; pop.len()];
        for &(s, d) in &net.edges {
            dout[s as usize] += 1;
            din[d as usize] += 1;
        }
        assert_eq!(din, pop.d_in);
        assert_eq!(dout, pop.d_out);
    }

    #[test]
    fn zero_degrees_give_empty_edge_list() {
        let spec = NetworkSpec {
            classes: vec![Characteristic {
                id: "iso".into(),
                d_in: 0,
                d_out: 0,
                weight: 1.0,
                threshold_pmf: vec![1.0],
                immune_mass: 0.0,
                finite_n: None,
            }],
        };
        let pop = sample_nodes(&spec, 10, 1).unwrap();
        let net = wire_configuration(&pop, 1).unwrap();
        assert!(net.edges.is_empty());
    }

    #[test]
    fn matching_frequencies_are_uniform() {
        // 3 nodes with one half-edge each: 6 matchings, each ~1/6
        let spec = NetworkSpec {
            classes: vec![Characteristic {
                id: "u".into(),
                d_in: 1,
                d_out: 1,
                weight: 1.0,
                threshold_pmf: vec![0.5, 0.5],
                immune_mass: 0.0,
                finite_n: None,
            }],
        };
        let pop = sample_nodes(&spec, 3, 0).unwrap();
        let trials = 60_000;
        let mut counts = std::collections::HashMap::new();
        for s in 0..trials {
            let net = wire_configuration(&pop, s as u64).unwrap();
            let mut key = [0u32; 3];
            for &(src, dst) in &net.edges {
                key[src as usize] = dst;
            }
            *counts.entry(key).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / trials as f64).sqrt();
        for (&key, &c) in &counts {
            let freq = c as f64 / trials as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "matching {key:?}: freq {freq}"
            );
        }
        // chi-square over the 6 cells, 5 dof: crit value 20.515 at p=0.001
        let expected = trials as f64 / 6.0;
        let chi2: f64 = counts
            .values()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 20.515, "chi2 {chi2}");
    }

    #[test]
    fn edge_list_round_trip() {
        let spec = two_class_spec();
        let net = generate(&spec, 200, 77).unwrap();
        let text = net.to_edge_list(&spec);
        let back = RealizedNetwork::from_edge_list(&text, &spec).unwrap();
        assert_eq!(net, back);
    }
}
