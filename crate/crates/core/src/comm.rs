//! Simulated peer-to-peer transport between robot fragments: radius-based
//! neighbour discovery, envelope delivery, and seeded receive-side message
//! loss.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DVector, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::CanonicalGaussian;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommError {
    #[error("communication radius must be positive, got {0}")]
    Radius(f64),
    #[error("failure fraction must lie in [0, 1], got {0}")]
    Gamma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommConfig {
    pub radius: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl CommConfig {
    pub fn validate(&self) -> Result<(), CommError> {
        if self.radius.is_nan() || self.radius <= 0.0 {
            return Err(CommError::Radius(self.radius));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(CommError::Gamma(self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeAddr {
    pub robot: u32,
    pub node: usize,
}

/// One GBP message on the wire, together with the sender's mean of the
/// variable it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub payload: CanonicalGaussian,
    pub sender_mean: DVector<f64>,
    pub tick: u64,
    pub sweep: u32,
}

pub type NeighborMap = BTreeMap<u32, BTreeSet<u32>>;
pub type DropSets = BTreeMap<u32, BTreeSet<u32>>;

/// Robots strictly closer than `radius` to each other. Every robot gets an
/// entry, possibly empty.
pub fn neighbors(positions: &BTreeMap<u32, Vector2<f64>>, radius: f64) -> NeighborMap {
    let mut out: NeighborMap = positions.keys().map(|id| (*id, BTreeSet::new())).collect();
    let items: Vec<(u32, Vector2<f64>)> = positions.iter().map(|(k, v)| (*k, *v)).collect();
    for (i, (a, pa)) in items.iter().enumerate() {
        for (b, pb) in &items[i + 1..] {
            if (pa - pb).norm() < radius {
                out.get_mut(a).expect("entry exists").insert(*b);
                out.get_mut(b).expect("entry exists").insert(*a);
            }
        }
    }
    out
}

/// Seed for the drop sample of `receiver` at `tick`; depends on nothing else.
fn failure_seed(seed: u64, tick: u64, receiver: u32) -> u64 {
    // splitmix64 finalizer over a simple combination of the three keys
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tick.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add((receiver as u64).wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `round(gamma · |connected|)` peers whose messages `receiver` misses
/// during `tick`.
pub fn sample_failures(receiver: u32, connected: &BTreeSet<u32>, gamma: f64, seed: u64, tick: u64) -> BTreeSet<u32> {
    let n = connected.len();
    let count = ((gamma * n as f64) + 0.5).floor() as usize;
    let count = count.min(n);
    if count == 0 {
        return BTreeSet::new();
    }
    if count == n {
        return connected.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(failure_seed(seed, tick, receiver));
    let pool: Vec<u32> = connected.iter().copied().collect();
    sample(&mut rng, n, count).into_iter().map(|i| pool[i]).collect()
}

/// Per-exchange delivery counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl CommStats {
    pub fn add(&mut self, other: &CommStats) {
        self.sent += other.sent;
        self.delivered += other.delivered;
        self.dropped += other.dropped;
    }
}

/// Discards envelopes whose sender is in the receiver's drop set and returns
/// the rest ordered by (sender, sender node, receiver, receiver node).
pub fn exchange(mut envelopes: Vec<Envelope>, drops: &DropSets) -> (Vec<Envelope>, CommStats) {
    let sent = envelopes.len() as u64;
    envelopes.retain(|e| !drops.get(&e.to.robot).is_some_and(|d| d.contains(&e.from.robot)));
    // (from, to) is unique within a round, so the order is total.
    if !envelopes.is_sorted_by_key(|e| (e.from, e.to)) {
        envelopes.sort_unstable_by_key(|e| (e.from, e.to));
    }
    let delivered = envelopes.len() as u64;
    (
        envelopes,
        CommStats {
            sent,
            delivered,
            dropped: sent - delivered,
        },
    )
}

/// Moves envelopes between robots; drop decisions are fixed per tick.
pub trait Transport: Send {
    /// Starts a tick with the current neighbour relation.
    fn begin_tick(&mut self, tick: u64, connected: &NeighborMap);
    fn deliver(&mut self, envelopes: Vec<Envelope>) -> Vec<Envelope>;
    /// Counts accumulated since the last `begin_tick`.
    fn tick_stats(&self) -> CommStats;
    /// Counts accumulated over the whole run.
    fn total_stats(&self) -> CommStats;
}

/// Transport with seeded receive-side failures.
#[derive(Debug, Clone)]
pub struct SimTransport {
    config: CommConfig,
    drops: DropSets,
    tick: CommStats,
    total: CommStats,
}

impl SimTransport {
    pub fn new(config: CommConfig) -> Self {
        Self {
            config,
            drops: DropSets::new(),
            tick: CommStats::default(),
            total: CommStats::default(),
        }
    }

    pub fn drop_sets(&self) -> &DropSets {
        &self.drops
    }
}

impl Transport for SimTransport {
    fn begin_tick(&mut self, tick: u64, connected: &NeighborMap) {
        self.tick = CommStats::default();
        self.drops = connected
            .iter()
            .map(|(rx, peers)| {
                (
                    *rx,
                    sample_failures(*rx, peers, self.config.gamma, self.config.seed, tick),
                )
            })
            .filter(|(_, d)| !d.is_empty())
            .collect();
    }

    fn deliver(&mut self, envelopes: Vec<Envelope>) -> Vec<Envelope> {
        let (out, stats) = exchange(envelopes, &self.drops);
        self.tick.add(&stats);
        self.total.add(&stats);
        out
    }

    fn tick_stats(&self) -> CommStats {
        self.tick
    }

    fn total_stats(&self) -> CommStats {
        self.total
    }
}

/// Lossless transport that hands every envelope straight over.
#[derive(Debug, Clone, Default)]
pub struct DirectTransport {
    tick: CommStats,
    total: CommStats,
}

impl Transport for DirectTransport {
    fn begin_tick(&mut self, _tick: u64, _connected: &NeighborMap) {
        self.tick = CommStats::default();
    }

    fn deliver(&mut self, envelopes: Vec<Envelope>) -> Vec<Envelope> {
        let n = envelopes.len() as u64;
        let stats = CommStats {
            sent: n,
            delivered: n,
            dropped: 0,
        };
        self.tick.add(&stats);
        self.total.add(&stats);
        envelopes
    }

    fn tick_stats(&self) -> CommStats {
        self.tick
    }

    fn total_stats(&self) -> CommStats {
        self.total
    }
}
