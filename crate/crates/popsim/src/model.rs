//! Core domain types: states, configurations, protocols, and reaction
//! networks, plus state-space enumeration for programmatic transition
//! functions.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance for probability normalization checks at construction time.
pub const PROB_SUM_TOL: f64 = 9.094947017729282e-13; // 2^-40

/// Slack allowed when accumulating user-supplied probabilities for one
/// input pair before declaring an overflow.
pub const PROB_OVERFLOW_SLACK: f64 = 9.5367431640625e-7; // 2^-20

/// Default cap on the number of states produced by [`enumerate_states`].
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Dense index of a state (species). Ids form the contiguous range `0..q`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct StateId(pub u32);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijection between display names and dense state ids.
#[derive(Clone, Debug, Default)]
pub struct StateNames {
    names: Vec<String>,
    ids: HashMap<String, StateId>,
}

impl StateNames {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, adding it if unseen.
    pub fn intern(&mut self, name: &str) -> StateId {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = StateId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<StateId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: StateId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (StateId(i as u32), n.as_str()))
    }

    /// Ids ordered by state name; the canonical order for file output.
    pub fn sorted_ids(&self) -> Vec<StateId> {
        let mut ids: Vec<StateId> = (0..self.names.len() as u32).map(StateId).collect();
        ids.sort_by(|a, b| self.name(*a).cmp(self.name(*b)));
        ids
    }
}

/// Count vector over states; the Markov-process state of a simulation.
///
/// The sum of counts equals the population size `n` before and after every
/// engine step.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    counts: Vec<u64>,
    n: u64,
}

impl Configuration {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let n = counts.iter().sum();
        Self { counts, n }
    }

    #[inline]
    pub fn count(&self, s: StateId) -> u64 {
        self.counts[s.index()]
    }

    #[inline]
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn q(&self) -> usize {
        self.counts.len()
    }

    /// Applies one pairwise transition: both input agents leave their
    /// states, both output agents arrive. Population size is preserved.
    #[inline]
    pub fn apply_pair(&mut self, input: (StateId, StateId), output: (StateId, StateId)) {
        debug_assert!(self.counts[input.0.index()] >= 1);
        self.counts[input.0.index()] -= 1;
        debug_assert!(self.counts[input.1.index()] >= 1);
        self.counts[input.1.index()] -= 1;
        self.counts[output.0.index()] += 1;
        self.counts[output.1.index()] += 1;
    }

    #[inline]
    pub(crate) fn add(&mut self, s: StateId, k: i64) {
        let c = &mut self.counts[s.index()];
        if k >= 0 {
            *c += k as u64;
        } else {
            debug_assert!(*c >= (-k) as u64);
            *c -= (-k) as u64;
        }
    }

    /// Hands the raw count vector to an engine; pair with
    /// [`Configuration::restore_counts`].
    pub(crate) fn take_counts(&mut self) -> Vec<u64> {
        std::mem::take(&mut self.counts)
    }

    pub(crate) fn restore_counts(&mut self, counts: Vec<u64>) {
        debug_assert_eq!(counts.iter().sum::<u64>(), self.n);
        self.counts = counts;
    }
}

/// Distribution over ordered output pairs for one ordered input pair, with
/// an explicit null (no-change) probability. Null is never represented as a
/// self-loop entry by any of the builders in this crate, so engines can read
/// the non-null mass of a pair in O(1).
#[derive(Clone, Debug, PartialEq)]
pub struct OutputDistribution {
    entries: Vec<((StateId, StateId), f64)>,
    null_prob: f64,
}

impl OutputDistribution {
    /// The all-null distribution; what an absent input pair means.
    pub fn null() -> Self {
        Self {
            entries: Vec::new(),
            null_prob: 1.0,
        }
    }

    /// Single deterministic output.
    pub fn deterministic(output: (StateId, StateId)) -> Self {
        Self {
            entries: vec![(output, 1.0)],
            null_prob: 0.0,
        }
    }

    /// Builds from explicit entries; the null probability is the residual
    /// `1 - sum`. Entry probabilities must lie in `(0, 1]` and sum to at
    /// most `1` (within 2^-20 slack, clamped).
    pub fn from_entries(entries: Vec<((StateId, StateId), f64)>) -> Result<Self> {
        let mut sum = 0.0f64;
        for &(_, p) in &entries {
            if !(p > 0.0 && p <= 1.0) || p.is_nan() {
                return Err(Error::InvalidProbability(p));
            }
            sum += p;
        }
        if sum > 1.0 + PROB_OVERFLOW_SLACK {
            return Err(Error::InvalidProbability(sum));
        }
        let null_prob = (1.0 - sum).max(0.0);
        Ok(Self { entries, null_prob })
    }

    pub fn entries(&self) -> &[((StateId, StateId), f64)] {
        &self.entries
    }

    pub fn null_prob(&self) -> f64 {
        self.null_prob
    }

    /// Probability that this input pair changes state at all.
    #[inline]
    pub fn nonnull_mass(&self) -> f64 {
        1.0 - self.null_prob
    }

    pub fn is_null(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_deterministic(&self) -> bool {
        self.entries.len() == 1 && self.null_prob == 0.0
    }

    /// Samples an outcome including the null case.
    pub fn sample(&self, rng: &mut crate::rng::RngStream) -> Option<(StateId, StateId)> {
        if self.entries.is_empty() {
            return None;
        }
        if self.is_deterministic() {
            return Some(self.entries[0].0);
        }
        let mut u = rng.uniform();
        for &(out, p) in &self.entries {
            if u < p {
                return Some(out);
            }
            u -= p;
        }
        None
    }

    /// Samples an outcome conditioned on the interaction being non-null.
    pub fn sample_nonnull(&self, rng: &mut crate::rng::RngStream) -> (StateId, StateId) {
        debug_assert!(!self.entries.is_empty());
        if self.entries.len() == 1 {
            return self.entries[0].0;
        }
        let mut u = rng.uniform() * self.nonnull_mass();
        for &(out, p) in &self.entries {
            if u < p {
                return out;
            }
            u -= p;
        }
        self.entries[self.entries.len() - 1].0
    }

    fn mirrored(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|&((c, d), p)| ((d, c), p))
                .collect(),
            null_prob: self.null_prob,
        }
    }

    /// Distribution equality up to entry order and merging of duplicate
    /// outputs, with tolerance `tol` on probabilities.
    pub fn same_distribution(&self, other: &Self, tol: f64) -> bool {
        let fold = |d: &Self| {
            let mut m: HashMap<(StateId, StateId), f64> = HashMap::new();
            for &(out, p) in &d.entries {
                *m.entry(out).or_default() += p;
            }
            m
        };
        let a = fold(self);
        let b = fold(other);
        if a.len() != b.len() {
            return false;
        }
        a.iter()
            .all(|(k, v)| b.get(k).is_some_and(|w| (v - w).abs() <= tol))
            && (self.null_prob - other.null_prob).abs() <= tol
    }
}

/// A population protocol over `q` states: for every ordered input pair, a
/// (possibly randomized, possibly null) distribution over ordered output
/// pairs, plus the time-scale constant `m`.
///
/// `m` is 1 for hand-written protocols; protocols compiled from a reaction
/// network carry the rate normalizer from the compilation, and one unit of
/// network time corresponds to `m` units of protocol time.
#[derive(Clone, Debug)]
pub struct Protocol {
    names: StateNames,
    q: usize,
    delta: Vec<OutputDistribution>,
    nonnull_weight: Vec<f64>,
    nonnull_pairs: Vec<(StateId, StateId)>,
    m: f64,
}

impl Protocol {
    /// Builds a protocol from per-pair distributions. Pairs absent from
    /// `delta` are null. Fails if any referenced state id is out of range.
    pub fn new(
        names: StateNames,
        delta: HashMap<(StateId, StateId), OutputDistribution>,
        m: f64,
    ) -> Result<Self> {
        let q = names.len();
        let mut table = vec![OutputDistribution::null(); q * q];
        for ((a, b), dist) in delta {
            for &((c, d), _) in dist.entries() {
                let max = a.index().max(b.index()).max(c.index()).max(d.index());
                if max >= q {
                    return Err(Error::UnknownState(format!("state id {max}")));
                }
            }
            if a.index() >= q || b.index() >= q {
                return Err(Error::UnknownState(format!(
                    "state id {}",
                    a.index().max(b.index())
                )));
            }
            table[a.index() * q + b.index()] = dist;
        }
        if !(m > 0.0) || m.is_nan() {
            return Err(Error::NonPositiveRate(m));
        }
        let nonnull_weight: Vec<f64> = table.iter().map(|d| d.nonnull_mass()).collect();
        let nonnull_pairs: Vec<(StateId, StateId)> = (0..q)
            .flat_map(|a| (0..q).map(move |b| (StateId(a as u32), StateId(b as u32))))
            .filter(|&(a, b)| nonnull_weight[a.index() * q + b.index()] > 0.0)
            .collect();
        Ok(Self {
            names,
            q,
            delta: table,
            nonnull_weight,
            nonnull_pairs,
            m,
        })
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn names(&self) -> &StateNames {
        &self.names
    }

    #[inline]
    pub fn m(&self) -> f64 {
        self.m
    }

    #[inline]
    pub fn delta(&self, a: StateId, b: StateId) -> &OutputDistribution {
        &self.delta[a.index() * self.q + b.index()]
    }

    /// `1 - nullProb` for the ordered pair, in O(1).
    #[inline]
    pub fn nonnull_weight(&self, a: StateId, b: StateId) -> f64 {
        self.nonnull_weight[a.index() * self.q + b.index()]
    }

    /// Ordered pairs with any non-null mass, in row-major order.
    pub fn nonnull_pairs(&self) -> &[(StateId, StateId)] {
        &self.nonnull_pairs
    }

    /// Exhaustive scan checking that `delta(a,b)` and `delta(b,a)` are
    /// mirror images for every ordered pair with distinct states. Holds for
    /// protocols built from unordered rules.
    pub fn is_symmetric(&self) -> bool {
        for a in 0..self.q as u32 {
            for b in 0..a {
                let ab = self.delta(StateId(a), StateId(b));
                let ba = self.delta(StateId(b), StateId(a));
                if !ab.same_distribution(&ba.mirrored(), PROB_SUM_TOL) {
                    return false;
                }
            }
        }
        true
    }

    /// Stable fingerprint of the protocol structure (FNV-1a over states,
    /// delta, and m); recorded in trajectory metadata.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.q as u64);
        for (_, name) in self.names.iter() {
            h.write_bytes(name.as_bytes());
            h.write_bytes(&[0]);
        }
        h.write_u64(self.m.to_bits());
        for dist in &self.delta {
            h.write_u64(dist.entries().len() as u64);
            for &((c, d), p) in dist.entries() {
                h.write_u64(c.0 as u64);
                h.write_u64(d.0 as u64);
                h.write_u64(p.to_bits());
            }
            h.write_u64(dist.null_prob().to_bits());
        }
        h.finish()
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
    fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn write_u64(&mut self, x: u64) {
        self.write_bytes(&x.to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Simulated-time semantics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeModel {
    /// Each interaction advances time by `1/n`.
    Discrete,
    /// Every agent carries a rate-1 Poisson clock; interactions arrive at
    /// total rate `n` (times `m` for compiled protocols).
    Continuous,
}

/// One or two reactant (or product) species of a reaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReactionSide {
    Uni(StateId),
    Bi(StateId, StateId),
}

impl ReactionSide {
    pub fn arity(&self) -> usize {
        match self {
            ReactionSide::Uni(_) => 1,
            ReactionSide::Bi(_, _) => 2,
        }
    }
}

/// A unimolecular or bimolecular reaction with mass-action rate constant(s).
/// Reactant and product arity always match.
#[derive(Clone, Debug, PartialEq)]
pub struct Reaction {
    pub reactants: ReactionSide,
    pub products: ReactionSide,
    pub rate: f64,
    pub reverse_rate: Option<f64>,
}

impl Reaction {
    pub fn unimolecular(reactant: StateId, product: StateId, rate: f64) -> Result<Self> {
        Self::validated(ReactionSide::Uni(reactant), ReactionSide::Uni(product), rate, None)
    }

    pub fn bimolecular(
        reactants: (StateId, StateId),
        products: (StateId, StateId),
        rate: f64,
    ) -> Result<Self> {
        Self::validated(
            ReactionSide::Bi(reactants.0, reactants.1),
            ReactionSide::Bi(products.0, products.1),
            rate,
            None,
        )
    }

    pub fn reversible(mut self, reverse_rate: f64) -> Result<Self> {
        if !(reverse_rate > 0.0) {
            return Err(Error::NonPositiveRate(reverse_rate));
        }
        self.reverse_rate = Some(reverse_rate);
        Ok(self)
    }

    fn validated(
        reactants: ReactionSide,
        products: ReactionSide,
        rate: f64,
        reverse_rate: Option<f64>,
    ) -> Result<Self> {
        if !(rate > 0.0) || rate.is_nan() {
            return Err(Error::NonPositiveRate(rate));
        }
        debug_assert_eq!(reactants.arity(), products.arity());
        Ok(Self {
            reactants,
            products,
            rate,
            reverse_rate,
        })
    }

    pub fn is_reversible(&self) -> bool {
        self.reverse_rate.is_some()
    }
}

/// A reaction network: unimolecular/bimolecular reactions over implicitly
/// declared species, in a fixed volume.
#[derive(Clone, Debug)]
pub struct Crn {
    pub names: StateNames,
    pub reactions: Vec<Reaction>,
    pub volume: f64,
}

impl Crn {
    pub fn new(names: StateNames, reactions: Vec<Reaction>, volume: f64) -> Result<Self> {
        if !(volume > 0.0) || volume.is_nan() {
            return Err(Error::NonPositiveVolume(volume));
        }
        Ok(Self {
            names,
            reactions,
            volume,
        })
    }

    pub fn with_volume(mut self, volume: f64) -> Result<Self> {
        if !(volume > 0.0) || volume.is_nan() {
            return Err(Error::NonPositiveVolume(volume));
        }
        self.volume = volume;
        Ok(self)
    }

    pub fn q(&self) -> usize {
        self.names.len()
    }
}

/// Enumerates the reachable state space of a programmatic transition
/// function and freezes it into a deterministic protocol.
///
/// `transition` is called on ordered pairs of state names and must be pure;
/// it is invoked twice per pair and any disagreement is reported as
/// [`Error::NonDeterministicCallback`]. Output pairs equal to their input
/// are stored as null. Enumeration stops with [`Error::StateCapExceeded`]
/// once more than `cap` states are produced.
pub fn enumerate_states<F>(initial: &[&str], transition: F, cap: usize) -> Result<Protocol>
where
    F: Fn(&str, &str) -> (String, String),
{
    let mut names = StateNames::new();
    let mut initial_sorted: Vec<&str> = initial.to_vec();
    initial_sorted.sort_unstable();
    initial_sorted.dedup();
    for name in &initial_sorted {
        names.intern(name);
    }
    if names.len() > cap {
        return Err(Error::StateCapExceeded { cap });
    }

    let mut delta: HashMap<(StateId, StateId), OutputDistribution> = HashMap::new();
    // Pairs are evaluated in waves: whenever new states appear, all ordered
    // pairs involving them are queued.
    let mut evaluated = 0usize; // states with all pairs among 0..evaluated done
    while evaluated < names.len() {
        let known = names.len();
        for a_idx in 0..known {
            for b_idx in 0..known {
                if a_idx < evaluated && b_idx < evaluated {
                    continue;
                }
                let a = StateId(a_idx as u32);
                let b = StateId(b_idx as u32);
                let an = names.name(a).to_string();
                let bn = names.name(b).to_string();
                let out1 = transition(&an, &bn);
                let out2 = transition(&an, &bn);
                if out1 != out2 {
                    return Err(Error::NonDeterministicCallback { a: an, b: bn });
                }
                let c = names.intern(&out1.0);
                let d = names.intern(&out1.1);
                if names.len() > cap {
                    return Err(Error::StateCapExceeded { cap });
                }
                if (c, d) != (a, b) {
                    delta.insert((a, b), OutputDistribution::deterministic((c, d)));
                }
            }
        }
        evaluated = known;
    }
    Protocol::new(names, delta, 1.0)
}

/// Builds a configuration from per-name counts. States not listed get count
/// zero; names must exist in the protocol.
pub fn make_configuration(init: &[(&str, u64)], protocol: &Protocol) -> Result<Configuration> {
    let mut counts = vec![0u64; protocol.q()];
    for (name, count) in init {
        let id = protocol
            .names()
            .get(name)
            .ok_or_else(|| Error::UnknownState((*name).to_string()))?;
        counts[id.index()] += count;
    }
    let cfg = Configuration::from_counts(counts);
    if cfg.n() == 0 {
        return Err(Error::EmptyPopulation);
    }
    Ok(cfg)
}
