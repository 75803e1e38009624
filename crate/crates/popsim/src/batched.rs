//! The collision-length batched engine, and the naive sequential engine
//! that defines the ground-truth semantics.
//!
//! One batch simulates the pick stream of the sequential scheduler: agents
//! are picked uniformly, two picks per interaction, until some agent comes
//! up a second time. The collision length `C` (index of the first repeated
//! pick) is sampled from its exact law, the `floor((C-1)/2)` collision-free
//! interactions are applied in bulk with urn draws, and the interaction
//! containing the collision is then resolved individually. Everything is
//! exact: the batched engine and the sequential engine sample identical
//! configuration distributions after any number of interactions.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gillespie::protocol_nonnull_mass;
use crate::model::{Configuration, Protocol, StateId};
use crate::rng::RngStream;

/// Multiset of agents by state, supporting without-replacement sampling.
#[derive(Clone, Debug)]
pub struct Urn {
    counts: Vec<u64>,
    total: u64,
}

impl Urn {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    pub fn empty(q: usize) -> Self {
        Self { counts: vec![0; q], total: 0 }
    }

    pub fn reset(&mut self) {
        self.counts.fill(0);
        self.total = 0;
    }

    #[inline]
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    #[inline]
    pub fn add(&mut self, s: StateId, k: u64) {
        self.counts[s.index()] += k;
        self.total += k;
    }

    #[inline]
    pub fn remove_one(&mut self, s: StateId) {
        debug_assert!(self.counts[s.index()] >= 1);
        self.counts[s.index()] -= 1;
        self.total -= 1;
    }

    /// Removes and returns the state of one agent drawn uniformly.
    pub fn sample_one(&mut self, rng: &mut RngStream) -> StateId {
        debug_assert!(self.total > 0);
        let mut target = rng.below(self.total);
        for (i, &c) in self.counts.iter().enumerate() {
            if target < c {
                let s = StateId(i as u32);
                self.remove_one(s);
                return s;
            }
            target -= c;
        }
        unreachable!("target within total");
    }

    /// Removes `draws` agents without replacement; their per-state counts
    /// land in `out`.
    pub fn sample_many(&mut self, draws: u64, rng: &mut RngStream, out: &mut Vec<u64>) {
        rng.multivariate_hypergeometric(&self.counts, draws, out)
            .expect("draws bounded by urn total");
        for (c, d) in self.counts.iter_mut().zip(out.iter()) {
            *c -= d;
        }
        self.total -= draws;
    }

    /// Pours `other` into this urn, leaving `other` empty.
    pub fn absorb(&mut self, other: &mut Urn) {
        for (c, o) in self.counts.iter_mut().zip(other.counts.iter_mut()) {
            *c += *o;
            *o = 0;
        }
        self.total += other.total;
        other.total = 0;
    }

    pub fn into_counts(self) -> Vec<u64> {
        self.counts
    }
}

/// Survival function of the collision length at pick granularity:
/// `P(C > t) = n! / ((n-t)! n^t)`, the probability that `t` uniform picks
/// out of `n` agents are all distinct. Zero for `t > n`.
pub fn collision_survival_ln(n: u64, t: u64) -> f64 {
    if t > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma((n + 1) as f64) - ln_gamma((n - t + 1) as f64) - t as f64 * (n as f64).ln()
}

/// Samples the collision length `C >= 2`: the index of the first agent pick
/// that repeats any earlier pick, two picks per interaction. Inverse
/// transform: the smallest `t` with `P(C > t) < U`, located by a galloping
/// upper bound followed by binary search on the log-survival, O(log n)
/// gamma evaluations per draw.
pub fn sample_collision_length(n: u64, rng: &mut RngStream) -> Result<u64> {
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    let ln_u = rng.open01().ln();
    // S(1) = 1 >= U always; C = n+1 is the hard ceiling (all agents seen).
    let mut lo = 1u64;
    let mut hi = ((n as f64).sqrt() as u64).clamp(2, n + 1);
    while collision_survival_ln(n, hi) >= ln_u {
        lo = hi;
        if hi == n + 1 {
            break;
        }
        hi = (hi * 2).min(n + 1);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if collision_survival_ln(n, mid) < ln_u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Scratch buffers reused across batch steps.
#[derive(Clone, Debug)]
pub struct BatchScratch {
    delayed: Urn,
    initiators: Vec<u64>,
    responders: Vec<u64>,
    pair_row: Vec<u64>,
    split: Vec<u64>,
    probs: Vec<f64>,
}

impl BatchScratch {
    pub fn new(q: usize) -> Self {
        Self {
            delayed: Urn::empty(q),
            initiators: Vec::with_capacity(q),
            responders: Vec::with_capacity(q),
            pair_row: Vec::with_capacity(q),
            split: Vec::new(),
            probs: Vec::new(),
        }
    }
}

/// Outcome of one batch step.
#[derive(Clone, Copy, Debug)]
pub struct BatchResult {
    /// Interactions simulated by this call (collision-free prefix plus the
    /// collision interaction, or the capped sequential tail).
    pub interactions: u64,
}

/// Advances the configuration by one collision batch, at most `cap`
/// interactions. Equivalent in distribution to running
/// [`sequential_step`] the same number of times.
///
/// The cap is honored by windowing the pick stream: a batch asked for at
/// most `cap` interactions looks at the first `2*cap` picks. A collision
/// length beyond the window means those picks were all distinct, so the
/// `cap` interactions form a disjoint matching and are applied in bulk
/// with no collision interaction. A collision inside the window yields the
/// usual prefix-plus-collision batch, which then never exceeds the cap.
pub fn batch_step(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    scratch: &mut BatchScratch,
    cap: u64,
) -> Result<BatchResult> {
    let n = config.n();
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    debug_assert!(cap >= 1);
    debug_assert_eq!(scratch.delayed.counts.len(), protocol.q());

    let c = sample_collision_length(n, rng)?;
    let window = cap.saturating_mul(2);

    if c > window {
        // No repeated agent among the first `cap` interactions: they are a
        // uniform disjoint matching of 2*cap distinct agents.
        let mut main = Urn::from_counts(config.take_counts());
        scratch.delayed.reset();
        apply_matching(&mut main, cap, protocol, rng, scratch);
        debug_assert_eq!(scratch.delayed.total(), 2 * cap);
        main.absorb(&mut scratch.delayed);
        debug_assert_eq!(main.total(), n);
        config.restore_counts(main.into_counts());
        return Ok(BatchResult { interactions: cap });
    }

    let complete = (c - 1) / 2;
    let has_lone_initiator = c % 2 == 0;
    debug_assert!(complete + 1 <= cap);

    let mut main = Urn::from_counts(config.take_counts());
    scratch.delayed.reset();

    // Collision-free prefix.
    apply_matching(&mut main, complete, protocol, rng, scratch);
    debug_assert_eq!(scratch.delayed.total(), 2 * complete);
    debug_assert_eq!(main.total() + scratch.delayed.total(), n);

    // The interaction containing the collision. The repeated pick is
    // uniform over the C-1 agents picked so far; a responder pick equal to
    // its own initiator counts as the collision but the actual partner is
    // re-drawn uniformly over the other n-1 agents, matching the
    // distinct-pair semantics of the sequential scheduler.
    let (initiator, responder) = if has_lone_initiator {
        let s = main.sample_one(rng);
        debug_assert_eq!(main.total() + scratch.delayed.total() + 1, n);
        let r = rng.below(c - 1);
        let partner = if r < scratch.delayed.total() {
            scratch.delayed.sample_one(rng)
        } else {
            // Collider is the lone initiator's own pick: re-draw among the
            // other n-1 agents, of which C-2 were picked earlier.
            let r2 = rng.below(n - 1);
            if r2 < c - 2 {
                scratch.delayed.sample_one(rng)
            } else {
                main.sample_one(rng)
            }
        };
        (s, partner)
    } else {
        let s = scratch.delayed.sample_one(rng);
        let r2 = rng.below(n - 1);
        let partner = if r2 < c - 2 {
            scratch.delayed.sample_one(rng)
        } else {
            main.sample_one(rng)
        };
        (s, partner)
    };
    match protocol.delta(initiator, responder).sample(rng) {
        Some((o1, o2)) => {
            scratch.delayed.add(o1, 1);
            scratch.delayed.add(o2, 1);
        }
        None => {
            scratch.delayed.add(initiator, 1);
            scratch.delayed.add(responder, 1);
        }
    }

    main.absorb(&mut scratch.delayed);
    debug_assert_eq!(main.total(), n);
    config.restore_counts(main.into_counts());
    Ok(BatchResult { interactions: complete + 1 })
}

/// Applies `pairs` collision-free interactions: initiator and responder
/// multisets drawn without replacement from `main`, paired uniformly, all
/// resulting agents landing in `scratch.delayed`.
fn apply_matching(
    main: &mut Urn,
    pairs: u64,
    protocol: &Protocol,
    rng: &mut RngStream,
    scratch: &mut BatchScratch,
) {
    main.sample_many(pairs, rng, &mut scratch.initiators);
    main.sample_many(pairs, rng, &mut scratch.responders);
    for i in 0..protocol.q() {
        let a_i = scratch.initiators[i];
        if a_i == 0 {
            continue;
        }
        rng.multivariate_hypergeometric(&scratch.responders, a_i, &mut scratch.pair_row)
            .expect("responder pool holds enough agents");
        for j in 0..protocol.q() {
            let d = scratch.pair_row[j];
            if d == 0 {
                continue;
            }
            scratch.responders[j] -= d;
            apply_group(
                (StateId(i as u32), StateId(j as u32)),
                d,
                protocol,
                rng,
                &mut scratch.delayed,
                &mut scratch.split,
                &mut scratch.probs,
            );
        }
    }
}

/// Applies `d` interactions of the ordered state pair `(a, b)`, splitting
/// randomized outcomes multinomially (entries in declaration order, null
/// last); all resulting agents land in `delayed`.
fn apply_group(
    input: (StateId, StateId),
    d: u64,
    protocol: &Protocol,
    rng: &mut RngStream,
    delayed: &mut Urn,
    split: &mut Vec<u64>,
    probs: &mut Vec<f64>,
) {
    let dist = protocol.delta(input.0, input.1);
    if dist.is_null() {
        delayed.add(input.0, d);
        delayed.add(input.1, d);
        return;
    }
    if dist.is_deterministic() {
        let (o1, o2) = dist.entries()[0].0;
        delayed.add(o1, d);
        delayed.add(o2, d);
        return;
    }
    probs.clear();
    probs.extend(dist.entries().iter().map(|e| e.1));
    probs.push(dist.null_prob());
    rng.multinomial_split(d, probs, split)
        .expect("distribution probabilities sum to 1");
    for (k, &(out, _)) in dist.entries().iter().enumerate() {
        if split[k] > 0 {
            delayed.add(out.0, split[k]);
            delayed.add(out.1, split[k]);
        }
    }
    let nulls = split[dist.entries().len()];
    if nulls > 0 {
        delayed.add(input.0, nulls);
        delayed.add(input.1, nulls);
    }
}

/// One interaction of the ground-truth scheduler: a uniform ordered pair of
/// distinct agents, transition (or null) applied.
pub fn sequential_step(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
) -> Result<()> {
    let n = config.n();
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    let initiator = pick_state(config.counts(), rng.below(n));
    // Responder is uniform over the remaining n-1 agents.
    let mut idx = rng.below(n - 1);
    let init_idx = initiator.index();
    let responder = {
        let counts = config.counts();
        let mut found = None;
        for (i, &c) in counts.iter().enumerate() {
            let avail = if i == init_idx { c - 1 } else { c };
            if idx < avail {
                found = Some(StateId(i as u32));
                break;
            }
            idx -= avail;
        }
        found.expect("index within remaining population")
    };
    if let Some(output) = protocol.delta(initiator, responder).sample(rng) {
        config.apply_pair((initiator, responder), output);
    }
    Ok(())
}

fn pick_state(counts: &[u64], mut idx: u64) -> StateId {
    for (i, &c) in counts.iter().enumerate() {
        if idx < c {
            return StateId(i as u32);
        }
        idx -= c;
    }
    unreachable!("index within population");
}

/// Runs exactly `interactions` interactions with batch steps; the final
/// partial batch is windowed so the total lands exactly.
pub fn run_batched(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    scratch: &mut BatchScratch,
    mut interactions: u64,
) -> Result<()> {
    while interactions > 0 {
        let res = batch_step(config, protocol, rng, scratch, interactions)?;
        interactions -= res.interactions;
    }
    Ok(())
}

/// Runs exactly `interactions` sequential interactions.
pub fn run_sequential(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    interactions: u64,
) -> Result<()> {
    for _ in 0..interactions {
        sequential_step(config, protocol, rng)?;
    }
    Ok(())
}

/// True when no applicable interaction can change the configuration.
pub fn is_silent(config: &Configuration, protocol: &Protocol) -> bool {
    protocol_nonnull_mass(config, protocol) <= 0.0
}
