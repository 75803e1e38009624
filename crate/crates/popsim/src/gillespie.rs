//! Exact SSA in two modes: raw network kinetics with volume-based
//! propensities (the validation oracle), and null-skipping protocol
//! kinetics used by the hybrid scheduler.

use crate::error::{Error, Result};
use crate::model::{Configuration, Crn, Protocol, Reaction, ReactionSide, StateId, TimeModel};
use crate::rng::RngStream;

/// Per-reaction propensities and their sum.
#[derive(Clone, Debug)]
pub struct PropensityTable {
    pub per_reaction: Vec<f64>,
    pub total: f64,
}

/// Mass-action propensity of one irreversible reaction:
/// `k * #X` for `X -> ...`, `k * #X * #Y / v` for `X + Y -> ...` with
/// distinct reactants, `k * #X * (#X - 1) / (2v)` for `X + X -> ...`.
pub fn crn_propensity(reaction: &Reaction, config: &Configuration, volume: f64) -> f64 {
    match reaction.reactants {
        ReactionSide::Uni(x) => reaction.rate * config.count(x) as f64,
        ReactionSide::Bi(x, y) if x != y => {
            reaction.rate * (config.count(x) as f64) * (config.count(y) as f64) / volume
        }
        ReactionSide::Bi(x, _) => {
            let c = config.count(x) as f64;
            reaction.rate * c * (c - 1.0) / (2.0 * volume)
        }
    }
}

/// Propensities of all reactions of `crn` (which must be irreversible;
/// expand reversibles first) in the given configuration.
pub fn propensity_table(reactions: &[Reaction], config: &Configuration, volume: f64) -> PropensityTable {
    let per_reaction: Vec<f64> = reactions
        .iter()
        .map(|r| crn_propensity(r, config, volume))
        .collect();
    let total = per_reaction.iter().sum();
    PropensityTable { per_reaction, total }
}

/// Result of one SSA step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CrnStep {
    /// A reaction fired after waiting `dt`.
    Fired { dt: f64 },
    /// Total propensity is zero; the configuration is terminal.
    Deadlock,
}

/// One step of the direct-method SSA over irreversible reactions: waits an
/// exponential time with rate equal to the total propensity, then applies a
/// reaction chosen proportionally to its propensity.
pub fn crn_step(
    reactions: &[Reaction],
    volume: f64,
    config: &mut Configuration,
    rng: &mut RngStream,
) -> Result<CrnStep> {
    let table = propensity_table(reactions, config, volume);
    if table.total <= 0.0 {
        return Ok(CrnStep::Deadlock);
    }
    let dt = rng.exp_sample(table.total)?;
    let mut target = rng.uniform() * table.total;
    let mut chosen = reactions.len() - 1;
    for (i, &a) in table.per_reaction.iter().enumerate() {
        if target < a {
            chosen = i;
            break;
        }
        target -= a;
    }
    // Guard against scanning past the end onto a zero-propensity reaction.
    if table.per_reaction[chosen] <= 0.0 {
        chosen = table
            .per_reaction
            .iter()
            .rposition(|&a| a > 0.0)
            .expect("total > 0");
    }
    apply_reaction(&reactions[chosen], config);
    Ok(CrnStep::Fired { dt })
}

fn apply_reaction(reaction: &Reaction, config: &mut Configuration) {
    match reaction.reactants {
        ReactionSide::Uni(x) => config.add(x, -1),
        ReactionSide::Bi(x, y) => {
            config.add(x, -1);
            config.add(y, -1);
        }
    }
    match reaction.products {
        ReactionSide::Uni(x) => config.add(x, 1),
        ReactionSide::Bi(x, y) => {
            config.add(x, 1);
            config.add(y, 1);
        }
    }
}

/// Convenience oracle: runs the SSA on a network until time `t`, returning
/// the end configuration. Reversible reactions are expanded internally.
pub fn crn_run(crn: &Crn, config: &mut Configuration, t: f64, rng: &mut RngStream) -> Result<()> {
    let reactions = crate::compile::expand_reversible(crn);
    let mut clock = 0.0;
    loop {
        // The step both advances the clock and mutates the configuration;
        // an event landing past `t` must not be applied, so step a copy.
        let mut next = config.clone();
        match crn_step(&reactions, crn.volume, &mut next, rng)? {
            CrnStep::Deadlock => return Ok(()),
            CrnStep::Fired { dt } => {
                clock += dt;
                if clock > t {
                    return Ok(());
                }
                *config = next;
            }
        }
    }
}

/// Total non-null interaction mass of a configuration:
/// `W = sum over ordered pairs (a,b) of #a * (#b - [a==b]) * (1 - nullProb(a,b))`.
///
/// `W / (n(n-1))` is the probability that a uniform interaction is non-null;
/// `W == 0` means the configuration is silent.
pub fn protocol_nonnull_mass(config: &Configuration, protocol: &Protocol) -> f64 {
    let counts = config.counts();
    let mut w = 0.0;
    for &(a, b) in protocol.nonnull_pairs() {
        let ca = counts[a.index()] as f64;
        let cb = counts[b.index()] as f64 - if a == b { 1.0 } else { 0.0 };
        if ca > 0.0 && cb > 0.0 {
            w += ca * cb * protocol.nonnull_weight(a, b);
        }
    }
    w
}

/// Incrementally maintained non-null mass. Updates cost O(q) per changed
/// state; engines resync with a full recompute at batch boundaries.
#[derive(Clone, Debug)]
pub struct EnabledMass {
    w: f64,
}

impl EnabledMass {
    pub fn compute(config: &Configuration, protocol: &Protocol) -> Self {
        Self { w: protocol_nonnull_mass(config, protocol) }
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn is_silent(&self) -> bool {
        self.w <= 0.0
    }

    pub fn resync(&mut self, config: &Configuration, protocol: &Protocol) {
        self.w = protocol_nonnull_mass(config, protocol);
    }

    /// Account for `count(s) += delta`, given counts *before* the change.
    fn on_change(&mut self, config: &Configuration, protocol: &Protocol, s: StateId, delta: i64) {
        let counts = config.counts();
        let d = delta as f64;
        let mut row = 0.0; // sum_b c_b * w(s, b)
        let mut col = 0.0; // sum_a c_a * w(a, s)
        for b in 0..protocol.q() as u32 {
            let b = StateId(b);
            let c = counts[b.index()] as f64;
            row += c * protocol.nonnull_weight(s, b);
            col += c * protocol.nonnull_weight(b, s);
        }
        let w_ss = protocol.nonnull_weight(s, s);
        self.w += d * (row + col) + (d * d - d) * w_ss;
        if self.w < 0.0 {
            self.w = 0.0;
        }
    }

    /// Applies a pairwise transition to `config` while keeping the mass in
    /// step, one single-state change at a time.
    pub fn apply_transition(
        &mut self,
        config: &mut Configuration,
        protocol: &Protocol,
        input: (StateId, StateId),
        output: (StateId, StateId),
    ) {
        for (s, delta) in [(input.0, -1i64), (input.1, -1), (output.0, 1), (output.1, 1)] {
            self.on_change(config, protocol, s, delta);
            config.add(s, delta);
        }
        // Exactness guard for small systems; large runs resync at batch and
        // snapshot boundaries instead.
        #[cfg(debug_assertions)]
        {
            if config.n() <= 64 && protocol.q() <= 16 {
                let fresh = protocol_nonnull_mass(config, protocol);
                debug_assert!(
                    (self.w - fresh).abs() <= 1e-9 * fresh.max(1.0),
                    "incremental W {} diverged from {}",
                    self.w,
                    fresh
                );
            }
        }
    }
}

/// One event of the null-skipping protocol engine.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolEvent {
    /// Simulated time consumed by the event (exponential holding time in
    /// the continuous model, `G/n` in the discrete model).
    pub dt: f64,
    /// Interactions accounted for, including the skipped null ones in the
    /// discrete model.
    pub interactions: u64,
}

/// Performs the next non-null interaction, skipping nulls in O(1).
///
/// Continuous model: the holding time is exponential with rate
/// `m * W / (n-1)`. Discrete model: a geometric number `G` of interactions
/// (success probability `W / (n(n-1))`) elapses, advancing time by `G/n`.
/// The non-null ordered pair `(a,b)` is chosen with probability
/// proportional to `#a * (#b - [a==b]) * (1 - nullProb(a,b))` and its
/// output proportionally to the entry probabilities.
pub fn protocol_gillespie_step(
    config: &mut Configuration,
    protocol: &Protocol,
    time_model: TimeModel,
    rng: &mut RngStream,
    mass: &mut EnabledMass,
) -> Result<ProtocolEvent> {
    let n = config.n();
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    let w = mass.w();
    if w <= 0.0 {
        return Err(Error::NoApplicableInteraction);
    }
    let event = match time_model {
        TimeModel::Continuous => {
            let rate = protocol.m() * w / (n - 1) as f64;
            ProtocolEvent { dt: rng.exp_sample(rate)?, interactions: 1 }
        }
        TimeModel::Discrete => {
            let p = (w / (n as f64 * (n - 1) as f64)).min(1.0);
            let g = rng.geometric_sample(p)?;
            ProtocolEvent { dt: g as f64 / n as f64, interactions: g }
        }
    };

    let (input, output) = choose_nonnull(config, protocol, rng, w);
    mass.apply_transition(config, protocol, input, output);
    Ok(event)
}

/// Picks a non-null ordered pair proportional to its enabled mass and
/// samples its output conditioned on being non-null.
pub(crate) fn choose_nonnull(
    config: &Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    w: f64,
) -> ((StateId, StateId), (StateId, StateId)) {
    let counts = config.counts();
    let mut target = rng.uniform() * w;
    let mut chosen = None;
    let mut last_positive = None;
    for &(a, b) in protocol.nonnull_pairs() {
        let ca = counts[a.index()] as f64;
        let cb = counts[b.index()] as f64 - if a == b { 1.0 } else { 0.0 };
        if ca <= 0.0 || cb <= 0.0 {
            continue;
        }
        let mass = ca * cb * protocol.nonnull_weight(a, b);
        last_positive = Some((a, b));
        if target < mass {
            chosen = Some((a, b));
            break;
        }
        target -= mass;
    }
    let input = chosen.or(last_positive).expect("W > 0 yields a pair");
    let output = protocol.delta(input.0, input.1).sample_nonnull(rng);
    (input, output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_crn, parse_protocol};
    use crate::model::make_configuration;
    use crate::stats::chi_square_gof;

    /// Independent re-implementation of the three propensity cases.
    fn propensity_oracle(k: f64, counts: (u64, Option<u64>), same: bool, v: f64) -> f64 {
        match counts {
            (x, None) => k * x as f64,
            (x, Some(_)) if same => k * (x as f64) * (x as f64 - 1.0) / (2.0 * v),
            (x, Some(y)) => k * (x as f64) * (y as f64) / v,
        }
    }

    #[test]
    fn propensity_matches_oracle_on_grid() {
        let crn = parse_crn("X -> Y\nX + Y -> 2Y\nX + X -> 2Y\n").unwrap();
        let (uni, bi, sym) = (&crn.reactions[0], &crn.reactions[1], &crn.reactions[2]);
        for &k in &[0.5, 1.0, 2.0, 7.25] {
            for &v in &[1.0, 10.0, 100.0] {
                for x in 0u64..6 {
                    for y in 0u64..6 {
                        let cfg = Configuration::from_counts(vec![x, y]);
                        let scale = |r: &Reaction| Reaction { rate: k, ..r.clone() };
                        assert_eq!(
                            crn_propensity(&scale(uni), &cfg, v),
                            propensity_oracle(k, (x, None), false, v)
                        );
                        assert_eq!(
                            crn_propensity(&scale(bi), &cfg, v),
                            propensity_oracle(k, (x, Some(y)), false, v)
                        );
                        assert_eq!(
                            crn_propensity(&scale(sym), &cfg, v),
                            propensity_oracle(k, (x, Some(x)), true, v)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn propensity_examples() {
        let crn = parse_crn("X -> Y @ 2\n").unwrap();
        let cfg = Configuration::from_counts(vec![5, 0]);
        assert_eq!(crn_propensity(&crn.reactions[0], &cfg, 1.0), 10.0);

        let crn = parse_crn("X + Y -> 2Y\n").unwrap();
        let cfg = Configuration::from_counts(vec![2, 3]);
        assert_eq!(crn_propensity(&crn.reactions[0], &cfg, 10.0), 0.6);

        let crn = parse_crn("X + X -> 2Y\n").unwrap();
        let cfg = Configuration::from_counts(vec![2, 0]);
        assert_eq!(crn_propensity(&crn.reactions[0], &cfg, 1.0), 1.0);
        let cfg = Configuration::from_counts(vec![1, 0]);
        assert_eq!(crn_propensity(&crn.reactions[0], &cfg, 1.0), 0.0);
    }

    #[test]
    fn crn_step_single_applicable_reaction() {
        let crn = parse_crn("A -> B\nC -> D @ 5\n").unwrap();
        let mut cfg = Configuration::from_counts(vec![1, 0, 0, 0]);
        let mut rng = RngStream::new(3);
        let step = crn_step(&crn.reactions, 1.0, &mut cfg, &mut rng).unwrap();
        assert!(matches!(step, CrnStep::Fired { .. }));
        assert_eq!(cfg.counts(), &[0, 1, 0, 0]);
    }

    #[test]
    fn crn_step_deadlock() {
        let crn = parse_crn("A -> B\n").unwrap();
        let mut cfg = Configuration::from_counts(vec![0, 3]);
        let mut rng = RngStream::new(3);
        assert_eq!(
            crn_step(&crn.reactions, 1.0, &mut cfg, &mut rng).unwrap(),
            CrnStep::Deadlock
        );
        assert_eq!(cfg.counts(), &[0, 3]);
    }

    fn leader_protocol() -> Protocol {
        parse_protocol("L L => L F\n").unwrap()
    }

    #[test]
    fn nonnull_mass_examples() {
        let proto = leader_protocol();
        let cfg = make_configuration(&[("L", 2), ("F", 8)], &proto).unwrap();
        assert_eq!(protocol_nonnull_mass(&cfg, &proto), 2.0);

        let all_null = parse_protocol("A B => A B\n").unwrap();
        let cfg = make_configuration(&[("A", 3), ("B", 3)], &all_null).unwrap();
        assert_eq!(protocol_nonnull_mass(&cfg, &all_null), 0.0);

        // A single-state distribution with an explicit self-loop entry has
        // full non-null mass n(n-1); builders never produce this form, but
        // the mass accounting must honor it.
        let mut names = crate::model::StateNames::new();
        let a = names.intern("A");
        let mut delta = std::collections::HashMap::new();
        delta.insert((a, a), crate::model::OutputDistribution::deterministic((a, a)));
        let proto = Protocol::new(names, delta, 1.0).unwrap();
        let cfg = Configuration::from_counts(vec![9]);
        assert_eq!(protocol_nonnull_mass(&cfg, &proto), 72.0);
    }

    #[test]
    fn incremental_mass_tracks_recompute() {
        let proto = parse_protocol("A B -> U U\nA U -> A A\nB U -> B B\n").unwrap();
        let mut cfg = make_configuration(&[("A", 6), ("B", 5), ("U", 1)], &proto).unwrap();
        let mut mass = EnabledMass::compute(&cfg, &proto);
        let mut rng = RngStream::new(11);
        for _ in 0..200 {
            if mass.is_silent() {
                break;
            }
            protocol_gillespie_step(&mut cfg, &proto, TimeModel::Discrete, &mut rng, &mut mass)
                .unwrap();
            let fresh = protocol_nonnull_mass(&cfg, &proto);
            assert!((mass.w() - fresh).abs() < 1e-9 * fresh.max(1.0));
        }
    }

    #[test]
    fn discrete_skip_time_matches_geometric_mean() {
        // (L,L) -> (L,F) with #L = 2: success probability 2/(n(n-1)), so
        // the expected skip time is (n(n-1)/2)/n.
        let proto = leader_protocol();
        let n = 50u64;
        let mut rng = RngStream::new(21);
        let trials = 100_000;
        let mut total = 0.0;
        for _ in 0..trials {
            let mut cfg = make_configuration(&[("L", 2), ("F", n - 2)], &proto).unwrap();
            let mut mass = EnabledMass::compute(&cfg, &proto);
            let ev = protocol_gillespie_step(
                &mut cfg,
                &proto,
                TimeModel::Discrete,
                &mut rng,
                &mut mass,
            )
            .unwrap();
            total += ev.dt;
            assert!(mass.is_silent());
        }
        let mean = total / trials as f64;
        let expect = (n * (n - 1)) as f64 / 2.0 / n as f64;
        assert!((mean - expect).abs() / expect < 0.02, "mean {mean} vs {expect}");
    }

    #[test]
    fn deterministic_transition_applied_with_probability_one() {
        let proto = leader_protocol();
        let mut cfg = make_configuration(&[("L", 2)], &proto).unwrap();
        let mut mass = EnabledMass::compute(&cfg, &proto);
        let mut rng = RngStream::new(5);
        protocol_gillespie_step(&mut cfg, &proto, TimeModel::Continuous, &mut rng, &mut mass)
            .unwrap();
        let l = proto.names().get("L").unwrap();
        let f = proto.names().get("F").unwrap();
        assert_eq!(cfg.count(l), 1);
        assert_eq!(cfg.count(f), 1);
        assert!(matches!(
            protocol_gillespie_step(&mut cfg, &proto, TimeModel::Continuous, &mut rng, &mut mass),
            Err(Error::NoApplicableInteraction)
        ));
    }

    #[test]
    fn equal_weight_pairs_chosen_evenly() {
        // Two applicable pair types with identical mass: each selected 50%.
        let proto = parse_protocol("A A => A B\nC C => C D\n").unwrap();
        let trials = 100_000u64;
        let mut rng = RngStream::new(31);
        let mut hist = [0u64; 2];
        for _ in 0..trials {
            let mut cfg = make_configuration(&[("A", 2), ("C", 2)], &proto).unwrap();
            let mut mass = EnabledMass::compute(&cfg, &proto);
            protocol_gillespie_step(&mut cfg, &proto, TimeModel::Discrete, &mut rng, &mut mass)
                .unwrap();
            let b = proto.names().get("B").unwrap();
            hist[if cfg.count(b) == 1 { 0 } else { 1 }] += 1;
        }
        let expected = vec![trials as f64 / 2.0; 2];
        let (_, p) = chi_square_gof(&hist, &expected, 5.0);
        assert!(p > 0.001, "p = {p}, hist {hist:?}");
    }
}
