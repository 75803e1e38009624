//! Compiles a reaction network into an equivalent continuous-time protocol.
//!
//! The transformation: reversible reactions split into forward/reverse
//! pairs; every bimolecular reaction becomes one (symmetric reactants) or
//! two (both orders) ordered transitions with rate `k * (n-1) / (2v)`; every
//! unimolecular reaction `X -> Y` becomes one ordered transition
//! `(X, Z) -> (Y, Z)` per species `Z`, rate uncorrected. Rates on each
//! ordered input pair are then normalized by `m`, the maximum per-pair rate
//! sum, which becomes the protocol's time-scale constant: the protocol at
//! time `m*t` samples the same configuration distribution as the SSA at
//! time `t`.
//!
//! The protocol is specific to the population size `n` and volume `v` it
//! was compiled for.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{Crn, OutputDistribution, Protocol, Reaction, ReactionSide, StateId};

/// An ordered pairwise transition with a mass-action rate, the intermediate
/// form between a reaction network and a protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderedRatedTransition {
    pub input: (StateId, StateId),
    pub output: (StateId, StateId),
    pub rate: f64,
}

/// Splits every reversible reaction into its forward (rate `k`) and reverse
/// (rate `k_rev`) parts, keeping input order, forward before reverse.
pub fn expand_reversible(crn: &Crn) -> Vec<Reaction> {
    let mut out = Vec::with_capacity(crn.reactions.len());
    for r in &crn.reactions {
        out.push(Reaction {
            reactants: r.reactants,
            products: r.products,
            rate: r.rate,
            reverse_rate: None,
        });
        if let Some(k_rev) = r.reverse_rate {
            out.push(Reaction {
                reactants: r.products,
                products: r.reactants,
                rate: k_rev,
                reverse_rate: None,
            });
        }
    }
    out
}

/// Converts irreversible reactions to ordered rated transitions for a
/// population of `n` agents in volume `v`, over a species universe of size
/// `q` (all species of the network, reachable or not).
pub fn to_ordered_transitions(
    reactions: &[Reaction],
    q: usize,
    n: u64,
    v: f64,
) -> Result<Vec<OrderedRatedTransition>> {
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    if !(v > 0.0) || v.is_nan() {
        return Err(Error::NonPositiveVolume(v));
    }
    let corrective = (n - 1) as f64 / (2.0 * v);
    let mut out = Vec::new();
    for r in reactions {
        debug_assert!(r.reverse_rate.is_none(), "expand reversibles first");
        match (r.reactants, r.products) {
            (ReactionSide::Bi(x, y), ReactionSide::Bi(p1, p2)) => {
                let rate = r.rate * corrective;
                out.push(OrderedRatedTransition { input: (x, y), output: (p1, p2), rate });
                if x != y {
                    out.push(OrderedRatedTransition { input: (y, x), output: (p2, p1), rate });
                }
            }
            (ReactionSide::Uni(x), ReactionSide::Uni(y)) => {
                for z in 0..q as u32 {
                    let z = StateId(z);
                    out.push(OrderedRatedTransition {
                        input: (x, z),
                        output: (y, z),
                        rate: r.rate,
                    });
                }
            }
            _ => unreachable!("reactant and product arities always match"),
        }
    }
    Ok(out)
}

/// Normalizes ordered transitions into a protocol and its time-scale
/// constant `m`: per ordered input pair, rates are summed (transitions with
/// identical input and output merge by rate addition first), `m` is the
/// maximum per-pair sum, each transition becomes an entry with probability
/// `rate / m`, and the residual probability of each pair is null.
pub fn normalize(
    transitions: &[OrderedRatedTransition],
    names: crate::model::StateNames,
) -> Result<(Protocol, f64)> {
    if transitions.is_empty() {
        return Err(Error::EmptyTransitionSet);
    }

    // Merge duplicates, preserving first-occurrence order per pair.
    let mut per_pair: HashMap<(StateId, StateId), Vec<((StateId, StateId), f64)>> = HashMap::new();
    let mut pair_order: Vec<(StateId, StateId)> = Vec::new();
    for t in transitions {
        let entries = per_pair.entry(t.input).or_insert_with(|| {
            pair_order.push(t.input);
            Vec::new()
        });
        if let Some(e) = entries.iter_mut().find(|(out, _)| *out == t.output) {
            e.1 += t.rate;
        } else {
            entries.push((t.output, t.rate));
        }
    }

    let m = pair_order
        .iter()
        .map(|p| per_pair[p].iter().map(|e| e.1).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(m > 0.0);

    let mut delta = HashMap::new();
    for input in pair_order {
        let entries: Vec<((StateId, StateId), f64)> = per_pair[&input]
            .iter()
            .filter(|(out, _)| *out != input) // identity transitions fold into null
            .map(|&(out, rate)| (out, rate / m))
            .collect();
        if !entries.is_empty() {
            delta.insert(input, OutputDistribution::from_entries(entries)?);
        }
    }
    let protocol = Protocol::new(names, delta, m)?;
    Ok((protocol, m))
}

/// Full pipeline: reversible expansion, ordered-transition conversion, and
/// normalization, producing the protocol for population size `n`.
pub fn compile(crn: &Crn, n: u64) -> Result<Protocol> {
    let irreversible = expand_reversible(crn);
    let transitions = to_ordered_transitions(&irreversible, crn.q(), n, crn.volume)?;
    let (protocol, _m) = normalize(&transitions, crn.names.clone())?;
    Ok(protocol)
}
