//! Hybrid run loop: per-step engine choice, both time models, snapshot
//! recording, and endpoint sampling.
//!
//! In the continuous model the scheduler works on the user time axis (CRN
//! time for compiled protocols, protocol time otherwise): interactions
//! arrive at rate `m*n`, so an interval of length `dt` holds a
//! `Poisson(m*n*dt)` number of them, drawn once per snapshot interval.
//! Batched and sequential stepping consume that count; Gillespie stepping
//! is event-driven with exponential holding times `Exp(m*W/(n-1))` and by
//! memorylessness needs no count conversion. Silence (`W == 0`) freezes the
//! run: remaining snapshots replicate the final configuration.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::batched::{batch_step, sequential_step, BatchScratch};
use crate::error::{Error, Result};
use crate::gillespie::{choose_nonnull, EnabledMass};
use crate::model::{Configuration, Protocol, TimeModel};
use crate::rng::RngStream;

/// Engine selection for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Switch between batched and Gillespie stepping per step.
    Auto,
    Batch,
    Gillespie,
    Sequential,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Method::Auto),
            "batch" => Ok(Method::Batch),
            "gillespie" => Ok(Method::Gillespie),
            "sequential" => Ok(Method::Sequential),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Simulated clock under either time model. In the discrete model the time
/// is exactly `interactions / n`; the interaction count is the source of
/// truth and the division happens on read.
#[derive(Clone, Copy, Debug)]
pub struct SimClock {
    pub time_model: TimeModel,
    pub t: f64,
    pub interactions: u64,
}

impl SimClock {
    pub fn start(time_model: TimeModel) -> Self {
        Self { time_model, t: 0.0, interactions: 0 }
    }
}

/// What to simulate and how to record it.
#[derive(Clone, Copy, Debug)]
pub struct RunSpec {
    /// End time, in the protocol's user time unit.
    pub horizon: f64,
    /// Time between recorded snapshots.
    pub interval: f64,
    pub method: Method,
    /// Threshold factor for the auto mode switch (default 2): Gillespie
    /// steps are used while the expected interactions per non-null event,
    /// `n(n-1)/W`, exceeds `switch_factor * sqrt(n)`.
    pub switch_factor: f64,
    pub time_model: TimeModel,
}

impl RunSpec {
    pub fn new(horizon: f64, interval: f64) -> Self {
        Self {
            horizon,
            interval,
            method: Method::Auto,
            switch_factor: 2.0,
            time_model: TimeModel::Continuous,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_time_model(mut self, time_model: TimeModel) -> Self {
        self.time_model = time_model;
        self
    }

    pub fn with_switch_factor(mut self, alpha: f64) -> Self {
        self.switch_factor = alpha;
        self
    }
}

/// Counts of engine decisions taken during a run.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct EngineCounters {
    /// Non-null events applied by Gillespie stepping (either time model).
    pub gillespie_events: u64,
    /// Batch steps completed (excluding capped sequential tails).
    pub batches: u64,
    /// Plain sequential interactions applied.
    pub sequential_steps: u64,
    /// Total interactions accounted for: every interaction (null included)
    /// in count-driven stepping, plus one per event-driven Gillespie event.
    pub interactions: u64,
}

/// Run provenance and results.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub n: u64,
    pub q: usize,
    /// State names in id order.
    pub states: Vec<String>,
    pub method: Method,
    pub time_model: TimeModel,
    pub switch_factor: f64,
    /// Time-scale constant; 1 unless the protocol was compiled from a
    /// reaction network.
    pub m: f64,
    /// Unit of the time column: protocol time, or network time when m != 1.
    pub time_unit: &'static str,
    /// Stable fingerprint of the protocol structure.
    pub protocol_hash: String,
    /// Time at which the run went silent (no applicable interaction), if it
    /// did. Exact for event-driven stepping; rounded up to the enclosing
    /// snapshot boundary for count-driven stepping.
    pub silent_at: Option<f64>,
    pub counters: EngineCounters,
}

#[derive(Clone, Debug, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub counts: Vec<u64>,
}

/// Ordered snapshots plus run metadata.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub metadata: RunMetadata,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_counts(&self) -> &[u64] {
        &self.snapshots.last().expect("at least the t=0 snapshot").counts
    }
}

/// Number of interactions to simulate up to `t_target`.
///
/// Continuous model: one `Poisson(m * n * dt)` draw for the interval.
/// Discrete model: exactly `floor(n * t_target) - interactions`, no
/// randomness.
pub fn interactions_until(
    t_target: f64,
    clock: &SimClock,
    n: u64,
    m: f64,
    rng: &mut RngStream,
) -> Result<u64> {
    let dt = t_target - clock.t;
    if dt < 0.0 {
        return Err(Error::NegativeHorizon(t_target));
    }
    match clock.time_model {
        TimeModel::Continuous => Ok(rng.poisson_sample(m * n as f64 * dt)),
        TimeModel::Discrete => {
            let target = (n as f64 * t_target).floor() as u64;
            Ok(target.saturating_sub(clock.interactions))
        }
    }
}

/// The exact snapshot grid: `0, interval, 2*interval, ...` computed as
/// `i * interval` (no cumulative addition), with a final snapshot at the
/// horizon even if the horizon is off-grid.
pub fn snapshot_times(horizon: f64, interval: f64) -> Vec<f64> {
    let mut times = vec![0.0];
    if horizon <= 0.0 {
        return times;
    }
    let per = horizon / interval;
    let rounded = per.round();
    let on_grid =
        rounded >= 1.0 && (rounded * interval - horizon).abs() <= 1e-9 * horizon.abs().max(1.0);
    let whole = if on_grid { rounded as u64 } else { per.floor() as u64 };
    for i in 1..=whole {
        let t = i as f64 * interval;
        if on_grid && i == whole {
            times.push(horizon);
        } else if t < horizon {
            times.push(t);
        }
    }
    if !on_grid {
        times.push(horizon);
    }
    times
}

fn prefer_gillespie(w: f64, n: u64, alpha: f64) -> bool {
    if w <= 0.0 {
        return true;
    }
    let nn = n as f64 * (n - 1) as f64;
    nn / w > alpha * (n as f64).sqrt()
}

enum CountEngine {
    Batch,
    Geometric,
    Sequential,
}

fn count_engine(method: Method, w: f64, n: u64, alpha: f64) -> CountEngine {
    match method {
        Method::Batch => CountEngine::Batch,
        Method::Sequential => CountEngine::Sequential,
        Method::Gillespie => CountEngine::Geometric,
        Method::Auto => {
            if prefer_gillespie(w, n, alpha) {
                CountEngine::Geometric
            } else {
                CountEngine::Batch
            }
        }
    }
}

/// Consumes exactly `k` interactions in count space, choosing the engine
/// per step. Null interactions cost nothing once the configuration is
/// silent. The enabled mass is fresh on return.
#[allow(clippy::too_many_arguments)]
fn consume_interactions(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    scratch: &mut BatchScratch,
    mass: &mut EnabledMass,
    method: Method,
    alpha: f64,
    counters: &mut EngineCounters,
    mut k: u64,
) -> Result<()> {
    let n = config.n();
    let mut mass_stale = false;
    while k > 0 {
        if mass_stale {
            mass.resync(config, protocol);
            mass_stale = false;
        }
        if mass.is_silent() && !matches!(method, Method::Sequential) {
            // Every remaining interaction is null.
            counters.interactions += k;
            break;
        }
        match count_engine(method, mass.w(), n, alpha) {
            CountEngine::Batch => {
                let res = batch_step(config, protocol, rng, scratch, k)?;
                k -= res.interactions;
                counters.batches += 1;
                counters.interactions += res.interactions;
                mass.resync(config, protocol);
            }
            CountEngine::Geometric => {
                let p = (mass.w() / (n as f64 * (n - 1) as f64)).min(1.0);
                let g = rng.geometric_sample(p)?;
                if g > k {
                    // No non-null interaction within the budget; the
                    // overshoot is discarded, which is exact by
                    // memorylessness of the geometric law.
                    counters.interactions += k;
                    k = 0;
                } else {
                    k -= g;
                    counters.interactions += g;
                    let (input, output) = choose_nonnull(config, protocol, rng, mass.w());
                    mass.apply_transition(config, protocol, input, output);
                    counters.gillespie_events += 1;
                }
            }
            CountEngine::Sequential => {
                sequential_step(config, protocol, rng)?;
                k -= 1;
                counters.sequential_steps += 1;
                counters.interactions += 1;
                mass_stale = true;
            }
        }
    }
    if mass_stale {
        mass.resync(config, protocol);
    }
    Ok(())
}

/// Runs exactly `interactions` interactions with the given engine choice,
/// without snapshot bookkeeping. The count-space interface used by the
/// equivalence tests and benchmarks.
pub fn run_for_interactions(
    config: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    interactions: u64,
    method: Method,
    switch_factor: f64,
) -> Result<EngineCounters> {
    let mut mass = EnabledMass::compute(config, protocol);
    let mut scratch = BatchScratch::new(protocol.q());
    let mut counters = EngineCounters::default();
    consume_interactions(
        config,
        protocol,
        rng,
        &mut scratch,
        &mut mass,
        method,
        switch_factor,
        &mut counters,
        interactions,
    )?;
    Ok(counters)
}

/// Simulates the protocol from `initial` and records snapshots on the
/// arithmetic grid. See the module docs for the stepping semantics.
pub fn run(
    initial: &Configuration,
    protocol: &Protocol,
    spec: &RunSpec,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let n = initial.n();
    if n < 2 {
        return Err(Error::PopulationTooSmall(n));
    }
    if spec.horizon < 0.0 || spec.horizon.is_nan() {
        return Err(Error::NegativeHorizon(spec.horizon));
    }
    if !(spec.interval > 0.0) || spec.interval.is_nan() {
        return Err(Error::NonPositiveInterval(spec.interval));
    }
    if spec.time_model == TimeModel::Discrete && protocol.m() != 1.0 {
        return Err(Error::DiscreteTimeForCompiledCrn(protocol.m()));
    }

    let grid = snapshot_times(spec.horizon, spec.interval);
    let mut cfg = initial.clone();
    let mut clock = SimClock::start(spec.time_model);
    let mut mass = EnabledMass::compute(&cfg, protocol);
    let mut scratch = BatchScratch::new(protocol.q());
    let mut counters = EngineCounters::default();
    let mut silent_at: Option<f64> = None;

    let mut snapshots = Vec::with_capacity(grid.len());
    snapshots.push(Snapshot { time: 0.0, counts: cfg.counts().to_vec() });

    for &t_target in &grid[1..] {
        if silent_at.is_none() {
            let silenced = match spec.time_model {
                TimeModel::Discrete => {
                    let k = interactions_until(t_target, &clock, n, protocol.m(), rng)?;
                    consume_interactions(
                        &mut cfg,
                        protocol,
                        rng,
                        &mut scratch,
                        &mut mass,
                        spec.method,
                        spec.switch_factor,
                        &mut counters,
                        k,
                    )?;
                    clock.interactions += k;
                    clock.t = t_target;
                    mass.is_silent().then_some(t_target)
                }
                TimeModel::Continuous => advance_continuous(
                    &mut cfg,
                    protocol,
                    rng,
                    &mut scratch,
                    &mut mass,
                    spec,
                    &mut counters,
                    &mut clock,
                    t_target,
                )?,
            };
            if let Some(t_silent) = silenced {
                silent_at = Some(t_silent);
            }
        }
        snapshots.push(Snapshot { time: t_target, counts: cfg.counts().to_vec() });
    }

    let m = protocol.m();
    Ok(Trajectory {
        metadata: RunMetadata {
            seed: rng.seed(),
            n,
            q: protocol.q(),
            states: protocol.names().iter().map(|(_, s)| s.to_string()).collect(),
            method: spec.method,
            time_model: spec.time_model,
            switch_factor: spec.switch_factor,
            m,
            time_unit: if m == 1.0 { "protocol" } else { "crn" },
            protocol_hash: format!("{:016x}", protocol.fingerprint()),
            silent_at,
            counters,
        },
        snapshots,
    })
}

/// Advances to `t_target` in the continuous model. Event-driven Gillespie
/// stepping is used while selected; otherwise the rest of the interval is
/// converted to a Poisson interaction count and consumed in count space.
/// Returns the silence time if the run went silent.
#[allow(clippy::too_many_arguments)]
fn advance_continuous(
    cfg: &mut Configuration,
    protocol: &Protocol,
    rng: &mut RngStream,
    scratch: &mut BatchScratch,
    mass: &mut EnabledMass,
    spec: &RunSpec,
    counters: &mut EngineCounters,
    clock: &mut SimClock,
    t_target: f64,
) -> Result<Option<f64>> {
    let n = cfg.n();
    loop {
        if mass.is_silent() {
            let at = clock.t;
            clock.t = t_target;
            return Ok(Some(at));
        }
        let event_driven = match spec.method {
            Method::Gillespie => true,
            Method::Auto => prefer_gillespie(mass.w(), n, spec.switch_factor),
            Method::Batch | Method::Sequential => false,
        };
        if event_driven {
            let rate = protocol.m() * mass.w() / (n - 1) as f64;
            let dt = rng.exp_sample(rate)?;
            if clock.t + dt > t_target {
                // The event lands past the boundary: record the pre-event
                // configuration there and redraw later, which is exact by
                // memorylessness of the exponential.
                clock.t = t_target;
                return Ok(None);
            }
            clock.t += dt;
            let (input, output) = choose_nonnull(cfg, protocol, rng, mass.w());
            mass.apply_transition(cfg, protocol, input, output);
            counters.gillespie_events += 1;
            counters.interactions += 1;
        } else {
            let k = rng.poisson_sample(protocol.m() * n as f64 * (t_target - clock.t));
            consume_interactions(
                cfg,
                protocol,
                rng,
                scratch,
                mass,
                spec.method,
                spec.switch_factor,
                counters,
                k,
            )?;
            clock.interactions += k;
            clock.t = t_target;
            return Ok(mass.is_silent().then_some(t_target));
        }
    }
}

/// Runs `trials` independent simulations to time `t` and histograms the
/// final configurations. Trials fan out across worker threads, each with
/// the sub-stream `rng.derive(trial_index)`; the merge is deterministic.
pub fn sample_endpoint(
    initial: &Configuration,
    protocol: &Protocol,
    t: f64,
    trials: u64,
    method: Method,
    time_model: TimeModel,
    switch_factor: f64,
    rng: &RngStream,
) -> Result<HashMap<Vec<u64>, u64>> {
    let spec = RunSpec::new(t, if t > 0.0 { t } else { 1.0 })
        .with_method(method)
        .with_time_model(time_model)
        .with_switch_factor(switch_factor);
    let finals: Vec<Vec<u64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut sub = rng.derive(i);
            run(initial, protocol, &spec, &mut sub).map(|tr| tr.final_counts().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hist: HashMap<Vec<u64>, u64> = HashMap::new();
    for counts in finals {
        *hist.entry(counts).or_default() += 1;
    }
    Ok(hist)
}
