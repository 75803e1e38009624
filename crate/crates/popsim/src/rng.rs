//! Seeded random source and the exact samplers shared by every engine.
//!
//! All randomness in a simulation flows through one [`RngStream`] so that a
//! seed fully determines the trajectory. Samplers are exact for arbitrary
//! parameters: large-mean Poisson, binomial, and hypergeometric draws use
//! rejection algorithms with exact acceptance ratios, never a normal
//! approximation.
//!
//! Call order is part of the reproducibility contract: engines document the
//! sequence of draws they make, and two streams with the same seed produce
//! identical outputs for identical call sequences.

use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution, Exp, Hypergeometric, Open01, Poisson};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Seeded pseudo-random stream. One per simulation instance.
///
/// Backed by xoshiro256++ with SplitMix64 seed expansion; fast, and
/// statistically solid for simulation work (not cryptographic).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    gen: Xoshiro256PlusPlus,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            gen: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    /// Fresh stream seeded from OS entropy. The seed is recorded so the run
    /// can be reproduced.
    pub fn from_entropy() -> Self {
        Self::new(rand::rng().random())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent sub-stream for trial `index`: the master seed XOR the
    /// trial index, passed through the generator's seeding function.
    pub fn derive(&self, index: u64) -> RngStream {
        RngStream::new(self.seed ^ index)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.gen.random()
    }

    /// Uniform in the open interval `(0, 1)`.
    pub fn open01(&mut self) -> f64 {
        self.gen.sample(Open01)
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        self.gen.random_range(0..bound)
    }

    /// Exponential variate with the given rate (mean `1/rate`).
    pub fn exp_sample(&mut self, rate: f64) -> Result<f64> {
        if !(rate > 0.0) {
            return Err(Error::NonPositiveRate(rate));
        }
        let dist = Exp::new(rate).map_err(|_| Error::NonPositiveRate(rate))?;
        Ok(dist.sample(&mut self.gen))
    }

    /// Poisson variate. Exact for all means, including means far beyond the
    /// inversion regime (the large-mean path is a rejection sampler with an
    /// exact acceptance ratio, not a normal approximation).
    pub fn poisson_sample(&mut self, mean: f64) -> u64 {
        debug_assert!(mean >= 0.0 && mean.is_finite());
        if mean <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(mean).expect("positive finite mean");
        let x: f64 = dist.sample(&mut self.gen);
        x as u64
    }

    /// Binomial variate on `trials` trials with success probability `p`.
    pub fn binomial_sample(&mut self, trials: u64, p: f64) -> Result<u64> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidProbability(p));
        }
        if trials == 0 || p == 0.0 {
            return Ok(0);
        }
        if p == 1.0 {
            return Ok(trials);
        }
        let dist = Binomial::new(trials, p).map_err(|_| Error::InvalidProbability(p))?;
        Ok(dist.sample(&mut self.gen))
    }

    /// Splits `total` into `probs.len()` buckets, exactly multinomial, via
    /// sequential conditional binomials. `probs` must sum to 1.
    pub fn multinomial_split(&mut self, total: u64, probs: &[f64], out: &mut Vec<u64>) -> Result<()> {
        out.clear();
        out.resize(probs.len(), 0);
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidProbability(sum));
        }
        let mut remaining = total;
        let mut rest = 1.0f64;
        for (i, &p) in probs.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            if i + 1 == probs.len() {
                out[i] = remaining;
                break;
            }
            if p < 0.0 {
                return Err(Error::InvalidProbability(p));
            }
            let cond = if rest <= 0.0 { 0.0 } else { (p / rest).clamp(0.0, 1.0) };
            let x = self.binomial_sample(remaining, cond)?;
            out[i] = x;
            remaining -= x;
            rest -= p;
        }
        Ok(())
    }

    /// Hypergeometric variate: number of successes when drawing `draws`
    /// items without replacement from `successes + failures` items. Exact up
    /// to populations of 10^12.
    pub fn hypergeometric_sample(&mut self, successes: u64, failures: u64, draws: u64) -> Result<u64> {
        let population = successes + failures;
        if draws > population {
            return Err(Error::DrawsExceedPopulation { draws, population });
        }
        if draws == 0 {
            return Ok(0);
        }
        if draws == population {
            return Ok(successes);
        }
        // Low-variance draws take the O(sd) mode-inversion walk: its setup
        // is O(1), where the library sampler's inverse-transform setup costs
        // O(spread) and underflows in a corner of this regime. High-variance
        // draws go to the library's H2PE rejection sampler, which is O(1)
        // per draw exactly where the walk would be slow.
        let nf = population as f64;
        let p = successes as f64 / nf;
        let variance = draws as f64 * p * (1.0 - p) * (nf - draws as f64) / (nf - 1.0);
        if variance <= 4096.0 {
            return Ok(self.hypergeometric_mode_inversion(successes, failures, draws));
        }
        match Hypergeometric::new(population, successes, draws) {
            Ok(dist) => Ok(dist.sample(&mut self.gen)),
            Err(_) => Ok(self.hypergeometric_mode_inversion(successes, failures, draws)),
        }
    }

    /// Exact hypergeometric sampling by inverse transform anchored at the
    /// mode: the mode probability comes from log-gamma (it is at least
    /// 1/(support size), so it cannot underflow) and the walk outward uses
    /// the pmf recurrence. O(standard deviation) expected steps.
    fn hypergeometric_mode_inversion(&mut self, successes: u64, failures: u64, draws: u64) -> u64 {
        use statrs::function::gamma::ln_gamma;
        let (big_n, big_k, n) = (successes + failures, successes, draws);
        let lo = n.saturating_sub(failures);
        let hi = big_k.min(n);
        debug_assert!(lo <= hi);
        if lo == hi {
            return lo;
        }
        let mode = (((n + 1) as f64) * ((big_k + 1) as f64) / ((big_n + 2) as f64)) as u64;
        let mode = mode.clamp(lo, hi);

        let ln_choose = |a: u64, b: u64| -> f64 {
            ln_gamma((a + 1) as f64) - ln_gamma((b + 1) as f64) - ln_gamma((a - b + 1) as f64)
        };
        let ln_p_mode = ln_choose(big_k, mode) + ln_choose(big_n - big_k, n - mode)
            - ln_choose(big_n, n);
        let p_mode = ln_p_mode.exp();

        // Ratio p(x+1)/p(x) = (K-x)(n-x) / ((x+1)(failures+x+1-n)); the
        // second factor is positive for x >= lo.
        let ratio_up = |x: u64| -> f64 {
            ((big_k - x) as f64 * (n - x) as f64)
                / ((x + 1) as f64 * (failures + x + 1 - n) as f64)
        };

        let mut u = self.uniform();
        u -= p_mode;
        if u < 0.0 {
            return mode;
        }
        let (mut down_x, mut down_p) = (mode, p_mode);
        let (mut up_x, mut up_p) = (mode, p_mode);
        loop {
            let can_down = down_x > lo;
            let can_up = up_x < hi;
            if can_up && (!can_down || up_p >= down_p) {
                up_p *= ratio_up(up_x);
                up_x += 1;
                u -= up_p;
                if u < 0.0 {
                    return up_x;
                }
            } else if can_down {
                down_p /= ratio_up(down_x - 1);
                down_x -= 1;
                u -= down_p;
                if u < 0.0 {
                    return down_x;
                }
            } else {
                // Accumulated rounding left a sliver of mass; return the
                // heavier tail end.
                return if up_p >= down_p { up_x } else { down_x };
            }
        }
    }

    /// Draws `draws` items without replacement from an urn with the given
    /// per-state counts, as sequential hypergeometric draws over coordinates.
    /// The result sums to `draws` and is coordinatewise bounded by `urn`.
    pub fn multivariate_hypergeometric(&mut self, urn: &[u64], draws: u64, out: &mut Vec<u64>) -> Result<()> {
        out.clear();
        out.resize(urn.len(), 0);
        let mut population: u64 = urn.iter().sum();
        if draws > population {
            return Err(Error::DrawsExceedPopulation { draws, population });
        }
        let mut remaining = draws;
        for (i, &c) in urn.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let rest = population - c;
            let x = self.hypergeometric_sample(c, rest, remaining)?;
            out[i] = x;
            remaining -= x;
            population = rest;
        }
        Ok(())
    }

    /// Number of Bernoulli(p) trials up to and including the first success;
    /// support `{1, 2, ...}`. Sampled as `ceil(ln U / ln(1-p))`, exact.
    pub fn geometric_sample(&mut self, p: f64) -> Result<u64> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        if p == 1.0 {
            return Ok(1);
        }
        let u: f64 = self.open01();
        let g = (u.ln() / (-p).ln_1p()).ceil();
        if g < 1.0 {
            return Ok(1);
        }
        // Saturates for astronomically small p; far beyond any feasible run.
        Ok(g as u64)
    }
}

impl rand::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.gen.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.gen.fill_bytes(dest)
    }
}
