//! Minimal-set and hypothesis-pool samplers: uniform, guided categorical, and
//! a progressive (priority-ordered) enumerator, plus the ratio prefilter.
//!
//! Uniform sampling is guided sampling with uniform weights — one code path —
//! so estimators that differ only in guidance share their random sequences.

use crate::geometry::Correspondence;
use crate::rng::Rng;
use crate::solvers::{MinimalSet, SolveError};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

pub const DEFAULT_MAX_RESAMPLE: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("minimal set needs {needed} observations, got {got}")]
    NotEnoughObservations { needed: usize, got: usize },
    #[error("only {nonzero} observations have nonzero weight, need {needed}")]
    InsufficientSupport { nonzero: usize, needed: usize },
    #[error("exceeded {attempts} consecutive resample attempts")]
    ResampleBudgetExceeded { attempts: usize },
    #[error("correspondence {index} has no ratio attached")]
    MissingRatio { index: usize },
    #[error("invalid guidance distribution: {0}")]
    InvalidDistribution(&'static str),
}

/// Categorical sampling distribution over an observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceDistribution {
    weights: Vec<f64>,
}

impl GuidanceDistribution {
    /// Validates non-negativity and unit total mass (within 1e-9).
    pub fn new(weights: Vec<f64>) -> Result<Self, SampleError> {
        if weights.is_empty() {
            return Err(SampleError::InvalidDistribution("empty weight vector"));
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(SampleError::InvalidDistribution("weights must be finite and >= 0"));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(SampleError::InvalidDistribution("weights must sum to 1"));
        }
        Ok(GuidanceDistribution { weights })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over empty set");
        GuidanceDistribution { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nonzero_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    fn cdf(&self) -> Cdf {
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut total = 0.0;
        for &w in &self.weights {
            total += w;
            cum.push(total);
        }
        Cdf { cum, total }
    }
}

/// Cumulative table for inverse-CDF draws.
struct Cdf {
    cum: Vec<f64>,
    total: f64,
}

impl Cdf {
    fn draw(&self, rng: &mut Rng) -> usize {
        let u = rng.uniform_f64() * self.total;
        let i = self.cum.partition_point(|&c| c <= u);
        if i < self.cum.len() {
            i
        } else {
            // u rounded up to the total: take the last index carrying mass.
            let mut j = self.cum.len() - 1;
            while j > 0 && self.cum[j - 1] >= self.total {
                j -= 1;
            }
            j
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Hypotheses per pool (M).
    pub pool_size: usize,
    /// Observations per minimal set (N).
    pub minimal_set_size: usize,
    pub seed: u64,
    pub max_resample_attempts: usize,
}

impl SamplerConfig {
    pub fn new(pool_size: usize, minimal_set_size: usize, seed: u64) -> Self {
        assert!(pool_size >= 1 && minimal_set_size >= 1, "pool and set sizes must be positive");
        SamplerConfig {
            pool_size,
            minimal_set_size,
            seed,
            max_resample_attempts: DEFAULT_MAX_RESAMPLE,
        }
    }
}

/// One scored hypothesis with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry<M> {
    pub model: M,
    pub minimal_set: MinimalSet,
    pub score: f64,
    /// Sum of log sampling weights of the drawn observations (independence
    /// model; duplicate redraws are not reflected here).
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisPool<M> {
    pub entries: Vec<PoolEntry<M>>,
}

impl<M> HypothesisPool<M> {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }
}

/// Uniform minimal set: guided sampling with uniform weights.
pub fn sample_minimal_set_uniform(
    n_observations: usize,
    n_minimal: usize,
    rng: &mut Rng,
) -> Result<MinimalSet, SampleError> {
    if n_minimal > n_observations {
        return Err(SampleError::NotEnoughObservations {
            needed: n_minimal,
            got: n_observations,
        });
    }
    sample_minimal_set_guided(&GuidanceDistribution::uniform(n_observations), n_minimal, rng)
}

/// Guided minimal set: independent categorical draws; an attempt containing a
/// duplicate is discarded and the whole set redrawn. Indices appear in draw
/// order.
pub fn sample_minimal_set_guided(
    dist: &GuidanceDistribution,
    n_minimal: usize,
    rng: &mut Rng,
) -> Result<MinimalSet, SampleError> {
    draw_distinct(&dist.cdf(), dist.nonzero_count(), n_minimal, DEFAULT_MAX_RESAMPLE, rng)
}

fn draw_distinct(
    cdf: &Cdf,
    nonzero: usize,
    n_minimal: usize,
    max_attempts: usize,
    rng: &mut Rng,
) -> Result<MinimalSet, SampleError> {
    if nonzero < n_minimal {
        return Err(SampleError::InsufficientSupport { nonzero, needed: n_minimal });
    }
    // A duplicate discards the whole attempt. The accepted set is then the
    // independent product conditioned on distinctness, so the conditioning
    // factor is the same for every set — a baseline subtracts it exactly from
    // score-function gradients, keeping them unbiased under the recorded
    // independent log-probabilities.
    let mut rejects_in_a_row = 0;
    'attempt: loop {
        let mut indices = Vec::with_capacity(n_minimal);
        for _ in 0..n_minimal {
            let i = cdf.draw(rng);
            if indices.contains(&i) {
                rejects_in_a_row += 1;
                if rejects_in_a_row >= max_attempts {
                    return Err(SampleError::ResampleBudgetExceeded { attempts: max_attempts });
                }
                continue 'attempt;
            }
            indices.push(i);
        }
        return Ok(MinimalSet(indices));
    }
}

/// Draws a pool of `config.pool_size` scored hypotheses. The solver may emit
/// several candidates per minimal set (seven-point); the best-scoring one is
/// kept. Degenerate minimal sets are rejected and redrawn against the
/// resample budget.
pub fn sample_pool<M>(
    dist: &GuidanceDistribution,
    config: &SamplerConfig,
    rng: &mut Rng,
    mut solve: impl FnMut(&MinimalSet) -> Result<Vec<M>, SolveError>,
    mut score: impl FnMut(&M) -> f64,
) -> Result<HypothesisPool<M>, SampleError> {
    let cdf = dist.cdf();
    let nonzero = dist.nonzero_count();
    let mut entries = Vec::with_capacity(config.pool_size);
    for _ in 0..config.pool_size {
        let mut degenerate_in_a_row = 0;
        let entry = loop {
            let set = draw_distinct(
                &cdf,
                nonzero,
                config.minimal_set_size,
                config.max_resample_attempts,
                rng,
            )?;
            let candidates = match solve(&set) {
                Ok(c) if !c.is_empty() => c,
                _ => {
                    degenerate_in_a_row += 1;
                    if degenerate_in_a_row >= config.max_resample_attempts {
                        return Err(SampleError::ResampleBudgetExceeded {
                            attempts: config.max_resample_attempts,
                        });
                    }
                    continue;
                }
            };
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            let mut scores = Vec::with_capacity(candidates.len());
            for (i, c) in candidates.iter().enumerate() {
                let s = score(c);
                if s > best_score {
                    best_score = s;
                    best = i;
                }
                scores.push(s);
            }
            let model = candidates.into_iter().nth(best).unwrap();
            let log_prob: f64 = set.indices().iter().map(|&i| dist.weights[i].ln()).sum();
            break PoolEntry { model, minimal_set: set, score: scores[best], log_prob };
        };
        entries.push(entry);
    }
    Ok(HypothesisPool { entries })
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

/// Priority-ordered progressive enumeration of minimal sets: draws come from a
/// growing prefix of the priority-sorted observations. The prefix starts at
/// the minimal-set size, grows by one every `growth` draws, and grows
/// immediately once all sets of the current prefix have been emitted.
/// Previously emitted sets are not repeated until the full set is exhausted.
pub fn progressive_sampler(
    priorities: &[f64],
    n_minimal: usize,
    n_sets: usize,
    growth: usize,
    seed: u64,
) -> Result<Vec<MinimalSet>, SampleError> {
    assert!(growth >= 1, "growth rate must be positive");
    assert!(
        priorities.iter().all(|p| p.is_finite()),
        "progressive sampler needs finite priorities"
    );
    let n = priorities.len();
    if n_minimal > n {
        return Err(SampleError::NotEnoughObservations { needed: n_minimal, got: n });
    }
    // Sort by priority descending, ties by index ascending.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        priorities[b].partial_cmp(&priorities[a]).unwrap().then(a.cmp(&b))
    });

    let mut rng = Rng::from_seed(seed);
    let mut emitted: HashSet<Vec<usize>> = HashSet::new(); // sorted position vectors
    let total_sets = binomial(n, n_minimal);
    let mut out = Vec::with_capacity(n_sets);
    let mut prefix = n_minimal;
    for d in 0..n_sets {
        prefix = prefix.max((n_minimal + d / growth).min(n));
        // Skip past exhausted prefixes.
        while prefix < n {
            let inside =
                emitted.iter().filter(|s| *s.last().unwrap() < prefix).count() as u128;
            if inside >= binomial(prefix, n_minimal) {
                prefix += 1;
            } else {
                break;
            }
        }
        let dedup = (emitted.len() as u128) < total_sets;
        let set = loop {
            let mut positions = Vec::with_capacity(n_minimal);
            while positions.len() < n_minimal {
                let p = rng.below(prefix);
                if !positions.contains(&p) {
                    positions.push(p);
                }
            }
            positions.sort_unstable();
            if !dedup || !emitted.contains(&positions) {
                break positions;
            }
        };
        out.push(MinimalSet(set.iter().map(|&p| order[p]).collect()));
        emitted.insert(set);
    }
    Ok(out)
}

/// Keeps correspondences whose ratio is strictly below the threshold,
/// preserving order; also returns the kept original indices.
pub fn ratio_filter(
    corrs: &[Correspondence],
    threshold: f64,
) -> Result<(Vec<Correspondence>, Vec<usize>), SampleError> {
    let mut kept = Vec::new();
    let mut kept_indices = Vec::new();
    for (i, c) in corrs.iter().enumerate() {
        let ratio = c.ratio.ok_or(SampleError::MissingRatio { index: i })?;
        if ratio < threshold {
            kept.push(*c);
            kept_indices.push(i);
        }
    }
    Ok((kept, kept_indices))
}
