//! Discrete-event simulation of individual user transitions: the
//! brute-force counterpart of the mean-field solver, and the synthetic
//! data generator used for fitting experiments.
//!
//! Story encounters through the current list arrive as a nonhomogeneous
//! Poisson process, sampled exactly by thinning: between state changes the
//! story only sinks down its list, so the encounter intensity is
//! non-increasing and its current value is a valid upper bound. Each fan
//! in the pool independently returns at a fixed rate and leaves the pool
//! permanently once it has seen the story, voting or not. Every vote adds
//! a Poisson-distributed batch of fresh fans with the mean-field mean.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use thiserror::Error;

use crate::fitting::ObservationSeries;
use crate::model::{
    fan_increment, front_page, page_fraction, upcoming_page, ListState, ModelError, SiteParams,
    StoryParams,
};
use crate::ode::{Trajectory, TrajectoryKind, TrajectorySample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("invalid Monte Carlo control: {0}")]
    InvalidControls(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Ensemble settings.
#[derive(Debug, Clone, PartialEq)]
pub struct McControls {
    pub seed: u64,
    pub n_runs: usize,
    pub t_end: f64,
    /// Times at which ensemble statistics are recorded.
    pub record_grid: Vec<f64>,
}

impl McControls {
    /// Hourly recording grid from 0 to `t_end` inclusive.
    pub fn hourly(seed: u64, n_runs: usize, t_end: f64) -> Self {
        let mut record_grid: Vec<f64> = (0..)
            .map(|k| k as f64 * 60.0)
            .take_while(|&t| t < t_end)
            .collect();
        record_grid.push(t_end);
        McControls {
            seed,
            n_runs,
            t_end,
            record_grid,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n_runs < 1 {
            return Err(McError::InvalidControls("n_runs must be >= 1".into()));
        }
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(McError::InvalidControls("t_end must be finite and >= 0".into()));
        }
        if self.record_grid.is_empty() {
            return Err(McError::InvalidControls("record_grid must be non-empty".into()));
        }
        for pair in self.record_grid.windows(2) {
            if pair[1] <= pair[0] {
                return Err(McError::InvalidControls(
                    "record_grid must be strictly increasing".into(),
                ));
            }
        }
        let first = self.record_grid[0];
        let last = *self.record_grid.last().unwrap();
        if first < 0.0 || last > self.t_end {
            return Err(McError::InvalidControls(
                "record_grid must lie within [0, t_end]".into(),
            ));
        }
        Ok(())
    }
}

/// Aggregated statistics over an ensemble of independent runs.
#[derive(Debug, Clone, PartialEq)]
pub struct McEnsemble {
    pub record_grid: Vec<f64>,
    /// Mean vote count at each grid time.
    pub mean_votes: Vec<f64>,
    /// Sample variance of the vote count at each grid time.
    pub var_votes: Vec<f64>,
    pub promoted_fraction: f64,
    /// Mean promotion time over the promoted runs.
    pub mean_promotion_time: Option<f64>,
    /// Latest promotion time over the promoted runs: from here on, the
    /// promotion transient is over for the whole ensemble.
    pub last_promotion_time: Option<f64>,
    pub per_run_finals: Vec<u64>,
}

/// SplitMix64 output function; gives decorrelated, order-independent
/// per-run seeds from (base seed, run index).
pub(crate) fn substream_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One stochastic run of a story's vote accumulation up to `t_end`.
///
/// The returned trajectory records every state change (vote, fan arrival,
/// removal from the upcoming list) and is piecewise constant between them.
pub fn simulate_once<R: Rng>(
    story: &StoryParams,
    site: &SiteParams,
    t_end: f64,
    rng: &mut R,
) -> Trajectory {
    let threshold = site.promotion_threshold as u64;
    let mut t = 0.0f64;
    let mut votes: u64 = 1;
    let mut fan_pool: u64 = story.submitter_fans;
    let mut promoted_at: Option<f64> = if votes >= threshold { Some(0.0) } else { None };

    let list_at = |t: f64, promoted_at: Option<f64>| match promoted_at {
        Some(_) => ListState::Front,
        None if t <= site.upcoming_window => ListState::Upcoming,
        None => ListState::Removed,
    };
    let page_at = |t: f64, promoted_at: Option<f64>| match promoted_at {
        Some(tp) => front_page(t, tp, site),
        None if t <= site.upcoming_window => upcoming_page(t, site),
        None => 0.0,
    };
    // Encounter rate through whichever list the story is on. Non-increasing
    // between events, so its value at the interval start bounds the future.
    let list_rate = |t: f64, promoted_at: Option<f64>| match promoted_at {
        Some(tp) => {
            site.visit_rate
                * page_fraction(front_page(t, tp, site).max(1.0), site.pages_mean, site.pages_shape)
                    .expect("front page >= 1")
        }
        None if t <= site.upcoming_window => {
            site.upcoming_fraction
                * site.visit_rate
                * page_fraction(upcoming_page(t, site), site.pages_mean, site.pages_shape)
                    .expect("upcoming page >= 1")
        }
        None => 0.0,
    };

    let mut samples = vec![TrajectorySample {
        t: 0.0,
        votes: 1.0,
        fan_pool: fan_pool as f64,
        list: list_at(0.0, promoted_at),
        page: 1.0,
    }];

    loop {
        // Strict comparison: the upcoming channel is dead on the open
        // interval after the window, which is what the bound covers.
        let upcoming_live = promoted_at.is_none() && t < site.upcoming_window;
        let bound_list = if promoted_at.is_some() || upcoming_live {
            list_rate(t, promoted_at)
        } else {
            0.0
        };
        let bound = bound_list + site.fan_visit_rate * fan_pool as f64;
        let regime_end = if upcoming_live {
            site.upcoming_window.min(t_end)
        } else {
            t_end
        };

        if bound <= 0.0 {
            if regime_end >= t_end {
                break;
            }
            t = regime_end;
            samples.push(TrajectorySample {
                t,
                votes: votes as f64,
                fan_pool: fan_pool as f64,
                list: ListState::Removed,
                page: 0.0,
            });
            continue;
        }

        let dt = Exp::new(bound).expect("positive rate").sample(rng);
        if t + dt > regime_end {
            if regime_end >= t_end {
                break;
            }
            // Crossing the upcoming-window expiry; the exponential clock is
            // memoryless, so restarting at the boundary is exact.
            t = regime_end;
            samples.push(TrajectorySample {
                t,
                votes: votes as f64,
                fan_pool: fan_pool as f64,
                list: ListState::Removed,
                page: 0.0,
            });
            continue;
        }
        t += dt;

        let u: f64 = rng.random::<f64>() * bound;
        let list_now = list_rate(t, promoted_at);
        let fan_rate = site.fan_visit_rate * fan_pool as f64;
        let via_fan = if u < list_now {
            false
        } else if u < list_now + fan_rate {
            true
        } else {
            continue; // thinning rejection
        };

        if via_fan {
            // The fan has now seen the story and never returns to it.
            fan_pool -= 1;
        }
        let voted = rng.random::<f64>() < story.interest;
        if voted {
            let mean_gain =
                fan_increment(votes as f64, site).expect("votes >= 1");
            votes += 1;
            let gain = Poisson::new(mean_gain).expect("positive mean").sample(rng) as u64;
            fan_pool += gain;
            if promoted_at.is_none() && votes >= threshold {
                promoted_at = Some(t);
            }
        }
        if voted || via_fan {
            samples.push(TrajectorySample {
                t,
                votes: votes as f64,
                fan_pool: fan_pool as f64,
                list: list_at(t, promoted_at),
                page: page_at(t, promoted_at),
            });
        }
    }

    Trajectory {
        kind: TrajectoryKind::Stochastic,
        samples,
        promoted_at,
        final_votes: votes as f64,
    }
}

/// Run `controls.n_runs` independent simulations on decorrelated
/// substreams and aggregate them in run order. The result depends only on
/// the controls, never on evaluation order.
pub fn simulate_ensemble(
    story: &StoryParams,
    site: &SiteParams,
    controls: &McControls,
) -> Result<McEnsemble, McError> {
    site.validate()?;
    story.validate()?;
    controls.validate()?;

    let grid = &controls.record_grid;
    let mut mean = vec![0.0f64; grid.len()];
    let mut m2 = vec![0.0f64; grid.len()];
    let mut per_run_finals = Vec::with_capacity(controls.n_runs);
    let mut promoted_runs = 0usize;
    let mut promotion_time_sum = 0.0f64;
    let mut last_promotion_time: Option<f64> = None;

    for run in 0..controls.n_runs {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(controls.seed, run as u64));
        let traj = simulate_once(story, site, controls.t_end, &mut rng);
        let n = (run + 1) as f64;
        for (g, &tg) in grid.iter().enumerate() {
            let x = traj.votes_at(tg);
            let delta = x - mean[g];
            mean[g] += delta / n;
            m2[g] += delta * (x - mean[g]);
        }
        per_run_finals.push(traj.final_votes as u64);
        if let Some(tp) = traj.promoted_at {
            promoted_runs += 1;
            promotion_time_sum += tp;
            last_promotion_time = Some(last_promotion_time.map_or(tp, |m: f64| m.max(tp)));
        }
    }

    let var: Vec<f64> = if controls.n_runs > 1 {
        m2.iter().map(|v| v / (controls.n_runs - 1) as f64).collect()
    } else {
        vec![0.0; grid.len()]
    };

    Ok(McEnsemble {
        record_grid: grid.clone(),
        mean_votes: mean,
        var_votes: var,
        promoted_fraction: promoted_runs as f64 / controls.n_runs as f64,
        mean_promotion_time: if promoted_runs > 0 {
            Some(promotion_time_sum / promoted_runs as f64)
        } else {
            None
        },
        last_promotion_time,
        per_run_finals,
    })
}

/// Distribution of story interest for synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub enum InterestDistribution {
    /// Every story gets exactly this interest.
    Degenerate(f64),
    /// Lognormal in the interest, clamped into [1e-4, 1].
    LogNormal { mu_ln: f64, sigma_ln: f64 },
}

/// Distribution of submitter fan counts for synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub enum FanCountDistribution {
    Fixed(u64),
    /// Uniform choice from a fixed set of counts.
    Choice(Vec<u64>),
    /// Uniform integer in [lo, hi].
    UniformInt { lo: u64, hi: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthControls {
    pub n_stories: usize,
    pub interest_dist: InterestDistribution,
    pub fan_dist: FanCountDistribution,
    pub seed: u64,
    pub t_end: f64,
    /// Observation cadence in minutes.
    pub cadence: f64,
}

impl Default for SynthControls {
    fn default() -> Self {
        SynthControls {
            n_stories: 100,
            interest_dist: InterestDistribution::LogNormal {
                mu_ln: -1.67,
                sigma_ln: 0.47,
            },
            fan_dist: FanCountDistribution::Choice(vec![5, 10, 20, 40, 80, 160]),
            seed: 1,
            t_end: 2880.0,
            cadence: 60.0,
        }
    }
}

impl SynthControls {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n_stories < 1 {
            return Err(McError::InvalidControls("n_stories must be >= 1".into()));
        }
        if !self.cadence.is_finite() || self.cadence <= 0.0 || self.t_end < self.cadence {
            return Err(McError::InvalidControls(
                "cadence must be positive and t_end >= cadence".into(),
            ));
        }
        match &self.interest_dist {
            InterestDistribution::Degenerate(r) => {
                if !r.is_finite() || *r <= 0.0 || *r > 1.0 {
                    return Err(McError::InvalidControls(
                        "degenerate interest must be in (0, 1]".into(),
                    ));
                }
            }
            InterestDistribution::LogNormal { sigma_ln, .. } => {
                if !sigma_ln.is_finite() || *sigma_ln <= 0.0 {
                    return Err(McError::InvalidControls("sigma_ln must be > 0".into()));
                }
            }
        }
        if let FanCountDistribution::Choice(set) = &self.fan_dist {
            if set.is_empty() {
                return Err(McError::InvalidControls("fan choice set is empty".into()));
            }
        }
        if let FanCountDistribution::UniformInt { lo, hi } = &self.fan_dist {
            if lo > hi {
                return Err(McError::InvalidControls("fan range lo > hi".into()));
            }
        }
        Ok(())
    }
}

/// A synthetic story: observed vote series plus the ground truth that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStory {
    pub observations: ObservationSeries,
    /// True interest used for the simulation.
    pub interest: f64,
    pub final_votes: u64,
    pub promoted_at: Option<f64>,
}

/// Generate `n_stories` stories, one stochastic run each, observed at the
/// configured cadence. Deterministic for a fixed seed.
pub fn generate_synthetic_dataset(
    site: &SiteParams,
    controls: &SynthControls,
) -> Result<Vec<SyntheticStory>, McError> {
    site.validate()?;
    controls.validate()?;

    let width = (controls.n_stories as f64).log10().floor() as usize + 1;
    let mut out = Vec::with_capacity(controls.n_stories);
    for i in 0..controls.n_stories {
        let mut rng = ChaCha12Rng::seed_from_u64(substream_seed(controls.seed, i as u64));
        let interest = match &controls.interest_dist {
            InterestDistribution::Degenerate(r) => *r,
            InterestDistribution::LogNormal { mu_ln, sigma_ln } => {
                let raw = LogNormal::new(*mu_ln, *sigma_ln)
                    .expect("validated sigma")
                    .sample(&mut rng);
                raw.clamp(1e-4, 1.0)
            }
        };
        let fans = match &controls.fan_dist {
            FanCountDistribution::Fixed(s) => *s,
            FanCountDistribution::Choice(set) => set[rng.random_range(0..set.len())],
            FanCountDistribution::UniformInt { lo, hi } => rng.random_range(*lo..=*hi),
        };
        let story = StoryParams {
            interest,
            submitter_fans: fans,
        };
        let traj = simulate_once(&story, site, controls.t_end, &mut rng);
        let story_id = format!("story_{i:0width$}");
        let observations = crate::io::observations_from_trajectory(
            &traj,
            &story_id,
            fans,
            controls.cadence,
            controls.t_end,
        )
        .expect("cadence-sampled series from a valid trajectory");
        out.push(SyntheticStory {
            observations,
            interest,
            final_votes: traj.final_votes as u64,
            promoted_at: traj.promoted_at,
        });
    }
    Ok(out)
}
