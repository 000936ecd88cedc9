//! Per-story inference: estimating interest from an observed vote series,
//! predicting final vote counts from early history, the promotion boundary
//! in (fans, interest) space, and a linear-extrapolation baseline.
//!
//! Interest is found by minimizing the root-mean-square difference between
//! observed votes and the mean-field solution, with a coarse log-spaced
//! scan followed by golden-section refinement. The scan guards against a
//! multimodal objective: the refined optimum must beat every scanned
//! point.

use thiserror::Error;

use crate::model::{ModelError, SiteParams, StoryParams};
use crate::ode::{promotion_time, solve_story, SolveControls, SolveError, Trajectory};

/// Search bounds for the interest parameter.
pub const INTEREST_MIN: f64 = 1e-4;
pub const INTEREST_MAX: f64 = 1.0;

/// Optimizer convergence width in interest.
const INTEREST_TOL: f64 = 1e-4;

/// Points in the coarse log-spaced scan of the objective.
const SCAN_POINTS: usize = 50;

/// Default prediction horizon (minutes).
pub const DEFAULT_HORIZON: f64 = 2880.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("story {story_id} row {row}: {reason}")]
    InvalidSeries {
        story_id: String,
        row: usize,
        reason: String,
    },
    #[error("story {story_id}: need at least {needed} points, have {have}")]
    TooFewPoints {
        story_id: String,
        needed: usize,
        have: usize,
    },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sparse observed vote counts for one story.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub story_id: String,
    /// Fan count of the submitter.
    pub submitter_fans: u64,
    /// (minutes since submission, cumulative votes), strictly increasing
    /// in time, non-decreasing in votes, votes >= 1.
    pub points: Vec<(f64, u64)>,
    /// Whether the story was seen promoted during the observation window.
    pub promoted_observed: Option<bool>,
    /// Hour-resolution interval containing the observed promotion time.
    pub promotion_hour_bucket: Option<(f64, f64)>,
}

impl ObservationSeries {
    pub fn new(
        story_id: impl Into<String>,
        submitter_fans: u64,
        points: Vec<(f64, u64)>,
    ) -> Result<Self, FitError> {
        let story_id = story_id.into();
        if points.is_empty() {
            return Err(FitError::TooFewPoints {
                story_id,
                needed: 1,
                have: 0,
            });
        }
        let mut prev_t = f64::NEG_INFINITY;
        let mut prev_votes = 0u64;
        for (row, &(t, votes)) in points.iter().enumerate() {
            if !t.is_finite() || t < 0.0 {
                return Err(FitError::InvalidSeries {
                    story_id,
                    row,
                    reason: format!("time {t} must be finite and >= 0"),
                });
            }
            if t <= prev_t {
                return Err(FitError::InvalidSeries {
                    story_id,
                    row,
                    reason: "times must be strictly increasing".into(),
                });
            }
            if votes < 1 {
                return Err(FitError::InvalidSeries {
                    story_id,
                    row,
                    reason: "votes must be >= 1".into(),
                });
            }
            if votes < prev_votes {
                return Err(FitError::InvalidSeries {
                    story_id,
                    row,
                    reason: "votes must be non-decreasing".into(),
                });
            }
            prev_t = t;
            prev_votes = votes;
        }
        Ok(ObservationSeries {
            story_id,
            submitter_fans,
            points,
            promoted_observed: None,
            promotion_hour_bucket: None,
        })
    }

    pub fn last_time(&self) -> f64 {
        self.points.last().expect("validated non-empty").0
    }
}

/// Outcome of fitting one story.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Estimated interest.
    pub interest: f64,
    /// RMS difference in votes over the fitted points, at the optimum.
    pub rms_votes: f64,
    /// RMS of the relative differences over the fitted points.
    pub rms_relative: f64,
    /// Model vote count at min(horizon, last observation time).
    pub predicted_final: f64,
    /// Model promotion time at the fitted interest, if it promotes.
    pub predicted_promotion: Option<f64>,
    pub points_used: usize,
    /// Set when every fitted point is at the initial single vote, which
    /// leaves the objective flat up to the lower search bound.
    pub degenerate: bool,
}

fn objective_controls(t_fit_end: f64) -> SolveControls {
    SolveControls {
        t_end: t_fit_end,
        ..SolveControls::default()
    }
}

fn rms_pair(traj: &Trajectory, points: &[(f64, u64)]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut rel_sq = 0.0;
    for &(t, votes) in points {
        let diff = traj.votes_at(t) - votes as f64;
        sq += diff * diff;
        let rel = diff / votes as f64;
        rel_sq += rel * rel;
    }
    let n = points.len() as f64;
    ((sq / n).sqrt(), (rel_sq / n).sqrt())
}

fn fit_points(
    obs: &ObservationSeries,
    site: &SiteParams,
    used: &[(f64, u64)],
    horizon: f64,
) -> Result<FitResult, FitError> {
    let t_fit_end = used.last().expect("validated non-empty").0;
    let controls = objective_controls(t_fit_end);
    let solve_at = |interest: f64| -> Result<Trajectory, FitError> {
        let story = StoryParams {
            interest,
            submitter_fans: obs.submitter_fans,
        };
        Ok(solve_story(&story, site, &controls)?)
    };
    let rms_at = |interest: f64| -> Result<f64, FitError> {
        Ok(rms_pair(&solve_at(interest)?, used).0)
    };

    let degenerate = used.iter().all(|&(_, v)| v == 1);
    let interest = if degenerate {
        INTEREST_MIN
    } else {
        // Coarse scan on a log grid over the admissible interval.
        let log_lo = INTEREST_MIN.ln();
        let log_hi = INTEREST_MAX.ln();
        let mut scan = Vec::with_capacity(SCAN_POINTS);
        for i in 0..SCAN_POINTS {
            let r = (log_lo + (log_hi - log_lo) * i as f64 / (SCAN_POINTS - 1) as f64).exp();
            scan.push((r, rms_at(r)?));
        }
        let best = scan
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i)
            .expect("non-empty scan");
        let lo = scan[best.saturating_sub(1)].0;
        let hi = scan[(best + 1).min(SCAN_POINTS - 1)].0;

        // Golden-section refinement inside the bracketing interval.
        let inv_phi = 0.618_033_988_749_894_8;
        let (mut a, mut b) = (lo, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = rms_at(c)?;
        let mut fd = rms_at(d)?;
        while b - a > INTEREST_TOL {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = rms_at(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = rms_at(d)?;
            }
        }
        let refined = 0.5 * (a + b);
        // Multimodality guard: refinement must not lose to the scan.
        let scan_best = scan[best];
        if rms_at(refined)? <= scan_best.1 {
            refined
        } else {
            scan_best.0
        }
    };

    // Final solve out to the prediction horizon.
    let effective_horizon = horizon.min(obs.last_time()).max(t_fit_end);
    let story = StoryParams {
        interest,
        submitter_fans: obs.submitter_fans,
    };
    let final_controls = SolveControls {
        t_end: effective_horizon,
        ..SolveControls::default()
    };
    let traj = solve_story(&story, site, &final_controls)?;
    let (rms_votes, rms_relative) = rms_pair(&traj, used);
    Ok(FitResult {
        interest,
        rms_votes,
        rms_relative,
        predicted_final: traj.votes_at(horizon.min(obs.last_time())),
        predicted_promotion: traj.promoted_at,
        points_used: used.len(),
        degenerate,
    })
}

/// Estimate a story's interest from its full observation series (or its
/// first `n_points` when given).
pub fn estimate_interest(
    obs: &ObservationSeries,
    site: &SiteParams,
    n_points: Option<usize>,
) -> Result<FitResult, FitError> {
    site.validate()?;
    let k = n_points.unwrap_or(obs.points.len());
    if k == 0 || k > obs.points.len() {
        return Err(FitError::TooFewPoints {
            story_id: obs.story_id.clone(),
            needed: k.max(1),
            have: obs.points.len(),
        });
    }
    fit_points(obs, site, &obs.points[..k], DEFAULT_HORIZON)
}

/// Fit interest on the first `k` observations only and predict the vote
/// count at min(`horizon`, last observation time).
pub fn predict_from_early(
    obs: &ObservationSeries,
    site: &SiteParams,
    k: usize,
    horizon: f64,
) -> Result<FitResult, FitError> {
    site.validate()?;
    if k == 0 || obs.points.len() < k {
        return Err(FitError::TooFewPoints {
            story_id: obs.story_id.clone(),
            needed: k.max(1),
            have: obs.points.len(),
        });
    }
    fit_points(obs, site, &obs.points[..k], horizon)
}

/// Least-squares line through the first `k` observations, evaluated at
/// `horizon` and floored at the last vote count used.
pub fn baseline_extrapolate(
    obs: &ObservationSeries,
    k: usize,
    horizon: f64,
) -> Result<f64, FitError> {
    let used = &obs.points[..k.min(obs.points.len())];
    if used.len() < 2 {
        return Err(FitError::TooFewPoints {
            story_id: obs.story_id.clone(),
            needed: 2,
            have: used.len(),
        });
    }
    let n = used.len() as f64;
    let mean_t = used.iter().map(|&(t, _)| t).sum::<f64>() / n;
    let mean_v = used.iter().map(|&(_, v)| v as f64).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    for &(t, v) in used {
        cov += (t - mean_t) * (v as f64 - mean_v);
        var_t += (t - mean_t) * (t - mean_t);
    }
    let slope = cov / var_t;
    let prediction = mean_v + slope * (horizon - mean_t);
    let floor = used.last().expect("len >= 2").1 as f64;
    Ok(prediction.max(floor))
}

/// For each fan count in `fan_grid`, the minimal interest at which the
/// story gets promoted (bisection to 1e-4), or `None` if even full
/// interest does not suffice.
pub fn promotion_boundary(
    site: &SiteParams,
    fan_grid: &[u64],
) -> Result<Vec<(u64, Option<f64>)>, SolveError> {
    site.validate()?;
    let promotes = |interest: f64, fans: u64| -> Result<bool, SolveError> {
        let story = StoryParams {
            interest,
            submitter_fans: fans,
        };
        Ok(promotion_time(&story, site)?.is_some())
    };
    let mut out = Vec::with_capacity(fan_grid.len());
    for &fans in fan_grid {
        if !promotes(INTEREST_MAX, fans)? {
            out.push((fans, None));
            continue;
        }
        if promotes(INTEREST_MIN, fans)? {
            out.push((fans, Some(INTEREST_MIN)));
            continue;
        }
        let mut lo = INTEREST_MIN; // does not promote
        let mut hi = INTEREST_MAX; // promotes
        while hi - lo > INTEREST_TOL {
            let mid = 0.5 * (lo + hi);
            if promotes(mid, fans)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push((fans, Some(0.5 * (lo + hi))));
    }
    Ok(out)
}

/// Whether the mean-field model predicts promotion for this story.
pub fn classify_promotion(story: &StoryParams, site: &SiteParams) -> Result<bool, SolveError> {
    Ok(promotion_time(story, site)?.is_some())
}

/// A predicted promotion time paired with the observed hour bucket.
pub type PromotionComparison = (Option<f64>, Option<(f64, f64)>);

/// Median absolute error between predicted promotion times and the
/// midpoints of observed hour buckets, over stories where both exist.
pub fn median_promotion_bucket_error(predictions: &[PromotionComparison]) -> Option<f64> {
    let mut errors: Vec<f64> = predictions
        .iter()
        .filter_map(|(pred, bucket)| {
            let p = (*pred)?;
            let (lo, hi) = (*bucket)?;
            Some((p - 0.5 * (lo + hi)).abs())
        })
        .collect();
    if errors.is_empty() {
        return None;
    }
    errors.sort_by(|a, b| a.total_cmp(b));
    let n = errors.len();
    Some(if n % 2 == 1 {
        errors[n / 2]
    } else {
        0.5 * (errors[n / 2 - 1] + errors[n / 2])
    })
}
