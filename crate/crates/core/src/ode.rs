//! Mean-field trajectories: integrates the coupled (votes, fan pool)
//! system through the promotion event and the upcoming-window expiry.
//!
//! The right-hand side is smooth between those two moments, so an explicit
//! adaptive Runge-Kutta 5(4) pair with step rejection is used, restarted
//! exactly at each discontinuity. The promotion crossing (votes reaching
//! the threshold) is located by bisection on a cubic Hermite interpolant
//! of the accepted step that brackets it.

use thiserror::Error;

use crate::model::{
    front_page, page_fraction, upcoming_page, ListState, ModelError, SiteParams, StoryParams,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("step size underflow at t = {t:.6} min: error control cannot advance")]
    StepSizeUnderflow { t: f64 },
    #[error("invalid solver control {name} = {value}: {requirement}")]
    InvalidControls {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveControls {
    /// End of integration (minutes since submission).
    pub t_end: f64,
    /// Largest step the integrator may take (minutes).
    pub max_step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Width to which the promotion crossing is localized (minutes).
    pub event_tol: f64,
}

impl Default for SolveControls {
    fn default() -> Self {
        SolveControls {
            t_end: 2880.0,
            max_step: 10.0,
            rel_tol: 1e-6,
            abs_tol: 1e-8,
            event_tol: 1e-6,
        }
    }
}

impl SolveControls {
    pub fn validate(&self) -> Result<(), SolveError> {
        let checks = [
            ("t_end", self.t_end, self.t_end >= 0.0),
            ("max_step", self.max_step, self.max_step > 0.0),
            ("rel_tol", self.rel_tol, self.rel_tol > 0.0),
            ("abs_tol", self.abs_tol, self.abs_tol > 0.0),
            ("event_tol", self.event_tol, self.event_tol > 0.0),
        ];
        for (name, value, ok) in checks {
            if !ok || !value.is_finite() {
                return Err(SolveError::InvalidControls {
                    name,
                    value,
                    requirement: "must be finite and positive (t_end may be 0)",
                });
            }
        }
        Ok(())
    }
}

/// One recorded point of a story's evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub votes: f64,
    pub fan_pool: f64,
    pub list: ListState,
    /// Page position on the current list (0 once removed).
    pub page: f64,
}

/// How samples between recorded points should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Smooth mean-field curve; interpolate linearly.
    MeanField,
    /// Event records of a counting process; piecewise constant.
    Stochastic,
}

/// Dense time series of one story's state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub samples: Vec<TrajectorySample>,
    pub promoted_at: Option<f64>,
    pub final_votes: f64,
}

impl Trajectory {
    /// Vote count at time `t`, clamped to the recorded range.
    pub fn votes_at(&self, t: f64) -> f64 {
        self.value_at(t, |s| s.votes)
    }

    /// Fan pool at time `t`, clamped to the recorded range.
    pub fn fans_at(&self, t: f64) -> f64 {
        self.value_at(t, |s| s.fan_pool)
    }

    fn value_at(&self, t: f64, field: impl Fn(&TrajectorySample) -> f64) -> f64 {
        let samples = &self.samples;
        assert!(!samples.is_empty(), "trajectory has no samples");
        if t <= samples[0].t {
            return field(&samples[0]);
        }
        if t >= samples[samples.len() - 1].t {
            return field(&samples[samples.len() - 1]);
        }
        // Index of the first sample strictly after t.
        let hi = samples.partition_point(|s| s.t <= t);
        let lo = hi - 1;
        match self.kind {
            TrajectoryKind::Stochastic => field(&samples[lo]),
            TrajectoryKind::MeanField => {
                let (a, b) = (&samples[lo], &samples[hi]);
                let w = (t - a.t) / (b.t - a.t);
                field(a) + w * (field(b) - field(a))
            }
        }
    }

    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory has no samples")
    }
}

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 5.0;

// Dormand-Prince 5(4) tableau.
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Difference between the 5th- and embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

type State = [f64; 2];

fn axpyn(y: &State, h: f64, coeffs: &[f64], ks: &[State]) -> State {
    let mut out = *y;
    for (c, k) in coeffs.iter().zip(ks) {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

struct PhaseEnd {
    t: f64,
    y: State,
    hit_threshold: bool,
}

/// Integrate `rhs` from (t0, y0) to t_stop, optionally stopping where
/// y[0] first reaches `threshold`. Calls `record` at every accepted step.
#[allow(clippy::too_many_arguments)]
fn run_phase(
    rhs: &dyn Fn(f64, &State) -> State,
    t0: f64,
    y0: State,
    t_stop: f64,
    threshold: Option<f64>,
    ctl: &SolveControls,
    record: &mut dyn FnMut(f64, &State),
) -> Result<PhaseEnd, SolveError> {
    let mut t = t0;
    let mut y = y0;
    let mut f0 = rhs(t, &y);
    let mut h = ctl.max_step.min(t_stop - t0).clamp(1e-6, 1.0);

    while t < t_stop {
        h = h.min(t_stop - t);
        if h < 1e-12 * t.max(1.0) {
            return Err(SolveError::StepSizeUnderflow { t });
        }

        let k1 = f0;
        let k2 = rhs(t + C[0] * h, &axpyn(&y, h, &A2, &[k1]));
        let k3 = rhs(t + C[1] * h, &axpyn(&y, h, &A3, &[k1, k2]));
        let k4 = rhs(t + C[2] * h, &axpyn(&y, h, &A4, &[k1, k2, k3]));
        let k5 = rhs(t + C[3] * h, &axpyn(&y, h, &A5, &[k1, k2, k3, k4]));
        let k6 = rhs(t + C[4] * h, &axpyn(&y, h, &A6, &[k1, k2, k3, k4, k5]));
        let mut y_new = axpyn(&y, h, &B, &[k1, k2, k3, k4, k5, k6]);
        let k7 = rhs(t + h, &y_new);

        let ks = [k1, k2, k3, k4, k5, k6, k7];
        let mut err_norm_sq = 0.0;
        for i in 0..2 {
            let mut e = 0.0;
            for (c, k) in E.iter().zip(&ks) {
                e += c * k[i];
            }
            e *= h;
            let scale = ctl.abs_tol + ctl.rel_tol * y[i].abs().max(y_new[i].abs());
            err_norm_sq += (e / scale) * (e / scale);
        }
        let err = (err_norm_sq / 2.0).sqrt();

        if err > 1.0 {
            h *= (SAFETY * err.powf(-0.2)).max(MIN_SCALE);
            continue;
        }

        // Votes are non-decreasing and the fan pool non-negative; snap away
        // sub-tolerance round-off so the invariants hold exactly.
        if y_new[0] < y[0] {
            y_new[0] = y[0];
        }
        if y_new[1] < 0.0 {
            assert!(
                y_new[1] >= -ctl.abs_tol,
                "fan pool went below -abs_tol at t = {}",
                t + h
            );
            y_new[1] = 0.0;
        }

        if let Some(level) = threshold {
            if y[0] < level && y_new[0] >= level {
                let (t_ev, mut y_ev) =
                    locate_crossing(t, &y, &k1, t + h, &y_new, &k7, level, ctl.event_tol);
                y_ev[0] = level;
                record(t_ev, &y_ev);
                return Ok(PhaseEnd {
                    t: t_ev,
                    y: y_ev,
                    hit_threshold: true,
                });
            }
        }

        t += h;
        y = y_new;
        f0 = k7;
        record(t, &y);

        let scale = if err == 0.0 {
            MAX_SCALE
        } else {
            (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
        };
        h = (h * scale).min(ctl.max_step);
    }

    Ok(PhaseEnd {
        t,
        y,
        hit_threshold: false,
    })
}

/// Cubic Hermite value on [t0, t1] at parameter w in [0, 1].
fn hermite(w: f64, h: f64, y0: f64, d0: f64, y1: f64, d1: f64) -> f64 {
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * y0
        + (w3 - 2.0 * w2 + w) * h * d0
        + (-2.0 * w3 + 3.0 * w2) * y1
        + (w3 - w2) * h * d1
}

#[allow(clippy::too_many_arguments)]
fn locate_crossing(
    t0: f64,
    y0: &State,
    f0: &State,
    t1: f64,
    y1: &State,
    f1: &State,
    level: f64,
    event_tol: f64,
) -> (f64, State) {
    let h = t1 - t0;
    let votes = |w: f64| hermite(w, h, y0[0], f0[0], y1[0], f1[0]);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while (hi - lo) * h > event_tol {
        let mid = 0.5 * (lo + hi);
        if votes(mid) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = hi; // right end of the bracket: votes(w) >= level
    let fans = hermite(w, h, y0[1], f0[1], y1[1], f1[1]).max(0.0);
    (t0 + w * h, [votes(w), fans])
}

/// Solve the story's mean-field evolution from submission to
/// `controls.t_end`, recording every accepted integrator step.
pub fn solve_story(
    story: &StoryParams,
    site: &SiteParams,
    controls: &SolveControls,
) -> Result<Trajectory, SolveError> {
    site.validate()?;
    story.validate()?;
    controls.validate()?;

    let threshold = site.promotion_threshold as f64;
    let interest = story.interest;
    let s0 = story.submitter_fans as f64;
    let fan_rhs = |votes: f64, fan_pool: f64, d_votes: f64| {
        -site.fan_visit_rate * fan_pool
            + site.fan_coef * votes.max(1.0).powf(-site.fan_exp) * d_votes
    };

    let starts_promoted = threshold <= 1.0;
    let mut samples = vec![TrajectorySample {
        t: 0.0,
        votes: 1.0,
        fan_pool: s0,
        list: if starts_promoted {
            ListState::Front
        } else {
            ListState::Upcoming
        },
        page: 1.0,
    }];
    let mut promoted_at: Option<f64> = if starts_promoted { Some(0.0) } else { None };

    let mut t = 0.0;
    let mut y: State = [1.0, s0];

    if controls.t_end > 0.0 {
        // Upcoming phase: ends at the window expiry, the promotion
        // crossing, or t_end, whichever comes first.
        if y[0] < threshold {
            let stop = controls.t_end.min(site.upcoming_window);
            let rhs = |t: f64, y: &State| {
                let visibility = site.upcoming_fraction
                    * site.visit_rate
                    * page_fraction(upcoming_page(t, site), site.pages_mean, site.pages_shape)
                        .expect("upcoming page >= 1");
                let d_votes = interest * (visibility + site.fan_visit_rate * y[1].max(0.0));
                [d_votes, fan_rhs(y[0], y[1], d_votes)]
            };
            let mut record = |t: f64, y: &State| {
                samples.push(TrajectorySample {
                    t,
                    votes: y[0],
                    fan_pool: y[1],
                    list: ListState::Upcoming,
                    page: upcoming_page(t, site),
                });
            };
            let end = run_phase(&rhs, t, y, stop, Some(threshold), controls, &mut record)?;
            t = end.t;
            y = end.y;
            if end.hit_threshold {
                promoted_at = Some(t);
                // The event record carries the upcoming-list position; the
                // story is on front page 1 from this instant on.
                if let Some(s) = samples.last_mut() {
                    s.list = ListState::Front;
                    s.page = 1.0;
                }
            }
        }

        // Removed phase: below threshold past the window, friends only.
        if promoted_at.is_none() && t < controls.t_end {
            let rhs = |_t: f64, y: &State| {
                let d_votes = interest * site.fan_visit_rate * y[1].max(0.0);
                [d_votes, fan_rhs(y[0], y[1], d_votes)]
            };
            let mut record = |t: f64, y: &State| {
                samples.push(TrajectorySample {
                    t,
                    votes: y[0],
                    fan_pool: y[1],
                    list: ListState::Removed,
                    page: 0.0,
                });
            };
            let end = run_phase(
                &rhs,
                t,
                y,
                controls.t_end,
                Some(threshold),
                controls,
                &mut record,
            )?;
            t = end.t;
            y = end.y;
            if end.hit_threshold {
                promoted_at = Some(t);
                if let Some(s) = samples.last_mut() {
                    s.list = ListState::Front;
                    s.page = 1.0;
                }
            }
        }

        // Front-page phase.
        if let Some(t_promoted) = promoted_at {
            if t < controls.t_end {
                let rhs = |t: f64, y: &State| {
                    let p = front_page(t, t_promoted, site).max(1.0);
                    let visibility = site.visit_rate
                        * page_fraction(p, site.pages_mean, site.pages_shape)
                            .expect("front page >= 1");
                    let d_votes = interest * (visibility + site.fan_visit_rate * y[1].max(0.0));
                    [d_votes, fan_rhs(y[0], y[1], d_votes)]
                };
                let mut record = |t: f64, y: &State| {
                    samples.push(TrajectorySample {
                        t,
                        votes: y[0],
                        fan_pool: y[1],
                        list: ListState::Front,
                        page: front_page(t, t_promoted, site),
                    });
                };
                run_phase(&rhs, t, y, controls.t_end, None, controls, &mut record)?;
            }
        }
    }

    let final_votes = samples.last().expect("at least the initial sample").votes;
    Ok(Trajectory {
        kind: TrajectoryKind::MeanField,
        samples,
        promoted_at,
        final_votes,
    })
}

/// Time at which the story first reaches the promotion threshold, or
/// `None` if it never does before the default horizon.
pub fn promotion_time(story: &StoryParams, site: &SiteParams) -> Result<Option<f64>, SolveError> {
    Ok(solve_story(story, site, &SolveControls::default())?.promoted_at)
}
