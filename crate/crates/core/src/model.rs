//! Closed-form pieces of the vote-accumulation model: the page-view tail,
//! list positions over time, the per-vote fan increment, and the three
//! visibility rates that drive the vote ODE.
//!
//! A story sits on the upcoming list from submission until either it
//! collects enough votes to be promoted to the front page or the upcoming
//! window expires and it is removed. Visitors reach it through the list it
//! is currently on (discounted by how deep in the list it has sunk) and
//! through the fans of earlier voters.

use thiserror::Error;

use crate::special::erfc;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} violates: {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("page position m = {0} is out of range (m >= 1 required)")]
    PageOutOfRange(f64),
    #[error("vote count {0} is out of range (>= 1 required)")]
    VotesOutOfRange(f64),
}

/// Site-wide model constants.
///
/// Rates are per minute; list positions are in pages (15 stories per page,
/// fractional positions allowed). The defaults are the fitted site-level
/// values for all stories; only [`StoryParams`] varies per story.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteParams {
    /// Rate general users visit the site (users/minute).
    pub visit_rate: f64,
    /// Fraction of visitors who browse the upcoming list, in (0, 1].
    pub upcoming_fraction: f64,
    /// Rate at which each fan of a voter returns to the site (1/minute).
    pub fan_visit_rate: f64,
    /// Mean of the page-view distribution (pages).
    pub pages_mean: f64,
    /// Shape of the page-view distribution (pages).
    pub pages_shape: f64,
    /// Coefficient of the per-vote fan increment (fans).
    pub fan_coef: f64,
    /// Exponent of the per-vote fan increment (dimensionless).
    pub fan_exp: f64,
    /// Vote count at which a story is promoted to the front page.
    pub promotion_threshold: u32,
    /// Speed a story sinks through the upcoming list (pages/minute).
    pub upcoming_page_rate: f64,
    /// Speed a story sinks through the front page list (pages/minute).
    pub front_page_rate: f64,
    /// How long a story stays on the upcoming list (minutes).
    pub upcoming_window: f64,
}

impl Default for SiteParams {
    fn default() -> Self {
        SiteParams {
            visit_rate: 10.0,
            upcoming_fraction: 0.3,
            fan_visit_rate: 0.002,
            pages_mean: 0.6,
            pages_shape: 0.6,
            fan_coef: 51.0,
            fan_exp: 0.62,
            promotion_threshold: 40,
            upcoming_page_rate: 0.06,
            front_page_rate: 0.003,
            upcoming_window: 1440.0,
        }
    }
}

impl SiteParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let strictly_positive: [(&'static str, f64); 4] = [
            ("visit_rate", self.visit_rate),
            ("pages_mean", self.pages_mean),
            ("pages_shape", self.pages_shape),
            ("fan_coef", self.fan_coef),
        ];
        for (name, value) in strictly_positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    requirement: "must be finite and > 0",
                });
            }
        }
        // Zero is a meaningful setting for these (channel switched off /
        // story pinned to page 1), and the test configurations use it.
        let non_negative: [(&'static str, f64); 4] = [
            ("fan_visit_rate", self.fan_visit_rate),
            ("fan_exp", self.fan_exp),
            ("upcoming_page_rate", self.upcoming_page_rate),
            ("front_page_rate", self.front_page_rate),
        ];
        for (name, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    requirement: "must be finite and >= 0",
                });
            }
        }
        if !self.upcoming_fraction.is_finite()
            || self.upcoming_fraction <= 0.0
            || self.upcoming_fraction > 1.0
        {
            return Err(ModelError::InvalidParameter {
                name: "upcoming_fraction",
                value: self.upcoming_fraction,
                requirement: "must be in (0, 1]",
            });
        }
        if self.promotion_threshold < 1 {
            return Err(ModelError::InvalidParameter {
                name: "promotion_threshold",
                value: self.promotion_threshold as f64,
                requirement: "must be >= 1",
            });
        }
        if !self.upcoming_window.is_finite() || self.upcoming_window <= 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "upcoming_window",
                value: self.upcoming_window,
                requirement: "must be finite and > 0",
            });
        }
        Ok(())
    }
}

/// Per-story parameters: how interesting the story is and how well
/// connected its submitter is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoryParams {
    /// Probability that a user who sees the story votes for it, in [0, 1]
    /// (zero means nobody ever votes; fitting searches (0, 1]).
    pub interest: f64,
    /// Number of fans of the story's submitter.
    pub submitter_fans: u64,
}

impl StoryParams {
    pub fn new(interest: f64, submitter_fans: u64) -> Result<Self, ModelError> {
        let p = StoryParams {
            interest,
            submitter_fans,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.interest.is_finite() || !(0.0..=1.0).contains(&self.interest) {
            return Err(ModelError::InvalidParameter {
                name: "interest",
                value: self.interest,
                requirement: "must be in [0, 1]",
            });
        }
        Ok(())
    }
}

/// Which list a story is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListState {
    Upcoming,
    Front,
    Removed,
}

impl ListState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ListState::Upcoming => "upcoming",
            ListState::Front => "front",
            ListState::Removed => "removed",
        }
    }

    pub fn parse(s: &str) -> Option<ListState> {
        match s {
            "upcoming" => Some(ListState::Upcoming),
            "front" => Some(ListState::Front),
            "removed" => Some(ListState::Removed),
            _ => None,
        }
    }
}

/// Instantaneous state of one story.
///
/// `votes` and `fan_pool` are continuous in the mean-field treatment and
/// integer-valued in the stochastic one; both use f64 storage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoryState {
    /// Minutes since submission.
    pub t: f64,
    /// Votes received so far (starts at 1: the submitter's own vote).
    pub votes: f64,
    /// Fans of prior voters who have not yet seen the story.
    pub fan_pool: f64,
    pub list: ListState,
    /// Time the story reached the front page, if it has.
    pub promoted_at: Option<f64>,
}

/// Fraction of visitors who browse at least `m` pages of a list.
///
/// This is the upper cumulative of an inverse Gaussian law for the number
/// of pages viewed, with mean `mu` and shape `lambda`; by definition it is
/// exactly 1 at `m = 1` and decreases toward 0 as the story sinks.
pub fn page_fraction(m: f64, mu: f64, lambda: f64) -> Result<f64, ModelError> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "pages_mean",
            value: mu,
            requirement: "must be > 0",
        });
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(ModelError::InvalidParameter {
            name: "pages_shape",
            value: lambda,
            requirement: "must be > 0",
        });
    }
    if !(m.is_finite() && m >= 1.0) {
        return Err(ModelError::PageOutOfRange(m));
    }
    if m == 1.0 {
        return Ok(1.0);
    }
    let alpha = (lambda / (2.0 * (m - 1.0))).sqrt();
    let f = |x: f64| erfc(alpha * (m - 1.0 + x) / mu);
    let tail = 0.5 * (f(-mu) - (2.0 * lambda / mu).exp() * f(mu));
    // Round-off can leave a tiny negative residue deep in the tail.
    Ok(tail.clamp(0.0, 1.0))
}

/// Page position of a story on the upcoming list at time `t` (minutes
/// since submission). Fractional positions denote location within a page.
pub fn upcoming_page(t: f64, site: &SiteParams) -> f64 {
    site.upcoming_page_rate * t + 1.0
}

/// Page position on the front page list: 0 before promotion, then linear
/// growth from page 1 starting at `promoted_at`.
pub fn front_page(t: f64, promoted_at: f64, site: &SiteParams) -> f64 {
    if t < promoted_at {
        0.0
    } else {
        site.front_page_rate * (t - promoted_at) + 1.0
    }
}

/// Average number of new fans gained when a vote arrives while the story
/// has `votes` votes. Early voters bring many fresh fans; later voters'
/// fans mostly overlap with earlier ones.
pub fn fan_increment(votes: f64, site: &SiteParams) -> Result<f64, ModelError> {
    if !(votes.is_finite() && votes >= 1.0) {
        return Err(ModelError::VotesOutOfRange(votes));
    }
    Ok(site.fan_coef * votes.powf(-site.fan_exp))
}

/// The three rates at which users encounter a story, by channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityRates {
    /// Encounters through the front page (users/minute).
    pub front: f64,
    /// Encounters through the upcoming list (users/minute).
    pub upcoming: f64,
    /// Encounters through the friends interface (users/minute).
    pub friends: f64,
}

impl VisibilityRates {
    pub fn total(&self) -> f64 {
        self.front + self.upcoming + self.friends
    }
}

/// Visibility rates for a story in state `state`.
///
/// At most one of the two list channels is active: the front page once the
/// vote count has reached the promotion threshold, the upcoming list
/// before that and only within the upcoming window. A story below the
/// threshold whose window has expired is visible through friends only.
pub fn visibility_rates(state: &StoryState, site: &SiteParams) -> VisibilityRates {
    let threshold = site.promotion_threshold as f64;
    let promoted = state.votes >= threshold;
    let front = if promoted {
        // Ties at the threshold count as promoted; a story promoted this
        // instant sits at the top of front page 1.
        let promoted_at = state.promoted_at.unwrap_or(state.t);
        let p = front_page(state.t, promoted_at, site);
        if p >= 1.0 {
            site.visit_rate
                * page_fraction(p, site.pages_mean, site.pages_shape)
                    .expect("front page position >= 1")
        } else {
            0.0
        }
    } else {
        0.0
    };
    let upcoming = if !promoted && state.t <= site.upcoming_window {
        let q = upcoming_page(state.t, site);
        site.upcoming_fraction
            * site.visit_rate
            * page_fraction(q, site.pages_mean, site.pages_shape)
                .expect("upcoming page position >= 1")
    } else {
        0.0
    };
    VisibilityRates {
        front,
        upcoming,
        friends: site.fan_visit_rate * state.fan_pool,
    }
}

/// Mean-field time derivatives `(d votes/dt, d fan_pool/dt)`.
///
/// Votes accrue at `interest` times the total visibility; the fan pool
/// drains as fans return to the site and refills with the fans of each new
/// voter.
pub fn ode_rhs(state: &StoryState, story: &StoryParams, site: &SiteParams) -> (f64, f64) {
    let rates = visibility_rates(state, site);
    let d_votes = story.interest * rates.total();
    let gain = site.fan_coef * state.votes.max(1.0).powf(-site.fan_exp);
    let d_fans = -site.fan_visit_rate * state.fan_pool + gain * d_votes;
    (d_votes, d_fans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent route to the page-view tail: the inverse Gaussian
    /// survival function expressed through the normal CDF, evaluated with
    /// libm rather than our erfc.
    fn ig_survival_reference(z: f64, mu: f64, lambda: f64) -> f64 {
        let phi = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        let a = (lambda / z).sqrt();
        1.0 - phi(a * (z / mu - 1.0)) - (2.0 * lambda / mu).exp() * phi(-a * (z / mu + 1.0))
    }

    fn table_site() -> SiteParams {
        SiteParams::default()
    }

    #[test]
    fn page_fraction_is_one_at_first_page() {
        assert_eq!(page_fraction(1.0, 0.6, 0.6).unwrap(), 1.0);
        assert_eq!(page_fraction(1.0, 3.0, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn page_fraction_second_page_value() {
        // Frozen from the inverse Gaussian survival reference; roughly one
        // in six visitors reads past the first page.
        let f = page_fraction(2.0, 0.6, 0.6).unwrap();
        assert!((f - 0.159_192_702_931_217_1).abs() < 1e-12, "f = {f:.16}");
        assert!(f > 0.15 && f < 0.17);
    }

    #[test]
    fn page_fraction_matches_survival_reference() {
        for i in 1..=400 {
            let m = 1.0 + i as f64 * 0.25;
            let ours = page_fraction(m, 0.6, 0.6).unwrap();
            let reference = ig_survival_reference(m - 1.0, 0.6, 0.6);
            assert!(
                (ours - reference).abs() < 1e-12,
                "m = {m}: {ours} vs {reference}"
            );
        }
    }

    #[test]
    fn page_fraction_monotone_and_positive() {
        let mut prev = page_fraction(1.0, 0.6, 0.6).unwrap();
        for i in 1..=990 {
            let m = 1.0 + i as f64 * 0.1;
            let f = page_fraction(m, 0.6, 0.6).unwrap();
            assert!(f <= prev + 1e-15, "not monotone at m = {m}");
            assert!(f > 0.0 && f <= 1.0, "out of (0, 1] at m = {m}");
            prev = f;
        }
        // Tail vanishes fast but stays positive through page 100.
        assert!(page_fraction(100.0, 0.6, 0.6).unwrap() < 1e-30);
        assert!(
            page_fraction(3.0, 0.6, 0.6).unwrap() < page_fraction(2.0, 0.6, 0.6).unwrap()
        );
    }

    #[test]
    fn page_fraction_domain_errors() {
        assert!(page_fraction(0.5, 0.6, 0.6).is_err());
        assert!(page_fraction(2.0, 0.0, 0.6).is_err());
        assert!(page_fraction(2.0, 0.6, -1.0).is_err());
        assert!(page_fraction(f64::NAN, 0.6, 0.6).is_err());
    }

    #[test]
    fn list_positions() {
        let mut site = table_site();
        assert_eq!(upcoming_page(0.0, &site), 1.0);
        assert!((upcoming_page(100.0, &site) - 7.0).abs() < 1e-12);
        assert!((upcoming_page(1440.0, &site) - 87.4).abs() < 1e-12);

        assert_eq!(front_page(500.0, 500.0, &site), 1.0);
        assert_eq!(front_page(499.999, 500.0, &site), 0.0);
        assert!((front_page(1500.0, 500.0, &site) - 4.0).abs() < 1e-12);
        site.front_page_rate = 0.003;
        assert!((front_page(1000.0, 0.0, &site) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fan_increment_values() {
        let site = table_site();
        assert_eq!(fan_increment(1.0, &site).unwrap(), 51.0);
        let f40 = fan_increment(40.0, &site).unwrap();
        assert!((f40 - 5.179_561_349_767_712).abs() < 1e-12);
        assert!(fan_increment(0.5, &site).is_err());
        let flat = SiteParams {
            fan_exp: 0.0,
            ..table_site()
        };
        for n in [1.0, 7.0, 1e6] {
            assert_eq!(fan_increment(n, &flat).unwrap(), 51.0);
        }
    }

    proptest! {
        #[test]
        fn fan_increment_inverts_power(n in 1.0f64..1e6) {
            let site = table_site();
            let product = fan_increment(n, &site).unwrap() * n.powf(site.fan_exp);
            prop_assert!((product - site.fan_coef).abs() / site.fan_coef < 1e-12);
        }

        #[test]
        fn list_channels_mutually_exclusive(
            votes in 1.0f64..5000.0,
            t in 0.0f64..4000.0,
            fans in 0.0f64..1e4,
        ) {
            let site = table_site();
            let promoted_at = if votes >= site.promotion_threshold as f64 {
                Some(t * 0.5)
            } else {
                None
            };
            let state = StoryState {
                t,
                votes,
                fan_pool: fans,
                list: ListState::Upcoming,
                promoted_at,
            };
            let rates = visibility_rates(&state, &site);
            prop_assert!(!(rates.front > 0.0 && rates.upcoming > 0.0));
            prop_assert!(rates.front >= 0.0 && rates.upcoming >= 0.0 && rates.friends >= 0.0);
        }

        #[test]
        fn fan_ode_identity(
            votes in 1.0f64..5000.0,
            fans in 0.0f64..1e4,
            t in 0.0f64..2880.0,
            interest in 0.0f64..1.0,
        ) {
            let site = table_site();
            let story = StoryParams { interest, submitter_fans: 0 };
            let state = StoryState {
                t,
                votes,
                fan_pool: fans,
                list: ListState::Upcoming,
                promoted_at: None,
            };
            let (d_votes, d_fans) = ode_rhs(&state, &story, &site);
            let residual = d_fans + site.fan_visit_rate * fans
                - fan_increment(votes, &site).unwrap() * d_votes;
            prop_assert!(residual.abs() < 1e-12 * (1.0 + d_fans.abs()));
            prop_assert!(d_votes >= 0.0);
        }
    }

    #[test]
    fn rates_below_threshold_on_upcoming() {
        let site = table_site();
        let state = StoryState {
            t: 100.0,
            votes: 39.0,
            fan_pool: 12.0,
            list: ListState::Upcoming,
            promoted_at: None,
        };
        let rates = visibility_rates(&state, &site);
        assert_eq!(rates.front, 0.0);
        let expected = 0.3 * 10.0 * page_fraction(7.0, 0.6, 0.6).unwrap();
        assert!((rates.upcoming - expected).abs() < 1e-14);
        assert!((rates.friends - 0.002 * 12.0).abs() < 1e-15);
    }

    #[test]
    fn rates_after_promotion() {
        let site = table_site();
        let state = StoryState {
            t: 600.0,
            votes: 50.0,
            fan_pool: 30.0,
            list: ListState::Front,
            promoted_at: Some(500.0),
        };
        let rates = visibility_rates(&state, &site);
        assert_eq!(rates.upcoming, 0.0);
        let p = front_page(600.0, 500.0, &site);
        let expected = 10.0 * page_fraction(p, 0.6, 0.6).unwrap();
        assert!((rates.front - expected).abs() < 1e-14);
    }

    #[test]
    fn rates_after_removal() {
        let site = table_site();
        let state = StoryState {
            t: 1500.0,
            votes: 10.0,
            fan_pool: 4.0,
            list: ListState::Removed,
            promoted_at: None,
        };
        let rates = visibility_rates(&state, &site);
        assert_eq!(rates.front, 0.0);
        assert_eq!(rates.upcoming, 0.0);
        assert!(rates.friends > 0.0);
    }

    #[test]
    fn threshold_tie_counts_as_promoted() {
        let site = table_site();
        let state = StoryState {
            t: 300.0,
            votes: 40.0,
            fan_pool: 0.0,
            list: ListState::Front,
            promoted_at: Some(300.0),
        };
        let rates = visibility_rates(&state, &site);
        assert!(rates.front > 0.0);
        assert_eq!(rates.upcoming, 0.0);
    }

    #[test]
    fn ode_rhs_examples() {
        let site = table_site();
        // Stalled story: no channels left, empty fan pool.
        let stalled = StoryState {
            t: 2000.0,
            votes: 10.0,
            fan_pool: 0.0,
            list: ListState::Removed,
            promoted_at: None,
        };
        let story = StoryParams {
            interest: 0.4,
            submitter_fans: 0,
        };
        assert_eq!(ode_rhs(&stalled, &story, &site), (0.0, 0.0));

        // Zero interest: votes frozen, fan pool decays.
        let state = StoryState {
            t: 50.0,
            votes: 5.0,
            fan_pool: 80.0,
            list: ListState::Upcoming,
            promoted_at: None,
        };
        let dead = StoryParams {
            interest: 0.0,
            submitter_fans: 0,
        };
        let (d_votes, d_fans) = ode_rhs(&state, &dead, &site);
        assert_eq!(d_votes, 0.0);
        assert!((d_fans - (-0.002 * 80.0)).abs() < 1e-15);

        // Fresh story at t = 0: rate is interest * (c*nu + omega*S).
        let fresh = StoryState {
            t: 0.0,
            votes: 1.0,
            fan_pool: 5.0,
            list: ListState::Upcoming,
            promoted_at: None,
        };
        let story = StoryParams {
            interest: 0.51,
            submitter_fans: 5,
        };
        let (d_votes, _) = ode_rhs(&fresh, &story, &site);
        assert!((d_votes - 1.5351).abs() < 1e-12);
    }

    #[test]
    fn param_validation() {
        assert!(SiteParams::default().validate().is_ok());
        let bad = SiteParams {
            visit_rate: 0.0,
            ..SiteParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = SiteParams {
            upcoming_fraction: 1.5,
            ..SiteParams::default()
        };
        assert!(bad.validate().is_err());
        let ok = SiteParams {
            fan_visit_rate: 0.0,
            upcoming_page_rate: 0.0,
            ..SiteParams::default()
        };
        assert!(ok.validate().is_ok());

        assert!(StoryParams::new(0.51, 5).is_ok());
        assert!(StoryParams::new(1.2, 5).is_err());
        assert!(StoryParams::new(-0.1, 5).is_err());
    }
}
