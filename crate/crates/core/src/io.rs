//! Run configuration and the delimited table formats.
//!
//! Tables are comma-separated UTF-8 text with LF line endings and a header
//! row. Formatting is canonical: fixed column order, vote counts as
//! integers, reals with six significant digits and a '.' decimal
//! separator, so parse-then-serialize is byte-identical.

use std::collections::HashMap;

use thiserror::Error;

use crate::fitting::{FitError, FitResult, ObservationSeries};
use crate::model::{ListState, SiteParams};
use crate::montecarlo::{McEnsemble, SyntheticStory};
use crate::ode::{SolveControls, Trajectory};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "VOTEDYN_CONFIG";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown config key '{key}' on line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("story id '{0}' contains a delimiter or newline")]
    BadStoryId(String),
    #[error(transparent)]
    Series(#[from] FitError),
}

fn parse_err(line: usize, reason: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// Canonical number formatting
// ---------------------------------------------------------------------------

/// Format a finite real with six significant digits in plain decimal.
/// Idempotent under parse-then-format.
pub fn fmt_sig6(x: f64) -> String {
    debug_assert!(x.is_finite());
    if x == 0.0 {
        return "0".to_string();
    }
    // Round to six significant digits first, then print in plain decimal
    // with exactly enough places to show them.
    let rounded: f64 = format!("{x:.5e}").parse().expect("scientific round trip");
    if rounded == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{rounded:e}");
    let exp: i32 = sci[sci.find('e').expect("exponent marker") + 1..]
        .parse()
        .expect("exponent");
    let decimals = (5 - exp).max(0) as usize;
    format!("{rounded:.decimals$}")
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64, IoError> {
    field
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("invalid {what} '{field}'")))
}

fn parse_u64(field: &str, line: usize, what: &str) -> Result<u64, IoError> {
    field
        .parse::<u64>()
        .map_err(|_| parse_err(line, format!("invalid {what} '{field}'")))
}

fn check_story_id(id: &str) -> Result<(), IoError> {
    if id.is_empty() || id.contains(',') || id.contains('\n') || id.contains('\r') {
        Err(IoError::BadStoryId(id.to_string()))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Everything a run needs: site parameters, solver and ensemble controls,
/// the seed, and an optional base directory for outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub site: SiteParams,
    pub solve: SolveControls,
    pub n_runs: usize,
    pub seed: u64,
    /// Spacing of the ensemble recording grid (minutes).
    pub grid_step: f64,
    /// Observation cadence for resampling and synthesis (minutes).
    pub cadence: f64,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            site: SiteParams::default(),
            solve: SolveControls::default(),
            n_runs: 1000,
            seed: 1,
            grid_step: 60.0,
            cadence: 60.0,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Apply `key = value` lines on top of the current values. Lines that
    /// are empty or start with '#' are ignored; unknown keys are errors.
    pub fn apply(&mut self, text: &str) -> Result<(), IoError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| parse_err(line, "expected 'key = value'"))?;
            let key = key.trim();
            let value = value.trim();
            let f = |what| parse_f64(value, line, what);
            match key {
                "visit_rate" => self.site.visit_rate = f("visit_rate")?,
                "upcoming_fraction" => self.site.upcoming_fraction = f("upcoming_fraction")?,
                "fan_visit_rate" => self.site.fan_visit_rate = f("fan_visit_rate")?,
                "pages_mean" => self.site.pages_mean = f("pages_mean")?,
                "pages_shape" => self.site.pages_shape = f("pages_shape")?,
                "fan_coef" => self.site.fan_coef = f("fan_coef")?,
                "fan_exp" => self.site.fan_exp = f("fan_exp")?,
                "promotion_threshold" => {
                    self.site.promotion_threshold =
                        parse_u64(value, line, "promotion_threshold")? as u32
                }
                "upcoming_page_rate" => self.site.upcoming_page_rate = f("upcoming_page_rate")?,
                "front_page_rate" => self.site.front_page_rate = f("front_page_rate")?,
                "upcoming_window" => self.site.upcoming_window = f("upcoming_window")?,
                "t_end" => self.solve.t_end = f("t_end")?,
                "max_step" => self.solve.max_step = f("max_step")?,
                "rel_tol" => self.solve.rel_tol = f("rel_tol")?,
                "abs_tol" => self.solve.abs_tol = f("abs_tol")?,
                "event_tol" => self.solve.event_tol = f("event_tol")?,
                "n_runs" => self.n_runs = parse_u64(value, line, "n_runs")? as usize,
                "seed" => self.seed = parse_u64(value, line, "seed")?,
                "grid_step" => self.grid_step = f("grid_step")?,
                "cadence" => self.cadence = f("cadence")?,
                "out_dir" => {
                    self.out_dir = if value.is_empty() {
                        None
                    } else {
                        Some(value.to_string())
                    }
                }
                _ => {
                    return Err(IoError::UnknownKey {
                        key: key.to_string(),
                        line,
                    })
                }
            }
        }
        Ok(())
    }

    /// Every effective parameter as `key = value` lines; itself a valid
    /// config file.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("visit_rate", self.site.visit_rate.to_string());
        kv("upcoming_fraction", self.site.upcoming_fraction.to_string());
        kv("fan_visit_rate", self.site.fan_visit_rate.to_string());
        kv("pages_mean", self.site.pages_mean.to_string());
        kv("pages_shape", self.site.pages_shape.to_string());
        kv("fan_coef", self.site.fan_coef.to_string());
        kv("fan_exp", self.site.fan_exp.to_string());
        kv(
            "promotion_threshold",
            self.site.promotion_threshold.to_string(),
        );
        kv("upcoming_page_rate", self.site.upcoming_page_rate.to_string());
        kv("front_page_rate", self.site.front_page_rate.to_string());
        kv("upcoming_window", self.site.upcoming_window.to_string());
        kv("t_end", self.solve.t_end.to_string());
        kv("max_step", self.solve.max_step.to_string());
        kv("rel_tol", self.solve.rel_tol.to_string());
        kv("abs_tol", self.solve.abs_tol.to_string());
        kv("event_tol", self.solve.event_tol.to_string());
        kv("n_runs", self.n_runs.to_string());
        kv("seed", self.seed.to_string());
        kv("grid_step", self.grid_step.to_string());
        kv("cadence", self.cadence.to_string());
        if let Some(dir) = &self.out_dir {
            kv("out_dir", dir.clone());
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Trajectory tables
// ---------------------------------------------------------------------------

pub const TRAJECTORY_HEADER: &str = "story_id,t_minutes,votes,fans_pool,list_state,page_position";

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub story_id: String,
    pub t: f64,
    pub votes: u64,
    pub fans_pool: f64,
    pub list: ListState,
    pub page: f64,
}

pub fn trajectory_rows(story_id: &str, traj: &Trajectory) -> Vec<TrajectoryRow> {
    traj.samples
        .iter()
        .map(|s| TrajectoryRow {
            story_id: story_id.to_string(),
            t: s.t,
            votes: s.votes.round() as u64,
            fans_pool: s.fan_pool,
            list: s.list,
            page: s.page,
        })
        .collect()
}

pub fn write_trajectory_rows(rows: &[TrajectoryRow]) -> Result<String, IoError> {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        check_story_id(&r.story_id)?;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.story_id,
            fmt_sig6(r.t),
            r.votes,
            fmt_sig6(r.fans_pool),
            r.list.as_str(),
            fmt_sig6(r.page),
        ));
    }
    Ok(out)
}

pub fn write_trajectory(story_id: &str, traj: &Trajectory) -> Result<String, IoError> {
    write_trajectory_rows(&trajectory_rows(story_id, traj))
}

pub fn read_trajectory_rows(text: &str) -> Result<Vec<TrajectoryRow>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRAJECTORY_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{TRAJECTORY_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, got {}", fields.len())));
        }
        check_story_id(fields[0])?;
        rows.push(TrajectoryRow {
            story_id: fields[0].to_string(),
            t: parse_f64(fields[1], line, "t_minutes")?,
            votes: parse_u64(fields[2], line, "votes")?,
            fans_pool: parse_f64(fields[3], line, "fans_pool")?,
            list: ListState::parse(fields[4])
                .ok_or_else(|| parse_err(line, format!("invalid list_state '{}'", fields[4])))?,
            page: parse_f64(fields[5], line, "page_position")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Observation tables
// ---------------------------------------------------------------------------

pub const OBSERVATION_HEADER: &str = "story_id,t_minutes,votes";

pub fn write_observations(series: &[ObservationSeries]) -> Result<String, IoError> {
    let mut out = String::from(OBSERVATION_HEADER);
    out.push('\n');
    for s in series {
        check_story_id(&s.story_id)?;
        for &(t, votes) in &s.points {
            out.push_str(&format!("{},{},{}\n", s.story_id, fmt_sig6(t), votes));
        }
    }
    Ok(out)
}

/// Raw per-story observation rows, before a fan count is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservations {
    pub story_id: String,
    pub points: Vec<(f64, u64)>,
}

/// Parse an observation table, grouping rows by story in order of first
/// appearance. Ordering/monotonicity is validated when the caller builds
/// an [`ObservationSeries`].
pub fn read_observations(text: &str) -> Result<Vec<RawObservations>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == OBSERVATION_HEADER => {}
        _ => {
            return Err(parse_err(
                1,
                format!("expected header '{OBSERVATION_HEADER}'"),
            ))
        }
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(f64, u64)>> = HashMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", fields.len())));
        }
        check_story_id(fields[0])?;
        let t = parse_f64(fields[1], line, "t_minutes")?;
        let votes = parse_u64(fields[2], line, "votes")?;
        if !groups.contains_key(fields[0]) {
            order.push(fields[0].to_string());
        }
        groups
            .entry(fields[0].to_string())
            .or_default()
            .push((t, votes));
    }
    Ok(order
        .into_iter()
        .map(|story_id| {
            let points = groups.remove(&story_id).expect("grouped above");
            RawObservations { story_id, points }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Ensemble, boundary, fit and truth tables
// ---------------------------------------------------------------------------

pub const ENSEMBLE_HEADER: &str = "t_minutes,mean_votes,var_votes,promoted_fraction";

pub fn write_ensemble(ens: &McEnsemble) -> String {
    let mut out = String::from(ENSEMBLE_HEADER);
    out.push('\n');
    for (i, &t) in ens.record_grid.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_sig6(t),
            fmt_sig6(ens.mean_votes[i]),
            fmt_sig6(ens.var_votes[i]),
            fmt_sig6(ens.promoted_fraction),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub t: f64,
    pub mean_votes: f64,
    pub var_votes: f64,
    pub promoted_fraction: f64,
}

pub fn read_ensemble(text: &str) -> Result<Vec<EnsembleRow>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == ENSEMBLE_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{ENSEMBLE_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", fields.len())));
        }
        rows.push(EnsembleRow {
            t: parse_f64(fields[0], line, "t_minutes")?,
            mean_votes: parse_f64(fields[1], line, "mean_votes")?,
            var_votes: parse_f64(fields[2], line, "var_votes")?,
            promoted_fraction: parse_f64(fields[3], line, "promoted_fraction")?,
        });
    }
    Ok(rows)
}

pub const BOUNDARY_HEADER: &str = "s_fans,r_star";

pub fn write_boundary(boundary: &[(u64, Option<f64>)]) -> String {
    let mut out = String::from(BOUNDARY_HEADER);
    out.push('\n');
    for &(fans, r_star) in boundary {
        match r_star {
            Some(r) => out.push_str(&format!("{},{}\n", fans, fmt_sig6(r))),
            None => out.push_str(&format!("{fans},\n")),
        }
    }
    out
}

pub fn read_boundary(text: &str) -> Result<Vec<(u64, Option<f64>)>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == BOUNDARY_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{BOUNDARY_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, got {}", fields.len())));
        }
        let fans = parse_u64(fields[0], line, "s_fans")?;
        let r_star = if fields[1].is_empty() {
            None
        } else {
            Some(parse_f64(fields[1], line, "r_star")?)
        };
        rows.push((fans, r_star));
    }
    Ok(rows)
}

pub const FIT_HEADER: &str =
    "story_id,r_hat,rms_votes,rms_relative,predicted_final,predicted_promotion_minutes,n_points_used,degenerate";

pub fn write_fit_results(results: &[(String, FitResult)]) -> Result<String, IoError> {
    let mut out = String::from(FIT_HEADER);
    out.push('\n');
    for (story_id, fit) in results {
        check_story_id(story_id)?;
        let promotion = fit
            .predicted_promotion
            .map(fmt_sig6)
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            story_id,
            fmt_sig6(fit.interest),
            fmt_sig6(fit.rms_votes),
            fmt_sig6(fit.rms_relative),
            fmt_sig6(fit.predicted_final),
            promotion,
            fit.points_used,
            u8::from(fit.degenerate),
        ));
    }
    Ok(out)
}

pub fn read_fit_results(text: &str) -> Result<Vec<(String, FitResult)>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FIT_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{FIT_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_err(line, format!("expected 8 fields, got {}", fields.len())));
        }
        check_story_id(fields[0])?;
        let predicted_promotion = if fields[5].is_empty() {
            None
        } else {
            Some(parse_f64(fields[5], line, "predicted_promotion_minutes")?)
        };
        rows.push((
            fields[0].to_string(),
            FitResult {
                interest: parse_f64(fields[1], line, "r_hat")?,
                rms_votes: parse_f64(fields[2], line, "rms_votes")?,
                rms_relative: parse_f64(fields[3], line, "rms_relative")?,
                predicted_final: parse_f64(fields[4], line, "predicted_final")?,
                predicted_promotion,
                points_used: parse_u64(fields[6], line, "n_points_used")? as usize,
                degenerate: match fields[7] {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(parse_err(line, format!("invalid degenerate flag '{other}'")))
                    }
                },
            },
        ));
    }
    Ok(rows)
}

pub const TRUTH_HEADER: &str = "story_id,r_true,s_fans,final_votes,promoted,promotion_minutes";

#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub story_id: String,
    pub interest: f64,
    pub submitter_fans: u64,
    pub final_votes: u64,
    pub promoted: bool,
    pub promotion_minutes: Option<f64>,
}

pub fn write_truth(stories: &[SyntheticStory]) -> Result<String, IoError> {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for s in stories {
        check_story_id(&s.observations.story_id)?;
        let promotion = s.promoted_at.map(fmt_sig6).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.observations.story_id,
            fmt_sig6(s.interest),
            s.observations.submitter_fans,
            s.final_votes,
            u8::from(s.promoted_at.is_some()),
            promotion,
        ));
    }
    Ok(out)
}

pub fn read_truth(text: &str) -> Result<Vec<TruthRow>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRUTH_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header '{TRUTH_HEADER}'"))),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, got {}", fields.len())));
        }
        check_story_id(fields[0])?;
        let promotion_minutes = if fields[5].is_empty() {
            None
        } else {
            Some(parse_f64(fields[5], line, "promotion_minutes")?)
        };
        rows.push(TruthRow {
            story_id: fields[0].to_string(),
            interest: parse_f64(fields[1], line, "r_true")?,
            submitter_fans: parse_u64(fields[2], line, "s_fans")?,
            final_votes: parse_u64(fields[3], line, "final_votes")?,
            promoted: match fields[4] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err(line, format!("invalid promoted flag '{other}'"))),
            },
            promotion_minutes,
        });
    }
    Ok(rows)
}

/// Extract a story-id to fan-count mapping from any table that has a
/// `story_id` first column and an `s_fans` column (the truth table
/// qualifies, as does a bare two-column file).
pub fn read_fan_counts(text: &str) -> Result<HashMap<String, u64>, IoError> {
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(parse_err(1, "empty file")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"story_id") {
        return Err(parse_err(1, "first column must be story_id"));
    }
    let fans_col = cols
        .iter()
        .position(|&c| c == "s_fans")
        .ok_or_else(|| parse_err(1, "no s_fans column"))?;
    let mut map = HashMap::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, got {}", cols.len(), fields.len()),
            ));
        }
        map.insert(
            fields[0].to_string(),
            parse_u64(fields[fans_col], line, "s_fans")?,
        );
    }
    Ok(map)
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Sample a trajectory at a fixed cadence, producing the kind of sparse
/// integer-vote series the fitting operations consume. Promotion metadata
/// is carried over at hour resolution.
pub fn observations_from_trajectory(
    traj: &Trajectory,
    story_id: &str,
    submitter_fans: u64,
    cadence: f64,
    t_end: f64,
) -> Result<ObservationSeries, FitError> {
    assert!(cadence > 0.0, "cadence must be positive");
    let mut points = Vec::new();
    let mut k = 1u64;
    loop {
        let t = k as f64 * cadence;
        if t > t_end + 1e-9 {
            break;
        }
        let votes = traj.votes_at(t).round().max(1.0) as u64;
        points.push((t, votes));
        k += 1;
    }
    let mut series = ObservationSeries::new(story_id, submitter_fans, points)?;
    series.promoted_observed = Some(traj.promoted_at.is_some());
    series.promotion_hour_bucket = traj.promoted_at.map(|tp| {
        let lo = (tp / 60.0).floor() * 60.0;
        (lo, lo + 60.0)
    });
    Ok(series)
}
