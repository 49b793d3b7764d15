//! Usage aggregates and the per-physician cost estimate.
//!
//! Sessions bucket into the UTC month of `created_at`. A user counts as
//! having customized when they own at least one custom template created on
//! or before the end of the period.

mod synthetic;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{InvalidMonth, UserId, YearMonth};
use crate::store::Snapshot;
use crate::template::TemplateKind;

pub use synthetic::SyntheticBuilder;

/// An inclusive range of calendar months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Period {
    pub start: YearMonth,
    pub end: YearMonth,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeriodError {
    #[error(transparent)]
    Month(#[from] InvalidMonth),
    #[error("period ends ({end}) before it starts ({start})")]
    Reversed { start: YearMonth, end: YearMonth },
}

impl Period {
    pub fn month(m: YearMonth) -> Self {
        Self { start: m, end: m }
    }

    pub fn new(start: YearMonth, end: YearMonth) -> Result<Self, PeriodError> {
        if end < start {
            return Err(PeriodError::Reversed { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, m: YearMonth) -> bool {
        self.start <= m && m <= self.end
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> {
        self.start.through(self.end)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.start == self.end {
            write!(f, "{}", self.start)
        } else {
            write!(f, "{}..{}", self.start, self.end)
        }
    }
}

/// `YYYY-MM` or `YYYY-MM..YYYY-MM`.
impl FromStr for Period {
    type Err = PeriodError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once("..") {
            Some((a, b)) => Self::new(a.trim().parse()?, b.trim().parse()?),
            None => Ok(Self::month(s.trim().parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageMetrics {
    pub period: Period,
    pub session_count: u64,
    pub unique_users: u64,
    pub unique_facilities: u64,
    pub total_audio_s: f64,
    pub mean_session_audio_s: f64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub users_with_custom_templates: u64,
    pub customization_rate: f64,
}

impl UsageMetrics {
    pub fn total_tokens(&self) -> u64 {
        self.total_prompt_tokens + self.total_completion_tokens
    }

    pub fn total_audio_hours(&self) -> f64 {
        self.total_audio_s / 3600.0
    }
}

pub fn aggregate(period: Period, view: &Snapshot) -> UsageMetrics {
    let mut session_count = 0u64;
    let mut users: HashSet<&UserId> = HashSet::new();
    let mut facilities = HashSet::new();
    let mut total_audio_s = 0.0;
    let mut prompt = 0u64;
    let mut completion = 0u64;

    for s in view.sessions.iter().filter(|s| period.contains(s.created_at.year_month())) {
        session_count += 1;
        users.insert(&s.owner_id);
        if let Some(f) = &s.facility_id {
            facilities.insert(f);
        }
        total_audio_s += s
            .recording_ids
            .iter()
            .filter_map(|r| view.view.recordings.get(r))
            .map(|r| r.duration_s)
            .sum::<f64>();
        for n in s.note_ids.iter().filter_map(|n| view.view.notes.get(n)) {
            prompt += n.token_usage.prompt_tokens;
            completion += n.token_usage.completion_tokens;
        }
    }

    let period_end = period.end.end();
    let customizers: HashSet<&UserId> = view
        .templates
        .iter()
        .filter(|t| t.kind == TemplateKind::Custom && t.created_at <= period_end)
        .filter_map(|t| t.owner_id.as_ref())
        .filter(|o| users.contains(o))
        .collect();

    let unique_users = users.len() as u64;
    let users_with_custom_templates = customizers.len() as u64;
    UsageMetrics {
        period,
        session_count,
        unique_users,
        unique_facilities: facilities.len() as u64,
        total_audio_s,
        mean_session_audio_s: if session_count == 0 { 0.0 } else { total_audio_s / session_count as f64 },
        total_prompt_tokens: prompt,
        total_completion_tokens: completion,
        users_with_custom_templates,
        customization_rate: if unique_users == 0 {
            0.0
        } else {
            users_with_custom_templates as f64 / unique_users as f64
        },
    }
}

/// Session counts per month across `range`, zero-filled.
pub fn monthly_series(range: Period, view: &Snapshot) -> Vec<(YearMonth, u64)> {
    let mut counts: HashMap<YearMonth, u64> = HashMap::new();
    for s in &view.sessions {
        let m = s.created_at.year_month();
        if range.contains(m) {
            *counts.entry(m).or_default() += 1;
        }
    }
    range.months().map(|m| (m, counts.get(&m).copied().unwrap_or(0))).collect()
}

/// Monthly operating costs in US dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub server_cost_per_month: f64,
    pub token_cost_per_1k: f64,
    pub storage_cost_per_gb_month: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("no active users in the period")]
    NoUsers,
    #[error("`{0}` must be a finite, non-negative amount")]
    Negative(&'static str),
}

impl CostModel {
    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [
            ("server_cost_per_month", self.server_cost_per_month),
            ("token_cost_per_1k", self.token_cost_per_1k),
            ("storage_cost_per_gb_month", self.storage_cost_per_gb_month),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CostError::Negative(name));
            }
        }
        Ok(())
    }
}

pub fn cost_per_physician_month(
    metrics: &UsageMetrics,
    model: &CostModel,
    storage_gb: f64,
) -> Result<f64, CostError> {
    model.validate()?;
    if !(storage_gb.is_finite() && storage_gb >= 0.0) {
        return Err(CostError::Negative("storage_gb"));
    }
    if metrics.unique_users == 0 {
        return Err(CostError::NoUsers);
    }
    let tokens = metrics.total_tokens() as f64 / 1000.0 * model.token_cost_per_1k;
    let storage = storage_gb * model.storage_cost_per_gb_month;
    Ok((model.server_cost_per_month + tokens + storage) / metrics.unique_users as f64)
}

/// A range of deployment sizes the cost estimate should stay under $30 for.
///
/// Every combination of these values is one scenario. Token and storage
/// figures are monthly dollar spend.
pub struct PlausibleGrid {
    pub server_cost_per_month: &'static [f64],
    pub token_spend_per_month: &'static [f64],
    pub storage_spend_per_month: &'static [f64],
    pub users: &'static [u64],
}

pub const PLAUSIBLE_GRID: PlausibleGrid = PlausibleGrid {
    server_cost_per_month: &[1000.0, 2000.0, 3000.0],
    token_spend_per_month: &[0.0, 250.0, 500.0, 1000.0, 1500.0],
    storage_spend_per_month: &[0.0, 100.0, 300.0],
    users: &[198, 400, 850],
};

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_parsing() {
        let p: Period = "2024-11..2025-07".parse().unwrap();
        assert_eq!(p.months().count(), 9);
        assert_eq!(p.to_string(), "2024-11..2025-07");
        assert_eq!("2025-02".parse::<Period>().unwrap().to_string(), "2025-02");
        assert!("2025-07..2024-11".parse::<Period>().is_err());
        assert!("2025-13".parse::<Period>().is_err());
    }

    #[test]
    fn empty_snapshot_gives_zeros() {
        let m = aggregate(Period::month(YearMonth::new(2025, 1).unwrap()), &Snapshot::default());
        assert_eq!(m.session_count, 0);
        assert_eq!(m.total_audio_s, 0.0);
        assert_eq!(m.mean_session_audio_s, 0.0);
        assert_eq!(m.customization_rate, 0.0);
    }

    #[test]
    fn negative_costs_are_rejected() {
        let m = CostModel { server_cost_per_month: -1.0, token_cost_per_1k: 0.0, storage_cost_per_gb_month: 0.0 };
        assert_eq!(m.validate(), Err(CostError::Negative("server_cost_per_month")));
    }
}
