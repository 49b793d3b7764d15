//! Usage reports shared by `GET /metrics` and `scribe metrics`.

use std::fmt::Write as _;

use serde::Serialize;

use scribe_core::domain::YearMonth;
use scribe_core::metrics::{aggregate, cost_per_physician_month, monthly_series, CostModel, Period, UsageMetrics};
use scribe_core::store::StoreError;
use scribe_core::Store;

const BYTES_PER_GB: f64 = 1e9;

#[derive(Debug, Clone, Serialize)]
pub struct MonthRow {
    pub month: YearMonth,
    pub sessions: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub metrics: UsageMetrics,
    pub monthly_series: Vec<MonthRow>,
    /// Blob storage in use now, in decimal gigabytes.
    pub storage_gb: f64,
    /// Present when a cost model is configured and the period is one month.
    pub cost_per_physician_month: Option<f64>,
}

pub fn build_report(store: &Store, period: Period, cost: Option<&CostModel>) -> Result<MetricsReport, StoreError> {
    let snapshot = store.snapshot()?;
    let metrics = aggregate(period, &snapshot);
    let monthly_series = monthly_series(period, &snapshot)
        .into_iter()
        .map(|(month, sessions)| MonthRow { month, sessions })
        .collect();
    let storage_gb = store.blob_bytes() as f64 / BYTES_PER_GB;
    let cost_per_physician_month = match cost {
        Some(model) if period.start == period.end => cost_per_physician_month(&metrics, model, storage_gb).ok(),
        _ => None,
    };
    Ok(MetricsReport { metrics, monthly_series, storage_gb, cost_per_physician_month })
}

pub fn render_table(report: &MetricsReport) -> String {
    let m = &report.metrics;
    let mut rows = vec![
        ("period", m.period.to_string()),
        ("sessions", m.session_count.to_string()),
        ("unique users", m.unique_users.to_string()),
        ("unique facilities", m.unique_facilities.to_string()),
        ("audio hours", format!("{:.1}", m.total_audio_hours())),
        ("mean session minutes", format!("{:.1}", m.mean_session_audio_s / 60.0)),
        ("prompt tokens", m.total_prompt_tokens.to_string()),
        ("completion tokens", m.total_completion_tokens.to_string()),
        ("users with custom templates", m.users_with_custom_templates.to_string()),
        ("customization rate", format!("{:.2}", m.customization_rate)),
        ("storage GB", format!("{:.3}", report.storage_gb)),
    ];
    if let Some(cost) = report.cost_per_physician_month {
        rows.push(("cost per physician-month (USD)", format!("{cost:.2}")));
    }
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v}");
    }
    out
}

pub fn render_csv(series: &[MonthRow]) -> String {
    let mut out = String::from("month,sessions\n");
    for row in series {
        let _ = writeln!(out, "{},{}", row.month, row.sessions);
    }
    out
}
