//! Welfare metrics and the metrics CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{AlmaError, Result};
use crate::instance::{Matching, MatchingInstance};

pub const CSV_HEADER: &str =
    "scenario,algo,N,R,runs,sw,sw_opt,rel_diff,cum_regret,winners_pct,steps_total,steps_per_agent,comp_ratio";

/// One aggregated line of the metrics table. Welfare and step counts are
/// means over `runs`; optional columns are left empty when not applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub scenario: String,
    pub algo: String,
    pub n: usize,
    pub r: usize,
    pub runs: usize,
    pub sw: f64,
    pub sw_opt: Option<f64>,
    pub rel_diff: Option<f64>,
    pub cum_regret: Option<f64>,
    pub winners_pct: f64,
    pub steps_total: f64,
    pub steps_per_agent: f64,
    pub comp_ratio: Option<f64>,
}

impl MetricRow {
    /// Aggregates per-run welfare, optimal welfare (if known), winners and steps.
    pub fn aggregate(
        scenario: &str,
        algo: &str,
        n: usize,
        r: usize,
        achieved: &[f64],
        optimal: Option<&[f64]>,
        winners_pct: &[f64],
        steps_total: &[f64],
        steps_per_agent: &[f64],
    ) -> Result<Self> {
        let runs = achieved.len();
        let sw = mean(achieved);
        let (sw_opt, rel_diff, cum_regret) = match optimal {
            Some(opt) => {
                let so = mean(opt);
                let rel = if so > 0.0 { Some((sw - so) / so) } else { None };
                (Some(so), rel, Some(cumulative_regret(achieved, opt)?))
            }
            None => (None, None, None),
        };
        Ok(Self {
            scenario: scenario.to_string(),
            algo: algo.to_string(),
            n,
            r,
            runs,
            sw,
            sw_opt,
            rel_diff,
            cum_regret,
            winners_pct: mean(winners_pct),
            steps_total: mean(steps_total),
            steps_per_agent: mean(steps_per_agent),
            comp_ratio: None,
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn social_welfare(instance: &MatchingInstance, matching: &Matching) -> Result<f64> {
    matching.check_feasible(instance)?;
    Ok(matching.pairs().map(|(n, r)| instance.utility(n, r).unwrap_or(0.0)).sum())
}

/// Pooled relative difference `(Σ achieved − Σ optimal) / Σ optimal`.
pub fn cumulative_regret(achieved: &[f64], optimal: &[f64]) -> Result<f64> {
    if achieved.len() != optimal.len() || achieved.is_empty() {
        return Err(AlmaError::Config(format!(
            "regret needs equal non-empty lists, got {} and {}",
            achieved.len(),
            optimal.len()
        )));
    }
    let opt: f64 = optimal.iter().sum();
    if !(opt > 0.0) {
        return Err(AlmaError::ZeroOptimal);
    }
    Ok((achieved.iter().sum::<f64>() - opt) / opt)
}

/// Share of the whole agent population holding a positive-utility resource.
pub fn winners_percentage(instance: &MatchingInstance, matching: &Matching) -> f64 {
    if instance.n_agents() == 0 {
        return 0.0;
    }
    let winners = matching.pairs().filter(|&(n, r)| instance.utility(n, r).is_some_and(|u| u > 0.0)).count();
    100.0 * winners as f64 / instance.n_agents() as f64
}

fn fmt_real(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

pub fn to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.scenario,
            row.algo,
            row.n,
            row.r,
            row.runs,
            fmt_real(row.sw),
            fmt_opt(row.sw_opt),
            fmt_opt(row.rel_diff),
            fmt_opt(row.cum_regret),
            fmt_real(row.winners_pct),
            fmt_real(row.steps_total),
            fmt_real(row.steps_per_agent),
            fmt_opt(row.comp_ratio),
        );
    }
    out
}

pub fn emit_csv(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(rows)).map_err(|e| AlmaError::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(AlmaError::parse(1, "missing metrics header")),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(AlmaError::parse(line_no, format!("expected 13 fields, got {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| AlmaError::parse(line_no, format!("bad integer `{s}`")));
        let real = |s: &str| s.parse::<f64>().map_err(|_| AlmaError::parse(line_no, format!("bad number `{s}`")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { real(s).map(Some) };
        rows.push(MetricRow {
            scenario: f[0].to_string(),
            algo: f[1].to_string(),
            n: int(f[2])?,
            r: int(f[3])?,
            runs: int(f[4])?,
            sw: real(f[5])?,
            sw_opt: opt(f[6])?,
            rel_diff: opt(f[7])?,
            cum_regret: opt(f[8])?,
            winners_pct: real(f[9])?,
            steps_total: real(f[10])?,
            steps_per_agent: real(f[11])?,
            comp_ratio: opt(f[12])?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AlmaError::io(path, e))?;
    parse_csv(&text)
}
