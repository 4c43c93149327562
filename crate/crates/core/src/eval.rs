//! Metric computation over settled outcomes and run comparison.
//!
//! Wait time averages over every accepted request, including failures at
//! their recorded threshold-crossing wait; price averages over successes
//! only; saving fees compare against the ground-truth station's quoted
//! price and are normalized per day.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::ChargeOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub day: usize,
    pub mcwt: f64,
    pub mcp: f64,
    pub tsf: f64,
    pub cfr: f64,
    pub n_accepted: usize,
    pub n_success: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcwt: f64,
    pub mcp: f64,
    pub tsf: f64,
    pub cfr: f64,
    pub n_accepted: usize,
    pub n_success: usize,
    pub per_day: Vec<DayMetrics>,
}

impl MetricsReport {
    /// A report with no accepted requests carries no meaningful averages.
    pub fn is_empty(&self) -> bool {
        self.n_accepted == 0
    }
}

fn summarize(outcomes: &[&ChargeOutcome], n_days: usize) -> (f64, f64, f64, f64, usize, usize) {
    let n_accepted = outcomes.len();
    let successes: Vec<&&ChargeOutcome> = outcomes.iter().filter(|o| o.success).collect();
    let n_success = successes.len();
    let mcwt = if n_accepted > 0 {
        outcomes.iter().map(|o| o.cwt as f64).sum::<f64>() / n_accepted as f64
    } else {
        0.0
    };
    let mcp = if n_success > 0 {
        successes.iter().map(|o| o.cp).sum::<f64>() / n_success as f64
    } else {
        0.0
    };
    let tsf = successes.iter().map(|o| (o.rcp - o.cp) * o.energy_kwh).sum::<f64>() / n_days as f64;
    let cfr = if n_accepted > 0 {
        (n_accepted - n_success) as f64 / n_accepted as f64
    } else {
        0.0
    };
    (mcwt, mcp, tsf, cfr, n_accepted, n_success)
}

/// Aggregates outcomes of completed episodes into the four headline metrics
/// plus a per-day breakdown. Order-invariant in the outcomes.
pub fn compute_metrics(outcomes: &[ChargeOutcome], n_days: usize) -> MetricsReport {
    assert!(n_days >= 1, "n_days must be >= 1");
    let accepted: Vec<&ChargeOutcome> = outcomes.iter().filter(|o| o.accepted).collect();
    let (mcwt, mcp, tsf, cfr, n_accepted, n_success) = summarize(&accepted, n_days);
    let per_day = (0..n_days)
        .map(|day| {
            let of_day: Vec<&ChargeOutcome> = accepted.iter().filter(|o| o.day == day).copied().collect();
            let (mcwt, mcp, tsf, cfr, n_accepted, n_success) = summarize(&of_day, 1);
            DayMetrics { day, mcwt, mcp, tsf, cfr, n_accepted, n_success }
        })
        .collect();
    MetricsReport { mcwt, mcp, tsf, cfr, n_accepted, n_success, per_day }
}

/// One line of a comparison: absolute metrics plus percentage improvement
/// over the reference report (positive = better than the reference).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub mcwt: f64,
    pub mcp: f64,
    pub tsf: f64,
    pub cfr: f64,
    pub imp_mcwt_pct: f64,
    pub imp_mcp_pct: f64,
    pub imp_tsf_pct: f64,
    pub imp_cfr_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareTable {
    pub reference: String,
    pub rows: Vec<CompareRow>,
    /// Row index of the best value per metric, in (mcwt, mcp, tsf, cfr) order.
    pub best: [usize; 4],
}

fn improvement(value: f64, reference: f64, lower_is_better: bool) -> f64 {
    if reference.abs() < 1e-12 {
        return 0.0;
    }
    let gain = if lower_is_better { reference - value } else { value - reference };
    gain / reference.abs() * 100.0
}

/// Ranks named reports against one of them. Lower is better for wait time,
/// price and failure rate; higher is better for saving fees.
pub fn compare(named: &[(String, MetricsReport)], reference: usize) -> CompareTable {
    assert!(named.len() >= 2, "compare needs at least two reports");
    assert!(reference < named.len());
    let rf = &named[reference].1;
    let rows: Vec<CompareRow> = named
        .iter()
        .map(|(name, r)| CompareRow {
            name: name.clone(),
            mcwt: r.mcwt,
            mcp: r.mcp,
            tsf: r.tsf,
            cfr: r.cfr,
            imp_mcwt_pct: improvement(r.mcwt, rf.mcwt, true),
            imp_mcp_pct: improvement(r.mcp, rf.mcp, true),
            imp_tsf_pct: improvement(r.tsf, rf.tsf, false),
            imp_cfr_pct: improvement(r.cfr, rf.cfr, true),
        })
        .collect();
    let best_by = |f: fn(&CompareRow) -> f64, lower: bool| -> usize {
        let mut best = 0;
        for (i, row) in rows.iter().enumerate() {
            let better = if lower { f(row) < f(&rows[best]) } else { f(row) > f(&rows[best]) };
            if better {
                best = i;
            }
        }
        best
    };
    let best = [
        best_by(|r| r.mcwt, true),
        best_by(|r| r.mcp, true),
        best_by(|r| r.tsf, false),
        best_by(|r| r.cfr, true),
    ];
    CompareTable { reference: named[reference].0.clone(), rows, best }
}

impl CompareTable {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>10} {:>8}   {:>9} {:>9} {:>9} {:>9}\n",
            "algorithm", "MCWT", "MCP", "TSF", "CFR", "dMCWT%", "dMCP%", "dTSF%", "dCFR%"
        ));
        for (i, r) in self.rows.iter().enumerate() {
            let marks: String = (0..4)
                .map(|m| if self.best[m] == i { '*' } else { ' ' })
                .collect();
            out.push_str(&format!(
                "{:<16} {:>8.2} {:>8.3} {:>10.1} {:>8.4}   {:>9.1} {:>9.1} {:>9.1} {:>9.1}  {}\n",
                r.name, r.mcwt, r.mcp, r.tsf, r.cfr, r.imp_mcwt_pct, r.imp_mcp_pct, r.imp_tsf_pct, r.imp_cfr_pct, marks
            ));
        }
        out.push_str(&format!("deltas are improvements versus {:?}; * marks the best column value\n", self.reference));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("name,mcwt,mcp,tsf,cfr,imp_mcwt_pct,imp_mcp_pct,imp_tsf_pct,imp_cfr_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.name, r.mcwt, r.mcp, r.tsf, r.cfr, r.imp_mcwt_pct, r.imp_mcp_pct, r.imp_tsf_pct, r.imp_cfr_pct
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
}

const REPORT_CSV_HEADER: &str = "scope,mcwt,mcp,tsf,cfr,n_accepted,n_success";

/// Writes a report losslessly; refuses to emit non-finite numbers.
pub fn emit(report: &MetricsReport, path: &Path, format: EmitFormat) -> std::io::Result<()> {
    let finite = [report.mcwt, report.mcp, report.tsf, report.cfr]
        .iter()
        .all(|v| v.is_finite())
        && report
            .per_day
            .iter()
            .all(|d| [d.mcwt, d.mcp, d.tsf, d.cfr].iter().all(|v| v.is_finite()));
    if !finite {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "refusing to emit non-finite metrics",
        ));
    }
    let mut file = std::fs::File::create(path)?;
    match format {
        EmitFormat::Json => {
            let json = serde_json::to_string_pretty(report)?;
            file.write_all(json.as_bytes())?;
            file.write_all(b"\n")
        }
        EmitFormat::Csv => {
            writeln!(file, "{REPORT_CSV_HEADER}")?;
            writeln!(
                file,
                "all,{},{},{},{},{},{}",
                report.mcwt, report.mcp, report.tsf, report.cfr, report.n_accepted, report.n_success
            )?;
            for d in &report.per_day {
                writeln!(
                    file,
                    "day:{},{},{},{},{},{},{}",
                    d.day, d.mcwt, d.mcp, d.tsf, d.cfr, d.n_accepted, d.n_success
                )?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(day: usize, success: bool, cwt: u32, cp: f64, rcp: f64, kwh: f64) -> ChargeOutcome {
        ChargeOutcome {
            request_id: 0,
            day,
            recommended: Some(0),
            accepted: true,
            success,
            cwt,
            cp,
            rcp,
            energy_kwh: kwh,
            finish_minute: 0,
        }
    }

    #[test]
    fn mean_wait_over_accepted() {
        let o = vec![outcome(0, true, 10, 1.5, 1.5, 20.0), outcome(0, true, 20, 1.5, 1.5, 20.0)];
        assert_eq!(compute_metrics(&o, 1).mcwt, 15.0);
    }

    #[test]
    fn failure_rate_counts_failures() {
        let mut o: Vec<ChargeOutcome> = (0..8).map(|_| outcome(0, true, 10, 1.5, 1.5, 20.0)).collect();
        o.push(outcome(0, false, 46, 1.5, 1.5, 20.0));
        o.push(outcome(0, false, 46, 1.5, 1.5, 20.0));
        let r = compute_metrics(&o, 1);
        assert_eq!(r.n_accepted, 10);
        assert_eq!(r.cfr, 0.2);
    }

    #[test]
    fn saving_fee_per_success() {
        let o = vec![outcome(0, true, 10, 1.4, 1.8, 25.0)];
        let r = compute_metrics(&o, 1);
        assert!((r.tsf - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ordering_invariance() {
        let mut o = vec![
            outcome(0, true, 10, 1.4, 1.8, 25.0),
            outcome(1, false, 46, 1.2, 1.5, 30.0),
            outcome(0, true, 30, 1.6, 1.4, 10.0),
        ];
        let a = compute_metrics(&o, 2);
        o.reverse();
        let b = compute_metrics(&o, 2);
        assert_eq!(a, b);
    }

    #[test]
    fn removing_failures_cannot_raise_mcwt() {
        let o = vec![
            outcome(0, true, 10, 1.4, 1.8, 25.0),
            outcome(0, false, 46, 1.2, 1.5, 30.0),
        ];
        let with = compute_metrics(&o, 1);
        let without = compute_metrics(&o[..1], 1);
        assert!(without.mcwt <= with.mcwt);
    }

    #[test]
    fn empty_report_is_flagged() {
        let r = compute_metrics(&[], 1);
        assert!(r.is_empty());
        assert_eq!(r.cfr, 0.0);
    }

    #[test]
    fn per_day_breakdown() {
        let o = vec![outcome(0, true, 10, 1.5, 1.5, 20.0), outcome(1, true, 30, 1.5, 1.5, 20.0)];
        let r = compute_metrics(&o, 3);
        assert_eq!(r.per_day.len(), 3);
        assert_eq!(r.per_day[0].mcwt, 10.0);
        assert_eq!(r.per_day[1].mcwt, 30.0);
        assert_eq!(r.per_day[2].n_accepted, 0);
    }

    #[test]
    fn compare_identical_reports_zero_deltas() {
        let r = compute_metrics(&[outcome(0, true, 10, 1.5, 1.8, 20.0)], 1);
        let t = compare(&[("a".into(), r.clone()), ("b".into(), r)], 0);
        for row in &t.rows {
            assert_eq!(row.imp_mcwt_pct, 0.0);
            assert_eq!(row.imp_tsf_pct, 0.0);
        }
    }

    #[test]
    fn compare_deltas_match_hand_arithmetic() {
        let base = compute_metrics(&[outcome(0, true, 20, 1.5, 1.5, 20.0)], 1);
        let better = compute_metrics(&[outcome(0, true, 10, 1.2, 1.8, 20.0)], 1);
        let t = compare(&[("base".into(), base), ("better".into(), better)], 0);
        let row = &t.rows[1];
        // (20 - 10) / 20 = 50%
        assert!((row.imp_mcwt_pct - 50.0).abs() < 1e-9);
        // (1.5 - 1.2) / 1.5 = 20%
        assert!((row.imp_mcp_pct - 20.0).abs() < 1e-9);
        assert_eq!(t.best[0], 1);
        // Reference TSF is zero (rcp == cp), so the delta is defined as zero.
        assert_eq!(row.imp_tsf_pct, 0.0);
    }

    #[test]
    fn compare_differs_only_in_changed_metric() {
        let a = compute_metrics(&[outcome(0, true, 20, 1.5, 1.5, 20.0)], 1);
        let mut b = a.clone();
        b.mcwt = 10.0;
        let t = compare(&[("a".into(), a), ("b".into(), b)], 0);
        assert_eq!(t.best[0], 1);
        assert_eq!(t.rows[1].imp_mcp_pct, 0.0);
        assert_eq!(t.rows[1].imp_cfr_pct, 0.0);
    }

    #[test]
    fn emit_round_trips_json_and_rejects_nan() {
        let r = compute_metrics(&[outcome(0, true, 10, 1.5, 1.8, 20.0)], 1);
        let dir = std::env::temp_dir().join("evrec_eval_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.json");
        emit(&r, &path, EmitFormat::Json).unwrap();
        let loaded: MetricsReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(loaded, r);

        let mut bad = r.clone();
        bad.mcwt = f64::NAN;
        assert!(emit(&bad, &path, EmitFormat::Json).is_err());

        let csv_path = dir.join("report.csv");
        emit(&r, &csv_path, EmitFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with(REPORT_CSV_HEADER));
    }
}
