use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::runtime::{LogRecord, MetricsReport, SweepTrajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub metrics: MetricsReport,
}

/// CSV with one row per condition. Missing averages are left blank.
pub fn metrics_table(rows: &[ReportRow]) -> String {
    let mut out = String::from("condition,trials,succ_pct,cf_pct,avg_collisions\n");
    for r in rows {
        let avg = r
            .metrics
            .avg_collisions
            .map_or(String::new(), |a| format!("{a:.3}"));
        let _ = writeln!(
            out,
            "{},{},{:.1},{:.1},{}",
            r.label, r.metrics.trials, r.metrics.succ_pct, r.metrics.cf_pct, avg
        );
    }
    out
}

/// Altitude over a flat floor at zero, one row per control record; the last
/// column marks the control record closest after each disturbance.
pub fn hover_series(records: &[LogRecord], reference_altitude: f64) -> String {
    let mut out = String::from("t,altitude,deviation,disturbance\n");
    let mut pending: Vec<f64> = records
        .iter()
        .filter_map(|r| match r {
            LogRecord::Disturbance { t, .. } => Some(*t),
            _ => None,
        })
        .collect();
    pending.reverse();
    for r in records {
        if let LogRecord::Control { t, eta, .. } = r {
            let mark = match pending.last() {
                Some(td) if *t >= *td - 1e-9 => {
                    pending.pop();
                    1
                }
                _ => 0,
            };
            let _ = writeln!(
                out,
                "{t:.2},{:.5},{:.5},{mark}",
                eta[2],
                eta[2] - reference_altitude
            );
        }
    }
    out
}

/// Planar rollout of every sampled sequence, bearings in degrees.
pub fn sweep_traces(trajectories: &[SweepTrajectory]) -> String {
    let mut out = String::from("d_deg,s,seed,step,x,y\n");
    for tr in trajectories {
        for (k, p) in tr.poses.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:.1},{:.2},{},{k},{:.5},{:.5}",
                tr.d.to_degrees(),
                tr.s,
                tr.seed,
                p.x,
                p.y
            );
        }
    }
    out
}
