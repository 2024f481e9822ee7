//! Busy fraction per unit over fixed-width cycle buckets.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::isa::Unit;
use crate::sim::{EventKind, PerfEventLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSeries {
    pub unit: Unit,
    pub bucket_width: u64,
    /// Busy cycles in each bucket divided by the bucket width. Bucket `i`
    /// covers cycles `[i * bucket_width, (i + 1) * bucket_width)`.
    pub buckets: Vec<f64>,
    pub busy_cycles: u64,
    /// DMA completion cycles, carried on the MXU series as markers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dma_completions: Vec<u64>,
}

fn busy_intervals(log: &PerfEventLog, unit: Unit) -> impl Iterator<Item = (u64, u64)> + '_ {
    log.events.iter().filter_map(move |e| match &e.kind {
        EventKind::UnitBusy { unit: u, cycles, .. } if *u == unit => Some((e.cycle, e.cycle + cycles)),
        _ => None,
    })
}

/// One series per unit, covering `[0, end_cycle)`.
pub fn analyze_utilization(log: &PerfEventLog, bucket_width: u64) -> Result<Vec<UtilizationSeries>, AnalysisError> {
    if bucket_width == 0 {
        return Err(AnalysisError::Parameter("bucket width must be positive".into()));
    }
    let end = log.end_cycle();
    let n = end.div_ceil(bucket_width).max(1) as usize;
    let completions: Vec<u64> = log
        .events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::DmaComplete { .. }))
        .map(|e| e.cycle)
        .collect();
    Ok(Unit::ALL
        .into_iter()
        .map(|unit| {
            let mut busy = vec![0u64; n];
            let mut total = 0;
            for (start, stop) in busy_intervals(log, unit) {
                total += stop - start;
                let mut c = start;
                while c < stop {
                    let b = (c / bucket_width) as usize;
                    let bucket_end = (b as u64 + 1) * bucket_width;
                    let upto = stop.min(bucket_end);
                    if b < n {
                        busy[b] += upto - c;
                    }
                    c = upto;
                }
            }
            UtilizationSeries {
                unit,
                bucket_width,
                buckets: busy.iter().map(|&b| b as f64 / bucket_width as f64).collect(),
                busy_cycles: total,
                dma_completions: if unit == Unit::Mxu {
                    completions.clone()
                } else {
                    Vec::new()
                },
            }
        })
        .collect())
}

/// Fraction of `[start, end)` during which `unit` was busy.
pub fn busy_fraction(log: &PerfEventLog, unit: Unit, start: u64, end: u64) -> f64 {
    if end <= start {
        return 0.0;
    }
    let busy: u64 = busy_intervals(log, unit)
        .map(|(a, b)| b.min(end).saturating_sub(a.max(start)))
        .sum();
    busy as f64 / (end - start) as f64
}

impl UtilizationSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start,bucket_end,busy_fraction\n");
        for (i, f) in self.buckets.iter().enumerate() {
            let s = i as u64 * self.bucket_width;
            out.push_str(&format!("{s},{},{f:.6}\n", s + self.bucket_width));
        }
        out
    }
}
