//! The report bundle: `report.json`, `dma_timeline.svg`, one
//! `util_<unit>.csv` per unit, `vmem_heatmap.svg` and `suggestions.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    analyze_dma, analyze_utilization, analyze_vmem, build_dependency_graph, label_regions, suggest, AnalysisError,
    DependencyGraph, DmaRecord, PageClasses, StallTotals, Suggestion, UtilizationSeries, VmemAnalysis,
};
use crate::isa::Unit;
use crate::sim::PerfEventLog;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub bucket_width: u64,
    pub sample_interval: u64,
    pub vmem_capacity: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            bucket_width: 64,
            sample_interval: 64,
            vmem_capacity: crate::isa::DEFAULT_VMEM_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub unit: Unit,
    pub busy_cycles: u64,
    pub busy_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmemSummary {
    pub pages: u64,
    pub sample_interval: u64,
    pub samples: usize,
    pub classes: PageClasses,
    pub min_total_free_pages: u64,
    pub min_total_free_cycle: u64,
    pub min_largest_contiguous_free_pages: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BacktailEntry {
    pub dma: Option<u32>,
    pub instr: usize,
    pub earliest_conservative: usize,
    pub earliest_relaxed: usize,
    pub backtail: u64,
    pub chain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub end_cycle: u64,
    pub instructions: usize,
    pub stalls: StallTotals,
    pub scenarios: BTreeMap<String, usize>,
    pub dma: Vec<DmaRecord>,
    pub utilization: Vec<UnitSummary>,
    pub vmem: VmemSummary,
    pub backtails: Vec<BacktailEntry>,
}

/// Everything one analysis pass produces.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub report: Report,
    pub utilization: Vec<UtilizationSeries>,
    pub vmem: VmemAnalysis,
    pub graph: DependencyGraph,
    pub suggestions: Vec<Suggestion>,
}

/// Runs every analysis over `log`. `regions` optionally names the region of
/// each pc.
pub fn analyze(
    log: &PerfEventLog,
    options: &ReportOptions,
    regions: Option<&[Option<String>]>,
) -> Result<Bundle, AnalysisError> {
    let mut dma = analyze_dma(log)?;
    if let Some(r) = regions {
        label_regions(&mut dma, r);
    }
    let utilization = analyze_utilization(log, options.bucket_width)?;
    let vmem = analyze_vmem(log, options.vmem_capacity, options.sample_interval)?;
    let graph = build_dependency_graph(log)?;
    let suggestions = suggest(&graph, &dma, Some(&vmem));
    let end_cycle = log.end_cycle();
    let mut scenarios = BTreeMap::new();
    for r in &dma {
        let key = serde_json::to_value(r.scenario).expect("scenario serializes");
        *scenarios
            .entry(key.as_str().unwrap_or_default().to_string())
            .or_insert(0) += 1;
    }
    let min = vmem.min_total_free();
    let report = Report {
        version: REPORT_VERSION,
        end_cycle,
        instructions: graph.len(),
        stalls: StallTotals::of(log),
        scenarios,
        dma,
        utilization: utilization
            .iter()
            .map(|s| UnitSummary {
                unit: s.unit,
                busy_cycles: s.busy_cycles,
                busy_fraction: if end_cycle == 0 {
                    0.0
                } else {
                    s.busy_cycles as f64 / end_cycle as f64
                },
            })
            .collect(),
        vmem: VmemSummary {
            pages: vmem.pages,
            sample_interval: vmem.sample_interval,
            samples: vmem.samples.len(),
            classes: vmem.classes,
            min_total_free_pages: min.map_or(vmem.pages, |s| s.free.total_free_pages),
            min_total_free_cycle: min.map_or(0, |s| s.cycle),
            min_largest_contiguous_free_pages: vmem
                .samples
                .iter()
                .map(|s| s.free.largest_contiguous_free_pages)
                .min()
                .unwrap_or(vmem.pages),
        },
        backtails: graph
            .dmas
            .iter()
            .map(|d| BacktailEntry {
                dma: d.dma,
                instr: d.instr,
                earliest_conservative: d.earliest_conservative,
                earliest_relaxed: d.earliest_relaxed,
                backtail: d.backtail,
                chain: d.chain.clone(),
            })
            .collect(),
    };
    Ok(Bundle {
        report,
        utilization,
        vmem,
        graph,
        suggestions,
    })
}

/// Writes the bundle into `dir`, creating it if needed. Returns the paths
/// written.
pub fn write_bundle(dir: &Path, bundle: &Bundle) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, contents: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    put("report.json".into(), to_json(&bundle.report))?;
    put(
        "dma_timeline.svg".into(),
        dma_timeline_svg(&bundle.report.dma, bundle.report.end_cycle),
    )?;
    for s in &bundle.utilization {
        put(format!("util_{}.csv", s.unit.name()), s.to_csv())?;
    }
    put("vmem_heatmap.svg".into(), vmem_heatmap_svg(&bundle.vmem))?;
    put("suggestions.json".into(), to_json(&bundle.suggestions))?;
    Ok(written)
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report values serialize");
    s.push('\n');
    s
}

const ROW: f64 = 14.0;
const LEFT: f64 = 110.0;
const WIDTH: f64 = 900.0;

/// One row per DMA: base latency, queueing, transfer, and the stall at its
/// first wait.
pub fn dma_timeline_svg(records: &[DmaRecord], end_cycle: u64) -> String {
    let scale = WIDTH / end_cycle.max(1) as f64;
    let height = 40.0 + ROW * records.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="monospace" font-size="10">"#,
        LEFT + WIDTH + 20.0
    );
    let _ = writeln!(s, r#"<text x="4" y="12">DMA timeline, {end_cycle} cycles</text>"#);
    let bar = |s: &mut String, y: f64, from: u64, to: u64, color: &str, title: &str| {
        if to > from {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{y:.1}" width="{:.2}" height="{:.1}" fill="{color}"><title>{title}</title></rect>"#,
                LEFT + from as f64 * scale,
                (to - from) as f64 * scale,
                ROW - 3.0
            );
        }
    };
    for (i, r) in records.iter().enumerate() {
        let y = 24.0 + ROW * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="4" y="{:.1}">dma {} s{} {}</text>"#,
            y + ROW - 4.0,
            r.dma,
            r.slot,
            r.link
        );
        let end = r.complete.unwrap_or(end_cycle);
        let base = r.base_done.unwrap_or(end).min(end);
        let start = r.transfer_start.unwrap_or(end).min(end);
        bar(
            &mut s,
            y,
            r.issue,
            base,
            "#bbbbbb",
            &format!("base latency {}..{base}", r.issue),
        );
        bar(&mut s, y, base, start, "#e0c060", &format!("queued {base}..{start}"));
        bar(&mut s, y, start, end, "#4a7fc1", &format!("transfer {start}..{end}"));
        if let Some(w) = r.wait_cycle {
            if r.stall() > 0 {
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{:.1}" width="{:.2}" height="3" fill="#d03030"><title>stall {} (base {}, transfer {})</title></rect>"##,
                    LEFT + w as f64 * scale,
                    y + ROW - 3.0,
                    (end.saturating_sub(w)) as f64 * scale,
                    r.stall(),
                    r.stall_base,
                    r.stall_transfer
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

const MAX_COLUMNS: usize = 400;

/// Buckets of 256 pages down, samples across; darker is more live pages.
pub fn vmem_heatmap_svg(v: &VmemAnalysis) -> String {
    let buckets = v.buckets();
    let columns = v.samples.len().clamp(1, MAX_COLUMNS);
    let per_column = v.samples.len().div_ceil(columns).max(1);
    let cell_w = WIDTH / columns as f64;
    let cell_h = 4.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="monospace" font-size="10">"#,
        LEFT + WIDTH + 20.0,
        30.0 + cell_h * buckets as f64
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="12">VMEM live pages per {}-page bucket, {} samples every {} cycles</text>"#,
        super::BUCKET_PAGES,
        v.samples.len(),
        v.sample_interval
    );
    for (c, group) in v.samples.chunks(per_column).enumerate() {
        for b in 0..buckets {
            let live = group.iter().map(|smp| smp.live[b]).max().unwrap_or(0);
            if live == 0 {
                continue;
            }
            let shade = 255 - (live as f64 / super::BUCKET_PAGES as f64 * 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.1}" width="{:.2}" height="{cell_h}" fill="rgb({shade},{shade},255)"/>"#,
                LEFT + c as f64 * cell_w,
                20.0 + cell_h * b as f64,
                cell_w
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
