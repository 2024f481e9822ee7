//! VMEM page liveness and free space over time.
//!
//! A page is live from a write until the last read before the next write.
//! Pages read with no earlier write in the window are live from cycle 0.
//! Written values that are never read do not make a page live.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::isa::{MemSpace, PAGE_BYTES};
use crate::sim::{EventKind, PerfEventLog};

pub const BUCKET_PAGES: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeSpace {
    pub total_free_pages: u64,
    pub largest_contiguous_free_pages: u64,
}

impl FreeSpace {
    pub fn largest_contiguous_free_bytes(&self) -> u64 {
        self.largest_contiguous_free_pages * PAGE_BYTES
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VmemSample {
    pub cycle: u64,
    pub free: FreeSpace,
    /// Live pages per bucket (allocation occupancy).
    pub live: Vec<u32>,
    /// Live pages per bucket whose value was written in the window and is
    /// read later (read-after-write use).
    pub used: Vec<u32>,
}

/// Whole-window classification of every page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PageClasses {
    pub untouched: u64,
    pub read_only: u64,
    /// Some write was read back.
    pub used: u64,
    /// Written but no write was ever read back.
    pub unused: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Live {
    start: u64,
    /// Inclusive.
    end: u64,
    from_write: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmemAnalysis {
    pub pages: u64,
    pub sample_interval: u64,
    pub end_cycle: u64,
    pub samples: Vec<VmemSample>,
    pub classes: PageClasses,
    intervals: Vec<Vec<Live>>,
}

#[derive(Clone, Copy)]
struct Open {
    start: u64,
    last_read: Option<u64>,
    from_write: bool,
}

pub fn analyze_vmem(
    log: &PerfEventLog,
    vmem_capacity: u64,
    sample_interval: u64,
) -> Result<VmemAnalysis, AnalysisError> {
    if sample_interval == 0 {
        return Err(AnalysisError::Parameter("sample interval must be positive".into()));
    }
    let pages = vmem_capacity / PAGE_BYTES;
    let mut open: Vec<Option<Open>> = vec![None; pages as usize];
    let mut intervals: Vec<Vec<Live>> = vec![Vec::new(); pages as usize];
    let mut touched_write = vec![false; pages as usize];
    let mut touched_read = vec![false; pages as usize];
    let close = |o: Open, list: &mut Vec<Live>| {
        if let Some(end) = o.last_read {
            list.push(Live {
                start: o.start,
                end,
                from_write: o.from_write,
            });
        }
    };
    for e in &log.events {
        let (region, write) = match &e.kind {
            EventKind::MemRead { region, .. } => (region, false),
            EventKind::MemWrite { region, .. } => (region, true),
            _ => continue,
        };
        if region.space != MemSpace::Vmem || region.length == 0 {
            continue;
        }
        let first = region.offset / PAGE_BYTES;
        let last = ((region.end() - 1) / PAGE_BYTES).min(pages.saturating_sub(1));
        for p in first..=last {
            let p = p as usize;
            if write {
                touched_write[p] = true;
                if let Some(o) = open[p].take() {
                    close(o, &mut intervals[p]);
                }
                open[p] = Some(Open {
                    start: e.cycle,
                    last_read: None,
                    from_write: true,
                });
            } else {
                touched_read[p] = true;
                match &mut open[p] {
                    Some(o) => o.last_read = Some(e.cycle),
                    slot @ None => {
                        *slot = Some(Open {
                            start: 0,
                            last_read: Some(e.cycle),
                            from_write: false,
                        })
                    }
                }
            }
        }
    }
    for (p, o) in open.into_iter().enumerate() {
        if let Some(o) = o {
            close(o, &mut intervals[p]);
        }
    }
    let mut classes = PageClasses::default();
    for p in 0..pages as usize {
        let used = intervals[p].iter().any(|l| l.from_write);
        match (touched_write[p], touched_read[p]) {
            (false, false) => classes.untouched += 1,
            (false, true) => classes.read_only += 1,
            _ if used => classes.used += 1,
            _ => classes.unused += 1,
        }
    }

    let end_cycle = log.end_cycle();
    let buckets = pages.div_ceil(BUCKET_PAGES) as usize;
    // Sweep interval boundaries in cycle order; at equal cycles an end
    // (exclusive) is applied before a start.
    let mut bounds: Vec<(u64, u8, usize, bool)> = Vec::new();
    for (p, list) in intervals.iter().enumerate() {
        for l in list {
            bounds.push((l.start, 1, p, l.from_write));
            bounds.push((l.end + 1, 0, p, l.from_write));
        }
    }
    bounds.sort_unstable();
    let mut bi = 0;
    // Counts, since one page's intervals can touch within a cycle.
    let mut live = vec![0u32; pages as usize];
    let mut used = vec![0u32; pages as usize];
    let mut samples = Vec::new();
    let mut cycle = 0;
    loop {
        while bi < bounds.len() && bounds[bi].0 <= cycle {
            let (_, kind, p, w) = bounds[bi];
            if kind == 1 {
                live[p] += 1;
                used[p] += w as u32;
            } else {
                live[p] -= 1;
                used[p] -= w as u32;
            }
            bi += 1;
        }
        let mut sample = VmemSample {
            cycle,
            free: free_space(&live.iter().map(|&n| n > 0).collect::<Vec<_>>()),
            live: vec![0; buckets],
            used: vec![0; buckets],
        };
        for p in 0..pages as usize {
            if live[p] > 0 {
                sample.live[p / BUCKET_PAGES as usize] += 1;
                if used[p] > 0 {
                    sample.used[p / BUCKET_PAGES as usize] += 1;
                }
            }
        }
        samples.push(sample);
        if cycle >= end_cycle {
            break;
        }
        cycle = (cycle + sample_interval).min(end_cycle);
    }
    Ok(VmemAnalysis {
        pages,
        sample_interval,
        end_cycle,
        samples,
        classes,
        intervals,
    })
}

fn free_space(live: &[bool]) -> FreeSpace {
    let mut total = 0;
    let mut run = 0;
    let mut best = 0;
    for &l in live {
        if l {
            run = 0;
        } else {
            total += 1;
            run += 1;
            best = best.max(run);
        }
    }
    FreeSpace {
        total_free_pages: total,
        largest_contiguous_free_pages: best,
    }
}

impl VmemAnalysis {
    pub fn is_live(&self, page: u64, cycle: u64) -> bool {
        let list = &self.intervals[page as usize];
        let i = list.partition_point(|l| l.start <= cycle);
        i > 0 && list[i - 1].end >= cycle
    }

    /// Exact free space at any cycle.
    pub fn free_at(&self, cycle: u64) -> FreeSpace {
        let live: Vec<bool> = (0..self.pages).map(|p| self.is_live(p, cycle)).collect();
        free_space(&live)
    }

    pub fn min_total_free(&self) -> Option<&VmemSample> {
        self.samples.iter().min_by_key(|s| s.free.total_free_pages)
    }

    pub fn buckets(&self) -> usize {
        self.pages.div_ceil(BUCKET_PAGES) as usize
    }
}
