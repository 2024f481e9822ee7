//! Shared corpus and independent oracles for the integration tests.
//!
//! The oracles recompute results from first principles, without the
//! analyzer's data structures: DMA milestones and stall splits from the
//! timing rules, read-after-write pairs from per-byte last-writer maps
//! built while re-executing, and page liveness by scanning raw events.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xshark::analyzer::Resource;
use xshark::debugger::{Breakpoint, ContinueOutcome, Session, StepResult};
use xshark::isa::{instruction_io_sets, Link, MemSpace, Opcode, RegClass, PAGE_BYTES};
use xshark::recorder::{record_window, ExecutionTrace, Recording, WindowDelta};
use xshark::sim::{EventKind, NullTracker, PerfEventLog, RunStatus, SimConfig, Simulator, StallReason};
use xshark::workloads::{Kernel, RandomParams};

pub const CORPUS_SEEDS: u64 = 500;
pub const MIN_SIZE: usize = 50;
pub const MAX_SIZE: usize = 5000;
pub const RUN_BUDGET: u64 = 50_000_000;

/// Static size of corpus kernel `seed`, spread over `MIN_SIZE..=MAX_SIZE`.
pub fn corpus_size(seed: u64) -> usize {
    MIN_SIZE + (seed as usize * 7919) % (MAX_SIZE - MIN_SIZE + 1)
}

pub fn corpus_kernel(seed: u64) -> Kernel {
    RandomParams {
        size: corpus_size(seed),
        ..Default::default()
    }
    .kernel(seed)
}

/// Kernels of at most 200 static instructions.
pub fn small_kernel(seed: u64) -> Kernel {
    RandomParams {
        size: 50 + (seed as usize * 37) % 151,
        ..Default::default()
    }
    .kernel(seed)
}

pub fn sim() -> Simulator {
    Simulator::new(SimConfig::default()).unwrap()
}

/// Full live run with events.
pub fn live_run(kernel: &Kernel) -> PerfEventLog {
    let sim = sim();
    let mut state = kernel.boot_state(&sim).unwrap();
    let mut log = PerfEventLog::new();
    let r = sim.run(&kernel.program, &mut state, &mut log, RUN_BUDGET);
    assert_eq!(r.status, RunStatus::Halted, "corpus kernels halt");
    log
}

/// A recorded window plus what the live machine produced for it.
pub struct Window {
    pub recording: Recording,
    pub live_delta: WindowDelta,
    /// Naive full-state snapshot size at the window start.
    pub naive_bytes: u64,
}

/// Records a window whose start and length are drawn from `seed`. Opens on
/// a random dynamic instruction, steps past in-flight DMAs, then records.
pub fn random_window(kernel: &Kernel, log: &PerfEventLog, seed: u64) -> Window {
    let pcs: Vec<usize> = log
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::InstrIssue { pc, .. } => Some(pc),
            _ => None,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11);
    let k = rng.gen_range(0..=pcs.len() / 2);
    let pc = pcs[k];
    let hit = pcs[..=k].iter().filter(|&&p| p == pc).count() as u32;
    let count = rng.gen_range(1..=(pcs.len() - k) as u64);
    let sim = sim();
    let mut session = kernel.session(&sim).unwrap();
    session.set_breakpoint(Breakpoint::on_hit(pc, hit)).unwrap();
    match session.continue_until_break(RUN_BUDGET, &mut NullTracker) {
        ContinueOutcome::Break { .. } => {}
        other => panic!("seed {seed}: breakpoint not reached: {other:?}"),
    }
    quiesce(&mut session);
    let naive_bytes = session.state().full_snapshot_bytes();
    let recording = record_window(&mut session, count);
    let live_delta = recording.written.delta(session.state());
    Window {
        recording,
        live_delta,
        naive_bytes,
    }
}

fn quiesce(session: &mut Session) {
    while session.state().dma_slots.iter().any(|s| s.is_outstanding()) {
        match session.step(&mut NullTracker) {
            Ok(StepResult::Stepped(_)) => {}
            other => panic!("could not reach quiescence: {other:?}"),
        }
    }
}

// ---------------------------------------------------------------- DMA oracle

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleDma {
    pub issue: u64,
    pub base_done: u64,
    pub transfer_start: u64,
    pub complete: u64,
}

/// Base latency from issue, then FIFO per link ordered by base-done cycle
/// with ties in issue order, `ceil(len / bandwidth)` cycles on the link.
pub fn dma_oracle(config: &SimConfig, requests: &[(u64, Link, u64)]) -> Vec<OracleDma> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by_key(|&i| (requests[i].0 + config.t_b, i));
    let mut free: HashMap<(MemSpace, MemSpace), u64> = HashMap::new();
    let mut out = vec![None; requests.len()];
    for i in order {
        let (issue, link, len) = requests[i];
        let base_done = issue + config.t_b;
        let bw = config.link_bandwidth.of(link);
        let f = free.entry((link.src, link.dst)).or_insert(0);
        let start = base_done.max(*f);
        let complete = start + (len + bw - 1) / bw;
        *f = complete;
        out[i] = Some(OracleDma {
            issue,
            base_done,
            transfer_start: start,
            complete,
        });
    }
    out.into_iter().map(Option::unwrap).collect()
}

/// `(stall_base, stall_transfer, slack)` of a first wait at `wait`.
pub fn stall_split(wait: u64, base_done: u64, complete: u64) -> (u64, u64, u64) {
    let stall = complete.saturating_sub(wait);
    let base = complete.min(base_done).saturating_sub(wait);
    (base, stall - base, wait.saturating_sub(complete))
}

/// Which of the three wait scenarios hold; exactly one should.
pub fn scenarios(wait: u64, base_done: u64, complete: u64) -> [bool; 3] {
    let (b, t, slack) = stall_split(wait, base_done, complete);
    [
        b > 0 && wait < base_done,
        b == 0 && t > 0 && base_done <= wait && wait < complete,
        wait >= complete && slack == wait - complete,
    ]
}

/// What the log says about one DMA, read straight from raw events.
#[derive(Debug, Clone, Default)]
pub struct LoggedDma {
    pub issue: u64,
    pub link: Option<Link>,
    pub len: u64,
    pub base_done: Option<u64>,
    pub transfer_start: Option<u64>,
    pub complete: Option<u64>,
    pub wait: Option<u64>,
    /// Stall cycles the simulator reported for the first wait, by reason.
    pub stall_base: u64,
    pub stall_transfer: u64,
}

pub fn logged_dmas(log: &PerfEventLog) -> BTreeMap<u32, LoggedDma> {
    let mut out: BTreeMap<u32, LoggedDma> = BTreeMap::new();
    let mut waiting: HashMap<u64, (u32, u64)> = HashMap::new();
    let mut first_wait_instr: HashMap<u32, u64> = HashMap::new();
    for e in &log.events {
        match &e.kind {
            EventKind::DmaIssue { dma, link, dst, .. } => {
                let d = out.entry(*dma).or_default();
                d.issue = e.cycle;
                d.link = Some(*link);
                d.len = dst.length;
            }
            EventKind::DmaBaseDone { dma, .. } => out.entry(*dma).or_default().base_done = Some(e.cycle),
            EventKind::DmaTransferStart { dma, .. } => out.entry(*dma).or_default().transfer_start = Some(e.cycle),
            EventKind::DmaComplete { dma, .. } => out.entry(*dma).or_default().complete = Some(e.cycle),
            EventKind::InstrIssue {
                instr,
                opcode: Opcode::DmaWait,
                dma: Some(dma),
                executed: true,
                ..
            } => {
                let d = out.entry(*dma).or_default();
                if d.wait.is_none() {
                    d.wait = Some(e.cycle);
                    first_wait_instr.insert(*dma, *instr);
                }
            }
            EventKind::StallBegin {
                instr,
                dma: Some(dma),
                reason,
                ..
            } if *reason != StallReason::Hazard => {
                waiting.insert(*instr * 4 + *reason as u64, (*dma, e.cycle));
            }
            EventKind::StallEnd {
                instr,
                dma: Some(dma),
                reason,
                ..
            } if *reason != StallReason::Hazard => {
                if let Some((d, start)) = waiting.remove(&(*instr * 4 + *reason as u64)) {
                    assert_eq!(d, *dma);
                    if first_wait_instr.get(dma) == Some(instr) {
                        let rec = out.entry(*dma).or_default();
                        match reason {
                            StallReason::DmaBase => rec.stall_base += e.cycle - start,
                            _ => rec.stall_transfer += e.cycle - start,
                        }
                    }
                }
            }
            _ => {}
        }
    }
    out
}

// ---------------------------------------------------------------- RAW oracle

pub type RawEdge = (usize, usize, Resource);

/// Re-executes `kernel` and records every exact read-after-write pair: byte
/// by byte for memory, register by register otherwise.
pub fn raw_oracle(kernel: &Kernel) -> BTreeSet<RawEdge> {
    let sim = sim();
    let mut state = kernel.boot_state(&sim).unwrap();
    let mut reg_writer: HashMap<(RegClass, u8), usize> = HashMap::new();
    let mut byte_writer: HashMap<(MemSpace, u64), usize> = HashMap::new();
    let mut edges = BTreeSet::new();
    let mut j = 0;
    while !state.halted {
        let instr = kernel.program.instructions()[state.pc].clone();
        let io = instruction_io_sets(&instr, &state).unwrap();
        for r in &io.input_regs {
            if let Some(&w) = reg_writer.get(&(r.class(), r.index())) {
                edges.insert((j, w, Resource::Register(*r)));
            }
        }
        for m in &io.input_mem {
            for b in m.offset..m.offset + m.length {
                if let Some(&w) = byte_writer.get(&(m.space, b)) {
                    edges.insert((j, w, Resource::Memory(m.space)));
                }
            }
        }
        sim.step(&mut state, &kernel.program, &mut NullTracker).unwrap();
        for r in &io.output_regs {
            reg_writer.insert((r.class(), r.index()), j);
        }
        for m in &io.output_mem {
            for b in m.offset..m.offset + m.length {
                byte_writer.insert((m.space, b), j);
            }
        }
        j += 1;
    }
    edges
}

// ------------------------------------------------------- per-byte snapshots

/// True when no byte is covered by two memory snapshots and no register is
/// snapshotted twice.
pub fn snapshots_disjoint(trace: &ExecutionTrace) -> bool {
    let mut regs = HashSet::new();
    if !trace.reg_snapshots.iter().all(|s| regs.insert(s.reg)) {
        return false;
    }
    let mut bytes = HashSet::new();
    trace
        .mem_snapshots
        .iter()
        .all(|s| (s.region.offset..s.region.offset + s.region.length).all(|b| bytes.insert((s.region.space, b))))
}

// ------------------------------------------------------------ page liveness

/// Live VMEM pages at `cycle`, scanning raw events: a read keeps its page
/// live back to the previous write of that page (or cycle 0).
pub fn live_pages(log: &PerfEventLog, cycle: u64) -> BTreeSet<u64> {
    let mut last_write: HashMap<u64, u64> = HashMap::new();
    let mut live = BTreeSet::new();
    for e in &log.events {
        let (region, write) = match &e.kind {
            EventKind::MemRead { region, .. } => (region, false),
            EventKind::MemWrite { region, .. } => (region, true),
            _ => continue,
        };
        if region.space != MemSpace::Vmem || region.length == 0 {
            continue;
        }
        for p in region.offset / PAGE_BYTES..=(region.offset + region.length - 1) / PAGE_BYTES {
            if write {
                last_write.insert(p, e.cycle);
            } else {
                let from = last_write.get(&p).copied().unwrap_or(0);
                if from <= cycle && cycle <= e.cycle {
                    live.insert(p);
                }
            }
        }
    }
    live
}

/// `(total_free, largest_contiguous_free)` pages for a live set.
pub fn free_of(live: &BTreeSet<u64>, pages: u64) -> (u64, u64) {
    let mut best = 0;
    let mut prev: Option<u64> = None;
    for &p in live {
        let gap = match prev {
            None => p,
            Some(q) => p - q - 1,
        };
        best = best.max(gap);
        prev = Some(p);
    }
    let tail = match prev {
        None => pages,
        Some(q) => pages - q - 1,
    };
    (pages - live.len() as u64, best.max(tail))
}
