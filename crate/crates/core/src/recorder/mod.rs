//! Execution recorder.
//!
//! Starting at a breakpoint, the recorder steps a debugger session and keeps
//! two sets: registers already used and memory bytes already used. Before
//! each step it snapshots every input register and every input byte range
//! not yet in those sets, then adds the instruction's inputs and outputs to
//! them. Anything read later was either captured on first use or produced
//! inside the window, so the snapshots plus the instruction stream are
//! enough to re-run the window from a zeroed machine.

mod trace;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::debugger::{Breakpoint, ContinueOutcome, DebugError, Session, StepResult};
use crate::intervals::IntervalSet;
use crate::isa::{instruction_io_sets, DmaSlotState, MachineState, MemRegion, MemSpace, RegisterId, ISA_VERSION};
use crate::sim::{Fault, NullTracker};

pub use trace::{
    read_trace, trace_from_bytes, trace_to_bytes, write_trace, MemSnapshot, RegSnapshot, StreamEntry, TraceError,
    TraceFormat,
};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowEnd {
    /// Recorded the requested number of instructions.
    Count,
    /// The window ended with (and includes) `HALT`.
    Halted,
    /// The instruction at `pc` faulted; it is not part of the stream.
    Faulted { pc: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TraceHeader {
    pub isa_version: u32,
    pub sim_config_hash: String,
    pub start_pc: usize,
    pub instruction_count: u64,
    /// Slots already waited on when the window opened. Replay restores them
    /// so re-issue and redundant waits behave as in the live run.
    #[serde(default)]
    pub completed_slots: Vec<u8>,
    pub end: WindowEnd,
}

/// A recorded window: first-use snapshots plus the linear instruction stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub header: TraceHeader,
    pub reg_snapshots: Vec<RegSnapshot>,
    pub mem_snapshots: Vec<MemSnapshot>,
    pub instr_stream: Vec<StreamEntry>,
}

impl ExecutionTrace {
    pub fn snapshot_bytes(&self) -> u64 {
        let regs: usize = self.reg_snapshots.iter().map(|r| r.value.len()).sum();
        let mem: usize = self.mem_snapshots.iter().map(|m| m.data.len()).sum();
        (regs + mem) as u64
    }

    pub fn len(&self) -> usize {
        self.instr_stream.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instr_stream.is_empty()
    }
}

/// Everything the window wrote: registers and per-space byte sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub regs: BTreeSet<RegisterId>,
    pub hbm: IntervalSet,
    pub vmem: IntervalSet,
}

/// Final values of a footprint read out of some state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowDelta {
    pub regs: Vec<(RegisterId, Vec<u8>)>,
    pub mem: Vec<(MemRegion, Vec<u8>)>,
}

impl Footprint {
    fn space(&self, space: MemSpace) -> &IntervalSet {
        match space {
            MemSpace::Hbm => &self.hbm,
            MemSpace::Vmem => &self.vmem,
        }
    }

    fn space_mut(&mut self, space: MemSpace) -> &mut IntervalSet {
        match space {
            MemSpace::Hbm => &mut self.hbm,
            MemSpace::Vmem => &mut self.vmem,
        }
    }

    pub fn add_region(&mut self, region: &MemRegion) {
        self.space_mut(region.space).insert(region.range());
    }

    pub fn regions(&self) -> Vec<MemRegion> {
        let mut out = Vec::new();
        for space in [MemSpace::Hbm, MemSpace::Vmem] {
            for r in self.space(space).iter() {
                out.push(MemRegion::new(space, r.start, r.end - r.start));
            }
        }
        out
    }

    pub fn delta(&self, state: &MachineState) -> WindowDelta {
        WindowDelta {
            regs: self.regs.iter().map(|&r| (r, state.read_register(r))).collect(),
            mem: self
                .regions()
                .into_iter()
                .map(|r| (r, state.read_memory(&r).expect("footprint fits the state")))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOptions {
    pub breakpoint: Breakpoint,
    pub count: u64,
    /// When a DMA is in flight at the breakpoint, step forward until every
    /// slot is quiescent instead of refusing.
    pub fast_forward: bool,
    /// Cycle budget for reaching the breakpoint (and quiescence).
    pub max_cycles: u64,
}

impl RecordOptions {
    pub fn new(breakpoint: Breakpoint, count: u64) -> Self {
        Self {
            breakpoint,
            count,
            fast_forward: false,
            max_cycles: 100_000_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error(transparent)]
    Breakpoint(#[from] DebugError),
    #[error("breakpoint at pc {pc} was not hit")]
    NotHit { pc: usize },
    #[error("fault before the window opened at pc {pc}: {fault}")]
    Fault { pc: usize, fault: Fault },
    #[error("DMA in flight on slots {slots:?} at the breakpoint; wait for quiescence or fast-forward")]
    DmaInFlight { slots: Vec<u8> },
    #[error("window length must be at least 1")]
    EmptyWindow,
}

impl RecordError {
    pub fn code(&self) -> &'static str {
        match self {
            RecordError::Breakpoint(_) => "BP_INVALID",
            RecordError::NotHit { .. } => "BP_NOT_HIT",
            RecordError::Fault { .. } => "FAULT",
            RecordError::DmaInFlight { .. } => "DMA_IN_FLIGHT",
            RecordError::EmptyWindow => "USAGE",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recording {
    pub trace: ExecutionTrace,
    /// What the window wrote, for comparing live and replayed results.
    pub written: Footprint,
}

fn in_flight(state: &MachineState) -> Vec<u8> {
    (0..state.dma_slots.len() as u8)
        .filter(|&s| state.dma_slots[s as usize].is_outstanding())
        .collect()
}

/// Runs `session` to the breakpoint, then records `count` instructions.
/// The session is left paused after the window, so the caller can read the
/// live results.
pub fn record(session: &mut Session, options: &RecordOptions) -> Result<Recording, RecordError> {
    if options.count == 0 {
        return Err(RecordError::EmptyWindow);
    }
    let start_cycle = session.state().cycle;
    session.set_breakpoint(options.breakpoint)?;
    match session.continue_until_break(options.max_cycles, &mut NullTracker) {
        ContinueOutcome::Break { .. } => {}
        ContinueOutcome::Faulted { pc, fault } => return Err(RecordError::Fault { pc, fault }),
        ContinueOutcome::Halted | ContinueOutcome::BudgetExhausted => {
            return Err(RecordError::NotHit {
                pc: options.breakpoint.pc,
            })
        }
    }
    loop {
        let busy = in_flight(session.state());
        if busy.is_empty() {
            break;
        }
        if !options.fast_forward {
            return Err(RecordError::DmaInFlight { slots: busy });
        }
        if session.state().cycle - start_cycle >= options.max_cycles {
            return Err(RecordError::DmaInFlight { slots: busy });
        }
        match session.step(&mut NullTracker) {
            Ok(StepResult::Stepped(_)) => {}
            Ok(StepResult::Halted) => return Err(RecordError::DmaInFlight { slots: busy }),
            Err(fault) => {
                return Err(RecordError::Fault {
                    pc: session.pc(),
                    fault,
                })
            }
        }
    }
    Ok(record_window(session, options.count))
}

/// Records from wherever `session` is paused; the caller has ensured no DMA
/// is in flight.
pub fn record_window(session: &mut Session, count: u64) -> Recording {
    let state = session.state();
    let completed_slots: Vec<u8> = (0..state.dma_slots.len() as u8)
        .filter(|&s| matches!(state.dma_slots[s as usize], DmaSlotState::Waited(_)))
        .collect();
    let start_pc = session.pc();
    let config_hash = session.simulator().config().hash();

    let mut used_regs: BTreeSet<RegisterId> = BTreeSet::new();
    let mut used_mem = Footprint::default();
    let mut written = Footprint::default();
    let mut reg_snapshots = Vec::new();
    let mut mem_snapshots = Vec::new();
    let mut instr_stream = Vec::new();
    let mut end = WindowEnd::Count;

    for _ in 0..count {
        if session.is_halted() {
            end = WindowEnd::Halted;
            break;
        }
        let pc = session.pc();
        let Some(instr) = session.peek().cloned() else {
            end = WindowEnd::Faulted {
                pc,
                message: format!("pc {pc} is outside the program"),
            };
            break;
        };
        let io = match instruction_io_sets(&instr, session) {
            Ok(io) => io,
            Err(f) => {
                end = WindowEnd::Faulted {
                    pc,
                    message: f.to_string(),
                };
                break;
            }
        };
        // Save values before the step, including registers the
        // instruction also writes.
        let mut new_regs = Vec::new();
        for &r in &io.input_regs {
            if !used_regs.contains(&r) {
                new_regs.push(RegSnapshot {
                    reg: r,
                    value: session.read_register(r),
                });
            }
        }
        // Overlapping inputs of one instruction (MXU_MM with A == B) are
        // saved once.
        let mut new_mem = Vec::new();
        let mut seen = Footprint::default();
        for m in &io.input_mem {
            for sub in used_mem.space(m.space).uncovered(m.range()) {
                for part in seen.space(m.space).uncovered(sub) {
                    let region = MemRegion::new(m.space, part.start, part.end - part.start);
                    let data = session.read_memory(&region).expect("footprint was bounds-checked");
                    new_mem.push(MemSnapshot { region, data });
                }
            }
            seen.add_region(m);
        }
        match session.step(&mut NullTracker) {
            Ok(StepResult::Stepped(_)) => {}
            Ok(StepResult::Halted) => {
                end = WindowEnd::Halted;
                break;
            }
            Err(fault) => {
                end = WindowEnd::Faulted {
                    pc,
                    message: fault.to_string(),
                };
                break;
            }
        }
        for s in &new_regs {
            used_regs.insert(s.reg);
        }
        for s in &new_mem {
            used_mem.add_region(&s.region);
        }
        reg_snapshots.extend(new_regs);
        mem_snapshots.extend(new_mem);
        for &r in &io.input_regs {
            used_regs.insert(r);
        }
        for m in &io.input_mem {
            used_mem.add_region(m);
        }
        for &r in &io.output_regs {
            used_regs.insert(r);
            written.regs.insert(r);
        }
        for m in &io.output_mem {
            used_mem.add_region(m);
            written.add_region(m);
        }
        instr_stream.push(StreamEntry { pc, instr });
        if session.is_halted() {
            end = WindowEnd::Halted;
            break;
        }
    }

    Recording {
        trace: ExecutionTrace {
            header: TraceHeader {
                isa_version: ISA_VERSION,
                sim_config_hash: config_hash,
                start_pc,
                instruction_count: instr_stream.len() as u64,
                completed_slots,
                end,
            },
            reg_snapshots,
            mem_snapshots,
            instr_stream,
        },
        written,
    }
}
