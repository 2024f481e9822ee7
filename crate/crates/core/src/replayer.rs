//! Trace replay.
//!
//! A replay starts from a zeroed machine, applies the trace snapshots and
//! executes the recorded stream in order (or in a caller-supplied order).
//! It tracks which registers and bytes are defined; an instruction that
//! reads anything else is a divergence, never a silent zero.

use thiserror::Error;

use crate::intervals::IntervalSet;
use crate::isa::{instruction_io_sets, DmaSlotState, MachineState, MemRegion, MemSpace, RegisterId};
use crate::recorder::{ExecutionTrace, TraceError};
use crate::sim::{Fault, PerfTracker, SimConfig, Simulator};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayOptions {
    /// Replay under a config whose hash differs from the recording config,
    /// for what-if timing experiments. Architectural results are unaffected
    /// by timing-only fields.
    pub allow_config_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DivergenceReason {
    UndefinedRegister(RegisterId),
    UndefinedMemory(MemRegion),
    /// The recorded stream continues at `recorded` but replay went to `actual`.
    Branch {
        recorded: usize,
        actual: usize,
    },
}

impl std::fmt::Display for DivergenceReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DivergenceReason::UndefinedRegister(r) => {
                write!(f, "reads {r}, which no snapshot or earlier instruction defines")
            }
            DivergenceReason::UndefinedMemory(m) => {
                write!(f, "reads {m}, which no snapshot or earlier instruction defines")
            }
            DivergenceReason::Branch { recorded, actual } => {
                write!(
                    f,
                    "control flow went to pc {actual}, recorded stream continues at pc {recorded}"
                )
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Config(#[from] TraceError),
    #[error("replay diverged at position {position} (stream index {index}, pc {pc}): {reason}")]
    Divergence {
        position: usize,
        index: usize,
        pc: usize,
        reason: DivergenceReason,
    },
    #[error("fault at position {position} (stream index {index}, pc {pc}): {fault}")]
    Fault {
        position: usize,
        index: usize,
        pc: usize,
        fault: Fault,
    },
    #[error("schedule is not a permutation of the {len}-instruction stream")]
    Schedule { len: usize },
    #[error("snapshot does not fit the configured machine: {0}")]
    Snapshot(String),
}

impl ReplayError {
    pub fn code(&self) -> &'static str {
        match self {
            ReplayError::Config(e) => e.code(),
            ReplayError::Divergence { .. } => "DIVERGENCE",
            ReplayError::Fault { .. } => "FAULT",
            ReplayError::Schedule { .. } => "BAD_SCHEDULE",
            ReplayError::Snapshot(_) => "TRACE_FORMAT",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub state: MachineState,
    pub end_cycle: u64,
}

struct Defined {
    regs: [bool; RegisterId::FLAT_COUNT],
    hbm: IntervalSet,
    vmem: IntervalSet,
}

impl Defined {
    fn new() -> Self {
        Self {
            regs: [false; RegisterId::FLAT_COUNT],
            hbm: IntervalSet::new(),
            vmem: IntervalSet::new(),
        }
    }

    fn mem(&mut self, space: MemSpace) -> &mut IntervalSet {
        match space {
            MemSpace::Hbm => &mut self.hbm,
            MemSpace::Vmem => &mut self.vmem,
        }
    }
}

/// Zeroed state with the trace snapshots applied, positioned at the window
/// start, and the matching set of defined locations.
fn initial_state(trace: &ExecutionTrace, sim: &Simulator) -> Result<(MachineState, Defined), ReplayError> {
    let mut state = sim.reset_state();
    let mut defined = Defined::new();
    for s in &trace.reg_snapshots {
        state.write_register(s.reg, &s.value);
        defined.regs[s.reg.flat()] = true;
    }
    for s in &trace.mem_snapshots {
        state
            .write_memory(s.region.space, s.region.offset, &s.data)
            .map_err(|e| ReplayError::Snapshot(e.to_string()))?;
        defined.mem(s.region.space).insert(s.region.range());
    }
    for &slot in &trace.header.completed_slots {
        let entry = state
            .dma_slots
            .get_mut(slot as usize)
            .ok_or_else(|| ReplayError::Snapshot(format!("slot {slot}")))?;
        *entry = DmaSlotState::Waited(None);
    }
    state.pc = trace.header.start_pc;
    Ok((state, defined))
}

fn simulator(trace: &ExecutionTrace, config: &SimConfig, options: &ReplayOptions) -> Result<Simulator, ReplayError> {
    if !options.allow_config_mismatch {
        trace.check_config(config)?;
    }
    Simulator::new(*config).map_err(|e| ReplayError::Snapshot(e.to_string()))
}

/// Replays the recorded stream in recorded order, checking that control flow
/// matches the recording.
pub fn replay(
    trace: &ExecutionTrace,
    config: &SimConfig,
    tracker: &mut dyn PerfTracker,
    options: &ReplayOptions,
) -> Result<ReplayOutcome, ReplayError> {
    let order: Vec<usize> = (0..trace.len()).collect();
    run(trace, &order, config, tracker, options, true)
}

/// Replays the stream in the order `order[position] = stream index`.
pub fn replay_with_schedule(
    trace: &ExecutionTrace,
    order: &[usize],
    config: &SimConfig,
    tracker: &mut dyn PerfTracker,
    options: &ReplayOptions,
) -> Result<ReplayOutcome, ReplayError> {
    let mut seen = vec![false; trace.len()];
    if order.len() != trace.len()
        || order
            .iter()
            .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
    {
        return Err(ReplayError::Schedule { len: trace.len() });
    }
    let identity = order.iter().enumerate().all(|(p, &i)| p == i);
    run(trace, order, config, tracker, options, identity)
}

fn run(
    trace: &ExecutionTrace,
    order: &[usize],
    config: &SimConfig,
    tracker: &mut dyn PerfTracker,
    options: &ReplayOptions,
    check_branches: bool,
) -> Result<ReplayOutcome, ReplayError> {
    let sim = simulator(trace, config, options)?;
    let (mut state, mut defined) = initial_state(trace, &sim)?;
    for (position, &index) in order.iter().enumerate() {
        let entry = &trace.instr_stream[index];
        let diverge = |reason| ReplayError::Divergence {
            position,
            index,
            pc: entry.pc,
            reason,
        };
        state.pc = entry.pc;

        // Check address and guard registers before computing the footprint,
        // which depends on their values.
        if let Some(p) = entry.instr.predicate() {
            if !defined.regs[p.flat()] {
                return Err(diverge(DivergenceReason::UndefinedRegister(p)));
            }
        }
        let io = match instruction_io_sets(&entry.instr, &state) {
            Ok(io) => io,
            Err(f) => {
                if let Some(&r) = entry.instr.src_regs().iter().find(|r| !defined.regs[r.flat()]) {
                    return Err(diverge(DivergenceReason::UndefinedRegister(r)));
                }
                return Err(ReplayError::Fault {
                    position,
                    index,
                    pc: entry.pc,
                    fault: f.into(),
                });
            }
        };
        if let Some(&r) = io.input_regs.iter().find(|r| !defined.regs[r.flat()]) {
            return Err(diverge(DivergenceReason::UndefinedRegister(r)));
        }
        for m in &io.input_mem {
            if let Some(gap) = defined.mem(m.space).uncovered(m.range()).first() {
                return Err(diverge(DivergenceReason::UndefinedMemory(MemRegion::new(
                    m.space,
                    gap.start,
                    gap.end - gap.start,
                ))));
            }
        }
        let out = sim
            .execute(&mut state, &entry.instr, tracker)
            .map_err(|fault| ReplayError::Fault {
                position,
                index,
                pc: entry.pc,
                fault,
            })?;
        for &r in &io.output_regs {
            defined.regs[r.flat()] = true;
        }
        for m in &io.output_mem {
            defined.mem(m.space).insert(m.range());
        }
        if check_branches {
            if let Some(next) = trace.instr_stream.get(index + 1) {
                if out.next_pc != next.pc && !out.halted {
                    return Err(diverge(DivergenceReason::Branch {
                        recorded: next.pc,
                        actual: out.next_pc,
                    }));
                }
            }
        }
    }
    let end_cycle = sim.finish(&mut state, tracker);
    Ok(ReplayOutcome { state, end_cycle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::debugger::{Breakpoint, Session};
    use crate::isa::{Instruction as I, Link, Program};
    use crate::recorder::{record, RecordOptions, Recording};
    use crate::sim::{EventKind, NullTracker, PerfEventLog};

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    fn live(program: Vec<I>, setup: impl FnOnce(&mut MachineState), bp: usize, count: u64) -> (Recording, Session) {
        let sim = Simulator::new(cfg()).unwrap();
        let mut state = sim.reset_state();
        setup(&mut state);
        let mut s = Session::new(sim, Program::new(program, 0).unwrap(), state);
        let r = record(&mut s, &RecordOptions::new(Breakpoint::at(bp), count)).unwrap();
        (r, s)
    }

    fn dma_kernel() -> Vec<I> {
        vec![
            I::s_ldi(1, 0x1000),
            I::s_ldi(2, 0x4000),
            I::s_ldi(3, 256),
            I::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3),
            I::dma_wait(0),
            I::v_load(0, 2, 64),
            I::v_add(1, 0, 0),
            I::v_store(2, 1, 0),
            I::halt(),
        ]
    }

    fn hbm_data(s: &mut MachineState) {
        let data: Vec<u8> = (0..=255).collect();
        s.write_memory(MemSpace::Hbm, 0x1000, &data).unwrap();
    }

    #[test]
    fn replay_matches_live_deltas() {
        let (r, s) = live(dma_kernel(), hbm_data, 0, 100);
        let out = replay(&r.trace, &cfg(), &mut NullTracker, &ReplayOptions::default()).unwrap();
        assert_eq!(r.written.delta(&out.state), r.written.delta(s.state()));
        assert!(out.state.halted);
    }

    #[test]
    fn identity_schedule_equals_replay() {
        let (r, _) = live(dma_kernel(), hbm_data, 0, 100);
        let mut a = PerfEventLog::new();
        let mut b = PerfEventLog::new();
        replay(&r.trace, &cfg(), &mut a, &ReplayOptions::default()).unwrap();
        let order: Vec<usize> = (0..r.trace.len()).collect();
        replay_with_schedule(&r.trace, &order, &cfg(), &mut b, &ReplayOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn swapping_independent_loads_keeps_state() {
        let (r, _) = live(
            vec![I::s_ldi(0, 1), I::s_ldi(1, 2), I::s_add(2, 0, 1), I::halt()],
            |_| {},
            0,
            10,
        );
        let a = replay(&r.trace, &cfg(), &mut NullTracker, &ReplayOptions::default()).unwrap();
        let b = replay_with_schedule(
            &r.trace,
            &[1, 0, 2, 3],
            &cfg(),
            &mut NullTracker,
            &ReplayOptions::default(),
        )
        .unwrap();
        assert!(a.state.arch_eq(&b.state));
    }

    #[test]
    fn hoisting_above_address_producer_diverges() {
        let (r, _) = live(dma_kernel(), hbm_data, 0, 100);
        let err = replay_with_schedule(
            &r.trace,
            &[0, 1, 3, 2, 4, 5, 6, 7, 8],
            &cfg(),
            &mut NullTracker,
            &ReplayOptions::default(),
        )
        .unwrap_err();
        match err {
            ReplayError::Divergence {
                position: 2,
                index: 3,
                reason,
                ..
            } => {
                assert_eq!(reason, DivergenceReason::UndefinedRegister(RegisterId::s(3)))
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_snapshot_is_a_divergence() {
        let (mut r, _) = live(vec![I::s_add(1, 0, 2), I::halt()], |s| s.sregs[0] = 1, 0, 10);
        r.trace.reg_snapshots.remove(0);
        let err = replay(&r.trace, &cfg(), &mut NullTracker, &ReplayOptions::default()).unwrap_err();
        assert_eq!(err.code(), "DIVERGENCE");
    }

    #[test]
    fn bad_schedule_is_rejected() {
        let (r, _) = live(vec![I::s_ldi(0, 1), I::halt()], |_| {}, 0, 10);
        let err = replay_with_schedule(&r.trace, &[0, 0], &cfg(), &mut NullTracker, &ReplayOptions::default());
        assert!(matches!(err, Err(ReplayError::Schedule { len: 2 })));
    }

    #[test]
    fn different_base_latency_same_results_different_timing() {
        let (r, _) = live(dma_kernel(), hbm_data, 0, 100);
        let slow = SimConfig { t_b: 300, ..cfg() };
        assert_eq!(
            replay(&r.trace, &slow, &mut NullTracker, &ReplayOptions::default())
                .unwrap_err()
                .code(),
            "CONFIG_MISMATCH"
        );
        let mut la = PerfEventLog::new();
        let mut lb = PerfEventLog::new();
        let a = replay(&r.trace, &cfg(), &mut la, &ReplayOptions::default()).unwrap();
        let b = replay(
            &r.trace,
            &slow,
            &mut lb,
            &ReplayOptions {
                allow_config_mismatch: true,
            },
        )
        .unwrap();
        assert!(a.state.arch_eq(&b.state));
        assert_ne!(la, lb);
        assert_eq!(b.end_cycle - a.end_cycle, 200);
    }

    #[test]
    fn window_ending_mid_dma_leaves_it_incomplete() {
        let (r, _) = live(dma_kernel(), hbm_data, 0, 4);
        let mut log = PerfEventLog::new();
        replay(&r.trace, &cfg(), &mut log, &ReplayOptions::default()).unwrap();
        assert!(log.events.iter().any(|e| matches!(e.kind, EventKind::DmaIssue { .. })));
        assert!(!log
            .events
            .iter()
            .any(|e| matches!(e.kind, EventKind::DmaComplete { .. })));
    }

    #[test]
    fn completed_slots_survive_into_replay() {
        // Window starts after slot 0 was waited; it re-issues on slot 0.
        let mut prog = dma_kernel();
        prog.truncate(5);
        prog.extend([I::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3), I::dma_wait(0), I::halt()]);
        let (r, s) = live(prog, hbm_data, 5, 10);
        assert_eq!(r.trace.header.completed_slots, vec![0]);
        let out = replay(&r.trace, &cfg(), &mut NullTracker, &ReplayOptions::default()).unwrap();
        assert_eq!(r.written.delta(&out.state), r.written.delta(s.state()));
    }
}
