//! Step debugger over the simulator.
//!
//! ```
//! use xshark::debugger::{Breakpoint, ContinueOutcome, Session};
//! use xshark::isa::{Instruction, Program, RegisterId};
//! use xshark::sim::{NullTracker, SimConfig, Simulator};
//!
//! let program = Program::new(vec![Instruction::s_ldi(0, 7), Instruction::halt()], 0).unwrap();
//! let sim = Simulator::new(SimConfig::default()).unwrap();
//! let state = sim.reset_state();
//! let mut session = Session::new(sim, program, state);
//! session.set_breakpoint(Breakpoint::at(1)).unwrap();
//! let stop = session.continue_until_break(1_000, &mut NullTracker);
//! assert!(matches!(stop, ContinueOutcome::Break { pc: 1, .. }));
//! assert_eq!(session.read_register(RegisterId::s(0)), 7u32.to_le_bytes());
//! ```

use thiserror::Error;

use crate::isa::{AccessFault, ArchView, Instruction, MachineState, MemRegion, MemSpace, Program, RegisterId};
use crate::sim::{Fault, PerfTracker, Simulator, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Breakpoint {
    pub pc: usize,
    /// Break on this hit (1-based). `None` breaks on every hit.
    pub hit_count_target: Option<u32>,
}

impl Breakpoint {
    pub fn at(pc: usize) -> Self {
        Self {
            pc,
            hit_count_target: None,
        }
    }

    pub fn on_hit(pc: usize, hit: u32) -> Self {
        Self {
            pc,
            hit_count_target: Some(hit),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BreakpointId(pub usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DebugError {
    #[error("breakpoint pc {pc} is outside the {len}-instruction program")]
    PcOutOfBounds { pc: usize, len: usize },
    #[error("hit count must be at least 1")]
    ZeroHitCount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContinueOutcome {
    /// Paused before executing `pc`.
    Break {
        id: BreakpointId,
        pc: usize,
        hit: u32,
    },
    Halted,
    BudgetExhausted,
    Faulted {
        pc: usize,
        fault: Fault,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepResult {
    Stepped(StepOutcome),
    /// The machine had already halted; nothing ran.
    Halted,
}

#[derive(Debug, Clone)]
struct BreakpointEntry {
    bp: Breakpoint,
    hits: u32,
}

/// A paused simulation with breakpoints.
#[derive(Debug, Clone)]
pub struct Session {
    sim: Simulator,
    program: Program,
    state: MachineState,
    breakpoints: Vec<BreakpointEntry>,
    /// Set while paused on a breakpoint so the next resume does not count
    /// the same arrival twice.
    paused_on_break: bool,
}

impl Session {
    pub fn new(sim: Simulator, program: Program, state: MachineState) -> Self {
        Self {
            sim,
            program,
            state,
            breakpoints: Vec::new(),
            paused_on_break: false,
        }
    }

    /// A session on a zeroed state positioned at the program entry.
    pub fn boot(sim: Simulator, program: Program) -> Self {
        let mut state = sim.reset_state();
        state.pc = program.entry_pc();
        Self::new(sim, program, state)
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn into_state(self) -> MachineState {
        self.state
    }

    pub fn pc(&self) -> usize {
        self.state.pc
    }

    pub fn is_halted(&self) -> bool {
        self.state.halted
    }

    pub fn set_breakpoint(&mut self, bp: Breakpoint) -> Result<BreakpointId, DebugError> {
        if bp.pc >= self.program.len() {
            return Err(DebugError::PcOutOfBounds {
                pc: bp.pc,
                len: self.program.len(),
            });
        }
        if bp.hit_count_target == Some(0) {
            return Err(DebugError::ZeroHitCount);
        }
        self.breakpoints.push(BreakpointEntry { bp, hits: 0 });
        Ok(BreakpointId(self.breakpoints.len() - 1))
    }

    /// The instruction that the next `step` will execute.
    pub fn peek(&self) -> Option<&Instruction> {
        self.program.get(self.state.pc)
    }

    pub fn step(&mut self, tracker: &mut dyn PerfTracker) -> Result<StepResult, Fault> {
        if self.state.halted {
            return Ok(StepResult::Halted);
        }
        self.paused_on_break = false;
        self.sim
            .step(&mut self.state, &self.program, tracker)
            .map(StepResult::Stepped)
    }

    /// Runs until a breakpoint matches before the instruction at its pc, the
    /// machine halts or faults, or `max_cycles` more cycles have elapsed.
    pub fn continue_until_break(&mut self, max_cycles: u64, tracker: &mut dyn PerfTracker) -> ContinueOutcome {
        let limit = self.state.cycle.saturating_add(max_cycles);
        let mut skip_check = self.paused_on_break;
        self.paused_on_break = false;
        loop {
            if self.state.halted {
                return ContinueOutcome::Halted;
            }
            if !skip_check {
                if let Some(stop) = self.arrive() {
                    self.paused_on_break = true;
                    return stop;
                }
            }
            skip_check = false;
            if self.state.cycle >= limit {
                return ContinueOutcome::BudgetExhausted;
            }
            if let Err(fault) = self.sim.step(&mut self.state, &self.program, tracker) {
                return ContinueOutcome::Faulted {
                    pc: self.state.pc,
                    fault,
                };
            }
        }
    }

    fn arrive(&mut self) -> Option<ContinueOutcome> {
        let pc = self.state.pc;
        let mut stop = None;
        for (i, e) in self.breakpoints.iter_mut().enumerate() {
            if e.bp.pc != pc {
                continue;
            }
            e.hits += 1;
            let matches = e.bp.hit_count_target.is_none_or(|n| n == e.hits);
            if matches && stop.is_none() {
                stop = Some(ContinueOutcome::Break {
                    id: BreakpointId(i),
                    pc,
                    hit: e.hits,
                });
            }
        }
        stop
    }

    pub fn read_register(&self, reg: RegisterId) -> Vec<u8> {
        self.state.read_register(reg)
    }

    pub fn read_memory(&self, region: &MemRegion) -> Result<Vec<u8>, AccessFault> {
        self.state.read_memory(region)
    }
}

impl ArchView for Session {
    fn sreg(&self, index: u8) -> u32 {
        self.state.sreg(index)
    }

    fn preg(&self, index: u8) -> bool {
        self.state.preg(index)
    }

    fn capacity(&self, space: MemSpace) -> u64 {
        self.state.capacity(space)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::Instruction as I;
    use crate::sim::{EventKind, NullTracker, PerfEventLog, SimConfig};

    fn sim() -> Simulator {
        Simulator::new(SimConfig::default()).unwrap()
    }

    /// s0 = 5 iterations of a three-instruction body starting at pc 2.
    fn looped() -> Program {
        Program::new(
            vec![
                I::s_ldi(0, 5),
                I::s_ldi(1, -1),
                I::s_add(0, 0, 1),
                I::brz(0, 5),
                I::br(2),
                I::halt(),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn breaks_before_first_instruction() {
        let mut s = Session::boot(sim(), looped());
        s.set_breakpoint(Breakpoint::at(0)).unwrap();
        let out = s.continue_until_break(100, &mut NullTracker);
        assert_eq!(
            out,
            ContinueOutcome::Break {
                id: BreakpointId(0),
                pc: 0,
                hit: 1
            }
        );
        assert_eq!(s.state().cycle, 0);
    }

    #[test]
    fn third_hit_of_loop_body() {
        let mut s = Session::boot(sim(), looped());
        s.set_breakpoint(Breakpoint::on_hit(2, 3)).unwrap();
        assert!(matches!(
            s.continue_until_break(1000, &mut NullTracker),
            ContinueOutcome::Break { pc: 2, hit: 3, .. }
        ));
        // Two body iterations done: s0 = 5 - 2.
        assert_eq!(s.state().sregs[0], 3);

        // Oracle: count retirements at pc 2 in a plain run up to this point.
        let mut log = PerfEventLog::new();
        let mut plain = Session::boot(sim(), looped());
        plain.set_breakpoint(Breakpoint::at(5)).unwrap();
        plain.continue_until_break(1000, &mut log);
        let retired_at_body = log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::InstrRetire { pc: 2, .. }))
            .count();
        assert_eq!(retired_at_body, 5);
        assert!(3 <= retired_at_body);
    }

    #[test]
    fn unreachable_breakpoint_runs_to_halt() {
        let p = Program::new(vec![I::br(2), I::s_ldi(0, 1), I::halt()], 0).unwrap();
        let mut s = Session::boot(sim(), p);
        s.set_breakpoint(Breakpoint::at(1)).unwrap();
        assert_eq!(s.continue_until_break(100, &mut NullTracker), ContinueOutcome::Halted);
    }

    #[test]
    fn bad_breakpoints_are_rejected() {
        let mut s = Session::boot(sim(), looped());
        assert!(matches!(
            s.set_breakpoint(Breakpoint::at(6)),
            Err(DebugError::PcOutOfBounds { .. })
        ));
        assert_eq!(
            s.set_breakpoint(Breakpoint::on_hit(1, 0)),
            Err(DebugError::ZeroHitCount)
        );
    }

    #[test]
    fn resume_from_break_does_not_recount() {
        let mut s = Session::boot(sim(), looped());
        s.set_breakpoint(Breakpoint::at(2)).unwrap();
        let mut hits = Vec::new();
        while let ContinueOutcome::Break { hit, .. } = s.continue_until_break(1000, &mut NullTracker) {
            hits.push(hit);
        }
        assert_eq!(hits, vec![1, 2, 3, 4, 5]);
        assert!(s.is_halted());
    }

    #[test]
    fn step_returns_program_instruction_and_halts() {
        let p = looped();
        let mut s = Session::boot(sim(), p.clone());
        assert_eq!(s.peek(), p.get(0));
        match s.step(&mut NullTracker).unwrap() {
            StepResult::Stepped(o) => assert_eq!(&o.instr, p.get(0).unwrap()),
            StepResult::Halted => panic!(),
        }
        while !s.is_halted() {
            s.step(&mut NullTracker).unwrap();
        }
        assert_eq!(s.step(&mut NullTracker).unwrap(), StepResult::Halted);
    }

    #[test]
    fn stepping_n_matches_run() {
        let p = looped();
        let mut stepped = Session::boot(sim(), p.clone());
        for _ in 0..8 {
            stepped.step(&mut NullTracker).unwrap();
        }
        let mut run = Session::boot(sim(), p);
        run.set_breakpoint(Breakpoint::on_hit(2, 3)).unwrap();
        run.continue_until_break(1000, &mut NullTracker);
        assert!(stepped.state().arch_eq(run.state()));
        assert_eq!(stepped.pc(), run.pc());
        assert_eq!(stepped.state().cycle, run.state().cycle);
    }

    #[test]
    fn reads_are_pure() {
        let mut s = Session::boot(sim(), looped());
        s.step(&mut NullTracker).unwrap();
        assert_eq!(s.read_register(RegisterId::s(0)), 5u32.to_le_bytes());
        assert_eq!(
            s.read_memory(&MemRegion::new(MemSpace::Vmem, 0, 64)).unwrap(),
            vec![0; 64]
        );
        let cap = s.capacity(MemSpace::Vmem);
        assert!(s.read_memory(&MemRegion::new(MemSpace::Vmem, cap - 8, 64)).is_err());
        let before = s.state().clone();
        s.read_register(RegisterId::v(3));
        assert_eq!(s.state(), &before);
    }
}
