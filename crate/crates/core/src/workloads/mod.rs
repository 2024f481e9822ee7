//! Kernel sources: the assembler, the synthetic generators, and helpers to
//! boot an assembled kernel on the simulator.

mod asm;
mod kernels;
mod random;

pub use asm::{assemble, disassemble, AsmError, DataInit, Kernel, RegionLabel};
pub use kernels::{AllGatherParams, CheckerboardParams, StarvationParams};
pub use random::RandomParams;

use crate::debugger::Session;
use crate::isa::{AccessFault, MachineState};
use crate::sim::Simulator;

impl Kernel {
    /// A zeroed machine with the kernel's data image loaded and the pc at
    /// the entry point.
    pub fn boot_state(&self, sim: &Simulator) -> Result<MachineState, AccessFault> {
        let mut state = sim.reset_state();
        for d in &self.data {
            state.write_memory(d.space, d.offset, &d.bytes)?;
        }
        state.pc = self.program.entry_pc();
        Ok(state)
    }

    /// A debugger session on the booted kernel.
    pub fn session(&self, sim: &Simulator) -> Result<Session, AccessFault> {
        let state = self.boot_state(sim)?;
        Ok(Session::new(sim.clone(), self.program.clone(), state))
    }
}
