//! Read/write footprints of instructions.

use std::fmt;

use thiserror::Error;

use super::{Instruction, MemRegion, MemSpace, Opcode, RegisterId, MXU_TILE_BYTES, VECTOR_BYTES};

/// The register and capacity reads an instruction footprint depends on.
/// Implemented by the machine state and by debugger sessions.
pub trait ArchView {
    fn sreg(&self, index: u8) -> u32;
    fn preg(&self, index: u8) -> bool;
    fn capacity(&self, space: MemSpace) -> u64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressProblem {
    OutOfBounds { length: u64, capacity: u64 },
    Misaligned { align: u64 },
    ZeroLength,
}

impl fmt::Display for AddressProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AddressProblem::OutOfBounds { length, capacity } => {
                write!(f, "{length}-byte access exceeds capacity {capacity:#x}")
            }
            AddressProblem::Misaligned { align } => write!(f, "not {align}-byte aligned"),
            AddressProblem::ZeroLength => f.write_str("zero-length transfer"),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum AccessFault {
    #[error("{region} exceeds capacity {capacity:#x}")]
    OutOfBounds { region: MemRegion, capacity: u64 },
    #[error("{space} access through {reg}={value:#x} (offset {offset}): {problem}")]
    Address {
        reg: RegisterId,
        value: u32,
        offset: i32,
        space: MemSpace,
        problem: AddressProblem,
    },
}

/// Exact read/write footprint of one instruction stepped from a given state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoSets {
    pub input_regs: Vec<RegisterId>,
    pub output_regs: Vec<RegisterId>,
    pub input_mem: Vec<MemRegion>,
    pub output_mem: Vec<MemRegion>,
    /// False when the guard predicate evaluated false.
    pub executes: bool,
}

impl IoSets {
    fn read(&mut self, reg: RegisterId) {
        if !self.input_regs.contains(&reg) {
            self.input_regs.push(reg);
        }
    }
}

fn address(
    view: &impl ArchView,
    reg: RegisterId,
    offset: i32,
    space: MemSpace,
    length: u64,
    align: u64,
) -> Result<MemRegion, AccessFault> {
    let value = view.sreg(reg.index());
    let fault = |problem| AccessFault::Address {
        reg,
        value,
        offset,
        space,
        problem,
    };
    let capacity = view.capacity(space);
    let start = value as i64 + offset as i64;
    if length == 0 {
        return Err(fault(AddressProblem::ZeroLength));
    }
    if start < 0 || start as u64 + length > capacity {
        return Err(fault(AddressProblem::OutOfBounds { length, capacity }));
    }
    if start as u64 % align != 0 {
        return Err(fault(AddressProblem::Misaligned { align }));
    }
    Ok(MemRegion::new(space, start as u64, length))
}

/// Computes what `instr` will read and write when stepped from `view`.
///
/// A guarded instruction whose predicate is false reads only its predicate.
pub fn instruction_io_sets(instr: &Instruction, view: &impl ArchView) -> Result<IoSets, AccessFault> {
    let mut io = IoSets {
        executes: true,
        ..IoSets::default()
    };
    if let Some(p) = instr.predicate() {
        io.read(p);
        if !view.preg(p.index()) {
            io.executes = false;
            return Ok(io);
        }
    }
    let src = instr.src_regs();
    let imm = instr.immediates();
    for &r in src {
        io.read(r);
    }
    io.output_regs.extend_from_slice(instr.dst_regs());
    match instr.opcode() {
        Opcode::SLd => {
            io.input_mem.push(address(view, src[0], imm[0], MemSpace::Vmem, 4, 4)?);
        }
        Opcode::VLoad => {
            io.input_mem.push(address(
                view,
                src[0],
                imm[0],
                MemSpace::Vmem,
                VECTOR_BYTES,
                VECTOR_BYTES,
            )?);
        }
        Opcode::VStore => {
            io.output_mem.push(address(
                view,
                src[0],
                imm[0],
                MemSpace::Vmem,
                VECTOR_BYTES,
                VECTOR_BYTES,
            )?);
        }
        Opcode::MxuMm => {
            let tile = |r| address(view, r, 0, MemSpace::Vmem, MXU_TILE_BYTES, VECTOR_BYTES);
            let (d, a, b) = (tile(src[0])?, tile(src[1])?, tile(src[2])?);
            io.input_mem.extend([a, b, d]);
            io.output_mem.push(d);
        }
        Opcode::DmaIssue => {
            let link = instr.dma_link().expect("validated link");
            let len = view.sreg(src[2].index()) as u64;
            if len == 0 {
                return Err(AccessFault::Address {
                    reg: src[2],
                    value: 0,
                    offset: 0,
                    space: link.src,
                    problem: AddressProblem::ZeroLength,
                });
            }
            io.input_mem.push(address(view, src[0], 0, link.src, len, 1)?);
            io.output_mem.push(address(view, src[1], 0, link.dst, len, 1)?);
        }
        _ => {}
    }
    Ok(io)
}
