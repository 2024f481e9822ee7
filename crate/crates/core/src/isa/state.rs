use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::AccessFault;
use super::{
    ArchView, Link, MemRegion, MemSpace, RegClass, RegisterId, DEFAULT_HBM_BYTES, DEFAULT_VMEM_BYTES, DMA_SLOTS,
    NUM_PREGS, NUM_SREGS, NUM_VREGS, VECTOR_LANES,
};
use crate::sim::Pipeline;

const HBM_CHUNK: u64 = 4096;

/// Sparse byte-addressable memory; untouched chunks read as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct SparseMemory {
    chunks: BTreeMap<u64, Box<[u8]>>,
}

impl SparseMemory {
    fn read(&self, offset: u64, out: &mut [u8]) {
        let mut done = 0usize;
        while done < out.len() {
            let addr = offset + done as u64;
            let base = addr - addr % HBM_CHUNK;
            let within = (addr - base) as usize;
            let n = (HBM_CHUNK as usize - within).min(out.len() - done);
            match self.chunks.get(&base) {
                Some(chunk) => out[done..done + n].copy_from_slice(&chunk[within..within + n]),
                None => out[done..done + n].fill(0),
            }
            done += n;
        }
    }

    fn write(&mut self, offset: u64, data: &[u8]) {
        let mut done = 0usize;
        while done < data.len() {
            let addr = offset + done as u64;
            let base = addr - addr % HBM_CHUNK;
            let within = (addr - base) as usize;
            let n = (HBM_CHUNK as usize - within).min(data.len() - done);
            let chunk = self
                .chunks
                .entry(base)
                .or_insert_with(|| vec![0u8; HBM_CHUNK as usize].into_boxed_slice());
            chunk[within..within + n].copy_from_slice(&data[done..done + n]);
            done += n;
        }
    }

    /// Chunks holding at least one non-zero byte, in address order.
    fn nonzero_chunks(&self) -> impl Iterator<Item = (u64, &[u8])> {
        self.chunks
            .iter()
            .filter(|(_, c)| c.iter().any(|&b| b != 0))
            .map(|(&k, c)| (k, &c[..]))
    }

    pub(crate) fn backed_bytes(&self) -> u64 {
        self.chunks.len() as u64 * HBM_CHUNK
    }
}

/// Timeline of one DMA as computed by the engine at issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaTransfer {
    pub id: u32,
    pub link: Link,
    pub src: MemRegion,
    pub dst: MemRegion,
    pub issue_cycle: u64,
    pub base_done_cycle: u64,
    pub transfer_start_cycle: u64,
    pub complete_cycle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmaStatus {
    Idle,
    Issued,
    BaseDone,
    Transferring,
    Complete,
}

/// Architectural state of one DMA slot. A slot is busy from `DMA_ISSUE`
/// until the first `DMA_WAIT` on it; re-issuing a busy slot faults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmaSlotState {
    #[default]
    Idle,
    InFlight(DmaTransfer),
    /// Waited at least once. `None` when restored from a trace, where only
    /// the fact that the slot was retired is known.
    Waited(Option<DmaTransfer>),
}

impl DmaSlotState {
    pub fn transfer(&self) -> Option<&DmaTransfer> {
        match self {
            DmaSlotState::InFlight(t) | DmaSlotState::Waited(Some(t)) => Some(t),
            _ => None,
        }
    }

    pub fn is_outstanding(&self) -> bool {
        matches!(self, DmaSlotState::InFlight(_))
    }

    pub fn status_at(&self, cycle: u64) -> DmaStatus {
        match self {
            DmaSlotState::Idle => DmaStatus::Idle,
            DmaSlotState::Waited(None) => DmaStatus::Complete,
            DmaSlotState::InFlight(t) | DmaSlotState::Waited(Some(t)) => {
                if cycle >= t.complete_cycle {
                    DmaStatus::Complete
                } else if cycle >= t.transfer_start_cycle {
                    DmaStatus::Transferring
                } else if cycle >= t.base_done_cycle {
                    DmaStatus::BaseDone
                } else {
                    DmaStatus::Issued
                }
            }
        }
    }
}

/// Full machine state: architectural registers and memories plus the
/// timing-only pipeline bookkeeping the simulator needs between steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub pc: usize,
    /// Next cycle at which an instruction may issue.
    pub cycle: u64,
    pub sregs: [u32; NUM_SREGS as usize],
    pub vregs: [[u32; VECTOR_LANES]; NUM_VREGS as usize],
    pub pregs: [bool; NUM_PREGS as usize],
    vmem: Vec<u8>,
    hbm: SparseMemory,
    hbm_capacity: u64,
    pub dma_slots: [DmaSlotState; DMA_SLOTS as usize],
    pub halted: bool,
    pub(crate) pipeline: Pipeline,
}

impl Default for MachineState {
    fn default() -> Self {
        Self::new(DEFAULT_VMEM_BYTES, DEFAULT_HBM_BYTES)
    }
}

impl MachineState {
    /// Reset state: everything zero, pc 0.
    pub fn new(vmem_capacity: u64, hbm_capacity: u64) -> Self {
        Self {
            pc: 0,
            cycle: 0,
            sregs: [0; NUM_SREGS as usize],
            vregs: [[0; VECTOR_LANES]; NUM_VREGS as usize],
            pregs: [false; NUM_PREGS as usize],
            vmem: vec![0; vmem_capacity as usize],
            hbm: SparseMemory::default(),
            hbm_capacity,
            dma_slots: [DmaSlotState::Idle; DMA_SLOTS as usize],
            halted: false,
            pipeline: Pipeline::new(vmem_capacity),
        }
    }

    pub fn vmem_capacity(&self) -> u64 {
        self.vmem.len() as u64
    }

    pub fn hbm_capacity(&self) -> u64 {
        self.hbm_capacity
    }

    pub fn read_register(&self, reg: RegisterId) -> Vec<u8> {
        let i = reg.index() as usize;
        match reg.class() {
            RegClass::Scalar => self.sregs[i].to_le_bytes().to_vec(),
            RegClass::Vector => self.vregs[i].iter().flat_map(|l| l.to_le_bytes()).collect(),
            RegClass::Predicate => vec![self.pregs[i] as u8],
        }
    }

    /// Writes a register from its byte form. `bytes` must be
    /// `reg.class().value_bytes()` long.
    pub fn write_register(&mut self, reg: RegisterId, bytes: &[u8]) {
        assert_eq!(bytes.len(), reg.class().value_bytes(), "register value width");
        let i = reg.index() as usize;
        match reg.class() {
            RegClass::Scalar => self.sregs[i] = u32::from_le_bytes(bytes.try_into().unwrap()),
            RegClass::Vector => {
                for (lane, chunk) in self.vregs[i].iter_mut().zip(bytes.chunks_exact(4)) {
                    *lane = u32::from_le_bytes(chunk.try_into().unwrap());
                }
            }
            RegClass::Predicate => self.pregs[i] = bytes[0] != 0,
        }
    }

    pub fn check_region(&self, region: &MemRegion) -> Result<(), AccessFault> {
        if region.fits(self.capacity(region.space)) {
            Ok(())
        } else {
            Err(AccessFault::OutOfBounds {
                region: *region,
                capacity: self.capacity(region.space),
            })
        }
    }

    pub fn read_memory(&self, region: &MemRegion) -> Result<Vec<u8>, AccessFault> {
        self.check_region(region)?;
        let mut out = vec![0u8; region.length as usize];
        match region.space {
            MemSpace::Vmem => out.copy_from_slice(&self.vmem[region.offset as usize..region.end() as usize]),
            MemSpace::Hbm => self.hbm.read(region.offset, &mut out),
        }
        Ok(out)
    }

    pub fn write_memory(&mut self, space: MemSpace, offset: u64, data: &[u8]) -> Result<(), AccessFault> {
        if data.is_empty() {
            return Ok(());
        }
        self.check_region(&MemRegion::new(space, offset, data.len() as u64))?;
        match space {
            MemSpace::Vmem => self.vmem[offset as usize..offset as usize + data.len()].copy_from_slice(data),
            MemSpace::Hbm => self.hbm.write(offset, data),
        }
        Ok(())
    }

    /// Bytes a naive snapshot of this state would have to store: every
    /// register, all of VMEM, and every backed HBM chunk.
    pub fn full_snapshot_bytes(&self) -> u64 {
        let regs: u64 = RegisterId::all().map(|r| r.class().value_bytes() as u64).sum();
        regs + self.vmem.len() as u64 + self.hbm.backed_bytes()
    }

    /// SHA-256 over registers, VMEM and the non-zero part of HBM. Two states
    /// with equal digests are architecturally identical (pc, cycle and
    /// pipeline bookkeeping are excluded).
    pub fn arch_digest(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.sregs {
            h.update(r.to_le_bytes());
        }
        for v in &self.vregs {
            for lane in v {
                h.update(lane.to_le_bytes());
            }
        }
        h.update(self.pregs.map(|p| p as u8));
        h.update(&self.vmem);
        for (addr, chunk) in self.hbm.nonzero_chunks() {
            h.update(addr.to_le_bytes());
            h.update(chunk);
        }
        hex::encode(h.finalize())
    }

    /// Architectural equality: registers, VMEM and HBM contents.
    pub fn arch_eq(&self, other: &MachineState) -> bool {
        self.sregs == other.sregs
            && self.vregs == other.vregs
            && self.pregs == other.pregs
            && self.vmem == other.vmem
            && self.hbm.nonzero_chunks().eq(other.hbm.nonzero_chunks())
    }
}

impl ArchView for MachineState {
    fn sreg(&self, index: u8) -> u32 {
        self.sregs[index as usize]
    }

    fn preg(&self, index: u8) -> bool {
        self.pregs[index as usize]
    }

    fn capacity(&self, space: MemSpace) -> u64 {
        match space {
            MemSpace::Vmem => self.vmem.len() as u64,
            MemSpace::Hbm => self.hbm_capacity,
        }
    }
}
