//! Reference simulator.
//!
//! Instructions take architectural effect when they issue; the pipeline
//! tracks only timing. A scoreboard holds each instruction until its source
//! and destination registers, the VMEM pages it touches and its unit are
//! ready, then the issue cursor moves on by one cycle. `DMA_WAIT` blocks the
//! cursor until the awaited DMA completes; `HALT` drains everything except
//! DMAs nobody waits for.

mod dma;
mod events;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dma::{dma_timeline, DmaRequest, DmaTimes};
pub use events::{EventKind, EventLogError, NullTracker, PerfEvent, PerfEventLog, PerfTracker, StallReason};

use crate::isa::{
    instruction_io_sets, AccessFault, CmpCond, DmaSlotState, DmaTransfer, Instruction, IoSets, Link, MachineState,
    MemRegion, MemSpace, Opcode, Program, RegisterId, Unit, DEFAULT_HBM_BYTES, DEFAULT_VMEM_BYTES, MXU_TILE,
    PAGE_BYTES,
};
use dma::DmaEngine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Latencies {
    pub salu: u64,
    pub valu: u64,
    pub lsu: u64,
    pub mxu: u64,
    pub ctrl: u64,
    pub dma_issue: u64,
    pub dma_wait: u64,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            salu: 1,
            valu: 2,
            lsu: 3,
            mxu: 32,
            ctrl: 1,
            dma_issue: 1,
            dma_wait: 1,
        }
    }
}

impl Latencies {
    pub fn of(&self, opcode: Opcode) -> u64 {
        match opcode {
            Opcode::DmaIssue => self.dma_issue,
            Opcode::DmaWait => self.dma_wait,
            op => match op.unit() {
                Unit::Salu => self.salu,
                Unit::Valu => self.valu,
                Unit::Lsu => self.lsu,
                Unit::Mxu => self.mxu,
                Unit::Ctrl | Unit::Dma => self.ctrl,
            },
        }
    }
}

/// Bytes per cycle for each (source, destination) link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBandwidth {
    pub hbm_to_vmem: u64,
    pub hbm_to_hbm: u64,
    pub vmem_to_hbm: u64,
    pub vmem_to_vmem: u64,
}

impl Default for LinkBandwidth {
    fn default() -> Self {
        Self {
            hbm_to_vmem: 32,
            hbm_to_hbm: 32,
            vmem_to_hbm: 32,
            vmem_to_vmem: 32,
        }
    }
}

impl LinkBandwidth {
    pub fn of(&self, link: Link) -> u64 {
        match (link.src, link.dst) {
            (MemSpace::Hbm, MemSpace::Vmem) => self.hbm_to_vmem,
            (MemSpace::Hbm, MemSpace::Hbm) => self.hbm_to_hbm,
            (MemSpace::Vmem, MemSpace::Hbm) => self.vmem_to_hbm,
            (MemSpace::Vmem, MemSpace::Vmem) => self.vmem_to_vmem,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// DMA base latency in cycles.
    pub t_b: u64,
    pub link_bandwidth: LinkBandwidth,
    pub latencies: Latencies,
    pub vmem_capacity: u64,
    pub hbm_capacity: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_b: 100,
            link_bandwidth: LinkBandwidth::default(),
            latencies: Latencies::default(),
            vmem_capacity: DEFAULT_VMEM_BYTES,
            hbm_capacity: DEFAULT_HBM_BYTES,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("t_b must be positive")]
    BaseLatency,
    #[error("bandwidth of link {0} must be positive")]
    Bandwidth(Link),
    #[error("latency of {0} must be positive")]
    Latency(&'static str),
    #[error("vmem_capacity must be a positive multiple of {PAGE_BYTES}")]
    VmemCapacity,
    #[error("hbm_capacity must be positive")]
    HbmCapacity,
    #[error("invalid config JSON: {0}")]
    Json(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_b == 0 {
            return Err(ConfigError::BaseLatency);
        }
        if let Some(l) = Link::ALL.into_iter().find(|&l| self.link_bandwidth.of(l) == 0) {
            return Err(ConfigError::Bandwidth(l));
        }
        let l = &self.latencies;
        for (name, v) in [
            ("salu", l.salu),
            ("valu", l.valu),
            ("lsu", l.lsu),
            ("mxu", l.mxu),
            ("ctrl", l.ctrl),
            ("dma_issue", l.dma_issue),
            ("dma_wait", l.dma_wait),
        ] {
            if v == 0 {
                return Err(ConfigError::Latency(name));
            }
        }
        if self.vmem_capacity == 0 || self.vmem_capacity % PAGE_BYTES != 0 {
            return Err(ConfigError::VmemCapacity);
        }
        if self.hbm_capacity == 0 {
            return Err(ConfigError::HbmCapacity);
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Timing bookkeeping carried inside [`MachineState`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Pipeline {
    reg_ready: [u64; RegisterId::FLAT_COUNT],
    unit_free: [u64; Unit::ALL.len()],
    page_ready: Vec<u64>,
    dma: DmaEngine,
    /// Events stamped later than the current issue cycle.
    pending: BTreeMap<(u64, u64), EventKind>,
    pending_seq: u64,
    next_instr: u64,
    next_dma: u32,
    /// Latest cycle at which any register, page or unit becomes ready.
    horizon: u64,
}

impl Pipeline {
    pub(crate) fn new(vmem_capacity: u64) -> Self {
        Self {
            reg_ready: [0; RegisterId::FLAT_COUNT],
            unit_free: [0; Unit::ALL.len()],
            page_ready: vec![0; vmem_capacity.div_ceil(PAGE_BYTES) as usize],
            dma: DmaEngine::default(),
            pending: BTreeMap::new(),
            pending_seq: 0,
            next_instr: 0,
            next_dma: 0,
            horizon: 0,
        }
    }

    fn pages(region: &MemRegion) -> std::ops::Range<usize> {
        (region.offset / PAGE_BYTES) as usize..region.end().div_ceil(PAGE_BYTES) as usize
    }

    fn region_ready(&self, region: &MemRegion) -> u64 {
        match region.space {
            MemSpace::Vmem => self.page_ready[Self::pages(region)].iter().copied().max().unwrap_or(0),
            MemSpace::Hbm => 0,
        }
    }

    fn set_region_ready(&mut self, region: &MemRegion, cycle: u64) {
        if region.space == MemSpace::Vmem {
            self.hold_pages(region, cycle);
            self.horizon = self.horizon.max(cycle);
        }
    }

    /// Blocks access to a DMA destination until it lands without holding
    /// back `HALT`, which does not wait for DMAs.
    fn hold_pages(&mut self, region: &MemRegion, cycle: u64) {
        if region.space == MemSpace::Vmem {
            for p in &mut self.page_ready[Self::pages(region)] {
                *p = (*p).max(cycle);
            }
        }
    }

    fn set_reg_ready(&mut self, reg: RegisterId, cycle: u64) {
        self.reg_ready[reg.flat()] = cycle;
        self.horizon = self.horizon.max(cycle);
    }

    fn set_unit_free(&mut self, unit: Unit, cycle: u64) {
        self.unit_free[unit.index()] = cycle;
        self.horizon = self.horizon.max(cycle);
    }
}

/// Delivers events in cycle order: anything stamped at or before `now` goes
/// straight to the tracker after older pending events; later stamps wait.
struct Emitter<'a> {
    pipe: &'a mut Pipeline,
    tracker: &'a mut dyn PerfTracker,
    now: u64,
}

impl Emitter<'_> {
    fn flush_through(&mut self, cycle: u64) {
        while let Some(entry) = self.pipe.pending.first_entry() {
            if entry.key().0 > cycle {
                break;
            }
            let ((c, _), kind) = entry.remove_entry();
            self.tracker.on_event(&PerfEvent { cycle: c, kind });
        }
    }

    fn emit(&mut self, cycle: u64, kind: EventKind) {
        if cycle <= self.now {
            self.flush_through(cycle);
            self.tracker.on_event(&PerfEvent { cycle, kind });
        } else {
            let seq = self.pipe.pending_seq;
            self.pipe.pending_seq += 1;
            self.pipe.pending.insert((cycle, seq), kind);
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Fault {
    #[error(transparent)]
    Access(#[from] AccessFault),
    #[error("DMA_ISSUE on slot {slot}, which has a DMA nobody waited for")]
    SlotBusy { slot: u8 },
    #[error("DMA_WAIT on slot {slot}, which never had a DMA issued")]
    SlotIdle { slot: u8 },
    #[error("pc {pc} is outside the {len}-instruction program")]
    PcOutOfBounds { pc: usize, len: usize },
    #[error("machine is halted")]
    Halted,
}

/// Result of executing one instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub pc: usize,
    pub next_pc: usize,
    pub instr: Instruction,
    /// Dynamic instruction index within the run.
    pub seq: u64,
    pub issue_cycle: u64,
    pub retire_cycle: u64,
    /// Issue-cursor advance caused by this instruction.
    pub cycles: u64,
    pub executed: bool,
    pub halted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Halted,
    BudgetExhausted,
    Faulted { pc: usize, fault: Fault },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub status: RunStatus,
    pub end_cycle: u64,
    pub instructions: u64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Zeroed state sized for this configuration.
    pub fn reset_state(&self) -> MachineState {
        MachineState::new(self.config.vmem_capacity, self.config.hbm_capacity)
    }

    /// Executes `program[state.pc]`.
    pub fn step(
        &self,
        state: &mut MachineState,
        program: &Program,
        tracker: &mut dyn PerfTracker,
    ) -> Result<StepOutcome, Fault> {
        let instr = program.get(state.pc).ok_or(Fault::PcOutOfBounds {
            pc: state.pc,
            len: program.len(),
        })?;
        self.execute(state, instr, tracker)
    }

    /// Executes `instr` as if fetched from `state.pc`, then moves `pc` to
    /// the fall-through or branch target. On a fault nothing changes.
    pub fn execute(
        &self,
        state: &mut MachineState,
        instr: &Instruction,
        tracker: &mut dyn PerfTracker,
    ) -> Result<StepOutcome, Fault> {
        if state.halted {
            return Err(Fault::Halted);
        }
        let io = instruction_io_sets(instr, state)?;
        if io.executes {
            match instr.opcode() {
                Opcode::DmaIssue => {
                    let slot = instr.dma_slot().expect("slot");
                    if state.dma_slots[slot as usize].is_outstanding() {
                        return Err(Fault::SlotBusy { slot });
                    }
                }
                Opcode::DmaWait => {
                    let slot = instr.dma_slot().expect("slot");
                    if state.dma_slots[slot as usize] == DmaSlotState::Idle {
                        return Err(Fault::SlotIdle { slot });
                    }
                }
                _ => {}
            }
        }

        let pc = state.pc;
        let cursor = state.cycle;
        let opcode = instr.opcode();
        let unit = instr.unit();
        let lat = &self.config.latencies;

        // Architectural effect happens now, before any timing bookkeeping.
        let mut next_pc = pc + 1;
        let mut dma_effect = None;
        if io.executes {
            match self.apply(state, instr, &io) {
                Effect::None => {}
                Effect::Jump(t) => next_pc = t,
                Effect::Dma => dma_effect = Some(()),
            }
        }

        let seq = state.pipeline.next_instr;
        state.pipeline.next_instr += 1;

        let pipe = &state.pipeline;
        let mut ready = cursor;
        for r in &io.input_regs {
            ready = ready.max(pipe.reg_ready[r.flat()]);
        }
        if io.executes {
            ready = ready.max(pipe.unit_free[unit.index()]);
            for r in &io.output_regs {
                ready = ready.max(pipe.reg_ready[r.flat()]);
            }
            for m in io.input_mem.iter().chain(&io.output_mem) {
                ready = ready.max(pipe.region_ready(m));
            }
            if opcode == Opcode::Halt {
                ready = ready.max(pipe.horizon);
            }
        }
        let issue = ready;

        let slot = instr.dma_slot();
        let wait_transfer = match (opcode, io.executes) {
            (Opcode::DmaWait, true) => state.dma_slots[slot.unwrap() as usize].transfer().copied(),
            _ => None,
        };
        let mut em = Emitter {
            pipe: &mut state.pipeline,
            tracker,
            now: issue,
        };
        if issue > cursor {
            em.emit(
                cursor,
                EventKind::StallBegin {
                    instr: seq,
                    reason: StallReason::Hazard,
                    slot: None,
                    dma: None,
                },
            );
            em.emit(
                issue,
                EventKind::StallEnd {
                    instr: seq,
                    reason: StallReason::Hazard,
                    slot: None,
                    dma: None,
                },
            );
        }
        let issue_dma = match opcode {
            Opcode::DmaWait => wait_transfer.map(|t| t.id),
            Opcode::DmaIssue if io.executes => Some(em.pipe.next_dma),
            _ => None,
        };
        em.emit(
            issue,
            EventKind::InstrIssue {
                instr: seq,
                pc,
                unit,
                opcode,
                slot,
                dma: issue_dma,
                executed: io.executes,
            },
        );
        for &reg in &io.input_regs {
            em.emit(issue, EventKind::RegRead { instr: seq, reg });
        }
        for &region in &io.input_mem {
            em.emit(issue, EventKind::MemRead { instr: seq, region });
        }

        let (retire, next_cursor) = if !io.executes {
            (issue + 1, issue + 1)
        } else if opcode == Opcode::DmaWait {
            let done = match wait_transfer {
                Some(t) if t.complete_cycle > issue => {
                    let base_end = t.complete_cycle.min(t.base_done_cycle);
                    let id = Some(t.id);
                    if base_end > issue {
                        em.emit(
                            issue,
                            EventKind::StallBegin {
                                instr: seq,
                                reason: StallReason::DmaBase,
                                slot,
                                dma: id,
                            },
                        );
                        em.emit(
                            base_end,
                            EventKind::StallEnd {
                                instr: seq,
                                reason: StallReason::DmaBase,
                                slot,
                                dma: id,
                            },
                        );
                    }
                    let transfer_begin = issue.max(t.base_done_cycle);
                    if t.complete_cycle > transfer_begin {
                        em.emit(
                            transfer_begin,
                            EventKind::StallBegin {
                                instr: seq,
                                reason: StallReason::DmaTransfer,
                                slot,
                                dma: id,
                            },
                        );
                        em.emit(
                            t.complete_cycle,
                            EventKind::StallEnd {
                                instr: seq,
                                reason: StallReason::DmaTransfer,
                                slot,
                                dma: id,
                            },
                        );
                    }
                    t.complete_cycle
                }
                _ => issue,
            };
            let retire = done + lat.dma_wait;
            em.emit(
                done,
                EventKind::UnitBusy {
                    instr: seq,
                    unit,
                    cycles: lat.dma_wait,
                },
            );
            em.pipe.set_unit_free(unit, retire);
            (retire, retire)
        } else {
            let latency = lat.of(opcode);
            let retire = issue + latency;
            em.emit(
                issue,
                EventKind::UnitBusy {
                    instr: seq,
                    unit,
                    cycles: latency,
                },
            );
            em.pipe.set_unit_free(unit, retire);
            for &reg in &io.output_regs {
                em.pipe.set_reg_ready(reg, retire);
                em.emit(retire, EventKind::RegWrite { instr: seq, reg });
            }
            if dma_effect.is_none() {
                for &region in &io.output_mem {
                    em.pipe.set_region_ready(&region, retire);
                    em.emit(retire, EventKind::MemWrite { instr: seq, region });
                }
            }
            (retire, issue + 1)
        };
        em.emit(retire, EventKind::InstrRetire { instr: seq, pc });

        // DMA bookkeeping needs the slot array, which the emitter does not borrow.
        let transfer = if dma_effect.is_some() {
            let link = instr.dma_link().expect("link");
            let (src, dst) = (io.input_mem[0], io.output_mem[0]);
            let times = em.pipe.dma.schedule(&self.config, issue, link, src.length);
            let id = em.pipe.next_dma;
            em.pipe.next_dma += 1;
            let s = slot.unwrap();
            em.emit(
                issue,
                EventKind::DmaIssue {
                    instr: seq,
                    dma: id,
                    slot: s,
                    link,
                    src,
                    dst,
                },
            );
            em.emit(
                issue,
                EventKind::MemWrite {
                    instr: seq,
                    region: dst,
                },
            );
            em.emit(times.base_done, EventKind::DmaBaseDone { dma: id, slot: s });
            em.emit(times.transfer_start, EventKind::DmaTransferStart { dma: id, slot: s });
            em.emit(times.complete, EventKind::DmaComplete { dma: id, slot: s });
            em.pipe.hold_pages(&dst, times.complete);
            Some(DmaTransfer {
                id,
                link,
                src,
                dst,
                issue_cycle: issue,
                base_done_cycle: times.base_done,
                transfer_start_cycle: times.transfer_start,
                complete_cycle: times.complete,
            })
        } else {
            None
        };

        if let Some(t) = transfer {
            state.dma_slots[slot.unwrap() as usize] = DmaSlotState::InFlight(t);
        }
        if opcode == Opcode::DmaWait && io.executes {
            let s = &mut state.dma_slots[slot.unwrap() as usize];
            *s = DmaSlotState::Waited(s.transfer().copied());
        }
        if opcode == Opcode::Halt && io.executes {
            state.halted = true;
            next_pc = pc;
        }
        state.cycle = next_cursor;
        state.pc = next_pc;
        Ok(StepOutcome {
            pc,
            next_pc,
            instr: instr.clone(),
            seq,
            issue_cycle: issue,
            retire_cycle: retire,
            cycles: next_cursor - cursor,
            executed: io.executes,
            halted: state.halted,
        })
    }

    fn apply(&self, state: &mut MachineState, instr: &Instruction, io: &IoSets) -> Effect {
        let src = instr.src_regs();
        let dst = instr.dst_regs();
        let imm = instr.immediates();
        let s = |state: &MachineState, r: RegisterId| state.sregs[r.index() as usize];
        match instr.opcode() {
            Opcode::SLdi => state.sregs[dst[0].index() as usize] = imm[0] as u32,
            Opcode::SAdd => state.sregs[dst[0].index() as usize] = s(state, src[0]).wrapping_add(s(state, src[1])),
            Opcode::SMul => state.sregs[dst[0].index() as usize] = s(state, src[0]).wrapping_mul(s(state, src[1])),
            Opcode::SCmp => {
                let cond = CmpCond::from_imm(imm[0]).expect("validated condition");
                state.pregs[dst[0].index() as usize] = cond.eval(s(state, src[0]), s(state, src[1]));
            }
            Opcode::SMov => state.sregs[dst[0].index() as usize] = s(state, src[0]),
            Opcode::SLd => {
                let bytes = state.read_memory(&io.input_mem[0]).expect("checked region");
                state.sregs[dst[0].index() as usize] = u32::from_le_bytes(bytes.try_into().unwrap());
            }
            Opcode::VAdd | Opcode::VMul => {
                let a = state.vregs[src[0].index() as usize];
                let b = state.vregs[src[1].index() as usize];
                let add = instr.opcode() == Opcode::VAdd;
                let out = &mut state.vregs[dst[0].index() as usize];
                for lane in 0..a.len() {
                    out[lane] = if add {
                        a[lane].wrapping_add(b[lane])
                    } else {
                        a[lane].wrapping_mul(b[lane])
                    };
                }
            }
            Opcode::VLoad => {
                let bytes = state.read_memory(&io.input_mem[0]).expect("checked region");
                state.write_register(dst[0], &bytes);
            }
            Opcode::VStore => {
                let bytes = state.read_register(src[1]);
                let r = io.output_mem[0];
                state.write_memory(r.space, r.offset, &bytes).expect("checked region");
            }
            Opcode::MxuMm => {
                let tile = |state: &MachineState, r: &MemRegion| -> Vec<f32> {
                    state
                        .read_memory(r)
                        .expect("checked region")
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect()
                };
                let (a, b, mut d) = (
                    tile(state, &io.input_mem[0]),
                    tile(state, &io.input_mem[1]),
                    tile(state, &io.input_mem[2]),
                );
                for i in 0..MXU_TILE {
                    for j in 0..MXU_TILE {
                        let mut acc = d[i * MXU_TILE + j];
                        for k in 0..MXU_TILE {
                            acc += a[i * MXU_TILE + k] * b[k * MXU_TILE + j];
                        }
                        d[i * MXU_TILE + j] = acc;
                    }
                }
                let bytes: Vec<u8> = d.iter().flat_map(|v| v.to_le_bytes()).collect();
                let r = io.output_mem[0];
                state.write_memory(r.space, r.offset, &bytes).expect("checked region");
            }
            Opcode::DmaIssue => {
                let (src, dst) = (io.input_mem[0], io.output_mem[0]);
                let bytes = state.read_memory(&src).expect("checked region");
                state
                    .write_memory(dst.space, dst.offset, &bytes)
                    .expect("checked region");
                return Effect::Dma;
            }
            Opcode::DmaWait | Opcode::Halt => {}
            Opcode::Br => return Effect::Jump(imm[0] as usize),
            Opcode::Brz => {
                if s(state, src[0]) == 0 {
                    return Effect::Jump(imm[0] as usize);
                }
            }
        }
        Effect::None
    }

    /// Ends a run: delivers pending events up to the end cycle and a final
    /// `run_end`. DMAs still in flight after the end cycle stay incomplete in
    /// the log. Returns the end cycle.
    pub fn finish(&self, state: &mut MachineState, tracker: &mut dyn PerfTracker) -> u64 {
        let end = state.cycle.max(state.pipeline.horizon);
        let digest = state.arch_digest();
        let mut em = Emitter {
            pipe: &mut state.pipeline,
            tracker,
            now: end,
        };
        em.flush_through(end);
        em.pipe.pending.clear();
        tracker_run_end(em.tracker, end, digest);
        end
    }

    /// Steps from `state` until `HALT`, a fault, or the issue cursor reaching
    /// `max_cycles`, then calls [`Simulator::finish`].
    pub fn run(
        &self,
        program: &Program,
        state: &mut MachineState,
        tracker: &mut dyn PerfTracker,
        max_cycles: u64,
    ) -> RunResult {
        let mut instructions = 0;
        let status = loop {
            if state.halted {
                break RunStatus::Halted;
            }
            if state.cycle >= max_cycles {
                break RunStatus::BudgetExhausted;
            }
            match self.step(state, program, tracker) {
                Ok(_) => instructions += 1,
                Err(fault) => break RunStatus::Faulted { pc: state.pc, fault },
            }
        };
        let end_cycle = self.finish(state, tracker);
        RunResult {
            status,
            end_cycle,
            instructions,
        }
    }
}

enum Effect {
    None,
    Jump(usize),
    Dma,
}

fn tracker_run_end(tracker: &mut dyn PerfTracker, end_cycle: u64, state_digest: String) {
    tracker.on_event(&PerfEvent {
        cycle: end_cycle,
        kind: EventKind::RunEnd {
            end_cycle,
            state_digest,
        },
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{DmaStatus, MachineState};

    fn sim() -> Simulator {
        Simulator::new(SimConfig::default()).unwrap()
    }

    fn run_log(program: &Program, state: &mut MachineState) -> (RunResult, PerfEventLog) {
        let mut log = PerfEventLog::new();
        let r = sim().run(program, state, &mut log, 1_000_000);
        (r, log)
    }

    fn dma_program(wait_gap: usize) -> Program {
        let mut v = vec![
            Instruction::s_ldi(1, 0x1000),
            Instruction::s_ldi(2, 0x4000),
            Instruction::s_ldi(3, 256),
            Instruction::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3),
        ];
        v.extend((0..wait_gap).map(|_| Instruction::s_ldi(9, 0)));
        v.push(Instruction::dma_wait(0));
        v.push(Instruction::halt());
        Program::new(v, 0).unwrap()
    }

    #[test]
    fn s_ldi_takes_one_cycle() {
        let p = Program::new(vec![Instruction::s_ldi(0, 7), Instruction::halt()], 0).unwrap();
        let mut s = sim().reset_state();
        let out = sim().step(&mut s, &p, &mut NullTracker).unwrap();
        assert_eq!(s.sregs[0], 7);
        assert_eq!(s.cycle, 1);
        assert_eq!(out.retire_cycle, 1);
    }

    #[test]
    fn halt_only_program() {
        let p = Program::new(vec![Instruction::halt()], 0).unwrap();
        let mut s = sim().reset_state();
        let initial = s.clone();
        let (r, _) = run_log(&p, &mut s);
        assert_eq!(r.status, RunStatus::Halted);
        assert_eq!(r.end_cycle, 1);
        assert!(s.arch_eq(&initial));
        assert_eq!(s.cycle, initial.cycle + 1);
    }

    #[test]
    fn wait_two_cycles_after_issue_stalls_106() {
        let p = dma_program(1);
        let mut s = sim().reset_state();
        let (_, log) = run_log(&p, &mut s);
        let issue = log
            .events
            .iter()
            .find_map(|e| matches!(e.kind, EventKind::DmaIssue { .. }).then_some(e.cycle))
            .unwrap();
        let wait_issue = log
            .events
            .iter()
            .find_map(|e| match e.kind {
                EventKind::InstrIssue {
                    opcode: Opcode::DmaWait,
                    ..
                } => Some(e.cycle),
                _ => None,
            })
            .unwrap();
        assert_eq!(wait_issue, issue + 2);
        assert_eq!(log.stall_cycles(StallReason::DmaBase), 98);
        assert_eq!(log.stall_cycles(StallReason::DmaTransfer), 8);
        let t = s.dma_slots[0].transfer().unwrap();
        assert_eq!(t.complete_cycle, issue + 108);
        assert_eq!(t.base_done_cycle - t.issue_cycle, 100);
    }

    #[test]
    fn late_wait_has_no_stall() {
        let p = dma_program(150);
        let mut s = sim().reset_state();
        let (_, log) = run_log(&p, &mut s);
        assert_eq!(log.dma_stall_cycles(), 0);
        assert_eq!(s.dma_slots[0].status_at(s.cycle), DmaStatus::Complete);
    }

    #[test]
    fn dma_copies_data() {
        let p = dma_program(0);
        let mut s = sim().reset_state();
        s.write_memory(MemSpace::Hbm, 0x1000, &[5u8; 256]).unwrap();
        run_log(&p, &mut s);
        let got = s.read_memory(&MemRegion::new(MemSpace::Vmem, 0x4000, 256)).unwrap();
        assert_eq!(got, vec![5u8; 256]);
    }

    #[test]
    fn events_are_cycle_ordered_and_runs_deterministic() {
        let p = dma_program(3);
        let (mut a, mut b) = (sim().reset_state(), sim().reset_state());
        let (_, la) = run_log(&p, &mut a);
        let (_, lb) = run_log(&p, &mut b);
        assert_eq!(la.to_jsonl(), lb.to_jsonl());
        assert!(la.events.windows(2).all(|w| w[0].cycle <= w[1].cycle));
        assert!(matches!(la.events.last().unwrap().kind, EventKind::RunEnd { .. }));
    }

    #[test]
    fn tracker_does_not_change_results() {
        let p = dma_program(2);
        let (mut a, mut b) = (sim().reset_state(), sim().reset_state());
        run_log(&p, &mut a);
        sim().run(&p, &mut b, &mut NullTracker, 1_000_000);
        assert!(a.arch_eq(&b));
        assert_eq!(a.cycle, b.cycle);
    }

    #[test]
    fn predicated_false_changes_only_pc_and_cycle() {
        let p = Program::new(vec![Instruction::s_add(2, 0, 1).guarded(0), Instruction::halt()], 0).unwrap();
        let mut s = sim().reset_state();
        s.sregs[0] = 3;
        let before = s.clone();
        let mut log = PerfEventLog::new();
        let out = sim().step(&mut s, &p, &mut log).unwrap();
        assert!(!out.executed);
        assert!(s.arch_eq(&before));
        assert_eq!((s.pc, s.cycle), (1, 1));
        assert!(!log.events.iter().any(|e| matches!(e.kind, EventKind::UnitBusy { .. })));
    }

    #[test]
    fn slot_faults() {
        let wait = Program::new(vec![Instruction::dma_wait(2), Instruction::halt()], 0).unwrap();
        let mut s = sim().reset_state();
        assert_eq!(
            sim().step(&mut s, &wait, &mut NullTracker),
            Err(Fault::SlotIdle { slot: 2 })
        );
        assert_eq!(s.pc, 0);

        let mut v = dma_program(0).instructions().to_vec();
        v.insert(4, Instruction::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3));
        let p = Program::new(v, 0).unwrap();
        let mut s = sim().reset_state();
        let (r, _) = run_log(&p, &mut s);
        assert_eq!(
            r.status,
            RunStatus::Faulted {
                pc: 4,
                fault: Fault::SlotBusy { slot: 0 }
            }
        );
    }

    #[test]
    fn zero_length_dma_faults() {
        let p = Program::new(
            vec![
                Instruction::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3),
                Instruction::halt(),
            ],
            0,
        )
        .unwrap();
        let mut s = sim().reset_state();
        assert!(matches!(
            sim().step(&mut s, &p, &mut NullTracker),
            Err(Fault::Access(_))
        ));
    }

    #[test]
    fn branch_loop_counts_down() {
        // s0 = 3; loop: s0 += -1; brz s0 -> end; br loop; end: halt
        let p = Program::new(
            vec![
                Instruction::s_ldi(0, 3),
                Instruction::s_ldi(1, -1),
                Instruction::s_add(0, 0, 1),
                Instruction::brz(0, 5),
                Instruction::br(2),
                Instruction::halt(),
            ],
            0,
        )
        .unwrap();
        let mut s = sim().reset_state();
        let (r, _) = run_log(&p, &mut s);
        assert_eq!(r.status, RunStatus::Halted);
        assert_eq!(r.instructions, 2 + 3 * 3 - 1 + 1);
    }

    #[test]
    fn mxu_accumulates_and_serializes() {
        let mut v = vec![
            Instruction::s_ldi(1, 0),
            Instruction::s_ldi(2, 1024),
            Instruction::s_ldi(3, 2048),
        ];
        v.push(Instruction::mxu_mm(3, 1, 2));
        v.push(Instruction::mxu_mm(3, 1, 2));
        v.push(Instruction::halt());
        let p = Program::new(v, 0).unwrap();
        let mut s = sim().reset_state();
        let one: Vec<u8> = (0..256)
            .flat_map(|i| if i % 17 == 0 { 1f32 } else { 0f32 }.to_le_bytes())
            .collect();
        s.write_memory(MemSpace::Vmem, 0, &one).unwrap();
        let twos: Vec<u8> = (0..256).flat_map(|_| 2f32.to_le_bytes()).collect();
        s.write_memory(MemSpace::Vmem, 1024, &twos).unwrap();
        let (r, log) = run_log(&p, &mut s);
        let d = s.read_memory(&MemRegion::new(MemSpace::Vmem, 2048, 4)).unwrap();
        assert_eq!(f32::from_le_bytes(d.try_into().unwrap()), 4.0);
        let busy: Vec<u64> = log
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::UnitBusy { unit: Unit::Mxu, .. } => Some(e.cycle),
                _ => None,
            })
            .collect();
        assert_eq!(busy[1] - busy[0], 32);
        assert_eq!(r.end_cycle, busy[1] + 32 + 1);
    }

    #[test]
    fn config_validation_and_hash() {
        let mut c = SimConfig::default();
        assert!(c.validate().is_ok());
        let h = c.hash();
        c.t_b = 0;
        assert_eq!(c.validate(), Err(ConfigError::BaseLatency));
        c.t_b = 50;
        assert_ne!(c.hash(), h);
        let parsed = SimConfig::from_json(r#"{"t_b": 50}"#).unwrap();
        assert_eq!(parsed, c);
        assert!(SimConfig::from_json(r#"{"tb": 50}"#).is_err());
    }
}
