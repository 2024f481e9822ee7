//! Offline analyses over a perf event log: DMA timelines, unit utilization,
//! VMEM occupancy, the dependency graph and reordering suggestions.

mod deps;
mod dma;
pub mod report;
mod suggest;
mod util;
mod vmem;

pub use deps::{build_dependency_graph, DependencyGraph, DmaDeps, Edge, Resource, CHAIN_CAP};
pub use dma::{analyze_dma, label_regions, DmaRecord, DmaScenario};
pub use report::{analyze, write_bundle, Bundle, Report, ReportOptions};
pub use suggest::{
    apply_and_verify, plan_schedule, suggest, Applied, Baseline, RejectReason, Suggestion, Verification, VerifyOutcome,
};
pub use util::{analyze_utilization, busy_fraction, UtilizationSeries};
pub use vmem::{analyze_vmem, FreeSpace, PageClasses, VmemAnalysis, VmemSample, BUCKET_PAGES};

use thiserror::Error;

use crate::isa::{Link, MemRegion, Opcode, RegisterId, Unit};
use crate::sim::{EventKind, PerfEventLog, StallReason};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("malformed event log: {0}")]
    Malformed(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::Malformed(_) => "BAD_EVENTS",
            AnalysisError::Parameter(_) => "USAGE",
        }
    }
}

/// Everything the log says about one dynamic instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrRecord {
    pub instr: usize,
    pub pc: usize,
    pub opcode: Opcode,
    pub unit: Unit,
    pub executed: bool,
    pub issue: u64,
    pub retire: Option<u64>,
    pub slot: Option<u8>,
    /// DMA id started by a `DMA_ISSUE` or observed by a `DMA_WAIT`.
    pub dma: Option<u32>,
    pub link: Option<Link>,
    pub reg_reads: Vec<RegisterId>,
    pub reg_writes: Vec<RegisterId>,
    pub mem_reads: Vec<MemRegion>,
    pub mem_writes: Vec<MemRegion>,
}

fn bad(msg: impl Into<String>) -> AnalysisError {
    AnalysisError::Malformed(msg.into())
}

/// Groups events by instruction. Indices must run densely from 0.
pub fn instruction_table(log: &PerfEventLog) -> Result<Vec<InstrRecord>, AnalysisError> {
    let mut table: Vec<InstrRecord> = Vec::new();
    let get = |table: &mut Vec<InstrRecord>, instr: u64| -> Result<usize, AnalysisError> {
        let i = instr as usize;
        if i < table.len() {
            Ok(i)
        } else {
            Err(bad(format!("event for instruction {instr} before its instr_issue")))
        }
    };
    for e in &log.events {
        match &e.kind {
            EventKind::InstrIssue {
                instr,
                pc,
                unit,
                opcode,
                slot,
                dma,
                executed,
            } => {
                if *instr as usize != table.len() {
                    return Err(bad(format!(
                        "instr_issue {instr} out of sequence, expected {}",
                        table.len()
                    )));
                }
                table.push(InstrRecord {
                    instr: table.len(),
                    pc: *pc,
                    opcode: *opcode,
                    unit: *unit,
                    executed: *executed,
                    issue: e.cycle,
                    retire: None,
                    slot: *slot,
                    dma: *dma,
                    link: None,
                    reg_reads: Vec::new(),
                    reg_writes: Vec::new(),
                    mem_reads: Vec::new(),
                    mem_writes: Vec::new(),
                });
            }
            EventKind::InstrRetire { instr, .. } => {
                let i = get(&mut table, *instr)?;
                table[i].retire = Some(e.cycle);
            }
            EventKind::RegRead { instr, reg } => {
                let i = get(&mut table, *instr)?;
                table[i].reg_reads.push(*reg);
            }
            EventKind::RegWrite { instr, reg } => {
                let i = get(&mut table, *instr)?;
                table[i].reg_writes.push(*reg);
            }
            EventKind::MemRead { instr, region } => {
                let i = get(&mut table, *instr)?;
                table[i].mem_reads.push(*region);
            }
            EventKind::MemWrite { instr, region } => {
                let i = get(&mut table, *instr)?;
                table[i].mem_writes.push(*region);
            }
            EventKind::DmaIssue { instr, dma, link, .. } => {
                let i = get(&mut table, *instr)?;
                table[i].dma = Some(*dma);
                table[i].link = Some(*link);
            }
            _ => {}
        }
    }
    Ok(table)
}

/// Stall cycles by reason plus their total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct StallTotals {
    pub dma_base: u64,
    pub dma_transfer: u64,
    pub hazard: u64,
    pub total: u64,
}

impl StallTotals {
    pub fn of(log: &PerfEventLog) -> Self {
        let dma_base = log.stall_cycles(StallReason::DmaBase);
        let dma_transfer = log.stall_cycles(StallReason::DmaTransfer);
        let hazard = log.stall_cycles(StallReason::Hazard);
        Self {
            dma_base,
            dma_transfer,
            hazard,
            total: dma_base + dma_transfer + hazard,
        }
    }
}
