//! Per-DMA timelines with the stall at the first wait split into the part
//! spent before the base latency elapsed and the part spent transferring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{bad, AnalysisError};
use crate::isa::{Link, MemRegion, Opcode};
use crate::sim::{EventKind, PerfEventLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DmaScenario {
    /// The wait began before the base latency elapsed.
    BaseStall,
    /// The wait began during the transfer.
    TransferStall,
    /// The transfer was done before anyone waited.
    Slack,
    /// Completed, never waited on within the window.
    Unwaited,
    /// Still in flight when the window ended.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaRecord {
    pub dma: u32,
    pub slot: u8,
    pub link: Link,
    pub src: MemRegion,
    pub dst: MemRegion,
    pub size: u64,
    /// Stream index of the `DMA_ISSUE`.
    pub instr: usize,
    pub pc: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    pub issue: u64,
    pub base_done: Option<u64>,
    pub transfer_start: Option<u64>,
    pub complete: Option<u64>,
    pub wait_instr: Option<usize>,
    pub wait_cycle: Option<u64>,
    pub stall_base: u64,
    pub stall_transfer: u64,
    /// Cycles between completion and the first wait.
    pub slack: Option<u64>,
    pub scenario: DmaScenario,
}

impl DmaRecord {
    pub fn stall(&self) -> u64 {
        self.stall_base + self.stall_transfer
    }
}

/// Builds one record per `dma_issue` in the log, in issue order.
pub fn analyze_dma(log: &PerfEventLog) -> Result<Vec<DmaRecord>, AnalysisError> {
    let mut records: Vec<DmaRecord> = Vec::new();
    let mut by_id: BTreeMap<u32, usize> = BTreeMap::new();
    let mut pcs: BTreeMap<u64, usize> = BTreeMap::new();
    for e in &log.events {
        let cycle = e.cycle;
        let find = |dma: &u32, by_id: &BTreeMap<u32, usize>| {
            by_id
                .get(dma)
                .copied()
                .ok_or_else(|| bad(format!("event for unknown dma {dma} at cycle {cycle}")))
        };
        match &e.kind {
            EventKind::InstrIssue {
                instr,
                pc,
                opcode,
                dma,
                executed,
                ..
            } => {
                pcs.insert(*instr, *pc);
                if *opcode == Opcode::DmaWait && *executed {
                    if let Some(id) = dma {
                        let i = find(id, &by_id)?;
                        let r = &mut records[i];
                        if r.wait_cycle.is_none() {
                            r.wait_cycle = Some(cycle);
                            r.wait_instr = Some(*instr as usize);
                        }
                    }
                }
            }
            EventKind::DmaIssue {
                instr,
                dma,
                slot,
                link,
                src,
                dst,
            } => {
                if by_id.insert(*dma, records.len()).is_some() {
                    return Err(bad(format!("dma {dma} issued twice")));
                }
                records.push(DmaRecord {
                    dma: *dma,
                    slot: *slot,
                    link: *link,
                    src: *src,
                    dst: *dst,
                    size: dst.length,
                    instr: *instr as usize,
                    pc: pcs.get(instr).copied().unwrap_or(0),
                    region: None,
                    issue: cycle,
                    base_done: None,
                    transfer_start: None,
                    complete: None,
                    wait_instr: None,
                    wait_cycle: None,
                    stall_base: 0,
                    stall_transfer: 0,
                    slack: None,
                    scenario: DmaScenario::Incomplete,
                });
            }
            EventKind::DmaBaseDone { dma, .. } => {
                let i = find(dma, &by_id)?;
                records[i].base_done = Some(cycle);
            }
            EventKind::DmaTransferStart { dma, .. } => {
                let i = find(dma, &by_id)?;
                records[i].transfer_start = Some(cycle);
            }
            EventKind::DmaComplete { dma, .. } => {
                let i = find(dma, &by_id)?;
                records[i].complete = Some(cycle);
            }
            _ => {}
        }
    }
    for r in &mut records {
        classify(r)?;
    }
    Ok(records)
}

fn classify(r: &mut DmaRecord) -> Result<(), AnalysisError> {
    let (Some(base), Some(done)) = (r.base_done, r.complete) else {
        if let Some(w) = r.wait_cycle {
            return Err(bad(format!("dma {} waited at cycle {w} but never completed", r.dma)));
        }
        r.scenario = DmaScenario::Incomplete;
        return Ok(());
    };
    let Some(wait) = r.wait_cycle else {
        r.scenario = DmaScenario::Unwaited;
        return Ok(());
    };
    if wait >= done {
        r.slack = Some(wait - done);
        r.scenario = DmaScenario::Slack;
        return Ok(());
    }
    r.stall_base = done.min(base).saturating_sub(wait);
    r.stall_transfer = done - wait.max(base);
    r.scenario = if wait < base {
        DmaScenario::BaseStall
    } else {
        DmaScenario::TransferStall
    };
    Ok(())
}

/// Attaches a region name to each record from a per-pc map.
pub fn label_regions(records: &mut [DmaRecord], regions: &[Option<String>]) {
    for r in records {
        r.region = regions.get(r.pc).cloned().flatten();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Instruction as I, Program};
    use crate::sim::{SimConfig, Simulator};

    fn log_of(instrs: Vec<I>) -> PerfEventLog {
        let sim = Simulator::new(SimConfig::default()).unwrap();
        let p = Program::new(instrs, 0).unwrap();
        let mut state = sim.reset_state();
        let mut log = PerfEventLog::new();
        sim.run(&p, &mut state, &mut log, 100_000);
        log
    }

    fn setup() -> Vec<I> {
        vec![I::s_ldi(1, 0), I::s_ldi(2, 0x1000), I::s_ldi(3, 256)]
    }

    #[test]
    fn immediate_wait_is_base_stall() {
        let mut p = setup();
        p.extend([
            I::dma_issue(0, crate::isa::Link::HBM_TO_VMEM, 1, 2, 3),
            I::dma_wait(0),
            I::halt(),
        ]);
        let log = log_of(p);
        let r = &analyze_dma(&log).unwrap()[0];
        assert_eq!(r.scenario, DmaScenario::BaseStall);
        assert_eq!(r.stall(), r.complete.unwrap() - r.wait_cycle.unwrap());
        assert_eq!(r.stall_transfer, 8);
        assert_eq!(r.stall_base + r.stall_transfer, log.dma_stall_cycles());
    }

    #[test]
    fn late_wait_has_slack_and_unwaited_is_flagged() {
        let mut p = setup();
        p.push(I::dma_issue(0, crate::isa::Link::HBM_TO_VMEM, 1, 2, 3));
        p.push(I::dma_issue(1, crate::isa::Link::HBM_TO_HBM, 1, 1, 3));
        p.extend((0..150).map(|_| I::s_add(9, 9, 9)));
        p.extend([I::dma_wait(0), I::halt()]);
        let rs = analyze_dma(&log_of(p)).unwrap();
        assert_eq!(rs[0].scenario, DmaScenario::Slack);
        assert!(rs[0].slack.unwrap() > 0);
        assert_eq!(rs[1].scenario, DmaScenario::Unwaited);
    }

    #[test]
    fn wait_during_transfer() {
        let mut p = setup();
        p.push(I::s_ldi(3, 32 * 64));
        p.push(I::dma_issue(0, crate::isa::Link::HBM_TO_VMEM, 1, 2, 3));
        p.extend((0..110).map(|_| I::s_add(9, 9, 9)));
        p.extend([I::dma_wait(0), I::halt()]);
        let r = analyze_dma(&log_of(p)).unwrap().remove(0);
        assert_eq!(r.scenario, DmaScenario::TransferStall);
        assert_eq!(r.stall_base, 0);
        assert!(r.stall_transfer > 0);
    }

    #[test]
    fn unknown_dma_is_rejected() {
        let mut log = log_of(vec![I::halt()]);
        log.events.insert(
            0,
            crate::sim::PerfEvent {
                cycle: 0,
                kind: EventKind::DmaComplete { dma: 9, slot: 0 },
            },
        );
        assert!(analyze_dma(&log).is_err());
    }
}
