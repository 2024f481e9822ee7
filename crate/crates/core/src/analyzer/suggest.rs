//! Reordering suggestions: hoist a stalled `DMA_ISSUE` (with the chain that
//! computes its operands) to its earliest legal position, then check the
//! reorder by replaying the trace.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DependencyGraph, DmaRecord, StallTotals, VmemAnalysis};
use crate::isa::{Instruction, Link, MachineState, MemSpace};
use crate::recorder::ExecutionTrace;
use crate::replayer::{replay_with_schedule, ReplayError, ReplayOptions};
use crate::sim::{PerfEventLog, SimConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RejectReason {
    /// The reordered replay diverged or faulted.
    Replay {
        code: String,
        message: String,
    },
    StateMismatch,
    NoStallReduction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Verification {
    VerifiedSpeedup {
        cycles_saved: u64,
        stall_saved: u64,
    },
    /// Same final state; stalls dropped but the run did not get shorter,
    /// or the order did not change.
    VerifiedEqualState {
        stall_saved: u64,
    },
    Rejected(RejectReason),
}

impl Verification {
    pub fn is_verified(&self) -> bool {
        !matches!(self, Verification::Rejected(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suggestion {
    pub id: usize,
    pub dma: u32,
    /// Stream index of the `DMA_ISSUE`.
    pub instr: usize,
    pub pc: usize,
    pub slot: u8,
    pub link: Link,
    pub size: u64,
    pub stall: u64,
    /// How far back the DMA could move, in cycles.
    pub push_limit: u64,
    pub earliest_position: usize,
    /// Insertion point: before the instruction currently at this index.
    pub proposed_position: usize,
    pub chain: Vec<usize>,
    pub target_cycle: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_vmem_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
}

impl Suggestion {
    /// Instructions that move: the DMA plus chain members at or after the
    /// insertion point.
    pub fn moved(&self) -> Vec<usize> {
        let mut m: Vec<usize> = self
            .chain
            .iter()
            .copied()
            .filter(|&c| c >= self.proposed_position)
            .collect();
        m.push(self.instr);
        m
    }
}

/// Suggests a hoist for every DMA whose first wait stalled, whose backtail
/// exceeds that stall, that can actually move, and whose destination fits
/// in free VMEM at the target cycle.
pub fn suggest(graph: &DependencyGraph, records: &[DmaRecord], vmem: Option<&VmemAnalysis>) -> Vec<Suggestion> {
    let mut out = Vec::new();
    for r in records {
        let stall = r.stall();
        if r.wait_cycle.is_none() || stall == 0 {
            continue;
        }
        let Some(deps) = graph.dma_deps(r.instr) else { continue };
        let push_limit = deps.backtail;
        if push_limit <= stall {
            continue;
        }
        let proposed = deps.earliest_relaxed;
        let chain = deps.chain.clone();
        let movable = (proposed..r.instr).any(|i| chain.binary_search(&i).is_err());
        if !movable {
            continue;
        }
        let target_cycle = if proposed == 0 {
            0
        } else {
            let p = &graph.instrs[proposed - 1];
            p.retire.unwrap_or(p.issue)
        };
        let mut free_vmem_bytes = None;
        if r.dst.space == MemSpace::Vmem {
            if let Some(v) = vmem {
                let free = v.free_at(target_cycle).largest_contiguous_free_bytes();
                if free < r.size {
                    continue;
                }
                free_vmem_bytes = Some(free);
            }
        }
        out.push(Suggestion {
            id: out.len(),
            dma: r.dma,
            instr: r.instr,
            pc: r.pc,
            slot: r.slot,
            link: r.link,
            size: r.size,
            stall,
            push_limit,
            earliest_position: deps.earliest_relaxed,
            proposed_position: proposed,
            chain,
            target_cycle,
            free_vmem_bytes,
            verification: None,
        });
    }
    out
}

/// The replay order that applies `suggestions` together. Moved DMAs on one
/// link keep their relative order; everything else keeps stream order.
pub fn plan_schedule(stream: &[Instruction], suggestions: &[&Suggestion]) -> Vec<usize> {
    let mut sorted: Vec<&Suggestion> = suggestions.to_vec();
    sorted.sort_by_key(|s| s.instr);
    let mut last_on_link: BTreeMap<i32, usize> = BTreeMap::new();
    let mut target: BTreeMap<usize, usize> = BTreeMap::new();
    for s in sorted {
        let mut pos = s.proposed_position.min(s.instr);
        if let Some(&prev) = last_on_link.get(&s.link.code()) {
            pos = pos.max(prev);
        }
        last_on_link.insert(s.link.code(), pos);
        let placed = Suggestion {
            proposed_position: pos,
            ..s.clone()
        };
        for m in placed.moved() {
            let t = target.entry(m).or_insert(pos);
            *t = (*t).min(pos);
        }
    }
    let mut keys: Vec<(usize, u8, usize)> = (0..stream.len())
        .map(|i| match target.get(&i) {
            Some(&p) => (p, 0, i),
            None => (i, 1, i),
        })
        .collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| k.2).collect()
}

/// The identity replay a reorder is measured against.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub state: MachineState,
    pub end_cycle: u64,
    pub stall: StallTotals,
    pub log: PerfEventLog,
}

impl Baseline {
    pub fn replay(trace: &ExecutionTrace, config: &SimConfig) -> Result<Self, ReplayError> {
        let mut log = PerfEventLog::new();
        let out = crate::replayer::replay(trace, config, &mut log, &ReplayOptions::default())?;
        Ok(Self {
            state: out.state,
            end_cycle: out.end_cycle,
            stall: StallTotals::of(&log),
            log,
        })
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub order: Vec<usize>,
    pub end_cycle: Option<u64>,
    pub stall: Option<StallTotals>,
    pub verification: Verification,
    pub log: Option<PerfEventLog>,
}

/// Replays `order` and compares it with the baseline.
pub fn verify_schedule(
    trace: &ExecutionTrace,
    config: &SimConfig,
    baseline: &Baseline,
    order: Vec<usize>,
) -> VerifyOutcome {
    let mut log = PerfEventLog::new();
    let identity = order.iter().enumerate().all(|(p, &i)| p == i);
    match replay_with_schedule(trace, &order, config, &mut log, &ReplayOptions::default()) {
        Err(e) => VerifyOutcome {
            order,
            end_cycle: None,
            stall: None,
            verification: Verification::Rejected(RejectReason::Replay {
                code: e.code().to_string(),
                message: e.to_string(),
            }),
            log: None,
        },
        Ok(out) => {
            let stall = StallTotals::of(&log);
            let verification = if !out.state.arch_eq(&baseline.state) {
                Verification::Rejected(RejectReason::StateMismatch)
            } else if identity {
                Verification::VerifiedEqualState { stall_saved: 0 }
            } else if stall.total >= baseline.stall.total {
                Verification::Rejected(RejectReason::NoStallReduction)
            } else if out.end_cycle < baseline.end_cycle {
                Verification::VerifiedSpeedup {
                    cycles_saved: baseline.end_cycle - out.end_cycle,
                    stall_saved: baseline.stall.total - stall.total,
                }
            } else {
                Verification::VerifiedEqualState {
                    stall_saved: baseline.stall.total - stall.total,
                }
            };
            VerifyOutcome {
                order,
                end_cycle: Some(out.end_cycle),
                stall: Some(stall),
                verification,
                log: Some(log),
            }
        }
    }
}

/// Result of checking each suggestion alone and the verified ones together.
#[derive(Debug, Clone)]
pub struct Applied {
    pub individual: Vec<VerifyOutcome>,
    /// All individually verified suggestions applied at once.
    pub combined: Option<VerifyOutcome>,
}

/// Verifies every suggestion on its own, records the result on it, then
/// verifies the combination of the ones that passed.
pub fn apply_and_verify(
    trace: &ExecutionTrace,
    config: &SimConfig,
    baseline: &Baseline,
    suggestions: &mut [Suggestion],
) -> Applied {
    let stream: Vec<Instruction> = trace.instr_stream.iter().map(|e| e.instr.clone()).collect();
    let mut individual = Vec::new();
    for s in suggestions.iter_mut() {
        let order = plan_schedule(&stream, &[s]);
        let outcome = verify_schedule(trace, config, baseline, order);
        s.verification = Some(outcome.verification.clone());
        individual.push(outcome);
    }
    let passed: Vec<&Suggestion> = suggestions
        .iter()
        .filter(|s| s.verification.as_ref().is_some_and(Verification::is_verified))
        .collect();
    let combined =
        (!passed.is_empty()).then(|| verify_schedule(trace, config, baseline, plan_schedule(&stream, &passed)));
    Applied { individual, combined }
}
