//! Performance events and the trackers that observe them.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{Link, MemRegion, Opcode, RegisterId, Unit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallReason {
    DmaBase,
    DmaTransfer,
    Hazard,
}

/// One timestamped event. `instr` fields are the dynamic instruction index
/// within the run (for a replay, the index into the recorded stream).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerfEvent {
    pub cycle: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    InstrIssue {
        instr: u64,
        pc: usize,
        unit: Unit,
        opcode: Opcode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<u8>,
        /// The DMA a `DMA_WAIT` observed, when the slot still knows it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dma: Option<u32>,
        executed: bool,
    },
    InstrRetire {
        instr: u64,
        pc: usize,
    },
    UnitBusy {
        instr: u64,
        unit: Unit,
        cycles: u64,
    },
    StallBegin {
        instr: u64,
        reason: StallReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dma: Option<u32>,
    },
    StallEnd {
        instr: u64,
        reason: StallReason,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dma: Option<u32>,
    },
    DmaIssue {
        instr: u64,
        dma: u32,
        slot: u8,
        link: Link,
        src: MemRegion,
        dst: MemRegion,
    },
    DmaBaseDone {
        dma: u32,
        slot: u8,
    },
    DmaTransferStart {
        dma: u32,
        slot: u8,
    },
    DmaComplete {
        dma: u32,
        slot: u8,
    },
    RegRead {
        instr: u64,
        reg: RegisterId,
    },
    RegWrite {
        instr: u64,
        reg: RegisterId,
    },
    MemRead {
        instr: u64,
        region: MemRegion,
    },
    MemWrite {
        instr: u64,
        region: MemRegion,
    },
    /// Last event of every run: the cycle at which the window ended and the
    /// architectural digest of the final state.
    RunEnd {
        end_cycle: u64,
        state_digest: String,
    },
}

/// Receives every event synchronously on the simulation thread. Trackers are
/// observers: they cannot influence execution.
pub trait PerfTracker {
    fn on_event(&mut self, event: &PerfEvent);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullTracker;

impl PerfTracker for NullTracker {
    fn on_event(&mut self, _event: &PerfEvent) {}
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("event log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("event log line {line}: cycle {cycle} precedes {previous}")]
    Order { line: usize, cycle: u64, previous: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A complete, cycle-ordered event stream. Also usable as a tracker that
/// retains everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PerfEventLog {
    pub events: Vec<PerfEvent>,
}

impl PerfTracker for PerfEventLog {
    fn on_event(&mut self, event: &PerfEvent) {
        self.events.push(event.clone());
    }
}

impl PerfEventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// End cycle and final digest from the trailing `run_end` event.
    pub fn run_end(&self) -> Option<(u64, &str)> {
        self.events.iter().rev().find_map(|e| match &e.kind {
            EventKind::RunEnd {
                end_cycle,
                state_digest,
            } => Some((*end_cycle, state_digest.as_str())),
            _ => None,
        })
    }

    /// Cycle of the run end, or of the last event when the log has no
    /// `run_end` record.
    pub fn end_cycle(&self) -> u64 {
        self.run_end()
            .map(|(c, _)| c)
            .unwrap_or_else(|| self.events.last().map_or(0, |e| e.cycle))
    }

    /// Total cycles spent in stalls with the given reason.
    pub fn stall_cycles(&self, reason: StallReason) -> u64 {
        let mut open = None;
        let mut total = 0;
        for e in &self.events {
            match &e.kind {
                EventKind::StallBegin { reason: r, .. } if *r == reason => open = Some(e.cycle),
                EventKind::StallEnd { reason: r, .. } if *r == reason => {
                    if let Some(start) = open.take() {
                        total += e.cycle - start;
                    }
                }
                _ => {}
            }
        }
        total
    }

    pub fn dma_stall_cycles(&self) -> u64 {
        self.stall_cycles(StallReason::DmaBase) + self.stall_cycles(StallReason::DmaTransfer)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parses JSON lines, skipping blank lines. Rejects out-of-order cycles.
    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, EventLogError> {
        let mut events: Vec<PerfEvent> = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: PerfEvent =
                serde_json::from_str(&line).map_err(|source| EventLogError::Parse { line: i + 1, source })?;
            if let Some(prev) = events.last() {
                if event.cycle < prev.cycle {
                    return Err(EventLogError::Order {
                        line: i + 1,
                        cycle: event.cycle,
                        previous: prev.cycle,
                    });
                }
            }
            events.push(event);
        }
        Ok(Self { events })
    }
}
