//! Read-after-write dependencies between dynamic instructions, and the
//! earliest legal position of each `DMA_ISSUE`.
//!
//! The conservative graph links every read to the last earlier writer of
//! the register or byte. For a `DMA_ISSUE` the relaxed view walks back
//! through the scalar instructions that compute its address and length
//! registers (up to [`CHAIN_CAP`] of them) and stops at producers that
//! materialize data in memory. The walked instructions form a chain that
//! moves together with the DMA.
//!
//! Data written by a DMA is ready once its first `DMA_WAIT` retires, so a
//! dependency on a `DMA_ISSUE` whose wait precedes the reader is counted
//! against the wait. Both views use that rule.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{instruction_table, AnalysisError, InstrRecord};
use crate::intervals::IntervalMap;
use crate::isa::{MemSpace, Opcode, RegisterId};
use crate::sim::PerfEventLog;

/// Longest address-computation chain the relaxed walk follows.
pub const CHAIN_CAP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "name")]
pub enum Resource {
    Register(RegisterId),
    Memory(MemSpace),
}

/// `from` read something that `to` wrote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub resource: Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaDeps {
    pub instr: usize,
    pub dma: Option<u32>,
    /// Direct producers, with wait substitution.
    pub conservative: Vec<usize>,
    /// Producers where the chain walk stopped, with wait substitution.
    pub relaxed: Vec<usize>,
    /// Address and length computations walked through, ascending.
    pub chain: Vec<usize>,
    /// Earlier instructions that must stay before the DMA or its chain:
    /// prior accesses to the DMA destination, uses of the same slot, and
    /// prior readers and writers of registers the chain overwrites.
    pub ordering: Vec<usize>,
    pub earliest_conservative: usize,
    pub earliest_relaxed: usize,
    /// Retire cycle of the instruction just before `earliest_relaxed`.
    pub earliest_cycle: u64,
    /// Cycles the DMA could have issued earlier: issue cycle minus
    /// `earliest_cycle`.
    pub backtail: u64,
}

#[derive(Debug, Clone)]
pub struct DependencyGraph {
    pub instrs: Vec<InstrRecord>,
    /// Conservative edges, sorted and without duplicates.
    pub edges: Vec<Edge>,
    pub dmas: Vec<DmaDeps>,
    producers: Vec<Vec<(usize, Resource)>>,
}

fn is_transform(op: Opcode) -> bool {
    matches!(
        op,
        Opcode::SLdi | Opcode::SAdd | Opcode::SMul | Opcode::SMov | Opcode::SCmp | Opcode::SLd
    )
}

struct MemTracker {
    hbm: IntervalMap<usize>,
    vmem: IntervalMap<usize>,
}

impl MemTracker {
    fn new() -> Self {
        Self {
            hbm: IntervalMap::new(),
            vmem: IntervalMap::new(),
        }
    }

    fn map(&mut self, space: MemSpace) -> &mut IntervalMap<usize> {
        match space {
            MemSpace::Hbm => &mut self.hbm,
            MemSpace::Vmem => &mut self.vmem,
        }
    }
}

pub fn build_dependency_graph(log: &PerfEventLog) -> Result<DependencyGraph, AnalysisError> {
    let instrs = instruction_table(log)?;
    let n = instrs.len();
    let mut reg_writer: Vec<Option<usize>> = vec![None; RegisterId::FLAT_COUNT];
    let mut reg_reader: Vec<Option<usize>> = vec![None; RegisterId::FLAT_COUNT];
    let mut writers = MemTracker::new();
    let mut readers = MemTracker::new();
    let mut producers: Vec<Vec<(usize, Resource)>> = vec![Vec::new(); n];
    let mut anti: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut slot_prev: Vec<Option<usize>> = vec![None; n];
    let mut slot_last: [Option<usize>; 16] = [None; 16];
    let mut edges = BTreeSet::new();
    for (j, rec) in instrs.iter().enumerate() {
        let mut prod = BTreeSet::new();
        for r in &rec.reg_reads {
            if let Some(w) = reg_writer[r.flat()] {
                prod.insert((w, Resource::Register(*r)));
            }
        }
        for m in &rec.mem_reads {
            for (_, w) in writers.map(m.space).overlapping(m.range()) {
                prod.insert((w, Resource::Memory(m.space)));
            }
        }
        for &(w, resource) in &prod {
            edges.insert(Edge {
                from: j,
                to: w,
                resource,
            });
        }
        producers[j] = prod.into_iter().collect();

        let mut a = BTreeSet::new();
        for r in &rec.reg_writes {
            a.extend(reg_reader[r.flat()]);
            a.extend(reg_writer[r.flat()]);
        }
        for m in &rec.mem_writes {
            for (_, x) in readers.map(m.space).overlapping(m.range()) {
                a.insert(x);
            }
            for (_, x) in writers.map(m.space).overlapping(m.range()) {
                a.insert(x);
            }
        }
        anti[j] = a.into_iter().collect();
        if let (Some(slot), Opcode::DmaIssue | Opcode::DmaWait) = (rec.slot, rec.opcode) {
            if let Some(s) = slot_last.get_mut(slot as usize) {
                slot_prev[j] = *s;
                *s = Some(j);
            }
        }

        for r in &rec.reg_reads {
            reg_reader[r.flat()] = Some(j);
        }
        for m in &rec.mem_reads {
            readers.map(m.space).assign(m.range(), j);
        }
        for r in &rec.reg_writes {
            reg_writer[r.flat()] = Some(j);
        }
        for m in &rec.mem_writes {
            writers.map(m.space).assign(m.range(), j);
        }
    }

    let mut first_wait: BTreeMap<u32, usize> = BTreeMap::new();
    for rec in &instrs {
        if rec.opcode == Opcode::DmaWait && rec.executed {
            if let Some(d) = rec.dma {
                first_wait.entry(d).or_insert(rec.instr);
            }
        }
    }
    let subst = |p: usize, reader: usize| -> usize {
        let rec = &instrs[p];
        if rec.opcode == Opcode::DmaIssue {
            if let Some(&w) = rec.dma.and_then(|d| first_wait.get(&d)) {
                if w < reader {
                    return w;
                }
            }
        }
        p
    };

    let mut dmas = Vec::new();
    for (d, rec) in instrs.iter().enumerate() {
        if rec.opcode != Opcode::DmaIssue {
            continue;
        }
        let conservative: BTreeSet<usize> = producers[d].iter().map(|&(p, _)| subst(p, d)).collect();

        let mut terminals = BTreeSet::new();
        let mut chain = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut visited = BTreeSet::new();
        for &(p, res) in &producers[d] {
            match res {
                Resource::Register(_) => heap.push(p),
                Resource::Memory(_) => {
                    terminals.insert(subst(p, d));
                }
            }
        }
        while let Some(p) = heap.pop() {
            if !visited.insert(p) {
                continue;
            }
            if is_transform(instrs[p].opcode) && chain.len() < CHAIN_CAP {
                chain.push(p);
                for &(q, res) in &producers[p] {
                    match res {
                        Resource::Register(_) => heap.push(q),
                        Resource::Memory(_) => {
                            terminals.insert(subst(q, p));
                        }
                    }
                }
            } else {
                terminals.insert(p);
            }
        }
        chain.sort_unstable();

        let mut own: BTreeSet<usize> = anti[d].iter().copied().collect();
        own.extend(slot_prev[d]);
        // Chain members move with the DMA, so they never constrain it.
        let mut ordering: BTreeSet<usize> = own
            .iter()
            .copied()
            .filter(|x| chain.binary_search(x).is_err())
            .collect();
        for &c in &chain {
            ordering.extend(
                anti[c]
                    .iter()
                    .copied()
                    .filter(|x| *x != d && chain.binary_search(x).is_err()),
            );
        }
        let earliest = |deps: &BTreeSet<usize>, order: &BTreeSet<usize>| {
            deps.iter().chain(order.iter()).max().map_or(0, |m| m + 1)
        };
        let earliest_conservative = earliest(&conservative, &own);
        let earliest_relaxed = earliest(&terminals, &ordering);
        let earliest_cycle = if earliest_relaxed == 0 {
            instrs.first().map_or(0, |r| r.issue)
        } else {
            let r = &instrs[earliest_relaxed - 1];
            r.retire.unwrap_or(r.issue)
        };
        dmas.push(DmaDeps {
            instr: d,
            dma: rec.dma,
            conservative: conservative.into_iter().collect(),
            relaxed: terminals.into_iter().collect(),
            chain,
            ordering: ordering.into_iter().collect(),
            earliest_conservative,
            earliest_relaxed,
            earliest_cycle,
            backtail: rec.issue.saturating_sub(earliest_cycle),
        });
    }

    Ok(DependencyGraph {
        instrs,
        edges: edges.into_iter().collect(),
        dmas,
        producers,
    })
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Direct producers of an instruction's inputs.
    pub fn producers(&self, instr: usize) -> &[(usize, Resource)] {
        &self.producers[instr]
    }

    pub fn dma_deps(&self, instr: usize) -> Option<&DmaDeps> {
        self.dmas.iter().find(|d| d.instr == instr)
    }

    /// Relaxed edges: DMA issues point at the producers where their chain
    /// walk stopped; every other instruction keeps its conservative edges.
    pub fn relaxed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = BTreeSet::new();
        for e in &self.edges {
            if self.instrs[e.from].opcode != Opcode::DmaIssue {
                out.insert((e.from, e.to));
            }
        }
        for d in &self.dmas {
            for &t in &d.relaxed {
                out.insert((d.instr, t));
            }
        }
        out.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Instruction as I, Link, Program};
    use crate::sim::{SimConfig, Simulator};

    fn graph(instrs: Vec<I>) -> DependencyGraph {
        let sim = Simulator::new(SimConfig::default()).unwrap();
        let p = Program::new(instrs, 0).unwrap();
        let mut state = sim.reset_state();
        let mut log = PerfEventLog::new();
        sim.run(&p, &mut state, &mut log, 100_000);
        build_dependency_graph(&log).unwrap()
    }

    #[test]
    fn register_and_memory_edges() {
        let g = graph(vec![
            I::s_ldi(1, 64),     // 0
            I::v_store(1, 0, 0), // 1 reads s1, v0
            I::v_load(2, 1, 0),  // 2 reads s1 and the stored page
            I::halt(),
        ]);
        assert!(g.edges.contains(&Edge {
            from: 1,
            to: 0,
            resource: Resource::Register(RegisterId::s(1))
        }));
        assert!(g.edges.contains(&Edge {
            from: 2,
            to: 1,
            resource: Resource::Memory(MemSpace::Vmem)
        }));
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn chain_walks_to_memory_producer() {
        // 0..3 set up a descriptor DMA, 4 waits, 5 loads an address from it,
        // 6 bumps it, then a long independent stretch, then the DMA at 7+k.
        let mut p = vec![
            I::s_ldi(1, 0),
            I::s_ldi(2, 0x100),
            I::s_ldi(3, 8),
            I::dma_issue(0, Link::HBM_TO_VMEM, 1, 2, 3),
            I::dma_wait(0),
            I::s_ld(4, 2, 0),
            I::s_add(4, 4, 3),
        ];
        p.extend((0..20).map(|_| I::v_add(1, 1, 1)));
        let d = p.len();
        p.extend([I::dma_issue(1, Link::HBM_TO_VMEM, 4, 2, 3), I::dma_wait(1), I::halt()]);
        let g = graph(p);
        let deps = g.dma_deps(d).unwrap();
        assert_eq!(deps.conservative, vec![1, 2, 6]);
        assert_eq!(deps.chain, vec![1, 2, 5, 6]);
        // s3 and s2 come from S_LDIs; the S_LD's page came from DMA 3, whose
        // wait at 4 precedes it. DMA 1 also overwrites what DMA 0 wrote.
        assert_eq!(deps.relaxed, vec![4]);
        assert_eq!(deps.earliest_relaxed, 5);
        assert!(deps.earliest_relaxed <= deps.earliest_conservative);
        assert_eq!(deps.earliest_conservative, 7);
        assert!(deps.backtail > 20);
    }

    #[test]
    fn chain_is_capped() {
        let mut p = vec![I::s_ldi(2, 0x10000), I::s_ldi(3, 64), I::s_ldi(1, 1)];
        p.extend((0..12).map(|_| I::s_add(1, 1, 1)));
        let d = p.len();
        p.extend([I::dma_issue(0, Link::HBM_TO_HBM, 1, 2, 3), I::dma_wait(0), I::halt()]);
        let g = graph(p);
        let deps = g.dma_deps(d).unwrap();
        assert_eq!(deps.chain.len(), CHAIN_CAP);
        // The walk stops at the cap; what is left becomes terminals.
        assert_eq!(deps.relaxed, vec![0, 1, d - 1 - CHAIN_CAP]);
    }
}
