//! Parameterized kernels that reproduce the patterns the analyzer looks for.

use std::fmt::Write as _;

use super::asm::{assemble, Kernel};

/// Line-oriented source builder.
#[derive(Default)]
struct Src(String);

impl Src {
    fn line(&mut self, text: impl AsRef<str>) {
        self.0.push_str(text.as_ref());
        self.0.push('\n');
    }

    fn op(&mut self, text: impl AsRef<str>) {
        self.0.push_str("    ");
        self.line(text);
    }

    fn f32_data(&mut self, space: &str, base: u64, values: impl IntoIterator<Item = f32>) {
        let values: Vec<f32> = values.into_iter().collect();
        for (i, chunk) in values.chunks(16).enumerate() {
            let items: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
            self.line(format!(
                ".data {space} {:#x} f32 {}",
                base + 64 * i as u64,
                items.join(", ")
            ));
        }
    }

    fn u32_data(&mut self, space: &str, base: u64, values: &[u32]) {
        for (i, chunk) in values.chunks(16).enumerate() {
            let items: Vec<String> = chunk.iter().map(|v| format!("{v:#x}")).collect();
            self.line(format!(
                ".data {space} {:#x} u32 {}",
                base + 64 * i as u64,
                items.join(", ")
            ));
        }
    }
}

/// A weight-streaming matmul: each tile is fetched from HBM by a DMA whose
/// addresses come from a descriptor table, then multiplied into a shared
/// accumulator. `prefetch_depth` tiles are kept in flight; depth 1 is the
/// starved issue, wait, compute sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StarvationParams {
    pub tiles: usize,
    pub prefetch_depth: usize,
}

impl Default for StarvationParams {
    fn default() -> Self {
        Self {
            tiles: 12,
            prefetch_depth: 1,
        }
    }
}

impl StarvationParams {
    pub const MAX_TILES: usize = 12;
    pub const BIAS_STEPS: usize = 6;
    const TABLE_HBM: u64 = 0x0;
    const TILES_HBM: u64 = 0x10000;
    const TABLE_VMEM: u64 = 0x0;
    const B_VMEM: u64 = 0x400;
    const C_VMEM: u64 = 0x800;
    const TILES_VMEM: u64 = 0x1000;

    pub fn tile_src(i: usize) -> u64 {
        Self::TILES_HBM + 0x1000 * i as u64
    }

    pub fn tile_dst(i: usize) -> u64 {
        Self::TILES_VMEM + 0x400 * i as u64
    }

    pub fn accumulator() -> u64 {
        Self::C_VMEM
    }

    pub fn source(&self) -> String {
        let tiles = self.tiles.clamp(1, Self::MAX_TILES);
        let depth = self.prefetch_depth.clamp(1, tiles);
        let mut s = Src::default();
        let _ = write!(s.0, "; weight streaming, {tiles} tiles, prefetch depth {depth}\n");
        let table: Vec<u32> = (0..tiles)
            .flat_map(|i| [Self::tile_src(i) as u32, Self::tile_dst(i) as u32])
            .collect();
        s.u32_data("hbm", Self::TABLE_HBM, &table);
        for i in 0..tiles {
            s.f32_data(
                "hbm",
                Self::tile_src(i),
                (0..256).map(|j| ((i * 7 + j * 3) % 5) as f32 * 0.5 - 1.0),
            );
        }
        s.f32_data("vmem", Self::B_VMEM, (0..256).map(|j| (j % 3) as f32 - 1.0));
        s.line(";; hlo: prologue");
        s.op(format!("S_LDI s1, {:#x}", Self::TABLE_HBM));
        s.op(format!("S_LDI s2, {:#x}", Self::TABLE_VMEM));
        s.op(format!("S_LDI s3, {}", table.len() * 4));
        s.op("S_LDI s4, 1024");
        s.op(format!("S_LDI s5, {:#x}", Self::B_VMEM));
        s.op(format!("S_LDI s6, {:#x}", Self::C_VMEM));
        s.op("DMA_ISSUE 15, hbm->vmem, s1, s2, s3");
        s.op("DMA_WAIT 15");
        // Independent MXU work that a good schedule overlaps with the first
        // weight fetches.
        s.line(";; hlo: bias");
        for _ in 0..Self::BIAS_STEPS {
            s.op("MXU_MM s6, s5, s5");
        }
        s.line(";; hlo: matmul");
        let issue = |s: &mut Src, i: usize| {
            let (a, d) = (7 + 2 * i, 8 + 2 * i);
            s.op(format!("S_LD s{a}, [s2+{}]", 8 * i));
            s.op(format!("S_LD s{d}, [s2+{}]", 8 * i + 4));
            s.op(format!("DMA_ISSUE {i}, hbm->vmem, s{a}, s{d}, s4"));
        };
        let mut issued = 0;
        for i in 0..tiles {
            while issued < tiles && issued < i + depth {
                issue(&mut s, issued);
                issued += 1;
            }
            s.op(format!("DMA_WAIT {i}"));
            s.op(format!("MXU_MM s6, s{}, s5", 8 + 2 * i));
        }
        s.op("HALT");
        s.0
    }

    pub fn kernel(&self) -> Kernel {
        assemble(&self.source()).expect("generated starvation kernel assembles")
    }
}

/// A collective whose setup phase walks a chain of small metadata DMAs
/// (an initial descriptor fetch per group, then one dependent fetch per
/// peer) before compute and payload sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllGatherParams {
    pub groups: usize,
    pub deps_per_group: usize,
    pub node_addr_bytes: u64,
    /// Bytes each group produces and sends to every peer.
    pub payload_bytes: u64,
    /// Metadata is already resident; the setup phase is skipped.
    pub pinned: bool,
    /// Initial fetches are issued together, then all dependent fetches.
    pub parallel_setup: bool,
}

impl Default for AllGatherParams {
    fn default() -> Self {
        Self {
            groups: 3,
            deps_per_group: 2,
            node_addr_bytes: 64,
            payload_bytes: 3072,
            pinned: false,
            parallel_setup: false,
        }
    }
}

impl AllGatherParams {
    const DESC_HBM: u64 = 0x0;
    const PEER_DESC_HBM: u64 = 0x1000;
    const NODES_HBM: u64 = 0x100000;
    const META_VMEM: u64 = 0x0;
    const SRC_VMEM: u64 = 0x10000;
    const OUT_VMEM: u64 = 0x40000;

    fn meta(g: usize) -> u64 {
        Self::META_VMEM + 0x100 * g as u64
    }

    fn peer_desc(&self, g: usize, k: usize) -> u64 {
        Self::PEER_DESC_HBM + 0x100 * (g * self.deps_per_group + k) as u64
    }

    fn node(&self, g: usize, k: usize) -> u64 {
        Self::NODES_HBM + 0x10000 * (g * self.deps_per_group + k) as u64
    }

    fn payload(&self) -> u64 {
        self.payload_bytes.max(64).div_ceil(64) * 64
    }

    fn out(&self, g: usize) -> u64 {
        Self::OUT_VMEM + self.payload() * g as u64
    }

    fn initial_slot(g: usize) -> usize {
        g
    }

    fn dep_slot(&self, g: usize, k: usize) -> usize {
        self.groups + g * self.deps_per_group + k
    }

    fn send_slot(&self, g: usize, k: usize) -> usize {
        self.groups * (1 + self.deps_per_group) + g * self.deps_per_group + k
    }

    /// Initial descriptor words: addresses of the peer descriptors.
    fn initial_words(&self, g: usize) -> Vec<u32> {
        let mut w: Vec<u32> = (0..self.deps_per_group).map(|k| self.peer_desc(g, k) as u32).collect();
        w.resize((self.node_addr_bytes / 4) as usize, 0);
        w
    }

    /// Peer descriptor words: the peer's receive address.
    fn peer_words(&self, g: usize, k: usize) -> Vec<u32> {
        let mut w = vec![self.node(g, k) as u32];
        w.resize((self.node_addr_bytes / 4) as usize, 0);
        w
    }

    /// Number of metadata DMAs in the setup phase.
    pub fn setup_dmas(&self) -> usize {
        if self.pinned {
            0
        } else {
            self.groups * (1 + self.deps_per_group)
        }
    }

    pub fn source(&self) -> String {
        assert!(self.groups >= 1 && self.deps_per_group >= 1 && self.deps_per_group <= 3);
        assert!(self.groups * (2 * self.deps_per_group + 1) <= 16, "too many DMA slots");
        assert!(self.node_addr_bytes >= 4 * self.deps_per_group as u64 && self.node_addr_bytes % 4 == 0);
        assert!(self.node_addr_bytes <= 64);
        let nab = self.node_addr_bytes;
        let mut s = Src::default();
        let _ = write!(
            s.0,
            "; all-gather, {} groups x {} peers, {} payload bytes{}{}\n",
            self.groups,
            self.deps_per_group,
            self.payload(),
            if self.pinned { ", pinned metadata" } else { "" },
            if self.parallel_setup { ", parallel setup" } else { "" }
        );
        for g in 0..self.groups {
            s.u32_data("hbm", Self::DESC_HBM + 0x100 * g as u64, &self.initial_words(g));
            for k in 0..self.deps_per_group {
                s.u32_data("hbm", self.peer_desc(g, k), &self.peer_words(g, k));
            }
            if self.pinned {
                s.u32_data("vmem", Self::meta(g), &self.initial_words(g));
                for k in 0..self.deps_per_group {
                    s.u32_data("vmem", Self::meta(g) + nab * (k as u64 + 1), &self.peer_words(g, k));
                }
            }
        }
        s.line(format!(".fill vmem {:#x} {} 60", Self::SRC_VMEM, self.payload()));
        s.op(format!("S_LDI s1, {nab}"));
        s.op(format!("S_LDI s10, {}", self.payload()));
        s.op("S_LDI s23, 64");
        s.op("S_LDI s24, -1");
        if !self.pinned {
            s.line(";; hlo: setup");
            let initial = |s: &mut Src, g: usize| {
                s.op(format!("S_LDI s2, {:#x}", Self::DESC_HBM + 0x100 * g as u64));
                s.op(format!("S_LDI s3, {:#x}", Self::meta(g)));
                s.op(format!("DMA_ISSUE {}, hbm->vmem, s2, s3, s1", Self::initial_slot(g)));
            };
            let dependent = |s: &mut Src, g: usize, k: usize| {
                s.op(format!("S_LDI s3, {:#x}", Self::meta(g)));
                s.op(format!("S_LD s4, [s3+{}]", 4 * k));
                s.op(format!("S_LDI s5, {:#x}", Self::meta(g) + nab * (k as u64 + 1)));
                s.op(format!("DMA_ISSUE {}, hbm->vmem, s4, s5, s1", self.dep_slot(g, k)));
            };
            if self.parallel_setup {
                for g in 0..self.groups {
                    initial(&mut s, g);
                }
                for g in 0..self.groups {
                    s.op(format!("DMA_WAIT {}", Self::initial_slot(g)));
                }
                for g in 0..self.groups {
                    for k in 0..self.deps_per_group {
                        dependent(&mut s, g, k);
                    }
                }
                for g in 0..self.groups {
                    for k in 0..self.deps_per_group {
                        s.op(format!("DMA_WAIT {}", self.dep_slot(g, k)));
                    }
                }
            } else {
                for g in 0..self.groups {
                    initial(&mut s, g);
                    s.op(format!("DMA_WAIT {}", Self::initial_slot(g)));
                    for k in 0..self.deps_per_group {
                        dependent(&mut s, g, k);
                        s.op(format!("DMA_WAIT {}", self.dep_slot(g, k)));
                    }
                }
            }
        }
        let pages = self.payload() / 64;
        for g in 0..self.groups {
            s.line(format!(";; hlo: compute{g}"));
            s.op(format!("S_LDI s21, {:#x}", Self::SRC_VMEM));
            s.op(format!("S_LDI s22, {:#x}", self.out(g)));
            s.op(format!("S_LDI s20, {pages}"));
            s.line(format!("loop{g}:"));
            s.op("V_LOAD v0, [s21]");
            s.op(format!("V_ADD v1, v0, v{}", 2 + g));
            s.op("V_STORE [s22], v1");
            s.op("S_ADD s21, s21, s23");
            s.op("S_ADD s22, s22, s23");
            s.op("S_ADD s20, s20, s24");
            s.op(format!("BRZ s20, send{g}"));
            s.op(format!("BR loop{g}"));
            s.line(format!(";; hlo: send{g}"));
            s.line(format!("send{g}:"));
            s.op(format!("S_LDI s26, {:#x}", self.out(g)));
            s.op(format!("S_LDI s27, {:#x}", Self::meta(g)));
            for k in 0..self.deps_per_group {
                s.op(format!("S_LD s25, [s27+{}]", nab * (k as u64 + 1)));
                s.op(format!("DMA_ISSUE {}, vmem->hbm, s26, s25, s10", self.send_slot(g, k)));
            }
        }
        s.line(";; hlo: drain");
        for g in 0..self.groups {
            for k in 0..self.deps_per_group {
                s.op(format!("DMA_WAIT {}", self.send_slot(g, k)));
            }
        }
        s.op("HALT");
        s.0
    }

    pub fn kernel(&self) -> Kernel {
        assemble(&self.source()).expect("generated all-gather kernel assembles")
    }
}

/// Writes every other VMEM page, holds them live through a delay loop, then
/// reads them back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckerboardParams {
    /// VMEM pages covered, starting at address 0. Even pages are used.
    pub pages: u64,
    pub hold_iterations: u32,
}

impl Default for CheckerboardParams {
    fn default() -> Self {
        Self {
            pages: crate::isa::DEFAULT_VMEM_BYTES / crate::isa::PAGE_BYTES,
            hold_iterations: 200,
        }
    }
}

impl CheckerboardParams {
    const UNROLL: u64 = 8;

    pub fn source(&self) -> String {
        let live = self.pages / 2;
        assert!(
            live >= Self::UNROLL && live % Self::UNROLL == 0,
            "pages must be a multiple of 16"
        );
        let iters = live / Self::UNROLL;
        let stride = 2 * 64 * Self::UNROLL;
        let mut s = Src::default();
        s.line("; checkerboard VMEM occupancy");
        s.op("S_LDI s2, -1");
        s.op(format!("S_LDI s4, {stride}"));
        s.line(";; hlo: fill");
        s.op("S_LDI s1, 0");
        s.op(format!("S_LDI s3, {iters}"));
        s.line("fill:");
        for k in 0..Self::UNROLL {
            s.op(format!("V_STORE [s1+{}], v0", 128 * k));
        }
        s.op("S_ADD s1, s1, s4");
        s.op("S_ADD s3, s3, s2");
        s.op("BRZ s3, hold_start");
        s.op("BR fill");
        s.line(";; hlo: hold");
        s.line("hold_start:");
        s.op(format!("S_LDI s3, {}", self.hold_iterations.max(1)));
        s.line("hold:");
        s.op("S_ADD s3, s3, s2");
        s.op("BRZ s3, drain_start");
        s.op("BR hold");
        s.line(";; hlo: drain");
        s.line("drain_start:");
        s.op("S_LDI s1, 0");
        s.op(format!("S_LDI s3, {iters}"));
        s.line("drain:");
        for k in 0..Self::UNROLL {
            s.op(format!("V_LOAD v{}, [s1+{}]", 1 + k, 128 * k));
        }
        s.op("S_ADD s1, s1, s4");
        s.op("S_ADD s3, s3, s2");
        s.op("BRZ s3, done");
        s.op("BR drain");
        s.line("done:");
        s.op("HALT");
        s.0
    }

    pub fn kernel(&self) -> Kernel {
        assemble(&self.source()).expect("generated checkerboard kernel assembles")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{MemRegion, MemSpace};
    use crate::sim::{NullTracker, PerfEventLog, RunStatus, SimConfig, Simulator, StallReason};

    fn run(k: &Kernel) -> (crate::isa::MachineState, PerfEventLog) {
        let sim = Simulator::new(SimConfig::default()).unwrap();
        let mut state = k.boot_state(&sim).unwrap();
        let mut log = PerfEventLog::new();
        let r = sim.run(&k.program, &mut state, &mut log, 10_000_000);
        assert_eq!(r.status, RunStatus::Halted);
        (state, log)
    }

    #[test]
    fn starvation_depths_agree_on_state() {
        let base = run(&StarvationParams::default().kernel());
        let deep = run(&StarvationParams {
            prefetch_depth: 4,
            ..Default::default()
        }
        .kernel());
        assert!(base.0.arch_eq(&deep.0));
        assert!(deep.1.end_cycle() * 2 < base.1.end_cycle());
        let c = MemRegion::new(MemSpace::Vmem, StarvationParams::accumulator(), 1024);
        assert_ne!(base.0.read_memory(&c).unwrap(), vec![0; 1024]);
    }

    #[test]
    fn allgather_variants_run() {
        let base = run(&AllGatherParams::default().kernel()).1;
        let pinned = run(&AllGatherParams {
            pinned: true,
            ..Default::default()
        }
        .kernel())
        .1;
        let par = run(&AllGatherParams {
            parallel_setup: true,
            ..Default::default()
        }
        .kernel())
        .1;
        assert!(pinned.end_cycle() < base.end_cycle());
        assert!(par.end_cycle() < base.end_cycle());
        assert!(base.stall_cycles(StallReason::DmaBase) > par.stall_cycles(StallReason::DmaBase));
    }

    #[test]
    fn allgather_sends_reach_nodes() {
        let p = AllGatherParams::default();
        let (state, _) = run(&p.kernel());
        for g in 0..p.groups {
            for k in 0..p.deps_per_group {
                let r = MemRegion::new(MemSpace::Hbm, p.node(g, k), 64);
                assert_ne!(state.read_memory(&r).unwrap(), vec![0; 64], "group {g} peer {k}");
            }
        }
    }

    #[test]
    fn small_checkerboard_runs() {
        let k = CheckerboardParams {
            pages: 64,
            hold_iterations: 4,
        }
        .kernel();
        let sim = Simulator::new(SimConfig::default()).unwrap();
        let mut state = k.boot_state(&sim).unwrap();
        assert_eq!(
            sim.run(&k.program, &mut state, &mut NullTracker, 100_000).status,
            RunStatus::Halted
        );
    }
}
