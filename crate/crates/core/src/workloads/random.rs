//! Seeded random kernels that always terminate and never fault.
//!
//! Register conventions keep every address in bounds: `s0..s7` hold
//! tile-aligned VMEM bases, `s8`/`s9` HBM bases, `s10` the loop counter,
//! `s11` the constant -1 and `s12` the DMA length (at most one tile). Only
//! `s13..s31` are written by random arithmetic. Every DMA is waited before
//! the enclosing loop iteration ends and before `HALT`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::asm::{assemble, Kernel};
use crate::isa::{CmpCond, Link, MemSpace, MXU_TILE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomParams {
    /// Approximate static instruction count.
    pub size: usize,
    /// Chance per step of opening a counted loop.
    pub loops: f64,
    /// Chance that an eligible instruction is guarded by a predicate.
    pub predication: f64,
    /// Chance per step of issuing a DMA.
    pub dma_density: f64,
    pub max_trip: u32,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self {
            size: 120,
            loops: 0.03,
            predication: 0.15,
            dma_density: 0.08,
            max_trip: 4,
        }
    }
}

const VMEM_TILES: u64 = 64;
const HBM_BASES: [u64; 2] = [0x10_0000, 0x20_0000];
const DATA_REGS: std::ops::RangeInclusive<u8> = 13..=31;

struct Gen {
    rng: ChaCha8Rng,
    p: RandomParams,
    out: String,
    emitted: usize,
    labels: usize,
    /// Outstanding DMAs: slot and instructions left before its wait.
    outstanding: Vec<(u8, u32)>,
    loop_depth: usize,
}

impl Gen {
    fn op(&mut self, text: String) {
        self.out.push_str("    ");
        self.out.push_str(&text);
        self.out.push('\n');
        self.emitted += 1;
    }

    fn label(&mut self, prefix: &str) -> String {
        self.labels += 1;
        format!("{prefix}{}", self.labels)
    }

    fn data(&mut self) -> u8 {
        self.rng.gen_range(DATA_REGS)
    }

    fn any_s(&mut self) -> u8 {
        self.rng.gen_range(0..32)
    }

    fn base(&mut self) -> u8 {
        self.rng.gen_range(0..8)
    }

    fn v(&mut self) -> u8 {
        self.rng.gen_range(0..32)
    }

    fn guard(&mut self) -> String {
        if self.rng.gen_bool(self.p.predication) {
            format!("@p{} ", self.rng.gen_range(0..8))
        } else {
            String::new()
        }
    }

    /// One non-control, non-DMA instruction.
    fn simple(&mut self) {
        let g = self.guard();
        let text = match self.rng.gen_range(0..12) {
            0 => {
                let imm: i32 = if self.rng.gen_bool(0.8) {
                    self.rng.gen_range(-64..64)
                } else {
                    self.rng.gen()
                };
                format!("S_LDI s{}, {imm}", self.data())
            }
            1 => format!("S_ADD s{}, s{}, s{}", self.data(), self.any_s(), self.any_s()),
            2 => format!("S_MUL s{}, s{}, s{}", self.data(), self.any_s(), self.any_s()),
            3 => {
                let cond = CmpCond::ALL.choose(&mut self.rng).unwrap().suffix().to_uppercase();
                format!(
                    "S_CMP.{cond} p{}, s{}, s{}",
                    self.rng.gen_range(0..8),
                    self.any_s(),
                    self.any_s()
                )
            }
            4 => format!("S_MOV s{}, s{}", self.data(), self.any_s()),
            5 => format!(
                "S_LD s{}, [s{}+{}]",
                self.data(),
                self.base(),
                4 * self.rng.gen_range(0..256)
            ),
            6 => format!("V_ADD v{}, v{}, v{}", self.v(), self.v(), self.v()),
            7 => format!("V_MUL v{}, v{}, v{}", self.v(), self.v(), self.v()),
            8 | 9 => format!(
                "V_LOAD v{}, [s{}+{}]",
                self.v(),
                self.base(),
                64 * self.rng.gen_range(0..16)
            ),
            10 => format!(
                "V_STORE [s{}+{}], v{}",
                self.base(),
                64 * self.rng.gen_range(0..16),
                self.v()
            ),
            _ => format!("MXU_MM s{}, s{}, s{}", self.base(), self.base(), self.base()),
        };
        self.op(format!("{g}{text}"));
    }

    fn dma(&mut self) {
        let busy: Vec<u8> = self.outstanding.iter().map(|o| o.0).collect();
        let free: Vec<u8> = (0..16).filter(|s| !busy.contains(s)).collect();
        let Some(&slot) = free.choose(&mut self.rng) else {
            return;
        };
        if self.rng.gen_bool(0.3) {
            let len = if self.rng.gen_bool(0.5) {
                64 * self.rng.gen_range(1..=16)
            } else {
                self.rng.gen_range(1..=MXU_TILE_BYTES)
            };
            self.op(format!("S_LDI s12, {len}"));
        }
        let link = *Link::ALL.choose(&mut self.rng).unwrap();
        let reg = |space: MemSpace, rng: &mut ChaCha8Rng| match space {
            MemSpace::Vmem => rng.gen_range(0..8u8),
            MemSpace::Hbm => rng.gen_range(8..10u8),
        };
        let (src, dst) = (reg(link.src, &mut self.rng), reg(link.dst, &mut self.rng));
        self.op(format!("DMA_ISSUE {slot}, {link}, s{src}, s{dst}, s12"));
        let delay = self.rng.gen_range(0..16);
        self.outstanding.push((slot, delay));
    }

    fn tick(&mut self) {
        let mut due = Vec::new();
        for o in &mut self.outstanding {
            if o.1 == 0 {
                due.push(o.0);
            } else {
                o.1 -= 1;
            }
        }
        for slot in due {
            self.wait(slot);
        }
    }

    fn wait(&mut self, slot: u8) {
        self.outstanding.retain(|o| o.0 != slot);
        self.op(format!("DMA_WAIT {slot}"));
    }

    fn drain(&mut self, from: usize) {
        while self.outstanding.len() > from {
            let slot = self.outstanding[from].0;
            self.wait(slot);
        }
    }

    /// A forward skip over a few simple instructions.
    fn skip(&mut self) {
        let target = self.label("skip");
        if self.rng.gen_bool(0.7) {
            let r = self.data();
            self.op(format!("BRZ s{r}, {target}"));
        } else {
            self.op(format!("BR {target}"));
        }
        for _ in 0..self.rng.gen_range(1..=3) {
            self.simple();
        }
        self.out.push_str(&format!("{target}:\n"));
    }

    fn counted_loop(&mut self) {
        let start = self.label("loop");
        let end = self.label("end");
        let trip = self.rng.gen_range(1..=self.p.max_trip.max(1));
        let outer = self.outstanding.len();
        self.op(format!("S_LDI s10, {trip}"));
        self.out.push_str(&format!("{start}:\n"));
        self.loop_depth += 1;
        let body = self.rng.gen_range(3..=16);
        for _ in 0..body {
            self.body_step();
        }
        self.loop_depth -= 1;
        // Waits for DMAs from before the loop are deferred; the ones issued
        // inside are drained every iteration.
        let inner: Vec<u8> = self.outstanding[outer..].iter().map(|o| o.0).collect();
        for slot in inner {
            self.wait(slot);
        }
        self.op("S_ADD s10, s10, s11".into());
        self.op(format!("BRZ s10, {end}"));
        self.op(format!("BR {start}"));
        self.out.push_str(&format!("{end}:\n"));
    }

    fn body_step(&mut self) {
        let r: f64 = self.rng.gen();
        if self.loop_depth == 0 && r < self.p.loops {
            self.counted_loop();
        } else if r < self.p.loops + self.p.dma_density {
            self.dma();
        } else if r < self.p.loops + self.p.dma_density + 0.05 {
            self.skip();
        } else {
            self.simple();
        }
        // Inside a loop the body's DMAs are drained at the back edge.
        if self.loop_depth == 0 {
            self.tick();
        }
    }
}

impl RandomParams {
    pub fn source(&self, seed: u64) -> String {
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            p: *self,
            out: String::new(),
            emitted: 0,
            labels: 0,
            outstanding: Vec::new(),
            loop_depth: 0,
        };
        g.out.push_str(&format!("; random kernel, seed {seed}\n"));
        let mut tiles: Vec<u64> = (0..VMEM_TILES).collect();
        tiles.shuffle(&mut g.rng);
        for t in tiles.iter().take(6) {
            let values: Vec<String> = (0..16)
                .map(|_| format!("{:?}", g.rng.gen_range(-8..8) as f32 * 0.25))
                .collect();
            g.out.push_str(&format!(
                ".data vmem {:#x} f32 {}\n",
                t * MXU_TILE_BYTES,
                values.join(", ")
            ));
        }
        for base in HBM_BASES {
            let words: Vec<String> = (0..16).map(|_| format!("{:#x}", g.rng.gen::<u32>())).collect();
            g.out
                .push_str(&format!(".data hbm {base:#x} u32 {}\n", words.join(", ")));
        }
        for r in 0..8 {
            g.op(format!("S_LDI s{r}, {:#x}", tiles[r as usize % 8] * MXU_TILE_BYTES));
        }
        g.op(format!("S_LDI s8, {:#x}", HBM_BASES[0]));
        g.op(format!("S_LDI s9, {:#x}", HBM_BASES[1]));
        g.op("S_LDI s11, -1".into());
        g.op("S_LDI s12, 256".into());
        while g.emitted < self.size {
            g.body_step();
        }
        g.drain(0);
        g.op("HALT".into());
        g.out
    }

    pub fn kernel(&self, seed: u64) -> Kernel {
        assemble(&self.source(seed)).expect("generated random kernel assembles")
    }
}
