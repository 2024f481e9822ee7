//! The toy accelerator instruction set.
//!
//! A single in-order thread drives six functional units. Scalar registers
//! hold addresses and integers, vector registers hold one 64-byte VMEM page,
//! and predicates guard execution. Data moves between HBM and VMEM through
//! an asynchronous DMA engine driven by `DMA_ISSUE`/`DMA_WAIT`.

mod encoding;
mod io;
mod state;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoding::{decode_instruction, encode_instruction, DecodeError, ENCODED_LEN};
pub use io::{instruction_io_sets, AccessFault, AddressProblem, ArchView, IoSets};
pub use state::{DmaSlotState, DmaStatus, DmaTransfer, MachineState};

/// Version stamped into traces; bump whenever the encoding or semantics change.
pub const ISA_VERSION: u32 = 1;

pub const NUM_SREGS: u8 = 32;
pub const NUM_VREGS: u8 = 32;
pub const NUM_PREGS: u8 = 8;
pub const VECTOR_LANES: usize = 16;
/// Bytes in one vector register, which is also the size of one VMEM page.
pub const VECTOR_BYTES: u64 = 64;
pub const PAGE_BYTES: u64 = VECTOR_BYTES;
/// Edge of the square f32 tile consumed by `MXU_MM`.
pub const MXU_TILE: usize = 16;
pub const MXU_TILE_BYTES: u64 = (MXU_TILE * MXU_TILE * 4) as u64;
pub const DMA_SLOTS: u8 = 16;

pub const DEFAULT_VMEM_BYTES: u64 = 2 * 1024 * 1024;
pub const DEFAULT_HBM_BYTES: u64 = 256 * 1024 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("register index {index} out of range for class {class}")]
    RegisterIndex { class: RegClass, index: u8 },
    #[error("malformed register name `{0}`")]
    RegisterName(String),
    #[error("{opcode} expects {expected}, got {got}")]
    Arity {
        opcode: Opcode,
        expected: String,
        got: String,
    },
    #[error("{opcode} operand {position} must be a {expected} register, got {got}")]
    OperandClass {
        opcode: Opcode,
        position: usize,
        expected: RegClass,
        got: RegisterId,
    },
    #[error("guard {0} is not a predicate register")]
    GuardClass(RegisterId),
    #[error("{opcode} immediate {value} out of range: {reason}")]
    Immediate {
        opcode: Opcode,
        value: i32,
        reason: &'static str,
    },
    #[error("branch at pc {pc} targets {target}, outside 0..{len}")]
    BranchTarget { pc: usize, target: i32, len: usize },
    #[error("entry pc {entry} outside 0..{len}")]
    EntryPc { entry: usize, len: usize },
    #[error("program is empty")]
    EmptyProgram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegClass {
    Scalar,
    Vector,
    Predicate,
}

impl RegClass {
    pub fn count(self) -> u8 {
        match self {
            RegClass::Scalar => NUM_SREGS,
            RegClass::Vector => NUM_VREGS,
            RegClass::Predicate => NUM_PREGS,
        }
    }

    /// Size of one register of this class as exposed by `read_register`.
    pub fn value_bytes(self) -> usize {
        match self {
            RegClass::Scalar => 4,
            RegClass::Vector => VECTOR_BYTES as usize,
            RegClass::Predicate => 1,
        }
    }

    fn prefix(self) -> char {
        match self {
            RegClass::Scalar => 's',
            RegClass::Vector => 'v',
            RegClass::Predicate => 'p',
        }
    }
}

impl fmt::Display for RegClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegClass::Scalar => "scalar",
            RegClass::Vector => "vector",
            RegClass::Predicate => "predicate",
        })
    }
}

/// A register name such as `s3`, `v0` or `p7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegisterId {
    class: RegClass,
    index: u8,
}

impl RegisterId {
    pub fn new(class: RegClass, index: u8) -> Result<Self, IsaError> {
        if index >= class.count() {
            return Err(IsaError::RegisterIndex { class, index });
        }
        Ok(Self { class, index })
    }

    /// Scalar register `s<index>`. Panics if `index >= 32`.
    pub fn s(index: u8) -> Self {
        Self::new(RegClass::Scalar, index).expect("scalar register index")
    }

    /// Vector register `v<index>`. Panics if `index >= 32`.
    pub fn v(index: u8) -> Self {
        Self::new(RegClass::Vector, index).expect("vector register index")
    }

    /// Predicate register `p<index>`. Panics if `index >= 8`.
    pub fn p(index: u8) -> Self {
        Self::new(RegClass::Predicate, index).expect("predicate register index")
    }

    pub fn class(self) -> RegClass {
        self.class
    }

    pub fn index(self) -> u8 {
        self.index
    }

    /// Dense index over all 72 registers, handy for bitsets and arrays.
    pub fn flat(self) -> usize {
        match self.class {
            RegClass::Scalar => self.index as usize,
            RegClass::Vector => NUM_SREGS as usize + self.index as usize,
            RegClass::Predicate => (NUM_SREGS + NUM_VREGS) as usize + self.index as usize,
        }
    }

    pub const FLAT_COUNT: usize = (NUM_SREGS + NUM_VREGS + NUM_PREGS) as usize;

    pub fn all() -> impl Iterator<Item = RegisterId> {
        [RegClass::Scalar, RegClass::Vector, RegClass::Predicate]
            .into_iter()
            .flat_map(|class| (0..class.count()).map(move |index| RegisterId { class, index }))
    }
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.prefix(), self.index)
    }
}

impl FromStr for RegisterId {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || IsaError::RegisterName(s.to_string());
        let mut chars = s.chars();
        let class = match chars.next().map(|c| c.to_ascii_lowercase()) {
            Some('s') => RegClass::Scalar,
            Some('v') => RegClass::Vector,
            Some('p') => RegClass::Predicate,
            _ => return Err(bad()),
        };
        let digits = chars.as_str();
        if digits.is_empty() || digits.len() > 3 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let index: u8 = digits.parse().map_err(|_| bad())?;
        RegisterId::new(class, index)
    }
}

impl Serialize for RegisterId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegisterId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemSpace {
    Hbm,
    Vmem,
}

impl MemSpace {
    pub fn code(self) -> u8 {
        match self {
            MemSpace::Hbm => 0,
            MemSpace::Vmem => 1,
        }
    }
}

impl fmt::Display for MemSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemSpace::Hbm => "hbm",
            MemSpace::Vmem => "vmem",
        })
    }
}

/// A byte range in one memory space. Bounds against a concrete capacity are
/// checked where the capacity is known (see [`ArchView::capacity`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemRegion {
    pub space: MemSpace,
    pub offset: u64,
    pub length: u64,
}

impl MemRegion {
    pub fn new(space: MemSpace, offset: u64, length: u64) -> Self {
        debug_assert!(length > 0, "empty memory region");
        Self { space, offset, length }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.length
    }

    pub fn range(&self) -> std::ops::Range<u64> {
        self.offset..self.end()
    }

    pub fn fits(&self, capacity: u64) -> bool {
        self.length > 0 && self.offset.checked_add(self.length).is_some_and(|e| e <= capacity)
    }

    pub fn overlaps(&self, other: &MemRegion) -> bool {
        self.space == other.space && self.offset < other.end() && other.offset < self.end()
    }
}

impl fmt::Display for MemRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{:#x}+{}]", self.space, self.offset, self.length)
    }
}

/// A DMA link is a (source, destination) memory-space pair. Transfers on one
/// link are serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub src: MemSpace,
    pub dst: MemSpace,
}

impl Link {
    pub const HBM_TO_VMEM: Link = Link {
        src: MemSpace::Hbm,
        dst: MemSpace::Vmem,
    };
    pub const VMEM_TO_HBM: Link = Link {
        src: MemSpace::Vmem,
        dst: MemSpace::Hbm,
    };
    pub const HBM_TO_HBM: Link = Link {
        src: MemSpace::Hbm,
        dst: MemSpace::Hbm,
    };
    pub const VMEM_TO_VMEM: Link = Link {
        src: MemSpace::Vmem,
        dst: MemSpace::Vmem,
    };

    pub const ALL: [Link; 4] = [
        Link::HBM_TO_VMEM,
        Link::VMEM_TO_HBM,
        Link::HBM_TO_HBM,
        Link::VMEM_TO_VMEM,
    ];

    /// Immediate encoding used by `DMA_ISSUE`.
    pub fn code(self) -> i32 {
        (self.src.code() as i32) * 2 + self.dst.code() as i32
    }

    pub fn from_code(code: i32) -> Option<Link> {
        let space = |c| match c {
            0 => MemSpace::Hbm,
            _ => MemSpace::Vmem,
        };
        (0..4).contains(&code).then(|| Link {
            src: space(code / 2),
            dst: space(code % 2),
        })
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

impl FromStr for Link {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase();
        Link::ALL
            .into_iter()
            .find(|l| l.to_string() == s)
            .ok_or_else(|| format!("unknown DMA link `{s}` (expected e.g. hbm->vmem)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Unit {
    Salu,
    Valu,
    Mxu,
    Lsu,
    Dma,
    Ctrl,
}

impl Unit {
    pub const ALL: [Unit; 6] = [Unit::Salu, Unit::Valu, Unit::Mxu, Unit::Lsu, Unit::Dma, Unit::Ctrl];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Unit::Salu => "salu",
            Unit::Valu => "valu",
            Unit::Mxu => "mxu",
            Unit::Lsu => "lsu",
            Unit::Dma => "dma",
            Unit::Ctrl => "ctrl",
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Comparison condition carried as the `S_CMP` immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpCond {
    Eq = 0,
    Ne = 1,
    Lt = 2,
    Ge = 3,
}

impl CmpCond {
    pub const ALL: [CmpCond; 4] = [CmpCond::Eq, CmpCond::Ne, CmpCond::Lt, CmpCond::Ge];

    pub fn from_imm(imm: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| *c as i32 == imm)
    }

    /// Signed comparison of two scalar register values.
    pub fn eval(self, a: u32, b: u32) -> bool {
        let (a, b) = (a as i32, b as i32);
        match self {
            CmpCond::Eq => a == b,
            CmpCond::Ne => a != b,
            CmpCond::Lt => a < b,
            CmpCond::Ge => a >= b,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            CmpCond::Eq => "eq",
            CmpCond::Ne => "ne",
            CmpCond::Lt => "lt",
            CmpCond::Ge => "ge",
        }
    }
}

macro_rules! opcodes {
    ($($name:ident = $byte:literal, $mnemonic:literal, $unit:ident;)*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum Opcode {
            $(
                #[serde(rename = $mnemonic)]
                $name,
            )*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$name),*];

            pub fn byte(self) -> u8 {
                match self { $(Opcode::$name => $byte),* }
            }

            pub fn from_byte(byte: u8) -> Option<Opcode> {
                match byte { $($byte => Some(Opcode::$name),)* _ => None }
            }

            pub fn mnemonic(self) -> &'static str {
                match self { $(Opcode::$name => $mnemonic),* }
            }

            /// The functional unit executing this opcode.
            pub fn unit(self) -> Unit {
                match self { $(Opcode::$name => Unit::$unit),* }
            }
        }

        impl FromStr for Opcode {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                let upper = s.to_ascii_uppercase();
                match upper.as_str() { $($mnemonic => Ok(Opcode::$name),)* _ => Err(()) }
            }
        }
    };
}

opcodes! {
    SLdi = 0x01, "S_LDI", Salu;
    SAdd = 0x02, "S_ADD", Salu;
    SMul = 0x03, "S_MUL", Salu;
    SCmp = 0x04, "S_CMP", Salu;
    SMov = 0x05, "S_MOV", Salu;
    SLd = 0x06, "S_LD", Lsu;
    VAdd = 0x10, "V_ADD", Valu;
    VMul = 0x11, "V_MUL", Valu;
    VLoad = 0x20, "V_LOAD", Lsu;
    VStore = 0x21, "V_STORE", Lsu;
    MxuMm = 0x30, "MXU_MM", Mxu;
    DmaIssue = 0x40, "DMA_ISSUE", Dma;
    DmaWait = 0x41, "DMA_WAIT", Dma;
    Br = 0x50, "BR", Ctrl;
    Brz = 0x51, "BRZ", Ctrl;
    Halt = 0x5f, "HALT", Ctrl;
}

/// Operand shape of an opcode: register classes of destinations and sources
/// and the number of immediates.
pub struct Signature {
    pub dst: &'static [RegClass],
    pub src: &'static [RegClass],
    pub imms: usize,
}

impl Opcode {
    pub fn signature(self) -> Signature {
        use RegClass::{Predicate as P, Scalar as S, Vector as V};
        let (dst, src, imms): (&'static [RegClass], &'static [RegClass], usize) = match self {
            Opcode::SLdi => (&[S], &[], 1),
            Opcode::SAdd | Opcode::SMul => (&[S], &[S, S], 0),
            Opcode::SCmp => (&[P], &[S, S], 1),
            Opcode::SMov => (&[S], &[S], 0),
            Opcode::SLd => (&[S], &[S], 1),
            Opcode::VAdd | Opcode::VMul => (&[V], &[V, V], 0),
            Opcode::VLoad => (&[V], &[S], 1),
            Opcode::VStore => (&[], &[S, V], 1),
            Opcode::MxuMm => (&[], &[S, S, S], 0),
            Opcode::DmaIssue => (&[], &[S, S, S], 2),
            Opcode::DmaWait => (&[], &[], 1),
            Opcode::Br => (&[], &[], 1),
            Opcode::Brz => (&[], &[S], 1),
            Opcode::Halt => (&[], &[], 0),
        };
        Signature { dst, src, imms }
    }

    pub fn is_branch(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Brz)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// One decoded instruction. Construction validates operand classes and
/// immediate ranges, so every value of this type encodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawInstruction")]
pub struct Instruction {
    opcode: Opcode,
    unit: Unit,
    dst_regs: Vec<RegisterId>,
    src_regs: Vec<RegisterId>,
    immediates: Vec<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    predicate: Option<RegisterId>,
}

#[derive(Deserialize)]
struct RawInstruction {
    opcode: Opcode,
    #[serde(default)]
    dst_regs: Vec<RegisterId>,
    #[serde(default)]
    src_regs: Vec<RegisterId>,
    #[serde(default)]
    immediates: Vec<i32>,
    #[serde(default)]
    predicate: Option<RegisterId>,
}

impl TryFrom<RawInstruction> for Instruction {
    type Error = IsaError;

    fn try_from(raw: RawInstruction) -> Result<Self, IsaError> {
        Instruction::new(raw.opcode, raw.dst_regs, raw.src_regs, raw.immediates)?.with_predicate(raw.predicate)
    }
}

impl Instruction {
    pub fn new(
        opcode: Opcode,
        dst_regs: Vec<RegisterId>,
        src_regs: Vec<RegisterId>,
        immediates: Vec<i32>,
    ) -> Result<Self, IsaError> {
        let sig = opcode.signature();
        if dst_regs.len() != sig.dst.len() || src_regs.len() != sig.src.len() || immediates.len() != sig.imms {
            return Err(IsaError::Arity {
                opcode,
                expected: format!("{} dst, {} src, {} imm", sig.dst.len(), sig.src.len(), sig.imms),
                got: format!(
                    "{} dst, {} src, {} imm",
                    dst_regs.len(),
                    src_regs.len(),
                    immediates.len()
                ),
            });
        }
        for (position, (reg, class)) in dst_regs
            .iter()
            .chain(&src_regs)
            .zip(sig.dst.iter().chain(sig.src))
            .enumerate()
        {
            if reg.class() != *class {
                return Err(IsaError::OperandClass {
                    opcode,
                    position,
                    expected: *class,
                    got: *reg,
                });
            }
        }
        let imm_err = |value, reason| IsaError::Immediate { opcode, value, reason };
        match opcode {
            Opcode::SCmp if CmpCond::from_imm(immediates[0]).is_none() => {
                return Err(imm_err(immediates[0], "condition must be 0..=3"));
            }
            Opcode::DmaIssue | Opcode::DmaWait if !(0..DMA_SLOTS as i32).contains(&immediates[0]) => {
                return Err(imm_err(immediates[0], "DMA slot must be in 0..16"));
            }
            Opcode::DmaIssue if Link::from_code(immediates[1]).is_none() => {
                return Err(imm_err(immediates[1], "link code must be 0..=3"));
            }
            Opcode::Br | Opcode::Brz if immediates[0] < 0 => {
                return Err(imm_err(immediates[0], "branch target must be non-negative"));
            }
            _ => {}
        }
        Ok(Self {
            opcode,
            unit: opcode.unit(),
            dst_regs,
            src_regs,
            immediates,
            predicate: None,
        })
    }

    pub fn with_predicate(mut self, predicate: Option<RegisterId>) -> Result<Self, IsaError> {
        if let Some(p) = predicate {
            if p.class() != RegClass::Predicate {
                return Err(IsaError::GuardClass(p));
            }
        }
        self.predicate = predicate;
        Ok(self)
    }

    /// Builder used by tests and kernel generators; operand classes are
    /// fixed by the helper so it cannot fail except on a bad predicate.
    pub fn guarded(self, p: u8) -> Self {
        self.with_predicate(Some(RegisterId::p(p))).expect("predicate register")
    }

    pub fn opcode(&self) -> Opcode {
        self.opcode
    }
    pub fn unit(&self) -> Unit {
        self.unit
    }
    pub fn dst_regs(&self) -> &[RegisterId] {
        &self.dst_regs
    }
    pub fn src_regs(&self) -> &[RegisterId] {
        &self.src_regs
    }
    pub fn immediates(&self) -> &[i32] {
        &self.immediates
    }
    pub fn predicate(&self) -> Option<RegisterId> {
        self.predicate
    }

    /// DMA slot for `DMA_ISSUE`/`DMA_WAIT`.
    pub fn dma_slot(&self) -> Option<u8> {
        matches!(self.opcode, Opcode::DmaIssue | Opcode::DmaWait).then(|| self.immediates[0] as u8)
    }

    pub fn dma_link(&self) -> Option<Link> {
        (self.opcode == Opcode::DmaIssue)
            .then(|| Link::from_code(self.immediates[1]))
            .flatten()
    }

    pub fn branch_target(&self) -> Option<usize> {
        self.opcode.is_branch().then(|| self.immediates[0] as usize)
    }

    fn build(opcode: Opcode, dst: &[RegisterId], src: &[RegisterId], imms: &[i32]) -> Self {
        Self::new(opcode, dst.to_vec(), src.to_vec(), imms.to_vec())
            .unwrap_or_else(|e| panic!("invalid instruction: {e}"))
    }

    pub fn s_ldi(d: u8, imm: i32) -> Self {
        Self::build(Opcode::SLdi, &[RegisterId::s(d)], &[], &[imm])
    }
    pub fn s_add(d: u8, a: u8, b: u8) -> Self {
        Self::build(
            Opcode::SAdd,
            &[RegisterId::s(d)],
            &[RegisterId::s(a), RegisterId::s(b)],
            &[],
        )
    }
    pub fn s_mul(d: u8, a: u8, b: u8) -> Self {
        Self::build(
            Opcode::SMul,
            &[RegisterId::s(d)],
            &[RegisterId::s(a), RegisterId::s(b)],
            &[],
        )
    }
    pub fn s_cmp(p: u8, a: u8, b: u8, cond: CmpCond) -> Self {
        Self::build(
            Opcode::SCmp,
            &[RegisterId::p(p)],
            &[RegisterId::s(a), RegisterId::s(b)],
            &[cond as i32],
        )
    }
    pub fn s_mov(d: u8, a: u8) -> Self {
        Self::build(Opcode::SMov, &[RegisterId::s(d)], &[RegisterId::s(a)], &[])
    }
    pub fn s_ld(d: u8, addr: u8, offset: i32) -> Self {
        Self::build(Opcode::SLd, &[RegisterId::s(d)], &[RegisterId::s(addr)], &[offset])
    }
    pub fn v_add(d: u8, a: u8, b: u8) -> Self {
        Self::build(
            Opcode::VAdd,
            &[RegisterId::v(d)],
            &[RegisterId::v(a), RegisterId::v(b)],
            &[],
        )
    }
    pub fn v_mul(d: u8, a: u8, b: u8) -> Self {
        Self::build(
            Opcode::VMul,
            &[RegisterId::v(d)],
            &[RegisterId::v(a), RegisterId::v(b)],
            &[],
        )
    }
    pub fn v_load(d: u8, addr: u8, offset: i32) -> Self {
        Self::build(Opcode::VLoad, &[RegisterId::v(d)], &[RegisterId::s(addr)], &[offset])
    }
    pub fn v_store(addr: u8, v: u8, offset: i32) -> Self {
        Self::build(Opcode::VStore, &[], &[RegisterId::s(addr), RegisterId::v(v)], &[offset])
    }
    pub fn mxu_mm(dst: u8, a: u8, b: u8) -> Self {
        Self::build(
            Opcode::MxuMm,
            &[],
            &[RegisterId::s(dst), RegisterId::s(a), RegisterId::s(b)],
            &[],
        )
    }
    pub fn dma_issue(slot: u8, link: Link, src: u8, dst: u8, len: u8) -> Self {
        Self::build(
            Opcode::DmaIssue,
            &[],
            &[RegisterId::s(src), RegisterId::s(dst), RegisterId::s(len)],
            &[slot as i32, link.code()],
        )
    }
    pub fn dma_wait(slot: u8) -> Self {
        Self::build(Opcode::DmaWait, &[], &[], &[slot as i32])
    }
    pub fn br(target: u32) -> Self {
        Self::build(Opcode::Br, &[], &[], &[target as i32])
    }
    pub fn brz(reg: u8, target: u32) -> Self {
        Self::build(Opcode::Brz, &[], &[RegisterId::s(reg)], &[target as i32])
    }
    pub fn halt() -> Self {
        Self::build(Opcode::Halt, &[], &[], &[])
    }
}

impl fmt::Display for Instruction {
    /// Assembly syntax, as accepted by the assembler.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = self.predicate {
            write!(f, "@{p} ")?;
        }
        let r = |i: usize| self.src_regs[i];
        let imm = |i: usize| self.immediates[i];
        let off = |o: i32| {
            if o == 0 {
                String::new()
            } else if o > 0 {
                format!("+{o}")
            } else {
                format!("{o}")
            }
        };
        match self.opcode {
            Opcode::SLdi => write!(f, "S_LDI {}, {}", self.dst_regs[0], imm(0)),
            Opcode::SAdd | Opcode::SMul | Opcode::VAdd | Opcode::VMul => {
                write!(f, "{} {}, {}, {}", self.opcode, self.dst_regs[0], r(0), r(1))
            }
            Opcode::SCmp => {
                let cond = CmpCond::from_imm(imm(0)).expect("validated condition");
                write!(
                    f,
                    "S_CMP.{} {}, {}, {}",
                    cond.suffix().to_uppercase(),
                    self.dst_regs[0],
                    r(0),
                    r(1)
                )
            }
            Opcode::SMov => write!(f, "S_MOV {}, {}", self.dst_regs[0], r(0)),
            Opcode::SLd | Opcode::VLoad => {
                write!(f, "{} {}, [{}{}]", self.opcode, self.dst_regs[0], r(0), off(imm(0)))
            }
            Opcode::VStore => write!(f, "V_STORE [{}{}], {}", r(0), off(imm(0)), r(1)),
            Opcode::MxuMm => write!(f, "MXU_MM {}, {}, {}", r(0), r(1), r(2)),
            Opcode::DmaIssue => write!(
                f,
                "DMA_ISSUE {}, {}, {}, {}, {}",
                imm(0),
                Link::from_code(imm(1)).expect("validated link"),
                r(0),
                r(1),
                r(2)
            ),
            Opcode::DmaWait => write!(f, "DMA_WAIT {}", imm(0)),
            Opcode::Br => write!(f, "BR {}", imm(0)),
            Opcode::Brz => write!(f, "BRZ {}, {}", r(0), imm(0)),
            Opcode::Halt => f.write_str("HALT"),
        }
    }
}

/// An ordered instruction stream with an entry point. Branch targets are
/// checked against the program length on construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    instructions: Vec<Instruction>,
    entry_pc: usize,
}

impl Program {
    pub fn new(instructions: Vec<Instruction>, entry_pc: usize) -> Result<Self, IsaError> {
        let len = instructions.len();
        if len == 0 {
            return Err(IsaError::EmptyProgram);
        }
        if entry_pc >= len {
            return Err(IsaError::EntryPc { entry: entry_pc, len });
        }
        for (pc, instr) in instructions.iter().enumerate() {
            if let Some(target) = instr.branch_target() {
                if target >= len {
                    return Err(IsaError::BranchTarget {
                        pc,
                        target: target as i32,
                        len,
                    });
                }
            }
        }
        Ok(Self { instructions, entry_pc })
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn entry_pc(&self) -> usize {
        self.entry_pc
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn get(&self, pc: usize) -> Option<&Instruction> {
        self.instructions.get(pc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_names_round_trip() {
        for r in RegisterId::all() {
            assert_eq!(r.to_string().parse::<RegisterId>().unwrap(), r);
        }
        assert!("s32".parse::<RegisterId>().is_err());
        assert!("p8".parse::<RegisterId>().is_err());
        assert!("x1".parse::<RegisterId>().is_err());
        assert!("s".parse::<RegisterId>().is_err());
    }

    #[test]
    fn unit_follows_opcode() {
        for &op in Opcode::ALL {
            assert_eq!(Opcode::from_byte(op.byte()), Some(op));
            assert_eq!(op.mnemonic().parse::<Opcode>(), Ok(op));
        }
        assert_eq!(Instruction::mxu_mm(1, 2, 3).unit(), Unit::Mxu);
        assert_eq!(Instruction::dma_wait(0).unit(), Unit::Dma);
    }

    #[test]
    fn construction_rejects_bad_operands() {
        let wrong_class = Instruction::new(
            Opcode::SAdd,
            vec![RegisterId::v(0)],
            vec![RegisterId::s(0), RegisterId::s(1)],
            vec![],
        );
        assert!(matches!(wrong_class, Err(IsaError::OperandClass { .. })));
        let slot = Instruction::new(Opcode::DmaWait, vec![], vec![], vec![16]);
        assert!(matches!(slot, Err(IsaError::Immediate { .. })));
        let guard = Instruction::s_ldi(0, 1).with_predicate(Some(RegisterId::s(1)));
        assert!(matches!(guard, Err(IsaError::GuardClass(_))));
    }

    #[test]
    fn program_checks_branch_targets() {
        let bad = Program::new(vec![Instruction::br(5), Instruction::halt()], 0);
        assert!(matches!(bad, Err(IsaError::BranchTarget { .. })));
        assert!(Program::new(vec![Instruction::br(1), Instruction::halt()], 0).is_ok());
        assert!(matches!(Program::new(vec![], 0), Err(IsaError::EmptyProgram)));
    }

    #[test]
    fn link_codes() {
        for link in Link::ALL {
            assert_eq!(Link::from_code(link.code()), Some(link));
            assert_eq!(link.to_string().parse::<Link>().unwrap(), link);
        }
        assert_eq!(Link::from_code(4), None);
    }

    #[test]
    fn json_rendering_validates_on_the_way_in() {
        let i = Instruction::dma_issue(3, Link::HBM_TO_VMEM, 1, 2, 3);
        let json = serde_json::to_string(&i).unwrap();
        assert!(json.contains("\"DMA_ISSUE\""));
        let back: Instruction = serde_json::from_str(&json).unwrap();
        assert_eq!(back, i);
        let bad = json.replace("[3,1]", "[99,1]");
        assert_ne!(bad, json);
        assert!(serde_json::from_str::<Instruction>(&bad).is_err());
    }
}
