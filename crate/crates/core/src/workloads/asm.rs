//! Assembler and disassembler for the kernel dialect.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{CmpCond, Instruction, Link, MemSpace, Opcode, Program, RegClass, RegisterId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct AsmError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Bytes placed in memory before the kernel starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataInit {
    pub space: MemSpace,
    pub offset: u64,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

/// A `;; hlo: name` region: instructions `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLabel {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

/// An assembled kernel: the program, its initial memory image, labels and
/// region annotations. Serialized as JSON in `.xprog` files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kernel {
    pub program: Program,
    #[serde(default)]
    pub data: Vec<DataInit>,
    #[serde(default)]
    pub labels: BTreeMap<String, usize>,
    #[serde(default)]
    pub regions: Vec<RegionLabel>,
}

mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        STANDARD.decode(text).map_err(serde::de::Error::custom)
    }
}

impl Kernel {
    pub fn label(&self, name: &str) -> Option<usize> {
        self.labels.get(name).copied()
    }

    /// Name of the region containing `pc`, if any.
    pub fn region_at(&self, pc: usize) -> Option<&str> {
        self.regions
            .iter()
            .find(|r| (r.start..r.end).contains(&pc))
            .map(|r| r.name.as_str())
    }

    /// Region name for every pc, for attaching to analysis reports.
    pub fn region_map(&self) -> Vec<Option<String>> {
        (0..self.program.len())
            .map(|pc| self.region_at(pc).map(str::to_string))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("kernel serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Operand {
    Reg(RegisterId),
    Int(i64),
    Link(Link),
    Addr(RegisterId, i64),
    Label(String),
}

impl Operand {
    fn describe(&self) -> &'static str {
        match self {
            Operand::Reg(_) => "a register",
            Operand::Int(_) => "an integer",
            Operand::Link(_) => "a link",
            Operand::Addr(..) => "an address",
            Operand::Label(_) => "a label",
        }
    }
}

struct Tok {
    op: Operand,
    column: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> AsmError {
    AsmError {
        line,
        column,
        message: message.into(),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let value = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(&hex.replace('_', ""), 16).ok()?
    } else if let Some(bin) = body.strip_prefix("0b") {
        i64::from_str_radix(&bin.replace('_', ""), 2).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit() || b == b'_') {
            return None;
        }
        body.replace('_', "").parse().ok()?
    };
    Some(if neg { -value } else { value })
}

fn parse_reg(s: &str) -> Option<RegisterId> {
    s.to_ascii_lowercase().parse().ok()
}

fn looks_like_reg(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    let mut chars = lower.chars();
    matches!(chars.next(), Some('s' | 'v' | 'p')) && {
        let rest: String = chars.collect();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit())
    }
}

fn parse_space(s: &str) -> Option<MemSpace> {
    match s.to_ascii_lowercase().as_str() {
        "hbm" => Some(MemSpace::Hbm),
        "vmem" => Some(MemSpace::Vmem),
        _ => None,
    }
}

fn parse_operand(text: &str, line: usize, column: usize) -> Result<Operand, AsmError> {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix('[') {
        let inner = inner
            .strip_suffix(']')
            .ok_or_else(|| err(line, column, "unterminated address, expected `]`"))?
            .trim();
        let split = inner.find(['+', '-']).unwrap_or(inner.len());
        let (base, off) = inner.split_at(split);
        let base = base.trim();
        let reg = parse_reg(base)
            .ok_or_else(|| err(line, column + 1, format!("expected a base register, found `{base}`")))?;
        if reg.class() != RegClass::Scalar {
            return Err(err(
                line,
                column + 1,
                format!("address base must be a scalar register, found {reg}"),
            ));
        }
        let off = off.replace(' ', "");
        let offset = if off.is_empty() {
            0
        } else {
            parse_int(&off).ok_or_else(|| err(line, column, format!("bad address offset `{off}`")))?
        };
        return Ok(Operand::Addr(reg, offset));
    }
    if t.contains("->") {
        return t
            .parse::<Link>()
            .map(Operand::Link)
            .map_err(|_| err(line, column, format!("unknown link `{t}`, expected e.g. hbm->vmem")));
    }
    if looks_like_reg(t) {
        return parse_reg(t)
            .map(Operand::Reg)
            .ok_or_else(|| err(line, column, format!("register `{t}` out of range")));
    }
    if let Some(v) = parse_int(t) {
        return Ok(Operand::Int(v));
    }
    if is_ident(t) {
        return Ok(Operand::Label(t.to_string()));
    }
    Err(err(line, column, format!("cannot parse operand `{t}`")))
}

/// Splits on top-level commas, returning each piece with its 1-based column.
fn split_operands(text: &str, base_column: usize) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push((start, i));
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push((start, text.len()));
    out.into_iter()
        .filter_map(|(s, e)| {
            let piece = &text[s..e];
            let lead = piece.len() - piece.trim_start().len();
            let trimmed = piece.trim();
            (!trimmed.is_empty()).then(|| (trimmed.to_string(), base_column + s + lead))
        })
        .collect()
}

struct Pending {
    line: usize,
    column: usize,
    opcode: Opcode,
    cond: Option<CmpCond>,
    predicate: Option<RegisterId>,
    operands: Vec<Tok>,
}

/// Assembles kernel source text.
pub fn assemble(source: &str) -> Result<Kernel, AsmError> {
    let mut pending: Vec<Pending> = Vec::new();
    let mut labels: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    let mut data = Vec::new();
    let mut regions: Vec<RegionLabel> = Vec::new();
    let mut entry: Option<(Operand, usize, usize)> = None;

    for (n, raw) in source.lines().enumerate() {
        let line = n + 1;
        let trimmed = raw.trim_start();
        if let Some(rest) = trimmed.strip_prefix(";;") {
            if let Some(name) = rest.trim().strip_prefix("hlo:") {
                let name = name.trim();
                if name.is_empty() {
                    return Err(err(line, raw.len() - trimmed.len() + 1, "empty region name"));
                }
                if let Some(open) = regions.last_mut() {
                    open.end = pending.len();
                }
                regions.push(RegionLabel {
                    name: name.to_string(),
                    start: pending.len(),
                    end: usize::MAX,
                });
            }
            continue;
        }
        let code = raw.split(';').next().unwrap_or("");
        let mut rest = code;
        let mut col = 1;
        // Labels: `name:` prefixes.
        loop {
            let lead = rest.len() - rest.trim_start().len();
            let t = rest.trim_start();
            let Some(colon) = t.find(':') else { break };
            let name = &t[..colon];
            if !is_ident(name) {
                break;
            }
            if looks_like_reg(name) || name.parse::<Opcode>().is_ok() {
                return Err(err(
                    line,
                    col + lead,
                    format!("`{name}` is reserved and cannot be a label"),
                ));
            }
            if labels.contains_key(name) {
                return Err(err(line, col + lead, format!("duplicate label `{name}`")));
            }
            labels.insert(name.to_string(), (pending.len(), line, col + lead));
            col += lead + colon + 1;
            rest = &t[colon + 1..];
        }
        let lead = rest.len() - rest.trim_start().len();
        col += lead;
        let stmt = rest.trim();
        if stmt.is_empty() {
            continue;
        }
        if stmt.starts_with('.') {
            parse_directive(stmt, line, col, &mut data, &mut entry)?;
            continue;
        }
        let mut stmt_col = col;
        let mut stmt = stmt;
        let mut predicate = None;
        if let Some(g) = stmt.strip_prefix('@') {
            let end = g.find(char::is_whitespace).unwrap_or(g.len());
            let name = &g[..end];
            let reg = parse_reg(name)
                .filter(|r| r.class() == RegClass::Predicate)
                .ok_or_else(|| {
                    err(
                        line,
                        stmt_col + 1,
                        format!("guard must be a predicate register, found `{name}`"),
                    )
                })?;
            predicate = Some(reg);
            let after = &g[end..];
            stmt_col += 1 + end + (after.len() - after.trim_start().len());
            stmt = after.trim_start();
            if stmt.is_empty() {
                return Err(err(line, stmt_col, "guard without an instruction"));
            }
        }
        let mn_end = stmt.find(char::is_whitespace).unwrap_or(stmt.len());
        let mnemonic = &stmt[..mn_end];
        let (base, suffix) = match mnemonic.split_once('.') {
            Some((b, s)) => (b, Some(s)),
            None => (mnemonic, None),
        };
        let opcode: Opcode = base
            .parse()
            .map_err(|_| err(line, stmt_col, format!("unknown mnemonic `{mnemonic}`")))?;
        let cond = match (opcode, suffix) {
            (Opcode::SCmp, Some(s)) => Some(
                CmpCond::ALL
                    .into_iter()
                    .find(|c| c.suffix().eq_ignore_ascii_case(s))
                    .ok_or_else(|| {
                        err(
                            line,
                            stmt_col,
                            format!("unknown comparison `.{s}`, expected EQ, NE, LT or GE"),
                        )
                    })?,
            ),
            (Opcode::SCmp, None) => return Err(err(line, stmt_col, "S_CMP needs a condition suffix, e.g. S_CMP.LT")),
            (_, Some(_)) => return Err(err(line, stmt_col, format!("unknown mnemonic `{mnemonic}`"))),
            (_, None) => None,
        };
        let ops_text = &stmt[mn_end..];
        let operands = split_operands(ops_text, stmt_col + mn_end)
            .into_iter()
            .map(|(t, c)| parse_operand(&t, line, c).map(|op| Tok { op, column: c }))
            .collect::<Result<Vec<_>, _>>()?;
        pending.push(Pending {
            line,
            column: stmt_col,
            opcode,
            cond,
            predicate,
            operands,
        });
    }

    if pending.is_empty() {
        return Err(err(1, 1, "kernel has no instructions"));
    }
    let len = pending.len();
    for (name, &(pc, line, col)) in &labels {
        if pc >= len {
            return Err(err(
                line,
                col,
                format!("label `{name}` does not precede an instruction"),
            ));
        }
    }
    if let Some(open) = regions.last_mut() {
        open.end = len;
    }
    regions.retain(|r| r.start < r.end);

    let resolve = |tok: &Tok, line: usize| -> Result<usize, AsmError> {
        match &tok.op {
            Operand::Int(v) if (0..len as i64).contains(v) => Ok(*v as usize),
            Operand::Int(v) => Err(err(
                line,
                tok.column,
                format!("target {v} is outside the {len}-instruction program"),
            )),
            Operand::Label(name) => labels
                .get(name)
                .map(|&(pc, ..)| pc)
                .ok_or_else(|| err(line, tok.column, format!("undefined label `{name}`"))),
            other => Err(err(
                line,
                tok.column,
                format!("expected a label or pc, found {}", other.describe()),
            )),
        }
    };

    let mut instructions = Vec::with_capacity(len);
    for p in &pending {
        instructions.push(build(p, &resolve)?);
    }
    let entry_pc = match entry {
        None => 0,
        Some((op, line, column)) => resolve(&Tok { op, column }, line)?,
    };
    let program = Program::new(instructions, entry_pc).map_err(|e| err(1, 1, e.to_string()))?;
    Ok(Kernel {
        program,
        data,
        labels: labels.into_iter().map(|(k, (pc, ..))| (k, pc)).collect(),
        regions,
    })
}

fn parse_directive(
    stmt: &str,
    line: usize,
    col: usize,
    data: &mut Vec<DataInit>,
    entry: &mut Option<(Operand, usize, usize)>,
) -> Result<(), AsmError> {
    let mut words = stmt.splitn(2, char::is_whitespace);
    let name = words.next().unwrap_or("");
    let args = words.next().unwrap_or("").trim();
    let args_col = col + stmt.len() - args.len();
    match name {
        ".entry" => {
            let op = parse_operand(args, line, args_col)?;
            *entry = Some((op, line, args_col));
            Ok(())
        }
        ".data" | ".fill" => {
            // `.data <space> <addr> <type> v, ...` or `.fill <space> <addr> <len> <byte>`
            let mut head = args.split_whitespace();
            let space_word = head
                .next()
                .ok_or_else(|| err(line, args_col, "expected a memory space"))?;
            let space = parse_space(space_word)
                .ok_or_else(|| err(line, args_col, format!("unknown memory space `{space_word}`")))?;
            let addr_word = head.next().ok_or_else(|| err(line, args_col, "expected an address"))?;
            let offset = parse_int(addr_word)
                .filter(|v| *v >= 0)
                .ok_or_else(|| err(line, args_col, format!("bad address `{addr_word}`")))?
                as u64;
            let third = head.next().ok_or_else(|| err(line, args_col, "missing operand"))?;
            let bytes = if name == ".fill" {
                let count = parse_int(third)
                    .filter(|v| *v > 0)
                    .ok_or_else(|| err(line, args_col, format!("bad fill length `{third}`")))?;
                let fourth = head.next().unwrap_or("0");
                let byte = parse_int(fourth)
                    .filter(|v| (0..=255).contains(v))
                    .ok_or_else(|| err(line, args_col, format!("fill value `{fourth}` is not a byte")))?;
                vec![byte as u8; count as usize]
            } else {
                let ty = third;
                let values_start = args.find(ty).map(|i| i + ty.len()).unwrap_or(args.len());
                let mut bytes = Vec::new();
                for (v, c) in split_operands(&args[values_start..], args_col + values_start) {
                    match ty {
                        "u32" | "i32" => {
                            let x = parse_int(&v)
                                .filter(|x| (i32::MIN as i64..=u32::MAX as i64).contains(x))
                                .ok_or_else(|| err(line, c, format!("`{v}` is not a 32-bit integer")))?;
                            bytes.extend_from_slice(&(x as u32).to_le_bytes());
                        }
                        "u8" => {
                            let x = parse_int(&v)
                                .filter(|x| (0..=255).contains(x))
                                .ok_or_else(|| err(line, c, format!("`{v}` is not a byte")))?;
                            bytes.push(x as u8);
                        }
                        "f32" => {
                            let x: f32 = v.parse().map_err(|_| err(line, c, format!("`{v}` is not a float")))?;
                            bytes.extend_from_slice(&x.to_le_bytes());
                        }
                        other => {
                            return Err(err(
                                line,
                                args_col,
                                format!("unknown data type `{other}`, expected u8, u32, i32 or f32"),
                            ))
                        }
                    }
                }
                if bytes.is_empty() {
                    return Err(err(line, args_col, "data directive without values"));
                }
                bytes
            };
            data.push(DataInit { space, offset, bytes });
            Ok(())
        }
        other => Err(err(line, col, format!("unknown directive `{other}`"))),
    }
}

fn build(p: &Pending, resolve: &dyn Fn(&Tok, usize) -> Result<usize, AsmError>) -> Result<Instruction, AsmError> {
    use Opcode::*;
    let line = p.line;
    let ops = &p.operands;
    let want = |n: usize, shape: &str| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(err(
                line,
                p.column,
                format!("{} expects {shape}, got {} operand(s)", p.opcode, ops.len()),
            ))
        }
    };
    let reg = |i: usize, class: RegClass| -> Result<u8, AsmError> {
        match &ops[i].op {
            Operand::Reg(r) if r.class() == class => Ok(r.index()),
            Operand::Reg(r) => Err(err(
                line,
                ops[i].column,
                format!("expected a {class} register, found {r}"),
            )),
            other => Err(err(
                line,
                ops[i].column,
                format!("expected a {class} register, found {}", other.describe()),
            )),
        }
    };
    let int = |i: usize, lo: i64, hi: i64| -> Result<i32, AsmError> {
        match &ops[i].op {
            Operand::Int(v) if (lo..=hi).contains(v) => Ok(*v as i32),
            Operand::Int(v) => Err(err(
                line,
                ops[i].column,
                format!("immediate {v} out of range [{lo}, {hi}]"),
            )),
            other => Err(err(
                line,
                ops[i].column,
                format!("expected an integer, found {}", other.describe()),
            )),
        }
    };
    let addr = |i: usize| -> Result<(u8, i32), AsmError> {
        match &ops[i].op {
            Operand::Addr(r, off) if (i32::MIN as i64..=i32::MAX as i64).contains(off) => Ok((r.index(), *off as i32)),
            Operand::Addr(..) => Err(err(line, ops[i].column, "address offset out of range")),
            other => Err(err(
                line,
                ops[i].column,
                format!("expected an address like [s1+64], found {}", other.describe()),
            )),
        }
    };
    use RegClass::{Predicate as P, Scalar as S, Vector as V};
    let instr = match p.opcode {
        SLdi => {
            want(2, "`sD, imm`")?;
            Instruction::s_ldi(reg(0, S)?, int(1, i32::MIN as i64, u32::MAX as i64)?)
        }
        SAdd | SMul => {
            want(3, "`sD, sA, sB`")?;
            let (d, a, b) = (reg(0, S)?, reg(1, S)?, reg(2, S)?);
            if p.opcode == SAdd {
                Instruction::s_add(d, a, b)
            } else {
                Instruction::s_mul(d, a, b)
            }
        }
        SCmp => {
            want(3, "`pD, sA, sB`")?;
            Instruction::s_cmp(reg(0, P)?, reg(1, S)?, reg(2, S)?, p.cond.expect("parsed condition"))
        }
        SMov => {
            want(2, "`sD, sA`")?;
            Instruction::s_mov(reg(0, S)?, reg(1, S)?)
        }
        SLd => {
            want(2, "`sD, [sA+off]`")?;
            let (a, off) = addr(1)?;
            Instruction::s_ld(reg(0, S)?, a, off)
        }
        VAdd | VMul => {
            want(3, "`vD, vA, vB`")?;
            let (d, a, b) = (reg(0, V)?, reg(1, V)?, reg(2, V)?);
            if p.opcode == VAdd {
                Instruction::v_add(d, a, b)
            } else {
                Instruction::v_mul(d, a, b)
            }
        }
        VLoad => {
            want(2, "`vD, [sA+off]`")?;
            let (a, off) = addr(1)?;
            Instruction::v_load(reg(0, V)?, a, off)
        }
        VStore => {
            want(2, "`[sA+off], vS`")?;
            let (a, off) = addr(0)?;
            Instruction::v_store(a, reg(1, V)?, off)
        }
        MxuMm => {
            want(3, "`sDst, sA, sB`")?;
            Instruction::mxu_mm(reg(0, S)?, reg(1, S)?, reg(2, S)?)
        }
        DmaIssue => {
            want(5, "`slot, src->dst, sSrc, sDst, sLen`")?;
            let slot = int(0, 0, 15)? as u8;
            let link = match &ops[1].op {
                Operand::Link(l) => *l,
                other => {
                    return Err(err(
                        line,
                        ops[1].column,
                        format!("expected a link like hbm->vmem, found {}", other.describe()),
                    ))
                }
            };
            Instruction::dma_issue(slot, link, reg(2, S)?, reg(3, S)?, reg(4, S)?)
        }
        DmaWait => {
            want(1, "`slot`")?;
            Instruction::dma_wait(int(0, 0, 15)? as u8)
        }
        Br => {
            want(1, "`target`")?;
            Instruction::br(resolve(&ops[0], line)? as u32)
        }
        Brz => {
            want(2, "`sA, target`")?;
            Instruction::brz(reg(0, S)?, resolve(&ops[1], line)? as u32)
        }
        Halt => {
            want(0, "no operands")?;
            Instruction::halt()
        }
    };
    Ok(match p.predicate {
        Some(pr) => instr.guarded(pr.index()),
        None => instr,
    })
}

/// Renders a kernel as source that assembles back to the same program,
/// data and regions. Branch targets use the kernel's labels where present
/// and `L<pc>` otherwise.
pub fn disassemble(kernel: &Kernel) -> String {
    let program = &kernel.program;
    let mut names: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (name, &pc) in &kernel.labels {
        names.entry(pc).or_default().push(name.clone());
    }
    for instr in program.instructions() {
        if let Some(t) = instr.branch_target() {
            let entry = names.entry(t).or_default();
            if entry.is_empty() {
                entry.push(format!("L{t}"));
            }
        }
    }
    let mut out = String::new();
    if program.entry_pc() != 0 {
        let entry = names.entry(program.entry_pc()).or_default();
        if entry.is_empty() {
            entry.push(format!("L{}", program.entry_pc()));
        }
        let _ = writeln!(out, ".entry {}", entry[0]);
    }
    for d in &kernel.data {
        write_data(&mut out, d);
    }
    for (pc, instr) in program.instructions().iter().enumerate() {
        for r in kernel.regions.iter().filter(|r| r.start == pc) {
            let _ = writeln!(out, ";; hlo: {}", r.name);
        }
        if let Some(labels) = names.get(&pc) {
            for l in labels {
                let _ = writeln!(out, "{l}:");
            }
        }
        let text = match instr.branch_target() {
            Some(t) => {
                let target = &names[&t][0];
                let guard = instr.predicate().map(|p| format!("@{p} ")).unwrap_or_default();
                match instr.opcode() {
                    Opcode::Br => format!("{guard}BR {target}"),
                    _ => format!("{guard}BRZ {}, {target}", instr.src_regs()[0]),
                }
            }
            None => instr.to_string(),
        };
        let _ = writeln!(out, "    {text}");
    }
    out
}

fn write_data(out: &mut String, d: &DataInit) {
    if d.bytes.iter().all(|&b| b == d.bytes[0]) && d.bytes.len() > 4 {
        let _ = writeln!(
            out,
            ".fill {} {:#x} {} {}",
            d.space,
            d.offset,
            d.bytes.len(),
            d.bytes[0]
        );
        return;
    }
    for (i, chunk) in d.bytes.chunks(64).enumerate() {
        let offset = d.offset + 64 * i as u64;
        if chunk.len() % 4 == 0 {
            let words: Vec<String> = chunk
                .chunks_exact(4)
                .map(|w| format!("{:#x}", u32::from_le_bytes(w.try_into().unwrap())))
                .collect();
            let _ = writeln!(out, ".data {} {:#x} u32 {}", d.space, offset, words.join(", "));
        } else {
            let bytes: Vec<String> = chunk.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(out, ".data {} {:#x} u8 {}", d.space, offset, bytes.join(", "));
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&disassemble(self))
    }
}
