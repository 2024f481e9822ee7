//! Trace container.
//!
//! Text form: one line `XSHARK-TRACE v1 sha256=<hex>` followed by a JSON
//! body; the checksum covers the body bytes exactly. Binary form: the magic
//! `XSHKTRB1`, a 32-byte SHA-256 of the rest, then length-prefixed fields.
//! [`read_trace`] accepts either.

use std::io::{Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ExecutionTrace, TraceHeader};
use crate::isa::{
    decode_instruction, encode_instruction, Instruction, MemRegion, MemSpace, RegClass, RegisterId, ENCODED_LEN,
    ISA_VERSION,
};
use crate::sim::SimConfig;

const TEXT_MAGIC: &str = "XSHARK-TRACE";
const FORMAT_VERSION: &str = "v1";
const BINARY_MAGIC: &[u8; 8] = b"XSHKTRB1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegSnapshot {
    pub reg: RegisterId,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemSnapshot {
    pub region: MemRegion,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamEntry {
    pub pc: usize,
    pub instr: Instruction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceFormat {
    #[default]
    Text,
    Binary,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace checksum mismatch: header says {expected}, body hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("unsupported trace version {found} (this build reads {FORMAT_VERSION}, ISA {ISA_VERSION})")]
    Version { found: String },
    #[error(
        "trace was recorded with config {trace}, but the current config hashes to {current}; timing would not match"
    )]
    ConfigMismatch { trace: String, current: String },
    #[error("malformed trace: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TraceError {
    pub fn code(&self) -> &'static str {
        match self {
            TraceError::Checksum { .. } => "TRACE_CHECKSUM",
            TraceError::Version { .. } => "TRACE_VERSION",
            TraceError::ConfigMismatch { .. } => "CONFIG_MISMATCH",
            TraceError::Format(_) => "TRACE_FORMAT",
            TraceError::Io(_) => "IO",
        }
    }
}

fn format_err(e: impl std::fmt::Display) -> TraceError {
    TraceError::Format(e.to_string())
}

impl ExecutionTrace {
    /// Refuses configs whose hash differs from the recording config.
    pub fn check_config(&self, config: &SimConfig) -> Result<(), TraceError> {
        let current = config.hash();
        if current == self.header.sim_config_hash {
            Ok(())
        } else {
            Err(TraceError::ConfigMismatch {
                trace: self.header.sim_config_hash.clone(),
                current,
            })
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReg {
    reg: RegisterId,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct JsonMem {
    region: MemRegion,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct JsonInstr {
    pc: usize,
    code: String,
}

#[derive(Serialize, Deserialize)]
struct JsonBody {
    header: TraceHeader,
    reg_snapshots: Vec<JsonReg>,
    mem_snapshots: Vec<JsonMem>,
    instr_stream: Vec<JsonInstr>,
}

fn to_json_body(trace: &ExecutionTrace) -> Vec<u8> {
    let body = JsonBody {
        header: trace.header.clone(),
        reg_snapshots: trace
            .reg_snapshots
            .iter()
            .map(|s| JsonReg {
                reg: s.reg,
                value: B64.encode(&s.value),
            })
            .collect(),
        mem_snapshots: trace
            .mem_snapshots
            .iter()
            .map(|s| JsonMem {
                region: s.region,
                data: B64.encode(&s.data),
            })
            .collect(),
        instr_stream: trace
            .instr_stream
            .iter()
            .map(|e| JsonInstr {
                pc: e.pc,
                code: hex::encode(encode_instruction(&e.instr)),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&body).expect("trace serializes");
    out.push(b'\n');
    out
}

fn check_snapshots(
    header: TraceHeader,
    reg_snapshots: Vec<RegSnapshot>,
    mem_snapshots: Vec<MemSnapshot>,
    instr_stream: Vec<StreamEntry>,
) -> Result<ExecutionTrace, TraceError> {
    if header.isa_version != ISA_VERSION {
        return Err(TraceError::Version {
            found: format!("isa {}", header.isa_version),
        });
    }
    for s in &reg_snapshots {
        if s.value.len() != s.reg.class().value_bytes() {
            return Err(format_err(format!("snapshot of {} has {} bytes", s.reg, s.value.len())));
        }
    }
    for s in &mem_snapshots {
        if s.data.len() as u64 != s.region.length || s.region.length == 0 {
            return Err(format_err(format!(
                "snapshot of {} has {} bytes",
                s.region,
                s.data.len()
            )));
        }
    }
    if header.instruction_count != instr_stream.len() as u64 {
        return Err(format_err("instruction_count does not match the stream"));
    }
    Ok(ExecutionTrace {
        header,
        reg_snapshots,
        mem_snapshots,
        instr_stream,
    })
}

fn from_json_body(body: &[u8]) -> Result<ExecutionTrace, TraceError> {
    let body: JsonBody = serde_json::from_slice(body).map_err(format_err)?;
    let regs = body
        .reg_snapshots
        .into_iter()
        .map(|s| {
            Ok(RegSnapshot {
                reg: s.reg,
                value: B64.decode(s.value).map_err(format_err)?,
            })
        })
        .collect::<Result<Vec<_>, TraceError>>()?;
    let mem = body
        .mem_snapshots
        .into_iter()
        .map(|s| {
            Ok(MemSnapshot {
                region: s.region,
                data: B64.decode(s.data).map_err(format_err)?,
            })
        })
        .collect::<Result<Vec<_>, TraceError>>()?;
    let stream = body
        .instr_stream
        .into_iter()
        .map(|e| {
            let bytes = hex::decode(e.code).map_err(format_err)?;
            Ok(StreamEntry {
                pc: e.pc,
                instr: decode_instruction(&bytes).map_err(format_err)?,
            })
        })
        .collect::<Result<Vec<_>, TraceError>>()?;
    check_snapshots(body.header, regs, mem, stream)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_binary_body(trace: &ExecutionTrace) -> Vec<u8> {
    let mut out = Vec::new();
    let header = serde_json::to_vec(&trace.header).expect("header serializes");
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    put_u32(&mut out, trace.reg_snapshots.len() as u32);
    for s in &trace.reg_snapshots {
        out.push(match s.reg.class() {
            RegClass::Scalar => 0,
            RegClass::Vector => 1,
            RegClass::Predicate => 2,
        });
        out.push(s.reg.index());
        out.extend_from_slice(&s.value);
    }
    put_u32(&mut out, trace.mem_snapshots.len() as u32);
    for s in &trace.mem_snapshots {
        out.push(s.region.space.code());
        put_u64(&mut out, s.region.offset);
        put_u64(&mut out, s.region.length);
        out.extend_from_slice(&s.data);
    }
    put_u32(&mut out, trace.instr_stream.len() as u32);
    for e in &trace.instr_stream {
        put_u64(&mut out, e.pc as u64);
        out.extend_from_slice(&encode_instruction(&e.instr));
    }
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        if self.0.len() < n {
            return Err(format_err("truncated binary trace"));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, TraceError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn from_binary_body(body: &[u8]) -> Result<ExecutionTrace, TraceError> {
    let mut c = Cursor(body);
    let n = c.u32()? as usize;
    let header: TraceHeader = serde_json::from_slice(c.take(n)?).map_err(format_err)?;
    let mut regs = Vec::new();
    for _ in 0..c.u32()? {
        let class = match c.u8()? {
            0 => RegClass::Scalar,
            1 => RegClass::Vector,
            2 => RegClass::Predicate,
            other => return Err(format_err(format!("register class tag {other}"))),
        };
        let reg = RegisterId::new(class, c.u8()?).map_err(format_err)?;
        let value = c.take(class.value_bytes())?.to_vec();
        regs.push(RegSnapshot { reg, value });
    }
    let mut mem = Vec::new();
    for _ in 0..c.u32()? {
        let space = match c.u8()? {
            0 => MemSpace::Hbm,
            1 => MemSpace::Vmem,
            other => return Err(format_err(format!("memory space tag {other}"))),
        };
        let offset = c.u64()?;
        let length = c.u64()?;
        if length == 0 || length > body.len() as u64 {
            return Err(format_err("bad snapshot length"));
        }
        let data = c.take(length as usize)?.to_vec();
        mem.push(MemSnapshot {
            region: MemRegion::new(space, offset, length),
            data,
        });
    }
    let mut stream = Vec::new();
    for _ in 0..c.u32()? {
        let pc = c.u64()? as usize;
        let instr = decode_instruction(c.take(ENCODED_LEN)?).map_err(format_err)?;
        stream.push(StreamEntry { pc, instr });
    }
    if !c.0.is_empty() {
        return Err(format_err("trailing bytes after binary trace"));
    }
    check_snapshots(header, regs, mem, stream)
}

pub fn trace_to_bytes(trace: &ExecutionTrace, format: TraceFormat) -> Vec<u8> {
    match format {
        TraceFormat::Text => {
            let body = to_json_body(trace);
            let mut out = format!(
                "{TEXT_MAGIC} {FORMAT_VERSION} sha256={}\n",
                hex::encode(Sha256::digest(&body))
            )
            .into_bytes();
            out.extend_from_slice(&body);
            out
        }
        TraceFormat::Binary => {
            let body = to_binary_body(trace);
            let mut out = BINARY_MAGIC.to_vec();
            out.extend_from_slice(&Sha256::digest(&body));
            out.extend_from_slice(&body);
            out
        }
    }
}

pub fn trace_from_bytes(bytes: &[u8]) -> Result<ExecutionTrace, TraceError> {
    if let Some(rest) = bytes.strip_prefix(BINARY_MAGIC.as_slice()) {
        if rest.len() < 32 {
            return Err(format_err("truncated binary trace"));
        }
        let (sum, body) = rest.split_at(32);
        let actual = Sha256::digest(body);
        if sum != actual.as_slice() {
            return Err(TraceError::Checksum {
                expected: hex::encode(sum),
                actual: hex::encode(actual),
            });
        }
        return from_binary_body(body);
    }
    if bytes.starts_with(b"XSHKTRB") {
        return Err(TraceError::Version {
            found: String::from_utf8_lossy(&bytes[..8]).into_owned(),
        });
    }
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("missing header line"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(format_err)?;
    let body = &bytes[nl + 1..];
    let mut parts = line.split(' ');
    if parts.next() != Some(TEXT_MAGIC) {
        return Err(format_err("not a trace file"));
    }
    let version = parts.next().unwrap_or_default();
    if version != FORMAT_VERSION {
        return Err(TraceError::Version {
            found: version.to_string(),
        });
    }
    let expected = parts
        .next()
        .and_then(|p| p.strip_prefix("sha256="))
        .ok_or_else(|| format_err("missing checksum"))?;
    let actual = hex::encode(Sha256::digest(body));
    if expected != actual {
        return Err(TraceError::Checksum {
            expected: expected.to_string(),
            actual,
        });
    }
    from_json_body(body)
}

pub fn write_trace<W: Write>(trace: &ExecutionTrace, format: TraceFormat, mut out: W) -> Result<(), TraceError> {
    out.write_all(&trace_to_bytes(trace, format))?;
    out.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(mut input: R) -> Result<ExecutionTrace, TraceError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    trace_from_bytes(&bytes)
}
