//! Fixed-width 16-byte instruction records.
//!
//! ```text
//! byte  0      opcode
//! byte  1      guard: 0x00 = none, 0x80 | index = predicated on p<index>
//! bytes 2..5   register operands in order (destinations then sources),
//!              index only, 0xff for unused slots; classes follow the opcode
//! bytes 5..8   reserved, zero
//! bytes 8..12  immediate 0, i32 little-endian (zero if unused)
//! bytes 12..16 immediate 1, i32 little-endian (zero if unused)
//! ```

use thiserror::Error;

use super::{Instruction, IsaError, Opcode, RegClass, RegisterId};

pub const ENCODED_LEN: usize = 16;
const UNUSED_REG: u8 = 0xff;
const GUARD_FLAG: u8 = 0x80;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("instruction record is {0} bytes, expected 16")]
    Length(usize),
    #[error("unknown opcode byte {0:#04x}")]
    Opcode(u8),
    #[error("malformed record: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Operand(#[from] IsaError),
}

pub fn encode_instruction(instr: &Instruction) -> [u8; ENCODED_LEN] {
    let mut out = [0u8; ENCODED_LEN];
    out[0] = instr.opcode().byte();
    if let Some(p) = instr.predicate() {
        out[1] = GUARD_FLAG | p.index();
    }
    out[2..5].fill(UNUSED_REG);
    for (slot, reg) in instr.dst_regs().iter().chain(instr.src_regs()).enumerate() {
        out[2 + slot] = reg.index();
    }
    for (i, imm) in instr.immediates().iter().enumerate() {
        out[8 + 4 * i..12 + 4 * i].copy_from_slice(&imm.to_le_bytes());
    }
    out
}

pub fn decode_instruction(bytes: &[u8]) -> Result<Instruction, DecodeError> {
    if bytes.len() != ENCODED_LEN {
        return Err(DecodeError::Length(bytes.len()));
    }
    let opcode = Opcode::from_byte(bytes[0]).ok_or(DecodeError::Opcode(bytes[0]))?;
    let sig = opcode.signature();
    if bytes[5..8] != [0, 0, 0] {
        return Err(DecodeError::Malformed("reserved bytes are not zero"));
    }
    let classes: Vec<RegClass> = sig.dst.iter().chain(sig.src).copied().collect();
    let mut regs = Vec::with_capacity(classes.len());
    for (slot, &byte) in bytes[2..5].iter().enumerate() {
        match classes.get(slot) {
            Some(&class) => regs.push(RegisterId::new(class, byte)?),
            None if byte == UNUSED_REG => {}
            None => return Err(DecodeError::Malformed("operand in unused register slot")),
        }
    }
    let mut imms = Vec::with_capacity(sig.imms);
    for i in 0..2 {
        let raw = &bytes[8 + 4 * i..12 + 4 * i];
        if i < sig.imms {
            imms.push(i32::from_le_bytes(raw.try_into().expect("4-byte slice")));
        } else if raw != [0, 0, 0, 0] {
            return Err(DecodeError::Malformed("unused immediate is not zero"));
        }
    }
    let src = regs.split_off(sig.dst.len());
    let predicate = match bytes[1] {
        0 => None,
        g if g & GUARD_FLAG != 0 && g & 0x78 == 0 => Some(RegisterId::new(RegClass::Predicate, g & 0x07)?),
        _ => return Err(DecodeError::Malformed("bad guard byte")),
    };
    Ok(Instruction::new(opcode, regs, src, imms)?.with_predicate(predicate)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{CmpCond, Link};
    use proptest::prelude::*;

    #[test]
    fn s_ldi_layout() {
        let bytes = encode_instruction(&Instruction::s_ldi(0, 42));
        assert_eq!(bytes[0], 0x01);
        assert_eq!(&bytes[2..5], &[0, 0xff, 0xff]);
        assert_eq!(&bytes[8..12], &42i32.to_le_bytes());
        assert_eq!(bytes.len(), 16);
    }

    #[test]
    fn dma_issue_round_trip() {
        let i = Instruction::dma_issue(3, Link::HBM_TO_VMEM, 1, 2, 3);
        assert_eq!(decode_instruction(&encode_instruction(&i)).unwrap(), i);
    }

    #[test]
    fn truncated_record_is_rejected() {
        let bytes = encode_instruction(&Instruction::halt());
        assert_eq!(decode_instruction(&bytes[..15]), Err(DecodeError::Length(15)));
    }

    #[test]
    fn garbage_is_rejected() {
        let mut bytes = encode_instruction(&Instruction::s_add(1, 2, 3));
        bytes[0] = 0xee;
        assert_eq!(decode_instruction(&bytes), Err(DecodeError::Opcode(0xee)));
        let mut bytes = encode_instruction(&Instruction::halt());
        bytes[12] = 1;
        assert!(matches!(decode_instruction(&bytes), Err(DecodeError::Malformed(_))));
        let mut bytes = encode_instruction(&Instruction::s_add(1, 2, 3));
        bytes[3] = 40;
        assert!(matches!(decode_instruction(&bytes), Err(DecodeError::Operand(_))));
    }

    pub(crate) fn any_instruction() -> impl Strategy<Value = Instruction> {
        let s = 0u8..32;
        let v = 0u8..32;
        let core = prop_oneof![
            (s.clone(), any::<i32>()).prop_map(|(d, i)| Instruction::s_ldi(d, i)),
            (s.clone(), s.clone(), s.clone()).prop_map(|(d, a, b)| Instruction::s_add(d, a, b)),
            (s.clone(), s.clone(), s.clone()).prop_map(|(d, a, b)| Instruction::s_mul(d, a, b)),
            (0u8..8, s.clone(), s.clone(), 0usize..4).prop_map(|(p, a, b, c)| Instruction::s_cmp(
                p,
                a,
                b,
                CmpCond::ALL[c]
            )),
            (s.clone(), s.clone()).prop_map(|(d, a)| Instruction::s_mov(d, a)),
            (s.clone(), s.clone(), any::<i32>()).prop_map(|(d, a, o)| Instruction::s_ld(d, a, o)),
            (v.clone(), v.clone(), v.clone()).prop_map(|(d, a, b)| Instruction::v_add(d, a, b)),
            (v.clone(), v.clone(), v.clone()).prop_map(|(d, a, b)| Instruction::v_mul(d, a, b)),
            (v.clone(), s.clone(), any::<i32>()).prop_map(|(d, a, o)| Instruction::v_load(d, a, o)),
            (s.clone(), v.clone(), any::<i32>()).prop_map(|(a, d, o)| Instruction::v_store(a, d, o)),
            (s.clone(), s.clone(), s.clone()).prop_map(|(d, a, b)| Instruction::mxu_mm(d, a, b)),
            (0u8..16, 0usize..4, s.clone(), s.clone(), s.clone())
                .prop_map(|(slot, l, a, b, c)| { Instruction::dma_issue(slot, Link::ALL[l], a, b, c) }),
            (0u8..16).prop_map(Instruction::dma_wait),
            (0u32..i32::MAX as u32).prop_map(Instruction::br),
            (s, 0u32..i32::MAX as u32).prop_map(|(r, t)| Instruction::brz(r, t)),
            Just(Instruction::halt()),
        ];
        (core, proptest::option::of(0u8..8)).prop_map(|(i, p)| match p {
            Some(p) => i.guarded(p),
            None => i,
        })
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips(instr in any_instruction()) {
            let bytes = encode_instruction(&instr);
            prop_assert_eq!(decode_instruction(&bytes).unwrap(), instr);
        }
    }
}
