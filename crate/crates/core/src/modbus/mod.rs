//! Modbus/TCP: MBAP framing, the five supported function codes, register files,
//! a TCP server and a persistent client.

mod client;
mod registers;
mod server;

use thiserror::Error;

pub use client::{ModbusClient, ModbusError};
pub use registers::{execute, RegisterFile, SharedRegisters, Table};
pub use server::{ModbusEndpoint, ModbusServer};

pub const READ_COILS: u8 = 0x01;
pub const READ_HOLDING_REGISTERS: u8 = 0x03;
pub const READ_INPUT_REGISTERS: u8 = 0x04;
pub const WRITE_SINGLE_COIL: u8 = 0x05;
pub const WRITE_SINGLE_REGISTER: u8 = 0x06;

pub const COIL_ON: u16 = 0xFF00;
pub const COIL_OFF: u16 = 0x0000;

/// Largest PDU a Modbus/TCP ADU can carry.
pub const MAX_PDU_LEN: usize = 253;
const MBAP_LEN: usize = 7;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("need {needed} more bytes")]
    NeedMoreBytes { needed: usize },
    #[error("protocol id must be 0, got {0}")]
    ProtocolId(u16),
    #[error("pdu of {0} bytes exceeds {MAX_PDU_LEN}")]
    Oversize(usize),
    #[error("invalid length field {0}")]
    BadLength(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ExceptionCode {
    IllegalFunction = 0x01,
    IllegalDataAddress = 0x02,
    IllegalDataValue = 0x03,
}

impl ExceptionCode {
    pub fn from_u8(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(ExceptionCode::IllegalFunction),
            0x02 => Some(ExceptionCode::IllegalDataAddress),
            0x03 => Some(ExceptionCode::IllegalDataValue),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdu {
    pub function: u8,
    pub data: Vec<u8>,
}

impl Pdu {
    pub fn new(function: u8, data: Vec<u8>) -> Self {
        Pdu { function, data }
    }

    pub fn exception(function: u8, code: ExceptionCode) -> Self {
        Pdu { function: function | 0x80, data: vec![code as u8] }
    }

    pub fn is_exception(&self) -> bool {
        self.function & 0x80 != 0
    }

    pub fn exception_code(&self) -> Option<u8> {
        self.is_exception().then(|| self.data.first().copied().unwrap_or(0))
    }

    pub fn len(&self) -> usize {
        1 + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn addr_qty(function: u8, addr: u16, qty: u16) -> Self {
        let mut data = addr.to_be_bytes().to_vec();
        data.extend_from_slice(&qty.to_be_bytes());
        Pdu { function, data }
    }

    pub fn read_coils(addr: u16, qty: u16) -> Self {
        Self::addr_qty(READ_COILS, addr, qty)
    }

    pub fn read_holding_registers(addr: u16, qty: u16) -> Self {
        Self::addr_qty(READ_HOLDING_REGISTERS, addr, qty)
    }

    pub fn read_input_registers(addr: u16, qty: u16) -> Self {
        Self::addr_qty(READ_INPUT_REGISTERS, addr, qty)
    }

    pub fn write_single_coil(addr: u16, on: bool) -> Self {
        Self::addr_qty(WRITE_SINGLE_COIL, addr, if on { COIL_ON } else { COIL_OFF })
    }

    pub fn write_single_register(addr: u16, value: u16) -> Self {
        Self::addr_qty(WRITE_SINGLE_REGISTER, addr, value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbapFrame {
    pub transaction_id: u16,
    pub protocol_id: u16,
    pub unit_id: u8,
    pub pdu: Pdu,
}

impl MbapFrame {
    pub fn new(transaction_id: u16, unit_id: u8, pdu: Pdu) -> Self {
        MbapFrame { transaction_id, protocol_id: 0, unit_id, pdu }
    }

    /// The MBAP length field: unit id plus PDU bytes.
    pub fn length(&self) -> u16 {
        (1 + self.pdu.len()) as u16
    }

    /// Total bytes on the wire.
    pub fn wire_len(&self) -> usize {
        MBAP_LEN + self.pdu.len()
    }
}

pub fn encode(frame: &MbapFrame) -> Result<Vec<u8>, CodecError> {
    if frame.protocol_id != 0 {
        return Err(CodecError::ProtocolId(frame.protocol_id));
    }
    if frame.pdu.len() > MAX_PDU_LEN {
        return Err(CodecError::Oversize(frame.pdu.len()));
    }
    let mut out = Vec::with_capacity(frame.wire_len());
    out.extend_from_slice(&frame.transaction_id.to_be_bytes());
    out.extend_from_slice(&frame.protocol_id.to_be_bytes());
    out.extend_from_slice(&frame.length().to_be_bytes());
    out.push(frame.unit_id);
    out.push(frame.pdu.function);
    out.extend_from_slice(&frame.pdu.data);
    Ok(out)
}

/// Decodes the frame at the start of `bytes`; trailing bytes are left for the
/// next call (use [`MbapFrame::wire_len`] to advance).
pub fn decode(bytes: &[u8]) -> Result<MbapFrame, CodecError> {
    if bytes.len() < MBAP_LEN + 1 {
        return Err(CodecError::NeedMoreBytes { needed: MBAP_LEN + 1 - bytes.len() });
    }
    let transaction_id = u16::from_be_bytes([bytes[0], bytes[1]]);
    let protocol_id = u16::from_be_bytes([bytes[2], bytes[3]]);
    let length = u16::from_be_bytes([bytes[4], bytes[5]]);
    if protocol_id != 0 {
        return Err(CodecError::ProtocolId(protocol_id));
    }
    if length < 2 || length as usize > MAX_PDU_LEN + 1 {
        return Err(CodecError::BadLength(length));
    }
    let total = 6 + length as usize;
    if bytes.len() < total {
        return Err(CodecError::NeedMoreBytes { needed: total - bytes.len() });
    }
    Ok(MbapFrame {
        transaction_id,
        protocol_id,
        unit_id: bytes[6],
        pdu: Pdu { function: bytes[7], data: bytes[8..total].to_vec() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex(s: &str) -> Vec<u8> {
        s.split_whitespace().map(|b| u8::from_str_radix(b, 16).unwrap()).collect()
    }

    #[test]
    fn golden_read_input_registers() {
        let f = MbapFrame::new(1, 1, Pdu::read_input_registers(100, 2));
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes, hex("00 01 00 00 00 06 01 04 00 64 00 02"));
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn golden_write_single_coil() {
        let f = MbapFrame::new(7, 1, Pdu::write_single_coil(100, true));
        let bytes = encode(&f).unwrap();
        assert_eq!(bytes, hex("00 07 00 00 00 06 01 05 00 64 ff 00"));
        assert_eq!(&bytes[7..], &hex("05 00 64 FF 00")[..]);
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_bad_protocol_and_truncation() {
        let mut f = MbapFrame::new(1, 1, Pdu::read_coils(0, 1));
        f.protocol_id = 3;
        assert_eq!(encode(&f), Err(CodecError::ProtocolId(3)));
        assert!(matches!(decode(&[0, 1, 0, 0, 0]), Err(CodecError::NeedMoreBytes { .. })));
        let full = encode(&MbapFrame::new(1, 1, Pdu::read_coils(0, 1))).unwrap();
        assert_eq!(decode(&full[..10]), Err(CodecError::NeedMoreBytes { needed: 2 }));
        let big = MbapFrame::new(1, 1, Pdu::new(0x10, vec![0; MAX_PDU_LEN]));
        assert_eq!(encode(&big), Err(CodecError::Oversize(MAX_PDU_LEN + 1)));
    }

    #[test]
    fn unknown_function_decodes() {
        let f = MbapFrame::new(9, 1, Pdu::new(0x2B, vec![0x0E, 0x01, 0x00]));
        assert_eq!(decode(&encode(&f).unwrap()).unwrap().pdu.function, 0x2B);
    }

    pub(crate) fn frame() -> impl Strategy<Value = MbapFrame> {
        (any::<u16>(), any::<u8>(), 1u8..=0x7F, prop::collection::vec(any::<u8>(), 0..MAX_PDU_LEN))
            .prop_map(|(t, u, f, d)| MbapFrame::new(t, u, Pdu::new(f, d)))
    }

    proptest! {
        #[test]
        fn round_trip(f in frame()) {
            let bytes = encode(&f).unwrap();
            prop_assert_eq!(bytes.len(), f.wire_len());
            prop_assert_eq!(decode(&bytes).unwrap(), f);
        }

        #[test]
        fn any_prefix_needs_more(f in frame(), cut in 0usize..300) {
            let bytes = encode(&f).unwrap();
            let cut = cut % bytes.len();
            let is_need_more = matches!(decode(&bytes[..cut]), Err(CodecError::NeedMoreBytes { .. }));
            prop_assert!(is_need_more);
        }
    }
}
