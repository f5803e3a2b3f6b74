//! Device register files and request execution.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{
    ExceptionCode, Pdu, COIL_OFF, COIL_ON, READ_COILS, READ_HOLDING_REGISTERS, READ_INPUT_REGISTERS, WRITE_SINGLE_COIL,
    WRITE_SINGLE_REGISTER,
};

const MAX_READ_REGISTERS: u16 = 125;
const MAX_READ_COILS: u16 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Table {
    InputRegisters,
    HoldingRegisters,
    Coils,
    DiscreteInputs,
}

/// Only mapped addresses exist; reads of anything else are illegal-data-address.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegisterFile {
    pub input_registers: BTreeMap<u16, u16>,
    pub holding_registers: BTreeMap<u16, u16>,
    pub coils: BTreeMap<u16, bool>,
    pub discrete_inputs: BTreeMap<u16, bool>,
}

impl RegisterFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&self, addr: u16) -> Option<u16> {
        self.input_registers.get(&addr).copied()
    }

    pub fn coil(&self, addr: u16) -> Option<bool> {
        self.coils.get(&addr).copied()
    }

    pub fn set_input(&mut self, addr: u16, v: u16) {
        self.input_registers.insert(addr, v);
    }

    pub fn set_coil(&mut self, addr: u16, v: bool) {
        self.coils.insert(addr, v);
    }

    fn registers(&self, function: u8) -> &BTreeMap<u16, u16> {
        if function == READ_INPUT_REGISTERS {
            &self.input_registers
        } else {
            &self.holding_registers
        }
    }
}

/// Register file shared by a device and its server; reads take the shared lock.
#[derive(Debug, Clone, Default)]
pub struct SharedRegisters(Arc<RwLock<RegisterFile>>);

impl SharedRegisters {
    pub fn new(rf: RegisterFile) -> Self {
        SharedRegisters(Arc::new(RwLock::new(rf)))
    }

    pub fn read<R>(&self, f: impl FnOnce(&RegisterFile) -> R) -> R {
        f(&self.0.read().unwrap())
    }

    pub fn write<R>(&self, f: impl FnOnce(&mut RegisterFile) -> R) -> R {
        f(&mut self.0.write().unwrap())
    }

    pub fn execute(&self, pdu: &Pdu) -> Pdu {
        match pdu.function {
            WRITE_SINGLE_COIL | WRITE_SINGLE_REGISTER => self.write(|rf| execute(rf, pdu)),
            _ => self.read(|rf| read_only(rf, pdu)),
        }
    }
}

fn addr_qty(pdu: &Pdu) -> Result<(u16, u16), ExceptionCode> {
    match pdu.data.as_slice() {
        [a0, a1, q0, q1] => Ok((u16::from_be_bytes([*a0, *a1]), u16::from_be_bytes([*q0, *q1]))),
        _ => Err(ExceptionCode::IllegalDataValue),
    }
}

fn range(addr: u16, qty: u16) -> Result<std::ops::Range<u32>, ExceptionCode> {
    let end = addr as u32 + qty as u32;
    if end > 0x1_0000 {
        return Err(ExceptionCode::IllegalDataAddress);
    }
    Ok(addr as u32..end)
}

fn read_registers(rf: &RegisterFile, pdu: &Pdu) -> Result<Pdu, ExceptionCode> {
    let (addr, qty) = addr_qty(pdu)?;
    if qty == 0 || qty > MAX_READ_REGISTERS {
        return Err(ExceptionCode::IllegalDataValue);
    }
    let table = rf.registers(pdu.function);
    let mut data = vec![(qty * 2) as u8];
    for a in range(addr, qty)? {
        let v = table.get(&(a as u16)).ok_or(ExceptionCode::IllegalDataAddress)?;
        data.extend_from_slice(&v.to_be_bytes());
    }
    Ok(Pdu::new(pdu.function, data))
}

fn read_coils(rf: &RegisterFile, pdu: &Pdu) -> Result<Pdu, ExceptionCode> {
    let (addr, qty) = addr_qty(pdu)?;
    if qty == 0 || qty > MAX_READ_COILS {
        return Err(ExceptionCode::IllegalDataValue);
    }
    let mut bits = vec![0u8; (qty as usize).div_ceil(8)];
    for (i, a) in range(addr, qty)?.enumerate() {
        if *rf.coils.get(&(a as u16)).ok_or(ExceptionCode::IllegalDataAddress)? {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    let mut data = vec![bits.len() as u8];
    data.extend(bits);
    Ok(Pdu::new(pdu.function, data))
}

fn write_coil(rf: &mut RegisterFile, pdu: &Pdu) -> Result<Pdu, ExceptionCode> {
    let (addr, value) = addr_qty(pdu)?;
    let on = match value {
        COIL_ON => true,
        COIL_OFF => false,
        _ => return Err(ExceptionCode::IllegalDataValue),
    };
    let coil = rf.coils.get_mut(&addr).ok_or(ExceptionCode::IllegalDataAddress)?;
    *coil = on;
    Ok(pdu.clone())
}

fn write_register(rf: &mut RegisterFile, pdu: &Pdu) -> Result<Pdu, ExceptionCode> {
    let (addr, value) = addr_qty(pdu)?;
    let reg = rf.holding_registers.get_mut(&addr).ok_or(ExceptionCode::IllegalDataAddress)?;
    *reg = value;
    Ok(pdu.clone())
}

fn read_only(rf: &RegisterFile, pdu: &Pdu) -> Pdu {
    let result = match pdu.function {
        READ_COILS => read_coils(rf, pdu),
        READ_HOLDING_REGISTERS | READ_INPUT_REGISTERS => read_registers(rf, pdu),
        _ => Err(ExceptionCode::IllegalFunction),
    };
    result.unwrap_or_else(|code| Pdu::exception(pdu.function, code))
}

/// Executes one request PDU and returns the response PDU (possibly an exception).
pub fn execute(rf: &mut RegisterFile, pdu: &Pdu) -> Pdu {
    let result = match pdu.function {
        WRITE_SINGLE_COIL => write_coil(rf, pdu),
        WRITE_SINGLE_REGISTER => write_register(rf, pdu),
        _ => return read_only(rf, pdu),
    };
    result.unwrap_or_else(|code| Pdu::exception(pdu.function, code))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cabinet() -> RegisterFile {
        let mut rf = RegisterFile::new();
        rf.set_input(100, 30000);
        rf.set_input(101, 35000);
        rf.set_coil(100, false);
        rf.set_coil(101, true);
        rf.holding_registers.insert(10, 0);
        rf
    }

    #[test]
    fn reads_mapped_inputs() {
        let mut rf = cabinet();
        let resp = execute(&mut rf, &Pdu::read_input_registers(100, 2));
        assert_eq!(resp, Pdu::new(READ_INPUT_REGISTERS, vec![4, 0x75, 0x30, 0x88, 0xB8]));
    }

    #[test]
    fn unmapped_and_bad_counts() {
        let mut rf = cabinet();
        assert_eq!(execute(&mut rf, &Pdu::read_input_registers(500, 1)), Pdu::new(0x84, vec![0x02]));
        assert_eq!(execute(&mut rf, &Pdu::read_input_registers(100, 3)).exception_code(), Some(2));
        assert_eq!(execute(&mut rf, &Pdu::read_input_registers(100, 0)).exception_code(), Some(3));
        assert_eq!(execute(&mut rf, &Pdu::read_input_registers(100, 126)).exception_code(), Some(3));
        assert_eq!(execute(&mut rf, &Pdu::new(0x2B, vec![])), Pdu::new(0xAB, vec![0x01]));
        // input registers are not writable through the holding-register function
        assert_eq!(execute(&mut rf, &Pdu::write_single_register(100, 1)).exception_code(), Some(2));
    }

    #[test]
    fn coil_write_echoes_and_sticks() {
        let mut rf = cabinet();
        let req = Pdu::write_single_coil(100, true);
        assert_eq!(execute(&mut rf, &req), req);
        assert_eq!(rf.coil(100), Some(true));
        assert_eq!(execute(&mut rf, &Pdu::read_coils(100, 2)), Pdu::new(READ_COILS, vec![1, 0b11]));
        let bad = Pdu::new(WRITE_SINGLE_COIL, vec![0, 100, 0x12, 0x34]);
        assert_eq!(execute(&mut rf, &bad).exception_code(), Some(3));
        assert_eq!(rf.coil(100), Some(true));
    }

    #[test]
    fn holding_register_round_trip() {
        let mut rf = cabinet();
        execute(&mut rf, &Pdu::write_single_register(10, 4321));
        assert_eq!(execute(&mut rf, &Pdu::read_holding_registers(10, 1)).data, vec![2, 0x10, 0xE1]);
    }

    fn request() -> impl Strategy<Value = Pdu> {
        let addr = 95u16..110;
        prop_oneof![
            (addr.clone(), 0u16..4).prop_map(|(a, q)| Pdu::read_coils(a, q)),
            (addr.clone(), 0u16..4).prop_map(|(a, q)| Pdu::read_input_registers(a, q)),
            (addr.clone(), 0u16..4).prop_map(|(a, q)| Pdu::read_holding_registers(a, q)),
            (addr.clone(), any::<bool>()).prop_map(|(a, v)| Pdu::write_single_coil(a, v)),
            (addr, any::<u16>()).prop_map(|(a, v)| Pdu::write_single_register(a, v)),
        ]
    }

    proptest! {
        #[test]
        fn reads_never_mutate(reqs in prop::collection::vec(request(), 1..20)) {
            let mut rf = cabinet();
            rf.holding_registers.insert(100, 7);
            for r in reqs {
                let before = rf.clone();
                let resp = execute(&mut rf, &r);
                if !matches!(r.function, WRITE_SINGLE_COIL | WRITE_SINGLE_REGISTER) {
                    prop_assert_eq!(&rf, &before);
                } else if !resp.is_exception() {
                    let addr = u16::from_be_bytes([r.data[0], r.data[1]]);
                    let readback = if r.function == WRITE_SINGLE_COIL {
                        execute(&mut rf, &Pdu::read_coils(addr, 1)).data[1] as u16 * COIL_ON
                    } else {
                        let d = execute(&mut rf, &Pdu::read_holding_registers(addr, 1)).data;
                        u16::from_be_bytes([d[1], d[2]])
                    };
                    prop_assert_eq!(readback, u16::from_be_bytes([r.data[2], r.data[3]]));
                }
            }
        }
    }
}
