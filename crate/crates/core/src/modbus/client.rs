//! Modbus/TCP client with a persistent connection, gated by the network fabric.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU16, Ordering};

use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::Mutex;

use super::server::ModbusEndpoint;
use super::{decode, encode, CodecError, MbapFrame, Pdu};
use crate::netfabric::Gate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModbusError {
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(String),
    #[error("exception {code:#04x} for function {function:#04x}")]
    Exception { function: u8, code: u8 },
    #[error("transaction id mismatch: sent {sent}, got {got}")]
    TransactionMismatch { sent: u16, got: u16 },
    #[error("blocked by {0}")]
    Blocked(String),
    #[error("malformed response")]
    Malformed,
}

impl From<std::io::Error> for ModbusError {
    fn from(e: std::io::Error) -> Self {
        ModbusError::Io(e.to_string())
    }
}

#[derive(Debug)]
enum Link {
    Tcp { addr: SocketAddr, stream: Option<TcpStream>, buf: Vec<u8> },
    Local(ModbusEndpoint),
}

#[derive(Debug)]
pub struct ModbusClient {
    link: Mutex<Link>,
    unit_id: u8,
    next_txn: AtomicU16,
    gate: Option<Gate>,
}

impl ModbusClient {
    pub fn tcp(addr: SocketAddr, unit_id: u8, gate: Option<Gate>) -> Self {
        Self::with_link(Link::Tcp { addr, stream: None, buf: Vec::new() }, unit_id, gate)
    }

    /// In-process link: frames still go through the codec, but not a socket.
    pub fn local(endpoint: ModbusEndpoint, unit_id: u8, gate: Option<Gate>) -> Self {
        Self::with_link(Link::Local(endpoint), unit_id, gate)
    }

    fn with_link(link: Link, unit_id: u8, gate: Option<Gate>) -> Self {
        ModbusClient { link: Mutex::new(link), unit_id, next_txn: AtomicU16::new(1), gate }
    }

    /// Sends one request; exception responses become [`ModbusError::Exception`].
    pub async fn request(&self, pdu: Pdu) -> Result<Pdu, ModbusError> {
        let txn = self.next_txn.fetch_add(1, Ordering::Relaxed);
        let frame = MbapFrame::new(txn, self.unit_id, pdu);
        let bytes = encode(&frame)?;
        if let Some(gate) = &self.gate {
            gate.pass(&bytes).map_err(ModbusError::Blocked)?;
        }
        let mut link = self.link.lock().await;
        let resp = match &mut *link {
            Link::Local(ep) => {
                let req = decode(&bytes)?;
                decode(&encode(&ep.handle(&req))?)?
            }
            Link::Tcp { addr, stream, buf } => {
                let result = exchange(*addr, stream, buf, &bytes).await;
                if result.is_err() {
                    *stream = None;
                    buf.clear();
                }
                result?
            }
        };
        drop(link);
        if resp.transaction_id != txn {
            return Err(ModbusError::TransactionMismatch { sent: txn, got: resp.transaction_id });
        }
        if resp.pdu.is_exception() {
            return Err(ModbusError::Exception {
                function: resp.pdu.function & 0x7F,
                code: resp.pdu.exception_code().unwrap_or(0),
            });
        }
        Ok(resp.pdu)
    }

    pub async fn read_input_registers(&self, addr: u16, qty: u16) -> Result<Vec<u16>, ModbusError> {
        let pdu = self.request(Pdu::read_input_registers(addr, qty)).await?;
        registers(&pdu, qty)
    }

    pub async fn read_holding_registers(&self, addr: u16, qty: u16) -> Result<Vec<u16>, ModbusError> {
        let pdu = self.request(Pdu::read_holding_registers(addr, qty)).await?;
        registers(&pdu, qty)
    }

    pub async fn read_coils(&self, addr: u16, qty: u16) -> Result<Vec<bool>, ModbusError> {
        let pdu = self.request(Pdu::read_coils(addr, qty)).await?;
        let bytes = pdu.data.get(1..).ok_or(ModbusError::Malformed)?;
        if bytes.len() * 8 < qty as usize {
            return Err(ModbusError::Malformed);
        }
        Ok((0..qty as usize).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect())
    }

    pub async fn write_single_coil(&self, addr: u16, on: bool) -> Result<(), ModbusError> {
        let req = Pdu::write_single_coil(addr, on);
        let resp = self.request(req.clone()).await?;
        if resp != req {
            return Err(ModbusError::Malformed);
        }
        Ok(())
    }

    pub async fn write_single_register(&self, addr: u16, value: u16) -> Result<(), ModbusError> {
        let req = Pdu::write_single_register(addr, value);
        let resp = self.request(req.clone()).await?;
        if resp != req {
            return Err(ModbusError::Malformed);
        }
        Ok(())
    }
}

fn registers(pdu: &Pdu, qty: u16) -> Result<Vec<u16>, ModbusError> {
    let body = pdu.data.get(1..).ok_or(ModbusError::Malformed)?;
    if body.len() != qty as usize * 2 {
        return Err(ModbusError::Malformed);
    }
    Ok(body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect())
}

async fn exchange(
    addr: SocketAddr,
    stream: &mut Option<TcpStream>,
    buf: &mut Vec<u8>,
    request: &[u8],
) -> Result<MbapFrame, ModbusError> {
    if stream.is_none() {
        let s = TcpStream::connect(addr).await?;
        s.set_nodelay(true)?;
        *stream = Some(s);
    }
    let s = stream.as_mut().expect("connected above");
    s.write_all(request).await?;
    let mut chunk = [0u8; 512];
    loop {
        match decode(buf) {
            Ok(frame) => {
                buf.drain(..frame.wire_len());
                return Ok(frame);
            }
            Err(CodecError::NeedMoreBytes { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        let n = s.read(&mut chunk).await?;
        if n == 0 {
            return Err(ModbusError::Io("connection closed".into()));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}
