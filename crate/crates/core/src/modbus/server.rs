//! Modbus/TCP server: one task per connection, requests answered in arrival order.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::{JoinHandle, JoinSet};

use super::{decode, encode, CodecError, MbapFrame, SharedRegisters};

/// A device's register file plus a count of requests it has executed.
#[derive(Debug, Clone, Default)]
pub struct ModbusEndpoint {
    pub registers: SharedRegisters,
    served: Arc<AtomicU64>,
}

impl ModbusEndpoint {
    pub fn new(registers: SharedRegisters) -> Self {
        ModbusEndpoint { registers, served: Arc::default() }
    }

    pub fn handle(&self, request: &MbapFrame) -> MbapFrame {
        self.served.fetch_add(1, Ordering::Relaxed);
        let pdu = self.registers.execute(&request.pdu);
        MbapFrame::new(request.transaction_id, request.unit_id, pdu)
    }

    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }
}

#[derive(Debug)]
pub struct ModbusServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl ModbusServer {
    pub async fn bind(addr: SocketAddr, endpoint: ModbusEndpoint) -> io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            let mut conns = JoinSet::new();
            loop {
                match listener.accept().await {
                    Ok((stream, peer)) => {
                        let _ = stream.set_nodelay(true);
                        let ep = endpoint.clone();
                        conns.spawn(async move {
                            if let Err(e) = serve_connection(stream, ep).await {
                                log::debug!("modbus connection {peer} closed: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("modbus accept on {local_addr}: {e}"),
                }
            }
        });
        Ok(ModbusServer { local_addr, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(&self) {
        self.task.abort();
    }
}

impl Drop for ModbusServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn serve_connection(mut stream: TcpStream, endpoint: ModbusEndpoint) -> io::Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(512);
    let mut chunk = [0u8; 512];
    loop {
        loop {
            match decode(&buf) {
                Ok(frame) => {
                    buf.drain(..frame.wire_len());
                    let resp = endpoint.handle(&frame);
                    let bytes = encode(&resp).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
                    stream.write_all(&bytes).await?;
                }
                Err(CodecError::NeedMoreBytes { .. }) => break,
                Err(e) => return Err(io::Error::new(io::ErrorKind::InvalidData, e)),
            }
        }
        let n = stream.read(&mut chunk).await?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}
