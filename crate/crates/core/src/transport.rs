//! Envelope transports: in-process dispatch and MIS-WP/1 over TCP.
//!
//! Both paths encode and decode every request and response, so the codec
//! is exercised identically whichever transport a run uses.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use thiserror::Error;

use crate::codec::{decode_envelope, encode_envelope, read_frame, write_frame, CodecError, Envelope};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed by peer")]
    Closed,
}

/// Something that answers envelopes. Implementations do their own locking.
pub trait Handler: Send + Sync + 'static {
    fn handle(&self, request: &Envelope) -> Envelope;
}

/// Client side of a request/response exchange.
pub trait Transport {
    fn call(&mut self, request: &Envelope) -> Result<Envelope, TransportError>;

    /// Prefix for endpoint strings of services reachable through this transport.
    fn endpoint_base(&self) -> String;
}

/// Same-process dispatch through the full codec.
pub struct InProc<H: Handler> {
    handler: Arc<H>,
}

impl<H: Handler> InProc<H> {
    pub fn new(handler: Arc<H>) -> Self {
        InProc { handler }
    }
}

impl<H: Handler> Transport for InProc<H> {
    fn call(&mut self, request: &Envelope) -> Result<Envelope, TransportError> {
        let inbound = decode_envelope(&encode_envelope(request)?)?;
        let response = self.handler.handle(&inbound);
        Ok(decode_envelope(&encode_envelope(&response)?)?)
    }

    fn endpoint_base(&self) -> String {
        "inproc://mesh".to_owned()
    }
}

/// One MIS-WP/1 connection.
pub struct TcpTransport {
    peer: SocketAddr,
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr()?;
        Ok(TcpTransport { peer, reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream) })
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, request: &Envelope) -> Result<Envelope, TransportError> {
        write_frame(&mut self.writer, request)?;
        read_frame(&mut self.reader)?.ok_or(TransportError::Closed)
    }

    fn endpoint_base(&self) -> String {
        format!("tcp://{}", self.peer)
    }
}

/// A running MIS-WP/1 listener. Dropping it stops accepting connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits (it only does so after [`ServerHandle::stop`]).
    pub fn join(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn stop(&mut self) {
        if !self.stop.swap(true, Ordering::SeqCst) {
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
        }
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves `handler` on `listener`, one thread per connection.
pub fn serve<H: Handler>(listener: TcpListener, handler: Arc<H>) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let acceptor = thread::Builder::new().name("mis-accept".into()).spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let handler = Arc::clone(&handler);
            let _ = thread::Builder::new().name("mis-conn".into()).spawn(move || connection(stream, handler));
        }
    })?;
    Ok(ServerHandle { addr, stop, acceptor: Some(acceptor) })
}

fn connection<H: Handler>(stream: TcpStream, handler: Arc<H>) {
    let _ = stream.set_nodelay(true);
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let mut writer = BufWriter::new(&stream);
    // A frame that cannot be decoded carries no header to reply to, so the
    // connection is dropped.
    while let Ok(Some(request)) = read_frame(&mut reader) {
        let response = handler.handle(&request);
        if write_frame(&mut writer, &response).is_err() {
            break;
        }
    }
    drop(writer);
    let _ = stream.shutdown(Shutdown::Both);
}
