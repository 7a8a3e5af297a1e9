//! Byte-level transports: newline-delimited lines over any reader/writer
//! pair, and WebSocket text messages over TCP.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use crate::envelope::encode;
use crate::server::Server;
use crate::ProtocolError;

/// How long a new TCP connection may stay silent before it is treated as a
/// raw line client rather than a WebSocket handshake.
pub const HANDSHAKE_WAIT: Duration = Duration::from_millis(300);

const POLL: Duration = Duration::from_millis(5);

pub enum Incoming {
    Line(String),
    /// Nothing arrived (non-blocking receive only).
    Idle,
    Closed,
}

pub trait Transport {
    /// Receives one message. With `block` false, returns `Idle` instead of
    /// waiting.
    fn receive(&mut self, block: bool) -> io::Result<Incoming>;
    fn send(&mut self, line: &str) -> io::Result<()>;
}

/// Lines over a reader/writer pair; the reader runs on its own thread so
/// the engine loop can poll without blocking.
pub struct LineTransport<W: Write> {
    lines: Receiver<io::Result<String>>,
    writer: W,
}

impl<W: Write> LineTransport<W> {
    pub fn new<R: BufRead + Send + 'static>(reader: R, writer: W) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        LineTransport { lines: rx, writer }
    }
}

impl<W: Write> Transport for LineTransport<W> {
    fn receive(&mut self, block: bool) -> io::Result<Incoming> {
        let got = if block {
            self.lines.recv().map_err(|_| TryRecvError::Disconnected)
        } else {
            self.lines.try_recv()
        };
        match got {
            Ok(Ok(line)) => Ok(Incoming::Line(line.trim_end_matches('\r').to_owned())),
            Ok(Err(e)) => Err(e),
            Err(TryRecvError::Empty) => Ok(Incoming::Idle),
            Err(TryRecvError::Disconnected) => Ok(Incoming::Closed),
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()
    }
}

/// One envelope per WebSocket text message.
pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    pub fn accept(stream: TcpStream) -> Result<Self, ProtocolError> {
        stream.set_read_timeout(None)?;
        let ws = tungstenite::accept(stream).map_err(|e| match e {
            tungstenite::HandshakeError::Failure(e) => ProtocolError::WebSocket(e),
            tungstenite::HandshakeError::Interrupted(_) => {
                ProtocolError::Io(io::Error::new(ErrorKind::WouldBlock, "websocket handshake interrupted"))
            }
        })?;
        Ok(WsTransport { ws })
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

impl Transport for WsTransport {
    fn receive(&mut self, block: bool) -> io::Result<Incoming> {
        self.ws.get_ref().set_read_timeout(if block { None } else { Some(POLL) })?;
        loop {
            match self.ws.read() {
                Ok(Message::Text(t)) => return Ok(Incoming::Line(t.as_str().to_owned())),
                Ok(Message::Binary(b)) => return Ok(Incoming::Line(String::from_utf8_lossy(&b).into_owned())),
                Ok(Message::Close(_)) => return Ok(Incoming::Closed),
                Ok(_) => continue,
                Err(tungstenite::Error::Io(e)) if is_timeout(&e) => return Ok(Incoming::Idle),
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return Ok(Incoming::Closed)
                }
                Err(tungstenite::Error::Io(e)) => return Err(e),
                Err(e) => return Err(io::Error::other(e)),
            }
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.ws.get_ref().set_read_timeout(None)?;
        self.ws.send(Message::text(line)).map_err(|e| match e {
            tungstenite::Error::Io(e) => e,
            other => io::Error::other(other),
        })
    }
}

/// Drives one frontend connection until it disconnects. The session is
/// ended (logging `session_end`) when the connection closes.
pub fn serve_connection(server: &mut Server, transport: &mut dyn Transport) -> Result<(), ProtocolError> {
    let send_all = |t: &mut dyn Transport, out: Vec<crate::Envelope>| -> io::Result<()> {
        for e in out {
            t.send(&encode(&e))?;
        }
        Ok(())
    };
    let initial = server.pending_events();
    send_all(transport, initial)?;
    while !server.is_closed() {
        let incoming = match transport.receive(!server.is_running()) {
            Ok(i) => i,
            Err(e) => {
                server.close();
                return Err(e.into());
            }
        };
        let out = match incoming {
            Incoming::Line(line) if line.trim().is_empty() => continue,
            Incoming::Line(line) => server.handle_line(&line),
            Incoming::Idle => server.run_slice(),
            Incoming::Closed => {
                server.close();
                break;
            }
        };
        if let Err(e) = send_all(transport, out) {
            server.close();
            return Err(e.into());
        }
    }
    Ok(())
}

pub fn serve_stdio(server: &mut Server) -> Result<(), ProtocolError> {
    let stdin = BufReader::new(io::stdin());
    let mut t = LineTransport::new(stdin, io::stdout());
    serve_connection(server, &mut t)
}

/// Binds a loopback listener, reporting an occupied port as
/// [`ProtocolError::PortInUse`].
pub fn bind(port: u16) -> Result<TcpListener, ProtocolError> {
    TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => ProtocolError::PortInUse(port),
        _ => ProtocolError::Io(e),
    })
}

/// Waits briefly for the first bytes; an HTTP `GET` means a WebSocket
/// handshake.
fn is_websocket(stream: &TcpStream) -> io::Result<bool> {
    stream.set_read_timeout(Some(HANDSHAKE_WAIT))?;
    let mut buf = [0u8; 4];
    let deadline = std::time::Instant::now() + HANDSHAKE_WAIT;
    loop {
        match stream.peek(&mut buf) {
            Ok(n) if n >= 4 || n == 0 => return Ok(&buf[..n] == b"GET "),
            Ok(n) if !b"GET ".starts_with(&buf[..n]) => return Ok(false),
            Ok(_) if std::time::Instant::now() >= deadline => return Ok(false),
            Ok(_) => thread::sleep(POLL),
            Err(e) if is_timeout(&e) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
}

/// Accepts a single frontend on `listener` (raw lines or WebSocket) and
/// serves it until it disconnects.
pub fn serve_tcp_once(server: &mut Server, listener: &TcpListener) -> Result<(), ProtocolError> {
    let (stream, peer) = listener.accept()?;
    log::info!("frontend connected from {peer}");
    let result = if is_websocket(&stream)? {
        let mut t = WsTransport::accept(stream)?;
        serve_connection(server, &mut t)
    } else {
        stream.set_read_timeout(None)?;
        let reader = BufReader::new(stream.try_clone()?);
        let mut t = LineTransport::new(reader, stream);
        serve_connection(server, &mut t)
    };
    log::info!("frontend {peer} disconnected");
    result
}

