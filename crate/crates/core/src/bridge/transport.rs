use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::Duration;

use super::BridgeError;

/// A line-oriented duplex channel to a scorer session.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), BridgeError>;

    /// Next complete line, without its terminator.
    fn recv(&mut self, timeout: Duration) -> Result<String, BridgeError>;
}

enum Incoming {
    Line(String),
    /// Bytes followed by end of stream with no newline.
    Truncated(String),
    Closed,
    Failed(String),
}

fn spawn_reader<R: Read + Send + 'static>(reader: R) -> Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut buf = String::new();
            let msg = match reader.read_line(&mut buf) {
                Ok(0) => Incoming::Closed,
                Ok(_) if buf.ends_with('\n') => {
                    buf.pop();
                    if buf.ends_with('\r') {
                        buf.pop();
                    }
                    Incoming::Line(buf)
                }
                Ok(_) => Incoming::Truncated(buf),
                Err(e) => Incoming::Failed(e.to_string()),
            };
            let last = !matches!(msg, Incoming::Line(_));
            if tx.send(msg).is_err() || last {
                break;
            }
        }
    });
    rx
}

/// Reader thread plus writer over any byte streams.
pub struct StreamTransport {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<Incoming>,
    closed: bool,
}

impl StreamTransport {
    pub fn new<R, W>(reader: R, writer: W) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self { writer: Box::new(writer), incoming: spawn_reader(reader), closed: false }
    }

    pub fn tcp(addr: &str) -> Result<Self, BridgeError> {
        let stream = TcpStream::connect(addr).map_err(|e| BridgeError::Startup(format!("{addr}: {e}")))?;
        let reader = stream.try_clone().map_err(|e| BridgeError::Startup(e.to_string()))?;
        Ok(Self::new(reader, stream))
    }
}

impl Transport for StreamTransport {
    fn send(&mut self, line: &str) -> Result<(), BridgeError> {
        let io = |e: std::io::Error| BridgeError::Closed(format!("write failed: {e}"));
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, BridgeError> {
        if self.closed {
            return Err(BridgeError::Closed("session already ended".into()));
        }
        match self.incoming.recv_timeout(timeout) {
            Ok(Incoming::Line(l)) => Ok(l),
            Ok(Incoming::Truncated(partial)) => {
                self.closed = true;
                Err(BridgeError::Truncated(partial))
            }
            Ok(Incoming::Closed) | Err(RecvTimeoutError::Disconnected) => {
                self.closed = true;
                Err(BridgeError::Closed("end of stream".into()))
            }
            Ok(Incoming::Failed(e)) => {
                self.closed = true;
                Err(BridgeError::Closed(e))
            }
            Err(RecvTimeoutError::Timeout) => Err(BridgeError::Timeout(timeout)),
        }
    }
}

/// A scorer running as a child process, spoken to over its stdin and stdout.
/// The child is killed when the transport is dropped.
pub struct ChildTransport {
    child: Child,
    inner: StreamTransport,
}

impl ChildTransport {
    pub fn spawn(mut command: Command) -> Result<Self, BridgeError> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BridgeError::Startup(format!("{:?}: {e}", command.get_program())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self { child, inner: StreamTransport::new(stdout, stdin) })
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, line: &str) -> Result<(), BridgeError> {
        self.inner.send(line)
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, BridgeError> {
        self.inner.recv(timeout)
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-memory transport: the test side holds the other ends.
pub struct ChannelTransport {
    to_server: Sender<String>,
    from_server: Receiver<String>,
}

/// The far end of a [`ChannelTransport`].
pub struct ChannelPeer {
    pub requests: Receiver<String>,
    pub responses: Sender<String>,
}

impl ChannelTransport {
    pub fn pair() -> (Self, ChannelPeer) {
        let (to_server, requests) = mpsc::channel();
        let (responses, from_server) = mpsc::channel();
        (Self { to_server, from_server }, ChannelPeer { requests, responses })
    }
}

impl Transport for ChannelTransport {
    fn send(&mut self, line: &str) -> Result<(), BridgeError> {
        self.to_server.send(line.to_string()).map_err(|_| BridgeError::Closed("peer dropped".into()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, BridgeError> {
        match self.from_server.recv_timeout(timeout) {
            Ok(l) => Ok(l),
            Err(RecvTimeoutError::Timeout) => Err(BridgeError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(BridgeError::Closed("peer dropped".into())),
        }
    }
}
