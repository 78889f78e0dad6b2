use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use crate::bbox::BoundingBox;
use crate::image::ImageBuffer;
use crate::trackers::{TrackerError, TrackerSession};

use super::protocol::{FramePayload, OracleMessage, PROTOCOL_VERSION};
use super::BridgeError;

/// Where a remote tracker lives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    /// Program and arguments, spawned with piped stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a listening oracle server.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = BridgeError;

    /// `tcp://host:port` selects TCP; anything else is a whitespace-split command line.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let argv: Vec<String> = s.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(BridgeError::Protocol("empty oracle command".into()));
        }
        Ok(Endpoint::Command(argv))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Command(argv) => write!(f, "{}", argv.join(" ")),
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ConnectOptions {
    /// Per-request response deadline.
    pub timeout: Duration,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions { timeout: Duration::from_secs(30) }
    }
}

/// A [`TrackerSession`] whose tracker runs on the other side of the protocol.
pub struct RemoteSession {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    timeout: Duration,
    peer: String,
}

impl fmt::Debug for RemoteSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteSession").field("peer", &self.peer).finish()
    }
}

/// Opens a transport and performs the version handshake.
pub fn connect(endpoint: &Endpoint, options: ConnectOptions) -> Result<RemoteSession, BridgeError> {
    let mut session = match endpoint {
        Endpoint::Command(argv) => {
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|source| BridgeError::Spawn { command: endpoint.to_string(), source })?;
            let stdin = child.stdin.take().expect("stdin piped");
            let stdout = child.stdout.take().expect("stdout piped");
            RemoteSession {
                writer: Box::new(stdin),
                lines: spawn_reader(stdout),
                child: Some(child),
                timeout: options.timeout,
                peer: endpoint.to_string(),
            }
        }
        Endpoint::Tcp(addr) => {
            let stream = TcpStream::connect(addr)
                .map_err(|source| BridgeError::Connect { endpoint: endpoint.to_string(), source })?;
            stream.set_nodelay(true)?;
            let reader = stream.try_clone()?;
            RemoteSession {
                writer: Box::new(stream),
                lines: spawn_reader(reader),
                child: None,
                timeout: options.timeout,
                peer: endpoint.to_string(),
            }
        }
    };
    match session.request(OracleMessage::Hello { frame_id: 0, version: PROTOCOL_VERSION.to_string() })? {
        OracleMessage::Hello { version, .. } if version == PROTOCOL_VERSION => Ok(session),
        OracleMessage::Hello { version, .. } => {
            Err(BridgeError::Protocol(format!("peer speaks {version:?}, expected {PROTOCOL_VERSION:?}")))
        }
        other => Err(BridgeError::Protocol(format!("expected hello, got {}", other.kind()))),
    }
}

fn spawn_reader(source: impl Read + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(source).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl RemoteSession {
    /// Sends one request and waits for its response.
    fn request(&mut self, request: OracleMessage) -> Result<OracleMessage, BridgeError> {
        let mut line = request.to_line();
        line.push('\n');
        self.writer.write_all(line.as_bytes()).map_err(closed_or_io)?;
        self.writer.flush().map_err(closed_or_io)?;
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(BridgeError::Io(e)),
            Err(RecvTimeoutError::Timeout) => return Err(BridgeError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::Closed),
        };
        let response = OracleMessage::from_line(&reply)?;
        if response.frame_id() != request.frame_id() {
            return Err(BridgeError::Protocol(format!(
                "response frame_id {} does not match request frame_id {}",
                response.frame_id(),
                request.frame_id()
            )));
        }
        match response {
            OracleMessage::Error { message, .. } => Err(BridgeError::Remote(message)),
            ok => Ok(ok),
        }
    }

    fn expect_box(&mut self, request: OracleMessage) -> Result<BoundingBox, TrackerError> {
        match self.request(request)? {
            OracleMessage::Box { bbox, .. } => Ok(bbox),
            other => Err(BridgeError::Protocol(format!("expected box, got {}", other.kind())).into()),
        }
    }

    fn expect_ack(&mut self, request: OracleMessage) -> Result<(), TrackerError> {
        match self.request(request)? {
            OracleMessage::Ack { .. } => Ok(()),
            other => Err(BridgeError::Protocol(format!("expected ack, got {}", other.kind())).into()),
        }
    }
}

fn closed_or_io(e: std::io::Error) -> BridgeError {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        BridgeError::Closed
    } else {
        BridgeError::Io(e)
    }
}

impl TrackerSession for RemoteSession {
    fn init(&mut self, frame_index: usize, frame: &ImageBuffer, bbox: BoundingBox) -> Result<(), TrackerError> {
        let frame = FramePayload::encode(frame)?;
        self.expect_ack(OracleMessage::Init { frame_id: frame_index as u64, frame, bbox })
    }

    fn track(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let frame = FramePayload::encode(frame)?;
        self.expect_box(OracleMessage::Track { frame_id: frame_index as u64, frame, commit: true })
    }

    fn probe(&mut self, frame_index: usize, frame: &ImageBuffer) -> Result<BoundingBox, TrackerError> {
        let frame = FramePayload::encode(frame)?;
        self.expect_box(OracleMessage::Track { frame_id: frame_index as u64, frame, commit: false })
    }

    fn reset(&mut self) -> Result<(), TrackerError> {
        self.expect_ack(OracleMessage::Reset { frame_id: 0 })
    }
}

impl Drop for RemoteSession {
    fn drop(&mut self) {
        // Closing our end of the pipe is the shutdown signal for a child oracle.
        self.writer = Box::new(std::io::sink());
        if let Some(child) = self.child.as_mut() {
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
