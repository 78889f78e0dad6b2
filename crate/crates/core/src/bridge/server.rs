use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use crate::trackers::{TrackerFactory, TrackerSession};

use super::protocol::{OracleMessage, PROTOCOL_VERSION};
use super::BridgeError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub requests: u64,
    pub errors: u64,
}

/// Answers requests from `reader` on `writer` until the stream ends.
///
/// Malformed or out-of-contract requests get an `error` response and the
/// connection stays up. Only transport failures end the loop early.
pub fn serve<R: BufRead, W: Write>(
    factory: &dyn TrackerFactory,
    reader: R,
    mut writer: W,
) -> Result<ServeStats, BridgeError> {
    let mut session: Option<Box<dyn TrackerSession>> = None;
    let mut stats = ServeStats::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        stats.requests += 1;
        let response = match OracleMessage::from_line(&line) {
            Ok(request) => handle(factory, &mut session, request),
            Err(e) => OracleMessage::Error { frame_id: salvage_frame_id(&line), message: e.to_string() },
        };
        if matches!(response, OracleMessage::Error { .. }) {
            stats.errors += 1;
        }
        writer.write_all(response.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(stats)
}

/// Accepts connections forever, serving each on its own thread with its own
/// sessions.
pub fn serve_tcp(factory: Arc<dyn TrackerFactory>, listener: TcpListener) -> Result<(), BridgeError> {
    for stream in listener.incoming() {
        let stream = stream?;
        let factory = Arc::clone(&factory);
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(_) => return,
            };
            let _ = serve(factory.as_ref(), reader, stream);
        });
    }
    Ok(())
}

fn handle(
    factory: &dyn TrackerFactory,
    session: &mut Option<Box<dyn TrackerSession>>,
    request: OracleMessage,
) -> OracleMessage {
    let frame_id = request.frame_id();
    let error = |message: String| OracleMessage::Error { frame_id, message };
    match request {
        OracleMessage::Hello { version, .. } => {
            if version == PROTOCOL_VERSION {
                OracleMessage::Hello { frame_id, version: PROTOCOL_VERSION.to_string() }
            } else {
                error(format!("unsupported protocol version {version:?}, expected {PROTOCOL_VERSION:?}"))
            }
        }
        OracleMessage::Init { frame, bbox, .. } => {
            let frame = match frame.decode() {
                Ok(f) => f,
                Err(e) => return error(e.to_string()),
            };
            if session.is_none() {
                match factory.create() {
                    Ok(s) => *session = Some(s),
                    Err(e) => return error(e.to_string()),
                }
            }
            let s = session.as_mut().expect("created above");
            match s.init(frame_id as usize, &frame, bbox) {
                Ok(()) => OracleMessage::Ack { frame_id },
                Err(e) => error(e.to_string()),
            }
        }
        OracleMessage::Track { frame, commit, .. } => {
            let Some(s) = session.as_mut() else {
                return error("uninitialized".to_string());
            };
            let frame = match frame.decode() {
                Ok(f) => f,
                Err(e) => return error(e.to_string()),
            };
            let result = if commit {
                s.track(frame_id as usize, &frame)
            } else {
                s.probe(frame_id as usize, &frame)
            };
            match result {
                Ok(bbox) => OracleMessage::Box { frame_id, bbox },
                Err(e) => error(e.to_string()),
            }
        }
        OracleMessage::Reset { .. } => {
            if let Some(mut s) = session.take() {
                if let Err(e) = s.reset() {
                    return error(e.to_string());
                }
            }
            OracleMessage::Ack { frame_id }
        }
        other => error(format!("unexpected {} message from client", other.kind())),
    }
}

fn salvage_frame_id(line: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("frame_id").and_then(|id| id.as_u64()))
        .unwrap_or(0)
}
