//! Wire format: one JSON object per line, UTF-8, `\n`-terminated.
//!
//! Every message carries `kind` and `frame_id`. Requests are `hello`,
//! `init`, `track` and `reset`; responses are `hello`, `ack`, `box` and
//! `error`. A response always echoes the request's `frame_id`.
//!
//! ```text
//! -> {"kind":"hello","frame_id":0,"version":"iouattack-oracle/1"}
//! <- {"kind":"hello","frame_id":0,"version":"iouattack-oracle/1"}
//! -> {"kind":"init","frame_id":0,"frame":{"width":2,"height":1,"channels":1,"png":"iVBO..."},"box":{"x":0.0,"y":0.0,"w":1.0,"h":1.0}}
//! <- {"kind":"ack","frame_id":0}
//! -> {"kind":"track","frame_id":1,"frame":{...},"commit":true}
//! <- {"kind":"box","frame_id":1,"box":{"x":0.0,"y":0.0,"w":1.0,"h":1.0}}
//! -> {"kind":"reset","frame_id":2}
//! <- {"kind":"ack","frame_id":2}
//! <- {"kind":"error","frame_id":3,"message":"uninitialized"}
//! ```
//!
//! `commit: false` asks for a probe: the tracker answers but must leave its
//! state untouched. Frames are 8-bit PNG, standard base64 with padding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::image::{ImageBuffer, Shape};

use super::BridgeError;

pub const PROTOCOL_VERSION: &str = "iouattack-oracle/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleMessage {
    Hello {
        frame_id: u64,
        version: String,
    },
    Init {
        frame_id: u64,
        frame: FramePayload,
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    Track {
        frame_id: u64,
        frame: FramePayload,
        commit: bool,
    },
    Reset {
        frame_id: u64,
    },
    Ack {
        frame_id: u64,
    },
    Box {
        frame_id: u64,
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
    Error {
        frame_id: u64,
        message: String,
    },
}

impl OracleMessage {
    pub fn frame_id(&self) -> u64 {
        match self {
            OracleMessage::Hello { frame_id, .. }
            | OracleMessage::Init { frame_id, .. }
            | OracleMessage::Track { frame_id, .. }
            | OracleMessage::Reset { frame_id }
            | OracleMessage::Ack { frame_id }
            | OracleMessage::Box { frame_id, .. }
            | OracleMessage::Error { frame_id, .. } => *frame_id,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            OracleMessage::Hello { .. } => "hello",
            OracleMessage::Init { .. } => "init",
            OracleMessage::Track { .. } => "track",
            OracleMessage::Reset { .. } => "reset",
            OracleMessage::Ack { .. } => "ack",
            OracleMessage::Box { .. } => "box",
            OracleMessage::Error { .. } => "error",
        }
    }

    /// Serializes to a single line without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, BridgeError> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| BridgeError::Protocol(format!("malformed message: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramePayload {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub png: String,
}

impl FramePayload {
    /// Quantizes to 8 bits and encodes as base64 PNG.
    pub fn encode(frame: &ImageBuffer) -> Result<Self, BridgeError> {
        let png = frame.encode_png().map_err(|e| BridgeError::Protocol(format!("png encode failed: {e}")))?;
        Ok(FramePayload {
            width: frame.width(),
            height: frame.height(),
            channels: frame.channels(),
            png: STANDARD.encode(png),
        })
    }

    pub fn decode(&self) -> Result<ImageBuffer, BridgeError> {
        let bytes = STANDARD
            .decode(&self.png)
            .map_err(|e| BridgeError::Protocol(format!("bad base64 frame: {e}")))?;
        let img = ImageBuffer::decode_png(&bytes).map_err(|e| BridgeError::Protocol(format!("bad png frame: {e}")))?;
        let declared = Shape::new(self.width, self.height, self.channels)
            .map_err(|e| BridgeError::Protocol(format!("bad frame descriptor: {e}")))?;
        if img.shape() != declared {
            return Err(BridgeError::Protocol(format!(
                "frame descriptor says {declared} but png holds {}",
                img.shape()
            )));
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wire_field_names() {
        let b = BoundingBox::new(1.0, 2.5, 3.0, 4.0).unwrap();
        let m = OracleMessage::Box { frame_id: 7, bbox: b };
        assert_eq!(m.to_line(), r#"{"kind":"box","frame_id":7,"box":{"x":1.0,"y":2.5,"w":3.0,"h":4.0}}"#);
        let e = OracleMessage::Error { frame_id: 3, message: "uninitialized".into() };
        assert_eq!(e.to_line(), r#"{"kind":"error","frame_id":3,"message":"uninitialized"}"#);
        assert_eq!(OracleMessage::Ack { frame_id: 0 }.to_line(), r#"{"kind":"ack","frame_id":0}"#);
    }

    #[test]
    fn rejects_malformed_lines() {
        for bad in [
            "not json",
            r#"{"kind":"launch","frame_id":1}"#,
            r#"{"kind":"box","frame_id":1,"box":{"x":0,"y":0,"w":-1,"h":1}}"#,
            r#"{"kind":"ack"}"#,
        ] {
            assert!(matches!(OracleMessage::from_line(bad), Err(BridgeError::Protocol(_))), "{bad}");
        }
    }

    #[test]
    fn frame_payload_round_trip_is_lossless_after_quantization() {
        let img = ImageBuffer::from_fn(Shape::new(5, 4, 3).unwrap(), |x, y, c| (x * 40 + y * 13 + c) as f64 + 0.3);
        let payload = FramePayload::encode(&img).unwrap();
        assert_eq!(payload.decode().unwrap(), img.quantized());
        let mut lying = payload.clone();
        lying.width = 6;
        assert!(lying.decode().is_err());
    }

    proptest! {
        #[test]
        fn reserialization_is_identity(id in 0u64..1_000_000, x in -1e4f64..1e4, y in -1e4f64..1e4,
                                       w in 1e-3f64..1e4, h in 1e-3f64..1e4, msg in "[ -~]{0,40}") {
            let b = BoundingBox::new(x, y, w, h).unwrap();
            for m in [
                OracleMessage::Box { frame_id: id, bbox: b },
                OracleMessage::Error { frame_id: id, message: msg.clone() },
                OracleMessage::Reset { frame_id: id },
            ] {
                let line = m.to_line();
                let back = OracleMessage::from_line(&line).unwrap();
                prop_assert_eq!(&back, &m);
                prop_assert_eq!(back.to_line(), line);
            }
        }
    }
}
