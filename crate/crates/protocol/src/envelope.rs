//! Wire messages: one JSON object per line, tagged by `kind`.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::ProtocolError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Request {
        seq: u64,
        command: String,
        #[serde(default)]
        payload: Json,
    },
    Response {
        seq: u64,
        request_seq: u64,
        success: bool,
        command: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        message: Option<String>,
        #[serde(default)]
        payload: Json,
    },
    Event {
        seq: u64,
        event: String,
        #[serde(default)]
        payload: Json,
    },
}

impl Envelope {
    pub fn seq(&self) -> u64 {
        match self {
            Envelope::Request { seq, .. } | Envelope::Response { seq, .. } | Envelope::Event { seq, .. } => *seq,
        }
    }

    pub fn request(seq: u64, command: &str, payload: Json) -> Self {
        Envelope::Request { seq, command: command.to_owned(), payload }
    }

    /// Event name, for events.
    pub fn event_name(&self) -> Option<&str> {
        match self {
            Envelope::Event { event, .. } => Some(event),
            _ => None,
        }
    }

    pub fn payload(&self) -> &Json {
        match self {
            Envelope::Request { payload, .. } | Envelope::Response { payload, .. } | Envelope::Event { payload, .. } => {
                payload
            }
        }
    }
}

/// One line, without the trailing newline.
pub fn encode(e: &Envelope) -> String {
    serde_json::to_string(e).expect("envelopes serialize")
}

/// Parses exactly one JSON document; anything after it other than
/// whitespace is an error.
pub fn decode(line: &str) -> Result<Envelope, ProtocolError> {
    serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_payload_defaults_to_null() {
        let e = decode(r#"{"kind":"request","seq":1,"command":"continue"}"#).unwrap();
        assert_eq!(e, Envelope::request(1, "continue", Json::Null));
    }

    #[test]
    fn rejects_truncated_and_trailing_garbage() {
        assert!(decode(r#"{"kind":"#).is_err());
        assert!(decode(r#"{"kind":"request","seq":1,"command":"inspect"} x"#).is_err());
        assert!(decode(r#"{"kind":"request","seq":1,"command":"inspect"}   "#).is_ok());
        assert!(decode(r#"{"kind":"shout","seq":1}"#).is_err());
        assert!(decode(r#"{"kind":"request","seq":1,"command":"inspect","extra":1}"#).is_err());
    }

    #[test]
    fn encode_is_one_line() {
        let e = Envelope::Event { seq: 3, event: "output".into(), payload: json!({"text": "a\nb"}) };
        let line = encode(&e);
        assert!(!line.contains('\n'));
        assert_eq!(decode(&line).unwrap(), e);
    }
}
