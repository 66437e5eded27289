//! JSON messages exchanged over the chat connection, one per text frame.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    #[serde(rename = "session.start")]
    SessionStart,
    #[serde(rename = "agent.utterance")]
    AgentUtterance,
    #[serde(rename = "user.utterance")]
    UserUtterance,
    #[serde(rename = "game.state")]
    GameState,
    #[serde(rename = "game.end")]
    GameEnd,
    #[serde(rename = "error")]
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 6] = [
        MessageType::SessionStart,
        MessageType::AgentUtterance,
        MessageType::UserUtterance,
        MessageType::GameState,
        MessageType::GameEnd,
        MessageType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::SessionStart => "session.start",
            MessageType::AgentUtterance => "agent.utterance",
            MessageType::UserUtterance => "user.utterance",
            MessageType::GameState => "game.state",
            MessageType::GameEnd => "game.end",
            MessageType::Error => "error",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageType {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub session_id: String,
    pub turn: u64,
    pub text: String,
    pub phase: String,
    #[serde(serialize_with = "ser_ts", deserialize_with = "de_ts")]
    pub ts: DateTime<Utc>,
}

fn ser_ts<S: Serializer>(ts: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_ts(ts))
}

fn de_ts<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    let s = String::deserialize(d)?;
    DateTime::parse_from_rfc3339(&s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(serde::de::Error::custom)
}

/// RFC 3339 in UTC with a `Z` suffix and only as many fractional digits as needed.
pub fn format_ts(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

impl WireMessage {
    pub fn new(
        kind: MessageType,
        session_id: impl Into<String>,
        turn: u64,
        text: impl Into<String>,
        phase: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            session_id: session_id.into(),
            turn,
            text: text.into(),
            phase: phase.into(),
            ts: Utc::now(),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    /// Parses one frame. Unknown fields are ignored; all six known fields are required.
    pub fn decode(text: &str) -> Result<Self, ProtocolError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if let Some(t) = value.get("type").and_then(|t| t.as_str()) {
            t.parse::<MessageType>()?;
        }
        serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(secs: i64, nanos: u32) -> DateTime<Utc> {
        Utc.timestamp_opt(secs, nanos).unwrap()
    }

    #[test]
    fn canonical_encoding() {
        let mut m = WireMessage::new(MessageType::UserUtterance, "abc", 3, "yes", "agent-asks");
        m.ts = at(1_700_000_000, 0);
        assert_eq!(
            m.encode(),
            r#"{"type":"user.utterance","session_id":"abc","turn":3,"text":"yes","phase":"agent-asks","ts":"2023-11-14T22:13:20Z"}"#
        );
        m.ts = at(1_700_000_000, 120_000_000);
        assert!(m.encode().contains(r#""ts":"2023-11-14T22:13:20.120Z""#));
    }

    #[test]
    fn unknown_type_is_named() {
        let err = WireMessage::decode(r#"{"type":"bogus"}"#).unwrap_err();
        assert_eq!(err, ProtocolError::UnknownType("bogus".into()));
    }

    #[test]
    fn missing_field_is_malformed() {
        let err = WireMessage::decode(r#"{"type":"user.utterance","session_id":"","turn":0,"text":"hi","phase":""}"#)
            .unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed(m) if m.contains("ts")));
        assert!(matches!(
            WireMessage::decode("not json"),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(WireMessage::decode(
            r#"{"type":"user.utterance","session_id":"","turn":-1,"text":"","phase":"","ts":"2023-11-14T22:13:20Z"}"#
        )
        .is_err());
    }

    #[test]
    fn extra_fields_ignored_and_offsets_normalized() {
        let m = WireMessage::decode(
            r#"{"type":"game.end","session_id":"s","turn":1,"text":"","phase":"end","ts":"2023-11-14T23:13:20+01:00","extra":[1]}"#,
        )
        .unwrap();
        assert_eq!(m.ts, at(1_700_000_000, 0));
        assert_eq!(m.kind, MessageType::GameEnd);
    }
}
