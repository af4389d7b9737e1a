//! MIS-WP/1 envelope codec.
//!
//! A frame is a 4-byte big-endian payload length followed by the canonical
//! UTF-8 document `{"body":{..},"header":{..}}`: keys sorted at every level,
//! no whitespace. An empty body is omitted, so a header-only document is the
//! canonical form of an envelope without body fields.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

/// Largest serialized body accepted by the encoder.
pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

/// Largest payload a stream reader will allocate for.
pub const MAX_FRAME_BYTES: usize = MAX_BODY_BYTES + 64 * 1024;

pub type Body = Map<String, Value>;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("serialized body is {0} bytes, above the 16 MiB limit")]
    BodyTooLarge(usize),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("missing header field `{0}`")]
    MissingHeaderField(&'static str),
    #[error("envelope operation is empty")]
    EmptyOperation,
    #[error("body field `{field}`: {message}")]
    BodyField { field: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Header {
    pub message_id: String,
    pub correlation_id: String,
    pub session_id: String,
    pub from_service: String,
    pub to_service: String,
    pub operation: String,
}

const HEADER_FIELDS: [&str; 6] =
    ["correlation_id", "from_service", "message_id", "operation", "session_id", "to_service"];

impl Header {
    fn field(&self, name: &str) -> &str {
        match name {
            "message_id" => &self.message_id,
            "correlation_id" => &self.correlation_id,
            "session_id" => &self.session_id,
            "from_service" => &self.from_service,
            "to_service" => &self.to_service,
            "operation" => &self.operation,
            _ => unreachable!("unknown header field {name}"),
        }
    }

    fn field_mut(&mut self, name: &str) -> &mut String {
        match name {
            "message_id" => &mut self.message_id,
            "correlation_id" => &mut self.correlation_id,
            "session_id" => &mut self.session_id,
            "from_service" => &mut self.from_service,
            "to_service" => &mut self.to_service,
            "operation" => &mut self.operation,
            _ => unreachable!("unknown header field {name}"),
        }
    }
}

/// A request or response message: routing header plus a document body.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Envelope {
    pub header: Header,
    pub body: Body,
}

impl Envelope {
    pub fn request(
        message_id: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        operation: impl Into<String>,
    ) -> Self {
        Envelope {
            header: Header {
                message_id: message_id.into(),
                from_service: from.into(),
                to_service: to.into(),
                operation: operation.into(),
                ..Header::default()
            },
            body: Body::new(),
        }
    }

    /// Response addressed back to the sender of `self`.
    pub fn reply(&self, message_id: impl Into<String>, operation: impl Into<String>) -> Self {
        Envelope {
            header: Header {
                message_id: message_id.into(),
                correlation_id: self.header.message_id.clone(),
                session_id: self.header.session_id.clone(),
                from_service: self.header.to_service.clone(),
                to_service: self.header.from_service.clone(),
                operation: operation.into(),
            },
            body: Body::new(),
        }
    }

    pub fn with_session(mut self, session_id: impl Into<String>) -> Self {
        self.header.session_id = session_id.into();
        self
    }

    /// Serializes `value` into body field `field`.
    pub fn put<T: Serialize + ?Sized>(&mut self, field: &str, value: &T) -> Result<(), CodecError> {
        let v = serde_json::to_value(value)
            .map_err(|e| CodecError::BodyField { field: field.to_owned(), message: e.to_string() })?;
        self.body.insert(field.to_owned(), v);
        Ok(())
    }

    pub fn with<T: Serialize + ?Sized>(mut self, field: &str, value: &T) -> Result<Self, CodecError> {
        self.put(field, value)?;
        Ok(self)
    }

    /// Deserializes body field `field`.
    pub fn get<T: DeserializeOwned>(&self, field: &str) -> Result<T, CodecError> {
        let v = self
            .body
            .get(field)
            .ok_or_else(|| CodecError::BodyField { field: field.to_owned(), message: "missing".to_owned() })?;
        T::deserialize(v).map_err(|e| CodecError::BodyField { field: field.to_owned(), message: e.to_string() })
    }

    /// Like [`Envelope::get`] but absent fields yield `None`.
    pub fn get_opt<T: DeserializeOwned>(&self, field: &str) -> Result<Option<T>, CodecError> {
        if self.body.contains_key(field) {
            self.get(field).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Writes `value` as canonical JSON: object keys sorted, no whitespace.
pub fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_canonical(&map[key], out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaper is already minimal and deterministic.
    serde_json::to_writer(&mut *out, s).expect("writing to a Vec cannot fail");
}

/// Canonical bytes of any serializable value.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let mut out = Vec::new();
    write_canonical(&v, &mut out);
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    to_canonical_vec(value).map(|v| String::from_utf8(v).expect("canonical JSON is UTF-8"))
}

/// Encodes `e` into a length-prefixed frame.
pub fn encode_envelope(e: &Envelope) -> Result<Vec<u8>, CodecError> {
    if e.header.operation.is_empty() {
        return Err(CodecError::EmptyOperation);
    }
    let mut body_bytes = Vec::new();
    if !e.body.is_empty() {
        write_canonical(&Value::Object(e.body.clone()), &mut body_bytes);
        if body_bytes.len() > MAX_BODY_BYTES {
            return Err(CodecError::BodyTooLarge(body_bytes.len()));
        }
    }

    let mut payload = Vec::with_capacity(body_bytes.len() + 256);
    payload.push(b'{');
    if !body_bytes.is_empty() {
        payload.extend_from_slice(b"\"body\":");
        payload.extend_from_slice(&body_bytes);
        payload.push(b',');
    }
    payload.extend_from_slice(b"\"header\":{");
    for (i, name) in HEADER_FIELDS.iter().enumerate() {
        if i > 0 {
            payload.push(b',');
        }
        write_string(name, &mut payload);
        payload.push(b':');
        write_string(e.header.field(name), &mut payload);
    }
    payload.extend_from_slice(b"}}");

    let len = u32::try_from(payload.len()).map_err(|_| CodecError::BodyTooLarge(body_bytes.len()))?;
    let mut frame = Vec::with_capacity(payload.len() + 4);
    frame.extend_from_slice(&len.to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decodes a complete frame produced by [`encode_envelope`].
pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::MalformedFrame(format!("{} bytes is shorter than the length prefix", bytes.len())));
    }
    let declared = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let payload = &bytes[4..];
    if declared != payload.len() {
        return Err(CodecError::MalformedFrame(format!(
            "length prefix says {declared} bytes, payload has {}",
            payload.len()
        )));
    }
    decode_payload(payload)
}

/// Decodes the document part of a frame.
pub fn decode_payload(payload: &[u8]) -> Result<Envelope, CodecError> {
    let doc: Value = serde_json::from_slice(payload).map_err(|e| CodecError::MalformedDocument(e.to_string()))?;
    let Value::Object(mut top) = doc else {
        return Err(CodecError::MalformedDocument("top level is not an object".into()));
    };
    let body = match top.remove("body") {
        None => Body::new(),
        Some(Value::Object(b)) => b,
        Some(_) => return Err(CodecError::MalformedDocument("body is not an object".into())),
    };
    let header_doc = match top.remove("header") {
        None => return Err(CodecError::MissingHeaderField("header")),
        Some(Value::Object(h)) => h,
        Some(_) => return Err(CodecError::MalformedDocument("header is not an object".into())),
    };
    if let Some(extra) = top.keys().next() {
        return Err(CodecError::MalformedDocument(format!("unexpected top-level key `{extra}`")));
    }

    let mut header = Header::default();
    for name in HEADER_FIELDS {
        match header_doc.get(name) {
            None => return Err(CodecError::MissingHeaderField(name)),
            Some(Value::String(s)) => *header.field_mut(name) = s.clone(),
            Some(_) => return Err(CodecError::MalformedDocument(format!("header field `{name}` is not a string"))),
        }
    }
    if let Some(extra) = header_doc.keys().find(|k| !HEADER_FIELDS.contains(&k.as_str())) {
        return Err(CodecError::MalformedDocument(format!("unexpected header field `{extra}`")));
    }
    if header.operation.is_empty() {
        return Err(CodecError::MissingHeaderField("operation"));
    }
    Ok(Envelope { header, body })
}

/// Writes one envelope to a stream.
pub fn write_frame<W: Write>(w: &mut W, e: &Envelope) -> Result<(), CodecError> {
    let frame = encode_envelope(e)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one envelope from a stream. Returns `Ok(None)` on a clean EOF
/// before the length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Envelope>, CodecError> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut prefix[filled..])? {
            0 if filled == 0 => return Ok(None),
            0 => return Err(CodecError::MalformedFrame("stream ended inside the length prefix".into())),
            n => filled += n,
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(CodecError::MalformedFrame(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CodecError::MalformedFrame("stream ended inside the payload".into()),
        _ => CodecError::Io(e),
    })?;
    decode_payload(&payload).map(Some)
}
