//! Line-delimited JSON protocol for external logit providers.
//!
//! Every frame is one JSON object on one line.
//!
//! ```text
//! -> {"op":"vocab"}
//! <- {"tokens":["<s>","def",...]}
//! -> {"op":"logits","prompt_ids":[3,9],"generated_ids":[]}
//! <- {"logits":[-1.5,0.25,...]}          or {"logits_b64":"<base64 LE f32>"}
//! <- {"error":"..."}                      on a malformed request
//! ```
//!
//! The client fetches the vocabulary once, then sends one `logits` request per
//! decoding step and waits for its reply.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use crate::scalar::Scalar;
use crate::types::{GenerationContext, LogitVector, TokenId, Vocabulary};

use super::{LogitSource, SourceError};

/// Pack f32 values little-endian and base64 them.
pub fn encode_logits_b64(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_logits_b64(text: &str) -> Result<Vec<f32>, SourceError> {
    let bytes = B64.decode(text).map_err(|e| SourceError::Protocol(format!("logits_b64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(SourceError::Protocol(format!("logits_b64 holds {} bytes, not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
}

fn ids_field(frame: &Value, name: &str) -> Result<Vec<TokenId>, String> {
    let arr = frame.get(name).and_then(Value::as_array).ok_or_else(|| format!("missing array field {name:?}"))?;
    arr.iter()
        .map(|v| v.as_u64().filter(|&x| x <= TokenId::MAX as u64).map(|x| x as TokenId))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| format!("{name:?} must hold token ids"))
}

/// Parse a `{"logits": ...}` or `{"logits_b64": ...}` reply.
pub fn parse_logits_reply(line: &str) -> Result<Vec<f32>, SourceError> {
    let frame: Value = serde_json::from_str(line).map_err(|e| SourceError::Protocol(format!("bad frame: {e}")))?;
    if let Some(err) = frame.get("error") {
        return Err(SourceError::Protocol(format!("peer error: {}", err.as_str().unwrap_or(&err.to_string()))));
    }
    if let Some(arr) = frame.get("logits").and_then(Value::as_array) {
        return arr
            .iter()
            .map(|v| v.as_f64().map(|x| x as f32))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SourceError::Protocol("logits must be numbers".into()));
    }
    if let Some(text) = frame.get("logits_b64").and_then(Value::as_str) {
        return decode_logits_b64(text);
    }
    Err(SourceError::Protocol("reply has neither logits nor logits_b64".into()))
}

/// Client side of the protocol.
pub struct ExternalProvider<R, W> {
    reader: R,
    writer: W,
    vocab: Vocabulary,
    child: Option<Child>,
    line: String,
}

impl<R: BufRead, W: Write> ExternalProvider<R, W> {
    /// Perform the vocabulary handshake over an established stream.
    pub fn new(mut reader: R, mut writer: W) -> Result<Self, SourceError> {
        let mut line = String::new();
        send_frame(&mut writer, &json!({"op": "vocab"}))?;
        recv_line(&mut reader, &mut line)?;
        let frame: Value = serde_json::from_str(&line).map_err(|e| SourceError::Protocol(format!("bad frame: {e}")))?;
        if let Some(err) = frame.get("error") {
            return Err(SourceError::Protocol(format!("peer error: {err}")));
        }
        let tokens = frame
            .get("tokens")
            .and_then(Value::as_array)
            .and_then(|a| a.iter().map(|t| t.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| SourceError::Protocol("vocab reply needs a string array \"tokens\"".into()))?;
        let vocab = Vocabulary::new(tokens).map_err(|e| SourceError::Protocol(e.to_string()))?;
        Ok(Self { reader, writer, vocab, child: None, line })
    }
}

fn send_frame(writer: &mut impl Write, frame: &Value) -> Result<(), SourceError> {
    let mut text = frame.to_string();
    text.push('\n');
    writer.write_all(text.as_bytes()).and_then(|_| writer.flush()).map_err(|e| match e.kind() {
        ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::UnexpectedEof => SourceError::PeerExit,
        _ => SourceError::Io(e),
    })
}

fn recv_line(reader: &mut impl BufRead, line: &mut String) -> Result<(), SourceError> {
    line.clear();
    match reader.read_line(line) {
        Ok(0) => Err(SourceError::PeerExit),
        Ok(_) => Ok(()),
        Err(e) if e.kind() == ErrorKind::ConnectionReset => Err(SourceError::PeerExit),
        Err(e) => Err(SourceError::Io(e)),
    }
}

impl ExternalProvider<BufReader<ChildStdout>, ChildStdin> {
    /// Run `command` through `sh -c` and speak the protocol over its stdio.
    pub fn spawn(command: &str) -> Result<Self, SourceError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut p = Self::new(BufReader::new(stdout), stdin)?;
        p.child = Some(child);
        Ok(p)
    }
}

impl ExternalProvider<BufReader<TcpStream>, TcpStream> {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, SourceError> {
        let stream = TcpStream::connect(addr)?;
        let reader = BufReader::new(stream.try_clone()?);
        Self::new(reader, stream)
    }
}

impl<R, W> Drop for ExternalProvider<R, W> {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl<S: Scalar, R: BufRead, W: Write> LogitSource<S> for ExternalProvider<R, W> {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&mut self, ctx: &GenerationContext) -> Result<LogitVector<S>, SourceError> {
        let frame = json!({
            "op": "logits",
            "prompt_ids": ctx.prompt_ids,
            "generated_ids": ctx.generated_ids,
        });
        send_frame(&mut self.writer, &frame)?;
        recv_line(&mut self.reader, &mut self.line)?;
        let values = parse_logits_reply(self.line.trim_end())?;
        if values.len() != self.vocab.len() {
            return Err(SourceError::VocabMismatch { expected: self.vocab.len(), found: values.len() });
        }
        Ok(LogitVector::new(values.into_iter().map(|v| S::from_f64_lossy(v as f64)).collect()))
    }
}

/// How the server packs logit replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitEncoding {
    #[default]
    Json,
    Base64,
}

fn answer<S: Scalar>(source: &mut dyn LogitSource<S>, line: &str, encoding: LogitEncoding) -> Value {
    let frame: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return json!({"error": format!("malformed frame: {e}")}),
    };
    match frame.get("op").and_then(Value::as_str) {
        Some("vocab") => json!({"tokens": source.vocabulary().tokens()}),
        Some("logits") => {
            let ids = ids_field(&frame, "prompt_ids").and_then(|p| Ok((p, ids_field(&frame, "generated_ids")?)));
            let (prompt_ids, generated_ids) = match ids {
                Ok(x) => x,
                Err(e) => return json!({"error": e}),
            };
            let ctx = GenerationContext { prompt_ids, generated_ids };
            if let Err(e) = ctx.validate(source.vocabulary()) {
                return json!({"error": e.to_string()});
            }
            match source.next_logits(&ctx) {
                Ok(l) => {
                    let values: Vec<f32> = l.scores.iter().map(|s| s.to_f32().unwrap_or(f32::NAN)).collect();
                    // JSON has no infinities, so those vectors always go out packed.
                    if encoding == LogitEncoding::Base64 || values.iter().any(|v| !v.is_finite()) {
                        json!({"logits_b64": encode_logits_b64(&values)})
                    } else {
                        json!({"logits": values})
                    }
                }
                Err(e) => json!({"error": e.to_string()}),
            }
        }
        Some(op) => json!({"error": format!("unknown op {op:?}")}),
        None => json!({"error": "frame has no \"op\""}),
    }
}

/// Answer protocol frames from `reader` until EOF.
///
/// Malformed requests get an `{"error": ...}` reply and the session goes on.
/// Returns the number of frames answered.
pub fn serve<S: Scalar>(
    source: &mut dyn LogitSource<S>,
    reader: impl BufRead,
    mut writer: impl Write,
    encoding: LogitEncoding,
) -> io::Result<usize> {
    let mut answered = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = answer(source, &line, encoding);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
        answered += 1;
    }
    Ok(answered)
}
