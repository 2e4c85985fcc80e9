//! Line-delimited session log: one header object, then one record per line.
//!
//! ```text
//! {"kind":"header","v":1,"session_id":"s1","start_wall_clock":"...","frame_rate":30.0,"layout":{...},"config":{...}}
//! {"kind":"skeleton","t":0.0,"joints":{...}}
//! {"kind":"face","t":0.0,"landmarks":[{"u":..,"v":..}, ...]}
//! ```
//!
//! Record timestamps strictly increase within each stream (markers may
//! repeat a timestamp) and never decrease across the file.

use std::collections::BTreeMap;
use std::fmt;

use cogload_core::config::{validate_config, ConfigDocument};
use cogload_core::record::{Record, Stream};
use cogload_core::types::{Timestamp, WorkstationLayout};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HeaderKind {
    Header,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    kind: HeaderKind,
    pub v: u32,
    pub session_id: String,
    /// RFC 3339 wall-clock time of t = 0.
    pub start_wall_clock: String,
    pub frame_rate: f64,
    pub layout: WorkstationLayout,
    pub config: ConfigDocument,
}

impl LogHeader {
    pub fn new(
        session_id: impl Into<String>,
        start_wall_clock: impl Into<String>,
        frame_rate: f64,
        layout: WorkstationLayout,
        config: ConfigDocument,
    ) -> Self {
        Self {
            kind: HeaderKind::Header,
            v: LOG_VERSION,
            session_id: session_id.into(),
            start_wall_clock: start_wall_clock.into(),
            frame_rate,
            layout,
            config,
        }
    }

    /// Layout and config problems, empty when the header is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.v != LOG_VERSION {
            out.push(format!("unsupported log version {}", self.v));
        }
        if !(self.frame_rate > 0.0) {
            out.push(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            ));
        }
        out.extend(self.layout.violations());
        out.extend(
            validate_config(&self.config.to_session_config())
                .iter()
                .map(|v| v.to_string()),
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub records: Vec<Record>,
    /// Lines with an unrecognized `kind`, by kind.
    pub skipped: BTreeMap<String, usize>,
}

impl SessionLog {
    pub fn new(header: LogHeader, records: Vec<Record>) -> Self {
        Self {
            header,
            records,
            skipped: BTreeMap::new(),
        }
    }

    pub fn counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.kind()).or_default() += 1;
        }
        out
    }

    pub fn duration(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => b.t() - a.t(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LineErrorKind {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("{stream:?} record at {got} does not follow {previous}")]
    StreamOrder {
        stream: Stream,
        previous: Timestamp,
        got: Timestamp,
    },
    #[error("record at {got} precedes the previous record at {previous}")]
    GlobalOrder { previous: Timestamp, got: Timestamp },
    #[error("invalid timestamp {0}")]
    Timestamp(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {kind}")]
pub struct LineError {
    pub line: usize,
    pub kind: LineErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogError {
    #[error("line {line}: malformed header: {reason}")]
    Header { line: usize, reason: String },
    #[error("empty log: missing header line")]
    MissingHeader,
    #[error("invalid header: {}", .0.join("; "))]
    InvalidHeader(Vec<String>),
    #[error("{}", LineErrors(.0))]
    Lines(Vec<LineError>),
}

struct LineErrors<'a>(&'a [LineError]);

impl fmt::Display for LineErrors<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} bad record line(s)", self.0.len())?;
        for e in self.0.iter().take(10) {
            write!(f, "\n  {e}")?;
        }
        if self.0.len() > 10 {
            write!(f, "\n  ...")?;
        }
        Ok(())
    }
}

/// Per-stream and global ordering rules.
#[derive(Debug, Clone, Default)]
pub struct OrderCheck {
    last: BTreeMap<Stream, Timestamp>,
    global: Option<Timestamp>,
}

impl OrderCheck {
    pub fn check(&mut self, record: &Record) -> Result<(), LineErrorKind> {
        let t = record.t();
        if !(t.secs() >= 0.0) || !t.secs().is_finite() {
            return Err(LineErrorKind::Timestamp(t.secs()));
        }
        if let Some(previous) = self.global {
            if t < previous {
                return Err(LineErrorKind::GlobalOrder { previous, got: t });
            }
        }
        let stream = record.stream();
        if stream != Stream::Marker {
            if let Some(&previous) = self.last.get(&stream) {
                if t <= previous {
                    return Err(LineErrorKind::StreamOrder {
                        stream,
                        previous,
                        got: t,
                    });
                }
            }
            self.last.insert(stream, t);
        }
        self.global = Some(t);
        Ok(())
    }
}

/// What one body line turned into.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Record(Record),
    Skipped(String),
}

/// Parses one body line without ordering checks. Unknown kinds are skipped.
pub fn parse_record_line(text: &str) -> Result<Parsed, LineErrorKind> {
    match serde_json::from_str::<Record>(text) {
        Ok(r) => Ok(Parsed::Record(r)),
        Err(e) => {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|_| LineErrorKind::Malformed(e.to_string()))?;
            match value.get("kind").and_then(|k| k.as_str()) {
                Some(kind) if !Record::KINDS.contains(&kind) && kind != "header" => {
                    Ok(Parsed::Skipped(kind.to_string()))
                }
                _ => Err(LineErrorKind::Malformed(e.to_string())),
            }
        }
    }
}

pub fn parse_header_line(text: &str, line: usize) -> Result<LogHeader, LogError> {
    let header: LogHeader = serde_json::from_str(text).map_err(|e| LogError::Header {
        line,
        reason: e.to_string(),
    })?;
    let violations = header.violations();
    if !violations.is_empty() {
        return Err(LogError::InvalidHeader(violations));
    }
    Ok(header)
}

/// Incremental parser: feed arbitrary byte chunks, collect records as lines complete.
#[derive(Debug, Default)]
pub struct StreamParser {
    pending: Vec<u8>,
    line: usize,
    header: Option<LogHeader>,
    order: OrderCheck,
    records: Vec<Record>,
    skipped: BTreeMap<String, usize>,
    errors: Vec<LineError>,
}

impl StreamParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn header(&self) -> Option<&LogHeader> {
        self.header.as_ref()
    }

    /// Records parsed since the last call.
    pub fn drain_records(&mut self) -> Vec<Record> {
        std::mem::take(&mut self.records)
    }

    pub fn errors(&self) -> &[LineError] {
        &self.errors
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Result<(), LogError> {
        self.pending.extend_from_slice(chunk);
        let mut start = 0;
        while let Some(pos) = self.pending[start..].iter().position(|&b| b == b'\n') {
            let end = start + pos;
            let line = self.pending[start..end].to_vec();
            start = end + 1;
            self.handle_line(&line)?;
        }
        self.pending.drain(..start);
        Ok(())
    }

    /// Flushes a trailing line without a newline and returns the log.
    pub fn finish(mut self) -> Result<SessionLog, LogError> {
        if !self.pending.is_empty() {
            let line = std::mem::take(&mut self.pending);
            self.handle_line(&line)?;
        }
        let header = self.header.ok_or(LogError::MissingHeader)?;
        if !self.errors.is_empty() {
            return Err(LogError::Lines(self.errors));
        }
        Ok(SessionLog {
            header,
            records: self.records,
            skipped: self.skipped,
        })
    }

    fn handle_line(&mut self, bytes: &[u8]) -> Result<(), LogError> {
        self.line += 1;
        let line = self.line;
        let text = match std::str::from_utf8(bytes) {
            Ok(s) => s.trim(),
            Err(e) => {
                if self.header.is_none() {
                    return Err(LogError::Header {
                        line,
                        reason: e.to_string(),
                    });
                }
                self.errors.push(LineError {
                    line,
                    kind: LineErrorKind::Malformed(e.to_string()),
                });
                return Ok(());
            }
        };
        if text.is_empty() {
            return Ok(());
        }
        if self.header.is_none() {
            self.header = Some(parse_header_line(text, line)?);
            return Ok(());
        }
        let result = parse_record_line(text).and_then(|parsed| match parsed {
            Parsed::Record(r) => self.order.check(&r).map(|_| Some(r)),
            Parsed::Skipped(kind) => {
                *self.skipped.entry(kind).or_default() += 1;
                Ok(None)
            }
        });
        match result {
            Ok(Some(r)) => self.records.push(r),
            Ok(None) => {}
            Err(kind) => self.errors.push(LineError { line, kind }),
        }
        Ok(())
    }
}

pub fn parse_log(bytes: &[u8]) -> Result<SessionLog, LogError> {
    let mut parser = StreamParser::new();
    parser.feed(bytes)?;
    parser.finish()
}

pub fn header_line(header: &LogHeader) -> String {
    serde_json::to_string(header).expect("header serializes")
}

pub fn record_line(record: &Record) -> String {
    serde_json::to_string(record).expect("record serializes")
}

pub fn serialize_log(log: &SessionLog) -> String {
    let mut out = header_line(&log.header);
    out.push('\n');
    for r in &log.records {
        out.push_str(&record_line(r));
        out.push('\n');
    }
    out
}
