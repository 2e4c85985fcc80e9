//! One live session: a short reorder buffer in front of the engine.
//!
//! Records may arrive slightly out of order. Each is held until the newest
//! timestamp seen is more than the reorder window past it, then released to
//! the engine in (timestamp, arrival) order. A fixture streamed in file order
//! therefore reaches the engine exactly as in batch replay.

use std::collections::BTreeMap;

use cogload_core::config::SessionConfig;
use cogload_core::engine::{Engine, EngineError, Phase, Tick};
use cogload_core::record::{Record, Stream};
use cogload_core::types::{Timestamp, WorkstationLayout};
use cogload_replay::LogHeader;
use thiserror::Error;

/// Default tolerance for late records, seconds.
pub const REORDER_WINDOW: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IngestError {
    #[error("invalid timestamp {0}")]
    Timestamp(f64),
    #[error(
        "record at {got} is {behind:.3} s behind the newest record at {newest}, beyond the {} ms reorder limit",
        (.window * 1000.0).round()
    )]
    Late {
        got: Timestamp,
        newest: Timestamp,
        behind: f64,
        window: f64,
    },
    #[error("{stream:?} record at {got} does not follow {previous}")]
    StreamOrder {
        stream: Stream,
        previous: Timestamp,
        got: Timestamp,
    },
    #[error("session has ended")]
    Closed,
}

/// Engine failure on a record that was already acknowledged.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("record {seq}: {source}")]
pub struct DeferredError {
    pub seq: u64,
    #[source]
    pub source: EngineError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ack {
    pub seq: u64,
    /// Ticks closed by the records this call released.
    pub ticks: Vec<Tick>,
    pub errors: Vec<DeferredError>,
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    id: String,
    config: SessionConfig,
    layout: WorkstationLayout,
    engine: Engine,
    window: f64,
    buffer: Vec<(Timestamp, u64, Record)>,
    newest: Option<Timestamp>,
    /// Latest timestamp per stream already queued or released.
    streams: BTreeMap<Stream, Timestamp>,
    next_seq: u64,
    latest: Option<Tick>,
    ended: bool,
}

impl LiveSession {
    pub fn new(
        id: impl Into<String>,
        config: SessionConfig,
        layout: WorkstationLayout,
        window: f64,
    ) -> Self {
        Self {
            id: id.into(),
            engine: Engine::new(config.clone(), layout.clone()),
            config,
            layout,
            window,
            buffer: Vec::new(),
            newest: None,
            streams: BTreeMap::new(),
            next_seq: 0,
            latest: None,
            ended: false,
        }
    }

    /// A fresh session configured from a log header.
    pub fn from_header(header: &LogHeader, window: f64) -> Self {
        Self::new(
            header.session_id.clone(),
            header.config.to_session_config(),
            header.layout.clone(),
            window,
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn layout(&self) -> &WorkstationLayout {
        &self.layout
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn phase(&self) -> Phase {
        if self.ended {
            Phase::Ended
        } else {
            self.engine.phase()
        }
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    /// Most recent closed tick.
    pub fn latest(&self) -> Option<&Tick> {
        self.latest.as_ref()
    }

    /// Newest timestamp received so far.
    pub fn newest(&self) -> Option<Timestamp> {
        self.newest
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Queues one record and releases whatever the window allows.
    pub fn ingest(&mut self, record: Record) -> Result<Ack, IngestError> {
        if self.ended {
            return Err(IngestError::Closed);
        }
        let t = record.t();
        if !t.secs().is_finite() || t.secs() < 0.0 {
            return Err(IngestError::Timestamp(t.secs()));
        }
        if let Some(newest) = self.newest {
            let behind = newest - t;
            if behind > self.window {
                return Err(IngestError::Late {
                    got: t,
                    newest,
                    behind,
                    window: self.window,
                });
            }
        }
        let stream = record.stream();
        if stream != Stream::Marker {
            if let Some(&previous) = self.streams.get(&stream) {
                if t <= previous {
                    return Err(IngestError::StreamOrder {
                        stream,
                        previous,
                        got: t,
                    });
                }
            }
            self.streams.insert(stream, t);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let at = self.buffer.partition_point(|(bt, _, _)| *bt <= t);
        self.buffer.insert(at, (t, seq, record));
        self.newest = Some(match self.newest {
            Some(n) if n > t => n,
            _ => t,
        });
        let cutoff = self.newest.map_or(t.secs(), |n| n.secs()) - self.window;
        let due = self
            .buffer
            .partition_point(|(bt, _, _)| bt.secs() <= cutoff);
        let (ticks, errors) = self.release(due);
        Ok(Ack { seq, ticks, errors })
    }

    fn release(&mut self, n: usize) -> (Vec<Tick>, Vec<DeferredError>) {
        let mut ticks = Vec::new();
        let mut errors = Vec::new();
        for (_, seq, record) in self.buffer.drain(..n) {
            match self.engine.push(&record) {
                Ok(Some(tick)) => ticks.push(tick),
                Ok(None) => {}
                Err(source) => errors.push(DeferredError { seq, source }),
            }
        }
        if let Some(last) = ticks.last() {
            self.latest = Some(last.clone());
        }
        (ticks, errors)
    }

    /// Releases everything still buffered.
    pub fn flush(&mut self) -> (Vec<Tick>, Vec<DeferredError>) {
        let n = self.buffer.len();
        self.release(n)
    }

    /// Flushes, closes the final tick and ends the session.
    pub fn finish(&mut self) -> Result<(Vec<Tick>, Vec<DeferredError>), IngestError> {
        if self.ended {
            return Err(IngestError::Closed);
        }
        let (mut ticks, mut errors) = self.flush();
        match self.engine.finish() {
            Ok(Some(tick)) => {
                self.latest = Some(tick.clone());
                ticks.push(tick);
            }
            Ok(None) => {}
            Err(source) => errors.push(DeferredError {
                seq: self.next_seq,
                source,
            }),
        }
        self.ended = true;
        Ok((ticks, errors))
    }
}
