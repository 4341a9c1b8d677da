//! Execution traces: ordered event logs consumed by reflection and exported as JSONL.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ModelCall,
    ToolCall,
    Decision,
    Error,
    Evaluation,
    Commit,
    Rollback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub seq: u64,
    pub span: String,
    pub parent: Option<String>,
    pub kind: EventKind,
    pub payload: Map<String, Value>,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub final_answer: String,
    pub success: bool,
}

/// A closed, immutable trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub trace_id: String,
    pub events: Vec<TraceEvent>,
    pub outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    trace_id: String,
    outcome: Outcome,
}

impl Trace {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events_of(kind).count()
    }

    pub fn has_errors(&self) -> bool {
        self.count(EventKind::Error) > 0
    }

    /// Write one header line followed by one line per event. Returns the line count.
    pub fn export(&self, path: impl AsRef<Path>) -> Result<usize> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            trace_id: self.trace_id.clone(),
            outcome: self.outcome.clone(),
        };
        let io = |e: std::io::Error| Error::path(path, e);
        writeln!(w, "{}", serde_json::to_string(&header).expect("header")).map_err(io)?;
        for event in &self.events {
            writeln!(w, "{}", serde_json::to_string(event).expect("event")).map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(self.events.len() + 1)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::path(path, e))?;
                serde_json::from_str(&line).map_err(|e| Error::ParseError(format!("line 1: {e}")))?
            }
            None => return Err(Error::ParseError("line 1: missing trace header".into())),
        };
        let mut events = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::path(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TraceEvent = serde_json::from_str(&line)
                .map_err(|e| Error::ParseError(format!("line {}: {e}", idx + 1)))?;
            events.push(event);
        }
        Ok(Trace {
            trace_id: header.trace_id,
            events,
            outcome: header.outcome,
        })
    }
}

struct RecorderState {
    events: Vec<TraceEvent>,
    spans: HashSet<String>,
    closed: bool,
}

/// An open trace that accepts events from many threads.
/// Sequence numbers are assigned under the recorder's lock.
pub struct TraceRecorder {
    trace_id: String,
    state: Mutex<RecorderState>,
}

impl std::fmt::Debug for TraceRecorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceRecorder")
            .field("trace_id", &self.trace_id)
            .finish_non_exhaustive()
    }
}

impl TraceRecorder {
    pub fn new(trace_id: impl Into<String>) -> Self {
        TraceRecorder {
            trace_id: trace_id.into(),
            state: Mutex::new(RecorderState {
                events: Vec::new(),
                spans: HashSet::new(),
                closed: false,
            }),
        }
    }

    pub fn trace_id(&self) -> &str {
        &self.trace_id
    }

    /// Append an event and return its span id.
    pub fn record(&self, kind: EventKind, payload: Value, parent: Option<&str>) -> Result<String> {
        let mut st = self.state.lock();
        if st.closed {
            return Err(Error::TraceClosed);
        }
        if let Some(p) = parent {
            if !st.spans.contains(p) {
                return Err(Error::UnknownParent(p.to_string()));
            }
        }
        let seq = st.events.len() as u64;
        let span = format!("s{seq}");
        let payload = match payload {
            Value::Object(map) => map,
            Value::Null => Map::new(),
            other => {
                let mut m = Map::new();
                m.insert("value".into(), other);
                m
            }
        };
        st.events.push(TraceEvent {
            seq,
            span: span.clone(),
            parent: parent.map(str::to_string),
            kind,
            payload,
            ts: Utc::now(),
        });
        st.spans.insert(span.clone());
        Ok(span)
    }

    pub fn is_closed(&self) -> bool {
        self.state.lock().closed
    }

    pub fn len(&self) -> usize {
        self.state.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the events recorded so far.
    pub fn events(&self) -> Vec<TraceEvent> {
        self.state.lock().events.clone()
    }

    pub fn close(&self, outcome: Outcome) -> Result<Trace> {
        let mut st = self.state.lock();
        if st.closed {
            return Err(Error::TraceClosed);
        }
        st.closed = true;
        Ok(Trace {
            trace_id: self.trace_id.clone(),
            events: st.events.clone(),
            outcome,
        })
    }
}
