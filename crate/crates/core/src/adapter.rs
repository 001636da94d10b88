//! Shared plumbing for model adapters: the adapter error type and a
//! record/replay pair that captures request/response exchanges as
//! line-delimited JSON.
//!
//! A replay file holds one exchange per line:
//!
//! ```text
//! {"request": <request JSON>, "response": {"Ok": <response JSON>}}
//! {"request": <request JSON>, "response": {"Err": "<adapter message>"}}
//! ```
//!
//! Replay hands responses back in file order. In strict mode the incoming
//! request must equal the recorded one, so a replay run diverging from the
//! recorded run is reported instead of silently answering the wrong question.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Error reported by a model adapter.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct AdapterError {
    pub message: String,
    /// Whether the caller may degrade and continue. Transport loss, exhausted
    /// replays and request mismatches are not recoverable.
    pub recoverable: bool,
}

impl AdapterError {
    pub fn recoverable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            recoverable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            recoverable: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ReplayFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// One recorded call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exchange {
    pub request: serde_json::Value,
    pub response: Result<serde_json::Value, String>,
}

/// Sequential replay of recorded exchanges.
#[derive(Debug, Clone)]
pub struct Replay {
    exchanges: Vec<Exchange>,
    cursor: usize,
    strict: bool,
}

impl Replay {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        Self {
            exchanges,
            cursor: 0,
            strict: true,
        }
    }

    /// Disable request matching; responses are returned purely in order.
    pub fn lenient(mut self) -> Self {
        self.strict = false;
        self
    }

    pub fn load(path: &Path) -> Result<Self, ReplayFileError> {
        let display = path.display().to_string();
        let file = File::open(path).map_err(|source| ReplayFileError::Io {
            path: display.clone(),
            source,
        })?;
        let mut exchanges = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ReplayFileError::Io {
                path: display.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line).map_err(|source| ReplayFileError::Parse {
                path: display.clone(),
                line: idx + 1,
                source,
            })?;
            exchanges.push(ex);
        }
        Ok(Self::new(exchanges))
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - self.cursor
    }

    /// Answers `request` with the next recorded response.
    pub fn answer<Req, Resp>(&mut self, request: &Req) -> Result<Resp, AdapterError>
    where
        Req: Serialize,
        Resp: DeserializeOwned,
    {
        let Some(ex) = self.exchanges.get(self.cursor) else {
            return Err(AdapterError::fatal(format!(
                "replay exhausted after {} exchanges",
                self.cursor
            )));
        };
        let index = self.cursor;
        self.cursor += 1;
        if self.strict {
            let live = serde_json::to_value(request)
                .map_err(|e| AdapterError::fatal(format!("request not serializable: {e}")))?;
            if live != ex.request {
                return Err(AdapterError::fatal(format!(
                    "replay request mismatch at exchange {index}"
                )));
            }
        }
        match &ex.response {
            Ok(v) => serde_json::from_value(v.clone()).map_err(|e| {
                AdapterError::recoverable(format!(
                    "recorded response {index} does not match the contract: {e}"
                ))
            }),
            Err(msg) => Err(AdapterError::recoverable(msg.clone())),
        }
    }
}

/// Accumulates exchanges for later replay.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    exchanges: Vec<Exchange>,
}

impl Recorder {
    pub fn record<Req: Serialize, Resp: Serialize>(
        &mut self,
        request: &Req,
        response: &Result<Resp, AdapterError>,
    ) {
        // Both sides are plain data types; serialization cannot fail for them.
        let request = serde_json::to_value(request).expect("adapter request serializes");
        let response = match response {
            Ok(r) => Ok(serde_json::to_value(r).expect("adapter response serializes")),
            Err(e) => Err(e.message.clone()),
        };
        self.exchanges.push(Exchange { request, response });
    }

    pub fn exchanges(&self) -> &[Exchange] {
        &self.exchanges
    }

    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for ex in &self.exchanges {
            serde_json::to_writer(&mut *out, ex)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, Debug, PartialEq)]
    struct Ping {
        n: f64,
    }

    #[test]
    fn record_then_replay_roundtrips() {
        let mut rec = Recorder::default();
        rec.record(&Ping { n: 0.1 }, &Ok::<_, AdapterError>(Ping { n: 2.5 }));
        rec.record(
            &Ping { n: 1.0 / 3.0 },
            &Err::<Ping, _>(AdapterError::recoverable("busy")),
        );
        let mut buf = Vec::new();
        rec.write_to(&mut buf).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, &buf).unwrap();
        let mut replay = Replay::load(&path).unwrap();
        assert_eq!(replay.remaining(), 2);
        let a: Ping = replay.answer(&Ping { n: 0.1 }).unwrap();
        assert_eq!(a, Ping { n: 2.5 });
        let b: Result<Ping, _> = replay.answer(&Ping { n: 1.0 / 3.0 });
        assert_eq!(b.unwrap_err(), AdapterError::recoverable("busy"));
        let c: Result<Ping, _> = replay.answer(&Ping { n: 0.0 });
        assert!(!c.unwrap_err().recoverable);
    }

    #[test]
    fn strict_replay_detects_divergence() {
        let mut rec = Recorder::default();
        rec.record(&Ping { n: 1.0 }, &Ok::<_, AdapterError>(Ping { n: 1.0 }));
        let mut strict = Replay::new(rec.exchanges().to_vec());
        let err = strict.answer::<_, Ping>(&Ping { n: 2.0 }).unwrap_err();
        assert!(!err.recoverable);

        let mut lenient = Replay::new(rec.exchanges().to_vec()).lenient();
        assert!(lenient.answer::<_, Ping>(&Ping { n: 2.0 }).is_ok());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"request\":1,\"response\":{\"Ok\":2}}\n{oops\n").unwrap();
        match Replay::load(&path) {
            Err(ReplayFileError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
