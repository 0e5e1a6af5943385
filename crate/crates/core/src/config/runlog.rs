use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::error::ConfigError;

/// Append-only JSON-lines log. Each line carries `event`, seconds since the
/// log was opened (`elapsed_s`) and the event's own fields.
pub struct RunLog {
    out: Option<BufWriter<File>>,
    start: Instant,
}

impl RunLog {
    pub fn open(path: Option<&Path>) -> Result<Self, ConfigError> {
        let out = match path {
            None => None,
            Some(p) => {
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent).map_err(|source| ConfigError::Io {
                        path: parent.to_path_buf(),
                        source,
                    })?;
                }
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|source| ConfigError::Io {
                        path: p.to_path_buf(),
                        source,
                    })?;
                Some(BufWriter::new(f))
            }
        };
        Ok(RunLog {
            out,
            start: Instant::now(),
        })
    }

    pub fn disabled() -> Self {
        RunLog {
            out: None,
            start: Instant::now(),
        }
    }

    /// Writes one line; object fields are merged into the record. `event`
    /// and `elapsed_s` are reserved and win over same-named fields.
    pub fn event(&mut self, event: &str, fields: Value) {
        let Some(out) = self.out.as_mut() else { return };
        let mut rec = Map::new();
        match fields {
            Value::Object(m) => rec.extend(m),
            Value::Null => {}
            other => {
                rec.insert("value".into(), other);
            }
        }
        rec.insert("event".into(), json!(event));
        rec.insert("elapsed_s".into(), json!(self.start.elapsed().as_secs_f64()));
        let line = Value::Object(rec).to_string();
        if writeln!(out, "{line}").and_then(|_| out.flush()).is_err() {
            log::warn!("run log write failed; further events may be lost");
        }
    }

    /// Opening record: command line, versions, wall-clock start, and the
    /// caller's config snapshot and seeds.
    pub fn start(&mut self, args: &[String], snapshot: Value) {
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut fields = json!({
            "args": args,
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": unix,
        });
        if let (Value::Object(f), Value::Object(s)) = (&mut fields, snapshot) {
            f.extend(s);
        }
        self.event("start", fields);
    }
}
