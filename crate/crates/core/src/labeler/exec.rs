use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

use crate::error::LabelError;

/// Stderr kept in error messages.
const STDERR_TAIL: usize = 2000;

/// A command line split shell-style, with `{name}` placeholders substituted
/// per token at render time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    argv: Vec<String>,
}

impl Template {
    pub fn parse(source: &str, required: &[&'static str]) -> Result<Self, LabelError> {
        let argv = shell_words::split(source).map_err(|_| LabelError::BadTemplate(source.to_string()))?;
        if argv.is_empty() {
            return Err(LabelError::BadTemplate(source.to_string()));
        }
        for name in required {
            let needle = format!("{{{name}}}");
            if !argv.iter().any(|a| a.contains(&needle)) {
                return Err(LabelError::MissingPlaceholder(name));
            }
        }
        Ok(Template {
            source: source.to_string(),
            argv,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn has(&self, name: &str) -> bool {
        let needle = format!("{{{name}}}");
        self.argv.iter().any(|a| a.contains(&needle))
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Vec<String> {
        self.argv
            .iter()
            .map(|arg| {
                let mut a = arg.clone();
                for (k, v) in vars {
                    a = a.replace(&format!("{{{k}}}"), v);
                }
                a
            })
            .collect()
    }
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        buf
    })
}

fn tail(bytes: &[u8]) -> String {
    let s = String::from_utf8_lossy(bytes);
    let s = s.trim();
    match s.char_indices().rev().nth(STDERR_TAIL) {
        Some((i, _)) => format!("...{}", &s[i..]),
        None => s.to_string(),
    }
}

/// Runs `argv` to completion and returns its stdout. Non-zero exit and
/// timeout are errors carrying the stderr tail.
pub fn run_command(argv: &[String], timeout: Duration) -> Result<String, LabelError> {
    let command = shell_words::join(argv);
    let (prog, args) = argv
        .split_first()
        .ok_or_else(|| LabelError::BadTemplate(command.clone()))?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| LabelError::Spawn {
            command: command.clone(),
            source,
        })?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let status = match child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(LabelError::Timeout {
                command,
                secs: timeout.as_secs(),
            });
        }
        Err(source) => return Err(LabelError::Spawn { command, source }),
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    if !status.success() {
        return Err(LabelError::CommandFailed {
            command,
            status: status.to_string(),
            stderr: tail(&stderr),
        });
    }
    Ok(String::from_utf8_lossy(&stdout).into_owned())
}
