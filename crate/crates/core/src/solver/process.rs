//! Child processes under a wall-clock limit with bounded output capture.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ResourceLimits;

/// Bytes of each output stream kept, counted from the end.
pub const TAIL_BYTES: usize = 64 * 1024;

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Invocation {
    pub program: String,
    pub args: Vec<String>,
    pub stdin: Option<Vec<u8>>,
    pub cwd: Option<PathBuf>,
}

impl Invocation {
    pub fn new(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { program: program.into(), args: args.into_iter().map(Into::into).collect(), ..Self::default() }
    }

    pub fn with_stdin(mut self, bytes: impl Into<Vec<u8>>) -> Self {
        self.stdin = Some(bytes.into());
        self
    }

    pub fn display(&self) -> String {
        std::iter::once(self.program.as_str()).chain(self.args.iter().map(String::as_str)).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessOutcome {
    /// `None` when the child was killed by a signal.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub elapsed_seconds: f64,
    pub timed_out: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProcessError {
    #[error("cannot spawn `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("invalid limits: wall clock must be positive")]
    InvalidLimits,
    #[error("waiting on child: {0}")]
    Wait(std::io::Error),
}

/// Runs `inv` in its own process group; the whole group is killed once
/// `limits.wall_clock_seconds` elapses.
pub fn run_with_limits(inv: &Invocation, limits: &ResourceLimits) -> Result<ProcessOutcome, ProcessError> {
    if limits.validate().is_err() {
        return Err(ProcessError::InvalidLimits);
    }
    let mut cmd = Command::new(&inv.program);
    cmd.args(&inv.args)
        .stdin(if inv.stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if let Some(dir) = &inv.cwd {
        cmd.current_dir(dir);
    }
    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|source| ProcessError::Spawn { program: inv.program.clone(), source })?;

    let feeder = match (child.stdin.take(), inv.stdin.clone()) {
        (Some(mut pipe), Some(bytes)) => Some(thread::spawn(move || {
            // A child that exits without reading closes the pipe; that is not our error.
            let _ = pipe.write_all(&bytes);
        })),
        _ => None,
    };
    let out = child.stdout.take().map(|p| thread::spawn(move || read_tail(p)));
    let err = child.stderr.take().map(|p| thread::spawn(move || read_tail(p)));

    let deadline = started + limits.wall_clock();
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(ProcessError::Wait)? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_group(child.id());
            break child.wait().map_err(ProcessError::Wait)?;
        }
        thread::sleep(POLL);
    };
    // Descendants may still hold the pipes open after a normal exit.
    kill_group(child.id());
    let elapsed_seconds = started.elapsed().as_secs_f64();

    if let Some(f) = feeder {
        let _ = f.join();
    }
    let (stdout, stdout_truncated) = out.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    let (stderr, stderr_truncated) = err.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
    Ok(ProcessOutcome {
        exit_code: status.code(),
        stdout,
        stderr,
        stdout_truncated,
        stderr_truncated,
        elapsed_seconds,
        timed_out,
    })
}

fn kill_group(pid: u32) {
    let Ok(pid) = libc::pid_t::try_from(pid) else { return };
    // SAFETY: kill(2) with a negative pid signals the process group created
    // by `process_group(0)` above; it has no memory-safety preconditions.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

fn read_tail(mut r: impl Read) -> (String, bool) {
    let mut tail: Vec<u8> = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                tail.extend_from_slice(&buf[..n]);
                if tail.len() > 2 * TAIL_BYTES {
                    tail.drain(..tail.len() - TAIL_BYTES);
                    truncated = true;
                }
            }
        }
    }
    if tail.len() > TAIL_BYTES {
        tail.drain(..tail.len() - TAIL_BYTES);
        truncated = true;
    }
    (String::from_utf8_lossy(&tail).into_owned(), truncated)
}
