// SPDX-License-Identifier: Apache-2.0

//! Parent-side handle on a worker process.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::worker::{Role, WorkerSpec};

/// Where to find the `bench` executable that hosts the workers.
#[derive(Debug, Clone)]
pub struct Launcher {
    exe: PathBuf,
}

impl Launcher {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Launcher { exe: exe.into() }
    }

    /// The running executable, for use from the `bench` binary itself.
    pub fn current() -> Result<Self> {
        Ok(Launcher::new(std::env::current_exe()?))
    }

    pub fn exe(&self) -> &Path {
        &self.exe
    }

    pub fn spawn(&self, spec: &WorkerSpec) -> Result<WorkerProcess> {
        let mut child = Command::new(&self.exe)
            .arg("__worker")
            .arg("--spec")
            .arg(serde_json::to_string(spec)?)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in stdout.lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(WorkerProcess {
            role: spec.role,
            stdin: child.stdin.take(),
            child,
            lines,
            status: None,
        })
    }
}

#[derive(Debug)]
pub struct WorkerProcess {
    role: Role,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    status: Option<ExitStatus>,
}

impl WorkerProcess {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Worker {
            role: format!("{:?}", self.role),
            reason: reason.into(),
        }
    }

    /// Waits for a stdout line starting with `prefix` and returns the rest
    /// of it, trimmed.
    pub fn expect(&mut self, prefix: &str, timeout: Duration) -> Result<String> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(left) {
                Ok(line) => {
                    if let Some(rest) = line.strip_prefix(prefix) {
                        return Ok(rest.trim().to_owned());
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Timeout(format!("{:?} to print {prefix}", self.role)))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.wait()?;
                    self.status = Some(status);
                    return Err(self.fail(format!("exited ({status}) before printing {prefix}")));
                }
            }
        }
    }

    /// Closes stdin, the worker's signal to stop.
    pub fn close_stdin(&mut self) {
        self.stdin.take();
    }

    pub fn wait_timeout(&mut self, timeout: Duration) -> Result<Option<ExitStatus>> {
        if let Some(s) = self.status {
            return Ok(Some(s));
        }
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(s) = self.child.try_wait()? {
                self.status = Some(s);
                return Ok(Some(s));
            }
            if Instant::now() >= deadline {
                return Ok(None);
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    /// Waits for a clean exit, killing the worker if it overstays.
    pub fn finish(&mut self, timeout: Duration) -> Result<()> {
        match self.wait_timeout(timeout)? {
            Some(s) if s.success() => Ok(()),
            Some(s) => Err(self.fail(format!("exited with {s}"))),
            None => {
                self.kill()?;
                Err(self.fail(format!("still running after {timeout:?}")))
            }
        }
    }

    pub fn signal(&self, signal: libc::c_int) -> Result<()> {
        if self.status.is_some() {
            return Err(self.fail("already exited"));
        }
        // SAFETY: signalling our own unreaped child; the pid cannot have been reused.
        if unsafe { libc::kill(self.child.id() as libc::pid_t, signal) } != 0 {
            return Err(std::io::Error::last_os_error().into());
        }
        Ok(())
    }

    /// SIGKILL and reap.
    pub fn kill(&mut self) -> Result<ExitStatus> {
        if let Some(s) = self.status {
            return Ok(s);
        }
        self.child.kill()?;
        let s = self.child.wait()?;
        self.status = Some(s);
        Ok(s)
    }
}

impl Drop for WorkerProcess {
    fn drop(&mut self) {
        if self.status.is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}
