// SPDX-License-Identifier: Apache-2.0

//! Scorers running as child processes, spoken to over the wire protocol.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::protocol::{Ready, Request, Response};
use crate::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

pub struct ExternalScorer {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    scorer_id: String,
    timeout: Duration,
    /// Lines read from the scorer so far; the ready line is line 1.
    line_no: usize,
    /// Ids given up on in earlier batches; late answers to them are dropped.
    abandoned: HashSet<String>,
    alive: bool,
}

enum Wait {
    Done,
    TimedOut,
    Closed,
}

impl ExternalScorer {
    /// Starts `command` through `sh -c` and waits for its ready line.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Scorer(format!("cannot start `{command}`: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut s = ExternalScorer {
            stdin: child.stdin.take(),
            child,
            lines: rx,
            scorer_id: String::new(),
            timeout,
            line_no: 0,
            abandoned: HashSet::new(),
            alive: true,
        };
        let first = match s.lines.recv_timeout(timeout) {
            Ok(Ok(l)) => l,
            Ok(Err(e)) => return Err(Error::Scorer(format!("reading scorer output: {e}"))),
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::Scorer("scorer sent no ready line before the timeout".into()))
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Scorer("scorer exited before its ready line".into()))
            }
        };
        s.line_no = 1;
        match serde_json::from_str::<Ready>(&first) {
            Ok(r) if r.ready => s.scorer_id = r.scorer_id,
            _ => {
                return Err(Error::Protocol {
                    line: 1,
                    message: format!("expected ready line, got `{first}`"),
                })
            }
        }
        Ok(s)
    }

    pub fn scorer_id(&self) -> &str {
        &self.scorer_id
    }

    /// Scores `items` (id, code); one entry per item in input order, `None`
    /// where the scorer failed on the item or never answered.
    pub fn score(&mut self, items: &[(&str, &str)]) -> Result<Vec<Option<f64>>> {
        let mut unique: Vec<(&str, &str)> = Vec::new();
        let mut seen = HashSet::new();
        for &(id, code) in items {
            if seen.insert(id) {
                unique.push((id, code));
            }
        }
        let mut answers: HashMap<String, Option<f64>> = HashMap::new();
        let requested: HashSet<&str> = unique.iter().map(|u| u.0).collect();
        let mut retried: HashSet<String> = HashSet::new();

        for round in 0..2 {
            let pending: Vec<(&str, &str)> = unique
                .iter()
                .copied()
                .filter(|(id, _)| !answers.contains_key(*id))
                .collect();
            if pending.is_empty() || !self.alive {
                break;
            }
            if round == 1 {
                retried.extend(pending.iter().map(|p| p.0.to_string()));
            }
            let wait = self.exchange(&pending, &requested, &retried, &mut answers)?;
            match wait {
                Wait::Done => {}
                Wait::Closed => self.alive = false,
                Wait::TimedOut if round == 1 => {
                    // Unblock a writer stuck on a scorer that stopped reading.
                    let _ = self.child.kill();
                    self.alive = false;
                }
                Wait::TimedOut => {}
            }
        }
        for (id, _) in &unique {
            if !answers.contains_key(*id) {
                self.abandoned.insert(id.to_string());
            }
        }
        Ok(items
            .iter()
            .map(|(id, _)| answers.get(*id).copied().flatten())
            .collect())
    }

    fn exchange(
        &mut self,
        pending: &[(&str, &str)],
        requested: &HashSet<&str>,
        retried: &HashSet<String>,
        answers: &mut HashMap<String, Option<f64>>,
    ) -> Result<Wait> {
        let Some(mut stdin) = self.stdin.take() else {
            return Ok(Wait::Closed);
        };
        let payload: Vec<u8> = pending
            .iter()
            .flat_map(|(id, code)| {
                let req = Request { id: id.to_string(), code: code.to_string() };
                let mut line = serde_json::to_vec(&req).expect("serializable request");
                line.push(b'\n');
                line
            })
            .collect();
        let mut outstanding: HashSet<&str> = pending.iter().map(|p| p.0).collect();
        let lines = &self.lines;
        let timeout = self.timeout;
        let line_no = &mut self.line_no;
        let abandoned = &self.abandoned;

        let (stdin, wait) = thread::scope(|s| {
            let writer = s.spawn(move || {
                let ok = stdin.write_all(&payload).and_then(|_| stdin.flush()).is_ok();
                ok.then_some(stdin)
            });
            let wait = (|| {
                while !outstanding.is_empty() {
                    let line = match lines.recv_timeout(timeout) {
                        Ok(Ok(l)) => l,
                        Ok(Err(_)) | Err(RecvTimeoutError::Disconnected) => return Ok(Wait::Closed),
                        Err(RecvTimeoutError::Timeout) => return Ok(Wait::TimedOut),
                    };
                    *line_no += 1;
                    let at = *line_no;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let resp: Response = serde_json::from_str(&line).map_err(|e| Error::Protocol {
                        line: at,
                        message: format!("unparseable response: {e}"),
                    })?;
                    if abandoned.contains(&resp.id) {
                        continue;
                    }
                    if !requested.contains(resp.id.as_str()) {
                        return Err(Error::Protocol {
                            line: at,
                            message: format!("response for unknown id `{}`", resp.id),
                        });
                    }
                    if answers.contains_key(&resp.id) {
                        if retried.contains(&resp.id) {
                            continue;
                        }
                        return Err(Error::Protocol {
                            line: at,
                            message: format!("duplicate response for id `{}`", resp.id),
                        });
                    }
                    if let Some(p) = resp.p_ai {
                        if !(0.0..=1.0).contains(&p) {
                            return Err(Error::Protocol {
                                line: at,
                                message: format!("p_ai {p} outside [0, 1]"),
                            });
                        }
                    }
                    outstanding.remove(resp.id.as_str());
                    answers.insert(resp.id, resp.p_ai);
                }
                Ok(Wait::Done)
            })();
            if matches!(wait, Ok(Wait::TimedOut) | Err(_)) && !writer.is_finished() {
                let _ = self.child.kill();
            }
            (writer.join().ok().flatten(), wait)
        });
        self.stdin = stdin;
        wait
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
