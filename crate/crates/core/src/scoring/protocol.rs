// SPDX-License-Identifier: Apache-2.0

//! Scorer wire protocol.
//!
//! A scorer process announces itself with one ready line, then answers each
//! request line `{"id", "code"}` with exactly one `{"id", "p_ai"}` line, in
//! any order. A scorer that cannot score an item answers with `p_ai: null`
//! and an `error` message.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ready {
    pub ready: bool,
    pub scorer_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: String,
    pub p_ai: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs a scorer loop: ready line, then one response per request line.
/// Lines that are not requests get an error response with an empty id.
pub fn serve<R, W, F>(input: R, mut output: W, scorer_id: &str, mut score: F) -> std::io::Result<()>
where
    R: BufRead,
    W: Write,
    F: FnMut(&str) -> Result<f64, String>,
{
    let ready = Ready { ready: true, scorer_id: scorer_id.to_string() };
    writeln!(output, "{}", serde_json::to_string(&ready)?)?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match score(&req.code) {
                Ok(p) => Response { id: req.id, p_ai: Some(p), error: None },
                Err(e) => Response { id: req.id, p_ai: None, error: Some(e) },
            },
            Err(e) => Response { id: String::new(), p_ai: None, error: Some(e.to_string()) },
        };
        writeln!(output, "{}", serde_json::to_string(&resp)?)?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serve_transcript() {
        let input = b"{\"id\":\"a\",\"code\":\"x\"}\n{\"id\":\"b\",\"code\":\"\"}\n{\"id\":\"a\",\"code\":\"y\"}\n";
        let mut out = Vec::new();
        serve(&input[..], &mut out, "stub", |c| {
            if c.is_empty() {
                Err("empty".into())
            } else {
                Ok(0.25)
            }
        })
        .unwrap();
        let text = String::from_utf8(out).unwrap();
        let expected = "{\"ready\":true,\"scorer_id\":\"stub\"}\n\
                        {\"id\":\"a\",\"p_ai\":0.25}\n\
                        {\"id\":\"b\",\"p_ai\":null,\"error\":\"empty\"}\n\
                        {\"id\":\"a\",\"p_ai\":0.25}\n";
        assert_eq!(text, expected);
    }
}
