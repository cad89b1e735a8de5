use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde_json::json;

use super::{ActionKind, EnvResponse, Environment, ParsedAction};
use crate::error::{Error, Result};

/// Forwards actions to an external process, one JSON object per line.
///
/// Requests are `{"reset": task_id}` or `{"action": kind, "payload": text}`;
/// every request gets exactly one response line with `observation`,
/// `terminated` and `final_answer`.
pub struct StdioAdapterEnv {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl StdioAdapterEnv {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Adapter(format!("failed to start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }

    fn exchange(&mut self, request: serde_json::Value) -> Result<EnvResponse> {
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|()| self.stdin.flush())
            .map_err(|e| Error::Adapter(format!("adapter stdin closed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Adapter(format!("adapter read failed: {e}")))?;
        if n == 0 {
            let status = self.child.try_wait().ok().flatten();
            return Err(Error::Adapter(match status {
                Some(s) => format!("adapter exited ({s})"),
                None => "adapter closed its output".into(),
            }));
        }
        let resp: EnvResponse = serde_json::from_str(reply.trim_end())
            .map_err(|e| Error::Adapter(format!("malformed adapter line {:?}: {e}", reply.trim_end())))?;
        resp.validate().map_err(|e| Error::Adapter(e.to_string()))?;
        Ok(resp)
    }
}

impl Environment for StdioAdapterEnv {
    fn reset(&mut self, task_id: &str) -> Result<EnvResponse> {
        self.exchange(json!({ "reset": task_id }))
    }

    fn step(&mut self, action: &ParsedAction) -> Result<EnvResponse> {
        if action.kind == ActionKind::Malformed {
            return Ok(EnvResponse::invalid());
        }
        self.exchange(json!({ "action": action.kind.name(), "payload": action.payload }))
    }
}

impl Drop for StdioAdapterEnv {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
