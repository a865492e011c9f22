//! Adapter for a real pretrained model served by an external process.
//!
//! The child is started as `<command...> --weights <path>` and speaks
//! newline-delimited JSON over stdin/stdout. Every request gets exactly one
//! response line.
//!
//! ```text
//! -> {"op":"info"}
//! <- {"input_size":[224,224],"capabilities":["mid","last","gradients"],"fingerprint":"..."}
//! -> {"op":"mid"|"last","width":W,"height":H,"pixels":[...W*H floats in [0,1]...]}
//! <- {"values":[...]}
//! -> {"op":"gradient","node":K,"width":W,"height":H,"pixels":[...]}
//! <- {"values":[...W*H floats...]}
//! <- {"error":"message"}            (on any failure)
//! ```
//!
//! `last` values and `node` indices use the fixed pathology label order.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::adapter::{Capabilities, ExtractorAdapter};
use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Deserialize)]
struct Info {
    input_size: (usize, usize),
    capabilities: Vec<String>,
    fingerprint: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Reply {
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

pub struct ProcessAdapter {
    pipe: Mutex<Pipe>,
    weights: PathBuf,
    size: (usize, usize),
    caps: Capabilities,
    fingerprint: String,
}

impl ProcessAdapter {
    /// Start the bridge process. Fails before spawning when `weights` is missing.
    pub fn spawn(command: &[String], weights: &Path) -> Result<Self> {
        if !weights.exists() {
            return Err(Error::Adapter(format!(
                "pretrained weights not found: {}",
                weights.display()
            )));
        }
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Adapter("empty bridge command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .arg("--weights")
            .arg(weights)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Adapter(format!("cannot start bridge `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut pipe = Pipe { child, stdin, stdout };
        let line = round_trip(&mut pipe, &json!({"op": "info"}))?;
        let info: Info =
            serde_json::from_str(&line).map_err(|e| Error::Adapter(format!("bad info reply {line:?}: {e}")))?;
        let has = |c: &str| info.capabilities.iter().any(|x| x == c);
        Ok(Self {
            caps: Capabilities {
                mid: has("mid"),
                last: has("last"),
                gradients: has("gradients"),
            },
            size: info.input_size,
            fingerprint: info.fingerprint,
            weights: weights.to_path_buf(),
            pipe: Mutex::new(pipe),
        })
    }

    pub fn weights(&self) -> &Path {
        &self.weights
    }

    fn call(&self, request: serde_json::Value) -> Result<Vec<f64>> {
        let mut pipe = self.pipe.lock().expect("bridge mutex poisoned");
        let line = round_trip(&mut pipe, &request)?;
        let reply: Reply =
            serde_json::from_str(&line).map_err(|e| Error::Adapter(format!("bad reply {line:?}: {e}")))?;
        if let Some(err) = reply.error {
            return Err(Error::Adapter(err));
        }
        reply
            .values
            .ok_or_else(|| Error::Adapter("reply without values".into()))
    }
}

fn round_trip(pipe: &mut Pipe, request: &serde_json::Value) -> Result<String> {
    let io = |e: std::io::Error| Error::Adapter(format!("bridge i/o: {e}"));
    let mut text = serde_json::to_string(request)?;
    text.push('\n');
    pipe.stdin.write_all(text.as_bytes()).map_err(io)?;
    pipe.stdin.flush().map_err(io)?;
    let mut line = String::new();
    if pipe.stdout.read_line(&mut line).map_err(io)? == 0 {
        return Err(Error::Adapter("bridge closed its output".into()));
    }
    Ok(line)
}

fn image_request(op: &str, image: &GrayImage) -> serde_json::Value {
    json!({
        "op": op,
        "width": image.width(),
        "height": image.height(),
        "pixels": image.as_slice(),
    })
}

impl ExtractorAdapter for ProcessAdapter {
    fn name(&self) -> &str {
        "real"
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn input_size(&self) -> (usize, usize) {
        self.size
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn mid(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.call(image_request("mid", image))
    }

    fn last(&self, image: &GrayImage) -> Result<Vec<f64>> {
        self.call(image_request("last", image))
    }

    fn input_gradient(&self, image: &GrayImage, node: usize) -> Result<Vec<f64>> {
        let mut req = image_request("gradient", image);
        req["node"] = json!(node);
        self.call(req)
    }
}

impl std::fmt::Debug for ProcessAdapter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProcessAdapter")
            .field("weights", &self.weights)
            .field("size", &self.size)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl Drop for ProcessAdapter {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}
