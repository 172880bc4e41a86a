use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Command, Stdio};

use super::{DecoderError, SegmentRequest, SegmentationBackend, SegmentationLogits};

/// Backend running in a child process, spawned once per batch via `sh -c`.
///
/// Protocol: one line per point on stdin, `x y z r g b w` separated by
/// spaces; the process answers with one `fg bg` line per point in the same
/// order and exits 0. Pairs are renormalized on receipt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalBackend {
    pub command: String,
}

impl ExternalBackend {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
        }
    }
}

fn parse_pair(line: &str, n: usize) -> Result<(f64, f64), DecoderError> {
    let mut it = line.split_whitespace().map(str::parse::<f64>);
    match (it.next(), it.next(), it.next()) {
        (Some(Ok(fg)), Some(Ok(bg)), None) if fg.is_finite() && bg.is_finite() && fg >= 0.0 && bg >= 0.0 => {
            Ok((fg, bg))
        }
        _ => Err(DecoderError::Backend(format!("record {n}: expected `fg bg`, got `{line}`"))),
    }
}

impl SegmentationBackend for ExternalBackend {
    fn name(&self) -> String {
        format!("external({})", self.command)
    }

    fn segment(&self, request: &SegmentRequest<'_>) -> Result<SegmentationLogits, DecoderError> {
        if request.points.is_empty() {
            return Err(DecoderError::EmptyInput);
        }
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DecoderError::Backend(format!("spawn `{}`: {e}", self.command)))?;

        let mut payload = String::with_capacity(request.points.len() * 64);
        for p in request.points {
            let [x, y, z, r, g, b, w] = p.features();
            payload.push_str(&format!("{x} {y} {z} {r} {g} {b} {w}\n"));
        }
        let stdin = child.stdin.take().expect("stdin piped");
        // feed on a separate thread so a child that streams output early
        // cannot deadlock against a full stdin pipe
        let writer = std::thread::spawn(move || {
            let mut w = BufWriter::new(stdin);
            w.write_all(payload.as_bytes()).and_then(|_| w.flush())
        });

        let stdout = child.stdout.take().expect("stdout piped");
        let mut fg = Vec::with_capacity(request.points.len());
        let mut bg = Vec::with_capacity(request.points.len());
        let mut read_err = None;
        for line in BufReader::new(stdout).lines() {
            let line = match line {
                Ok(l) => l,
                Err(e) => {
                    read_err = Some(DecoderError::Backend(format!("read: {e}")));
                    break;
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            match parse_pair(&line, fg.len()) {
                Ok((f, b)) => {
                    fg.push(f);
                    bg.push(b);
                }
                Err(e) => {
                    read_err = Some(e);
                    break;
                }
            }
        }
        let status = child
            .wait()
            .map_err(|e| DecoderError::Backend(format!("wait: {e}")))?;
        // a child that exits without reading its input breaks the pipe; that
        // is reported through the count check below
        let _ = writer.join();
        if let Some(e) = read_err {
            return Err(e);
        }
        if !status.success() {
            return Err(DecoderError::Backend(format!("`{}` exited with {status}", self.command)));
        }
        if fg.len() != request.points.len() {
            return Err(DecoderError::Alignment {
                expected: request.points.len(),
                got: fg.len(),
            });
        }
        Ok(SegmentationLogits::normalized(fg, bg))
    }
}
