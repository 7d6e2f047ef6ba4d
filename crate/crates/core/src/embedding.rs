//! Embedding storage and the external-extractor protocol.
//!
//! File layout (little-endian): magic `EMB1`, `u32` rows, `u32` cols, then `rows * cols`
//! binary32 values in row-major order. A sidecar `<path>.ids` holds one sample id per line
//! so that rows can be checked against manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("embedding matrix must be non-empty, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite embedding value at row {}, col {}",
                i / d,
                i % d
            )));
        }
        Ok(EmbeddingMatrix { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Row promoted to f64 for training math.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            if i >= self.n {
                return Err(Error::invalid(format!("row {i} out of range ({} rows)", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(rows.len(), self.d, data)
    }
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(m.n as u32).to_le_bytes());
    buf.extend_from_slice(&(m.d as u32).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let fmt_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fmt_err("bad magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(fmt_err("truncated header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| fmt_err(format!("header dimensions {n}x{d} overflow")))?;
    if payload.len() < expected {
        return Err(fmt_err(format!(
            "truncated payload: header says {n}x{d} ({expected} bytes), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(fmt_err(format!(
            "{} trailing bytes after {n}x{d} payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n, d, data).map_err(|e| fmt_err(e.to_string()))
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("refusing to write non-finite embedding".into()));
    }
    std::fs::write(path, encode_embeddings(m)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_embeddings(&bytes, path)
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    let p = ids_path(path);
    std::fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
}

/// Reads the id sidecar of an embedding file, `None` when it does not exist.
pub fn read_ids(path: &Path) -> Result<Option<Vec<String>>> {
    let p = ids_path(path);
    match std::fs::read_to_string(&p) {
        Ok(text) => Ok(Some(text.lines().map(str::to_string).collect())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(format!("reading {}", p.display()), e)),
    }
}

enum Event {
    Line(String),
    Eof,
    Failed(std::io::Error),
}

/// Runs `command` through `sh -c`, feeds it one absolute image path per line on stdin
/// and parses one whitespace-separated embedding per output line.
pub fn external_extract(command: &str, image_paths: &[PathBuf], timeout: Duration) -> Result<EmbeddingMatrix> {
    if image_paths.is_empty() {
        return Err(Error::invalid("no image paths to extract"));
    }
    let paths: Vec<PathBuf> = image_paths
        .iter()
        .map(|p| std::path::absolute(p).map_err(|e| Error::io(format!("resolving {}", p.display()), e)))
        .collect::<Result<_>>()?;
    let name = |i: usize| paths.get(i).map_or_else(|| "<extra output>".to_string(), |p| p.display().to_string());

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::io(format!("spawning extractor `{command}`"), e))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    let input: String = paths.iter().map(|p| format!("{}\n", p.display())).collect();
    // A child that exits early closes the pipe; that surfaces through its exit status.
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });

    let stdout = child.stdout.take().expect("piped stdout");
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let ev = match line {
                Ok(l) => Event::Line(l),
                Err(e) => Event::Failed(e),
            };
            if tx.send(ev).is_err() {
                return;
            }
        }
        let _ = tx.send(Event::Eof);
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let stderr_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let deadline = Instant::now() + timeout;
    let mut lines: Vec<String> = Vec::with_capacity(paths.len());
    let timed_out = |child: &mut std::process::Child, received: usize| {
        let _ = child.kill();
        let _ = child.wait();
        Error::Extractor {
            path: name(received),
            msg: format!("timeout after {:.3}s", timeout.as_secs_f64()),
        }
    };
    loop {
        let remaining = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(remaining) {
            Ok(Event::Line(l)) => lines.push(l),
            Ok(Event::Eof) | Err(mpsc::RecvTimeoutError::Disconnected) => break,
            Ok(Event::Failed(e)) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Extractor {
                    path: name(lines.len()),
                    msg: format!("reading extractor output: {e}"),
                });
            }
            Err(mpsc::RecvTimeoutError::Timeout) => return Err(timed_out(&mut child, lines.len())),
        }
    }
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => return Err(timed_out(&mut child, lines.len())),
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(Error::io("waiting for extractor", e)),
        }
    };
    let _ = writer.join();
    let stderr_text = stderr_reader.join().unwrap_or_default();
    if !status.success() {
        let first_missing = lines.len().min(paths.len().saturating_sub(1));
        return Err(Error::Extractor {
            path: name(first_missing),
            msg: format!("extractor exited with {status}: {}", stderr_text.trim()),
        });
    }
    if lines.len() != paths.len() {
        return Err(Error::Extractor {
            path: name(lines.len().min(paths.len())),
            msg: format!("expected {} output lines, got {}", paths.len(), lines.len()),
        });
    }

    let mut d = None;
    let mut data = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let row: Vec<f32> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f32>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .filter(|r: &Vec<f32>| !r.is_empty())
            .ok_or_else(|| Error::Extractor {
                path: name(i),
                msg: format!("malformed embedding line `{line}`"),
            })?;
        match d {
            None => d = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Extractor {
                    path: name(i),
                    msg: format!("dimension mismatch: expected {d}, got {}", row.len()),
                })
            }
            Some(_) => {}
        }
        data.extend(row);
    }
    EmbeddingMatrix::new(paths.len(), d.unwrap_or(0), data)
}
