//! Plain-text checkpoints.
//!
//! ```text
//! ILLAB-CKPT v1
//! arch linear
//! input_dim 64
//! num_classes 10
//! image_shape none
//! tensor weight 64 10
//! <values, one tensor row per line>
//! tensor bias 10
//! <values>
//! end
//! ```
//! Values use Rust's shortest round-trip exponent notation, so a
//! save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Architecture, ModelParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "ILLAB-CKPT v1";

pub fn write_checkpoint(params: &ModelParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(s, "arch {}", params.arch);
    let _ = writeln!(s, "input_dim {}", params.input_dim);
    let _ = writeln!(s, "num_classes {}", params.num_classes);
    match params.image_shape {
        Some((h, w)) => {
            let _ = writeln!(s, "image_shape {h} {w}");
        }
        None => s.push_str("image_shape none\n"),
    }
    for t in &params.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {} {}", t.name, dims.join(" "));
        let row_len = *t.shape.last().expect("tensors have a shape");
        for chunk in t.data.chunks(row_len.max(1)) {
            let vals: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
    }
    s.push_str("end\n");
    s
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Ingestion(format!("checkpoint line {line}: {}", msg.into()))
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, Vec<&'a str>)> {
    let (no, line) = lines.next().ok_or_else(|| Error::Ingestion(format!("checkpoint ends before '{key}'")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(bad(no, format!("expected '{key}'")));
    }
    Ok((no, parts.collect()))
}

fn parse_usize(no: usize, s: &str) -> Result<usize> {
    s.parse().map_err(|_| bad(no, format!("'{s}' is not a non-negative integer")))
}

pub fn parse_checkpoint(text: &str) -> Result<ModelParams> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_MAGIC => {}
        _ => return Err(Error::Ingestion(format!("not a checkpoint: missing '{CHECKPOINT_MAGIC}'"))),
    }
    let (no, v) = header(&mut lines, "arch")?;
    let arch: Architecture = v.first().ok_or_else(|| bad(no, "missing architecture"))?.parse()?;
    let (no, v) = header(&mut lines, "input_dim")?;
    let input_dim = parse_usize(no, v.first().copied().unwrap_or(""))?;
    let (no, v) = header(&mut lines, "num_classes")?;
    let num_classes = parse_usize(no, v.first().copied().unwrap_or(""))?;
    let (no, v) = header(&mut lines, "image_shape")?;
    let image_shape = match v.as_slice() {
        ["none"] => None,
        [h, w] => Some((parse_usize(no, h)?, parse_usize(no, w)?)),
        _ => return Err(bad(no, "image_shape takes 'none' or two integers")),
    };
    let template = ModelParams::zeros(arch, input_dim, num_classes, image_shape)?;
    let mut tensors = Vec::with_capacity(template.tensors.len());
    for want in &template.tensors {
        let (no, v) = header(&mut lines, "tensor")?;
        let name = v.first().ok_or_else(|| bad(no, "tensor without a name"))?;
        let shape = v[1..].iter().map(|d| parse_usize(no, d)).collect::<Result<Vec<_>>>()?;
        if *name != want.name || shape != want.shape {
            return Err(bad(
                no,
                format!("found tensor {name} {shape:?}, expected {} {:?}", want.name, want.shape),
            ));
        }
        let len = want.data.len();
        let mut data = Vec::with_capacity(len);
        while data.len() < len {
            let (no, line) = lines.next().ok_or_else(|| Error::Ingestion(format!("tensor {name} is truncated")))?;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| bad(no, format!("'{tok}' is not a number")))?;
                data.push(v);
            }
        }
        if data.len() != len {
            return Err(Error::Ingestion(format!("tensor {name} has {} values, expected {len}", data.len())));
        }
        tensors.push(Tensor {
            name: name.to_string(),
            shape,
            data,
        });
    }
    match lines.next() {
        Some((_, "end")) => {}
        Some((no, _)) => return Err(bad(no, "expected 'end'")),
        None => return Err(Error::Ingestion("checkpoint is missing its 'end' line".into())),
    }
    ModelParams::from_tensors(arch, input_dim, num_classes, image_shape, tensors)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
