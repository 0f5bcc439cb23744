//! Text checkpoints.
//!
//! ```text
//! tinylm v1 <vocab> <d_embed> <d_hidden>
//! <name> <rows> <cols>
//! <row-major values, one matrix row per line>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip decimal rendering, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use super::{ModelDims, TinyLM, Weights, GATES};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "tinylm";
const VERSION: &str = "v1";

fn named_tensors(m: &TinyLM) -> Vec<(String, ArrayView2<'_, f64>)> {
    let w = &m.weights;
    let h = m.dims.hidden;
    let mut out = vec![("embed".to_string(), w.embed.view())];
    for (k, gate) in GATES.iter().enumerate() {
        out.push((format!("w_{gate}"), w.w_gates.slice(s![k * h..(k + 1) * h, ..])));
    }
    for (k, gate) in GATES.iter().enumerate() {
        out.push((format!("b_{gate}"), w.b_gates.slice(s![.., k * h..(k + 1) * h])));
    }
    out.push(("proj_w".to_string(), w.proj.view()));
    out.push(("proj_b".to_string(), w.proj_b.view()));
    out
}

pub fn write_checkpoint(m: &TinyLM) -> String {
    let d = m.dims;
    let mut out = format!("{CHECKPOINT_MAGIC} {VERSION} {} {} {}\n", d.vocab, d.embed, d.hidden);
    for (name, t) in named_tensors(m) {
        let _ = writeln!(out, "{name} {} {}", t.nrows(), t.ncols());
        for row in t.rows() {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn save_checkpoint(m: &TinyLM, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(m))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TinyLM> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn parse_checkpoint(text: &str) -> Result<TinyLM> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split(' ').collect();
    if header.first() != Some(&CHECKPOINT_MAGIC) {
        return Err(bad("missing `tinylm` header"));
    }
    if header.get(1) != Some(&VERSION) {
        return Err(bad(format!(
            "unsupported version {:?}, expected {VERSION}",
            header.get(1).unwrap_or(&"")
        )));
    }
    if header.len() != 5 {
        return Err(bad("header must be `tinylm v1 <vocab> <d_embed> <d_hidden>`"));
    }
    let dim = |i: usize| header[i].parse::<usize>().map_err(|_| bad(format!("bad dimension {:?}", header[i])));
    let dims = ModelDims::new(dim(2)?, dim(3)?, dim(4)?)?;
    let mut m = TinyLM {
        dims,
        weights: Weights::zeros(dims),
    };
    let expected: Vec<(String, usize, usize)> = named_tensors(&m)
        .into_iter()
        .map(|(n, t)| (n, t.nrows(), t.ncols()))
        .collect();

    let mut tensors = Vec::with_capacity(expected.len());
    for (name, rows, cols) in &expected {
        let head = lines.next().ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let want = format!("{name} {rows} {cols}");
        if head != want {
            return Err(bad(format!("expected `{want}`, found `{head}`")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..*rows {
            let line = lines.next().ok_or_else(|| bad(format!("{name}: missing row {r}")))?;
            let before = values.len();
            for tok in line.split(' ') {
                values.push(tok.parse::<f64>().map_err(|_| bad(format!("{name}: bad value {tok:?}")))?);
            }
            if values.len() - before != *cols {
                return Err(bad(format!("{name}: row {r} has {} values", values.len() - before)));
            }
        }
        tensors.push(Array2::from_shape_vec((*rows, *cols), values).expect("shape checked"));
    }
    if let Some(extra) = lines.find(|l| !l.is_empty()) {
        return Err(bad(format!("trailing content `{extra}`")));
    }

    let h = dims.hidden;
    let mut it = tensors.into_iter();
    let w = &mut m.weights;
    w.embed = it.next().expect("embed");
    for k in 0..4 {
        w.w_gates.slice_mut(s![k * h..(k + 1) * h, ..]).assign(&it.next().expect("gate"));
    }
    for k in 0..4 {
        w.b_gates.slice_mut(s![.., k * h..(k + 1) * h]).assign(&it.next().expect("bias"));
    }
    w.proj = it.next().expect("proj");
    w.proj_b = it.next().expect("proj_b");
    Ok(m)
}
