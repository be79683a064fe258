//! Versioned text checkpoints.
//!
//! Stores every parameter tensor, optionally the optimizer moments and step
//! count, for either a shared model or split per-level models. Values are
//! written as shortest-roundtrip decimal text, so load(save(x)) == x exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{AggregatorKind, ModelConfig, ModelError, OptState, PolicyParams, SeqModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a training stage persists.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: PolicyParams,
    /// Optimizer state per stored model, in the same order as the models
    /// appear in the file ("shared" or "high", "low").
    pub opt: Vec<OptState>,
}

impl Checkpoint {
    pub fn new(policy: PolicyParams) -> Self {
        Checkpoint {
            policy,
            opt: Vec::new(),
        }
    }
}

fn write_tensor(w: &mut impl Write, name: &str, data: &[f64]) -> std::io::Result<()> {
    write!(w, "tensor {name} {}", data.len())?;
    for x in data {
        write!(w, " {x}")?;
    }
    writeln!(w)
}

fn write_model(w: &mut impl Write, label: &str, m: &SeqModel) -> std::io::Result<()> {
    writeln!(
        w,
        "model {label} vocab={} dim={} max_seq_len={} aggregator={} eos={}",
        m.cfg.vocab_size,
        m.cfg.dim,
        m.cfg.max_seq_len,
        m.cfg.aggregator.as_str(),
        m.cfg.eos
    )?;
    for (name, data) in m.tensors() {
        write_tensor(w, name, data)?;
    }
    Ok(())
}

fn write_opt(w: &mut impl Write, label: &str, s: &OptState) -> std::io::Result<()> {
    writeln!(w, "opt {label} step={}", s.step)?;
    for (name, data) in s.m.tensors() {
        write_tensor(w, &format!("m.{name}"), data)?;
    }
    for (name, data) in s.v.tensors() {
        write_tensor(w, &format!("v.{name}"), data)?;
    }
    Ok(())
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "glider-ckpt v1")?;
    let labels: Vec<(&str, &SeqModel)> = match &ckpt.policy {
        PolicyParams::Shared(m) => vec![("shared", m)],
        PolicyParams::Split { high, low } => vec![("high", high), ("low", low)],
    };
    writeln!(w, "models {}", labels.len())?;
    for (label, m) in &labels {
        write_model(&mut w, label, m)?;
    }
    writeln!(w, "opts {}", ckpt.opt.len())?;
    for (i, s) in ckpt.opt.iter().enumerate() {
        write_opt(&mut w, labels[i].0, s)?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

struct LineReader {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl LineReader {
    fn next(&mut self) -> Result<String, CheckpointError> {
        self.line_no += 1;
        match self.lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(CheckpointError::Io(e)),
            None => Err(CheckpointError::Format {
                line: self.line_no,
                msg: "unexpected end of file".into(),
            }),
        }
    }

    fn err(&self, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            line: self.line_no,
            msg: msg.into(),
        }
    }
}

fn kv<'a>(part: Option<&'a str>, key: &str, r: &LineReader) -> Result<&'a str, CheckpointError> {
    part.and_then(|p| p.strip_prefix(key))
        .and_then(|p| p.strip_prefix('='))
        .ok_or_else(|| r.err(format!("expected {key}=...")))
}

fn read_tensor_into(
    r: &mut LineReader,
    expect_name: &str,
    dest: &mut [f64],
) -> Result<(), CheckpointError> {
    let line = r.next()?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("tensor") {
        return Err(r.err("expected tensor line"));
    }
    let name = parts.next().unwrap_or("");
    if name != expect_name {
        return Err(r.err(format!("expected tensor '{expect_name}', found '{name}'")));
    }
    let len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| r.err("bad tensor length"))?;
    if len != dest.len() {
        return Err(r.err(format!(
            "tensor '{name}' has {len} values, expected {}",
            dest.len()
        )));
    }
    for (i, slot) in dest.iter_mut().enumerate() {
        let tok = parts
            .next()
            .ok_or_else(|| r.err(format!("tensor '{name}' truncated at value {i}")))?;
        *slot = tok
            .parse()
            .map_err(|_| r.err(format!("bad value '{tok}' in tensor '{name}'")))?;
    }
    Ok(())
}

fn read_model(r: &mut LineReader) -> Result<(String, SeqModel), CheckpointError> {
    let line = r.next()?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("model") {
        return Err(r.err("expected model line"));
    }
    let label = parts.next().unwrap_or("").to_string();
    let vocab: usize = kv(parts.next(), "vocab", r)?
        .parse()
        .map_err(|_| r.err("bad vocab"))?;
    let dim: usize = kv(parts.next(), "dim", r)?
        .parse()
        .map_err(|_| r.err("bad dim"))?;
    let max_seq_len: usize = kv(parts.next(), "max_seq_len", r)?
        .parse()
        .map_err(|_| r.err("bad max_seq_len"))?;
    let aggregator = AggregatorKind::parse(kv(parts.next(), "aggregator", r)?)
        .ok_or_else(|| r.err("bad aggregator"))?;
    let eos: u16 = kv(parts.next(), "eos", r)?
        .parse()
        .map_err(|_| r.err("bad eos"))?;
    let cfg = ModelConfig {
        vocab_size: vocab,
        dim,
        max_seq_len,
        aggregator,
        eos,
    };
    let mut m = SeqModel::zeros(cfg);
    for (name, data) in m.tensors_mut() {
        read_tensor_into(r, name, data)?;
    }
    Ok((label, m))
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let reader = BufReader::new(File::open(path)?);
    let mut r = LineReader {
        lines: reader.lines(),
        line_no: 0,
    };
    if r.next()? != "glider-ckpt v1" {
        return Err(r.err("not a glider-ckpt v1 file"));
    }
    let header = r.next()?;
    let n_models: usize = header
        .strip_prefix("models ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| r.err("expected models count"))?;
    let mut models = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        models.push(read_model(&mut r)?);
    }
    let policy = match models.len() {
        1 if models[0].0 == "shared" => PolicyParams::Shared(models.remove(0).1),
        2 if models[0].0 == "high" && models[1].0 == "low" => {
            let low = models.pop().unwrap().1;
            let high = models.pop().unwrap().1;
            PolicyParams::Split { high, low }
        }
        _ => return Err(r.err("unrecognized model labels")),
    };

    let header = r.next()?;
    let n_opts: usize = header
        .strip_prefix("opts ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| r.err("expected opts count"))?;
    let mut opt = Vec::with_capacity(n_opts);
    for i in 0..n_opts {
        let line = r.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some("opt") {
            return Err(r.err("expected opt line"));
        }
        let _label = parts.next();
        let step: u64 = kv(parts.next(), "step", &r)?
            .parse()
            .map_err(|_| r.err("bad step"))?;
        let shape_src = match (&policy, i) {
            (PolicyParams::Shared(m), _) => m,
            (PolicyParams::Split { high, .. }, 0) => high,
            (PolicyParams::Split { low, .. }, _) => low,
        };
        let mut state = OptState::new(shape_src);
        state.step = step;
        for (name, data) in state.m.tensors_mut() {
            read_tensor_into(&mut r, &format!("m.{name}"), data)?;
        }
        for (name, data) in state.v.tensors_mut() {
            read_tensor_into(&mut r, &format!("v.{name}"), data)?;
        }
        opt.push(state);
    }
    if r.next()? != "end" {
        return Err(r.err("expected end marker"));
    }
    Ok(Checkpoint { policy, opt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdamW, Level};
    use rand::Rng;

    #[test]
    fn round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt");
        let mut m = SeqModel::init(ModelConfig::new(12, 6), 3);
        let mut rng = crate::seed::rng(3, "ckpt-test", 0);
        for (_, t) in m.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.gen::<f64>() * 3.0 - 1.5;
            }
        }
        let mut state = OptState::new(&m);
        let mut grads = m.zeros_like();
        grads.q_b = 0.25;
        super::super::adamw_step(&mut m, &grads, &AdamW::new(0.01), &mut state).unwrap();

        let ckpt = Checkpoint {
            policy: PolicyParams::Shared(m),
            opt: vec![state],
        };
        save(&path, &ckpt).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.policy, ckpt.policy);
        assert_eq!(back.opt.len(), 1);
        assert_eq!(back.opt[0].step, ckpt.opt[0].step);
        assert_eq!(back.opt[0].m, ckpt.opt[0].m);
        assert_eq!(back.opt[0].v, ckpt.opt[0].v);
    }

    #[test]
    fn split_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.ckpt");
        let shared = PolicyParams::Shared(SeqModel::init(ModelConfig::new(8, 4), 5));
        let split = shared.into_split();
        let low_hash = split.model(Level::Low).param_hash();
        save(&path, &Checkpoint::new(split.clone())).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.policy, split);
        assert_eq!(back.policy.model(Level::Low).param_hash(), low_hash);
    }

    #[test]
    fn corrupt_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, "glider-ckpt v1\nmodels 1\nnonsense\n").unwrap();
        match load(&path) {
            Err(CheckpointError::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
