//! Line-delimited text serialization for hierarchical datasets.
//!
//! A dataset is stored as two files, `<name>.high.glt` and `<name>.low.glt`.
//! The first line of each is a header carrying the vocabulary size, c_max,
//! and the dataset-level source tag (plus the mixture ratio when one is
//! recorded). Each trajectory starts with a `traj src=<tag>` line followed by
//! one transition per line. Rewards are written as full-precision decimal
//! text so round trips are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{
    DataError, HierDataset, HierTrajectory, HighTransition, LowTransition, SourceTag, Token,
    TokenSeq,
};

fn fmt_tokens(seq: &TokenSeq) -> String {
    let mut s = String::new();
    for (i, t) in seq.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&t.to_string());
    }
    s
}

fn parse_tokens(s: &str, vocab: u32, line: usize) -> Result<TokenSeq, DataError> {
    if s.is_empty() {
        return Ok(TokenSeq::empty());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let t: Token = part.parse().map_err(|_| DataError::Parse {
            line,
            msg: format!("bad token id '{part}'"),
        })?;
        if u32::from(t) >= vocab {
            return Err(DataError::TokenOutOfRange { token: t, vocab });
        }
        out.push(t);
    }
    Ok(TokenSeq::new(out))
}

fn parse_f64(s: &str, line: usize) -> Result<f64, DataError> {
    s.parse().map_err(|_| DataError::Parse {
        line,
        msg: format!("bad real value '{s}'"),
    })
}

fn parse_bool(s: &str, line: usize) -> Result<bool, DataError> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(DataError::Parse {
            line,
            msg: format!("bad bool '{s}'"),
        }),
    }
}

/// key=value field splitter that enforces the expected key.
fn field<'a>(
    parts: &mut std::str::SplitWhitespace<'a>,
    key: &str,
    line: usize,
) -> Result<&'a str, DataError> {
    let part = parts.next().ok_or_else(|| DataError::Parse {
        line,
        msg: format!("missing field '{key}'"),
    })?;
    part.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| DataError::Parse {
            line,
            msg: format!("expected '{key}=', found '{part}'"),
        })
}

fn write_header(
    w: &mut impl Write,
    level: &str,
    ds: &HierDataset,
) -> Result<(), DataError> {
    write!(
        w,
        "glt {level} v1 vocab={} c_max={} source={}",
        ds.vocab_size,
        ds.c_max,
        ds.source_label()
    )?;
    if let Some((a, b)) = ds.mixture_ratio {
        write!(w, " mix={a}:{b}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Header contents shared by both files.
#[derive(Debug, PartialEq)]
struct Header {
    level: String,
    vocab: u32,
    c_max: u32,
    source: String,
    mix: Option<(u32, u32)>,
}

fn parse_header(line_text: &str, expect_level: &str) -> Result<Header, DataError> {
    let mut parts = line_text.split_whitespace();
    let magic = parts.next();
    let level = parts.next().unwrap_or_default().to_string();
    let version = parts.next();
    if magic != Some("glt") || version != Some("v1") {
        return Err(DataError::Parse {
            line: 1,
            msg: "not a glt v1 header".into(),
        });
    }
    if level != expect_level {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected level '{expect_level}', found '{level}'"),
        });
    }
    let vocab: u32 = field(&mut parts, "vocab", 1)?.parse().map_err(|_| DataError::Parse {
        line: 1,
        msg: "bad vocab".into(),
    })?;
    let c_max: u32 = field(&mut parts, "c_max", 1)?.parse().map_err(|_| DataError::Parse {
        line: 1,
        msg: "bad c_max".into(),
    })?;
    let source = field(&mut parts, "source", 1)?.to_string();
    let mix = match parts.next() {
        None => None,
        Some(part) => {
            let v = part.strip_prefix("mix=").ok_or_else(|| DataError::Parse {
                line: 1,
                msg: format!("unexpected header field '{part}'"),
            })?;
            let (a, b) = v.split_once(':').ok_or_else(|| DataError::Parse {
                line: 1,
                msg: "bad mix ratio".into(),
            })?;
            let a = a.parse().map_err(|_| DataError::Parse {
                line: 1,
                msg: "bad mix ratio".into(),
            })?;
            let b = b.parse().map_err(|_| DataError::Parse {
                line: 1,
                msg: "bad mix ratio".into(),
            })?;
            Some((a, b))
        }
    };
    Ok(Header {
        level,
        vocab,
        c_max,
        source,
        mix,
    })
}

/// Write both level files into `dir` under `name`.
pub fn write_dataset(ds: &HierDataset, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf), DataError> {
    ds.validate()?;
    let high_path = dir.join(format!("{name}.high.glt"));
    let low_path = dir.join(format!("{name}.low.glt"));
    write_dataset_files(ds, &high_path, &low_path)?;
    Ok((high_path, low_path))
}

/// Write both level files at explicit paths.
pub fn write_dataset_files(
    ds: &HierDataset,
    high_path: &Path,
    low_path: &Path,
) -> Result<(), DataError> {
    ds.validate()?;
    let mut hw = BufWriter::new(File::create(high_path)?);
    write_header(&mut hw, "high", ds)?;
    for t in &ds.trajectories {
        writeln!(hw, "traj src={}", t.source.as_str())?;
        for h in &t.high {
            writeln!(
                hw,
                "task={} obs={} goal={} window_reward={} next_obs={} window_len={} terminal={}",
                fmt_tokens(&h.task),
                fmt_tokens(&h.obs),
                fmt_tokens(&h.goal),
                h.window_reward,
                fmt_tokens(&h.next_obs),
                h.window_len,
                h.terminal
            )?;
        }
    }
    hw.flush()?;

    let mut lw = BufWriter::new(File::create(low_path)?);
    write_header(&mut lw, "low", ds)?;
    for t in &ds.trajectories {
        writeln!(lw, "traj src={}", t.source.as_str())?;
        for l in &t.low {
            writeln!(
                lw,
                "goal={} obs={} action={} intrinsic_reward={} next_obs={} terminal={}",
                fmt_tokens(&l.goal),
                fmt_tokens(&l.obs),
                fmt_tokens(&l.action),
                l.intrinsic_reward,
                fmt_tokens(&l.next_obs),
                l.terminal
            )?;
        }
    }
    lw.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path, name: &str) -> Result<HierDataset, DataError> {
    read_dataset_files(
        &dir.join(format!("{name}.high.glt")),
        &dir.join(format!("{name}.low.glt")),
    )
}

struct HighGroup {
    source: SourceTag,
    items: Vec<HighTransition>,
}

struct LowGroup {
    source: SourceTag,
    items: Vec<LowTransition>,
}

fn read_traj_line(text: &str, line: usize) -> Result<SourceTag, DataError> {
    let mut parts = text.split_whitespace();
    parts.next(); // "traj"
    let src = field(&mut parts, "src", line)?;
    SourceTag::parse(src).ok_or_else(|| DataError::Parse {
        line,
        msg: format!("unknown source tag '{src}'"),
    })
}

/// Read both level files at explicit paths.
pub fn read_dataset_files(high_path: &Path, low_path: &Path) -> Result<HierDataset, DataError> {
    let hr = BufReader::new(File::open(high_path)?);
    let mut lines = hr.lines();
    let header_line = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".into(),
    })??;
    let header = parse_header(&header_line, "high")?;

    let mut high_groups: Vec<HighGroup> = Vec::new();
    for (i, line_res) in lines.enumerate() {
        let line_no = i + 2;
        let text = line_res?;
        if text.trim().is_empty() {
            continue;
        }
        if text.starts_with("traj") {
            high_groups.push(HighGroup {
                source: read_traj_line(&text, line_no)?,
                items: Vec::new(),
            });
            continue;
        }
        let group = high_groups.last_mut().ok_or_else(|| DataError::Parse {
            line: line_no,
            msg: "transition before first traj line".into(),
        })?;
        let mut parts = text.split_whitespace();
        let h = HighTransition {
            task: parse_tokens(field(&mut parts, "task", line_no)?, header.vocab, line_no)?,
            obs: parse_tokens(field(&mut parts, "obs", line_no)?, header.vocab, line_no)?,
            goal: parse_tokens(field(&mut parts, "goal", line_no)?, header.vocab, line_no)?,
            window_reward: parse_f64(field(&mut parts, "window_reward", line_no)?, line_no)?,
            next_obs: parse_tokens(field(&mut parts, "next_obs", line_no)?, header.vocab, line_no)?,
            window_len: field(&mut parts, "window_len", line_no)?
                .parse()
                .map_err(|_| DataError::Parse {
                    line: line_no,
                    msg: "bad window_len".into(),
                })?,
            terminal: parse_bool(field(&mut parts, "terminal", line_no)?, line_no)?,
        };
        if let Some(extra) = parts.next() {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("unexpected trailing field '{extra}'"),
            });
        }
        group.items.push(h);
    }

    let lr = BufReader::new(File::open(low_path)?);
    let mut lines = lr.lines();
    let low_header_line = lines.next().ok_or(DataError::Parse {
        line: 1,
        msg: "empty file".into(),
    })??;
    let low_header = parse_header(&low_header_line, "low")?;
    if (low_header.vocab, low_header.c_max) != (header.vocab, header.c_max) {
        return Err(DataError::Parse {
            line: 1,
            msg: "high/low headers disagree".into(),
        });
    }

    let mut low_groups: Vec<LowGroup> = Vec::new();
    for (i, line_res) in lines.enumerate() {
        let line_no = i + 2;
        let text = line_res?;
        if text.trim().is_empty() {
            continue;
        }
        if text.starts_with("traj") {
            low_groups.push(LowGroup {
                source: read_traj_line(&text, line_no)?,
                items: Vec::new(),
            });
            continue;
        }
        let group = low_groups.last_mut().ok_or_else(|| DataError::Parse {
            line: line_no,
            msg: "transition before first traj line".into(),
        })?;
        let mut parts = text.split_whitespace();
        let goal = parse_tokens(field(&mut parts, "goal", line_no)?, header.vocab, line_no)?;
        let obs = parse_tokens(field(&mut parts, "obs", line_no)?, header.vocab, line_no)?;
        let action = parse_tokens(field(&mut parts, "action", line_no)?, header.vocab, line_no)?;
        let intrinsic: u8 = field(&mut parts, "intrinsic_reward", line_no)?
            .parse()
            .map_err(|_| DataError::Parse {
                line: line_no,
                msg: "bad intrinsic_reward".into(),
            })?;
        if intrinsic > 1 {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("intrinsic_reward {intrinsic} not binary"),
            });
        }
        let next_obs = parse_tokens(field(&mut parts, "next_obs", line_no)?, header.vocab, line_no)?;
        let terminal = parse_bool(field(&mut parts, "terminal", line_no)?, line_no)?;
        if let Some(extra) = parts.next() {
            return Err(DataError::Parse {
                line: line_no,
                msg: format!("unexpected trailing field '{extra}'"),
            });
        }
        group.items.push(LowTransition {
            goal,
            obs,
            action,
            intrinsic_reward: intrinsic,
            next_obs,
            terminal,
        });
    }

    if high_groups.len() != low_groups.len() {
        return Err(DataError::Parse {
            line: 0,
            msg: format!(
                "high file has {} trajectories, low file has {}",
                high_groups.len(),
                low_groups.len()
            ),
        });
    }

    let mut ds = HierDataset::new(header.vocab, header.c_max);
    ds.mixture_ratio = header.mix;
    for (hg, lg) in high_groups.into_iter().zip(low_groups) {
        if hg.source != lg.source {
            return Err(DataError::Parse {
                line: 0,
                msg: "trajectory source tags disagree between files".into(),
            });
        }
        ds.trajectories.push(HierTrajectory {
            source: hg.source,
            high: hg.items,
            low: lg.items,
        });
    }
    ds.validate()?;
    Ok(ds)
}
