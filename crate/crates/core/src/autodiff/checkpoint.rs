//! Plain-text parameter checkpoints.
//!
//! ```text
//! FLUIDLOGIC-CKPT-1
//! networks 1
//! network deontic.drift
//! widths 2 16 2
//! weights 0 32 <values...>
//! biases 0 16 <values...>
//! ...
//! ```
//!
//! Values use Rust's shortest round-trip float formatting, so a save/load
//! cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;

use crate::autodiff::Mlp;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "FLUIDLOGIC-CKPT-1";

pub fn to_string<'a>(networks: impl IntoIterator<Item = (&'a str, &'a Mlp)>) -> String {
    let networks: Vec<_> = networks.into_iter().collect();
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(out, "networks {}", networks.len()).unwrap();
    for (name, mlp) in networks {
        assert!(!name.contains(char::is_whitespace), "network names cannot contain whitespace");
        writeln!(out, "network {name}").unwrap();
        let widths: Vec<String> = mlp.widths().iter().map(|w| w.to_string()).collect();
        writeln!(out, "widths {}", widths.join(" ")).unwrap();
        for l in 0..mlp.widths().len() - 1 {
            let (w, b) = mlp.layer(l);
            for (label, t) in [("weights", w), ("biases", b)] {
                write!(out, "{label} {l} {}", t.numel()).unwrap();
                for v in t.values() {
                    write!(out, " {v}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Config(format!("checkpoint line {}: {}", line + 1, msg.into()))
}

pub fn from_str(text: &str) -> Result<Vec<(String, Mlp)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == CHECKPOINT_HEADER => {}
        Some((i, l)) => return Err(bad(i, format!("expected header {CHECKPOINT_HEADER}, got `{l}`"))),
        None => return Err(Error::Config("empty checkpoint".into())),
    }
    let (i, l) = lines.next().ok_or_else(|| Error::Config("truncated checkpoint".into()))?;
    let count: usize = l
        .strip_prefix("networks ")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| bad(i, "expected `networks <count>`"))?;

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (i, l) = lines.next().ok_or_else(|| Error::Config("truncated checkpoint".into()))?;
        let name = l.strip_prefix("network ").ok_or_else(|| bad(i, "expected `network <name>`"))?;
        let (i, l) = lines.next().ok_or_else(|| Error::Config("truncated checkpoint".into()))?;
        let widths: Vec<usize> = l
            .strip_prefix("widths ")
            .ok_or_else(|| bad(i, "expected `widths ...`"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(i, format!("bad width `{t}`"))))
            .collect::<Result<_>>()?;
        let layers = widths.len().saturating_sub(1);
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for layer in 0..layers {
            for (label, dest) in [("weights", &mut weights), ("biases", &mut biases)] {
                let (i, l) = lines.next().ok_or_else(|| Error::Config("truncated checkpoint".into()))?;
                let mut toks = l.split_whitespace();
                if toks.next() != Some(label) || toks.next() != Some(&layer.to_string()) {
                    return Err(bad(i, format!("expected `{label} {layer}`")));
                }
                let n: usize = toks.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(i, "missing count"))?;
                let vals: Vec<f64> = toks
                    .map(|t| t.parse().map_err(|_| bad(i, format!("bad value `{t}`"))))
                    .collect::<Result<_>>()?;
                if vals.len() != n {
                    return Err(bad(i, format!("expected {n} values, found {}", vals.len())));
                }
                dest.push(vals);
            }
        }
        out.push((name.to_string(), Mlp::from_parts(&widths, weights, biases)?));
    }
    Ok(out)
}
