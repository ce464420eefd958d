//! Text fixtures: channel dumps and association blocks.
//!
//! Channel dump: `#` lines are comments. The first data line holds
//! `L K N`. Each following line is one `(l, k)` record
//! `l k beta re_0 im_0 re_1 im_1 ... re_{N-1} im_{N-1}`, records ordered by
//! `l` then `k`. Floats use the shortest representation that round-trips.
//!
//! Association blocks: for each AP a line `ap,<l>` followed by U rows of K
//! comma-separated 0/1 entries.

use std::fmt::Write as _;

use nalgebra::DVector;

use crate::assoc::AssociationMatrix;
use crate::channel::{ChannelSet, CorrelationMatrix};
use crate::{Error, Result, C64};

fn format_err(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Format { what, reason: reason.into() }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Path-loss gains and channel vectors as stored in a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDump {
    pub beta: Vec<Vec<f64>>,
    pub h_sim: Vec<Vec<DVector<C64>>>,
}

impl ChannelDump {
    pub fn from_channels(channels: &ChannelSet) -> Self {
        Self { beta: channels.beta.clone(), h_sim: channels.h_sim.clone() }
    }

    /// Attach the correlation matrix, which the dump does not carry.
    pub fn into_channels(self, correlation: CorrelationMatrix) -> ChannelSet {
        ChannelSet { h_sim: self.h_sim, beta: self.beta, correlation }
    }

    pub fn to_text(&self) -> String {
        let aps = self.h_sim.len();
        let users = self.h_sim.first().map_or(0, Vec::len);
        let n = self.h_sim.first().and_then(|r| r.first()).map_or(0, |v| v.len());
        let mut out = String::from("# l k beta re_0 im_0 ... re_{N-1} im_{N-1}\n");
        writeln!(out, "{aps} {users} {n}").unwrap();
        for l in 0..aps {
            for k in 0..users {
                write!(out, "{l} {k} {:e}", self.beta[l][k]).unwrap();
                for v in self.h_sim[l][k].iter() {
                    write!(out, " {:e} {:e}", v.re, v.im).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = data_lines(text);
        let (_, header) = lines.next().ok_or_else(|| format_err("channel dump", "missing `L K N` header"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err("channel dump", format!("header: {e}")))?;
        let [aps, users, n] = dims[..] else {
            return Err(format_err("channel dump", "header must be `L K N`"));
        };
        let mut beta = vec![vec![0.0; users]; aps];
        let mut h_sim = vec![vec![DVector::zeros(n); users]; aps];
        let mut seen = vec![vec![false; users]; aps];
        for (line_no, line) in lines {
            let bad = |reason: String| format_err("channel dump", format!("line {line_no}: {reason}"));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 + 2 * n {
                return Err(bad(format!("expected {} fields, got {}", 3 + 2 * n, fields.len())));
            }
            let l: usize = fields[0].parse().map_err(|e| bad(format!("l: {e}")))?;
            let k: usize = fields[1].parse().map_err(|e| bad(format!("k: {e}")))?;
            if l >= aps || k >= users {
                return Err(bad(format!("record ({l}, {k}) out of range")));
            }
            if std::mem::replace(&mut seen[l][k], true) {
                return Err(bad(format!("duplicate record ({l}, {k})")));
            }
            let nums: Vec<f64> = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(e.to_string()))?;
            beta[l][k] = nums[0];
            h_sim[l][k] = DVector::from_fn(n, |i, _| C64::new(nums[1 + 2 * i], nums[2 + 2 * i]));
        }
        if let Some(l) = seen.iter().position(|r| r.iter().any(|s| !s)) {
            return Err(format_err("channel dump", format!("missing records for AP {l}")));
        }
        Ok(Self { beta, h_sim })
    }
}

pub fn association_to_csv(assoc: &AssociationMatrix) -> String {
    let mut out = String::new();
    for l in 0..assoc.num_aps() {
        writeln!(out, "ap,{l}").unwrap();
        for row in assoc.block(l) {
            let cells: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
    }
    out
}

/// Parse association blocks. Feasibility is not checked here; call
/// [`AssociationMatrix::validate`] for that.
pub fn association_from_csv(text: &str) -> Result<AssociationMatrix> {
    let mut blocks: Vec<Vec<Vec<bool>>> = Vec::new();
    for (line_no, line) in data_lines(text) {
        let bad = |reason: String| format_err("association csv", format!("line {line_no}: {reason}"));
        if let Some(idx) = line.strip_prefix("ap,") {
            let l: usize = idx.trim().parse().map_err(|e| bad(format!("AP index: {e}")))?;
            if l != blocks.len() {
                return Err(bad(format!("expected block {}, found {l}", blocks.len())));
            }
            blocks.push(Vec::new());
            continue;
        }
        let block = blocks.last_mut().ok_or_else(|| bad("row before the first `ap,` line".into()))?;
        let row = line
            .split(',')
            .map(|c| match c.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("entry `{other}` is not 0 or 1"))),
            })
            .collect::<Result<Vec<bool>>>()?;
        block.push(row);
    }
    let antennas = blocks.first().map_or(0, Vec::len);
    let users = blocks.first().and_then(|b| b.first()).map_or(0, Vec::len);
    for (l, b) in blocks.iter().enumerate() {
        if b.len() != antennas || b.iter().any(|r| r.len() != users) {
            return Err(format_err("association csv", format!("block {l} is not {antennas}x{users}")));
        }
    }
    Ok(AssociationMatrix::from_bits(blocks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dump() -> ChannelDump {
        let h = |s: f64| DVector::from_vec(vec![C64::new(s, -s * 1e-7), C64::new(1.0 / 3.0, 2.5e-12)]);
        ChannelDump { beta: vec![vec![1.5e-10, 2.25e-9]], h_sim: vec![vec![h(0.1), h(-7.0)]] }
    }

    #[test]
    fn channel_dump_round_trips_exactly() {
        let d = dump();
        let text = d.to_text();
        assert!(text.lines().nth(1).unwrap() == "1 2 2");
        assert_eq!(ChannelDump::parse(&text).unwrap(), d);
    }

    #[test]
    fn channel_dump_errors() {
        assert!(ChannelDump::parse("").is_err());
        assert!(ChannelDump::parse("1 1 1\n0 0 1.0 2.0\n").is_err());
        assert!(ChannelDump::parse("1 1 1\n0 1 1.0 2.0 3.0\n").is_err());
        assert!(ChannelDump::parse("1 2 1\n0 0 1.0 2.0 3.0\n").is_err());
        assert!(ChannelDump::parse("1 1 1\n0 0 1.0 2.0 3.0\n0 0 1.0 2.0 3.0\n").is_err());
    }

    #[test]
    fn association_round_trips() {
        let a = AssociationMatrix::from_choices(&[vec![0, 2], vec![1, 1]], 3);
        let text = association_to_csv(&a);
        assert_eq!(text, "ap,0\n1,0,0\n0,0,1\nap,1\n0,1,0\n0,1,0\n");
        assert_eq!(association_from_csv(&text).unwrap(), a);
    }

    #[test]
    fn association_errors() {
        assert!(association_from_csv("1,0\n").is_err());
        assert!(association_from_csv("ap,1\n1,0\n").is_err());
        assert!(association_from_csv("ap,0\n1,2\n").is_err());
        assert!(association_from_csv("ap,0\n1,0\nap,1\n1,0,0\n").is_err());
    }
}
