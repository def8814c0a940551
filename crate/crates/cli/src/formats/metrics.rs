//! Tab-separated training log.

use std::io::{self, Write};

use fenwarp_core::optim::MetricsRow;

use crate::error::FormatError;

pub const COLUMNS: [&str; 8] = ["iter", "tau", "lr_fenwick", "lr_rot", "cfg", "L_rfsds_norm", "L_temp", "L_arap"];

pub fn write_header<W: Write>(w: &mut W) -> io::Result<()> {
    writeln!(w, "{}", COLUMNS.join("\t"))
}

pub fn write_row<W: Write>(w: &mut W, r: &MetricsRow) -> io::Result<()> {
    writeln!(
        w,
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.iter, r.tau, r.lr_fenwick, r.lr_rot, r.cfg, r.rfsds_norm, r.temporal, r.arap
    )
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>, FormatError> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| FormatError::new("empty metrics log"))?;
    if head.split('\t').collect::<Vec<_>>() != COLUMNS {
        return Err(FormatError::new(format!("unexpected header {head:?}")));
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != COLUMNS.len() {
                return Err(FormatError::new(format!("line {}: {} fields", n + 2, f.len())));
            }
            let num = |i: usize| {
                f[i].parse::<f64>()
                    .map_err(|e| FormatError::new(format!("line {}: {}: {e}", n + 2, COLUMNS[i])))
            };
            Ok(MetricsRow {
                iter: f[0]
                    .parse()
                    .map_err(|e| FormatError::new(format!("line {}: iter: {e}", n + 2)))?,
                tau: num(1)?,
                lr_fenwick: num(2)?,
                lr_rot: num(3)?,
                cfg: num(4)?,
                rfsds_norm: num(5)?,
                temporal: num(6)?,
                arap: num(7)?,
            })
        })
        .collect()
}
