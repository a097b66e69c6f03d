//! Plot-ready CSV files. Headers are fixed so plotting scripts can rely on them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use causalmix::data::Table;
use causalmix::pipeline::SyntheticTable;

pub const HIST_BINS: usize = 30;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// `column,source,bin,low,high,label,proportion`: equal-width histograms
/// over the pooled range for numeric columns, category shares otherwise.
pub fn write_marginals(path: &Path, real: &Table, synth: &Table) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "column,source,bin,low,high,label,proportion")?;
    for meta in &real.schema().columns {
        let r = real.column(&meta.name)?;
        let s = synth.column(&meta.name)?;
        if meta.kind.is_numeric() {
            let lo = r.iter().chain(s).copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().chain(s).copied().fold(f64::NEG_INFINITY, f64::max);
            let width = if hi > lo { (hi - lo) / HIST_BINS as f64 } else { 1.0 };
            for (source, v) in [("real", r), ("synthetic", s)] {
                let mut counts = [0usize; HIST_BINS];
                for x in v {
                    let b = (((x - lo) / width) as usize).min(HIST_BINS - 1);
                    counts[b] += 1;
                }
                for (b, c) in counts.iter().enumerate() {
                    let p = if v.is_empty() { 0.0 } else { *c as f64 / v.len() as f64 };
                    let a = lo + b as f64 * width;
                    writeln!(w, "{},{source},{b},{a},{},,{p}", meta.name, a + width)?;
                }
            }
        } else {
            let labels = meta.labels();
            let k = meta.cardinality().unwrap_or(labels.len());
            for (source, v) in [("real", r), ("synthetic", s)] {
                for class in 0..k {
                    let c = v.iter().filter(|x| **x == class as f64).count();
                    let p = if v.is_empty() { 0.0 } else { c as f64 / v.len() as f64 };
                    let label = labels.get(class).cloned().unwrap_or_else(|| class.to_string());
                    writeln!(w, "{},{source},{class},{class},{class},{label},{p}", meta.name)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `row,treatment,truth,theta` for one induced quantity.
pub fn write_scatter(path: &Path, synth: &SyntheticTable, truth: &[f64], theta: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "row,treatment,truth,theta")?;
    for (i, t) in synth.treatment().iter().enumerate() {
        writeln!(w, "{i},{t},{},{}", truth[i], theta[i])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> causalmix::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
