//! Distance-to-closest-record diagnostics in the shared encoded space.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encode::Encoding;
use super::stats::{self, euclidean};
use super::{Direction, MetricRow, Report};
use crate::data::{ColumnKind, Table};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::parallel::map_indexed;

pub const RATIO_EPS: f64 = 1e-8;

/// Nearest-neighbor distance from each row of `from` to `to`, optionally
/// skipping the same index (leave-one-out within one set).
pub fn nearest_distances(from: &Matrix, to: &Matrix, skip_self: bool) -> Vec<f64> {
    map_indexed(from.rows, |i| {
        let a = from.row(i);
        (0..to.rows)
            .filter(|j| !(skip_self && *j == i))
            .map(|j| euclidean(a, to.row(j)))
            .fold(f64::INFINITY, f64::min)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcrProtection {
    pub fraction: f64,
    pub ratio_mean: f64,
    pub ratio_p5: f64,
    pub ratio_p50: f64,
    pub ratio_p95: f64,
    /// Per real row: distance to the synthetic set and to the other real rows.
    pub d_syn: Vec<f64>,
    pub d_real: Vec<f64>,
}

fn check_sizes(real: &Table, synth: &Table) -> Result<()> {
    if real.schema().hash() != synth.schema().hash() {
        return Err(Error::SchemaMismatch(
            "real and synthetic tables use different schemas".into(),
        ));
    }
    if real.n_rows() < 2 {
        return Err(Error::Invalid("DCR needs at least 2 real rows".into()));
    }
    if synth.n_rows() == 0 {
        return Err(Error::Invalid("DCR needs a nonempty synthetic table".into()));
    }
    Ok(())
}

pub fn dcr_protection(real: &Table, synth: &Table) -> Result<DcrProtection> {
    check_sizes(real, synth)?;
    let enc = Encoding::fit_all(real)?;
    let (xr, xs) = (enc.encode(real)?, enc.encode(synth)?);
    let d_syn = nearest_distances(&xr, &xs, false);
    let d_real = nearest_distances(&xr, &xr, true);
    let protected = d_syn.iter().zip(&d_real).filter(|(s, r)| s > r).count();
    let mut ratios: Vec<f64> = d_syn.iter().zip(&d_real).map(|(s, r)| s / (r + RATIO_EPS)).collect();
    let ratio_mean = stats::mean(&ratios);
    ratios.sort_by(f64::total_cmp);
    Ok(DcrProtection {
        fraction: protected as f64 / d_syn.len() as f64,
        ratio_mean,
        ratio_p5: stats::quantile_sorted(&ratios, 0.05),
        ratio_p50: stats::quantile_sorted(&ratios, 0.5),
        ratio_p95: stats::quantile_sorted(&ratios, 0.95),
        d_syn,
        d_real,
    })
}

/// Column-independent uniform table: continuous columns over the real
/// min..max, integer columns over the integers in that range, discrete
/// columns over the observed categories.
pub fn random_baseline(real: &Table, n: usize, seed: u64) -> Result<Table> {
    if real.n_rows() == 0 {
        return Err(Error::Invalid("random baseline needs a nonempty real table".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = Vec::with_capacity(real.columns().len());
    for (meta, col) in real.schema().columns.iter().zip(real.columns()) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values: Vec<f64> = match meta.kind {
            ColumnKind::Continuous if hi > lo => (0..n).map(|_| rng.random_range(lo..=hi)).collect(),
            ColumnKind::Continuous => vec![lo; n],
            ColumnKind::Integer => (0..n).map(|_| rng.random_range(lo as i64..=hi as i64) as f64).collect(),
            ColumnKind::Binary | ColumnKind::Categorical => {
                let mut seen: Vec<f64> = col.to_vec();
                seen.sort_by(f64::total_cmp);
                seen.dedup();
                (0..n).map(|_| *seen.choose(&mut rng).expect("nonempty")).collect()
            }
        };
        cols.push(values);
    }
    Table::new(real.schema().clone(), cols)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineProtection {
    /// `None` when the random baseline's median distance is 0.
    pub score: Option<f64>,
    pub median_synth: f64,
    pub median_random: f64,
    pub warning: Option<String>,
}

/// min(1, median synth-to-real DCR / median random-to-real DCR).
pub fn dcr_baseline_protection(real: &Table, synth: &Table, seed: u64) -> Result<BaselineProtection> {
    check_sizes(real, synth)?;
    let enc = Encoding::fit_all(real)?;
    let xr = enc.encode(real)?;
    let xs = enc.encode(synth)?;
    let xb = enc.encode(&random_baseline(real, synth.n_rows(), seed)?)?;
    let median_synth = stats::median(&nearest_distances(&xs, &xr, false));
    let median_random = stats::median(&nearest_distances(&xb, &xr, false));
    if median_random <= 0.0 {
        return Ok(BaselineProtection {
            score: None,
            median_synth,
            median_random,
            warning: Some("random baseline median distance is 0; baseline score undefined".into()),
        });
    }
    Ok(BaselineProtection {
        score: Some((median_synth / median_random).min(1.0)),
        median_synth,
        median_random,
        warning: None,
    })
}

pub fn privacy_report(real: &Table, synth: &Table, seed: u64) -> Result<(Report, DcrProtection, BaselineProtection)> {
    let p = dcr_protection(real, synth)?;
    let b = dcr_baseline_protection(real, synth, seed)?;
    let mut r = Report::new("Privacy");
    r.notes.extend(b.warning.clone());
    let h = Direction::Higher;
    for (metric, v) in [
        ("Protection Fraction", Some(p.fraction)),
        ("Distance Ratio (mean)", Some(p.ratio_mean)),
        ("Distance Ratio (p5)", Some(p.ratio_p5)),
        ("Distance Ratio (p50)", Some(p.ratio_p50)),
        ("Distance Ratio (p95)", Some(p.ratio_p95)),
        ("Standardized Distance Ratio", b.score),
    ] {
        r.push(MetricRow::summary("DCR", metric, v, h));
    }
    Ok((r, p, b))
}
