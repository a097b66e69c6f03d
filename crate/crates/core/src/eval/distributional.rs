//! Real-vs-synthetic fidelity at marginal, pairwise, conditional and joint level.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::digamma;

use super::encode::{Encoding, MixedRows};
use super::stats::{self, auc, pearson, Logistic};
use super::{Direction, MetricRow, Report};
use crate::data::{ColumnKind, Table};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::parallel::map_indexed;

const EPS_SD: f64 = 1e-8;
pub const KSG_K: usize = 3;
pub const MIN_KSG_ROWS: usize = 50;
pub const SU_BINS: usize = 10;
pub const CONDITIONAL_BINS: usize = 5;
/// Rows used for the median-distance bandwidth when the pooled sample is larger.
pub const BANDWIDTH_ROWS: usize = 2000;
pub const MIN_C2ST_ROWS: usize = 50;

fn nonempty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("empty sample".into()));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// 1-D Wasserstein-1 distance between empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    nonempty(a, b)?;
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() == sb.len() {
        return Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64);
    }
    // ∫ |F_a - F_b| dx over the merged support
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = sa[0].min(sb[0]);
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// W1 divided by the real column's population sd (plus 1e-8).
pub fn normalized_wasserstein(real: &[f64], synth: &[f64]) -> Result<f64> {
    Ok(wasserstein1(real, synth)? / (stats::sd(real) + EPS_SD))
}

/// 1 - sup |F_real - F_synth|.
pub fn ks_complement(real: &[f64], synth: &[f64]) -> Result<f64> {
    nonempty(real, synth)?;
    let (sa, sb) = (sorted(real), sorted(synth));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let v = match (sa.get(i), sb.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] == v {
            i += 1;
        }
        while j < sb.len() && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(1.0 - d)
}

fn frequencies(v: &[f64]) -> BTreeMap<i64, f64> {
    let mut m = BTreeMap::new();
    for x in v {
        *m.entry(*x as i64).or_insert(0.0) += 1.0;
    }
    let n = v.len() as f64;
    m.values_mut().for_each(|c| *c /= n);
    m
}

fn tv_distance<K: Ord + Copy>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut keys: Vec<K> = p.keys().chain(q.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// 1 - total variation between category frequencies.
pub fn tv_complement(real: &[f64], synth: &[f64]) -> Result<f64> {
    nonempty(real, synth)?;
    Ok(1.0 - tv_distance(&frequencies(real), &frequencies(synth)))
}

/// 1 - |rho_real - rho_synth| / 2.
pub fn correlation_similarity(real: (&[f64], &[f64]), synth: (&[f64], &[f64])) -> Result<f64> {
    let r = pearson(real.0, real.1).ok_or_else(|| Error::Invalid("constant column in real pair".into()))?;
    let s = pearson(synth.0, synth.1).ok_or_else(|| Error::Invalid("constant column in synthetic pair".into()))?;
    Ok(1.0 - (r - s).abs() / 2.0)
}

fn joint_frequencies(a: &[f64], b: &[f64]) -> BTreeMap<(i64, i64), f64> {
    let mut m = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *m.entry((*x as i64, *y as i64)).or_insert(0.0) += 1.0;
    }
    let n = a.len() as f64;
    m.values_mut().for_each(|c| *c /= n);
    m
}

/// 1 - total variation between joint contingency tables.
pub fn contingency_similarity(real: (&[f64], &[f64]), synth: (&[f64], &[f64])) -> Result<f64> {
    nonempty(real.0, synth.0)?;
    Ok(1.0 - tv_distance(&joint_frequencies(real.0, real.1), &joint_frequencies(synth.0, synth.1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Discrete,
}

impl From<ColumnKind> for VarKind {
    fn from(k: ColumnKind) -> Self {
        if k.is_numeric() {
            VarKind::Continuous
        } else {
            VarKind::Discrete
        }
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Bin index by this sample's own quantile edges.
pub fn quantile_bins(v: &[f64], bins: usize) -> Vec<f64> {
    let s = sorted(v);
    let edges: Vec<f64> = (1..bins)
        .map(|i| stats::quantile_sorted(&s, i as f64 / bins as f64))
        .collect();
    bin_with(v, &edges)
}

fn bin_with(v: &[f64], edges: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| edges.iter().filter(|e| x > e).count() as f64)
        .collect()
}

fn relabel(v: &[f64]) -> (Vec<usize>, usize) {
    let mut keys: Vec<i64> = v.iter().map(|x| *x as i64).collect();
    keys.sort();
    keys.dedup();
    let idx = v
        .iter()
        .map(|x| keys.binary_search(&(*x as i64)).expect("present"))
        .collect();
    (idx, keys.len())
}

/// Add-one smoothed plug-in MI and marginal entropies (nats).
pub fn smoothed_mi(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ia, ka) = relabel(a);
    let (ib, kb) = relabel(b);
    let mut counts = vec![1.0; ka * kb];
    for (x, y) in ia.iter().zip(&ib) {
        counts[x * kb + y] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    let p: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let pa: Vec<f64> = (0..ka).map(|x| (0..kb).map(|y| p[x * kb + y]).sum()).collect();
    let pb: Vec<f64> = (0..kb).map(|y| (0..ka).map(|x| p[x * kb + y]).sum()).collect();
    let (ha, hb) = (entropy(&pa), entropy(&pb));
    let mi = ha + hb - entropy(&p);
    (mi.max(0.0), ha, hb)
}

/// Kraskov-Stögbauer-Grassberger MI estimate (first variant, max-norm).
/// Inputs are standardized and perturbed by 1e-10-scale seeded noise so
/// tied values (integer columns) do not produce zero radii.
pub fn ksg_mi(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::Shape("pair columns differ in length".into()));
    }
    if n < MIN_KSG_ROWS.max(k + 1) {
        return Err(Error::Invalid(format!(
            "kNN mutual information needs at least {MIN_KSG_ROWS} rows, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut prep = |v: &[f64]| -> Vec<f64> {
        let (m, s) = (stats::mean(v), stats::sd(v));
        let s = if s > 0.0 { s } else { 1.0 };
        v.iter()
            .map(|x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                (x - m) / s + 1e-10 * e
            })
            .collect()
    };
    let (x, y) = (prep(a), prep(b));
    let terms = map_indexed(n, |i| {
        let mut best = vec![f64::INFINITY; k];
        for j in 0..n {
            if j == i {
                continue;
            }
            let d = (x[i] - x[j]).abs().max((y[i] - y[j]).abs());
            if d < best[k - 1] {
                let pos = best.iter().position(|b| d < *b).expect("d below the largest");
                best.insert(pos, d);
                best.pop();
            }
        }
        let eps = best[k - 1];
        let (mut nx, mut ny) = (0usize, 0usize);
        for j in 0..n {
            if j == i {
                continue;
            }
            if (x[i] - x[j]).abs() < eps {
                nx += 1;
            }
            if (y[i] - y[j]).abs() < eps {
                ny += 1;
            }
        }
        digamma((nx + 1) as f64) + digamma((ny + 1) as f64)
    });
    let mi = digamma(k as f64) + digamma(n as f64) - terms.iter().sum::<f64>() / n as f64;
    Ok(mi.max(0.0))
}

/// SU = 2 MI / (H_a + H_b), clamped to [0, 1]. Continuous-continuous pairs
/// use the kNN MI normalized by the entropies of 10-quantile-binned
/// marginals; pairs with a discrete side go through the smoothed table,
/// binning any continuous side first.
pub fn symmetric_uncertainty(a: (&[f64], VarKind), b: (&[f64], VarKind)) -> Result<f64> {
    let prep = |v: &[f64], kind: VarKind| match kind {
        VarKind::Continuous => quantile_bins(v, SU_BINS),
        VarKind::Discrete => v.to_vec(),
    };
    let (da, db) = (prep(a.0, a.1), prep(b.0, b.1));
    let (mut mi, ha, hb) = smoothed_mi(&da, &db);
    if a.1 == VarKind::Continuous && b.1 == VarKind::Continuous {
        mi = ksg_mi(a.0, b.0, KSG_K)?;
    }
    if ha + hb <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * mi / (ha + hb)).clamp(0.0, 1.0))
}

pub fn su_similarity(real: (&[f64], &[f64]), synth: (&[f64], &[f64]), kinds: (VarKind, VarKind)) -> Result<f64> {
    let r = symmetric_uncertainty((real.0, kinds.0), (real.1, kinds.1))?;
    let s = symmetric_uncertainty((synth.0, kinds.0), (synth.1, kinds.1))?;
    Ok(1.0 - (r - s).abs())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance between continuous parts of A ∪ B;
/// large pools are thinned by an even stride to `BANDWIDTH_ROWS` rows.
pub fn median_bandwidth(a: &MixedRows, b: &MixedRows) -> f64 {
    if a.cont.cols == 0 {
        return 1.0;
    }
    let pool = Matrix::vstack(&[&a.cont, &b.cont]).expect("same width");
    let n = pool.rows;
    let rows: Vec<usize> = if n > BANDWIDTH_ROWS {
        (0..BANDWIDTH_ROWS).map(|i| i * n / BANDWIDTH_ROWS).collect()
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (p, &i) in rows.iter().enumerate() {
        for &j in &rows[p + 1..] {
            d.push(sq_dist(pool.row(i), pool.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let m = stats::median(&d);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Product of an RBF kernel on the continuous part and the Hamming
/// similarity (fraction of matching coordinates) on the discrete part.
pub fn mixed_kernel(ac: &[f64], ad: &[f64], bc: &[f64], bd: &[f64], bandwidth: f64) -> f64 {
    let rbf = if ac.is_empty() {
        1.0
    } else {
        (-sq_dist(ac, bc) / (2.0 * bandwidth * bandwidth)).exp()
    };
    let ham = if ad.is_empty() {
        1.0
    } else {
        ad.iter().zip(bd).filter(|(x, y)| x == y).count() as f64 / ad.len() as f64
    };
    rbf * ham
}

/// Row sums of k(a_i, ·) over `b`, optionally skipping j == i.
fn kernel_sums(a: &MixedRows, b: &MixedRows, h: f64, skip_diag: bool) -> Vec<f64> {
    map_indexed(a.n_rows(), |i| {
        let (ac, ad) = (a.cont.row(i), a.disc.row(i));
        (0..b.n_rows())
            .filter(|j| !(skip_diag && *j == i))
            .map(|j| mixed_kernel(ac, ad, b.cont.row(j), b.disc.row(j), h))
            .sum()
    })
}

fn check_widths(a: &MixedRows, b: &MixedRows) -> Result<()> {
    if a.cont.cols != b.cont.cols || a.disc.cols != b.disc.cols {
        return Err(Error::Shape("row sets differ in column layout".into()));
    }
    Ok(())
}

/// Unbiased MMD² with the mixed kernel and median-heuristic bandwidth.
pub fn mmd2_mixed(a: &MixedRows, b: &MixedRows) -> Result<f64> {
    let h = median_bandwidth(a, b);
    mmd2_unbiased_with(a, b, h)
}

pub fn mmd2_unbiased_with(a: &MixedRows, b: &MixedRows, h: f64) -> Result<f64> {
    check_widths(a, b)?;
    let (n, m) = (a.n_rows(), b.n_rows());
    if n < 2 || m < 2 {
        return Err(Error::Invalid("MMD² needs at least 2 rows on each side".into()));
    }
    let kaa: f64 = kernel_sums(a, a, h, true).iter().sum();
    let kbb: f64 = kernel_sums(b, b, h, true).iter().sum();
    let kab: f64 = kernel_sums(a, b, h, false).iter().sum();
    let (nf, mf) = (n as f64, m as f64);
    Ok(kaa / (nf * (nf - 1.0)) + kbb / (mf * (mf - 1.0)) - 2.0 * kab / (nf * mf))
}

/// Biased (V-statistic) MMD², diagonal included.
pub fn mmd2_biased_with(a: &MixedRows, b: &MixedRows, h: f64) -> Result<f64> {
    check_widths(a, b)?;
    let (n, m) = (a.n_rows(), b.n_rows());
    if n == 0 || m == 0 {
        return Err(Error::Invalid("MMD² needs nonempty samples".into()));
    }
    let kaa: f64 = kernel_sums(a, a, h, false).iter().sum();
    let kbb: f64 = kernel_sums(b, b, h, false).iter().sum();
    let kab: f64 = kernel_sums(a, b, h, false).iter().sum();
    let (nf, mf) = (n as f64, m as f64);
    Ok(kaa / (nf * nf) + kbb / (mf * mf) - 2.0 * kab / (nf * mf))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFidelity {
    /// Real-stratum-size weighted MMD² between real and synthetic strata.
    pub weighted_mmd2: f64,
    /// Same weighting between two halves of each real stratum, rescaled to
    /// the real-vs-synthetic sample sizes.
    pub reference: f64,
    pub ratio: f64,
    /// (stratum label, real rows, synthetic rows, MMD²)
    pub strata: Vec<(String, usize, usize, f64)>,
    pub warnings: Vec<String>,
}

/// Stratified MMD² of all columns except `cond`. The V-statistic is used so
/// that the within-real reference is strictly positive; under a perfect
/// generator its expectation, after the (1/n + 1/m) size correction,
/// matches the real-vs-synthetic term and the ratio is near 1.
pub fn conditional_fidelity(
    real: &Table,
    synth: &Table,
    cond: &str,
    n_bins: usize,
    seed: u64,
) -> Result<ConditionalFidelity> {
    let schema = real.schema();
    let meta = schema.meta(cond)?;
    let others: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| c.name != cond)
        .map(|c| c.name.clone())
        .collect();
    let enc = Encoding::fit(real, &others)?;
    let (mr, ms) = (enc.mixed(real)?, enc.mixed(synth)?);
    let (cr, cs) = (real.column(cond)?, synth.column(cond)?);
    let (sr, ss, labels): (Vec<f64>, Vec<f64>, Vec<String>) = if meta.kind.is_numeric() {
        let s = sorted(cr);
        let edges: Vec<f64> = (1..n_bins)
            .map(|i| stats::quantile_sorted(&s, i as f64 / n_bins as f64))
            .collect();
        let labels = (0..n_bins).map(|b| format!("bin{b}")).collect();
        (bin_with(cr, &edges), bin_with(cs, &edges), labels)
    } else {
        let labels = match meta.kind {
            ColumnKind::Binary => vec!["0".to_string(), "1".to_string()],
            _ => meta.labels(),
        };
        (cr.to_vec(), cs.to_vec(), labels)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut num, mut den, mut wsum) = (0.0, 0.0, 0.0);
    let mut out = ConditionalFidelity {
        weighted_mmd2: 0.0,
        reference: 0.0,
        ratio: 0.0,
        strata: Vec::new(),
        warnings: Vec::new(),
    };
    for (k, label) in labels.iter().enumerate() {
        let rr: Vec<usize> = (0..sr.len()).filter(|i| sr[*i] == k as f64).collect();
        let rs: Vec<usize> = (0..ss.len()).filter(|i| ss[*i] == k as f64).collect();
        if rr.len() < 4 || rs.len() < 2 {
            if !rr.is_empty() || !rs.is_empty() {
                out.warnings.push(format!(
                    "stratum {cond}={label} dropped ({} real, {} synthetic rows)",
                    rr.len(),
                    rs.len()
                ));
            }
            continue;
        }
        let (a, b) = (mr.select(&rr), ms.select(&rs));
        let h = median_bandwidth(&a, &b);
        let v = mmd2_biased_with(&a, &b, h)?;
        let mut shuffled = rr.clone();
        shuffled.shuffle(&mut rng);
        let (h1, h2) = shuffled.split_at(rr.len() / 2);
        let (ra, rb) = (mr.select(h1), mr.select(h2));
        let scale = (1.0 / rr.len() as f64 + 1.0 / rs.len() as f64) / (1.0 / h1.len() as f64 + 1.0 / h2.len() as f64);
        let r = scale * mmd2_biased_with(&ra, &rb, h)?;
        let w = rr.len() as f64;
        num += w * v;
        den += w * r;
        wsum += w;
        out.strata.push((label.clone(), rr.len(), rs.len(), v));
    }
    if wsum == 0.0 {
        return Err(Error::Invalid(format!(
            "no stratum of `{cond}` has enough rows on both sides"
        )));
    }
    out.weighted_mmd2 = num / wsum;
    out.reference = den / wsum;
    out.ratio = if out.reference > 0.0 {
        out.weighted_mmd2 / out.reference
    } else {
        f64::NAN
    };
    Ok(out)
}

/// Energy distance (V-statistic) and its normalization D² / (2 E‖X−Y‖).
pub fn energy_distance(x: &Matrix, y: &Matrix) -> Result<(f64, f64)> {
    if x.rows == 0 || y.rows == 0 {
        return Err(Error::Invalid("energy distance needs nonempty samples".into()));
    }
    if x.cols != y.cols {
        return Err(Error::Shape("energy distance inputs differ in width".into()));
    }
    let mean_dist = |a: &Matrix, b: &Matrix| -> f64 {
        let rows = map_indexed(a.rows, |i| {
            (0..b.rows).map(|j| sq_dist(a.row(i), b.row(j)).sqrt()).sum::<f64>()
        });
        rows.iter().sum::<f64>() / (a.rows as f64 * b.rows as f64)
    };
    let exy = mean_dist(x, y);
    let exx = mean_dist(x, x);
    let eyy = mean_dist(y, y);
    let d2 = 2.0 * exy - exx - eyy;
    let norm = if exy > 0.0 { d2 / (2.0 * exy) } else { 0.0 };
    Ok((d2, norm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct C2st {
    pub auc: f64,
    pub score: f64,
}

pub fn c2st_score(auc: f64) -> f64 {
    1.0 - 2.0 * (auc - 0.5).abs()
}

/// Classifier two-sample test: logistic regression on a seeded stratified
/// half of each set, AUC on the other half (synthetic = positive).
pub fn c2st(real: &Matrix, synth: &Matrix, seed: u64) -> Result<C2st> {
    if real.rows < MIN_C2ST_ROWS || synth.rows < MIN_C2ST_ROWS {
        return Err(Error::Invalid(format!(
            "C2ST needs at least {MIN_C2ST_ROWS} rows per set"
        )));
    }
    // each set is split by its own fresh stream so swapping the roles of
    // the two sets keeps both partitions
    let split = |n: usize| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = idx.split_off(n / 2);
        (idx, test)
    };
    let (r_tr, r_te) = split(real.rows);
    let (s_tr, s_te) = split(synth.rows);
    let gather = |rows_r: &[usize], rows_s: &[usize]| -> Result<(Matrix, Vec<f64>)> {
        let x = Matrix::vstack(&[
            &crate::pipeline::gather_rows(real, rows_r),
            &crate::pipeline::gather_rows(synth, rows_s),
        ])?;
        let mut y = vec![0.0; rows_r.len()];
        y.extend(std::iter::repeat_n(1.0, rows_s.len()));
        Ok((x, y))
    };
    let (xtr, ytr) = gather(&r_tr, &s_tr)?;
    let (xte, yte) = gather(&r_te, &s_te)?;
    let model = Logistic::fit(&xtr, &ytr, stats::RIDGE, stats::MAX_IRLS_ITER)?;
    let scores = model.linear_predictor(&xte);
    let labels: Vec<bool> = yte.iter().map(|v| *v == 1.0).collect();
    let a = auc(&scores, &labels)?;
    Ok(C2st {
        auc: a,
        score: c2st_score(a),
    })
}

fn mean_or_none(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| stats::mean(v))
}

/// Full fidelity report: summary rows (one per metric) followed by
/// per-column and per-pair details. Conditioning is on the treatment.
pub fn fidelity_report(real: &Table, synth: &Table, seed: u64) -> Result<Report> {
    if real.schema().hash() != synth.schema().hash() {
        return Err(Error::SchemaMismatch(
            "real and synthetic tables use different schemas".into(),
        ));
    }
    let schema = real.schema();
    let cols: Vec<(&str, VarKind)> = schema
        .columns
        .iter()
        .map(|c| (c.name.as_str(), c.kind.into()))
        .collect();
    let mut details = Vec::new();
    let (mut w1, mut ks, mut tv) = (Vec::new(), Vec::new(), Vec::new());
    for (name, kind) in &cols {
        let (r, s) = (real.column(name)?, synth.column(name)?);
        match kind {
            VarKind::Continuous => {
                let w = normalized_wasserstein(r, s)?;
                let k = ks_complement(r, s)?;
                details.push(MetricRow::detail(
                    "Marginal (cont.)",
                    "Normalized Wasserstein",
                    name,
                    Some(w),
                    Direction::Lower,
                ));
                details.push(MetricRow::detail(
                    "Marginal (cont.)",
                    "KSComplement",
                    name,
                    Some(k),
                    Direction::Higher,
                ));
                w1.push(w);
                ks.push(k);
            }
            VarKind::Discrete => {
                let t = tv_complement(r, s)?;
                details.push(MetricRow::detail(
                    "Marginal (disc.)",
                    "TVComplement",
                    name,
                    Some(t),
                    Direction::Higher,
                ));
                tv.push(t);
            }
        }
    }

    let (mut corr, mut su, mut cont) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            let ((a, ka), (b, kb)) = (cols[i], cols[j]);
            let pair = format!("{a}|{b}");
            let r = (real.column(a)?, real.column(b)?);
            let s = (synth.column(a)?, synth.column(b)?);
            let v = su_similarity(r, s, (ka, kb))?;
            details.push(MetricRow::detail(
                "Pairwise (all vars)",
                "SU similarity",
                &pair,
                Some(v),
                Direction::Higher,
            ));
            su.push(v);
            match (ka, kb) {
                (VarKind::Continuous, VarKind::Continuous) => {
                    if let Ok(c) = correlation_similarity(r, s) {
                        details.push(MetricRow::detail(
                            "Pairwise (cont–cont.)",
                            "CorrelationSimilarity",
                            &pair,
                            Some(c),
                            Direction::Higher,
                        ));
                        corr.push(c);
                    }
                }
                (VarKind::Discrete, VarKind::Discrete) => {
                    let c = contingency_similarity(r, s)?;
                    details.push(MetricRow::detail(
                        "Pairwise (disc–disc.)",
                        "ContingencySimilarity",
                        &pair,
                        Some(c),
                        Direction::Higher,
                    ));
                    cont.push(c);
                }
                _ => {}
            }
        }
    }

    let cf = conditional_fidelity(real, synth, &schema.treatment, CONDITIONAL_BINS, seed)?;
    for (label, nr, ns, v) in &cf.strata {
        details.push(MetricRow::detail(
            "Conditional (all except C)",
            "MMD² (stratum)",
            &format!("{}={label} ({nr} real, {ns} synthetic)", schema.treatment),
            Some(*v),
            Direction::Lower,
        ));
    }
    let enc = Encoding::fit_all(real)?;
    let (xr, xs) = (enc.encode(real)?, enc.encode(synth)?);
    let (_, energy) = energy_distance(&xr, &xs)?;
    let c2 = c2st(&xr, &xs, seed)?;
    details.push(MetricRow::detail(
        "Joint (all vars)",
        "C2ST AUC",
        "held-out",
        Some(c2.auc),
        Direction::None,
    ));

    let mut report = Report::new("Distributional fidelity");
    report
        .notes
        .push(format!("Conditional variable (C) is {}.", schema.treatment));
    report.notes.extend(cf.warnings.iter().cloned());
    let rows = [
        (
            "Marginal (cont.)",
            "Normalized Wasserstein (mean)",
            mean_or_none(&w1),
            Direction::Lower,
        ),
        (
            "Marginal (cont.)",
            "KSComplement (mean)",
            mean_or_none(&ks),
            Direction::Higher,
        ),
        (
            "Marginal (disc.)",
            "TVComplement (mean)",
            mean_or_none(&tv),
            Direction::Higher,
        ),
        (
            "Pairwise (cont–cont.)",
            "CorrelationSimilarity",
            mean_or_none(&corr),
            Direction::Higher,
        ),
        (
            "Pairwise (all vars)",
            "SU similarity (mean)",
            mean_or_none(&su),
            Direction::Higher,
        ),
        (
            "Pairwise (disc–disc.)",
            "ContingencySimilarity (mean)",
            mean_or_none(&cont),
            Direction::Higher,
        ),
        (
            "Conditional (all except C)",
            "Weighted MMD²",
            Some(cf.weighted_mmd2),
            Direction::Lower,
        ),
        (
            "Conditional (all except C)",
            "Normalized MMD² ratio vs real",
            Some(cf.ratio).filter(|v| v.is_finite()),
            Direction::Lower,
        ),
        (
            "Joint (all vars)",
            "Normalized Energy Distance",
            Some(energy),
            Direction::Lower,
        ),
        (
            "Joint (all vars)",
            "C2ST (AUC complement)",
            Some(c2.score),
            Direction::Higher,
        ),
    ];
    for (level, metric, v, d) in rows {
        report.push(MetricRow::summary(level, metric, v, d));
    }
    report.rows.extend(details);
    Ok(report)
}
