//! Does the synthetic data carry the effect, confounding and overlap
//! structure it was asked to carry?

use super::distributional::wasserstein1;
use super::encode::Encoding;
use super::stats::{self, auc, pearson, Logistic};
use super::{Direction, MetricRow, Report};
use crate::data::Table;
use crate::error::{Error, Result};
use crate::pipeline::SyntheticTable;

pub const DEFAULT_TOLERANCE: f64 = 0.5;
pub const KDE_GRID: usize = 512;
pub const MIN_ARM_ROWS: usize = 20;
/// Keeps fitted propensities strictly inside (0, 1) under near-separation.
const E_CLAMP: f64 = 1e-12;

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} values vs {} targets", a.len(), b.len())));
    }
    Ok(())
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeDiagnostics {
    pub mae: f64,
    /// `None` when either side is constant.
    pub rho: Option<f64>,
    pub ate_theta: f64,
    pub ate_error: f64,
    pub w1: f64,
}

pub fn te_diagnostics(tau_theta: &[f64], tau_target: &[f64]) -> Result<TeDiagnostics> {
    same_len(tau_theta, tau_target)?;
    if tau_theta.len() < 2 {
        return Err(Error::Invalid("effect diagnostics need at least 2 rows".into()));
    }
    let ate_theta = stats::mean(tau_theta);
    Ok(TeDiagnostics {
        mae: mae(tau_theta, tau_target),
        rho: pearson(tau_theta, tau_target),
        ate_theta,
        ate_error: (ate_theta - stats::mean(tau_target)).abs(),
        w1: wasserstein1(tau_theta, tau_target)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundingDiagnostics {
    pub mae: f64,
    pub mae_t0: Option<f64>,
    pub mae_t1: Option<f64>,
    pub w1: f64,
}

pub fn confounding_diagnostics(
    kappa_theta: &[f64],
    kappa_target: &[f64],
    arms: &[f64],
) -> Result<ConfoundingDiagnostics> {
    same_len(kappa_theta, kappa_target)?;
    same_len(kappa_theta, arms)?;
    if arms.is_empty() {
        return Err(Error::Invalid("confounding diagnostics need rows".into()));
    }
    let arm_mae = |t: f64| {
        let (mut s, mut n) = (0.0, 0usize);
        for i in 0..arms.len() {
            if arms[i] == t {
                s += (kappa_theta[i] - kappa_target[i]).abs();
                n += 1;
            }
        }
        (n > 0).then(|| s / n as f64)
    };
    Ok(ConfoundingDiagnostics {
        mae: mae(kappa_theta, kappa_target),
        mae_t0: arm_mae(0.0),
        mae_t1: arm_mae(1.0),
        w1: wasserstein1(kappa_theta, kappa_target)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOverlap {
    pub tolerance: f64,
    pub mse: f64,
    pub fraction_within: f64,
    pub mean: f64,
    pub sd: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

/// `delta_theta` and `target` must already be in the same sign convention.
pub fn overlap_decoder_diagnostics(delta_theta: &[f64], target: &[f64], tolerance: f64) -> Result<DecoderOverlap> {
    same_len(delta_theta, target)?;
    if delta_theta.is_empty() {
        return Err(Error::Invalid("overlap diagnostics need rows".into()));
    }
    let n = delta_theta.len() as f64;
    let mut mse = 0.0;
    let mut within = 0usize;
    for (d, t) in delta_theta.iter().zip(target) {
        mse += (d - t).powi(2);
        if (d - t).abs() <= tolerance {
            within += 1;
        }
    }
    let mut s = delta_theta.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(DecoderOverlap {
        tolerance,
        mse: mse / n,
        fraction_within: within as f64 / n,
        mean: stats::mean(delta_theta),
        sd: stats::sd(delta_theta),
        p5: stats::quantile_sorted(&s, 0.05),
        p50: stats::quantile_sorted(&s, 0.5),
        p95: stats::quantile_sorted(&s, 0.95),
    })
}

/// Per-arm densities of the propensity on a uniform grid over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct KdeOverlap {
    pub grid: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub coefficient: f64,
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Scott bandwidth n^(-1/5)·sd (sample sd), floored at one grid step so
/// near-constant inputs still resolve on the grid.
pub fn scott_bandwidth(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let sd = if v.len() > 1 {
        stats::sd(v) * (n / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (sd * n.powf(-0.2)).max(1.0 / (KDE_GRID - 1) as f64)
}

/// Gaussian KDE reflected at 0 and 1, renormalized to unit trapezoid mass
/// on the grid.
pub fn reflected_kde(v: &[f64], grid: &[f64]) -> Vec<f64> {
    let h = scott_bandwidth(v);
    let norm = 1.0 / (v.len() as f64 * h);
    let mut dens: Vec<f64> = grid
        .iter()
        .map(|g| {
            norm * v
                .iter()
                .map(|e| phi((g - e) / h) + phi((g + e) / h) + phi((g - (2.0 - e)) / h))
                .sum::<f64>()
        })
        .collect();
    let step = grid[1] - grid[0];
    let mass = stats::trapezoid(&dens, step);
    if mass > 0.0 {
        dens.iter_mut().for_each(|d| *d /= mass);
    }
    dens
}

pub fn unit_grid() -> Vec<f64> {
    (0..KDE_GRID).map(|i| i as f64 / (KDE_GRID - 1) as f64).collect()
}

pub fn kde_overlap(e0: &[f64], e1: &[f64]) -> Result<KdeOverlap> {
    if e0.is_empty() || e1.is_empty() {
        return Err(Error::Invalid("overlap coefficient needs both arms".into()));
    }
    let grid = unit_grid();
    let p0 = reflected_kde(e0, &grid);
    let p1 = reflected_kde(e1, &grid);
    let mins: Vec<f64> = p0.iter().zip(&p1).map(|(a, b)| a.min(*b)).collect();
    let coefficient = stats::trapezoid(&mins, grid[1] - grid[0]).clamp(0.0, 1.0);
    Ok(KdeOverlap {
        grid,
        p0,
        p1,
        coefficient,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityDiagnostics {
    pub model: Logistic,
    pub e: Vec<f64>,
    pub auc: f64,
    pub kde: KdeOverlap,
    pub common_support: f64,
    pub common_support_t0: f64,
    pub common_support_t1: f64,
}

impl PropensityDiagnostics {
    /// Plot data, header `e,p0,p1,min`.
    pub fn write_grid_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["e", "p0", "p1", "min"])?;
        for i in 0..self.kde.grid.len() {
            let (a, b) = (self.kde.p0[i], self.kde.p1[i]);
            wtr.write_record([
                self.kde.grid[i].to_string(),
                a.to_string(),
                b.to_string(),
                a.min(b).to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Logistic propensity of the treatment on the encoded covariates.
pub fn propensity_overlap(table: &Table) -> Result<PropensityDiagnostics> {
    let schema = table.schema();
    let t = table.treatment();
    let n1 = t.iter().filter(|v| **v == 1.0).count();
    let n0 = t.len() - n1;
    if n0 < MIN_ARM_ROWS || n1 < MIN_ARM_ROWS {
        return Err(Error::Invalid(format!(
            "propensity overlap needs at least {MIN_ARM_ROWS} rows per arm ({n0} control, {n1} treated)"
        )));
    }
    let enc = Encoding::fit(table, &schema.covariates)?;
    let x = enc.encode(table)?;
    let model = Logistic::fit(&x, t, stats::RIDGE, stats::MAX_IRLS_ITER)?;
    let eta = model.linear_predictor(&x);
    let labels: Vec<bool> = t.iter().map(|v| *v == 1.0).collect();
    let a = auc(&eta, &labels)?;
    let e: Vec<f64> = model
        .predict(&x)
        .into_iter()
        .map(|p| p.clamp(E_CLAMP, 1.0 - E_CLAMP))
        .collect();
    let (mut e0, mut e1) = (Vec::with_capacity(n0), Vec::with_capacity(n1));
    for (v, l) in e.iter().zip(&labels) {
        if *l {
            e1.push(*v);
        } else {
            e0.push(*v);
        }
    }
    let kde = kde_overlap(&e0, &e1)?;
    let lo = e0
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(e1.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = e0
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .min(e1.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let inside = |v: &[f64]| v.iter().filter(|x| **x >= lo && **x <= hi).count() as f64 / v.len() as f64;
    Ok(PropensityDiagnostics {
        common_support: inside(&e),
        common_support_t0: inside(&e0),
        common_support_t1: inside(&e1),
        model,
        e,
        auc: a,
        kde,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalDiagnostics {
    pub te: TeDiagnostics,
    pub confounding: ConfoundingDiagnostics,
    pub decoder: DecoderOverlap,
    pub propensity: PropensityDiagnostics,
}

pub const SIGN_NOTE: &str = "Decoder overlap uses Delta_theta = log p(X'|T'=0) - log p(X'|T'=1), \
     the negation of the generator's log_alpha; the target is -log_alpha.";

pub fn causal_diagnostics(synth: &SyntheticTable, tolerance: f64) -> Result<CausalDiagnostics> {
    let th = &synth.theta;
    let tr = &synth.truth;
    let delta: Vec<f64> = th.log_alpha_theta.iter().map(|v| -v).collect();
    let target: Vec<f64> = tr.log_alpha.iter().map(|v| -v).collect();
    Ok(CausalDiagnostics {
        te: te_diagnostics(&th.tau_theta, &tr.tau)?,
        confounding: confounding_diagnostics(&th.kappa_theta, &tr.kappa, synth.treatment())?,
        decoder: overlap_decoder_diagnostics(&delta, &target, tolerance)?,
        propensity: propensity_overlap(&synth.table)?,
    })
}

impl CausalDiagnostics {
    pub fn report(&self) -> Report {
        use Direction::{Higher, Lower};
        let mut r = Report::new("Causal-structure fidelity");
        r.notes.push(SIGN_NOTE.into());
        r.notes
            .push(format!("Decoder tolerance band: {} nats.", self.decoder.tolerance));
        r.notes
            .push("Propensity AUC closer to 0.5 indicates stronger overlap.".into());
        let (te, cf, d, p) = (&self.te, &self.confounding, &self.decoder, &self.propensity);
        let rows = [
            ("Treatment Effect", "CATE/ITE MAE", Some(te.mae), Lower),
            ("Treatment Effect", "CATE Correlation", te.rho, Higher),
            ("Treatment Effect", "ATE Error", Some(te.ate_error), Lower),
            ("Treatment Effect", "TE Distribution Distance (W1)", Some(te.w1), Lower),
            ("Confounding", "Confounding MAE", Some(cf.mae), Lower),
            ("Confounding", "Group-wise MAE (T=0)", cf.mae_t0, Lower),
            ("Confounding", "Group-wise MAE (T=1)", cf.mae_t1, Lower),
            ("Confounding", "Confounding Dist. (W1)", Some(cf.w1), Lower),
            ("Overlap (decoder)", "MSE", Some(d.mse), Lower),
            (
                "Overlap (decoder)",
                "Fraction within tolerance",
                Some(d.fraction_within),
                Higher,
            ),
            ("Overlap (propensity)", "Propensity AUC", Some(p.auc), Direction::None),
            (
                "Overlap (propensity)",
                "Histogram overlap coefficient",
                Some(p.kde.coefficient),
                Higher,
            ),
            (
                "Overlap (propensity)",
                "Common support fraction",
                Some(p.common_support),
                Higher,
            ),
            (
                "Overlap (propensity)",
                "Common support fraction (T=0)",
                Some(p.common_support_t0),
                Higher,
            ),
            (
                "Overlap (propensity)",
                "Common support fraction (T=1)",
                Some(p.common_support_t1),
                Higher,
            ),
        ];
        for (level, metric, v, dir) in rows {
            r.push(MetricRow::summary(level, metric, v, dir));
        }
        let n = Direction::None;
        r.push(MetricRow::detail(
            "Treatment Effect",
            "ATE_theta",
            "mean tau_theta",
            Some(te.ate_theta),
            n,
        ));
        for (name, v) in [
            ("mean", d.mean),
            ("sd", d.sd),
            ("p5", d.p5),
            ("p50", d.p50),
            ("p95", d.p95),
        ] {
            r.push(MetricRow::detail("Overlap (decoder)", "Delta_theta", name, Some(v), n));
        }
        r
    }
}

pub fn causal_report(synth: &SyntheticTable, tolerance: f64) -> Result<(Report, CausalDiagnostics)> {
    let d = causal_diagnostics(synth, tolerance)?;
    Ok((d.report(), d))
}
