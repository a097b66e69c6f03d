use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use causalmix::control::{ControlSpec, ScenarioConfig};
use causalmix::data::{DatasetSchema, Table};
use causalmix::eval::causal::{causal_report, SIGN_NOTE};
use causalmix::eval::distributional::fidelity_report;
use causalmix::eval::embedding::{joint_embedding, MAX_EMBED_ROWS};
use causalmix::eval::privacy::privacy_report;
use causalmix::eval::{write_comparison_csv, Report};
use causalmix::pipeline::{self, GeneratorBundle, LatentPrior, LossRecord, SyntheticTable, TrainConfig, TRUTH_COLUMNS};
use serde_json::json;

use crate::manifest::{sibling, RunManifest};
use crate::plots;
use crate::{DemoArgs, EvaluateArgs, FitArgs, GenerateArgs};

fn write_losses(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut text = String::from("epoch,split,vae,kl,l_alpha,l_tau_mean,l_tau_var,l_kappa_mean,l_kappa_var\n");
    for r in records {
        let c = &r.components;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.split.as_str(),
            c.vae,
            c.kl,
            c.l_alpha,
            c.l_tau_mean,
            c.l_tau_var,
            c.l_kappa_mean,
            c.l_kappa_var
        ));
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<PathBuf> {
    let mut m = RunManifest::new("fit");
    let schema = DatasetSchema::load(&a.schema).with_context(|| format!("schema {}", a.schema.display()))?;
    let table = Table::load_csv(&a.data, Arc::new(schema)).with_context(|| format!("data {}", a.data.display()))?;
    let scenario = ScenarioConfig::load(&a.scenario).with_context(|| format!("scenario {}", a.scenario.display()))?;
    let mut cfg = match &a.train_config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("train config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    m.input("data", &a.data);
    m.input("schema", &a.schema);
    m.input("scenario", &a.scenario);
    if let Some(p) = &a.train_config {
        m.input("train_config", p);
    }
    m.seeds.insert("train".into(), cfg.seed);

    let result = pipeline::fit(&table, &scenario, &cfg).context("training failed")?;
    ensure_parent(&a.out)?;
    result.bundle.save(&a.out)?;
    let (lp, lq) = (sibling(&a.out, "loss_pre.csv"), sibling(&a.out, "loss_post.csv"));
    write_losses(&lp, &result.loss_pre)?;
    write_losses(&lq, &result.loss_post)?;
    for p in [&a.out, &lp, &lq] {
        m.artifact(p)?;
    }
    let b = &result.bundle;
    m.details = json!({
        "treatment_rate": b.treatment_rate,
        "tau_center": b.tau_center,
        "pre": b.pre.summary,
        "post": b.post.summary,
        "pre_components": b.pre.prior.weights.len(),
        "post_components": b.post.prior.weights.len(),
    });
    m.write(&sibling(&a.out, "manifest.json"))
}

fn replicate_path(out: &Path, i: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_{:03}.csv", i + 1))
}

fn load_bundle(path: &Path, jitter: Option<bool>) -> Result<GeneratorBundle> {
    let mut b = GeneratorBundle::load(path).with_context(|| format!("bundle {}", path.display()))?;
    if let Some(j) = jitter {
        b.train_config.latent_jitter = j;
    }
    Ok(b)
}

pub fn generate(a: &GenerateArgs) -> Result<PathBuf> {
    let mut m = RunManifest::new("generate");
    m.input("bundle", &a.bundle);
    let bundle = load_bundle(&a.bundle, a.latent_jitter)?;
    let prior: LatentPrior = a.prior.into();
    m.seeds.insert("generate".into(), a.seed);
    ensure_parent(&a.out)?;

    let tables = match a.replicates {
        Some(0) => bail!("--replicates must be at least 1"),
        Some(r) => bundle.replicate(r, a.n, a.seed, prior)?,
        None => vec![bundle.generate(a.n, a.seed, prior)?],
    };
    let mut per = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let path = if a.replicates.is_some() {
            replicate_path(&a.out, i)
        } else {
            a.out.clone()
        };
        t.save_csv(&path)?;
        m.artifact(&path)?;
        per.push(json!({
            "file": path.display().to_string(),
            "seed": a.seed.wrapping_add(i as u64),
            "rows": t.n_rows(),
            "true_ate": t.true_ate(),
        }));
    }
    let ates: Vec<f64> = tables.iter().map(SyntheticTable::true_ate).collect();
    let (mean, sd) = mean_sd(&ates);
    m.details = json!({
        "prior": prior,
        "latent_jitter": bundle.train_config.latent_jitter,
        "n": a.n,
        "replicates": per,
        "true_ate_mean": mean,
        "true_ate_sd": sd,
    });
    m.write(&sibling(&a.out, "manifest.json"))
}

/// Sample mean and sd. Deviations are taken from the first value so that
/// identical inputs give an sd of exactly 0.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let shift = v[0];
    let d: Vec<f64> = v.iter().map(|x| x - shift).collect();
    let md = d.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (shift + md, sd)
}

fn has_truth_columns(path: &Path) -> Result<bool> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("synthetic table {}", path.display()))?;
    let headers = rdr
        .headers()
        .with_context(|| format!("synthetic table {}", path.display()))?;
    Ok(TRUTH_COLUMNS.iter().all(|c| headers.iter().any(|h| h.trim() == *c)))
}

fn write_report(dir: &Path, name: &str, report: &Report, m: &mut RunManifest) -> Result<()> {
    let jp = dir.join(format!("{name}.json"));
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(&jp, text).with_context(|| format!("cannot write {}", jp.display()))?;
    let cp = dir.join(format!("{name}.csv"));
    plots::write_with(&cp, |w| report.write_csv(w))?;
    m.artifact(&jp)?;
    m.artifact(&cp)
}

fn write_compare(dir: &Path, name: &str, bgmm: &Report, gauss: &Report, m: &mut RunManifest) -> Result<()> {
    let p = dir.join(format!("{name}_compare.csv"));
    plots::write_with(&p, |w| write_comparison_csv(("BGMM", bgmm), ("Gaussian", gauss), w))?;
    m.artifact(&p)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<PathBuf> {
    let mut m = RunManifest::new("evaluate");
    m.input("real", &a.real);
    m.input("bundle", &a.bundle);
    m.seeds.insert("evaluate".into(), a.seed);
    let bundle = load_bundle(&a.bundle, a.latent_jitter)?;
    let schema = bundle.schema();
    let real = Table::load_csv(&a.real, schema.clone()).with_context(|| format!("real table {}", a.real.display()))?;

    // the scenario whose truth the synthetic rows are scored against
    let control = match &a.scenario {
        Some(p) => {
            m.input("scenario", p);
            let cfg = ScenarioConfig::load(p).with_context(|| format!("scenario {}", p.display()))?;
            let c = ControlSpec::from_config(cfg, &schema)?;
            let center = pipeline::tau_center(&c, &real)?;
            Some((c, center))
        }
        None => None,
    };
    let control_ref = control.as_ref().map(|(c, k)| (c, *k));
    let rescore = |s: SyntheticTable| -> Result<SyntheticTable> {
        let Some((c, center)) = control_ref else { return Ok(s) };
        let truth = c.evaluate_table(&s.table, s.treatment(), center)?;
        let th = s.theta;
        Ok(SyntheticTable::new(
            s.table,
            s.y0,
            s.y1,
            truth,
            th.tau_theta,
            th.kappa_theta,
            th.log_alpha_theta,
        ))
    };

    let n_compare = a.n.unwrap_or(real.n_rows());
    let compare = if a.prior_compare {
        m.seeds.insert("prior_compare".into(), a.seed);
        let b = rescore(bundle.generate(n_compare, a.seed, LatentPrior::Bgmm)?)?;
        let g = rescore(bundle.generate(n_compare, a.seed, LatentPrior::StandardNormal)?)?;
        Some((b, g))
    } else {
        None
    };

    let synth = match (&a.synth, &compare) {
        (Some(p), _) => {
            m.input("synth", p);
            if has_truth_columns(p)? {
                rescore(
                    SyntheticTable::load_csv(p, schema.clone())
                        .with_context(|| format!("synthetic table {}", p.display()))?,
                )?
            } else {
                let t =
                    Table::load_csv(p, schema.clone()).with_context(|| format!("synthetic table {}", p.display()))?;
                bundle.annotate(&t, control_ref)?
            }
        }
        (None, Some((b, _))) => b.clone(),
        (None, None) => bail!("--synth is required without --prior-compare"),
    };

    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let fidelity = fidelity_report(&real, &synth.table, a.seed)?;
    let (causal, diag) = causal_report(&synth, a.tolerance)?;
    let (privacy, dcr, baseline) = privacy_report(&real, &synth.table, a.seed)?;
    write_report(&a.out, "fidelity", &fidelity, &mut m)?;
    write_report(&a.out, "causal", &causal, &mut m)?;
    write_report(&a.out, "privacy", &privacy, &mut m)?;

    let pd = a.out.join("plots");
    fs::create_dir_all(&pd).with_context(|| format!("cannot create {}", pd.display()))?;
    let p = pd.join("marginals.csv");
    plots::write_marginals(&p, &real, &synth.table)?;
    m.artifact(&p)?;
    let p = pd.join("tau_scatter.csv");
    plots::write_scatter(&p, &synth, &synth.truth.tau, &synth.theta.tau_theta)?;
    m.artifact(&p)?;
    let p = pd.join("kappa_scatter.csv");
    plots::write_scatter(&p, &synth, &synth.truth.kappa, &synth.theta.kappa_theta)?;
    m.artifact(&p)?;
    let p = pd.join("propensity_density.csv");
    plots::write_with(&p, |w| diag.propensity.write_grid_csv(w))?;
    m.artifact(&p)?;
    let emb = joint_embedding(&real, &synth.table, MAX_EMBED_ROWS, a.seed)?;
    let p = pd.join("embedding.csv");
    plots::write_with(&p, |w| emb.write_csv(w))?;
    m.artifact(&p)?;

    if let Some((b, g)) = &compare {
        let fb = fidelity_report(&real, &b.table, a.seed)?;
        let fg = fidelity_report(&real, &g.table, a.seed)?;
        write_compare(&a.out, "fidelity", &fb, &fg, &mut m)?;
        let (cb, _) = causal_report(b, a.tolerance)?;
        let (cg, _) = causal_report(g, a.tolerance)?;
        write_compare(&a.out, "causal", &cb, &cg, &mut m)?;
        let (pb, _, _) = privacy_report(&real, &b.table, a.seed)?;
        let (pg, _, _) = privacy_report(&real, &g.table, a.seed)?;
        write_compare(&a.out, "privacy", &pb, &pg, &mut m)?;
    }

    m.details = json!({
        "synthetic_rows": synth.n_rows(),
        "true_ate": synth.true_ate(),
        "ate_theta": diag.te.ate_theta,
        "propensity_auc": diag.propensity.auc,
        "decoder_overlap_fraction": diag.decoder.fraction_within,
        "protection_fraction": dcr.fraction,
        "baseline_score": baseline.score,
        "baseline_warning": baseline.warning,
        "sign_note": SIGN_NOTE,
        "prior_compare_rows": compare.as_ref().map(|_| n_compare),
    });
    m.write(&a.out.join("manifest.json"))
}

pub fn demo_data(a: &DemoArgs) -> Result<PathBuf> {
    let mut m = RunManifest::new("demo-data");
    m.seeds.insert("demo".into(), a.seed);
    let table = causalmix::demo::demo_table(a.n, a.seed)?;
    ensure_parent(&a.out)?;
    ensure_parent(&a.schema_out)?;
    plots::write_with(&a.out, |w| table.write_csv(w))?;
    m.artifact(&a.out)?;
    let mut text = serde_json::to_string_pretty(table.schema().as_ref())?;
    text.push('\n');
    fs::write(&a.schema_out, text).with_context(|| format!("cannot write {}", a.schema_out.display()))?;
    m.artifact(&a.schema_out)?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    if let Some(dir) = &a.scenario_dir {
        for (name, s) in causalmix::demo::demo_scenarios() {
            files.push((dir.join(format!("{name}.json")), serde_json::to_string_pretty(&s)?));
        }
    }
    if let Some(dir) = &a.config_dir {
        files.push((
            dir.join("train_default.json"),
            serde_json::to_string_pretty(&TrainConfig::default())?,
        ));
    }
    for (p, body) in files {
        ensure_parent(&p)?;
        fs::write(&p, body + "\n").with_context(|| format!("cannot write {}", p.display()))?;
        m.artifact(&p)?;
    }
    m.write(&sibling(&a.out, "manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_values_have_zero_sd() {
        let v = vec![0.10000000000000603; 50];
        assert_eq!(mean_sd(&v), (0.10000000000000603, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
