//! Fit, generate and persist the three-part generator: a Bernoulli
//! treatment model, a covariate CVAE conditioned on T, and a
//! potential-outcome CVAE conditioned on (X, T).

mod design;
mod synthetic;
pub(crate) mod train;

pub use design::{gather_rows, Design};
pub use synthetic::{potential_outcome_columns, SyntheticTable, THETA_COLUMNS, TRUTH_COLUMNS};
pub use train::{LossRecord, Split, TrainConfig, TrainSummary, TrainedGenerator};

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::{ControlSpec, ScenarioConfig};
use crate::cvae::{Cvae, CvaeConfig, HeadKind, HeadOutputs};
use crate::data::{split_indices, PreprocessState, Table};
use crate::error::{Error, Result};
use crate::nn::loss::sigmoid;
use crate::nn::Matrix;
use crate::objective::{induced_kappa, induced_tau, log_density_ratio, InducedQuantities};
use train::{stage_rng, train_generator, PostTask, PreTask};

pub const FORMAT_VERSION: &str = "1";

/// Empirical treated fraction; both arms must be present.
pub fn fit_treatment(t: &[f64]) -> Result<f64> {
    if t.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::Invalid("treatment must be coded 0/1".into()));
    }
    let treated = t.iter().filter(|v| **v == 1.0).count();
    if treated == 0 || treated == t.len() {
        return Err(Error::Invalid(
            "treatment has a single class; both arms are required".into(),
        ));
    }
    Ok(treated as f64 / t.len() as f64)
}

fn check_modeled(prep: &PreprocessState) -> Result<()> {
    let s = &prep.schema;
    for c in &s.columns {
        if c.name != s.treatment && c.name != s.outcome && !s.covariates.contains(&c.name) {
            return Err(Error::Schema(format!(
                "column `{}` is neither a covariate, the treatment nor the outcome",
                c.name
            )));
        }
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean of the raw tau expression over `table`, the fixed center for eta scaling.
pub fn tau_center(control: &ControlSpec, table: &Table) -> Result<f64> {
    Ok(mean(&control.raw_tau(table)?))
}

fn pre_config(design: &Design, cfg: &TrainConfig) -> CvaeConfig {
    let mut c = CvaeConfig::new(design.covariate_specs(), 1);
    c.hidden = cfg.hidden.clone();
    c.kl_weight = cfg.kl_weight;
    if let Some(d) = cfg.latent_dim {
        c.latent_dim = d;
    }
    c
}

fn post_config(design: &Design, cfg: &TrainConfig) -> CvaeConfig {
    let mut c = CvaeConfig::new(vec![design.outcome_spec()], design.covariate_width() + 1);
    c.hidden = cfg.hidden.clone();
    c.kl_weight = cfg.kl_weight;
    c.po_mode = true;
    if let Some(d) = cfg.latent_dim {
        c.latent_dim = d;
    }
    c
}

/// Covariate generator: ELBO plus the overlap penalty on log α_θ.
pub fn train_pre_generator(
    table: &Table,
    prep: &PreprocessState,
    control: &ControlSpec,
    cfg: &TrainConfig,
) -> Result<(TrainedGenerator, Vec<LossRecord>)> {
    cfg.validate()?;
    let design = Design::new(prep)?;
    let t = table.treatment().to_vec();
    let targets = control.evaluate_table(table, &t, 0.0)?;
    let task = PreTask {
        targets: design.covariate_targets(table)?,
        t,
        log_alpha: targets.log_alpha,
        weights: cfg.penalties.clone(),
    };
    let (train_rows, val_rows) = split_indices(table.n_rows(), cfg.val_fraction, cfg.seed)?;
    let mut rng = stage_rng(cfg.seed, 1);
    let cvae = Cvae::new(pre_config(&design, cfg), &mut rng)?;
    train_generator(
        &task,
        cvae,
        &train_rows,
        &val_rows,
        cfg,
        &mut rng,
        &prep.schema_hash,
        "pre-treatment",
    )
}

/// Outcome generator in potential-outcome mode with the τ and κ penalties.
pub fn train_post_generator(
    table: &Table,
    prep: &PreprocessState,
    control: &ControlSpec,
    tau_center: f64,
    cfg: &TrainConfig,
) -> Result<(TrainedGenerator, Vec<LossRecord>)> {
    cfg.validate()?;
    let design = Design::new(prep)?;
    let t = table.treatment().to_vec();
    let flipped: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
    let x = design.covariate_targets(table)?;
    let targets = control.evaluate_table(table, &t, tau_center)?;
    let task = PostTask {
        targets: design.outcome_targets(table)?,
        cond_obs: design.condition(&x, &t),
        cond_flip: design.condition(&x, &flipped),
        arms: t.iter().map(|v| *v as u8).collect(),
        tau: targets.tau,
        kappa: targets.kappa,
        scale: design.outcome_scale(),
        weights: cfg.penalties.clone(),
    };
    let (train_rows, val_rows) = split_indices(table.n_rows(), cfg.val_fraction, cfg.seed)?;
    let mut rng = stage_rng(cfg.seed, 2);
    let cvae = Cvae::new(post_config(&design, cfg), &mut rng)?;
    train_generator(
        &task,
        cvae,
        &train_rows,
        &val_rows,
        cfg,
        &mut rng,
        &prep.schema_hash,
        "post-treatment",
    )
}

/// Latent distribution used at generation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentPrior {
    #[default]
    Bgmm,
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBundle {
    pub format_version: String,
    pub schema_hash: String,
    pub treatment_rate: f64,
    pub tau_center: f64,
    pub preprocess: PreprocessState,
    pub scenario: ScenarioConfig,
    pub train_config: TrainConfig,
    pub pre: TrainedGenerator,
    pub post: TrainedGenerator,
}

pub struct FitResult {
    pub bundle: GeneratorBundle,
    pub loss_pre: Vec<LossRecord>,
    pub loss_post: Vec<LossRecord>,
}

/// Full training run. The two generators are independent given the data,
/// so they train on separate threads when more than one is allowed; each
/// owns its RNG so the result does not depend on scheduling.
pub fn fit(table: &Table, scenario: &ScenarioConfig, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let treatment_rate = fit_treatment(table.treatment())?;
    let prep = PreprocessState::fit(table)?;
    check_modeled(&prep)?;
    Design::new(&prep)?;
    let control = ControlSpec::from_config(scenario.clone(), table.schema())?;
    let center = tau_center(&control, table)?;

    let (pre, post) = if crate::parallel::max_threads() > 1 {
        std::thread::scope(|s| {
            let h = s.spawn(|| train_pre_generator(table, &prep, &control, cfg));
            let post = train_post_generator(table, &prep, &control, center, cfg);
            (h.join().expect("training thread panicked"), post)
        })
    } else {
        (
            train_pre_generator(table, &prep, &control, cfg),
            train_post_generator(table, &prep, &control, center, cfg),
        )
    };
    let (pre, loss_pre) = pre?;
    let (post, loss_post) = post?;
    let bundle = GeneratorBundle {
        format_version: FORMAT_VERSION.to_string(),
        schema_hash: prep.schema_hash.clone(),
        treatment_rate,
        tau_center: center,
        preprocess: prep,
        scenario: scenario.clone(),
        train_config: cfg.clone(),
        pre,
        post,
    };
    bundle.validate()?;
    Ok(FitResult {
        bundle,
        loss_pre,
        loss_post,
    })
}

fn sample_head<R: Rng>(out: &HeadOutputs, row: usize, head: usize, arm: usize, rng: &mut R) -> f64 {
    match out.layout.kinds[head] {
        HeadKind::Gaussian => {
            let (mu, lv) = out.gaussian(row, head, arm);
            let e: f64 = StandardNormal.sample(rng);
            mu + (0.5 * lv).exp() * e
        }
        HeadKind::Binary => {
            let p = sigmoid(out.logit(row, head, arm));
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        }
        HeadKind::Categorical(_) => {
            let l = out.logits(row, head, arm);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
            for (k, wk) in w.iter().enumerate() {
                if u < *wk {
                    return k as f64;
                }
                u -= wk;
            }
            (w.len() - 1) as f64
        }
    }
}

fn standard_normal<R: Rng>(n: usize, d: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(n, d);
    m.data.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
    m
}

fn stacked_decode(cvae: &Cvae, z: &Matrix, a: &Matrix, b: &Matrix) -> Result<(HeadOutputs, HeadOutputs)> {
    let input = Matrix::vstack(&[&Matrix::hstack(&[z, a])?, &Matrix::hstack(&[z, b])?])?;
    Ok(cvae.decode_input(&input)?.split_rows(z.rows))
}

impl GeneratorBundle {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version.clone(),
                expected: FORMAT_VERSION.into(),
            });
        }
        if !(self.treatment_rate > 0.0 && self.treatment_rate < 1.0) {
            return Err(Error::CorruptBundle(format!(
                "treatment rate {} outside (0, 1)",
                self.treatment_rate
            )));
        }
        let h = &self.schema_hash;
        if self.preprocess.schema.hash() != *h
            || self.preprocess.schema_hash != *h
            || self.pre.schema_hash != *h
            || self.post.schema_hash != *h
        {
            return Err(Error::SchemaMismatch(
                "bundle components disagree on the schema hash".into(),
            ));
        }
        self.pre.prior.validate()?;
        self.post.prior.validate()?;
        self.pre.cvae.config.validate()?;
        self.post.cvae.config.validate()?;
        if !self.post.cvae.config.po_mode {
            return Err(Error::CorruptBundle(
                "post-treatment generator lacks potential-outcome heads".into(),
            ));
        }
        self.control()?;
        Ok(())
    }

    pub fn schema(&self) -> Arc<crate::data::DatasetSchema> {
        Arc::new(self.preprocess.schema.clone())
    }

    pub fn design(&self) -> Result<Design> {
        Design::new(&self.preprocess)
    }

    pub fn control(&self) -> Result<ControlSpec> {
        ControlSpec::from_config(self.scenario.clone(), &self.preprocess.schema)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptBundle(format!("not valid JSON: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_str()) {
            Some(FORMAT_VERSION) => {}
            Some(found) => {
                return Err(Error::Version {
                    found: found.to_string(),
                    expected: FORMAT_VERSION.into(),
                })
            }
            None => return Err(Error::CorruptBundle("missing format_version".into())),
        }
        let bundle: GeneratorBundle =
            serde_json::from_value(value).map_err(|e| Error::CorruptBundle(format!("unexpected layout: {e}")))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    fn latents<R: Rng>(&self, g: &TrainedGenerator, n: usize, prior: LatentPrior, rng: &mut R) -> Result<Matrix> {
        match prior {
            LatentPrior::Bgmm => g.prior.sample_with(n, rng, self.train_config.latent_jitter),
            LatentPrior::StandardNormal => Ok(standard_normal(n, g.cvae.latent_dim(), rng)),
        }
    }

    /// Sequential sampling T', X' | T', (Y'(0), Y'(1)) | X', T'. A pure
    /// function of (bundle, n, seed, prior).
    pub fn generate(&self, n: usize, seed: u64, prior: LatentPrior) -> Result<SyntheticTable> {
        let design = self.design()?;
        let control = self.control()?;
        let schema = self.schema();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let t: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < self.treatment_rate {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();

        let pre = &self.pre.cvae;
        let z_x = self.latents(&self.pre, n, prior, &mut rng)?;
        let t_col = |v: f64| Matrix {
            rows: n,
            cols: 1,
            data: vec![v; n],
        };
        let (o0, o1) = stacked_decode(pre, &z_x, &t_col(0.0), &t_col(1.0))?;
        let heads = design.covariates().len();
        let mut x_enc = Matrix::zeros(n, heads);
        for r in 0..n {
            let out = if t[r] == 1.0 { &o1 } else { &o0 };
            for h in 0..heads {
                x_enc.set(r, h, sample_head(out, r, h, 0, &mut rng));
            }
        }
        let (raw_x, x) = design.decode_covariates(&x_enc)?;
        let log_alpha_theta = log_density_ratio(&x, &o0, &o1)?;

        let flipped: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let z_y = self.latents(&self.post, n, prior, &mut rng)?;
        let (obs, flip) = stacked_decode(
            &self.post.cvae,
            &z_y,
            &design.condition(&x, &t),
            &design.condition(&x, &flipped),
        )?;
        let arms: Vec<u8> = t.iter().map(|v| *v as u8).collect();
        let s = design.outcome_scale();
        let tau_theta: Vec<f64> = induced_tau(&obs, 0)?.iter().map(|v| v * s).collect();
        let kappa_theta: Vec<f64> = induced_kappa(&obs, &flip, 0, &arms)?.iter().map(|v| v * s).collect();

        let outcome = design.outcome();
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        for r in 0..n {
            y0.push(outcome.decode(sample_head(&obs, r, 0, 0, &mut rng))?);
            y1.push(outcome.decode(sample_head(&obs, r, 0, 1, &mut rng))?);
        }
        let y: Vec<f64> = (0..n).map(|r| t[r] * y1[r] + (1.0 - t[r]) * y0[r]).collect();

        let mut columns = Vec::with_capacity(schema.columns.len());
        for meta in &schema.columns {
            let col = if meta.name == schema.treatment {
                t.clone()
            } else if meta.name == schema.outcome {
                y.clone()
            } else {
                let j = schema
                    .covariates
                    .iter()
                    .position(|c| *c == meta.name)
                    .ok_or_else(|| Error::Schema(format!("column `{}` is not modeled", meta.name)))?;
                raw_x[j].clone()
            };
            columns.push(col);
        }
        let table = Table::new(schema, columns)?;
        let truth = control.evaluate_table(&table, &t, self.tau_center)?;
        Ok(SyntheticTable::new(
            table,
            y0,
            y1,
            truth,
            tau_theta,
            kappa_theta,
            log_alpha_theta,
        ))
    }

    /// `r` tables with seeds `base_seed..base_seed + r`, generated in parallel.
    pub fn replicate(&self, r: usize, n: usize, base_seed: u64, prior: LatentPrior) -> Result<Vec<SyntheticTable>> {
        crate::parallel::map_indexed(r, |i| self.generate(n, base_seed.wrapping_add(i as u64), prior))
            .into_iter()
            .collect()
    }

    /// Wraps an ordinary table (e.g. the real data or a copy of it) as a
    /// synthetic table: truth from `control` (the bundle's scenario when
    /// `None`), induced quantities at the posterior mean, and the observed
    /// outcome standing in for both potential outcomes.
    pub fn annotate(&self, table: &Table, control: Option<(&ControlSpec, f64)>) -> Result<SyntheticTable> {
        let own;
        let (control, center) = match control {
            Some(c) => c,
            None => {
                own = self.control()?;
                (&own, self.tau_center)
            }
        };
        let theta = self.induced_on(table)?;
        let truth = control.evaluate_table(table, table.treatment(), center)?;
        let y = table.outcome().to_vec();
        Ok(SyntheticTable::new(
            table.clone(),
            y.clone(),
            y,
            truth,
            theta.tau_theta,
            theta.kappa_theta,
            theta.log_alpha_theta,
        ))
    }

    /// Induced quantities on an observed table with z at the posterior mean.
    pub fn induced_on(&self, table: &Table) -> Result<InducedQuantities> {
        if table.schema().hash() != self.schema_hash {
            return Err(Error::SchemaMismatch("table schema differs from the bundle's".into()));
        }
        let design = self.design()?;
        let control = self.control()?;
        let t = table.treatment().to_vec();
        let flipped: Vec<f64> = t.iter().map(|v| 1.0 - v).collect();
        let n = t.len();
        let x = design.covariate_targets(table)?;
        let t_m = Matrix {
            rows: n,
            cols: 1,
            data: t.clone(),
        };
        let z_x = self.pre.cvae.encode(&x, &t_m)?.mu;
        let zeros = Matrix::zeros(n, 1);
        let ones = Matrix {
            rows: n,
            cols: 1,
            data: vec![1.0; n],
        };
        let (o0, o1) = stacked_decode(&self.pre.cvae, &z_x, &zeros, &ones)?;
        let log_alpha_theta = log_density_ratio(&x, &o0, &o1)?;

        let cond = design.condition(&x, &t);
        let z_y = self.post.cvae.encode(&design.outcome_targets(table)?, &cond)?.mu;
        let (obs, flip) = stacked_decode(&self.post.cvae, &z_y, &cond, &design.condition(&x, &flipped))?;
        let arms: Vec<u8> = t.iter().map(|v| *v as u8).collect();
        let s = design.outcome_scale();
        let tau_theta: Vec<f64> = induced_tau(&obs, 0)?.iter().map(|v| v * s).collect();
        let kappa_theta: Vec<f64> = induced_kappa(&obs, &flip, 0, &arms)?.iter().map(|v| v * s).collect();
        let truth = control.evaluate_table(table, &t, self.tau_center)?;
        Ok(InducedQuantities {
            tau_residual: tau_theta.iter().zip(&truth.tau).map(|(a, b)| a - b).collect(),
            kappa_residual: kappa_theta.iter().zip(&truth.kappa).map(|(a, b)| a - b).collect(),
            tau_theta,
            kappa_theta,
            log_alpha_theta,
        })
    }
}
