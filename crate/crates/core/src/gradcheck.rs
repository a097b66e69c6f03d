//! Central finite-difference checks of every hand-written gradient, from
//! the scalar likelihoods up to a full training mini-batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cvae::{Cvae, CvaeConfig, HeadKind, TargetSpec};
use crate::error::Result;
use crate::nn::loss::{bernoulli_nll, categorical_nll, gaussian_nll, kl_standard_gaussian, smooth_l1};
use crate::nn::{Matrix, Parameters};
use crate::objective::{kappa_penalty, overlap_penalty, tau_penalty, total_loss, PenaltyWeights};
use crate::pipeline::train::{PostTask, PreTask, Task};

pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor, so vanishing gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub coordinates: usize,
}

#[derive(Default)]
struct Acc(Vec<Check>);

impl Acc {
    fn record(&mut self, name: &'static str, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        match self.0.iter_mut().find(|c| c.name == name) {
            Some(c) => {
                c.max_rel_err = c.max_rel_err.max(e);
                c.coordinates += 1;
            }
            None => self.0.push(Check {
                name,
                max_rel_err: e,
                coordinates: 1,
            }),
        }
    }
}

fn fd<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

fn perturbed(m: &Cvae, k: usize, h: f64) -> Cvae {
    let mut c = m.clone();
    let mut i = 0;
    c.for_each_param(&mut |p, _| {
        if k >= i && k < i + p.len() {
            p[k - i] += h;
        }
        i += p.len();
    });
    c
}

fn batch_check<T: Task>(
    acc: &mut Acc,
    name: &'static str,
    task: &T,
    mut cvae: Cvae,
    rows: &[usize],
    noise: &Matrix,
) -> Result<()> {
    cvae.zero_grad();
    task.pass(&mut cvae, rows, Some(noise))?;
    let mut grads = Vec::new();
    cvae.for_each_param(&mut |_, g| grads.extend_from_slice(g));
    let value = |m: Cvae| -> Result<f64> {
        let mut m = m;
        Ok(total_loss(&task.pass(&mut m, rows, Some(noise))?))
    };
    let h = 1e-6;
    for (k, g) in grads.iter().enumerate() {
        let num = (value(perturbed(&cvae, k, h))? - value(perturbed(&cvae, k, -h))?) / (2.0 * h);
        acc.record(name, *g, num);
    }
    Ok(())
}

fn weights(rng: &mut ChaCha8Rng) -> PenaltyWeights {
    PenaltyWeights {
        lambda_alpha: rng.random_range(0.1..5.0),
        lambda_tau: rng.random_range(0.1..5.0),
        lambda_kappa: rng.random_range(0.1..5.0),
        tau_mse_weight: rng.random_range(0.0..1.0),
        tau_sl1_weight: rng.random_range(0.0..1.0),
        tau_var_weight: rng.random_range(0.0..2.0),
        kappa_mse_weight: rng.random_range(0.0..1.0),
        kappa_sl1_weight: rng.random_range(0.0..1.0),
        kappa_var_weight: rng.random_range(0.0..2.0),
    }
}

fn spec(name: &str, kind: HeadKind) -> TargetSpec {
    TargetSpec {
        name: name.into(),
        kind,
    }
}

/// All checks for one seed; each entry is the worst coordinate of its family.
pub fn check_seed(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Acc::default();
    let h = 1e-6;

    let (x, mu, lv) = (
        rng.random_range(-3.0..3.0),
        rng.random_range(-3.0..3.0),
        rng.random_range(-2.0..2.0),
    );
    let (_, gmu, glv) = gaussian_nll(x, mu, lv);
    acc.record("gaussian_nll", gmu, fd(|e| gaussian_nll(x, mu + e, lv).0, h));
    acc.record("gaussian_nll", glv, fd(|e| gaussian_nll(x, mu, lv + e).0, h));

    let s = rng.random_range(-6.0..6.0);
    let y = f64::from(rng.random_range(0..2u8));
    acc.record(
        "bernoulli_nll",
        bernoulli_nll(y, s).1,
        fd(|e| bernoulli_nll(y, s + e).0, h),
    );

    let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let idx = rng.random_range(0..4);
    let mut g = [0.0; 4];
    categorical_nll(idx, &logits, &mut g);
    for k in 0..4 {
        let num = fd(
            |e| {
                let mut l = logits.clone();
                l[k] += e;
                categorical_nll(idx, &l, &mut [0.0; 4])
            },
            h,
        );
        acc.record("categorical_nll", g[k], num);
    }

    let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let lv: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (mut gm, mut gl) = ([0.0; 3], [0.0; 3]);
    kl_standard_gaussian(&mu, &lv, &mut gm, &mut gl);
    let kl = |m: &[f64], l: &[f64]| kl_standard_gaussian(m, l, &mut [0.0; 3], &mut [0.0; 3]);
    for k in 0..3 {
        let num = fd(
            |e| {
                let mut m = mu.clone();
                m[k] += e;
                kl(&m, &lv)
            },
            h,
        );
        acc.record("kl", gm[k], num);
        let num = fd(
            |e| {
                let mut l = lv.clone();
                l[k] += e;
                kl(&mu, &l)
            },
            h,
        );
        acc.record("kl", gl[k], num);
    }

    // stay off the kink-free but curvature-changing joint at |r| = 1
    let mut r: f64 = rng.random_range(-3.0..3.0);
    if (r.abs() - 1.0).abs() < 1e-3 {
        r += 0.01;
    }
    acc.record("smooth_l1", smooth_l1(r, 1.0).1, fd(|e| smooth_l1(r + e, 1.0).0, h));

    let w = weights(&mut rng);
    let delta: Vec<f64> = (0..8).map(|_| rng.random_range(-2.5..2.5)).collect();
    let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pt = tau_penalty(&delta, &w)?;
    let pk = kappa_penalty(&delta, &w)?;
    let (_, ga) = overlap_penalty(&delta, &target, w.lambda_alpha)?;
    for k in 0..8 {
        let bump = |e: f64| {
            let mut d = delta.clone();
            d[k] += e;
            d
        };
        acc.record(
            "tau_penalty",
            pt.grad[k],
            fd(|e| tau_penalty(&bump(e), &w).map_or(f64::NAN, |p| p.total()), h),
        );
        acc.record(
            "kappa_penalty",
            pk.grad[k],
            fd(|e| kappa_penalty(&bump(e), &w).map_or(f64::NAN, |p| p.total()), h),
        );
        acc.record(
            "overlap_penalty",
            ga[k],
            fd(
                |e| overlap_penalty(&bump(e), &target, w.lambda_alpha).map_or(f64::NAN, |p| p.0),
                h,
            ),
        );
    }

    // full mini-batches of both generators on a small random problem
    let b = 6;
    let rows: Vec<usize> = (0..b).collect();
    let mut cfg = CvaeConfig::new(
        vec![
            spec("a", HeadKind::Gaussian),
            spec("b", HeadKind::Binary),
            spec("c", HeadKind::Categorical(3)),
        ],
        1,
    );
    cfg.hidden = vec![5];
    cfg.latent_dim = 2;
    cfg.kl_weight = rng.random_range(0.5..1.5);
    let pre_cvae = Cvae::new(cfg, &mut rng)?;
    let targets = Matrix::from_rows(
        &(0..b)
            .map(|_| {
                vec![
                    rng.random_range(-1.5..1.5),
                    f64::from(rng.random_range(0..2u8)),
                    f64::from(rng.random_range(0..3u8)),
                ]
            })
            .collect::<Vec<_>>(),
    )?;
    let mut t: Vec<f64> = (0..b).map(|_| f64::from(rng.random_range(0..2u8))).collect();
    t[0] = 0.0;
    t[1] = 1.0;
    let pre = PreTask {
        targets,
        t,
        log_alpha: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
        weights: w.clone(),
    };
    let noise = normal(b, 2, &mut rng);
    batch_check(&mut acc, "pre_batch_total", &pre, pre_cvae, &rows, &noise)?;

    let outcome = if seed % 2 == 0 {
        HeadKind::Binary
    } else {
        HeadKind::Gaussian
    };
    let mut cfg = CvaeConfig::new(vec![spec("y", outcome)], 3);
    cfg.hidden = vec![5];
    cfg.latent_dim = 2;
    cfg.po_mode = true;
    let post_cvae = Cvae::new(cfg, &mut rng)?;
    let arms: Vec<u8> = (0..b).map(|i| (i % 2) as u8).collect();
    let x = normal(b, 2, &mut rng);
    let cond = |flip: bool| {
        let mut m = Matrix::zeros(b, 3);
        for r in 0..b {
            m.set(r, 0, x.get(r, 0));
            m.set(r, 1, x.get(r, 1));
            m.set(r, 2, f64::from(arms[r] ^ u8::from(flip)));
        }
        m
    };
    let y = Matrix::from_vec(
        b,
        1,
        (0..b)
            .map(|_| match outcome {
                HeadKind::Binary => f64::from(rng.random_range(0..2u8)),
                _ => rng.random_range(-1.5..1.5),
            })
            .collect(),
    )?;
    let post = PostTask {
        targets: y,
        cond_obs: cond(false),
        cond_flip: cond(true),
        arms,
        tau: (0..b).map(|_| rng.random_range(-0.3..0.3)).collect(),
        kappa: (0..b).map(|_| rng.random_range(-0.1..0.1)).collect(),
        scale: if outcome == HeadKind::Binary {
            1.0
        } else {
            rng.random_range(0.5..2.0)
        },
        weights: w,
    };
    let noise = normal(b, 2, &mut rng);
    batch_check(&mut acc, "post_batch_total", &post, post_cvae, &rows, &noise)?;
    Ok(acc.0)
}

/// Worst error per family over `seeds`.
pub fn check_seeds(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let mut worst: Vec<Check> = Vec::new();
    for s in seeds {
        for c in check_seed(s)? {
            match worst.iter_mut().find(|w| w.name == c.name) {
                Some(w) => {
                    w.max_rel_err = w.max_rel_err.max(c.max_rel_err);
                    w.coordinates += c.coordinates;
                }
                None => worst.push(c),
            }
        }
    }
    Ok(worst)
}
