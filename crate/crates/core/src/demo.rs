//! Seeded structural causal model behind the bundled demo table.
//!
//! A hidden binary class `c ~ Bern(0.4)` shifts age, PSA and comorbidity
//! burden together, so the covariate distribution is bimodal. Treatment
//! depends on observed covariates only; the binary outcome depends on
//! covariates and treatment.
//!
//! ```text
//! age       ~ N(-0.5 + 1.25c, 0.6)        (already standardized)
//! log_psa   ~ N(1.5 + 2c, 0.6)
//! charlson  ~ clip(Poisson(1 + 2c), 0, 10)
//! cvd       ~ Bern(sigmoid(-1 + 0.5 age + 0.8c))
//! diabetes  ~ Bern(0.25 + 0.1c)
//! dementia  ~ Bern(sigmoid(-2.5 + 0.4 age + 0.3c))
//! abiraterone_prev ~ Bern(0.3)
//! race      ~ Cat(white 0.7, black 0.2, other 0.1)
//! treatment ~ Bern(sigmoid(-0.3 + 0.4 cvd + 0.3 age - 0.1 charlson + 0.5 abiraterone_prev + 0.2c))
//! outcome   ~ Bern(sigmoid(-2 + 0.3 charlson + 0.5 cvd + 0.3 age + 0.4 treatment + 0.2 dementia))
//! ```

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::control::ScenarioConfig;
use crate::data::{ColumnMeta, DatasetSchema, Table};
use crate::error::Result;
use crate::nn::loss::sigmoid;

pub const DEMO_ROWS: usize = 4000;
pub const DEMO_SEED: u64 = 20240601;

pub const COVARIATES: [&str; 8] = [
    "age",
    "log_psa",
    "charlson",
    "cvd",
    "diabetes",
    "dementia",
    "abiraterone_prev",
    "race",
];

pub fn demo_schema() -> DatasetSchema {
    let columns = vec![
        ColumnMeta::continuous("age"),
        ColumnMeta::continuous("log_psa"),
        ColumnMeta::integer("charlson").with_bounds(0.0, 10.0),
        ColumnMeta::binary("cvd"),
        ColumnMeta::binary("diabetes"),
        ColumnMeta::binary("dementia"),
        ColumnMeta::binary("abiraterone_prev"),
        ColumnMeta::categorical("race", &["white", "black", "other"]),
        ColumnMeta::binary("treatment"),
        ColumnMeta::binary("outcome"),
    ];
    DatasetSchema::new(columns, "treatment", "outcome", &COVARIATES).expect("demo schema is valid")
}

fn bern(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// `n` rows drawn from the demo SCM.
pub fn demo_table(n: usize, seed: u64) -> Result<Table> {
    let schema = Arc::new(demo_schema());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols = vec![Vec::with_capacity(n); schema.columns.len()];
    let noise = Normal::new(0.0, 0.6).expect("valid sd");
    for _ in 0..n {
        let c = bern(&mut rng, 0.4);
        let age = -0.5 + 1.25 * c + noise.sample(&mut rng);
        let log_psa = 1.5 + 2.0 * c + noise.sample(&mut rng);
        let lam = Poisson::new(1.0 + 2.0 * c).expect("positive rate");
        let charlson = lam.sample(&mut rng).min(10.0);
        let cvd = bern(&mut rng, sigmoid(-1.0 + 0.5 * age + 0.8 * c));
        let diabetes = bern(&mut rng, 0.25 + 0.1 * c);
        let dementia = bern(&mut rng, sigmoid(-2.5 + 0.4 * age + 0.3 * c));
        let abi = bern(&mut rng, 0.3);
        let u = rng.random::<f64>();
        let race = if u < 0.7 {
            0.0
        } else if u < 0.9 {
            1.0
        } else {
            2.0
        };
        let t = bern(
            &mut rng,
            sigmoid(-0.3 + 0.4 * cvd + 0.3 * age - 0.1 * charlson + 0.5 * abi + 0.2 * c),
        );
        let y = bern(
            &mut rng,
            sigmoid(-2.0 + 0.3 * charlson + 0.5 * cvd + 0.3 * age + 0.4 * t + 0.2 * dementia),
        );
        for (col, v) in cols
            .iter_mut()
            .zip([age, log_psa, charlson, cvd, diabetes, dementia, abi, race, t, y])
        {
            col.push(v);
        }
    }
    Table::new(schema, cols)
}

fn scenario(tau: &str, kappa: &str, log_alpha: &str) -> ScenarioConfig {
    ScenarioConfig {
        tau: tau.into(),
        kappa: kappa.into(),
        log_alpha: log_alpha.into(),
        eta: None,
    }
}

/// Demo scenarios 1 to 3, in increasing difficulty. Scenario 3 has a
/// nonlinear effect, arm-dependent confounding and weak overlap driven by
/// prior abiraterone use.
pub fn demo_scenarios() -> Vec<(&'static str, ScenarioConfig)> {
    vec![
        ("scenario1", scenario("0.1", "0", "0")),
        (
            "scenario2",
            scenario("0.05 + 0.015*cvd + 0.01*age + 0.01*charlson", "0.02", "1"),
        ),
        (
            "scenario3",
            scenario(
                "0.02 + 0.05*tanh(0.4*cvd + 0.2*age + 0.2*charlson + 0.4*dementia)",
                "0.05 - 0.01*(2*T - 1)*tanh(0.5*charlson + 0.6*cvd + 0.2*age)",
                "2*(2*abiraterone_prev - 1)",
            ),
        ),
    ]
}
