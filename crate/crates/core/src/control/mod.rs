//! User-specified causal control functions: treatment effect `tau(X)`,
//! unmeasured confounding `kappa(X, T)` and overlap `log_alpha(X)`.
//!
//! Expressions are evaluated on raw-scale covariates.

mod parser;

pub use parser::{parse, BinOp, Expr, Func, TREATMENT_SYMBOL};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSchema, Table};
use crate::error::{Error, Result};

impl Expr {
    pub fn uses_treatment(&self) -> bool {
        match self {
            Expr::Treatment => true,
            Expr::Num(_) | Expr::Var(_) => false,
            Expr::Neg(e) => e.uses_treatment(),
            Expr::Binary(_, a, b) => a.uses_treatment() || b.uses_treatment(),
            Expr::Call(_, args) => args.iter().any(Expr::uses_treatment),
        }
    }

    /// Covariate names referenced, in first-occurrence order with repeats.
    pub fn covariate_refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Var(name) => out.push(name),
            Expr::Neg(e) => e.collect_refs(out),
            Expr::Binary(_, a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_refs(out)),
            Expr::Num(_) | Expr::Treatment => {}
        }
    }

    pub fn depth(&self) -> usize {
        1 + match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Treatment => 0,
            Expr::Neg(e) => e.depth(),
            Expr::Binary(_, a, b) => a.depth().max(b.depth()),
            Expr::Call(_, args) => args.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    pub fn validate(&self, schema: &DatasetSchema, allow_treatment: bool) -> Result<()> {
        for name in self.covariate_refs() {
            if !schema.covariates.iter().any(|c| c == name) {
                return Err(Error::UnknownCovariate(name.to_string()));
            }
        }
        if !allow_treatment && self.uses_treatment() {
            return Err(Error::TreatmentNotAllowed);
        }
        Ok(())
    }

    /// Evaluates with covariates supplied by `lookup`; `t` must be given when
    /// the expression mentions `T`.
    pub fn evaluate<F>(&self, lookup: &F, t: Option<f64>) -> Result<f64>
    where
        F: Fn(&str) -> Option<f64>,
    {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name).ok_or_else(|| Error::UnknownCovariate(name.clone()))?,
            Expr::Treatment => t.ok_or_else(|| Error::Eval("treatment value required".into()))?,
            Expr::Neg(e) => -e.evaluate(lookup, t)?,
            Expr::Binary(op, a, b) => {
                let (x, y) = (a.evaluate(lookup, t)?, b.evaluate(lookup, t)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::Eval("division by zero".into()));
                        }
                        x / y
                    }
                }
            }
            Expr::Call(func, args) => {
                let x = args[0].evaluate(lookup, t)?;
                match func {
                    Func::Tanh => x.tanh(),
                    Func::Exp => x.exp(),
                    Func::Abs => x.abs(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(Error::Eval(format!("log of non-positive value {x}")));
                        }
                        x.ln()
                    }
                    Func::Min => x.min(args[1].evaluate(lookup, t)?),
                    Func::Max => x.max(args[1].evaluate(lookup, t)?),
                }
            }
        })
    }
}

/// `mean + eta * (tau_i - mean)` with the mean taken over the input.
pub fn scale_heterogeneity(tau_values: &[f64], eta: f64) -> Vec<f64> {
    if tau_values.is_empty() {
        return Vec::new();
    }
    let mean = tau_values.iter().sum::<f64>() / tau_values.len() as f64;
    scale_about(tau_values, mean, eta)
}

/// Rescales deviations around a fixed center.
pub fn scale_about(tau_values: &[f64], center: f64, eta: f64) -> Vec<f64> {
    tau_values.iter().map(|&v| center + eta * (v - center)).collect()
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tau: String,
    pub kappa: String,
    pub log_alpha: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSpec {
    pub tau: Expr,
    pub kappa: Expr,
    pub log_alpha: Expr,
    pub eta: f64,
    config: ScenarioConfig,
}

/// Per-row target values of the three control functions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlTargets {
    pub tau: Vec<f64>,
    pub kappa: Vec<f64>,
    pub log_alpha: Vec<f64>,
}

impl ControlSpec {
    pub fn from_config(config: ScenarioConfig, schema: &DatasetSchema) -> Result<Self> {
        let eta = config.eta.unwrap_or(1.0);
        if !(eta >= 0.0) {
            return Err(Error::Invalid(format!("heterogeneity scale eta = {eta} must be >= 0")));
        }
        let tau = parse(&config.tau)?;
        let kappa = parse(&config.kappa)?;
        let log_alpha = parse(&config.log_alpha)?;
        tau.validate(schema, false)?;
        kappa.validate(schema, true)?;
        log_alpha.validate(schema, false)?;
        Ok(ControlSpec {
            tau,
            kappa,
            log_alpha,
            eta,
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Raw (unscaled) tau over every row of `table`.
    pub fn raw_tau(&self, table: &Table) -> Result<Vec<f64>> {
        (0..table.n_rows())
            .map(|r| {
                let row = table.covariate_row(r);
                self.tau.evaluate(&|n| row.get(n).copied(), None)
            })
            .collect()
    }

    /// Targets for every row, with `arms` supplying T for kappa. Tau
    /// deviations are scaled by eta around the fixed `tau_center`.
    pub fn evaluate_table(&self, table: &Table, arms: &[f64], tau_center: f64) -> Result<ControlTargets> {
        if arms.len() != table.n_rows() {
            return Err(Error::Shape(format!("{} arms for {} rows", arms.len(), table.n_rows())));
        }
        let mut out = ControlTargets::default();
        for (r, &t) in arms.iter().enumerate() {
            let row = table.covariate_row(r);
            let lookup = |n: &str| row.get(n).copied();
            let tau = self.tau.evaluate(&lookup, None)?;
            out.tau.push(if self.eta == 1.0 {
                tau
            } else {
                tau_center + self.eta * (tau - tau_center)
            });
            out.kappa.push(self.kappa.evaluate(&lookup, Some(t))?);
            out.log_alpha.push(self.log_alpha.evaluate(&lookup, None)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnMeta;
    use std::collections::HashMap;

    const S2_TAU: &str = "0.05 + 0.015*cvd + 0.01*age + 0.01*charlson";
    const S3_TAU: &str = "0.02 + 0.05*tanh(0.4*cvd + 0.2*age + 0.2*charlson + 0.4*dementia)";
    const S3_LOG_ALPHA: &str = "2*(2*abiraterone_prev - 1)";

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                ColumnMeta::binary("cvd"),
                ColumnMeta::continuous("age"),
                ColumnMeta::integer("charlson"),
                ColumnMeta::binary("dementia"),
                ColumnMeta::binary("abiraterone_prev"),
                ColumnMeta::binary("t"),
                ColumnMeta::binary("y"),
            ],
            "t",
            "y",
            &["cvd", "age", "charlson", "dementia", "abiraterone_prev"],
        )
        .unwrap()
    }

    fn eval(src: &str, vals: &[(&str, f64)], t: Option<f64>) -> Result<f64> {
        let m: HashMap<&str, f64> = vals.iter().copied().collect();
        parse(src)?.evaluate(&|n| m.get(n).copied(), t)
    }

    #[test]
    fn parses_linear_scenario() {
        let e = parse(S2_TAU).unwrap();
        assert_eq!(e.covariate_refs(), vec!["cvd", "age", "charlson"]);
        // ((0.05 + 0.015*cvd) + 0.01*age) + 0.01*charlson
        assert_eq!(e.depth(), 5);
        assert_eq!(parse("0.1").unwrap(), Expr::Num(0.1));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("tanh(") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("1 + * 2"), Err(Error::Syntax { offset: 4, .. })));
        assert!(matches!(parse("sinh(1)"), Err(Error::UnknownFunction(_))));
        assert!(matches!(parse("(1 + 2"), Err(Error::Syntax { offset: 6, .. })));
        assert!(matches!(parse("1 2"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse("max(1)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("1 $ 2"), Err(Error::Syntax { offset: 2, .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("1 - 2 - 3", &[], None).unwrap(), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[], None).unwrap(), 1.0);
        assert_eq!(eval("1 + 2 * 3", &[], None).unwrap(), 7.0);
        assert_eq!(eval("-2 * -3", &[], None).unwrap(), 6.0);
        assert_eq!(eval("2e-1 + 1.5E1", &[], None).unwrap(), 15.2);
        assert_eq!(eval("max(1, min(5, 3))", &[], None).unwrap(), 3.0);
        assert_eq!(eval("abs(-2) + exp(0) + log(1)", &[], None).unwrap(), 3.0);
    }

    #[test]
    fn validation() {
        let s = schema();
        assert!(parse("0.1*cvd").unwrap().validate(&s, false).is_ok());
        assert!(matches!(
            parse("0.1*T").unwrap().validate(&s, false),
            Err(Error::TreatmentNotAllowed)
        ));
        assert!(parse("0.1*T").unwrap().validate(&s, true).is_ok());
        assert!(matches!(parse("bmi").unwrap().validate(&s, true), Err(Error::UnknownCovariate(n)) if n == "bmi"));
        // outcome and treatment columns are not covariates
        assert!(parse("y").unwrap().validate(&s, true).is_err());
    }

    #[test]
    fn scenario_formulas() {
        let v = eval(S2_TAU, &[("cvd", 1.0), ("age", 0.0), ("charlson", 0.0)], None).unwrap();
        assert!((v - 0.065).abs() < 1e-15);
        let v = eval(
            S3_TAU,
            &[("cvd", 0.0), ("age", 0.0), ("charlson", 0.0), ("dementia", 0.0)],
            None,
        )
        .unwrap();
        assert_eq!(v, 0.02);
        assert_eq!(eval(S3_LOG_ALPHA, &[("abiraterone_prev", 1.0)], None).unwrap(), 2.0);
        assert_eq!(eval(S3_LOG_ALPHA, &[("abiraterone_prev", 0.0)], None).unwrap(), -2.0);
        let k = "0.05 - 0.01*(2*T - 1)*tanh(0.5*charlson)";
        assert!((eval(k, &[("charlson", 0.0)], Some(1.0)).unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn runtime_errors() {
        assert!(matches!(eval("1 / cvd", &[("cvd", 0.0)], None), Err(Error::Eval(_))));
        assert!(matches!(eval("log(0)", &[], None), Err(Error::Eval(_))));
        assert!(matches!(eval("T", &[], None), Err(Error::Eval(_))));
    }

    #[test]
    fn heterogeneity_scaling() {
        let tau = [0.03, 0.07, 0.1];
        assert_eq!(scale_heterogeneity(&tau, 1.0), tau.to_vec());
        let flat = scale_heterogeneity(&tau, 0.0);
        assert!(flat.iter().all(|&v| (v - flat[0]).abs() == 0.0));
        let s = scale_heterogeneity(&[0.0, 0.2], 2.0);
        assert!((s[0] + 0.1).abs() < 1e-15 && (s[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn spec_rejects_treatment_in_tau_and_negative_eta() {
        let s = schema();
        let cfg = |tau: &str, eta| ScenarioConfig {
            tau: tau.into(),
            kappa: "0.02*T".into(),
            log_alpha: "0".into(),
            eta,
        };
        assert!(ControlSpec::from_config(cfg("0.1", None), &s).is_ok());
        assert!(ControlSpec::from_config(cfg("0.1*T", None), &s).is_err());
        assert!(ControlSpec::from_config(cfg("0.1", Some(-1.0)), &s).is_err());
    }

    fn arb_expr() -> impl proptest::strategy::Strategy<Value = Expr> {
        use proptest::prelude::*;
        let leaf = prop_oneof![
            (0.0f64..10.0).prop_map(Expr::Num),
            prop_oneof![Just("cvd"), Just("age"), Just("charlson")].prop_map(|s| Expr::Var(s.to_string())),
            Just(Expr::Treatment),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), 0..3usize).prop_map(|(a, b, k)| {
                    let op = [BinOp::Add, BinOp::Sub, BinOp::Mul][k];
                    Expr::Binary(op, Box::new(a), Box::new(b))
                }),
                inner.clone().prop_map(|e| Expr::Call(Func::Tanh, vec![e])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest::proptest! {
        #[test]
        fn pretty_print_reparses(e in arb_expr(), seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let vals = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(0.0..6.0)];
                let lookup = |n: &str| match n { "cvd" => Some(vals[0]), "age" => Some(vals[1]), _ => Some(vals[2]) };
                let t = Some(f64::from(rng.random_range(0..2u8)));
                let a = e.evaluate(&lookup, t).unwrap();
                let b = back.evaluate(&lookup, t).unwrap();
                proptest::prop_assert!(a == b || (a.is_nan() && b.is_nan()));
            }
        }

        #[test]
        fn scaling_preserves_mean(vals in proptest::collection::vec(-1.0f64..1.0, 1..200), eta in 0.0f64..5.0) {
            let m0 = vals.iter().sum::<f64>() / vals.len() as f64;
            let s = scale_heterogeneity(&vals, eta);
            let m1 = s.iter().sum::<f64>() / s.len() as f64;
            proptest::prop_assert!((m0 - m1).abs() < 1e-12);
        }
    }
}
