#![allow(dead_code)]

use std::io::Write;

use cascade_tuner::data::{generate_synthetic, SchemaMode, ScoreDataset, SyntheticSpec};
use cascade_tuner::joint::{fit_markov_model, BetaMixture, JointFitOptions, MarkovJointModel};
use cascade_tuner::{Architecture, CascadeSpec, ModelProfile};

/// Writes one verdict line straight to the process stdout so it survives
/// the test harness's output capture.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("ACCEPTANCE {verdict} {criterion}: {detail}\n");
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

pub fn profiles(costs: &[f64]) -> Vec<ModelProfile> {
    costs
        .iter()
        .enumerate()
        .map(|(i, &c)| ModelProfile {
            name: format!("m{}", i + 1),
            expected_cost: c,
        })
        .collect()
}

pub fn cascade(costs: &[f64], arch: Architecture) -> CascadeSpec {
    CascadeSpec::new(profiles(costs), arch).unwrap()
}

/// Two-model synthetic spec used across the suite.
pub fn pair_spec(n: usize, rho: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        models: profiles(&[1.0, 10.0]),
        marginals: vec![
            BetaMixture::single(3.0, 2.0).unwrap(),
            BetaMixture::single(5.0, 1.5).unwrap(),
        ],
        rhos: vec![rho],
        miscalibration: 0.0,
        mode: SchemaMode::Calibrated,
        seed,
        benchmark: None,
    }
}

pub fn clamp_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let eps = cascade_tuner::cli::FIT_CLAMP_EPS;
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v.clamp(eps, 1.0 - eps)).collect())
        .collect()
}

pub fn fit(ds: &ScoreDataset, seed: u64) -> MarkovJointModel {
    let mut opts = JointFitOptions::default();
    opts.em.seed = seed;
    fit_markov_model(&clamp_rows(ds.score_rows(ds.k())), &opts)
        .unwrap()
        .0
}

pub fn synth(spec: &SyntheticSpec) -> ScoreDataset {
    generate_synthetic(spec).unwrap()
}
