//! Synthetic depression-trial fixture: three small randomized studies of
//! sertraline (SER), placebo (PBO), escitalopram (ESCIT) and venlafaxine
//! (VEN) with an end-of-trial HRSD-17-like score where lower is better.
//!
//! The true benefit of treatment `g` over sertraline, in HRSD points, is
//! `c_g0 + c_g1·age + c_g2·female + c_g3·severity`. After negating the
//! outcome these are exactly the blip coefficients the pipeline estimates.

use std::path::Path;

use itrnma_core::data::{CovariateSpec, FormulaRoles, Record, StudyDataset};
use itrnma_core::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Benefit coefficients `(intercept, age, female, severity)` relative to SER.
pub const BENEFIT: [(&str, [f64; 4]); 3] = [
    ("PBO", [-1.0, 0.0, 0.0, -0.05]),
    ("ESCIT", [3.5, -0.08, 0.5, 0.0]),
    ("VEN", [-3.5, 0.08, 0.0, 0.0]),
];

const EMPLOYMENT: [&str; 3] = ["employed", "retired", "unemployed"];

struct StudyPlan {
    id: &'static str,
    arms: &'static [&'static str],
    n: usize,
    mean_age: f64,
}

const STUDIES: [StudyPlan; 3] = [
    StudyPlan { id: "embarc", arms: &["SER", "PBO"], n: 300, mean_age: 38.0 },
    StudyPlan { id: "switch", arms: &["SER", "ESCIT", "VEN"], n: 600, mean_age: 45.0 },
    StudyPlan { id: "elder", arms: &["ESCIT", "VEN", "PBO"], n: 540, mean_age: 52.0 },
];

pub fn covariates() -> Vec<CovariateSpec> {
    vec![
        CovariateSpec::continuous("age"),
        CovariateSpec::binary("female"),
        CovariateSpec::continuous("severity"),
        CovariateSpec::categorical("employment", EMPLOYMENT),
    ]
}

pub fn roles() -> FormulaRoles {
    FormulaRoles::parse(
        &["age", "female", "severity", "employment"],
        &["age", "female", "severity"],
        &["age", "female"],
        &["age", "severity", "arm"],
    )
    .expect("static roles")
}

fn benefit(label: &str, age: f64, female: f64, severity: f64) -> f64 {
    BENEFIT
        .iter()
        .find(|(t, _)| *t == label)
        .map_or(0.0, |(_, c)| c[0] + c[1] * age + c[2] * female + c[3] * severity)
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Generates the three studies.
pub fn generate(seed: u64) -> Vec<StudyDataset> {
    let noise = Normal::new(0.0, 3.5).expect("valid sd");
    let z = Normal::<f64>::new(0.0, 1.0).expect("valid sd");
    STUDIES
        .iter()
        .enumerate()
        .map(|(i, plan)| {
            let mut rng = stream(seed, &[i as u64]);
            let rows = (0..plan.n)
                .map(|j| {
                    let age = (plan.mean_age + 11.0 * z.sample(&mut rng)).clamp(18.0, 85.0).round();
                    let female = if rng.random::<f64>() < 0.62 { 1.0 } else { 0.0 };
                    let severity = round1((21.0 + 4.0 * z.sample(&mut rng)).clamp(14.0, 35.0));
                    let employment = if age >= 65.0 {
                        1.0
                    } else if rng.random::<f64>() < 0.3 {
                        2.0
                    } else {
                        0.0
                    };
                    let arm = j % plan.arms.len();
                    let base = 6.0 + 0.45 * severity + 0.03 * age - 0.5 * female + [0.0, 0.5, 1.0][employment as usize];
                    let rel = benefit(plan.arms[arm], age, female, severity) - benefit(plan.arms[0], age, female, severity);
                    let hrsd = round1((base - rel + noise.sample(&mut rng)).max(0.0));
                    let eta = -1.6 + 0.02 * (age - 45.0) + 0.05 * (severity - 21.0) + if arm > 0 { 0.3 } else { 0.0 };
                    let missing = rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp());
                    let mut cov = vec![Some(age), Some(female), Some(severity), Some(employment)];
                    // a few unrecorded baseline values, handled by simple imputation
                    if rng.random::<f64>() < 0.02 {
                        cov[2] = None;
                    }
                    if rng.random::<f64>() < 0.02 {
                        cov[3] = None;
                    }
                    Record {
                        subject_id: format!("{}-{:04}", plan.id, j + 1),
                        outcome: (!missing).then_some(hrsd),
                        arm,
                        covariates: cov,
                    }
                })
                .collect();
            StudyDataset {
                study_id: plan.id.to_string(),
                covariates: covariates(),
                rows,
                arm_treatments: plan.arms.iter().map(|s| s.to_string()).collect(),
                roles: roles(),
            }
        })
        .collect()
}

/// Run configuration matching [`generate`]'s files.
pub fn run_config_toml(iterations: usize) -> String {
    let mut s = String::from("output_dir = \"out\"\n\n");
    for p in &STUDIES {
        s.push_str(&format!("[[studies]]\npath = \"{}.csv\"\n\n", p.id));
    }
    s.push_str(
        r#"[[covariates]]
name = "age"
kind = "continuous"

[[covariates]]
name = "female"
kind = "binary"

[[covariates]]
name = "severity"
kind = "continuous"

[[covariates]]
name = "employment"
kind = "categorical"
levels = ["employed", "retired", "unemployed"]

[roles]
reference_terms = ["age", "female", "severity", "employment"]
blip_terms = ["age", "female", "severity"]
treatment_terms = ["age", "female"]
missingness_terms = ["age", "severity", "arm"]

[network]
registry = ["SER", "PBO", "ESCIT", "VEN"]
reference = "SER"

[ingest]
# HRSD-17: lower is better, the engine maximizes
negate_outcome = true
impute = true

"#,
    );
    s.push_str(&format!("[stage_one]\niterations = {iterations}\nseed = 11\n\n"));
    s.push_str("[nma]\neffects = \"random\"\nchains = 4\niters = 2000\nwarmup = 1000\nseed = 5\n");
    s
}

/// Writes one CSV per study plus `run.toml` into `dir`.
pub fn write_fixture(dir: &Path, seed: u64, iterations: usize) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    for s in generate(seed) {
        itrnma_core::io::write_csv_file(dir.join(format!("{}.csv", s.study_id)), std::slice::from_ref(&s))?;
    }
    std::fs::write(dir.join("run.toml"), run_config_toml(iterations))?;
    Ok(())
}
