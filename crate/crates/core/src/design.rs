//! Design-matrix construction for the outcome, treatment-assignment and
//! missingness models of one study.
//!
//! Outcome column layout is `[reference | blip(arm 2) | ... | blip(arm G_i)]`
//! where every blip block is `(1, m_1, ..., m_Q)` multiplied by the arm
//! indicator. Rows in the study reference arm have zeros in every blip block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, StudyDataset, Term};
use crate::error::{Error, Result};
use crate::Scalar;

/// Role of one effect-modifier column in the meta-population profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModifierKind {
    Continuous,
    Binary,
    /// Indicator of one non-reference level of a categorical covariate.
    Indicator { covariate: String, level: String },
    /// Polynomial or product term.
    Derived,
}

/// Effect-modifier column with the range observed in the data that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierInfo {
    pub name: String,
    #[serde(flatten)]
    pub kind: ModifierKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices<T: Scalar> {
    /// N × p_β, leading intercept.
    pub x_ref: DMatrix<T>,
    /// N × (Q+1)(G_i−1).
    pub x_blip: DMatrix<T>,
    /// Treatment-assignment design, leading intercept.
    pub x_trt: DMatrix<T>,
    /// Missingness design, leading intercept.
    pub x_miss: DMatrix<T>,
    /// Missing-outcome indicator m_ij.
    pub missing: Vec<bool>,
    /// Outcomes; zero where missing.
    pub y: DVector<T>,
    pub arm: Vec<usize>,
    pub n_arms: usize,
    pub ref_names: Vec<String>,
    pub modifiers: Vec<ModifierInfo>,
    pub trt_names: Vec<String>,
    pub miss_names: Vec<String>,
}

impl<T: Scalar> DesignMatrices<T> {
    pub fn n_rows(&self) -> usize {
        self.x_ref.nrows()
    }

    /// Number of effect modifiers Q.
    pub fn q(&self) -> usize {
        self.modifiers.len()
    }

    pub fn blip_dim(&self) -> usize {
        self.x_blip.ncols()
    }

    /// Columns of the blip block for non-reference arm `k` (1-based over arms,
    /// i.e. `k` in `1..n_arms`).
    pub fn blip_block(&self, k: usize) -> DMatrix<T> {
        let w = self.q() + 1;
        self.x_blip.columns((k - 1) * w, w).into_owned()
    }

    /// `[x_ref | x_blip]`.
    pub fn outcome_design(&self) -> DMatrix<T> {
        let n = self.n_rows();
        let (pr, pb) = (self.x_ref.ncols(), self.x_blip.ncols());
        let mut x = DMatrix::zeros(n, pr + pb);
        x.columns_mut(0, pr).copy_from(&self.x_ref);
        x.columns_mut(pr, pb).copy_from(&self.x_blip);
        x
    }

    /// Names of the `(Q+1)(G_i−1)` blip coordinates, e.g. `B:x1`.
    pub fn blip_names(&self, arm_labels: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.blip_dim());
        for label in arm_labels.iter().skip(1) {
            out.push(format!("{label}:(intercept)"));
            for m in &self.modifiers {
                out.push(format!("{label}:{}", m.name));
            }
        }
        out
    }

    /// Fitted mean for one row given stacked `(β, δ)`.
    pub fn fitted(&self, row: usize, coef: &DVector<T>) -> T {
        let pr = self.x_ref.ncols();
        let mut s = T::zero();
        for c in 0..pr {
            s += self.x_ref[(row, c)] * coef[c];
        }
        for c in 0..self.x_blip.ncols() {
            s += self.x_blip[(row, c)] * coef[pr + c];
        }
        s
    }
}

struct Expanded {
    names: Vec<String>,
    kinds: Vec<ModifierKind>,
    cols: Vec<Vec<f64>>,
}

fn expand_terms(data: &StudyDataset, terms: &[Term]) -> Result<Expanded> {
    let n = data.rows.len();
    let mut out = Expanded { names: vec![], kinds: vec![], cols: vec![] };
    let value = |j: usize, c: usize| -> Result<f64> {
        data.rows[j].covariates.get(c).copied().flatten().ok_or_else(|| {
            Error::InvalidData(format!(
                "study {}: missing value of `{}` in row {j}",
                data.study_id, data.covariates[c].name
            ))
        })
    };
    let index = |name: &str| -> Result<usize> {
        data.covariate_index(name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate `{name}`")))
    };
    for t in terms {
        match t {
            Term::Main(a) => {
                let c = index(a)?;
                match &data.covariates[c].kind {
                    CovariateKind::Categorical { levels } => {
                        for (li, level) in levels.iter().enumerate().skip(1) {
                            let col = (0..n)
                                .map(|j| value(j, c).map(|v| if v as usize == li { 1.0 } else { 0.0 }))
                                .collect::<Result<Vec<_>>>()?;
                            out.names.push(format!("{a}[{level}]"));
                            out.kinds.push(ModifierKind::Indicator { covariate: a.clone(), level: level.clone() });
                            out.cols.push(col);
                        }
                    }
                    kind => {
                        out.cols.push((0..n).map(|j| value(j, c)).collect::<Result<Vec<_>>>()?);
                        out.names.push(a.clone());
                        out.kinds.push(if matches!(kind, CovariateKind::Binary) {
                            ModifierKind::Binary
                        } else {
                            ModifierKind::Continuous
                        });
                    }
                }
            }
            Term::Power(a, p) => {
                let c = index(a)?;
                out.cols.push((0..n).map(|j| value(j, c).map(|v| v.powi(*p as i32))).collect::<Result<Vec<_>>>()?);
                out.names.push(t.to_string());
                out.kinds.push(ModifierKind::Derived);
            }
            Term::Product(a, b) => {
                let (ca, cb) = (index(a)?, index(b)?);
                out.cols.push((0..n).map(|j| Ok(value(j, ca)? * value(j, cb)?)).collect::<Result<Vec<_>>>()?);
                out.names.push(t.to_string());
                out.kinds.push(ModifierKind::Derived);
            }
            Term::Arm => {
                for k in 1..data.n_arms() {
                    out.cols.push(data.rows.iter().map(|r| if r.arm == k { 1.0 } else { 0.0 }).collect());
                    out.names.push(format!("arm[{}]", data.arm_treatments[k]));
                    out.kinds.push(ModifierKind::Derived);
                }
            }
        }
    }
    Ok(out)
}

fn with_intercept<T: Scalar>(n: usize, cols: &[Vec<f64>]) -> DMatrix<T> {
    DMatrix::from_fn(n, cols.len() + 1, |j, c| if c == 0 { T::one() } else { T::lit(cols[c - 1][j]) })
}

/// Builds the stacked outcome design plus the weight-model designs.
///
/// Categorical covariates expand to indicators of every level except the
/// first in sorted order. Construction is deterministic.
pub fn build_design<T: Scalar>(data: &StudyDataset) -> Result<DesignMatrices<T>> {
    data.roles.validate(&data.covariates)?;
    let n = data.rows.len();
    let g = data.n_arms();
    if g < 2 {
        return Err(Error::InvalidData(format!("study {} has fewer than 2 arms", data.study_id)));
    }
    if let Some(r) = data.rows.iter().find(|r| r.arm >= g) {
        return Err(Error::InvalidData(format!("subject {} has arm index {} >= {g}", r.subject_id, r.arm)));
    }
    for k in 0..g {
        if !data.rows.iter().any(|r| r.arm == k) {
            return Err(Error::DegenerateArm { study: data.study_id.clone(), arm: k });
        }
    }

    let reference = expand_terms(data, &data.roles.reference_terms)?;
    let blip = expand_terms(data, &data.roles.blip_terms)?;
    let trt = expand_terms(data, &data.roles.treatment_terms)?;
    let miss = expand_terms(data, &data.roles.missingness_terms)?;

    let q = blip.cols.len();
    let w = q + 1;
    let mut x_blip = DMatrix::zeros(n, w * (g - 1));
    for (j, r) in data.rows.iter().enumerate() {
        if r.arm == 0 {
            continue;
        }
        let base = (r.arm - 1) * w;
        x_blip[(j, base)] = T::one();
        for (c, col) in blip.cols.iter().enumerate() {
            x_blip[(j, base + 1 + c)] = T::lit(col[j]);
        }
    }

    let modifiers = blip
        .names
        .iter()
        .zip(blip.kinds)
        .zip(&blip.cols)
        .map(|((name, kind), col)| ModifierInfo {
            name: name.clone(),
            kind,
            min: col.iter().copied().fold(f64::INFINITY, f64::min),
            max: col.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();

    let with_int = |names: Vec<String>| std::iter::once("(intercept)".to_string()).chain(names).collect();
    Ok(DesignMatrices {
        x_ref: with_intercept(n, &reference.cols),
        x_blip,
        x_trt: with_intercept(n, &trt.cols),
        x_miss: with_intercept(n, &miss.cols),
        missing: data.rows.iter().map(|r| r.outcome.is_none()).collect(),
        y: DVector::from_iterator(n, data.rows.iter().map(|r| T::lit(r.outcome.unwrap_or(0.0)))),
        arm: data.rows.iter().map(|r| r.arm).collect(),
        n_arms: g,
        ref_names: with_int(reference.names),
        modifiers,
        trt_names: with_int(trt.names),
        miss_names: with_int(miss.names),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::two_arm;
    use crate::data::{CovariateSpec, FormulaRoles, Record};

    #[test]
    fn two_arm_blip_block_column_by_column() {
        let d = two_arm(10);
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        assert_eq!(x.x_blip.ncols(), 2);
        for (j, r) in d.rows.iter().enumerate() {
            let x1 = r.covariates[0].unwrap();
            if r.arm == 1 {
                assert_eq!(x.x_blip[(j, 0)], 1.0);
                assert_eq!(x.x_blip[(j, 1)], x1);
            } else {
                assert_eq!(x.x_blip[(j, 0)], 0.0);
                assert_eq!(x.x_blip[(j, 1)], 0.0);
            }
        }
    }

    #[test]
    fn squared_reference_term_adds_a_column() {
        let mut d = two_arm(8);
        d.roles = FormulaRoles::parse(&["x1", "x2", "x1^2"], &["x1"], &["x1"], &["x1"]).unwrap();
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        assert_eq!(x.x_ref.ncols(), 4);
        assert_eq!(x.ref_names, vec!["(intercept)", "x1", "x2", "x1^2"]);
        let x1 = d.rows[5].covariates[0].unwrap();
        assert_eq!(x.x_ref[(5, 3)], x1 * x1);
    }

    #[test]
    fn zero_covariates_fit_is_intercept_plus_blip_intercept() {
        let mut d = two_arm(4);
        d.rows[1].covariates = vec![Some(0.0), Some(0.0)];
        assert_eq!(d.rows[1].arm, 1);
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        // (β0, β1, β2, δ0, δ1)
        let coef = DVector::from_vec(vec![0.7, 3.0, -2.0, 1.25, 9.0]);
        assert_eq!(x.fitted(1, &coef), 0.7 + 1.25);
    }

    #[test]
    fn blip_column_count_and_reference_arm_zeros_three_arms() {
        let mut d = two_arm(12);
        d.arm_treatments.push("C".into());
        for (j, r) in d.rows.iter_mut().enumerate() {
            r.arm = j % 3;
        }
        d.roles = FormulaRoles::parse(&["x1", "x2"], &["x1", "x2"], &["x1"], &["x1", "arm"]).unwrap();
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        assert_eq!(x.blip_dim(), 3 * 2);
        assert_eq!(x.x_miss.ncols(), 1 + 1 + 2);
        for j in 0..12 {
            if x.arm[j] == 0 {
                assert!(x.x_blip.row(j).iter().all(|&v| v == 0.0));
            } else {
                assert_eq!(x.blip_block(x.arm[j])[(j, 0)], 1.0);
            }
        }
        assert_eq!(
            x.blip_names(&d.arm_treatments),
            vec!["B:(intercept)", "B:x1", "B:x2", "C:(intercept)", "C:x1", "C:x2"]
        );
    }

    #[test]
    fn categorical_drops_first_sorted_level() {
        let mut d = two_arm(6);
        d.covariates.push(CovariateSpec::categorical("job", ["unemployed", "full", "part"]));
        for (j, r) in d.rows.iter_mut().enumerate() {
            r.covariates.push(Some((j % 3) as f64));
        }
        d.roles = FormulaRoles::parse(&["x1", "job"], &["job"], &[], &[]).unwrap();
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        // sorted: full, part, unemployed
        assert_eq!(x.ref_names, vec!["(intercept)", "x1", "job[part]", "job[unemployed]"]);
        assert_eq!(x.q(), 2);
        assert_eq!(x.x_ref[(1, 2)], 1.0);
        assert_eq!(x.x_ref[(2, 3)], 1.0);
        assert_eq!(x.x_ref[(0, 2)] + x.x_ref[(0, 3)], 0.0);
    }

    #[test]
    fn unknown_covariate_and_empty_arm_errors() {
        let mut d = two_arm(6);
        d.roles = FormulaRoles::parse(&["zz"], &[], &[], &[]).unwrap();
        assert!(matches!(build_design::<f64>(&d), Err(Error::Schema(_))));

        let mut d = two_arm(6);
        for r in d.rows.iter_mut() {
            r.arm = 0;
        }
        assert!(matches!(build_design::<f64>(&d), Err(Error::DegenerateArm { arm: 1, .. })));
    }

    #[test]
    fn deterministic_and_generic() {
        let d = two_arm(25);
        let a: DesignMatrices<f64> = build_design(&d).unwrap();
        let b: DesignMatrices<f64> = build_design(&d).unwrap();
        assert_eq!(a, b);
        let f: DesignMatrices<f32> = build_design(&d).unwrap();
        assert_eq!(f.x_blip.ncols(), a.x_blip.ncols());
        assert!((f.x_ref[(3, 1)] as f64 - a.x_ref[(3, 1)]).abs() < 1e-6);
    }

    #[test]
    fn missing_outcome_flags() {
        let mut d = two_arm(5);
        d.rows[2] = Record { outcome: None, ..d.rows[2].clone() };
        let x: DesignMatrices<f64> = build_design(&d).unwrap();
        assert!(x.missing[2]);
        assert_eq!(x.y[2], 0.0);
    }
}
