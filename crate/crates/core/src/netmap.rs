//! Global treatment registry and the consistency maps `U_i`, `V_i`.
//!
//! Treatments are indexed from zero; index 0 is the meta-population
//! reference. The meta-population parameter vector ψ is laid out as
//! `(ψ_{21,0..Q}, ψ_{31,0..Q}, …, ψ_{G1,0..Q})`, i.e. column
//! `(g − 1)(Q + 1) + q` holds ψ_{g1,q} for zero-based treatment `g ≥ 1`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Arms of one study as zero-based global treatment indices; the first
/// entry is the study reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyArms {
    pub study_id: String,
    pub arms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentNetwork {
    /// Global treatment labels; `treatments[0]` is the reference.
    pub treatments: Vec<String>,
    pub studies: Vec<StudyArms>,
    /// Number of effect modifiers shared by every study.
    pub q: usize,
}

/// Picks the treatment present in the most studies; ties go to the label
/// appearing first in `registry`.
pub fn default_reference(registry: &[String], studies: &[(String, Vec<String>)]) -> Option<String> {
    let mut best: Option<(&String, usize)> = None;
    for t in registry {
        let count = studies.iter().filter(|(_, arms)| arms.contains(t)).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((t, count));
        }
    }
    best.map(|(t, _)| t.clone())
}

impl TreatmentNetwork {
    /// Builds the network from labelled studies.
    ///
    /// `registry` fixes the order of treatments; the chosen reference
    /// (explicit, or [`default_reference`]) is moved to the front and the
    /// rest keep their registry order. Every arm must be registered and the
    /// resulting network must be connected.
    pub fn from_labels(
        registry: &[String],
        studies: &[(String, Vec<String>)],
        reference: Option<&str>,
        q: usize,
    ) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::Mapping("empty treatment registry".into()));
        }
        let reference = match reference {
            Some(r) => r.to_string(),
            None => default_reference(registry, studies).expect("non-empty registry"),
        };
        if !registry.contains(&reference) {
            return Err(Error::Mapping(format!("reference treatment `{reference}` is not registered")));
        }
        let mut treatments = vec![reference.clone()];
        treatments.extend(registry.iter().filter(|t| **t != reference).cloned());
        let index: BTreeMap<&str, usize> = treatments.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        if index.len() != treatments.len() {
            return Err(Error::Mapping("duplicate treatment label in registry".into()));
        }
        let mut out = Vec::with_capacity(studies.len());
        for (id, arms) in studies {
            let arms = arms
                .iter()
                .map(|a| {
                    index
                        .get(a.as_str())
                        .copied()
                        .ok_or_else(|| Error::Mapping(format!("study {id}: treatment `{a}` is not registered")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(StudyArms { study_id: id.clone(), arms });
        }
        let net = Self { treatments, studies: out, q };
        net.validate()?;
        Ok(net)
    }

    pub fn n_treatments(&self) -> usize {
        self.treatments.len()
    }

    /// Length of ψ: `(Q+1)(G−1)`.
    pub fn psi_dim(&self) -> usize {
        (self.q + 1) * (self.n_treatments() - 1)
    }

    /// Column of ψ_{g1,q} (`g ≥ 1`, zero-based).
    pub fn psi_index(&self, g: usize, q: usize) -> usize {
        debug_assert!(g >= 1 && q <= self.q);
        (g - 1) * (self.q + 1) + q
    }

    pub fn treatment_index(&self, label: &str) -> Option<usize> {
        self.treatments.iter().position(|t| t == label)
    }

    /// Human-readable ψ coordinate names, `B-A:(intercept)`, `B-A:x1`, …
    pub fn psi_names(&self, modifier_names: &[String]) -> Vec<String> {
        let reference = &self.treatments[0];
        let mut out = Vec::with_capacity(self.psi_dim());
        for t in self.treatments.iter().skip(1) {
            out.push(format!("{t}-{reference}:(intercept)"));
            for m in modifier_names {
                out.push(format!("{t}-{reference}:{m}"));
            }
        }
        out
    }

    /// Registry, arity, distinctness and connectivity checks.
    pub fn validate(&self) -> Result<()> {
        let g = self.n_treatments();
        if g < 2 {
            return Err(Error::Mapping("network needs at least 2 treatments".into()));
        }
        for s in &self.studies {
            if s.arms.len() < 2 {
                return Err(Error::Mapping(format!("study {} has fewer than 2 arms", s.study_id)));
            }
            let mut seen = vec![false; g];
            for &a in &s.arms {
                if a >= g {
                    return Err(Error::Mapping(format!("study {}: arm {a} outside registry", s.study_id)));
                }
                if std::mem::replace(&mut seen[a], true) {
                    return Err(Error::Mapping(format!("study {}: repeated arm {a}", s.study_id)));
                }
            }
        }
        self.check_connected()
    }

    /// Every treatment must be reachable from the reference through
    /// studies that share arms.
    pub fn check_connected(&self) -> Result<()> {
        let g = self.n_treatments();
        let mut parent: Vec<usize> = (0..g).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for s in &self.studies {
            for w in s.arms.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let root = find(&mut parent, 0);
        let unreachable: Vec<&str> = (0..g)
            .filter(|&t| find(&mut parent, t) != root)
            .map(|t| self.treatments[t].as_str())
            .collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(Error::Disconnected(format!(
                "not reachable from reference `{}`: {}",
                self.treatments[0],
                unreachable.join(", ")
            )))
        }
    }

    pub fn u_matrix<T: Scalar>(&self, study: usize) -> Result<DMatrix<T>> {
        build_u(&self.studies[study].arms, self.n_treatments())
    }

    pub fn v_matrix<T: Scalar>(&self, study: usize) -> Result<DMatrix<T>> {
        Ok(build_v(&self.u_matrix(study)?, self.q))
    }

    /// Nodes and edges with study counts, for network plots.
    pub fn summary(&self) -> NetworkSummary {
        let g = self.n_treatments();
        let mut edges: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
        for s in &self.studies {
            for (i, &a) in s.arms.iter().enumerate() {
                for &b in &s.arms[i + 1..] {
                    edges.entry((a.min(b), a.max(b))).or_default().push(s.study_id.clone());
                }
            }
        }
        NetworkSummary {
            reference: self.treatments[0].clone(),
            nodes: (0..g)
                .map(|t| NetworkNode {
                    treatment: self.treatments[t].clone(),
                    n_studies: self.studies.iter().filter(|s| s.arms.contains(&t)).count(),
                })
                .collect(),
            edges: edges
                .into_iter()
                .map(|((a, b), studies)| NetworkEdge {
                    from: self.treatments[a].clone(),
                    to: self.treatments[b].clone(),
                    n_studies: studies.len(),
                    studies,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub treatment: String,
    pub n_studies: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub from: String,
    pub to: String,
    pub n_studies: usize,
    pub studies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub reference: String,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

/// Comparison map of one study: `(G_i − 1) × (G − 1)`.
///
/// Row `n` compares arm `n + 1` with the study reference `arms[0]`: it has
/// `+1` in the column of that arm's treatment (none if the arm is the global
/// reference) and `−1` in the column of the study reference, unless the
/// study reference is the global reference.
pub fn build_u<T: Scalar>(arms: &[usize], g: usize) -> Result<DMatrix<T>> {
    if arms.len() < 2 {
        return Err(Error::Mapping("study needs at least 2 arms".into()));
    }
    if g < 2 {
        return Err(Error::Mapping("registry needs at least 2 treatments".into()));
    }
    for (i, &a) in arms.iter().enumerate() {
        if a >= g {
            return Err(Error::Mapping(format!("arm treatment {a} outside registry of {g}")));
        }
        if arms[..i].contains(&a) {
            return Err(Error::Mapping(format!("treatment {a} appears in two arms")));
        }
    }
    let mut u = DMatrix::zeros(arms.len() - 1, g - 1);
    let study_ref = arms[0];
    for (n, &t) in arms.iter().skip(1).enumerate() {
        if t != 0 {
            u[(n, t - 1)] = T::one();
        }
        if study_ref != 0 {
            u[(n, study_ref - 1)] = -T::one();
        }
    }
    Ok(u)
}

/// `V_i = U_i ⊗ I_{Q+1}`.
pub fn build_v<T: Scalar>(u: &DMatrix<T>, q: usize) -> DMatrix<T> {
    u.kronecker(&DMatrix::<T>::identity(q + 1, q + 1))
}

/// Per-draw contrast ψ_{gg′,q} = ψ_{g1,q} − ψ_{g′1,q} from draws of ψ
/// (rows are draws). Treatments are zero-based; the reference contributes 0.
pub fn consistency_contrast<T: Scalar>(
    psi_draws: &DMatrix<T>,
    q_count: usize,
    g: usize,
    g_prime: usize,
    q: usize,
) -> DVector<T> {
    let w = q_count + 1;
    let col = |t: usize| (t > 0).then(|| (t - 1) * w + q);
    let s = psi_draws.nrows();
    DVector::from_fn(s, |r, _| {
        let a = col(g).map_or(T::zero(), |c| psi_draws[(r, c)]);
        let b = col(g_prime).map_or(T::zero(), |c| psi_draws[(r, c)]);
        a - b
    })
}
