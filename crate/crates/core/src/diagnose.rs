//! Attention dominance metrics (SDI, AEI) and PCA projection of token
//! embeddings.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use thiserror::Error;

use crate::align::{build_context, think_on_context, AlignError, ContextKind};
use crate::backend::{AttentionProfile, BackendError, ScoringBackend};
use crate::evalx::EpisodeRecord;
use crate::vocab::{tokenize_text, SubspaceTag};

/// Task instruction placed ahead of both diagnostic contexts. Gives the
/// think-off context general-subspace tokens so AEI is defined there too.
pub const INSTRUCTION_PREFIX: &str = "Recommend the next item for this user based on the history .";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnoseError {
    #[error("profile has no {0} tokens")]
    MissingSubspace(&'static str),
    #[error("metric is not finite")]
    NonFinite,
    #[error("vectors have mismatched dimensions: {0}")]
    DimensionMismatch(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Align(#[from] AlignError),
}

fn mean_mass(profile: &AttentionProfile, tag: SubspaceTag) -> Result<f64, DiagnoseError> {
    let n = profile.count(tag);
    if n == 0 {
        return Err(DiagnoseError::MissingSubspace(tag.as_str()));
    }
    Ok(profile.mass(tag) / n as f64)
}

/// Semantic dominance index: mean attention per general token over mean
/// attention per SID token.
pub fn sdi(profile: &AttentionProfile) -> Result<f64, DiagnoseError> {
    let ratio = mean_mass(profile, SubspaceTag::General)? / mean_mass(profile, SubspaceTag::SemanticId)?;
    if !ratio.is_finite() {
        return Err(DiagnoseError::NonFinite);
    }
    Ok(ratio)
}

/// Attention efficiency index: mean attention per general token, ×100.
pub fn aei(profile: &AttentionProfile) -> Result<f64, DiagnoseError> {
    Ok(100.0 * mean_mass(profile, SubspaceTag::General)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub context_label: String,
    pub n_general: usize,
    pub n_sid: usize,
    pub sdi: f64,
    pub aei: f64,
}

impl DiagnosticsReport {
    pub fn from_profile(label: &str, profile: &AttentionProfile) -> Result<Self, DiagnoseError> {
        Ok(Self {
            context_label: label.to_string(),
            n_general: profile.count(SubspaceTag::General),
            n_sid: profile.count(SubspaceTag::SemanticId),
            sdi: sdi(profile)?,
            aei: aei(profile)?,
        })
    }

    pub fn csv_header() -> &'static str {
        "context_label,n_general,n_sid,sdi,aei"
    }

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.context_label, self.n_general, self.n_sid, self.sdi, self.aei)
    }
}

fn with_instruction(mut context: Vec<String>) -> Vec<String> {
    let mut out = tokenize_text(INSTRUCTION_PREFIX);
    out.append(&mut context);
    out
}

/// Think-on context: instruction, history and the raw chain.
pub fn think_on_diagnostic_context(episode: &EpisodeRecord) -> Result<Vec<String>, DiagnoseError> {
    Ok(with_instruction(think_on_context(&episode.history, &tokenize_text(&episode.cot))?))
}

/// Think-off context: instruction and history only.
pub fn think_off_diagnostic_context(episode: &EpisodeRecord) -> Result<Vec<String>, DiagnoseError> {
    Ok(with_instruction(build_context(ContextKind::Baseline, &episode.history, &[], &[])?))
}

/// `(think_on, think_off)` reports for one episode.
pub fn diagnose_episode(
    backend: &dyn ScoringBackend,
    episode: &EpisodeRecord,
) -> Result<(DiagnosticsReport, DiagnosticsReport), DiagnoseError> {
    let on = backend.attention_profile(&think_on_diagnostic_context(episode)?)?;
    let off = backend.attention_profile(&think_off_diagnostic_context(episode)?)?;
    Ok((
        DiagnosticsReport::from_profile("think_on", &on)?,
        DiagnosticsReport::from_profile("think_off", &off)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `k` unit-length principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Centered inputs expressed in the component basis.
    pub projections: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Column means subtracted before projection.
    pub mean: Vec<f64>,
    /// Trace of the covariance matrix.
    pub total_variance: f64,
}

/// Top-`k` principal components of the (1/n) covariance. Each component's
/// largest-magnitude entry is made positive.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca, DiagnoseError> {
    if vectors.len() < 2 {
        return Err(DiagnoseError::DegenerateData("need at least 2 vectors".into()));
    }
    let d = vectors[0].len();
    if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != d) {
        return Err(DiagnoseError::DimensionMismatch(format!(
            "vector {i} has dimension {}, expected {d}",
            v.len()
        )));
    }
    if k == 0 || k > d {
        return Err(DiagnoseError::DimensionMismatch(format!("k = {k} must be in 1..={d}")));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(DiagnoseError::DegenerateData("non-finite coordinate".into()));
    }
    let n = vectors.len();
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let total_variance = cov.trace();
    if total_variance <= 0.0 {
        return Err(DiagnoseError::DegenerateData("all points are identical".into()));
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        v.iter_mut().for_each(|x| *x *= sign / norm);
        components.push(v);
        ratios.push((eig.eigenvalues[idx] / total_variance).clamp(0.0, 1.0));
    }
    let projections = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|c| c.iter().enumerate().map(|(j, cj)| centered[(i, j)] * cj).sum())
                .collect()
        })
        .collect();
    Ok(Pca {
        components,
        projections,
        explained_variance_ratio: ratios,
        mean,
        total_variance,
    })
}
