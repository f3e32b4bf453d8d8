use serde::{Deserialize, Serialize};

use super::sensitivity::{
    correlation_quotient_with, principal_direction, state_gradients, GradientMode,
};
use super::{RanldError, SensitivityMatrix, StateSet, StateSetProvenance, Temperature};
use crate::numerics::{dft2, norm2, normalize, Matrix};
use crate::qnet::QNetwork;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub temperature: Temperature,
    #[serde(default)]
    pub gradient_mode: GradientMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub tag: String,
    /// Λ of the full probe set against the baseline.
    pub lambda: f64,
    /// Mean and sample standard deviation of Λ over single-episode
    /// sub-samples of the probe set.
    pub mean: f64,
    pub spread: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub temperature: f64,
    pub spread_kind: String,
    pub rows: Vec<CorrelationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTrace {
    /// `‖gᵢ‖²` in visit order.
    pub squared_norms: Vec<f64>,
    /// `(x − mean)/sd`; all zeros when the variance vanishes.
    pub standardized: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub max: f64,
    pub zero_variance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    /// `log(1 + |F|)`, row-major, zero frequency at `(H/2, W/2)`.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalSummary {
    pub height: usize,
    pub width: usize,
    pub eigenvalue: f64,
    pub degenerate: bool,
    pub power_converged: bool,
    pub jacobi_cosine: Option<f64>,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub config_hash: u64,
    pub model_id: String,
    pub temperature: f64,
    pub gradient_mode: GradientMode,
    pub base: StateSetProvenance,
    pub states: usize,
    pub principal: PrincipalSummary,
    pub correlation: CorrelationReport,
    pub trace: GradientTrace,
    pub spectrum: Spectrum,
    pub config: serde_json::Value,
}

fn prepare(grads: Vec<Vec<f64>>, mode: GradientMode) -> Result<SensitivityMatrix, RanldError> {
    let grads = match mode {
        GradientMode::Raw => grads,
        GradientMode::Normalized => grads
            .into_iter()
            .map(|mut g| {
                if norm2(&g) >= 1e-12 {
                    normalize(&mut g);
                } else {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                g
            })
            .collect(),
    };
    let mut l = SensitivityMatrix::from_gradients(grads)?;
    l.mode = mode;
    Ok(l)
}

fn check_shape(a: &StateSet, b: &StateSet) -> Result<(), RanldError> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(RanldError::Shape {
            expected: (a.height(), a.width()),
            found: (b.height(), b.width()),
        });
    }
    Ok(())
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn correlation_row(
    tag: &str,
    probe: &StateSet,
    probe_grads: Vec<Vec<f64>>,
    base: &SensitivityMatrix,
    base_dir: &super::PrincipalDirection,
    mode: GradientMode,
) -> Result<CorrelationRow, RanldError> {
    let mut per_episode = Vec::new();
    for range in probe.episode_ranges() {
        let sub = prepare(probe_grads[range].to_vec(), mode)?;
        let dir = principal_direction(&sub)?;
        per_episode.push(correlation_quotient_with(&dir, base, base_dir)?);
    }
    let full = prepare(probe_grads, mode)?;
    let lambda = correlation_quotient_with(&principal_direction(&full)?, base, base_dir)?;
    let (mean, spread) = mean_sd(&per_episode);
    Ok(CorrelationRow {
        tag: tag.to_string(),
        lambda,
        mean,
        spread,
        episodes: per_episode.len(),
    })
}

/// Λ(Ŝ,S) followed by Λ(S^Ψ,S) for each probe, in the given order.
pub fn correlation_report(
    net: &QNetwork,
    base: &StateSet,
    hat: &StateSet,
    probes: &[&StateSet],
    cfg: AnalysisConfig,
) -> Result<CorrelationReport, RanldError> {
    let t = cfg.temperature;
    let base_l = prepare(state_gradients(net, base, t)?, cfg.gradient_mode)?;
    let base_dir = principal_direction(&base_l)?;
    let mut rows = Vec::with_capacity(probes.len() + 1);
    for (i, probe) in std::iter::once(hat)
        .chain(probes.iter().copied())
        .enumerate()
    {
        check_shape(base, probe)?;
        let tag = if i == 0 {
            "untransformed"
        } else {
            probe.provenance.tag.as_str()
        };
        let grads = state_gradients(net, probe, t)?;
        rows.push(correlation_row(
            tag,
            probe,
            grads,
            &base_l,
            &base_dir,
            cfg.gradient_mode,
        )?);
    }
    Ok(CorrelationReport {
        temperature: t.get(),
        spread_kind: "sample standard deviation over single-episode sub-samples".into(),
        rows,
    })
}

fn trace_from_norms(squared_norms: Vec<f64>) -> GradientTrace {
    let n = squared_norms.len() as f64;
    let mean = squared_norms.iter().sum::<f64>() / n;
    let variance = squared_norms
        .iter()
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / n;
    let max = squared_norms.iter().cloned().fold(0.0, f64::max);
    let zero_variance = !(variance > 0.0);
    let standardized = if zero_variance {
        vec![0.0; squared_norms.len()]
    } else {
        let sd = variance.sqrt();
        squared_norms.iter().map(|x| (x - mean) / sd).collect()
    };
    GradientTrace {
        squared_norms,
        standardized,
        mean,
        variance,
        max,
        zero_variance,
    }
}

/// Squared gradient norms along the visit order with summary statistics
/// (population variance).
pub fn gradient_norm_trace(
    net: &QNetwork,
    set: &StateSet,
    t: Temperature,
) -> Result<GradientTrace, RanldError> {
    let grads = state_gradients(net, set, t)?;
    Ok(trace_from_norms(
        grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum())
            .collect(),
    ))
}

/// `log(1 + |DFT(G)|)` of the direction reshaped to `H×W`, quadrant-shifted
/// so frequency `(0,0)` lands at `(H/2, W/2)`.
pub fn fourier_spectrum(g: &[f64], height: usize, width: usize) -> Result<Spectrum, RanldError> {
    if height * width != g.len() || g.is_empty() {
        return Err(RanldError::Shape {
            expected: (height, width),
            found: (1, g.len()),
        });
    }
    let f = dft2(&Matrix::from_vec(height, width, g.to_vec()));
    let mags = f.magnitudes();
    let mut values = vec![0.0; g.len()];
    for r in 0..height {
        for c in 0..width {
            let rs = (r + height / 2) % height;
            let cs = (c + width / 2) % width;
            values[rs * width + cs] = mags[r * width + c].ln_1p();
        }
    }
    Ok(Spectrum {
        height,
        width,
        values,
    })
}

/// Full diagnostic for one model: principal direction of the baseline set,
/// correlation table, gradient-norm trace and spectrum.
pub fn analyze(
    net: &QNetwork,
    base: &StateSet,
    hat: &StateSet,
    probes: &[&StateSet],
    cfg: AnalysisConfig,
    config: serde_json::Value,
    config_hash: u64,
) -> Result<AnalysisReport, RanldError> {
    if (base.height(), base.width()) != (net.height(), net.width()) {
        return Err(RanldError::Shape {
            expected: (net.height(), net.width()),
            found: (base.height(), base.width()),
        });
    }
    let t = cfg.temperature;
    let grads = state_gradients(net, base, t)?;
    let trace = trace_from_norms(
        grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum())
            .collect(),
    );
    let l = prepare(grads, cfg.gradient_mode)?;
    let dir = principal_direction(&l)?;
    let spectrum = fourier_spectrum(&dir.vector, base.height(), base.width())?;
    let correlation = correlation_report(net, base, hat, probes, cfg)?;
    Ok(AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash,
        model_id: super::model_id(net),
        temperature: t.get(),
        gradient_mode: cfg.gradient_mode,
        base: base.provenance.clone(),
        states: base.len(),
        principal: PrincipalSummary {
            height: base.height(),
            width: base.width(),
            eigenvalue: dir.eigenvalue,
            degenerate: dir.degenerate,
            power_converged: dir.power_converged,
            jacobi_cosine: dir.jacobi_cosine,
            vector: dir.vector,
        },
        correlation,
        trace,
        spectrum,
        config,
    })
}
