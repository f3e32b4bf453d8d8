use std::path::{Path, PathBuf};

use ranld_core::io::{encode_pgm16, write_atomic};
use ranld_core::ranld::{AnalysisReport, GradientTrace};
use serde::{Deserialize, Serialize};

use crate::config::hash_hex;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RenderKind {
    Gmap,
    Spectrum,
    Trace,
}

impl RenderKind {
    pub const ALL: [RenderKind; 3] = [RenderKind::Gmap, RenderKind::Spectrum, RenderKind::Trace];

    pub fn file_name(self) -> &'static str {
        match self {
            Self::Gmap => "gmap.pgm",
            Self::Spectrum => "spectrum.pgm",
            Self::Trace => "trace.csv",
        }
    }
}

/// Maps signed values to `[0,1]` with 0 at mid-gray: `0.5 + 0.5·v/max|v|`.
pub fn symmetric_levels(values: &[f64]) -> Vec<f64> {
    let m = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| 0.5 + 0.5 * v / m).collect()
}

/// Min-max scaling to `[0,1]`; constant input maps to 0.
pub fn minmax_levels(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn trace_csv(trace: &GradientTrace, config_hash: u64) -> String {
    let mut out = format!(
        "# config_hash={}\nindex,squared_norm,standardized\n",
        hash_hex(config_hash)
    );
    for (i, (x, z)) in trace
        .squared_norms
        .iter()
        .zip(&trace.standardized)
        .enumerate()
    {
        out.push_str(&format!("{i},{x},{z}\n"));
    }
    out
}

/// File contents for one rendering of `report`.
pub fn render_bytes(report: &AnalysisReport, which: RenderKind) -> Result<Vec<u8>, CliError> {
    let comment = format!("config_hash={}", hash_hex(report.config_hash));
    match which {
        RenderKind::Gmap => {
            let p = &report.principal;
            if p.vector.len() != p.height * p.width {
                return Err(CliError::Runtime(
                    "principal direction does not match its shape".into(),
                ));
            }
            Ok(encode_pgm16(
                p.height,
                p.width,
                &symmetric_levels(&p.vector),
                Some(&comment),
            ))
        }
        RenderKind::Spectrum => {
            let s = &report.spectrum;
            if s.values.len() != s.height * s.width {
                return Err(CliError::Runtime(
                    "spectrum does not match its shape".into(),
                ));
            }
            Ok(encode_pgm16(
                s.height,
                s.width,
                &minmax_levels(&s.values),
                Some(&comment),
            ))
        }
        RenderKind::Trace => Ok(trace_csv(&report.trace, report.config_hash).into_bytes()),
    }
}

pub fn render_to(
    report: &AnalysisReport,
    which: RenderKind,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    let path = out_dir.join(which.file_name());
    write_atomic(&path, &render_bytes(report, which)?)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_direction_is_single_white_pixel() {
        let mut v = vec![0.0; 6];
        v[0] = 1.0;
        let lv = symmetric_levels(&v);
        assert_eq!(lv[0], 1.0);
        assert!(lv[1..].iter().all(|x| *x == 0.5));
    }

    #[test]
    fn minmax_closed_forms() {
        assert_eq!(minmax_levels(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(minmax_levels(&[1.0, 1.0]), vec![0.0, 0.0]);
    }
}
