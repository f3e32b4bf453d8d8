//! Natural observation transforms and the perceptual-similarity metric.
//!
//! Every transform is a pure map `Obs → Obs` whose output is clipped to
//! `[0,1]`.

use serde::{Deserialize, Serialize};

use crate::numerics::{dct2_block, idct2_block, Matrix};
use crate::obs::Obs;
use crate::qnet::{ModelError, QNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformConfig {
    BrightnessContrast {
        gain: f64,
        bias: f64,
    },
    Blur {
        sigma: f64,
        radius: usize,
    },
    Rotate {
        degrees: f64,
    },
    /// Pixel displacements `[dx, dy]` of the top-left, top-right,
    /// bottom-right and bottom-left corners.
    Perspective {
        corners: [[f64; 2]; 4],
    },
    CompressionArtifacts {
        keep_radius: usize,
    },
}

impl TransformConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::BrightnessContrast { .. } => "brightness_contrast",
            Self::Blur { .. } => "blur",
            Self::Rotate { .. } => "rotate",
            Self::Perspective { .. } => "perspective",
            Self::CompressionArtifacts { .. } => "compression",
        }
    }

    /// Starting magnitudes before imperceptibility calibration.
    pub fn defaults() -> Vec<TransformConfig> {
        vec![
            Self::BrightnessContrast {
                gain: 1.1,
                bias: 0.05,
            },
            Self::Blur {
                sigma: 0.6,
                radius: 2,
            },
            Self::Rotate { degrees: 3.0 },
            Self::Perspective {
                corners: [[0.5, 0.3], [-0.4, 0.2], [-0.3, -0.4], [0.4, -0.2]],
            },
            Self::CompressionArtifacts { keep_radius: 8 },
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Self::BrightnessContrast { gain, bias }
                if !(gain > 0.0 && gain.is_finite() && bias.is_finite()) =>
            {
                Err("gain must be positive and bias finite".into())
            }
            Self::Blur { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err("sigma must be positive".into())
            }
            Self::Rotate { degrees } if !degrees.is_finite() => {
                Err("rotation angle must be finite".into())
            }
            Self::Perspective { corners } if corners.iter().flatten().any(|v| !v.is_finite()) => {
                Err("corner displacements must be finite".into())
            }
            Self::CompressionArtifacts { keep_radius: 0 } => Err("keep_radius must be ≥ 1".into()),
            _ => Ok(()),
        }
    }

    /// Moves the parameters toward the identity transform: deviations from
    /// identity are multiplied by `factor ∈ (0,1]`. For compression the
    /// number of removed diagonals shrinks instead.
    pub fn scaled(&self, factor: f64) -> TransformConfig {
        match *self {
            Self::BrightnessContrast { gain, bias } => Self::BrightnessContrast {
                gain: 1.0 + factor * (gain - 1.0),
                bias: factor * bias,
            },
            Self::Blur { sigma, radius } => Self::Blur {
                sigma: factor * sigma,
                radius,
            },
            Self::Rotate { degrees } => Self::Rotate {
                degrees: factor * degrees,
            },
            Self::Perspective { corners } => Self::Perspective {
                corners: corners.map(|[x, y]| [factor * x, factor * y]),
            },
            Self::CompressionArtifacts { keep_radius } => {
                let removed = 15usize.saturating_sub(keep_radius) as f64;
                let kept = 15 - (factor * removed).floor() as usize;
                Self::CompressionArtifacts {
                    keep_radius: kept.max(1),
                }
            }
        }
    }

    pub fn apply(&self, s: &Obs) -> Obs {
        match *self {
            Self::BrightnessContrast { gain, bias } => brightness_contrast(s, gain, bias),
            Self::Blur { sigma, radius } => gaussian_blur(s, sigma, radius),
            Self::Rotate { degrees } => rotate(s, degrees),
            Self::Perspective { corners } => perspective(s, &corners),
            Self::CompressionArtifacts { keep_radius } => compression_artifacts(s, keep_radius),
        }
    }
}

pub fn brightness_contrast(s: &Obs, gain: f64, bias: f64) -> Obs {
    let px = s.pixels().iter().map(|p| gain * p + bias).collect();
    Obs::clamped(s.height(), s.width(), px)
}

/// Normalized truncated Gaussian kernel of length `2·radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / z).collect()
}

/// Separable Gaussian blur with replicate padding.
pub fn gaussian_blur(s: &Obs, sigma: f64, radius: usize) -> Obs {
    let (h, w) = (s.height(), s.width());
    let k = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * s.get(row, clamp(col as isize + j as isize - r, w));
            }
            tmp[row * w + col] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * tmp[clamp(row as isize + j as isize - r, h) * w + col];
            }
            out[row * w + col] = acc;
        }
    }
    Obs::clamped(h, w, out)
}

/// Bilinear sample at fractional `(y, x)`; samples outside the grid read 0.
fn bilinear(s: &Obs, y: f64, x: f64) -> f64 {
    let (h, w) = (s.height() as isize, s.width() as isize);
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let read = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h || c >= w {
            0.0
        } else {
            s.get(r as usize, c as usize)
        }
    };
    let (r, c) = (y0 as isize, x0 as isize);
    let mut acc = 0.0;
    for (dr, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dc, wx) in [(0, 1.0 - fx), (1, fx)] {
            let wt = wy * wx;
            if wt != 0.0 {
                acc += wt * read(r + dr, c + dc);
            }
        }
    }
    acc
}

/// `(sin θ, cos θ)` with exact values at multiples of 90°.
fn sin_cos_degrees(deg: f64) -> (f64, f64) {
    let d = deg.rem_euclid(360.0);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

/// Counter-clockwise rotation (as displayed, rows growing downward) about the
/// grid centre, by inverse mapping with bilinear interpolation.
pub fn rotate(s: &Obs, degrees: f64) -> Obs {
    let (h, w) = (s.height(), s.width());
    let (sin, cos) = sin_cos_degrees(degrees);
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64 - cx, r as f64 - cy);
            let xs = cos * x - sin * y;
            let ys = sin * x + cos * y;
            out.push(bilinear(s, cy + ys, cx + xs));
        }
    }
    Obs::clamped(h, w, out)
}

/// Solves `A x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. `None` when singular.
#[allow(clippy::needless_range_loop)]
fn solve_dense<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for k in row + 1..N {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Homography `H` (with `h₃₃ = 1`) mapping each `from[i]` to `to[i]`.
pub fn homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Option<[f64; 9]> {
    let mut a = [[0.0; 8]; 8];
    let mut b = [0.0; 8];
    for i in 0..4 {
        let [x, y] = from[i];
        let [u, v] = to[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        b[2 * i] = u;
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * i + 1] = v;
    }
    let h = solve_dense(a, b)?;
    Some([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

fn apply_homography(h: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let den = h[6] * x + h[7] * y + h[8];
    (
        (h[0] * x + h[1] * y + h[2]) / den,
        (h[3] * x + h[4] * y + h[5]) / den,
    )
}

/// Warps `s` so that each image corner moves by its displacement. Degenerate
/// corner layouts return the input unchanged.
pub fn perspective(s: &Obs, corners: &[[f64; 2]; 4]) -> Obs {
    let (h, w) = (s.height(), s.width());
    let (xm, ym) = (w as f64 - 1.0, h as f64 - 1.0);
    let src = [[0.0, 0.0], [xm, 0.0], [xm, ym], [0.0, ym]];
    let mut dst = src;
    for (d, off) in dst.iter_mut().zip(corners) {
        d[0] += off[0];
        d[1] += off[1];
    }
    // inverse map: output pixel → source location
    let Some(hm) = homography(&dst, &src) else {
        return s.clone();
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (xs, ys) = apply_homography(&hm, c as f64, r as f64);
            out.push(if xs.is_finite() && ys.is_finite() {
                bilinear(s, ys, xs)
            } else {
                0.0
            });
        }
    }
    Obs::clamped(h, w, out)
}

/// Blockwise low-pass: zeroes DCT coefficients with `u + v ≥ keep_radius`
/// in each 8×8 block. Result is not clipped.
pub(crate) fn compress_unclipped(s: &Obs, keep_radius: usize) -> Matrix {
    let mut coeffs = dct2_block(&s.to_matrix(), 8);
    let rows = coeffs.coefficients.rows();
    let cols = coeffs.coefficients.cols();
    for r in 0..rows {
        for c in 0..cols {
            if r % 8 + c % 8 >= keep_radius {
                coeffs.coefficients[(r, c)] = 0.0;
            }
        }
    }
    let padded = idct2_block(&coeffs);
    let mut out = Matrix::zeros(s.height(), s.width());
    for r in 0..s.height() {
        for c in 0..s.width() {
            out[(r, c)] = padded[(r, c)];
        }
    }
    out
}

pub fn compression_artifacts(s: &Obs, keep_radius: usize) -> Obs {
    let m = compress_unclipped(s, keep_radius);
    Obs::clamped(s.height(), s.width(), m.into_vec())
}

/// Unit-normalized hidden activations per layer; zero layers stay zero.
fn unit_hidden(net: &QNetwork, s: &Obs) -> Result<Vec<Vec<f64>>, ModelError> {
    let (_, trace) = net.forward(s)?;
    Ok(trace
        .hidden()
        .iter()
        .map(|h| {
            let mut v = h.clone();
            crate::numerics::normalize(&mut v);
            v
        })
        .collect())
}

/// `Σ_l ‖ŷ_l(s) − ŷ_l(s′)‖₂² / |l|` over hidden layers, `ŷ_l` the
/// unit-normalized rectified activations of layer `l`.
pub fn perceptual_similarity(net: &QNetwork, s: &Obs, s2: &Obs) -> Result<f64, ModelError> {
    let a = unit_hidden(net, s)?;
    let b = unit_hidden(net, s2)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| {
            let d: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            d / x.len() as f64
        })
        .sum())
}

/// Median of a non-empty slice (mean of the middle pair for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Halves the transform magnitude until the median perceptual distance over
/// `states` is at most `target` (at most 30 halvings). Returns the calibrated
/// config and the scale factor applied.
pub fn calibrate(
    net: &QNetwork,
    cfg: &TransformConfig,
    states: &[Obs],
    target: f64,
) -> Result<(TransformConfig, f64), ModelError> {
    let mut factor = 1.0;
    for _ in 0..=30 {
        let scaled = cfg.scaled(factor);
        let dists = states
            .iter()
            .map(|s| perceptual_similarity(net, s, &scaled.apply(s)))
            .collect::<Result<Vec<_>, _>>()?;
        if dists.is_empty() || median(&dists) <= target {
            return Ok((scaled, factor));
        }
        factor *= 0.5;
    }
    Ok((cfg.scaled(factor), factor))
}
