use super::Matrix;
use std::f64::consts::TAU;

/// Row-major grid of complex values, stored as `(re, im)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<(f64, f64)>,
}

impl ComplexGrid {
    pub fn get(&self, row: usize, col: usize) -> (f64, f64) {
        self.entries[row * self.width + col]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.entries.iter().map(|(re, im)| re.hypot(*im)).collect()
    }

    pub fn energy(&self) -> f64 {
        self.entries.iter().map(|(re, im)| re * re + im * im).sum()
    }
}

fn twiddles(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| {
            let angle = -TAU * k as f64 / n as f64;
            (angle.cos(), angle.sin())
        })
        .collect()
}

/// Two-dimensional DFT, `X[u,v] = Σ x[r,c]·exp(−2πi(ur/H + vc/W))`, with no
/// normalization. Evaluated separably: rows first, then columns.
pub fn dft2(grid: &Matrix) -> ComplexGrid {
    let (h, w) = (grid.rows(), grid.cols());
    let tw_w = twiddles(w);
    let tw_h = twiddles(h);

    let mut rows = vec![(0.0, 0.0); h * w];
    for r in 0..h {
        let src = grid.row(r);
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for (c, x) in src.iter().enumerate() {
                let (cr, ci) = tw_w[(v * c) % w];
                re += x * cr;
                im += x * ci;
            }
            rows[r * w + v] = (re, im);
        }
    }

    let mut entries = vec![(0.0, 0.0); h * w];
    for v in 0..w {
        for u in 0..h {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                let (xr, xi) = rows[r * w + v];
                let (cr, ci) = tw_h[(u * r) % h];
                re += xr * cr - xi * ci;
                im += xr * ci + xi * cr;
            }
            entries[u * w + v] = (re, im);
        }
    }
    ComplexGrid {
        height: h,
        width: w,
        entries,
    }
}
