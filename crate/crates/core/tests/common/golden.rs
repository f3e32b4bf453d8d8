//! Frozen transform outputs. Shared between the core integration tests and
//! the acceptance suite.

use std::path::Path;

use ranld_core::io::encode_pgm16;
use ranld_core::transforms::TransformConfig;
use ranld_core::Obs;

/// 12×12 fixture with a gradient background, a bright block and a thin
/// diagonal, so every transform has edges and texture to act on.
pub fn fixture() -> Obs {
    let (h, w) = (12, 12);
    let mut px = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut v =
                0.05 + 0.4 * (r as f64 / (h - 1) as f64) + 0.03 * ((r * 7 + c * 3) % 5) as f64;
            if (3..7).contains(&r) && (6..10).contains(&c) {
                v = 0.95;
            }
            if r == c {
                v = 0.8;
            }
            px[r * w + c] = v;
        }
    }
    Obs::new(h, w, px).unwrap()
}

pub fn cases() -> Vec<(String, TransformConfig)> {
    let mut out: Vec<(String, TransformConfig)> = TransformConfig::defaults()
        .into_iter()
        .map(|t| (format!("{}_default", t.tag()), t))
        .collect();
    out.push((
        "brightness_contrast_saturating".into(),
        TransformConfig::BrightnessContrast {
            gain: 1.6,
            bias: 0.2,
        },
    ));
    out.push((
        "blur_wide".into(),
        TransformConfig::Blur {
            sigma: 1.5,
            radius: 4,
        },
    ));
    out.push((
        "rotate_90".into(),
        TransformConfig::Rotate { degrees: 90.0 },
    ));
    out.push((
        "rotate_30".into(),
        TransformConfig::Rotate { degrees: 30.0 },
    ));
    out.push((
        "perspective_strong".into(),
        TransformConfig::Perspective {
            corners: [[2.0, 1.0], [-1.5, 0.5], [-1.0, -2.0], [1.0, -1.0]],
        },
    ));
    out.push((
        "compression_heavy".into(),
        TransformConfig::CompressionArtifacts { keep_radius: 3 },
    ));
    out
}

pub fn render(cfg: &TransformConfig) -> Vec<u8> {
    let out = cfg.apply(&fixture());
    encode_pgm16(out.height(), out.width(), out.pixels(), None)
}

/// Compares every case against `dir/<name>.pgm`. With `RANLD_BLESS=1` the
/// files are rewritten first. Returns the names that did not match.
pub fn check(dir: &Path) -> Vec<String> {
    let bless = std::env::var("RANLD_BLESS").is_ok_and(|v| v == "1");
    let mut mismatched = Vec::new();
    for (name, cfg) in cases() {
        let path = dir.join(format!("{name}.pgm"));
        let bytes = render(&cfg);
        if bless {
            std::fs::write(&path, &bytes).unwrap();
        }
        match std::fs::read(&path) {
            Ok(stored) if stored == bytes => {}
            _ => mismatched.push(name),
        }
    }
    mismatched
}
