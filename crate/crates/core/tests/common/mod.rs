#![allow(dead_code)]

use std::path::PathBuf;

use lichi::Image;

/// Deterministic test scene: smooth shading, a few hard-edged shapes and a
/// patch of periodic texture, so every kind of patch group shows up.
pub fn synthetic_scene(h: usize, w: usize, variant: u64) -> Image {
    let v = variant as f64;
    let (hf, wf) = (h as f64, w as f64);
    Image::from_fn(h, w, |r, c| {
        let (y, x) = (r as f64 / hf, c as f64 / wf);
        let mut val = 60.0 + 90.0 * x + 40.0 * (3.0 * y + 0.7 * v).sin();
        let (cy, cx) = (0.35 + 0.05 * (v % 3.0), 0.6 - 0.04 * (v % 5.0));
        if (y - cy).powi(2) + (x - cx).powi(2) < 0.04 {
            val = 200.0 - 30.0 * y;
        }
        if (0.62..0.9).contains(&y) && (0.1..0.45).contains(&x) {
            val = 30.0 + 15.0 * ((x * 40.0 + v).sin() + (y * 25.0).cos());
        }
        if (0.05..0.2).contains(&y) && (0.05..0.95).contains(&x) && ((c / 6) % 2 == 0) {
            val += 45.0;
        }
        val.clamp(0.0, 255.0).round()
    })
}

/// Root holding dataset folders: `$LICHI_DATA`, else `data/` at the workspace root.
pub fn data_root() -> PathBuf {
    std::env::var_os("LICHI_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn dataset_dir(name: &str) -> Option<PathBuf> {
    let dir = data_root().join(name);
    dir.is_dir().then_some(dir)
}
