//! Binary PGM (P5, maxval 255) export.

/// Encodes `values` (row-major `height x width`) scaled by `1 / scale`
/// and clamped to `[0, 1]`. A non-positive scale yields a black image.
pub fn encode(values: &[f64], width: usize, height: usize, scale: f64) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pgm size mismatch");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if scale > 0.0 {
            ((v / scale).clamp(0.0, 1.0) * 255.0).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Largest value over both maps, the shared normalizer of a compared pair.
pub fn common_max(a: &[f64], b: &[f64]) -> f64 {
    a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max)
}
