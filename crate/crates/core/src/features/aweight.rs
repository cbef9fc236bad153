/// Unnormalized A-weighting magnitude response `R_A(f)`.
fn r_a(f: f64) -> f64 {
    let f2 = f * f;
    let num = 12194.0f64.powi(2) * f2 * f2;
    let den = (f2 + 20.6f64.powi(2))
        * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
        * (f2 + 12194.0f64.powi(2));
    num / den
}

/// Linear A-weighting gains, normalized to exactly 1 at 1 kHz. DC maps to 0.
pub fn a_weight_gains(freqs: &[f64]) -> Vec<f64> {
    let reference = r_a(1000.0);
    freqs
        .iter()
        .map(|&f| if f <= 0.0 { 0.0 } else { r_a(f) / reference })
        .collect()
}
