use rand::Rng;

use crate::corpus::level::CefrLevel;

/// Three rater opinions: each rater independently reports the true level
/// shifted by one bin with probability `noise` (up or down equally likely),
/// truncated at the ends of the scale.
pub fn simulate_raters(true_level: CefrLevel, noise: f64, rng: &mut impl Rng) -> [CefrLevel; 3] {
    let p = noise.clamp(0.0, 1.0);
    std::array::from_fn(|_| {
        if rng.gen::<f64>() < p {
            let shift = if rng.gen::<bool>() { 1 } else { -1 };
            CefrLevel::clamped(true_level.index() as isize + shift)
        } else {
            true_level
        }
    })
}
