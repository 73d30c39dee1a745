//! Hounsfield-unit intensity normalization.
//!
//! CT voxel values in the [-1000, 1000] HU window are mapped linearly onto
//! 8-bit intensities [0, 255]; values outside the window are clamped first.

/// Map a Hounsfield value to an 8-bit intensity.
///
/// `intensity = round_half_up((clamp(hu, -1000, 1000) + 1000) * 255 / 2000)`,
/// computed in exact integer arithmetic so the endpoints are -1000 -> 0 and
/// 1000 -> 255 with no floating-point rounding involved.
pub fn normalize_hu(hu: i32) -> u8 {
    let clamped = hu.clamp(-1000, 1000) as i64;
    let num = (clamped + 1000) * 255; // in [0, 510000]
    // round_half_up(num / 2000) without leaving the integers
    ((2 * num + 2000) / 4000) as u8
}
