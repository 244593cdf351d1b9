//! Sinusoidal frequency encoding of positions and directions.

use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingConfig {
    /// Frequency count for positions.
    pub pos_freqs: usize,
    /// Frequency count for view directions.
    pub dir_freqs: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
        }
    }
}

/// Output width of [`encode`] for `freqs` frequencies.
pub const fn encoded_len(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Writes `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]`.
///
/// Each frequency block holds the three sines followed by the three cosines.
pub fn encode_into(x: [f64; 3], freqs: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_len(freqs));
    out[..3].copy_from_slice(&x);
    let mut scale = core::f64::consts::PI;
    for l in 0..freqs {
        let block = &mut out[3 + 6 * l..9 + 6 * l];
        for i in 0..3 {
            let a = scale * x[i];
            block[i] = math::sin(a);
            block[3 + i] = math::cos(a);
        }
        scale *= 2.0;
    }
}

pub fn encode(x: [f64; 3], freqs: usize) -> alloc::vec::Vec<f64> {
    let mut out = alloc::vec![0.0; encoded_len(freqs)];
    encode_into(x, freqs, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_encodes_to_zero_sines_and_unit_cosines() {
        let e = encode([0.0; 3], 2);
        assert_eq!(e.len(), 15);
        assert_eq!(&e[..3], &[0.0; 3]);
        for l in 0..2 {
            assert_eq!(&e[3 + 6 * l..6 + 6 * l], &[0.0; 3]);
            assert_eq!(&e[6 + 6 * l..9 + 6 * l], &[1.0; 3]);
        }
    }

    #[test]
    fn zero_frequencies_is_identity() {
        assert_eq!(encode([0.3, -1.0, 2.5], 0), [0.3, -1.0, 2.5]);
    }
}
