use rand::Rng;

use super::corpus::Document;
use crate::error::{Error, Result};
use crate::models::{LmExample, PAD};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomizedWindow {
    pub example: LmExample,
    pub start: usize,
    /// The drawn start ran past the retained text and was pulled back.
    pub clamped: bool,
}

/// Draws a training view of `doc`: a window start uniform in
/// `[0, window_shift_max]` and independent input masking of content positions
/// with probability `mask_prob`. Masked inputs become PAD; targets and the
/// loss mask are unaffected.
pub fn apply_randomization(
    doc: &Document,
    context: usize,
    mask_prob: f64,
    window_shift_max: usize,
    rng: &mut impl Rng,
) -> Result<RandomizedWindow> {
    if !(0.0..=1.0).contains(&mask_prob) {
        return Err(Error::Config(format!("mask_prob must lie in [0, 1], got {mask_prob}")));
    }
    if window_shift_max > context / 2 {
        return Err(Error::Config(format!("window shift {window_shift_max} exceeds C/2")));
    }
    let mut start = if window_shift_max > 0 {
        rng.random_range(0..=window_shift_max)
    } else {
        0
    };
    let len = doc.tokens.len();
    let clamped = start > 0 && start + context > len;
    if clamped {
        start = start.min(len.saturating_sub(context));
    }
    let mut window: Vec<usize> = doc.tokens.iter().skip(start).take(context).copied().collect();
    window.resize(context, PAD);

    let mut example = LmExample::next_token(&window);
    if mask_prob > 0.0 {
        for tok in example.inputs.iter_mut() {
            if *tok != PAD && rng.random_bool(mask_prob) {
                *tok = PAD;
            }
        }
    }
    Ok(RandomizedWindow { example, start, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn doc(len: usize, context: usize) -> Document {
        Document::new(0, (0..len).map(|i| i % 200).collect(), context, "t")
    }

    #[test]
    fn identity_without_randomness() {
        let d = doc(40, 16);
        let w = apply_randomization(&d, 16, 0.0, 0, &mut seeded_rng(0)).unwrap();
        assert_eq!(w.example.inputs, d.window);
        assert_eq!(w.example, d.canonical_example());
    }

    #[test]
    fn full_masking_keeps_targets() {
        let d = doc(10, 16);
        let w = apply_randomization(&d, 16, 1.0, 0, &mut seeded_rng(0)).unwrap();
        assert!(w.example.inputs.iter().all(|&t| t == PAD));
        let clean = d.canonical_example();
        assert_eq!(w.example.targets, clean.targets);
        assert_eq!(w.example.loss_mask, clean.loss_mask);
    }

    #[test]
    fn masked_fraction_concentrates() {
        let d = doc(10_000, 10_000);
        let w = apply_randomization(&d, 10_000, 0.3, 0, &mut seeded_rng(5)).unwrap();
        let frac = w.example.inputs.iter().filter(|&&t| t == PAD).count() as f64 / 1e4;
        assert!((0.27..=0.33).contains(&frac), "{frac}");
    }

    #[test]
    fn shift_stays_in_range_and_clamps() {
        let d = doc(20, 16);
        let mut rng = seeded_rng(3);
        let mut saw_clamp = false;
        for _ in 0..200 {
            let w = apply_randomization(&d, 16, 0.0, 8, &mut rng).unwrap();
            assert!(w.start <= 4);
            assert_eq!(w.example.inputs[0], w.start);
            saw_clamp |= w.clamped;
        }
        assert!(saw_clamp);
    }

    #[test]
    fn rejects_out_of_bounds_parameters() {
        let d = doc(20, 16);
        assert!(apply_randomization(&d, 16, 0.0, 9, &mut seeded_rng(0)).is_err());
        assert!(apply_randomization(&d, 16, -0.1, 0, &mut seeded_rng(0)).is_err());
    }
}
