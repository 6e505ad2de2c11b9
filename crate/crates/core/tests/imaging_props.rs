//! Property tests for the masking/composition algebra.

use latentfill_core::imaging::{
    apply_mask, classify_mask, compose, generate_mask, DifficultyLevel, Image, Mask, MaskKind,
};
use proptest::prelude::*;

fn arb_side() -> impl Strategy<Value = usize> {
    prop_oneof![Just(8usize), Just(16), Just(32)]
}

fn arb_image(side: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f32..=1.0, 3 * side * side)
        .prop_map(move |data| Image::new(3, side, data).unwrap())
}

fn arb_mask(side: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(0u8..=1, side * side)
        .prop_map(move |values| Mask::new(side, values).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compose_preserves_visible_pixels_bit_exactly(
        side in arb_side(),
        seed in 0u64..1000,
    ) {
        let original = latentfill_core::imaging::random_image(3, side, seed);
        let generated = latentfill_core::imaging::random_image(3, side, seed ^ 0xabcd);
        let mask = generate_mask(MaskKind::Freeform, 0.5, side.max(8), seed).unwrap();
        let composed = compose(&original, &generated, &mask).unwrap();
        for y in 0..side {
            for x in 0..side {
                let src = if mask.get(y, x) == 1 { &generated } else { &original };
                for c in 0..3 {
                    prop_assert_eq!(composed.get(c, y, x).to_bits(), src.get(c, y, x).to_bits());
                }
            }
        }
    }

    #[test]
    fn apply_mask_is_idempotent_and_zeroes_holes(
        (image, mask) in arb_side().prop_flat_map(|s| (arb_image(s), arb_mask(s))),
    ) {
        let once = apply_mask(&image, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        prop_assert_eq!(&once, &twice);
        for y in 0..mask.side() {
            for x in 0..mask.side() {
                if mask.get(y, x) == 1 {
                    for c in 0..3 {
                        prop_assert_eq!(once.get(c, y, x), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn compose_with_itself_is_identity(
        (image, mask) in arb_side().prop_flat_map(|s| (arb_image(s), arb_mask(s))),
    ) {
        prop_assert_eq!(compose(&image, &image, &mask).unwrap(), image);
    }

    #[test]
    fn classification_matches_coverage_bands(ones in 0usize..=4096) {
        let mut values = vec![0u8; 4096];
        values[..ones].fill(1);
        let mask = Mask::new(64, values).unwrap();
        let c = mask.coverage();
        let expected = if (0.50..=0.60).contains(&c) {
            Some(DifficultyLevel::Hard)
        } else if (0.70..=0.90).contains(&c) {
            Some(DifficultyLevel::Extreme)
        } else if (0.10..=0.90).contains(&c) {
            Some(DifficultyLevel::All)
        } else {
            None
        };
        prop_assert_eq!(classify_mask(&mask), expected);
    }

    #[test]
    fn generated_masks_are_binary_with_exact_coverage(
        seed in 0u64..200,
        target in 0.15f64..0.85,
    ) {
        let mask = generate_mask(MaskKind::Box, target, 32, seed).unwrap();
        prop_assert!(mask.values().iter().all(|v| *v <= 1));
        prop_assert!((mask.coverage() - target).abs() <= 0.02);
    }
}
