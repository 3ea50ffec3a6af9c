use cslr_core::pose::{
    interpolate_missing, normalize_torso, preprocess, KeypointSequence, Landmark, Point, DEFAULT_TORSO, FEATURE_DIM,
    NUM_LANDMARKS,
};
use cslr_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random pose with gaps. Every landmark keeps at least one valid frame so
/// interpolation is defined.
fn random_sequence(seed: u64, frames: usize, missing: f64) -> KeypointSequence {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<Vec<Landmark>> = (0..frames)
        .map(|_| {
            (0..NUM_LANDMARKS)
                .map(|_| {
                    let p = Point {
                        x: r.random_range(0.0..640.0),
                        y: r.random_range(0.0..480.0),
                    };
                    (!r.random_bool(missing)).then_some(p)
                })
                .collect()
        })
        .collect();
    for k in 0..NUM_LANDMARKS {
        if data.iter().all(|f| f[k].is_none()) {
            let t = r.random_range(0..frames);
            data[t][k] = Some(Point {
                x: r.random_range(0.0..640.0),
                y: r.random_range(0.0..480.0),
            });
        }
    }
    KeypointSequence::new("clip", "signer", data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preprocessing_ignores_translation_and_uniform_scale(
        seed in any::<u64>(),
        frames in 1usize..12,
        missing in 0.0..0.3,
        dx in -1e4..1e4,
        dy in -1e4..1e4,
        scale in 1e-2..1e2,
    ) {
        let seq = random_sequence(seed, frames, missing);
        let moved = seq.map_points(|p| Point { x: scale * p.x + dx, y: scale * p.y + dy });
        let a = preprocess(&seq, &DEFAULT_TORSO).unwrap();
        let b = preprocess(&moved, &DEFAULT_TORSO).unwrap();
        prop_assert!(max_abs_diff(a.data.data(), b.data.data()) <= 1e-9);
    }

    #[test]
    fn preprocessing_is_deterministic_and_shaped(seed in any::<u64>(), frames in 1usize..12, missing in 0.0..0.3) {
        let seq = random_sequence(seed, frames, missing);
        let a = preprocess(&seq, &DEFAULT_TORSO).unwrap();
        let b = preprocess(&seq, &DEFAULT_TORSO).unwrap();
        prop_assert_eq!(a.data.shape(), &[frames, FEATURE_DIM][..]);
        prop_assert_eq!(a.data.data(), b.data.data());
        prop_assert!(a.data.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn interpolation_is_idempotent_and_keeps_valid_points(seed in any::<u64>(), frames in 1usize..12, missing in 0.0..0.5) {
        let seq = random_sequence(seed, frames, missing);
        let once = interpolate_missing(&seq).unwrap();
        prop_assert!(once.is_complete());
        prop_assert_eq!(&interpolate_missing(&once).unwrap(), &once);
        for (orig, filled) in seq.frames().iter().zip(once.frames()) {
            for (o, f) in orig.iter().zip(filled) {
                if o.is_some() {
                    prop_assert_eq!(o, f);
                }
            }
        }
    }

    #[test]
    fn interpolated_values_stay_within_the_track_range(seed in any::<u64>(), frames in 2usize..12) {
        let seq = random_sequence(seed, frames, 0.4);
        let once = interpolate_missing(&seq).unwrap();
        for k in 0..NUM_LANDMARKS {
            let xs: Vec<f64> = seq.frames().iter().filter_map(|f| f[k].map(|p| p.x)).collect();
            let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for f in once.frames() {
                let x = f[k].unwrap().x;
                prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn normalized_torso_box_is_centered_with_unit_extent(seed in any::<u64>(), frames in 1usize..8) {
        let seq = interpolate_missing(&random_sequence(seed, frames, 0.0)).unwrap();
        let norm = normalize_torso(&seq, &DEFAULT_TORSO).unwrap();
        for f in norm.frames() {
            let pts: Vec<Point> = DEFAULT_TORSO.iter().map(|&i| f[i].unwrap()).collect();
            let (lx, hx) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
            let (ly, hy) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
            prop_assert!((lx + hx).abs() < 1e-12 && (ly + hy).abs() < 1e-12);
            prop_assert!(((hx - lx).max(hy - ly) - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn landmark_missing_everywhere_is_an_imputation_error() {
    let mut frames = random_sequence(3, 4, 0.0).frames().to_vec();
    for f in &mut frames {
        f[40] = None;
    }
    let seq = KeypointSequence::new("clip", "signer", frames).unwrap();
    assert!(matches!(preprocess(&seq, &DEFAULT_TORSO), Err(Error::Imputation { landmark: 40 })));
}

#[test]
fn collapsed_torso_is_a_degenerate_pose() {
    let seq = random_sequence(4, 3, 0.0).map_points(|_| Point { x: 1.0, y: 2.0 });
    assert!(matches!(preprocess(&seq, &DEFAULT_TORSO), Err(Error::DegeneratePose { frame: 0 })));
}
