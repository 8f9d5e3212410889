use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcat_core::eval::{challenge_score, psnr, Psnr, PsnrMode};
use xcat_core::model::{mac_count, make_fixed_upsample_kernel, param_count_for, presets};
use xcat_core::ops::{conv2d, depth_to_space, nearest_upsample_reference, space_to_depth};
use xcat_core::quant::{QuantParams, IMAGE_PARAMS};
use xcat_core::train::{charbonnier_loss, lr_schedule, mse_loss, TrainConfig};
use xcat_core::{Shape, Tensor};

fn image(seed: u64, shape: Shape) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(0.0..1.0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_monotone(p in 20.0f64..40.0, t in 1.0f64..5000.0, dp in 1e-3f64..3.0, dt in 1e-2f64..500.0) {
        let s = challenge_score(p, t).unwrap();
        prop_assert!(s > 0.0);
        prop_assert!(challenge_score(p + dp, t).unwrap() > s);
        prop_assert!(challenge_score(p, t + dt).unwrap() < s);
        // +0.5 dB doubles the score
        prop_assert!((challenge_score(p + 0.5, t).unwrap() / s - 2.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_symmetric_and_infinite_on_identity(seed in any::<u64>(), h in 1usize..8, w in 1usize..8) {
        let a = image(seed, Shape::new(1, h, w, 3));
        let b = image(seed ^ 1, Shape::new(1, h, w, 3));
        prop_assert_eq!(psnr(&a, &a, PsnrMode::Rgb).unwrap(), Psnr::Infinite);
        prop_assert_eq!(psnr(&a, &b, PsnrMode::Rgb).unwrap(), psnr(&b, &a, PsnrMode::Rgb).unwrap());
        if let Psnr::Db(d) = psnr(&a, &b, PsnrMode::Rgb).unwrap() {
            prop_assert!(d > 0.0);
        }
    }

    #[test]
    fn schedule_stays_within_endpoints(epochs in 1usize..80, warmup in 0usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lrs: [f64; 3] = core::array::from_fn(|_| rng.random_range(1e-5..1e-2));
        let cfg = TrainConfig { epochs, warmup_epochs: warmup, lr_init: lrs[0], lr_peak: lrs[1], lr_final: lrs[2], ..TrainConfig::stage_one() };
        let (lo, hi) = (lrs.iter().cloned().fold(f64::MAX, f64::min), lrs.iter().cloned().fold(f64::MIN, f64::max));
        for e in 1..=epochs {
            let v = lr_schedule(&cfg, e).unwrap();
            prop_assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12), "epoch {} lr {}", e, v);
        }
        prop_assert!(lr_schedule(&cfg, 0).is_err());
        prop_assert!(lr_schedule(&cfg, epochs + 1).is_err());
    }

    #[test]
    fn losses_are_non_negative_and_zero_at_target(seed in any::<u64>(), n in 1usize..3, h in 1usize..5) {
        let shape = Shape::new(n, h, h, 3);
        let (a, b) = (image(seed, shape).map(f64::from), image(seed ^ 7, shape).map(f64::from));
        prop_assert!(mse_loss(&a, &b).unwrap().0 >= 0.0);
        prop_assert!(charbonnier_loss(&a, &b, 0.1).unwrap().0 >= 0.0);
        let (l, g) = mse_loss(&a, &a).unwrap();
        prop_assert_eq!(l, 0.0);
        prop_assert!(g.data().iter().all(|&v| v == 0.0));
        prop_assert!(charbonnier_loss(&a, &a, 0.1).unwrap().1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fixed_kernel_is_nearest_upsampling(seed in any::<u64>(), c in 1usize..4, r in 1usize..5, h in 1usize..7, w in 1usize..7) {
        let x = image(seed, Shape::new(1, h, w, c));
        let up = depth_to_space(&conv2d(&x, &make_fixed_upsample_kernel(c, r)).unwrap(), r).unwrap();
        prop_assert_eq!(&up, &nearest_upsample_reference(&x, r).unwrap());
        prop_assert_eq!(space_to_depth(&up, r).unwrap().shape(), Shape::new(1, h, w, c * r * r));
    }

    #[test]
    fn quantization_error_bounded(lo in -10.0f64..0.5, span in 1e-3f64..20.0, t in 0.0f64..1.0) {
        let p = QuantParams::from_range(lo, lo + span);
        let (a, b) = p.representable_range();
        prop_assert!(a <= 0.0 && b >= 0.0);
        let v = a + (b - a) * t;
        prop_assert!((p.dequantize(p.quantize(v)) - v).abs() <= p.scale / 2.0 * (1.0 + 1e-9));
        prop_assert_eq!(p.dequantize(p.quantize(0.0)), 0.0);
    }

    #[test]
    fn image_codes_are_exact(q in any::<u8>()) {
        prop_assert_eq!(IMAGE_PARAMS.quantize(IMAGE_PARAMS.dequantize(q)), q);
    }
}

#[test]
fn cross_and_straight_concat_cost_the_same() {
    for (split, m) in presets::TABLE3_ROWS {
        let (a, b) = (
            presets::table3(split, m, true),
            presets::table3(split, m, false),
        );
        assert_eq!(param_count_for(&a), param_count_for(&b));
        assert_eq!(mac_count(&a, 7, 11), mac_count(&b, 7, 11));
    }
}
