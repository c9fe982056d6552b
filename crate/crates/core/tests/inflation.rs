use inflate_transfer::inflation::{
    boring_video, consistency_check, inflate_kernel, inflate_params, inflate_params_with, InflationPlan,
    KernelScaling,
};
use inflate_transfer::netdef::{
    build_inflated, build_mini_inception_2d, init_params, ChannelProfile, GraphSpec, ParamSet, TemporalSchedule,
    TemporalStep,
};
use inflate_transfer::{Padding, Scalar, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn specs(schedule: &TemporalSchedule, depth: usize) -> (GraphSpec, GraphSpec) {
    let spec2d = build_mini_inception_2d(6, 32, &ChannelProfile::default()).unwrap();
    let spec3d = build_inflated(&spec2d, schedule, depth).unwrap();
    (spec2d, spec3d)
}

fn images<T: Scalar>(n: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(vec![n, 3, 32, 32], -1.0, 1.0, &mut rng)
}

#[test]
fn temporal_sum_recovers_random_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k: Tensor<f32> = Tensor::randn(vec![4, 3, 3, 3], 1.0, &mut rng);
    let k3 = inflate_kernel(&k, 5).unwrap();
    for f in 0..4 {
        for c in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let sum: f32 = (0..5).map(|t| k3.at(&[f, c, t, i, j])).sum();
                    assert!((sum - k.at(&[f, c, i, j])).abs() <= 1e-6);
                }
            }
        }
    }
}

#[test]
fn inflated_param_count_follows_plan() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = init_params::<f32>(&spec2d, 1);
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    let mut expected = 0;
    for (key, t) in p2.iter() {
        let layer = key.split('/').next().unwrap();
        expected += if key.ends_with("/kernel") { plan.entries[layer].kt * t.len() } else { t.len() };
    }
    assert_eq!(p3.scalar_count(), expected);
    assert_eq!(plan.inflated_param_count(&spec2d), expected);
    assert_eq!(spec3d.param_count(), expected);
}

#[test]
fn biases_and_head_copied_bitwise() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let mut p2 = init_params::<f32>(&spec2d, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, t) in p2.iter_mut() {
        if k.ends_with("/bias") {
            *t = Tensor::randn(t.shape().to_vec(), 0.3, &mut rng);
        }
    }
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    for (k, t) in p2.iter() {
        if !k.ends_with("/kernel") {
            assert!(t.bit_eq(p3.get(k).unwrap()), "{k}");
        }
    }
}

#[test]
fn unit_schedule_keeps_every_value() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::identity(), 4);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = init_params::<f32>(&spec2d, 1);
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    for (k, t) in p2.iter() {
        assert_eq!(t.data(), p3.get(k).unwrap().data(), "{k}");
    }
}

#[test]
fn plan_mismatch_names_layer() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let mut plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    plan.entries.get_mut("a_b2").unwrap().kt = 2;
    let err = inflate_params(&init_params::<f32>(&spec2d, 1), &spec2d, &spec3d, &plan).unwrap_err();
    assert!(err.to_string().contains("a_b2"), "{err}");

    let mut plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    plan.entries.remove("b_b3");
    let err = plan.validate(&spec2d, &spec3d).unwrap_err();
    assert!(err.to_string().contains("b_b3"), "{err}");
}

#[test]
fn boring_video_slices_and_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img: Tensor<f64> = Tensor::uniform(vec![3, 5, 4], -1.0, 1.0, &mut rng);
    let v = boring_video(&img, 6).unwrap();
    for c in 0..3 {
        for h in 0..5 {
            for w in 0..4 {
                assert_eq!(v.at(&[c, 0, h, w]).to_bits(), v.at(&[c, 5, h, w]).to_bits());
                let mean: f64 = (0..6).map(|t| v.at(&[c, t, h, w])).sum::<f64>() / 6.0;
                assert!((mean - img.at(&[c, h, w])).abs() < 1e-15);
            }
        }
    }
}

fn zero(params: &ParamSet<f32>) -> ParamSet<f32> {
    let mut out = params.clone();
    for (_, t) in out.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    out
}

#[test]
fn zero_parameters_give_zero_deviation() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = zero(&init_params(&spec2d, 1));
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    let report = consistency_check(&spec2d, &p2, &spec3d, &p3, &images(3, 1), 0.0).unwrap();
    assert_eq!(report.max_deviation, 0.0);
    assert!(report.passed);
}

#[test]
fn random_net_is_preserved_in_single_and_double() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = init_params::<f64>(&spec2d, 21);
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    let r64 = consistency_check(&spec2d, &p2, &spec3d, &p3, &images(10, 22), 1e-10).unwrap();
    assert!(r64.passed, "{r64:?}");

    let p2: ParamSet<f32> = p2.cast();
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    let r32 = consistency_check(&spec2d, &p2, &spec3d, &p3, &images(10, 22), 1e-5).unwrap();
    assert!(r32.passed, "{r32:?}");
}

#[test]
fn unscaled_replication_is_caught() {
    let (spec2d, spec3d) = specs(&TemporalSchedule::desk_default(), 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = init_params::<f32>(&spec2d, 21);
    let p3 = inflate_params_with(&p2, &spec2d, &spec3d, &plan, KernelScaling::Replicate).unwrap();
    let report = consistency_check(&spec2d, &p2, &spec3d, &p3, &images(10, 22), 1e-5).unwrap();
    assert!(report.max_deviation > 0.1, "{report:?}");
    assert!(!report.passed);
}

#[test]
fn temporal_same_padding_rejected() {
    let mut schedule = TemporalSchedule::desk_default();
    schedule.steps.push(TemporalStep { layer: "b_b2".into(), kt: 3, st: 1, padding: Padding::Same });
    let (spec2d, spec3d) = specs(&schedule, 8);
    let plan = InflationPlan::from_specs(&spec2d, &spec3d).unwrap();
    let p2 = init_params::<f32>(&spec2d, 1);
    let p3 = inflate_params(&p2, &spec2d, &spec3d, &plan).unwrap();
    let err = consistency_check(&spec2d, &p2, &spec3d, &p3, &images(1, 1), 1e-5).unwrap_err();
    assert!(err.to_string().contains("b_b2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn slices_are_exact_quotients(seed in any::<u64>(), kt in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k: Tensor<f32> = Tensor::randn(vec![2, 3, 3, 2], 1.0, &mut rng);
        let k3 = inflate_kernel(&k, kt).unwrap();
        for f in 0..2 { for c in 0..3 { for i in 0..3 { for j in 0..2 {
            let want = k.at(&[f, c, i, j]) / kt as f32;
            let mut sum = 0.0f32;
            for t in 0..kt {
                let v = k3.at(&[f, c, t, i, j]);
                prop_assert_eq!(v.to_bits(), want.to_bits());
                sum += v;
            }
            let ulp = f32::EPSILON * k.at(&[f, c, i, j]).abs();
            prop_assert!((sum - k.at(&[f, c, i, j])).abs() <= ulp * kt as f32);
        }}}}
    }
}
