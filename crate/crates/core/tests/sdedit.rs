use glyphtext_core::exec::Exec;
use glyphtext_core::rng::stream;
use glyphtext_core::sdedit::{
    make_schedule, region_mask, region_sdedit_latent, run_toy_edit, toy_denoise_step, toy_scene,
    Latent, Phase, ToyDenoiser, DEFAULT_LAMBDA,
};
use rand::Rng;

#[test]
fn defaults_keep_background_and_reach_target() {
    let sched = make_schedule(800, 300, 1000).unwrap();
    for seed in 0..4 {
        let e = run_toy_edit(64, &sched, DEFAULT_LAMBDA, seed).unwrap();
        assert!(e.outside < 0.05 && e.inside < 0.05, "seed {seed}: {e:?}");
    }
}

#[test]
fn longer_full_phase_drifts_background_more() {
    let mean_outside = |t1: u32| {
        let sched = make_schedule(800, t1, 1000).unwrap();
        let errs = Exec::Parallel.map_range(6, |s| {
            run_toy_edit(48, &sched, DEFAULT_LAMBDA, s as u64)
                .unwrap()
                .outside
        });
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let devs: Vec<f64> = [100, 200, 400].into_iter().map(mean_outside).collect();
    assert!(devs.windows(2).all(|w| w[0] <= w[1]), "{devs:?}");
}

#[test]
fn longer_edit_gets_closer_to_target_inside() {
    let mean_inside = |t0: u32| {
        let sched = make_schedule(t0, 50, 1000).unwrap();
        (0..6)
            .map(|s| run_toy_edit(48, &sched, 0.02, s).unwrap().inside)
            .sum::<f64>()
            / 6.0
    };
    let devs: Vec<f64> = [100, 200, 400].into_iter().map(mean_inside).collect();
    assert!(devs.windows(2).all(|w| w[0] >= w[1]), "{devs:?}");
}

#[test]
fn contraction_reduces_expected_distance() {
    // 1000 trials per lambda: a single pixel far from its target at a
    // moderate noise level
    let sched = make_schedule(1000, 0, 1000).unwrap();
    for lambda in [0.05, 0.3, 0.7, 0.95] {
        let model = ToyDenoiser {
            target: Latent {
                width: 1,
                height: 1,
                data: vec![0.2, 0.5, 0.9],
            },
            lambda,
        };
        let start = Latent {
            width: 1,
            height: 1,
            data: vec![0.9, 0.0, 0.1],
        };
        let dist = |l: &Latent| {
            l.data
                .iter()
                .zip(&model.target.data)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let mut rng = stream(21, &[(lambda * 100.0) as u64]);
        let mean: f64 = (0..1000)
            .map(|_| {
                dist(&toy_denoise_step(
                    &start,
                    100,
                    &sched,
                    &model,
                    &[true],
                    &mut rng,
                ))
            })
            .sum::<f64>()
            / 1000.0;
        assert!(
            mean < dist(&start),
            "lambda {lambda}: {mean} vs {}",
            dist(&start)
        );
    }
}

#[test]
fn region_phase_touches_only_glyph_pixels() {
    // outside pixels during the region phase depend only on the original,
    // the timestep and the noise stream: two different targets agree there
    let scene = toy_scene(48, 5).unwrap();
    let other = toy_scene(48, 6).unwrap().target;
    let sched = make_schedule(300, 100, 1000).unwrap();
    let mask = region_mask(48, 48, &scene.boxes);
    let trace = |target: &glyphtext_core::RasterImage| {
        let model = ToyDenoiser::new(target, DEFAULT_LAMBDA).unwrap();
        let mut snaps = Vec::new();
        let mut rng = stream(8, &[]);
        region_sdedit_latent(
            &scene.original,
            &scene.boxes,
            target,
            &sched,
            &model,
            &mut rng,
            |s| {
                if s.phase == Phase::Region {
                    snaps.push(s.latent.clone());
                }
            },
        )
        .unwrap();
        snaps
    };
    let (a, b) = (trace(&scene.target), trace(&other));
    assert_eq!(a.len(), 200);
    for (x, y) in a.iter().zip(&b) {
        for (p, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(x.data[3 * p..3 * p + 3], y.data[3 * p..3 * p + 3]);
            }
        }
    }
    assert_ne!(a.last(), b.last());
}

#[test]
fn zero_contraction_keeps_masked_pixels_modulo_noise() {
    let sched = make_schedule(1000, 0, 1000).unwrap();
    let model = ToyDenoiser {
        target: Latent {
            width: 2,
            height: 1,
            data: vec![1.0; 6],
        },
        lambda: 0.0,
    };
    let start = Latent {
        width: 2,
        height: 1,
        data: (0..6).map(|i| i as f64 / 10.0).collect(),
    };
    let mut rng = stream(1, &[]);
    for _ in 0..10 {
        let t = rng.gen_range(1..=1000);
        assert_eq!(
            toy_denoise_step(&start, t, &sched, &model, &[true, false], &mut rng),
            start
        );
    }
}
