mod common;

use common::{small_config, small_dataset, without_losses};
use sparsevox::checkpoint::{decode, encode};
use sparsevox::config::{IncrementalConfig, SmoothSupport, TrainConfig};
use sparsevox::metrics::psnr_from_mse;
use sparsevox::render::{render_image, ColorMode, ColorNetConfig};
use sparsevox::scene::Split;
use sparsevox::regularize::{LossWeights, Penalty};
use sparsevox::render::Ray;
use sparsevox::train::{
    init_field, objective_on, render_config, stream_rng, train_pipeline, train_stage, train_stage_observed, StepBatch,
};
use sparsevox::voxel::ExpandingBoxSchedule;
use sparsevox::FieldF64;

fn fresh(ds: &sparsevox::scene::Dataset, cfg: &TrainConfig) -> FieldF64 {
    init_field(&cfg.stages[0], ds, cfg.alpha_init, &mut stream_rng(cfg.seed, 0)).unwrap()
}

#[test]
fn zero_iterations_leave_field_unchanged() {
    let ds = small_dataset(16, 4, 1);
    let cfg = small_config(0);
    let mut f = fresh(&ds, &cfg);
    let before = f.clone();
    let report = train_stage(&mut f, &ds, &cfg, 0).unwrap();
    assert!(report.log.is_empty());
    assert_eq!(f, before);
}

#[test]
fn first_iteration_only_touches_the_initial_box() {
    let ds = small_dataset(16, 4, 1);
    let mut cfg = small_config(1);
    cfg.stages[0].incremental = Some(IncrementalConfig::inward());
    let mut f = fresh(&ds, &cfg);
    // Nonzero start so smoothness gradients reach every voxel.
    for (k, v) in f.density.values_mut().iter_mut().enumerate() {
        *v = (k as f64 * 0.61).sin();
    }
    let before = f.clone();
    train_stage(&mut f, &ds, &cfg, 0).unwrap();

    let inc = cfg.stages[0].incremental.as_ref().unwrap();
    let sched = ExpandingBoxSchedule::new(inc.p_min, inc.p_max, inc.steps, [16; 3]).unwrap();
    let mask = sched.freeze_mask(0);
    let mut moved_inside = 0;
    for (grid, old) in [(&f.density, &before.density), (&f.color, &before.color)] {
        let nv = grid.num_voxels();
        for (k, (a, b)) in grid.values().iter().zip(old.values()).enumerate() {
            if mask[k % nv] {
                moved_inside += (a != b) as usize;
            } else {
                assert_eq!(a.to_bits(), b.to_bits(), "frozen value {k} changed");
            }
        }
    }
    assert!(moved_inside > 0);
}

#[test]
fn seeded_runs_are_bitwise_identical() {
    let ds = small_dataset(16, 4, 1);
    let cfg = small_config(20);
    let a = train_pipeline::<f64>(&ds, &cfg, None).unwrap();
    let b = train_pipeline::<f64>(&ds, &cfg, None).unwrap();
    assert_eq!(encode(&a.field, 20, "toy"), encode(&b.field, 20, "toy"));
    let mut other = cfg.clone();
    other.seed = 1;
    let c = train_pipeline::<f64>(&ds, &other, None).unwrap();
    assert_ne!(encode(&a.field, 20, "toy"), encode(&c.field, 20, "toy"));
}

#[test]
fn logged_total_is_the_sum_of_components() {
    let ds = small_dataset(16, 4, 1);
    let cfg = small_config(15);
    let out = train_pipeline::<f64>(&ds, &cfg, None).unwrap();
    let log = &out.stages[0].log;
    assert_eq!(log.len(), 15);
    for r in log {
        let sum = r.photometric + r.tv_feature + r.tv_density + r.catv + r.ds;
        assert!((r.total - sum).abs() <= 1e-9, "{r:?}");
    }
    // The grid starts constant, so smoothness terms only appear once it moves.
    assert!(log.iter().any(|r| r.ds > 0.0) && log.iter().any(|r| r.tv_density > 0.0));
}

#[test]
fn single_stage_config_runs_one_stage() {
    let ds = small_dataset(16, 4, 1);
    let out = train_pipeline::<f64>(&ds, &small_config(3), None).unwrap();
    assert_eq!(out.stages.len(), 1);
}

#[test]
fn fine_stage_starts_from_upsampled_coarse_density() {
    let ds = small_dataset(16, 4, 1);
    let coarse_only = small_config(10);
    let mut two = coarse_only.clone();
    let mut fine = two.stages[0].clone();
    fine.name = "fine".into();
    fine.iterations = 0;
    fine.resolution = [23; 3];
    fine.color_mode = ColorMode::Feature;
    fine.net = Some(ColorNetConfig { feature_dim: 6, hidden: 16, ..Default::default() });
    two.stages.push(fine);

    let a = train_pipeline::<f64>(&ds, &coarse_only, None).unwrap();
    let b = train_pipeline::<f64>(&ds, &two, None).unwrap();
    assert_eq!(b.stages.len(), 2);
    assert_eq!(b.field.density, a.field.density.upsample([23; 3]).unwrap());
    assert_eq!(b.field.mode(), ColorMode::Feature);
}

#[test]
fn trained_checkpoint_renders_identically() {
    let ds = small_dataset(16, 4, 1);
    let cfg = small_config(20);
    let out = train_pipeline::<f32>(&ds, &cfg, None).unwrap();
    let restored = decode(&encode(&out.field, 20, "toy")).unwrap().field;
    let rc = render_config(&out.field, &ds, &cfg);
    let cam = ds.split(Split::Test).next().unwrap().camera.cast();
    let (c0, d0) = render_image(&out.field, &cam, &rc).unwrap();
    let (c1, d1) = render_image(&restored, &cam, &rc).unwrap();
    let bits = |c: &[[f32; 3]]| c.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&c0), bits(&c1));
    assert_eq!(d0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), d1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn unregularized_training_psnr_rises_every_window() {
    let ds = small_dataset(24, 12, 1);
    let mut cfg = without_losses(small_config(400));
    cfg.stages[0].resolution = [24; 3];
    cfg.stages[0].batch_rays = 256;
    let mut f = fresh(&ds, &cfg);
    let rc = render_config(&f, &ds, &cfg);
    let views: Vec<_> = ds.split(Split::Train).collect();
    let train_psnr = |f: &FieldF64| {
        let mut se = 0.0;
        let mut n = 0usize;
        for v in &views {
            let (img, _) = render_image(f, &v.camera, &rc).unwrap();
            for (p, t) in img.iter().zip(&v.image.pixels) {
                for ch in 0..3 {
                    se += (p[ch] - t[ch] as f64).powi(2);
                    n += 1;
                }
            }
        }
        psnr_from_mse(se / n as f64)
    };
    let mut curve = vec![train_psnr(&f)];
    train_stage_observed(&mut f, &ds, &cfg, 0, &mut |i, field, _| {
        if (i + 1) % 100 == 0 {
            curve.push(train_psnr(field));
        }
    })
    .unwrap();
    assert_eq!(curve.len(), 5);
    assert!(curve.windows(2).all(|w| w[1] > w[0]), "{curve:?}");
}

#[test]
fn active_support_keeps_smoothing_off_unrendered_voxels() {
    let ds = small_dataset(16, 4, 1);
    let cfg = small_config(0);
    let mut f = fresh(&ds, &cfg);
    for (k, v) in f.density.values_mut().iter_mut().enumerate() {
        *v = (k as f64 * 0.37).cos();
    }
    let rc = render_config(&f, &ds, &cfg);
    let rays = [Ray { origin: [0.05, 0.1, -3.0], dir: [0.0, 0.0, 1.0], near: 0.0, far: 6.0 }];
    let batch = StepBatch { rays: &rays, targets: &[[0.2, 0.5, 0.7]], patch_rays: &[], patch_size: 0 };
    let w = LossWeights { tv_density: 1e-3, tv_feature: 1e-3, catv: 1e-3, ds: 0.0 };
    let grads = |w: &LossWeights, s| objective_on(&f, &batch, w, Penalty::Huber { delta: 1.0 }, 1.0, &rc, s).unwrap().1;
    let render_only = grads(&LossWeights::ZERO, SmoothSupport::Dense);
    let (active, dense) = (grads(&w, SmoothSupport::Active), grads(&w, SmoothSupport::Dense));
    let mut outside = 0;
    for (k, r) in render_only.density.iter().enumerate() {
        if *r == 0.0 {
            outside += 1;
            assert_eq!(active.density[k], 0.0);
        } else {
            assert_eq!(active.density[k], dense.density[k]);
        }
    }
    assert!(outside > 0 && dense.density.iter().filter(|g| **g != 0.0).count() > render_only.density.len() - outside);
}
