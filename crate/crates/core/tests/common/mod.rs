#![allow(dead_code)]

use sparsevox::config::TrainConfig;
use sparsevox::regularize::LossWeights;
use sparsevox::scene::{generate_toy_scene, CameraRing, Dataset, ToySceneSpec};

/// A few primitives seen by small cameras; cheap enough for unit-speed tests.
pub fn small_spec(width: usize, train: usize, test: usize) -> ToySceneSpec {
    ToySceneSpec {
        width,
        height: width,
        train_ring: CameraRing { count: train, radius: 4.0, elevation_deg: 25.0, azimuth_offset_deg: 0.0 },
        test_ring: CameraRing { count: test, radius: 4.0, elevation_deg: 35.0, azimuth_offset_deg: 20.0 },
        march_step: 0.01,
        ..ToySceneSpec::random(5, 4)
    }
}

pub fn small_dataset(width: usize, train: usize, test: usize) -> Dataset {
    generate_toy_scene(&small_spec(width, train, test)).unwrap().dataset
}

/// Toy preset shrunk to a 16^3 grid and `iters` iterations.
pub fn small_config(iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::preset("toy").unwrap();
    let s = &mut cfg.stages[0];
    s.iterations = iters;
    s.resolution = [16; 3];
    s.batch_rays = 128;
    s.sampled_rays = 128;
    cfg
}

pub fn without_losses(mut cfg: TrainConfig) -> TrainConfig {
    for s in &mut cfg.stages {
        s.weights = LossWeights::ZERO;
        s.incremental = None;
    }
    cfg
}
