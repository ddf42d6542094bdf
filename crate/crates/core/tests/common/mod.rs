#![allow(dead_code)]

use std::path::Path;

use fedgauntlet::dataset::{pack_idx_images, pack_idx_labels, ImageSet, LabeledDataset, PixelStats};
use fedgauntlet::harness::{DataBundle, ExperimentConfig};
use fedgauntlet::models::{ArchConfig, ModelKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 8;

/// Class `c` lights up its own band of pixels; everything else is noise.
fn blob_pixels(class: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..SIDE * SIDE)
        .map(|p| {
            let on = p % 10 == class || (p / 7) % 10 == class;
            let base: i32 = if on { 200 } else { 30 };
            (base + rng.gen_range(-30..=30)).clamp(0, 255) as u8
        })
        .collect()
}

pub fn images(per_class: usize, seed: u64) -> (Vec<Vec<u8>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imgs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 10 {
        let c = i % 10;
        imgs.push(blob_pixels(c, &mut rng));
        labels.push(c as u8);
    }
    (imgs, labels)
}

fn dataset(imgs: &[Vec<u8>], labels: &[u8], stats: &PixelStats) -> LabeledDataset {
    let features = imgs.iter().flatten().map(|&b| stats.scale(f64::from(b))).collect();
    LabeledDataset::new(
        features,
        SIDE * SIDE,
        labels.iter().map(|&y| usize::from(y)).collect(),
        10,
    )
    .unwrap()
}

/// Small ten-class problem on 8x8 "images".
pub fn bundle() -> DataBundle {
    let stats = PixelStats { mean: 0.4, std: 0.3 };
    let (tr, trl) = images(60, 1);
    let (te, tel) = images(20, 2);
    DataBundle {
        train: dataset(&tr, &trl, &stats),
        test: dataset(&te, &tel, &stats),
        stats,
    }
}

pub fn config(model: ModelKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        model,
        clients: 6,
        rounds: 4,
        train_cap: 600,
        test_cap: 200,
        arch: ArchConfig {
            image_side: SIDE,
            mlp_hidden: vec![16],
            cnn_convs: vec![(2, 3)],
            cnn_dense: vec![8],
            ..ArchConfig::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.tree.boosting_rounds = 1;
    cfg.tree.max_depth = 3;
    cfg.attack.synth_per_class = 5;
    cfg.attack.inversion_steps = 3;
    cfg
}

/// Writes the four canonical IDX files for the synthetic problem.
pub fn write_mnist_like(dir: &Path) {
    for (seed, per_class, img, lab) in [
        (1, 60, "train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        (2, 20, "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let (imgs, labels) = images(per_class, seed);
        let set = ImageSet {
            count: labels.len(),
            rows: SIDE,
            cols: SIDE,
            pixels: imgs.concat(),
        };
        std::fs::write(dir.join(img), pack_idx_images(&set)).unwrap();
        std::fs::write(dir.join(lab), pack_idx_labels(&labels)).unwrap();
    }
}
