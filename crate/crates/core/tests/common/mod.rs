#![allow(dead_code)]

use ensembits::corpus::{synth_corpus, Ensemble};
use ensembits::descriptors::{DescriptorConfig, NeighborMode};
use ensembits::training::TrainConfig;

pub fn tiny_corpus() -> Vec<Ensemble> {
    synth_corpus(6, 16, 4, 3).unwrap()
}

pub fn tiny_descriptor() -> DescriptorConfig {
    DescriptorConfig::relative_frame(4, NeighborMode::Dynamical)
}

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        width: 16,
        ff_width: 16,
        decoder_hidden: 16,
        latent_dim: 8,
        n_queries: 2,
        heads: 2,
        n_blocks: 1,
        p_max: 4,
        codebook_sizes: vec![8, 4],
        warmup_steps: 2,
        batch_size: 32,
        kmeans_samples: 256,
        max_epochs: 3,
        seed: 5,
        ..TrainConfig::default()
    }
}
