//! Datasets, synthetic signals and seeded randomness.

mod idx;
mod noise;

pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_dir, load_mnist_idx, parse_idx_images,
    parse_idx_labels, DataError, Dataset, Split, IMAGE_MAGIC, LABEL_MAGIC,
};
pub use noise::{
    add_gaussian_noise, constant_signal_stream, dropout_mask, one_hot, standard_normal,
    NoiseSpec, SeedTree,
};
