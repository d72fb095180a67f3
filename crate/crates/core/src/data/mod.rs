//! Image I/O, bicubic degradation, dataset pairing and patch sampling.

mod bicubic;
mod dataset;
mod image_io;
mod patch;
mod synthetic;

pub use bicubic::{bicubic_resize, bicubic_weights, cubic, degrade, ResampleWeights};
pub use dataset::{
    crop_to_multiple, load_pair, load_pair_rgb8, lr_cache_path, scan_dataset, DatasetSpec, ImageEntry, ImagePair,
    PairRgb8, PairStore, ScanReport, KERNEL_VERSION,
};
pub use image_io::{
    is_image_path, load_image, quantize_u8, read_rgb8, save_image, to_u8, write_gray8, write_rgb8, Rgb8, IMAGE_EXTENSIONS,
};
pub use patch::{augment, augment_with, draw_transform, mirror_index, pad_pair, sample_patch, PatchImage};
pub use synthetic::{synthetic_image, synthetic_pairs, write_synthetic_dataset};
