//! Synthetic fine-grained data, image files and augmentation.

pub mod augment;
pub mod image_io;
pub mod synthetic;

pub use augment::{augment, gaussian_blur, hflip, pad_crop};
pub use image_io::{load_image, read_manifest, save_image, write_manifest, ManifestEntry};
pub use synthetic::{
    generate_dataset, mean_abs_horizontal_diff, render_sample, Dataset, EllipseMask, SyntheticSpec,
    TextureLayout, TextureParams,
};
