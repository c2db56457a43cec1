//! Scene cubes, spectral reduction, patch sampling and the dataset file.

pub mod augment;
pub mod cube;
pub mod dataset_io;
pub mod patches;
pub mod pca;
pub mod synthetic;

pub use augment::{augment, augment_with, Flips, DEFAULT_NOISE_SIGMA};
pub use cube::{SceneCube, Split};
pub use dataset_io::{load_dataset, save_dataset};
pub use patches::{extract_patches, raw_window, reflect_index, PatchPair, Standardizer};
pub use pca::{fit_pca, fit_pca_samples, PcaModel};
pub use synthetic::{generate_synthetic, nearest_prototype_oa, PrototypeFeatures, SyntheticSpec};
