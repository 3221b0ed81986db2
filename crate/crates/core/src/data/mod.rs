//! Stimulus and voxel types, preprocessing, dataset files and the synthetic
//! world that stands in for recorded fMRI.

mod category;
mod dataset;
mod image;
pub(crate) mod pgm;
mod voxels;
mod world;

pub use category::{CategoryMap, COARSE_NAMES, N_COARSE, STANDARD_SET_SIZES};
pub use dataset::{load_dataset, load_truth, save_dataset, save_truth, Dataset, DatasetMeta, Sample, TRUTH_FILE};
pub use image::{apply_circular_mask, preprocess, to_grayscale, GrayImage, MaskConfig, RgbImage};
pub use pgm::{read_pgm, write_pgm};
pub use voxels::{zscore_fit_apply, Roi, VoxelRecord, VoxelStats};
pub use world::{make_world, HighLevelTruth, SampleTruth, WorldConfig, WorldTruth};
