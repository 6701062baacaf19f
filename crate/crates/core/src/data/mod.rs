//! Dataset ingestion, train/test splits, preprocessing and augmentation.

mod augment;
mod ingest;
mod preprocess;
mod split;

pub use augment::{Augmentation, Transform};
pub use ingest::{ingest, ingest_dataset, list_images, load_rgb, DatasetLayout, LayoutManifest, SampleRecord};
pub use preprocess::{
    resize_mask_nearest, resize_rgb_bilinear, stack_batch, Batch, PreparedSample, Preprocessor, IMAGENET_MEAN, IMAGENET_STD,
};
pub use split::{make_split, Split, SplitManifest};
