//! U-Net surrogate: architecture, training, inference and model files.

pub mod bundle;
pub mod predict;
pub mod train;
pub mod unet;

pub use bundle::{ModelBundle, TrainingMeta};
pub use predict::{predict, predict_batch, predict_directional};
pub use train::{train, train_on_dataset, EpochRecord, TrainConfig, TrainingHistory};
pub use unet::{UNet, UNetSpec};
