//! Everything around the network at run time: decoding and suppression,
//! weight and image files, synthetic scenes and the toy training loop.

pub mod decode;
pub mod image;
pub mod nms;
pub mod parallel;
pub mod scene;
pub mod train;
pub mod weights;

pub use decode::{decode, decode_batch, encode, iou, BBox, Detection, GtBox, HeadLayout};
pub use image::{load_image, read_ppm, read_raw, write_ppm, write_raw};
pub use nms::nms;
pub use parallel::{par_map, thread_count};
pub use scene::{SceneConfig, SyntheticScene, CLASS_NAMES};
pub use train::{evaluate, train_toy, EvalReport, TrainConfig, TrainLog};
pub use weights::{apply_weights, load_weights, save_weights, read_weights, write_weights};
