//! Synthetic clips, temporal windowing, resizing and manifest-driven loading.

pub mod manifest;
pub mod synth;
pub mod video;

pub use manifest::{
    encode_manifest, iterate_batches, iterate_tensor_batches, load_manifest, load_tensor_split, Batch,
    BatchIter, ClipRecord, DatasetManifest, EncodingInfo, Geometry, Split,
};
pub use synth::{render_clip, synth_action_dataset, synth_clips, vertical_displacement, Motion, SynthConfig, SynthClip};
pub use video::{resize_clip, window_clip};
