//! Face images, morph generation, training triplets and synthetic datasets.

mod image;
mod manifest;
mod morph;
mod synth;
mod triplet;

pub use image::{alpha_blend, normalize_image, FaceImage, RgbImage, DEFAULT_SIZE};
pub use manifest::{Manifest, ManifestRow, SampleKind, MANIFEST_HEADER};
pub use morph::{convex_hull, generate_morph, MorphOptions, MorphRecord, WarpMode};
pub use synth::{
    gaussian_blur, render_captures, subject_id, synth_dataset, Capture, SubjectModel, SynthConfig,
};
pub use triplet::{
    assemble_triplet, build_triplet, mine_landmark_partner, PoolEntry, Triplet, TripletOptions,
};

