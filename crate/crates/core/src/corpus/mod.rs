//! On-disk formats and in-memory containers: images, embeddings, object
//! patches, annotations and manifests.

pub mod annotation;
pub mod image;
pub mod manifest;
pub mod oadf;
pub mod patch;

pub use annotation::{read_annotations, write_annotations, Attribute, SceneAnnotation, SceneObject};
pub use image::{decode_ppm, encode_ppm, read_ppm, write_ppm, Image};
pub use manifest::{Manifest, ManifestEntry, Split};
pub use oadf::{
    read_embeddings, read_global, write_embeddings, write_global, GlobalFeature, PatchEmbeddingSet,
    Tensor3,
};
pub use patch::{
    patches_from_tensor, patches_to_tensor, resize_bilinear, to_object_patch, ObjectPatch, PATCH_LEN, PATCH_SIDE,
};
