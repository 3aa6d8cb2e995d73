//! Annotation files, feature sources and the synthetic planted-graph world.

pub mod annotation;
pub mod features;
pub mod synthetic;

pub use annotation::{
    annotations_to_string, load_annotations, load_annotations_with_warnings, parse_annotations, save_annotations,
    AnnotationRecord,
};
pub use features::{
    attach_features, decode_container, encode_container, read_container, write_container, FeatureProvider,
    InMemoryFeatures, SeededRandomFeatures, ZeroFeatures,
};
pub use synthetic::{
    generate_split, generate_synthetic_corpus, generate_video, write_corpus, CorpusSummary, Split, SyntheticVideo,
    SyntheticWorldConfig, VideoSkeleton, World,
};
