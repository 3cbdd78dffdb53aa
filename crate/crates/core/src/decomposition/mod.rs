//! k-means clustering and granularity ladders built from it.

pub mod kmeans;
pub mod ladder;

pub use kmeans::{kmeans, kmeans_points, sed, ClusterModel, KMeansParams};
pub use ladder::{
    class_decompose, class_decompose_with_centroids, map_to_parent, sample_decompose, sample_decompose_with_centroids,
    GranularityLadder, LadderKind, LevelView,
};
