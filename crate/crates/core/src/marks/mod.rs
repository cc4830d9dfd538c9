//! Fusion of multi-reader ellipse marks into scored ground-truth regions.

mod ellipse;
mod merge;

pub use ellipse::{ellipse_intersection_area, EllipseMark, POLYGON_VERTICES};
pub use merge::{
    hit_threshold, marks_hit, marks_overlap, merge_marks, GroundTruthMark, HitConfig, PrimaryGt,
};
