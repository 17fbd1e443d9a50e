//! Object-level semi-static mapping.

mod assignment;
mod baseline;
mod consistency;
mod edt;
mod library;
mod segment;
mod snapshot;
mod submap;

pub use assignment::hungarian;
pub use baseline::VoxelBaseline;
pub use consistency::{
    bayes_update, expected_consistency, posterior_moments, ClampFlags, ConsistencyParams, MeasurementPair,
    PosteriorMoments, PARAM_CEIL, PARAM_FLOOR, SIGMA_MIN,
};
pub use edt::squared_edt;
pub use library::{
    associate, build_local_edf, geometric_consistency, local_region, visibility, Association, Consistency,
    MapEvent, MappingConfig, ObjectEntry, ObjectLibrary, VisibilityCounts,
};
pub use segment::{segment_cloud, ObservationSegment, SegmentationConfig};
pub use snapshot::{read_field, write_field, FieldExport, MapSnapshot, SnapshotMailbox, EXPORT_FORMAT_VERSION};
pub use submap::{cell_of, cell_position, distance_field, Cell, Submap};
