//! Data virtualization for ML workflows: virtual datasets described by
//! transformation specs over registered sources, materialized lazily through
//! a content-addressed cache.

pub mod catalog;
pub mod engine;
pub mod fixtures;
pub mod ids;
pub mod model;
pub mod ssvd;
pub mod storage;
pub mod transforms;
pub mod workspace;

pub use catalog::{Catalog, DatasetRecord, Direction, RegisterExplicit, RemoveMode, SearchFilter};
pub use engine::{Engine, MaterializeOptions, Materialized, RunStats};
pub use ids::{DatasetId, IdGen, ObjectId};
pub use model::{DataObject, Schema, Table, Value};
pub use ssvd::{parse_spec, VirtualDatasetSpec};
pub use workspace::{Config, Error, Workspace};
