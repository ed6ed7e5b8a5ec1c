//! Object-level video anomaly scoring on precomputed detections.
//!
//! Two channels score every frame: a static one from how rare an object's
//! caption answer is on normal data ([`spa`]), and a temporal one from the
//! prediction error of a linear state-space model over object feature
//! clips ([`s3m`]). [`fusion`] combines them and [`eval`] measures frame
//! level ROC-AUC. [`synth`] generates datasets with known anomalies.

pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod pipeline;
pub mod s3m;
pub mod seeds;
pub mod spa;
pub mod synth;
pub mod tracker;
