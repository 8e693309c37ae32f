//! Tools for turning per-frame reconstructed mesh sequences of human
//! performances into temporally consistent, re-animatable volumetric video.

pub mod animate;
pub mod body;
pub mod decimate;
pub mod defgraph;
pub mod error;
pub mod fitting;
pub mod geom;
pub mod linalg;
pub mod mesh;
pub mod pipeline;
pub mod registration;
pub mod report;
pub mod synthetic;
pub mod tracking;

pub use error::{Error, Result};
pub use mesh::TriMesh;
