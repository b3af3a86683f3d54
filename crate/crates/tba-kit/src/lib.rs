//! Non-neural machinery for LiDAR tracking-by-attention pipelines.
//!
//! The crate covers the parts of a TBA tracker that do not need a network:
//! BEV box geometry and ego-motion compensation, temporally consistent
//! track-sampling augmentation, the query propagation lifecycle with a
//! surrogate detector, two-stage ground-truth assignment with a Hungarian
//! matcher, composite clip losses, and a nuScenes-style tracking metrics
//! engine with the AMOTA recall sweep.
//!
//! Core math is generic over the scalar type via [`scalar::Real`]
//! (`f32`/`f64`); the concrete aliases at the crate root fix `f64`, which is
//! what the file formats and the CLI speak.

pub mod assignment;
pub mod engine;
pub mod geom;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod sampling;
pub mod scalar;

pub use scalar::Real;

/// Scalar used by the file formats, the CLI, and the default aliases.
pub type Scalar = f64;

pub type Pose = geom::Pose<Scalar>;
pub type Box3D = geom::Box3D<Scalar>;
pub type BoxEncoding = geom::BoxEncoding<Scalar>;

pub type Pose32 = geom::Pose<f32>;
pub type Box3D32 = geom::Box3D<f32>;
