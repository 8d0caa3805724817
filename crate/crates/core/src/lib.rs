//! Beam-angle selection for coplanar 3D conformal radiotherapy.
//!
//! The crate bundles everything needed to run a closed planning loop on a
//! desk-scale case:
//!
//! * [`phantom`]: voxel grids, anatomical structures, a synthetic prostate
//!   case generator and its on-disk format.
//! * [`dose`]: a deterministic parallel-beam attenuation dose engine with
//!   incremental voxel ray traversal.
//! * [`environment`]: the episodic gantry-angle environment, its reward and
//!   the state renderings handed to agents.
//! * [`agents`]: random baseline, a deep-Q agent with a small 3D CNN, and the
//!   language-model driven text-to-plan loop.
//! * [`llm`]: chat-completion clients (HTTP plus deterministic mocks).
//! * [`eval`]: dose-volume histograms, ANOVA / t-tests and the batch
//!   comparison harness.
//! * [`cli`]: the `gantry` command line.
//!
//! Data-parallel loops (per-beam dose, trial batches) go through [`par`],
//! which uses rayon when the `parallel` feature is on and falls back to plain
//! iteration otherwise. Results are identical either way.

pub mod agents;
pub mod cli;
pub mod dose;
pub mod environment;
pub mod eval;
pub mod llm;
pub mod par;
pub mod phantom;
pub mod raw;

pub use dose::{BeamSpec, DoseGrid, EngineConfig, Plan};
pub use environment::{EnvConfig, Environment, RewardBreakdown};
pub use phantom::{GridGeometry, Phantom, Structure, StructureKind};
