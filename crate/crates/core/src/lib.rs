//! Versioned agent-resource registries and a closed-loop evolution engine.

pub mod bus;
pub mod canonical;
pub mod contract;
pub mod error;
pub mod gateway;
pub mod hub;
pub mod lineage;
pub mod optimizers;
pub mod persistence;
pub mod record;
pub mod registry;
pub mod retrieval;
pub mod runtime;
pub mod server;
pub mod sepl;
pub mod toy;
pub mod trace;
pub mod variables;
pub mod version;

pub use error::{Error, ProviderFailure, Result};
pub use record::{EntityKind, ExportForm, ExportedRepresentation, Mapping, RegistrationRecord, ResourceEntity};
pub use version::Version;
pub use hub::ResourceHub;
pub use registry::Registry;
pub use trace::{Trace, TraceRecorder};
pub use variables::EvolvableVariable;
