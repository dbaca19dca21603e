pub mod bundle;
pub mod calc;
pub mod chern;
pub mod donaldson;
pub mod flow;
pub mod grid;
pub(crate) mod par;
pub mod scenario;
pub mod stability;
pub mod verify;

pub use bundle::{AEntry, BackgroundA, Bundle, BundleError, EndoField, MetricField};

pub use flow::{c0_control_fit, FlowConfig, FlowScheme, FlowStatus, FlowTrace, MonitorRow};

pub use grid::{DerivScheme, FormDegree, GridError, OrbifoldGrid, ScalarField};
