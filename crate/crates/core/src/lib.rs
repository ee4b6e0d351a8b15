//! Weak KAM and Aubry-Mather numerics for contact Hamiltonian systems on flat tori.
//!
//! The crate computes the backward weak KAM solution `u-` of `H(x, u, Du) = 0`
//! and the maximal forward solution `u+` with a monotone semi-Lagrangian
//! scheme, then derives barrier functions, Aubry set estimates, calibrated
//! curves of the contact flow and Mañé critical values.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`.

pub mod action;
pub mod aubry;
pub mod critical;
pub mod error;
pub mod flow;
pub mod grid;
pub mod model;
pub mod sample;
pub mod scalar;
pub mod semigroup;
pub mod weakkam;

pub use action::{ActionKind, ActionSlice};
pub use aubry::{AubryEstimate, AubryOptions, MatherEstimate, MatherOptions, RecurrenceClass};
pub use critical::{AdmissibleLevel, BoundednessReport, BoundednessVerdict, CriticalValue, LevelSearch};
pub use error::{Error, Result};
pub use flow::{CalibratedCurve, CalibrationOptions, Trajectory};
pub use grid::{fmt_real, GradientMode, GridField, PeriodicGrid};
pub use model::{
    audit_assumptions, AuditReport, ContactPoint, CustomCoefficients, Family, FamilyTag, HamiltonianGradient,
    HamiltonianModel, SampleSpec, FAMILY_NAMES,
};
pub use scalar::{Real, Vector};
pub use semigroup::{Direction, Evolution, HistoryRecord, SchemeOptions};
pub use weakkam::{FixedPointOptions, LawOptions, LawReport, Solution, SolveStatus};

pub type Model = HamiltonianModel<f64>;
pub type Grid = PeriodicGrid<f64>;
pub type Field = GridField<f64>;
pub type Point = ContactPoint<f64>;
pub type Options = SchemeOptions<f64>;
pub type Slice = ActionSlice<f64>;
pub type Orbit = Trajectory<f64>;
pub type Aubry = AubryEstimate<f64>;
