//! Perturbation rig, balance plant, calibration, assistive field and trial
//! simulation.

pub mod body;
pub mod boundary;
pub mod calibrate;
pub mod cohort;
pub mod rig;
pub mod trial;

pub use body::{BodyParams, BodyState, Forces};
pub use boundary::{assistive_force, build_boundary, BalanceBoundary};
pub use calibrate::{calibrate_threshold, Calibration, CalibrationOptions};
pub use cohort::{calibrate_subject, generate_synthetic_cohort, CohortSpec, GroundTruth, GroupSpec};
pub use rig::{cable_tensions, CableBelt, RigModel};
pub use trial::{run_trial, vr_score, SimTrial, TaskModel, TrialScript};
