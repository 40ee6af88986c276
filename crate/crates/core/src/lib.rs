//! Cox proportional-hazards estimation under unmeasured confounding by
//! two-stage residual inclusion with an individual frailty, together with
//! the survival primitives, first-stage regressions and Monte Carlo engine
//! used to study it.

pub mod cox;
pub mod data;
pub mod error;
pub mod first_stage;
pub mod frailty;
pub mod io;
pub mod simulation;
pub mod survival;
pub mod two_stage;
pub mod util;

pub use data::{Dataset, Design, SurvivalRecord};
pub use error::{Error, Result, Stage};
