//! Right-censored data machinery: risk sets, Kaplan–Meier curves and the
//! concordance statistic used to gauge instrument strength.

mod concordance;
mod km;
mod risk_set;

pub use concordance::{concordance_probability, Concordance};
pub use km::{kaplan_meier, km_fit, KaplanMeierCurve};
pub use risk_set::{risk_set_index, EventTime, RiskSetIndex};
