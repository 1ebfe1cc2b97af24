//! Classical VaR benchmarks: per-asset GARCH(1,1) fitted by maximum
//! likelihood, and historical simulation.

mod garch;
mod historical;
mod optim;

pub use garch::{
    garch_fit, garch_fit_with, garch_forecast, read_params_csv,
    stacked_forecast, GarchFit, GarchParams, GarchStack, MIN_FIT_LEN,
};
pub use historical::{historical_var, HS_WINDOW, MIN_HS_WINDOW};
pub use optim::{Minimum, NelderMead};
