//! Latent-activity diagnostics, sample-based fit scores and VaR
//! backtesting.

mod activity;
mod backtest;
mod scores;
mod var;

pub use activity::{
    activity_statistic, avg_active_count, ActivityMatrix, ACTIVE_THRESHOLD, INACTIVE_THRESHOLD,
};
pub use backtest::{
    backtest, score_forecasts, BacktestDay, BacktestReport, FnSampler, Forecaster, GarchSampler,
    HistoricalSimulation, MonteCarloVar, ReturnSampler, ScoreSummary, TempVaeSampler, VarPair,
    LEVELS,
};
pub use scores::{nll_diagonal, nll_full, nll_scores, portfolio_nll, NllScores};
pub use var::{rlf, var_from_samples, var_rank, VAR_SAMPLES};
