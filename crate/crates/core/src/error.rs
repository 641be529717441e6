use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("step size collapsed to {dt:e} (< dt_min {dt_min:e}) at t = {t:e}; stiffest cell {cell} (mass {mass:e}, loss rate {loss_rate:e})")]
    Stiffness {
        t: f64,
        dt: f64,
        dt_min: f64,
        cell: usize,
        mass: f64,
        loss_rate: f64,
    },
    #[error("step limit {steps} reached at t = {t:e}")]
    StepLimit { t: f64, steps: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
