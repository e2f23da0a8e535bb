use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate circuit: {0}")]
    DegenerateCircuit(String),

    #[error("state of discharge {f} outside calibration range [{min}, {max}]")]
    CalibrationRange { f: f64, min: f64, max: f64 },

    #[error("battery model gives non-positive {quantity} ({value}) at f = {f}")]
    NonPhysical {
        quantity: &'static str,
        value: f64,
        f: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("battery depleted: state of discharge would reach {f}")]
    Depleted { f: f64 },

    #[error("infeasible demand: mismatch {delta_p} W exceeds battery limit {max} W")]
    InfeasibleDemand { delta_p: f64, max: f64 },

    #[error("singular linearization: {0}")]
    SingularLinearization(String),

    #[error("model is not on the stable branch (alpha - beta = {margin_1}, -alpha*beta - gamma = {margin_2})")]
    Unstable { margin_1: f64, margin_2: f64 },

    #[error("step size {dt} s too large: dt * |s_fast| = {product} (limit 0.1)")]
    StepSize { dt: f64, product: f64 },

    #[error("dc-link collapse at t = {t} s (v_dc = {v_dc} V)")]
    Collapse { t: f64, v_dc: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
