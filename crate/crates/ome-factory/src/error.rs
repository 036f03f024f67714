use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FactoryError {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
    #[error("`{0}` is a sensor, not an actuator")]
    NotAnActuator(String),
    #[error("unknown reader `{0}`")]
    UnknownReader(String),
}
