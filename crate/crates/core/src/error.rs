use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("{0} is not prime")]
    CompositeCharacteristic(u32),
    #[error("modulus is not irreducible over F_{0}")]
    ReducibleModulus(u32),
    #[error("no built-in modulus for q = {0}; supply one explicitly")]
    MissingModulus(u64),
    #[error("field of order {0} is too large (at most {1} elements supported)")]
    FieldTooLarge(u64, u64),
    #[error("matrix determinant is not a unit")]
    NotInvertible,
    #[error("division by zero")]
    DivisionByZero,
    #[error("operation undefined on the zero polynomial")]
    ZeroPolynomial,
    #[error("valuation of zero")]
    ValuationOfZero,
    #[error("not a square in K_v: {0}")]
    NotASquare(&'static str),
    #[error("radicand is a square in K; the element is rational")]
    RationalRadicand,
    #[error("square root of the radicand does not lie in K_v: {0}")]
    NotSplit(&'static str),
    #[error("point lies outside the observation window")]
    OutsideWindow,
    #[error("points coincide to working precision")]
    CoincidentPoints,
    #[error("characteristic 2 is not supported for quadratic irrationals")]
    CharacteristicTwo,
    #[error("degree cap exceeded: {0}")]
    DegreeCapExceeded(String),
    #[error("cylinder depth {depth} exceeds perpendicular length {length}")]
    CylinderTooDeep { depth: usize, length: i64 },
    #[error("target measure is not integrable on this ball")]
    SingularBall,
    #[error("degenerate ladder: {0}")]
    DegenerateLadder(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("precision exhausted: {0}")]
    Precision(String),
}

pub type Result<T> = std::result::Result<T, Error>;
