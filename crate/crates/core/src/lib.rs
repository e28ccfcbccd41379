//! Validated computation of reachability probabilities for hybrid systems
//! with random and nondeterministic parameters.

pub mod decide;
pub mod expr;
pub mod flowenc;
pub mod integrate;
pub mod interval;
pub mod lexer;
pub mod logic;
pub mod model;
pub mod montecarlo;
pub mod reach;

pub use expr::{parse_expr, Expr, ExprError, Tape};
pub use interval::{Interval, IntervalBox, IntervalError};
