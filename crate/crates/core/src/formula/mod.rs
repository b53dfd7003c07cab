//! Modal formula AST, the text DSL, and named robustness atoms.

mod ast;
mod atoms;
mod parser;

pub use ast::{Formula, Modality, Window};
pub use atoms::{AtomDef, AtomFn, AtomRegistry};
pub use parser::{parse, ParseError};
