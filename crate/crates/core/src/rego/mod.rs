//! Parser, syntax checker and evaluator for the supported Rego subset.

pub mod ast;
mod eval;
mod lexer;
mod parser;
mod printer;

pub use ast::{
    Builtin, CmpOp, DenyRule, Expr, ExprKind, HeadForm, PolicyDocument, Ref, RefHead, Scalar, Segment, Term,
};
pub use eval::{
    apply_builtin, compare, evaluate, explain, message_text, values_equal, BoundValue, EvalError, EvalLimits,
    Evaluator, ViolationTrace, DEFAULT_MAX_BINDINGS,
};
pub use parser::{check_syntax, parse_policy};
pub use printer::{print_policy, term as print_term};
