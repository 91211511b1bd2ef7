//! MiniC, a small C-like language with two compilation targets.
//!
//! The language has `int` and `ptr` (pointer to int) values, heap blocks
//! of 4-byte elements from `malloc`, pointer arithmetic in elements, and
//! the usual statement forms. There are no casts: an `int` can never
//! become a `ptr`, so every pointer a program holds descends from some
//! `malloc`. Functions marked `export` are callable from other modules;
//! `extern` declarations name functions imported from them.
//!
//! The safe backend maps `ptr` to a first-class handle and `malloc` to a
//! fresh segment, so spatial and temporal safety are the machine's
//! problem. The unsafe backend maps `ptr` to a byte offset into one flat
//! 64 KiB segment managed by in-module allocator helpers, the way a
//! conventional compiler lays out a heap in linear memory; nothing stops
//! an offset from straying into a neighboring block. Running the unsafe
//! output under a shadowed module id recovers the logical allocation
//! story for the monitors.
//!
//! The two backends give `ptr` different cross-module shapes (handle vs
//! i32), so a safe module can only import int-only signatures from an
//! unsafe one and vice versa; the linker rejects anything else as a
//! signature mismatch.

mod check;
mod compile;
pub mod fuzz;
mod parse;

pub use check::{check, CheckError};
pub use compile::{compile_safe, compile_unsafe, FLAT_HEAP_BYTES};
pub use parse::{parse_program, MiniCParseError};

use crate::ir::{validate, TypedModule};

/// Compilation target, including the unsafe allocator's two flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Safe,
    Unsafe,
    /// Unsafe with an exact-fit free list, so freed space is recycled.
    UnsafeReuse,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::Safe, Backend::Unsafe, Backend::UnsafeReuse];

    pub fn name(self) -> &'static str {
        match self {
            Backend::Safe => "safe",
            Backend::Unsafe => "unsafe",
            Backend::UnsafeReuse => "unsafe-reuse",
        }
    }

    pub fn is_unsafe(self) -> bool {
        !matches!(self, Backend::Safe)
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown backend `{s}`"))
    }
}

#[derive(Debug)]
pub enum BuildError {
    Parse(MiniCParseError),
    Check(CheckError),
    /// The backend emitted a module the validator rejects; a compiler bug.
    Validate(String),
}

impl std::fmt::Display for BuildError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BuildError::Parse(e) => write!(f, "{e}"),
            BuildError::Check(e) => write!(f, "{e}"),
            BuildError::Validate(e) => write!(f, "compiled module fails validation: {e}"),
        }
    }
}

impl std::error::Error for BuildError {}

/// Source text to a validated module in one step.
pub fn build_module(src: &str, module_id: &str, backend: Backend) -> Result<TypedModule, BuildError> {
    let program = parse_program(src).map_err(BuildError::Parse)?;
    check(&program).map_err(BuildError::Check)?;
    let module = match backend {
        Backend::Safe => compile_safe(&program, module_id),
        Backend::Unsafe => compile_unsafe(&program, module_id, false),
        Backend::UnsafeReuse => compile_unsafe(&program, module_id, true),
    };
    validate(&module).map_err(|errs| BuildError::Validate(errs[0].to_string()))
}

/// Value types. `Ptr` points at int elements; there is no pointer to
/// pointer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Int,
    Ptr,
}

impl Ty {
    pub fn name(&self) -> &'static str {
        match self {
            Ty::Int => "int",
            Ty::Ptr => "ptr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(i32),
    Var(String),
    Null,
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// `*e` for a pointer-typed `e`; loads one element.
    Load(Box<Expr>),
    Call(String, Vec<Expr>),
    /// `malloc(n)` allocates `n` elements.
    Malloc(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Decl {
        ty: Ty,
        name: String,
        init: Option<Expr>,
    },
    Assign {
        name: String,
        value: Expr,
    },
    /// `*target = value` for a pointer-typed target.
    Store {
        target: Expr,
        value: Expr,
    },
    Free(Expr),
    Print(Expr),
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
    },
    While {
        cond: Expr,
        body: Vec<Stmt>,
    },
    Return(Option<Expr>),
    /// A call in statement position; any result is discarded.
    CallStmt(String, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub ty: Ty,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuncDecl {
    pub name: String,
    pub params: Vec<Param>,
    /// `None` for `void`.
    pub ret: Option<Ty>,
    pub body: Vec<Stmt>,
    pub exported: bool,
    pub line: u32,
}

/// `extern int f(int x) from lib;`
#[derive(Debug, Clone, PartialEq)]
pub struct ExternDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Ty>,
    pub from: String,
    pub line: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceProgram {
    pub externs: Vec<ExternDecl>,
    pub funcs: Vec<FuncDecl>,
}
