//! Stack-machine IR with segment memories and bounds-carrying handles.
//!
//! A module is a named collection of functions plus imports of functions
//! from other modules. Values are 32/64-bit integers and handles; handles
//! are the only way to reach memory. The text format is s-expression based
//! (see [`parse`] and [`print`]), and [`validate`] enforces stack discipline
//! before anything is allowed to run.

mod parse;
mod print;
mod validate;

pub use parse::{parse_module, ParseError, ParsedModule, Span};
pub use print::serialize_module;
pub use validate::{validate, TypeError, TypeErrorKind, TypedModule};

/// Value types. `Handle` is opaque to integer arithmetic; the validator
/// rejects any attempt to conjure one from an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValType {
    I32,
    I64,
    Handle,
}

impl ValType {
    pub fn mnemonic(self) -> &'static str {
        match self {
            ValType::I32 => "i32",
            ValType::I64 => "i64",
            ValType::Handle => "handle",
        }
    }
}

impl std::fmt::Display for ValType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.mnemonic())
    }
}

/// Binary and comparison operators over i32. All arithmetic wraps except
/// division and remainder, which trap at run time on zero divisors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum I32Op {
    Add,
    Sub,
    Mul,
    DivS,
    RemS,
    And,
    Or,
    Xor,
    Shl,
    ShrS,
    Eq,
    Ne,
    LtS,
    GtS,
    LeS,
    GeS,
}

impl I32Op {
    pub const ALL: [I32Op; 16] = [
        I32Op::Add,
        I32Op::Sub,
        I32Op::Mul,
        I32Op::DivS,
        I32Op::RemS,
        I32Op::And,
        I32Op::Or,
        I32Op::Xor,
        I32Op::Shl,
        I32Op::ShrS,
        I32Op::Eq,
        I32Op::Ne,
        I32Op::LtS,
        I32Op::GtS,
        I32Op::LeS,
        I32Op::GeS,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            I32Op::Add => "i32.add",
            I32Op::Sub => "i32.sub",
            I32Op::Mul => "i32.mul",
            I32Op::DivS => "i32.div_s",
            I32Op::RemS => "i32.rem_s",
            I32Op::And => "i32.and",
            I32Op::Or => "i32.or",
            I32Op::Xor => "i32.xor",
            I32Op::Shl => "i32.shl",
            I32Op::ShrS => "i32.shr_s",
            I32Op::Eq => "i32.eq",
            I32Op::Ne => "i32.ne",
            I32Op::LtS => "i32.lt_s",
            I32Op::GtS => "i32.gt_s",
            I32Op::LeS => "i32.le_s",
            I32Op::GeS => "i32.ge_s",
        }
    }
}

/// One instruction. Control flow is structured: blocks carry their bodies,
/// and branches name an enclosing block by depth (0 = innermost).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    I32Const(i32),
    I64Const(i64),
    I32Bin(I32Op),
    LocalGet(u32),
    LocalSet(u32),
    Drop,
    Block {
        result: Option<ValType>,
        body: Vec<Instr>,
    },
    Loop {
        result: Option<ValType>,
        body: Vec<Instr>,
    },
    If {
        result: Option<ValType>,
        then_body: Vec<Instr>,
        else_body: Vec<Instr>,
    },
    Br(u32),
    BrIf(u32),
    /// Index into the joint function space: imports first, then local
    /// functions in declaration order.
    Call(u32),
    Return,
    /// Pops an i32 and records it in the run's output stream.
    Print,
    /// Pops an i32 byte count, allocates a fresh zeroed segment, pushes its
    /// handle.
    NewSegment,
    /// Pops a handle and frees its whole segment, from any offset.
    FreeSegment,
    /// Pops a handle, loads `width` bytes (1, 4, or 8) at its offset.
    /// Widths 1 and 4 push i32 (byte loads zero-extend), width 8 pushes i64.
    SegLoad(u8),
    /// Pops a value then a handle, stores `width` bytes at the handle's
    /// offset.
    SegStore(u8),
    /// Pops an i32 delta then a handle, pushes the handle with its offset
    /// shifted. Never traps; only accesses are checked.
    HandleAdd,
    /// Pops i32 length, i32 start, then a handle; pushes a handle whose view
    /// is narrowed to `[start, start+len)` of the current view, offset reset
    /// to 0. Traps `InvalidSlice` when the request widens the view and
    /// `NullDeref` when the handle is invalid.
    HandleSlice,
    HandleNull,
    /// Pops two handles, pushes 1 if all fields agree, else 0.
    HandleEq,
    /// Pops a handle, pushes its current offset as i32.
    HandleGetOffset,
}

/// Signature of a function or import: parameter types and at most one
/// result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncSig {
    pub params: Vec<ValType>,
    pub result: Option<ValType>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuncDef {
    pub name: String,
    pub exported: bool,
    pub params: Vec<ValType>,
    pub result: Option<ValType>,
    pub locals: Vec<ValType>,
    pub body: Vec<Instr>,
}

impl FuncDef {
    pub fn sig(&self) -> FuncSig {
        FuncSig {
            params: self.params.clone(),
            result: self.result,
        }
    }
}

/// An imported function: which module it comes from, the exported name to
/// bind, the local alias used by `call`, and the declared signature (checked
/// against the actual export at link time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportDef {
    pub module: String,
    pub name: String,
    pub local: String,
    pub params: Vec<ValType>,
    pub result: Option<ValType>,
}

impl ImportDef {
    pub fn sig(&self) -> FuncSig {
        FuncSig {
            params: self.params.clone(),
            result: self.result,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDef {
    pub id: String,
    pub imports: Vec<ImportDef>,
    pub funcs: Vec<FuncDef>,
}

impl ModuleDef {
    /// Signature of function `idx` in the joint index space (imports first).
    pub fn sig_of(&self, idx: u32) -> Option<FuncSig> {
        let idx = idx as usize;
        if idx < self.imports.len() {
            Some(self.imports[idx].sig())
        } else {
            self.funcs.get(idx - self.imports.len()).map(|f| f.sig())
        }
    }

    /// Name of function `idx` in the joint index space.
    pub fn name_of(&self, idx: u32) -> Option<&str> {
        let idx = idx as usize;
        if idx < self.imports.len() {
            Some(&self.imports[idx].local)
        } else {
            self.funcs
                .get(idx - self.imports.len())
                .map(|f| f.name.as_str())
        }
    }

    pub fn func_count(&self) -> u32 {
        (self.imports.len() + self.funcs.len()) as u32
    }
}

/// True when `s` can be written as a bare identifier token in the text
/// format.
pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '$' | '.' | '-'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ident_charset() {
        assert!(is_ident("m"));
        assert!(is_ident("__malloc"));
        assert!(is_ident("get-buf"));
        assert!(!is_ident("7up"));
        assert!(!is_ident(""));
        assert!(!is_ident("has space"));
    }

    #[test]
    fn joint_index_space_covers_imports_then_funcs() {
        let m = ModuleDef {
            id: "m".into(),
            imports: vec![ImportDef {
                module: "ctx".into(),
                name: "f".into(),
                local: "f".into(),
                params: vec![ValType::I32],
                result: Some(ValType::I32),
            }],
            funcs: vec![FuncDef {
                name: "g".into(),
                exported: false,
                params: vec![],
                result: None,
                locals: vec![],
                body: vec![],
            }],
        };
        assert_eq!(m.name_of(0), Some("f"));
        assert_eq!(m.name_of(1), Some("g"));
        assert_eq!(m.name_of(2), None);
        assert_eq!(m.sig_of(0).unwrap().params, vec![ValType::I32]);
        assert!(m.sig_of(1).unwrap().params.is_empty());
    }
}
