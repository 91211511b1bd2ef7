//! Static typing of modules.
//!
//! Each function body is checked against its signature with an abstract
//! operand stack. Code after an unconditional branch or return is checked
//! polymorphically, in the style of the WebAssembly validation algorithm:
//! the stack below the current block's entry height becomes inaccessible,
//! and missing operands materialize as wildcards.
//!
//! Handles are only produced by `segment.new`, `handle.null`, and the
//! handle operators, never by integer arithmetic. An integer supplied where
//! a handle is required is reported as [`TypeErrorKind::HandleForgeAttempt`]
//! rather than a generic mismatch, since that shape of program is exactly a
//! forged pointer.

use super::{FuncSig, Instr, ModuleDef, ValType, is_ident};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeErrorKind {
    /// Operand type differs from what the instruction requires.
    TypeMismatch,
    /// An instruction needs more operands than the current block provides.
    StackUnderflow,
    /// `br`/`br_if` names a label deeper than the enclosing nesting.
    BadBranchDepth,
    /// `call` target index is outside the joint import/function space.
    UnknownFunction,
    /// Integer operand where a handle is required.
    HandleForgeAttempt,
    /// `local.get`/`local.set` index past params + locals.
    UnknownLocal,
    /// Two imports or functions share a name.
    DuplicateName,
    /// Malformed module structure (bad identifiers).
    BadModule,
}

impl std::fmt::Display for TypeErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TypeErrorKind::TypeMismatch => "type mismatch",
            TypeErrorKind::StackUnderflow => "stack underflow",
            TypeErrorKind::BadBranchDepth => "bad branch depth",
            TypeErrorKind::UnknownFunction => "unknown function",
            TypeErrorKind::HandleForgeAttempt => "handle forge attempt",
            TypeErrorKind::UnknownLocal => "unknown local",
            TypeErrorKind::DuplicateName => "duplicate name",
            TypeErrorKind::BadModule => "bad module",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct TypeError {
    /// Function the error is in, `None` for module-level problems.
    pub func: Option<String>,
    /// Pre-order ordinal of the offending instruction within that function,
    /// usable as a key into parse-time span tables.
    pub ordinal: Option<usize>,
    pub kind: TypeErrorKind,
    pub msg: String,
}

impl std::fmt::Display for TypeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.func {
            Some(name) => write!(f, "{}: in `{name}`: {}", self.kind, self.msg),
            None => write!(f, "{}: {}", self.kind, self.msg),
        }
    }
}

impl std::error::Error for TypeError {}

/// A module that passed validation, with the resolved signature of every
/// callee in the joint index space (imports first, then local functions).
#[derive(Debug, Clone)]
pub struct TypedModule {
    pub module: ModuleDef,
    pub sigs: Vec<FuncSig>,
}

/// Check a whole module. On failure, reports the first error of every
/// function that has one (plus any module-level errors), so a multi-function
/// module surfaces all broken functions in one pass.
pub fn validate(module: &ModuleDef) -> Result<TypedModule, Vec<TypeError>> {
    let mut errors = module_shape_errors(module);
    if errors.is_empty() {
        let sigs: Vec<FuncSig> = (0..module.func_count())
            .map(|i| module.sig_of(i as u32).unwrap())
            .collect();
        for f in &module.funcs {
            let mut ck = FuncChecker {
                module,
                locals: f.params.iter().chain(f.locals.iter()).copied().collect(),
                stack: Vec::new(),
                ctrls: Vec::new(),
                ordinal: 0,
            };
            if let Err(mut e) = ck.check_function(&f.body, f.result) {
                e.func = Some(f.name.clone());
                errors.push(e);
            }
        }
        if errors.is_empty() {
            return Ok(TypedModule {
                module: module.clone(),
                sigs,
            });
        }
    }
    Err(errors)
}

fn module_shape_errors(module: &ModuleDef) -> Vec<TypeError> {
    let mut errors = Vec::new();
    let module_err = |kind, msg: String| TypeError {
        func: None,
        ordinal: None,
        kind,
        msg,
    };
    if !is_ident(&module.id) {
        errors.push(module_err(
            TypeErrorKind::BadModule,
            format!("module id `{}` is not an identifier", module.id),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    let named: Vec<&str> = module
        .imports
        .iter()
        .map(|i| i.local.as_str())
        .chain(module.funcs.iter().map(|f| f.name.as_str()))
        .collect();
    for name in named {
        if !is_ident(name) {
            errors.push(module_err(
                TypeErrorKind::BadModule,
                format!("function name `{name}` is not an identifier"),
            ));
        }
        if !seen.insert(name) {
            errors.push(module_err(
                TypeErrorKind::DuplicateName,
                format!("`{name}` is declared twice"),
            ));
        }
    }
    errors
}

/// Operand with `None` standing for the wildcard type in dead code.
type StackVal = Option<ValType>;

struct CtrlFrame {
    is_loop: bool,
    end: Option<ValType>,
    height: usize,
    unreachable: bool,
}

struct FuncChecker<'a> {
    module: &'a ModuleDef,
    locals: Vec<ValType>,
    stack: Vec<StackVal>,
    ctrls: Vec<CtrlFrame>,
    ordinal: usize,
}

impl FuncChecker<'_> {
    fn check_function(&mut self, body: &[Instr], result: Option<ValType>) -> Result<(), TypeError> {
        self.check_block(body, result, false)
    }

    fn fail(&self, kind: TypeErrorKind, msg: impl Into<String>) -> TypeError {
        TypeError {
            func: None,
            // check_* bumps the ordinal before dispatching, so the current
            // instruction is the previous value.
            ordinal: Some(self.ordinal.saturating_sub(1)),
            kind,
            msg: msg.into(),
        }
    }

    fn push(&mut self, t: ValType) {
        self.stack.push(Some(t));
    }

    fn pop_any(&mut self) -> Result<StackVal, TypeError> {
        let frame = self.ctrls.last().expect("checker always inside a frame");
        if self.stack.len() == frame.height {
            if frame.unreachable {
                return Ok(None);
            }
            return Err(self.fail(
                TypeErrorKind::StackUnderflow,
                "operand stack is empty at this point in the block",
            ));
        }
        Ok(self.stack.pop().unwrap())
    }

    fn pop_expect(&mut self, want: ValType) -> Result<(), TypeError> {
        match self.pop_any()? {
            None => Ok(()),
            Some(got) if got == want => Ok(()),
            Some(got) => {
                let kind = if want == ValType::Handle && got != ValType::Handle {
                    TypeErrorKind::HandleForgeAttempt
                } else {
                    TypeErrorKind::TypeMismatch
                };
                Err(self.fail(kind, format!("expected {want}, found {got}")))
            }
        }
    }

    fn mark_unreachable(&mut self) {
        let frame = self.ctrls.last_mut().expect("inside a frame");
        self.stack.truncate(frame.height);
        frame.unreachable = true;
    }

    /// Values a branch to depth `n` must supply: nothing for a loop header,
    /// the block result otherwise.
    fn label_type(&self, n: u32) -> Result<Option<ValType>, TypeError> {
        let depth = self.ctrls.len();
        if (n as usize) >= depth {
            return Err(self.fail(
                TypeErrorKind::BadBranchDepth,
                format!("label {n} exceeds nesting depth {depth}"),
            ));
        }
        let frame = &self.ctrls[depth - 1 - n as usize];
        Ok(if frame.is_loop { None } else { frame.end })
    }

    fn check_block(
        &mut self,
        body: &[Instr],
        end: Option<ValType>,
        is_loop: bool,
    ) -> Result<(), TypeError> {
        self.ctrls.push(CtrlFrame {
            is_loop,
            end,
            height: self.stack.len(),
            unreachable: false,
        });
        for instr in body {
            self.check_instr(instr)?;
        }
        if let Some(t) = end {
            self.pop_expect(t)?;
        }
        let frame = self.ctrls.pop().unwrap();
        if self.stack.len() != frame.height {
            return Err(self.fail(
                TypeErrorKind::TypeMismatch,
                format!(
                    "{} extra value(s) left on the stack at end of block",
                    self.stack.len() - frame.height
                ),
            ));
        }
        if let Some(t) = end {
            self.push(t);
        }
        Ok(())
    }

    fn local_type(&self, i: u32) -> Result<ValType, TypeError> {
        self.locals.get(i as usize).copied().ok_or_else(|| {
            self.fail(
                TypeErrorKind::UnknownLocal,
                format!("local {i} out of range (have {})", self.locals.len()),
            )
        })
    }

    fn check_instr(&mut self, instr: &Instr) -> Result<(), TypeError> {
        self.ordinal += 1;
        match instr {
            Instr::I32Const(_) => self.push(ValType::I32),
            Instr::I64Const(_) => self.push(ValType::I64),
            Instr::I32Bin(_) => {
                self.pop_expect(ValType::I32)?;
                self.pop_expect(ValType::I32)?;
                self.push(ValType::I32);
            }
            Instr::LocalGet(i) => {
                let t = self.local_type(*i)?;
                self.push(t);
            }
            Instr::LocalSet(i) => {
                let t = self.local_type(*i)?;
                self.pop_expect(t)?;
            }
            Instr::Drop => {
                self.pop_any()?;
            }
            Instr::Print => {
                self.pop_expect(ValType::I32)?;
            }
            Instr::Block { result, body } => {
                self.check_block(body, *result, false)?;
            }
            Instr::Loop { result, body } => {
                self.check_block(body, *result, true)?;
            }
            Instr::If {
                result,
                then_body,
                else_body,
            } => {
                self.pop_expect(ValType::I32)?;
                if else_body.is_empty() && result.is_some() {
                    return Err(self.fail(
                        TypeErrorKind::TypeMismatch,
                        "`if` with a result needs an `else` arm",
                    ));
                }
                // Arms type-check independently; both leave the result.
                let here = self.stack.len();
                self.check_block(then_body, *result, false)?;
                if result.is_some() {
                    self.stack.pop();
                }
                if !else_body.is_empty() {
                    debug_assert_eq!(self.stack.len(), here);
                    self.check_block(else_body, *result, false)?;
                    if result.is_some() {
                        self.stack.pop();
                    }
                }
                if let Some(t) = *result {
                    self.push(t);
                }
            }
            Instr::Br(n) => {
                if let Some(t) = self.label_type(*n)? {
                    self.pop_expect(t)?;
                }
                self.mark_unreachable();
            }
            Instr::BrIf(n) => {
                self.pop_expect(ValType::I32)?;
                if let Some(t) = self.label_type(*n)? {
                    self.pop_expect(t)?;
                    self.push(t);
                }
            }
            Instr::Return => {
                // ctrls[0] is the function frame.
                if let Some(t) = self.ctrls[0].end {
                    self.pop_expect(t)?;
                }
                self.mark_unreachable();
            }
            Instr::Call(idx) => {
                let sig = self.module.sig_of(*idx).ok_or_else(|| {
                    self.fail(
                        TypeErrorKind::UnknownFunction,
                        format!("call target {idx} does not exist"),
                    )
                })?;
                for &p in sig.params.iter().rev() {
                    self.pop_expect(p)?;
                }
                if let Some(r) = sig.result {
                    self.push(r);
                }
            }
            Instr::NewSegment => {
                self.pop_expect(ValType::I32)?;
                self.push(ValType::Handle);
            }
            Instr::FreeSegment => {
                self.pop_expect(ValType::Handle)?;
            }
            Instr::SegLoad(w) => {
                self.pop_expect(ValType::Handle)?;
                self.push(if *w == 8 { ValType::I64 } else { ValType::I32 });
            }
            Instr::SegStore(w) => {
                self.pop_expect(if *w == 8 { ValType::I64 } else { ValType::I32 })?;
                self.pop_expect(ValType::Handle)?;
            }
            Instr::HandleAdd => {
                self.pop_expect(ValType::I32)?;
                self.pop_expect(ValType::Handle)?;
                self.push(ValType::Handle);
            }
            Instr::HandleSlice => {
                self.pop_expect(ValType::I32)?;
                self.pop_expect(ValType::I32)?;
                self.pop_expect(ValType::Handle)?;
                self.push(ValType::Handle);
            }
            Instr::HandleNull => self.push(ValType::Handle),
            Instr::HandleEq => {
                self.pop_expect(ValType::Handle)?;
                self.pop_expect(ValType::Handle)?;
                self.push(ValType::I32);
            }
            Instr::HandleGetOffset => {
                self.pop_expect(ValType::Handle)?;
                self.push(ValType::I32);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_module;
    use super::*;

    fn validate_text(text: &str) -> Result<TypedModule, Vec<TypeError>> {
        validate(&parse_module(text).unwrap().module)
    }

    fn first_kind(r: Result<TypedModule, Vec<TypeError>>) -> TypeErrorKind {
        r.unwrap_err()[0].kind
    }

    #[test]
    fn integer_where_handle_is_a_forge_attempt() {
        let r = validate_text("(module m (func f (result i32) (i32.const 0) (segment.load32)))");
        assert_eq!(first_kind(r), TypeErrorKind::HandleForgeAttempt);
    }

    #[test]
    fn handle_where_integer_is_a_plain_mismatch() {
        let r = validate_text(
            "(module m (func f (result i32) (i32.const 1) (handle.null) (i32.add)))",
        );
        assert_eq!(first_kind(r), TypeErrorKind::TypeMismatch);
    }

    #[test]
    fn empty_stack_pop_underflows() {
        let r = validate_text("(module m (func f (drop)))");
        assert_eq!(first_kind(r), TypeErrorKind::StackUnderflow);
    }

    #[test]
    fn branch_past_nesting_depth_rejected() {
        let r = validate_text("(module m (func f (block (br 2))))");
        assert_eq!(first_kind(r), TypeErrorKind::BadBranchDepth);
    }

    #[test]
    fn call_index_out_of_range_rejected() {
        let r = validate_text("(module m (func f (call 3)))");
        assert_eq!(first_kind(r), TypeErrorKind::UnknownFunction);
    }

    #[test]
    fn local_index_out_of_range_rejected() {
        let r = validate_text("(module m (func f (param i32) (local.get 1) (drop)))");
        assert_eq!(first_kind(r), TypeErrorKind::UnknownLocal);
    }

    #[test]
    fn if_with_result_requires_else() {
        let r = validate_text(
            "(module m (func f (result i32) (i32.const 1) (if (result i32) (then (i32.const 2)))))",
        );
        assert_eq!(first_kind(r), TypeErrorKind::TypeMismatch);
    }

    #[test]
    fn code_after_return_is_checked_polymorphically() {
        validate_text("(module m (func f (result i32) (i32.const 1) (return) (drop) (i32.add)))")
            .unwrap();
    }

    #[test]
    fn branch_to_loop_header_carries_no_values() {
        validate_text(
            "(module m (func f (result i32)
               (loop (result i32)
                 (i32.const 0)
                 (br_if 0)
                 (i32.const 7))))",
        )
        .unwrap();
        // A block label, by contrast, demands its result on the stack.
        let r = validate_text(
            "(module m (func f (result i32)
               (block (result i32)
                 (br 0))))",
        );
        assert_eq!(first_kind(r), TypeErrorKind::StackUnderflow);
    }

    #[test]
    fn every_broken_function_reports_once() {
        let errs = validate_text("(module m (func a (drop)) (func b (call 9)))").unwrap_err();
        assert_eq!(errs.len(), 2);
        assert_eq!(errs[0].func.as_deref(), Some("a"));
        assert_eq!(errs[1].func.as_deref(), Some("b"));
    }

    #[test]
    fn leftover_stack_values_rejected() {
        let r = validate_text("(module m (func f (i32.const 1)))");
        assert_eq!(first_kind(r), TypeErrorKind::TypeMismatch);
    }

    #[test]
    fn signatures_cover_imports_then_functions() {
        let tm = validate_text(
            "(module m
               (import ctx \"get\" (func get (result handle)))
               (func use_it (result i32)
                 (call get)
                 (segment.load32)))",
        )
        .unwrap();
        assert_eq!(tm.sigs.len(), 2);
        assert_eq!(tm.sigs[0].result, Some(ValType::Handle));
        assert_eq!(tm.sigs[1].result, Some(ValType::I32));
    }

    #[test]
    fn duplicate_names_in_hand_built_module_rejected() {
        let mut m = parse_module("(module m (func a) (func b))").unwrap().module;
        m.funcs[1].name = "a".into();
        assert_eq!(first_kind(validate(&m)), TypeErrorKind::DuplicateName);
    }

    #[test]
    fn ordinal_points_at_offending_instruction() {
        let text = "(module m (func f (i32.const 0) (segment.load32) (drop)))";
        let parsed = parse_module(text).unwrap();
        let errs = validate(&parsed.module).unwrap_err();
        let span = parsed.instr_span(0, errs[0].ordinal.unwrap()).unwrap();
        let col = span.col as usize;
        assert_eq!(&text[col - 1..col + "(segment.load32".len() - 1], "(segment.load32");
    }

    #[test]
    fn store_width_types_match_loads() {
        let r = validate_text(
            "(module m (func f
               (i32.const 8) (segment.new)
               (i32.const 5) (segment.store64)))",
        );
        assert_eq!(first_kind(r), TypeErrorKind::TypeMismatch);
        validate_text(
            "(module m (func f (local handle)
               (i32.const 8) (segment.new) (local.set 0)
               (local.get 0) (i64.const 5) (segment.store64)
               (local.get 0) (segment.free)))",
        )
        .unwrap();
    }
}
