//! Linking and lowering.
//!
//! The machine does not walk instruction trees. Linking takes a set of
//! validated modules, resolves every import against another module's
//! export, and flattens each function body into straight-line code with
//! explicit jump targets. Branches record statically how far the operand
//! stack unwinds and whether a value rides along, so the runtime never
//! consults block structure.
//!
//! Functions from all modules share one program-wide index space; each
//! linked function remembers the module it came from, which is how events
//! and cross-module handle movements get attributed later.

use std::collections::HashMap;

use crate::ir::{FuncSig, I32Op, Instr, TypedModule, ValType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    I32Const(i32),
    I64Const(i64),
    I32Bin(I32Op),
    LocalGet(u32),
    LocalSet(u32),
    Drop,
    Print,
    /// Unconditional jump within the function.
    Jump(usize),
    /// Pops an i32 and jumps when it is zero.
    JumpIfZero(usize),
    /// Structured branch: optionally save the top value, cut the operand
    /// stack back to `unwind_to`, restore the value, go to `target`.
    Br {
        target: usize,
        unwind_to: usize,
        carries: bool,
    },
    /// Pops an i32 condition first, then acts like `Br` when it is
    /// non-zero.
    BrIf {
        target: usize,
        unwind_to: usize,
        carries: bool,
    },
    /// Call by program-wide function index.
    Call(usize),
    Return,
    NewSegment,
    FreeSegment,
    SegLoad(u8),
    SegStore(u8),
    HandleAdd,
    HandleSlice,
    HandleNull,
    HandleEq,
    HandleGetOffset,
}

#[derive(Debug, Clone)]
pub struct LinkedFunc {
    /// Id of the module the function was defined in.
    pub module: String,
    pub name: String,
    pub params: Vec<ValType>,
    pub result: Option<ValType>,
    pub locals: Vec<ValType>,
    pub code: Vec<Op>,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub funcs: Vec<LinkedFunc>,
    /// `(module id, exported name)` to program-wide function index.
    pub exports: HashMap<(String, String), usize>,
}

impl Program {
    pub fn find_export(&self, module: &str, name: &str) -> Option<usize> {
        self.exports.get(&(module.to_string(), name.to_string())).copied()
    }
}

#[derive(Debug, Clone)]
pub enum LinkError {
    DuplicateModule(String),
    /// No module with the id an import names.
    NoSuchModule { importer: String, wanted: String },
    /// Module exists but exports nothing by that name.
    NoSuchExport { importer: String, module: String, name: String },
    /// Export exists with a different signature.
    SignatureMismatch { importer: String, module: String, name: String },
}

impl std::fmt::Display for LinkError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkError::DuplicateModule(id) => write!(f, "two modules share the id `{id}`"),
            LinkError::NoSuchModule { importer, wanted } => {
                write!(f, "`{importer}` imports from `{wanted}`, which is not being linked")
            }
            LinkError::NoSuchExport { importer, module, name } => {
                write!(f, "`{importer}` imports `{name}` but `{module}` does not export it")
            }
            LinkError::SignatureMismatch { importer, module, name } => {
                write!(
                    f,
                    "`{importer}` imports `{module}.{name}` with a different signature than it is exported with"
                )
            }
        }
    }
}

impl std::error::Error for LinkError {}

/// Link validated modules into one runnable program. Later modules may
/// import from earlier ones and vice versa; only the module ids must be
/// unique.
pub fn link(modules: &[TypedModule]) -> Result<Program, LinkError> {
    // Global index, signature, and visibility of every defined function.
    let mut defined: HashMap<(String, String), (usize, FuncSig, bool)> = HashMap::new();
    let mut global_sigs: Vec<FuncSig> = Vec::new();
    let mut bases = Vec::with_capacity(modules.len());
    for tm in modules {
        let m = &tm.module;
        bases.push(global_sigs.len());
        for f in &m.funcs {
            let key = (m.id.clone(), f.name.clone());
            if defined.contains_key(&key) {
                // Per-module duplicates were rejected at validation, so a
                // collision here is two modules with one id.
                return Err(LinkError::DuplicateModule(m.id.clone()));
            }
            defined.insert(key, (global_sigs.len(), f.sig(), f.exported));
            global_sigs.push(f.sig());
        }
    }
    // Distinct module ids with zero functions still collide; check ids too.
    {
        let mut ids = std::collections::BTreeSet::new();
        for tm in modules {
            if !ids.insert(&tm.module.id) {
                return Err(LinkError::DuplicateModule(tm.module.id.clone()));
            }
        }
    }

    let mut funcs = Vec::with_capacity(global_sigs.len());
    let mut exports = HashMap::new();
    for (mi, tm) in modules.iter().enumerate() {
        let m = &tm.module;
        // Map the module's joint (imports-first) index space to program
        // indices.
        let mut local_to_global = Vec::with_capacity(m.func_count() as usize);
        for imp in &m.imports {
            let key = (imp.module.clone(), imp.name.clone());
            let Some((idx, sig, exported)) = defined.get(&key) else {
                if modules.iter().any(|t| t.module.id == imp.module) {
                    return Err(LinkError::NoSuchExport {
                        importer: m.id.clone(),
                        module: imp.module.clone(),
                        name: imp.name.clone(),
                    });
                }
                return Err(LinkError::NoSuchModule {
                    importer: m.id.clone(),
                    wanted: imp.module.clone(),
                });
            };
            if !*exported {
                return Err(LinkError::NoSuchExport {
                    importer: m.id.clone(),
                    module: imp.module.clone(),
                    name: imp.name.clone(),
                });
            }
            if sig.params != imp.params || sig.result != imp.result {
                return Err(LinkError::SignatureMismatch {
                    importer: m.id.clone(),
                    module: imp.module.clone(),
                    name: imp.name.clone(),
                });
            }
            local_to_global.push(*idx);
        }
        for i in 0..m.funcs.len() {
            local_to_global.push(bases[mi] + i);
        }

        for f in &m.funcs {
            if f.exported {
                exports.insert((m.id.clone(), f.name.clone()), funcs.len());
            }
            funcs.push(LinkedFunc {
                module: m.id.clone(),
                name: f.name.clone(),
                params: f.params.clone(),
                result: f.result,
                locals: f.locals.clone(),
                code: lower_body(&f.body, &local_to_global, &global_sigs),
            });
        }
    }
    Ok(Program { funcs, exports })
}

/// One branchable label while lowering: where `br` jumps, how much stack
/// survives, and whether the label's result rides across.
struct Label {
    /// Jump target if known (loop head), or a patch list filled at close.
    target: Result<usize, Vec<usize>>,
    unwind_to: usize,
    carries: bool,
}

struct Lowerer<'a> {
    code: Vec<Op>,
    labels: Vec<Label>,
    local_to_global: &'a [usize],
    sigs: &'a [FuncSig],
    /// Operand stack height, tracked like the validator does; only used to
    /// stamp `unwind_to` on branches.
    height: usize,
    /// Set after an unconditional branch; heights in dead code are clamped
    /// rather than meaningful, which is fine because the ops never run.
    dead: bool,
}

fn lower_body(body: &[Instr], local_to_global: &[usize], sigs: &[FuncSig]) -> Vec<Op> {
    let mut lw = Lowerer {
        code: Vec::new(),
        labels: Vec::new(),
        local_to_global,
        sigs,
        height: 0,
        dead: false,
    };
    for i in body {
        lw.lower(i);
    }
    lw.code.push(Op::Return);
    lw.code
}

impl Lowerer<'_> {
    fn emit(&mut self, op: Op) -> usize {
        self.code.push(op);
        self.code.len() - 1
    }

    fn push_n(&mut self, n: usize) {
        self.height += n;
    }

    fn pop_n(&mut self, n: usize) {
        // Dead code can underflow its block's entry height; clamping keeps
        // the bookkeeping total.
        self.height = self.height.saturating_sub(n);
    }

    fn open_label(&mut self, carries: bool, loop_head: Option<usize>) {
        self.labels.push(Label {
            target: match loop_head {
                Some(ip) => Ok(ip),
                None => Err(Vec::new()),
            },
            unwind_to: self.height,
            carries,
        });
    }

    fn close_label(&mut self) {
        let label = self.labels.pop().expect("balanced labels");
        if let Err(patches) = label.target {
            let here = self.code.len();
            for at in patches {
                match &mut self.code[at] {
                    Op::Br { target, .. } | Op::BrIf { target, .. } => *target = here,
                    other => unreachable!("patched a non-branch {other:?}"),
                }
            }
        }
    }

    fn branch(&mut self, depth: u32, conditional: bool) {
        let idx = self.labels.len() - 1 - depth as usize;
        let unwind_to = self.labels[idx].unwind_to;
        let carries = self.labels[idx].carries;
        let target = *self.labels[idx].target.as_ref().unwrap_or(&usize::MAX);
        let op = if conditional {
            Op::BrIf {
                target,
                unwind_to,
                carries,
            }
        } else {
            Op::Br {
                target,
                unwind_to,
                carries,
            }
        };
        let at = self.emit(op);
        if let Err(patches) = &mut self.labels[idx].target {
            patches.push(at);
        }
    }

    fn lower(&mut self, instr: &Instr) {
        match instr {
            Instr::I32Const(v) => {
                self.emit(Op::I32Const(*v));
                self.push_n(1);
            }
            Instr::I64Const(v) => {
                self.emit(Op::I64Const(*v));
                self.push_n(1);
            }
            Instr::I32Bin(op) => {
                self.emit(Op::I32Bin(*op));
                self.pop_n(1);
            }
            Instr::LocalGet(i) => {
                self.emit(Op::LocalGet(*i));
                self.push_n(1);
            }
            Instr::LocalSet(i) => {
                self.emit(Op::LocalSet(*i));
                self.pop_n(1);
            }
            Instr::Drop => {
                self.emit(Op::Drop);
                self.pop_n(1);
            }
            Instr::Print => {
                self.emit(Op::Print);
                self.pop_n(1);
            }
            Instr::Block { result, body } => {
                let was_dead = self.dead;
                self.open_label(result.is_some(), None);
                for i in body {
                    self.lower(i);
                }
                let entry = self.labels.last().unwrap().unwind_to;
                self.close_label();
                self.height = entry;
                self.dead = was_dead;
                if result.is_some() {
                    self.push_n(1);
                }
            }
            Instr::Loop { result, body } => {
                let was_dead = self.dead;
                let head = self.code.len();
                self.open_label(false, Some(head));
                for i in body {
                    self.lower(i);
                }
                let entry = self.labels.last().unwrap().unwind_to;
                self.close_label();
                self.height = entry;
                self.dead = was_dead;
                if result.is_some() {
                    self.push_n(1);
                }
            }
            Instr::If {
                result,
                then_body,
                else_body,
            } => {
                let was_dead = self.dead;
                self.pop_n(1);
                let entry = self.height;
                let cond_jump = self.emit(Op::JumpIfZero(usize::MAX));
                for i in then_body {
                    self.lower(i);
                }
                self.dead = was_dead;
                self.height = entry;
                if else_body.is_empty() {
                    let here = self.code.len();
                    self.code[cond_jump] = Op::JumpIfZero(here);
                } else {
                    let skip_else = self.emit(Op::Jump(usize::MAX));
                    let else_start = self.code.len();
                    self.code[cond_jump] = Op::JumpIfZero(else_start);
                    for i in else_body {
                        self.lower(i);
                    }
                    self.dead = was_dead;
                    self.height = entry;
                    let here = self.code.len();
                    self.code[skip_else] = Op::Jump(here);
                }
                if result.is_some() {
                    self.push_n(1);
                }
            }
            Instr::Br(n) => {
                self.branch(*n, false);
                self.dead = true;
            }
            Instr::BrIf(n) => {
                self.pop_n(1);
                self.branch(*n, true);
            }
            Instr::Return => {
                self.emit(Op::Return);
                self.dead = true;
            }
            Instr::Call(local_idx) => {
                let global = self.local_to_global[*local_idx as usize];
                self.emit(Op::Call(global));
                let sig = &self.sigs[global];
                self.pop_n(sig.params.len());
                if sig.result.is_some() {
                    self.push_n(1);
                }
            }
            Instr::NewSegment => {
                self.emit(Op::NewSegment);
            }
            Instr::FreeSegment => {
                self.emit(Op::FreeSegment);
                self.pop_n(1);
            }
            Instr::SegLoad(w) => {
                self.emit(Op::SegLoad(*w));
            }
            Instr::SegStore(w) => {
                self.emit(Op::SegStore(*w));
                self.pop_n(2);
            }
            Instr::HandleAdd => {
                self.emit(Op::HandleAdd);
                self.pop_n(1);
            }
            Instr::HandleSlice => {
                self.emit(Op::HandleSlice);
                self.pop_n(2);
            }
            Instr::HandleNull => {
                self.emit(Op::HandleNull);
                self.push_n(1);
            }
            Instr::HandleEq => {
                self.emit(Op::HandleEq);
                self.pop_n(1);
            }
            Instr::HandleGetOffset => {
                self.emit(Op::HandleGetOffset);
            }
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate};

    fn typed(text: &str) -> TypedModule {
        validate(&parse_module(text).unwrap().module).unwrap()
    }

    #[test]
    fn single_module_links_with_direct_indices() {
        let tm = typed(
            "(module m
               (func helper (result i32) (i32.const 5))
               (func main (export \"main\") (result i32) (call helper)))",
        );
        let prog = link(&[tm]).unwrap();
        assert_eq!(prog.funcs.len(), 2);
        let main = prog.find_export("m", "main").unwrap();
        assert!(prog.funcs[main].code.contains(&Op::Call(0)));
    }

    #[test]
    fn imports_resolve_across_modules() {
        let provider = typed(
            "(module lib
               (func get (export \"get\") (result i32) (i32.const 9)))",
        );
        let consumer = typed(
            "(module app
               (import lib \"get\" (func get (result i32)))
               (func main (export \"main\") (result i32) (call get)))",
        );
        let prog = link(&[provider, consumer]).unwrap();
        let main = prog.find_export("app", "main").unwrap();
        assert!(prog.funcs[main].code.contains(&Op::Call(0)));
        assert_eq!(prog.funcs[0].module, "lib");
    }

    #[test]
    fn missing_module_and_missing_export_are_distinct_errors() {
        let consumer = typed(
            "(module app
               (import lib \"get\" (func get (result i32)))
               (func main (export \"main\") (result i32) (call get)))",
        );
        match link(&[consumer.clone()]) {
            Err(LinkError::NoSuchModule { wanted, .. }) => assert_eq!(wanted, "lib"),
            other => panic!("{other:?}"),
        }
        let wrong = typed("(module lib (func other (export \"other\")))");
        match link(&[wrong, consumer]) {
            Err(LinkError::NoSuchExport { name, .. }) => assert_eq!(name, "get"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unexported_functions_cannot_be_imported() {
        let provider = typed("(module lib (func hidden (result i32) (i32.const 1)))");
        let consumer = typed(
            "(module app
               (import lib \"hidden\" (func hidden (result i32)))
               (func main (export \"main\") (result i32) (call hidden)))",
        );
        assert!(matches!(
            link(&[provider, consumer]),
            Err(LinkError::NoSuchExport { .. })
        ));
    }

    #[test]
    fn signature_mismatch_is_caught_at_link_time() {
        let provider = typed("(module lib (func get (export \"get\") (result i32) (i32.const 1)))");
        let consumer = typed(
            "(module app
               (import lib \"get\" (func get (result handle)))
               (func main (export \"main\") (call get) (segment.free)))",
        );
        assert!(matches!(
            link(&[provider, consumer]),
            Err(LinkError::SignatureMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_module_ids_rejected() {
        let a = typed("(module m (func f (export \"f\")))");
        let b = typed("(module m (func g (export \"g\")))");
        assert!(matches!(link(&[a, b]), Err(LinkError::DuplicateModule(_))));
    }

    #[test]
    fn block_branches_lower_to_forward_jumps() {
        let tm = typed(
            "(module m
               (func f (export \"f\") (result i32)
                 (block (result i32)
                   (i32.const 1)
                   (br 0))))",
        );
        let prog = link(&[tm]).unwrap();
        let code = &prog.funcs[0].code;
        // const, br past the block end, return
        let br_at = code
            .iter()
            .position(|op| matches!(op, Op::Br { .. }))
            .unwrap();
        match code[br_at] {
            Op::Br {
                target,
                unwind_to,
                carries,
            } => {
                assert_eq!(target, br_at + 1);
                assert_eq!(unwind_to, 0);
                assert!(carries);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn loop_branches_jump_backward() {
        let tm = typed(
            "(module m
               (func f (export \"f\")
                 (loop
                   (i32.const 0)
                   (br_if 0))))",
        );
        let prog = link(&[tm]).unwrap();
        let code = &prog.funcs[0].code;
        let head = 0;
        match code[1] {
            Op::BrIf { target, carries, .. } => {
                assert_eq!(target, head);
                assert!(!carries);
            }
            ref other => panic!("{other:?}"),
        }
    }
}
