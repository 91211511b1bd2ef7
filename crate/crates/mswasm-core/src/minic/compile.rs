//! MiniC code generation for the safe and unsafe backends.
//!
//! Both compilers expect a program that already passed `check`; they panic
//! on ill-typed input rather than reporting it twice.
//!
//! Safe backend: `ptr` is a handle, `malloc(n)` allocates a fresh segment
//! of `4 * n` bytes, element arithmetic moves the handle's offset, `free`
//! frees the segment. Memory safety is entirely the machine's.
//!
//! Unsafe backend: `ptr` is an i32 byte offset into one flat 64 KiB
//! segment. Every function grows a hidden trailing handle parameter for
//! that segment, and each exported function gets a thin exported wrapper
//! that allocates the heap, initializes it, and calls through, so outside
//! callers never see the hidden parameter. Heap layout: the cursor for
//! never-used space lives at offset 0, the free list head at offset 4,
//! and each block is a 4-byte size header followed by a payload of
//! `max(8, size)` bytes, so the first allocation lands at offset 12.
//! `__malloc` with `reuse_freelist` recycles the most recently freed
//! exact-fit block; without it freed blocks are abandoned and `__free`
//! does nothing. A run is meant to drive one exported entry: every
//! wrapper call sets up a heap of its own, and only the first becomes
//! the logical heap when the module is shadowed.

use std::collections::HashMap;

use super::{BinOp, Expr, FuncDecl, SourceProgram, Stmt, StmtKind, Ty};
use crate::ir::{FuncDef, I32Op, ImportDef, Instr, ModuleDef, ValType};

pub const FLAT_HEAP_BYTES: i32 = 65536;

pub fn compile_safe(program: &SourceProgram, module_id: &str) -> ModuleDef {
    compile(program, module_id, Target::Safe)
}

pub fn compile_unsafe(
    program: &SourceProgram,
    module_id: &str,
    reuse_freelist: bool,
) -> ModuleDef {
    compile(
        program,
        module_id,
        Target::Unsafe {
            reuse: reuse_freelist,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Safe,
    Unsafe { reuse: bool },
}

impl Target {
    fn is_unsafe(&self) -> bool {
        matches!(self, Target::Unsafe { .. })
    }

    fn val_ty(&self, ty: Ty) -> ValType {
        match (self, ty) {
            (Target::Safe, Ty::Int) => ValType::I32,
            (Target::Safe, Ty::Ptr) => ValType::Handle,
            (Target::Unsafe { .. }, _) => ValType::I32,
        }
    }
}

type MiniSig = (Vec<Ty>, Option<Ty>);

#[derive(Debug, Clone, Copy)]
struct Callee {
    index: u32,
    is_extern: bool,
}

/// Joint function index space bookkeeping for `call` emission.
struct Layout {
    callees: HashMap<String, Callee>,
    heap_init: u32,
    malloc: u32,
    free: u32,
}

fn compile(program: &SourceProgram, module_id: &str, target: Target) -> ModuleDef {
    let mut sigs: HashMap<String, MiniSig> = HashMap::new();
    for e in &program.externs {
        sigs.insert(
            e.name.clone(),
            (e.params.iter().map(|p| p.ty).collect(), e.ret),
        );
    }
    for f in &program.funcs {
        sigs.insert(
            f.name.clone(),
            (f.params.iter().map(|p| p.ty).collect(), f.ret),
        );
    }

    let imports: Vec<ImportDef> = program
        .externs
        .iter()
        .map(|e| ImportDef {
            module: e.from.clone(),
            name: e.name.clone(),
            local: e.name.clone(),
            params: e.params.iter().map(|p| target.val_ty(p.ty)).collect(),
            result: e.ret.map(|t| target.val_ty(t)),
        })
        .collect();
    let ext = imports.len() as u32;
    let mut layout = Layout {
        callees: HashMap::new(),
        heap_init: ext,
        malloc: ext + 1,
        free: ext + 2,
    };
    for (i, e) in program.externs.iter().enumerate() {
        layout.callees.insert(
            e.name.clone(),
            Callee {
                index: i as u32,
                is_extern: true,
            },
        );
    }

    let mut funcs = Vec::new();
    match target {
        Target::Safe => {
            for (i, f) in program.funcs.iter().enumerate() {
                layout.callees.insert(
                    f.name.clone(),
                    Callee {
                        index: ext + i as u32,
                        is_extern: false,
                    },
                );
            }
            for f in &program.funcs {
                funcs.push(compile_func(
                    f,
                    target,
                    &layout,
                    &sigs,
                    f.name.clone(),
                    f.exported,
                ));
            }
        }
        Target::Unsafe { reuse } => {
            let impl_base = ext + 3;
            for (i, f) in program.funcs.iter().enumerate() {
                layout.callees.insert(
                    f.name.clone(),
                    Callee {
                        index: impl_base + i as u32,
                        is_extern: false,
                    },
                );
            }
            funcs.push(heap_init_func());
            funcs.push(malloc_func(reuse));
            funcs.push(free_func(reuse));
            for f in &program.funcs {
                funcs.push(compile_func(
                    f,
                    target,
                    &layout,
                    &sigs,
                    format!("__impl_{}", f.name),
                    false,
                ));
            }
            for f in program.funcs.iter().filter(|f| f.exported) {
                funcs.push(wrapper_func(f, target, &layout));
            }
        }
    }
    ModuleDef {
        id: module_id.to_string(),
        imports,
        funcs,
    }
}

fn compile_func(
    f: &FuncDecl,
    target: Target,
    layout: &Layout,
    sigs: &HashMap<String, MiniSig>,
    name: String,
    exported: bool,
) -> FuncDef {
    let mut params: Vec<ValType> = f.params.iter().map(|p| target.val_ty(p.ty)).collect();
    let flat_slot = if target.is_unsafe() {
        params.push(ValType::Handle);
        Some(f.params.len() as u32)
    } else {
        None
    };
    let mut fc = FuncCompiler {
        target,
        layout,
        sigs,
        vars: HashMap::new(),
        locals: Vec::new(),
        next_slot: params.len() as u32,
        flat_slot,
    };
    for (i, p) in f.params.iter().enumerate() {
        fc.vars.insert(p.name.clone(), (i as u32, p.ty));
    }
    let mut body = Vec::new();
    fc.block(&f.body, &mut body);
    // Executions that fall off the end return the type's zero.
    match f.ret {
        Some(Ty::Int) => {
            body.push(Instr::I32Const(0));
            body.push(Instr::Return);
        }
        Some(Ty::Ptr) => {
            body.push(match target {
                Target::Safe => Instr::HandleNull,
                Target::Unsafe { .. } => Instr::I32Const(0),
            });
            body.push(Instr::Return);
        }
        None => body.push(Instr::Return),
    }
    FuncDef {
        name,
        exported,
        params,
        result: f.ret.map(|t| target.val_ty(t)),
        locals: fc.locals,
        body,
    }
}

struct FuncCompiler<'a> {
    target: Target,
    layout: &'a Layout,
    sigs: &'a HashMap<String, MiniSig>,
    /// Live bindings: name to (slot, source type).
    vars: HashMap<String, (u32, Ty)>,
    /// Declared locals beyond the parameters.
    locals: Vec<ValType>,
    next_slot: u32,
    flat_slot: Option<u32>,
}

impl FuncCompiler<'_> {
    fn flat(&self) -> u32 {
        self.flat_slot.expect("flat slot exists in the unsafe target")
    }

    fn block(&mut self, stmts: &[Stmt], out: &mut Vec<Instr>) {
        let mut declared = Vec::new();
        for s in stmts {
            if let StmtKind::Decl { name, .. } = &s.kind {
                declared.push(name.clone());
            }
            self.stmt(s, out);
        }
        for name in declared {
            self.vars.remove(&name);
        }
    }

    fn stmt(&mut self, stmt: &Stmt, out: &mut Vec<Instr>) {
        match &stmt.kind {
            StmtKind::Decl { ty, name, init } => {
                let slot = self.next_slot;
                self.next_slot += 1;
                self.locals.push(self.target.val_ty(*ty));
                if let Some(init) = init {
                    self.expr(init, out);
                    out.push(Instr::LocalSet(slot));
                }
                self.vars.insert(name.clone(), (slot, *ty));
            }
            StmtKind::Assign { name, value } => {
                self.expr(value, out);
                out.push(Instr::LocalSet(self.vars[name].0));
            }
            StmtKind::Store { target, value } => {
                match self.target {
                    Target::Safe => self.expr(target, out),
                    Target::Unsafe { .. } => {
                        out.push(Instr::LocalGet(self.flat()));
                        self.expr(target, out);
                        out.push(Instr::HandleAdd);
                    }
                }
                self.expr(value, out);
                out.push(Instr::SegStore(4));
            }
            StmtKind::Free(e) => {
                self.expr(e, out);
                match self.target {
                    Target::Safe => out.push(Instr::FreeSegment),
                    Target::Unsafe { .. } => {
                        out.push(Instr::LocalGet(self.flat()));
                        out.push(Instr::Call(self.layout.free));
                    }
                }
            }
            StmtKind::Print(e) => {
                self.expr(e, out);
                out.push(Instr::Print);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.expr(cond, out);
                let mut then_ir = Vec::new();
                self.block(then_body, &mut then_ir);
                let mut else_ir = Vec::new();
                self.block(else_body, &mut else_ir);
                out.push(Instr::If {
                    result: None,
                    then_body: then_ir,
                    else_body: else_ir,
                });
            }
            StmtKind::While { cond, body } => {
                let mut inner = Vec::new();
                self.expr(cond, &mut inner);
                inner.push(Instr::I32Const(0));
                inner.push(Instr::I32Bin(I32Op::Eq));
                inner.push(Instr::BrIf(1));
                self.block(body, &mut inner);
                inner.push(Instr::Br(0));
                out.push(Instr::Block {
                    result: None,
                    body: vec![Instr::Loop {
                        result: None,
                        body: inner,
                    }],
                });
            }
            StmtKind::Return(value) => {
                if let Some(e) = value {
                    self.expr(e, out);
                }
                out.push(Instr::Return);
            }
            StmtKind::CallStmt(name, args) => {
                let ret = self.call(name, args, out);
                if ret.is_some() {
                    out.push(Instr::Drop);
                }
            }
        }
    }

    fn expr(&self, e: &Expr, out: &mut Vec<Instr>) {
        match e {
            Expr::Num(v) => out.push(Instr::I32Const(*v)),
            Expr::Var(name) => out.push(Instr::LocalGet(self.vars[name].0)),
            Expr::Null => out.push(match self.target {
                Target::Safe => Instr::HandleNull,
                Target::Unsafe { .. } => Instr::I32Const(0),
            }),
            Expr::Load(p) => {
                match self.target {
                    Target::Safe => self.expr(p, out),
                    Target::Unsafe { .. } => {
                        out.push(Instr::LocalGet(self.flat()));
                        self.expr(p, out);
                        out.push(Instr::HandleAdd);
                    }
                }
                out.push(Instr::SegLoad(4));
            }
            Expr::Malloc(n) => {
                self.expr(n, out);
                out.push(Instr::I32Const(4));
                out.push(Instr::I32Bin(I32Op::Mul));
                match self.target {
                    Target::Safe => out.push(Instr::NewSegment),
                    Target::Unsafe { .. } => {
                        out.push(Instr::LocalGet(self.flat()));
                        out.push(Instr::Call(self.layout.malloc));
                    }
                }
            }
            Expr::Call(name, args) => {
                self.call(name, args, out);
            }
            Expr::Bin(op, a, b) => self.bin(*op, a, b, out),
        }
    }

    fn bin(&self, op: BinOp, a: &Expr, b: &Expr, out: &mut Vec<Instr>) {
        let ptr_lhs = self.ty_of(a) == Some(Ty::Ptr);
        match (op, ptr_lhs) {
            (BinOp::Add, true) => {
                self.expr(a, out);
                self.expr(b, out);
                out.push(Instr::I32Const(4));
                out.push(Instr::I32Bin(I32Op::Mul));
                out.push(match self.target {
                    Target::Safe => Instr::HandleAdd,
                    Target::Unsafe { .. } => Instr::I32Bin(I32Op::Add),
                });
            }
            (BinOp::Sub, true) => {
                self.expr(a, out);
                match self.target {
                    Target::Safe => {
                        out.push(Instr::I32Const(0));
                        self.expr(b, out);
                        out.push(Instr::I32Const(4));
                        out.push(Instr::I32Bin(I32Op::Mul));
                        out.push(Instr::I32Bin(I32Op::Sub));
                        out.push(Instr::HandleAdd);
                    }
                    Target::Unsafe { .. } => {
                        self.expr(b, out);
                        out.push(Instr::I32Const(4));
                        out.push(Instr::I32Bin(I32Op::Mul));
                        out.push(Instr::I32Bin(I32Op::Sub));
                    }
                }
            }
            (BinOp::Eq | BinOp::Ne, true) => {
                self.expr(a, out);
                self.expr(b, out);
                match self.target {
                    Target::Safe => {
                        out.push(Instr::HandleEq);
                        if op == BinOp::Ne {
                            out.push(Instr::I32Const(0));
                            out.push(Instr::I32Bin(I32Op::Eq));
                        }
                    }
                    Target::Unsafe { .. } => {
                        out.push(Instr::I32Bin(if op == BinOp::Eq {
                            I32Op::Eq
                        } else {
                            I32Op::Ne
                        }));
                    }
                }
            }
            _ => {
                self.expr(a, out);
                self.expr(b, out);
                out.push(Instr::I32Bin(match op {
                    BinOp::Add => I32Op::Add,
                    BinOp::Sub => I32Op::Sub,
                    BinOp::Mul => I32Op::Mul,
                    BinOp::Div => I32Op::DivS,
                    BinOp::Rem => I32Op::RemS,
                    BinOp::Eq => I32Op::Eq,
                    BinOp::Ne => I32Op::Ne,
                    BinOp::Lt => I32Op::LtS,
                    BinOp::Gt => I32Op::GtS,
                    BinOp::Le => I32Op::LeS,
                    BinOp::Ge => I32Op::GeS,
                }));
            }
        }
    }

    fn call(&self, name: &str, args: &[Expr], out: &mut Vec<Instr>) -> Option<Ty> {
        for a in args {
            self.expr(a, out);
        }
        let callee = self.layout.callees[name];
        if self.target.is_unsafe() && !callee.is_extern {
            out.push(Instr::LocalGet(self.flat()));
        }
        out.push(Instr::Call(callee.index));
        self.sigs[name].1
    }

    /// Result type of a checked expression; `None` only for void calls.
    fn ty_of(&self, e: &Expr) -> Option<Ty> {
        match e {
            Expr::Num(_) => Some(Ty::Int),
            Expr::Null | Expr::Malloc(_) => Some(Ty::Ptr),
            Expr::Var(name) => Some(self.vars[name].1),
            Expr::Load(_) => Some(Ty::Int),
            Expr::Call(name, _) => self.sigs[name].1,
            Expr::Bin(op, a, _) => match op {
                BinOp::Add | BinOp::Sub => self.ty_of(a),
                _ => Some(Ty::Int),
            },
        }
    }
}

/// `(module_entry args..)` wrapper: builds a fresh heap, then tail-calls
/// the hidden-parameter implementation.
fn wrapper_func(f: &FuncDecl, target: Target, layout: &Layout) -> FuncDef {
    let params: Vec<ValType> = f.params.iter().map(|p| target.val_ty(p.ty)).collect();
    let flat = params.len() as u32;
    let mut body = vec![
        Instr::I32Const(FLAT_HEAP_BYTES),
        Instr::NewSegment,
        Instr::LocalSet(flat),
        Instr::LocalGet(flat),
        Instr::Call(layout.heap_init),
    ];
    for i in 0..params.len() as u32 {
        body.push(Instr::LocalGet(i));
    }
    body.push(Instr::LocalGet(flat));
    body.push(Instr::Call(layout.callees[&f.name].index));
    body.push(Instr::Return);
    FuncDef {
        name: f.name.clone(),
        exported: true,
        params,
        result: f.ret.map(|t| target.val_ty(t)),
        locals: vec![ValType::Handle],
        body,
    }
}

/// Heap metadata: cursor at offset 0 starts at 8, free list head at
/// offset 4 starts empty.
fn heap_init_func() -> FuncDef {
    FuncDef {
        name: "__heap_init".into(),
        exported: false,
        params: vec![ValType::Handle],
        result: None,
        locals: vec![],
        body: vec![
            Instr::LocalGet(0),
            Instr::I32Const(8),
            Instr::SegStore(4),
            Instr::LocalGet(0),
            Instr::I32Const(4),
            Instr::HandleAdd,
            Instr::I32Const(0),
            Instr::SegStore(4),
            Instr::Return,
        ],
    }
}

/// `__malloc(bytes, heap) -> offset`, 0 on failure. Slots: 0 bytes,
/// 1 heap, 2 pad; the bump path uses `cur`/`ret` slots passed in so the
/// free list variant can put its scan state in between.
fn malloc_func(reuse: bool) -> FuncDef {
    let mut body = vec![
        Instr::LocalGet(0),
        Instr::I32Const(0),
        Instr::I32Bin(I32Op::LeS),
        Instr::If {
            result: None,
            then_body: vec![Instr::I32Const(0), Instr::Return],
            else_body: vec![],
        },
        Instr::LocalGet(0),
        Instr::I32Const(8),
        Instr::I32Bin(I32Op::LtS),
        Instr::If {
            result: None,
            then_body: vec![Instr::I32Const(8), Instr::LocalSet(2)],
            else_body: vec![Instr::LocalGet(0), Instr::LocalSet(2)],
        },
    ];
    let locals;
    if reuse {
        // Slots: 3 cur_header, 4 prev_link_offset, 5 next, 6 size.
        body.extend(freelist_scan());
        body.extend(bump_tail(7, 8));
        locals = vec![ValType::I32; 7];
    } else {
        body.extend(bump_tail(3, 4));
        locals = vec![ValType::I32; 3];
    }
    FuncDef {
        name: "__malloc".into(),
        exported: false,
        params: vec![ValType::I32, ValType::Handle],
        result: Some(ValType::I32),
        locals,
        body,
    }
}

/// Exact-fit search. A free block's header keeps its size; the first
/// payload word holds the link to the next free header.
fn freelist_scan() -> Vec<Instr> {
    vec![
        // cur = heap[4], prev_link = 4
        Instr::LocalGet(1),
        Instr::I32Const(4),
        Instr::HandleAdd,
        Instr::SegLoad(4),
        Instr::LocalSet(3),
        Instr::I32Const(4),
        Instr::LocalSet(4),
        Instr::Block {
            result: None,
            body: vec![Instr::Loop {
                result: None,
                body: vec![
                    Instr::LocalGet(3),
                    Instr::I32Const(0),
                    Instr::I32Bin(I32Op::Eq),
                    Instr::BrIf(1),
                    // size = heap[cur]
                    Instr::LocalGet(1),
                    Instr::LocalGet(3),
                    Instr::HandleAdd,
                    Instr::SegLoad(4),
                    Instr::LocalSet(6),
                    // next = heap[cur + 4]
                    Instr::LocalGet(1),
                    Instr::LocalGet(3),
                    Instr::I32Const(4),
                    Instr::I32Bin(I32Op::Add),
                    Instr::HandleAdd,
                    Instr::SegLoad(4),
                    Instr::LocalSet(5),
                    // exact fit: unlink and hand out the payload
                    Instr::LocalGet(6),
                    Instr::LocalGet(2),
                    Instr::I32Bin(I32Op::Eq),
                    Instr::If {
                        result: None,
                        then_body: vec![
                            Instr::LocalGet(1),
                            Instr::LocalGet(4),
                            Instr::HandleAdd,
                            Instr::LocalGet(5),
                            Instr::SegStore(4),
                            Instr::LocalGet(3),
                            Instr::I32Const(4),
                            Instr::I32Bin(I32Op::Add),
                            Instr::Return,
                        ],
                        else_body: vec![],
                    },
                    // advance: prev_link = cur + 4, cur = next
                    Instr::LocalGet(3),
                    Instr::I32Const(4),
                    Instr::I32Bin(I32Op::Add),
                    Instr::LocalSet(4),
                    Instr::LocalGet(5),
                    Instr::LocalSet(3),
                    Instr::Br(0),
                ],
            }],
        },
    ]
}

/// Carve a block from never-used space, or fail with 0 when the heap is
/// full.
fn bump_tail(cur: u32, ret: u32) -> Vec<Instr> {
    vec![
        // cur = heap[0]
        Instr::LocalGet(1),
        Instr::SegLoad(4),
        Instr::LocalSet(cur),
        // cur + 4 + pad > heap size: out of memory
        Instr::LocalGet(cur),
        Instr::I32Const(4),
        Instr::I32Bin(I32Op::Add),
        Instr::LocalGet(2),
        Instr::I32Bin(I32Op::Add),
        Instr::I32Const(FLAT_HEAP_BYTES),
        Instr::I32Bin(I32Op::GtS),
        Instr::If {
            result: None,
            then_body: vec![Instr::I32Const(0), Instr::Return],
            else_body: vec![],
        },
        // header
        Instr::LocalGet(1),
        Instr::LocalGet(cur),
        Instr::HandleAdd,
        Instr::LocalGet(2),
        Instr::SegStore(4),
        // ret = cur + 4
        Instr::LocalGet(cur),
        Instr::I32Const(4),
        Instr::I32Bin(I32Op::Add),
        Instr::LocalSet(ret),
        // cursor moves past the payload
        Instr::LocalGet(1),
        Instr::LocalGet(ret),
        Instr::LocalGet(2),
        Instr::I32Bin(I32Op::Add),
        Instr::SegStore(4),
        Instr::LocalGet(ret),
        Instr::Return,
    ]
}

/// `__free(offset, heap)`. The default variant abandons the block; the
/// free list variant pushes it onto the head for exact-fit reuse.
fn free_func(reuse: bool) -> FuncDef {
    let body = if reuse {
        vec![
            Instr::LocalGet(0),
            Instr::I32Const(0),
            Instr::I32Bin(I32Op::LeS),
            Instr::If {
                result: None,
                then_body: vec![Instr::Return],
                else_body: vec![],
            },
            // payload word 0 = old head
            Instr::LocalGet(1),
            Instr::LocalGet(0),
            Instr::HandleAdd,
            Instr::LocalGet(1),
            Instr::I32Const(4),
            Instr::HandleAdd,
            Instr::SegLoad(4),
            Instr::SegStore(4),
            // head = this block's header
            Instr::LocalGet(1),
            Instr::I32Const(4),
            Instr::HandleAdd,
            Instr::LocalGet(0),
            Instr::I32Const(4),
            Instr::I32Bin(I32Op::Sub),
            Instr::SegStore(4),
            Instr::Return,
        ]
    } else {
        vec![Instr::Return]
    };
    FuncDef {
        name: "__free".into(),
        exported: false,
        params: vec![ValType::I32, ValType::Handle],
        result: None,
        locals: vec![],
        body,
    }
}
