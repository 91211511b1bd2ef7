//! Trace-emitting interpreter.
//!
//! Linked programs run on a small frame machine over the segment store.
//! Every segment allocation, free, and byte access is appended to an event
//! trace that the monitors can replay afterwards; each access records the
//! observed state of every byte it touched.
//!
//! Two modes. `Enforce` is the checked semantics: an access must use a
//! valid handle, to a live segment, inside the handle's bounds, and the
//! machine traps the moment one of those fails. `Observe` drops the bounds
//! and liveness checks and lets the run continue over stale memory so that
//! the trace, not the machine, is what exposes the misbehavior; only
//! dereferencing the null handle or leaving allocated memory entirely
//! still stops it.
//!
//! Traps that correspond to a memory event carry the index of that event,
//! which is always the last one recorded. Traps with no event (null
//! dereference, bad slice bounds, arithmetic, fuel) carry the trace length
//! at the time, one past the end.

pub mod link;
mod shadow;
pub mod store;

pub use link::{link, LinkError, LinkedFunc, Op, Program};
pub use store::{AddrMode, Handle, SegmentInfo, Store};

use crate::ir::{I32Op, ValType};
use crate::trace::{Access, Event, Provenance};
use shadow::{taint_handle_add, taint_i32_bin, AccessDisposition, ShadowTracker, Taint};

pub const DEFAULT_FUEL: u64 = 1_000_000;

/// Call frames beyond this depth exhaust the machine.
const MAX_CALL_DEPTH: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    I32(i32),
    I64(i64),
    Handle(Handle),
}

impl Value {
    pub fn type_of(&self) -> ValType {
        match self {
            Value::I32(_) => ValType::I32,
            Value::I64(_) => ValType::I64,
            Value::Handle(_) => ValType::Handle,
        }
    }

    fn as_i32(self) -> i32 {
        match self {
            Value::I32(x) => x,
            _ => panic!("type-checked code put a non-i32 where an i32 was expected"),
        }
    }

    fn as_i64(self) -> i64 {
        match self {
            Value::I64(x) => x,
            _ => panic!("type-checked code put a non-i64 where an i64 was expected"),
        }
    }

    fn as_handle(self) -> Handle {
        match self {
            Value::Handle(h) => h,
            _ => panic!("type-checked code put a non-handle where a handle was expected"),
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::I32(x) => write!(f, "{x}"),
            Value::I64(x) => write!(f, "{x}"),
            Value::Handle(h) => write!(f, "{h}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Enforce,
    Observe,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Enforce => "enforce",
            Mode::Observe => "observe",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enforce" => Ok(Mode::Enforce),
            "observe" => Ok(Mode::Observe),
            _ => Err(format!("unknown mode {s:?}, expected enforce or observe")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapKind {
    OutOfBounds,
    UseAfterFree,
    DoubleFree,
    NullDeref,
    InvalidSlice,
    DivByZero,
    FuelExhausted,
}

impl TrapKind {
    pub fn name(&self) -> &'static str {
        match self {
            TrapKind::OutOfBounds => "out-of-bounds",
            TrapKind::UseAfterFree => "use-after-free",
            TrapKind::DoubleFree => "double-free",
            TrapKind::NullDeref => "null-deref",
            TrapKind::InvalidSlice => "invalid-slice",
            TrapKind::DivByZero => "div-by-zero",
            TrapKind::FuelExhausted => "fuel-exhausted",
        }
    }
}

/// A stopped run. `event_index` is the trace entry the trap belongs to
/// when it has one, or the trace length when it does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trap {
    pub kind: TrapKind,
    pub event_index: usize,
}

impl std::fmt::Display for Trap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "trap: {}", self.kind.name())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub addr_mode: AddrMode,
    pub fuel: u64,
    /// Module whose first segment is treated as a flat heap and whose
    /// helper calls are rewritten into logical allocation events.
    pub shadow_module: Option<String>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            mode: Mode::Enforce,
            addr_mode: AddrMode::Fresh,
            fuel: DEFAULT_FUEL,
            shadow_module: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossDirection {
    Call,
    Return,
}

/// A handle moving between modules, logged at every call and return whose
/// caller and callee live in different modules.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub from: String,
    pub to: String,
    pub func: String,
    pub direction: CrossDirection,
    pub handle: Handle,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub result: Result<Option<Value>, Trap>,
    pub trace: Vec<Event>,
    pub prints: Vec<i32>,
    pub crossings: Vec<Crossing>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SetupError {
    NoSuchEntry { module: String, name: String },
    EntrySignature { module: String, name: String },
    ArgCount { expected: usize, got: usize },
}

impl std::fmt::Display for SetupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SetupError::NoSuchEntry { module, name } => {
                write!(f, "no exported function {module}.{name}")
            }
            SetupError::EntrySignature { module, name } => {
                write!(f, "entry {module}.{name} takes non-i32 parameters")
            }
            SetupError::ArgCount { expected, got } => {
                write!(f, "entry expects {expected} arguments, got {got}")
            }
        }
    }
}

/// Runs `module.entry` with the given i32 arguments.
pub fn run(
    program: &Program,
    module: &str,
    entry: &str,
    args: &[i32],
    config: &RunConfig,
) -> Result<RunOutcome, SetupError> {
    let fi = program
        .find_export(module, entry)
        .ok_or_else(|| SetupError::NoSuchEntry {
            module: module.to_string(),
            name: entry.to_string(),
        })?;
    let func = &program.funcs[fi];
    if func.params.iter().any(|t| *t != ValType::I32) {
        return Err(SetupError::EntrySignature {
            module: module.to_string(),
            name: entry.to_string(),
        });
    }
    if func.params.len() != args.len() {
        return Err(SetupError::ArgCount {
            expected: func.params.len(),
            got: args.len(),
        });
    }
    let mut locals: Vec<Slot> = args.iter().map(|&v| slot(Value::I32(v))).collect();
    for ty in &func.locals {
        locals.push(zero_slot(*ty));
    }
    let mut machine = Machine {
        program,
        mode: config.mode,
        store: Store::new(config.addr_mode),
        frames: vec![Frame {
            func: fi,
            ip: 0,
            locals,
            stack: Vec::new(),
        }],
        trace: Vec::new(),
        prints: Vec::new(),
        crossings: Vec::new(),
        fuel: config.fuel,
        shadow: config.shadow_module.as_deref().map(ShadowTracker::new),
    };
    let result = machine.exec();
    Ok(RunOutcome {
        result,
        trace: machine.trace,
        prints: machine.prints,
        crossings: machine.crossings,
    })
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    value: Value,
    taint: Taint,
}

fn slot(value: Value) -> Slot {
    Slot {
        value,
        taint: Taint::None,
    }
}

fn zero_slot(ty: ValType) -> Slot {
    slot(match ty {
        ValType::I32 => Value::I32(0),
        ValType::I64 => Value::I64(0),
        ValType::Handle => Value::Handle(Handle::null()),
    })
}

#[derive(Debug)]
struct Frame {
    func: usize,
    ip: usize,
    locals: Vec<Slot>,
    stack: Vec<Slot>,
}

struct Machine<'a> {
    program: &'a Program,
    mode: Mode,
    store: Store,
    frames: Vec<Frame>,
    trace: Vec<Event>,
    prints: Vec<i32>,
    crossings: Vec<Crossing>,
    fuel: u64,
    shadow: Option<ShadowTracker>,
}

impl<'a> Machine<'a> {
    fn exec(&mut self) -> Result<Option<Value>, Trap> {
        loop {
            if self.fuel == 0 {
                return Err(self.trap_now(TrapKind::FuelExhausted));
            }
            self.fuel -= 1;
            let frame = self.frames.last_mut().expect("a running frame");
            let op = self.program.funcs[frame.func].code[frame.ip];
            frame.ip += 1;
            match op {
                Op::I32Const(x) => self.push(slot(Value::I32(x))),
                Op::I64Const(x) => self.push(slot(Value::I64(x))),
                Op::I32Bin(binop) => {
                    let b = self.pop();
                    let a = self.pop();
                    let (x, y) = (a.value.as_i32(), b.value.as_i32());
                    let r = i32_bin(binop, x, y).map_err(|k| self.trap_now(k))?;
                    self.push(Slot {
                        value: Value::I32(r),
                        taint: taint_i32_bin(binop, a.taint, b.taint),
                    });
                }
                Op::LocalGet(i) => {
                    let s = self.frames.last().unwrap().locals[i as usize];
                    self.push(s);
                }
                Op::LocalSet(i) => {
                    let s = self.pop();
                    self.frames.last_mut().unwrap().locals[i as usize] = s;
                }
                Op::Drop => {
                    self.pop();
                }
                Op::Print => {
                    let v = self.pop().value.as_i32();
                    self.prints.push(v);
                }
                Op::Jump(t) => self.frames.last_mut().unwrap().ip = t,
                Op::JumpIfZero(t) => {
                    if self.pop().value.as_i32() == 0 {
                        self.frames.last_mut().unwrap().ip = t;
                    }
                }
                Op::Br {
                    target,
                    unwind_to,
                    carries,
                } => self.branch(target, unwind_to, carries),
                Op::BrIf {
                    target,
                    unwind_to,
                    carries,
                } => {
                    if self.pop().value.as_i32() != 0 {
                        self.branch(target, unwind_to, carries);
                    }
                }
                Op::Call(g) => self.call(g)?,
                Op::Return => {
                    if let Some(done) = self.ret() {
                        return Ok(done);
                    }
                }
                Op::NewSegment => self.new_segment()?,
                Op::FreeSegment => self.free_segment()?,
                Op::SegLoad(w) => self.access(w, false)?,
                Op::SegStore(w) => self.access(w, true)?,
                Op::HandleAdd => {
                    let d = self.pop();
                    let hs = self.pop();
                    let mut h = hs.value.as_handle();
                    h.offset = h.offset.wrapping_add(d.value.as_i32());
                    self.push(Slot {
                        value: Value::Handle(h),
                        taint: taint_handle_add(hs.taint, d.taint),
                    });
                }
                Op::HandleSlice => {
                    let len = self.pop().value.as_i32();
                    let start = self.pop().value.as_i32();
                    let hs = self.pop();
                    let h = hs.value.as_handle();
                    if !h.valid {
                        return Err(self.trap_now(TrapKind::NullDeref));
                    }
                    if start < 0 || len < 0 || start as i64 + len as i64 > h.bound as i64 {
                        return Err(self.trap_now(TrapKind::InvalidSlice));
                    }
                    let sliced = Handle {
                        color: h.color,
                        base: h.base + start as i64,
                        offset: 0,
                        bound: len as u32,
                        valid: true,
                    };
                    self.push(Slot {
                        value: Value::Handle(sliced),
                        taint: hs.taint,
                    });
                }
                Op::HandleNull => self.push(slot(Value::Handle(Handle::null()))),
                Op::HandleEq => {
                    let b = self.pop().value.as_handle();
                    let a = self.pop().value.as_handle();
                    self.push(slot(Value::I32((a == b) as i32)));
                }
                Op::HandleGetOffset => {
                    let h = self.pop().value.as_handle();
                    self.push(slot(Value::I32(h.offset)));
                }
            }
        }
    }

    fn push(&mut self, s: Slot) {
        self.frames.last_mut().unwrap().stack.push(s);
    }

    fn pop(&mut self) -> Slot {
        self.frames
            .last_mut()
            .unwrap()
            .stack
            .pop()
            .expect("type-checked code ran the operand stack dry")
    }

    fn current_module(&self) -> &'a str {
        &self.program.funcs[self.frames.last().unwrap().func].module
    }

    /// A trap with no event of its own.
    fn trap_now(&self, kind: TrapKind) -> Trap {
        Trap {
            kind,
            event_index: self.trace.len(),
        }
    }

    /// Records the access event, then traps pointing at it.
    fn emit_and_trap(&mut self, access: Option<Access>, is_write: bool, kind: TrapKind) -> Trap {
        match access {
            Some(a) => {
                self.trace.push(wrap_access(a, is_write));
                Trap {
                    kind,
                    event_index: self.trace.len() - 1,
                }
            }
            None => self.trap_now(kind),
        }
    }

    fn branch(&mut self, target: usize, unwind_to: usize, carries: bool) {
        let frame = self.frames.last_mut().unwrap();
        let carried = if carries {
            Some(
                frame
                    .stack
                    .pop()
                    .expect("type-checked code branched without its carried value"),
            )
        } else {
            None
        };
        frame.stack.truncate(unwind_to);
        if let Some(v) = carried {
            frame.stack.push(v);
        }
        frame.ip = target;
    }

    fn call(&mut self, g: usize) -> Result<(), Trap> {
        if self.frames.len() >= MAX_CALL_DEPTH {
            return Err(self.trap_now(TrapKind::FuelExhausted));
        }
        let callee = &self.program.funcs[g];
        let caller = self.frames.last_mut().unwrap();
        let caller_module = &self.program.funcs[caller.func].module;
        let at = caller
            .stack
            .len()
            .checked_sub(callee.params.len())
            .expect("type-checked code called with too few arguments");
        let args = caller.stack.split_off(at);
        if *caller_module != callee.module {
            for s in &args {
                if let Value::Handle(h) = s.value {
                    self.crossings.push(Crossing {
                        from: caller_module.clone(),
                        to: callee.module.clone(),
                        func: callee.name.clone(),
                        direction: CrossDirection::Call,
                        handle: h,
                    });
                }
            }
        }
        let first_arg = match args.first() {
            Some(Slot {
                value: Value::I32(x),
                ..
            }) => Some(*x),
            _ => None,
        };
        if let Some(tracker) = self.shadow.as_mut() {
            if let Some(ev) = tracker.on_call(&callee.module, &callee.name, first_arg) {
                self.trace.push(ev);
            }
        }
        let mut locals = args;
        for ty in &callee.locals {
            locals.push(zero_slot(*ty));
        }
        self.frames.push(Frame {
            func: g,
            ip: 0,
            locals,
            stack: Vec::new(),
        });
        Ok(())
    }

    /// Pops the current frame. Returns the program result when it was the
    /// last one.
    fn ret(&mut self) -> Option<Option<Value>> {
        let mut frame = self.frames.pop().expect("a running frame");
        let func = &self.program.funcs[frame.func];
        let mut result = if func.result.is_some() {
            Some(
                frame
                    .stack
                    .pop()
                    .expect("type-checked code returned without its result"),
            )
        } else {
            None
        };
        let ret_i32 = match result {
            Some(Slot {
                value: Value::I32(x),
                ..
            }) => Some(x),
            _ => None,
        };
        if let Some(tracker) = self.shadow.as_mut() {
            let store = &mut self.store;
            if let Some((ev, taint)) =
                tracker.on_return(&func.module, &func.name, ret_i32, || store.fresh_color())
            {
                self.trace.push(ev);
                if let Some(s) = result.as_mut() {
                    s.taint = taint;
                }
            }
        }
        match self.frames.last_mut() {
            None => Some(result.map(|s| s.value)),
            Some(caller) => {
                let caller_module = &self.program.funcs[caller.func].module;
                if let Some(s) = result {
                    if *caller_module != func.module {
                        if let Value::Handle(h) = s.value {
                            self.crossings.push(Crossing {
                                from: func.module.clone(),
                                to: caller_module.clone(),
                                func: func.name.clone(),
                                direction: CrossDirection::Return,
                                handle: h,
                            });
                        }
                    }
                    caller.stack.push(s);
                }
                None
            }
        }
    }

    fn new_segment(&mut self) -> Result<(), Trap> {
        let n = self.pop().value.as_i32();
        if n < 0 {
            return Err(self.trap_now(TrapKind::InvalidSlice));
        }
        let h = self.store.alloc(n as u32);
        let owner = self.current_module().to_string();
        let suppress = self
            .shadow
            .as_mut()
            .is_some_and(|t| t.on_new_segment(&owner, &h));
        if !suppress {
            self.trace.push(Event::Alloc {
                color: h.color,
                addr: h.base,
                size: n as u32,
                owner,
            });
        }
        self.push(slot(Value::Handle(h)));
        Ok(())
    }

    fn free_segment(&mut self) -> Result<(), Trap> {
        let h = self.pop().value.as_handle();
        if !h.valid {
            return Err(self.trap_now(TrapKind::NullDeref));
        }
        let suppress = self
            .shadow
            .as_mut()
            .is_some_and(|t| t.on_free_segment(h.color));
        let was_live = self.store.free(h.color).is_ok();
        if !suppress {
            let owner = self.current_module().to_string();
            self.trace.push(Event::Free {
                color: h.color,
                owner,
            });
            if !was_live && self.mode == Mode::Enforce {
                return Err(Trap {
                    kind: TrapKind::DoubleFree,
                    event_index: self.trace.len() - 1,
                });
            }
        }
        Ok(())
    }

    fn access(&mut self, width: u8, is_write: bool) -> Result<(), Trap> {
        let val = if is_write { Some(self.pop()) } else { None };
        let hs = self.pop();
        let h = hs.value.as_handle();
        if !h.valid {
            return Err(self.trap_now(TrapKind::NullDeref));
        }
        let addr = h.addr();
        let size = width as u32;
        let disposition = match self.shadow.as_mut() {
            Some(t) => t.on_access(is_write, &h, hs.taint, addr, size),
            None => AccessDisposition::Physical,
        };
        let access = match disposition {
            AccessDisposition::Suppressed => None,
            AccessDisposition::Logical(a) => Some(a),
            AccessDisposition::Physical => Some(Access {
                color: h.color,
                addr,
                size,
                prov: Provenance::Legit,
                owner: self.current_module().to_string(),
                loc: self.store.loc_of(h.color, addr, size),
            }),
        };
        match self.mode {
            Mode::Enforce => {
                if !self.store.color_live(h.color) {
                    return Err(self.emit_and_trap(access, is_write, TrapKind::UseAfterFree));
                }
                if h.offset < 0 || h.offset as i64 + size as i64 > h.bound as i64 {
                    return Err(self.emit_and_trap(access, is_write, TrapKind::OutOfBounds));
                }
            }
            Mode::Observe => {
                if !self.store.range_exists(addr, size) {
                    return Err(self.emit_and_trap(access, is_write, TrapKind::OutOfBounds));
                }
            }
        }
        if let Some(a) = access {
            self.trace.push(wrap_access(a, is_write));
        }
        if is_write {
            let bytes = encode(width, val.unwrap().value);
            self.store.write(addr, &bytes);
        } else {
            let bytes = self.store.read(addr, size);
            self.push(slot(decode(width, &bytes)));
        }
        Ok(())
    }
}

fn wrap_access(a: Access, is_write: bool) -> Event {
    if is_write {
        Event::Write(a)
    } else {
        Event::Read(a)
    }
}

fn encode(width: u8, v: Value) -> Vec<u8> {
    match width {
        1 => vec![v.as_i32() as u8],
        4 => v.as_i32().to_le_bytes().to_vec(),
        8 => v.as_i64().to_le_bytes().to_vec(),
        _ => unreachable!("lowering only produces widths 1, 4, 8"),
    }
}

fn decode(width: u8, bytes: &[u8]) -> Value {
    match width {
        1 => Value::I32(bytes[0] as i32),
        4 => Value::I32(i32::from_le_bytes(bytes.try_into().unwrap())),
        8 => Value::I64(i64::from_le_bytes(bytes.try_into().unwrap())),
        _ => unreachable!("lowering only produces widths 1, 4, 8"),
    }
}

fn i32_bin(op: I32Op, a: i32, b: i32) -> Result<i32, TrapKind> {
    Ok(match op {
        I32Op::Add => a.wrapping_add(b),
        I32Op::Sub => a.wrapping_sub(b),
        I32Op::Mul => a.wrapping_mul(b),
        I32Op::DivS => {
            if b == 0 || (a == i32::MIN && b == -1) {
                return Err(TrapKind::DivByZero);
            }
            a / b
        }
        I32Op::RemS => {
            if b == 0 {
                return Err(TrapKind::DivByZero);
            }
            a.wrapping_rem(b)
        }
        I32Op::And => a & b,
        I32Op::Or => a | b,
        I32Op::Xor => a ^ b,
        I32Op::Shl => a.wrapping_shl(b as u32),
        I32Op::ShrS => a.wrapping_shr(b as u32),
        I32Op::Eq => (a == b) as i32,
        I32Op::Ne => (a != b) as i32,
        I32Op::LtS => (a < b) as i32,
        I32Op::GtS => (a > b) as i32,
        I32Op::LeS => (a <= b) as i32,
        I32Op::GeS => (a >= b) as i32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate};
    use crate::trace::{audit, LocState};

    fn build(srcs: &[&str]) -> Program {
        let typed: Vec<_> = srcs
            .iter()
            .map(|s| validate(&parse_module(s).expect("parse").module).expect("validate"))
            .collect();
        link(&typed).expect("link")
    }

    fn run_one(src: &str, entry: &str, args: &[i32], config: &RunConfig) -> RunOutcome {
        let program = build(&[src]);
        let module = parse_module(src).unwrap().module.id;
        run(&program, &module, entry, args, config).expect("setup")
    }

    fn ok_i32(outcome: &RunOutcome) -> i32 {
        match outcome.result {
            Ok(Some(Value::I32(x))) => x,
            ref other => panic!("expected an i32 result, got {other:?}"),
        }
    }

    #[test]
    fn arithmetic_locals_and_calls() {
        let src = r#"
            (module m
              (func dbl (param i32) (result i32)
                (local.get 0) (i32.const 2) (i32.mul))
              (func main (export "main") (param i32) (result i32)
                (local i32)
                (local.get 0) (call dbl) (local.set 1)
                (local.get 1) (i32.const 3) (i32.add)))
        "#;
        let out = run_one(src, "main", &[5], &RunConfig::default());
        assert_eq!(ok_i32(&out), 13);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn loop_sums_first_five_naturals() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local i32) (local i32)
                (block
                  (loop
                    (local.get 0) (i32.const 5) (i32.ge_s) (br_if 1)
                    (local.get 0) (i32.const 1) (i32.add) (local.set 0)
                    (local.get 1) (local.get 0) (i32.add) (local.set 1)
                    (br 0)))
                (local.get 1)))
        "#;
        assert_eq!(ok_i32(&run_one(src, "main", &[], &RunConfig::default())), 15);
    }

    #[test]
    fn block_results_survive_branches() {
        let src = r#"
            (module m
              (func main (export "main") (param i32) (result i32)
                (block (result i32)
                  (i32.const 1)
                  (i32.const 2)
                  (i32.const 3)
                  (local.get 0)
                  (br_if 0)
                  (i32.add) (i32.add))))
        "#;
        let cfg = RunConfig::default();
        // Branch taken: the carried 3 survives, the 1 and 2 are unwound.
        assert_eq!(ok_i32(&run_one(src, "main", &[1], &cfg)), 3);
        // Branch not taken: everything still on the stack gets summed.
        assert_eq!(ok_i32(&run_one(src, "main", &[0], &cfg)), 6);
    }

    #[test]
    fn segment_store_and_load_round_trip() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 8) (segment.new) (local.set 0)
                (local.get 0) (i32.const 305419896) (segment.store32)
                (local.get 0) (i32.const 300) (segment.store8)
                (local.get 0) (segment.load8)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        // 305419896 is 0x12345678; the byte store then overwrites the low
        // byte with 300 & 0xff.
        assert_eq!(ok_i32(&out), 300 & 0xff);
        assert_eq!(out.trace.len(), 4);
        assert!(audit(&out.trace).is_ok());
    }

    #[test]
    fn wide_loads_use_little_endian_order() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 8) (segment.new) (local.set 0)
                (local.get 0) (i32.const 258) (segment.store32)
                (local.get 0) (segment.load8)))
        "#;
        // 258 is 0x0102, so the first byte is 2.
        assert_eq!(ok_i32(&run_one(src, "main", &[], &RunConfig::default())), 2);
    }

    #[test]
    fn out_of_bounds_store_traps_and_records_the_event() {
        let src = r#"
            (module m
              (func main (export "main")
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (i32.const 2) (handle.add)
                (i32.const 9) (segment.store32)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::OutOfBounds);
        assert_eq!(trap.event_index, out.trace.len() - 1);
        match &out.trace[trap.event_index] {
            Event::Write(a) => {
                assert_eq!(a.size, 4);
                assert_eq!(
                    a.loc,
                    vec![
                        LocState::Same,
                        LocState::Same,
                        LocState::Unallocated,
                        LocState::Unallocated
                    ]
                );
            }
            other => panic!("expected the overrunning write, got {other:?}"),
        }
    }

    #[test]
    fn negative_offset_traps_out_of_bounds() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (i32.const 4) (segment.new)
                (i32.const -1) (handle.add)
                (segment.load8)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        assert_eq!(out.result.unwrap_err().kind, TrapKind::OutOfBounds);
    }

    #[test]
    fn use_after_free_traps_in_enforce_mode() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (segment.free)
                (local.get 0) (segment.load32)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::UseAfterFree);
        match &out.trace[trap.event_index] {
            Event::Read(a) => assert!(a.loc.iter().all(|l| matches!(l, LocState::Freed(_)))),
            other => panic!("expected the dangling read, got {other:?}"),
        }
    }

    #[test]
    fn observe_mode_reads_stale_bytes_through_a_dangling_handle() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (i32.const 7) (segment.store32)
                (local.get 0) (segment.free)
                (local.get 0) (segment.load32)))
        "#;
        let cfg = RunConfig {
            mode: Mode::Observe,
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(ok_i32(&out), 7);
        let last = out.trace.last().unwrap();
        match last {
            Event::Read(a) => assert!(a.loc.iter().all(|l| matches!(l, LocState::Freed(_)))),
            other => panic!("expected the stale read, got {other:?}"),
        }
        assert!(audit(&out.trace).is_ok());
    }

    #[test]
    fn double_free_traps_in_enforce_and_continues_in_observe() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (segment.free)
                (local.get 0) (segment.free)
                (i32.const 1)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::DoubleFree);
        assert_eq!(out.trace.len(), 3);
        assert_eq!(trap.event_index, 2);

        let cfg = RunConfig {
            mode: Mode::Observe,
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(ok_i32(&out), 1);
        assert_eq!(out.trace.len(), 3);
        assert!(audit(&out.trace).is_ok());
    }

    #[test]
    fn null_handle_dereference_traps_without_an_event() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (handle.null) (segment.load32)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::NullDeref);
        assert_eq!(trap.event_index, 0);
        assert!(out.trace.is_empty());
        // Observe mode still refuses the null handle.
        let cfg = RunConfig {
            mode: Mode::Observe,
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(out.result.unwrap_err().kind, TrapKind::NullDeref);
    }

    #[test]
    fn slices_narrow_bounds_and_reject_bad_ranges() {
        let src = r#"
            (module m
              (func main (export "main") (param i32) (param i32) (result i32)
                (local handle)
                (i32.const 8) (segment.new) (local.set 2)
                (local.get 2) (i32.const 6) (handle.add) (i32.const 99) (segment.store8)
                (local.get 2) (local.get 0) (local.get 1) (handle.slice)
                (i32.const 2) (handle.add)
                (segment.load8)))
        "#;
        let out = run_one(src, "main", &[4, 3], &RunConfig::default());
        // Slice [4, 7), then offset 2 lands on absolute byte 6.
        assert_eq!(ok_i32(&out), 99);
        // Start past the end is rejected before any access happens.
        let out = run_one(src, "main", &[7, 2], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::InvalidSlice);
        // The slice bound is authoritative: offset 2 in a [4, 6) slice is
        // out of bounds even though the segment has a byte there.
        let out = run_one(src, "main", &[4, 2], &RunConfig::default());
        assert_eq!(out.result.unwrap_err().kind, TrapKind::OutOfBounds);
    }

    #[test]
    fn negative_segment_size_is_rejected() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (i32.const -1) (segment.new) (drop) (i32.const 0)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        assert_eq!(out.result.unwrap_err().kind, TrapKind::InvalidSlice);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn handle_identity_is_structural() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (i32.const 1) (handle.add)
                (local.get 0) (handle.eq)
                (local.get 0) (local.get 0) (handle.eq)
                (i32.add)))
        "#;
        // Offset-shifted copy differs, identical copies match: 0 + 1.
        assert_eq!(ok_i32(&run_one(src, "main", &[], &RunConfig::default())), 1);
    }

    #[test]
    fn division_traps_on_zero_and_overflow() {
        let src = r#"
            (module m
              (func main (export "main") (param i32) (param i32) (result i32)
                (local.get 0) (local.get 1) (i32.div_s)))
        "#;
        let cfg = RunConfig::default();
        assert_eq!(ok_i32(&run_one(src, "main", &[7, 2], &cfg)), 3);
        let out = run_one(src, "main", &[7, 0], &cfg);
        assert_eq!(out.result.unwrap_err().kind, TrapKind::DivByZero);
        let out = run_one(src, "main", &[i32::MIN, -1], &cfg);
        assert_eq!(out.result.unwrap_err().kind, TrapKind::DivByZero);
    }

    #[test]
    fn fuel_exhaustion_stops_infinite_loops() {
        let src = r#"
            (module m
              (func main (export "main")
                (loop (br 0))))
        "#;
        let cfg = RunConfig {
            fuel: 1000,
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(out.result.unwrap_err().kind, TrapKind::FuelExhausted);
    }

    #[test]
    fn runaway_recursion_is_cut_off() {
        let src = r#"
            (module m
              (func main (export "main")
                (call main)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        assert_eq!(out.result.unwrap_err().kind, TrapKind::FuelExhausted);
    }

    #[test]
    fn print_collects_values_in_order() {
        let src = r#"
            (module m
              (func main (export "main")
                (i32.const 3) (print)
                (i32.const 1) (print)
                (i32.const 2) (print)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        assert_eq!(out.result, Ok(None));
        assert_eq!(out.prints, vec![3, 1, 2]);
    }

    #[test]
    fn handles_crossing_module_boundaries_are_logged() {
        let lib = r#"
            (module lib
              (func make (export "make") (result handle)
                (i32.const 4) (segment.new))
              (func poke (export "poke") (param handle)
                (local.get 0) (i32.const 5) (segment.store8)))
        "#;
        let app = r#"
            (module app
              (import lib "make" (func make (result handle)))
              (import lib "poke" (func poke (param handle)))
              (func main (export "main") (result i32)
                (local handle)
                (call make) (local.set 0)
                (local.get 0) (call poke)
                (local.get 0) (segment.load8)))
        "#;
        let program = build(&[lib, app]);
        let out = run(&program, "app", "main", &[], &RunConfig::default()).unwrap();
        assert_eq!(ok_i32(&out), 5);
        assert_eq!(out.crossings.len(), 2);
        assert_eq!(out.crossings[0].direction, CrossDirection::Return);
        assert_eq!(out.crossings[0].from, "lib");
        assert_eq!(out.crossings[0].to, "app");
        assert_eq!(out.crossings[0].func, "make");
        assert_eq!(out.crossings[1].direction, CrossDirection::Call);
        assert_eq!(out.crossings[1].from, "app");
        assert_eq!(out.crossings[1].to, "lib");
        assert_eq!(out.crossings[1].func, "poke");
        // Both crossings carry the same segment.
        assert_eq!(out.crossings[0].handle.color, out.crossings[1].handle.color);
        // Owner attribution follows the accessing module.
        match &out.trace[1] {
            Event::Write(a) => assert_eq!(a.owner, "lib"),
            other => panic!("expected lib's write, got {other:?}"),
        }
        match &out.trace[2] {
            Event::Read(a) => assert_eq!(a.owner, "app"),
            other => panic!("expected app's read, got {other:?}"),
        }
    }

    #[test]
    fn trap_errors_keep_the_partial_trace() {
        let src = r#"
            (module m
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 2) (segment.new) (local.set 0)
                (local.get 0) (i32.const 1) (segment.store8)
                (i32.const 1) (i32.const 0) (i32.div_s)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        let trap = out.result.unwrap_err();
        assert_eq!(trap.kind, TrapKind::DivByZero);
        // Alloc and write happened before the trap; the trap itself has no
        // event so its index is one past the end.
        assert_eq!(out.trace.len(), 2);
        assert_eq!(trap.event_index, 2);
    }

    #[test]
    fn address_mode_controls_reuse_of_freed_space() {
        let src = r#"
            (module m
              (func main (export "main")
                (local handle)
                (i32.const 4) (segment.new) (local.set 0)
                (local.get 0) (segment.free)
                (i32.const 4) (segment.new) (local.set 0)))
        "#;
        let alloc_addrs = |mode: AddrMode| {
            let cfg = RunConfig {
                addr_mode: mode,
                ..RunConfig::default()
            };
            let out = run_one(src, "main", &[], &cfg);
            out.trace
                .iter()
                .filter_map(|e| match e {
                    Event::Alloc { addr, .. } => Some(*addr),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
        let fresh = alloc_addrs(AddrMode::Fresh);
        assert_ne!(fresh[0], fresh[1]);
        let reuse = alloc_addrs(AddrMode::Reuse);
        assert_eq!(reuse[0], reuse[1]);
    }

    #[test]
    fn entry_errors_are_reported_before_running() {
        let src = r#"
            (module m
              (func main (export "main") (param i32) (result i32)
                (local.get 0))
              (func hidden (param i32) (result i32)
                (local.get 0))
              (func takes_handle (export "takes_handle") (param handle)
                (local.get 0) (drop)))
        "#;
        let program = build(&[src]);
        let cfg = RunConfig::default();
        assert!(matches!(
            run(&program, "m", "nope", &[], &cfg),
            Err(SetupError::NoSuchEntry { .. })
        ));
        assert!(matches!(
            run(&program, "m", "hidden", &[1], &cfg),
            Err(SetupError::NoSuchEntry { .. })
        ));
        assert!(matches!(
            run(&program, "m", "main", &[], &cfg),
            Err(SetupError::ArgCount {
                expected: 1,
                got: 0
            })
        ));
        assert!(matches!(
            run(&program, "m", "takes_handle", &[], &cfg),
            Err(SetupError::EntrySignature { .. })
        ));
    }

    #[test]
    fn shadowed_module_produces_logical_events() {
        let src = r#"
            (module um
              (func __malloc (param i32) (param handle) (result i32)
                (i32.const 12))
              (func main (export "main") (result i32)
                (local handle) (local i32)
                (i32.const 65536) (segment.new) (local.set 0)
                (i32.const 8) (local.get 0) (call __malloc) (local.set 1)
                (local.get 0) (local.get 1) (handle.add) (i32.const 42) (segment.store32)
                (local.get 0) (local.get 1) (handle.add) (segment.load32)))
        "#;
        let cfg = RunConfig {
            shadow_module: Some("um".to_string()),
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(ok_i32(&out), 42);
        // The flat segment's own allocation is invisible; the logical block
        // takes the next color after it.
        assert_eq!(out.trace.len(), 3);
        match &out.trace[0] {
            Event::Alloc { color, size, .. } => {
                assert_eq!(*color, 2);
                assert_eq!(*size, 8);
            }
            other => panic!("expected the logical alloc, got {other:?}"),
        }
        match &out.trace[1] {
            Event::Write(a) => {
                assert_eq!(a.color, 2);
                assert_eq!(a.prov, Provenance::Legit);
                assert_eq!(a.loc, vec![LocState::Same; 4]);
            }
            other => panic!("expected the logical write, got {other:?}"),
        }
        assert!(audit(&out.trace).is_ok());
    }

    #[test]
    fn shadowed_module_flags_untracked_pointers_as_forged() {
        let src = r#"
            (module um
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 65536) (segment.new) (local.set 0)
                (local.get 0) (i32.const 24) (handle.add) (segment.load32)))
        "#;
        let cfg = RunConfig {
            shadow_module: Some("um".to_string()),
            ..RunConfig::default()
        };
        let out = run_one(src, "main", &[], &cfg);
        assert_eq!(ok_i32(&out), 0);
        match &out.trace[0] {
            Event::Read(a) => {
                assert_eq!(a.prov, Provenance::Forged);
                assert_eq!(a.color, 0);
            }
            other => panic!("expected the forged read, got {other:?}"),
        }
    }

    #[test]
    fn without_shadowing_the_same_run_stays_physical() {
        let src = r#"
            (module um
              (func main (export "main") (result i32)
                (local handle)
                (i32.const 65536) (segment.new) (local.set 0)
                (local.get 0) (i32.const 24) (handle.add) (segment.load32)))
        "#;
        let out = run_one(src, "main", &[], &RunConfig::default());
        assert_eq!(out.trace.len(), 2);
        assert!(matches!(&out.trace[0], Event::Alloc { size: 65536, .. }));
    }
}
