//! Fuzzed generation of typed attacker modules.
//!
//! A generated context imports every export of the component under test
//! and drives them from its `main`: calls with boundary argument values,
//! repeated and out-of-order calls, its own segments allocated, sliced,
//! accessed, and freed, and, when the component hands out handles, those
//! handles get stored, freed, passed back, and dereferenced. Everything
//! the generator emits is well-typed by construction; the suite still
//! validates each module to keep the generator honest.
//!
//! A small fraction of contexts deliberately harm themselves at the end
//! of `main` (double free or dangling access on their own segment), which
//! must trap benignly without implicating the component.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ir::{FuncDef, ImportDef, Instr, ModuleDef, ValType};

/// One callable of the component, as seen from outside.
#[derive(Debug, Clone)]
pub struct ExportSig {
    pub name: String,
    pub params: Vec<ValType>,
    pub result: Option<ValType>,
}

/// The exported surface of a module, in declaration order.
pub fn interface_of(module: &ModuleDef) -> Vec<ExportSig> {
    module
        .funcs
        .iter()
        .filter(|f| f.exported)
        .map(|f| ExportSig {
            name: f.name.clone(),
            params: f.params.clone(),
            result: f.result,
        })
        .collect()
}

const BOUNDARY_INTS: [i32; 9] = [0, 1, -1, 2, 7, 13, 64, i32::MAX, i32::MIN];

struct HandleSlot {
    slot: u32,
    live: bool,
    from_component: bool,
}

struct Ctx {
    rng: ChaCha8Rng,
    body: Vec<Instr>,
    locals: Vec<ValType>,
    handles: Vec<HandleSlot>,
    features: Vec<&'static str>,
}

/// Deterministically generate the `idx`th context for a component
/// interface under `seed`. Returns the module plus tags describing which
/// attack patterns it contains.
pub fn gen_context(
    component: &str,
    interface: &[ExportSig],
    seed: u64,
    idx: u32,
) -> (ModuleDef, Vec<&'static str>) {
    let mut ctx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15_u64.wrapping_mul(idx as u64 + 1))),
        body: Vec::new(),
        locals: Vec::new(),
        handles: Vec::new(),
        features: Vec::new(),
    };

    let steps = ctx.rng.gen_range(3..=10);
    for _ in 0..steps {
        ctx.step(interface);
    }
    if ctx.rng.gen_bool(0.1) {
        ctx.self_harm();
    }
    ctx.body.push(Instr::I32Const(0));

    let module = ModuleDef {
        id: format!("ctx{idx}"),
        imports: interface
            .iter()
            .map(|e| ImportDef {
                module: component.to_string(),
                name: e.name.clone(),
                local: e.name.clone(),
                params: e.params.clone(),
                result: e.result,
            })
            .collect(),
        funcs: vec![FuncDef {
            name: "main".to_string(),
            exported: true,
            params: vec![],
            result: Some(ValType::I32),
            locals: ctx.locals,
            body: ctx.body,
        }],
    };
    (module, ctx.features)
}

pub fn gen_contexts(
    component: &str,
    interface: &[ExportSig],
    seed: u64,
    n: u32,
) -> Vec<(ModuleDef, Vec<&'static str>)> {
    (0..n)
        .map(|idx| gen_context(component, interface, seed, idx))
        .collect()
}

impl Ctx {
    fn new_handle_slot(&mut self, from_component: bool) -> u32 {
        let slot = self.locals.len() as u32;
        self.locals.push(ValType::Handle);
        self.handles.push(HandleSlot {
            slot,
            live: true,
            from_component,
        });
        slot
    }

    fn pick_handle(&mut self, live_only: bool, from_component: Option<bool>) -> Option<usize> {
        let candidates: Vec<usize> = self
            .handles
            .iter()
            .enumerate()
            .filter(|(_, h)| !live_only || h.live)
            .filter(|(_, h)| from_component.is_none_or(|want| h.from_component == want))
            .map(|(i, _)| i)
            .collect();
        if candidates.is_empty() {
            None
        } else {
            Some(candidates[self.rng.gen_range(0..candidates.len())])
        }
    }

    fn boundary_int(&mut self) -> i32 {
        if self.rng.gen_bool(0.3) {
            self.rng.gen_range(-100..=100)
        } else {
            BOUNDARY_INTS[self.rng.gen_range(0..BOUNDARY_INTS.len())]
        }
    }

    fn step(&mut self, interface: &[ExportSig]) {
        match self.rng.gen_range(0..10) {
            0 | 1 => self.own_alloc(),
            2 => self.own_access(),
            3 => self.own_free(),
            4 => self.slice(),
            5 => self.print_const(),
            _ if !interface.is_empty() => self.call_export(interface),
            _ => self.own_alloc(),
        }
    }

    /// Segments of at least 4 bytes, so a width-4 access at offset zero is
    /// always in bounds.
    fn own_alloc(&mut self) {
        let size = self.rng.gen_range(1..=4) * 4;
        let slot = self.new_handle_slot(false);
        self.body.push(Instr::I32Const(size));
        self.body.push(Instr::NewSegment);
        self.body.push(Instr::LocalSet(slot));
    }

    fn own_access(&mut self) {
        let Some(i) = self.pick_handle(true, Some(false)) else {
            return self.own_alloc();
        };
        let slot = self.handles[i].slot;
        if self.rng.gen_bool(0.5) {
            let v = self.boundary_int();
            self.body.push(Instr::LocalGet(slot));
            self.body.push(Instr::I32Const(v));
            self.body.push(Instr::SegStore(4));
        } else {
            self.body.push(Instr::LocalGet(slot));
            self.body.push(Instr::SegLoad(4));
            self.body.push(Instr::Drop);
        }
    }

    fn own_free(&mut self) {
        let Some(i) = self.pick_handle(true, Some(false)) else {
            return self.print_const();
        };
        self.handles[i].live = false;
        let slot = self.handles[i].slot;
        self.body.push(Instr::LocalGet(slot));
        self.body.push(Instr::FreeSegment);
    }

    /// Narrow a live handle to its first four bytes.
    fn slice(&mut self) {
        let Some(i) = self.pick_handle(true, None) else {
            return self.own_alloc();
        };
        let from_component = self.handles[i].from_component;
        let slot = self.handles[i].slot;
        let dst = self.new_handle_slot(from_component);
        self.body.push(Instr::LocalGet(slot));
        self.body.push(Instr::I32Const(0));
        self.body.push(Instr::I32Const(4));
        self.body.push(Instr::HandleSlice);
        self.body.push(Instr::LocalSet(dst));
        self.features.push("slice");
    }

    fn print_const(&mut self) {
        let v = self.boundary_int();
        self.body.push(Instr::I32Const(v));
        self.body.push(Instr::Print);
    }

    fn call_export(&mut self, interface: &[ExportSig]) {
        let pick = self.rng.gen_range(0..interface.len());
        let export = &interface[pick];
        for param in export.params.clone() {
            match param {
                ValType::I32 => {
                    let v = self.boundary_int();
                    self.body.push(Instr::I32Const(v));
                }
                ValType::I64 => {
                    let v = self.boundary_int() as i64;
                    self.body.push(Instr::I64Const(v));
                }
                ValType::Handle => self.push_handle_arg(),
            }
        }
        self.body.push(Instr::Call(pick as u32));
        match export.result {
            None => {}
            Some(ValType::Handle) => {
                let slot = self.new_handle_slot(true);
                self.body.push(Instr::LocalSet(slot));
                self.features.push("returned-handle");
                self.abuse_returned_handle();
            }
            Some(_) => {
                if self.rng.gen_bool(0.3) {
                    self.body.push(Instr::Print);
                } else {
                    self.body.push(Instr::Drop);
                }
            }
        }
    }

    fn push_handle_arg(&mut self) {
        let choice = self.rng.gen_range(0..3);
        if choice == 0 {
            if let Some(i) = self.pick_handle(true, Some(false)) {
                self.body.push(Instr::LocalGet(self.handles[i].slot));
                self.features.push("pass-own-handle");
                return;
            }
        }
        if choice == 1 {
            if let Some(i) = self.pick_handle(false, Some(true)) {
                self.body.push(Instr::LocalGet(self.handles[i].slot));
                self.features.push("pass-back-handle");
                return;
            }
        }
        self.body.push(Instr::HandleNull);
        self.features.push("null-arg");
    }

    /// Something the component just handed us: free it, read through it,
    /// or leave it for later.
    fn abuse_returned_handle(&mut self) {
        let i = self.handles.len() - 1;
        match self.rng.gen_range(0..3) {
            0 => {
                self.handles[i].live = false;
                self.body.push(Instr::LocalGet(self.handles[i].slot));
                self.body.push(Instr::FreeSegment);
                self.features.push("free-returned-handle");
            }
            1 => {
                self.body.push(Instr::LocalGet(self.handles[i].slot));
                self.body.push(Instr::SegLoad(4));
                self.body.push(Instr::Drop);
                self.features.push("use-returned-handle");
            }
            _ => {}
        }
    }

    /// A context error on the context's own memory, placed at the end of
    /// the run so nothing else is cut short.
    fn self_harm(&mut self) {
        let Some(i) = self.pick_handle(true, Some(false)) else {
            return;
        };
        let slot = self.handles[i].slot;
        self.handles[i].live = false;
        self.body.push(Instr::LocalGet(slot));
        self.body.push(Instr::FreeSegment);
        if self.rng.gen_bool(0.5) {
            self.body.push(Instr::LocalGet(slot));
            self.body.push(Instr::FreeSegment);
            self.features.push("self-double-free");
        } else {
            self.body.push(Instr::LocalGet(slot));
            self.body.push(Instr::SegLoad(4));
            self.body.push(Instr::Drop);
            self.features.push("self-dangling-access");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate;

    fn int_interface() -> Vec<ExportSig> {
        vec![
            ExportSig {
                name: "work".into(),
                params: vec![ValType::I32, ValType::I32],
                result: Some(ValType::I32),
            },
            ExportSig {
                name: "poke".into(),
                params: vec![ValType::I32],
                result: None,
            },
        ]
    }

    fn handle_interface() -> Vec<ExportSig> {
        vec![
            ExportSig {
                name: "get_buf".into(),
                params: vec![ValType::I32],
                result: Some(ValType::Handle),
            },
            ExportSig {
                name: "read_it".into(),
                params: vec![ValType::Handle],
                result: Some(ValType::I32),
            },
        ]
    }

    #[test]
    fn every_generated_context_validates() {
        for (interface, tag) in [
            (Vec::new(), "empty"),
            (int_interface(), "ints"),
            (handle_interface(), "handles"),
        ] {
            for (module, _) in gen_contexts("comp", &interface, 7, 100) {
                if let Err(errs) = validate(&module) {
                    panic!("{tag} interface, module {}: {}", module.id, errs[0]);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_context("comp", &int_interface(), 42, 3);
        let b = gen_context("comp", &int_interface(), 42, 3);
        assert_eq!(format!("{:?}", a.0), format!("{:?}", b.0));
        assert_eq!(a.1, b.1);
        let c = gen_context("comp", &int_interface(), 43, 3);
        assert_ne!(format!("{:?}", a.0), format!("{:?}", c.0));
    }

    #[test]
    fn handle_interfaces_get_their_handles_abused_within_fifty_contexts() {
        let all: Vec<&str> = gen_contexts("comp", &handle_interface(), 11, 50)
            .into_iter()
            .flat_map(|(_, feats)| feats)
            .collect();
        for pattern in ["returned-handle", "free-returned-handle", "null-arg"] {
            assert!(all.contains(&pattern), "missing {pattern} in {all:?}");
        }
    }

    #[test]
    fn an_empty_interface_still_yields_self_contained_contexts() {
        let (module, _) = gen_context("comp", &[], 1, 0);
        assert!(module.imports.is_empty());
        assert_eq!(module.funcs.len(), 1);
        assert!(validate(&module).is_ok());
    }

    #[test]
    fn self_harm_appears_but_stays_rare() {
        let mut harmed = 0;
        for (_, feats) in gen_contexts("comp", &int_interface(), 5, 200) {
            if feats
                .iter()
                .any(|f| *f == "self-double-free" || *f == "self-dangling-access")
            {
                harmed += 1;
            }
        }
        assert!(harmed > 0, "no self-harming context in 200");
        assert!(harmed < 60, "too many self-harming contexts: {harmed}");
    }
}
