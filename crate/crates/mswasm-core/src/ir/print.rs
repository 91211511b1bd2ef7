//! Canonical text rendering. `parse_module` of the output reproduces the
//! original module value, and two structurally equal modules always render
//! to identical text.

use std::fmt::Write;

use super::{FuncDef, ImportDef, Instr, ModuleDef, ValType};

/// Render a module in canonical form: two-space indentation, one
/// instruction per line, decimal literals, calls by name where the target
/// index is known.
pub fn serialize_module(m: &ModuleDef) -> String {
    let mut out = String::new();
    let _ = write!(out, "(module {}", m.id);
    for imp in &m.imports {
        out.push('\n');
        write_import(&mut out, imp);
    }
    for f in &m.funcs {
        out.push('\n');
        write_func(&mut out, m, f);
    }
    out.push_str(")\n");
    out
}

fn write_import(out: &mut String, imp: &ImportDef) {
    let _ = write!(
        out,
        "  (import {} \"{}\" (func {}",
        imp.module,
        escape(&imp.name),
        imp.local
    );
    write_sig(out, &imp.params, imp.result);
    out.push_str("))");
}

fn write_sig(out: &mut String, params: &[ValType], result: Option<ValType>) {
    if !params.is_empty() {
        out.push_str(" (param");
        for p in params {
            let _ = write!(out, " {p}");
        }
        out.push(')');
    }
    if let Some(r) = result {
        let _ = write!(out, " (result {r})");
    }
}

fn write_func(out: &mut String, m: &ModuleDef, f: &FuncDef) {
    let _ = write!(out, "  (func {}", f.name);
    if f.exported {
        let _ = write!(out, " (export \"{}\")", escape(&f.name));
    }
    write_sig(out, &f.params, f.result);
    if !f.locals.is_empty() {
        out.push_str(" (local");
        for l in &f.locals {
            let _ = write!(out, " {l}");
        }
        out.push(')');
    }
    for instr in &f.body {
        out.push('\n');
        write_instr(out, m, instr, 2);
    }
    out.push(')');
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_body(out: &mut String, m: &ModuleDef, body: &[Instr], level: usize) {
    for instr in body {
        out.push('\n');
        write_instr(out, m, instr, level);
    }
}

fn write_instr(out: &mut String, m: &ModuleDef, instr: &Instr, level: usize) {
    indent(out, level);
    match instr {
        Instr::I32Const(v) => {
            let _ = write!(out, "(i32.const {v})");
        }
        Instr::I64Const(v) => {
            let _ = write!(out, "(i64.const {v})");
        }
        Instr::I32Bin(op) => {
            let _ = write!(out, "({})", op.mnemonic());
        }
        Instr::LocalGet(i) => {
            let _ = write!(out, "(local.get {i})");
        }
        Instr::LocalSet(i) => {
            let _ = write!(out, "(local.set {i})");
        }
        Instr::Drop => out.push_str("(drop)"),
        Instr::Print => out.push_str("(print)"),
        Instr::Br(n) => {
            let _ = write!(out, "(br {n})");
        }
        Instr::BrIf(n) => {
            let _ = write!(out, "(br_if {n})");
        }
        Instr::Return => out.push_str("(return)"),
        Instr::Call(idx) => match m.name_of(*idx) {
            Some(name) => {
                let _ = write!(out, "(call {name})");
            }
            None => {
                let _ = write!(out, "(call {idx})");
            }
        },
        Instr::NewSegment => out.push_str("(segment.new)"),
        Instr::FreeSegment => out.push_str("(segment.free)"),
        Instr::SegLoad(w) => {
            let _ = write!(out, "(segment.load{})", 8 * *w as u32);
        }
        Instr::SegStore(w) => {
            let _ = write!(out, "(segment.store{})", 8 * *w as u32);
        }
        Instr::HandleAdd => out.push_str("(handle.add)"),
        Instr::HandleSlice => out.push_str("(handle.slice)"),
        Instr::HandleNull => out.push_str("(handle.null)"),
        Instr::HandleEq => out.push_str("(handle.eq)"),
        Instr::HandleGetOffset => out.push_str("(handle.get_offset)"),
        Instr::Block { result, body } => {
            out.push_str("(block");
            if let Some(r) = result {
                let _ = write!(out, " (result {r})");
            }
            write_body(out, m, body, level + 1);
            out.push(')');
        }
        Instr::Loop { result, body } => {
            out.push_str("(loop");
            if let Some(r) = result {
                let _ = write!(out, " (result {r})");
            }
            write_body(out, m, body, level + 1);
            out.push(')');
        }
        Instr::If {
            result,
            then_body,
            else_body,
        } => {
            out.push_str("(if");
            if let Some(r) = result {
                let _ = write!(out, " (result {r})");
            }
            out.push('\n');
            indent(out, level + 1);
            out.push_str("(then");
            write_body(out, m, then_body, level + 2);
            out.push(')');
            if !else_body.is_empty() {
                out.push('\n');
                indent(out, level + 1);
                out.push_str("(else");
                write_body(out, m, else_body, level + 2);
                out.push(')');
            }
            out.push(')');
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}
