//! Text format reader.
//!
//! The surface syntax is a small s-expression dialect:
//!
//! ```text
//! (module m
//!   (import ctx "get_buf" (func get_buf (result handle)))
//!   (func main (export "main") (result i32)
//!     (i32.const 7)))
//! ```
//!
//! Tokens are parentheses, bare identifiers, decimal or `0x` hex integers,
//! and double-quoted strings. `;;` starts a comment running to end of line.
//! Every instruction is one parenthesized form; block bodies nest.

use std::collections::{BTreeSet, HashMap};

use super::{is_ident, FuncDef, I32Op, ImportDef, Instr, ModuleDef, ValType};

/// 1-based source position of a token or form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone)]
pub struct ParseError {
    pub span: Span,
    pub msg: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "parse error at {}: {}", self.span, self.msg)
    }
}

impl std::error::Error for ParseError {}

/// Parse result: the module plus per-instruction source positions, indexed
/// by function and by pre-order ordinal within that function's body. The
/// module itself carries no positions so that structural equality ignores
/// layout.
#[derive(Debug, Clone)]
pub struct ParsedModule {
    pub module: ModuleDef,
    /// `instr_spans[f][k]` is the span of the k-th instruction (pre-order)
    /// of local function f.
    pub instr_spans: Vec<Vec<Span>>,
}

impl ParsedModule {
    pub fn instr_span(&self, func: usize, ordinal: usize) -> Option<Span> {
        self.instr_spans.get(func)?.get(ordinal).copied()
    }
}

/// Parse one module from text.
pub fn parse_module(text: &str) -> Result<ParsedModule, ParseError> {
    let tokens = lex(text)?;
    let mut rd = TokenReader { tokens, pos: 0 };
    let top = read_sexpr(&mut rd)?;
    if rd.pos != rd.tokens.len() {
        let t = &rd.tokens[rd.pos];
        return Err(err(t.span, "trailing input after module form"));
    }
    lower_module(&top)
}

fn err(span: Span, msg: impl Into<String>) -> ParseError {
    ParseError {
        span,
        msg: msg.into(),
    }
}

// ---- lexer ----

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Ident(String),
    Int(i128),
    Str(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut it = text.chars().peekable();
    while let Some(&c) = it.peek() {
        let span = Span { line, col };
        match c {
            '\n' => {
                it.next();
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                it.next();
                col += 1;
            }
            ';' => {
                it.next();
                if it.peek() != Some(&';') {
                    return Err(err(span, "expected `;;` to start a comment"));
                }
                while let Some(&c2) = it.peek() {
                    if c2 == '\n' {
                        break;
                    }
                    it.next();
                }
                col += 2; // the newline branch resets the column anyway
            }
            '(' => {
                it.next();
                col += 1;
                out.push(Token {
                    tok: Tok::LParen,
                    span,
                });
            }
            ')' => {
                it.next();
                col += 1;
                out.push(Token {
                    tok: Tok::RParen,
                    span,
                });
            }
            '"' => {
                it.next();
                col += 1;
                let mut s = String::new();
                loop {
                    match it.next() {
                        None => return Err(err(span, "unterminated string")),
                        Some('"') => {
                            col += 1;
                            break;
                        }
                        Some('\\') => {
                            col += 1;
                            match it.next() {
                                Some('n') => s.push('\n'),
                                Some('t') => s.push('\t'),
                                Some('\\') => s.push('\\'),
                                Some('"') => s.push('"'),
                                other => {
                                    return Err(err(
                                        span,
                                        format!("bad string escape {other:?}"),
                                    ))
                                }
                            }
                            col += 1;
                        }
                        Some('\n') => return Err(err(span, "newline in string")),
                        Some(c2) => {
                            s.push(c2);
                            col += 1;
                        }
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    span,
                });
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut s = String::new();
                s.push(c);
                it.next();
                col += 1;
                while let Some(&c2) = it.peek() {
                    if c2.is_ascii_alphanumeric() {
                        s.push(c2);
                        it.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                let v = parse_int(&s).ok_or_else(|| err(span, format!("bad integer `{s}`")))?;
                out.push(Token {
                    tok: Tok::Int(v),
                    span,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' || c == '$' => {
                let mut s = String::new();
                while let Some(&c2) = it.peek() {
                    if c2.is_ascii_alphanumeric() || matches!(c2, '_' | '$' | '.' | '-') {
                        s.push(c2);
                        it.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Token {
                    tok: Tok::Ident(s),
                    span,
                });
            }
            other => return Err(err(span, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

fn parse_int(s: &str) -> Option<i128> {
    let (neg, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let v = if let Some(hex) = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X")) {
        i128::from_str_radix(hex, 16).ok()?
    } else {
        rest.parse::<i128>().ok()?
    };
    Some(if neg { -v } else { v })
}

// ---- generic s-expressions ----

#[derive(Debug, Clone)]
enum SExpr {
    Ident(String, Span),
    Int(i128, Span),
    Str(String, Span),
    List(Vec<SExpr>, Span),
}

impl SExpr {
    fn span(&self) -> Span {
        match self {
            SExpr::Ident(_, s) | SExpr::Int(_, s) | SExpr::Str(_, s) | SExpr::List(_, s) => *s,
        }
    }

    fn head(&self) -> Option<&str> {
        match self {
            SExpr::List(items, _) => match items.first() {
                Some(SExpr::Ident(h, _)) => Some(h.as_str()),
                _ => None,
            },
            _ => None,
        }
    }

    fn items(&self) -> &[SExpr] {
        match self {
            SExpr::List(items, _) => items,
            _ => &[],
        }
    }
}

struct TokenReader {
    tokens: Vec<Token>,
    pos: usize,
}

fn read_sexpr(rd: &mut TokenReader) -> Result<SExpr, ParseError> {
    let t = rd
        .tokens
        .get(rd.pos)
        .ok_or_else(|| err(Span { line: 1, col: 1 }, "unexpected end of input"))?
        .clone();
    rd.pos += 1;
    match t.tok {
        Tok::Ident(s) => Ok(SExpr::Ident(s, t.span)),
        Tok::Int(v) => Ok(SExpr::Int(v, t.span)),
        Tok::Str(s) => Ok(SExpr::Str(s, t.span)),
        Tok::RParen => Err(err(t.span, "unexpected `)`")),
        Tok::LParen => {
            let mut items = Vec::new();
            loop {
                let nt = rd
                    .tokens
                    .get(rd.pos)
                    .ok_or_else(|| err(t.span, "unclosed `(`"))?;
                if nt.tok == Tok::RParen {
                    rd.pos += 1;
                    return Ok(SExpr::List(items, t.span));
                }
                items.push(read_sexpr(rd)?);
            }
        }
    }
}

// ---- lowering to ModuleDef ----

/// `call f` by name parses to `Call(u32::MAX)` plus one entry here; the
/// placeholder is patched once the whole name table is known.
type PendingCall = (usize, String, Span); // (pre-order ordinal, callee, span)

fn lower_module(top: &SExpr) -> Result<ParsedModule, ParseError> {
    if top.head() != Some("module") {
        return Err(err(top.span(), "expected `(module ...)`"));
    }
    let items = top.items();
    let mut it = items.iter().skip(1).peekable();
    let id = match it.next() {
        Some(SExpr::Ident(s, _)) => s.clone(),
        other => {
            let sp = other.map(|e| e.span()).unwrap_or(top.span());
            return Err(err(sp, "module id (identifier) required after `module`"));
        }
    };

    let mut imports: Vec<ImportDef> = Vec::new();
    let mut funcs: Vec<FuncDef> = Vec::new();
    let mut instr_spans: Vec<Vec<Span>> = Vec::new();
    let mut pending: Vec<Vec<PendingCall>> = Vec::new();
    for form in it {
        match form.head() {
            Some("import") => {
                if !funcs.is_empty() {
                    return Err(err(form.span(), "imports must precede functions"));
                }
                imports.push(lower_import(form)?);
            }
            Some("func") => {
                let mut spans = Vec::new();
                let mut calls = Vec::new();
                funcs.push(lower_func(form, funcs.len(), &mut spans, &mut calls)?);
                instr_spans.push(spans);
                pending.push(calls);
            }
            _ => return Err(err(form.span(), "expected `(import ...)` or `(func ...)`")),
        }
    }

    // Import aliases and function names share one namespace so `call` by
    // name is unambiguous; exported names equal function names, so this also
    // covers export uniqueness.
    let mut seen = BTreeSet::new();
    for imp in &imports {
        if !seen.insert(imp.local.clone()) {
            return Err(err(top.span(), format!("duplicate name `{}`", imp.local)));
        }
    }
    for f in &funcs {
        if !seen.insert(f.name.clone()) {
            return Err(err(top.span(), format!("duplicate name `{}`", f.name)));
        }
    }

    let mut names: HashMap<String, u32> = HashMap::new();
    for (i, imp) in imports.iter().enumerate() {
        names.insert(imp.local.clone(), i as u32);
    }
    let base = imports.len() as u32;
    for (i, f) in funcs.iter().enumerate() {
        names.insert(f.name.clone(), base + i as u32);
    }
    for (f, calls) in funcs.iter_mut().zip(pending) {
        let mut by_ord: HashMap<usize, (String, Span)> = calls
            .into_iter()
            .map(|(o, n, s)| (o, (n, s)))
            .collect();
        let mut ord = 0;
        patch_calls(&mut f.body, &mut ord, &mut by_ord, &names)?;
    }

    Ok(ParsedModule {
        module: ModuleDef { id, imports, funcs },
        instr_spans,
    })
}

fn patch_calls(
    body: &mut [Instr],
    ordinal: &mut usize,
    pending: &mut HashMap<usize, (String, Span)>,
    names: &HashMap<String, u32>,
) -> Result<(), ParseError> {
    for instr in body.iter_mut() {
        let my_ord = *ordinal;
        *ordinal += 1;
        match instr {
            Instr::Call(target) if *target == u32::MAX => {
                let (name, sp) = pending
                    .remove(&my_ord)
                    .expect("placeholder call without pending entry");
                let idx = names
                    .get(&name)
                    .ok_or_else(|| err(sp, format!("unknown function `{name}`")))?;
                *instr = Instr::Call(*idx);
            }
            Instr::Block { body, .. } | Instr::Loop { body, .. } => {
                patch_calls(body, ordinal, pending, names)?;
            }
            Instr::If {
                then_body,
                else_body,
                ..
            } => {
                patch_calls(then_body, ordinal, pending, names)?;
                patch_calls(else_body, ordinal, pending, names)?;
            }
            _ => {}
        }
    }
    Ok(())
}

fn lower_import(form: &SExpr) -> Result<ImportDef, ParseError> {
    // (import MODID "NAME" (func LOCAL? (param ...)? (result T)?))
    let items = form.items();
    let mut it = items.iter().skip(1);
    let module = match it.next() {
        Some(SExpr::Ident(s, _)) => s.clone(),
        other => {
            return Err(err(
                other.map(|e| e.span()).unwrap_or(form.span()),
                "import needs a source module id",
            ))
        }
    };
    let name = match it.next() {
        Some(SExpr::Str(s, _)) => s.clone(),
        other => {
            return Err(err(
                other.map(|e| e.span()).unwrap_or(form.span()),
                "import needs a quoted function name",
            ))
        }
    };
    let fdesc = match it.next() {
        Some(e) if e.head() == Some("func") => e,
        other => {
            return Err(err(
                other.map(|e| e.span()).unwrap_or(form.span()),
                "import needs a `(func ...)` descriptor",
            ))
        }
    };
    if it.next().is_some() {
        return Err(err(form.span(), "unexpected extra forms in import"));
    }
    let mut fit = fdesc.items().iter().skip(1).peekable();
    let local = match fit.peek() {
        Some(SExpr::Ident(s, _)) => {
            let s = s.clone();
            fit.next();
            s
        }
        _ => {
            if !is_ident(&name) {
                return Err(err(
                    fdesc.span(),
                    "import with non-identifier name needs a local alias",
                ));
            }
            name.clone()
        }
    };
    let mut params = Vec::new();
    let mut result = None;
    for e in fit {
        match e.head() {
            Some("param") => params.extend(lower_valtypes(e)?),
            Some("result") => {
                if result.is_some() {
                    return Err(err(e.span(), "at most one result"));
                }
                result = Some(lower_single_valtype(e)?);
            }
            _ => return Err(err(e.span(), "expected `(param ...)` or `(result T)`")),
        }
    }
    Ok(ImportDef {
        module,
        name,
        local,
        params,
        result,
    })
}

fn lower_valtypes(e: &SExpr) -> Result<Vec<ValType>, ParseError> {
    e.items().iter().skip(1).map(lower_valtype).collect()
}

fn lower_single_valtype(e: &SExpr) -> Result<ValType, ParseError> {
    let items = e.items();
    if items.len() != 2 {
        return Err(err(e.span(), "expected exactly one value type"));
    }
    lower_valtype(&items[1])
}

fn lower_valtype(e: &SExpr) -> Result<ValType, ParseError> {
    match e {
        SExpr::Ident(s, _) => match s.as_str() {
            "i32" => Ok(ValType::I32),
            "i64" => Ok(ValType::I64),
            "handle" => Ok(ValType::Handle),
            other => Err(err(e.span(), format!("unknown value type `{other}`"))),
        },
        _ => Err(err(e.span(), "expected a value type")),
    }
}

fn lower_func(
    form: &SExpr,
    index: usize,
    spans: &mut Vec<Span>,
    calls: &mut Vec<PendingCall>,
) -> Result<FuncDef, ParseError> {
    let items = form.items();
    let mut it = items.iter().skip(1).peekable();

    let mut name = None;
    if let Some(SExpr::Ident(s, _)) = it.peek() {
        name = Some(s.clone());
        it.next();
    }
    let mut exported = false;
    if let Some(e) = it.peek() {
        if e.head() == Some("export") {
            let s = match e.items() {
                [_, SExpr::Str(s, _)] => s.clone(),
                _ => return Err(err(e.span(), "expected `(export \"name\")`")),
            };
            match &name {
                Some(n) if *n != s => {
                    return Err(err(
                        e.span(),
                        format!("export name \"{s}\" must match function name `{n}`"),
                    ))
                }
                Some(_) => {}
                None => {
                    if !is_ident(&s) {
                        return Err(err(e.span(), "export name must be a valid identifier"));
                    }
                    name = Some(s);
                }
            }
            exported = true;
            it.next();
        }
    }
    let name = name.unwrap_or_else(|| format!("f{index}"));

    let mut params = Vec::new();
    let mut result = None;
    let mut locals = Vec::new();
    while let Some(e) = it.peek() {
        match e.head() {
            Some("param") => {
                if result.is_some() || !locals.is_empty() {
                    return Err(err(e.span(), "`(param ...)` must precede result and locals"));
                }
                params.extend(lower_valtypes(e)?);
                it.next();
            }
            Some("result") => {
                if result.is_some() {
                    return Err(err(e.span(), "at most one result"));
                }
                if !locals.is_empty() {
                    return Err(err(e.span(), "`(result T)` must precede locals"));
                }
                result = Some(lower_single_valtype(e)?);
                it.next();
            }
            Some("local") => {
                locals.extend(lower_valtypes(e)?);
                it.next();
            }
            _ => break,
        }
    }

    let mut body = Vec::new();
    for e in it {
        body.push(lower_instr(e, spans, calls)?);
    }
    Ok(FuncDef {
        name,
        exported,
        params,
        result,
        locals,
        body,
    })
}

fn lower_instr(
    e: &SExpr,
    spans: &mut Vec<Span>,
    calls: &mut Vec<PendingCall>,
) -> Result<Instr, ParseError> {
    let items = match e {
        SExpr::List(items, _) => items,
        _ => return Err(err(e.span(), "expected an instruction form")),
    };
    let head = match items.first() {
        Some(SExpr::Ident(h, _)) => h.as_str(),
        _ => return Err(err(e.span(), "instruction must start with a mnemonic")),
    };
    let my_ordinal = spans.len();
    spans.push(e.span());

    let argn = items.len() - 1;
    let arg_int = |i: usize| -> Result<i128, ParseError> {
        match items.get(i + 1) {
            Some(SExpr::Int(v, _)) => Ok(*v),
            other => Err(err(
                other.map(|x| x.span()).unwrap_or(e.span()),
                format!("`{head}` expects an integer operand"),
            )),
        }
    };
    let need = |n: usize| -> Result<(), ParseError> {
        if argn != n {
            Err(err(
                e.span(),
                format!("`{head}` takes {n} operand(s), found {argn}"),
            ))
        } else {
            Ok(())
        }
    };
    let index_arg = |i: usize| -> Result<u32, ParseError> {
        let v = arg_int(i)?;
        if !(0..=u32::MAX as i128).contains(&v) {
            return Err(err(e.span(), format!("index {v} out of range")));
        }
        Ok(v as u32)
    };

    if let Some(op) = I32Op::ALL.iter().find(|op| op.mnemonic() == head) {
        need(0)?;
        return Ok(Instr::I32Bin(*op));
    }

    match head {
        "i32.const" => {
            need(1)?;
            let v = arg_int(0)?;
            if !(-(1i128 << 31)..(1i128 << 32)).contains(&v) {
                return Err(err(e.span(), format!("i32 literal {v} out of range")));
            }
            Ok(Instr::I32Const(v as u32 as i32))
        }
        "i64.const" => {
            need(1)?;
            let v = arg_int(0)?;
            if !(-(1i128 << 63)..(1i128 << 64)).contains(&v) {
                return Err(err(e.span(), format!("i64 literal {v} out of range")));
            }
            Ok(Instr::I64Const(v as u64 as i64))
        }
        "local.get" => {
            need(1)?;
            Ok(Instr::LocalGet(index_arg(0)?))
        }
        "local.set" => {
            need(1)?;
            Ok(Instr::LocalSet(index_arg(0)?))
        }
        "drop" => {
            need(0)?;
            Ok(Instr::Drop)
        }
        "print" => {
            need(0)?;
            Ok(Instr::Print)
        }
        "br" => {
            need(1)?;
            Ok(Instr::Br(index_arg(0)?))
        }
        "br_if" => {
            need(1)?;
            Ok(Instr::BrIf(index_arg(0)?))
        }
        "return" => {
            need(0)?;
            Ok(Instr::Return)
        }
        "call" => {
            need(1)?;
            match items.get(1) {
                Some(SExpr::Int(v, _)) => {
                    if !(0..u32::MAX as i128).contains(v) {
                        return Err(err(e.span(), "call index out of range"));
                    }
                    Ok(Instr::Call(*v as u32))
                }
                Some(SExpr::Ident(name, sp)) => {
                    calls.push((my_ordinal, name.clone(), *sp));
                    Ok(Instr::Call(u32::MAX))
                }
                other => Err(err(
                    other.map(|x| x.span()).unwrap_or(e.span()),
                    "`call` expects a function index or name",
                )),
            }
        }
        "segment.new" => {
            need(0)?;
            Ok(Instr::NewSegment)
        }
        "segment.free" => {
            need(0)?;
            Ok(Instr::FreeSegment)
        }
        "segment.load8" => {
            need(0)?;
            Ok(Instr::SegLoad(1))
        }
        "segment.load32" => {
            need(0)?;
            Ok(Instr::SegLoad(4))
        }
        "segment.load64" => {
            need(0)?;
            Ok(Instr::SegLoad(8))
        }
        "segment.store8" => {
            need(0)?;
            Ok(Instr::SegStore(1))
        }
        "segment.store32" => {
            need(0)?;
            Ok(Instr::SegStore(4))
        }
        "segment.store64" => {
            need(0)?;
            Ok(Instr::SegStore(8))
        }
        "handle.add" => {
            need(0)?;
            Ok(Instr::HandleAdd)
        }
        "handle.slice" => {
            need(0)?;
            Ok(Instr::HandleSlice)
        }
        "handle.null" => {
            need(0)?;
            Ok(Instr::HandleNull)
        }
        "handle.eq" => {
            need(0)?;
            Ok(Instr::HandleEq)
        }
        "handle.get_offset" => {
            need(0)?;
            Ok(Instr::HandleGetOffset)
        }
        "block" | "loop" => {
            let mut idx = 1;
            let mut result = None;
            if let Some(r) = items.get(1) {
                if r.head() == Some("result") {
                    result = Some(lower_single_valtype(r)?);
                    idx = 2;
                }
            }
            let mut body = Vec::new();
            for sub in &items[idx..] {
                body.push(lower_instr(sub, spans, calls)?);
            }
            Ok(if head == "block" {
                Instr::Block { result, body }
            } else {
                Instr::Loop { result, body }
            })
        }
        "if" => {
            let mut idx = 1;
            let mut result = None;
            if let Some(r) = items.get(1) {
                if r.head() == Some("result") {
                    result = Some(lower_single_valtype(r)?);
                    idx = 2;
                }
            }
            let then_form = items
                .get(idx)
                .filter(|e2| e2.head() == Some("then"))
                .ok_or_else(|| err(e.span(), "`if` needs a `(then ...)` arm"))?;
            let mut then_body = Vec::new();
            for sub in &then_form.items()[1..] {
                then_body.push(lower_instr(sub, spans, calls)?);
            }
            let mut else_body = Vec::new();
            match items.get(idx + 1) {
                None => {}
                Some(ef) if ef.head() == Some("else") => {
                    for sub in &ef.items()[1..] {
                        else_body.push(lower_instr(sub, spans, calls)?);
                    }
                    if items.len() > idx + 2 {
                        return Err(err(e.span(), "unexpected forms after `(else ...)`"));
                    }
                }
                Some(bad) => return Err(err(bad.span(), "expected `(else ...)`")),
            }
            Ok(Instr::If {
                result,
                then_body,
                else_body,
            })
        }
        other => Err(err(e.span(), format!("unknown instruction `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_exported_const_func() {
        let p = parse_module("(module m (func (export \"f\") (result i32) (i32.const 7)))")
            .unwrap();
        assert_eq!(p.module.id, "m");
        assert_eq!(p.module.funcs.len(), 1);
        let f = &p.module.funcs[0];
        assert_eq!(f.name, "f");
        assert!(f.exported);
        assert_eq!(f.result, Some(ValType::I32));
        assert_eq!(f.body, vec![Instr::I32Const(7)]);
    }

    #[test]
    fn unknown_instruction_is_a_syntax_error() {
        let e = parse_module("(module m (func f (i32.konst 7)))").unwrap_err();
        assert!(e.msg.contains("unknown instruction"), "{e}");
    }

    #[test]
    fn unbalanced_parens_rejected() {
        let e = parse_module("(module m (func f (i32.const 7))").unwrap_err();
        assert!(e.msg.contains("unclosed"), "{e}");
    }

    #[test]
    fn call_by_name_resolves_to_joint_index_space() {
        let text = r#"
(module m
  (import ctx "helper" (func helper (param i32) (result i32)))
  (func g (result i32)
    (i32.const 1)
    (call helper))
  (func main (export "main") (result i32)
    (call g)))
"#;
        let p = parse_module(text).unwrap();
        assert_eq!(p.module.funcs[0].body[1], Instr::Call(0));
        assert_eq!(p.module.funcs[1].body[0], Instr::Call(1));
    }

    #[test]
    fn duplicate_names_rejected() {
        let e = parse_module("(module m (func f) (func f))").unwrap_err();
        assert!(e.msg.contains("duplicate"), "{e}");
    }

    #[test]
    fn export_name_must_match_declared_name() {
        let e = parse_module("(module m (func g (export \"h\")))").unwrap_err();
        assert!(e.msg.contains("must match"), "{e}");
    }

    #[test]
    fn comments_and_hex_literals() {
        let text = "(module m ;; heading\n  (func f (result i32) (i32.const 0x10)))";
        let p = parse_module(text).unwrap();
        assert_eq!(p.module.funcs[0].body, vec![Instr::I32Const(16)]);
    }

    #[test]
    fn i32_literal_accepts_unsigned_range_and_wraps() {
        let p = parse_module("(module m (func f (result i32) (i32.const 0xFFFFFFFF)))").unwrap();
        assert_eq!(p.module.funcs[0].body, vec![Instr::I32Const(-1)]);
        let e = parse_module("(module m (func f (i32.const 4294967296) (drop)))").unwrap_err();
        assert!(e.msg.contains("out of range"), "{e}");
    }

    #[test]
    fn nested_blocks_parse_with_spans() {
        let text = "(module m\n  (func f (result i32)\n    (block (result i32)\n      (i32.const 1))))";
        let p = parse_module(text).unwrap();
        match &p.module.funcs[0].body[0] {
            Instr::Block { result, body } => {
                assert_eq!(*result, Some(ValType::I32));
                assert_eq!(body.len(), 1);
            }
            other => panic!("expected block, got {other:?}"),
        }
        // Pre-order: block is ordinal 0, the const inside is ordinal 1.
        assert_eq!(p.instr_span(0, 0).unwrap().line, 3);
        assert_eq!(p.instr_span(0, 1).unwrap().line, 4);
    }

    #[test]
    fn import_with_explicit_alias() {
        let text = "(module m (import other \"get\" (func g2 (result handle))))";
        let p = parse_module(text).unwrap();
        let imp = &p.module.imports[0];
        assert_eq!(imp.module, "other");
        assert_eq!(imp.name, "get");
        assert_eq!(imp.local, "g2");
        assert_eq!(imp.result, Some(ValType::Handle));
    }
}
