//! MiniC lexer and recursive descent parser.

use super::{BinOp, Expr, ExternDecl, FuncDecl, Param, SourceProgram, Stmt, StmtKind, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniCParseError {
    pub line: u32,
    pub col: u32,
    pub msg: String,
}

impl std::fmt::Display for MiniCParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for MiniCParseError {}

pub fn parse_program(text: &str) -> Result<SourceProgram, MiniCParseError> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0 }.program()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(i64),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

fn lex(text: &str) -> Result<Vec<Token>, MiniCParseError> {
    let mut out = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut chars = text.chars().peekable();
    macro_rules! bump {
        () => {{
            let c = chars.next();
            if c == Some('\n') {
                line += 1;
                col = 1;
            } else if c.is_some() {
                col += 1;
            }
            c
        }};
    }
    loop {
        let (tl, tc) = (line, col);
        let Some(&c) = chars.peek() else {
            out.push(Token {
                tok: Tok::Eof,
                line,
                col,
            });
            return Ok(out);
        };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' {
            let mut ahead = chars.clone();
            ahead.next();
            if ahead.peek() == Some(&'/') {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    bump!();
                }
                continue;
            }
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    s.push(c);
                    bump!();
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut v: i64 = 0;
            while let Some(&c) = chars.peek() {
                if let Some(d) = c.to_digit(10) {
                    v = v
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(d as i64))
                        .ok_or(MiniCParseError {
                            line: tl,
                            col: tc,
                            msg: "integer literal out of range".into(),
                        })?;
                    bump!();
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Num(v),
                line: tl,
                col: tc,
            });
            continue;
        }
        let two = {
            let mut ahead = chars.clone();
            let a = ahead.next().unwrap_or(' ');
            let b = ahead.next().unwrap_or(' ');
            [a, b]
        };
        let twos: [(char, char, &'static str); 4] = [
            ('=', '=', "=="),
            ('!', '=', "!="),
            ('<', '=', "<="),
            ('>', '=', ">="),
        ];
        if let Some((_, _, p)) = twos.iter().find(|(a, b, _)| two[0] == *a && two[1] == *b) {
            bump!();
            bump!();
            out.push(Token {
                tok: Tok::Punct(p),
                line: tl,
                col: tc,
            });
            continue;
        }
        let singles = "{}()[];,=+-*/%<>";
        if let Some(i) = singles.find(c) {
            const NAMES: [&str; 16] = [
                "{", "}", "(", ")", "[", "]", ";", ",", "=", "+", "-", "*", "/", "%", "<", ">",
            ];
            bump!();
            out.push(Token {
                tok: Tok::Punct(NAMES[i]),
                line: tl,
                col: tc,
            });
            continue;
        }
        return Err(MiniCParseError {
            line: tl,
            col: tc,
            msg: format!("unexpected character {c:?}"),
        });
    }
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.tokens[(self.pos + 1).min(self.tokens.len() - 1)].tok
    }

    fn here(&self) -> (u32, u32) {
        let t = &self.tokens[self.pos];
        (t.line, t.col)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, MiniCParseError> {
        let (line, col) = self.here();
        Err(MiniCParseError {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn next(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn eat_punct(&mut self, p: &str) -> Result<(), MiniCParseError> {
        match self.peek() {
            Tok::Punct(q) if *q == p => {
                self.next();
                Ok(())
            }
            other => self.fail(format!("expected `{p}`, found {}", show(other))),
        }
    }

    fn eat_kw(&mut self, kw: &str) -> Result<(), MiniCParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            other => self.fail(format!("expected `{kw}`, found {}", show(other))),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn at_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn ident(&mut self, what: &str) -> Result<String, MiniCParseError> {
        match self.peek() {
            Tok::Ident(s) if !is_reserved(s) => {
                let s = s.clone();
                self.next();
                Ok(s)
            }
            Tok::Ident(s) => self.fail(format!("`{s}` is a keyword, not a {what}")),
            other => self.fail(format!("expected a {what}, found {}", show(other))),
        }
    }

    fn program(&mut self) -> Result<SourceProgram, MiniCParseError> {
        let mut p = SourceProgram::default();
        loop {
            match self.peek() {
                Tok::Eof => return Ok(p),
                Tok::Ident(s) if s == "extern" => p.externs.push(self.extern_decl()?),
                _ => p.funcs.push(self.func()?),
            }
        }
    }

    fn ty(&mut self) -> Result<Ty, MiniCParseError> {
        if self.at_kw("int") {
            self.next();
            Ok(Ty::Int)
        } else if self.at_kw("ptr") {
            self.next();
            Ok(Ty::Ptr)
        } else {
            self.fail(format!("expected a type, found {}", show(self.peek())))
        }
    }

    fn ret_ty(&mut self) -> Result<Option<Ty>, MiniCParseError> {
        if self.at_kw("void") {
            self.next();
            Ok(None)
        } else {
            Ok(Some(self.ty()?))
        }
    }

    fn params(&mut self) -> Result<Vec<Param>, MiniCParseError> {
        self.eat_punct("(")?;
        let mut ps = Vec::new();
        if !self.at_punct(")") {
            loop {
                let ty = self.ty()?;
                let name = self.ident("parameter name")?;
                ps.push(Param { ty, name });
                if self.at_punct(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.eat_punct(")")?;
        Ok(ps)
    }

    fn extern_decl(&mut self) -> Result<ExternDecl, MiniCParseError> {
        let (line, _) = self.here();
        self.eat_kw("extern")?;
        let ret = self.ret_ty()?;
        let name = self.ident("function name")?;
        let params = self.params()?;
        self.eat_kw("from")?;
        let from = self.ident("module id")?;
        self.eat_punct(";")?;
        Ok(ExternDecl {
            name,
            params,
            ret,
            from,
            line,
        })
    }

    fn func(&mut self) -> Result<FuncDecl, MiniCParseError> {
        let (line, _) = self.here();
        let exported = if self.at_kw("export") {
            self.next();
            true
        } else {
            false
        };
        let ret = self.ret_ty()?;
        let name = self.ident("function name")?;
        let params = self.params()?;
        let body = self.block()?;
        Ok(FuncDecl {
            name,
            params,
            ret,
            body,
            exported,
            line,
        })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, MiniCParseError> {
        self.eat_punct("{")?;
        let mut body = Vec::new();
        while !self.at_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.fail("unclosed block");
            }
            body.push(self.stmt()?);
        }
        self.next();
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt, MiniCParseError> {
        let (line, _) = self.here();
        let kind = self.stmt_kind()?;
        Ok(Stmt { kind, line })
    }

    fn stmt_kind(&mut self) -> Result<StmtKind, MiniCParseError> {
        if self.at_kw("int") || self.at_kw("ptr") {
            let ty = self.ty()?;
            let name = self.ident("variable name")?;
            let init = if self.at_punct("=") {
                self.next();
                Some(self.expr()?)
            } else {
                None
            };
            self.eat_punct(";")?;
            return Ok(StmtKind::Decl { ty, name, init });
        }
        if self.at_kw("free") {
            self.next();
            self.eat_punct("(")?;
            let e = self.expr()?;
            self.eat_punct(")")?;
            self.eat_punct(";")?;
            return Ok(StmtKind::Free(e));
        }
        if self.at_kw("print") {
            self.next();
            self.eat_punct("(")?;
            let e = self.expr()?;
            self.eat_punct(")")?;
            self.eat_punct(";")?;
            return Ok(StmtKind::Print(e));
        }
        if self.at_kw("if") {
            self.next();
            self.eat_punct("(")?;
            let cond = self.expr()?;
            self.eat_punct(")")?;
            let then_body = self.block()?;
            let else_body = if self.at_kw("else") {
                self.next();
                self.block()?
            } else {
                Vec::new()
            };
            return Ok(StmtKind::If {
                cond,
                then_body,
                else_body,
            });
        }
        if self.at_kw("while") {
            self.next();
            self.eat_punct("(")?;
            let cond = self.expr()?;
            self.eat_punct(")")?;
            let body = self.block()?;
            return Ok(StmtKind::While { cond, body });
        }
        if self.at_kw("return") {
            self.next();
            let value = if self.at_punct(";") {
                None
            } else {
                Some(self.expr()?)
            };
            self.eat_punct(";")?;
            return Ok(StmtKind::Return(value));
        }
        if self.at_punct("*") {
            self.next();
            let target = self.unary()?;
            self.eat_punct("=")?;
            let value = self.expr()?;
            self.eat_punct(";")?;
            return Ok(StmtKind::Store { target, value });
        }
        if matches!(self.peek(), Tok::Ident(s) if !is_reserved(s)) {
            match self.peek2() {
                Tok::Punct("=") => {
                    let name = self.ident("variable name")?;
                    self.next();
                    let value = self.expr()?;
                    self.eat_punct(";")?;
                    return Ok(StmtKind::Assign { name, value });
                }
                Tok::Punct("[") => {
                    let name = self.ident("variable name")?;
                    self.next();
                    let index = self.expr()?;
                    self.eat_punct("]")?;
                    self.eat_punct("=")?;
                    let value = self.expr()?;
                    self.eat_punct(";")?;
                    let target = Expr::Bin(
                        BinOp::Add,
                        Box::new(Expr::Var(name)),
                        Box::new(index),
                    );
                    return Ok(StmtKind::Store { target, value });
                }
                Tok::Punct("(") => {
                    let name = self.ident("function name")?;
                    let args = self.args()?;
                    self.eat_punct(";")?;
                    return Ok(StmtKind::CallStmt(name, args));
                }
                _ => {}
            }
        }
        self.fail(format!("expected a statement, found {}", show(self.peek())))
    }

    fn args(&mut self) -> Result<Vec<Expr>, MiniCParseError> {
        self.eat_punct("(")?;
        let mut args = Vec::new();
        if !self.at_punct(")") {
            loop {
                args.push(self.expr()?);
                if self.at_punct(",") {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.eat_punct(")")?;
        Ok(args)
    }

    fn expr(&mut self) -> Result<Expr, MiniCParseError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("==") => BinOp::Eq,
                Tok::Punct("!=") => BinOp::Ne,
                Tok::Punct("<") => BinOp::Lt,
                Tok::Punct(">") => BinOp::Gt,
                Tok::Punct("<=") => BinOp::Le,
                Tok::Punct(">=") => BinOp::Ge,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.additive()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn additive(&mut self) -> Result<Expr, MiniCParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("+") => BinOp::Add,
                Tok::Punct("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.multiplicative()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, MiniCParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct("*") => BinOp::Mul,
                Tok::Punct("/") => BinOp::Div,
                Tok::Punct("%") => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, MiniCParseError> {
        if self.at_punct("-") {
            self.next();
            if let Tok::Num(v) = self.peek() {
                let v = *v;
                if v > -(i32::MIN as i64) {
                    return self.fail("integer literal out of range");
                }
                self.next();
                return Ok(Expr::Num(-v as i32));
            }
            let e = self.unary()?;
            return Ok(Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Num(0)),
                Box::new(e),
            ));
        }
        if self.at_punct("*") {
            self.next();
            let e = self.unary()?;
            return Ok(Expr::Load(Box::new(e)));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, MiniCParseError> {
        let mut e = self.primary()?;
        while self.at_punct("[") {
            self.next();
            let index = self.expr()?;
            self.eat_punct("]")?;
            e = Expr::Load(Box::new(Expr::Bin(
                BinOp::Add,
                Box::new(e),
                Box::new(index),
            )));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, MiniCParseError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                if v > i32::MAX as i64 {
                    return self.fail("integer literal out of range");
                }
                self.next();
                Ok(Expr::Num(v as i32))
            }
            Tok::Punct("(") => {
                self.next();
                let e = self.expr()?;
                self.eat_punct(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "null" => {
                self.next();
                Ok(Expr::Null)
            }
            Tok::Ident(s) if s == "malloc" => {
                self.next();
                self.eat_punct("(")?;
                let n = self.expr()?;
                self.eat_punct(")")?;
                Ok(Expr::Malloc(Box::new(n)))
            }
            Tok::Ident(s) if !is_reserved(&s) => {
                if matches!(self.peek2(), Tok::Punct("(")) {
                    let name = self.ident("function name")?;
                    let args = self.args()?;
                    Ok(Expr::Call(name, args))
                } else {
                    self.next();
                    Ok(Expr::Var(s))
                }
            }
            other => self.fail(format!("expected an expression, found {}", show(&other))),
        }
    }
}

fn is_reserved(s: &str) -> bool {
    matches!(
        s,
        "int"
            | "ptr"
            | "void"
            | "export"
            | "extern"
            | "from"
            | "if"
            | "else"
            | "while"
            | "return"
            | "free"
            | "print"
            | "malloc"
            | "null"
    )
}

fn show(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v) => format!("`{v}`"),
        Tok::Punct(p) => format!("`{p}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_function_with_the_works() {
        let src = r#"
            // doubles everything in the block
            export int main(int n) {
                ptr p = malloc(n);
                int i = 0;
                while (i < n) {
                    p[i] = i * 2;
                    i = i + 1;
                }
                int total = *p + p[1];
                free(p);
                return total;
            }
        "#;
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.funcs.len(), 1);
        let f = &prog.funcs[0];
        assert!(f.exported);
        assert_eq!(f.ret, Some(Ty::Int));
        assert_eq!(f.params, vec![Param { ty: Ty::Int, name: "n".into() }]);
        assert_eq!(f.body.len(), 6);
        match &f.body[2].kind {
            StmtKind::While { body, .. } => assert_eq!(body.len(), 2),
            other => panic!("expected the while loop, got {other:?}"),
        }
    }

    #[test]
    fn index_forms_desugar_to_pointer_arithmetic() {
        let src = "void f(ptr p) { p[3] = 7; int x = p[4]; }";
        let prog = parse_program(src).unwrap();
        let body = &prog.funcs[0].body;
        let three = Box::new(Expr::Num(3));
        let p = Box::new(Expr::Var("p".into()));
        assert_eq!(
            body[0].kind,
            StmtKind::Store {
                target: Expr::Bin(BinOp::Add, p.clone(), three),
                value: Expr::Num(7),
            }
        );
        match &body[1].kind {
            StmtKind::Decl { init: Some(Expr::Load(inner)), .. } => {
                assert_eq!(
                    **inner,
                    Expr::Bin(BinOp::Add, p, Box::new(Expr::Num(4)))
                );
            }
            other => panic!("expected the load declaration, got {other:?}"),
        }
    }

    #[test]
    fn extern_declarations_carry_their_module() {
        let src = "extern int get(int i) from lib; extern void ping() from lib;";
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.externs.len(), 2);
        assert_eq!(prog.externs[0].from, "lib");
        assert_eq!(prog.externs[0].ret, Some(Ty::Int));
        assert_eq!(prog.externs[1].ret, None);
    }

    #[test]
    fn precedence_groups_comparisons_loosest() {
        let src = "int f() { return 1 + 2 * 3 < 4 - 1; }";
        let prog = parse_program(src).unwrap();
        match &prog.funcs[0].body[0].kind {
            StmtKind::Return(Some(Expr::Bin(BinOp::Lt, lhs, rhs))) => {
                assert_eq!(
                    **lhs,
                    Expr::Bin(
                        BinOp::Add,
                        Box::new(Expr::Num(1)),
                        Box::new(Expr::Bin(
                            BinOp::Mul,
                            Box::new(Expr::Num(2)),
                            Box::new(Expr::Num(3))
                        ))
                    )
                );
                assert_eq!(
                    **rhs,
                    Expr::Bin(BinOp::Sub, Box::new(Expr::Num(4)), Box::new(Expr::Num(1)))
                );
            }
            other => panic!("expected the comparison, got {other:?}"),
        }
    }

    #[test]
    fn unary_minus_folds_into_literals() {
        let src = "int f() { return -2147483648; }";
        let prog = parse_program(src).unwrap();
        assert_eq!(
            prog.funcs[0].body[0].kind,
            StmtKind::Return(Some(Expr::Num(i32::MIN)))
        );
        assert!(parse_program("int f() { return -2147483649; }").is_err());
        assert!(parse_program("int f() { return 2147483648; }").is_err());
        let src = "int f(int x) { return -x; }";
        let prog = parse_program(src).unwrap();
        assert_eq!(
            prog.funcs[0].body[0].kind,
            StmtKind::Return(Some(Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Num(0)),
                Box::new(Expr::Var("x".into()))
            )))
        );
    }

    #[test]
    fn errors_point_at_the_offending_token() {
        let err = parse_program("int f() { int = 3; }").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.msg.contains("expected a variable name"), "{}", err.msg);

        let err = parse_program("int f() { return while; }").unwrap_err();
        assert!(err.msg.contains("`while`"), "{}", err.msg);

        let err = parse_program("int f() {").unwrap_err();
        assert!(err.msg.contains("unclosed block"), "{}", err.msg);
    }

    #[test]
    fn keywords_cannot_name_things() {
        assert!(parse_program("int malloc() { return 0; }").is_err());
        assert!(parse_program("int f(int free) { return 0; }").is_err());
        assert!(parse_program("int f() { int print = 0; return print; }").is_err());
    }

    #[test]
    fn dereference_binds_tighter_than_arithmetic() {
        let src = "int f(ptr p) { return *p + 1; }";
        let prog = parse_program(src).unwrap();
        match &prog.funcs[0].body[0].kind {
            StmtKind::Return(Some(Expr::Bin(BinOp::Add, lhs, _))) => {
                assert_eq!(**lhs, Expr::Load(Box::new(Expr::Var("p".into()))));
            }
            other => panic!("expected load-then-add, got {other:?}"),
        }
    }
}
