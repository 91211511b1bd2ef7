//! MiniC type checker.
//!
//! The central rule is the absence of casts: `int` and `ptr` never convert
//! into each other, memory holds only ints, and pointer arithmetic needs
//! the pointer on the left. Everything a checked program can do with a
//! pointer is therefore derived from `malloc`, `null`, or a pointer it was
//! handed.

use std::collections::HashMap;

use super::{BinOp, Expr, SourceProgram, Stmt, StmtKind, Ty};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckError {
    /// Function the error is in, when it is in one.
    pub func: Option<String>,
    pub line: u32,
    pub msg: String,
}

impl std::fmt::Display for CheckError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.func {
            Some(name) => write!(f, "in {name} (line {}): {}", self.line, self.msg),
            None => write!(f, "line {}: {}", self.line, self.msg),
        }
    }
}

impl std::error::Error for CheckError {}

type Sig = (Vec<Ty>, Option<Ty>);

pub fn check(program: &SourceProgram) -> Result<(), CheckError> {
    let mut sigs: HashMap<String, Sig> = HashMap::new();
    for e in &program.externs {
        let sig = (e.params.iter().map(|p| p.ty).collect(), e.ret);
        if sigs.insert(e.name.clone(), sig).is_some() {
            return Err(CheckError {
                func: None,
                line: e.line,
                msg: format!("`{}` is declared more than once", e.name),
            });
        }
    }
    for f in &program.funcs {
        let sig = (f.params.iter().map(|p| p.ty).collect(), f.ret);
        if sigs.insert(f.name.clone(), sig).is_some() {
            return Err(CheckError {
                func: None,
                line: f.line,
                msg: format!("`{}` is declared more than once", f.name),
            });
        }
    }
    for f in &program.funcs {
        let mut checker = FuncChecker {
            sigs: &sigs,
            func: f.name.clone(),
            ret: f.ret,
            vars: HashMap::new(),
            line: f.line,
        };
        for p in &f.params {
            if checker.vars.insert(p.name.clone(), p.ty).is_some() {
                return Err(checker.fail(format!("duplicate parameter `{}`", p.name)));
            }
        }
        checker.block(&f.body)?;
    }
    Ok(())
}

struct FuncChecker<'a> {
    sigs: &'a HashMap<String, Sig>,
    func: String,
    ret: Option<Ty>,
    vars: HashMap<String, Ty>,
    line: u32,
}

impl FuncChecker<'_> {
    fn fail(&self, msg: impl Into<String>) -> CheckError {
        CheckError {
            func: Some(self.func.clone()),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Checks a block; names declared inside go out of scope at its end.
    /// Shadowing an outer name is rejected outright, which lets the
    /// backends assign every declaration in a function its own slot.
    fn block(&mut self, body: &[Stmt]) -> Result<(), CheckError> {
        let mut declared = Vec::new();
        for stmt in body {
            self.line = stmt.line;
            if let StmtKind::Decl { name, .. } = &stmt.kind {
                declared.push(name.clone());
            }
            self.stmt(stmt)?;
        }
        for name in declared {
            self.vars.remove(&name);
        }
        Ok(())
    }

    fn stmt(&mut self, stmt: &Stmt) -> Result<(), CheckError> {
        match &stmt.kind {
            StmtKind::Decl { ty, name, init } => {
                if let Some(init) = init {
                    self.expect(init, *ty)?;
                }
                if self.vars.insert(name.clone(), *ty).is_some() {
                    return Err(self.fail(format!("`{name}` is already declared")));
                }
                Ok(())
            }
            StmtKind::Assign { name, value } => {
                let ty = *self
                    .vars
                    .get(name)
                    .ok_or_else(|| self.fail(format!("unknown variable `{name}`")))?;
                self.expect(value, ty)
            }
            StmtKind::Store { target, value } => {
                self.expect(target, Ty::Ptr)?;
                self.expect(value, Ty::Int)
            }
            StmtKind::Free(e) => self.expect(e, Ty::Ptr),
            StmtKind::Print(e) => self.expect(e, Ty::Int),
            StmtKind::If {
                cond,
                then_body,
                else_body,
            } => {
                self.expect(cond, Ty::Int)?;
                self.block(then_body)?;
                let line = stmt.line;
                self.line = line;
                self.block(else_body)
            }
            StmtKind::While { cond, body } => {
                self.expect(cond, Ty::Int)?;
                self.block(body)
            }
            StmtKind::Return(value) => match (self.ret, value) {
                (None, None) => Ok(()),
                (None, Some(_)) => Err(self.fail("void function returns a value")),
                (Some(ty), Some(e)) => self.expect(e, ty),
                (Some(ty), None) => {
                    Err(self.fail(format!("function must return {}", ty.name())))
                }
            },
            StmtKind::CallStmt(name, args) => {
                self.call(name, args)?;
                Ok(())
            }
        }
    }

    fn expect(&self, e: &Expr, want: Ty) -> Result<(), CheckError> {
        let got = self.expr(e)?;
        if got == want {
            Ok(())
        } else {
            Err(self.fail(format!("expected {}, found {}", want.name(), got.name())))
        }
    }

    fn expr(&self, e: &Expr) -> Result<Ty, CheckError> {
        match e {
            Expr::Num(_) => Ok(Ty::Int),
            Expr::Null => Ok(Ty::Ptr),
            Expr::Var(name) => self
                .vars
                .get(name)
                .copied()
                .ok_or_else(|| self.fail(format!("unknown variable `{name}`"))),
            Expr::Load(inner) => {
                self.expect(inner, Ty::Ptr)?;
                Ok(Ty::Int)
            }
            Expr::Malloc(n) => {
                self.expect(n, Ty::Int)?;
                Ok(Ty::Ptr)
            }
            Expr::Call(name, args) => match self.call(name, args)? {
                Some(ty) => Ok(ty),
                None => Err(self.fail(format!("void function `{name}` used as a value"))),
            },
            Expr::Bin(op, a, b) => {
                let ta = self.expr(a)?;
                let tb = self.expr(b)?;
                match op {
                    BinOp::Add | BinOp::Sub => match (ta, tb) {
                        (Ty::Int, Ty::Int) => Ok(Ty::Int),
                        (Ty::Ptr, Ty::Int) => Ok(Ty::Ptr),
                        (Ty::Int, Ty::Ptr) => {
                            Err(self.fail("pointer arithmetic needs the pointer on the left"))
                        }
                        (Ty::Ptr, Ty::Ptr) => {
                            Err(self.fail("cannot combine two pointers arithmetically"))
                        }
                    },
                    BinOp::Mul | BinOp::Div | BinOp::Rem => {
                        if ta == Ty::Int && tb == Ty::Int {
                            Ok(Ty::Int)
                        } else {
                            Err(self.fail(format!(
                                "`{}` needs ints, found {} and {}",
                                op_name(*op),
                                ta.name(),
                                tb.name()
                            )))
                        }
                    }
                    BinOp::Eq | BinOp::Ne => {
                        if ta == tb {
                            Ok(Ty::Int)
                        } else {
                            Err(self.fail(format!(
                                "cannot compare {} with {}",
                                ta.name(),
                                tb.name()
                            )))
                        }
                    }
                    BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge => {
                        if ta == Ty::Int && tb == Ty::Int {
                            Ok(Ty::Int)
                        } else {
                            Err(self.fail("pointers have no ordering"))
                        }
                    }
                }
            }
        }
    }

    fn call(&self, name: &str, args: &[Expr]) -> Result<Option<Ty>, CheckError> {
        let (params, ret) = self
            .sigs
            .get(name)
            .ok_or_else(|| self.fail(format!("unknown function `{name}`")))?;
        if params.len() != args.len() {
            return Err(self.fail(format!(
                "`{name}` takes {} arguments, got {}",
                params.len(),
                args.len()
            )));
        }
        for (arg, want) in args.iter().zip(params) {
            self.expect(arg, *want)?;
        }
        Ok(*ret)
    }
}

fn op_name(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Rem => "%",
        BinOp::Eq => "==",
        BinOp::Ne => "!=",
        BinOp::Lt => "<",
        BinOp::Gt => ">",
        BinOp::Le => "<=",
        BinOp::Ge => ">=",
    }
}
