//! Seeded generation of well-typed MiniC programs.
//!
//! Programs from [`generate`] are memory-clean by construction: every
//! allocation is freed exactly once on the one straight-line path through
//! `main`, indices are literals strictly inside the allocation's literal
//! size, loops count up to literal bounds, and division and remainder only
//! ever see positive literal divisors. They terminate well inside the
//! default fuel and behave identically on both backends.
//!
//! [`generate_buggy`] keeps the same skeleton but plants exactly one
//! memory bug in one allocation scene: an out-of-bounds read or write one
//! element past the end, a use after free, or a double free. The bug site
//! is on the straight-line path, so it is always reached.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn generate(seed: u64) -> String {
    Gen::new(seed, None).program()
}

pub fn generate_buggy(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let bug = match rng.gen_range(0..5) {
        0 => Bug::OobRead,
        1 => Bug::OobWrite,
        2 => Bug::UafRead,
        3 => Bug::UafWrite,
        _ => Bug::DoubleFree,
    };
    Gen::new(seed, Some(bug)).program()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bug {
    OobRead,
    OobWrite,
    UafRead,
    UafWrite,
    DoubleFree,
}

struct Gen {
    rng: ChaCha8Rng,
    bug: Option<Bug>,
    out: String,
    indent: usize,
    /// Integer variables currently in scope.
    ints: Vec<String>,
    next_var: usize,
}

impl Gen {
    fn new(seed: u64, bug: Option<Bug>) -> Gen {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            bug,
            out: String::new(),
            indent: 0,
            ints: Vec::new(),
            next_var: 0,
        }
    }

    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn fresh(&mut self, prefix: &str) -> String {
        let name = format!("{prefix}{}", self.next_var);
        self.next_var += 1;
        name
    }

    fn program(mut self) -> String {
        let helpers = self.rng.gen_range(0..=2);
        for h in 0..helpers {
            self.helper(h);
            self.out.push('\n');
        }
        self.main(helpers);
        self.out
    }

    fn helper(&mut self, idx: usize) {
        self.line(&format!("int h{idx}(int a, int b) {{"));
        self.indent += 1;
        self.ints = vec!["a".into(), "b".into()];
        let c = self.fresh("c");
        let init = self.expr(2);
        self.line(&format!("int {c} = {init};"));
        self.ints.push(c.clone());
        if self.rng.gen_bool(0.5) {
            let cond = self.cond();
            let then_e = self.expr(1);
            let else_e = self.expr(1);
            self.line(&format!("if {cond} {{"));
            self.indent += 1;
            self.line(&format!("{c} = {then_e};"));
            self.indent -= 1;
            self.line("} else {");
            self.indent += 1;
            self.line(&format!("{c} = {else_e};"));
            self.indent -= 1;
            self.line("}");
        }
        let ret = self.expr(2);
        self.line(&format!("return {ret};"));
        self.indent -= 1;
        self.line("}");
        self.ints.clear();
    }

    fn main(&mut self, helpers: usize) {
        self.line("export int main(int n) {");
        self.indent += 1;
        self.ints = vec!["n".into()];
        self.line("int total = 0;");
        self.ints.push("total".into());

        let scenes = self.rng.gen_range(2..=4);
        let bug_scene = self.rng.gen_range(0..scenes);
        for s in 0..scenes {
            let plant = self.bug.filter(|_| s == bug_scene);
            match (plant, self.rng.gen_range(0..5)) {
                // A planted bug needs an allocation to abuse.
                (Some(bug), _) => self.array_scene(Some(bug)),
                (None, 0) => self.arith_scene(),
                (None, 1 | 2) => self.array_scene(None),
                (None, 3) if helpers > 0 => self.call_scene(helpers),
                (None, 3) => self.branch_scene(),
                (None, _) => {
                    if self.rng.gen_bool(0.5) {
                        self.branch_scene()
                    } else {
                        self.loop_scene()
                    }
                }
            }
        }

        self.line("return total;");
        self.indent -= 1;
        self.line("}");
    }

    fn arith_scene(&mut self) {
        let x = self.fresh("x");
        let init = self.expr(3);
        self.line(&format!("int {x} = {init};"));
        self.ints.push(x.clone());
        if self.rng.gen_bool(0.4) {
            self.line(&format!("print({x});"));
        }
        self.line(&format!("total = total + {x};"));
    }

    fn array_scene(&mut self, bug: Option<Bug>) {
        let size = self.rng.gen_range(1..=6);
        let p = self.fresh("p");
        let i = self.fresh("i");
        self.line(&format!("ptr {p} = malloc({size});"));
        self.line(&format!("int {i} = 0;"));
        self.ints.push(i.clone());
        self.line(&format!("while ({i} < {size}) {{"));
        self.indent += 1;
        let fill = self.expr(2);
        self.line(&format!("{p}[{i}] = {fill};"));
        self.line(&format!("{i} = {i} + 1;"));
        self.indent -= 1;
        self.line("}");

        for _ in 0..self.rng.gen_range(0..=2) {
            let j = self.rng.gen_range(0..size);
            if self.rng.gen_bool(0.7) {
                self.line(&format!("total = total + {p}[{j}];"));
            } else {
                let v = self.expr(1);
                self.line(&format!("{p}[{j}] = {v};"));
            }
        }
        if size > 1 && self.rng.gen_bool(0.4) {
            let j = self.rng.gen_range(1..size);
            let q = self.fresh("q");
            self.line(&format!("ptr {q} = {p} + {j};"));
            self.line(&format!("total = total + *{q};"));
        }
        if self.rng.gen_bool(0.3) {
            let j = self.rng.gen_range(0..size);
            self.line(&format!("print({p}[{j}]);"));
        }

        match bug {
            Some(Bug::OobRead) => self.line(&format!("total = total + {p}[{size}];")),
            Some(Bug::OobWrite) => self.line(&format!("{p}[{size}] = 1;")),
            _ => {}
        }
        self.line(&format!("free({p});"));
        match bug {
            Some(Bug::UafRead) => self.line(&format!("total = total + {p}[0];")),
            Some(Bug::UafWrite) => self.line(&format!("{p}[0] = 2;")),
            Some(Bug::DoubleFree) => self.line(&format!("free({p});")),
            _ => {}
        }
    }

    fn branch_scene(&mut self) {
        let cond = self.cond();
        let then_e = self.expr(2);
        let else_e = self.expr(2);
        self.line(&format!("if {cond} {{"));
        self.indent += 1;
        self.line(&format!("total = total + {then_e};"));
        self.indent -= 1;
        self.line("} else {");
        self.indent += 1;
        self.line(&format!("total = total - {else_e};"));
        self.indent -= 1;
        self.line("}");
    }

    fn loop_scene(&mut self) {
        let outer = self.rng.gen_range(2..=4);
        let inner = self.rng.gen_range(2..=4);
        let a = self.fresh("a");
        let b = self.fresh("b");
        self.line(&format!("int {a} = 0;"));
        self.line(&format!("while ({a} < {outer}) {{"));
        self.indent += 1;
        self.line(&format!("int {b} = 0;"));
        self.line(&format!("while ({b} < {inner}) {{"));
        self.indent += 1;
        self.line(&format!("total = total + {b} * {a};"));
        self.line(&format!("{b} = {b} + 1;"));
        self.indent -= 1;
        self.line("}");
        self.line(&format!("{a} = {a} + 1;"));
        self.indent -= 1;
        self.line("}");
        self.ints.push(a);
    }

    fn call_scene(&mut self, helpers: usize) {
        let h = self.rng.gen_range(0..helpers);
        let x = self.expr(1);
        let y = self.expr(1);
        self.line(&format!("total = total + h{h}({x}, {y});"));
        if self.rng.gen_bool(0.3) {
            self.line("print(total);");
        }
    }

    fn cond(&mut self) -> String {
        let a = self.expr(1);
        let b = self.expr(1);
        let op = ["<", ">", "<=", ">=", "==", "!="][self.rng.gen_range(0..6)];
        format!("({a} {op} {b})")
    }

    fn expr(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.atom();
        }
        let a = self.expr(depth - 1);
        match self.rng.gen_range(0..6) {
            0 => format!("({a} + {})", self.expr(depth - 1)),
            1 => format!("({a} - {})", self.expr(depth - 1)),
            2 => format!("({a} * {})", self.expr(depth - 1)),
            3 => format!("({a} / {})", self.rng.gen_range(1..=9)),
            4 => format!("({a} % {})", self.rng.gen_range(1..=9)),
            _ => {
                let op = ["<", ">", "=="][self.rng.gen_range(0..3)];
                format!("({a} {op} {})", self.expr(depth - 1))
            }
        }
    }

    fn atom(&mut self) -> String {
        if !self.ints.is_empty() && self.rng.gen_bool(0.55) {
            self.ints[self.rng.gen_range(0..self.ints.len())].clone()
        } else {
            let n: i32 = self.rng.gen_range(-9..=99);
            if n < 0 {
                format!("(0 - {})", -n)
            } else {
                n.to_string()
            }
        }
    }
}
