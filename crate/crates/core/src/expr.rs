//! Rate-law expressions: AST, printer and a compiled stack program for fast
//! evaluation inside the integrator.

use std::collections::BTreeSet;
use std::fmt;

/// Maximum operand stack depth of a compiled expression.
pub const MAX_STACK_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Symbol(String),
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

impl Expr {
    pub fn symbol(name: impl Into<String>) -> Self {
        Expr::Symbol(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// All symbol names referenced by the expression.
    pub fn symbols(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Symbol(s) => {
                out.insert(s.as_str());
            }
            Expr::Neg(e) => e.collect_symbols(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_symbols(out);
                rhs.collect_symbols(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(_) | Expr::Symbol(_) => ATOM_PRECEDENCE,
            Expr::Neg(_) => NEG_PRECEDENCE,
            Expr::Binary { op, .. } => op.precedence(),
        }
    }

    /// Compile into a postfix program. `resolve` maps a symbol to its slot in
    /// the evaluation buffer.
    pub fn compile<F>(&self, resolve: &F) -> Result<Program, CompileError>
    where
        F: Fn(&str) -> Option<usize>,
    {
        let mut ops = Vec::new();
        self.emit(resolve, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Neg | Op::PowI(_) => {}
                _ => depth -= 1,
            }
            max_depth = max_depth.max(depth);
        }
        if max_depth > MAX_STACK_DEPTH {
            return Err(CompileError::TooDeep);
        }
        Ok(Program { ops })
    }

    fn emit<F>(&self, resolve: &F, ops: &mut Vec<Op>) -> Result<(), CompileError>
    where
        F: Fn(&str) -> Option<usize>,
    {
        match self {
            Expr::Const(c) => ops.push(Op::Const(*c)),
            Expr::Symbol(s) => {
                let slot = resolve(s).ok_or_else(|| CompileError::Unresolved(s.clone()))?;
                ops.push(Op::Load(slot));
            }
            Expr::Neg(e) => {
                e.emit(resolve, ops)?;
                ops.push(Op::Neg);
            }
            Expr::Binary { op, lhs, rhs } => {
                lhs.emit(resolve, ops)?;
                if *op == BinOp::Pow {
                    if let Expr::Const(c) = **rhs {
                        if c.fract() == 0.0 && c.abs() <= 64.0 {
                            ops.push(Op::PowI(c as i32));
                            return Ok(());
                        }
                    }
                }
                rhs.emit(resolve, ops)?;
                ops.push(match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                    BinOp::Div => Op::Div,
                    BinOp::Pow => Op::Pow,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Symbol(s) => f.write_str(s),
            Expr::Neg(e) => {
                f.write_str("-")?;
                write_child(f, e, e.precedence() < NEG_PRECEDENCE)
            }
            Expr::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                // `^` is right-associative with a unary-level exponent; the
                // other operators are left-associative.
                let (lhs_parens, rhs_parens) = if *op == BinOp::Pow {
                    (lhs.precedence() <= p, rhs.precedence() < NEG_PRECEDENCE)
                } else {
                    (lhs.precedence() < p, rhs.precedence() <= p)
                };
                write_child(f, lhs, lhs_parens)?;
                if *op == BinOp::Pow {
                    write!(f, "{}", op.symbol())?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                write_child(f, rhs, rhs_parens)
            }
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("unresolved symbol `{0}`")]
    Unresolved(String),
    #[error("expression nesting exceeds {MAX_STACK_DEPTH} operands")]
    TooDeep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(usize),
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    PowI(i32),
    Neg,
}

/// Runtime faults of a compiled expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum EvalFault {
    #[error("division by zero")]
    DivisionByZero,
}

/// Postfix program over a flat slot buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
}

impl Program {
    #[inline]
    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalFault> {
        let mut stack = [0.0f64; MAX_STACK_DEPTH];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::Load(i) => {
                    stack[sp] = slots[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::PowI(n) => stack[sp - 1] = stack[sp - 1].powi(n),
                _ => {
                    sp -= 1;
                    let b = stack[sp];
                    let a = stack[sp - 1];
                    stack[sp - 1] = match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => {
                            if b == 0.0 {
                                return Err(EvalFault::DivisionByZero);
                            }
                            a / b
                        }
                        Op::Pow => a.powf(b),
                        _ => unreachable!(),
                    };
                }
            }
        }
        Ok(stack[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots_for<'a>(names: &'a [&'a str]) -> impl Fn(&str) -> Option<usize> + 'a {
        move |s| names.iter().position(|n| *n == s)
    }

    #[test]
    fn compiled_matches_hand_arithmetic() {
        // k*x/(km + x) - x^2
        let e = Expr::binary(
            BinOp::Sub,
            Expr::binary(
                BinOp::Div,
                Expr::binary(BinOp::Mul, Expr::symbol("k"), Expr::symbol("x")),
                Expr::binary(BinOp::Add, Expr::symbol("km"), Expr::symbol("x")),
            ),
            Expr::binary(BinOp::Pow, Expr::symbol("x"), Expr::Const(2.0)),
        );
        let names = ["k", "x", "km"];
        let p = e.compile(&slots_for(&names)).unwrap();
        let v = p.eval(&[2.0, 3.0, 1.0]).unwrap();
        assert_eq!(v, 2.0 * 3.0 / 4.0 - 9.0);
    }

    #[test]
    fn division_by_zero_is_flagged() {
        let e = Expr::binary(BinOp::Div, Expr::Const(1.0), Expr::symbol("x"));
        let p = e.compile(&slots_for(&["x"])).unwrap();
        assert_eq!(p.eval(&[0.0]), Err(EvalFault::DivisionByZero));
    }

    #[test]
    fn unresolved_symbol_fails_compile() {
        let e = Expr::symbol("zz");
        assert_eq!(
            e.compile(&slots_for(&["x"])),
            Err(CompileError::Unresolved("zz".into()))
        );
    }

    #[test]
    fn printer_keeps_structure() {
        let e = Expr::binary(
            BinOp::Sub,
            Expr::symbol("a"),
            Expr::binary(BinOp::Sub, Expr::symbol("b"), Expr::symbol("c")),
        );
        assert_eq!(e.to_string(), "a - (b - c)");
        let p = Expr::binary(
            BinOp::Pow,
            Expr::Neg(Box::new(Expr::symbol("x"))),
            Expr::Neg(Box::new(Expr::Const(2.0))),
        );
        assert_eq!(p.to_string(), "(-x)^-2");
    }
}
