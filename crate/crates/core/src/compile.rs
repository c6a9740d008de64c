//! Compiled expression evaluation.
//!
//! Symbolic trees are too slow to evaluate per grid point. A [`Program`] is
//! a flat postfix instruction list over a caller-chosen slot layout: bind
//! each atom to an input index once, then evaluate with a plain `&[f64]`.
//! Evaluation performs the same floating operations in the same order every
//! call, which keeps grid sweeps bit-reproducible.

use std::collections::BTreeMap;
use std::fmt;

use crate::expr::{Atom, Expr, Func};

/// An atom in the expression had no input slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileError {
    pub atom: String,
}

impl fmt::Display for CompileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "expression references `{}`, which has no value here", self.atom)
    }
}

impl std::error::Error for CompileError {}

#[derive(Debug, Clone, Copy)]
enum Op {
    Slot(usize),
    Const(f64),
    Add,
    Mul,
    Neg,
    Pow(u32),
    Fun(Func),
}

/// A compiled expression.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    depth: usize,
}

impl Program {
    /// Compile against a slot layout. Every atom of `e` (including those
    /// inside function arguments) must appear in `slots`.
    pub fn compile(e: &Expr, slots: &BTreeMap<Atom, usize>) -> Result<Program, CompileError> {
        let mut ops = Vec::new();
        emit(e, slots, &mut ops)?;
        // Simulate to size the stack once; eval then never reallocates.
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Slot(_) | Op::Const(_) => {
                    depth += 1;
                    max_depth = max_depth.max(depth);
                }
                Op::Add | Op::Mul => depth -= 1,
                Op::Neg | Op::Pow(_) | Op::Fun(_) => {}
            }
        }
        debug_assert_eq!(depth, 1);
        Ok(Program { ops, depth: max_depth })
    }

    /// Evaluate, reusing `stack` as scratch space.
    pub fn eval_with(&self, inputs: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        stack.reserve(self.depth);
        for op in &self.ops {
            match *op {
                Op::Slot(i) => stack.push(inputs[i]),
                Op::Const(c) => stack.push(c),
                Op::Add => {
                    let b = stack.pop().unwrap();
                    *stack.last_mut().unwrap() += b;
                }
                Op::Mul => {
                    let b = stack.pop().unwrap();
                    *stack.last_mut().unwrap() *= b;
                }
                Op::Neg => {
                    let a = stack.last_mut().unwrap();
                    *a = -*a;
                }
                Op::Pow(k) => {
                    let a = stack.last_mut().unwrap();
                    *a = a.powi(k as i32);
                }
                Op::Fun(f) => {
                    let a = stack.last_mut().unwrap();
                    *a = f.apply_raw(*a);
                }
            }
        }
        stack.pop().unwrap()
    }

    /// Convenience wrapper that allocates its own scratch.
    pub fn eval(&self, inputs: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(self.depth);
        self.eval_with(inputs, &mut stack)
    }

    /// True when the program is the constant zero, so callers can skip work.
    pub fn is_const_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(c)] if *c == 0.0)
    }
}

fn emit(e: &Expr, slots: &BTreeMap<Atom, usize>, ops: &mut Vec<Op>) -> Result<(), CompileError> {
    match e {
        Expr::Num(c) => ops.push(Op::Const(c.to_f64())),
        Expr::Atom(Atom::Func(f, arg)) => {
            emit(arg, slots, ops)?;
            ops.push(Op::Fun(*f));
        }
        Expr::Atom(a) => match slots.get(a) {
            Some(&i) => ops.push(Op::Slot(i)),
            None => return Err(CompileError { atom: a.to_string() }),
        },
        Expr::Sum(terms) => {
            if terms.is_empty() {
                ops.push(Op::Const(0.0));
            } else {
                for (i, t) in terms.iter().enumerate() {
                    emit(t, slots, ops)?;
                    if i > 0 {
                        ops.push(Op::Add);
                    }
                }
            }
        }
        Expr::Prod(factors) => {
            if factors.is_empty() {
                ops.push(Op::Const(1.0));
            } else {
                for (i, f) in factors.iter().enumerate() {
                    emit(f, slots, ops)?;
                    if i > 0 {
                        ops.push(Op::Mul);
                    }
                }
            }
        }
        Expr::Pow(base, k) => {
            emit(base, slots, ops)?;
            ops.push(Op::Pow(*k));
        }
        Expr::Neg(inner) => {
            emit(inner, slots, ops)?;
            ops.push(Op::Neg);
        }
    }
    Ok(())
}

/// Assign consecutive slots to a set of atoms in canonical atom order.
pub fn slot_layout<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> BTreeMap<Atom, usize> {
    let ordered: std::collections::BTreeSet<Atom> = atoms.into_iter().cloned().collect();
    ordered.into_iter().enumerate().map(|(i, a)| (a, i)).collect()
}
