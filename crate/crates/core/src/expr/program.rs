use std::collections::HashMap;

use super::ast::{apply_binary, powi_chain, small_int_exponent, BinaryOp, ExprAst, Func, UnaryOp};
use super::ExprError;
use crate::fastmath::MathPolicy;

/// Entries processed per pass over the instruction list in batch execution.
const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instr {
    Const(f64),
    Load(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    /// `x^n` for n in {2, 3, 4} as a multiplication chain.
    PowInt(u8),
    Call(Func),
}

/// Postfix program over a value stack, compiled from an [`ExprAst`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExprProgram {
    code: Vec<Instr>,
    variables: Vec<String>,
    max_depth: usize,
}

/// One variable binding for batch execution.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// Same value for every entry (parameters).
    Scalar(f64),
    /// One value per entry (observables).
    Column(&'a [f64]),
}

struct Emitter {
    code: Vec<Instr>,
    variables: Vec<String>,
    depth: usize,
    max_depth: usize,
}

impl Emitter {
    fn push(&mut self, instr: Instr, delta: isize) {
        self.code.push(instr);
        self.depth = (self.depth as isize + delta) as usize;
        self.max_depth = self.max_depth.max(self.depth);
    }

    fn emit(&mut self, ast: &ExprAst) {
        if !ast.has_vars() {
            self.push(Instr::Const(ast.eval_tree(&|_| f64::NAN)), 1);
            return;
        }
        match ast {
            ExprAst::Number(v) => self.push(Instr::Const(*v), 1),
            ExprAst::Var(name) => {
                let slot = match self.variables.iter().position(|v| v == name) {
                    Some(s) => s,
                    None => {
                        self.variables.push(name.clone());
                        self.variables.len() - 1
                    }
                };
                self.push(Instr::Load(slot), 1);
            }
            ExprAst::Unary(UnaryOp::Neg, c) => {
                self.emit(c);
                self.push(Instr::Neg, 0);
            }
            ExprAst::Binary(BinaryOp::Pow, base, exp) => self.emit_pow(base, exp),
            ExprAst::Call(Func::Pow, args) => self.emit_pow(&args[0], &args[1]),
            ExprAst::Binary(op, l, r) => {
                self.emit(l);
                self.emit(r);
                let instr = match op {
                    BinaryOp::Add => Instr::Add,
                    BinaryOp::Sub => Instr::Sub,
                    BinaryOp::Mul => Instr::Mul,
                    BinaryOp::Div => Instr::Div,
                    BinaryOp::Pow => unreachable!(),
                };
                self.push(instr, -1);
            }
            ExprAst::Call(f, args) => {
                self.emit(&args[0]);
                self.push(Instr::Call(*f), 0);
            }
        }
    }

    fn emit_pow(&mut self, base: &ExprAst, exp: &ExprAst) {
        self.emit(base);
        if let Some(n) = small_int_exponent(exp) {
            self.push(Instr::PowInt(n), 0);
        } else {
            self.emit(exp);
            self.push(Instr::Pow, -1);
        }
    }
}

/// Compiles to postfix code, folding every variable-free subtree into one constant.
pub fn compile(ast: &ExprAst) -> ExprProgram {
    let mut e = Emitter {
        code: Vec::new(),
        variables: Vec::new(),
        depth: 0,
        max_depth: 0,
    };
    e.emit(ast);
    debug_assert_eq!(e.depth, 1);
    ExprProgram {
        code: e.code,
        variables: e.variables,
        max_depth: e.max_depth,
    }
}

#[inline(always)]
fn call1(f: Func, x: f64, policy: MathPolicy) -> f64 {
    match f {
        Func::Exp => policy.exp(x),
        Func::Log => policy.ln(x),
        other => other.apply1(x),
    }
}

impl ExprProgram {
    pub fn code(&self) -> &[Instr] {
        &self.code
    }

    /// Variable names in slot order.
    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Evaluates with `slots[i]` bound to `variables()[i]`.
    pub fn eval_slots(&self, slots: &[f64], policy: MathPolicy) -> f64 {
        assert!(slots.len() >= self.variables.len(), "missing variable slots");
        let mut inline = [0.0f64; 32];
        let mut heap = Vec::new();
        let stack: &mut [f64] = if self.max_depth <= inline.len() {
            &mut inline
        } else {
            heap.resize(self.max_depth, 0.0);
            &mut heap
        };
        let mut sp = 0usize;
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Instr::Load(s) => {
                    stack[sp] = slots[s];
                    sp += 1;
                }
                Instr::Neg => stack[sp - 1] = -stack[sp - 1],
                Instr::PowInt(n) => stack[sp - 1] = powi_chain(stack[sp - 1], n),
                Instr::Call(f) => stack[sp - 1] = call1(f, stack[sp - 1], policy),
                Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Pow => {
                    sp -= 1;
                    let b = stack[sp];
                    stack[sp - 1] = apply_binary(binary_of(*instr), stack[sp - 1], b);
                }
            }
        }
        stack[0]
    }

    /// Evaluates with variables bound by name.
    pub fn eval(&self, values: &HashMap<&str, f64>, policy: MathPolicy) -> Result<f64, ExprError> {
        let slots = self
            .variables
            .iter()
            .map(|v| {
                values
                    .get(v.as_str())
                    .copied()
                    .ok_or_else(|| ExprError::Unbound(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.eval_slots(&slots, policy))
    }

    /// Column evaluation: instructions outer, entries inner, over chunks of entries.
    pub fn eval_batch_slots(&self, inputs: &[Input<'_>], out: &mut [f64], policy: MathPolicy) -> Result<(), ExprError> {
        if inputs.len() < self.variables.len() {
            return Err(ExprError::Unbound(self.variables[inputs.len()].clone()));
        }
        let n = out.len();
        for (name, input) in self.variables.iter().zip(inputs) {
            if let Input::Column(c) = input {
                if c.len() != n {
                    return Err(ExprError::LengthMismatch {
                        name: name.clone(),
                        len: c.len(),
                        expected: n,
                    });
                }
            }
        }
        if n == 0 {
            return Ok(());
        }
        let mut scratch = vec![0.0f64; self.max_depth * CHUNK];
        for start in (0..n).step_by(CHUNK) {
            let len = CHUNK.min(n - start);
            let mut sp = 0usize;
            for instr in &self.code {
                match *instr {
                    Instr::Const(v) => {
                        scratch[sp * CHUNK..sp * CHUNK + len].fill(v);
                        sp += 1;
                    }
                    Instr::Load(s) => {
                        let dst = &mut scratch[sp * CHUNK..sp * CHUNK + len];
                        match inputs[s] {
                            Input::Scalar(v) => dst.fill(v),
                            Input::Column(c) => dst.copy_from_slice(&c[start..start + len]),
                        }
                        sp += 1;
                    }
                    Instr::Neg => {
                        for v in &mut scratch[(sp - 1) * CHUNK..(sp - 1) * CHUNK + len] {
                            *v = -*v;
                        }
                    }
                    Instr::PowInt(p) => {
                        for v in &mut scratch[(sp - 1) * CHUNK..(sp - 1) * CHUNK + len] {
                            *v = powi_chain(*v, p);
                        }
                    }
                    Instr::Call(f) => {
                        let top = &mut scratch[(sp - 1) * CHUNK..(sp - 1) * CHUNK + len];
                        match f {
                            Func::Exp => top.iter_mut().for_each(|v| *v = policy.exp(*v)),
                            Func::Log => top.iter_mut().for_each(|v| *v = policy.ln(*v)),
                            other => top.iter_mut().for_each(|v| *v = other.apply1(*v)),
                        }
                    }
                    Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Pow => {
                        sp -= 1;
                        let (lower, upper) = scratch.split_at_mut(sp * CHUNK);
                        let a = &mut lower[(sp - 1) * CHUNK..(sp - 1) * CHUNK + len];
                        let b = &upper[..len];
                        match instr {
                            Instr::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x += *y),
                            Instr::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x -= *y),
                            Instr::Mul => a.iter_mut().zip(b).for_each(|(x, y)| *x *= *y),
                            Instr::Div => a.iter_mut().zip(b).for_each(|(x, y)| *x /= *y),
                            _ => a.iter_mut().zip(b).for_each(|(x, y)| *x = x.powf(*y)),
                        }
                    }
                }
            }
            out[start..start + len].copy_from_slice(&scratch[..len]);
        }
        Ok(())
    }

    /// Column evaluation with inputs bound by name.
    pub fn eval_batch(
        &self,
        inputs: &HashMap<&str, Input<'_>>,
        out: &mut [f64],
        policy: MathPolicy,
    ) -> Result<(), ExprError> {
        let ordered = self
            .variables
            .iter()
            .map(|v| {
                inputs
                    .get(v.as_str())
                    .copied()
                    .ok_or_else(|| ExprError::Unbound(v.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.eval_batch_slots(&ordered, out, policy)
    }
}

fn binary_of(instr: Instr) -> BinaryOp {
    match instr {
        Instr::Add => BinaryOp::Add,
        Instr::Sub => BinaryOp::Sub,
        Instr::Mul => BinaryOp::Mul,
        Instr::Div => BinaryOp::Div,
        _ => BinaryOp::Pow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn program(text: &str, vars: &[&str]) -> ExprProgram {
        compile(&parse(text, vars).unwrap())
    }

    #[test]
    fn single_number() {
        let p = compile(&ExprAst::Number(5.0));
        assert_eq!(p.code(), &[Instr::Const(5.0)]);
        assert_eq!(p.max_depth(), 1);
    }

    #[test]
    fn quadratic_depth() {
        // a x * x * 1 +: stack peaks at 2.
        let p = program("a*x*x + 1.", &["x", "a"]);
        assert!(p.max_depth() <= 3);
        assert_eq!(p.max_depth(), 2);
    }

    #[test]
    fn folds_constant_subtrees() {
        let p = program("2*3+x", &["x"]);
        assert_eq!(p.code(), &[Instr::Const(6.0), Instr::Load(0), Instr::Add]);
        let p = program("2*sigma", &["sigma"]);
        assert_eq!(p.code(), &[Instr::Const(2.0), Instr::Load(0), Instr::Mul]);
    }

    #[test]
    fn scalar_evaluation() {
        let p = program("a*x*x + 1.", &["x", "a"]);
        let vals: HashMap<&str, f64> = [("a", 3.0), ("x", 2.0)].into_iter().collect();
        assert_eq!(p.eval(&vals, MathPolicy::Precise).unwrap(), 13.0);

        let p = program("x^0", &["x"]);
        let vals: HashMap<&str, f64> = [("x", 123.4)].into_iter().collect();
        assert_eq!(p.eval(&vals, MathPolicy::Precise).unwrap(), 1.0);

        let p = program("log(x)", &["x"]);
        let vals: HashMap<&str, f64> = [("x", -1.0)].into_iter().collect();
        assert!(p.eval(&vals, MathPolicy::Precise).unwrap().is_nan());
        assert!(p.eval(&vals, MathPolicy::Fast).unwrap().is_nan());

        assert_eq!(
            p.eval(&HashMap::new(), MathPolicy::Precise),
            Err(ExprError::Unbound("x".into()))
        );
    }

    #[test]
    fn batch_evaluation() {
        let p = program("a*x*x+1", &["x", "a"]);
        let xs = [0.0, 1.0, 2.0];
        let inputs: HashMap<&str, Input> = [("a", Input::Scalar(3.0)), ("x", Input::Column(&xs))]
            .into_iter()
            .collect();
        let mut out = [0.0; 3];
        p.eval_batch(&inputs, &mut out, MathPolicy::Precise).unwrap();
        assert_eq!(out, [1.0, 4.0, 13.0]);

        let mut empty: [f64; 0] = [];
        let inputs: HashMap<&str, Input> = [("a", Input::Scalar(3.0)), ("x", Input::Column(&[]))]
            .into_iter()
            .collect();
        p.eval_batch(&inputs, &mut empty, MathPolicy::Precise).unwrap();

        let inputs: HashMap<&str, Input> = [("a", Input::Scalar(3.0)), ("x", Input::Column(&xs[..2]))]
            .into_iter()
            .collect();
        assert!(matches!(
            p.eval_batch(&inputs, &mut out, MathPolicy::Precise),
            Err(ExprError::LengthMismatch { .. })
        ));
        let inputs: HashMap<&str, Input> = [("x", Input::Column(&xs))].into_iter().collect();
        assert_eq!(
            p.eval_batch(&inputs, &mut out, MathPolicy::Precise),
            Err(ExprError::Unbound("a".into()))
        );
    }

    #[test]
    fn batch_matches_rows_across_chunks() {
        let p = program("exp(-(x-mu)^2/(2*sigma^2)) + log(x*x+1)", &["x", "mu", "sigma"]);
        let xs: Vec<f64> = (0..1500).map(|i| -3.0 + i as f64 * 0.004).collect();
        for policy in [MathPolicy::Precise, MathPolicy::Fast] {
            let mut out = vec![0.0; xs.len()];
            p.eval_batch_slots(
                &[Input::Column(&xs), Input::Scalar(0.3), Input::Scalar(1.1)],
                &mut out,
                policy,
            )
            .unwrap();
            for (x, o) in xs.iter().zip(&out) {
                assert_eq!(o.to_bits(), p.eval_slots(&[*x, 0.3, 1.1], policy).to_bits());
            }
        }
    }
}
