use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Sinh,
    Asinh,
    Pow,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Sqrt,
        Func::Abs,
        Func::Sinh,
        Func::Asinh,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sinh => "sinh",
            Func::Asinh => "asinh",
            Func::Pow => "pow",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }

    /// Reference semantics of a one-argument function.
    pub fn apply1(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
            Func::Sinh => x.sinh(),
            Func::Asinh => x.asinh(),
            Func::Pow => unreachable!("pow takes two arguments"),
        }
    }
}

/// Parsed formula. Variables are referred to by name.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprAst {
    Number(f64),
    Var(String),
    Unary(UnaryOp, Box<ExprAst>),
    Binary(BinaryOp, Box<ExprAst>, Box<ExprAst>),
    Call(Func, Vec<ExprAst>),
}

impl ExprAst {
    pub fn binary(op: BinaryOp, lhs: ExprAst, rhs: ExprAst) -> Self {
        ExprAst::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(child: ExprAst) -> Self {
        ExprAst::Unary(UnaryOp::Neg, Box::new(child))
    }

    pub fn var(name: &str) -> Self {
        ExprAst::Var(name.to_owned())
    }

    pub fn has_vars(&self) -> bool {
        match self {
            ExprAst::Number(_) => false,
            ExprAst::Var(_) => true,
            ExprAst::Unary(_, c) => c.has_vars(),
            ExprAst::Binary(_, l, r) => l.has_vars() || r.has_vars(),
            ExprAst::Call(_, args) => args.iter().any(ExprAst::has_vars),
        }
    }

    /// Direct recursive evaluation; `lookup` resolves variable names.
    pub fn eval_tree(&self, lookup: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            ExprAst::Number(v) => *v,
            ExprAst::Var(name) => lookup(name),
            ExprAst::Unary(UnaryOp::Neg, c) => -c.eval_tree(lookup),
            ExprAst::Binary(op, l, r) => {
                if *op == BinaryOp::Pow {
                    if let Some(n) = small_int_exponent(r) {
                        return powi_chain(l.eval_tree(lookup), n);
                    }
                }
                apply_binary(*op, l.eval_tree(lookup), r.eval_tree(lookup))
            }
            ExprAst::Call(Func::Pow, args) => {
                if let Some(n) = small_int_exponent(&args[1]) {
                    return powi_chain(args[0].eval_tree(lookup), n);
                }
                args[0].eval_tree(lookup).powf(args[1].eval_tree(lookup))
            }
            ExprAst::Call(f, args) => f.apply1(args[0].eval_tree(lookup)),
        }
    }
}

pub(crate) fn apply_binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => a / b,
        BinaryOp::Pow => a.powf(b),
    }
}

/// Literal exponents 2, 3 and 4 are evaluated as multiplication chains.
pub(crate) fn small_int_exponent(e: &ExprAst) -> Option<u8> {
    match e {
        ExprAst::Number(v) if *v == 2.0 => Some(2),
        ExprAst::Number(v) if *v == 3.0 => Some(3),
        ExprAst::Number(v) if *v == 4.0 => Some(4),
        _ => None,
    }
}

#[inline(always)]
pub(crate) fn powi_chain(x: f64, n: u8) -> f64 {
    match n {
        2 => x * x,
        3 => x * x * x,
        _ => {
            let sq = x * x;
            sq * sq
        }
    }
}

/// Fully parenthesized rendering that parses back to the same tree.
impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprAst::Number(v) => write!(f, "{v:?}"),
            ExprAst::Var(name) => f.write_str(name),
            ExprAst::Unary(UnaryOp::Neg, c) => write!(f, "(-{c})"),
            ExprAst::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            ExprAst::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
