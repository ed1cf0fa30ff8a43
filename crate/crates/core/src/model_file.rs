//! Line-oriented model description.
//!
//! ```text
//! # comment
//! observable x -5 5
//! parameter mu 0.5 -2 2
//! parameter sigma 1.2 0.1 5 const
//! parameter c -1 -5 -0.01
//! parameter f 0.7 0 1
//! pdf sig Gaussian(x, mu, sigma)
//! pdf bkg Exponential(x, c)
//! pdf shape Expression("exp(-(x-mu)^2/(2*sigma^2))", x, mu, sigma)
//! pdf model WeightedSum(sig, bkg, f)
//! ```
//!
//! Kinds and their arguments:
//!
//! | kind          | arguments                                         |
//! |---------------|---------------------------------------------------|
//! | `Gaussian`    | observable, mu, sigma                             |
//! | `Exponential` | observable, c                                     |
//! | `ChiSquare`   | observable, k                                     |
//! | `JohnsonSU`   | observable, mu, lambda, gamma, delta              |
//! | `WeightedSum` | n component pdfs, then n - 1 fraction parameters  |
//! | `Expression`  | quoted formula, then every name the formula uses  |
//!
//! Every name must be declared before it is used. Exactly one observable is allowed, and the
//! last `pdf` line is the model.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::eval::{EvalError, Model};
use crate::graph::{Graph, NodeId, NodeSpec, Observable, Parameter};
use crate::pdfs::PdfSpec;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no observable declared")]
    NoObservable,
    #[error("no pdf declared")]
    NoPdf,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// A parsed model file: the fit model plus the definitions it was built from.
#[derive(Debug)]
pub struct ModelFile {
    pub model: Model,
    pub observable: Observable,
    pub name: String,
    /// Every pdf declared in the file, by name.
    pub pdfs: HashMap<String, PdfSpec>,
}

impl ModelFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        parse(&std::fs::read_to_string(path)?)
    }
}

enum Symbol {
    Observable,
    Parameter,
    Pdf(PdfSpec),
}

struct Builder {
    graph: Graph,
    symbols: HashMap<String, (NodeId, Symbol)>,
    observable: Option<(NodeId, Observable)>,
    last_pdf: Option<String>,
    pdfs: HashMap<String, PdfSpec>,
}

pub fn parse(text: &str) -> Result<ModelFile, ModelFileError> {
    let mut b = Builder {
        graph: Graph::new(),
        symbols: HashMap::new(),
        observable: None,
        last_pdf: None,
        pdfs: HashMap::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        b.line(line)
            .map_err(|message| ModelFileError::Syntax { line: i + 1, message })?;
    }
    let (_, observable) = b.observable.ok_or(ModelFileError::NoObservable)?;
    let name = b.last_pdf.ok_or(ModelFileError::NoPdf)?;
    let spec = b.pdfs[&name].clone();
    Ok(ModelFile {
        model: Model::new(b.graph, spec)?,
        observable,
        name,
        pdfs: b.pdfs,
    })
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn number(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{s}` is not a finite number"))
}

impl Builder {
    fn line(&mut self, line: &str) -> Result<(), String> {
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match keyword {
            "observable" => self.observable(rest),
            "parameter" => self.parameter(rest),
            "pdf" => self.pdf(rest),
            other => Err(format!("unknown keyword `{other}`")),
        }
    }

    fn declare(&mut self, name: &str, spec: NodeSpec, symbol: Symbol) -> Result<NodeId, String> {
        if !is_identifier(name) {
            return Err(format!("`{name}` is not a valid name"));
        }
        if self.symbols.contains_key(name) {
            return Err(format!("`{name}` is already declared"));
        }
        let id = self.graph.add_node(spec).map_err(|e| e.to_string())?;
        self.symbols.insert(name.to_owned(), (id, symbol));
        Ok(id)
    }

    fn observable(&mut self, rest: &str) -> Result<(), String> {
        let f: Vec<&str> = rest.split_whitespace().collect();
        let [name, lo, hi] = f[..] else {
            return Err("expected `observable <name> <lo> <hi>`".into());
        };
        if self.observable.is_some() {
            return Err("only one observable is supported".into());
        }
        let (lo, hi) = (number(lo)?, number(hi)?);
        if !(lo < hi) {
            return Err(format!("empty range [{lo}, {hi}]"));
        }
        let obs = Observable::new(name, lo, hi);
        let id = self.declare(name, NodeSpec::Observable(obs.clone()), Symbol::Observable)?;
        self.observable = Some((id, obs));
        Ok(())
    }

    fn parameter(&mut self, rest: &str) -> Result<(), String> {
        let f: Vec<&str> = rest.split_whitespace().collect();
        let (name, value, lo, hi, constant) = match f[..] {
            [n, v, l, h] => (n, v, l, h, false),
            [n, v, l, h, "const"] => (n, v, l, h, true),
            _ => return Err("expected `parameter <name> <value> <lo> <hi> [const]`".into()),
        };
        let mut p = Parameter::new(name, number(value)?, number(lo)?, number(hi)?);
        if constant {
            p = p.constant();
        }
        self.declare(name, NodeSpec::Parameter(p), Symbol::Parameter)?;
        Ok(())
    }

    fn pdf(&mut self, rest: &str) -> Result<(), String> {
        let (name, call) = rest
            .split_once(char::is_whitespace)
            .ok_or("expected `pdf <name> <Kind>(<arg>, ...)`")?;
        let call = call.trim();
        let open = call.find('(').ok_or("expected `(` after the pdf kind")?;
        if !call.ends_with(')') {
            return Err("expected `)` at the end of the line".into());
        }
        let kind = call[..open].trim();
        let args = split_args(&call[open + 1..call.len() - 1])?;
        let spec = self.build(kind, &args)?.named(name);
        // A pdf is referenced by name only; its node id slot is the observable's.
        let (x, _) = self.observable.as_ref().ok_or("declare the observable first")?;
        if !is_identifier(name) {
            return Err(format!("`{name}` is not a valid name"));
        }
        if self.symbols.contains_key(name) {
            return Err(format!("`{name}` is already declared"));
        }
        self.symbols.insert(name.to_owned(), (*x, Symbol::Pdf(spec.clone())));
        self.pdfs.insert(name.to_owned(), spec);
        self.last_pdf = Some(name.to_owned());
        Ok(())
    }

    fn lookup(&self, name: &str) -> Result<&(NodeId, Symbol), String> {
        self.symbols
            .get(name)
            .ok_or_else(|| format!("`{name}` is not declared"))
    }

    fn node(&self, name: &str, want_observable: bool) -> Result<NodeId, String> {
        match self.lookup(name)? {
            (id, Symbol::Observable) if want_observable => Ok(*id),
            (id, Symbol::Parameter) if !want_observable => Ok(*id),
            _ if want_observable => Err(format!("`{name}` is not the observable")),
            _ => Err(format!("`{name}` is not a parameter")),
        }
    }

    fn build(&self, kind: &str, args: &[Arg]) -> Result<PdfSpec, String> {
        let names = || -> Result<Vec<&str>, String> {
            args.iter()
                .map(|a| match a {
                    Arg::Name(n) => Ok(n.as_str()),
                    Arg::Quoted(_) => Err(format!("{kind} takes no quoted arguments")),
                })
                .collect()
        };
        let fixed = |n: usize| -> Result<(NodeId, Vec<NodeId>), String> {
            let names = names()?;
            if names.len() != n + 1 {
                return Err(format!("{kind} takes {} arguments, got {}", n + 1, names.len()));
            }
            let x = self.node(names[0], true)?;
            let p = names[1..]
                .iter()
                .map(|n| self.node(n, false))
                .collect::<Result<_, _>>()?;
            Ok((x, p))
        };
        Ok(match kind {
            "Gaussian" => {
                let (x, p) = fixed(2)?;
                PdfSpec::gaussian(x, p[0], p[1])
            }
            "Exponential" => {
                let (x, p) = fixed(1)?;
                PdfSpec::exponential(x, p[0])
            }
            "ChiSquare" => {
                let (x, p) = fixed(1)?;
                PdfSpec::chi_square(x, p[0])
            }
            "JohnsonSU" => {
                let (x, p) = fixed(4)?;
                PdfSpec::johnson_su(x, p[0], p[1], p[2], p[3])
            }
            "WeightedSum" => {
                let mut components = Vec::new();
                let mut fractions = Vec::new();
                for n in names()? {
                    match self.lookup(n)? {
                        (_, Symbol::Pdf(spec)) if fractions.is_empty() => components.push(spec.clone()),
                        (_, Symbol::Pdf(_)) => return Err("component pdfs must precede fractions".into()),
                        (id, Symbol::Parameter) => fractions.push(*id),
                        (_, Symbol::Observable) => return Err(format!("`{n}` is the observable")),
                    }
                }
                PdfSpec::weighted_sum(components, fractions).map_err(|e| e.to_string())?
            }
            "Expression" => {
                let Some((Arg::Quoted(formula), rest)) = args.split_first() else {
                    return Err("Expression expects a quoted formula first".into());
                };
                let x = self.observable.as_ref().ok_or("declare the observable first")?.0;
                let mut vars = Vec::with_capacity(rest.len());
                for a in rest {
                    let Arg::Name(n) = a else {
                        return Err("only the formula may be quoted".into());
                    };
                    match self.lookup(n)? {
                        (id, Symbol::Observable | Symbol::Parameter) => vars.push((n.as_str(), *id)),
                        _ => return Err(format!("`{n}` is a pdf, not a variable")),
                    }
                }
                PdfSpec::expression(formula, x, &vars).map_err(|e| e.to_string())?
            }
            other => return Err(format!("unknown pdf kind `{other}`")),
        })
    }
}

#[derive(Debug, PartialEq)]
enum Arg {
    Name(String),
    Quoted(String),
}

fn split_args(s: &str) -> Result<Vec<Arg>, String> {
    let mut args = Vec::new();
    let mut rest = s.trim();
    if rest.is_empty() {
        return Ok(args);
    }
    loop {
        if let Some(q) = rest.strip_prefix('"') {
            let end = q.find('"').ok_or("unterminated string")?;
            args.push(Arg::Quoted(q[..end].to_owned()));
            rest = q[end + 1..].trim_start();
        } else {
            let end = rest.find(',').unwrap_or(rest.len());
            let name = rest[..end].trim();
            if name.is_empty() {
                return Err("empty argument".into());
            }
            args.push(Arg::Name(name.to_owned()));
            rest = &rest[end..];
        }
        match rest.strip_prefix(',') {
            Some(r) => rest = r.trim_start(),
            None if rest.is_empty() => return Ok(args),
            None => return Err(format!("unexpected `{rest}`")),
        }
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
