//! Abstract syntax, concrete-syntax parser, variable analysis and
//! substitution for the three command languages (non-deterministic,
//! probabilistic, quantum).
//!
//! The concrete grammar keeps every binary operator fully parenthesised,
//! so there is no precedence to remember:
//!
//! ```text
//! cmd := "skip" | IDENT | GATE "(" natlist ")"
//!      | "(" cmd ";" cmd ")" | "(" cmd "+" cmd ")"
//!      | "(" cmd "+[" RATIONAL "]" cmd ")" | "(" cmd "||" cmd ")"
//!      | "meas" NAT "{" cmd "}" "else" "{" cmd "}"
//!      | "while" NAT "{" cmd "}"
//!      | "mu" IDENT "." cmd
//! ```
//!
//! Identifiers starting with an uppercase letter are recursion variables,
//! lowercase identifiers are atomic actions. `RATIONAL` is either `n/d` or
//! a decimal literal, converted exactly.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

/// Which of the three languages a command belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Flavor {
    NonDet,
    Prob,
    Quantum,
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Flavor::NonDet => write!(f, "nondet"),
            Flavor::Prob => write!(f, "prob"),
            Flavor::Quantum => write!(f, "quantum"),
        }
    }
}

/// Transition / event labels shared by all three semantics.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    /// `sk`, emitted by `skip`.
    Sk,
    /// An atomic action.
    Act(String),
    /// The invisible label introduced by probabilistic choice.
    Tau,
    /// Projection of qubit `n` onto `|0>`.
    Tau0(u32),
    /// Projection of qubit `n` onto `|1>`.
    Tau1(u32),
    /// A unitary gate applied to a list of qubits.
    Gate(String, Vec<u32>),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Sk => write!(f, "sk"),
            Label::Act(a) => write!(f, "{a}"),
            Label::Tau => write!(f, "tau"),
            Label::Tau0(n) => write!(f, "P0^{n}"),
            Label::Tau1(n) => write!(f, "P1^{n}"),
            Label::Gate(g, qs) => {
                write!(f, "{g}(")?;
                for (i, q) in qs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{q}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Command syntax tree. `Check` is the terminal command produced by the
/// operational semantics; it never appears in parsed source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    Skip,
    Act(String),
    Gate(String, Vec<u32>),
    Seq(Box<Command>, Box<Command>),
    NdChoice(Box<Command>, Box<Command>),
    ProbChoice(BigRational, Box<Command>, Box<Command>),
    Par(Box<Command>, Box<Command>),
    Meas(u32, Box<Command>, Box<Command>),
    While(u32, Box<Command>),
    Rec(String, Box<Command>),
    Var(String),
    Check,
}

/// A command together with the language it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Command {
    pub flavor: Flavor,
    pub node: Node,
}

impl Command {
    pub fn new(flavor: Flavor, node: Node) -> Self {
        Command { flavor, node }
    }

    pub fn is_check(&self) -> bool {
        matches!(self.node, Node::Check)
    }

    /// Free recursion variables, clause by clause from the defining table.
    pub fn fvar(&self) -> BTreeSet<String> {
        match &self.node {
            Node::Skip | Node::Act(_) | Node::Gate(..) | Node::Check => BTreeSet::new(),
            Node::Var(x) => [x.clone()].into_iter().collect(),
            Node::Seq(a, b) | Node::NdChoice(a, b) | Node::ProbChoice(_, a, b) | Node::Par(a, b) | Node::Meas(_, a, b) => {
                let mut s = a.fvar();
                s.extend(b.fvar());
                s
            }
            Node::While(_, c) => c.fvar(),
            Node::Rec(x, c) => {
                let mut s = c.fvar();
                s.remove(x);
                s
            }
        }
    }

    /// Bound recursion variables.
    pub fn bvar(&self) -> BTreeSet<String> {
        match &self.node {
            Node::Skip | Node::Act(_) | Node::Gate(..) | Node::Var(_) | Node::Check => BTreeSet::new(),
            Node::Seq(a, b) | Node::NdChoice(a, b) | Node::ProbChoice(_, a, b) | Node::Par(a, b) | Node::Meas(_, a, b) => {
                let mut s = a.bvar();
                s.extend(b.bvar());
                s
            }
            Node::While(_, c) => c.bvar(),
            Node::Rec(x, c) => {
                let mut s = c.bvar();
                s.insert(x.clone());
                s
            }
        }
    }

    /// Set of qubits used by a quantum command.
    pub fn qvar(&self) -> BTreeSet<u32> {
        match &self.node {
            Node::Skip | Node::Act(_) | Node::Var(_) | Node::Check => BTreeSet::new(),
            Node::Gate(_, qs) => qs.iter().copied().collect(),
            Node::Seq(a, b) | Node::NdChoice(a, b) | Node::ProbChoice(_, a, b) | Node::Par(a, b) => {
                let mut s = a.qvar();
                s.extend(b.qvar());
                s
            }
            Node::Meas(n, a, b) => {
                let mut s: BTreeSet<u32> = [*n].into_iter().collect();
                s.extend(a.qvar());
                s.extend(b.qvar());
                s
            }
            Node::While(n, c) => {
                let mut s: BTreeSet<u32> = [*n].into_iter().collect();
                s.extend(c.qvar());
                s
            }
            Node::Rec(_, c) => c.qvar(),
        }
    }

    /// Capture-avoiding substitution `self[x <- r]`.
    ///
    /// Sequential composition substitutes only in the right operand; the
    /// left operand is closed by the well-formedness restriction.
    pub fn substitute(&self, x: &str, r: &Command) -> Command {
        let fl = self.flavor;
        let node = match &self.node {
            Node::Skip => Node::Skip,
            Node::Check => Node::Check,
            Node::Act(a) => Node::Act(a.clone()),
            Node::Gate(g, qs) => Node::Gate(g.clone(), qs.clone()),
            Node::Var(y) => {
                if y == x {
                    return r.clone();
                }
                Node::Var(y.clone())
            }
            Node::Seq(a, b) => Node::Seq(a.clone(), Box::new(b.substitute(x, r))),
            Node::NdChoice(a, b) => Node::NdChoice(Box::new(a.substitute(x, r)), Box::new(b.substitute(x, r))),
            Node::ProbChoice(p, a, b) => {
                Node::ProbChoice(p.clone(), Box::new(a.substitute(x, r)), Box::new(b.substitute(x, r)))
            }
            Node::Par(a, b) => Node::Par(Box::new(a.substitute(x, r)), Box::new(b.substitute(x, r))),
            Node::Meas(n, a, b) => Node::Meas(*n, Box::new(a.substitute(x, r)), Box::new(b.substitute(x, r))),
            Node::While(n, c) => Node::While(*n, Box::new(c.substitute(x, r))),
            Node::Rec(y, c) => {
                if y == x {
                    // x is rebound here; no free occurrence below.
                    Node::Rec(y.clone(), c.clone())
                } else if r.fvar().contains(y) && c.fvar().contains(x) {
                    // Rename y to avoid capturing a free variable of r.
                    let fresh = fresh_var(y, &r.fvar(), &c.fvar());
                    let renamed = c.substitute(y, &Command::new(fl, Node::Var(fresh.clone())));
                    Node::Rec(fresh, Box::new(renamed.substitute(x, r)))
                } else {
                    Node::Rec(y.clone(), Box::new(c.substitute(x, r)))
                }
            }
        };
        Command::new(fl, node)
    }
}

fn fresh_var(base: &str, avoid1: &BTreeSet<String>, avoid2: &BTreeSet<String>) -> String {
    let mut i = 1u32;
    loop {
        let cand = format!("{base}{i}");
        if !avoid1.contains(&cand) && !avoid2.contains(&cand) {
            return cand;
        }
        i += 1;
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Skip => write!(f, "skip"),
            Node::Check => write!(f, "\u{2713}"),
            Node::Act(a) => write!(f, "{a}"),
            Node::Var(x) => write!(f, "{x}"),
            Node::Gate(g, qs) => {
                write!(f, "{g}(")?;
                for (i, q) in qs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{q}")?;
                }
                write!(f, ")")
            }
            Node::Seq(a, b) => write!(f, "({a} ; {b})"),
            Node::NdChoice(a, b) => write!(f, "({a} + {b})"),
            Node::ProbChoice(p, a, b) => write!(f, "({a} +[{}/{}] {b})", p.numer(), p.denom()),
            Node::Par(a, b) => write!(f, "({a} || {b})"),
            Node::Meas(n, a, b) => write!(f, "meas {n} {{ {a} }} else {{ {b} }}"),
            Node::While(n, c) => write!(f, "while {n} {{ {c} }}"),
            Node::Rec(x, c) => write!(f, "mu {x} . {c}"),
        }
    }
}

/// Source position (1-based line and column).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("flavor violation at {pos}: {msg}")]
    FlavorViolation { pos: Pos, msg: String },
    #[error("unbound variable `{name}` at {pos}")]
    UnboundVariable { pos: Pos, name: String },
    #[error("left operand of `;` must have no free and no bound variables (at {pos})")]
    SeqLeftRecursion { pos: Pos },
    #[error("parallel components share qubit {qubit} (at {pos})")]
    SharedQubitInPar { pos: Pos, qubit: u32 },
    #[error("unknown gate `{name}` at {pos}")]
    UnknownGate { pos: Pos, name: String },
}

/// Arity lookup against a configurable gate table; implemented by
/// `quantum::GateTable`.
pub trait GateLookup {
    fn gate_arity(&self, name: &str) -> Option<usize>;
}

/// A lookup that accepts any gate name with any arity. Test helper.
pub struct AnyGate;

impl GateLookup for AnyGate {
    fn gate_arity(&self, _name: &str) -> Option<usize> {
        None
    }
}

impl GateLookup for () {
    fn gate_arity(&self, _name: &str) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Plus,
    Par,
    Dot,
    Comma,
    Slash,
    Ident(String),
    Number(String),
    KwSkip,
    KwMeas,
    KwElse,
    KwWhile,
    KwMu,
}

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), i: 0, line: 1, col: 1 }
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn bump(&mut self) -> u8 {
        let c = self.src[self.i];
        self.i += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ParseError> {
        let mut out = Vec::new();
        while self.i < self.src.len() {
            let c = self.src[self.i];
            if c.is_ascii_whitespace() {
                self.bump();
                continue;
            }
            let pos = self.pos();
            let tok = match c {
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'{' => {
                    self.bump();
                    Tok::LBrace
                }
                b'}' => {
                    self.bump();
                    Tok::RBrace
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'.' => {
                    self.bump();
                    Tok::Dot
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'|' => {
                    self.bump();
                    if self.i < self.src.len() && self.src[self.i] == b'|' {
                        self.bump();
                        Tok::Par
                    } else {
                        return Err(ParseError::Syntax { pos, msg: "expected `||`".into() });
                    }
                }
                b'0'..=b'9' => {
                    let mut s = String::new();
                    while self.i < self.src.len() && self.src[self.i].is_ascii_digit() {
                        s.push(self.bump() as char);
                    }
                    // Maximal munch for decimal literals: `0.5` is one number,
                    // while the `.` of `mu X . C` never follows a digit.
                    if self.i + 1 < self.src.len()
                        && self.src[self.i] == b'.'
                        && self.src[self.i + 1].is_ascii_digit()
                    {
                        s.push(self.bump() as char);
                        while self.i < self.src.len() && self.src[self.i].is_ascii_digit() {
                            s.push(self.bump() as char);
                        }
                    }
                    out.push((Tok::Number(s), pos));
                    continue;
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut s = String::new();
                    while self.i < self.src.len()
                        && (self.src[self.i].is_ascii_alphanumeric() || self.src[self.i] == b'_')
                    {
                        s.push(self.bump() as char);
                    }
                    let t = match s.as_str() {
                        "skip" => Tok::KwSkip,
                        "meas" => Tok::KwMeas,
                        "else" => Tok::KwElse,
                        "while" => Tok::KwWhile,
                        "mu" => Tok::KwMu,
                        _ => Tok::Ident(s),
                    };
                    out.push((t, pos));
                    continue;
                }
                other => {
                    return Err(ParseError::Syntax {
                        pos,
                        msg: format!("unexpected character `{}`", other as char),
                    })
                }
            };
            out.push((tok, pos));
        }
        Ok(out)
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    flavor: Flavor,
    gates: &'a dyn GateLookup,
    scope: Vec<String>,
    end: Pos,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.i).cloned();
        if t.is_some() {
            self.i += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Pos, ParseError> {
        let pos = self.pos();
        match self.next() {
            Some((t, p)) if t == want => Ok(p),
            _ => Err(ParseError::Syntax { pos, msg: format!("expected {what}") }),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { pos: self.pos(), msg: msg.into() }
    }

    fn nat(&mut self) -> Result<u32, ParseError> {
        let pos = self.pos();
        match self.next() {
            Some((Tok::Number(s), _)) if !s.contains('.') => s
                .parse::<u32>()
                .map_err(|_| ParseError::Syntax { pos, msg: "natural number out of range".into() }),
            _ => Err(ParseError::Syntax { pos, msg: "expected a natural number".into() }),
        }
    }

    fn rational(&mut self) -> Result<BigRational, ParseError> {
        let pos = self.pos();
        let first = match self.next() {
            Some((Tok::Number(s), _)) => s,
            _ => return Err(ParseError::Syntax { pos, msg: "expected a rational".into() }),
        };
        if let Some(dot) = first.find('.') {
            // Exact conversion of the decimal literal.
            let (int, frac) = first.split_at(dot);
            let frac = &frac[1..];
            let denom = BigInt::from(10u32).pow(frac.len() as u32);
            let numer = int.parse::<BigInt>().unwrap() * &denom + frac.parse::<BigInt>().unwrap();
            return Ok(BigRational::new(numer, denom));
        }
        if self.peek() == Some(&Tok::Slash) {
            self.next();
            let dpos = self.pos();
            let den = match self.next() {
                Some((Tok::Number(s), _)) if !s.contains('.') => s,
                _ => return Err(ParseError::Syntax { pos: dpos, msg: "expected a denominator".into() }),
            };
            let d = den.parse::<BigInt>().unwrap();
            if d.is_zero() {
                return Err(ParseError::Syntax { pos: dpos, msg: "zero denominator".into() });
            }
            Ok(BigRational::new(first.parse::<BigInt>().unwrap(), d))
        } else {
            Ok(BigRational::from_integer(first.parse::<BigInt>().unwrap()))
        }
    }

    fn cmd(&mut self) -> Result<Command, ParseError> {
        let start = self.pos();
        match self.next() {
            Some((Tok::KwSkip, _)) => Ok(Command::new(self.flavor, Node::Skip)),
            Some((Tok::KwMu, pos)) => {
                if self.flavor == Flavor::Quantum {
                    return Err(ParseError::FlavorViolation {
                        pos,
                        msg: "recursion is not available in the quantum flavor".into(),
                    });
                }
                let vpos = self.pos();
                let name = match self.next() {
                    Some((Tok::Ident(s), _)) => s,
                    _ => return Err(ParseError::Syntax { pos: vpos, msg: "expected a variable after `mu`".into() }),
                };
                if !name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    return Err(ParseError::Syntax {
                        pos: vpos,
                        msg: "recursion variables start with an uppercase letter".into(),
                    });
                }
                self.expect(Tok::Dot, "`.` after the recursion variable")?;
                self.scope.push(name.clone());
                let body = self.cmd()?;
                self.scope.pop();
                Ok(Command::new(self.flavor, Node::Rec(name, Box::new(body))))
            }
            Some((Tok::KwMeas, pos)) => {
                if self.flavor != Flavor::Quantum {
                    return Err(ParseError::FlavorViolation {
                        pos,
                        msg: "`meas` is only available in the quantum flavor".into(),
                    });
                }
                let n = self.nat()?;
                self.expect(Tok::LBrace, "`{`")?;
                let c1 = self.cmd()?;
                self.expect(Tok::RBrace, "`}`")?;
                match self.next() {
                    Some((Tok::KwElse, _)) => {}
                    _ => return Err(self.err("expected `else`")),
                }
                self.expect(Tok::LBrace, "`{`")?;
                let c2 = self.cmd()?;
                self.expect(Tok::RBrace, "`}`")?;
                Ok(Command::new(self.flavor, Node::Meas(n, Box::new(c1), Box::new(c2))))
            }
            Some((Tok::KwWhile, pos)) => {
                if self.flavor != Flavor::Quantum {
                    return Err(ParseError::FlavorViolation {
                        pos,
                        msg: "`while` is only available in the quantum flavor".into(),
                    });
                }
                let n = self.nat()?;
                self.expect(Tok::LBrace, "`{`")?;
                let body = self.cmd()?;
                self.expect(Tok::RBrace, "`}`")?;
                Ok(Command::new(self.flavor, Node::While(n, Box::new(body))))
            }
            Some((Tok::LParen, lpos)) => {
                let c1 = self.cmd()?;
                let op = self.next();
                let c = match op {
                    Some((Tok::Semi, spos)) => {
                        let c2 = self.cmd()?;
                        if self.flavor != Flavor::Quantum
                            && (!c1.fvar().is_empty() || !c1.bvar().is_empty())
                        {
                            return Err(ParseError::SeqLeftRecursion { pos: spos });
                        }
                        Node::Seq(Box::new(c1), Box::new(c2))
                    }
                    Some((Tok::Plus, ppos)) => {
                        if self.peek() == Some(&Tok::LBracket) {
                            self.next();
                            if self.flavor != Flavor::Prob {
                                return Err(ParseError::FlavorViolation {
                                    pos: ppos,
                                    msg: "`+[p]` is only available in the probabilistic flavor".into(),
                                });
                            }
                            let p = self.rational()?;
                            self.expect(Tok::RBracket, "`]`")?;
                            if p <= BigRational::zero() || p >= BigRational::one() {
                                return Err(ParseError::Syntax {
                                    pos: ppos,
                                    msg: "probability must lie strictly between 0 and 1".into(),
                                });
                            }
                            let c2 = self.cmd()?;
                            Node::ProbChoice(p, Box::new(c1), Box::new(c2))
                        } else {
                            if self.flavor != Flavor::NonDet {
                                return Err(ParseError::FlavorViolation {
                                    pos: ppos,
                                    msg: "`+` is only available in the non-deterministic flavor".into(),
                                });
                            }
                            let c2 = self.cmd()?;
                            Node::NdChoice(Box::new(c1), Box::new(c2))
                        }
                    }
                    Some((Tok::Par, ppos)) => {
                        let c2 = self.cmd()?;
                        if self.flavor == Flavor::Quantum {
                            let shared: Vec<u32> = c1.qvar().intersection(&c2.qvar()).copied().collect();
                            if let Some(&q) = shared.first() {
                                return Err(ParseError::SharedQubitInPar { pos: ppos, qubit: q });
                            }
                        }
                        Node::Par(Box::new(c1), Box::new(c2))
                    }
                    _ => {
                        return Err(ParseError::Syntax {
                            pos: lpos,
                            msg: "expected `;`, `+`, `+[p]` or `||` inside parentheses".into(),
                        })
                    }
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(Command::new(self.flavor, c))
            }
            Some((Tok::Ident(name), pos)) => {
                if self.peek() == Some(&Tok::LParen) {
                    // Gate call.
                    if self.flavor != Flavor::Quantum {
                        return Err(ParseError::FlavorViolation {
                            pos,
                            msg: "gate application is only available in the quantum flavor".into(),
                        });
                    }
                    self.next();
                    let mut qs = vec![self.nat()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.next();
                        qs.push(self.nat()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    let mut seen = BTreeSet::new();
                    for q in &qs {
                        if !seen.insert(*q) {
                            return Err(ParseError::Syntax {
                                pos,
                                msg: format!("duplicate qubit {q} in gate application"),
                            });
                        }
                    }
                    if let Some(arity) = self.gates.gate_arity(&name) {
                        if arity != qs.len() {
                            return Err(ParseError::Syntax {
                                pos,
                                msg: format!("gate `{name}` expects {arity} qubit(s), got {}", qs.len()),
                            });
                        }
                    } else if self.flavor == Flavor::Quantum {
                        return Err(ParseError::UnknownGate { pos, name });
                    }
                    Ok(Command::new(self.flavor, Node::Gate(name, qs)))
                } else if name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    if self.flavor == Flavor::Quantum {
                        return Err(ParseError::FlavorViolation {
                            pos,
                            msg: "variables are not available in the quantum flavor".into(),
                        });
                    }
                    if !self.scope.iter().any(|v| v == &name) {
                        return Err(ParseError::UnboundVariable { pos, name });
                    }
                    Ok(Command::new(self.flavor, Node::Var(name)))
                } else {
                    if self.flavor == Flavor::Quantum {
                        return Err(ParseError::FlavorViolation {
                            pos,
                            msg: "atomic actions are not available in the quantum flavor".into(),
                        });
                    }
                    Ok(Command::new(self.flavor, Node::Act(name)))
                }
            }
            Some((_, pos)) => Err(ParseError::Syntax { pos, msg: "expected a command".into() }),
            None => Err(ParseError::Syntax { pos: start, msg: "unexpected end of input".into() }),
        }
    }
}

/// Parse `source` as a closed, well-formed command of the given flavor.
pub fn parse(source: &str, flavor: Flavor, gates: &dyn GateLookup) -> Result<Command, ParseError> {
    let end = {
        let lines: Vec<&str> = source.split('\n').collect();
        Pos {
            line: lines.len() as u32,
            col: lines.last().map(|l| l.len() as u32 + 1).unwrap_or(1),
        }
    };
    let toks = Lexer::new(source).tokens()?;
    let mut p = Parser { toks, i: 0, flavor, gates, scope: Vec::new(), end };
    let c = p.cmd()?;
    if p.i != p.toks.len() {
        return Err(ParseError::Syntax { pos: p.pos(), msg: "trailing input after command".into() });
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nd(src: &str) -> Result<Command, ParseError> {
        parse(src, Flavor::NonDet, &AnyGate)
    }

    fn qu(src: &str) -> Result<Command, ParseError> {
        parse(src, Flavor::Quantum, &AnyGate)
    }

    #[test]
    fn parses_paper_example() {
        let c = nd("((a ; b) + (c || d))").unwrap();
        match &c.node {
            Node::NdChoice(l, r) => {
                assert!(matches!(l.node, Node::Seq(..)));
                assert!(matches!(r.node, Node::Par(..)));
            }
            _ => panic!("wrong shape: {c:?}"),
        }
    }

    #[test]
    fn parses_skip_in_all_flavors() {
        for fl in [Flavor::NonDet, Flavor::Prob, Flavor::Quantum] {
            let c = parse("skip", fl, &AnyGate).unwrap();
            assert_eq!(c.node, Node::Skip);
        }
    }

    #[test]
    fn rejects_seq_left_recursion() {
        let e = nd("mu X . (X ; a)").unwrap_err();
        assert!(matches!(e, ParseError::SeqLeftRecursion { .. }));
        let e = nd("((mu X . (a ; X)) ; b)").unwrap_err();
        assert!(matches!(e, ParseError::SeqLeftRecursion { .. }));
    }

    #[test]
    fn rejects_unbound_variable() {
        let e = nd("(X ; a)").unwrap_err();
        assert!(matches!(e, ParseError::UnboundVariable { .. }));
    }

    #[test]
    fn rejects_flavor_mixups() {
        assert!(matches!(qu("(a + b)").unwrap_err(), ParseError::FlavorViolation { .. }));
        assert!(matches!(nd("(a +[1/2] b)").unwrap_err(), ParseError::FlavorViolation { .. }));
        assert!(matches!(
            parse("(a + b)", Flavor::Prob, &AnyGate).unwrap_err(),
            ParseError::FlavorViolation { .. }
        ));
    }

    #[test]
    fn rejects_shared_qubit_in_par() {
        let e = qu("(H(1) || X(1))").unwrap_err();
        assert!(matches!(e, ParseError::SharedQubitInPar { qubit: 1, .. }));
    }

    #[test]
    fn rejects_degenerate_probabilities() {
        for src in ["(a +[0/2] b)", "(a +[1/1] b)", "(a +[3/2] b)"] {
            let e = parse(src, Flavor::Prob, &AnyGate).unwrap_err();
            assert!(matches!(e, ParseError::Syntax { .. }), "{src}");
        }
    }

    #[test]
    fn decimal_probability_is_exact() {
        let c = parse("(a +[0.5] b)", Flavor::Prob, &AnyGate).unwrap();
        match &c.node {
            Node::ProbChoice(p, ..) => {
                assert_eq!(*p, BigRational::new(1.into(), 2.into()));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn fvar_matches_table() {
        let c = nd("mu X . (skip + (a ; X))").unwrap();
        assert!(c.fvar().is_empty());
        let body = match &c.node {
            Node::Rec(_, b) => b,
            _ => panic!(),
        };
        assert_eq!(body.fvar().into_iter().collect::<Vec<_>>(), vec!["X".to_string()]);
        assert!(nd("skip").unwrap().fvar().is_empty());
    }

    #[test]
    fn qvar_matches_equations() {
        let c = qu("(H(1) ; meas 1 { X(1) } else { Z(1) })").unwrap();
        assert_eq!(c.qvar().into_iter().collect::<Vec<_>>(), vec![1]);
        assert!(qu("skip").unwrap().qvar().is_empty());
        let c = qu("(H(1) || H(2))").unwrap();
        assert_eq!(c.qvar().into_iter().collect::<Vec<_>>(), vec![1, 2]);
        let c = qu("while 3 { H(1) }").unwrap();
        assert_eq!(c.qvar().into_iter().collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn substitution_clauses() {
        let skip = nd("skip").unwrap();
        let a = nd("a").unwrap();
        assert_eq!(skip.substitute("X", &a), skip);

        let rec = nd("mu X . (skip + (a ; X))").unwrap();
        let body = match &rec.node {
            Node::Rec(_, b) => (**b).clone(),
            _ => panic!(),
        };
        let subst = body.substitute("X", &rec);
        let expect = Command::new(
            Flavor::NonDet,
            Node::NdChoice(
                Box::new(skip.clone()),
                Box::new(Command::new(
                    Flavor::NonDet,
                    Node::Seq(Box::new(a.clone()), Box::new(rec.clone())),
                )),
            ),
        );
        assert_eq!(subst, expect);

        // Free variable different from the substituted one is untouched.
        let y = Command::new(Flavor::NonDet, Node::Var("Y".into()));
        assert_eq!(y.substitute("X", &a), y);
    }

    #[test]
    fn substitution_avoids_capture() {
        // (mu Y . (Y || X))[X <- Y-free command containing Y as a *free* var]
        let inner = Command::new(
            Flavor::NonDet,
            Node::Rec(
                "Y".into(),
                Box::new(Command::new(
                    Flavor::NonDet,
                    Node::Par(
                        Box::new(Command::new(Flavor::NonDet, Node::Var("Y".into()))),
                        Box::new(Command::new(Flavor::NonDet, Node::Var("X".into()))),
                    ),
                )),
            ),
        );
        let replacement = Command::new(Flavor::NonDet, Node::Var("Y".into()));
        let out = inner.substitute("X", &replacement);
        // The bound Y must have been renamed so the free Y is not captured.
        assert!(out.fvar().contains("Y"));
    }

    fn arb_command(flavor: Flavor) -> impl Strategy<Value = Command> {
        let leaf = prop_oneof![
            Just(Node::Skip),
            prop_oneof![Just("a"), Just("b"), Just("c")].prop_map(|s: &str| Node::Act(s.into())),
        ];
        leaf.prop_map(move |n| Command::new(flavor, n)).prop_recursive(3, 24, 2, move |inner| {
            let seq = (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Node::Seq(Box::new(a), Box::new(b)));
            let par = (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Node::Par(Box::new(a), Box::new(b)));
            let choice = match flavor {
                Flavor::NonDet => (inner.clone(), inner)
                    .prop_map(|(a, b)| Node::NdChoice(Box::new(a), Box::new(b)))
                    .boxed(),
                Flavor::Prob => (1u32..10, 1u32..10, inner.clone(), inner)
                    .prop_map(|(n, m, a, b)| {
                        let p = BigRational::new(n.into(), (n + m).into());
                        Node::ProbChoice(p, Box::new(a), Box::new(b))
                    })
                    .boxed(),
                Flavor::Quantum => unreachable!(),
            };
            prop_oneof![seq, par, choice].prop_map(move |n| Command::new(flavor, n))
        })
    }

    proptest! {
        #[test]
        fn roundtrip_nondet(c in arb_command(Flavor::NonDet)) {
            let printed = c.to_string();
            let reparsed = parse(&printed, Flavor::NonDet, &AnyGate).unwrap();
            prop_assert_eq!(c, reparsed);
        }

        #[test]
        fn roundtrip_prob(c in arb_command(Flavor::Prob)) {
            let printed = c.to_string();
            let reparsed = parse(&printed, Flavor::Prob, &AnyGate).unwrap();
            prop_assert_eq!(c, reparsed);
        }

        #[test]
        fn substitute_noop_when_not_free(c in arb_command(Flavor::NonDet)) {
            // Generated commands are closed, so substitution never changes them.
            let r = parse("e", Flavor::NonDet, &AnyGate).unwrap();
            prop_assert_eq!(c.substitute("X", &r), c);
        }
    }
}
