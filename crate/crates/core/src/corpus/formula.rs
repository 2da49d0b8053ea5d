//! Propositional / first-order formulas used by abstract reasoning templates.
//!
//! Both the Unicode connectives (`¬ ∧ ∨ → ↔ ∀ ∃`) and their ASCII aliases
//! (`~ ! & | -> <-> forall exists`) are accepted. Precedence from tightest to
//! loosest: `¬`/quantifiers, `∧`, `∨`, `→` (right-associative), `↔`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Atom(String),
    Predicate { name: String, args: Vec<String> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Iff(Box<Formula>, Box<Formula>),
    Forall(String, Box<Formula>),
    Exists(String, Box<Formula>),
}

pub fn atom(name: &str) -> Formula {
    Formula::Atom(name.to_string())
}

pub fn pred(name: &str, args: &[&str]) -> Formula {
    Formula::Predicate {
        name: name.to_string(),
        args: args.iter().map(|a| a.to_string()).collect(),
    }
}

pub fn not(f: Formula) -> Formula {
    Formula::Not(Box::new(f))
}

pub fn and(a: Formula, b: Formula) -> Formula {
    Formula::And(Box::new(a), Box::new(b))
}

pub fn or(a: Formula, b: Formula) -> Formula {
    Formula::Or(Box::new(a), Box::new(b))
}

pub fn implies(a: Formula, b: Formula) -> Formula {
    Formula::Implies(Box::new(a), Box::new(b))
}

pub fn iff(a: Formula, b: Formula) -> Formula {
    Formula::Iff(Box::new(a), Box::new(b))
}

pub fn forall(var: &str, body: Formula) -> Formula {
    Formula::Forall(var.to_string(), Box::new(body))
}

pub fn exists(var: &str, body: Formula) -> Formula {
    Formula::Exists(var.to_string(), Box::new(body))
}

impl Formula {
    /// Replaces free occurrences of `var` with `term`.
    pub fn substitute(&self, var: &str, term: &str) -> Formula {
        match self {
            Formula::Atom(_) => self.clone(),
            Formula::Predicate { name, args } => Formula::Predicate {
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| if a == var { term.to_string() } else { a.clone() })
                    .collect(),
            },
            Formula::Not(f) => not(f.substitute(var, term)),
            Formula::And(a, b) => and(a.substitute(var, term), b.substitute(var, term)),
            Formula::Or(a, b) => or(a.substitute(var, term), b.substitute(var, term)),
            Formula::Implies(a, b) => implies(a.substitute(var, term), b.substitute(var, term)),
            Formula::Iff(a, b) => iff(a.substitute(var, term), b.substitute(var, term)),
            Formula::Forall(v, _) | Formula::Exists(v, _) if v == var => self.clone(),
            Formula::Forall(v, body) => forall(v, body.substitute(var, term)),
            Formula::Exists(v, body) => exists(v, body.substitute(var, term)),
        }
    }

    /// Terms occurring free (not under a binder of the same name).
    pub fn free_terms(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match self {
            Formula::Atom(_) => {}
            Formula::Predicate { args, .. } => {
                for a in args {
                    if !bound.contains(a) {
                        out.insert(a.clone());
                    }
                }
            }
            Formula::Not(f) => f.collect_free(bound, out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Forall(v, body) | Formula::Exists(v, body) => {
                bound.push(v.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    pub fn bound_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |f| {
            if let Formula::Forall(v, _) | Formula::Exists(v, _) = f {
                out.insert(v.clone());
            }
        });
        out
    }

    /// Names bound by some quantifier that also occur free elsewhere.
    pub fn scope_violations(&self) -> Vec<String> {
        let free = self.free_terms();
        self.bound_variables().intersection(&free).cloned().collect()
    }

    fn walk(&self, visit: &mut impl FnMut(&Formula)) {
        visit(self);
        match self {
            Formula::Atom(_) | Formula::Predicate { .. } => {}
            Formula::Not(f) | Formula::Forall(_, f) | Formula::Exists(_, f) => f.walk(visit),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) | Formula::Iff(a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
        }
    }

    /// ASCII rendering (`->`, `&`, `forall x ...`); parses back to the same tree.
    pub fn ascii(&self) -> Ascii<'_> {
        Ascii(self)
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Iff(..) => 1,
            Formula::Implies(..) => 2,
            Formula::Or(..) => 3,
            Formula::And(..) => 4,
            _ => 5,
        }
    }

    fn render(&self, sym: &Symbols, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(name) => out.write_str(name),
            Formula::Predicate { name, args } => write!(out, "{}({})", name, args.join(", ")),
            Formula::Not(f) => {
                out.write_str(sym.not)?;
                f.render_child(5, sym, out)
            }
            Formula::And(a, b) => self.render_binary(a, b, sym.and, (4, 5), sym, out),
            Formula::Or(a, b) => self.render_binary(a, b, sym.or, (3, 4), sym, out),
            Formula::Implies(a, b) => self.render_binary(a, b, sym.implies, (3, 2), sym, out),
            Formula::Iff(a, b) => self.render_binary(a, b, sym.iff, (1, 2), sym, out),
            Formula::Forall(v, body) => render_quantifier(sym.forall, v, body, sym, out),
            Formula::Exists(v, body) => render_quantifier(sym.exists, v, body, sym, out),
        }
    }

    fn render_binary(
        &self,
        a: &Formula,
        b: &Formula,
        op: &str,
        (left_min, right_min): (u8, u8),
        sym: &Symbols,
        out: &mut fmt::Formatter<'_>,
    ) -> fmt::Result {
        a.render_child(left_min, sym, out)?;
        write!(out, " {op} ")?;
        b.render_child(right_min, sym, out)
    }

    fn render_child(&self, min: u8, sym: &Symbols, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.precedence() < min {
            out.write_str("(")?;
            self.render(sym, out)?;
            out.write_str(")")
        } else {
            self.render(sym, out)
        }
    }
}

fn render_quantifier(
    q: &str,
    var: &str,
    body: &Formula,
    sym: &Symbols,
    out: &mut fmt::Formatter<'_>,
) -> fmt::Result {
    write!(out, "{q}{}{var}", sym.quantifier_gap)?;
    if body.precedence() < 5 {
        out.write_str("(")?;
        body.render(sym, out)?;
        out.write_str(")")
    } else {
        out.write_str(" ")?;
        body.render(sym, out)
    }
}

struct Symbols {
    not: &'static str,
    and: &'static str,
    or: &'static str,
    implies: &'static str,
    iff: &'static str,
    forall: &'static str,
    exists: &'static str,
    quantifier_gap: &'static str,
}

const UNICODE: Symbols = Symbols {
    not: "¬",
    and: "∧",
    or: "∨",
    implies: "→",
    iff: "↔",
    forall: "∀",
    exists: "∃",
    quantifier_gap: "",
};

const ASCII: Symbols = Symbols {
    not: "~",
    and: "&",
    or: "|",
    implies: "->",
    iff: "<->",
    forall: "forall",
    exists: "exists",
    quantifier_gap: " ",
};

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.render(&UNICODE, f)
    }
}

pub struct Ascii<'a>(&'a Formula);

impl fmt::Display for Ascii<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.render(&ASCII, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at position {position}: expected one of {expected:?}, found {found}")]
pub struct SyntaxError {
    /// Character offset into the input.
    pub position: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    LParen,
    RParen,
    Comma,
    Dot,
    Not,
    And,
    Or,
    Implies,
    Iff,
    Forall,
    Exists,
    Upper(String),
    Lower(String),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Dot => "'.'".into(),
            Tok::Not => "negation".into(),
            Tok::And => "conjunction".into(),
            Tok::Or => "disjunction".into(),
            Tok::Implies => "implication".into(),
            Tok::Iff => "biconditional".into(),
            Tok::Forall => "'forall'".into(),
            Tok::Exists => "'exists'".into(),
            Tok::Upper(s) | Tok::Lower(s) => format!("identifier '{s}'"),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        let starts_with = |s: &str| {
            s.chars()
                .enumerate()
                .all(|(k, sc)| chars.get(i + k) == Some(&sc))
        };
        let (tok, len) = match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            ',' => (Tok::Comma, 1),
            '.' => (Tok::Dot, 1),
            '¬' | '~' | '!' => (Tok::Not, 1),
            '∧' | '&' => (Tok::And, 1),
            '∨' | '|' => (Tok::Or, 1),
            '→' => (Tok::Implies, 1),
            '↔' => (Tok::Iff, 1),
            '∀' => (Tok::Forall, 1),
            '∃' => (Tok::Exists, 1),
            '-' if starts_with("->") => (Tok::Implies, 2),
            '<' if starts_with("<->") => (Tok::Iff, 3),
            c if c.is_alphabetic() => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.as_str() {
                    "forall" => Tok::Forall,
                    "exists" => Tok::Exists,
                    _ if c.is_uppercase() => Tok::Upper(word),
                    _ => Tok::Lower(word),
                };
                (tok, j - i)
            }
            other => {
                return Err(SyntaxError {
                    position: start,
                    expected: vec!["formula symbol"],
                    found: format!("'{other}'"),
                })
            }
        };
        toks.push((start, tok));
        i += len;
    }
    toks.push((chars.len(), Tok::End));
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

const FORMULA_START: &[&str] = &["atom", "predicate", "'('", "negation", "quantifier"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&'static str]) -> SyntaxError {
        let (position, tok) = &self.toks[self.pos];
        SyntaxError {
            position: *position,
            expected: expected.to_vec(),
            found: tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &'static str) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn iff(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.implication()?;
        while *self.peek() == Tok::Iff {
            self.bump();
            let rhs = self.implication()?;
            lhs = iff(lhs, rhs);
        }
        Ok(lhs)
    }

    fn implication(&mut self) -> Result<Formula, SyntaxError> {
        let lhs = self.disjunction()?;
        if *self.peek() == Tok::Implies {
            self.bump();
            let rhs = self.implication()?;
            return Ok(implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.conjunction()?;
        while *self.peek() == Tok::Or {
            self.bump();
            let rhs = self.conjunction()?;
            lhs = or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Formula, SyntaxError> {
        let mut lhs = self.unary()?;
        while *self.peek() == Tok::And {
            self.bump();
            let rhs = self.unary()?;
            lhs = and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek().clone() {
            Tok::Not => {
                self.bump();
                Ok(not(self.unary()?))
            }
            q @ (Tok::Forall | Tok::Exists) => {
                self.bump();
                let var = match self.bump() {
                    Tok::Lower(v) => v,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error(&["variable"]));
                    }
                };
                if *self.peek() == Tok::Dot {
                    self.bump();
                }
                let body = self.unary()?;
                Ok(if q == Tok::Forall {
                    forall(&var, body)
                } else {
                    exists(&var, body)
                })
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, SyntaxError> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let f = self.iff()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Tok::Upper(name) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    return Ok(Formula::Atom(name));
                }
                self.bump();
                let mut args = Vec::new();
                loop {
                    match self.peek().clone() {
                        Tok::Lower(t) => {
                            self.bump();
                            args.push(t);
                        }
                        _ => return Err(self.error(&["term"])),
                    }
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RParen => {
                            self.bump();
                            break;
                        }
                        _ => return Err(self.error(&["','", "')'"])),
                    }
                }
                Ok(Formula::Predicate { name, args })
            }
            _ => Err(self.error(FORMULA_START)),
        }
    }
}

pub fn parse_formula(text: &str) -> Result<Formula, SyntaxError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    if *parser.peek() == Tok::End {
        return Err(parser.error(FORMULA_START));
    }
    let f = parser.iff()?;
    if *parser.peek() != Tok::End {
        return Err(parser.error(&["connective", "end of input"]));
    }
    Ok(f)
}
