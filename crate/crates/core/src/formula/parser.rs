//! Recursive-descent parser and canonical printer for the formula DSL.
//!
//! ```text
//! formula := or
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | modal | atom | "(" formula ")"
//! modal   := ("G" | "F" | "K_" ID | "B_" ID | "O") window? "(" formula ")"
//!          | "[" ID (";" ID)* "]" "(" formula ")"
//! window  := "[" num "," num "]"
//! ```
//!
//! `G`/`F` are the temporal Box/Diamond, `K_a`/`B_a` the epistemic and
//! doxastic Box of agent `a`, and `O` the deontic Box. Binary operators
//! associate to the left.

use std::fmt;

use thiserror::Error;

use super::{Formula, Modality, Window};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

const MAX_DEPTH: usize = 512;

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    depth: usize,
}

pub fn parse(text: &str) -> Result<Formula, ParseError> {
    let mut p = Parser { src: text, pos: 0, depth: 0 };
    let f = p.formula()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error_here("unexpected trailing input"));
    }
    Ok(f)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl<'a> Parser<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> ParseError {
        ParseError { offset, message: message.into() }
    }

    fn error_here(&self, message: &str) -> ParseError {
        match self.peek() {
            Some(c) => self.error_at(self.pos, format!("{message} (found `{c}`)")),
            None => self.error_at(self.pos, format!("{message} (found end of input)")),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error_here(&format!("expected `{c}`")))
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error_at(self.pos, "formula nested too deeply"));
        }
        Ok(())
    }

    fn formula(&mut self) -> Result<Formula, ParseError> {
        self.enter()?;
        let mut left = self.and()?;
        while self.eat('|') {
            let right = self.and()?;
            left = Formula::or(left, right);
        }
        self.depth -= 1;
        Ok(left)
    }

    fn and(&mut self) -> Result<Formula, ParseError> {
        let mut left = self.unary()?;
        while self.eat('&') {
            let right = self.unary()?;
            left = Formula::and(left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        self.enter()?;
        self.skip_ws();
        let out = match self.peek() {
            Some('!') => {
                self.pos += 1;
                Formula::not(self.unary()?)
            }
            Some('(') => {
                self.pos += 1;
                let f = self.formula()?;
                self.expect(')')?;
                f
            }
            Some('[') => self.seq()?,
            Some(c) if is_ident_start(c) => self.ident_led()?,
            _ => return Err(self.error_here("expected a formula")),
        };
        self.depth -= 1;
        Ok(out)
    }

    fn ident(&mut self) -> Result<(usize, &'a str), ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => {}
            _ => return Err(self.error_here("expected an identifier")),
        }
        while matches!(self.peek(), Some(c) if is_ident_char(c)) {
            self.pos += 1;
        }
        Ok((start, &self.src[start..self.pos]))
    }

    fn next_is_modal_opener(&mut self) -> bool {
        let save = self.pos;
        self.skip_ws();
        let r = matches!(self.peek(), Some('(') | Some('['));
        self.pos = save;
        r
    }

    fn ident_led(&mut self) -> Result<Formula, ParseError> {
        let (start, name) = self.ident()?;
        if !self.next_is_modal_opener() {
            return Ok(Formula::atom(name));
        }
        let (modality, box_form) = match name {
            "G" => (Modality::Temporal, true),
            "F" => (Modality::Temporal, false),
            "O" => (Modality::Deontic, true),
            _ => {
                if let Some(agent) = name.strip_prefix("K_") {
                    if agent.is_empty() {
                        return Err(self.error_at(start, "missing agent after `K_`"));
                    }
                    (Modality::Epistemic(agent.into()), true)
                } else if let Some(agent) = name.strip_prefix("B_") {
                    if agent.is_empty() {
                        return Err(self.error_at(start, "missing agent after `B_`"));
                    }
                    (Modality::Doxastic(agent.into()), true)
                } else {
                    return Err(self.error_at(start, format!("`{name}` is not a modal operator")));
                }
            }
        };
        self.skip_ws();
        let window = if self.peek() == Some('[') { Some(self.window()?) } else { None };
        self.expect('(')?;
        let body = self.formula()?;
        self.expect(')')?;
        Ok(if box_form {
            Formula::necessity(modality, window, body)
        } else {
            Formula::possibility(modality, window, body)
        })
    }

    fn window(&mut self) -> Result<Window, ParseError> {
        self.skip_ws();
        let open = self.pos;
        self.expect('[')?;
        let a = self.number()?;
        self.expect(',')?;
        let b = self.number()?;
        self.expect(']')?;
        if a > b {
            return Err(self.error_at(open, format!("window start {a} exceeds end {b}")));
        }
        Ok(Window { start: a, end: b })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let digits = |p: &mut usize| {
            let s = *p;
            while *p < bytes.len() && bytes[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > s
        };
        let mut p = self.pos;
        if !digits(&mut p) {
            return Err(self.error_here("expected a non-negative number"));
        }
        if p < bytes.len() && bytes[p] == b'.' {
            p += 1;
            digits(&mut p);
        }
        if p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
            let mut q = p + 1;
            if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            }
        }
        self.pos = p;
        let v: f64 = self.src[start..p]
            .parse()
            .map_err(|_| self.error_at(start, "malformed number"))?;
        if !v.is_finite() {
            return Err(self.error_at(start, "number out of range"));
        }
        Ok(v)
    }

    fn seq(&mut self) -> Result<Formula, ParseError> {
        self.expect('[')?;
        let mut actions = vec![self.ident()?.1.to_string()];
        while self.eat(';') {
            actions.push(self.ident()?.1.to_string());
        }
        self.expect(']')?;
        self.expect('(')?;
        let body = self.formula()?;
        self.expect(')')?;
        Ok(Formula::seq(actions, body))
    }
}

// Printing ------------------------------------------------------------------

const OR: u8 = 0;
const AND: u8 = 1;
const UNARY: u8 = 2;

fn level(f: &Formula) -> u8 {
    match f {
        Formula::Or(..) => OR,
        Formula::And(..) => AND,
        _ => UNARY,
    }
}

fn write_window(out: &mut fmt::Formatter<'_>, w: &Option<Window>) -> fmt::Result {
    match w {
        Some(w) => write!(out, "[{},{}]", w.start, w.end),
        None => Ok(()),
    }
}

fn write_prec(out: &mut fmt::Formatter<'_>, f: &Formula, min: u8) -> fmt::Result {
    if level(f) < min {
        write!(out, "(")?;
        write_prec(out, f, OR)?;
        return write!(out, ")");
    }
    match f {
        Formula::Atom(n) => write!(out, "{n}"),
        Formula::Not(g) => {
            write!(out, "!")?;
            write_prec(out, g, UNARY)
        }
        Formula::And(a, b) => {
            write_prec(out, a, AND)?;
            write!(out, " & ")?;
            write_prec(out, b, UNARY)
        }
        Formula::Or(a, b) => {
            write_prec(out, a, OR)?;
            write!(out, " | ")?;
            write_prec(out, b, AND)
        }
        Formula::Necessity { modality, window, body } => {
            match modality {
                Modality::Temporal => write!(out, "G")?,
                Modality::Epistemic(a) => write!(out, "K_{a}")?,
                Modality::Doxastic(a) => write!(out, "B_{a}")?,
                Modality::Deontic => write!(out, "O")?,
            }
            write_window(out, window)?;
            write!(out, "({body})")
        }
        Formula::Possibility { modality: Modality::Temporal, window, body } => {
            write!(out, "F")?;
            write_window(out, window)?;
            write!(out, "({body})")
        }
        // Only the temporal Diamond has surface syntax; the others print as
        // their dual `!Box(!body)`, which evaluates identically.
        Formula::Possibility { modality, window, body } => {
            let dual = Formula::necessity(modality.clone(), *window, Formula::not((**body).clone()));
            write!(out, "!")?;
            write_prec(out, &dual, UNARY)
        }
        Formula::Seq { actions, body } => write!(out, "[{}]({body})", actions.join(";")),
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(f, self, OR)
    }
}
