//! Surface syntax for formulae.
//!
//! ```text
//! formula := disj
//! disj    := conj ('|' conj)*
//! conj    := unary ('&' unary)*
//! unary   := '~' unary | atom
//! atom    := 'x' INT | '1' | '(' formula ')'
//! ```
//!
//! `&` binds tighter than `|`, binary operators associate to the left and
//! whitespace is ignored.

use crate::error::ParseError;
use crate::logic::formula::{and, not, or, Formula};

/// Parses `text` as a formula over variables `x1..xn`.
pub fn parse(text: &str, n: usize) -> Result<Formula, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, n };
    let f = p.disj()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
    }
    Ok(f)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { position: self.pos, message: message.into() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn disj(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.conj()?;
        while self.peek() == Some(b'|') {
            self.pos += 1;
            lhs = or(lhs, self.conj()?);
        }
        Ok(lhs)
    }

    fn conj(&mut self) -> Result<Formula, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(b'&') {
            self.pos += 1;
            lhs = and(lhs, self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, ParseError> {
        if self.peek() == Some(b'~') {
            self.pos += 1;
            return Ok(not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(b'1') => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(b'x') => {
                let start = self.pos;
                self.pos += 1;
                let digits = self.src[self.pos..].iter().take_while(|c| c.is_ascii_digit()).count();
                if digits == 0 {
                    return Err(self.error("expected variable index after 'x'"));
                }
                let text = std::str::from_utf8(&self.src[self.pos..self.pos + digits]).expect("ascii digits");
                let index: usize = text
                    .parse()
                    .map_err(|_| ParseError { position: start, message: format!("variable index {text} too large") })?;
                if index == 0 || index > self.n {
                    return Err(ParseError {
                        position: start,
                        message: format!("variable index out of range: x{index} (allowed x1..x{})", self.n),
                    });
                }
                self.pos += digits;
                Ok(Formula::Var(index))
            }
            Some(b'(') => {
                self.pos += 1;
                let f = self.disj()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of input")),
        }
    }
}
