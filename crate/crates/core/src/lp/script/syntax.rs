//! Line-oriented syntax of the `.mhl` modeling language.

use std::fmt;

use crate::lp::problem::{Relation, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Name(String),
    Vector(Vec<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

impl Expr {
    /// Calls `f` on every name referenced by this expression.
    pub fn visit_names<'a>(&'a self, f: &mut impl FnMut(&'a str)) {
        match self {
            Expr::Num(_) => {}
            Expr::Name(n) => f(n),
            Expr::Vector(items) | Expr::Call(_, items) => items.iter().for_each(|e| e.visit_names(f)),
            Expr::Index(a, b) | Expr::Bin(_, a, b) => {
                a.visit_names(f);
                b.visit_names(f);
            }
            Expr::Neg(a) => a.visit_names(f),
        }
    }

    /// Numeric literal or vector of numeric literals, possibly negated.
    pub fn as_literal(&self) -> Option<LiteralValue> {
        fn scalar(e: &Expr) -> Option<f64> {
            match e {
                Expr::Num(v) => Some(*v),
                Expr::Neg(inner) => scalar(inner).map(|v| -v),
                _ => None,
            }
        }
        match self {
            Expr::Vector(items) => items.iter().map(scalar).collect::<Option<Vec<_>>>().map(LiteralValue::Vector),
            e => scalar(e).map(LiteralValue::Scalar),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiteralValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    Assign { target: String, value: Expr },
    Variable { target: String, size: usize, lower: Option<Expr>, upper: Option<Expr> },
    File { target: String },
    Relation { lhs: Expr, rel: Relation, rhs: Expr },
    Objective { sense: Sense, expr: Expr },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Plus,
    Minus,
    Star,
    Assign,
    Rel(Relation),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => write!(f, "{s}"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::LBracket => f.write_str("["),
            Tok::RBracket => f.write_str("]"),
            Tok::Comma => f.write_str(","),
            Tok::Plus => f.write_str("+"),
            Tok::Minus => f.write_str("-"),
            Tok::Star => f.write_str("*"),
            Tok::Assign => f.write_str("="),
            Tok::Rel(Relation::Eq) => f.write_str("=="),
            Tok::Rel(r) => write!(f, "{r}"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<Tok>, String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '(' => { out.push(Tok::LParen); i += 1 }
            ')' => { out.push(Tok::RParen); i += 1 }
            '[' => { out.push(Tok::LBracket); i += 1 }
            ']' => { out.push(Tok::RBracket); i += 1 }
            ',' => { out.push(Tok::Comma); i += 1 }
            '+' => { out.push(Tok::Plus); i += 1 }
            '-' => { out.push(Tok::Minus); i += 1 }
            '*' => { out.push(Tok::Star); i += 1 }
            '<' | '>' | '=' => {
                let next = bytes.get(i + 1).copied();
                let tok = match (c, next) {
                    ('<', Some(b'=')) => Tok::Rel(Relation::Le),
                    ('>', Some(b'=')) => Tok::Rel(Relation::Ge),
                    ('=', Some(b'=')) => Tok::Rel(Relation::Eq),
                    ('=', _) => {
                        out.push(Tok::Assign);
                        i += 1;
                        continue;
                    }
                    _ => return Err(format!("strict comparison '{c}' is not allowed; use '{c}='")),
                };
                out.push(tok);
                i += 2;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lexeme = &text[start..i];
                let v: f64 = lexeme.parse().map_err(|_| format!("malformed number {lexeme:?}"))?;
                out.push(Tok::Num(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Tok::Ident(text[start..i].to_string()));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or(c);
                return Err(format!("unexpected character {ch:?}"));
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), String> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(format!("expected '{want}', found '{t}'")),
            None => Err(format!("expected '{want}' at end of line")),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn finish(&self) -> Result<(), String> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(format!("unexpected '{t}'")),
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            return self.unary();
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, String> {
        let mut e = self.primary()?;
        while self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            let idx = self.expr()?;
            self.expect(Tok::RBracket)?;
            e = Expr::Index(Box::new(e), Box::new(idx));
        }
        Ok(e)
    }

    fn list(&mut self, close: Tok) -> Result<Vec<Expr>, String> {
        let mut items = Vec::new();
        if self.peek() == Some(&close) {
            self.pos += 1;
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            match self.bump() {
                Some(Tok::Comma) => continue,
                Some(t) if t == close => return Ok(items),
                Some(t) => return Err(format!("expected ',' or '{close}', found '{t}'")),
                None => return Err(format!("missing '{close}'")),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, String> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let args = self.list(Tok::RParen)?;
                    Ok(Expr::Call(name, args))
                } else {
                    Ok(Expr::Name(name))
                }
            }
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::LBracket) => Ok(Expr::Vector(self.list(Tok::RBracket)?)),
            Some(t) => Err(format!("unexpected '{t}'")),
            None => Err("expression expected".to_string()),
        }
    }

    fn variable_decl(&mut self, target: String) -> Result<Statement, String> {
        self.expect(Tok::LParen)?;
        let size = match self.bump() {
            Some(Tok::Num(v)) if v >= 1.0 && v.fract() == 0.0 => v as usize,
            Some(t) => return Err(format!("variable size must be a positive integer literal, found '{t}'")),
            None => return Err("variable size expected".to_string()),
        };
        self.expect(Tok::RParen)?;
        let (mut lower, mut upper) = (None, None);
        while let Some(tok) = self.bump() {
            let slot = match tok {
                Tok::Rel(Relation::Ge) => &mut lower,
                Tok::Rel(Relation::Le) => &mut upper,
                t => return Err(format!("expected '>=' or '<=' bound, found '{t}'")),
            };
            if slot.is_some() {
                return Err("bound given twice".to_string());
            }
            *slot = Some(self.expr()?);
        }
        Ok(Statement::Variable { target, size, lower, upper })
    }
}

/// Parses one line of code with comments already removed. Blank lines
/// yield `None`.
pub fn parse_statement(text: &str) -> Result<Option<Statement>, String> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Ok(None);
    }
    let mut p = Parser { toks, pos: 0 };

    if let (Some(Tok::Ident(name)), Some(Tok::Assign)) = (p.toks.first().cloned(), p.toks.get(1)) {
        p.pos = 2;
        match (p.peek().cloned(), p.toks.get(3)) {
            (Some(Tok::Ident(f)), Some(Tok::LParen)) if f == "variable" => {
                p.pos += 1;
                return p.variable_decl(name).map(Some);
            }
            (Some(Tok::Ident(f)), Some(Tok::LParen)) if f == "file" => {
                p.pos += 2;
                p.expect(Tok::RParen)?;
                p.finish()?;
                return Ok(Some(Statement::File { target: name }));
            }
            _ => {}
        }
        let value = p.expr()?;
        p.finish()?;
        return Ok(Some(Statement::Assign { target: name, value }));
    }

    if let Some(Tok::Ident(word)) = p.peek().cloned() {
        let sense = match word.as_str() {
            "minimize" => Some(Sense::Minimize),
            "maximize" => Some(Sense::Maximize),
            _ => None,
        };
        if let Some(sense) = sense {
            p.pos += 1;
            if p.at_end() {
                return Err(format!("{word} needs an expression"));
            }
            let expr = p.expr()?;
            p.finish()?;
            return Ok(Some(Statement::Objective { sense, expr }));
        }
    }

    let lhs = p.expr()?;
    let rel = match p.bump() {
        Some(Tok::Rel(r)) => r,
        Some(Tok::Assign) => return Err("use '==' for equality constraints".to_string()),
        Some(t) => return Err(format!("expected relation, found '{t}'")),
        None => return Err("statement is not an assignment, relation or objective".to_string()),
    };
    let rhs = p.expr()?;
    p.finish()?;
    Ok(Some(Statement::Relation { lhs, rel, rhs }))
}

/// Removes a trailing comment starting at `tag`.
pub fn strip_comment<'a>(line: &'a str, tag: &str) -> &'a str {
    match line.find(tag) {
        Some(i) => &line[..i],
        None => line,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stmt(s: &str) -> Statement {
        parse_statement(s).unwrap().unwrap()
    }

    #[test]
    fn variable_declarations() {
        assert_eq!(
            stmt("x = variable(2) >= 0"),
            Statement::Variable { target: "x".into(), size: 2, lower: Some(Expr::Num(0.0)), upper: None }
        );
        match stmt("y = variable(3) <= cap >= -1") {
            Statement::Variable { size: 3, lower: Some(_), upper: Some(Expr::Name(n)), .. } => assert_eq!(n, "cap"),
            s => panic!("{s:?}"),
        }
        assert!(parse_statement("x = variable(0)").is_err());
        assert!(parse_statement("x = variable(1.5)").is_err());
    }

    #[test]
    fn relation_and_precedence() {
        let s = stmt("x[0] + 2 * x[1] <= cap");
        let Statement::Relation { lhs, rel, .. } = s else { panic!() };
        assert_eq!(rel, Relation::Le);
        let Expr::Bin(BinOp::Add, _, rhs) = lhs else { panic!() };
        assert!(matches!(*rhs, Expr::Bin(BinOp::Mul, _, _)));
    }

    #[test]
    fn objectives_and_literals() {
        assert!(matches!(stmt("maximize 3*x[0]"), Statement::Objective { sense: Sense::Maximize, .. }));
        let Statement::Assign { value, .. } = stmt("feastol = 1e-8") else { panic!() };
        assert_eq!(value.as_literal(), Some(LiteralValue::Scalar(1e-8)));
        let Statement::Assign { value, .. } = stmt("c = [1, -2.5, .5]") else { panic!() };
        assert_eq!(value.as_literal(), Some(LiteralValue::Vector(vec![1.0, -2.5, 0.5])));
        assert_eq!(stmt("case = file()"), Statement::File { target: "case".into() });
    }

    #[test]
    fn syntax_errors() {
        assert!(parse_statement("x < 1").is_err());
        assert!(parse_statement("x + 1").is_err());
        assert!(parse_statement("x[0] = 1").is_err());
        assert!(parse_statement("a = (1 + 2").is_err());
        assert!(parse_statement("a = 1 $ 2").is_err());
        assert_eq!(parse_statement("   ").unwrap(), None);
    }

    #[test]
    fn comments() {
        assert_eq!(strip_comment("x = 1 # note", "#"), "x = 1 ");
        assert_eq!(strip_comment("#@ Variable: x", "#"), "");
    }
}
