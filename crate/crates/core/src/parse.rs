//! Line-oriented model format.
//!
//! ```text
//! # comment
//! model cascade;
//! species S = 1;
//! param k1 in [0, 0.7] = 0.07;
//! d(S) = -k1*S;
//! ```

use std::fmt;

use crate::expr::{BinOp, Expr};
use crate::model::{ModelError, OdeModel, ParameterDecl, Species};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Position, message: String },
    #[error("undefined symbol `{name}` at {pos}")]
    UndefinedSymbol { pos: Position, name: String },
    #[error("duplicate declaration of `{name}` at {pos}")]
    Duplicate { pos: Position, name: String },
    #[error("invalid bounds for `{name}` at {pos}: {message}")]
    Bound {
        pos: Position,
        name: String,
        message: String,
    },
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Position,
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Position {
                line: li + 1,
                column: i + 1,
            };
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    pos,
                });
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    pos,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push(Token {
                    tok: Tok::Number(v),
                    pos,
                });
                continue;
            }
            if "+-*/^()[],;=".contains(c) {
                out.push(Token {
                    tok: Tok::Punct(c),
                    pos,
                });
                i += 1;
                continue;
            }
            return Err(ParseError::Syntax {
                pos,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    end: Position,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.at).map(|t| &t.tok)
    }

    fn pos(&self) -> Position {
        self.tokens.get(self.at).map(|t| t.pos).unwrap_or(self.end)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.at += 1;
                Ok(())
            }
            Some(other) => self.error(format!("expected `{c}`, found {}", describe(other))),
            None => self.error(format!("expected `{c}`, found end of input")),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Tok::Punct(p)) if *p == c) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<(String, Position), ParseError> {
        let pos = self.pos();
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok((s, pos))
            }
            Some(other) => self.error(format!("expected identifier, found {}", describe(other))),
            None => self.error("expected identifier, found end of input"),
        }
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = if self.eat_punct('-') {
            true
        } else {
            self.eat_punct('+');
            false
        };
        match self.peek() {
            Some(Tok::Number(v)) => {
                let v = *v;
                self.at += 1;
                Ok(if neg { -v } else { v })
            }
            Some(other) => self.error(format!("expected number, found {}", describe(other))),
            None => self.error("expected number, found end of input"),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Punct('+')) => BinOp::Add,
                Some(Tok::Punct('-')) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Punct('*')) => BinOp::Mul,
                Some(Tok::Punct('/')) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.at += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_punct('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_punct('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_punct('^') {
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.at += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(s)) => {
                self.at += 1;
                Ok(Expr::Symbol(s))
            }
            Some(Tok::Punct('(')) => {
                self.at += 1;
                let e = self.expr()?;
                self.expect_punct(')')?;
                Ok(e)
            }
            Some(other) => self.error(format!("expected expression, found {}", describe(&other))),
            None => self.error("expected expression, found end of input"),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(v) => format!("number {v}"),
        Tok::Punct(c) => format!("`{c}`"),
    }
}

/// Parse a standalone expression (used by tests and tooling).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        end: Position {
            line: text.lines().count().max(1),
            column: text.lines().last().map_or(1, |l| l.len() + 1),
        },
        tokens,
        at: 0,
    };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.error("trailing input after expression");
    }
    Ok(e)
}

struct Equation {
    species: String,
    pos: Position,
    rhs: Expr,
    symbol_positions: Vec<(String, Position)>,
}

/// Parse model source text into a validated [`OdeModel`].
pub fn parse_model(text: &str) -> Result<OdeModel, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        end: Position {
            line: text.lines().count().max(1),
            column: text.lines().last().map_or(1, |l| l.len() + 1),
        },
        tokens,
        at: 0,
    };

    let mut name: Option<String> = None;
    let mut species: Vec<(Species, Position)> = Vec::new();
    let mut params: Vec<(ParameterDecl, Position)> = Vec::new();
    let mut equations: Vec<Equation> = Vec::new();

    while let Some(tok) = p.next() {
        let kw = match tok.tok {
            Tok::Ident(s) => s,
            other => {
                return Err(ParseError::Syntax {
                    pos: tok.pos,
                    message: format!("expected statement, found {}", describe(&other)),
                })
            }
        };
        match kw.as_str() {
            "model" => {
                let (n, pos) = p.ident()?;
                if name.is_some() {
                    return Err(ParseError::Duplicate {
                        pos,
                        name: "model".into(),
                    });
                }
                name = Some(n);
            }
            "species" => {
                let (n, pos) = p.ident()?;
                p.expect_punct('=')?;
                let init = p.signed_number()?;
                species.push((Species { name: n, initial: init }, pos));
            }
            "param" => {
                let (n, pos) = p.ident()?;
                match p.next() {
                    Some(Token {
                        tok: Tok::Ident(ref s),
                        ..
                    }) if s == "in" => {}
                    _ => {
                        p.at -= 1;
                        return p.error("expected `in` after parameter name");
                    }
                }
                p.expect_punct('[')?;
                let lower = p.signed_number()?;
                p.expect_punct(',')?;
                let upper = p.signed_number()?;
                p.expect_punct(']')?;
                let true_value = if p.eat_punct('=') {
                    Some(p.signed_number()?)
                } else {
                    None
                };
                params.push((
                    ParameterDecl {
                        name: n,
                        lower,
                        upper,
                        true_value,
                    },
                    pos,
                ));
            }
            "d" => {
                p.expect_punct('(')?;
                let (sp, pos) = p.ident()?;
                p.expect_punct(')')?;
                p.expect_punct('=')?;
                let start = p.at;
                let rhs = p.expr()?;
                let symbol_positions = p.tokens[start..p.at]
                    .iter()
                    .filter_map(|t| match &t.tok {
                        Tok::Ident(s) => Some((s.clone(), t.pos)),
                        _ => None,
                    })
                    .collect();
                equations.push(Equation {
                    species: sp,
                    pos,
                    rhs,
                    symbol_positions,
                });
            }
            other => {
                return Err(ParseError::Syntax {
                    pos: tok.pos,
                    message: format!("unknown statement `{other}`"),
                })
            }
        }
        p.expect_punct(';')?;
    }

    // Declaration checks carry source positions, so run them here before
    // handing off to the model constructor.
    let mut seen: Vec<&str> = Vec::new();
    for (name, pos) in species
        .iter()
        .map(|(s, pos)| (s.name.as_str(), *pos))
        .chain(params.iter().map(|(d, pos)| (d.name.as_str(), *pos)))
    {
        if name == crate::model::TIME_SYMBOL || seen.contains(&name) {
            return Err(ParseError::Duplicate {
                pos,
                name: name.to_string(),
            });
        }
        seen.push(name);
    }
    for (d, pos) in &params {
        if let Err(message) = d.check_bounds() {
            return Err(ParseError::Bound {
                pos: *pos,
                name: d.name.clone(),
                message,
            });
        }
    }
    let mut rhs: Vec<Option<Expr>> = vec![None; species.len()];
    for eq in equations {
        let Some(idx) = species.iter().position(|(s, _)| s.name == eq.species) else {
            return Err(ParseError::UndefinedSymbol {
                pos: eq.pos,
                name: eq.species,
            });
        };
        if rhs[idx].is_some() {
            return Err(ParseError::Duplicate {
                pos: eq.pos,
                name: format!("d({})", eq.species),
            });
        }
        for (sym, pos) in &eq.symbol_positions {
            if sym != crate::model::TIME_SYMBOL && !seen.contains(&sym.as_str()) {
                return Err(ParseError::UndefinedSymbol {
                    pos: *pos,
                    name: sym.clone(),
                });
            }
        }
        rhs[idx] = Some(eq.rhs);
    }

    let rhs = rhs
        .into_iter()
        .zip(&species)
        .map(|(e, (s, _))| e.ok_or_else(|| ModelError::MissingEquation(s.name.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let model = OdeModel::new(
        name.unwrap_or_else(|| "unnamed".to_string()),
        species.into_iter().map(|(s, _)| s).collect(),
        params.into_iter().map(|(d, _)| d).collect(),
        rhs,
    )?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_model() {
        let m = parse_model("species X = 1; param k in [0,1]; d(X) = -k*X;").unwrap();
        assert_eq!(m.species().len(), 1);
        assert_eq!(m.parameters().len(), 1);
        assert_eq!(m.name(), "unnamed");
    }

    #[test]
    fn undefined_symbol_is_reported_with_position() {
        let src = "species X = 1;\nparam k in [0,1];\nd(X) = -kz*X;\n";
        match parse_model(src) {
            Err(ParseError::UndefinedSymbol { name, pos }) => {
                assert_eq!(name, "kz");
                assert_eq!(pos, Position { line: 3, column: 9 });
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_has_line_and_column() {
        let src = "species X = 1;\nd(X) = 2 * * X;";
        match parse_model(src) {
            Err(ParseError::Syntax { pos, .. }) => assert_eq!(pos, Position { line: 2, column: 12 }),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_declarations() {
        let src = "species X = 1; param X in [0,1]; d(X) = -X;";
        assert!(matches!(parse_model(src), Err(ParseError::Duplicate { name, .. }) if name == "X"));
        let src = "species X = 1; d(X) = -X; d(X) = X;";
        assert!(matches!(parse_model(src), Err(ParseError::Duplicate { .. })));
        let src = "species t = 1; d(t) = 0;";
        assert!(matches!(parse_model(src), Err(ParseError::Duplicate { name, .. }) if name == "t"));
    }

    #[test]
    fn bound_errors() {
        let src = "species X = 1; param k in [1,1]; d(X) = -k*X;";
        assert!(matches!(parse_model(src), Err(ParseError::Bound { .. })));
        let src = "species X = 1; param k in [0,1] = 2; d(X) = -k*X;";
        assert!(matches!(parse_model(src), Err(ParseError::Bound { .. })));
    }

    #[test]
    fn missing_equation() {
        let src = "species X = 1; species Y = 0; d(X) = -X;";
        assert!(matches!(
            parse_model(src),
            Err(ParseError::Model(ModelError::MissingEquation(s))) if s == "Y"
        ));
    }

    #[test]
    fn operator_precedence() {
        assert_eq!(parse_expr("-x^2").unwrap().to_string(), "-x^2");
        assert_eq!(
            parse_expr("a^b^c").unwrap(),
            parse_expr("a^(b^c)").unwrap()
        );
        assert_eq!(
            parse_expr("a - b - c").unwrap(),
            parse_expr("(a - b) - c").unwrap()
        );
        assert_eq!(parse_expr("2^-1").unwrap().to_string(), "2^-1");
        assert_eq!(parse_expr("1.5e-3").unwrap(), Expr::Const(1.5e-3));
    }

    #[test]
    fn comments_and_time_symbol() {
        let src = "# header\nmodel m; # trailing\nspecies X = 0;\nd(X) = t;\n";
        let m = parse_model(src).unwrap();
        assert_eq!(m.name(), "m");
    }
}
