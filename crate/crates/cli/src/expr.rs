//! Closed-form boundary data: `+ - * / ^`, unary minus, parentheses,
//! the coordinates `x y z`, numeric literals, `pi`, and `exp(..)`, `sin(..)`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    /// 1-based character column inside the expression text.
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Coord(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    text: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let v = s.parse::<f64>().map_err(|_| ParseError {
                column: col,
                message: format!("invalid number `{s}`"),
            })?;
            out.push((col, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((col, Tok::Ident(chars[start..i].iter().collect())));
        } else {
            let tok = match c {
                '+' => Tok::Op('+'),
                '-' | '−' => Tok::Op('-'),
                '*' | '×' => Tok::Op('*'),
                '/' => Tok::Op('/'),
                '^' => Tok::Op('^'),
                '(' => Tok::Open,
                ')' => Tok::Close,
                other => {
                    return Err(ParseError {
                        column: col,
                        message: format!("unexpected character `{other}`"),
                    })
                }
            };
            out.push((col, tok));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |(c, _)| *c)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            column: self.col(),
            message: message.into(),
        })
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return self.err("unexpected end of expression");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Tok::Open => {
                self.pos += 1;
                let inner = self.sum()?;
                self.close()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let node = match name.as_str() {
                    "x" => Node::Coord(0),
                    "y" => Node::Coord(1),
                    "z" => Node::Coord(2),
                    "pi" => Node::Num(std::f64::consts::PI),
                    "exp" | "sin" => {
                        let func = if name == "exp" { Func::Exp } else { Func::Sin };
                        self.pos += 1;
                        if self.peek() != Some(&Tok::Open) {
                            return self.err(format!("expected `(` after `{name}`"));
                        }
                        self.pos += 1;
                        let arg = self.sum()?;
                        self.close()?;
                        return Ok(Node::Call(func, Box::new(arg)));
                    }
                    _ => return self.err(format!("unknown name `{name}`")),
                };
                self.pos += 1;
                Ok(node)
            }
            Tok::Close => self.err("unexpected `)`"),
            Tok::Op(c) => self.err(format!("unexpected operator `{c}`")),
        }
    }

    fn close(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::Close) {
            self.pos += 1;
            Ok(())
        } else {
            self.err("expected `)`")
        }
    }
}

fn eval(node: &Node, p: &[f64; 3]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Coord(k) => p[*k],
        Node::Neg(a) => -eval(a, p),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, p), eval(b, p));
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Node::Call(Func::Exp, a) => eval(a, p).exp(),
        Node::Call(Func::Sin, a) => eval(a, p).sin(),
    }
}

fn max_coord(node: &Node) -> Option<usize> {
    match node {
        Node::Num(_) => None,
        Node::Coord(k) => Some(*k),
        Node::Neg(a) | Node::Call(_, a) => max_coord(a),
        Node::Bin(_, a, b) => max_coord(a).max(max_coord(b)),
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let toks = tokenize(text)?;
        let mut parser = Parser {
            toks,
            pos: 0,
            end_col: text.chars().count() + 1,
        };
        let root = parser.sum()?;
        if parser.pos < parser.toks.len() {
            return parser.err("unexpected trailing input");
        }
        Ok(Self {
            root,
            text: text.to_string(),
        })
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        eval(&self.root, &p)
    }

    /// Number of coordinates the expression refers to (`z` means 3).
    pub fn dims_used(&self) -> usize {
        max_coord(&self.root).map_or(0, |k| k + 1)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(text: &str, p: [f64; 3]) -> f64 {
        Expr::parse(text).unwrap().eval(p)
    }

    #[test]
    fn precedence_and_associativity() {
        let o = [0.0; 3];
        assert_eq!(at("1 + 2 * 3", o), 7.0);
        assert_eq!(at("(1 + 2) * 3", o), 9.0);
        assert_eq!(at("8 / 4 / 2", o), 1.0);
        assert_eq!(at("2 ^ 3 ^ 2", o), 512.0);
        assert_eq!(at("-2 ^ 2", o), -4.0);
        assert_eq!(at("2 ^ -1", o), 0.5);
        assert_eq!(at("1 - 2 - 3", o), -4.0);
        assert_eq!(at("--3", o), 3.0);
        assert_eq!(at("1.5e-1 + .5", o), 0.65);
    }

    #[test]
    fn coordinates_and_functions() {
        let p = [0.5, 2.0, -1.0];
        assert_eq!(at("0.1*x", p), 0.05);
        assert_eq!(at("x*y + z", p), 0.0);
        assert_eq!(at("exp(0)", p), 1.0);
        assert!((at("sin(pi/2)", p) - 1.0).abs() < 1e-15);
        assert_eq!(at("2 × x − y", p), -1.0);
        assert_eq!(Expr::parse("x + z").unwrap().dims_used(), 3);
        assert_eq!(Expr::parse("3").unwrap().dims_used(), 0);
    }

    #[test]
    fn errors_carry_columns() {
        let col = |t: &str| Expr::parse(t).unwrap_err().column;
        assert_eq!(col("1 + "), 5);
        assert_eq!(col("1 + w"), 5);
        assert_eq!(col("(1 + 2"), 7);
        assert_eq!(col("1 2"), 3);
        assert_eq!(col("cos(x)"), 1);
        assert_eq!(col("exp x"), 5);
        assert_eq!(col("1 $ 2"), 3);
        assert_eq!(col(")"), 1);
    }
}
