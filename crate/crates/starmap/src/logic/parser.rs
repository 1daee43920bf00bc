//! Lexer and recursive-descent parser for the logic language.
//!
//! The grammar is LL(1): a statement starting with a number is a
//! probabilistic fact, otherwise the token after the first atom decides
//! between a distributional fact (`~`) and a rule (`:-`).

use crate::relations::ThresholdOp;

use super::{
    Atom, Comparison, DistributionalFact, Literal, LogicError, ProbabilisticFact, Program, Rule,
    Statement, Term,
};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Tilde,
    ColonColon,
    ColonDash,
    LParen,
    RParen,
    Comma,
    Dot,
    Less,
    Greater,
    Eof,
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "identifier `{s}`"),
            Token::Number(n) => write!(f, "number `{n}`"),
            Token::Tilde => write!(f, "`~`"),
            Token::ColonColon => write!(f, "`::`"),
            Token::ColonDash => write!(f, "`:-`"),
            Token::LParen => write!(f, "`(`"),
            Token::RParen => write!(f, "`)`"),
            Token::Comma => write!(f, "`,`"),
            Token::Dot => write!(f, "`.`"),
            Token::Less => write!(f, "`<`"),
            Token::Greater => write!(f, "`>`"),
            Token::Eof => write!(f, "end of input"),
        }
    }
}

struct Spanned {
    token: Token,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> LogicError {
    LogicError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

struct Lexer {
    src: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
}

impl Lexer {
    fn new(text: &str) -> Self {
        Lexer {
            src: text.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self, ahead: usize) -> Option<char> {
        self.src.get(self.pos + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek(0)?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek(0) {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('%') => {
                    while let Some(c) = self.peek(0) {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, LogicError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek(0) else {
                out.push(Spanned {
                    token: Token::Eof,
                    line,
                    col,
                });
                return Ok(out);
            };
            let token = match c {
                'a'..='z' | 'A'..='Z' | '_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek(0) {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            s.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Token::Ident(s)
                }
                '0'..='9' | '-' => self.number(line, col)?,
                ':' => {
                    self.bump();
                    match self.peek(0) {
                        Some(':') => {
                            self.bump();
                            Token::ColonColon
                        }
                        Some('-') => {
                            self.bump();
                            Token::ColonDash
                        }
                        _ => return Err(syntax(line, col, "expected `::` or `:-` after `:`")),
                    }
                }
                '~' => {
                    self.bump();
                    Token::Tilde
                }
                '(' => {
                    self.bump();
                    Token::LParen
                }
                ')' => {
                    self.bump();
                    Token::RParen
                }
                ',' => {
                    self.bump();
                    Token::Comma
                }
                '.' => {
                    self.bump();
                    Token::Dot
                }
                '<' => {
                    self.bump();
                    Token::Less
                }
                '>' => {
                    self.bump();
                    Token::Greater
                }
                other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
            };
            out.push(Spanned { token, line, col });
        }
    }

    fn number(&mut self, line: usize, col: usize) -> Result<Token, LogicError> {
        let mut s = String::new();
        if self.peek(0) == Some('-') {
            s.push('-');
            self.bump();
            if !self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                return Err(syntax(line, col, "expected digits after `-`"));
            }
        }
        while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
            s.push(self.bump().unwrap());
        }
        // A `.` continues the number only when a digit follows; otherwise it
        // is the statement terminator, as in `normal(20, 5).`.
        if self.peek(0) == Some('.') && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            s.push(self.bump().unwrap());
            while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                s.push(self.bump().unwrap());
            }
        }
        if matches!(self.peek(0), Some('e') | Some('E')) {
            let mut ahead = 1;
            if matches!(self.peek(1), Some('+') | Some('-')) {
                ahead = 2;
            }
            if self.peek(ahead).is_some_and(|c| c.is_ascii_digit()) {
                for _ in 0..ahead {
                    s.push(self.bump().unwrap());
                }
                while self.peek(0).is_some_and(|c| c.is_ascii_digit()) {
                    s.push(self.bump().unwrap());
                }
            }
        }
        let value: f64 = s
            .parse()
            .map_err(|_| syntax(line, col, format!("malformed number `{s}`")))?;
        if !value.is_finite() {
            return Err(syntax(line, col, format!("number `{s}` is out of range")));
        }
        Ok(Token::Number(value))
    }
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos].token
    }

    fn here(&self) -> (usize, usize) {
        (self.tokens[self.pos].line, self.tokens[self.pos].col)
    }

    fn bump(&mut self) -> Token {
        let token = self.tokens[self.pos].token.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        token
    }

    fn expect(&mut self, want: Token) -> Result<(), LogicError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            let (line, col) = self.here();
            Err(syntax(
                line,
                col,
                format!("expected {want}, found {}", self.peek()),
            ))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, LogicError> {
        if let Token::Ident(s) = self.peek() {
            let s = s.clone();
            self.bump();
            Ok(s)
        } else {
            let (line, col) = self.here();
            Err(syntax(
                line,
                col,
                format!("expected {what}, found {}", self.peek()),
            ))
        }
    }

    fn number(&mut self) -> Result<f64, LogicError> {
        if let Token::Number(n) = self.peek() {
            let n = *n;
            self.bump();
            Ok(n)
        } else {
            let (line, col) = self.here();
            Err(syntax(
                line,
                col,
                format!("expected a number, found {}", self.peek()),
            ))
        }
    }

    fn atom(&mut self) -> Result<Atom, LogicError> {
        let predicate = self.ident("a predicate")?;
        self.expect(Token::LParen)?;
        let mut terms = vec![self.term()?];
        while *self.peek() == Token::Comma {
            self.bump();
            terms.push(self.term()?);
        }
        self.expect(Token::RParen)?;
        Ok(Atom { predicate, terms })
    }

    fn term(&mut self) -> Result<Term, LogicError> {
        let name = self.ident("a term")?;
        // Prolog convention: a leading uppercase letter or underscore makes
        // a variable; anything else is a constant.
        let first = name.chars().next().expect("idents are non-empty");
        if first.is_ascii_uppercase() || first == '_' {
            Ok(Term::Variable(name))
        } else {
            Ok(Term::Constant(name))
        }
    }

    fn literal(&mut self) -> Result<Literal, LogicError> {
        let atom = self.atom()?;
        let op = match self.peek() {
            Token::Less => ThresholdOp::Less,
            Token::Greater => ThresholdOp::Greater,
            _ => return Ok(Literal::Atom(atom)),
        };
        self.bump();
        let threshold = self.number()?;
        Ok(Literal::Comparison(Comparison {
            atom,
            op,
            threshold,
        }))
    }

    fn statement(&mut self) -> Result<Statement, LogicError> {
        if matches!(self.peek(), Token::Number(_)) {
            let probability = self.number()?;
            self.expect(Token::ColonColon)?;
            let atom = self.atom()?;
            self.expect(Token::Dot)?;
            return Ok(Statement::Probabilistic(ProbabilisticFact {
                probability,
                atom,
            }));
        }
        let atom = self.atom()?;
        match self.peek() {
            Token::Tilde => {
                self.bump();
                let (line, col) = self.here();
                let dist = self.ident("a distribution")?;
                if dist != "normal" {
                    return Err(syntax(
                        line,
                        col,
                        format!("unknown distribution `{dist}`, only `normal` is supported"),
                    ));
                }
                self.expect(Token::LParen)?;
                let mean = self.number()?;
                self.expect(Token::Comma)?;
                let stddev = self.number()?;
                self.expect(Token::RParen)?;
                self.expect(Token::Dot)?;
                Ok(Statement::Distributional(DistributionalFact {
                    atom,
                    mean,
                    stddev,
                }))
            }
            Token::ColonDash => {
                self.bump();
                let mut body = vec![self.literal()?];
                while *self.peek() == Token::Comma {
                    self.bump();
                    body.push(self.literal()?);
                }
                self.expect(Token::Dot)?;
                Ok(Statement::Rule(Rule { head: atom, body }))
            }
            other => {
                let (line, col) = self.here();
                Err(syntax(
                    line,
                    col,
                    format!("expected `~` or `:-` after `{atom}`, found {other}"),
                ))
            }
        }
    }
}

pub(super) fn parse_program(text: &str) -> Result<Program, LogicError> {
    let tokens = Lexer::new(text).tokens()?;
    let mut parser = Parser { tokens, pos: 0 };
    let mut statements = Vec::new();
    while *parser.peek() != Token::Eof {
        statements.push(parser.statement()?);
    }
    Program::new(statements)
}

pub(super) fn parse_atom(text: &str) -> Result<Atom, LogicError> {
    let tokens = Lexer::new(text).tokens()?;
    let mut parser = Parser { tokens, pos: 0 };
    let atom = parser.atom()?;
    parser.expect(Token::Eof)?;
    Ok(atom)
}
