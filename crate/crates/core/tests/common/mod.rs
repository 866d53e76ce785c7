//! Shared helpers for the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn iggl_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_iggl"))
}

pub fn run_iggl(args: &[&str], cwd: &Path) -> Output {
    Command::new(iggl_bin())
        .args(args)
        .current_dir(cwd)
        .env_remove("IGGL_SEED")
        .output()
        .expect("spawn iggl")
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Eq,
    Colon,
    EdgeOp(&'static str),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                while i + 1 < chars.len() && !(chars[i] == '*' && chars[i + 1] == '/') {
                    i += 1;
                }
                if i + 1 >= chars.len() {
                    return Err("unterminated comment".into());
                }
                i += 2;
            }
            '#' if i == 0 || chars[i - 1] == '\n' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' => {
                out.push(Tok::LBrace);
                i += 1
            }
            '}' => {
                out.push(Tok::RBrace);
                i += 1
            }
            '[' => {
                out.push(Tok::LBracket);
                i += 1
            }
            ']' => {
                out.push(Tok::RBracket);
                i += 1
            }
            ';' => {
                out.push(Tok::Semi);
                i += 1
            }
            ',' => {
                out.push(Tok::Comma);
                i += 1
            }
            '=' => {
                out.push(Tok::Eq);
                i += 1
            }
            ':' => {
                out.push(Tok::Colon);
                i += 1
            }
            '-' if chars.get(i + 1) == Some(&'-') => {
                out.push(Tok::EdgeOp("--"));
                i += 2
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Tok::EdgeOp("->"));
                i += 2
            }
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('"') => break,
                        Some('\\') if chars.get(i + 1) == Some(&'"') => {
                            s.push('"');
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                i += 1;
                out.push(Tok::Id(s));
            }
            c if c.is_ascii_alphabetic() || c == '_' || !c.is_ascii() => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || !chars[i].is_ascii())
                {
                    i += 1;
                }
                out.push(Tok::Id(chars[start..i].iter().collect()));
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' => {
                // numeral: [-]?(.[0-9]+ | [0-9]+(.[0-9]*)?)
                let start = i;
                if chars[i] == '-' {
                    i += 1;
                }
                let mut digits = 0;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                    digits += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                        digits += 1;
                    }
                }
                if digits == 0 {
                    return Err(format!("bad numeral at offset {start}"));
                }
                out.push(Tok::Id(chars[start..i].iter().collect()));
            }
            other => return Err(format!("unexpected character {other:?} at offset {i}")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    edge_op: &'static str,
    edges: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), String> {
        match self.next() {
            Some(ref x) if *x == t => Ok(()),
            other => Err(format!("expected {t:?}, found {other:?}")),
        }
    }

    fn id(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Id(s)) => Ok(s),
            other => Err(format!("expected ID, found {other:?}")),
        }
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Id(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn graph(&mut self) -> Result<(), String> {
        if self.keyword("strict") {
            self.pos += 1;
        }
        if self.keyword("graph") {
            self.edge_op = "--";
        } else if self.keyword("digraph") {
            self.edge_op = "->";
        } else {
            return Err("expected graph or digraph".into());
        }
        self.pos += 1;
        if let Some(Tok::Id(_)) = self.peek() {
            self.pos += 1;
        }
        self.expect(Tok::LBrace)?;
        self.stmt_list()?;
        self.expect(Tok::RBrace)?;
        if self.pos != self.toks.len() {
            return Err("trailing tokens after graph".into());
        }
        Ok(())
    }

    fn stmt_list(&mut self) -> Result<(), String> {
        while !matches!(self.peek(), Some(Tok::RBrace) | None) {
            self.stmt()?;
            if self.peek() == Some(&Tok::Semi) {
                self.pos += 1;
            }
        }
        Ok(())
    }

    fn stmt(&mut self) -> Result<(), String> {
        if self.keyword("graph") || self.keyword("node") || self.keyword("edge") {
            self.pos += 1;
            return self.attr_list();
        }
        if self.keyword("subgraph") || self.peek() == Some(&Tok::LBrace) {
            self.subgraph()?;
            return self.edge_rhs();
        }
        self.id()?;
        if self.peek() == Some(&Tok::Eq) {
            self.pos += 1;
            self.id()?;
            return Ok(());
        }
        self.port()?;
        self.edge_rhs()?;
        if self.peek() == Some(&Tok::LBracket) {
            self.attr_list()?;
        }
        Ok(())
    }

    fn port(&mut self) -> Result<(), String> {
        for _ in 0..2 {
            if self.peek() == Some(&Tok::Colon) {
                self.pos += 1;
                self.id()?;
            }
        }
        Ok(())
    }

    fn subgraph(&mut self) -> Result<(), String> {
        if self.keyword("subgraph") {
            self.pos += 1;
            if let Some(Tok::Id(_)) = self.peek() {
                self.pos += 1;
            }
        }
        self.expect(Tok::LBrace)?;
        self.stmt_list()?;
        self.expect(Tok::RBrace)
    }

    fn edge_rhs(&mut self) -> Result<(), String> {
        while let Some(Tok::EdgeOp(op)) = self.peek().cloned() {
            if op != self.edge_op {
                return Err(format!(
                    "edge operator {op} in a graph using {}",
                    self.edge_op
                ));
            }
            self.pos += 1;
            self.edges += 1;
            if self.keyword("subgraph") || self.peek() == Some(&Tok::LBrace) {
                self.subgraph()?;
            } else {
                self.id()?;
                self.port()?;
            }
        }
        Ok(())
    }

    fn attr_list(&mut self) -> Result<(), String> {
        let mut any = false;
        while self.peek() == Some(&Tok::LBracket) {
            any = true;
            self.pos += 1;
            while self.peek() != Some(&Tok::RBracket) {
                self.id()?;
                self.expect(Tok::Eq)?;
                self.id()?;
                if matches!(self.peek(), Some(Tok::Semi) | Some(Tok::Comma)) {
                    self.pos += 1;
                }
            }
            self.expect(Tok::RBracket)?;
        }
        if any {
            Ok(())
        } else {
            Err("expected attribute list".into())
        }
    }
}

/// Checks `src` against the Graphviz DOT grammar and returns the number of
/// edge operators.
pub fn check_dot(src: &str) -> Result<usize, String> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        edge_op: "--",
        edges: 0,
    };
    p.graph()?;
    Ok(p.edges)
}

#[test]
fn dot_checker_sanity() {
    assert_eq!(check_dot("graph { a -- b [weight=\"1\"]; c; }"), Ok(1));
    assert_eq!(check_dot("strict digraph G { a -> b -> c }"), Ok(2));
    assert!(check_dot("graph { a -> b }").is_err());
    assert!(check_dot("graph { a -- }").is_err());
    assert!(check_dot("graph { \"a -- b }").is_err());
    assert!(check_dot("graph { a [weight=] }").is_err());
}
