//! Surface syntax: lexer, recursive-descent parser with scope resolution,
//! and a canonical pretty-printer.
//!
//! ```text
//! program  ::= "priorities" P ("<" P)* ";" seq
//! seq      ::= item (";" item)*
//! item     ::= "skip" | "let" x "=" instr "in" seq | "with" "(" v ")" block
//!            | "trywith" "(" v ")" block "else" block | "if" v block "else" block
//!            | "while" v block | block | instr            (instr ";" seq binds `_`)
//! instr    ::= "spawn" "<" P ">" "[" perms "]" block | "newref" "<" ty ">" "(" v ")"
//!            | "!" v | v ":=" v | "newcv" "<" P ">" | "wait" "(" v ")"
//!            | "signal" "(" v ")" | "broadcast" "(" v ")" | "promote" "<" P ">" "(" v ")"
//!            | "newmutex" "<" P ">" | v
//! perms    ::= (perm ("," perm)*)?
//! perm     ::= "all" "(" x ")" | x "{" P ":" level ("," P ":" level)* "}"
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use crate::lang::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Lexical,
    Syntax,
    UnknownPriority,
    UnboundVariable,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{}:{}: {message}", span.line, span.col)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: Span,
    pub message: String,
}

/// A parsed program together with the text it came from.
#[derive(Clone, Debug)]
pub struct SourceProgram {
    pub program: Program,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: [&str; 15] = [":=", "<", ">", ";", "[", "]", "{", "}", "(", ")", ",", "=", ":", "!", "_"];

const KEYWORDS: [&str; 23] = [
    "priorities", "let", "in", "spawn", "newref", "newcv", "newmutex", "wait", "signal", "broadcast",
    "promote", "with", "trywith", "else", "if", "while", "skip", "all", "unit", "nat", "ref", "mutex",
    "owned",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s) || s == "shared" || s == "none"
}

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let bytes = text.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut out = Vec::new();
    while i < bytes.len() {
        let c = bytes[i];
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == b'/' && bytes.get(i + 1) == Some(&b'/') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let span_at = |end: usize| Span { start, end, line, col };
        if c.is_ascii_alphabetic() || (c == b'_' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphanumeric())) {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(text[start..i].to_string()), span_at(i)));
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let n = text[start..i].parse::<u64>().map_err(|_| ParseError {
                kind: ParseErrorKind::Lexical,
                span: span_at(i),
                message: format!("numeral `{}` is out of range", &text[start..i]),
            })?;
            out.push((Tok::Num(n), span_at(i)));
        } else if let Some(sym) = SYMBOLS.iter().find(|s| text[i..].starts_with(**s)) {
            i += sym.len();
            out.push((Tok::Sym(sym), span_at(i)));
        } else {
            let ch = text[i..].chars().next().unwrap_or('?');
            return Err(ParseError {
                kind: ParseErrorKind::Lexical,
                span: Span { start, end: start + ch.len_utf8(), line, col },
                message: format!("unexpected character `{ch}`"),
            });
        }
        col += i - start;
    }
    out.push((Tok::Eof, Span { start: text.len(), end: text.len(), line, col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    order: Option<PriorityOrder>,
    scope: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError { kind: ParseErrorKind::Syntax, span: self.span(), message: message.into() })
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<Span> {
        if self.is_sym(s) {
            Ok(self.bump().1)
        } else {
            self.err(format!("expected `{s}`, found {}", Self::describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, s: &str) -> PResult<Span> {
        if self.is_kw(s) {
            Ok(self.bump().1)
        } else {
            self.err(format!("expected `{s}`, found {}", Self::describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                let sp = self.bump().1;
                Ok((s, sp))
            }
            t => self.err(format!("expected an identifier, found {}", Self::describe(&t))),
        }
    }

    fn binder(&mut self) -> PResult<String> {
        if self.is_sym("_") {
            self.bump();
            return Ok("_".to_string());
        }
        Ok(self.ident()?.0)
    }

    fn priority(&mut self) -> PResult<Priority> {
        let (name, sp) = match self.peek().clone() {
            Tok::Ident(s) => {
                let sp = self.bump().1;
                (s, sp)
            }
            t => return self.err(format!("expected a priority, found {}", Self::describe(&t))),
        };
        let order = self.order.as_ref().expect("order parsed first");
        order.resolve(&name).ok_or(ParseError {
            kind: ParseErrorKind::UnknownPriority,
            span: sp,
            message: format!("unknown priority `{name}`"),
        })
    }

    fn angle_priority(&mut self) -> PResult<Priority> {
        self.expect_sym("<")?;
        let p = self.priority()?;
        self.expect_sym(">")?;
        Ok(p)
    }

    fn program(&mut self) -> PResult<Program> {
        self.expect_kw("priorities")?;
        let mut names = Vec::new();
        let (first, first_span) = self.ident()?;
        names.push(first);
        while self.is_sym("<") {
            self.bump();
            names.push(self.ident()?.0);
        }
        self.expect_sym(";")?;
        let order = PriorityOrder::new(names).map_err(|e| ParseError {
            kind: ParseErrorKind::Syntax,
            span: first_span,
            message: e.to_string(),
        })?;
        self.order = Some(order.clone());
        let body = self.seq()?;
        if *self.peek() != Tok::Eof {
            return self.err(format!("expected end of input, found {}", Self::describe(self.peek())));
        }
        Ok(Program { order, body })
    }

    fn seq(&mut self) -> PResult<Stmt> {
        let start = self.span();
        let first = self.item()?;
        match first {
            Item::Stmt(s) => {
                if self.is_sym(";") {
                    self.bump();
                    let rest = self.seq()?;
                    let span = start.to(rest.span);
                    Ok(Stmt { kind: StmtKind::Seq(Box::new(s), Box::new(rest)), span })
                } else {
                    Ok(s)
                }
            }
            Item::Instr(i) => {
                let body = if self.is_sym(";") {
                    self.bump();
                    self.scope.push("_".into());
                    let r = self.seq();
                    self.scope.pop();
                    r?
                } else {
                    Stmt { kind: StmtKind::Skip, span: self.prev_span() }
                };
                let span = start.to(body.span);
                Ok(Stmt { kind: StmtKind::Let("_".into(), i, Box::new(body)), span })
            }
        }
    }

    fn block(&mut self) -> PResult<Stmt> {
        let open = self.expect_sym("{")?;
        if self.is_sym("}") {
            let close = self.bump().1;
            return Ok(Stmt { kind: StmtKind::Skip, span: open.to(close) });
        }
        let s = self.seq()?;
        self.expect_sym("}")?;
        Ok(s)
    }

    fn item(&mut self) -> PResult<Item> {
        let start = self.span();
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            Tok::Sym("{") => return Ok(Item::Stmt(self.block()?)),
            _ => return Ok(Item::Instr(self.instr()?)),
        };
        let kind = match kw.as_str() {
            "skip" => {
                self.bump();
                StmtKind::Skip
            }
            "let" => {
                self.bump();
                let x = self.binder()?;
                self.expect_sym("=")?;
                let i = self.instr()?;
                self.expect_kw("in")?;
                self.scope.push(x.clone());
                let body = self.seq();
                self.scope.pop();
                StmtKind::Let(x, i, Box::new(body?))
            }
            "with" => {
                self.bump();
                self.expect_sym("(")?;
                let v = self.value()?;
                self.expect_sym(")")?;
                StmtKind::WithLock(v, Box::new(self.block()?))
            }
            "trywith" => {
                self.bump();
                self.expect_sym("(")?;
                let v = self.value()?;
                self.expect_sym(")")?;
                let a = self.block()?;
                self.expect_kw("else")?;
                let b = self.block()?;
                StmtKind::TryWith(v, Box::new(a), Box::new(b))
            }
            "if" => {
                self.bump();
                let v = self.value()?;
                let a = self.block()?;
                self.expect_kw("else")?;
                let b = self.block()?;
                StmtKind::If(v, Box::new(a), Box::new(b))
            }
            "while" => {
                self.bump();
                let v = self.value()?;
                StmtKind::While(v, Box::new(self.block()?))
            }
            _ => return Ok(Item::Instr(self.instr()?)),
        };
        Ok(Item::Stmt(Stmt { kind, span: start.to(self.prev_span()) }))
    }

    fn instr(&mut self) -> PResult<Instr> {
        let start = self.span();
        let kind = if self.is_sym("!") {
            self.bump();
            InstrKind::Deref(self.value()?)
        } else {
            let kw = match self.peek() {
                Tok::Ident(s) => s.clone(),
                _ => String::new(),
            };
            match kw.as_str() {
                "spawn" => {
                    self.bump();
                    let prio = self.angle_priority()?;
                    self.expect_sym("[")?;
                    let mut passed = Vec::new();
                    if !self.is_sym("]") {
                        passed.push(self.perm()?);
                        while self.is_sym(",") {
                            self.bump();
                            passed.push(self.perm()?);
                        }
                    }
                    self.expect_sym("]")?;
                    let body = self.block()?;
                    InstrKind::Spawn { prio, passed, body: Box::new(body) }
                }
                "newref" => {
                    self.bump();
                    self.expect_sym("<")?;
                    let t = self.ty()?;
                    self.expect_sym(">")?;
                    self.expect_sym("(")?;
                    let v = self.value()?;
                    self.expect_sym(")")?;
                    InstrKind::NewRef(t, v)
                }
                "newcv" => {
                    self.bump();
                    InstrKind::NewCv(self.angle_priority()?)
                }
                "newmutex" => {
                    self.bump();
                    InstrKind::NewMutex(self.angle_priority()?)
                }
                "wait" | "signal" | "broadcast" => {
                    self.bump();
                    self.expect_sym("(")?;
                    let v = self.value()?;
                    self.expect_sym(")")?;
                    match kw.as_str() {
                        "wait" => InstrKind::Wait(v),
                        "signal" => InstrKind::Signal(v),
                        _ => InstrKind::Broadcast(v),
                    }
                }
                "promote" => {
                    self.bump();
                    let p = self.angle_priority()?;
                    self.expect_sym("(")?;
                    let v = self.value()?;
                    self.expect_sym(")")?;
                    InstrKind::Promote(v, p)
                }
                _ => {
                    let v = self.value()?;
                    if self.is_sym(":=") {
                        self.bump();
                        InstrKind::Assign(v, self.value()?)
                    } else {
                        InstrKind::Val(v)
                    }
                }
            }
        };
        Ok(Instr { kind, span: start.to(self.prev_span()) })
    }

    fn perm(&mut self) -> PResult<PermArg> {
        if self.is_kw("all") && self.peek_at(1) == &Tok::Sym("(") {
            self.bump();
            self.expect_sym("(")?;
            let v = self.var()?;
            self.expect_sym(")")?;
            return Ok(PermArg::All(v));
        }
        let v = self.var()?;
        self.expect_sym("{")?;
        let mut levels = Vec::new();
        loop {
            let p = self.priority()?;
            self.expect_sym(":")?;
            let lvl = match self.peek().clone() {
                Tok::Ident(s) if s == "owned" => PermissionLevel::Owned,
                Tok::Ident(s) if s == "shared" => PermissionLevel::Shared,
                Tok::Ident(s) if s == "none" => PermissionLevel::None,
                t => return self.err(format!("expected a permission level, found {}", Self::describe(&t))),
            };
            self.bump();
            levels.push((p, lvl));
            if self.is_sym(",") {
                self.bump();
            } else {
                break;
            }
        }
        self.expect_sym("}")?;
        Ok(PermArg::Levels(v, levels))
    }

    fn ty(&mut self) -> PResult<Type> {
        let (t, _) = match self.peek().clone() {
            Tok::Ident(s) => (s, self.bump().1),
            t => return self.err(format!("expected a type, found {}", Self::describe(&t))),
        };
        match t.as_str() {
            "unit" => Ok(Type::Unit),
            "nat" => Ok(Type::Nat),
            "ref" => {
                self.expect_sym("<")?;
                let inner = self.ty()?;
                self.expect_sym(">")?;
                Ok(Type::Ref(Box::new(inner)))
            }
            "mutex" => Ok(Type::Mutex(self.angle_priority()?)),
            other => {
                self.pos -= 1;
                self.err(format!("unknown type `{other}`"))
            }
        }
    }

    fn var(&mut self) -> PResult<Value> {
        let (x, sp) = self.ident()?;
        self.check_bound(&x, sp)?;
        Ok(Value::Var(x))
    }

    fn check_bound(&self, x: &str, sp: Span) -> PResult<()> {
        if self.scope.iter().any(|y| y == x) {
            Ok(())
        } else {
            Err(ParseError {
                kind: ParseErrorKind::UnboundVariable,
                span: sp,
                message: format!("unbound variable `{x}`"),
            })
        }
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Value::Num(n))
            }
            Tok::Sym("(") if self.peek_at(1) == &Tok::Sym(")") => {
                self.bump();
                self.bump();
                Ok(Value::Unit)
            }
            Tok::Ident(_) => self.var(),
            t => self.err(format!("expected a value, found {}", Self::describe(&t))),
        }
    }
}

enum Item {
    Stmt(Stmt),
    Instr(Instr),
}

/// Parses and resolves a program.
pub fn parse_program(text: &str) -> Result<SourceProgram, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, order: None, scope: Vec::new() };
    let program = p.program()?;
    Ok(SourceProgram { program, text: text.to_string() })
}

/// Canonical text for a program; reparses to a structurally equal AST.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "priorities {};", p.order.names().join(" < "));
    print_stmt(&p.order, &p.body, 0, &mut out);
    out.push('\n');
    out
}

/// The statement alone, without the priority header.
pub fn print_stmt_text(order: &PriorityOrder, s: &Stmt) -> String {
    let mut out = String::new();
    print_stmt(order, s, 0, &mut out);
    out
}

fn indent(n: usize, out: &mut String) {
    for _ in 0..n {
        out.push_str("  ");
    }
}

fn print_block(order: &PriorityOrder, s: &Stmt, depth: usize, out: &mut String) {
    if matches!(s.kind, StmtKind::Skip) {
        out.push_str("{ }");
        return;
    }
    out.push_str("{\n");
    indent(depth + 1, out);
    print_stmt(order, s, depth + 1, out);
    out.push('\n');
    indent(depth, out);
    out.push('}');
}

fn print_stmt(order: &PriorityOrder, s: &Stmt, depth: usize, out: &mut String) {
    match &s.kind {
        StmtKind::Skip => out.push_str("skip"),
        StmtKind::Let(x, i, body) if x == "_" && !matches!(i.kind, InstrKind::Val(_)) => {
            print_instr(order, i, depth, out);
            if !matches!(body.kind, StmtKind::Skip) {
                out.push_str(";\n");
                indent(depth, out);
                print_stmt(order, body, depth, out);
            }
        }
        StmtKind::Let(x, i, body) => {
            let _ = write!(out, "let {x} = ");
            print_instr(order, i, depth, out);
            out.push_str(" in\n");
            indent(depth, out);
            print_stmt(order, body, depth, out);
        }
        StmtKind::WithLock(v, b) => {
            let _ = write!(out, "with ({}) ", value_text(order, v));
            print_block(order, b, depth, out);
        }
        StmtKind::TryWith(v, a, b) => {
            let _ = write!(out, "trywith ({}) ", value_text(order, v));
            print_block(order, a, depth, out);
            out.push_str(" else ");
            print_block(order, b, depth, out);
        }
        StmtKind::If(v, a, b) => {
            let _ = write!(out, "if {} ", value_text(order, v));
            print_block(order, a, depth, out);
            out.push_str(" else ");
            print_block(order, b, depth, out);
        }
        StmtKind::While(v, b) => {
            let _ = write!(out, "while {} ", value_text(order, v));
            print_block(order, b, depth, out);
        }
        StmtKind::Seq(a, b) => {
            // A left operand that would swallow the `;` goes in braces.
            if matches!(a.kind, StmtKind::Seq(..) | StmtKind::Let(..)) {
                out.push_str("{\n");
                indent(depth + 1, out);
                print_stmt(order, a, depth + 1, out);
                out.push('\n');
                indent(depth, out);
                out.push('}');
            } else {
                print_stmt(order, a, depth, out);
            }
            out.push_str(";\n");
            indent(depth, out);
            print_stmt(order, b, depth, out);
        }
    }
}

fn print_instr(order: &PriorityOrder, i: &Instr, depth: usize, out: &mut String) {
    let pn = |p: &Priority| order.name(*p).to_string();
    match &i.kind {
        InstrKind::Spawn { prio, passed, body } => {
            let perms: Vec<String> = passed.iter().map(|a| perm_text(order, a)).collect();
            let _ = write!(out, "spawn<{}>[{}] ", pn(prio), perms.join(", "));
            print_block(order, body, depth, out);
        }
        InstrKind::NewRef(t, v) => {
            let _ = write!(out, "newref<{}>({})", type_text(order, t), value_text(order, v));
        }
        InstrKind::Deref(v) => {
            let _ = write!(out, "!{}", value_text(order, v));
        }
        InstrKind::Assign(a, b) => {
            let _ = write!(out, "{} := {}", value_text(order, a), value_text(order, b));
        }
        InstrKind::NewCv(p) => {
            let _ = write!(out, "newcv<{}>", pn(p));
        }
        InstrKind::Wait(v) => {
            let _ = write!(out, "wait({})", value_text(order, v));
        }
        InstrKind::Signal(v) => {
            let _ = write!(out, "signal({})", value_text(order, v));
        }
        InstrKind::Broadcast(v) => {
            let _ = write!(out, "broadcast({})", value_text(order, v));
        }
        InstrKind::Promote(v, p) => {
            let _ = write!(out, "promote<{}>({})", pn(p), value_text(order, v));
        }
        InstrKind::NewMutex(p) => {
            let _ = write!(out, "newmutex<{}>", pn(p));
        }
        InstrKind::Val(v) => out.push_str(&value_text(order, v)),
    }
}

fn perm_text(order: &PriorityOrder, a: &PermArg) -> String {
    match a {
        PermArg::All(v) => format!("all({})", value_text(order, v)),
        PermArg::Levels(v, levels) => {
            let inner: Vec<String> = levels.iter().map(|(p, l)| format!("{}: {}", order.name(*p), l)).collect();
            format!("{}{{{}}}", value_text(order, v), inner.join(", "))
        }
    }
}

/// Text of a value. Runtime handles have no surface syntax and print in
/// angle brackets.
pub fn value_text(order: &PriorityOrder, v: &Value) -> String {
    match v {
        Value::Var(x) => x.clone(),
        Value::Unit => "()".to_string(),
        Value::Num(n) => n.to_string(),
        Value::Cv(c, p) => format!("<cv {c}@{}>", order.name(*p)),
        Value::Mutex(m) => format!("<mutex {m}>"),
        Value::Ref(r) => format!("<ref {r}>"),
    }
}

pub fn type_text(order: &PriorityOrder, t: &Type) -> String {
    match t {
        Type::Unit => "unit".into(),
        Type::Nat => "nat".into(),
        Type::Ref(inner) => format!("ref<{}>", type_text(order, inner)),
        Type::Cv(c, p) => format!("cv[{c}]<{}>", order.name(*p)),
        Type::Mutex(p) => format!("mutex<{}>", order.name(*p)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(text: &str) {
        let a = parse_program(text).unwrap().program;
        let printed = pretty_print(&a);
        let b = parse_program(&printed).unwrap_or_else(|e| panic!("{e}\n{printed}")).program;
        assert_eq!(a.order, b.order);
        assert_eq!(a.body.erase_spans(), b.body.erase_spans(), "{printed}");
    }

    #[test]
    fn skip_program() {
        let p = parse_program("priorities L<H; skip").unwrap().program;
        assert_eq!(p.body.kind, StmtKind::Skip);
        assert_eq!(p.order.names(), ["L", "H"]);
        assert_eq!(print_stmt_text(&p.order, &p.body), "skip");
    }

    #[test]
    fn unbound_variable() {
        let e = parse_program("priorities L<H; let x = wait(y) in skip").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnboundVariable);
        assert_eq!((e.span.line, e.span.col), (1, 30));
    }

    #[test]
    fn unknown_priority() {
        let e = parse_program("priorities L<H;\nlet c = newcv<M> in skip").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownPriority);
        assert_eq!((e.span.line, e.span.col), (2, 15));
    }

    #[test]
    fn lexical_error() {
        let e = parse_program("priorities L; skip $").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Lexical);
        assert_eq!(e.span.col, 20);
    }

    #[test]
    fn syntax_error_message() {
        let e = parse_program("priorities L; let = 3 in skip").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        assert_eq!(e.to_string(), "1:19: expected an identifier, found `=`");
    }

    #[test]
    fn instruction_statements_bind_underscore() {
        let p = parse_program("priorities L; let c = newcv<L> in signal(c); wait(c)").unwrap().program;
        let StmtKind::Let(_, _, body) = p.body.kind else { panic!() };
        let StmtKind::Let(x, i, rest) = body.kind else { panic!() };
        assert_eq!(x, "_");
        assert!(matches!(i.kind, InstrKind::Signal(_)));
        assert!(matches!(rest.kind, StmtKind::Let(ref y, _, ref s) if y == "_" && s.kind == StmtKind::Skip));
    }

    #[test]
    fn spawn_permission_lists() {
        let p = parse_program(
            "priorities L < H; let c = newcv<L> in spawn<H>[c{H: owned, L: shared}, all(c)] { signal(c) }",
        )
        .unwrap()
        .program;
        let StmtKind::Let(_, _, body) = p.body.kind else { panic!() };
        let StmtKind::Let(_, i, _) = body.kind else { panic!() };
        let InstrKind::Spawn { prio, passed, .. } = i.kind else { panic!() };
        assert_eq!(prio, Priority(1));
        assert_eq!(
            passed,
            vec![
                PermArg::Levels(
                    Value::Var("c".into()),
                    vec![(Priority(1), PermissionLevel::Owned), (Priority(0), PermissionLevel::Shared)]
                ),
                PermArg::All(Value::Var("c".into())),
            ]
        );
    }

    #[test]
    fn roundtrips() {
        roundtrip("priorities L; skip");
        roundtrip("priorities L < H; let c = newcv<L> in { skip; skip }; skip");
        roundtrip("priorities L < H; { let x = 1 in skip }; if 0 { skip } else { skip; skip }");
        roundtrip(
            "priorities L < H; let m = newmutex<H> in let r = newref<ref<nat>>(()) in \
             with (m) { trywith (m) { r := 3 } else { let v = !r in skip } }; while 0 { }",
        );
        roundtrip("priorities A < B < C; let c = newcv<A> in spawn<C>[all(c)] { broadcast(c) }; let d = promote<C>(c) in wait(d)");
        roundtrip("priorities L; { { skip; skip }; skip }; skip");
    }
}
