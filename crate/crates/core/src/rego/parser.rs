//! Recursive-descent parser for the supported Rego subset.
//!
//! The grammar accepted here is deliberately small: a package clause,
//! `rego.v1` / `future.keywords` imports, and partial-set rules of the form
//! `name[term] if { ... }` or `name contains term if { ... }`. Everything else
//! that is valid Rego produces an explicit "unsupported" diagnostic instead of
//! being silently ignored.
//!
//! Variable safety is checked while parsing: expressions are processed in
//! source order and every variable must be bound (by `:=` or by appearing as a
//! reference index) before it is used.

use std::collections::HashSet;

use serde_json::Number;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use crate::diag::{Diagnostic, Pos};

const KEYWORDS: &[&str] = &[
    "package", "import", "if", "contains", "not", "some", "every", "default", "with", "as",
    "else", "in",
];

fn unsupported(pos: Pos, what: impl AsRef<str>) -> Diagnostic {
    Diagnostic::error(pos, format!("unsupported construct: {}", what.as_ref()))
}

/// A variable occurrence inside a term, in source order.
#[derive(Debug, Clone)]
struct Occurrence {
    name: String,
    pos: Pos,
    /// Index positions (`x[i]`) bind an unbound variable by iteration.
    binds: bool,
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    depth: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let j = (self.i + off).min(self.toks.len() - 1);
        &self.toks[j].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        match t.tok {
            Tok::LBrace => self.depth += 1,
            Tok::RBrace => self.depth = self.depth.saturating_sub(1),
            _ => {}
        }
        if self.i < self.toks.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> Diagnostic {
        Diagnostic::error(
            self.pos(),
            format!("unexpected {}, expected {}", self.peek().describe(), expected),
        )
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> PResult<Token> {
        if *self.peek() == tok {
            Ok(self.advance())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Tok::Newline | Tok::Semi) {
            self.advance();
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Tok::Newline) {
            self.advance();
        }
    }

    fn is_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == word)
    }

    fn dotted_path(&mut self) -> PResult<Vec<String>> {
        let mut path = Vec::new();
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                path.push(s);
            }
            _ => return Err(self.unexpected("identifier")),
        }
        while *self.peek() == Tok::Dot {
            self.advance();
            match self.peek().clone() {
                Tok::Ident(s) => {
                    self.advance();
                    path.push(s);
                }
                _ => return Err(self.unexpected("identifier")),
            }
        }
        Ok(path)
    }

    fn end_of_line(&mut self) -> PResult<()> {
        match self.peek() {
            Tok::Newline | Tok::Semi => {
                self.advance();
                Ok(())
            }
            Tok::Eof => Ok(()),
            _ => Err(self.unexpected("end of line")),
        }
    }

    /// Skips to the start of the next plausible rule after an error.
    fn recover(&mut self) {
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::Newline if self.depth == 0 => {
                    self.advance();
                    if matches!(self.peek(), Tok::Ident(_) | Tok::Eof) {
                        return;
                    }
                }
                _ => {
                    self.advance();
                }
            }
        }
    }

    fn module(&mut self, source: &str) -> Result<PolicyDocument, Vec<Diagnostic>> {
        self.skip_newlines();
        if *self.peek() == Tok::Eof {
            return Err(vec![Diagnostic::error(self.pos(), "missing package declaration")]);
        }
        if !self.is_ident("package") {
            return Err(vec![Diagnostic::error(
                self.pos(),
                format!(
                    "missing package declaration (found {})",
                    self.peek().describe()
                ),
            )]);
        }
        self.advance();
        let package_name = match self.dotted_path().and_then(|p| {
            self.end_of_line()?;
            Ok(p)
        }) {
            Ok(p) => p,
            Err(d) => return Err(vec![d]),
        };
        if package_name.first().map(String::as_str) == Some("data") {
            // `package data.x` is rejected by OPA as well
            return Err(vec![Diagnostic::error(
                Pos::start(),
                "package path must not start with `data`",
            )]);
        }

        let mut diags = Vec::new();
        let mut imports = Vec::new();
        let mut rules = Vec::new();
        loop {
            self.skip_separators();
            if *self.peek() == Tok::Eof {
                break;
            }
            if self.is_ident("import") {
                let pos = self.pos();
                if !rules.is_empty() {
                    diags.push(Diagnostic::error(pos, "imports must precede rules"));
                    self.recover();
                    continue;
                }
                self.advance();
                match self.import(pos) {
                    Ok(p) => imports.push(p),
                    Err(d) => {
                        diags.push(d);
                        self.recover();
                    }
                }
                continue;
            }
            match self.rule() {
                Ok(r) => rules.push(r),
                Err(d) => {
                    diags.push(d);
                    self.recover();
                }
            }
        }
        if diags.is_empty() {
            Ok(PolicyDocument {
                source: source.to_string(),
                package_name,
                imports,
                rules,
            })
        } else {
            Err(diags)
        }
    }

    fn import(&mut self, pos: Pos) -> PResult<Vec<String>> {
        let path = self.dotted_path()?;
        let ok = match path.first().map(String::as_str) {
            Some("rego") => path.len() == 2 && path[1] == "v1",
            Some("future") => path.len() <= 3 && path.get(1).map(String::as_str) == Some("keywords"),
            _ => false,
        };
        if !ok {
            return Err(unsupported(
                pos,
                format!("import of `{}` (only `rego.v1` and `future.keywords` are accepted)", path.join(".")),
            ));
        }
        if self.is_ident("as") {
            return Err(unsupported(self.pos(), "import aliases"));
        }
        self.end_of_line()?;
        Ok(path)
    }

    fn rule(&mut self) -> PResult<DenyRule> {
        let start = self.pos();
        let head_name = match self.peek().clone() {
            Tok::Ident(s) if s == "default" => return Err(unsupported(start, "default rules")),
            Tok::Ident(s) if KEYWORDS.contains(&s.as_str()) => {
                return Err(self.unexpected("rule definition"))
            }
            Tok::Ident(s) => {
                self.advance();
                s
            }
            _ => return Err(self.unexpected("rule definition")),
        };

        let mut head_occs = Vec::new();
        let (head_form, message) = match self.peek().clone() {
            Tok::LBracket => {
                self.advance();
                let t = self.head_term(&mut head_occs)?;
                self.expect(Tok::RBracket, "`]`")?;
                (HeadForm::Bracket, t)
            }
            Tok::Ident(s) if s == "contains" => {
                self.advance();
                (HeadForm::Contains, self.head_term(&mut head_occs)?)
            }
            Tok::Ident(s) if s == "if" => {
                return Err(unsupported(
                    self.pos(),
                    "complete rules (only partial-set rules `name[term] if { ... }` or `name contains term if { ... }` are supported)",
                ))
            }
            Tok::LBrace | Tok::Assign | Tok::Unify => {
                return Err(unsupported(
                    self.pos(),
                    "complete rules (only partial-set rules `name[term] if { ... }` or `name contains term if { ... }` are supported)",
                ))
            }
            Tok::LParen => return Err(unsupported(self.pos(), "user-defined functions")),
            Tok::Dot => return Err(unsupported(self.pos(), "dotted rule heads")),
            _ => return Err(self.unexpected("`[` or `contains` after rule name")),
        };

        if *self.peek() == Tok::LBrace {
            return Err(unsupported(
                self.pos(),
                "rule body without the `if` keyword (legacy syntax); write `if {`",
            ));
        }
        if !self.is_ident("if") {
            return Err(self.unexpected("`if`"));
        }
        self.advance();
        if *self.peek() != Tok::LBrace {
            return Err(unsupported(self.pos(), "single-expression rule bodies; use `if { ... }`"));
        }
        self.advance();

        let mut bound: HashSet<String> = HashSet::new();
        let mut body = Vec::new();
        self.skip_separators();
        while *self.peek() != Tok::RBrace {
            if *self.peek() == Tok::Eof {
                return Err(Diagnostic::error(self.pos(), "unexpected end of input, expected `}`"));
            }
            body.push(self.body_expr(&mut bound)?);
            match self.peek() {
                Tok::Newline | Tok::Semi => self.skip_separators(),
                Tok::RBrace => {}
                Tok::Op(c) => return Err(unsupported(self.pos(), format!("operator `{c}`"))),
                Tok::Ident(s) if s == "with" => return Err(unsupported(self.pos(), "`with` modifiers")),
                Tok::Ident(s) if s == "in" => {
                    return Err(unsupported(self.pos(), "membership operator `in`"))
                }
                _ => return Err(self.unexpected("end of expression")),
            }
        }
        if body.is_empty() {
            return Err(Diagnostic::error(self.pos(), "rule body must not be empty"));
        }
        self.advance();

        match self.peek() {
            Tok::Ident(s) if s == "else" => return Err(unsupported(self.pos(), "`else` clauses")),
            Tok::LBrace => return Err(unsupported(self.pos(), "multiple rule bodies")),
            Tok::Newline | Tok::Semi | Tok::Eof => {}
            _ => return Err(self.unexpected("end of rule")),
        }

        for occ in head_occs {
            if !bound.contains(&occ.name) {
                return Err(Diagnostic::error(
                    occ.pos,
                    format!("unbound message variable `{}`", occ.name),
                ));
            }
        }

        Ok(DenyRule {
            head_name,
            head_form,
            message,
            body,
        })
    }

    fn head_term(&mut self, occs: &mut Vec<Occurrence>) -> PResult<Term> {
        let pos = self.pos();
        let t = self.term(occs)?;
        match &t {
            Term::Scalar(Scalar::String(_) | Scalar::Number(_)) => Ok(t),
            _ if t.as_var().is_some() => {
                if t.as_var() == Some("_") {
                    return Err(unsupported(pos, "wildcard `_` as rule head term"));
                }
                Ok(t)
            }
            _ => Err(unsupported(pos, "rule head term must be a variable or a string/number literal")),
        }
    }

    fn body_expr(&mut self, bound: &mut HashSet<String>) -> PResult<Expr> {
        let pos = self.pos();
        match self.peek() {
            Tok::Ident(s) if s == "some" => return Err(unsupported(pos, "`some` declarations")),
            Tok::Ident(s) if s == "every" => return Err(unsupported(pos, "`every` quantifiers")),
            Tok::Ident(s) if s == "not" => {
                self.advance();
                if self.is_ident("not") {
                    return Err(unsupported(self.pos(), "nested negation"));
                }
                let mut occs = Vec::new();
                let inner = self.simple_expr(&mut occs, false)?;
                let mut scoped = bound.clone();
                apply_occurrences(&occs, &mut scoped)?;
                return Ok(Expr::Not(Box::new(inner)));
            }
            _ => {}
        }
        let mut occs = Vec::new();
        let expr = self.simple_expr(&mut occs, true)?;
        apply_occurrences(&occs, bound)?;
        if let Expr::Assign { var, .. } = &expr {
            if bound.contains(var) {
                return Err(Diagnostic::error(pos, format!("variable `{var}` is assigned more than once")));
            }
            bound.insert(var.clone());
        }
        Ok(expr)
    }

    fn simple_expr(&mut self, occs: &mut Vec<Occurrence>, allow_assign: bool) -> PResult<Expr> {
        let start = self.pos();
        if *self.peek() == Tok::Assign {
            return Err(self.unexpected("term"));
        }
        // Assignment targets are not occurrences of a use.
        let mut lhs_occs = Vec::new();
        let left = self.term(&mut lhs_occs)?;
        match self.peek().clone() {
            Tok::Assign => {
                if !allow_assign {
                    return Err(unsupported(start, "assignment inside `not`"));
                }
                let var = match left.as_var() {
                    Some("_") => return Err(unsupported(start, "assignment to `_`")),
                    Some(v) => v.to_string(),
                    None => {
                        if matches!(&left, Term::Ref(Ref { head: RefHead::Input, path }) if path.is_empty()) {
                            return Err(Diagnostic::error(start, "cannot assign to `input`"));
                        }
                        return Err(unsupported(start, "destructuring assignment (left side of `:=` must be a variable)"));
                    }
                };
                self.advance();
                let value = self.term(occs)?;
                Ok(Expr::Assign { var, value })
            }
            Tok::Unify => Err(unsupported(self.pos(), "unification `=` (use `:=` or `==`)")),
            Tok::Cmp(op) => {
                occs.extend(lhs_occs);
                self.advance();
                let right = self.term(occs)?;
                if let Tok::Cmp(_) = self.peek() {
                    return Err(unsupported(self.pos(), "chained comparisons"));
                }
                Ok(Expr::Compare { op, left, right })
            }
            Tok::Ident(s) if s == "with" => Err(unsupported(self.pos(), "`with` modifiers")),
            Tok::Ident(s) if s == "in" => Err(unsupported(self.pos(), "membership operator `in`")),
            Tok::Op(c) => Err(unsupported(self.pos(), format!("operator `{c}`"))),
            _ => {
                occs.extend(lhs_occs);
                Ok(Expr::Truthy(left))
            }
        }
    }

    fn term(&mut self, occs: &mut Vec<Occurrence>) -> PResult<Term> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(Term::Scalar(Scalar::String(s)))
            }
            Tok::Number(n) => {
                self.advance();
                Ok(Term::Scalar(Scalar::Number(parse_number(&n, false, pos)?)))
            }
            Tok::Op('-') if matches!(self.peek_at(1), Tok::Number(_)) => {
                self.advance();
                let Tok::Number(n) = self.advance().tok else { unreachable!() };
                Ok(Term::Scalar(Scalar::Number(parse_number(&n, true, pos)?)))
            }
            Tok::LBracket => {
                self.advance();
                let mut items = Vec::new();
                while *self.peek() != Tok::RBracket {
                    items.push(self.term(occs)?);
                    match self.peek() {
                        Tok::Comma => {
                            self.advance();
                        }
                        Tok::RBracket => {}
                        Tok::Op('|') => return Err(unsupported(self.pos(), "array comprehensions")),
                        _ => return Err(self.unexpected("`,` or `]`")),
                    }
                }
                self.advance();
                Ok(Term::Array(items))
            }
            Tok::LBrace => Err(unsupported(pos, "set and object literals")),
            Tok::LParen => Err(unsupported(pos, "parenthesized expressions")),
            Tok::Ident(name) => self.ref_or_call(name, occs),
            _ => Err(self.unexpected("term")),
        }
    }

    fn ref_or_call(&mut self, name: String, occs: &mut Vec<Occurrence>) -> PResult<Term> {
        let pos = self.pos();
        match name.as_str() {
            "true" | "false" => {
                self.advance();
                return Ok(Term::Scalar(Scalar::Bool(name == "true")));
            }
            "null" => {
                self.advance();
                return Ok(Term::Scalar(Scalar::Null));
            }
            "data" => return Err(unsupported(pos, "references rooted at `data`")),
            "_" => return Err(unsupported(pos, "wildcard `_` outside a reference index")),
            "contains" if *self.peek_at(1) == Tok::LParen => {}
            n if KEYWORDS.contains(&n) => return Err(self.unexpected("term")),
            _ => {}
        }
        self.advance();
        let head = if name == "input" {
            RefHead::Input
        } else {
            RefHead::Var(name.clone())
        };
        let mut path = Vec::new();
        let mut local = Vec::new();
        loop {
            match self.peek().clone() {
                Tok::Dot => {
                    self.advance();
                    match self.peek().clone() {
                        Tok::Ident(f) => {
                            self.advance();
                            path.push(Segment::Field(f));
                        }
                        _ => return Err(self.unexpected("field name")),
                    }
                }
                Tok::LBracket => {
                    self.advance();
                    let ipos = self.pos();
                    let seg = match self.peek().clone() {
                        Tok::Ident(v) if v == "_" => Segment::Wildcard,
                        Tok::Ident(v)
                            if !KEYWORDS.contains(&v.as_str())
                                && !matches!(v.as_str(), "input" | "data" | "true" | "false" | "null") =>
                        {
                            if *self.peek_at(1) != Tok::RBracket {
                                return Err(unsupported(
                                    ipos,
                                    "reference index must be `_`, a variable, or a string/number literal",
                                ));
                            }
                            local.push(Occurrence {
                                name: v.clone(),
                                pos: ipos,
                                binds: true,
                            });
                            Segment::Var(v)
                        }
                        Tok::Str(s) => Segment::Key(Scalar::String(s)),
                        Tok::Number(n) => Segment::Key(Scalar::Number(parse_number(&n, false, ipos)?)),
                        _ => {
                            return Err(unsupported(
                                ipos,
                                "reference index must be `_`, a variable, or a string/number literal",
                            ))
                        }
                    };
                    self.advance();
                    self.expect(Tok::RBracket, "`]`")?;
                    path.push(seg);
                }
                Tok::LParen => {
                    let mut fname = name.clone();
                    for seg in &path {
                        match seg {
                            Segment::Field(f) => {
                                fname.push('.');
                                fname.push_str(f);
                            }
                            _ => return Err(unsupported(pos, "call on a computed reference")),
                        }
                    }
                    let func = match (path.is_empty(), Builtin::from_name(&fname)) {
                        (true, Some(b)) => b,
                        _ => {
                            return Err(unsupported(
                                pos,
                                format!("builtin `{fname}` (only `count` and `contains` are available)"),
                            ))
                        }
                    };
                    self.advance();
                    let mut args = Vec::new();
                    while *self.peek() != Tok::RParen {
                        args.push(self.term(occs)?);
                        match self.peek() {
                            Tok::Comma => {
                                self.advance();
                            }
                            Tok::RParen => {}
                            _ => return Err(self.unexpected("`,` or `)`")),
                        }
                    }
                    self.advance();
                    if args.len() != func.arity() {
                        return Err(Diagnostic::error(
                            pos,
                            format!(
                                "`{}` expects {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        ));
                    }
                    if matches!(self.peek(), Tok::Dot | Tok::LBracket) {
                        return Err(unsupported(self.pos(), "reference into a call result"));
                    }
                    return Ok(Term::Call { func, args });
                }
                _ => break,
            }
        }
        if let RefHead::Var(v) = &head {
            occs.push(Occurrence {
                name: v.clone(),
                pos,
                binds: false,
            });
        }
        occs.extend(local);
        Ok(Term::Ref(Ref { head, path }))
    }
}

fn parse_number(text: &str, negative: bool, pos: Pos) -> PResult<Number> {
    let signed = if negative { format!("-{text}") } else { text.to_string() };
    let integral = !text.contains(['.', 'e', 'E']);
    if integral {
        if let Ok(i) = signed.parse::<i64>() {
            return Ok(Number::from(i));
        }
        if let Ok(u) = signed.parse::<u64>() {
            return Ok(Number::from(u));
        }
    }
    signed
        .parse::<f64>()
        .ok()
        .and_then(Number::from_f64)
        .ok_or_else(|| Diagnostic::error(pos, format!("invalid number `{signed}`")))
}

fn apply_occurrences(occs: &[Occurrence], bound: &mut HashSet<String>) -> PResult<()> {
    for occ in occs {
        if bound.contains(&occ.name) {
            continue;
        }
        if occ.binds {
            bound.insert(occ.name.clone());
        } else {
            return Err(Diagnostic::error(
                occ.pos,
                format!("variable `{}` is unsafe: it is not bound by an earlier expression", occ.name),
            ));
        }
    }
    Ok(())
}

/// Parses a policy module. On failure returns every diagnostic found; rules
/// after a broken rule are still checked.
pub fn parse_policy(source: &str) -> Result<PolicyDocument, Vec<Diagnostic>> {
    let toks = lex(source).map_err(|d| vec![d])?;
    let mut p = Parser { toks, i: 0, depth: 0 };
    p.module(source)
}

/// Syntax-only check: empty iff [`parse_policy`] succeeds.
pub fn check_syntax(source: &str) -> Vec<Diagnostic> {
    match parse_policy(source) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}
