//! Mini-HCL: `resource "type" "name" { ... }` blocks holding literal
//! attributes and repeatable nested blocks. No expressions.

use std::fmt::Write;

use serde_json::{Number, Value};

use crate::diag::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    String(String),
    Number(Number),
    Bool(bool),
    List(Vec<AttrValue>),
}

impl AttrValue {
    pub fn to_json(&self) -> Value {
        match self {
            AttrValue::String(s) => Value::String(s.clone()),
            AttrValue::Number(n) => Value::Number(n.clone()),
            AttrValue::Bool(b) => Value::Bool(*b),
            AttrValue::List(items) => Value::Array(items.iter().map(AttrValue::to_json).collect()),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AttrValue::String(_) => "string",
            AttrValue::Number(_) => "number",
            AttrValue::Bool(_) => "bool",
            AttrValue::List(_) => "list",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BodyItem {
    Attribute { name: String, value: AttrValue },
    Block(NestedBlock),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockBody {
    pub items: Vec<BodyItem>,
}

impl BlockBody {
    pub fn attribute(&self, name: &str) -> Option<&AttrValue> {
        self.items.iter().find_map(|i| match i {
            BodyItem::Attribute { name: n, value } if n == name => Some(value),
            _ => None,
        })
    }

    pub fn blocks<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a NestedBlock> + 'a {
        self.items.iter().filter_map(move |i| match i {
            BodyItem::Block(b) if b.kind == kind => Some(b),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedBlock {
    pub kind: String,
    pub body: BlockBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceBlock {
    pub resource_type: String,
    pub name: String,
    pub body: BlockBody,
}

impl ResourceBlock {
    pub fn address(&self) -> String {
        format!("{}.{}", self.resource_type, self.name)
    }
}

#[derive(Debug, Clone)]
pub struct InfraFile {
    pub source: String,
    pub blocks: Vec<ResourceBlock>,
}

impl InfraFile {
    pub fn addresses(&self) -> Vec<String> {
        self.blocks.iter().map(ResourceBlock::address).collect()
    }

    pub fn same_structure(&self, other: &InfraFile) -> bool {
        self.blocks == other.blocks
    }
}

// ---- lexer ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Comma,
    Newline,
    /// Anything else that can start or continue an expression.
    Other(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Str(_) => "string".into(),
        Tok::Number(n) => format!("number {n}"),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Eq => "`=`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Newline => "end of line".into(),
        Tok::Other(c) => format!("`{c}`"),
        Tok::Eof => "end of file".into(),
    }
}

fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        match c {
            '\n' => {
                out.push(Token { tok: Tok::Newline, pos });
                bump!();
            }
            c if c.is_whitespace() => bump!(),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '/' if chars.get(i + 1) == Some(&'/') => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                bump!();
                bump!();
                loop {
                    if i >= chars.len() {
                        return Err(Diagnostic::error(pos, "unterminated block comment"));
                    }
                    if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                        bump!();
                        bump!();
                        break;
                    }
                    bump!();
                }
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(Diagnostic::error(pos, "unterminated string")),
                        Some('"') => {
                            bump!();
                            break;
                        }
                        Some('$') | Some('%') if chars.get(i + 1) == Some(&'{') => {
                            return Err(Diagnostic::error(
                                Pos { line, column: col },
                                "unsupported expression: string interpolation",
                            ));
                        }
                        Some('\\') => {
                            bump!();
                            let e = match chars.get(i) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                _ => {
                                    return Err(Diagnostic::error(
                                        Pos { line, column: col },
                                        "invalid escape in string",
                                    ))
                                }
                            };
                            s.push(e);
                            bump!();
                        }
                        Some(&ch) => {
                            s.push(ch);
                            bump!();
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                bump!();
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    bump!();
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    bump!();
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        bump!();
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                }
                out.push(Token { tok: Tok::Number(chars[start..i].iter().collect()), pos });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '-') {
                    bump!();
                }
                out.push(Token { tok: Tok::Ident(chars[start..i].iter().collect()), pos });
            }
            '{' | '}' | '[' | ']' | '=' | ',' => {
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '=' if chars.get(i + 1) == Some(&'=') => Tok::Other('='),
                    '=' => Tok::Eq,
                    _ => Tok::Comma,
                };
                out.push(Token { tok, pos });
                bump!();
            }
            other => {
                out.push(Token { tok: Tok::Other(other), pos });
                bump!();
            }
        }
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, column: col } });
    Ok(out)
}

// ---- parser ---------------------------------------------------------------

const OTHER_BLOCKS: [&str; 8] = ["variable", "provider", "module", "data", "output", "locals", "terraform", "moved"];

struct Parser {
    toks: Vec<Token>,
    at: usize,
    diags: Vec<Diagnostic>,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if t.tok != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn skip_newlines(&mut self) {
        while self.peek().tok == Tok::Newline {
            self.at += 1;
        }
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        let t = self.peek();
        Diagnostic::error(t.pos, format!("expected {wanted}, found {}", describe(&t.tok)))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> PResult<Token> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn label(&mut self) -> PResult<String> {
        match self.peek().tok.clone() {
            Tok::Str(s) if !s.is_empty() => {
                self.next();
                Ok(s)
            }
            _ => Err(self.unexpected("a quoted label")),
        }
    }

    /// Skips to just past the brace closing the block opened at `open`.
    /// Returns false when the file ends first.
    fn skip_block_from(&mut self, open: usize) -> bool {
        let mut depth = 0i64;
        self.at = open;
        loop {
            match self.next().tok {
                Tok::LBrace => depth += 1,
                Tok::RBrace => {
                    depth -= 1;
                    if depth == 0 {
                        return true;
                    }
                }
                Tok::Eof => return false,
                _ => {}
            }
        }
    }

    fn file(&mut self) -> Vec<ResourceBlock> {
        let mut blocks = Vec::new();
        loop {
            self.skip_newlines();
            let start = self.peek().clone();
            match &start.tok {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "resource" => {
                    self.next();
                    match self.resource() {
                        Ok(b) => blocks.push(b),
                        Err(d) => {
                            self.diags.push(d);
                            if !self.recover_top(start.pos) {
                                break;
                            }
                        }
                    }
                }
                Tok::Ident(kw) if OTHER_BLOCKS.contains(&kw.as_str()) => {
                    self.diags.push(Diagnostic::error(
                        start.pos,
                        format!("unsupported block `{kw}`: only resource blocks are accepted"),
                    ));
                    if !self.recover_top(start.pos) {
                        break;
                    }
                }
                _ => {
                    self.diags.push(self.unexpected("`resource` block"));
                    if !self.recover_top(start.pos) {
                        break;
                    }
                }
            }
        }
        blocks
    }

    /// After an error inside a top-level block, resume at the next line that
    /// starts at brace depth zero.
    fn recover_top(&mut self, block_pos: Pos) -> bool {
        let open = (0..self.toks.len()).find(|&k| self.toks[k].pos >= block_pos && self.toks[k].tok == Tok::LBrace);
        let Some(open) = open else {
            self.at = self.toks.len() - 1;
            return false;
        };
        let open_pos = self.toks[open].pos;
        if !self.skip_block_from(open) {
            if self.diags.last().is_some_and(|d| d.message.contains("never closed")) {
                return false;
            }
            self.diags.push(Diagnostic::error(open_pos, "unbalanced braces: `{` is never closed"));
            return false;
        }
        true
    }

    fn resource(&mut self) -> PResult<ResourceBlock> {
        let resource_type = self.label()?;
        let name = self.label()?;
        let open = self.expect(Tok::LBrace, "`{`")?;
        let body = self.body(open.pos)?;
        Ok(ResourceBlock { resource_type, name, body })
    }

    fn body(&mut self, open: Pos) -> PResult<BlockBody> {
        let mut body = BlockBody::default();
        loop {
            self.skip_newlines();
            let t = self.peek().clone();
            match t.tok {
                Tok::RBrace => {
                    self.next();
                    return Ok(body);
                }
                Tok::Eof => return Err(Diagnostic::error(open, "unbalanced braces: `{` is never closed")),
                Tok::Ident(name) => {
                    self.next();
                    match self.peek().tok.clone() {
                        Tok::Eq => {
                            self.next();
                            let value = self.value()?;
                            self.end_of_item()?;
                            if body.items.iter().any(|i| matches!(i, BodyItem::Attribute { name: n, .. } if *n == name)) {
                                return Err(Diagnostic::error(t.pos, format!("duplicate attribute `{name}`")));
                            }
                            body.items.push(BodyItem::Attribute { name, value });
                        }
                        Tok::LBrace => {
                            let open = self.next().pos;
                            let inner = self.body(open)?;
                            self.end_of_item()?;
                            body.items.push(BodyItem::Block(NestedBlock { kind: name, body: inner }));
                        }
                        Tok::Str(_) => {
                            return Err(Diagnostic::error(
                                t.pos,
                                format!("unsupported construct: labeled nested block `{name}`"),
                            ))
                        }
                        _ => return Err(self.unexpected("`=` or `{`")),
                    }
                }
                _ => return Err(self.unexpected("attribute or nested block")),
            }
        }
    }

    /// An item ends at a newline or just before the closing brace.
    fn end_of_item(&mut self) -> PResult<()> {
        match self.peek().tok {
            Tok::Newline => {
                self.next();
                Ok(())
            }
            Tok::RBrace | Tok::Eof => Ok(()),
            Tok::Other(_) | Tok::LBracket | Tok::Ident(_) => {
                Err(Diagnostic::error(self.peek().pos, "unsupported expression: only literal values are accepted"))
            }
            _ => Err(self.unexpected("end of line")),
        }
    }

    fn value(&mut self) -> PResult<AttrValue> {
        let t = self.next();
        match t.tok {
            Tok::Str(s) => Ok(AttrValue::String(s)),
            Tok::Number(raw) => number(&raw).map(AttrValue::Number).ok_or_else(|| {
                Diagnostic::error(t.pos, format!("invalid number `{raw}`"))
            }),
            Tok::Ident(id) if id == "true" => Ok(AttrValue::Bool(true)),
            Tok::Ident(id) if id == "false" => Ok(AttrValue::Bool(false)),
            Tok::Ident(id) if id == "null" => Err(Diagnostic::error(t.pos, "unsupported expression `null`")),
            Tok::Ident(id) => {
                let mut text = id;
                while let Tok::Other('.') = self.peek().tok {
                    self.next();
                    if let Tok::Ident(more) = self.peek().tok.clone() {
                        self.next();
                        text.push('.');
                        text.push_str(&more);
                    }
                }
                Err(Diagnostic::error(t.pos, format!("unsupported expression `{text}`: references are not allowed")))
            }
            Tok::LBracket => self.list(t.pos),
            Tok::LBrace => Err(Diagnostic::error(t.pos, "unsupported expression: object values")),
            Tok::Other('<') => Err(Diagnostic::error(t.pos, "unsupported expression: heredoc")),
            other => Err(Diagnostic::error(t.pos, format!("expected a literal value, found {}", describe(&other)))),
        }
    }

    fn list(&mut self, open: Pos) -> PResult<AttrValue> {
        let mut items: Vec<AttrValue> = Vec::new();
        loop {
            self.skip_newlines();
            if self.peek().tok == Tok::RBracket {
                self.next();
                break;
            }
            let pos = self.peek().pos;
            let v = self.value()?;
            if matches!(v, AttrValue::List(_)) {
                return Err(Diagnostic::error(pos, "unsupported expression: nested lists"));
            }
            if let Some(first) = items.first() {
                if first.kind() != v.kind() {
                    return Err(Diagnostic::error(
                        pos,
                        format!("list elements must share one type: {} then {}", first.kind(), v.kind()),
                    ));
                }
            }
            items.push(v);
            self.skip_newlines();
            match self.peek().tok {
                Tok::Comma => {
                    self.next();
                }
                Tok::RBracket => {}
                Tok::Eof => return Err(Diagnostic::error(open, "unbalanced brackets: `[` is never closed")),
                _ => return Err(self.unexpected("`,` or `]`")),
            }
        }
        Ok(AttrValue::List(items))
    }
}

/// Integers stay integers; anything else becomes a 64-bit float.
fn number(raw: &str) -> Option<Number> {
    if let Ok(i) = raw.parse::<i64>() {
        return Some(Number::from(i));
    }
    raw.parse::<f64>().ok().and_then(Number::from_f64)
}

/// Parses a `.tf` file of the supported subset. All diagnostics found are
/// returned; parsing recovers at top-level block boundaries.
pub fn parse_hcl_mini(source: &str) -> Result<InfraFile, Vec<Diagnostic>> {
    let toks = lex(source).map_err(|d| vec![d])?;
    let mut p = Parser { toks, at: 0, diags: Vec::new() };
    let blocks = p.file();
    if p.diags.is_empty() {
        Ok(InfraFile { source: source.to_string(), blocks })
    } else {
        Err(p.diags)
    }
}

// ---- printer --------------------------------------------------------------

fn print_value(v: &AttrValue) -> String {
    match v {
        AttrValue::String(s) => serde_json::to_string(s).expect("string serialization"),
        AttrValue::Number(n) => n.to_string(),
        AttrValue::Bool(b) => b.to_string(),
        AttrValue::List(items) => {
            let inner: Vec<String> = items.iter().map(print_value).collect();
            format!("[{}]", inner.join(", "))
        }
    }
}

fn print_body(out: &mut String, body: &BlockBody, depth: usize) {
    let pad = "  ".repeat(depth);
    let mut k = 0;
    while k < body.items.len() {
        match &body.items[k] {
            BodyItem::Attribute { .. } => {
                // align `=` across a run of attributes, as terraform fmt does
                let run_end = body.items[k..]
                    .iter()
                    .position(|i| !matches!(i, BodyItem::Attribute { .. }))
                    .map_or(body.items.len(), |p| k + p);
                let width = body.items[k..run_end]
                    .iter()
                    .map(|i| match i {
                        BodyItem::Attribute { name, .. } => name.chars().count(),
                        BodyItem::Block(_) => 0,
                    })
                    .max()
                    .unwrap_or(0);
                for item in &body.items[k..run_end] {
                    if let BodyItem::Attribute { name, value } = item {
                        let _ = writeln!(out, "{pad}{name:<width$} = {}", print_value(value));
                    }
                }
                k = run_end;
            }
            BodyItem::Block(b) => {
                let _ = writeln!(out, "{pad}{} {{", b.kind);
                print_body(out, &b.body, depth + 1);
                let _ = writeln!(out, "{pad}}}");
                k += 1;
            }
        }
    }
}

/// Canonical source for a list of resource blocks.
pub fn print_hcl(blocks: &[ResourceBlock]) -> String {
    let mut out = String::new();
    for (k, b) in blocks.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "resource {:?} {:?} {{", b.resource_type, b.name);
        print_body(&mut out, &b.body, 1);
        out.push_str("}\n");
    }
    out
}
