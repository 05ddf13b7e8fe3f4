use crate::diag::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    /// Raw numeric literal text.
    Number(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Dot,
    Comma,
    Semi,
    Assign,
    /// `=` (unification, outside the supported subset)
    Unify,
    Colon,
    Cmp(super::ast::CmpOp),
    /// Arithmetic / set operators, comprehension bars and the like.
    Op(char),
    Newline,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(_) => "string".to_string(),
            Tok::Number(n) => format!("number `{n}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Assign => "`:=`".into(),
            Tok::Unify => "`=`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::Op(c) => format!("`{c}`"),
            Tok::Newline => "end of line".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

/// Tokenizes Rego source. Newlines inside `()` and `[]` are dropped so that
/// terms may span lines; newlines inside `{}` separate body expressions.
pub fn lex(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let mut nesting = 0usize;

    macro_rules! bump {
        () => {{
            let c = chars[i];
            i += 1;
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        match c {
            '\n' => {
                bump!();
                if nesting == 0 && !matches!(out.last(), Some(Token { tok: Tok::Newline, .. })) {
                    out.push(Token { tok: Tok::Newline, pos });
                }
            }
            c if c.is_whitespace() => {
                bump!();
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    bump!();
                }
            }
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    if i >= chars.len() || chars[i] == '\n' {
                        return Err(Diagnostic::error(pos, "unterminated string literal"));
                    }
                    let c = bump!();
                    match c {
                        '"' => break,
                        '\\' => {
                            if i >= chars.len() {
                                return Err(Diagnostic::error(pos, "unterminated string literal"));
                            }
                            let esc_pos = Pos { line, column: col };
                            let e = bump!();
                            match e {
                                '"' => s.push('"'),
                                '\\' => s.push('\\'),
                                '/' => s.push('/'),
                                'b' => s.push('\u{8}'),
                                'f' => s.push('\u{c}'),
                                'n' => s.push('\n'),
                                'r' => s.push('\r'),
                                't' => s.push('\t'),
                                'u' => {
                                    let mut code = 0u32;
                                    for _ in 0..4 {
                                        let d = if i < chars.len() { chars[i].to_digit(16) } else { None };
                                        match d {
                                            Some(d) => {
                                                bump!();
                                                code = code * 16 + d;
                                            }
                                            None => {
                                                return Err(Diagnostic::error(
                                                    esc_pos,
                                                    "invalid unicode escape",
                                                ))
                                            }
                                        }
                                    }
                                    match char::from_u32(code) {
                                        Some(ch) => s.push(ch),
                                        None => {
                                            return Err(Diagnostic::error(
                                                esc_pos,
                                                "invalid unicode escape",
                                            ))
                                        }
                                    }
                                }
                                other => {
                                    return Err(Diagnostic::error(
                                        esc_pos,
                                        format!("invalid escape sequence `\\{other}`"),
                                    ))
                                }
                            }
                        }
                        c => s.push(c),
                    }
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            '`' => {
                bump!();
                let mut s = String::new();
                loop {
                    if i >= chars.len() {
                        return Err(Diagnostic::error(pos, "unterminated raw string literal"));
                    }
                    let c = bump!();
                    if c == '`' {
                        break;
                    }
                    s.push(c);
                }
                out.push(Token { tok: Tok::Str(s), pos });
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    s.push(bump!());
                }
                if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                    s.push(bump!());
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        s.push(bump!());
                    }
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let save = (i, line, col, s.len());
                    s.push(bump!());
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        s.push(bump!());
                    }
                    if i < chars.len() && chars[i].is_ascii_digit() {
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            s.push(bump!());
                        }
                    } else {
                        i = save.0;
                        line = save.1;
                        col = save.2;
                        s.truncate(save.3);
                    }
                }
                out.push(Token { tok: Tok::Number(s), pos });
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    s.push(bump!());
                }
                out.push(Token { tok: Tok::Ident(s), pos });
            }
            _ => {
                bump!();
                let next = chars.get(i).copied();
                let tok = match (c, next) {
                    (':', Some('=')) => {
                        bump!();
                        Tok::Assign
                    }
                    ('=', Some('=')) => {
                        bump!();
                        Tok::Cmp(super::ast::CmpOp::Eq)
                    }
                    ('!', Some('=')) => {
                        bump!();
                        Tok::Cmp(super::ast::CmpOp::Ne)
                    }
                    ('<', Some('=')) => {
                        bump!();
                        Tok::Cmp(super::ast::CmpOp::Le)
                    }
                    ('>', Some('=')) => {
                        bump!();
                        Tok::Cmp(super::ast::CmpOp::Ge)
                    }
                    ('<', _) => Tok::Cmp(super::ast::CmpOp::Lt),
                    ('>', _) => Tok::Cmp(super::ast::CmpOp::Gt),
                    ('=', _) => Tok::Unify,
                    (':', _) => Tok::Colon,
                    ('{', _) => Tok::LBrace,
                    ('}', _) => Tok::RBrace,
                    ('[', _) => {
                        nesting += 1;
                        Tok::LBracket
                    }
                    (']', _) => {
                        nesting = nesting.saturating_sub(1);
                        Tok::RBracket
                    }
                    ('(', _) => {
                        nesting += 1;
                        Tok::LParen
                    }
                    (')', _) => {
                        nesting = nesting.saturating_sub(1);
                        Tok::RParen
                    }
                    ('.', _) => Tok::Dot,
                    (',', _) => Tok::Comma,
                    (';', _) => Tok::Semi,
                    ('+' | '-' | '*' | '/' | '%' | '&' | '|', _) => Tok::Op(c),
                    _ => {
                        return Err(Diagnostic::error(pos, format!("unexpected character `{c}`")));
                    }
                };
                out.push(Token { tok, pos });
            }
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column: col },
    });
    Ok(out)
}
