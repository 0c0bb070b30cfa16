//! Hand-rolled lexer for `.pact` source.
//!
//! Newlines are significant (they terminate statements) and are emitted as
//! tokens; consecutive newlines collapse to one. Comments `(* ... *)` nest.

use crate::ast::SourceSpan;
use crate::parser::Diagnostic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Int,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Colon,
    At,
    Dot,
    Assign,
    LeftArrow,
    Plus,
    Minus,
    Star,
    EqEq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Newline,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub span: SourceSpan,
}

pub fn lex(src: &str, file: &str) -> (Vec<Token>, Vec<Diagnostic>) {
    let mut tokens = Vec::new();
    let mut diags = Vec::new();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0usize;

    let push = |kind: TokenKind, text: String, line: u32, col: u32, tokens: &mut Vec<Token>| {
        let length = text.chars().count() as u32;
        tokens.push(Token {
            kind,
            text,
            span: SourceSpan::new(file, line, col, length.max(1)),
        });
    };

    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                if !matches!(
                    tokens.last().map(|t: &Token| t.kind),
                    Some(TokenKind::Newline) | None
                ) {
                    push(TokenKind::Newline, "\n".into(), line, col, &mut tokens);
                }
                line += 1;
                col = 1;
                i += 1;
            }
            ' ' | '\t' | '\r' => {
                col += 1;
                i += 1;
            }
            '(' if i + 1 < chars.len() && chars[i + 1] == '*' => {
                // nested comment
                let (start_line, start_col) = (line, col);
                let mut depth = 1;
                i += 2;
                col += 2;
                while i < chars.len() && depth > 0 {
                    if chars[i] == '(' && i + 1 < chars.len() && chars[i + 1] == '*' {
                        depth += 1;
                        i += 2;
                        col += 2;
                    } else if chars[i] == '*' && i + 1 < chars.len() && chars[i + 1] == ')' {
                        depth -= 1;
                        i += 2;
                        col += 2;
                    } else if chars[i] == '\n' {
                        line += 1;
                        col = 1;
                        i += 1;
                    } else {
                        col += 1;
                        i += 1;
                    }
                }
                if depth > 0 {
                    diags.push(Diagnostic::error(
                        "P001",
                        "unterminated comment",
                        SourceSpan::new(file, start_line, start_col, 2),
                    ));
                }
            }
            '(' => {
                push(TokenKind::LParen, "(".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            ')' => {
                push(TokenKind::RParen, ")".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '{' => {
                push(TokenKind::LBrace, "{".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '}' => {
                push(TokenKind::RBrace, "}".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            ',' => {
                push(TokenKind::Comma, ",".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            ':' => {
                push(TokenKind::Colon, ":".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '@' => {
                push(TokenKind::At, "@".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '.' => {
                push(TokenKind::Dot, ".".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '+' => {
                push(TokenKind::Plus, "+".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '*' => {
                push(TokenKind::Star, "*".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '-' => {
                push(TokenKind::Minus, "-".into(), line, col, &mut tokens);
                col += 1;
                i += 1;
            }
            '<' => {
                if i + 1 < chars.len() && chars[i + 1] == '-' {
                    push(TokenKind::LeftArrow, "<-".into(), line, col, &mut tokens);
                    col += 2;
                    i += 2;
                } else if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokenKind::Le, "<=".into(), line, col, &mut tokens);
                    col += 2;
                    i += 2;
                } else {
                    push(TokenKind::Lt, "<".into(), line, col, &mut tokens);
                    col += 1;
                    i += 1;
                }
            }
            '>' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokenKind::Ge, ">=".into(), line, col, &mut tokens);
                    col += 2;
                    i += 2;
                } else {
                    push(TokenKind::Gt, ">".into(), line, col, &mut tokens);
                    col += 1;
                    i += 1;
                }
            }
            '=' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push(TokenKind::EqEq, "==".into(), line, col, &mut tokens);
                    col += 2;
                    i += 2;
                } else {
                    push(TokenKind::Assign, "=".into(), line, col, &mut tokens);
                    col += 1;
                    i += 1;
                }
            }
            '!' if i + 1 < chars.len() && chars[i + 1] == '=' => {
                push(TokenKind::Ne, "!=".into(), line, col, &mut tokens);
                col += 2;
                i += 2;
            }
            c if c.is_ascii_digit() => {
                let start_col = col;
                let mut text = String::new();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    text.push(chars[i]);
                    i += 1;
                    col += 1;
                }
                push(TokenKind::Int, text, line, start_col, &mut tokens);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start_col = col;
                let mut text = String::new();
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    text.push(chars[i]);
                    i += 1;
                    col += 1;
                }
                push(TokenKind::Ident, text, line, start_col, &mut tokens);
            }
            other => {
                diags.push(Diagnostic::error(
                    "P002",
                    format!("unexpected character `{other}`"),
                    SourceSpan::new(file, line, col, 1),
                ));
                col += 1;
                i += 1;
            }
        }
    }
    // trailing newline token so the last statement is terminated
    if !matches!(tokens.last().map(|t| t.kind), Some(TokenKind::Newline)) {
        tokens.push(Token {
            kind: TokenKind::Newline,
            text: "\n".into(),
            span: SourceSpan::new(file, line, col, 1),
        });
    }
    tokens.push(Token {
        kind: TokenKind::Eof,
        text: String::new(),
        span: SourceSpan::new(file, line, col, 1),
    });
    (tokens, diags)
}
