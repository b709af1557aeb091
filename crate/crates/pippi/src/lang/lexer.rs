//! Tokenizer for protocol source text.
//!
//! Line and column positions are tracked for diagnostics and for the two
//! places where layout matters: shared-adornment distribution stops at line
//! ends, and a line break may stand in for a clause separator.

use super::SyntaxError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    /// A name segment, keyword, or numeric literal (classified by the parser).
    Word(String),
    /// A double-quoted string literal, unescaped.
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Semicolon,
    Arrow,
    Eq,
    Lt,
    Gt,
    SubsetEq,
    ElementOf,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semicolon => "`;`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Gt => "`>`".into(),
            Tok::SubsetEq => "`\u{2286}`".into(),
            Tok::ElementOf => "`\u{2208}`".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub col: u32,
    /// True when no whitespace separates this token from the previous one.
    pub glued: bool,
}

fn is_word_char(c: char) -> bool {
    !c.is_whitespace() && !"()[]{}:;,\"=<>\u{2286}\u{2208}".contains(c)
}

pub fn lex(text: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line: u32 = 1;
    let mut col: u32 = 1;
    let mut gap = true;

    macro_rules! push {
        ($tok:expr, $l:expr, $c:expr) => {{
            tokens.push(Token {
                tok: $tok,
                line: $l,
                col: $c,
                glued: !gap,
            });
            gap = false;
        }};
    }

    while let Some(&c) = chars.peek() {
        if c == '\n' {
            chars.next();
            line += 1;
            col = 1;
            gap = true;
            continue;
        }
        if c.is_whitespace() {
            chars.next();
            col += 1;
            gap = true;
            continue;
        }
        if c == '/' {
            // `//` opens a comment unless it is glued to a `:` (IRI scheme
            // separator, as in `http://...`).
            let after_colon =
                !gap && matches!(tokens.last().map(|t: &Token| &t.tok), Some(Tok::Colon));
            let mut look = chars.clone();
            look.next();
            if look.peek() == Some(&'/') && !after_colon {
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        col = 1;
                        gap = true;
                        break;
                    }
                }
                continue;
            }
        }
        let (l, start_col) = (line, col);
        match c {
            '(' => {
                chars.next();
                col += 1;
                push!(Tok::LParen, l, start_col);
            }
            ')' => {
                chars.next();
                col += 1;
                push!(Tok::RParen, l, start_col);
            }
            '[' => {
                chars.next();
                col += 1;
                push!(Tok::LBracket, l, start_col);
            }
            ']' => {
                chars.next();
                col += 1;
                push!(Tok::RBracket, l, start_col);
            }
            '{' => {
                chars.next();
                col += 1;
                push!(Tok::LBrace, l, start_col);
            }
            '}' => {
                chars.next();
                col += 1;
                push!(Tok::RBrace, l, start_col);
            }
            ',' => {
                chars.next();
                col += 1;
                push!(Tok::Comma, l, start_col);
            }
            ':' => {
                chars.next();
                col += 1;
                push!(Tok::Colon, l, start_col);
            }
            ';' => {
                chars.next();
                col += 1;
                push!(Tok::Semicolon, l, start_col);
            }
            '=' => {
                chars.next();
                col += 1;
                push!(Tok::Eq, l, start_col);
            }
            '<' => {
                chars.next();
                col += 1;
                push!(Tok::Lt, l, start_col);
            }
            '>' => {
                chars.next();
                col += 1;
                push!(Tok::Gt, l, start_col);
            }
            '\u{2286}' => {
                chars.next();
                col += 1;
                push!(Tok::SubsetEq, l, start_col);
            }
            '\u{2208}' => {
                chars.next();
                col += 1;
                push!(Tok::ElementOf, l, start_col);
            }
            '"' => {
                chars.next();
                col += 1;
                let mut s = String::new();
                let mut closed = false;
                while let Some(c) = chars.next() {
                    col += 1;
                    match c {
                        '"' => {
                            closed = true;
                            break;
                        }
                        '\n' => {
                            return Err(SyntaxError::new(l, start_col, "unterminated string"));
                        }
                        '\\' => {
                            if let Some(esc) = chars.next() {
                                col += 1;
                                s.push(match esc {
                                    'n' => '\n',
                                    't' => '\t',
                                    other => other,
                                });
                            }
                        }
                        other => s.push(other),
                    }
                }
                if !closed {
                    return Err(SyntaxError::new(l, start_col, "unterminated string"));
                }
                push!(Tok::Str(s), l, start_col);
            }
            _ if is_word_char(c) => {
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if c == '-' {
                        // `->` terminates the word; a plain dash belongs to it.
                        let mut look = chars.clone();
                        look.next();
                        if look.peek() == Some(&'>') {
                            break;
                        }
                    }
                    if is_word_char(c) {
                        word.push(c);
                        chars.next();
                        col += 1;
                    } else {
                        break;
                    }
                }
                if word.is_empty() {
                    // Lone dash before `>`: the arrow operator.
                    chars.next();
                    chars.next();
                    col += 2;
                    push!(Tok::Arrow, l, start_col);
                } else {
                    push!(Tok::Word(word), l, start_col);
                }
            }
            other => {
                return Err(SyntaxError::new(
                    l,
                    start_col,
                    format!("unexpected character {other:?}"),
                ));
            }
        }
    }
    Ok(tokens)
}
