//! Tokenizer with line/column tracking. Keywords are case-insensitive and
//! identifiers are lowercased here, so the parser only ever sees lowercase
//! words.

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    /// Lowercased identifier or keyword.
    Word(String),
    Int(i64),
    Float(f64),
    Str(String),
    Comma,
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Slash,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("'{w}'"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Float(x) => format!("number {x}"),
            Tok::Str(_) => "string literal".to_string(),
            Tok::Comma => "','".to_string(),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::Plus => "'+'".to_string(),
            Tok::Minus => "'-'".to_string(),
            Tok::Slash => "'/'".to_string(),
            Tok::Eq => "'='".to_string(),
            Tok::NotEq => "'!='".to_string(),
            Tok::Lt => "'<'".to_string(),
            Tok::LtEq => "'<='".to_string(),
            Tok::Gt => "'>'".to_string(),
            Tok::GtEq => "'>='".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub column: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

struct Cursor<'a> {
    rest: std::str::Chars<'a>,
    line: u32,
    column: u32,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Cursor<'a> {
        Cursor {
            rest: text.chars(),
            line: 1,
            column: 1,
        }
    }

    fn peek(&self) -> Option<char> {
        self.rest.clone().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.rest.clone();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let ch = self.rest.next()?;
        if ch == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(ch)
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor::new(text);
    let mut out = Vec::new();
    loop {
        while matches!(cur.peek(), Some(c) if c.is_whitespace()) {
            cur.bump();
        }
        let pos = cur.pos();
        let ch = match cur.peek() {
            None => break,
            Some(c) => c,
        };
        let tok = match ch {
            ',' => {
                cur.bump();
                Tok::Comma
            }
            '(' => {
                cur.bump();
                Tok::LParen
            }
            ')' => {
                cur.bump();
                Tok::RParen
            }
            '*' => {
                cur.bump();
                Tok::Star
            }
            '+' => {
                cur.bump();
                Tok::Plus
            }
            '-' => {
                cur.bump();
                Tok::Minus
            }
            '/' => {
                cur.bump();
                Tok::Slash
            }
            '=' => {
                cur.bump();
                Tok::Eq
            }
            '!' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::NotEq
                } else {
                    return Err(syntax(pos, "expected '=' after '!'"));
                }
            }
            '<' => {
                cur.bump();
                match cur.peek() {
                    Some('=') => {
                        cur.bump();
                        Tok::LtEq
                    }
                    Some('>') => {
                        cur.bump();
                        Tok::NotEq
                    }
                    _ => Tok::Lt,
                }
            }
            '>' => {
                cur.bump();
                if cur.peek() == Some('=') {
                    cur.bump();
                    Tok::GtEq
                } else {
                    Tok::Gt
                }
            }
            '\'' => {
                cur.bump();
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(syntax(pos, "unterminated string literal")),
                        Some('\'') => {
                            // '' is an escaped quote
                            if cur.peek() == Some('\'') {
                                cur.bump();
                                s.push('\'');
                            } else {
                                break;
                            }
                        }
                        Some(c) => s.push(c),
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                    s.push(cur.bump().unwrap());
                }
                let is_float = cur.peek() == Some('.')
                    && matches!(cur.peek2(), Some(c) if c.is_ascii_digit());
                if is_float {
                    s.push(cur.bump().unwrap());
                    while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                        s.push(cur.bump().unwrap());
                    }
                }
                if matches!(cur.peek(), Some('e') | Some('E')) {
                    // exponent form always parses as float
                    let mut e = String::from("e");
                    cur.bump();
                    if matches!(cur.peek(), Some('+') | Some('-')) {
                        e.push(cur.bump().unwrap());
                    }
                    if !matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                        return Err(syntax(pos, "malformed number exponent"));
                    }
                    while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                        e.push(cur.bump().unwrap());
                    }
                    s.push_str(&e);
                    let v: f64 = s
                        .parse()
                        .map_err(|_| syntax(pos, format!("bad number {s:?}")))?;
                    out.push(Token {
                        tok: Tok::Float(v),
                        pos,
                    });
                    continue;
                }
                if is_float {
                    let v: f64 = s
                        .parse()
                        .map_err(|_| syntax(pos, format!("bad number {s:?}")))?;
                    Tok::Float(v)
                } else {
                    let v: i64 = s
                        .parse()
                        .map_err(|_| syntax(pos, format!("integer {s:?} out of range")))?;
                    Tok::Int(v)
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                    s.push(cur.bump().unwrap());
                }
                Tok::Word(s.to_ascii_lowercase())
            }
            other => return Err(syntax(pos, format!("unexpected character {other:?}"))),
        };
        out.push(Token { tok, pos });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_are_lowercased_with_positions() {
        let toks = tokenize("SELECT a\nFROM T").unwrap();
        assert_eq!(toks[0].tok, Tok::Word("select".into()));
        assert_eq!(toks[2].tok, Tok::Word("from".into()));
        assert_eq!(toks[2].pos, Pos { line: 2, column: 1 });
        assert_eq!(toks[3].tok, Tok::Word("t".into()));
    }

    #[test]
    fn string_escape_doubles_quotes() {
        let toks = tokenize("'it''s'").unwrap();
        assert_eq!(toks[0].tok, Tok::Str("it's".into()));
    }

    #[test]
    fn numbers_split_int_float() {
        let toks = tokenize("12 3.5 2e3").unwrap();
        assert_eq!(toks[0].tok, Tok::Int(12));
        assert_eq!(toks[1].tok, Tok::Float(3.5));
        assert_eq!(toks[2].tok, Tok::Float(2000.0));
    }

    #[test]
    fn unterminated_string_errors_with_position() {
        let err = tokenize("  'abc").unwrap_err();
        match err {
            ParseError::Syntax { line, column, .. } => {
                assert_eq!((line, column), (1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
