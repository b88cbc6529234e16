//! Lenient JSON reading for task-knowledge documents.
//!
//! Model-produced knowledge documents are JSON in spirit but not always in
//! syntax: commas go missing between members, trailing commas linger, and
//! `//` comments annotate fields. The parser here accepts that dialect —
//! commas between members and elements are optional, trailing commas are
//! ignored, and `//` line comments are skipped — while still rejecting
//! anything structurally ambiguous. Output is a plain [`serde_json::Value`];
//! strict JSON parses to the same value it would under `serde_json`.

use serde_json::{Map, Number, Value};

use super::KnowledgeError;

/// Extracts every fenced ```json block (or bare ``` fence whose body starts
/// with `{` or `[`) from `text`, in order. When no fenced block is present,
/// falls back to the first balanced `{…}` region, if any.
pub fn extract_json_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(newline) = after.find('\n') else { break };
        let tag = after[..newline].trim();
        let body = &after[newline + 1..];
        let Some(close) = body.find("```") else { break };
        if tag.is_empty() || tag.eq_ignore_ascii_case("json") {
            let content = body[..close].trim();
            if content.starts_with('{') || content.starts_with('[') {
                blocks.push(content.to_string());
            }
        }
        rest = &body[close + 3..];
    }
    if blocks.is_empty() {
        if let Some(block) = first_balanced_object(text) {
            blocks.push(block.to_string());
        }
    }
    blocks
}

/// The first JSON block of a completion response.
pub fn extract_first_json_block(text: &str) -> Result<String, KnowledgeError> {
    extract_json_blocks(text)
        .into_iter()
        .next()
        .ok_or(KnowledgeError::NoJsonBlock)
}

/// First string-aware balanced `{…}` region of `text`.
fn first_balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses `text` as comma-lenient, comment-tolerant JSON.
pub fn parse_lenient(text: &str) -> Result<Value, KnowledgeError> {
    let mut parser = Parser { src: text, pos: 0 };
    parser.skip_trivia();
    let value = parser.parse_value()?;
    parser.skip_trivia();
    if parser.pos < parser.src.len() {
        return Err(parser.error("unexpected content after the document"));
    }
    Ok(value)
}

struct Parser<'a> {
    src: &'a str,
    /// Byte offset of the next unread character.
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> KnowledgeError {
        let read = &self.src[..self.pos.min(self.src.len())];
        let line = read.matches('\n').count() + 1;
        let column = read.chars().rev().take_while(|&c| c != '\n').count() + 1;
        KnowledgeError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn expect(&mut self, wanted: char) -> Result<(), KnowledgeError> {
        match self.peek() {
            Some(c) if c == wanted => {
                self.bump();
                Ok(())
            }
            Some(c) => Err(self.error(format!("expected {wanted:?}, found {c:?}"))),
            None => Err(self.error(format!("expected {wanted:?}, found end of input"))),
        }
    }

    /// Skips whitespace and `//` line comments.
    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') if self.src[self.pos..].starts_with("//") => {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                }
                _ => return,
            }
        }
    }

    fn parse_value(&mut self) -> Result<Value, KnowledgeError> {
        match self.peek() {
            Some('{') => self.parse_object(),
            Some('[') => self.parse_array(),
            Some('"') => Ok(Value::String(self.parse_string()?)),
            Some(c) if c == '-' || c.is_ascii_digit() => self.parse_number(),
            Some('t') => self.parse_word("true", Value::Bool(true)),
            Some('f') => self.parse_word("false", Value::Bool(false)),
            Some('n') => self.parse_word("null", Value::Null),
            Some(c) => Err(self.error(format!("expected a value, found {c:?}"))),
            None => Err(self.error("expected a value, found end of input")),
        }
    }

    fn parse_object(&mut self) -> Result<Value, KnowledgeError> {
        self.expect('{')?;
        let mut map = Map::new();
        loop {
            self.skip_trivia();
            match self.peek() {
                Some('}') => {
                    self.bump();
                    return Ok(Value::Object(map));
                }
                Some('"') => {
                    let key = self.parse_string()?;
                    self.skip_trivia();
                    self.expect(':')?;
                    self.skip_trivia();
                    let value = self.parse_value()?;
                    // Duplicate keys: the last occurrence wins.
                    map.insert(key, value);
                    self.skip_trivia();
                    if self.peek() == Some(',') {
                        self.bump();
                    }
                }
                Some(c) => return Err(self.error(format!("expected a key or '}}', found {c:?}"))),
                None => return Err(self.error("unterminated object")),
            }
        }
    }

    fn parse_array(&mut self) -> Result<Value, KnowledgeError> {
        self.expect('[')?;
        let mut items = Vec::new();
        loop {
            self.skip_trivia();
            match self.peek() {
                Some(']') => {
                    self.bump();
                    return Ok(Value::Array(items));
                }
                Some(_) => {
                    items.push(self.parse_value()?);
                    self.skip_trivia();
                    if self.peek() == Some(',') {
                        self.bump();
                    }
                }
                None => return Err(self.error("unterminated array")),
            }
        }
    }

    fn parse_string(&mut self) -> Result<String, KnowledgeError> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('"') => return Ok(out),
                Some('\\') => out.push(self.parse_escape()?),
                Some(c) if c != '\n' => out.push(c),
                Some(_) => return Err(self.error("unescaped newline in string")),
                None => return Err(self.error("unterminated string")),
            }
        }
    }

    fn parse_escape(&mut self) -> Result<char, KnowledgeError> {
        match self.bump() {
            Some('"') => Ok('"'),
            Some('\\') => Ok('\\'),
            Some('/') => Ok('/'),
            Some('b') => Ok('\u{8}'),
            Some('f') => Ok('\u{c}'),
            Some('n') => Ok('\n'),
            Some('r') => Ok('\r'),
            Some('t') => Ok('\t'),
            Some('u') => {
                let unit = self.parse_hex4()?;
                // Surrogate pairs encode characters outside the basic plane.
                if (0xd800..0xdc00).contains(&unit) {
                    if self.bump() != Some('\\') || self.bump() != Some('u') {
                        return Err(self.error("unpaired surrogate escape"));
                    }
                    let low = self.parse_hex4()?;
                    if !(0xdc00..0xe000).contains(&low) {
                        return Err(self.error("invalid low surrogate"));
                    }
                    let code = 0x10000 + ((unit - 0xd800) << 10) + (low - 0xdc00);
                    char::from_u32(code).ok_or_else(|| self.error("invalid surrogate pair"))
                } else {
                    char::from_u32(unit).ok_or_else(|| self.error("invalid unicode escape"))
                }
            }
            Some(c) => Err(self.error(format!("invalid escape {c:?}"))),
            None => Err(self.error("unterminated escape")),
        }
    }

    fn parse_hex4(&mut self) -> Result<u32, KnowledgeError> {
        let mut value = 0u32;
        for _ in 0..4 {
            let digit = self
                .bump()
                .and_then(|c| c.to_digit(16))
                .ok_or_else(|| self.error("expected four hex digits"))?;
            value = value * 16 + digit;
        }
        Ok(value)
    }

    fn parse_number(&mut self) -> Result<Value, KnowledgeError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || "+-.eE".contains(c)) {
            self.bump();
        }
        let token = &self.src[start..self.pos];
        token
            .parse::<Number>()
            .map(Value::Number)
            .map_err(|_| self.error(format!("invalid number {token:?}")))
    }

    fn parse_word(&mut self, word: &str, value: Value) -> Result<Value, KnowledgeError> {
        if self.src[self.pos..].starts_with(word) {
            self.pos += word.len();
            Ok(value)
        } else {
            Err(self.error(format!("expected {word:?}")))
        }
    }
}
