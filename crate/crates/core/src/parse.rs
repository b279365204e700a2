//! Text formats: datalog rules and the N-Triples subset used for data.
//!
//! Rules are written one per line:
//!
//! ```text
//! (?x, <R>, ?z) :- (?x, <R>, ?y), (?y, <R>, ?z) .
//! ```
//!
//! Each slot is an IRI in angle brackets, a quoted literal (optionally with
//! `@lang` or `^^<datatype>`), a `_:name` blank node, or a `?var`. Blank
//! lines and lines starting with `#` are ignored in both formats.

use crate::error::ParseError;
use crate::model::{Atom, Dictionary, Fact, Program, Rule, Term, Var};

enum Slot<'a> {
    Resource(&'a str),
    Var(&'a str),
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, line: usize) -> Self {
        Cursor { text, pos: 0, line }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.line, format!("column {}: {}", self.pos + 1, msg.into()))
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), ParseError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{token}`")))
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.rest().is_empty() || self.rest().starts_with('#')
    }

    fn take_while(&mut self, start: usize, pred: impl Fn(char) -> bool) -> &'a str {
        let len: usize = self.text[start..]
            .chars()
            .take_while(|&c| pred(c))
            .map(char::len_utf8)
            .sum();
        self.pos = start + len;
        &self.text[start..start + len]
    }

    fn slot(&mut self) -> Result<Slot<'a>, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some('<') => {
                let end = self.rest().find('>').ok_or_else(|| self.err("unterminated IRI"))?;
                let iri = &self.text[start..start + end + 1];
                if iri[1..iri.len() - 1].chars().any(char::is_whitespace) {
                    return Err(self.err("whitespace inside IRI"));
                }
                self.pos = start + end + 1;
                Ok(Slot::Resource(iri))
            }
            Some('"') => {
                let mut escaped = false;
                let mut close = None;
                for (i, ch) in self.text[start + 1..].char_indices() {
                    if escaped {
                        escaped = false;
                    } else if ch == '\\' {
                        escaped = true;
                    } else if ch == '"' {
                        close = Some(start + 1 + i);
                        break;
                    }
                }
                let close = close.ok_or_else(|| self.err("unterminated literal"))?;
                self.pos = close + 1;
                if self.rest().starts_with('@') {
                    let from = self.pos + 1;
                    let tag = self.take_while(from, |c| c.is_ascii_alphanumeric() || c == '-');
                    if tag.is_empty() {
                        return Err(self.err("empty language tag"));
                    }
                } else if self.rest().starts_with("^^<") {
                    let end = self.rest().find('>').ok_or_else(|| self.err("unterminated datatype"))?;
                    self.pos += end + 1;
                }
                Ok(Slot::Resource(&self.text[start..self.pos]))
            }
            Some('_') if self.rest().starts_with("_:") => {
                let name = self.take_while(start + 2, is_name_char);
                if name.is_empty() {
                    return Err(self.err("empty blank node label"));
                }
                Ok(Slot::Resource(&self.text[start..self.pos]))
            }
            Some('?') => {
                let name = self.take_while(start + 1, is_name_char);
                if name.is_empty() {
                    return Err(self.err("empty variable name"));
                }
                Ok(Slot::Var(name))
            }
            Some(c) => Err(self.err(format!("unexpected character {c:?}"))),
            None => Err(self.err("unexpected end of line")),
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((i + 1, t))
    })
}

struct VarScope {
    names: Vec<String>,
}

impl VarScope {
    fn var(&mut self, name: &str) -> Var {
        match self.names.iter().position(|n| n == name) {
            Some(i) => Var(i as u16),
            None => {
                self.names.push(name.to_string());
                Var((self.names.len() - 1) as u16)
            }
        }
    }
}

fn atom(cur: &mut Cursor<'_>, dict: &mut Dictionary, scope: &mut VarScope) -> Result<Atom, ParseError> {
    cur.expect("(")?;
    let mut terms = [Term::Var(Var(0)); 3];
    for (i, t) in terms.iter_mut().enumerate() {
        if i > 0 {
            cur.expect(",")?;
        }
        *t = match cur.slot()? {
            Slot::Var(name) => Term::Var(scope.var(name)),
            Slot::Resource(lex) => Term::Const(dict.encode(lex).map_err(|e| ParseError::new(cur.line, e.to_string()))?),
        };
    }
    cur.expect(")")?;
    Ok(Atom::new(terms[0], terms[1], terms[2]))
}

/// Parses a single rule line.
pub fn parse_rule(line: &str, line_no: usize, dict: &mut Dictionary) -> Result<Rule, ParseError> {
    let mut cur = Cursor::new(line, line_no);
    let mut scope = VarScope { names: Vec::new() };
    let head = atom(&mut cur, dict, &mut scope)?;
    cur.expect(":-")?;
    let mut body = vec![atom(&mut cur, dict, &mut scope)?];
    while cur.eat(",") {
        body.push(atom(&mut cur, dict, &mut scope)?);
    }
    cur.expect(".")?;
    if !cur.at_end() {
        return Err(cur.err("trailing input after rule"));
    }
    let rule = Rule::new(head, body).with_var_names(scope.names);
    if !crate::model::rule_is_safe(&rule) {
        return Err(ParseError::new(
            line_no,
            "unsafe rule: every head variable must occur in the body",
        ));
    }
    Ok(rule)
}

pub fn parse_rules(text: &str, dict: &mut Dictionary) -> Result<Program, ParseError> {
    let mut rules = Vec::new();
    for (line_no, line) in content_lines(text) {
        rules.push(parse_rule(line, line_no, dict)?);
    }
    Program::new(rules).map_err(|e| ParseError::new(0, e.to_string()))
}

/// A fact together with the 1-based line it was read from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadedFact {
    pub line: usize,
    pub fact: Fact,
}

pub fn parse_triples(text: &str, dict: &mut Dictionary) -> Result<Vec<LoadedFact>, ParseError> {
    let mut out = Vec::new();
    for (line_no, line) in content_lines(text) {
        let mut cur = Cursor::new(line, line_no);
        let mut ids = [crate::model::ResourceId(0); 3];
        for id in ids.iter_mut() {
            match cur.slot()? {
                Slot::Resource(lex) => {
                    *id = dict.encode(lex).map_err(|e| ParseError::new(line_no, e.to_string()))?;
                }
                Slot::Var(_) => return Err(cur.err("variables are not allowed in data")),
            }
        }
        cur.expect(".")?;
        if !cur.at_end() {
            return Err(cur.err("trailing input after triple"));
        }
        out.push(LoadedFact {
            line: line_no,
            fact: Fact::new(ids[0], ids[1], ids[2]),
        });
    }
    Ok(out)
}

pub fn format_term(t: Term, rule: &Rule, dict: &Dictionary) -> String {
    match t {
        Term::Const(r) => dict.decode(r).to_string(),
        Term::Var(v) => format!("?{}", rule.var_name(v)),
    }
}

pub fn format_atom(a: &Atom, rule: &Rule, dict: &Dictionary) -> String {
    format!(
        "({}, {}, {})",
        format_term(a.subject, rule, dict),
        format_term(a.predicate, rule, dict),
        format_term(a.object, rule, dict)
    )
}

/// Renders a rule back into the line format accepted by [`parse_rule`].
pub fn format_rule(rule: &Rule, dict: &Dictionary) -> String {
    let body: Vec<String> = rule.body.iter().map(|a| format_atom(a, rule, dict)).collect();
    format!("{} :- {} .", format_atom(&rule.head, rule, dict), body.join(", "))
}
