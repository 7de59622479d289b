//! The `.wfp` text format: one declaration per line under section headers.
//!
//! ```text
//! metamodel CS
//! class Hazard
//! class Int value
//! attr Hazard SIL Int
//! assoc Containment Hazard -> HazardGroup
//! mult C1 Hazard.SIL src 1 1
//!
//! instance Fixture : CS
//! obj H1 Hazard
//! val H1 SIL 4
//! ```

mod build;
mod emit;

use std::fmt;

pub use build::{build, AdviceModel, FlowModel, InstanceModel, Model, ProcessModel};
pub use emit::{format_instance, format_metamodel, format_process_view};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenKind {
    Ident,
    Int,
    Real,
    Str,
    Arrow,
    Eq,
    Colon,
    Star,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Token {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.text == other.text
    }
}

impl Eq for Token {}

impl Token {
    /// The string value of a `Str` token, escapes resolved.
    pub fn unquoted(&self) -> String {
        let inner = &self.text[1..self.text.len() - 1];
        let mut out = String::new();
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some(c) => out.push(c),
                    None => {}
                }
            } else {
                out.push(c);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub col: usize,
    pub message: String,
    pub token: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: error: {}", self.file, self.line, self.col, self.message)?;
        if !self.token.is_empty() {
            write!(f, " (at `{}`)", self.token)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionKind {
    Advice,
    Derivation,
    Flow,
    Instance,
    Metamodel,
    Process,
}

impl SectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::Advice => "advice",
            SectionKind::Derivation => "derivation",
            SectionKind::Flow => "flow",
            SectionKind::Instance => "instance",
            SectionKind::Metamodel => "metamodel",
            SectionKind::Process => "process",
        }
    }

    fn parse(s: &str) -> Option<SectionKind> {
        Some(match s {
            "advice" => SectionKind::Advice,
            "derivation" => SectionKind::Derivation,
            "flow" => SectionKind::Flow,
            "instance" => SectionKind::Instance,
            "metamodel" => SectionKind::Metamodel,
            "process" => SectionKind::Process,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decl {
    pub keyword: Token,
    pub args: Vec<Token>,
}

impl Decl {
    pub fn canonical(&self) -> String {
        let mut s = self.keyword.text.clone();
        for a in &self.args {
            s.push(' ');
            s.push_str(&a.text);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub name: Token,
    /// The metamodel a non-metamodel section refers to.
    pub of: Option<Token>,
    pub decls: Vec<Decl>,
    pub file: String,
}

impl Section {
    pub fn header(&self) -> String {
        match &self.of {
            Some(m) => format!("{} {} : {}", self.kind.as_str(), self.name.text, m.text),
            None => format!("{} {}", self.kind.as_str(), self.name.text),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    /// Sections sorted by header and declarations sorted by text.
    pub fn canonical(&self) -> Document {
        let mut sections = self.sections.clone();
        for s in &mut sections {
            s.decls.sort_by_key(|d| d.canonical());
        }
        sections.sort_by_key(|s| s.header());
        Document { sections }
    }
}

/// Canonical text: sorted sections separated by blank lines, sorted declarations, LF endings.
pub fn serialize(d: &Document) -> String {
    let c = d.canonical();
    let mut out = String::new();
    for (i, s) in c.sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&s.header());
        out.push('\n');
        for decl in &s.decls {
            out.push_str(&decl.canonical());
            out.push('\n');
        }
    }
    out
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn diag(file: &str, line: usize, col: usize, message: impl Into<String>, token: impl Into<String>) -> Diagnostic {
    Diagnostic { file: file.to_string(), line, col, message: message.into(), token: token.into() }
}

/// Splits one line into tokens; `#` starts a comment outside strings.
pub fn lex_line(text: &str, line: usize, file: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let tok = |kind, s: &[char]| Token { kind, text: s.iter().collect(), line, col };
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(tok(TokenKind::Ident, &chars[start..i]));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let mut kind = TokenKind::Int;
            let digits = |i: &mut usize| {
                let s = *i;
                while *i < chars.len() && chars[*i].is_ascii_digit() {
                    *i += 1;
                }
                *i > s
            };
            let mut ok = true;
            if i < chars.len() && chars[i] == '/' {
                i += 1;
                kind = TokenKind::Real;
                ok = digits(&mut i);
            } else {
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    kind = TokenKind::Real;
                    ok &= digits(&mut i);
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    kind = TokenKind::Real;
                    if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                        i += 1;
                    }
                    ok &= digits(&mut i);
                }
            }
            while i < chars.len() && (is_ident_char(chars[i]) || chars[i] == '/') {
                ok = false;
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            if !ok {
                return Err(diag(file, line, col, format!("malformed number `{text}`"), text));
            }
            out.push(Token { kind, text, line, col });
            continue;
        }
        if c == '"' {
            let start = i;
            i += 1;
            let mut closed = false;
            while i < chars.len() {
                match chars[i] {
                    '\\' => i += 2,
                    '"' => {
                        closed = true;
                        i += 1;
                        break;
                    }
                    _ => i += 1,
                }
            }
            if !closed {
                return Err(diag(file, line, col, "unterminated string", "\""));
            }
            out.push(tok(TokenKind::Str, &chars[start..i]));
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(tok(TokenKind::Arrow, &chars[i..i + 2]));
            i += 2;
            continue;
        }
        let kind = match c {
            '=' => TokenKind::Eq,
            ':' => TokenKind::Colon,
            '*' => TokenKind::Star,
            _ => return Err(diag(file, line, col, format!("unexpected character `{c}`"), c.to_string())),
        };
        out.push(tok(kind, &chars[i..i + 1]));
        i += 1;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
enum P {
    Id,
    Num,
    /// An integer or `*`.
    Upper,
    Lit,
    Str,
    Arrow,
    Eq,
    Word(&'static [&'static str]),
    OptWord(&'static [&'static str]),
    /// At least this many identifiers, to the end of the line.
    Ids(usize),
    /// Pairs of numbers to the end of the line.
    NumPairs,
}

fn describe(p: P) -> String {
    match p {
        P::Id => "an identifier".into(),
        P::Num => "a number".into(),
        P::Upper => "a number or `*`".into(),
        P::Lit => "a literal".into(),
        P::Str => "a string".into(),
        P::Arrow => "`->`".into(),
        P::Eq => "`=`".into(),
        P::Word(ws) | P::OptWord(ws) => format!("one of {}", ws.iter().map(|w| format!("`{w}`")).collect::<Vec<_>>().join(", ")),
        P::Ids(n) => format!("at least {n} identifier(s)"),
        P::NumPairs => "pairs of numbers".into(),
    }
}

fn is_num(t: &Token) -> bool {
    matches!(t.kind, TokenKind::Int | TokenKind::Real)
}

/// Matches `args` against `pat`; on failure returns the index of the offending token (or
/// `args.len()` when something is missing) and what was expected.
fn match_pattern(args: &[Token], pat: &[P]) -> Result<(), (usize, String)> {
    let mut i = 0;
    for (k, p) in pat.iter().enumerate() {
        let t = args.get(i);
        let ok = match (p, t) {
            (P::Ids(min), _) => {
                let n = args[i..].iter().take_while(|t| t.kind == TokenKind::Ident).count();
                if i + n < args.len() {
                    return Err((i + n, "expected an identifier".into()));
                }
                if n < *min {
                    return Err((args.len(), format!("expected {}", describe(*p))));
                }
                i += n;
                continue;
            }
            (P::NumPairs, _) => {
                let rest = &args[i..];
                if let Some(j) = rest.iter().position(|t| !is_num(t)) {
                    return Err((i + j, "expected a number".into()));
                }
                if !rest.len().is_multiple_of(2) {
                    return Err((args.len(), "expected a number".into()));
                }
                i = args.len();
                continue;
            }
            (P::OptWord(ws), Some(t)) if t.kind == TokenKind::Ident && ws.contains(&t.text.as_str()) => true,
            (P::OptWord(_), _) => continue,
            (_, None) => return Err((args.len(), format!("expected {}", describe(*p)))),
            (P::Id, Some(t)) => t.kind == TokenKind::Ident,
            (P::Num, Some(t)) => is_num(t),
            (P::Upper, Some(t)) => t.kind == TokenKind::Int || t.kind == TokenKind::Star,
            (P::Lit, Some(t)) => {
                is_num(t) || t.kind == TokenKind::Str || (t.kind == TokenKind::Ident && (t.text == "true" || t.text == "false"))
            }
            (P::Str, Some(t)) => t.kind == TokenKind::Str,
            (P::Arrow, Some(t)) => t.kind == TokenKind::Arrow,
            (P::Eq, Some(t)) => t.kind == TokenKind::Eq,
            (P::Word(ws), Some(t)) => t.kind == TokenKind::Ident && ws.contains(&t.text.as_str()),
        };
        if !ok {
            return Err((i, format!("expected {}", describe(*p))));
        }
        let _ = k;
        i += 1;
    }
    if i < args.len() {
        return Err((i, "unexpected token".into()));
    }
    Ok(())
}

/// Tries each form; reports the failure that got furthest.
fn match_forms(args: &[Token], forms: &[&[P]]) -> Result<usize, (usize, String)> {
    let mut best: Option<(usize, String)> = None;
    for (n, f) in forms.iter().enumerate() {
        match match_pattern(args, f) {
            Ok(()) => return Ok(n),
            Err(e) => {
                if best.as_ref().is_none_or(|b| e.0 > b.0) {
                    best = Some(e);
                }
            }
        }
    }
    Err(best.unwrap_or((0, "no form".into())))
}

const CONSTRAINT_WORDS: &[&str] = &["src", "tgt"];
const STEP_KINDS: &[&str] = &["definitional", "composition", "conjunction", "semantic"];

fn metamodel_forms(kw: &str) -> Option<Vec<&'static [P]>> {
    Some(match kw {
        "class" => vec![&[P::Id, P::OptWord(&["process", "port", "value"])]],
        "attr" => vec![&[P::Id, P::Id, P::Id], &[P::Id, P::Id, P::Arrow, P::Id]],
        "assoc" => vec![&[P::Id, P::Id, P::Arrow, P::Id, P::OptWord(&["dataflow"])]],
        "mult" => vec![&[P::Id, P::Id, P::Word(CONSTRAINT_WORDS), P::Num, P::Upper]],
        "key" => vec![&[P::Id, P::Ids(1)]],
        "xor" => vec![&[P::Id, P::Ids(2)]],
        "validity" => vec![&[P::Id, P::Id]],
        "derived" => vec![&[P::Id, P::Eq, P::Ids(1)], &[P::Id, P::Id, P::Eq, P::Ids(1)]],
        _ => return None,
    })
}

fn forms_for(kind: SectionKind, kw: &str, args: &[Token]) -> Option<Vec<&'static [P]>> {
    match kind {
        SectionKind::Metamodel => metamodel_forms(kw),
        SectionKind::Advice => match kw {
            "entry" => Some(vec![&[P::Ids(1)]]),
            "map" => Some(vec![&[P::Num, P::Id, P::Id]]),
            _ => metamodel_forms(kw),
        },
        SectionKind::Instance => Some(match kw {
            "obj" => vec![&[P::Id, P::Id]],
            "link" => vec![&[P::Id, P::Id, P::Id, P::Arrow, P::Id]],
            "val" => vec![&[P::Id, P::Id, P::Lit], &[P::Id, P::Id, P::Id, P::Id, P::Lit]],
            "lit" => vec![&[P::Id, P::Id, P::Lit]],
            _ => return None,
        }),
        SectionKind::Process => Some(match kw {
            "in" | "out" => vec![&[P::Id, P::Ids(0)]],
            "inner" => vec![&[P::Ids(1)]],
            "kind" => {
                let sub = args.get(1).map(|t| t.text.as_str()).unwrap_or("");
                match sub {
                    "identity" => vec![&[P::Num, P::Id]],
                    "constant" | "custom" => vec![&[P::Num, P::Id, P::Id]],
                    "compose" => vec![&[P::Num, P::Id, P::Id, P::Ids(1)]],
                    "max" => vec![&[P::Num, P::Id, P::Id, P::Id, P::Id]],
                    "threshold" => vec![&[P::Num, P::Id, P::Id, P::Id, P::Id, P::Id, P::NumPairs]],
                    "validity" => vec![&[P::Num, P::Id, P::Id], &[P::Num, P::Id, P::Id, P::Word(&["default"]), P::Lit]],
                    _ => vec![&[
                        P::Num,
                        P::Word(&["identity", "constant", "compose", "max", "threshold", "validity", "custom"]),
                    ]],
                }
            }
            _ => return None,
        }),
        SectionKind::Flow => Some(match kw {
            "wp" => vec![&[P::Id, P::Ids(0)]],
            "proc" => vec![&[P::Id]],
            "wire" => vec![&[P::Id, P::Id, P::Arrow, P::Id, P::Id], &[P::Id, P::Id, P::Id, P::Arrow, P::Id]],
            "init" => vec![&[P::Id, P::Id]],
            _ => return None,
        }),
        SectionKind::Derivation => Some(match kw {
            "claim" => {
                let sub = args.get(1).map(|t| t.text.as_str()).unwrap_or("");
                match sub {
                    "given" => vec![&[P::Id, P::Id, P::Id]],
                    "all" => vec![&[P::Id, P::Id]],
                    "mult" => vec![&[P::Id, P::Id, P::Id, P::Word(CONSTRAINT_WORDS), P::Num, P::Upper]],
                    "key" => vec![&[P::Id, P::Id, P::Ids(1)]],
                    "xor" => vec![&[P::Id, P::Id, P::Ids(2)]],
                    "validity" => vec![&[P::Id, P::Id, P::Id]],
                    "derived" => vec![&[P::Id, P::Id, P::Id, P::Eq, P::Ids(1)]],
                    "semantic" => vec![&[P::Id, P::Id, P::Str]],
                    _ => vec![&[
                        P::Id,
                        P::Word(&["given", "all", "mult", "key", "xor", "validity", "derived", "semantic"]),
                    ]],
                }
            }
            "step" => vec![&[P::Num, P::Id, P::Word(STEP_KINDS), P::Ids(1)]],
            "top" => vec![&[P::Id]],
            _ => return None,
        }),
    }
}

/// Parses one file. Every line is checked; all recoverable errors are reported together.
pub fn parse(text: &str, file: &str) -> Result<Document, Vec<Diagnostic>> {
    let mut doc = Document::default();
    let mut diags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let toks = match lex_line(raw, line, file) {
            Ok(t) => t,
            Err(d) => {
                diags.push(d);
                continue;
            }
        };
        let Some(first) = toks.first() else { continue };
        if first.kind != TokenKind::Ident {
            diags.push(diag(file, line, first.col, "expected a keyword", first.text.clone()));
            continue;
        }
        if let Some(kind) = SectionKind::parse(&first.text) {
            let ok = match kind {
                SectionKind::Metamodel => toks.len() == 2 && toks[1].kind == TokenKind::Ident,
                _ => {
                    toks.len() == 4
                        && toks[1].kind == TokenKind::Ident
                        && toks[2].kind == TokenKind::Colon
                        && toks[3].kind == TokenKind::Ident
                }
            };
            if !ok {
                let expect = if kind == SectionKind::Metamodel { "`metamodel NAME`" } else { "`KIND NAME : METAMODEL`" };
                let bad = toks.get(1).unwrap_or(first);
                diags.push(diag(file, line, bad.col, format!("malformed section header, expected {expect}"), bad.text.clone()));
                doc.sections.push(Section { kind, name: first.clone(), of: None, decls: Vec::new(), file: file.into() });
                continue;
            }
            let of = if kind == SectionKind::Metamodel { None } else { Some(toks[3].clone()) };
            doc.sections.push(Section { kind, name: toks[1].clone(), of, decls: Vec::new(), file: file.into() });
            continue;
        }
        let Some(section) = doc.sections.last_mut() else {
            diags.push(diag(file, line, first.col, "declaration before any section header", first.text.clone()));
            continue;
        };
        let args = toks[1..].to_vec();
        match forms_for(section.kind, &first.text, &args) {
            None => diags.push(diag(
                file,
                line,
                first.col,
                format!("unknown keyword `{}` in {} section", first.text, section.kind.as_str()),
                first.text.clone(),
            )),
            Some(forms) => match match_forms(&args, &forms) {
                Ok(_) => section.decls.push(Decl { keyword: first.clone(), args }),
                Err((i, msg)) => {
                    let (col, tok) = match args.get(i) {
                        Some(t) => (t.col, t.text.clone()),
                        None => (raw.split('#').next().unwrap_or(raw).trim_end().chars().count() + 1, String::new()),
                    };
                    diags.push(diag(file, line, col, format!("{msg} in `{}` declaration", first.text), tok));
                }
            },
        }
    }
    if diags.is_empty() {
        Ok(doc)
    } else {
        Err(diags)
    }
}

/// Parses and builds a set of files into engine objects.
pub fn load(files: &[(String, String)]) -> Result<Model, Vec<Diagnostic>> {
    let mut docs = Vec::new();
    let mut diags = Vec::new();
    for (name, text) in files {
        match parse(text, name) {
            Ok(d) => docs.push(d),
            Err(mut d) => diags.append(&mut d),
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    build(&docs)
}
