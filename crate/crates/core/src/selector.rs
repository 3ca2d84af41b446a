//! Selector DSL: the structured [`PositionSpec`] union, its canonical string
//! form, and column conversion between position encodings.
//!
//! Canonical strings look like:
//!
//! ```text
//! src/app.py@L42:C7
//! src/app.py@R(42,7->44,1)
//! py://pkg.mod#Class.method:body
//! ast://[module=pkg.mod]/[class=Class]/[def=method]/name[1]
//! anchor://src/app.py#"def%20load_data("?ctx=24
//! ```
//!
//! Non-default optional fields travel as a query suffix: `?indexing=` on
//! cursors and ranges, `?overload=` on symbols, `?ctx=`/`&hash=` on anchors.
//! `docVersion` exists only in the structured form.

use crate::error::{ErrorCode, LanserError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_ANCHOR_CTX: u32 = 24;

/// Unit in which a column offset is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum IndexingMode {
    #[default]
    #[serde(rename = "utf-16")]
    Utf16,
    #[serde(rename = "utf-8")]
    Utf8,
    /// Unicode scalar values.
    #[serde(rename = "codepoint")]
    Codepoint,
}

impl IndexingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            IndexingMode::Utf16 => "utf-16",
            IndexingMode::Utf8 => "utf-8",
            IndexingMode::Codepoint => "codepoint",
        }
    }

    /// Width of `c` in this encoding's units.
    pub fn width(self, c: char) -> u32 {
        match self {
            IndexingMode::Utf16 => c.len_utf16() as u32,
            IndexingMode::Utf8 => c.len_utf8() as u32,
            IndexingMode::Codepoint => 1,
        }
    }

    pub fn units(self, s: &str) -> u32 {
        s.chars().map(|c| self.width(c)).sum()
    }
}

impl fmt::Display for IndexingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexingMode {
    type Err = LanserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utf-16" => Ok(IndexingMode::Utf16),
            "utf-8" => Ok(IndexingMode::Utf8),
            "codepoint" => Ok(IndexingMode::Codepoint),
            other => Err(LanserError::new(
                ErrorCode::IndexingUnsupported,
                format!("unsupported indexing '{other}' (expected utf-8, utf-16 or codepoint)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Def,
    Sig,
    Body,
    Doc,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Def, Role::Sig, Role::Body, Role::Doc];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Def => "def",
            Role::Sig => "sig",
            Role::Body => "body",
            Role::Doc => "doc",
        }
    }

    fn from_keyword(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// 1-based (line, column) pair, serialized as `[line, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct LineCol {
    pub line: u32,
    pub col: u32,
}

impl LineCol {
    pub fn new(line: u32, col: u32) -> Self {
        LineCol { line, col }
    }
}

impl From<[u32; 2]> for LineCol {
    fn from(v: [u32; 2]) -> Self {
        LineCol::new(v[0], v[1])
    }
}

impl From<LineCol> for [u32; 2] {
    fn from(v: LineCol) -> Self {
        [v.line, v.col]
    }
}

/// One `(node-kind, name)` step of an AST path, serialized as `[kind, name]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct AstSegment {
    pub kind: String,
    pub name: String,
}

impl AstSegment {
    pub fn new(kind: impl Into<String>, name: impl Into<String>) -> Self {
        AstSegment {
            kind: kind.into(),
            name: name.into(),
        }
    }
}

impl From<(String, String)> for AstSegment {
    fn from((kind, name): (String, String)) -> Self {
        AstSegment { kind, name }
    }
}

impl From<AstSegment> for (String, String) {
    fn from(s: AstSegment) -> Self {
        (s.kind, s.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Selector {
    Cursor {
        uri: String,
        line: u32,
        col: u32,
        #[serde(default)]
        indexing: IndexingMode,
    },
    Range {
        uri: String,
        start: LineCol,
        end: LineCol,
        #[serde(default)]
        indexing: IndexingMode,
    },
    #[serde(rename = "symbol")]
    Symbolic {
        module: String,
        qualname: String,
        #[serde(default)]
        role: Role,
        #[serde(default)]
        overload: u32,
    },
    #[serde(rename = "ast")]
    AstPath {
        path: Vec<AstSegment>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<u32>,
    },
    Anchor {
        uri: String,
        snippet: String,
        #[serde(default = "default_ctx")]
        ctx: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hash: Option<String>,
    },
}

fn default_ctx() -> u32 {
    DEFAULT_ANCHOR_CTX
}

/// A code address: one selector form plus an optional document snapshot pin.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PositionSpec {
    #[serde(flatten)]
    pub selector: Selector,
    #[serde(rename = "docVersion", default, skip_serializing_if = "Option::is_none")]
    pub doc_version: Option<String>,
}

impl From<Selector> for PositionSpec {
    fn from(selector: Selector) -> Self {
        PositionSpec {
            selector,
            doc_version: None,
        }
    }
}

impl PositionSpec {
    pub fn kind(&self) -> &'static str {
        match self.selector {
            Selector::Cursor { .. } => "cursor",
            Selector::Range { .. } => "range",
            Selector::Symbolic { .. } => "symbol",
            Selector::AstPath { .. } => "ast",
            Selector::Anchor { .. } => "anchor",
        }
    }

    /// File the selector names directly, if any.
    pub fn uri(&self) -> Option<&str> {
        match &self.selector {
            Selector::Cursor { uri, .. } | Selector::Range { uri, .. } | Selector::Anchor { uri, .. } => Some(uri),
            _ => None,
        }
    }

    /// Checks the type invariants. Structured selectors arriving as JSON go
    /// through this before use.
    pub fn validate(&self) -> Result<(), LanserError> {
        let bad = |msg: String| Err(LanserError::new(ErrorCode::BadSelectorSyntax, msg));
        match &self.selector {
            Selector::Cursor { uri, line, col, .. } => {
                validate_uri(uri)?;
                if *line < 1 || *col < 1 {
                    return bad(format!("cursor line/col must be >= 1, got L{line}:C{col}"));
                }
            }
            Selector::Range { uri, start, end, .. } => {
                validate_uri(uri)?;
                if start.line < 1 || start.col < 1 || end.line < 1 || end.col < 1 {
                    return bad("range coordinates must be >= 1".into());
                }
                if start > end {
                    return bad("range start is after range end".into());
                }
            }
            Selector::Symbolic { module, qualname, .. } => {
                if !is_dotted_ident(module) {
                    return bad(format!("invalid module reference '{module}'"));
                }
                if !is_qualname(qualname) {
                    return bad(format!("invalid qualified name '{qualname}'"));
                }
            }
            Selector::AstPath { path, .. } => {
                if path.is_empty() {
                    return bad("ast path has no segments".into());
                }
                for seg in path {
                    if !is_ident(&seg.kind) {
                        return bad(format!("invalid ast node kind '{}'", seg.kind));
                    }
                    if !seg.name.is_empty() && !is_dotted_ident(&seg.name) {
                        return bad(format!("invalid ast name '{}'", seg.name));
                    }
                }
            }
            Selector::Anchor { uri, snippet, hash, .. } => {
                validate_uri(uri)?;
                if snippet.is_empty() {
                    return bad("anchor snippet is empty".into());
                }
                if let Some(h) = hash {
                    validate_hash(h).map_err(|m| LanserError::new(ErrorCode::BadSelectorSyntax, m))?;
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for PositionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_selector(self))
    }
}

impl FromStr for PositionSpec {
    type Err = LanserError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_selector(s)
    }
}

// ---------------------------------------------------------------------------
// lexical helpers

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c == '_' || unicode_ident::is_xid_start(c) => {}
        _ => return false,
    }
    chars.all(unicode_ident::is_xid_continue)
}

fn is_dotted_ident(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(is_ident)
}

fn is_qualname(s: &str) -> bool {
    !s.is_empty() && s.split(['.', ':']).all(is_ident)
}

fn has_scheme_prefix(s: &str) -> bool {
    let Some(colon) = s.find(':') else {
        return false;
    };
    let head = &s[..colon];
    let mut chars = head.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-'))
}

fn validate_uri(uri: &str) -> Result<(), LanserError> {
    let bad = |m: String| Err(LanserError::new(ErrorCode::BadSelectorSyntax, m));
    if uri.is_empty() {
        return bad("empty path".into());
    }
    if let Some(rest) = uri.strip_prefix("file://") {
        if !rest.starts_with('/') {
            return bad(format!("file URI path must be absolute: '{uri}'"));
        }
        let b = rest.as_bytes();
        if b.len() >= 3 && b[2] == b':' && b[1].is_ascii_lowercase() {
            return bad(format!("drive letter must be uppercase: '{uri}'"));
        }
        return Ok(());
    }
    if has_scheme_prefix(uri) || uri.starts_with('/') {
        return bad(format!("path '{uri}' must be relative or a file:// URI"));
    }
    Ok(())
}

fn validate_hash(h: &str) -> Result<(), String> {
    match h.strip_prefix("sha256:") {
        Some(hex) if hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) => Ok(()),
        _ => Err(format!("anchor hash must be sha256:<64 lowercase hex>, got '{h}'")),
    }
}

/// Digest form used for anchor `hash` values.
pub fn snippet_hash(snippet: &str) -> String {
    use sha2::{Digest, Sha256};
    format!("sha256:{}", hex::encode(Sha256::digest(snippet.as_bytes())))
}

// ---------------------------------------------------------------------------
// printing

fn push_pct(out: &mut String, c: char) {
    let mut buf = [0u8; 4];
    for b in c.encode_utf8(&mut buf).bytes() {
        out.push_str(&format!("%{b:02X}"));
    }
}

fn escape_path(path: &str) -> String {
    let mut out = String::with_capacity(path.len());
    for c in path.chars() {
        if matches!(c, '#' | '?' | '%' | '"' | ' ' | '@' | '\\') || c.is_control() {
            push_pct(&mut out, c);
        } else {
            out.push(c);
        }
    }
    out
}

fn escape_snippet(snippet: &str) -> String {
    let chars: Vec<char> = snippet.chars().collect();
    let mut out = String::with_capacity(snippet.len());
    for (i, &c) in chars.iter().enumerate() {
        let next = chars.get(i + 1).copied();
        let needs = matches!(c, '#' | '?' | '%' | '"' | ' ')
            || c.is_control()
            // a raw backslash would read as the start of `\/` or `\"`
            || (c == '\\' && matches!(next, None | Some('/')));
        if needs {
            push_pct(&mut out, c);
        } else {
            out.push(c);
        }
    }
    out
}

/// Emits the unique canonical string for a valid spec. `docVersion` is not
/// part of the string form.
pub fn print_selector(spec: &PositionSpec) -> String {
    match &spec.selector {
        Selector::Cursor {
            uri,
            line,
            col,
            indexing,
        } => {
            let mut s = format!("{}@L{line}:C{col}", escape_path(uri));
            push_indexing(&mut s, *indexing);
            s
        }
        Selector::Range {
            uri,
            start,
            end,
            indexing,
        } => {
            let mut s = format!(
                "{}@R({},{}->{},{})",
                escape_path(uri),
                start.line,
                start.col,
                end.line,
                end.col
            );
            push_indexing(&mut s, *indexing);
            s
        }
        Selector::Symbolic {
            module,
            qualname,
            role,
            overload,
        } => {
            let mut s = format!("py://{module}#{qualname}");
            let tail_is_role = qualname
                .rsplit_once(':')
                .is_some_and(|(_, t)| Role::from_keyword(t).is_some());
            if *role != Role::Def || tail_is_role {
                s.push(':');
                s.push_str(role.as_str());
            }
            if *overload != 0 {
                s.push_str(&format!("?overload={overload}"));
            }
            s
        }
        Selector::AstPath { path, index } => {
            let last = path.len().saturating_sub(1);
            let segs: Vec<String> = path
                .iter()
                .enumerate()
                .map(|(i, seg)| match (i == last, index) {
                    (true, Some(ix)) if seg.name.is_empty() => format!("{}[{ix}]", seg.kind),
                    (true, Some(ix)) => format!("[{}={}][{ix}]", seg.kind, seg.name),
                    _ => format!("[{}={}]", seg.kind, seg.name),
                })
                .collect();
            format!("ast://{}", segs.join("/"))
        }
        Selector::Anchor {
            uri,
            snippet,
            ctx,
            hash,
        } => {
            let mut s = format!("anchor://{}#\"{}\"", escape_path(uri), escape_snippet(snippet));
            let mut params = Vec::new();
            if *ctx != DEFAULT_ANCHOR_CTX {
                params.push(format!("ctx={ctx}"));
            }
            if let Some(h) = hash {
                params.push(format!("hash={h}"));
            }
            if !params.is_empty() {
                s.push('?');
                s.push_str(&params.join("&"));
            }
            s
        }
    }
}

fn push_indexing(s: &mut String, indexing: IndexingMode) {
    if indexing != IndexingMode::Utf16 {
        s.push_str("?indexing=");
        s.push_str(indexing.as_str());
    }
}

// ---------------------------------------------------------------------------
// parsing

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor { text, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn err(&self, msg: impl fmt::Display) -> LanserError {
        let col = self.text[..self.pos].chars().count() + 1;
        LanserError::new(
            ErrorCode::BadSelectorSyntax,
            format!("selector syntax error at column {col}: {msg}"),
        )
        .with_details(serde_json::json!({ "column": col, "input": self.text }))
    }

    fn expect(&mut self, lit: &str) -> Result<(), LanserError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{lit}'")))
        }
    }

    fn int(&mut self) -> Result<u32, LanserError> {
        let digits: &str = {
            let r = self.rest();
            let n = r.bytes().take_while(u8::is_ascii_digit).count();
            &r[..n]
        };
        if digits.is_empty() {
            return Err(self.err("expected integer"));
        }
        let v = digits
            .parse::<u32>()
            .map_err(|_| self.err(format!("integer out of range '{digits}'")))?;
        self.pos += digits.len();
        Ok(v)
    }

    /// Takes characters up to (not including) the first char in `stops`.
    fn take_until(&mut self, stops: &[char]) -> &'a str {
        let r = self.rest();
        let n = r.find(|c| stops.contains(&c)).unwrap_or(r.len());
        self.pos += n;
        &r[..n]
    }

    fn at_end(&self) -> bool {
        self.pos == self.text.len()
    }
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Decodes `%XX` runs; the decoded bytes must form valid UTF-8.
fn percent_decode(raw: &str, cur: &Cursor<'_>) -> Result<String, LanserError> {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hi = bytes.get(i + 1).copied().and_then(hex_val);
            let lo = bytes.get(i + 2).copied().and_then(hex_val);
            match (hi, lo) {
                (Some(h), Some(l)) => out.push(h << 4 | l),
                _ => return Err(cur.err("malformed percent escape")),
            }
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| cur.err("percent escape decodes to invalid UTF-8"))
}

fn canonical_path(raw: &str, cur: &Cursor<'_>) -> Result<String, LanserError> {
    if raw.is_empty() {
        return Err(cur.err("expected path"));
    }
    if raw.contains(['"', ' ', '#', '?']) || raw.chars().any(char::is_control) {
        return Err(cur.err("unescaped reserved character in path"));
    }
    if let Some(rest) = raw.strip_prefix("file://") {
        let mut path = percent_decode(&rest.replace('\\', "/"), cur)?;
        if !path.starts_with('/') {
            path.insert(0, '/');
        }
        return Ok(format!("file://{}", uppercase_drive(&path)));
    }
    // raw backslashes are separators; `%5C` is a literal backslash
    let decoded = percent_decode(&raw.replace('\\', "/"), cur)?;
    let b = decoded.as_bytes();
    if b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':' && (b.len() == 2 || b[2] == b'/') {
        return Ok(format!("file://{}", uppercase_drive(&format!("/{decoded}"))));
    }
    if decoded.starts_with('/') {
        return Ok(format!("file://{decoded}"));
    }
    if has_scheme_prefix(&decoded) {
        return Err(cur.err(format!("unknown scheme in '{decoded}'")));
    }
    Ok(decoded)
}

fn uppercase_drive(path: &str) -> String {
    let b = path.as_bytes();
    if b.len() >= 3 && b[0] == b'/' && b[1].is_ascii_alphabetic() && b[2] == b':' {
        let mut s = String::with_capacity(path.len());
        s.push('/');
        s.push(b[1].to_ascii_uppercase() as char);
        s.push_str(&path[2..]);
        s
    } else {
        path.to_string()
    }
}

fn parse_query<'a>(cur: &mut Cursor<'a>, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str)>, LanserError> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    if !cur.eat("?") {
        return Ok(out);
    }
    loop {
        let key = cur.take_until(&['=', '&']);
        if !allowed.contains(&key) {
            return Err(cur.err(format!("unknown query parameter '{key}'")));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(cur.err(format!("duplicate query parameter '{key}'")));
        }
        cur.expect("=")?;
        let val = cur.take_until(&['&']);
        if val.is_empty() {
            return Err(cur.err(format!("empty value for '{key}'")));
        }
        out.push((key, val));
        if !cur.eat("&") {
            break;
        }
    }
    Ok(out)
}

fn query_u32(cur: &Cursor<'_>, v: &str) -> Result<u32, LanserError> {
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
        return Err(cur.err(format!("expected integer, got '{v}'")));
    }
    v.parse().map_err(|_| cur.err(format!("integer out of range '{v}'")))
}

/// Parses one selector expression, assuming UTF-16 columns for cursor and
/// range forms without an explicit `?indexing=`.
pub fn parse_selector(text: &str) -> Result<PositionSpec, LanserError> {
    parse_selector_with(text, IndexingMode::Utf16)
}

/// As [`parse_selector`], with the column unit used when the string does not
/// say (the CLI passes `--index-io` here).
pub fn parse_selector_with(text: &str, default_indexing: IndexingMode) -> Result<PositionSpec, LanserError> {
    let mut cur = Cursor::new(text);
    let selector = if cur.eat("py://") {
        parse_symbolic(&mut cur)?
    } else if cur.eat("ast://") {
        parse_ast(&mut cur)?
    } else if cur.eat("anchor://") {
        parse_anchor(&mut cur)?
    } else {
        parse_positional(&mut cur, default_indexing)?
    };
    if !cur.at_end() {
        return Err(cur.err("unexpected trailing input"));
    }
    let spec = PositionSpec::from(selector);
    spec.validate().map_err(|e| cur.err(e.message))?;
    Ok(spec)
}

fn parse_positional(cur: &mut Cursor<'_>, default_indexing: IndexingMode) -> Result<Selector, LanserError> {
    let raw = cur.take_until(&['@']);
    let uri = canonical_path(raw, cur)?;
    cur.expect("@")?;
    let selector = if cur.eat("L") {
        let line = cur.int()?;
        cur.expect(":C")?;
        let col = cur.int()?;
        Selector::Cursor {
            uri,
            line,
            col,
            indexing: default_indexing,
        }
    } else if cur.eat("R(") {
        let sl = cur.int()?;
        cur.expect(",")?;
        let sc = cur.int()?;
        cur.expect("->")?;
        let el = cur.int()?;
        cur.expect(",")?;
        let ec = cur.int()?;
        cur.expect(")")?;
        Selector::Range {
            uri,
            start: LineCol::new(sl, sc),
            end: LineCol::new(el, ec),
            indexing: default_indexing,
        }
    } else {
        return Err(cur.err("expected 'L<line>:C<col>' or 'R(l,c->l,c)' after '@'"));
    };
    let query = parse_query(cur, &["indexing"])?;
    Ok(match (selector, query.first()) {
        (sel, None) => sel,
        (Selector::Cursor { uri, line, col, .. }, Some((_, v))) => Selector::Cursor {
            uri,
            line,
            col,
            indexing: v.parse()?,
        },
        (Selector::Range { uri, start, end, .. }, Some((_, v))) => Selector::Range {
            uri,
            start,
            end,
            indexing: v.parse()?,
        },
        _ => unreachable!(),
    })
}

fn parse_symbolic(cur: &mut Cursor<'_>) -> Result<Selector, LanserError> {
    let module = cur.take_until(&['#']);
    if !is_dotted_ident(module) {
        return Err(cur.err(format!("invalid module reference '{module}'")));
    }
    cur.expect("#")?;
    let body = cur.take_until(&['?']);
    let (qualname, role) = match body.rsplit_once(':') {
        Some((head, tail)) => match Role::from_keyword(tail) {
            Some(role) => (head, role),
            None => (body, Role::Def),
        },
        None => (body, Role::Def),
    };
    if !is_qualname(qualname) {
        return Err(cur.err(format!("invalid qualified name '{qualname}'")));
    }
    let mut overload = 0;
    for (k, v) in parse_query(cur, &["overload"])? {
        debug_assert_eq!(k, "overload");
        overload = query_u32(cur, v)?;
    }
    Ok(Selector::Symbolic {
        module: module.to_string(),
        qualname: qualname.to_string(),
        role,
        overload,
    })
}

fn parse_ast(cur: &mut Cursor<'_>) -> Result<Selector, LanserError> {
    let mut path = Vec::new();
    let mut index = None;
    loop {
        if index.is_some() {
            return Err(cur.err("positional index is only allowed on the last segment"));
        }
        if cur.eat("[") {
            let kind = cur.take_until(&['=', ']']);
            if !is_ident(kind) {
                return Err(cur.err(format!("invalid node kind '{kind}'")));
            }
            cur.expect("=")?;
            let name = cur.take_until(&[']']);
            if !name.is_empty() && !is_dotted_ident(name) {
                return Err(cur.err(format!("invalid name '{name}'")));
            }
            cur.expect("]")?;
            path.push(AstSegment::new(kind, name));
            if cur.eat("[") {
                index = Some(cur.int()?);
                cur.expect("]")?;
            }
        } else {
            let kind = cur.take_until(&['[', '/']);
            if !is_ident(kind) {
                return Err(cur.err("expected '[kind=name]' or 'kind[index]'"));
            }
            cur.expect("[")?;
            index = Some(cur.int()?);
            cur.expect("]")?;
            path.push(AstSegment::new(kind, ""));
        }
        if !cur.eat("/") {
            break;
        }
    }
    Ok(Selector::AstPath { path, index })
}

fn parse_anchor(cur: &mut Cursor<'_>) -> Result<Selector, LanserError> {
    let raw = cur.take_until(&['#', '"']);
    let uri = canonical_path(raw, cur)?;
    cur.expect("#")?;
    cur.expect("\"")?;
    let mut snippet = String::new();
    let mut pending: Vec<u8> = Vec::new();
    let flush = |pending: &mut Vec<u8>, snippet: &mut String, cur: &Cursor<'_>| -> Result<(), LanserError> {
        if !pending.is_empty() {
            let s = std::str::from_utf8(pending).map_err(|_| cur.err("percent escape decodes to invalid UTF-8"))?;
            snippet.push_str(s);
            pending.clear();
        }
        Ok(())
    };
    loop {
        let Some(c) = cur.bump() else {
            return Err(cur.err("unterminated snippet"));
        };
        match c {
            '"' => break,
            '%' => {
                let b = cur.rest().as_bytes();
                match (
                    b.first().copied().and_then(hex_val),
                    b.get(1).copied().and_then(hex_val),
                ) {
                    (Some(h), Some(l)) => {
                        pending.push(h << 4 | l);
                        cur.pos += 2;
                    }
                    _ => return Err(cur.err("malformed percent escape")),
                }
                continue;
            }
            '\\' if matches!(cur.peek(), Some('"') | Some('/')) => {
                flush(&mut pending, &mut snippet, cur)?;
                snippet.push(cur.bump().unwrap_or_default());
                continue;
            }
            _ => {
                flush(&mut pending, &mut snippet, cur)?;
                snippet.push(c);
            }
        }
    }
    flush(&mut pending, &mut snippet, cur)?;
    if snippet.is_empty() {
        return Err(cur.err("anchor snippet is empty"));
    }
    let mut ctx = DEFAULT_ANCHOR_CTX;
    let mut hash = None;
    for (k, v) in parse_query(cur, &["ctx", "hash"])? {
        match k {
            "ctx" => ctx = query_u32(cur, v)?,
            _ => {
                validate_hash(v).map_err(|m| cur.err(m))?;
                hash = Some(v.to_string());
            }
        }
    }
    Ok(Selector::Anchor {
        uri,
        snippet,
        ctx,
        hash,
    })
}

// ---------------------------------------------------------------------------
// encodings

/// Re-expresses a 1-based column of `line_text` from one encoding to another.
/// Lines pass through unchanged.
pub fn convert_position(
    pos: (u32, u32),
    from: IndexingMode,
    to: IndexingMode,
    line_text: &str,
) -> Result<(u32, u32), LanserError> {
    let (line, col) = pos;
    if col < 1 {
        return Err(LanserError::new(ErrorCode::IndexingMismatch, "column must be >= 1"));
    }
    let target = col - 1;
    let mut seen_from = 0u32;
    let mut seen_to = 0u32;
    let mut chars = line_text.chars();
    while seen_from < target {
        let Some(c) = chars.next() else {
            return Err(LanserError::new(
                ErrorCode::IndexingMismatch,
                format!("column {col} ({from}) is past the end of the line"),
            ));
        };
        seen_from += from.width(c);
        seen_to += to.width(c);
    }
    if seen_from != target {
        return Err(LanserError::new(
            ErrorCode::IndexingMismatch,
            format!("column {col} ({from}) falls inside a multi-unit character"),
        ));
    }
    Ok((line, seen_to + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PositionSpec {
        parse_selector(s).unwrap_or_else(|e| panic!("{s}: {e}"))
    }

    #[test]
    fn cursor_form() {
        assert_eq!(
            p("src/app.py@L42:C7").selector,
            Selector::Cursor {
                uri: "src/app.py".into(),
                line: 42,
                col: 7,
                indexing: IndexingMode::Utf16
            }
        );
        assert_eq!(print_selector(&p("src/app.py@L42:C7")), "src/app.py@L42:C7");
    }

    #[test]
    fn range_form() {
        let spec = p("src/app.py@R(42,7->44,1)");
        assert_eq!(
            spec.selector,
            Selector::Range {
                uri: "src/app.py".into(),
                start: LineCol::new(42, 7),
                end: LineCol::new(44, 1),
                indexing: IndexingMode::Utf16
            }
        );
        assert_eq!(print_selector(&spec), "src/app.py@R(42,7->44,1)");
        assert!(parse_selector("a.py@R(5,1->4,1)").is_err());
    }

    #[test]
    fn symbolic_forms() {
        assert_eq!(
            p("py://pkg.mod#Class.method:body").selector,
            Selector::Symbolic {
                module: "pkg.mod".into(),
                qualname: "Class.method".into(),
                role: Role::Body,
                overload: 0
            }
        );
        let sig = PositionSpec::from(Selector::Symbolic {
            module: "pkg.mod".into(),
            qualname: "function_name".into(),
            role: Role::Sig,
            overload: 0,
        });
        assert_eq!(print_selector(&sig), "py://pkg.mod#function_name:sig");
        assert_eq!(print_selector(&p("py://m#f:def")), "py://m#f");
        let ov = p("py://m#f:sig?overload=2");
        assert!(matches!(
            ov.selector,
            Selector::Symbolic {
                overload: 2,
                role: Role::Sig,
                ..
            }
        ));
    }

    #[test]
    fn qualname_ending_in_role_keyword_keeps_explicit_def() {
        let spec = PositionSpec::from(Selector::Symbolic {
            module: "m".into(),
            qualname: "Outer:body".into(),
            role: Role::Def,
            overload: 0,
        });
        let s = print_selector(&spec);
        assert_eq!(s, "py://m#Outer:body:def");
        assert_eq!(p(&s), spec);
    }

    #[test]
    fn ast_path_form() {
        let spec = PositionSpec::from(Selector::AstPath {
            path: vec![
                AstSegment::new("module", "pkg.mod"),
                AstSegment::new("class", "Class"),
                AstSegment::new("def", "method"),
                AstSegment::new("name", ""),
            ],
            index: Some(1),
        });
        let s = print_selector(&spec);
        assert_eq!(s, "ast://[module=pkg.mod]/[class=Class]/[def=method]/name[1]");
        assert_eq!(p(&s), spec);
        assert!(parse_selector("ast://name[1]/[def=f]").is_err());
    }

    #[test]
    fn anchor_form() {
        let spec = p("anchor://src/app.py#\"def load_data(\"?ctx=24");
        assert_eq!(
            spec.selector,
            Selector::Anchor {
                uri: "src/app.py".into(),
                snippet: "def load_data(".into(),
                ctx: 24,
                hash: None
            }
        );
        assert_eq!(print_selector(&spec), "anchor://src/app.py#\"def%20load_data(\"");
        let esc = p(r#"anchor://a.py#"say \"hi\" a\/b %23""#);
        assert!(matches!(&esc.selector, Selector::Anchor { snippet, .. } if snippet == "say \"hi\" a/b #"));
    }

    #[test]
    fn anchor_escaping_closure() {
        for snippet in ["#", "?", "%", "\"", " ", "a\\", "x\\/y", "\\\"", "tab\there", "%41"] {
            let spec = PositionSpec::from(Selector::Anchor {
                uri: "dir with space/f#1.py".into(),
                snippet: snippet.into(),
                ctx: 3,
                hash: Some(snippet_hash(snippet)),
            });
            assert_eq!(p(&print_selector(&spec)), spec, "{snippet:?}");
        }
    }

    #[test]
    fn windows_paths_canonicalize() {
        let spec = p(r"c:\work\app.py@L1:C1");
        assert_eq!(spec.uri(), Some("file:///C:/work/app.py"));
        assert_eq!(p("file:///d:/x.py@L1:C1").uri(), Some("file:///D:/x.py"));
        assert_eq!(print_selector(&spec), "file:///C:/work/app.py@L1:C1");
    }

    #[test]
    fn syntax_errors_carry_position() {
        for bad in [
            "src/app.py@@L1",
            "",
            "py://#f",
            "py://m#",
            "py://m#f:",
            "anchor://a.py#\"\"",
            "anchor://a.py#\"x",
            "a.py@L0x:C1",
            "a.py@L1:C1?indexing=latin1",
            "ftp://x@L1:C1",
            "a.py@L1:C1 trailing",
        ] {
            let err = parse_selector(bad).expect_err(bad);
            if bad.ends_with("latin1") {
                assert_eq!(err.code, ErrorCode::IndexingUnsupported);
            } else {
                assert_eq!(err.code, ErrorCode::BadSelectorSyntax, "{bad}");
                assert!(err.message.contains("column"), "{}", err.message);
            }
        }
    }

    #[test]
    fn convert_examples() {
        let ascii = "hello world";
        assert_eq!(
            convert_position((3, 5), IndexingMode::Utf8, IndexingMode::Utf16, ascii).unwrap(),
            (3, 5)
        );
        // enumerate code units of "𝕏x|": 𝕏 is 2 UTF-16 units, 4 UTF-8 bytes
        let line = "𝕏x|";
        let units16: u32 = "𝕏x".encode_utf16().count() as u32;
        assert_eq!(units16, 3);
        assert_eq!(
            convert_position((1, 3), IndexingMode::Codepoint, IndexingMode::Utf16, line).unwrap(),
            (1, units16 + 1)
        );
        for from in [IndexingMode::Utf8, IndexingMode::Utf16, IndexingMode::Codepoint] {
            for to in [IndexingMode::Utf8, IndexingMode::Utf16, IndexingMode::Codepoint] {
                assert_eq!(convert_position((9, 1), from, to, line).unwrap(), (9, 1));
            }
        }
        let err = convert_position((1, 2), IndexingMode::Utf16, IndexingMode::Utf8, line).unwrap_err();
        assert_eq!(err.code, ErrorCode::IndexingMismatch);
        let err = convert_position((1, 99), IndexingMode::Utf16, IndexingMode::Utf8, line).unwrap_err();
        assert_eq!(err.code, ErrorCode::IndexingMismatch);
    }

    #[test]
    fn structured_json_shape() {
        let spec = p("py://pkg.mod#Class.method:sig");
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"kind":"symbol","module":"pkg.mod","qualname":"Class.method","role":"sig","overload":0})
        );
        let mut pinned = spec.clone();
        pinned.doc_version = Some("3".into());
        let back: PositionSpec = serde_json::from_value(serde_json::to_value(&pinned).unwrap()).unwrap();
        assert_eq!(back, pinned);
    }
}
