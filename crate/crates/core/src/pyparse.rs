//! Structural parser for the subset of Python that selector resolution
//! needs: `class`/`def` nesting, signature/body/docstring extents, top-level
//! imports and name tokens. Nothing is evaluated; dynamic constructs are
//! invisible.
//!
//! All offsets are byte offsets into the source.

use serde::Serialize;

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DefKind {
    Class,
    Def,
}

impl DefKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefKind::Class => "class",
            DefKind::Def => "def",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Definition {
    pub kind: DefKind,
    pub name: String,
    pub name_span: (usize, usize),
    /// First decorator line, or the keyword when undecorated.
    pub decorated_start: usize,
    /// The `def`/`async`/`class` keyword.
    pub start: usize,
    /// One past the header colon.
    pub sig_end: usize,
    pub body: (usize, usize),
    pub end: usize,
    pub doc: Option<(usize, usize)>,
    pub children: Vec<Definition>,
}

impl Definition {
    /// Depth-first walk with the chain of enclosing definitions.
    pub fn walk<'a>(&'a self, chain: &mut Vec<&'a Definition>, f: &mut dyn FnMut(&[&'a Definition])) {
        chain.push(self);
        f(chain);
        for c in &self.children {
            c.walk(chain, f);
        }
        chain.pop();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Import {
    /// Source module as written, relative imports keep their leading dots.
    pub module: String,
    /// `(imported name, bound alias)`; empty for plain `import x`.
    pub names: Vec<(String, String)>,
    /// For `import a.b as c`: the alias bound to the module.
    pub alias: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedModule {
    pub defs: Vec<Definition>,
    pub imports: Vec<Import>,
    /// Identifier tokens outside strings and comments, keywords excluded.
    pub names: Vec<(usize, usize)>,
}

impl ParsedModule {
    /// Chain of definitions enclosing `offset`, outermost first.
    pub fn enclosing(&self, offset: usize) -> Vec<&Definition> {
        let mut chain = Vec::new();
        let mut level = &self.defs;
        while let Some(d) = level.iter().find(|d| d.decorated_start <= offset && offset <= d.end) {
            chain.push(d);
            level = &d.children;
        }
        chain
    }

    /// Definition whose name token covers `offset`.
    pub fn definition_named_at(&self, offset: usize) -> Option<Vec<&Definition>> {
        let mut found = None;
        for d in &self.defs {
            d.walk(&mut Vec::new(), &mut |chain| {
                let last = chain[chain.len() - 1];
                if found.is_none() && last.name_span.0 <= offset && offset <= last.name_span.1 {
                    found = Some(chain.to_vec());
                }
            });
        }
        found
    }
}

#[derive(Debug, Clone)]
struct LogicalLine {
    start: usize,
    end: usize,
    indent: usize,
    first_colon: Option<usize>,
    strings: Vec<(usize, usize)>,
    /// End of the last token, comments excluded.
    code_end: usize,
}

fn is_ident_start(c: char) -> bool {
    c == '_' || unicode_ident::is_xid_start(c)
}

fn string_prefix_len(b: &[u8], i: usize) -> Option<usize> {
    // r, b, u, f, rb, br, fr, rf in any case
    let mut j = i;
    while j < b.len() && j - i < 2 && matches!(b[j].to_ascii_lowercase(), b'r' | b'b' | b'u' | b'f') {
        j += 1;
    }
    if j < b.len() && (b[j] == b'"' || b[j] == b'\'') {
        Some(j - i)
    } else {
        None
    }
}

/// Returns one past the closing quote (or end of line/file if unterminated).
fn skip_string(b: &[u8], mut i: usize) -> usize {
    let q = b[i];
    let triple = i + 2 < b.len() && b[i + 1] == q && b[i + 2] == q;
    if triple {
        i += 3;
        while i < b.len() {
            if b[i] == b'\\' {
                i += 2;
            } else if b[i] == q && i + 2 < b.len() && b[i + 1] == q && b[i + 2] == q {
                return i + 3;
            } else {
                i += 1;
            }
        }
        b.len()
    } else {
        i += 1;
        while i < b.len() {
            match b[i] {
                b'\\' => i += 2,
                b'\n' => return i,
                c if c == q => return i + 1,
                _ => i += 1,
            }
        }
        b.len()
    }
}

fn scan(src: &str) -> (Vec<LogicalLine>, Vec<(usize, usize)>) {
    let b = src.as_bytes();
    let n = b.len();
    let mut lines = Vec::new();
    let mut names = Vec::new();
    let mut cur: Option<LogicalLine> = None;
    let mut depth = 0usize;
    let mut continuation = false;
    let mut i = 0;
    let mut line_start = true;
    while i < n {
        if line_start {
            line_start = false;
            if cur.is_none() {
                let mut col = 0;
                while i < n && matches!(b[i], b' ' | b'\t' | 0x0c) {
                    col = if b[i] == b'\t' { (col / 8 + 1) * 8 } else { col + 1 };
                    i += 1;
                }
                if i >= n {
                    break;
                }
                if !matches!(b[i], b'\n' | b'\r' | b'#') {
                    cur = Some(LogicalLine {
                        start: i,
                        end: i,
                        indent: col,
                        first_colon: None,
                        strings: Vec::new(),
                        code_end: i,
                    });
                }
                continue;
            }
        }
        let c = b[i];
        match c {
            b'#' => {
                while i < n && b[i] != b'\n' {
                    i += 1;
                }
            }
            b'\n' => {
                if depth == 0 && !continuation {
                    if let Some(mut l) = cur.take() {
                        l.end = l.code_end;
                        lines.push(l);
                    }
                }
                continuation = false;
                line_start = true;
                i += 1;
            }
            b'\\'
                if matches!(b.get(i + 1), Some(b'\n'))
                    || (b.get(i + 1) == Some(&b'\r') && b.get(i + 2) == Some(&b'\n')) =>
            {
                continuation = true;
                i += 1;
            }
            b' ' | b'\t' | b'\r' | 0x0c => i += 1,
            b'"' | b'\'' => {
                let end = skip_string(b, i);
                if let Some(l) = cur.as_mut() {
                    l.strings.push((i, end));
                    l.code_end = end;
                }
                i = end;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('\0');
                if is_ident_start(ch) {
                    if let Some(p) = string_prefix_len(b, i) {
                        let end = skip_string(b, i + p);
                        if let Some(l) = cur.as_mut() {
                            l.strings.push((i, end));
                            l.code_end = end;
                        }
                        i = end;
                        continue;
                    }
                    let mut j = i + ch.len_utf8();
                    while let Some(nc) = src[j..].chars().next() {
                        if unicode_ident::is_xid_continue(nc) {
                            j += nc.len_utf8();
                        } else {
                            break;
                        }
                    }
                    if !KEYWORDS.contains(&&src[i..j]) {
                        names.push((i, j));
                    }
                    if let Some(l) = cur.as_mut() {
                        l.code_end = j;
                    }
                    i = j;
                    continue;
                }
                match c {
                    b'(' | b'[' | b'{' => depth += 1,
                    b')' | b']' | b'}' => depth = depth.saturating_sub(1),
                    b':' if depth == 0 => {
                        if let Some(l) = cur.as_mut() {
                            l.first_colon.get_or_insert(i);
                        }
                    }
                    _ => {}
                }
                let w = ch.len_utf8().max(1);
                if let Some(l) = cur.as_mut() {
                    l.code_end = i + w;
                }
                i += w;
            }
        }
    }
    if let Some(mut l) = cur.take() {
        l.end = l.code_end;
        lines.push(l);
    }
    (lines, names)
}

fn header(src: &str, line: &LogicalLine) -> Option<(DefKind, usize, String, (usize, usize))> {
    let text = &src[line.start..line.end];
    let (kind, rest_at) = if let Some(r) = text.strip_prefix("async") {
        let r2 = r.trim_start();
        if r2.len() == r.len() || !r2.starts_with("def") {
            return None;
        }
        (DefKind::Def, line.start + (text.len() - r2.len()) + 3)
    } else if text.starts_with("def") {
        (DefKind::Def, line.start + 3)
    } else if text.starts_with("class") {
        (DefKind::Class, line.start + 5)
    } else {
        return None;
    };
    let after = &src[rest_at..line.end];
    let trimmed = after.trim_start();
    if trimmed.len() == after.len() {
        return None; // `define = 1`, `classes`, ...
    }
    let name_start = rest_at + (after.len() - trimmed.len());
    let name_len: usize = trimmed
        .char_indices()
        .take_while(|&(i, c)| {
            if i == 0 {
                is_ident_start(c)
            } else {
                unicode_ident::is_xid_continue(c)
            }
        })
        .map(|(_, c)| c.len_utf8())
        .sum();
    if name_len == 0 {
        return None;
    }
    let name = src[name_start..name_start + name_len].to_string();
    Some((kind, line.start, name, (name_start, name_start + name_len)))
}

fn is_docstring(src: &str, line: &LogicalLine) -> Option<(usize, usize)> {
    let first = *line.strings.first()?;
    let last = *line.strings.last()?;
    if first.0 != line.start || last.1 != line.end {
        return None;
    }
    // everything between the literals must be whitespace (implicit concatenation)
    let mut prev = first.1;
    for s in &line.strings[1..] {
        if !src[prev..s.0].trim().is_empty() {
            return None;
        }
        prev = s.1;
    }
    Some((first.0, last.1))
}

fn collect(src: &str, lines: &[LogicalLine], mut i: usize, parent_indent: Option<usize>) -> (Vec<Definition>, usize) {
    let mut defs = Vec::new();
    let inside = |l: &LogicalLine| parent_indent.is_none_or(|p| l.indent > p);
    while i < lines.len() && inside(&lines[i]) {
        let line = &lines[i];
        let Some((kind, start, name, name_span)) = header(src, line) else {
            i += 1;
            continue;
        };
        let mut decorated_start = start;
        let mut k = i;
        while k > 0 && lines[k - 1].indent == line.indent && src[lines[k - 1].start..].starts_with('@') {
            k -= 1;
            decorated_start = lines[k].start;
        }
        let colon = line.first_colon.unwrap_or(line.end.saturating_sub(1));
        let sig_end = (colon + 1).min(line.end);
        let inline_body = src[sig_end..line.end].trim();
        if !inline_body.is_empty() {
            let body_start = sig_end + (src[sig_end..line.end].len() - src[sig_end..line.end].trim_start().len());
            let doc = src[body_start..line.end]
                .starts_with(['"', '\''])
                .then_some(())
                .and_then(|_| {
                    line.strings
                        .iter()
                        .find(|s| s.0 == body_start && s.1 == line.end)
                        .copied()
                });
            defs.push(Definition {
                kind,
                name,
                name_span,
                decorated_start,
                start,
                sig_end,
                body: (body_start, line.end),
                end: line.end,
                doc,
                children: Vec::new(),
            });
            i += 1;
            continue;
        }
        let (children, next) = collect(src, lines, i + 1, Some(line.indent));
        let (body, end, doc) = if next > i + 1 {
            let first = &lines[i + 1];
            let last_end = lines[next - 1].end;
            ((first.start, last_end), last_end, is_docstring(src, first))
        } else {
            ((sig_end, sig_end), line.end, None)
        };
        defs.push(Definition {
            kind,
            name,
            name_span,
            decorated_start,
            start,
            sig_end,
            body,
            end,
            doc,
            children,
        });
        i = next;
    }
    (defs, i)
}

fn parse_import(text: &str) -> Option<Import> {
    let text = text.replace(['(', ')', '\\', '\n', '\r'], " ");
    let mut words = text.split_whitespace();
    match words.next()? {
        "import" => {
            let rest: Vec<&str> = words.collect();
            let joined = rest.join(" ");
            // only the first module of `import a, b` is kept per Import; callers
            // get one entry per module via parse_imports
            let first = joined.split(',').next()?.trim().to_string();
            let mut parts = first.split_whitespace();
            let module = parts.next()?.to_string();
            let alias = match (parts.next(), parts.next()) {
                (Some("as"), Some(a)) => Some(a.to_string()),
                _ => None,
            };
            Some(Import {
                module,
                names: Vec::new(),
                alias,
            })
        }
        "from" => {
            let module = words.next()?.to_string();
            if words.next()? != "import" {
                return None;
            }
            let rest: Vec<&str> = words.collect();
            let names = rest
                .join(" ")
                .split(',')
                .filter_map(|item| {
                    let mut p = item.split_whitespace();
                    let name = p.next()?.to_string();
                    let alias = match (p.next(), p.next()) {
                        (Some("as"), Some(a)) => a.to_string(),
                        _ => name.clone(),
                    };
                    Some((name, alias))
                })
                .collect();
            Some(Import {
                module,
                names,
                alias: None,
            })
        }
        _ => None,
    }
}

fn parse_imports(src: &str, line: &LogicalLine) -> Vec<Import> {
    let text = &src[line.start..line.end];
    if let Some(rest) = text.strip_prefix("import") {
        if !rest.starts_with(char::is_whitespace) {
            return Vec::new();
        }
        rest.split(',')
            .filter_map(|m| parse_import(&format!("import {m}")))
            .collect()
    } else if text.starts_with("from") {
        parse_import(text).into_iter().collect()
    } else {
        Vec::new()
    }
}

pub fn parse_module(src: &str) -> ParsedModule {
    let (lines, names) = scan(src);
    let (defs, _) = collect(src, &lines, 0, None);
    let imports = lines
        .iter()
        .filter(|l| l.indent == 0)
        .flat_map(|l| parse_imports(src, l))
        .collect();
    ParsedModule { defs, imports, names }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = r#""""Module doc."""
import os, sys as system
from .helpers import load_data as ld, other
from pkg import (
    a,
    b as bee,
)


@decorator
class Class(Base):
    """Class doc."""

    def method(self, x: int) -> int:
        '''Method doc.'''
        # comment with def fake():
        s = "def not_a_def(): pass"
        return x

    async def amethod(self,
                      y):
        return {
            'k': y,
        }


def function_name(a, b=(1, 2)): return a


def load_data(path):
    if path:
        def inner():
            pass
    return open(path)
"#;

    fn slice(span: (usize, usize)) -> &'static str {
        &SRC[span.0..span.1]
    }

    #[test]
    fn structure() {
        let m = parse_module(SRC);
        let names: Vec<&str> = m.defs.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["Class", "function_name", "load_data"]);
        let class = &m.defs[0];
        assert_eq!(class.kind, DefKind::Class);
        assert!(SRC[class.decorated_start..].starts_with("@decorator"));
        assert_eq!(slice(class.doc.unwrap()), "\"\"\"Class doc.\"\"\"");
        let kids: Vec<&str> = class.children.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(kids, ["method", "amethod"]);
        let method = &class.children[0];
        assert_eq!(
            slice((method.start, method.sig_end)),
            "def method(self, x: int) -> int:"
        );
        assert_eq!(slice(method.doc.unwrap()), "'''Method doc.'''");
        assert!(slice(method.body).starts_with("'''Method doc.'''"));
        assert!(slice(method.body).ends_with("return x"));
        let amethod = &class.children[1];
        assert!(slice((amethod.start, amethod.sig_end)).starts_with("async def amethod(self,"));
        assert!(slice((amethod.start, amethod.sig_end)).ends_with("y):"));
        assert!(slice((amethod.start, amethod.end)).ends_with('}'));
        let f = &m.defs[1];
        assert_eq!(slice(f.body), "return a");
        assert!(f.doc.is_none());
        assert_eq!(m.defs[2].children[0].name, "inner");
    }

    #[test]
    fn imports() {
        let m = parse_module(SRC);
        assert_eq!(m.imports.len(), 4);
        assert_eq!(m.imports[0].module, "os");
        assert_eq!(m.imports[1].alias.as_deref(), Some("system"));
        assert_eq!(m.imports[2].module, ".helpers");
        assert_eq!(m.imports[2].names[0], ("load_data".to_string(), "ld".to_string()));
        assert_eq!(m.imports[3].names[1], ("b".to_string(), "bee".to_string()));
    }

    #[test]
    fn names_skip_strings_comments_keywords() {
        let m = parse_module("x = 'y' # z\ndef f(a): return a\n");
        let toks: Vec<&str> = m
            .names
            .iter()
            .map(|&(s, e)| &"x = 'y' # z\ndef f(a): return a\n"[s..e])
            .collect();
        assert_eq!(toks, ["x", "f", "a", "a"]);
    }

    #[test]
    fn enclosing_chain() {
        let m = parse_module(SRC);
        let off = SRC.find("return x").unwrap();
        let chain: Vec<&str> = m.enclosing(off).iter().map(|d| d.name.as_str()).collect();
        assert_eq!(chain, ["Class", "method"]);
        let name_off = SRC.find("amethod").unwrap() + 2;
        let chain = m.definition_named_at(name_off).unwrap();
        assert_eq!(chain.len(), 2);
    }
}
