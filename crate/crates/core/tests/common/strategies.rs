//! Generators shared by the property and acceptance suites.

use lanser_core::selector::{AstSegment, IndexingMode, LineCol, PositionSpec, Role, Selector};
use proptest::prelude::*;
use proptest::sample::select;

const PATH_CHARS: &[char] = &[
    'a', 'b', 'z', 'Q', '0', '9', '_', '-', '.', '/', '#', '?', '%', '"', ' ', '@', '\\', '\t', '\n', '\u{1}',
    '\u{7f}', 'é', '中', '😀', ':', '&', '=', '(', ')', ',', '>',
];
const SNIPPET_CHARS: &[char] = &[
    'a', 'x', '=', '(', ')', ':', '.', '/', '#', '?', '%', '"', ' ', '@', '\\', '\t', '\n', '\r', '\u{0}', 'é', '中',
    '😀', '&', '\'', ']', '[',
];
const IDENTS: &[&str] = &["a", "_x", "foo", "Bar9", "é", "数据", "def", "sig", "body", "doc", "_"];

fn text(pool: &'static [char], max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(select(pool), 1..max).prop_map(|v| v.into_iter().collect())
}

fn path() -> impl Strategy<Value = String> {
    prop_oneof![
        8 => text(PATH_CHARS, 14),
        1 => text(PATH_CHARS, 10).prop_map(|s| format!("file:///{s}")),
    ]
}

fn dotted(sep: &'static [&'static str]) -> impl Strategy<Value = String> {
    (
        prop::collection::vec(select(IDENTS), 1..4),
        prop::collection::vec(select(sep), 3),
    )
        .prop_map(|(parts, seps)| {
            let mut s = parts[0].to_string();
            for (i, p) in parts[1..].iter().enumerate() {
                s.push_str(seps[i]);
                s.push_str(p);
            }
            s
        })
}

fn indexing() -> impl Strategy<Value = IndexingMode> {
    select(vec![IndexingMode::Utf16, IndexingMode::Utf8, IndexingMode::Codepoint])
}

fn coord() -> impl Strategy<Value = u32> {
    prop_oneof![1u32..5, 1u32..100_000, Just(u32::MAX)]
}

fn selector() -> impl Strategy<Value = Selector> {
    let cursor = (path(), coord(), coord(), indexing()).prop_map(|(uri, line, col, indexing)| Selector::Cursor {
        uri,
        line,
        col,
        indexing,
    });
    let range = (path(), coord(), coord(), coord(), coord(), indexing()).prop_map(|(uri, a, b, c, d, indexing)| {
        let (start, end) = {
            let (x, y) = (LineCol::new(a, b), LineCol::new(c, d));
            if x <= y {
                (x, y)
            } else {
                (y, x)
            }
        };
        Selector::Range {
            uri,
            start,
            end,
            indexing,
        }
    });
    let symbolic = (
        dotted(&["."]),
        dotted(&[".", ":"]),
        select(Role::ALL.to_vec()),
        prop_oneof![Just(0u32), 1u32..9],
    )
        .prop_map(|(module, qualname, role, overload)| Selector::Symbolic {
            module,
            qualname,
            role,
            overload,
        });
    let segment = (select(IDENTS), prop_oneof![Just(String::new()), dotted(&["."])])
        .prop_map(|(kind, name)| AstSegment::new(kind, name));
    let ast = (prop::collection::vec(segment, 1..4), prop::option::of(0u32..20))
        .prop_map(|(path, index)| Selector::AstPath { path, index });
    let anchor = (
        path(),
        text(SNIPPET_CHARS, 16),
        prop_oneof![Just(24u32), 0u32..200],
        any::<bool>(),
    )
        .prop_map(|(uri, snippet, ctx, hashed)| {
            let hash = hashed.then(|| lanser_core::selector::snippet_hash(&snippet));
            Selector::Anchor {
                uri,
                snippet,
                ctx,
                hash,
            }
        });
    prop_oneof![cursor, range, symbolic, ast, anchor]
}

pub fn valid_spec() -> impl Strategy<Value = PositionSpec> {
    selector()
        .prop_map(PositionSpec::from)
        .prop_filter("invalid spec", |s| s.validate().is_ok())
}
