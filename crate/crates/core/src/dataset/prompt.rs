//! Glyph prompt format.
//!
//! Canonical form, one clause per box joined by single spaces:
//!
//! ```text
//! Text "<text>" in [font-color-<c>], [font-type-<f>].
//! ```
//!
//! Inside the quotes `"` and `\` are backslash-escaped. The reader also
//! accepts the clause without the comma between the two tokens.

use serde::{Deserialize, Serialize};

use super::{DatasetError, FontCodebook};
use crate::render::GlyphDocument;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEntry {
    pub text: String,
    pub color_id: usize,
    pub font_id: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub entries: Vec<PromptEntry>,
}

impl PromptSpec {
    pub fn from_document(doc: &GlyphDocument) -> Self {
        Self {
            entries: doc
                .boxes
                .iter()
                .map(|b| PromptEntry {
                    text: b.text.clone(),
                    color_id: b.color_id,
                    font_id: b.font_id,
                })
                .collect(),
        }
    }

    pub fn to_prompt_string(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let mut clause = String::with_capacity(e.text.len() + 48);
                clause.push_str("Text \"");
                for c in e.text.chars() {
                    if c == '"' || c == '\\' {
                        clause.push('\\');
                    }
                    clause.push(c);
                }
                clause.push_str(&format!(
                    "\" in [font-color-{}], [font-type-{}].",
                    e.color_id, e.font_id
                ));
                clause
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn serialize_prompt(doc: &GlyphDocument) -> String {
    PromptSpec::from_document(doc).to_prompt_string()
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> DatasetError {
        DatasetError::Parse {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn expect(&mut self, lit: &str) -> Result<(), DatasetError> {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {lit:?}")))
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        let hit = self.rest().starts_with(lit);
        if hit {
            self.pos += lit.len();
        }
        hit
    }

    fn number(&mut self) -> Result<usize, DatasetError> {
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.err("expected a token index"));
        }
        let value = self.rest()[..digits]
            .parse()
            .map_err(|_| self.err("token index out of range"))?;
        self.pos += digits;
        Ok(value)
    }

    fn quoted(&mut self) -> Result<String, DatasetError> {
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, e @ ('"' | '\\'))) => out.push(e),
                    _ => {
                        self.pos += i;
                        return Err(self.err("bad escape"));
                    }
                },
                c => out.push(c),
            }
        }
        Err(self.err("unterminated text"))
    }
}

/// Parses a prompt produced by [`serialize_prompt`] (or the comma-less
/// variant). Errors carry the byte offset where parsing stopped.
pub fn parse_prompt(s: &str) -> Result<PromptSpec, DatasetError> {
    let mut cur = Cursor { src: s, pos: 0 };
    let mut entries = Vec::new();
    while cur.pos < s.len() {
        if !entries.is_empty() {
            cur.expect(" ")?;
        }
        cur.expect("Text \"")?;
        let text = cur.quoted()?;
        cur.expect(" in [font-color-")?;
        let color_id = cur.number()?;
        cur.expect("]")?;
        if !cur.eat(", ") {
            cur.expect(" ")?;
        }
        cur.expect("[font-type-")?;
        let font_id = cur.number()?;
        cur.expect("].")?;
        entries.push(PromptEntry {
            text,
            color_id,
            font_id,
        });
    }
    Ok(PromptSpec { entries })
}

/// Encoder input unit: a text byte or a reference to a codebook embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptToken {
    Byte(u8),
    Color(usize),
    Font(usize),
}

/// Byte tokens for each entry's text followed by its color and font
/// embedding slots, in entry order.
pub fn resolve_codebook_tokens(
    spec: &PromptSpec,
    codebook: &FontCodebook,
) -> Result<Vec<PromptToken>, DatasetError> {
    let mut out = Vec::new();
    for e in &spec.entries {
        codebook.color_embedding(e.color_id)?;
        codebook.font_embedding(e.font_id)?;
        out.extend(e.text.bytes().map(PromptToken::Byte));
        out.push(PromptToken::Color(e.color_id));
        out.push(PromptToken::Font(e.font_id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{Align, BBox, CodebookKind, TextBox};
    use proptest::prelude::*;

    fn doc(entries: &[(&str, usize, usize)]) -> GlyphDocument {
        let mut d = GlyphDocument::new(100, 100);
        for &(t, c, f) in entries {
            d.boxes.push(TextBox {
                bbox: BBox::new(0, 0, 1, 1),
                text: t.into(),
                font_id: f,
                color_id: c,
                align: Align::Left,
            });
        }
        d
    }

    #[test]
    fn canonical_example() {
        let s = serialize_prompt(&doc(&[("Happy Graduation Kim!", 19, 181)]));
        assert_eq!(
            s,
            r#"Text "Happy Graduation Kim!" in [font-color-19], [font-type-181]."#
        );
        let spec = parse_prompt(&s).unwrap();
        assert_eq!(
            spec.entries,
            vec![PromptEntry {
                text: "Happy Graduation Kim!".into(),
                color_id: 19,
                font_id: 181
            }]
        );
        assert_eq!(serialize_prompt(&doc(&[])), "");
        assert_eq!(parse_prompt("").unwrap().entries.len(), 0);
    }

    #[test]
    fn two_clauses_and_comma_less_form() {
        let s = r#"Text "oh! the places you'll go!" in [font-color-39], [font-type-90]. Text "Happy Graduation Kim!" in [font-color-19] [font-type-181]."#;
        let spec = parse_prompt(s).unwrap();
        assert_eq!(spec.entries.len(), 2);
        assert_eq!(
            spec.entries[1],
            PromptEntry {
                text: "Happy Graduation Kim!".into(),
                color_id: 19,
                font_id: 181
            }
        );
        assert_eq!(
            parse_prompt(r#"Text "a" in [font-color-0], [font-type-0]."#)
                .unwrap()
                .entries[0],
            PromptEntry {
                text: "a".into(),
                color_id: 0,
                font_id: 0
            }
        );
    }

    #[test]
    fn errors_point_at_the_offending_token() {
        let s = r#"Text "a" in [font-color-x]"#;
        match parse_prompt(s) {
            Err(DatasetError::Parse { offset, .. }) => assert_eq!(offset, s.rfind('x').unwrap()),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_prompt(r#"Text "a in"#),
            Err(DatasetError::Parse { .. })
        ));
        assert!(matches!(
            parse_prompt("Txt"),
            Err(DatasetError::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn escaping() {
        let d = doc(&[(r#"say "hi" \o/"#, 1, 2)]);
        let s = serialize_prompt(&d);
        assert_eq!(
            s,
            r#"Text "say \"hi\" \\o/" in [font-color-1], [font-type-2]."#
        );
        assert_eq!(parse_prompt(&s).unwrap().entries[0].text, r#"say "hi" \o/"#);
    }

    #[test]
    fn token_resolution() {
        let cb = FontCodebook::standard(0);
        let spec = PromptSpec {
            entries: vec![PromptEntry {
                text: "a".into(),
                color_id: 0,
                font_id: 0,
            }],
        };
        assert_eq!(
            resolve_codebook_tokens(&spec, &cb).unwrap(),
            vec![
                PromptToken::Byte(b'a'),
                PromptToken::Color(0),
                PromptToken::Font(0)
            ]
        );
        let bad = PromptSpec {
            entries: vec![PromptEntry {
                text: "a".into(),
                color_id: 0,
                font_id: 512,
            }],
        };
        assert_eq!(
            resolve_codebook_tokens(&bad, &cb),
            Err(DatasetError::UnknownCodebookId {
                kind: CodebookKind::Font,
                id: 512
            })
        );
    }

    proptest! {
        #[test]
        fn roundtrip_and_positional_tokens(entries in prop::collection::vec(("[ -~]{1,20}", 0usize..100, 0usize..512), 0..6)) {
            let spec = PromptSpec {
                entries: entries.iter().map(|(t, c, f)| PromptEntry { text: t.clone(), color_id: *c, font_id: *f }).collect(),
            };
            let s = spec.to_prompt_string();
            prop_assert_eq!(parse_prompt(&s).unwrap(), spec.clone());

            let cb = FontCodebook::standard(0);
            let toks = resolve_codebook_tokens(&spec, &cb).unwrap();
            let expected_len: usize = spec.entries.iter().map(|e| e.text.len() + 2).sum();
            prop_assert_eq!(toks.len(), expected_len);
            let mut at = 0;
            for e in &spec.entries {
                for b in e.text.bytes() {
                    prop_assert_eq!(toks[at], PromptToken::Byte(b));
                    at += 1;
                }
                prop_assert_eq!(toks[at], PromptToken::Color(e.color_id));
                prop_assert_eq!(toks[at + 1], PromptToken::Font(e.font_id));
                at += 2;
            }
        }
    }
}
