use crate::docmodel::{render_table, StructuredDocument};
use crate::text::{char_len, split_sentences};

use super::Anchor;

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub anchor: Anchor,
    pub text: String,
}

/// Smallest accepted `max_chars`.
pub const MIN_CHUNK_CHARS: usize = 200;

/// Pack paragraph blocks greedily into chunks of at most `max_chars`
/// characters, joining blocks with a newline. A block longer than
/// `max_chars` is flushed on its own, split at sentence boundaries, and its
/// sentences are packed the same way (a single sentence longer than the
/// limit stays whole).
pub fn chunk_text(doc: &StructuredDocument, max_chars: usize) -> Vec<Chunk> {
    assert!(max_chars >= MIN_CHUNK_CHARS, "max_chars must be >= {MIN_CHUNK_CHARS}");
    let mut out = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let mut cur_len = 0usize;
    let mut first = 0usize;

    let flush = |cur: &mut Vec<&str>, cur_len: &mut usize, first: usize, last: usize, out: &mut Vec<Chunk>| {
        if cur.is_empty() {
            return;
        }
        out.push(Chunk {
            anchor: Anchor::Blocks { first, last },
            text: cur.join("\n"),
        });
        cur.clear();
        *cur_len = 0;
    };

    for (i, block) in doc.blocks.iter().enumerate() {
        let len = char_len(&block.text);
        if len > max_chars {
            flush(&mut cur, &mut cur_len, first, i.saturating_sub(1), &mut out);
            for text in pack(split_sentences(&block.text), " ", max_chars) {
                out.push(Chunk {
                    anchor: Anchor::Blocks { first: i, last: i },
                    text,
                });
            }
            continue;
        }
        let needed = if cur.is_empty() { len } else { cur_len + 1 + len };
        if needed > max_chars {
            flush(&mut cur, &mut cur_len, first, i - 1, &mut out);
        }
        if cur.is_empty() {
            first = i;
            cur_len = len;
        } else {
            cur_len += 1 + len;
        }
        cur.push(&block.text);
    }
    let last = doc.blocks.len().saturating_sub(1);
    flush(&mut cur, &mut cur_len, first, last, &mut out);
    out
}

fn pack(pieces: Vec<&str>, sep: &str, max_chars: usize) -> Vec<String> {
    let sep_len = char_len(sep);
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_len = 0;
    for p in pieces {
        let len = char_len(p);
        if !cur.is_empty() && cur_len + sep_len + len > max_chars {
            out.push(std::mem::take(&mut cur));
            cur_len = 0;
        }
        if !cur.is_empty() {
            cur.push_str(sep);
            cur_len += sep_len;
        }
        cur.push_str(p);
        cur_len += len;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Plain text of the whole document as a basic extractor would see it:
/// paragraphs, then each table rendered row-wise, separated by newlines.
pub fn naive_text(doc: &StructuredDocument) -> String {
    let mut parts: Vec<String> = doc.blocks.iter().map(|b| b.text.clone()).collect();
    parts.extend(doc.tables.iter().map(render_table));
    parts.join("\n")
}

/// Fixed-size character windows over [`naive_text`], ignoring structure.
pub fn naive_chunks(doc: &StructuredDocument, window_chars: usize) -> Vec<Chunk> {
    assert!(window_chars > 0);
    let chars: Vec<char> = naive_text(doc).chars().collect();
    chars
        .chunks(window_chars)
        .enumerate()
        .map(|(i, w)| Chunk {
            anchor: Anchor::Chars {
                start: i * window_chars,
                end: i * window_chars + w.len(),
            },
            text: w.iter().collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::docmodel::{Block, OutlineNode};
    use crate::text::normalize_whitespace;
    use proptest::prelude::*;

    fn doc(blocks: &[String]) -> StructuredDocument {
        let mut outline = OutlineNode::root();
        outline.span = 0..blocks.len();
        StructuredDocument {
            doc_id: "d".into(),
            company: "c".into(),
            industry: "i".into(),
            market_cap_mhkd: None,
            outline,
            blocks: blocks
                .iter()
                .map(|t| Block {
                    text: t.clone(),
                    page: 1,
                })
                .collect(),
            tables: vec![],
        }
    }

    #[test]
    fn greedy_packing_of_three_hundred_char_blocks() {
        let b = "x".repeat(100);
        let chunks = chunk_text(&doc(&[b.clone(), b.clone(), b.clone()]), 250);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].anchor, Anchor::Blocks { first: 0, last: 1 });
        assert_eq!(chunks[0].text, format!("{b}\n{b}"));
        assert_eq!(chunks[1].anchor, Anchor::Blocks { first: 2, last: 2 });
    }

    #[test]
    fn short_block_is_one_identical_chunk() {
        let chunks = chunk_text(&doc(&["0123456789".into()]), 1200);
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "0123456789");
    }

    #[test]
    fn long_block_splits_into_sentences() {
        let sentence = |c: char| format!("{}.", c.to_string().repeat(199));
        let block = format!("{} {} {}", sentence('a'), sentence('b'), sentence('c'));
        assert_eq!(block.len(), 602);
        let chunks = chunk_text(&doc(&[block]), 250);
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.text.len() == 200));
        assert!(chunks.iter().all(|c| c.anchor == Anchor::Blocks { first: 0, last: 0 }));
    }

    #[test]
    fn naive_windows_cover_text() {
        let d = doc(&["abcdef".into(), "ghij".into()]);
        let chunks = naive_chunks(&d, 4);
        let texts: Vec<_> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, vec!["abcd", "ef\ng", "hij"]);
    }

    proptest! {
        #[test]
        fn chunks_preserve_text_and_respect_limit(
            blocks in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,60}[.!?]?( [A-Z][a-z]{0,6}( [a-z]{1,9}){0,40}\\.){0,4}", 1..12),
            max in 200usize..600,
        ) {
            let d = doc(&blocks);
            let chunks = chunk_text(&d, max);
            let joined_chunks = normalize_whitespace(&chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" "));
            let joined_blocks = normalize_whitespace(&blocks.join(" "));
            prop_assert_eq!(joined_chunks, joined_blocks);
            for c in &chunks {
                let Anchor::Blocks { first, last } = c.anchor else { panic!() };
                prop_assert!(first <= last && last < blocks.len());
                if char_len(&c.text) > max {
                    // only a single oversized sentence may exceed the limit
                    prop_assert_eq!(first, last);
                    prop_assert_eq!(split_sentences(&c.text).len(), 1);
                }
            }
        }
    }
}
