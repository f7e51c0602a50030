//! Heading-hierarchy sections and typed blocks.

use serde::{Deserialize, Serialize};

use super::normalize::{is_separator_row, Fence};
use super::MarkdownDoc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heading {
    pub level: u8,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    /// Enclosing headings, outermost first. Empty for the preamble.
    pub heading_path: Vec<Heading>,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Paragraph,
    Table,
    List,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
    /// Header row plus separator row; present iff `kind` is `Table`.
    pub table_header: Option<String>,
}

impl Block {
    fn new(kind: BlockKind, lines: &[&str]) -> Block {
        let text = lines.join("\n");
        let table_header = (kind == BlockKind::Table).then(|| lines[..2].join("\n"));
        Block {
            kind,
            text,
            table_header,
        }
    }
}

/// Parses an ATX heading line (`#` to `######` followed by a space or end).
pub(crate) fn parse_atx_heading(line: &str) -> Option<Heading> {
    let trimmed = line.trim_start();
    let level = trimmed.chars().take_while(|&c| c == '#').count();
    if level == 0 || level > 6 {
        return None;
    }
    let rest = &trimmed[level..];
    if !(rest.is_empty() || rest.starts_with(' ') || rest.starts_with('\t')) {
        return None;
    }
    let mut title = rest.trim();
    // optional closing sequence: " ###"
    let without_hashes = title.trim_end_matches('#');
    if without_hashes.len() != title.len()
        && (without_hashes.is_empty() || without_hashes.ends_with([' ', '\t']))
    {
        title = without_hashes.trim_end();
    }
    Some(Heading {
        level: level as u8,
        title: title.to_string(),
    })
}

/// Splits a normalized document into one section per ATX heading, plus a
/// preamble section when content precedes the first heading.
pub fn parse_sections(doc: &MarkdownDoc) -> Vec<Section> {
    let mut sections = Vec::new();
    let mut path: Vec<Heading> = Vec::new();
    let mut body: Vec<&str> = Vec::new();
    let mut have_heading = false;
    let mut fence: Option<Fence> = None;

    let mut finish = |path: &[Heading], body: &mut Vec<&str>, have_heading: bool| {
        let text = body.join("\n");
        body.clear();
        if have_heading || !text.trim().is_empty() {
            sections.push(Section {
                heading_path: path.to_vec(),
                blocks: split_blocks(&text),
            });
        }
    };

    for line in doc.text.split('\n') {
        if let Some(open) = fence {
            if open.closes(line) {
                fence = None;
            }
            body.push(line);
            continue;
        }
        if let Some(open) = Fence::open(line) {
            fence = Some(open);
            body.push(line);
            continue;
        }
        if let Some(heading) = parse_atx_heading(line) {
            finish(&path, &mut body, have_heading);
            while path.last().is_some_and(|h| h.level >= heading.level) {
                path.pop();
            }
            path.push(heading);
            have_heading = true;
            continue;
        }
        body.push(line);
    }
    finish(&path, &mut body, have_heading);
    sections
}

fn is_blank(line: &str) -> bool {
    line.trim().is_empty()
}

pub(crate) fn is_list_item(line: &str) -> bool {
    let t = line.trim_start();
    let mut chars = t.chars();
    match chars.next() {
        Some('-' | '*' | '+') => matches!(chars.next(), Some(' ' | '\t')),
        Some(c) if c.is_ascii_digit() => {
            let digits = t.chars().take_while(char::is_ascii_digit).count();
            let rest = &t[digits..];
            digits <= 9 && (rest.starts_with(". ") || rest.starts_with(".\t"))
        }
        _ => false,
    }
}

fn starts_table(lines: &[&str], i: usize) -> bool {
    lines[i].contains('|')
        && !is_separator_row(lines[i])
        && i + 1 < lines.len()
        && is_separator_row(lines[i + 1])
}

/// Splits a heading-free section body into paragraph, table, list and code
/// blocks. Every non-blank line lands in exactly one block; blank lines
/// outside code only separate blocks.
pub fn split_blocks(section_body: &str) -> Vec<Block> {
    let lines: Vec<&str> = section_body.split('\n').collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        if is_blank(line) {
            i += 1;
            continue;
        }
        let start = i;
        if let Some(open) = Fence::open(line) {
            i += 1;
            while i < lines.len() {
                let closed = open.closes(lines[i]);
                i += 1;
                if closed {
                    break;
                }
            }
            blocks.push(Block::new(BlockKind::Code, &lines[start..i]));
        } else if starts_table(&lines, i) {
            i += 2;
            while i < lines.len()
                && !is_blank(lines[i])
                && lines[i].contains('|')
                && Fence::open(lines[i]).is_none()
            {
                i += 1;
            }
            blocks.push(Block::new(BlockKind::Table, &lines[start..i]));
        } else if is_list_item(line) {
            i += 1;
            while i < lines.len() && !is_blank(lines[i]) && Fence::open(lines[i]).is_none() {
                let continuation = lines[i].starts_with([' ', '\t']);
                if !(is_list_item(lines[i]) || continuation) {
                    break;
                }
                i += 1;
            }
            blocks.push(Block::new(BlockKind::List, &lines[start..i]));
        } else {
            i += 1;
            while i < lines.len()
                && !is_blank(lines[i])
                && Fence::open(lines[i]).is_none()
                && !is_list_item(lines[i])
                && !starts_table(&lines, i)
            {
                i += 1;
            }
            blocks.push(Block::new(BlockKind::Paragraph, &lines[start..i]));
        }
    }
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::normalize_markdown;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn doc(text: &str) -> MarkdownDoc {
        MarkdownDoc {
            source_id: "s".into(),
            uri: "mem://s".into(),
            text: text.into(),
            fetched_at: Utc.timestamp_millis_opt(0).unwrap(),
        }
    }

    fn titles(s: &Section) -> Vec<&str> {
        s.heading_path.iter().map(|h| h.title.as_str()).collect()
    }

    fn texts(s: &Section) -> Vec<&str> {
        s.blocks.iter().map(|b| b.text.as_str()).collect()
    }

    #[test]
    fn nested_headings() {
        let sections = parse_sections(&doc("# A\np1\n## B\np2"));
        assert_eq!(sections.len(), 2);
        assert_eq!(titles(&sections[0]), vec!["A"]);
        assert_eq!(texts(&sections[0]), vec!["p1"]);
        assert_eq!(titles(&sections[1]), vec!["A", "B"]);
        assert_eq!(texts(&sections[1]), vec!["p2"]);
    }

    #[test]
    fn preamble_section() {
        let sections = parse_sections(&doc("intro\n# A\nx"));
        assert_eq!(sections.len(), 2);
        assert!(sections[0].heading_path.is_empty());
        assert_eq!(texts(&sections[0]), vec!["intro"]);
        assert_eq!(titles(&sections[1]), vec!["A"]);
    }

    #[test]
    fn heading_jumps_keep_actual_levels() {
        let sections = parse_sections(&doc("# A\n#### D\nx\n## B\ny"));
        let levels: Vec<Vec<u8>> = sections
            .iter()
            .map(|s| s.heading_path.iter().map(|h| h.level).collect())
            .collect();
        assert_eq!(levels, vec![vec![1], vec![1, 4], vec![1, 2]]);
    }

    #[test]
    fn headings_inside_code_are_content() {
        let sections = parse_sections(&doc("# A\n```\n# not a heading\n```"));
        assert_eq!(sections.len(), 1);
        assert_eq!(sections[0].blocks[0].kind, BlockKind::Code);
    }

    #[test]
    fn atx_details() {
        assert_eq!(parse_atx_heading("## Title ##").unwrap().title, "Title");
        assert_eq!(parse_atx_heading("# C#").unwrap().title, "C#");
        assert!(parse_atx_heading("#hashtag").is_none());
        assert!(parse_atx_heading("####### seven").is_none());
        assert_eq!(parse_atx_heading("#").unwrap().title, "");
    }

    #[test]
    fn setext_is_paragraph() {
        let sections = parse_sections(&doc("Title\n=====\ntext"));
        assert_eq!(sections.len(), 1);
        assert!(sections[0].heading_path.is_empty());
        assert_eq!(sections[0].blocks[0].kind, BlockKind::Paragraph);
    }

    #[test]
    fn list_block() {
        let blocks = split_blocks("- a\n- b");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].kind, BlockKind::List);
        assert_eq!(blocks[0].text, "- a\n- b");
        assert_eq!(blocks[0].table_header, None);
    }

    #[test]
    fn ordered_list_with_continuation() {
        let blocks = split_blocks("1. one\n continued\n2. two\nafter");
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].kind, BlockKind::List);
        assert_eq!(blocks[0].text, "1. one\n continued\n2. two");
        assert_eq!(blocks[1].kind, BlockKind::Paragraph);
    }

    #[test]
    fn table_block() {
        let blocks = split_blocks("| H |\n|---|\n| 1 |");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].kind, BlockKind::Table);
        assert_eq!(blocks[0].table_header.as_deref(), Some("| H |\n|---|"));
    }

    #[test]
    fn pipe_rows_without_separator_are_paragraph() {
        let blocks = split_blocks("| a |\n| b |");
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].kind, BlockKind::Paragraph);
    }

    // Golden file: inspected once by hand, then frozen.
    #[test]
    fn mixed_body_golden() {
        let body = "Intro text spans\ntwo lines.\n\n| Name | Value |\n|---|---|\n| a | 1 |\n| b | 2 |\n\n```sh\necho   hi\n\n```\n";
        let blocks = split_blocks(body);
        let got: Vec<(BlockKind, &str)> =
            blocks.iter().map(|b| (b.kind, b.text.as_str())).collect();
        assert_eq!(
            got,
            vec![
                (BlockKind::Paragraph, "Intro text spans\ntwo lines."),
                (
                    BlockKind::Table,
                    "| Name | Value |\n|---|---|\n| a | 1 |\n| b | 2 |"
                ),
                (BlockKind::Code, "```sh\necho   hi\n\n```"),
            ]
        );
        assert_eq!(
            blocks[1].table_header.as_deref(),
            Some("| Name | Value |\n|---|---|")
        );
    }

    #[test]
    fn paragraph_interrupted_by_list() {
        let blocks = split_blocks("text\n- item\n* item2");
        let kinds: Vec<BlockKind> = blocks.iter().map(|b| b.kind).collect();
        assert_eq!(kinds, vec![BlockKind::Paragraph, BlockKind::List]);
    }

    fn non_ws(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        v.sort_unstable();
        v
    }

    fn generated_doc() -> impl Strategy<Value = String> {
        let line = prop_oneof![
            3 => "[A-Za-z ,.]{1,30}",
            2 => "#{1,6} [A-Za-z]{1,8}",
            1 => Just("| h | i |\n|---|---|\n| 1 | 2 |".to_string()),
            1 => "[-*+] [a-z ]{1,10}",
            1 => Just("```\n# inside\n  x  \n```".to_string()),
            1 => Just(String::new()),
        ];
        proptest::collection::vec(line, 0..50).prop_map(|v| v.join("\n"))
    }

    proptest! {
        // Line-set oracle: every non-heading, non-blank line of the
        // normalized document appears in exactly one block, in order.
        #[test]
        fn reconstruction(raw in generated_doc()) {
            let text = normalize_markdown(&raw);
            let sections = parse_sections(&doc(&text));
            let mut expected = Vec::new();
            let mut fence: Option<Fence> = None;
            for line in text.split('\n') {
                if let Some(f) = fence {
                    if f.closes(line) { fence = None; }
                    expected.push(line);
                    continue;
                }
                if let Some(f) = Fence::open(line) { fence = Some(f); expected.push(line); continue; }
                if parse_atx_heading(line).is_some() || line.trim().is_empty() { continue; }
                expected.push(line);
            }
            let got: Vec<&str> = sections
                .iter()
                .flat_map(|s| s.blocks.iter())
                .flat_map(|b| b.text.split('\n'))
                .filter(|l| !l.trim().is_empty())
                .collect();
            let expected: Vec<&str> = expected.into_iter().filter(|l| !l.trim().is_empty()).collect();
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn content_conservation(raw in generated_doc()) {
            let text = normalize_markdown(&raw);
            let sections = parse_sections(&doc(&text));
            let mut kept = String::new();
            let mut fence: Option<Fence> = None;
            for line in text.split('\n') {
                if let Some(f) = fence {
                    if f.closes(line) { fence = None; }
                } else if let Some(f) = Fence::open(line) {
                    fence = Some(f);
                } else if parse_atx_heading(line).is_some() {
                    continue;
                }
                kept.push_str(line);
            }
            let parsed: String = sections.iter().flat_map(|s| s.blocks.iter()).map(|b| b.text.as_str()).collect();
            prop_assert_eq!(non_ws(&parsed), non_ws(&kept));
        }

        #[test]
        fn heading_paths_strictly_nest(raw in generated_doc()) {
            let sections = parse_sections(&doc(&normalize_markdown(&raw)));
            for s in &sections {
                for w in s.heading_path.windows(2) {
                    prop_assert!(w[1].level > w[0].level);
                }
            }
        }
    }

    #[test]
    fn fifty_random_headings_roundtrip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
        let mut lines = Vec::new();
        let mut content = Vec::new();
        for i in 0..50 {
            let level = rng.random_range(1..=6);
            lines.push(format!("{} H{i}", "#".repeat(level)));
            for j in 0..rng.random_range(0..3) {
                let l = format!("line {i} {j}");
                lines.push(l.clone());
                lines.push(String::new());
                content.push(l);
            }
        }
        let sections = parse_sections(&doc(&normalize_markdown(&lines.join("\n"))));
        assert_eq!(sections.len(), 50);
        let got: Vec<String> = sections
            .iter()
            .flat_map(|s| s.blocks.iter().map(|b| b.text.clone()))
            .collect();
        assert_eq!(got, content);
    }
}
