//! Size-reducing Markdown normalization.

/// An open fenced code block (``` or ~~~).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Fence {
    marker: char,
    len: usize,
}

impl Fence {
    /// Recognizes a fence opener. Any leading indentation is accepted so that
    /// whitespace collapsing can never turn a non-fence into a fence.
    pub(crate) fn open(line: &str) -> Option<Fence> {
        let trimmed = line.trim_start();
        let marker = trimmed.chars().next()?;
        if marker != '`' && marker != '~' {
            return None;
        }
        let len = trimmed.chars().take_while(|&c| c == marker).count();
        if len < 3 {
            return None;
        }
        let info = &trimmed[len..];
        if marker == '`' && info.contains('`') {
            return None;
        }
        Some(Fence { marker, len })
    }

    pub(crate) fn closes(&self, line: &str) -> bool {
        let trimmed = line.trim();
        let run = trimmed.chars().take_while(|&c| c == self.marker).count();
        run >= self.len && run == trimmed.chars().count()
    }
}

/// A pipe row whose cells are all dash runs, optionally colon-aligned.
pub(crate) fn is_separator_row(line: &str) -> bool {
    let trimmed = line.trim();
    if !trimmed.contains('|') {
        return false;
    }
    let inner = trimmed.strip_prefix('|').unwrap_or(trimmed);
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    let mut cells = 0;
    for cell in inner.split('|') {
        let cell = cell.trim();
        let core = cell.strip_prefix(':').unwrap_or(cell);
        let core = core.strip_suffix(':').unwrap_or(core);
        if core.is_empty() || !core.chars().all(|c| c == '-') {
            return false;
        }
        cells += 1;
    }
    cells > 0
}

fn collapse_inline_whitespace(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_run = false;
    for c in line.chars() {
        if c == ' ' || c == '\t' {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    let kept = out.trim_end().len();
    out.truncate(kept);
    out
}

fn collapse_dash_runs(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut run = 0usize;
    let flush = |out: &mut String, run: usize| {
        if run >= 3 {
            out.push_str("---");
        } else {
            out.extend(std::iter::repeat_n('-', run));
        }
    };
    for c in line.chars() {
        if c == '-' {
            run += 1;
        } else {
            flush(&mut out, run);
            run = 0;
            out.push(c);
        }
    }
    flush(&mut out, run);
    out
}

/// Normalizes Markdown text.
///
/// Outside fenced code: runs of spaces/tabs collapse to one space and
/// trailing whitespace is dropped, table separator dash runs of three or
/// more become `---`, and three or more consecutive blank lines collapse to
/// a single blank line. Line endings become LF everywhere; fenced lines are
/// otherwise kept byte for byte.
pub fn normalize_markdown(text: &str) -> String {
    let text = text.replace("\r\n", "\n").replace('\r', "\n");
    let mut out: Vec<String> = Vec::new();
    let mut fence: Option<Fence> = None;
    let mut blank_run = 0usize;

    let flush_blanks = |out: &mut Vec<String>, run: &mut usize| {
        let keep = if *run >= 3 { 1 } else { *run };
        out.extend(std::iter::repeat_n(String::new(), keep));
        *run = 0;
    };

    for line in text.split('\n') {
        if let Some(open) = fence {
            out.push(line.to_string());
            if open.closes(line) {
                fence = None;
            }
            continue;
        }
        if let Some(open) = Fence::open(line) {
            flush_blanks(&mut out, &mut blank_run);
            out.push(line.to_string());
            fence = Some(open);
            continue;
        }
        let mut cleaned = collapse_inline_whitespace(line);
        if cleaned.is_empty() {
            blank_run += 1;
            continue;
        }
        if is_separator_row(&cleaned) {
            cleaned = collapse_dash_runs(&cleaned);
        }
        flush_blanks(&mut out, &mut blank_run);
        out.push(cleaned);
    }
    flush_blanks(&mut out, &mut blank_run);
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_separator_dashes_collapse() {
        assert_eq!(
            normalize_markdown("| H |\n|-------|\n| v |"),
            "| H |\n|---|\n| v |"
        );
        assert_eq!(
            normalize_markdown("| a | b |\n|:-----:|------:|"),
            "| a | b |\n|:---:|---:|"
        );
    }

    #[test]
    fn dashes_outside_separator_rows_survive() {
        assert_eq!(normalize_markdown("a ------ b"), "a ------ b");
        assert_eq!(normalize_markdown("| x ----- |"), "| x ----- |");
    }

    #[test]
    fn spaces_collapse() {
        assert_eq!(normalize_markdown("a   b"), "a b");
        assert_eq!(normalize_markdown("a\t\t b  "), "a b");
    }

    #[test]
    fn code_fence_is_preserved() {
        assert_eq!(normalize_markdown("```\na   b\n```"), "```\na   b\n```");
        let src = "x  y\n~~~~ rust\n  let  a = 1;   \n\n\n\n~~~~\nz   w";
        assert_eq!(
            normalize_markdown(src),
            "x y\n~~~~ rust\n  let  a = 1;   \n\n\n\n~~~~\nz w"
        );
    }

    #[test]
    fn blank_line_runs() {
        assert_eq!(normalize_markdown("a\n\n\n\nb"), "a\n\nb");
        assert_eq!(normalize_markdown("a\n\n\nb"), "a\n\n\nb");
        assert_eq!(normalize_markdown("a\n   \n\t\n \nb"), "a\n\nb");
    }

    #[test]
    fn line_endings() {
        assert_eq!(normalize_markdown("a\r\nb\rc\r\n"), "a\nb\nc\n");
    }

    #[test]
    fn unclosed_fence_runs_to_end() {
        let src = "```\na   b\n\n\n\n";
        assert_eq!(normalize_markdown(src), src);
    }

    fn markdownish() -> impl Strategy<Value = String> {
        let line = prop_oneof![
            "[a-z ]{0,12}",
            "[ \t]{0,3}#{1,3} [a-z]{1,5}[ \t]{0,2}",
            "\\|[- :]{0,8}\\|[- ]{0,6}",
            "[ \t]{0,5}(```|~~~)[a-z]{0,3}[ `]{0,2}",
            "[ \t]{0,4}[-*+] [a-z]{1,6}",
            "[ \t\r]{0,3}",
            "\\PC{0,10}",
        ];
        proptest::collection::vec(line, 0..30).prop_map(|v| v.join("\n"))
    }

    proptest! {
        #[test]
        fn idempotent(text in markdownish()) {
            let once = normalize_markdown(&text);
            prop_assert_eq!(normalize_markdown(&once), once.clone());
        }

        #[test]
        fn no_trailing_whitespace_outside_fences(text in markdownish()) {
            let out = normalize_markdown(&text);
            let mut fence: Option<Fence> = None;
            for line in out.split('\n') {
                if let Some(f) = fence {
                    if f.closes(line) { fence = None; }
                    continue;
                }
                if let Some(f) = Fence::open(line) { fence = Some(f); continue; }
                prop_assert_eq!(line.trim_end(), line);
            }
        }
    }
}
