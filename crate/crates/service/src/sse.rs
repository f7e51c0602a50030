//! Minimal reader for `text/event-stream` bodies.

use std::io::{self, BufRead};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SseFrame {
    /// The `event:` field, empty when absent.
    pub event: String,
    /// `data:` lines joined with `\n`.
    pub data: String,
}

/// Iterates over the frames of an event stream. Comment lines and fields
/// other than `event` and `data` are skipped.
pub struct SseReader<R> {
    inner: R,
    line: String,
}

impl<R: BufRead> SseReader<R> {
    pub fn new(inner: R) -> Self {
        SseReader {
            inner,
            line: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for SseReader<R> {
    type Item = io::Result<SseFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut frame = SseFrame::default();
        let mut has_data = false;
        loop {
            self.line.clear();
            match self.inner.read_line(&mut self.line) {
                Err(e) => return Some(Err(e)),
                Ok(0) => return has_data.then_some(Ok(frame)),
                Ok(_) => {}
            }
            let line = self.line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                if has_data {
                    return Some(Ok(frame));
                }
                frame.event.clear();
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = match line.split_once(':') {
                Some((f, v)) => (f, v.strip_prefix(' ').unwrap_or(v)),
                None => (line, ""),
            };
            match field {
                "event" => frame.event = value.to_string(),
                "data" => {
                    if has_data {
                        frame.data.push('\n');
                    }
                    frame.data.push_str(value);
                    has_data = true;
                }
                _ => {}
            }
        }
    }
}
