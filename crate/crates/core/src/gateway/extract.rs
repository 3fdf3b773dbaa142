//! Pulls a single SQL statement out of free-form model output.

/// First fenced code block if any, else the first statement starting with
/// SELECT or WITH. A trailing semicolon is removed.
pub fn extract_sql(text: &str) -> String {
    let body = fenced_block(text).unwrap_or_else(|| leading_statement(text));
    let body = first_statement(body.trim());
    body.trim_end_matches(|c: char| c == ';' || c.is_whitespace())
        .trim()
        .to_string()
}

fn fenced_block(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip the info string (e.g. `sql`)
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

fn leading_statement(text: &str) -> &str {
    let lower = text.to_ascii_lowercase();
    let mut best: Option<usize> = None;
    for kw in ["select", "with"] {
        let mut from = 0;
        while let Some(i) = lower[from..].find(kw) {
            let at = from + i;
            let before_ok = at == 0 || !is_word(lower.as_bytes()[at - 1]);
            let after_ok = lower
                .as_bytes()
                .get(at + kw.len())
                .is_none_or(|b| !is_word(*b));
            if before_ok && after_ok {
                best = Some(best.map_or(at, |b| b.min(at)));
                break;
            }
            from = at + kw.len();
        }
    }
    match best {
        Some(i) => &text[i..],
        None => text,
    }
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Cuts at the first semicolon outside quotes.
fn first_statement(text: &str) -> &str {
    let mut quote: Option<char> = None;
    for (i, c) in text.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' || c == '`' => quote = Some(c),
            None if c == ';' => return &text[..i],
            None => {}
        }
    }
    text
}
