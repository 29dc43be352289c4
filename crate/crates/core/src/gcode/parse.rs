use super::{Block, GCodeError, GCodeProgram, Word};

/// Parses program text into blocks.
///
/// A leading `%` or `O<n>` line becomes the program id. Comments in
/// parentheses or after `;` are dropped from the words but kept in
/// [`Block::raw`]. Lines containing only `%` (tape markers) are skipped.
pub fn parse(text: &str) -> Result<GCodeProgram, GCodeError> {
    if text.trim().is_empty() {
        return Err(GCodeError::EmptyProgram);
    }

    let mut program_id = None;
    let mut seen_content = false;
    let mut blocks = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let stripped = strip_comments(raw_line, line_no)?;
        let mut chunks: Vec<&str> = stripped.split_whitespace().collect();
        if chunks.is_empty() {
            continue;
        }

        if let Some(id) = header_id(chunks[0]) {
            if !seen_content {
                seen_content = true;
                program_id = id.map_err(|reason| GCodeError::Syntax {
                    line: line_no,
                    token: chunks[0].to_string(),
                    reason,
                })?;
                chunks.remove(0);
                if chunks.is_empty() {
                    continue;
                }
            } else if chunks[0] == "%" && chunks.len() == 1 {
                continue;
            }
        }
        seen_content = true;

        let mut words = Vec::new();
        for chunk in chunks {
            tokenize_chunk(chunk, line_no, &mut words)?;
        }
        blocks.push(make_block(words, line_no, raw_line)?);
    }

    Ok(GCodeProgram {
        program_id,
        blocks,
        raw: text.to_string(),
    })
}

/// `Some(Ok(id))` for a header token, `Some(Err)` for a malformed one,
/// `None` when the token is an ordinary word.
fn header_id(token: &str) -> Option<Result<Option<u32>, &'static str>> {
    if let Some(rest) = token.strip_prefix('%') {
        if rest.is_empty() {
            return Some(Ok(None));
        }
        return Some(rest.parse::<u32>().map(Some).map_err(|_| "malformed program number"));
    }
    let rest = token.strip_prefix('O').or_else(|| token.strip_prefix('o'))?;
    if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
        return Some(rest.parse::<u32>().map(Some).map_err(|_| "malformed program number"));
    }
    None
}

fn strip_comments(line: &str, line_no: usize) -> Result<String, GCodeError> {
    let mut out = String::with_capacity(line.len());
    let mut in_paren = false;
    for ch in line.chars() {
        match (in_paren, ch) {
            (false, ';') => break,
            (false, '(') => {
                in_paren = true;
                out.push(' ');
            }
            (false, _) => out.push(ch),
            (true, ')') => in_paren = false,
            (true, _) => {}
        }
    }
    if in_paren {
        return Err(GCodeError::Syntax {
            line: line_no,
            token: line.trim().to_string(),
            reason: "unterminated comment",
        });
    }
    Ok(out)
}

fn tokenize_chunk(chunk: &str, line_no: usize, words: &mut Vec<Word>) -> Result<(), GCodeError> {
    let bad = |reason| GCodeError::Syntax {
        line: line_no,
        token: chunk.to_string(),
        reason,
    };
    let bytes = chunk.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        if !bytes[i].is_ascii_alphabetic() {
            return Err(bad("expected an address letter"));
        }
        i += 1;
        let num_start = i;
        if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
            i += 1;
        }
        let mut digits = 0;
        let mut dots = 0;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            if bytes[i] == b'.' {
                dots += 1;
            } else {
                digits += 1;
            }
            i += 1;
        }
        if digits == 0 || dots > 1 {
            return Err(bad("expected a number after the address letter"));
        }
        let value: f64 = chunk[num_start..i].parse().map_err(|_| bad("malformed number"))?;
        words.push(Word {
            letter: (bytes[start] as char).to_ascii_uppercase(),
            value,
            raw: chunk[start..i].to_string(),
        });
    }
    Ok(())
}

fn make_block(words: Vec<Word>, line_no: usize, raw: &str) -> Result<Block, GCodeError> {
    let bad = |token: &Word, reason| GCodeError::Syntax {
        line: line_no,
        token: token.raw.clone(),
        reason,
    };
    let mut sequence_number = None;
    let mut tool_seen = false;
    for (pos, word) in words.iter().enumerate() {
        match word.letter {
            'N' => {
                if pos != 0 {
                    return Err(bad(word, "sequence number must be the first word"));
                }
                sequence_number = Some(
                    word.as_integer()
                        .ok_or_else(|| bad(word, "sequence number must be a non-negative integer"))?,
                );
            }
            'T' => {
                if tool_seen {
                    return Err(bad(word, "more than one tool word in a block"));
                }
                word.as_integer()
                    .ok_or_else(|| bad(word, "tool number must be a non-negative integer"))?;
                tool_seen = true;
            }
            _ => {}
        }
    }
    Ok(Block {
        sequence_number,
        words,
        line: line_no,
        raw: raw.to_string(),
    })
}
