//! Fanuc-style G-code parsing and per-tool segmentation.
//!
//! A program is parsed into [`Block`]s of letter/number [`Word`]s. Tool
//! changes (any block carrying a `T` word) split the program into
//! [`OperationSegment`]s; the blocks before the first tool change form a
//! shared preamble that is replicated into every extracted section so that
//! each machine receives a runnable program.
//!
//! ```
//! use mas_core::gcode::{self, Verdict};
//!
//! let program = gcode::parse("N10 T4 M06\nN20 G01 X1.0\nN30 T6 M06\nN40 G01 X2.0").unwrap();
//! assert_eq!(gcode::tool_numbers(&program), vec![4, 6]);
//!
//! let section = gcode::extract_for_tool(&program, 4).unwrap();
//! assert_eq!(section, "N10 T4 M06\nN20 G01 X1.0");
//! assert_eq!(gcode::allocation_verdict(&section, &program, 4), Verdict::Exact);
//! ```

mod parse;
mod segment;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse;
pub use segment::{
    allocation_verdict, extract_for_tool, normalize_block, segment_by_tool, tool_numbers, OperationSegment,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GCodeError {
    #[error("empty G-code program")]
    EmptyProgram,
    #[error("syntax error on line {line}: `{token}` ({reason})")]
    Syntax {
        line: usize,
        token: String,
        reason: &'static str,
    },
    #[error("tool T{tool} does not appear in the program (available: {})", fmt_tools(.available))]
    UnknownTool { tool: u32, available: Vec<u32> },
}

fn fmt_tools(tools: &[u32]) -> String {
    if tools.is_empty() {
        return "none".to_string();
    }
    tools.iter().map(|t| format!("T{t}")).collect::<Vec<_>>().join(", ")
}

/// A single address word such as `G01` or `X-1.25`.
#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub letter: char,
    pub value: f64,
    /// Source text of the word, e.g. `x1.0`.
    pub raw: String,
}

impl Word {
    /// Canonical form used for allocation comparisons: uppercase letter,
    /// no leading `+`, trailing fractional zeros and a bare trailing `.` dropped.
    pub fn normalized(&self) -> String {
        let number = &self.raw[self.letter.len_utf8()..];
        let number = number.strip_prefix('+').unwrap_or(number);
        let number = if number.contains('.') {
            number.trim_end_matches('0').trim_end_matches('.')
        } else {
            number
        };
        let number = if number.is_empty() || number == "-" {
            // "0." / "-.0" style inputs collapse to zero
            "0"
        } else {
            number
        };
        format!("{}{}", self.letter.to_ascii_uppercase(), number)
    }

    pub(crate) fn as_integer(&self) -> Option<u32> {
        (self.value >= 0.0 && self.value.fract() == 0.0 && self.value <= u32::MAX as f64).then_some(self.value as u32)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

/// One line of a program.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub sequence_number: Option<u32>,
    pub words: Vec<Word>,
    /// 1-based source line.
    pub line: usize,
    /// Original line text, comments included.
    pub raw: String,
}

impl Block {
    /// The tool selected by this block, if it is a tool change.
    pub fn tool(&self) -> Option<u32> {
        self.words.iter().find(|w| w.letter == 'T').and_then(Word::as_integer)
    }

    pub fn is_tool_change(&self) -> bool {
        self.words.iter().any(|w| w.letter == 'T')
    }

    /// Words joined by single spaces, comments removed.
    pub fn render(&self) -> String {
        self.words.iter().map(|w| w.raw.as_str()).collect::<Vec<_>>().join(" ")
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GCodeProgram {
    /// Number from a `%358` or `O0358` header line.
    pub program_id: Option<u32>,
    pub blocks: Vec<Block>,
    pub raw: String,
}

/// How a candidate section relates to the section a machine should receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    /// Normalizes byte-equal to [`extract_for_tool`].
    Exact,
    /// Same blocks, different order.
    EquivalentBlocks,
    /// Blocks come from the program but belong to another tool or are missing.
    WrongSegment,
    /// At least one block is not part of the program, or the text does not parse.
    NotFromProgram,
}

impl Verdict {
    pub fn is_acceptable(self) -> bool {
        matches!(self, Verdict::Exact | Verdict::EquivalentBlocks)
    }
}
