use std::collections::{HashMap, HashSet};
use std::ops::Range;

use super::{parse, Block, GCodeError, GCodeProgram, Verdict};

/// The slice of a program that belongs to one tool change.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationSegment<'a> {
    /// `None` only when the program has no tool change at all.
    pub tool_number: Option<u32>,
    pub preamble_blocks: &'a [Block],
    pub body_blocks: &'a [Block],
    /// Position of `body_blocks` within [`GCodeProgram::blocks`].
    pub body_range: Range<usize>,
    pub index: usize,
}

impl OperationSegment<'_> {
    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.preamble_blocks.iter().chain(self.body_blocks)
    }
}

/// Distinct tool numbers in order of first appearance.
pub fn tool_numbers(program: &GCodeProgram) -> Vec<u32> {
    let mut seen = HashSet::new();
    program
        .blocks
        .iter()
        .filter_map(Block::tool)
        .filter(|t| seen.insert(*t))
        .collect()
}

/// Splits the program at every tool-change block.
///
/// Blocks ahead of the first tool change form the preamble shared by every
/// segment. Without any tool change the whole program is a single segment
/// with no tool and an empty preamble.
pub fn segment_by_tool(program: &GCodeProgram) -> Vec<OperationSegment<'_>> {
    let blocks = &program.blocks[..];
    let starts: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_tool_change())
        .map(|(i, _)| i)
        .collect();

    let Some(&first) = starts.first() else {
        return vec![OperationSegment {
            tool_number: None,
            preamble_blocks: &blocks[..0],
            body_blocks: blocks,
            body_range: 0..blocks.len(),
            index: 0,
        }];
    };

    let preamble = &blocks[..first];
    starts
        .iter()
        .enumerate()
        .map(|(index, &start)| {
            let end = starts.get(index + 1).copied().unwrap_or(blocks.len());
            OperationSegment {
                tool_number: blocks[start].tool(),
                preamble_blocks: preamble,
                body_blocks: &blocks[start..end],
                body_range: start..end,
                index,
            }
        })
        .collect()
}

/// Renders the preamble plus every body section that uses `tool`, one block
/// per line.
pub fn extract_for_tool(program: &GCodeProgram, tool: u32) -> Result<String, GCodeError> {
    let segments = segment_by_tool(program);
    let mut matching = segments.iter().filter(|s| s.tool_number == Some(tool)).peekable();
    let Some(first) = matching.peek() else {
        return Err(GCodeError::UnknownTool {
            tool,
            available: tool_numbers(program),
        });
    };

    let mut lines: Vec<String> = first.preamble_blocks.iter().map(Block::render).collect();
    for segment in matching {
        lines.extend(segment.body_blocks.iter().map(Block::render));
    }
    Ok(lines.join("\n"))
}

/// Canonical text of a block for comparisons.
pub fn normalize_block(block: &Block) -> String {
    block.words.iter().map(|w| w.normalized()).collect::<Vec<_>>().join(" ")
}

/// Classifies `candidate` against the section `tool` should receive.
///
/// Unparseable candidates, and candidates for tools the program does not
/// use, are [`Verdict::NotFromProgram`].
pub fn allocation_verdict(candidate: &str, program: &GCodeProgram, tool: u32) -> Verdict {
    let Ok(expected_text) = extract_for_tool(program, tool) else {
        return Verdict::NotFromProgram;
    };
    let Ok(candidate) = parse(candidate) else {
        return Verdict::NotFromProgram;
    };
    let expected = parse(&expected_text).expect("rendered section reparses");

    let cand: Vec<String> = candidate.blocks.iter().map(normalize_block).collect();
    let want: Vec<String> = expected.blocks.iter().map(normalize_block).collect();
    if cand == want {
        return Verdict::Exact;
    }

    let known: HashSet<String> = program.blocks.iter().map(normalize_block).collect();
    if cand.iter().any(|b| !known.contains(b)) {
        return Verdict::NotFromProgram;
    }

    if multiset(&cand) == multiset(&want) {
        Verdict::EquivalentBlocks
    } else {
        Verdict::WrongSegment
    }
}

fn multiset(items: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for item in items {
        *counts.entry(item.as_str()).or_insert(0) += 1;
    }
    counts
}
