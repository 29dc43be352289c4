//! Shared fixtures and a seeded random G-code generator.
#![allow(dead_code)]

use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mas_core::harness::Scenario;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(&fixtures().join(format!("{name}.json"))).expect("bundled scenario loads")
}

/// A generated program: one block per entry of `lines`, optionally behind a
/// `%` header line.
#[derive(Debug, Clone)]
pub struct Generated {
    pub header: Option<String>,
    pub lines: Vec<String>,
}

impl Generated {
    pub fn text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(h);
            out.push('\n');
        }
        out.push_str(&self.lines.join("\n"));
        out
    }
}

const MOTION: &[&str] = &["G00", "G01", "G02", "G03", "G81", "G82", "G84"];
const AXES: &[char] = &['X', 'Y', 'Z', 'F', 'S', 'R'];

fn coord(rng: &mut ChaCha8Rng) -> String {
    let whole: i32 = rng.random_range(-200..200);
    match rng.random_range(0..3) {
        0 => format!("{whole}."),
        1 => format!("{whole}.{}", rng.random_range(0..100)),
        _ => format!("{whole}"),
    }
}

fn motion_line(rng: &mut ChaCha8Rng, n: &mut u32) -> String {
    *n += 10;
    let mut words = vec![format!("N{n}")];
    if rng.random_bool(0.6) {
        words.push(MOTION[rng.random_range(0..MOTION.len())].to_string());
    }
    for _ in 0..rng.random_range(1..4) {
        let axis = AXES[rng.random_range(0..AXES.len())];
        words.push(format!("{axis}{}", coord(rng)));
    }
    words.join(" ")
}

/// Programs with at most `max_blocks` blocks and at most `max_tools`
/// distinct tools; tools may reappear in later sections.
pub fn random_program(seed: u64, max_blocks: usize, max_tools: usize) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = rng.random_range(1..=max_blocks);
    let n_tools = rng.random_range(0..=max_tools);
    let mut tools: Vec<u32> = Vec::new();
    while tools.len() < n_tools {
        let t = rng.random_range(1..=24);
        if !tools.contains(&t) {
            tools.push(t);
        }
    }
    let mut n = 0;
    let mut lines = Vec::with_capacity(total);
    let preamble = rng.random_range(0..=total.min(5));
    for _ in 0..preamble {
        lines.push(motion_line(&mut rng, &mut n));
    }
    // make sure each tool appears at least once when there is room
    let mut unused = tools.clone();
    while lines.len() < total {
        let change_here = !tools.is_empty() && (lines.len() == preamble || rng.random_bool(0.15));
        if change_here {
            let t = if let Some(t) = unused.pop() {
                t
            } else {
                tools[rng.random_range(0..tools.len())]
            };
            n += 10;
            let line = if rng.random_bool(0.7) {
                format!("N{n} T{t} M06")
            } else {
                format!("N{n} T{t}")
            };
            lines.push(line);
        } else {
            lines.push(motion_line(&mut rng, &mut n));
        }
    }
    let header = rng.random_bool(0.5).then(|| format!("%{}", rng.random_range(1..1000)));
    Generated { header, lines }
}

/// `(tool, body range)` per section.
pub type Sections = Vec<(Option<u32>, Range<usize>)>;

/// Brute-force partition: `(preamble, [(tool, body range)])`, computed by
/// scanning the generator's lines for a `T` token.
pub fn linear_partition(g: &Generated) -> (Range<usize>, Sections) {
    let tool_of = |line: &str| {
        line.split_whitespace()
            .find_map(|tok| tok.strip_prefix('T').and_then(|d| d.parse::<u32>().ok()))
    };
    let mut sections: Sections = Vec::new();
    for (i, line) in g.lines.iter().enumerate() {
        match tool_of(line) {
            Some(t) => sections.push((Some(t), i..i + 1)),
            None => {
                if let Some(last) = sections.last_mut() {
                    last.1.end = i + 1;
                }
            }
        }
    }
    if sections.is_empty() {
        return (0..0, vec![(None, 0..g.lines.len())]);
    }
    let first = sections[0].1.start;
    (0..first, sections)
}
