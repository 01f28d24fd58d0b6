use serde::{Deserialize, Serialize};

use crate::corpus::TaskKind;
use crate::error::{Error, Result};

const EXAMPLE_INPUT: &str = "\n\nExample input: ";
const EXAMPLE_OUTPUT: &str = "\nExample output: ";
const INPUT: &str = "\n\nInput: ";
const OUTPUT: &str = "\nOutput:";

/// Instruction line per task. Only the instruction is configurable; the
/// demonstration markers are fixed so prompts can be parsed back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub summarization: String,
    pub translation: String,
    pub dialogue: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            summarization: "Summarize the input in one sentence, following the example.".into(),
            translation: "Translate the input, following the example.".into(),
            dialogue: "Write the next response in the dialogue, following the example.".into(),
        }
    }
}

impl PromptTemplates {
    pub fn instruction(&self, task: TaskKind) -> &str {
        match task {
            TaskKind::Summarization => &self.summarization,
            TaskKind::Translation => &self.translation,
            TaskKind::Dialogue => &self.dialogue,
        }
    }
}

/// Renders `x ⊕ (x̃, ỹ)`:
///
/// ```text
/// <instruction>
///
/// Example input: <x̃>
/// Example output: <ỹ>
///
/// Input: <x>
/// Output:
/// ```
pub fn build_generation_prompt(templates: &PromptTemplates, task: TaskKind, x: &str, example_source: &str, example_target: &str) -> String {
    let instruction = templates.instruction(task).replace('\n', " ");
    let mut s = String::with_capacity(
        instruction.len() + example_source.len() + example_target.len() + x.len() + 64,
    );
    s.push_str(&instruction);
    s.push_str(EXAMPLE_INPUT);
    s.push_str(example_source);
    s.push_str(EXAMPLE_OUTPUT);
    s.push_str(example_target);
    s.push_str(INPUT);
    s.push_str(x);
    s.push_str(OUTPUT);
    s
}

/// The pieces of a prompt rendered by [`build_generation_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub instruction: &'a str,
    pub example_source: &'a str,
    pub example_target: &'a str,
    pub input: &'a str,
}

pub fn parse_generation_prompt(prompt: &str) -> Result<ParsedPrompt<'_>> {
    let missing = |what: &str| Error::UnparsablePrompt(format!("missing {what:?} marker"));
    let (instruction, rest) = prompt.split_once(EXAMPLE_INPUT).ok_or_else(|| missing("Example input:"))?;
    let (example_source, rest) = rest.split_once(EXAMPLE_OUTPUT).ok_or_else(|| missing("Example output:"))?;
    let (example_target, rest) = rest.split_once(INPUT).ok_or_else(|| missing("Input:"))?;
    let input = rest.strip_suffix(OUTPUT).ok_or_else(|| missing("Output:"))?;
    Ok(ParsedPrompt { instruction, example_source, example_target, input })
}
