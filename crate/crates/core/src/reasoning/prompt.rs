// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use crate::ingest::FrameRef;
use crate::memory::RetrievedClip;
use crate::Matrix;

/// Prompt template with the `<|Que|>`, `<|Img|>` and `<|Mem|>` placeholders.
pub const PROMPT_TEMPLATE: &str = include_str!("../../assets/prompts/ol_prompt.txt");

const QUE: &str = "<|Que|>";
const IMG: &str = "<|Img|>";
const MEM: &str = "<|Mem|>";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PromptClip {
    pub clip_index: u64,
    pub score: f64,
    pub frames: Vec<FrameRef>,
    /// `H` of the clip, passed to the reasoner as-is.
    pub memory: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssembledPrompt {
    pub text: String,
    pub question: String,
    /// Retrieved clips in rank order.
    pub clips: Vec<PromptClip>,
}

impl AssembledPrompt {
    pub fn clip_indices(&self) -> Vec<u64> {
        self.clips.iter().map(|c| c.clip_index).collect()
    }
}

fn template_lines() -> Vec<&'static str> {
    PROMPT_TEMPLATE.strip_suffix('\n').unwrap_or(PROMPT_TEMPLATE).split('\n').collect()
}

/// Substitutes placeholders in one left-to-right pass so that placeholder
/// text inside a question is left alone.
fn bind(line: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    'scan: while !rest.is_empty() {
        for (ph, v) in values {
            if let Some(tail) = rest.strip_prefix(ph) {
                out.push_str(v);
                rest = tail;
                continue 'scan;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

pub fn build_prompt(question: &str, retrieved: &[RetrievedClip]) -> AssembledPrompt {
    let lines = template_lines();
    let clips: Vec<PromptClip> = retrieved
        .iter()
        .map(|r| PromptClip {
            clip_index: r.clip_index,
            score: r.score,
            frames: r.record.frame_refs.clone(),
            memory: r.record.short_term.clone(),
        })
        .collect();
    let text = if clips.is_empty() {
        let first = bind(lines[0], &[(QUE, question)]);
        first.strip_suffix(',').map(str::to_string).unwrap_or(first)
    } else {
        let img = clips
            .iter()
            .flat_map(|c| {
                c.frames
                    .iter()
                    .map(move |f| format!("<img clip={} frame={} t={}>", c.clip_index, f.seq, f.t_ms))
            })
            .collect::<Vec<_>>()
            .join(" ");
        let mem = clips
            .iter()
            .map(|c| format!("<mem clip={} shape={}x{}>", c.clip_index, c.memory.rows(), c.memory.cols()))
            .collect::<Vec<_>>()
            .join(" ");
        let values = [(QUE, question), (IMG, img.as_str()), (MEM, mem.as_str())];
        lines.iter().map(|l| bind(l, &values)).collect::<Vec<_>>().join("\n")
    };
    AssembledPrompt {
        text,
        question: question.to_string(),
        clips,
    }
}
