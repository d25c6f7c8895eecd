//! Combined caption grammar:
//!
//! ```text
//! prompt  := (visual | "<S>" speech "<E>")* "<AUDCAP>" caption "<ENDAUDCAP>"
//! ```
//!
//! Speech tags never nest, and nothing may follow the audio-caption block.
//! Text outside tags is kept byte-for-byte, whitespace included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAG_SPEECH_START: &str = "<S>";
pub const TAG_SPEECH_END: &str = "<E>";
pub const TAG_AUDCAP: &str = "<AUDCAP>";
pub const TAG_ENDAUDCAP: &str = "<ENDAUDCAP>";

const ALL_TAGS: [&str; 4] = [TAG_SPEECH_START, TAG_SPEECH_END, TAG_AUDCAP, TAG_ENDAUDCAP];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum Segment {
    Visual(String),
    Speech(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedPrompt {
    pub segments: Vec<Segment>,
    pub audio_caption: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tag {
    SpeechStart,
    SpeechEnd,
    AudCap,
    EndAudCap,
}

fn next_tag(s: &str, from: usize) -> Option<(usize, Tag, usize)> {
    let rest = &s[from..];
    [
        (TAG_SPEECH_START, Tag::SpeechStart),
        (TAG_SPEECH_END, Tag::SpeechEnd),
        (TAG_AUDCAP, Tag::AudCap),
        (TAG_ENDAUDCAP, Tag::EndAudCap),
    ]
    .into_iter()
    .filter_map(|(lit, tag)| rest.find(lit).map(|p| (from + p, tag, lit.len())))
    .min_by_key(|&(p, _, _)| p)
}

enum State {
    Outside,
    Speech { open: usize, start: usize },
    Caption { open: usize, start: usize },
    Done,
}

fn err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Prompt { offset, msg: msg.into() }
}

impl CombinedPrompt {
    pub fn parse(s: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut caption = None;
        let mut state = State::Outside;
        let mut pos = 0;
        loop {
            let found = next_tag(s, pos);
            let text_end = found.map_or(s.len(), |f| f.0);
            let text = &s[pos..text_end];
            match &state {
                State::Outside if !text.is_empty() => segments.push(Segment::Visual(text.to_string())),
                State::Done if !text.is_empty() => {
                    return Err(err(pos, "text after <ENDAUDCAP>"));
                }
                _ => {}
            }
            let Some((at, tag, len)) = found else { break };
            let after = at + len;
            state = match (state, tag) {
                (State::Outside, Tag::SpeechStart) => State::Speech { open: at, start: after },
                (State::Outside, Tag::SpeechEnd) => return Err(err(at, "<E> without matching <S>")),
                (State::Outside, Tag::AudCap) => State::Caption { open: at, start: after },
                (State::Outside, Tag::EndAudCap) => return Err(err(at, "<ENDAUDCAP> without <AUDCAP>")),
                (State::Speech { .. }, Tag::SpeechStart) => return Err(err(at, "nested <S>")),
                (State::Speech { start, .. }, Tag::SpeechEnd) => {
                    segments.push(Segment::Speech(s[start..at].to_string()));
                    State::Outside
                }
                (State::Speech { open, .. }, _) => {
                    return Err(err(open, "<S> not closed before the audio caption"));
                }
                (State::Caption { .. }, Tag::AudCap) => return Err(err(at, "duplicate <AUDCAP>")),
                (State::Caption { .. }, Tag::SpeechStart | Tag::SpeechEnd) => {
                    return Err(err(at, "speech tag inside the audio caption"));
                }
                (State::Caption { start, .. }, Tag::EndAudCap) => {
                    caption = Some(s[start..at].to_string());
                    State::Done
                }
                (State::Done, Tag::AudCap) => return Err(err(at, "duplicate audio-caption block")),
                (State::Done, _) => return Err(err(at, "text after <ENDAUDCAP>")),
            };
            pos = after;
        }
        match state {
            State::Done => Ok(Self {
                segments,
                audio_caption: caption.unwrap_or_default(),
            }),
            State::Outside => Err(err(s.len(), "missing <AUDCAP>...<ENDAUDCAP> block")),
            State::Speech { open, .. } => Err(err(open, "unclosed <S>")),
            State::Caption { open, .. } => Err(err(open, "unclosed <AUDCAP>")),
        }
    }

    /// Inverse of [`parse`](Self::parse) on well-formed prompts.
    pub fn render(&self) -> Result<String> {
        self.validate()?;
        Ok(self.render_unchecked())
    }

    pub(crate) fn render_unchecked(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Visual(t) => out.push_str(t),
                Segment::Speech(t) => {
                    out.push_str(TAG_SPEECH_START);
                    out.push_str(t);
                    out.push_str(TAG_SPEECH_END);
                }
            }
        }
        out.push_str(TAG_AUDCAP);
        out.push_str(&self.audio_caption);
        out.push_str(TAG_ENDAUDCAP);
        out
    }

    /// Checks that rendering would parse back to the same structure.
    pub fn validate(&self) -> Result<()> {
        let reserved = |t: &str| ALL_TAGS.iter().find(|tag| t.contains(*tag)).copied();
        let mut prev_visual = false;
        for (i, seg) in self.segments.iter().enumerate() {
            let (text, visual) = match seg {
                Segment::Visual(t) => (t, true),
                Segment::Speech(t) => (t, false),
            };
            if let Some(tag) = reserved(text) {
                return Err(Error::PromptEncode(format!("segment {i} contains reserved tag {tag}")));
            }
            if visual && text.is_empty() {
                return Err(Error::PromptEncode(format!("segment {i} is an empty visual segment")));
            }
            if visual && prev_visual {
                return Err(Error::PromptEncode(format!("segments {} and {i} are adjacent visual text", i - 1)));
            }
            prev_visual = visual;
        }
        if let Some(tag) = reserved(&self.audio_caption) {
            return Err(Error::PromptEncode(format!("audio caption contains reserved tag {tag}")));
        }
        Ok(())
    }

    pub fn speech(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Speech(t) => Some(t.as_str()),
            Segment::Visual(_) => None,
        })
    }
}
