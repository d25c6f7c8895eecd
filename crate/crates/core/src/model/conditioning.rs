//! Deterministic stand-in for a frozen text encoder: a tag-aware whitespace
//! tokenizer whose ids index the shared `text_embed` table.

use crate::data::prompt::{CombinedPrompt, TAG_AUDCAP, TAG_ENDAUDCAP, TAG_SPEECH_END, TAG_SPEECH_START};
use crate::util::fnv1a;

/// Null conditioning; the whole sequence for the unconditional branch.
pub const NULL_ID: usize = 0;
pub const SPEECH_START_ID: usize = 1;
pub const SPEECH_END_ID: usize = 2;
pub const AUDCAP_ID: usize = 3;
pub const ENDAUDCAP_ID: usize = 4;
pub const FIRST_WORD_ID: usize = 5;

const TAGS: [(&str, usize); 4] = [
    (TAG_ENDAUDCAP, ENDAUDCAP_ID),
    (TAG_AUDCAP, AUDCAP_ID),
    (TAG_SPEECH_START, SPEECH_START_ID),
    (TAG_SPEECH_END, SPEECH_END_ID),
];

/// Splits on whitespace and on caption tags (tags need not be space-separated);
/// words are lowercased and hashed into `[FIRST_WORD_ID, vocab_size)`.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<usize> {
    let buckets = (vocab_size - FIRST_WORD_ID) as u64;
    let word_id = |w: &str| FIRST_WORD_ID + (fnv1a(w.to_lowercase().as_bytes()) % buckets) as usize;
    let mut ids = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        let next_tag = TAGS
            .iter()
            .filter_map(|&(tag, id)| rest.find(tag).map(|pos| (pos, tag, id)))
            .min_by_key(|&(pos, tag, _)| (pos, std::cmp::Reverse(tag.len())));
        let (plain, tail) = match next_tag {
            Some((pos, tag, id)) => {
                let plain = &rest[..pos];
                ids.extend(plain.split_whitespace().map(word_id));
                ids.push(id);
                (None, &rest[pos + tag.len()..])
            }
            None => (Some(rest), ""),
        };
        if let Some(p) = plain {
            ids.extend(p.split_whitespace().map(word_id));
        }
        rest = tail;
    }
    if ids.is_empty() {
        ids.push(NULL_ID);
    }
    ids
}

pub fn encode_prompt(p: &CombinedPrompt, vocab_size: usize) -> Vec<usize> {
    tokenize(&p.render_unchecked(), vocab_size)
}

pub fn null_tokens() -> Vec<usize> {
    vec![NULL_ID]
}
