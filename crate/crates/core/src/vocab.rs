//! Fixed layout of the synthetic vocabulary shared by the pretraining
//! corpus and the downstream tasks.

use std::ops::Range;

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const SEP: usize = 2;
pub const MARK: usize = 3;
/// Ids below this are reserved and never sampled as prompt initializers.
pub const NUM_SPECIAL: usize = 8;

pub const TOPICS: usize = 8;

pub const DET_SINGULAR: Range<usize> = 8..12;
pub const DET_PLURAL: Range<usize> = 12..16;
/// Per topic: 10 singular then 10 plural nouns.
pub const NOUNS: Range<usize> = 16..176;
/// Per topic: 10 singular then 10 plural verb forms.
pub const VERBS: Range<usize> = 176..336;
/// Per topic: 10 adjectives.
pub const ADJECTIVES: Range<usize> = 336..416;
pub const ADVERBS: Range<usize> = 416..448;
pub const FUNCTION_WORDS: Range<usize> = 448..464;
pub const CONJUNCTIONS: Range<usize> = 464..472;
pub const SYMBOLS: Range<usize> = 472..512;

/// Smallest vocabulary that holds the whole layout.
pub const LAYOUT_SIZE: usize = 512;

pub(crate) fn noun(topic: usize, plural: bool, i: usize) -> usize {
    NOUNS.start + topic * 20 + usize::from(plural) * 10 + i
}

pub(crate) fn verb(topic: usize, plural: bool, i: usize) -> usize {
    VERBS.start + topic * 20 + usize::from(plural) * 10 + i
}

pub(crate) fn adjective(topic: usize, i: usize) -> usize {
    ADJECTIVES.start + topic * 10 + i
}

pub(crate) fn symbol(i: usize) -> usize {
    SYMBOLS.start + i
}

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}
