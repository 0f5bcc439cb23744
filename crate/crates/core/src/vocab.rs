//! Corpus ingestion, tokenization, vocabulary construction and
//! teacher-forced batching.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{digest_hex, Error, Result, TokenId};

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
pub const NUM_SPECIALS: usize = 3;

const SPECIAL_MARKERS: [&str; NUM_SPECIALS] = ["<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenizerMode {
    /// One token per Unicode scalar value.
    Char,
    /// Tokens are maximal runs of non-whitespace.
    Word,
}

impl TokenizerMode {
    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        match self {
            TokenizerMode::Char => text
                .char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect(),
            TokenizerMode::Word => text.split_whitespace().collect(),
        }
    }

    fn separator(&self) -> &'static str {
        match self {
            TokenizerMode::Char => "",
            TokenizerMode::Word => " ",
        }
    }
}

impl fmt::Display for TokenizerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizerMode::Char => "char",
            TokenizerMode::Word => "word",
        })
    }
}

impl FromStr for TokenizerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(TokenizerMode::Char),
            "word" | "whitespace-word" => Ok(TokenizerMode::Word),
            other => Err(Error::Config(format!("unknown tokenizer mode `{other}`"))),
        }
    }
}

/// Bidirectional token/id map. Ids 0, 1 and 2 are BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    mode: TokenizerMode,
}

impl Vocabulary {
    /// Keeps the `max_size - 3` most frequent tokens; ties go to the token
    /// seen first.
    pub fn build(corpus_text: &str, mode: TokenizerMode, max_size: usize) -> Result<Self> {
        if max_size < NUM_SPECIALS + 1 {
            return Err(Error::VocabTooSmall(max_size));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for line in corpus_text.lines() {
            for tok in mode.tokenize(line) {
                let next = counts.len();
                counts.entry(tok).or_insert((0, next)).0 += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize, usize)> =
            counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - NUM_SPECIALS);

        let tokens = SPECIAL_MARKERS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens, mode)
    }

    fn from_tokens(id_to_token: Vec<String>, mode: TokenizerMode) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (id, tok) in id_to_token.iter().enumerate().skip(NUM_SPECIALS) {
            if token_to_id.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::VocabFile(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            mode,
        })
    }

    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn mode(&self) -> TokenizerMode {
        self.mode
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Unknown tokens map to [`UNK`].
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.mode
            .tokenize(text)
            .into_iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(Error::IdOutOfRange {
                id: id as usize,
                size: self.size(),
            })?;
            parts.push(tok);
        }
        Ok(parts.join(self.mode.separator()))
    }

    /// One token per line in id order; the first three lines are the specials.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for tok in &self.id_to_token {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn parse(text: &str, mode: TokenizerMode) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let tokens: Vec<String> = body.split('\n').map(str::to_string).collect();
        if tokens.len() < NUM_SPECIALS + 1 {
            return Err(Error::VocabFile(format!("only {} lines", tokens.len())));
        }
        for (got, want) in tokens.iter().zip(SPECIAL_MARKERS) {
            if got != want {
                return Err(Error::VocabFile(format!(
                    "expected special {want:?}, found {got:?}"
                )));
            }
        }
        Self::from_tokens(tokens, mode)
    }

    pub fn load(path: &Path, mode: TokenizerMode) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, mode)
    }
}

/// Newline-delimited paragraphs, each encoded as one id sequence.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub sequences: Vec<Vec<TokenId>>,
    pub mode: TokenizerMode,
    pub source_digest: String,
}

impl Corpus {
    /// Every non-empty line becomes one sequence.
    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let sequences: Vec<Vec<TokenId>> = text
            .lines()
            .map(|line| vocab.encode(line))
            .filter(|ids| !ids.is_empty())
            .collect();
        if sequences.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self {
            sequences,
            mode: vocab.mode(),
            source_digest: digest_hex(text.as_bytes()),
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }
}

/// Where a batch row came from: sequence index and offset of the chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkOrigin {
    pub sequence: usize,
    pub offset: usize,
}

/// Teacher-forced batch. Row `i` holds `lengths[i]` valid steps; inputs start
/// with BOS and targets are the chunk tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<TokenId>,
    pub targets: Array2<TokenId>,
    pub pad_mask: Array2<bool>,
    pub lengths: Vec<usize>,
    pub origins: Vec<ChunkOrigin>,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn steps(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn num_valid(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn from_chunks(chunks: &[(ChunkOrigin, &[TokenId])]) -> Self {
        let rows = chunks.len();
        let steps = chunks.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
        let mut inputs = Array2::from_elem((rows, steps), BOS);
        let mut targets = Array2::from_elem((rows, steps), BOS);
        let mut pad_mask = Array2::from_elem((rows, steps), false);
        for (r, (_, chunk)) in chunks.iter().enumerate() {
            for (t, &tok) in chunk.iter().enumerate() {
                targets[[r, t]] = tok;
                pad_mask[[r, t]] = true;
                if t + 1 < chunk.len() {
                    inputs[[r, t + 1]] = tok;
                }
            }
        }
        Self {
            inputs,
            targets,
            pad_mask,
            lengths: chunks.iter().map(|(_, c)| c.len()).collect(),
            origins: chunks.iter().map(|(o, _)| *o).collect(),
        }
    }
}

/// Splits every sequence into contiguous chunks of at most `max_len` tokens
/// (`max_len == 0` disables splitting).
pub fn chunk_corpus(corpus: &Corpus, max_len: usize) -> Vec<(ChunkOrigin, &[TokenId])> {
    let mut out = Vec::new();
    for (s, seq) in corpus.sequences.iter().enumerate() {
        let width = if max_len == 0 { seq.len() } else { max_len };
        for (j, chunk) in seq.chunks(width).enumerate() {
            out.push((
                ChunkOrigin {
                    sequence: s,
                    offset: j * width,
                },
                chunk,
            ));
        }
    }
    out
}

/// One epoch of batches in a seeded shuffle order.
pub fn make_batches(corpus: &Corpus, batch_size: usize, max_len: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    let mut chunks = chunk_corpus(corpus, max_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    chunks.shuffle(&mut rng);
    chunks.chunks(batch_size).map(Batch::from_chunks).collect()
}

/// Batches in corpus order, for evaluation.
pub fn ordered_batches(corpus: &Corpus, batch_size: usize, max_len: usize) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    chunk_corpus(corpus, max_len)
        .chunks(batch_size)
        .map(Batch::from_chunks)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_vocab_counts_specials() {
        let v = Vocabulary::build("aba", TokenizerMode::Char, 10).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("a"), Some(3));
        assert_eq!(v.id("b"), Some(4));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        for mode in [TokenizerMode::Char, TokenizerMode::Word] {
            assert!(matches!(
                Vocabulary::build("", mode, 10),
                Err(Error::EmptyCorpus)
            ));
        }
        assert!(matches!(
            Vocabulary::build("  \n ", TokenizerMode::Word, 10),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn max_size_below_four_is_rejected() {
        assert!(matches!(
            Vocabulary::build("abc", TokenizerMode::Char, 3),
            Err(Error::VocabTooSmall(3))
        ));
    }

    #[test]
    fn word_vocab_frequency_then_first_occurrence() {
        let v = Vocabulary::build("x y x z x", TokenizerMode::Word, 5).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("x"), Some(3));
        assert_eq!(v.id("y"), Some(4));
        assert_eq!(v.id("z"), None);
    }

    #[test]
    fn encode_unknown_maps_to_unk() {
        let v = Vocabulary::build("ab", TokenizerMode::Char, 10).unwrap();
        assert_eq!(v.encode("ab"), vec![v.id("a").unwrap(), v.id("b").unwrap()]);
        assert_eq!(v.encode("azb"), vec![3, UNK, 4]);
    }

    #[test]
    fn decode_renders_specials() {
        let v = Vocabulary::build("ab", TokenizerMode::Char, 10).unwrap();
        assert_eq!(v.decode(&[3, UNK]).unwrap(), "a<unk>");
        assert_eq!(v.decode(&[BOS, EOS]).unwrap(), "<bos><eos>");
        assert!(matches!(
            v.decode(&[v.size() as TokenId]),
            Err(Error::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn word_round_trip() {
        let text = "the cat sat on the mat";
        let v = Vocabulary::build(text, TokenizerMode::Word, 100).unwrap();
        assert_eq!(v.decode(&v.encode(text)).unwrap(), text);
    }

    #[test]
    fn vocab_file_round_trip_keeps_space_token() {
        let v = Vocabulary::build("a b\tc", TokenizerMode::Char, 100).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<bos>\n<eos>\n<unk>\n"));
        let back = Vocabulary::parse(&text, TokenizerMode::Char).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn vocab_file_requires_specials() {
        assert!(Vocabulary::parse("a\nb\nc\nd\n", TokenizerMode::Char).is_err());
    }

    #[test]
    fn chunking_splits_long_sequences() {
        let v = Vocabulary::build("abcdefghij", TokenizerMode::Char, 20).unwrap();
        let c = Corpus::from_text("abcdefghij", &v).unwrap();
        let lens: Vec<usize> = chunk_corpus(&c, 4).iter().map(|(_, ch)| ch.len()).collect();
        assert_eq!(lens, vec![4, 4, 2]);
    }

    #[test]
    fn batch_targets_shift_inputs() {
        let v = Vocabulary::build("abcab\nca", TokenizerMode::Char, 20).unwrap();
        let c = Corpus::from_text("abcab\nca", &v).unwrap();
        for b in make_batches(&c, 2, 3, 7) {
            for r in 0..b.rows() {
                assert_eq!(b.inputs[[r, 0]], BOS);
                for t in 0..b.lengths[r] {
                    assert!(b.pad_mask[[r, t]]);
                    if t + 1 < b.lengths[r] {
                        assert_eq!(b.targets[[r, t]], b.inputs[[r, t + 1]]);
                    }
                }
                for t in b.lengths[r]..b.steps() {
                    assert!(!b.pad_mask[[r, t]]);
                }
            }
        }
    }

    #[test]
    fn batches_are_deterministic_under_seed() {
        let text = "one two three\nfour five\nsix seven eight nine\nten";
        let v = Vocabulary::build(text, TokenizerMode::Word, 50).unwrap();
        let c = Corpus::from_text(text, &v).unwrap();
        assert_eq!(make_batches(&c, 2, 2, 11), make_batches(&c, 2, 2, 11));
    }
}
