//! Synthetic corpus with controllable acoustic confusability.
//!
//! Every character has a random prototype vector; a word sounds like its
//! characters' prototypes, each held for a few frames, plus Gaussian noise.
//! Confusable pairs differ in one vowel, and at that position both members
//! sound like the midpoint of the two vowel prototypes, nudged apart by a small
//! offset. Entity pairs are rare capitalized names; homophone pairs are common
//! words with a skewed frequency split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crnt_core::numerics::Tensor;
use crnt_core::tokenizer::{train_bpe, Vocabulary};

use crate::error::{io_err, Error, Result};
use crate::features::write_features;
use crate::manifest::{Manifest, ManifestRecord};

const CONSONANTS: &[char] = &['b', 'd', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v'];
const VOWEL_SWAPS: &[(char, char)] = &[('a', 'e'), ('o', 'u'), ('i', 'e'), ('a', 'o')];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];
const CAPITALS: &[char] = &[
    'B', 'D', 'F', 'G', 'H', 'J', 'K', 'L', 'M', 'N', 'P', 'R', 'S', 'T', 'V', 'W', 'Z',
];
/// Far below the number of distinct names per capital, so the lexicon
/// sampler always finds fresh ones quickly.
const MAX_PAIRS_PER_CAPITAL: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_train: usize,
    /// Test utterances that carry an entity listed in their metadata.
    pub n_test_matched: usize,
    /// Test utterances of common words only, with unrelated metadata.
    pub n_test_unmatched: usize,
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub noise_sigma: f64,
    pub frames_per_char_min: usize,
    pub frames_per_char_max: usize,
    pub words_per_sentence_min: usize,
    pub words_per_sentence_max: usize,
    pub common_words: usize,
    pub homophone_pairs: usize,
    /// Share of the more frequent member of each homophone pair.
    pub homophone_majority: f64,
    pub entity_pairs: usize,
    /// Fraction of training utterances carrying one entity word.
    pub entity_utterance_rate: f64,
    /// Upper bound on the fraction of training utterances any single entity
    /// word appears in.
    pub max_entity_word_rate: f64,
    /// Probability that a training utterance's entity is listed in its
    /// metadata.
    pub metadata_rate: f64,
    pub distractors_min: usize,
    pub distractors_max: usize,
    /// Half-distance between confusable members at the differing character,
    /// as a fraction of the vowel prototypes' distance.
    pub confusable_offset: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.feature_dim == 0 || self.n_train == 0 {
            return bad("feature_dim and n_train must be positive");
        }
        if self.frames_per_char_min == 0 || self.frames_per_char_min > self.frames_per_char_max {
            return bad("frames per character must satisfy 1 <= min <= max");
        }
        if self.words_per_sentence_min == 0 || self.words_per_sentence_min > self.words_per_sentence_max {
            return bad("words per sentence must satisfy 1 <= min <= max");
        }
        if self.distractors_min > self.distractors_max {
            return bad("distractors_min exceeds distractors_max");
        }
        if self.entity_pairs > MAX_PAIRS_PER_CAPITAL * CAPITALS.len() {
            return bad(&format!("at most {} entity pairs", MAX_PAIRS_PER_CAPITAL * CAPITALS.len()));
        }
        if self.common_words < 2 * self.homophone_pairs + 1 {
            return bad("common_words must exceed twice homophone_pairs");
        }
        for (name, v) in [
            ("homophone_majority", self.homophone_majority),
            ("entity_utterance_rate", self.entity_utterance_rate),
            ("max_entity_word_rate", self.max_entity_word_rate),
            ("metadata_rate", self.metadata_rate),
            ("confusable_offset", self.confusable_offset),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Word inventory of a corpus.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub common: Vec<String>,
    /// Indices into `common`: (majority, minority).
    pub homophones: Vec<(usize, usize)>,
    pub entity_pairs: Vec<(String, String)>,
}

impl Lexicon {
    pub fn entities(&self) -> Vec<&str> {
        self.entity_pairs.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()]).collect()
    }

    /// The other member of `word`'s confusable entity pair.
    pub fn partner(&self, word: &str) -> Option<&str> {
        self.entity_pairs.iter().find_map(|(a, b)| {
            if a == word {
                Some(b.as_str())
            } else if b == word {
                Some(a.as_str())
            } else {
                None
            }
        })
    }
}

fn syllable<R: Rng>(rng: &mut R) -> String {
    format!("{}{}", CONSONANTS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())
}

/// Swaps the first vowel that has a partner in `VOWEL_SWAPS`.
fn vowel_variant(word: &str, swap: (char, char)) -> Option<String> {
    let chars: Vec<char> = word.chars().collect();
    let pos = chars.iter().position(|&c| c == swap.0 || c == swap.1)?;
    let mut out = chars.clone();
    out[pos] = if chars[pos] == swap.0 { swap.1 } else { swap.0 };
    Some(out.into_iter().collect())
}

pub fn build_lexicon<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Lexicon {
    let mut taken = BTreeSet::new();
    let mut common = Vec::new();
    let mut homophones = Vec::new();
    while homophones.len() < spec.homophone_pairs {
        let w = format!("{}{}", syllable(rng), syllable(rng));
        let swap = *VOWEL_SWAPS.choose(rng).unwrap();
        let Some(v) = vowel_variant(&w, swap) else { continue };
        if taken.contains(&w) || taken.contains(&v) {
            continue;
        }
        taken.insert(w.clone());
        taken.insert(v.clone());
        homophones.push((common.len(), common.len() + 1));
        common.push(w);
        common.push(v);
    }
    while common.len() < spec.common_words {
        let n_syl = rng.random_range(1..=2);
        let mut w: String = (0..n_syl).map(|_| syllable(rng)).collect();
        if rng.random_bool(0.5) {
            w.push(*CONSONANTS.choose(rng).unwrap());
        }
        if taken.insert(w.clone()) {
            common.push(w);
        }
    }
    let mut capitals = CAPITALS.to_vec();
    capitals.shuffle(rng);
    let mut entity_pairs = Vec::new();
    // Capitals are used round-robin, so names share a first letter only once
    // every capital is taken.
    for &cap in capitals.iter().cycle().take(spec.entity_pairs) {
        loop {
            let swap = *VOWEL_SWAPS.choose(rng).unwrap();
            let body = format!("{}{}{}", swap.0, CONSONANTS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap());
            let a = format!("{cap}{body}");
            let b = vowel_variant(&a, swap).expect("body starts with a swappable vowel");
            if !taken.contains(&a) && !taken.contains(&b) {
                taken.insert(a.clone());
                taken.insert(b.clone());
                entity_pairs.push((a, b));
                break;
            }
        }
    }
    Lexicon {
        common,
        homophones,
        entity_pairs,
    }
}

/// Per-character prototypes and the pair-specific blends.
pub struct Acoustics {
    pub prototypes: BTreeMap<char, Vec<f64>>,
    /// For each confusable word: (character position, replacement vector).
    pub blends: HashMap<String, (usize, Vec<f64>)>,
}

impl Acoustics {
    pub fn new<R: Rng>(spec: &SyntheticSpec, lexicon: &Lexicon, rng: &mut R) -> Self {
        let mut chars: BTreeSet<char> = BTreeSet::new();
        for w in lexicon.common.iter().map(String::as_str).chain(lexicon.entities()) {
            chars.extend(w.chars());
        }
        let std = Normal::new(0.0, 1.0).unwrap();
        let prototypes: BTreeMap<char, Vec<f64>> = chars
            .into_iter()
            .map(|c| (c, (0..spec.feature_dim).map(|_| std.sample(rng)).collect()))
            .collect();
        let mut blends = HashMap::new();
        let mut pairs: Vec<(String, String)> = lexicon.entity_pairs.clone();
        pairs.extend(
            lexicon
                .homophones
                .iter()
                .map(|&(a, b)| (lexicon.common[a].clone(), lexicon.common[b].clone())),
        );
        for (a, b) in pairs {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            let pos = (0..ca.len()).find(|&i| ca[i] != cb[i]).expect("pair members differ");
            let (pa, pb) = (&prototypes[&ca[pos]], &prototypes[&cb[pos]]);
            let mix = |sign: f64| -> Vec<f64> {
                pa.iter()
                    .zip(pb)
                    .map(|(x, y)| 0.5 * (x + y) + sign * spec.confusable_offset * 0.5 * (x - y))
                    .collect()
            };
            blends.insert(a, (pos, mix(1.0)));
            blends.insert(b, (pos, mix(-1.0)));
        }
        Self { prototypes, blends }
    }

    /// Noise-free frames of `word`, one vector per held frame.
    fn word_frames<R: Rng>(&self, spec: &SyntheticSpec, word: &str, rng: &mut R) -> Vec<Vec<f64>> {
        let blend = self.blends.get(word);
        let mut out = Vec::new();
        for (i, c) in word.chars().enumerate() {
            let proto = match blend {
                Some((pos, v)) if *pos == i => v,
                _ => &self.prototypes[&c],
            };
            let n = rng.random_range(spec.frames_per_char_min..=spec.frames_per_char_max);
            out.extend(std::iter::repeat_n(proto.clone(), n));
        }
        out
    }

    pub fn render<R: Rng>(&self, spec: &SyntheticSpec, words: &[&str], rng: &mut R) -> Tensor {
        let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
        let mut data = Vec::new();
        let mut rows = 0;
        for w in words {
            for frame in self.word_frames(spec, w, rng) {
                rows += 1;
                for x in frame {
                    let n = if spec.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                    data.push(x + n);
                }
            }
        }
        Tensor::matrix(rows, spec.feature_dim, data).expect("consistent frame widths")
    }
}

/// Transcript, entity positions and raw metadata of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub words: Vec<String>,
    pub entity_indices: Vec<usize>,
    pub metadata: Vec<String>,
}

struct Sampler<'a> {
    spec: &'a SyntheticSpec,
    lex: &'a Lexicon,
    /// Common words outside homophone pairs, plus one slot per pair.
    slots: Vec<Slot>,
}

#[derive(Clone, Copy)]
enum Slot {
    Word(usize),
    Homophone(usize),
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a SyntheticSpec, lex: &'a Lexicon) -> Self {
        let in_pair: BTreeSet<usize> = lex.homophones.iter().flat_map(|&(a, b)| [a, b]).collect();
        let mut slots: Vec<Slot> = (0..lex.common.len())
            .filter(|i| !in_pair.contains(i))
            .map(Slot::Word)
            .collect();
        slots.extend((0..lex.homophones.len()).map(Slot::Homophone));
        Self { spec, lex, slots }
    }

    fn common_word<R: Rng>(&self, rng: &mut R) -> String {
        match *self.slots.choose(rng).unwrap() {
            Slot::Word(i) => self.lex.common[i].clone(),
            Slot::Homophone(p) => {
                let (maj, min) = self.lex.homophones[p];
                let i = if rng.random_bool(self.spec.homophone_majority) { maj } else { min };
                self.lex.common[i].clone()
            }
        }
    }

    fn sentence<R: Rng>(&self, entity: Option<&str>, rng: &mut R) -> (Vec<String>, Vec<usize>) {
        let n = rng.random_range(self.spec.words_per_sentence_min..=self.spec.words_per_sentence_max);
        let mut words: Vec<String> = (0..n).map(|_| self.common_word(rng)).collect();
        let mut idx = Vec::new();
        if let Some(e) = entity {
            let pos = rng.random_range(0..n);
            words[pos] = e.to_string();
            idx.push(pos);
        }
        (words, idx)
    }

    /// Distractors are entity names unrelated to the transcript: never a
    /// transcript word and never the confusable partner of one.
    fn distractors<R: Rng>(&self, words: &[String], rng: &mut R) -> Vec<String> {
        let excluded: BTreeSet<&str> = words
            .iter()
            .flat_map(|w| [Some(w.as_str()), self.lex.partner(w)])
            .flatten()
            .collect();
        let mut pool: Vec<&str> = self.lex.entities().into_iter().filter(|e| !excluded.contains(e)).collect();
        pool.shuffle(rng);
        let n = rng.random_range(self.spec.distractors_min..=self.spec.distractors_max).min(pool.len());
        pool.into_iter().take(n).map(String::from).collect()
    }

    fn utterance<R: Rng>(&self, entity: Option<&str>, list_entity: bool, rng: &mut R) -> Utterance {
        let (words, entity_indices) = self.sentence(entity, rng);
        let mut metadata = self.distractors(&words, rng);
        if list_entity {
            if let Some(e) = entity {
                let at = rng.random_range(0..=metadata.len());
                metadata.insert(at, e.to_string());
            }
        }
        Utterance {
            words,
            entity_indices,
            metadata,
        }
    }
}

/// Training and test utterances (text only).
pub struct CorpusText {
    pub lexicon: Lexicon,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

pub fn sample_text<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> CorpusText {
    let lexicon = build_lexicon(spec, rng);
    let sampler = Sampler::new(spec, &lexicon);
    let entities = lexicon.entities();

    // Entity occurrences are spread evenly over the entity words and capped
    // per word.
    let cap = (spec.max_entity_word_rate * spec.n_train as f64).floor() as usize;
    let wanted = (spec.entity_utterance_rate * spec.n_train as f64).round() as usize;
    let mut slots: Vec<Option<&str>> = Vec::with_capacity(spec.n_train);
    if !entities.is_empty() {
        let per_word = (wanted / entities.len()).min(cap);
        for e in &entities {
            slots.extend(std::iter::repeat_n(Some(*e), per_word));
        }
    }
    slots.truncate(spec.n_train);
    slots.resize(spec.n_train, None);
    slots.shuffle(rng);
    let train = slots
        .into_iter()
        .map(|e| {
            let listed = e.is_some() && rng.random_bool(spec.metadata_rate);
            sampler.utterance(e, listed, rng)
        })
        .collect();

    let mut test = Vec::new();
    for i in 0..spec.n_test_matched {
        let e = entities.get(i % entities.len().max(1)).copied();
        test.push(sampler.utterance(e, true, rng));
    }
    for _ in 0..spec.n_test_unmatched {
        test.push(sampler.utterance(None, false, rng));
    }
    CorpusText { lexicon, train, test }
}

/// Summary of a generated corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub entity_pairs: Vec<(String, String)>,
    pub homophone_pairs: Vec<(String, String)>,
    pub common_words: Vec<String>,
    pub train_utterances: usize,
    pub test_utterances: usize,
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const TEST_MANIFEST: &str = "test.jsonl";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const INFO_FILE: &str = "corpus.json";

/// Writes features, manifests, the trained vocabulary and a corpus summary
/// under `out`. Output is a pure function of `spec`.
pub fn generate_corpus(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let text = sample_text(spec, &mut rng);
    let acoustics = Acoustics::new(spec, &text.lexicon, &mut rng);

    let mut bpe_corpus: Vec<String> = text.train.iter().map(|u| u.words.join(" ")).collect();
    bpe_corpus.push(text.lexicon.common.join(" "));
    bpe_corpus.push(text.lexicon.entities().join(" "));
    let vocab = train_bpe(&bpe_corpus, spec.vocab_size)?;

    let feat_dir = out.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(io_err(&feat_dir))?;
    let vocab_path = out.join(VOCAB_FILE);
    std::fs::write(&vocab_path, vocab.to_text()).map_err(io_err(&vocab_path))?;

    for (split, utts, manifest) in [("train", &text.train, TRAIN_MANIFEST), ("test", &text.test, TEST_MANIFEST)] {
        let mut records = Vec::with_capacity(utts.len());
        for (i, u) in utts.iter().enumerate() {
            let id = format!("{split}-{i:05}");
            let refs: Vec<&str> = u.words.iter().map(String::as_str).collect();
            let feats = acoustics.render(spec, &refs, &mut rng);
            let rel = PathBuf::from("features").join(format!("{id}.feat"));
            write_features(&out.join(&rel), &feats)?;
            records.push(ManifestRecord {
                utterance_id: id.clone(),
                video_id: format!("video-{id}"),
                features_path: rel,
                transcript: u.words.join(" "),
                entity_word_indices: u.entity_indices.clone(),
                metadata_words: u.metadata.clone(),
            });
        }
        Manifest::write(&out.join(manifest), &records)?;
    }

    let info = CorpusInfo {
        entity_pairs: text.lexicon.entity_pairs.clone(),
        homophone_pairs: text
            .lexicon
            .homophones
            .iter()
            .map(|&(a, b)| (text.lexicon.common[a].clone(), text.lexicon.common[b].clone()))
            .collect(),
        common_words: text.lexicon.common.clone(),
        train_utterances: text.train.len(),
        test_utterances: text.test.len(),
    };
    let info_path = out.join(INFO_FILE);
    std::fs::write(&info_path, serde_json::to_string_pretty(&info).expect("info serializes"))
        .map_err(io_err(&info_path))?;
    Ok(())
}

/// Loads the vocabulary written next to a generated corpus.
pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(Vocabulary::from_text(&text)?)
}
