//! Decoding a manifest with a trained model.

use std::path::Path;

use rayon::prelude::*;

use crnt_core::decoder::{beam_search, dump_attention_trace, AttentionTrace, DEFAULT_MAX_SYMBOLS_PER_STEP};
use crnt_core::tokenizer::Vocabulary;

use crate::checkpoint::TrainingState;
use crate::error::{io_err, Result};
use crate::manifest::DecodeResult;
use crate::train::Example;

/// Best beam hypothesis and its attention trace.
pub struct Decoding {
    pub result: DecodeResult,
    pub trace: AttentionTrace,
}

pub fn decode_example(state: &TrainingState, vocab: &Vocabulary, ex: &Example, beam: usize) -> Result<Decoding> {
    let ranked = beam_search(
        &state.model,
        &state.params,
        vocab,
        &ex.features,
        &ex.context,
        beam,
        DEFAULT_MAX_SYMBOLS_PER_STEP,
    )?;
    let best = ranked.into_iter().next().expect("beam search returns at least one hypothesis");
    Ok(Decoding {
        result: DecodeResult {
            utterance_id: ex.utterance_id.clone(),
            hypothesis: vocab.decode(&best.tokens)?,
            log_score: best.log_score,
        },
        trace: best.trace,
    })
}

pub fn decode_all(state: &TrainingState, vocab: &Vocabulary, data: &[Example], beam: usize) -> Result<Vec<Decoding>> {
    data.par_iter().map(|ex| decode_example(state, vocab, ex, beam)).collect()
}

pub fn write_trace(dir: &Path, utterance_id: &str, trace: &AttentionTrace) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(format!("{utterance_id}.csv"));
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    dump_attention_trace(trace, std::io::BufWriter::new(file))?;
    Ok(())
}
