//! Multi-modal retrieval: deterministic caption generation, caption-embedding
//! queries against the slice index with frequency aggregation, and the
//! rank-interleaving ensemble.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::index::{IndexKind, StoredIndex};
use crate::ranking::{RankedList, RankedVolume};
use crate::slice_retrieval::parent_volume_id;

/// Caption text plus the image features it describes.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub volume_id: String,
    pub organ: String,
    pub num_lesions: usize,
    pub largest_length_cm: Option<f64>,
    pub text: String,
}

impl CaptionRecord {
    pub fn new(
        volume_id: impl Into<String>,
        organ: impl Into<String>,
        num_lesions: usize,
        largest_length_cm: Option<f64>,
    ) -> Result<Self> {
        let organ = organ.into();
        let text = generate_caption(&organ, num_lesions, largest_length_cm)?;
        Ok(Self {
            volume_id: volume_id.into(),
            organ,
            num_lesions,
            largest_length_cm,
            text,
        })
    }

    /// One structured-text record, field names as in the type definition.
    pub fn to_text_line(&self) -> String {
        let length = match self.largest_length_cm {
            Some(l) => format!("{l:.2}"),
            None => "none".to_string(),
        };
        format!(
            "volume_id={} organ={} num_lesions={} largest_length_cm={} text=\"{}\"",
            self.volume_id, self.organ, self.num_lesions, length, self.text
        )
    }
}

/// Which list the interleaving ensemble draws from first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleFirst {
    Caption,
    SliceFreq,
}

/// Interleaving configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub first: EnsembleFirst,
    pub k: usize,
}

impl EnsembleConfig {
    pub fn new(k: usize) -> Self {
        Self {
            first: EnsembleFirst::Caption,
            k,
        }
    }
}

/// Produce a caption from image features. Pure template instantiation, no
/// model call; the grammatical number is deliberately not adjusted
/// ("1 tumors") so the output is a fixed function of its inputs.
pub fn generate_caption(
    organ: &str,
    num_lesions: usize,
    largest_length_cm: Option<f64>,
) -> Result<String> {
    if num_lesions == 0 {
        return Ok(format!(
            "A normal image of the {organ} with no tumors present."
        ));
    }
    let length = largest_length_cm.ok_or_else(|| {
        Error::validation(format!(
            "caption for {organ} with {num_lesions} lesions needs the largest length"
        ))
    })?;
    if length <= 0.0 {
        return Err(Error::validation(format!(
            "largest lesion length must be positive, got {length}"
        )));
    }
    Ok(format!(
        "3D volume image showcasing a {organ} with {num_lesions} tumors, \
         the largest of which measures {length:.2} centimeters in length"
    ))
}

/// Query the slice index with a single caption embedding: retrieve the top-n
/// slices, aggregate to parent volumes by frequency, return the top-k.
pub fn caption_query(
    caption_embedding: &[f32],
    slice_index: &StoredIndex,
    n: usize,
    k: usize,
) -> Result<RankedList> {
    if slice_index.kind != IndexKind::Slice {
        return Err(Error::validation(format!(
            "caption retrieval needs a slice index, got kind {}",
            slice_index.kind
        )));
    }
    if n == 0 || k == 0 {
        return Err(Error::validation("caption query n and k must be positive"));
    }
    if slice_index.index.is_empty() {
        return Ok(RankedList::new("caption", Vec::new()));
    }
    if caption_embedding.len() != slice_index.index.dim() {
        return Err(Error::validation(format!(
            "caption embedding dim {} does not match index dim {}",
            caption_embedding.len(),
            slice_index.index.dim()
        )));
    }

    let hits = slice_index.index.search(caption_embedding, n)?;
    let total = hits.len() as f64;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for h in &hits {
        *counts.entry(parent_volume_id(&h.key)).or_default() += 1;
    }
    let mut entries: Vec<RankedVolume> = counts
        .into_iter()
        .map(|(id, count)| RankedVolume {
            volume_id: id.to_string(),
            score: count as f64 / total,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.volume_id.cmp(&b.volume_id))
    });
    entries.truncate(k);
    Ok(RankedList::new("caption", entries))
}

/// Merge two ranked lists by alternating ranks: take the next unseen volume
/// from one list, then the other, skipping volumes already emitted, until k
/// volumes are out or both lists are exhausted. Output scores are ordinal
/// (1/rank) since the two methods' scores are not commensurable.
pub fn ensemble_interleave(
    list_a: &RankedList,
    list_b: &RankedList,
    config: EnsembleConfig,
) -> RankedList {
    let (first, second) = match config.first {
        EnsembleFirst::Caption => (list_a, list_b),
        EnsembleFirst::SliceFreq => (list_b, list_a),
    };
    let mut seen = std::collections::BTreeSet::new();
    let mut out: Vec<RankedVolume> = Vec::new();
    let mut iters = [first.entries.iter(), second.entries.iter()];
    let mut exhausted = [false, false];
    let mut turn = 0usize;
    while out.len() < config.k && !(exhausted[0] && exhausted[1]) {
        let mut emitted = false;
        for e in iters[turn].by_ref() {
            if seen.insert(e.volume_id.clone()) {
                out.push(RankedVolume {
                    volume_id: e.volume_id.clone(),
                    score: 1.0 / (out.len() + 1) as f64,
                });
                emitted = true;
                break;
            }
        }
        if !emitted {
            exhausted[turn] = true;
        }
        turn = 1 - turn;
    }
    RankedList::new("ensemble", out)
}
