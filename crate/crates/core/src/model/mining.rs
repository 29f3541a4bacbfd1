//! Offline mining of similar sequences for every training sample.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Head, Recognizer};
use crate::ctc::top_n_perception;
use crate::losses::{PssrConfig, SimilarSet};
use crate::semlm::{top_n_semantic, BiContextLM};
use crate::task::Dataset;
use crate::{Error, Result};

/// Similar sets keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MinedCache {
    sets: BTreeMap<u64, SimilarSet>,
}

impl MinedCache {
    pub fn get(&self, id: u64) -> Option<&SimilarSet> {
        self.sets.get(&id)
    }

    pub fn insert(&mut self, set: SimilarSet) {
        self.sets.insert(set.sample_id, set);
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SimilarSet> {
        self.sets.values()
    }

    /// One JSON record per line, ordered by sample id.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for s in self.sets.values() {
            serde_json::to_writer(&mut w, s)?;
            writeln!(w).map_err(|e| Error::io("<mined>", e))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut c = Self::default();
        for line in r.lines() {
            let line = line.map_err(|e| Error::io("<mined>", e))?;
            if !line.trim().is_empty() {
                c.insert(serde_json::from_str(&line)?);
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Perception candidates from a CTC reference model and semantic candidates
/// from the bidirectional-context LM, for every sample of `data`.
pub fn mine_similar_sets(
    reference: &Recognizer,
    lm: &BiContextLM,
    data: &Dataset,
    cfg: &PssrConfig,
) -> Result<MinedCache> {
    let width = 8 * (cfg.n_perception() + 1);
    mine_similar_sets_with_beam(reference, lm, data, cfg, Some(width))
}

/// [`mine_similar_sets`] with an explicit beam width; `None` searches
/// exhaustively.
pub fn mine_similar_sets_with_beam(
    reference: &Recognizer,
    lm: &BiContextLM,
    data: &Dataset,
    cfg: &PssrConfig,
    beam_width: Option<usize>,
) -> Result<MinedCache> {
    if reference.head() != Head::Ctc {
        return Err(Error::HeadMismatch {
            built: reference.head().name(),
            requested: Head::Ctc.name(),
        });
    }
    cfg.validate()?;
    let (n_p, n_s) = (cfg.n_perception(), cfg.n_semantic());
    let mut cache = MinedCache::default();
    for s in &data.samples {
        let mut set = SimilarSet::empty(s.id);
        if n_p > 0 {
            let m = reference.ctc_probs(&s.x)?;
            set.perception = top_n_perception(&m, n_p + 1, beam_width)
                .into_iter()
                .filter(|c| c.seq != s.y)
                .take(n_p)
                .collect();
        }
        if n_s > 0 && !s.y.is_empty() {
            // enough extra candidates to survive removing the target and
            // anything already mined by perception
            set.semantic = top_n_semantic(lm, &s.y, n_s + 1 + set.perception.len())?
                .into_iter()
                .filter(|c| c.seq != s.y && !set.perception.iter().any(|p| p.seq == c.seq))
                .take(n_s)
                .collect();
        }
        cache.insert(set);
    }
    Ok(cache)
}
