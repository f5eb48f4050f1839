//! Synthetic episode generation with controllable reasoning verbosity.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::EpisodeRecord;
use crate::backend::SyntheticModel;
use crate::vocab::SemanticId;

pub const HISTORY_MIN: usize = 4;
pub const HISTORY_MAX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CotStyle {
    /// No reasoning chain.
    None,
    /// At most 8 filler tokens around the preference clause.
    Short,
    /// 64 to 128 filler tokens around the preference clause.
    Verbose,
}

impl CotStyle {
    fn filler_range(self) -> Option<(usize, usize)> {
        match self {
            CotStyle::None => None,
            CotStyle::Short => Some((0, 8)),
            CotStyle::Verbose => Some((64, 128)),
        }
    }
}

impl fmt::Display for CotStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CotStyle::None => "none",
            CotStyle::Short => "short",
            CotStyle::Verbose => "verbose",
        })
    }
}

impl FromStr for CotStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CotStyle::None),
            "short" => Ok(CotStyle::Short),
            "verbose" => Ok(CotStyle::Verbose),
            other => Err(format!("unknown CoT style `{other}` (expected none, short or verbose)")),
        }
    }
}

fn render_cot(model: &SyntheticModel, topic: usize, style: CotStyle, rng: &mut ChaCha8Rng) -> String {
    let Some((lo, hi)) = style.filler_range() else {
        return String::new();
    };
    let n_filler = rng.gen_range(lo..=hi);
    let pool = model.filler_tokens();
    let mut filler = |n: usize| -> String {
        let words: Vec<&str> = (0..n).map(|_| pool[rng.gen_range(0..pool.len())].as_str()).collect();
        format!(" {} .", words.join(" "))
    };
    let before = n_filler / 2;
    let after = n_filler - before;
    let mut cot = String::from("I need to analyze the history .");
    if before > 0 {
        cot.push_str(&filler(before));
    }
    cot.push_str(" First , the user repeatedly watches ");
    cot.push_str(&model.cluster_token(topic));
    cot.push_str(" .");
    if after > 0 {
        cot.push_str(&filler(after));
    }
    cot
}

/// Generates `n` episodes. Each user draws a cluster from the prior, a
/// history from that cluster, and a target from the drift-free
/// posterior predictive given the history. The chain of thought names the
/// history's most probable cluster, padded with style-dependent filler.
pub fn synth_dataset(model: &SyntheticModel, n: usize, style: CotStyle, seed: u64) -> Vec<EpisodeRecord> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = WeightedIndex::new(model.prior()).expect("prior is a valid distribution");
    let cluster_samplers: Vec<WeightedIndex<f64>> = model
        .clusters()
        .iter()
        .map(|q| WeightedIndex::new(q).expect("cluster is a valid distribution"))
        .collect();
    let no_mentions = vec![0.0; cfg.clusters];
    (0..n)
        .map(|i| {
            let cluster = prior.sample(&mut rng);
            let len = rng.gen_range(HISTORY_MIN..=HISTORY_MAX);
            let history: Vec<usize> = (0..len).map(|_| cluster_samplers[cluster].sample(&mut rng)).collect();
            let base = model.base_distribution(&history, &no_mentions);
            let target = WeightedIndex::new(&base).expect("posterior predictive").sample(&mut rng);
            let cot = render_cot(model, model.map_cluster(&history), style, &mut rng);
            let sid = |idx: usize| SemanticId::from_index(idx, cfg.levels, cfg.codes_per_level);
            EpisodeRecord {
                user: format!("u{i:05}"),
                history: history.into_iter().map(sid).collect(),
                cot,
                candidates: None,
                target: sid(target),
            }
        })
        .collect()
}
