//! Essay datasets, per-prompt metadata, score scaling and cross-validation folds.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prompt id given to the reading-ease corpus.
pub const CRP_PROMPT_ID: i64 = 0;
pub const CRP_SCORE_MIN: f64 = -3.68;
pub const CRP_SCORE_MAX: f64 = 1.72;
pub const CRP_N_P: usize = 252;
pub const N_FOLDS: usize = 5;

fn default_true() -> bool {
    true
}

/// Score range and token budget of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: i64,
    pub score_min: f64,
    pub score_max: f64,
    /// Token budget; computed from the corpus when absent.
    #[serde(default)]
    pub n_p: Option<usize>,
    /// Integer scores (rounded before QWK) versus a continuous target.
    #[serde(default = "default_true")]
    pub discrete: bool,
}

impl PromptSpec {
    pub fn new(prompt_id: i64, score_min: f64, score_max: f64, n_p: Option<usize>, discrete: bool) -> Result<Self> {
        let spec = PromptSpec {
            prompt_id,
            score_min,
            score_max,
            n_p,
            discrete,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.score_min.is_finite() && self.score_max.is_finite() && self.score_min < self.score_max) {
            return Err(Error::InvalidArgument(format!(
                "prompt {}: score range [{}, {}] is empty",
                self.prompt_id, self.score_min, self.score_max
            )));
        }
        if self.n_p == Some(0) {
            return Err(Error::InvalidArgument(format!("prompt {}: n_p must be ≥ 1", self.prompt_id)));
        }
        if self.discrete && (self.score_min.fract() != 0.0 || self.score_max.fract() != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prompt {}: discrete range needs integer bounds",
                self.prompt_id
            )));
        }
        Ok(())
    }

    /// The token budget, failing if it was never set or computed.
    pub fn budget(&self) -> Result<usize> {
        self.n_p
            .ok_or_else(|| Error::InvalidArgument(format!("prompt {}: n_p is not set", self.prompt_id)))
    }

    /// Number of distinct integer ratings, `R = max − min + 1`.
    pub fn rating_count(&self) -> usize {
        (self.score_max - self.score_min) as usize + 1
    }

    pub fn contains(&self, score: f64) -> bool {
        score >= self.score_min && score <= self.score_max
    }

    fn check_score(&self, score: f64) -> Result<()> {
        if self.contains(score) {
            Ok(())
        } else {
            Err(Error::ScoreRange {
                prompt_id: self.prompt_id,
                score,
                min: self.score_min,
                max: self.score_max,
            })
        }
    }
}

/// The eight ASAP prompts: score ranges and WordPiece budgets.
pub fn asap_prompts() -> Vec<PromptSpec> {
    [
        (1, 2.0, 12.0, 649),
        (2, 1.0, 6.0, 704),
        (3, 0.0, 3.0, 219),
        (4, 0.0, 3.0, 203),
        (5, 0.0, 4.0, 258),
        (6, 0.0, 4.0, 289),
        (7, 0.0, 30.0, 371),
        (8, 0.0, 60.0, 1077),
    ]
    .into_iter()
    .map(|(id, lo, hi, n_p)| PromptSpec {
        prompt_id: id,
        score_min: lo,
        score_max: hi,
        n_p: Some(n_p),
        discrete: true,
    })
    .collect()
}

pub fn crp_prompt() -> PromptSpec {
    PromptSpec {
        prompt_id: CRP_PROMPT_ID,
        score_min: CRP_SCORE_MIN,
        score_max: CRP_SCORE_MAX,
        n_p: Some(CRP_N_P),
        discrete: false,
    }
}

/// Prompt specs keyed by id; serialized as a JSON array of specs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<PromptSpec>", try_from = "Vec<PromptSpec>")]
pub struct PromptSet(BTreeMap<i64, PromptSpec>);

impl From<PromptSet> for Vec<PromptSpec> {
    fn from(set: PromptSet) -> Self {
        set.0.into_values().collect()
    }
}

impl TryFrom<Vec<PromptSpec>> for PromptSet {
    type Error = Error;

    fn try_from(specs: Vec<PromptSpec>) -> Result<Self> {
        PromptSet::new(specs)
    }
}

impl PromptSet {
    pub fn new(specs: impl IntoIterator<Item = PromptSpec>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for s in specs {
            s.validate()?;
            let id = s.prompt_id;
            if map.insert(id, s).is_some() {
                return Err(Error::InvalidArgument(format!("prompt {id} listed twice")));
            }
        }
        Ok(PromptSet(map))
    }

    pub fn asap() -> Self {
        PromptSet::new(asap_prompts()).expect("built-in specs are valid")
    }

    /// Reads a JSON array of `{prompt_id, score_min, score_max, n_p}`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let specs: Vec<PromptSpec> = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        PromptSet::new(specs)
    }

    pub fn get(&self, prompt_id: i64) -> Result<&PromptSpec> {
        self.0
            .get(&prompt_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown prompt {prompt_id}")))
    }

    pub fn get_mut(&mut self, prompt_id: i64) -> Option<&mut PromptSpec> {
        self.0.get_mut(&prompt_id)
    }

    pub fn insert(&mut self, spec: PromptSpec) -> Result<()> {
        spec.validate()?;
        self.0.insert(spec.prompt_id, spec);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptSpec> {
        self.0.values()
    }

    pub fn ids(&self) -> Vec<i64> {
        self.0.keys().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Essay {
    pub essay_id: String,
    pub prompt_id: i64,
    pub text: String,
    pub raw_score: f64,
}

/// Train/dev/test essay ids for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

fn ingestion(path: &Path, row: usize, detail: impl Into<String>) -> Error {
    Error::Ingestion {
        location: format!("{}:{row}", path.display()),
        detail: detail.into(),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| ingestion(path, 1, format!("missing column {name:?}")))
}

/// Reads an ASAP-style TSV (`essay_id, essay_set, essay, domain1_score`).
/// Every row must belong to one of `prompts` and score within its range.
pub fn load_asap_tsv(path: &Path, prompts: &PromptSet) -> Result<Vec<Essay>> {
    let content = read_to_string(path)?;
    if content.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| ingestion(path, 1, e.to_string()))?.clone();
    let (c_id, c_set, c_text, c_score) = (
        column(&headers, "essay_id", path)?,
        column(&headers, "essay_set", path)?,
        column(&headers, "essay", path)?,
        column(&headers, "domain1_score", path)?,
    );
    let mut essays = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingestion(path, row, e.to_string()))?;
        let field = |c: usize, name: &str| {
            rec.get(c)
                .ok_or_else(|| ingestion(path, row, format!("missing field {name}")))
        };
        let essay_id = field(c_id, "essay_id")?.trim().to_string();
        let set = field(c_set, "essay_set")?;
        let prompt_id: i64 = set
            .trim()
            .parse()
            .map_err(|_| ingestion(path, row, format!("essay_set {set:?} is not an integer")))?;
        let spec = prompts
            .get(prompt_id)
            .map_err(|_| ingestion(path, row, format!("unknown prompt {prompt_id}")))?;
        let raw = field(c_score, "domain1_score")?;
        let score: f64 = raw
            .trim()
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| ingestion(path, row, format!("domain1_score {raw:?} is not numeric")))?;
        if spec.discrete && score.fract() != 0.0 {
            return Err(ingestion(path, row, format!("score {score} is not an integer")));
        }
        spec.check_score(score)?;
        essays.push(Essay {
            essay_id,
            prompt_id,
            text: field(c_text, "essay")?.to_string(),
            raw_score: score,
        });
    }
    Ok(essays)
}

/// Reads a CRP-style CSV (`id, excerpt, target`).
pub fn load_crp_csv(path: &Path) -> Result<Vec<Essay>> {
    let spec = crp_prompt();
    let content = read_to_string(path)?;
    if content.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| ingestion(path, 1, e.to_string()))?.clone();
    let (c_id, c_text, c_target) = (
        column(&headers, "id", path)?,
        column(&headers, "excerpt", path)?,
        column(&headers, "target", path)?,
    );
    let mut essays = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| ingestion(path, row, e.to_string()))?;
        let get = |c: usize| rec.get(c).ok_or_else(|| ingestion(path, row, "short row"));
        let raw = get(c_target)?;
        let score: f64 = raw
            .trim()
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| ingestion(path, row, format!("target {raw:?} is not numeric")))?;
        spec.check_score(score)?;
        essays.push(Essay {
            essay_id: get(c_id)?.trim().to_string(),
            prompt_id: CRP_PROMPT_ID,
            text: get(c_text)?.to_string(),
            raw_score: score,
        });
    }
    Ok(essays)
}

/// Linear min-max scaling of a raw score into `[0, 1]`.
pub fn normalize_score(score: f64, spec: &PromptSpec) -> Result<f64> {
    spec.check_score(score)?;
    Ok((score - spec.score_min) / (spec.score_max - spec.score_min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    /// Nearest integer, halves away from zero.
    Nearest,
    None,
}

impl Rounding {
    pub fn for_spec(spec: &PromptSpec) -> Self {
        if spec.discrete {
            Rounding::Nearest
        } else {
            Rounding::None
        }
    }
}

/// Clips `y` to `[0, 1]`, maps it onto the prompt range and optionally rounds.
pub fn denormalize_score(y: f64, spec: &PromptSpec, rounding: Rounding) -> f64 {
    let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, 1.0) };
    let s = y * (spec.score_max - spec.score_min) + spec.score_min;
    match rounding {
        Rounding::Nearest => s.round().clamp(spec.score_min, spec.score_max),
        Rounding::None => s,
    }
}

/// Nearest-rank 90th percentile of token lengths: the smallest length that is
/// at least as long as 90% of essays.
pub fn percentile_budget(lengths: &[usize]) -> Result<usize> {
    if lengths.is_empty() {
        return Err(Error::InvalidArgument("cannot compute n_p from no essays".into()));
    }
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let rank = (0.9 * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1].max(1))
}

/// Five folds from one seeded shuffle: the shuffled list is cut into five
/// contiguous blocks of near-equal size; fold `f` tests on block `f`, validates on block
/// `f + 1 (mod 5)` and trains on the other three.
pub fn make_folds(essays: &[Essay], seed: u64) -> Result<Vec<FoldSplit>> {
    if essays.len() < N_FOLDS {
        return Err(Error::InvalidArgument(format!(
            "need at least {N_FOLDS} essays for {N_FOLDS}-fold splits, got {}",
            essays.len()
        )));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = essays.iter().find(|e| !seen.insert(e.essay_id.as_str())) {
        return Err(Error::InvalidArgument(format!("duplicate essay id {:?}", dup.essay_id)));
    }
    let mut ids: Vec<String> = essays.iter().map(|e| e.essay_id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // Block boundaries at round(i·n/5), so any one block and any two
    // neighbouring blocks are within ±1 of their 20% and 40% quotas.
    let n = ids.len();
    let bound = |i: usize| (2 * i * n + N_FOLDS) / (2 * N_FOLDS);
    let blocks: Vec<Vec<String>> = (0..N_FOLDS).map(|b| ids[bound(b)..bound(b + 1)].to_vec()).collect();
    Ok((0..N_FOLDS)
        .map(|f| {
            let dev = (f + 1) % N_FOLDS;
            FoldSplit {
                fold_index: f,
                test_ids: blocks[f].clone(),
                dev_ids: blocks[dev].clone(),
                train_ids: (0..N_FOLDS)
                    .filter(|&b| b != f && b != dev)
                    .flat_map(|b| blocks[b].iter().cloned())
                    .collect(),
            }
        })
        .collect())
}

/// An essay paired with its label scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEssay {
    pub essay: Essay,
    pub label: f64,
}

/// Every essay not written for `target`, labels normalized with its own prompt range.
pub fn out_of_domain_pool(essays: &[Essay], prompts: &PromptSet, target: i64) -> Result<Vec<LabeledEssay>> {
    let pool = essays
        .iter()
        .filter(|e| e.prompt_id != target)
        .map(|e| {
            Ok(LabeledEssay {
                essay: e.clone(),
                label: normalize_score(e.raw_score, prompts.get(e.prompt_id)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool(target));
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn spec(id: i64) -> PromptSpec {
        PromptSet::asap().get(id).unwrap().clone()
    }

    fn essays(n: usize) -> Vec<Essay> {
        (0..n)
            .map(|i| Essay {
                essay_id: format!("e{i}"),
                prompt_id: 1,
                text: String::new(),
                raw_score: 2.0,
            })
            .collect()
    }

    const HEADER: &str = "essay_id\tessay_set\tessay\tdomain1_score\n";

    #[test]
    fn asap_rows_map_to_essays() {
        let f = write_tmp(&format!("{HEADER}1\t1\tDear local newspaper, \"computers\" help\t8\n"));
        let e = load_asap_tsv(f.path(), &PromptSet::asap()).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].prompt_id, 1);
        assert_eq!(e[0].raw_score, 8.0);
        assert_eq!(e[0].text, "Dear local newspaper, \"computers\" help");
    }

    #[test]
    fn asap_errors_name_the_row() {
        let f = write_tmp(&format!("{HEADER}1\t1\tok\t8\n2\t1\ttoo high\t13\n"));
        assert!(matches!(
            load_asap_tsv(f.path(), &PromptSet::asap()),
            Err(Error::ScoreRange { prompt_id: 1, .. })
        ));
        let f = write_tmp(&format!("{HEADER}1\t1\tok\tabc\n"));
        let err = load_asap_tsv(f.path(), &PromptSet::asap()).unwrap_err().to_string();
        assert!(err.contains(":2"), "{err}");
        let f = write_tmp(&format!("{HEADER}1\t42\tok\t3\n"));
        assert!(matches!(load_asap_tsv(f.path(), &PromptSet::asap()), Err(Error::Ingestion { .. })));
        let f = write_tmp("essay_id\tessay\tdomain1_score\n1\tok\t3\n");
        assert!(load_asap_tsv(f.path(), &PromptSet::asap()).unwrap_err().to_string().contains("essay_set"));
    }

    #[test]
    fn empty_file_gives_no_essays() {
        let f = write_tmp("");
        assert!(load_asap_tsv(f.path(), &PromptSet::asap()).unwrap().is_empty());
        assert!(load_crp_csv(f.path()).unwrap().is_empty());
    }

    #[test]
    fn crp_range_endpoints() {
        let f = write_tmp("id,excerpt,target\na,\"Once, upon a time\",-3.68\nb,text,1.72\n");
        let e = load_crp_csv(f.path()).unwrap();
        assert_eq!(e[0].raw_score, -3.68);
        assert_eq!(e[0].text, "Once, upon a time");
        assert_eq!(e[1].raw_score, 1.72);
        let f = write_tmp("id,excerpt,target\na,x,1.9\n");
        assert!(matches!(load_crp_csv(f.path()), Err(Error::ScoreRange { .. })));
        let f = write_tmp("id,excerpt,target\na,x,\n");
        assert!(matches!(load_crp_csv(f.path()), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_score(15.0, &spec(7)).unwrap(), 0.5);
        assert_eq!(normalize_score(2.0, &spec(1)).unwrap(), 0.0);
        assert_eq!(normalize_score(45.0, &spec(8)).unwrap(), 0.75);
        assert_eq!(normalize_score(12.0, &spec(1)).unwrap(), 1.0);
        assert!(normalize_score(13.0, &spec(1)).is_err());
    }

    #[test]
    fn denormalization_examples() {
        assert_eq!(denormalize_score(1.3, &spec(3), Rounding::Nearest), 3.0);
        assert_eq!(denormalize_score(0.5, &spec(7), Rounding::Nearest), 15.0);
        assert_eq!(denormalize_score(-0.2, &spec(1), Rounding::Nearest), 2.0);
        // 0.25 · 2 = 0.5 rounds away from zero
        let half = PromptSpec::new(9, 0.0, 2.0, None, true).unwrap();
        assert_eq!(denormalize_score(0.25, &half, Rounding::Nearest), 1.0);
        let c = crp_prompt();
        assert!((denormalize_score(0.5, &c, Rounding::None) - (-0.98)).abs() < 1e-12);
    }

    #[test]
    fn integer_grid_round_trips_for_every_prompt() {
        for s in asap_prompts() {
            let mut v = s.score_min;
            while v <= s.score_max {
                let y = normalize_score(v, &s).unwrap();
                assert_eq!(denormalize_score(y, &s, Rounding::Nearest), v);
                v += 1.0;
            }
        }
    }

    #[test]
    fn ten_essays_give_test_blocks_of_two() {
        let folds = make_folds(&essays(10), 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut all: Vec<String> = folds.iter().flat_map(|f| f.test_ids.clone()).collect();
        assert!(folds.iter().all(|f| f.test_ids.len() == 2));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);
        assert_eq!(folds, make_folds(&essays(10), 3).unwrap());
        assert_ne!(folds, make_folds(&essays(10), 4).unwrap());
        assert!(make_folds(&essays(4), 3).is_err());
    }

    #[test]
    fn prompt_one_fold_sizes() {
        for f in make_folds(&essays(1783), 0).unwrap() {
            let n = 1783.0;
            assert!((f.train_ids.len() as f64 - 0.6 * n).abs() <= 1.0);
            assert!((f.dev_ids.len() as f64 - 0.2 * n).abs() <= 1.0);
            assert!((f.test_ids.len() as f64 - 0.2 * n).abs() <= 1.0);
        }
    }

    proptest! {
        #[test]
        fn folds_partition_the_corpus(n in 5usize..200, seed in any::<u64>()) {
            let es = essays(n);
            for f in make_folds(&es, seed).unwrap() {
                let mut all: Vec<&String> = f.train_ids.iter().chain(&f.dev_ids).chain(&f.test_ids).collect();
                prop_assert_eq!(all.len(), n);
                all.sort();
                all.dedup();
                prop_assert_eq!(all.len(), n);
                let q = n as f64 / 5.0;
                prop_assert!((f.test_ids.len() as f64 - q).abs() <= 1.0);
                prop_assert!((f.dev_ids.len() as f64 - q).abs() <= 1.0);
                prop_assert!((f.train_ids.len() as f64 - 3.0 * q).abs() <= 1.0);
            }
        }

        #[test]
        fn normalization_is_monotone(a in 0.0f64..60.0, b in 0.0f64..60.0) {
            let s = spec(8);
            let (na, nb) = (normalize_score(a, &s).unwrap(), normalize_score(b, &s).unwrap());
            if a < b {
                prop_assert!(na < nb);
            }
            prop_assert!((0.0..=1.0).contains(&na));
        }
    }

    #[test]
    fn pool_excludes_the_target_prompt() {
        let mut es = essays(3);
        es.push(Essay {
            essay_id: "b1".into(),
            prompt_id: 7,
            text: String::new(),
            raw_score: 30.0,
        });
        let pool = out_of_domain_pool(&es, &PromptSet::asap(), 1).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].essay.essay_id, "b1");
        assert_eq!(pool[0].label, 1.0);
        let pool = out_of_domain_pool(&es, &PromptSet::asap(), 7).unwrap();
        assert_eq!(pool.len(), 3);
        assert!(pool.iter().all(|p| p.essay.prompt_id != 7 && (0.0..=1.0).contains(&p.label)));
        assert!(matches!(out_of_domain_pool(&essays(3), &PromptSet::asap(), 1), Err(Error::EmptyPool(1))));
    }

    #[test]
    fn percentile_budget_is_nearest_rank() {
        let lens: Vec<usize> = (1..=10).collect();
        assert_eq!(percentile_budget(&lens).unwrap(), 9);
        assert_eq!(percentile_budget(&[5]).unwrap(), 5);
        let lens: Vec<usize> = (1..=100).rev().collect();
        assert_eq!(percentile_budget(&lens).unwrap(), 90);
        assert!(percentile_budget(&[]).is_err());
    }

    #[test]
    fn prompt_spec_json_round_trip() {
        let f = write_tmp(r#"[{"prompt_id": 1, "score_min": 2, "score_max": 12, "n_p": 649},
                              {"prompt_id": 0, "score_min": -3.68, "score_max": 1.72, "n_p": 252, "discrete": false}]"#);
        let set = PromptSet::load(f.path()).unwrap();
        assert_eq!(set.get(1).unwrap(), &spec(1));
        assert_eq!(set.get(0).unwrap(), &crp_prompt());
        let f = write_tmp(r#"[{"prompt_id": 1, "score_min": 5, "score_max": 5}]"#);
        assert!(PromptSet::load(f.path()).is_err());
    }
}
