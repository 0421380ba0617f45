//! Sparse feature activations and their per-document aggregation.
//!
//! Activations arrive either token-level (`doc_id,token_index,feature_id,activation`)
//! or already summed (`doc_id,feature_id,summed_activation`); both normalize to
//! [`SummedFeatureVector`], the unit every later stage consumes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index into the sparse feature space.
pub type FeatureId = u32;

/// Identifies one document (one company report).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DocId(pub String);

impl DocId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocId {
    fn from(s: &str) -> Self {
        DocId(s.to_string())
    }
}

/// Corpus-level dimensions of the feature space. Validated on load, never
/// hard-coded, so small synthetic corpora run the same code path as the
/// full-size space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureSpace {
    /// Total number of features.
    pub dim: u32,
    /// Maximum number of active features per token.
    pub k_active: u32,
}

impl Default for FeatureSpace {
    fn default() -> Self {
        FeatureSpace {
            dim: 131_072,
            k_active: 128,
        }
    }
}

/// Sparse activations of a single token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeatureActivations {
    pub doc_id: DocId,
    pub token_index: u32,
    /// `(feature_id, activation)` pairs; ids unique, activations strictly positive.
    pub entries: Vec<(FeatureId, f64)>,
}

impl TokenFeatureActivations {
    fn validate(&self, space: FeatureSpace) -> Result<()> {
        if self.entries.len() > space.k_active as usize {
            return Err(Error::Validation(format!(
                "token {}:{} has {} active features, k_active is {}",
                self.doc_id,
                self.token_index,
                self.entries.len(),
                space.k_active
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(f, a) in &self.entries {
            if f >= space.dim {
                return Err(Error::Validation(format!(
                    "feature id {f} out of range (dim {})",
                    space.dim
                )));
            }
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Validation(format!(
                    "activation for feature {f} in token {}:{} must be finite and > 0, got {a}",
                    self.doc_id, self.token_index
                )));
            }
            if !seen.insert(f) {
                return Err(Error::Duplicate(format!(
                    "feature {f} repeated within token {}:{}",
                    self.doc_id, self.token_index
                )));
            }
        }
        Ok(())
    }
}

/// Per-document sum of token activations: a magnitude-scaled count of how
/// often each feature fires in the document.
#[derive(Clone, Debug, PartialEq)]
pub struct SummedFeatureVector {
    pub doc_id: DocId,
    pub dim: u32,
    /// Sorted by feature id; every stored value strictly positive.
    entries: Vec<(FeatureId, f64)>,
}

impl SummedFeatureVector {
    /// Builds a vector from arbitrary-order entries, validating invariants.
    pub fn from_entries(
        doc_id: DocId,
        dim: u32,
        entries: impl IntoIterator<Item = (FeatureId, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(FeatureId, f64)> = entries.into_iter().collect();
        entries.sort_by_key(|&(f, _)| f);
        for window in entries.windows(2) {
            if window[0].0 == window[1].0 {
                return Err(Error::Duplicate(format!(
                    "feature {} repeated in document {}",
                    window[0].0, doc_id
                )));
            }
        }
        for &(f, v) in &entries {
            if f >= dim {
                return Err(Error::Validation(format!(
                    "feature id {f} out of range (dim {dim}) in document {doc_id}"
                )));
            }
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!(
                    "summed activation for feature {f} in document {doc_id} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(SummedFeatureVector {
            doc_id,
            dim,
            entries,
        })
    }

    /// Sorted `(feature_id, value)` view.
    pub fn entries(&self) -> &[(FeatureId, f64)] {
        &self.entries
    }

    /// Value of feature `f`, zero when inactive.
    pub fn get(&self, f: FeatureId) -> f64 {
        match self.entries.binary_search_by_key(&f, |&(id, _)| id) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    /// Count of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }
}

/// Sums token activations of one document into its [`SummedFeatureVector`].
///
/// An empty token list yields an empty vector. Fails if any token carries a
/// different document id or violates the feature-space bounds.
pub fn sum_token_features(
    doc_id: &DocId,
    tokens: &[TokenFeatureActivations],
    space: FeatureSpace,
) -> Result<SummedFeatureVector> {
    let mut acc: BTreeMap<FeatureId, f64> = BTreeMap::new();
    for tok in tokens {
        if &tok.doc_id != doc_id {
            return Err(Error::Validation(format!(
                "token belongs to document {}, expected {doc_id}",
                tok.doc_id
            )));
        }
        tok.validate(space)?;
        for &(f, a) in &tok.entries {
            *acc.entry(f).or_insert(0.0) += a;
        }
    }
    SummedFeatureVector::from_entries(doc_id.clone(), space.dim, acc)
}

/// One bin of the summed-activation histogram. The overflow bin has
/// `hi == f64::INFINITY`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Histogram of summed activation values over all nonzero entries of the
/// given vectors. Regular bins of `bin_width` cover `[0, clip_max)`; values
/// at or above `clip_max` pool into a final overflow bin.
pub fn activation_histogram(
    vectors: &[SummedFeatureVector],
    bin_width: f64,
    clip_max: f64,
) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) {
        return Err(Error::Validation(format!(
            "bin_width must be > 0, got {bin_width}"
        )));
    }
    if !(clip_max > 0.0) {
        return Err(Error::Validation(format!(
            "clip_max must be > 0, got {clip_max}"
        )));
    }
    let n_regular = (clip_max / bin_width).ceil() as usize;
    let mut bins: Vec<HistogramBin> = (0..n_regular)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: ((i + 1) as f64 * bin_width).min(clip_max),
            count: 0,
        })
        .collect();
    bins.push(HistogramBin {
        lo: clip_max,
        hi: f64::INFINITY,
        count: 0,
    });
    for v in vectors {
        for &(_, x) in v.entries() {
            let idx = if x >= clip_max {
                n_regular
            } else {
                ((x / bin_width) as usize).min(n_regular - 1)
            };
            bins[idx].count += 1;
        }
    }
    Ok(bins)
}

/// Reads token-level activations (`doc_id,token_index,feature_id,activation`),
/// grouped by `(doc_id, token_index)` in first-appearance order.
pub fn load_token_activations(
    path: &Path,
    space: FeatureSpace,
) -> Result<Vec<TokenFeatureActivations>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut order: Vec<(String, u32)> = Vec::new();
    let mut groups: BTreeMap<(String, u32), Vec<(FeatureId, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let doc_id = field(&record, 0, path)?.to_string();
        let token_index: u32 = parse_field(&record, 1, path)?;
        let feature_id: FeatureId = parse_field(&record, 2, path)?;
        let activation: f64 = parse_field(&record, 3, path)?;
        if feature_id >= space.dim {
            return Err(Error::Validation(format!(
                "feature id {feature_id} out of range (dim {}) in {}",
                space.dim,
                path.display()
            )));
        }
        if !(activation > 0.0) || !activation.is_finite() {
            return Err(Error::Validation(format!(
                "activation must be finite and > 0, got {activation} in {}",
                path.display()
            )));
        }
        let key = (doc_id, token_index);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push((feature_id, activation));
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let entries = groups.remove(&key).unwrap();
        let tok = TokenFeatureActivations {
            doc_id: DocId(key.0),
            token_index: key.1,
            entries,
        };
        tok.validate(space)?;
        out.push(tok);
    }
    Ok(out)
}

/// Reads pre-summed vectors (`doc_id,feature_id,summed_activation`), grouped
/// by doc id in first-appearance order.
pub fn load_summed_features(path: &Path, space: FeatureSpace) -> Result<Vec<SummedFeatureVector>> {
    let mut reader = csv::Reader::from_path(path).map_err(from_csv_open(path))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<(FeatureId, f64)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let doc_id = field(&record, 0, path)?.to_string();
        let feature_id: FeatureId = parse_field(&record, 1, path)?;
        let value: f64 = parse_field(&record, 2, path)?;
        if !groups.contains_key(&doc_id) {
            order.push(doc_id.clone());
        }
        groups.entry(doc_id).or_default().push((feature_id, value));
    }
    let mut out = Vec::with_capacity(order.len());
    for doc_id in order {
        let entries = groups.remove(&doc_id).unwrap();
        out.push(SummedFeatureVector::from_entries(
            DocId(doc_id),
            space.dim,
            entries,
        )?);
    }
    Ok(out)
}

/// Writes token-level activations in the load format.
pub fn write_token_activations(path: &Path, tokens: &[TokenFeatureActivations]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["doc_id", "token_index", "feature_id", "activation"])?;
    for tok in tokens {
        for &(f, a) in &tok.entries {
            writer.write_record([
                tok.doc_id.as_str(),
                &tok.token_index.to_string(),
                &f.to_string(),
                &a.to_string(),
            ])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes summed vectors in the load format.
pub fn write_summed_features(path: &Path, vectors: &[SummedFeatureVector]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["doc_id", "feature_id", "summed_activation"])?;
    for v in vectors {
        for &(f, x) in v.entries() {
            writer.write_record([v.doc_id.as_str(), &f.to_string(), &x.to_string()])?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a histogram as `bin_lo,bin_hi,count`.
pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(from_csv_open(path))?;
    writer.write_record(["bin_lo", "bin_hi", "count"])?;
    for b in bins {
        writer.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string()])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub(crate) fn field<'a>(record: &'a csv::StringRecord, idx: usize, path: &Path) -> Result<&'a str> {
    record.get(idx).ok_or_else(|| {
        Error::Validation(format!(
            "missing column {idx} in {} (line {:?})",
            path.display(),
            record.position().map(|p| p.line())
        ))
    })
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = field(record, idx, path)?;
    raw.trim().parse().map_err(|e| {
        Error::Validation(format!(
            "cannot parse {:?} (column {idx}) in {}: {e}",
            raw,
            path.display()
        ))
    })
}

pub(crate) fn from_csv_open(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                Error::io(path, io)
            } else {
                unreachable!()
            }
        }
        _ => Error::Csv(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(dim: u32) -> FeatureSpace {
        FeatureSpace { dim, k_active: 128 }
    }

    fn tok(doc: &str, idx: u32, entries: &[(FeatureId, f64)]) -> TokenFeatureActivations {
        TokenFeatureActivations {
            doc_id: DocId::from(doc),
            token_index: idx,
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn summing_is_additive() {
        let tokens = vec![tok("d", 0, &[(7, 0.5)]), tok("d", 1, &[(7, 0.5)])];
        let summed = sum_token_features(&DocId::from("d"), &tokens, space(16)).unwrap();
        assert_eq!(summed.entries(), &[(7, 1.0)]);
    }

    #[test]
    fn empty_token_list_gives_empty_vector() {
        let summed = sum_token_features(&DocId::from("d"), &[], space(16)).unwrap();
        assert_eq!(summed.nnz(), 0);
    }

    #[test]
    fn mismatched_doc_id_is_fatal() {
        let tokens = vec![tok("other", 0, &[(1, 0.2)])];
        let err = sum_token_features(&DocId::from("d"), &tokens, space(16));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn random_document_matches_dense_accumulation() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let dim = 64u32;
        let mut tokens = Vec::new();
        for i in 0..100u32 {
            let n = rng.random_range(1..=8usize);
            let mut ids: Vec<u32> = (0..dim).collect();
            ids.shuffle(&mut rng);
            let entries: Vec<(FeatureId, f64)> = ids[..n]
                .iter()
                .map(|&f| (f, rng.random_range(0.01..2.0)))
                .collect();
            tokens.push(tok("d", i, &entries));
        }
        let summed = sum_token_features(&DocId::from("d"), &tokens, space(dim)).unwrap();

        // Dense brute-force oracle over a full-length array.
        let mut dense = vec![0.0f64; dim as usize];
        for t in &tokens {
            for &(f, a) in &t.entries {
                dense[f as usize] += a;
            }
        }
        for f in 0..dim {
            let expect = dense[f as usize];
            let got = summed.get(f);
            assert!(
                (expect - got).abs() < 1e-12,
                "feature {f}: dense {expect} vs sparse {got}"
            );
        }
        let nnz_dense = dense.iter().filter(|&&x| x > 0.0).count();
        assert_eq!(summed.nnz(), nnz_dense);
    }

    #[test]
    fn sparsity_bound_holds() {
        let sp = FeatureSpace { dim: 32, k_active: 4 };
        let tokens = vec![
            tok("d", 0, &[(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)]),
            tok("d", 1, &[(4, 1.0), (5, 1.0)]),
        ];
        let summed = sum_token_features(&DocId::from("d"), &tokens, sp).unwrap();
        assert!(summed.nnz() <= (sp.dim as usize).min(tokens.len() * sp.k_active as usize));
    }

    #[test]
    fn histogram_single_value() {
        let v = SummedFeatureVector::from_entries(DocId::from("d"), 8, vec![(3, 0.7)]).unwrap();
        let bins = activation_histogram(&[v], 0.5, 10.0).unwrap();
        let hit: Vec<_> = bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(hit.len(), 1);
        assert!(hit[0].lo <= 0.7 && 0.7 < hit[0].hi);
    }

    #[test]
    fn histogram_clips_overflow() {
        let v =
            SummedFeatureVector::from_entries(DocId::from("d"), 8, vec![(1, 3.0), (2, 99.0)])
                .unwrap();
        let bins = activation_histogram(&[v], 1.0, 5.0).unwrap();
        let last = bins.last().unwrap();
        assert_eq!(last.lo, 5.0);
        assert!(last.hi.is_infinite());
        assert_eq!(last.count, 1);
    }

    #[test]
    fn histogram_exponential_decay_is_monotone_past_mode() {
        use rand::prelude::*;
        use rand_distr::Exp;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let exp = Exp::new(1.0 / 0.7).unwrap();
        let mut entries = Vec::new();
        for f in 0..20_000u32 {
            let x: f64 = exp.sample(&mut rng);
            if x > 0.0 {
                entries.push((f, x));
            }
        }
        let v = SummedFeatureVector::from_entries(DocId::from("d"), 20_000, entries).unwrap();
        let bins = activation_histogram(&[v], 0.5, 6.0).unwrap();
        let counts: Vec<u64> = bins.iter().map(|b| b.count).collect();
        let mode = counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, c)| *c)
            .unwrap()
            .0;
        // Exponential decay: counts fall monotonically after the mode
        // (ignore the pooled overflow bin).
        for i in mode..counts.len() - 2 {
            assert!(
                counts[i] >= counts[i + 1],
                "bin {i} ({}) < bin {} ({})",
                counts[i],
                i + 1,
                counts[i + 1]
            );
        }
    }

    #[test]
    fn load_rejects_out_of_range_feature() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.csv");
        std::fs::write(&path, "doc_id,token_index,feature_id,activation\nd,0,16,0.5\n").unwrap();
        let err = load_token_activations(&path, space(16));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn load_rejects_negative_activation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.csv");
        std::fs::write(&path, "doc_id,token_index,feature_id,activation\nd,0,3,-0.5\n").unwrap();
        let err = load_token_activations(&path, space(16));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn token_load_groups_triplets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.csv");
        std::fs::write(
            &path,
            "doc_id,token_index,feature_id,activation\nd,0,1,0.5\nd,0,2,0.25\nd,0,9,1.5\n",
        )
        .unwrap();
        let tokens = load_token_activations(&path, space(16)).unwrap();
        assert_eq!(tokens.len(), 1);
        assert_eq!(tokens[0].entries.len(), 3);
    }

    #[test]
    fn summed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summed.csv");
        let vs = vec![
            SummedFeatureVector::from_entries(DocId::from("a"), 32, vec![(1, 0.5), (30, 2.25)])
                .unwrap(),
            SummedFeatureVector::from_entries(DocId::from("b"), 32, vec![(7, 1.0)]).unwrap(),
        ];
        write_summed_features(&path, &vs).unwrap();
        let back = load_summed_features(&path, space(32)).unwrap();
        assert_eq!(vs, back);
    }

    #[test]
    fn token_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.csv");
        let tokens = vec![
            tok("a", 0, &[(1, 0.5), (2, 0.125)]),
            tok("a", 1, &[(1, 0.75)]),
            tok("b", 0, &[(9, 3.5)]),
        ];
        write_token_activations(&path, &tokens).unwrap();
        let back = load_token_activations(&path, space(16)).unwrap();
        assert_eq!(tokens, back);
    }
}
