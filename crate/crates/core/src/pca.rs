//! One global linear projection over all years' summed vectors.
//!
//! The model is fitted once across the whole corpus (per-year refits are not
//! part of the API) and then applied to sparse vectors through the identity
//! `g = components . v - components . mean`, which never densifies the
//! corpus. Zeroing one feature before the projection reduces to subtracting
//! that feature's component column, which is what the importance scan
//! exploits.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sparsefeat::{DocId, FeatureId, SummedFeatureVector};

/// A PCA-transformed document vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVector {
    pub doc_id: DocId,
    pub values: DVector<f64>,
}

/// Global projection: orthonormal component rows over the centered feature
/// space.
#[derive(Clone, Debug)]
pub struct PcaModel {
    dim: usize,
    /// `n_components x dim`, orthonormal rows.
    components: DMatrix<f64>,
    mean: DVector<f64>,
    /// `components . mean`, cached for the sparse transform.
    mean_projection: DVector<f64>,
    /// Per-component variance, non-increasing.
    explained_variance: Vec<f64>,
    /// Trace of the data covariance; known after a fit, not recoverable from
    /// a persisted model.
    total_variance: Option<f64>,
    /// Set when the data rank fell below the requested component count.
    rank_deficient: bool,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    /// Fraction of total variance per component; `None` for loaded models
    /// where the total is unknown.
    pub fn explained_variance_ratio(&self) -> Option<Vec<f64>> {
        let total = self.total_variance?;
        if total <= 0.0 {
            return None;
        }
        Some(self.explained_variance.iter().map(|v| v / total).collect())
    }

    /// Cumulative share of total variance captured by the retained
    /// components, when known.
    pub fn cumulative_variance_ratio(&self) -> Option<f64> {
        let ratios = self.explained_variance_ratio()?;
        Some(ratios.iter().sum())
    }

    pub fn rank_deficient(&self) -> bool {
        self.rank_deficient
    }

    /// Largest deviation of the component rows from orthonormality.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = &self.components * self.components.transpose();
        let k = gram.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - expect).abs());
            }
        }
        worst
    }
}

/// Fits the global model. Uses an economy SVD of the centered document
/// matrix when there are fewer documents than features (the common case),
/// otherwise an eigen-decomposition of the feature covariance. Rank
/// deficiency below `n_components` is not an error: trailing components get
/// zero variance and the model is flagged.
pub fn fit_pca(corpus: &[SummedFeatureVector], n_components: usize) -> Result<PcaModel> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 documents, got {n}"
        )));
    }
    let dim = corpus[0].dim as usize;
    for v in corpus {
        if v.dim as usize != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim as usize,
            });
        }
    }
    if n_components == 0 || n_components > n.min(dim) {
        return Err(Error::Config(format!(
            "n_components must be in [1, min(#documents, dim)] = [1, {}], got {n_components}",
            n.min(dim)
        )));
    }

    let mut mean = DVector::zeros(dim);
    for v in corpus {
        for &(f, x) in v.entries() {
            mean[f as usize] += x;
        }
    }
    mean /= n as f64;

    let (ordered, total_variance) = if n < dim {
        // Economy SVD of the centered n x dim document matrix.
        let mut x = DMatrix::zeros(n, dim);
        for (i, v) in corpus.iter().enumerate() {
            for j in 0..dim {
                x[(i, j)] = -mean[j];
            }
            for &(f, val) in v.entries() {
                x[(i, f as usize)] += val;
            }
        }
        let total = x.norm_squared() / (n - 1) as f64;
        let svd = x.svd(false, true);
        let v_t = svd.v_t.expect("v_t requested");
        let mut ordered: Vec<(f64, DVector<f64>)> = svd
            .singular_values
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let var = s * s / (n - 1) as f64;
                (var, v_t.row(i).transpose())
            })
            .collect();
        ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite variances"));
        (ordered, total)
    } else {
        // Feature covariance accumulated document by document.
        let mut cov = DMatrix::zeros(dim, dim);
        let mut row = DVector::zeros(dim);
        for v in corpus {
            row.copy_from(&mean);
            row.neg_mut();
            for &(f, val) in v.entries() {
                row[f as usize] += val;
            }
            cov.ger(1.0, &row, &row, 1.0);
        }
        cov /= (n - 1) as f64;
        let total = cov.trace();
        let eigen = nalgebra::SymmetricEigen::new(cov);
        let mut ordered: Vec<(f64, DVector<f64>)> = eigen
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &l)| (l.max(0.0), eigen.eigenvectors.column(i).into_owned()))
            .collect();
        ordered.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite variances"));
        (ordered, total)
    };

    let mut components = DMatrix::zeros(n_components, dim);
    let mut explained_variance = Vec::with_capacity(n_components);
    for (r, (var, vec)) in ordered.into_iter().take(n_components).enumerate() {
        components.row_mut(r).copy_from(&vec.transpose());
        explained_variance.push(var);
    }

    // Deterministic sign: the entry of largest magnitude in each component
    // is made positive (first occurrence wins on exact ties).
    for r in 0..n_components {
        let mut best = 0;
        let mut best_abs = 0.0;
        for c in 0..dim {
            let a = components[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = c;
            }
        }
        if components[(r, best)] < 0.0 {
            components.row_mut(r).neg_mut();
        }
    }

    let var_floor = 1e-12 * total_variance.max(1.0);
    let rank_deficient = explained_variance.iter().any(|&v| v <= var_floor);
    if rank_deficient {
        log::warn!(
            "PCA rank deficiency: {} of {n_components} components carry (near-)zero variance",
            explained_variance.iter().filter(|&&v| v <= var_floor).count()
        );
    }

    let mean_projection = &components * &mean;
    Ok(PcaModel {
        dim,
        components,
        mean,
        mean_projection,
        explained_variance,
        total_variance: Some(total_variance),
        rank_deficient,
    })
}

/// Projects a sparse vector: `components . (densify(v) - mean)`, computed
/// without densifying.
pub fn transform(model: &PcaModel, v: &SummedFeatureVector) -> Result<DenseVector> {
    if v.dim as usize != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: v.dim as usize,
        });
    }
    let mut out = -model.mean_projection.clone();
    for &(f, x) in v.entries() {
        out.axpy(x, &model.components.column(f as usize), 1.0);
    }
    Ok(DenseVector {
        doc_id: v.doc_id.clone(),
        values: out,
    })
}

/// Projects `v` with feature `z` zeroed before the transform. By linearity
/// this is `transform(v) - v[z] * column_z(components)`.
pub fn transform_with_feature_zeroed(
    model: &PcaModel,
    v: &SummedFeatureVector,
    z: FeatureId,
) -> Result<DenseVector> {
    if (z as usize) >= model.dim {
        return Err(Error::Validation(format!(
            "feature {z} out of range (dim {})",
            model.dim
        )));
    }
    let mut out = transform(model, v)?;
    let x = v.get(z);
    if x != 0.0 {
        out.values.axpy(-x, &model.components.column(z as usize), 1.0);
    }
    Ok(out)
}

/// Patches an already-transformed vector for a zeroed feature:
/// `g - x_z * column_z`. Used by the importance scan to avoid re-projecting.
pub fn patch_transformed(model: &PcaModel, g: &DVector<f64>, x_z: f64, z: FeatureId) -> DVector<f64> {
    let mut out = g.clone();
    if x_z != 0.0 {
        out.axpy(-x_z, &model.components.column(z as usize), 1.0);
    }
    out
}

/// Maps a transformed vector back to feature space:
/// `mean + components^T . values`.
pub fn inverse_transform(model: &PcaModel, values: &DVector<f64>) -> DVector<f64> {
    let mut out = model.mean.clone();
    out.gemv_tr(1.0, &model.components, values, 1.0);
    out
}

impl PcaModel {
    /// Persists the model: a `(dim, n_components)` header followed by mean,
    /// components (row-major), and variances, all little-endian 64-bit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&(self.dim as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n_components() as u64).to_le_bytes())
            .map_err(io)?;
        for i in 0..self.dim {
            w.write_all(&self.mean[i].to_le_bytes()).map_err(io)?;
        }
        for r in 0..self.n_components() {
            for c in 0..self.dim {
                w.write_all(&self.components[(r, c)].to_le_bytes())
                    .map_err(io)?;
            }
        }
        for &v in &self.explained_variance {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    /// Loads a persisted model. The total-variance trace is not part of the
    /// file format, so variance ratios are unavailable on loaded models.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut u64buf = [0u8; 8];
        let io = |e| Error::io(path, e);
        r.read_exact(&mut u64buf).map_err(io)?;
        let dim = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf).map_err(io)?;
        let k = u64::from_le_bytes(u64buf) as usize;
        if dim == 0 || k == 0 || k > dim {
            return Err(Error::Validation(format!(
                "corrupt model header in {}: dim {dim}, n_components {k}",
                path.display()
            )));
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let mean = DVector::from_vec(read_f64s(dim)?);
        let components = DMatrix::from_row_slice(k, dim, &read_f64s(k * dim)?);
        let explained_variance = read_f64s(k)?;
        let mean_projection = &components * &mean;
        Ok(PcaModel {
            dim,
            components,
            mean,
            mean_projection,
            explained_variance,
            total_variance: None,
            rank_deficient: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn vec_of(doc: &str, dim: u32, entries: &[(FeatureId, f64)]) -> SummedFeatureVector {
        SummedFeatureVector::from_entries(DocId::from(doc), dim, entries.to_vec()).unwrap()
    }

    fn densify(v: &SummedFeatureVector) -> DVector<f64> {
        let mut out = DVector::zeros(v.dim as usize);
        for &(f, x) in v.entries() {
            out[f as usize] = x;
        }
        out
    }

    fn random_corpus(rng: &mut ChaCha8Rng, n: usize, dim: u32, nnz: usize) -> Vec<SummedFeatureVector> {
        (0..n)
            .map(|i| {
                let mut ids: Vec<u32> = (0..dim).collect();
                ids.shuffle(rng);
                let entries: Vec<(FeatureId, f64)> = ids[..nnz]
                    .iter()
                    .map(|&f| (f, rng.random_range(0.1..3.0)))
                    .collect();
                vec_of(&format!("d{i}"), dim, &entries)
            })
            .collect()
    }

    #[test]
    fn collinear_points_give_line_direction() {
        let corpus = vec![
            vec_of("a", 2, &[(0, 1.0), (1, 2.0)]),
            vec_of("b", 2, &[(0, 2.0), (1, 4.0)]),
            vec_of("c", 2, &[(0, 3.0), (1, 6.0)]),
        ];
        let model = fit_pca(&corpus, 2).unwrap();
        let expect = [1.0 / 5.0_f64.sqrt(), 2.0 / 5.0_f64.sqrt()];
        for c in 0..2 {
            assert!(
                (model.components()[(0, c)] - expect[c]).abs() < 1e-10,
                "component entry {c}"
            );
        }
        assert!(model.explained_variance()[1].abs() < 1e-12);
        assert!(model.rank_deficient());
    }

    #[test]
    fn full_rank_reconstruction_recovers_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = random_corpus(&mut rng, 9, 5, 4);
        let model = fit_pca(&corpus, 5).unwrap();
        for v in &corpus {
            let g = transform(&model, v).unwrap();
            let back = inverse_transform(&model, &g.values);
            let orig = densify(v);
            assert!((back - orig).norm() < 1e-6);
        }
    }

    #[test]
    fn transform_of_mean_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let corpus = random_corpus(&mut rng, 6, 8, 6);
        let model = fit_pca(&corpus, 4).unwrap();
        let mean_entries: Vec<(FeatureId, f64)> = (0..8)
            .filter_map(|f| {
                let m = model.mean()[f as usize];
                (m > 0.0).then_some((f, m))
            })
            .collect();
        let mean_vec = vec_of("mean", 8, &mean_entries);
        let g = transform(&model, &mean_vec).unwrap();
        assert!(g.values.norm() < 1e-10);
    }

    #[test]
    fn planted_factor_structure_matches_covariance_eigen_oracle() {
        // Ten orthogonal planted factors; the SVD route must agree with an
        // explicit covariance eigen-decomposition and capture >=99% variance.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 60u32;
        let n = 40;
        let corpus: Vec<SummedFeatureVector> = (0..n)
            .map(|i| {
                let mut entries = Vec::new();
                for factor in 0..10u32 {
                    let weight: f64 = rng.random_range(0.5..4.0);
                    // Factor f loads features 6f..6f+2 proportionally.
                    for k in 0..3u32 {
                        entries.push((factor * 6 + k, weight * (k + 1) as f64));
                    }
                }
                vec_of(&format!("d{i}"), dim, &entries)
            })
            .collect();
        let model = fit_pca(&corpus, 10).unwrap();
        let captured: f64 = model.cumulative_variance_ratio().unwrap();
        assert!(captured >= 0.99, "captured {captured}");

        // Explicit covariance oracle.
        let d = dim as usize;
        let mut mean = DVector::zeros(d);
        for v in &corpus {
            mean += densify(v);
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        for v in &corpus {
            let x = densify(v) - &mean;
            cov.ger(1.0 / (n - 1) as f64, &x, &x, 1.0);
        }
        let eigen = nalgebra::SymmetricEigen::new(cov);
        let mut eigvals: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
        eigvals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (got, expect) in model.explained_variance().iter().zip(&eigvals) {
            assert!(
                (got - expect).abs() < 1e-8 * expect.max(1.0),
                "variance {got} vs oracle {expect}"
            );
        }
    }

    #[test]
    fn sparse_transform_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corpus = random_corpus(&mut rng, 20, 24, 6);
        let model = fit_pca(&corpus, 8).unwrap();
        for v in &corpus {
            let fast = transform(&model, v).unwrap();
            let dense = model.components() * (densify(v) - model.mean());
            assert!((fast.values - dense).amax() < 1e-9);
        }
    }

    #[test]
    fn zeroed_shortcut_matches_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus = random_corpus(&mut rng, 15, 24, 8);
        let model = fit_pca(&corpus, 6).unwrap();
        for v in &corpus {
            let z = v.entries()[rng.random_range(0..v.nnz())].0;
            let fast = transform_with_feature_zeroed(&model, v, z).unwrap();
            // Recompute from scratch on the explicitly zeroed raw vector.
            let zeroed_entries: Vec<(FeatureId, f64)> = v
                .entries()
                .iter()
                .copied()
                .filter(|&(f, _)| f != z)
                .collect();
            let zeroed = vec_of(v.doc_id.as_str(), v.dim, &zeroed_entries);
            let slow = transform(&model, &zeroed).unwrap();
            assert!((fast.values - slow.values).amax() < 1e-9);
        }
    }

    #[test]
    fn zeroing_inactive_feature_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let corpus = random_corpus(&mut rng, 10, 24, 4);
        let model = fit_pca(&corpus, 4).unwrap();
        let v = &corpus[0];
        let inactive = (0..24).find(|&f| v.get(f) == 0.0).unwrap();
        let base = transform(&model, v).unwrap();
        let patched = transform_with_feature_zeroed(&model, v, inactive).unwrap();
        assert_eq!(base.values, patched.values);
    }

    #[test]
    fn affine_identity_of_transform() {
        // transform(au + bv) - a*transform(u) - b*transform(v)
        //   == (a + b - 1) * components . mean
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corpus = random_corpus(&mut rng, 12, 16, 6);
        let model = fit_pca(&corpus, 5).unwrap();
        let (u, v) = (&corpus[0], &corpus[1]);
        let (a, b) = (0.7, 1.9);
        let mut combo = std::collections::BTreeMap::new();
        for &(f, x) in u.entries() {
            *combo.entry(f).or_insert(0.0) += a * x;
        }
        for &(f, x) in v.entries() {
            *combo.entry(f).or_insert(0.0) += b * x;
        }
        let combo = SummedFeatureVector::from_entries(DocId::from("combo"), 16, combo).unwrap();
        let lhs = transform(&model, &combo).unwrap().values;
        let tu = transform(&model, u).unwrap().values;
        let tv = transform(&model, v).unwrap().values;
        let mean_proj = model.components() * model.mean();
        let rhs = a * tu + b * tv + (a + b - 1.0) * mean_proj;
        assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn variance_ratios_are_sane() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let corpus = random_corpus(&mut rng, 18, 12, 5);
        let model = fit_pca(&corpus, 6).unwrap();
        let ratios = model.explained_variance_ratio().unwrap();
        assert!(ratios.iter().sum::<f64>() <= 1.0 + 1e-12);
        let mut cum = 0.0;
        for r in &ratios {
            assert!(*r >= -1e-15);
            cum += r;
        }
        assert!(cum <= 1.0 + 1e-12);
        for w in model.explained_variance().windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert!(model.orthonormality_error() < 1e-8);
    }

    #[test]
    fn save_load_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let corpus = random_corpus(&mut rng, 10, 14, 5);
        let model = fit_pca(&corpus, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = PcaModel::load(&path).unwrap();
        assert_eq!(loaded.dim(), model.dim());
        assert_eq!(loaded.n_components(), model.n_components());
        assert_eq!(loaded.components(), model.components());
        assert_eq!(loaded.mean(), model.mean());
        assert_eq!(loaded.explained_variance(), model.explained_variance());
        let v = &corpus[3];
        assert_eq!(
            transform(&model, v).unwrap().values,
            transform(&loaded, v).unwrap().values
        );
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let corpus = vec![
            vec_of("a", 4, &[(0, 1.0)]),
            vec_of("b", 4, &[(1, 2.0)]),
        ];
        let model = fit_pca(&corpus, 2).unwrap();
        let wrong = vec_of("w", 8, &[(0, 1.0)]);
        assert!(matches!(
            transform(&model, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
