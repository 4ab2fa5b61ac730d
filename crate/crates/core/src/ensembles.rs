//! Matrix Gaussian series: construction of the named ensembles, seeded
//! sampling, and the Hermitian dilation of rectangular series.
//!
//! Coefficients are held in a sparse Hermitian form. The named ensembles
//! (diagonal, GOE, spin blocks, independent-entry) all have coefficients
//! with at most a couple of nonzero entries, so a GOE series at dimension
//! 400 keeps its 160000 coefficients in a few megabytes instead of
//! terabytes of dense storage.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matalg::{C64, ComplexMatrix, HermMatrix, UnitaryMatrix, ONE};
use crate::rng::{purpose, Substream};

/// Hermitian matrix stored as its upper-triangle nonzeros. The lower
/// triangle is implied by conjugate symmetry.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseHerm {
    dim: usize,
    /// entries with row <= col; diagonal entries have zero imaginary part
    entries: Vec<(u32, u32, C64)>,
}

impl SparseHerm {
    pub fn from_herm(h: &HermMatrix) -> Self {
        let d = h.dim();
        let m = h.matrix();
        let mut entries = Vec::new();
        for i in 0..d {
            for j in i..d {
                let z = m[(i, j)];
                if z.re != 0.0 || z.im != 0.0 {
                    entries.push((i as u32, j as u32, z));
                }
            }
        }
        SparseHerm { dim: d, entries }
    }

    fn from_entries(dim: usize, entries: Vec<(u32, u32, C64)>) -> Self {
        SparseHerm { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz_stored(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// All structural nonzeros including the mirrored lower triangle.
    pub fn full_entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        self.entries.iter().flat_map(|&(i, j, v)| {
            let first = (i as usize, j as usize, v);
            let second = if i != j {
                Some((j as usize, i as usize, v.conj()))
            } else {
                None
            };
            std::iter::once(first).chain(second)
        })
    }

    pub fn to_herm(&self) -> HermMatrix {
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.full_entries() {
            m[(i, j)] = v;
        }
        HermMatrix::symmetrized(m)
    }

    /// `out += c * H`.
    pub fn add_scaled_into(&self, c: f64, out: &mut ComplexMatrix) {
        for (i, j, v) in self.full_entries() {
            out[(i, j)] += v * c;
        }
    }

    /// `out += H^2`.
    pub fn square_into(&self, out: &mut ComplexMatrix) {
        let full: Vec<_> = self.full_entries().collect();
        for &(a, b, v) in &full {
            for &(c, e, w) in &full {
                if b == c {
                    out[(a, e)] += v * w;
                }
            }
        }
    }

    /// `out += H K H` for a dense kernel `K`.
    pub fn sandwich_into(&self, k: &ComplexMatrix, out: &mut ComplexMatrix) {
        let full: Vec<_> = self.full_entries().collect();
        for &(a, b, v) in &full {
            for &(c, e, w) in &full {
                out[(a, e)] += v * k[(b, c)] * w;
            }
        }
    }

    /// `tr[H A H B]` for dense `A`, `B`.
    pub fn trace_sandwich(&self, a: &ComplexMatrix, b: &ComplexMatrix) -> C64 {
        let full: Vec<_> = self.full_entries().collect();
        let mut acc = C64::new(0.0, 0.0);
        for &(r, s, v) in &full {
            for &(t, u, w) in &full {
                acc += v * w * a[(s, t)] * b[(u, r)];
            }
        }
        acc
    }

    /// `out += H M` for dense `M`.
    pub fn left_mul_into(&self, m: &ComplexMatrix, out: &mut ComplexMatrix) {
        let cols = m.ncols();
        for (a, b, v) in self.full_entries() {
            for c in 0..cols {
                out[(a, c)] += v * m[(b, c)];
            }
        }
    }

    /// `out += M H` for dense `M`.
    pub fn right_mul_into(&self, m: &ComplexMatrix, out: &mut ComplexMatrix) {
        let rows = m.nrows();
        for (a, b, v) in self.full_entries() {
            for r in 0..rows {
                out[(r, b)] += m[(r, a)] * v;
            }
        }
    }

    /// `H v` for a dense vector.
    pub fn matvec(&self, v: &DVector<C64>) -> DVector<C64> {
        let mut out = DVector::zeros(self.dim);
        for (i, j, w) in self.full_entries() {
            out[i] += w * v[j];
        }
        out
    }

    pub fn frob_sq(&self) -> f64 {
        self.full_entries().map(|(_, _, v)| v.norm_sqr()).sum()
    }
}

/// One realization of a series: the Gaussian weights and the assembled matrix.
#[derive(Clone, Debug)]
pub struct SampleDraw {
    pub gaussians: Vec<f64>,
    pub realized: HermMatrix,
}

/// A matrix Gaussian series `X = sum_i g_i H_i` with Hermitian coefficients
/// of common dimension. Immutable after construction; sampling is a pure
/// function of `(seed, index)`.
#[derive(Clone, Debug)]
pub struct GaussianSeries {
    dim: usize,
    coeffs: Vec<SparseHerm>,
    label: String,
}

impl GaussianSeries {
    pub fn new(coeffs: Vec<HermMatrix>, label: impl Into<String>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::spec("a series needs at least one coefficient"));
        }
        let dim = coeffs[0].dim();
        for (k, h) in coeffs.iter().enumerate() {
            if h.dim() != dim {
                return Err(Error::spec(format!(
                    "coefficient {k} has dimension {}, expected {dim}",
                    h.dim()
                )));
            }
        }
        let sparse: Vec<SparseHerm> = coeffs.iter().map(SparseHerm::from_herm).collect();
        if sparse.iter().all(SparseHerm::is_zero) {
            return Err(Error::spec("all coefficients are zero"));
        }
        Ok(GaussianSeries {
            dim,
            coeffs: sparse,
            label: label.into(),
        })
    }

    fn from_sparse(dim: usize, coeffs: Vec<SparseHerm>, label: String) -> Self {
        debug_assert!(coeffs.iter().any(|c| !c.is_zero()));
        GaussianSeries { dim, coeffs, label }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of coefficients.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn coeffs(&self) -> &[SparseHerm] {
        &self.coeffs
    }

    pub fn coeff_dense(&self, i: usize) -> HermMatrix {
        self.coeffs[i].to_herm()
    }

    pub fn scale(&self, c: f64) -> GaussianSeries {
        let coeffs = self
            .coeffs
            .iter()
            .map(|h| SparseHerm {
                dim: h.dim,
                entries: h.entries.iter().map(|&(i, j, v)| (i, j, v * c)).collect(),
            })
            .collect();
        GaussianSeries {
            dim: self.dim,
            coeffs,
            label: format!("{} * {c}", self.label),
        }
    }

    /// Sum of squared Frobenius norms of the coefficients; the entrywise
    /// variances of a realized draw sum to this across the matrix.
    pub fn coeff_frob_sq_sum(&self) -> f64 {
        self.coeffs.iter().map(SparseHerm::frob_sq).sum()
    }

    /// Draw number `index` of the series under `seed`. Pure function of
    /// `(seed, index)`: identical across runs and parallel schedules.
    pub fn sample(&self, seed: u64, index: u64) -> SampleDraw {
        let mut stream = Substream::new(seed, purpose::SAMPLE, index);
        let gaussians = stream.normal_vec(self.coeffs.len());
        let realized = self.assemble(&gaussians);
        SampleDraw {
            gaussians,
            realized,
        }
    }

    /// `sum_i weights[i] * H_i`.
    pub fn assemble(&self, weights: &[f64]) -> HermMatrix {
        assert_eq!(weights.len(), self.coeffs.len());
        let mut m = ComplexMatrix::zeros(self.dim, self.dim);
        for (h, &g) in self.coeffs.iter().zip(weights) {
            h.add_scaled_into(g, &mut m);
        }
        HermMatrix::symmetrized(m)
    }
}

/// Rectangular matrix Gaussian series `Z = sum_i g_i S_i`.
#[derive(Clone, Debug)]
pub struct RectSeries {
    rows: usize,
    cols: usize,
    coeffs: Vec<ComplexMatrix>,
}

impl RectSeries {
    pub fn new(coeffs: Vec<ComplexMatrix>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::spec("a series needs at least one coefficient"));
        }
        let rows = coeffs[0].nrows();
        let cols = coeffs[0].ncols();
        for (k, s) in coeffs.iter().enumerate() {
            if s.nrows() != rows || s.ncols() != cols {
                return Err(Error::spec(format!("coefficient {k} has mismatched shape")));
            }
        }
        Ok(RectSeries { rows, cols, coeffs })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn coeffs(&self) -> &[ComplexMatrix] {
        &self.coeffs
    }
}

/// Hermitian dilation: each rectangular coefficient `S` becomes
/// `[[0, S], [S*, 0]]` of dimension `rows + cols`. Eigenvalues of the
/// dilation are plus/minus the singular values of the original block.
pub fn dilate(rect: &RectSeries) -> Result<GaussianSeries> {
    let d = rect.rows + rect.cols;
    let mut coeffs = Vec::with_capacity(rect.coeffs.len());
    for s in &rect.coeffs {
        let mut m = ComplexMatrix::zeros(d, d);
        for i in 0..rect.rows {
            for j in 0..rect.cols {
                let z = s[(i, j)];
                m[(i, rect.rows + j)] = z;
                m[(rect.rows + j, i)] = z.conj();
            }
        }
        coeffs.push(HermMatrix::symmetrized(m));
    }
    GaussianSeries::new(coeffs, format!("dilation({}x{})", rect.rows, rect.cols))
}

const DEFAULT_GROUP_CAP: usize = 10_000;

fn default_group_cap() -> usize {
    DEFAULT_GROUP_CAP
}

/// Complex matrix in JSON: rows of `[re, im]` pairs.
pub type MatrixDef = Vec<Vec<[f64; 2]>>;

pub fn matrix_from_def(def: &MatrixDef) -> Result<ComplexMatrix> {
    let rows = def.len();
    if rows == 0 {
        return Err(Error::spec("empty matrix"));
    }
    let cols = def[0].len();
    let mut m = ComplexMatrix::zeros(rows, cols);
    for (i, row) in def.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::spec(format!("ragged matrix row {i}")));
        }
        for (j, &[re, im]) in row.iter().enumerate() {
            if !re.is_finite() || !im.is_finite() {
                return Err(Error::spec("matrix entry is not finite"));
            }
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok(m)
}

pub fn matrix_to_def(m: &ComplexMatrix) -> MatrixDef {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

/// Declarative ensemble description. Serializes as
/// `{"kind": ..., "params": {...}, "label": ...}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnsembleSpec {
    #[serde(flatten)]
    pub kind: EnsembleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Independent standard normals on the diagonal.
    Diag { d: usize },
    /// Gaussian orthogonal ensemble `(2d)^{-1/2} (G + G*)`.
    Goe { d: usize },
    /// Direct sum of `blocks` independent two-dimensional spin series.
    Spin { blocks: usize },
    /// Symmetric matrix with independent centered entries whose variances
    /// come from a symmetric pattern `a`.
    Indep {
        a: Vec<Vec<f64>>,
        /// Use one coefficient per ordered pair `(i, j)` instead of one per
        /// unordered pair, doubling the off-diagonal entry variances.
        #[serde(default)]
        verbatim_sum: bool,
    },
    /// Conjugation orbit of a seed matrix under the group generated by the
    /// given unitaries.
    GroupOrbit {
        generators: Vec<MatrixDef>,
        seed_matrix: MatrixDef,
        #[serde(default = "default_group_cap")]
        cap: usize,
    },
    /// Coefficients read from a text file (see the custom format docs).
    Custom { path: String },
}

impl EnsembleSpec {
    pub fn diag(d: usize) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Diag { d },
            label: None,
        }
    }

    pub fn goe(d: usize) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Goe { d },
            label: None,
        }
    }

    pub fn spin(blocks: usize) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Spin { blocks },
            label: None,
        }
    }

    pub fn indep(a: Vec<Vec<f64>>) -> Self {
        EnsembleSpec {
            kind: EnsembleKind::Indep {
                a,
                verbatim_sum: false,
            },
            label: None,
        }
    }

    pub fn display_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.kind {
            EnsembleKind::Diag { d } => format!("diag:{d}"),
            EnsembleKind::Goe { d } => format!("goe:{d}"),
            EnsembleKind::Spin { blocks } => format!("spin:{blocks}"),
            EnsembleKind::Indep { a, .. } => format!("indep:{}", a.len()),
            EnsembleKind::GroupOrbit { .. } => "group-orbit".to_string(),
            EnsembleKind::Custom { path } => format!("custom:{path}"),
        }
    }

    /// Inline grammar `kind:param`, e.g. `goe:200`, `diag:1000`, `spin:64`,
    /// `custom:coeffs.txt`.
    pub fn parse_inline(s: &str) -> Result<Self> {
        let t = s.trim();
        let (kind, rest) = match t.split_once(':') {
            Some((k, r)) => (k.trim(), Some(r.trim())),
            None => (t, None),
        };
        let dim_of = |what: &str| -> Result<usize> {
            let r = rest.ok_or_else(|| {
                Error::spec(format!("{kind} requires a {what}, e.g. {kind}:8"))
            })?;
            let v: usize = r.parse().map_err(|_| {
                Error::spec(format!("invalid {what} {r:?} in ensemble {s:?}"))
            })?;
            if v == 0 {
                return Err(Error::spec(format!("{what} must be positive in {s:?}")));
            }
            Ok(v)
        };
        match kind {
            "diag" => Ok(EnsembleSpec::diag(dim_of("dimension")?)),
            "goe" => Ok(EnsembleSpec::goe(dim_of("dimension")?)),
            "spin" => Ok(EnsembleSpec::spin(dim_of("block count")?)),
            "custom" => {
                let path = rest
                    .filter(|r| !r.is_empty())
                    .ok_or_else(|| Error::spec("custom requires a file path"))?;
                Ok(EnsembleSpec {
                    kind: EnsembleKind::Custom {
                        path: path.to_string(),
                    },
                    label: None,
                })
            }
            other => Err(Error::spec(format!(
                "unknown ensemble kind {other:?} (expected diag, goe, spin, custom, or a JSON spec file)"
            ))),
        }
    }

    pub fn build(&self) -> Result<GaussianSeries> {
        build(self)
    }
}

/// Pauli spin matrices plus the scaled identity that cancels the
/// alternating fourth-order sum. `alpha = 2 sqrt(3) - 3` is the positive
/// root of `a^2 + 6a - 3 = 0`.
pub fn spin_block_coeffs() -> [HermMatrix; 4] {
    let alpha = 2.0 * 3.0_f64.sqrt() - 3.0;
    let mut h0 = ComplexMatrix::zeros(2, 2);
    h0[(0, 0)] = C64::new(alpha.sqrt(), 0.0);
    h0[(1, 1)] = C64::new(alpha.sqrt(), 0.0);
    let mut h1 = ComplexMatrix::zeros(2, 2);
    h1[(0, 0)] = ONE;
    h1[(1, 1)] = C64::new(-1.0, 0.0);
    let mut h2 = ComplexMatrix::zeros(2, 2);
    h2[(0, 1)] = ONE;
    h2[(1, 0)] = ONE;
    let mut h3 = ComplexMatrix::zeros(2, 2);
    h3[(0, 1)] = C64::new(0.0, 1.0);
    h3[(1, 0)] = C64::new(0.0, -1.0);
    [
        HermMatrix::symmetrized(h0),
        HermMatrix::symmetrized(h1),
        HermMatrix::symmetrized(h2),
        HermMatrix::symmetrized(h3),
    ]
}

/// Construct the coefficient list of a named or custom ensemble.
pub fn build(spec: &EnsembleSpec) -> Result<GaussianSeries> {
    let label = spec.display_label();
    match &spec.kind {
        EnsembleKind::Diag { d } => {
            let d = require_positive(*d, "dimension")?;
            let coeffs = (0..d)
                .map(|i| SparseHerm::from_entries(d, vec![(i as u32, i as u32, ONE)]))
                .collect();
            Ok(GaussianSeries::from_sparse(d, coeffs, label))
        }
        EnsembleKind::Goe { d } => {
            let d = require_positive(*d, "dimension")?;
            let scale = 1.0 / (2.0 * d as f64).sqrt();
            // one coefficient per ordered pair (i, j), exactly as the
            // defining sum is written
            let mut coeffs = Vec::with_capacity(d * d);
            for i in 0..d {
                for j in 0..d {
                    let (lo, hi) = (i.min(j) as u32, i.max(j) as u32);
                    let v = if i == j { 2.0 * scale } else { scale };
                    coeffs.push(SparseHerm::from_entries(d, vec![(lo, hi, C64::new(v, 0.0))]));
                }
            }
            Ok(GaussianSeries::from_sparse(d, coeffs, label))
        }
        EnsembleKind::Spin { blocks } => {
            let b = require_positive(*blocks, "block count")?;
            let d = 2 * b;
            let block = spin_block_coeffs();
            let mut coeffs = Vec::with_capacity(4 * b);
            for j in 0..b {
                for h in &block {
                    let base = (2 * j) as u32;
                    let m = h.matrix();
                    let mut entries = Vec::new();
                    for r in 0..2u32 {
                        for c in r..2u32 {
                            let z = m[(r as usize, c as usize)];
                            if z.re != 0.0 || z.im != 0.0 {
                                entries.push((base + r, base + c, z));
                            }
                        }
                    }
                    coeffs.push(SparseHerm::from_entries(d, entries));
                }
            }
            Ok(GaussianSeries::from_sparse(d, coeffs, label))
        }
        EnsembleKind::Indep { a, verbatim_sum } => {
            let d = a.len();
            if d == 0 {
                return Err(Error::spec("indep requires a nonempty matrix"));
            }
            for (i, row) in a.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::spec(format!("indep row {i} has wrong length")));
                }
            }
            let scale = a
                .iter()
                .flatten()
                .fold(0.0_f64, |acc, &x| acc.max(x.abs()));
            for i in 0..d {
                for j in 0..d {
                    if (a[i][j] - a[j][i]).abs() > 1e-12 * (1.0 + scale) {
                        return Err(Error::spec(format!(
                            "indep pattern must be symmetric; a[{i}][{j}] != a[{j}][{i}]"
                        )));
                    }
                }
            }
            let mut coeffs = Vec::new();
            if *verbatim_sum {
                // one coefficient a_ij (E_ij + E_ji) per ordered pair
                for i in 0..d {
                    for j in 0..d {
                        if a[i][j] != 0.0 {
                            coeffs.push(pair_coeff(d, i, j, a[i][j]));
                        }
                    }
                }
            } else {
                // independent entries: one coefficient per unordered pair
                for i in 0..d {
                    for j in i..d {
                        if a[i][j] != 0.0 {
                            coeffs.push(pair_coeff(d, i, j, a[i][j]));
                        }
                    }
                }
            }
            if coeffs.is_empty() {
                return Err(Error::spec("indep pattern is identically zero"));
            }
            Ok(GaussianSeries::from_sparse(d, coeffs, label))
        }
        EnsembleKind::GroupOrbit {
            generators,
            seed_matrix,
            cap,
        } => {
            let seed = HermMatrix::new(matrix_from_def(seed_matrix)?)?;
            let d = seed.dim();
            let gens: Vec<UnitaryMatrix> = generators
                .iter()
                .map(|g| {
                    let m = matrix_from_def(g)?;
                    if m.nrows() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: m.nrows(),
                        });
                    }
                    UnitaryMatrix::new(m)
                })
                .collect::<Result<_>>()?;
            if gens.is_empty() {
                return Err(Error::spec("group orbit requires at least one generator"));
            }
            let elements = enumerate_group(&gens, *cap)?;
            let coeffs: Vec<HermMatrix> = elements
                .iter()
                .map(|u| HermMatrix::symmetrized(u * seed.matrix() * u.adjoint()))
                .collect();
            GaussianSeries::new(coeffs, label)
        }
        EnsembleKind::Custom { path } => {
            let text = std::fs::read_to_string(path)?;
            let coeffs = parse_custom(&text)?;
            GaussianSeries::new(coeffs, label)
        }
    }
}

fn require_positive(v: usize, what: &str) -> Result<usize> {
    if v == 0 {
        Err(Error::spec(format!("{what} must be positive")))
    } else {
        Ok(v)
    }
}

fn pair_coeff(d: usize, i: usize, j: usize, a: f64) -> SparseHerm {
    // a (E_ij + E_ji); the diagonal case collapses to 2a E_ii
    let v = if i == j { 2.0 * a } else { a };
    let (lo, hi) = (i.min(j) as u32, i.max(j) as u32);
    SparseHerm::from_entries(d, vec![(lo, hi, C64::new(v, 0.0))])
}

/// Enumerate the group generated by the given unitaries by closing under
/// right multiplication, up to `cap` elements. Deduplication quantizes
/// entries at 1e-9 and confirms with a Frobenius check.
fn enumerate_group(gens: &[UnitaryMatrix], cap: usize) -> Result<Vec<ComplexMatrix>> {
    let d = gens[0].dim();
    let key_of = |m: &ComplexMatrix| -> Vec<(i64, i64)> {
        m.iter()
            .map(|z| ((z.re * 1e9).round() as i64, (z.im * 1e9).round() as i64))
            .collect()
    };
    let mut elements: Vec<ComplexMatrix> = vec![ComplexMatrix::identity(d, d)];
    let mut buckets: HashMap<Vec<(i64, i64)>, Vec<usize>> = HashMap::new();
    buckets.insert(key_of(&elements[0]), vec![0]);
    let mut frontier = vec![0usize];
    while let Some(idx) = frontier.pop() {
        let base = elements[idx].clone();
        for g in gens {
            let cand = &base * g.matrix();
            let key = key_of(&cand);
            let known = buckets
                .get(&key)
                .map(|ixs| ixs.iter().any(|&k| (&cand - &elements[k]).norm() < 1e-8))
                .unwrap_or(false);
            if !known {
                if elements.len() >= cap {
                    return Err(Error::spec(format!(
                        "group closure exceeded the cap of {cap} elements"
                    )));
                }
                elements.push(cand);
                let new_idx = elements.len() - 1;
                buckets.entry(key).or_default().push(new_idx);
                frontier.push(new_idx);
            }
        }
    }
    Ok(elements)
}

// ---------------------------------------------------------------------------
// Custom text format: header `d n`, then n blocks of d lines of d complex
// entries written as `re`, `imi`, or `re+imi` (e.g. `1.5-0.25i`).
// ---------------------------------------------------------------------------

pub fn parse_custom(text: &str) -> Result<Vec<HermMatrix>> {
    struct Tok<'a> {
        line: usize,
        field: usize,
        s: &'a str,
    }
    let mut toks: Vec<Tok> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for (fd, s) in body.split_whitespace().enumerate() {
            toks.push(Tok {
                line: ln + 1,
                field: fd + 1,
                s,
            });
        }
    }
    let last_line = text.lines().count();
    let mut pos = 0usize;
    let mut next = |what: &str| -> Result<(usize, usize, String)> {
        match toks.get(pos) {
            Some(t) => {
                pos += 1;
                Ok((t.line, t.field, t.s.to_string()))
            }
            None => Err(Error::Parse {
                line: last_line,
                field: 0,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let header_int = |tok: &(usize, usize, String), what: &str| -> Result<usize> {
        tok.2.parse().map_err(|_| Error::Parse {
            line: tok.0,
            field: tok.1,
            message: format!("invalid {what}: {:?}", tok.2),
        })
    };
    let t = next("dimension d")?;
    let d = header_int(&t, "dimension")?;
    let t = next("coefficient count n")?;
    let n = header_int(&t, "coefficient count")?;
    if d == 0 || n == 0 {
        return Err(Error::Parse {
            line: 1,
            field: 1,
            message: "dimension and coefficient count must be positive".into(),
        });
    }
    let mut coeffs = Vec::with_capacity(n);
    for k in 0..n {
        let mut m = ComplexMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let t = next("complex entry")?;
                let z = parse_complex(&t.2).map_err(|msg| Error::Parse {
                    line: t.0,
                    field: t.1,
                    message: msg,
                })?;
                m[(i, j)] = z;
            }
        }
        let h = HermMatrix::new(m)
            .map_err(|e| Error::spec(format!("coefficient {} is invalid: {e}", k + 1)))?;
        coeffs.push(h);
    }
    if pos != toks.len() {
        let t = &toks[pos];
        return Err(Error::Parse {
            line: t.line,
            field: t.field,
            message: "trailing data after the last coefficient".into(),
        });
    }
    Ok(coeffs)
}

pub fn write_custom(coeffs: &[HermMatrix]) -> String {
    let d = coeffs.first().map(|h| h.dim()).unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "{d} {}", coeffs.len());
    for h in coeffs {
        let m = h.matrix();
        for i in 0..d {
            let row: Vec<String> = (0..d).map(|j| format_complex(m[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im < 0.0 {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// Parse `re`, `imi`, or `re+imi` forms, with scientific notation allowed.
pub fn parse_complex(s: &str) -> std::result::Result<C64, String> {
    let t = s.trim();
    if t.is_empty() {
        return Err("empty complex entry".into());
    }
    if let Some(body) = t.strip_suffix(['i', 'I']) {
        // split between real and imaginary parts: the last +/- that is not
        // a leading sign and not part of an exponent
        let bytes = body.as_bytes();
        let mut split = None;
        for k in (1..bytes.len()).rev() {
            let c = bytes[k] as char;
            if (c == '+' || c == '-') && !matches!(bytes[k - 1] as char, 'e' | 'E') {
                split = Some(k);
                break;
            }
        }
        let (re_s, im_s) = match split {
            Some(k) => (&body[..k], &body[k..]),
            None => ("", body),
        };
        let re: f64 = if re_s.is_empty() {
            0.0
        } else {
            re_s.parse().map_err(|_| format!("invalid real part in {t:?}"))?
        };
        let im: f64 = match im_s {
            "" | "+" => 1.0,
            "-" => -1.0,
            x => x.parse().map_err(|_| format!("invalid imaginary part in {t:?}"))?,
        };
        Ok(C64::new(re, im))
    } else {
        let re: f64 = t.parse().map_err(|_| format!("invalid number {t:?}"))?;
        Ok(C64::new(re, 0.0))
    }
}

/// `V = sum_i H_i^2` as a dense matrix.
pub fn variance_dense(series: &GaussianSeries) -> ComplexMatrix {
    let d = series.dim();
    let mut v = ComplexMatrix::zeros(d, d);
    for h in series.coeffs() {
        h.square_into(&mut v);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matalg;
    use crate::rng::{mean_stderr, par_index_map};
    use approx::assert_relative_eq;

    #[test]
    fn diag_build_and_variance() {
        let s = build(&EnsembleSpec::diag(3)).unwrap();
        assert_eq!(s.len(), 3);
        for i in 0..3 {
            // rank one
            let evs = matalg::herm_eigvals(&s.coeff_dense(i));
            assert_eq!(evs.iter().filter(|&&l| l.abs() > 1e-12).count(), 1);
        }
        let v = variance_dense(&s);
        assert!((v - ComplexMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn goe_variance_is_one_plus_inverse_dim() {
        for d in [2usize, 5, 8] {
            let s = build(&EnsembleSpec::goe(d)).unwrap();
            assert_eq!(s.len(), d * d);
            let v = variance_dense(&s);
            let expected = ComplexMatrix::identity(d, d) * C64::new(1.0 + 1.0 / d as f64, 0.0);
            assert!((v - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn spin_variance_and_alternating_sum() {
        let s = build(&EnsembleSpec::spin(1)).unwrap();
        assert_eq!(s.len(), 4);
        let v = variance_dense(&s);
        let expected = ComplexMatrix::identity(2, 2) * C64::new(2.0 * 3.0_f64.sqrt(), 0.0);
        assert!((v - expected).norm() < 1e-10);

        // sum_{i,j} H_i H_j H_i H_j = 0 exactly
        let d = s.dim();
        let mut total = ComplexMatrix::zeros(d, d);
        for hi in s.coeffs() {
            let ki = hi.to_herm();
            let mut inner = ComplexMatrix::zeros(d, d);
            for hj in s.coeffs() {
                hj.sandwich_into(ki.matrix(), &mut inner);
            }
            let mut term = ComplexMatrix::zeros(d, d);
            hi.left_mul_into(&inner, &mut term);
            total += term;
        }
        assert!(total.norm() < 1e-10, "norm {}", total.norm());
    }

    #[test]
    fn indep_convention_and_validation() {
        let a = vec![vec![2.0, 1.0, 1.0], vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]];
        let s = build(&EnsembleSpec::indep(a)).unwrap();
        // unordered pairs: 3 diagonal + 3 off-diagonal
        assert_eq!(s.len(), 6);
        let v = variance_dense(&s);
        assert_relative_eq!(v[(0, 0)].re, 18.0, epsilon = 1e-12);
        assert_relative_eq!(v[(1, 1)].re, 6.0, epsilon = 1e-12);

        let bad = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        assert!(build(&EnsembleSpec::indep(bad)).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_structured() {
        let s = build(&EnsembleSpec::diag(5)).unwrap();
        let a = s.sample(42, 7);
        let b = s.sample(42, 7);
        assert_eq!(a.gaussians, b.gaussians);
        assert_eq!(a.realized.matrix(), b.realized.matrix());
        // diagonal ensemble realizes diagonal matrices with exact zeros
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert_eq!(a.realized.matrix()[(i, j)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn sample_schedule_independent() {
        let s = build(&EnsembleSpec::goe(4)).unwrap();
        let serial: Vec<_> = (0..32).map(|i| s.sample(9, i).realized).collect();
        let parallel = par_index_map(32, |i| s.sample(9, i as u64).realized);
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.matrix(), b.matrix());
        }
    }

    #[test]
    fn sample_mean_is_zero() {
        // mean of realized X over 20000 draws at d = 3 stays within
        // 4 standard errors of zero in Frobenius norm
        let s = build(&EnsembleSpec::diag(3)).unwrap();
        let n = 20_000;
        let mut acc = ComplexMatrix::zeros(3, 3);
        for i in 0..n {
            acc += s.sample(5, i as u64).realized.matrix();
        }
        acc /= C64::new(n as f64, 0.0);
        let se = (s.coeff_frob_sq_sum() / n as f64).sqrt();
        assert!(acc.norm() < 4.0 * se, "{} vs {}", acc.norm(), 4.0 * se);
    }

    #[test]
    fn goe_entrywise_variances() {
        // off-diagonal variance 1/d, diagonal variance 2/d at d = 8
        let d = 8;
        let s = build(&EnsembleSpec::goe(d)).unwrap();
        let n = 20_000usize;
        let mut off: Vec<f64> = Vec::with_capacity(n);
        let mut diag: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            let x = s.sample(21, i as u64).realized;
            off.push(x.matrix()[(0, 1)].re.powi(2));
            diag.push(x.matrix()[(0, 0)].re.powi(2));
        }
        let (mo, so) = mean_stderr(&off);
        let (md, sd) = mean_stderr(&diag);
        assert!((mo - 1.0 / d as f64).abs() < 4.0 * so, "off {mo} se {so}");
        assert!((md - 2.0 / d as f64).abs() < 4.0 * sd, "diag {md} se {sd}");
    }

    #[test]
    fn dilation_examples() {
        // single 1x1 coefficient c: dilation has eigenvalues +-|c|
        let c = C64::new(0.6, -0.8);
        let rect = RectSeries::new(vec![ComplexMatrix::from_element(1, 1, c)]).unwrap();
        let dil = dilate(&rect).unwrap();
        let evs = matalg::herm_eigvals(&dil.coeff_dense(0));
        assert_relative_eq!(evs[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(evs[1], 1.0, epsilon = 1e-12);

        // sampled dilation: spectrum symmetric about zero, nonnegative
        // eigenvalues match the singular values of the sampled block
        let mut stream = Substream::new(3, purpose::TRIAL, 0);
        let coeffs: Vec<ComplexMatrix> = (0..3)
            .map(|_| ComplexMatrix::from_fn(2, 3, |_, _| stream.complex_gaussian()))
            .collect();
        let rect = RectSeries::new(coeffs).unwrap();
        let dil = dilate(&rect).unwrap();
        let draw = dil.sample(11, 0);
        let evs = matalg::herm_eigvals(&draw.realized);
        for k in 0..evs.len() {
            assert_relative_eq!(evs[k], -evs[evs.len() - 1 - k], epsilon = 1e-9);
        }
        // reassemble the rectangular block from the same gaussians
        let mut z = ComplexMatrix::zeros(2, 3);
        for (g, s) in draw.gaussians.iter().zip(rect.coeffs()) {
            z += s * C64::new(*g, 0.0);
        }
        let svs = matalg::singular_values(&z);
        let pos: Vec<f64> = evs.iter().rev().take(2).copied().collect();
        for (a, b) in svs.iter().zip(&pos) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn variance_of_dilation_is_block_diagonal() {
        let mut stream = Substream::new(8, purpose::TRIAL, 1);
        let coeffs: Vec<ComplexMatrix> = (0..2)
            .map(|_| ComplexMatrix::from_fn(2, 3, |_, _| stream.complex_gaussian()))
            .collect();
        let rect = RectSeries::new(coeffs.clone()).unwrap();
        let dil = dilate(&rect).unwrap();
        let v = variance_dense(&dil);
        let mut upper = ComplexMatrix::zeros(2, 2);
        let mut lower = ComplexMatrix::zeros(3, 3);
        for s in &coeffs {
            upper += s * s.adjoint();
            lower += s.adjoint() * s;
        }
        for i in 0..2 {
            for j in 0..3 {
                assert!(v[(i, 2 + j)].norm() < 1e-12);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((v[(i, j)] - upper[(i, j)]).norm() < 1e-10);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                assert!((v[(2 + i, 2 + j)] - lower[(i, j)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn custom_format_round_trip_and_errors() {
        let h1 = HermMatrix::from_real_rows(&[&[1.0, 0.5], &[0.5, -2.0]]).unwrap();
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = C64::new(0.0, 1.5);
        m[(1, 0)] = C64::new(0.0, -1.5);
        let h2 = HermMatrix::new(m).unwrap();
        let text = write_custom(&[h1.clone(), h2.clone()]);
        let parsed = parse_custom(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert!((parsed[0].matrix() - h1.matrix()).norm() < 1e-15);
        assert!((parsed[1].matrix() - h2.matrix()).norm() < 1e-15);

        let err = parse_custom("2 1\n1 0\n0").unwrap_err();
        match err {
            Error::Parse { .. } => {}
            other => panic!("expected parse error, got {other}"),
        }
        let err = parse_custom("2 1\n1 zz\n0 1").unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, 2);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn parse_complex_forms() {
        assert_eq!(parse_complex("1.5").unwrap(), C64::new(1.5, 0.0));
        assert_eq!(parse_complex("-2e-3").unwrap(), C64::new(-2e-3, 0.0));
        assert_eq!(parse_complex("3i").unwrap(), C64::new(0.0, 3.0));
        assert_eq!(parse_complex("-i").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("1+2i").unwrap(), C64::new(1.0, 2.0));
        assert_eq!(parse_complex("1.5-0.25i").unwrap(), C64::new(1.5, -0.25));
        assert_eq!(parse_complex("1e-2+3.5e1i").unwrap(), C64::new(0.01, 35.0));
        assert!(parse_complex("zz").is_err());
    }

    #[test]
    fn group_orbit_swap_generator() {
        let swap = vec![vec![[0.0, 0.0], [1.0, 0.0]], vec![[1.0, 0.0], [0.0, 0.0]]];
        let seed = vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [0.0, 0.0]]];
        let spec = EnsembleSpec {
            kind: EnsembleKind::GroupOrbit {
                generators: vec![swap],
                seed_matrix: seed,
                cap: 100,
            },
            label: None,
        };
        let s = build(&spec).unwrap();
        // group {I, swap}: orbit is {E00, E11}
        assert_eq!(s.len(), 2);
        let v = variance_dense(&s);
        assert!((v - ComplexMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = EnsembleSpec {
            kind: EnsembleKind::Indep {
                a: vec![vec![2.0, 1.0], vec![1.0, 1.0]],
                verbatim_sum: false,
            },
            label: Some("pattern".into()),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"indep\""));
        let back: EnsembleSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);

        let inline = EnsembleSpec::parse_inline("goe:200").unwrap();
        assert_eq!(inline.kind, EnsembleKind::Goe { d: 200 });
        assert!(EnsembleSpec::parse_inline("goe").is_err());
        assert!(EnsembleSpec::parse_inline("nope:3").is_err());
    }
}
