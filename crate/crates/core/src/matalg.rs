//! Dense Hermitian linear algebra: eigendecomposition, Schatten norms,
//! spectral functional calculus, and unitary-manifold utilities.
//!
//! All operations are pure functions of their inputs. Matrices are complex
//! `f64` throughout; Hermitian inputs are symmetrized as `(M + M*)/2` on
//! construction to absorb round-off accumulated by products.

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Substream;
use crate::tol;

pub type C64 = Complex<f64>;
/// General complex matrix, row-major semantics via nalgebra.
pub type ComplexMatrix = DMatrix<C64>;

pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const ZERO: C64 = Complex::new(0.0, 0.0);

/// Schatten exponent: a finite real `q >= 1` or infinity (spectral norm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Inf,
}

impl Exponent {
    pub fn finite(q: f64) -> Self {
        Exponent::Finite(q)
    }

    pub fn is_inf(&self) -> bool {
        matches!(self, Exponent::Inf)
    }

    pub fn value(&self) -> f64 {
        match self {
            Exponent::Finite(q) => *q,
            Exponent::Inf => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Exponent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Exponent::Inf => write!(f, "inf"),
            Exponent::Finite(q) if q.fract() == 0.0 && q.abs() < 1e15 => {
                write!(f, "{}", *q as i64)
            }
            Exponent::Finite(q) => write!(f, "{q}"),
        }
    }
}

impl std::str::FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t == "∞" {
            return Ok(Exponent::Inf);
        }
        let q: f64 = t
            .parse()
            .map_err(|_| Error::domain(format!("invalid exponent: {s:?}")))?;
        if !q.is_finite() {
            return Ok(Exponent::Inf);
        }
        Ok(Exponent::Finite(q))
    }
}

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Hermitian matrix. Construction symmetrizes and enforces the Hermiticity
/// tolerance; the stored matrix is exactly equal to its own adjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct HermMatrix {
    m: ComplexMatrix,
}

impl HermMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::domain("matrix has non-finite entries"));
        }
        let defect = (&m - m.adjoint()).norm();
        let tol = tol::hermiticity() * (1.0 + m.norm());
        if defect > tol {
            return Err(Error::NotHermitian { defect, tol });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrize `(M + M*)/2` without a tolerance check. For matrices that
    /// are Hermitian by construction.
    pub fn symmetrized(m: ComplexMatrix) -> Self {
        let half = C64::new(0.5, 0.0);
        let mut s = m.adjoint();
        s += &m;
        s *= half;
        for i in 0..s.nrows() {
            s[(i, i)] = C64::new(s[(i, i)].re, 0.0);
        }
        HermMatrix { m: s }
    }

    pub fn zeros(d: usize) -> Self {
        HermMatrix {
            m: ComplexMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        HermMatrix {
            m: ComplexMatrix::identity(d, d),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = ComplexMatrix::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        HermMatrix { m }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        let mut m = ComplexMatrix::zeros(d, d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = C64::new(v, 0.0);
            }
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.m
    }

    pub fn scale(&self, c: f64) -> HermMatrix {
        HermMatrix {
            m: &self.m * C64::new(c, 0.0),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.m[(i, i)].re).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }
}

/// Unitary matrix; `U* U = I` within the global unitarity tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryMatrix {
    m: ComplexMatrix,
}

impl UnitaryMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let d = m.nrows();
        let defect = (m.adjoint() * &m - ComplexMatrix::identity(d, d)).norm();
        let tol = tol::unitarity();
        if defect > tol {
            return Err(Error::NotUnitary { defect, tol });
        }
        Ok(UnitaryMatrix { m })
    }

    pub fn identity(d: usize) -> Self {
        UnitaryMatrix {
            m: ComplexMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.m
    }

    /// Frobenius distance of `U* U` from the identity.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.dim();
        (self.m.adjoint() * &self.m - ComplexMatrix::identity(d, d)).norm()
    }
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: UnitaryMatrix,
}

impl EigenDecomposition {
    /// `U diag(f(lambda)) U*`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let u = self.eigenvectors.matrix();
        let d = self.eigenvalues.len();
        let mut scaled = u.clone();
        for j in 0..d {
            let fj = C64::new(f(self.eigenvalues[j]), 0.0);
            for i in 0..d {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * u.adjoint()
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.apply(|x| x)
    }
}

/// Full eigendecomposition of a Hermitian matrix. Deterministic for
/// identical input bits; eigenvalues sorted ascending.
pub fn herm_eig(h: &HermMatrix) -> Result<EigenDecomposition> {
    let d = h.dim();
    if let Some(diag) = exact_diagonal(h.matrix()) {
        // already diagonal: eigenvectors are signed basis vectors
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| diag[a].total_cmp(&diag[b]));
        let mut vecs = ComplexMatrix::zeros(d, d);
        let mut vals = Vec::with_capacity(d);
        for (col, &i) in idx.iter().enumerate() {
            vecs[(i, col)] = ONE;
            vals.push(diag[i]);
        }
        return Ok(EigenDecomposition {
            eigenvalues: vals,
            eigenvectors: UnitaryMatrix { m: vecs },
        });
    }
    let se = nalgebra::SymmetricEigen::new(h.matrix().clone());
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let mut vecs = ComplexMatrix::zeros(d, d);
    let mut vals = Vec::with_capacity(d);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &se.eigenvectors.column(i));
        vals.push(se.eigenvalues[i]);
    }
    let eigenvectors = UnitaryMatrix::new(vecs).map_err(|_| {
        Error::Numerical("eigenvector matrix failed the unitarity tolerance".into())
    })?;
    Ok(EigenDecomposition {
        eigenvalues: vals,
        eigenvectors,
    })
}

/// Eigenvalues only, ascending. Diagonal matrices short-circuit, which makes
/// sampling diagonal ensembles at large dimension cheap.
pub fn herm_eigvals(h: &HermMatrix) -> Vec<f64> {
    if let Some(mut diag) = exact_diagonal(h.matrix()) {
        diag.sort_by(f64::total_cmp);
        return diag;
    }
    let mut vals: Vec<f64> = h
        .matrix()
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    vals.sort_by(f64::total_cmp);
    vals
}

fn exact_diagonal(m: &ComplexMatrix) -> Option<Vec<f64>> {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..d {
            if i != j && (m[(i, j)].re != 0.0 || m[(i, j)].im != 0.0) {
                return None;
            }
        }
    }
    Some((0..d).map(|i| m[(i, i)].re).collect())
}

/// Singular values of a general matrix, descending.
pub fn singular_values(b: &ComplexMatrix) -> Vec<f64> {
    // eigenvalues of B* B are the squared singular values
    let g = HermMatrix::symmetrized(b.adjoint() * b);
    let mut s: Vec<f64> = herm_eigvals(&g)
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    s.reverse();
    s
}

/// Schatten q-norm `(sum_i s_i^q)^{1/q}` over singular values; the infinity
/// norm is the spectral norm.
pub fn schatten_norm(b: &ComplexMatrix, q: Exponent) -> Result<f64> {
    if let Exponent::Finite(qv) = q {
        if !(qv >= 1.0) {
            return Err(Error::domain(format!(
                "Schatten exponent must satisfy q >= 1, got {qv}"
            )));
        }
    }
    let s = singular_values(b);
    Ok(schatten_of_values(&s, q))
}

/// Schatten norm from a precomputed list of singular values (or absolute
/// eigenvalues). Scales by the largest value first so large exponents do not
/// overflow.
pub fn schatten_of_values(s: &[f64], q: Exponent) -> f64 {
    let top = s.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0.0;
    }
    match q {
        Exponent::Inf => top,
        Exponent::Finite(qv) => {
            let sum: f64 = s.iter().map(|&x| (x / top).powf(qv)).sum();
            top * sum.powf(1.0 / qv)
        }
    }
}

/// Spectral norm of a general matrix.
pub fn spectral_norm(b: &ComplexMatrix) -> f64 {
    singular_values(b).first().copied().unwrap_or(0.0)
}

/// Apply a real spectral function: `f(H) = U diag(f(lambda)) U*`.
/// Errors when `f` is undefined (non-finite) at an eigenvalue.
pub fn herm_apply(h: &HermMatrix, f: impl Fn(f64) -> f64) -> Result<HermMatrix> {
    let eig = herm_eig(h)?;
    for &l in &eig.eigenvalues {
        let y = f(l);
        if !y.is_finite() {
            return Err(Error::domain(format!(
                "spectral function undefined at eigenvalue {l}"
            )));
        }
    }
    Ok(HermMatrix::symmetrized(eig.apply(f)))
}

/// Integer matrix power by repeated multiplication.
pub fn herm_power(h: &HermMatrix, k: u32) -> HermMatrix {
    let d = h.dim();
    let mut acc = ComplexMatrix::identity(d, d);
    for _ in 0..k {
        acc = acc * h.matrix();
    }
    HermMatrix::symmetrized(acc)
}

/// Haar-distributed unitary via QR of a complex Gaussian matrix with the
/// R-diagonal phases folded into Q.
pub fn haar_unitary(d: usize, stream: &mut Substream) -> UnitaryMatrix {
    assert!(d >= 1);
    let mut g = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = stream.complex_gaussian();
        }
    }
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() == 0.0 { ONE } else { rjj / rjj.norm() };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    UnitaryMatrix { m: q }
}

/// Polar retraction: the closest unitary (in Frobenius distance) to
/// `Q + Q S` for a skew-Hermitian step `S`.
pub fn retract_unitary(q: &UnitaryMatrix, s: &ComplexMatrix) -> Result<UnitaryMatrix> {
    let skew_defect = (s + s.adjoint()).norm();
    if skew_defect > 1e-8 * (1.0 + s.norm()) {
        return Err(Error::domain(format!(
            "retraction step is not skew-Hermitian (defect {skew_defect:.3e})"
        )));
    }
    let a = q.matrix() * (ComplexMatrix::identity(q.dim(), q.dim()) + s);
    polar_unitary(&a)
}

/// Unitary polar factor `A (A* A)^{-1/2}`.
pub fn polar_unitary(a: &ComplexMatrix) -> Result<UnitaryMatrix> {
    let g = HermMatrix::symmetrized(a.adjoint() * a);
    let eig = herm_eig(&g)?;
    let top = eig.eigenvalues.last().copied().unwrap_or(0.0);
    let floor = 1e-28 * top.max(1.0);
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(Error::Numerical(
            "polar retraction hit a singular step".into(),
        ));
    }
    let inv_sqrt = eig.apply(|l| 1.0 / l.sqrt());
    UnitaryMatrix::new(a * inv_sqrt)
}

/// Projection of an arbitrary matrix onto the skew-Hermitian subspace.
pub fn skew_part(b: &ComplexMatrix) -> ComplexMatrix {
    let half = C64::new(0.5, 0.0);
    (b - b.adjoint()) * half
}

/// Real trace inner product `Re tr(A* B)`.
pub fn frob_inner(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<C64>().re
}

/// Real part of the trace of a product, `Re tr(A B)`.
pub fn trace_product_re(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..a.ncols() {
            let prod = a[(i, k)] * b[(k, i)];
            acc += prod.re;
        }
    }
    acc
}

/// Random dense Hermitian matrix with independent complex Gaussian entries
/// above the diagonal and real Gaussian diagonal. For tests and sweeps.
pub fn random_hermitian(d: usize, stream: &mut Substream) -> HermMatrix {
    let mut m = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = C64::new(stream.standard_normal(), 0.0);
        for j in (i + 1)..d {
            let z = C64::new(stream.standard_normal(), stream.standard_normal());
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    HermMatrix::symmetrized(m)
}
