//! Finite-dimensional state vectors, dense operators, tensor products,
//! matrix exponentials, and projector-family validation.
//!
//! Conventions used throughout the crate:
//!
//! * Tensor products place the **left** factor on the most significant
//!   index: `(a ⊗ b)[i·db + k, j·db + l] = a[i,j] · b[k,l]`.
//! * Operator-valued residuals are measured with the maximum absolute
//!   entry ([`LinearOperator::max_abs`]); vector residuals with the
//!   Euclidean norm.
//! * Composite dimensions are capped (default [`DEFAULT_DIM_CAP`]) so a
//!   typo in factor dimensions fails fast instead of allocating gigabytes.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

/// Complex amplitude type used for every state and operator entry.
pub type Amplitude = Complex64;

/// Default cap on composite dimensions produced by tensor products.
pub const DEFAULT_DIM_CAP: usize = 4096;

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// A ket in a finite-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    data: Array1<Amplitude>,
}

impl StateVector {
    /// Zero vector of the given dimension.
    pub fn zeros(dim: usize) -> StateVector {
        StateVector {
            data: Array1::zeros(dim),
        }
    }

    /// Computational basis state `|k⟩`.
    pub fn basis_state(dim: usize, k: usize) -> Result<StateVector> {
        if k >= dim {
            return Err(Error::Label(format!(
                "basis index {k} out of range for dimension {dim}"
            )));
        }
        let mut v = Array1::zeros(dim);
        v[k] = c(1.0, 0.0);
        Ok(StateVector { data: v })
    }

    pub fn from_amplitudes(amps: Vec<Amplitude>) -> StateVector {
        StateVector {
            data: Array1::from_vec(amps),
        }
    }

    pub fn from_array(data: Array1<Amplitude>) -> StateVector {
        StateVector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn array(&self) -> &Array1<Amplitude> {
        &self.data
    }

    pub fn get(&self, i: usize) -> Amplitude {
        self.data[i]
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Inner product `⟨self|other⟩` (antilinear in `self`).
    pub fn inner(&self, other: &StateVector) -> Amplitude {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scaled(&self, factor: Amplitude) -> StateVector {
        StateVector {
            data: self.data.mapv(|z| z * factor),
        }
    }

    pub fn add(&self, other: &StateVector) -> StateVector {
        StateVector {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &StateVector) -> StateVector {
        StateVector {
            data: &self.data - &other.data,
        }
    }

    /// Rescale to unit norm. Errors if the vector is numerically zero.
    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::Normalization(1.0));
        }
        Ok(self.scaled(c(1.0 / n, 0.0)))
    }

    /// Error unless `‖self‖ = 1` within `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let dev = (self.norm() - 1.0).abs();
        if dev > tol {
            return Err(Error::Normalization(dev));
        }
        Ok(())
    }
}

/// A dense linear operator on a finite-dimensional Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    data: Array2<Amplitude>,
}

impl LinearOperator {
    pub fn zeros(dim: usize) -> LinearOperator {
        LinearOperator {
            data: Array2::zeros((dim, dim)),
        }
    }

    pub fn identity(dim: usize) -> LinearOperator {
        let mut m = Array2::zeros((dim, dim));
        for i in 0..dim {
            m[[i, i]] = c(1.0, 0.0);
        }
        LinearOperator { data: m }
    }

    /// Wrap a square matrix; non-square input is a shape error.
    pub fn from_array(data: Array2<Amplitude>) -> Result<LinearOperator> {
        if data.nrows() != data.ncols() {
            return Err(Error::Shape(format!(
                "operator must be square, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(LinearOperator { data })
    }

    /// Diagonal operator from its diagonal entries.
    pub fn diagonal(entries: &[Amplitude]) -> LinearOperator {
        let mut m = Array2::zeros((entries.len(), entries.len()));
        for (i, z) in entries.iter().enumerate() {
            m[[i, i]] = *z;
        }
        LinearOperator { data: m }
    }

    /// Rank-one operator `|a⟩⟨b|`.
    pub fn outer(a: &StateVector, b: &StateVector) -> LinearOperator {
        let mut m = Array2::zeros((a.dim(), b.dim()));
        for i in 0..a.dim() {
            for j in 0..b.dim() {
                m[[i, j]] = a.get(i) * b.get(j).conj();
            }
        }
        // Outer products between spaces of different dimension never occur
        // in this crate, so the operator is square in practice.
        LinearOperator { data: m }
    }

    /// Permutation operator mapping basis state `j` to basis state
    /// `images[j]`. `images` must be a bijection on `0..dim`.
    pub fn permutation(images: &[usize]) -> Result<LinearOperator> {
        let dim = images.len();
        let mut seen = vec![false; dim];
        for &im in images {
            if im >= dim {
                return Err(Error::Label(format!(
                    "permutation image {im} out of range for dimension {dim}"
                )));
            }
            if seen[im] {
                return Err(Error::Label(format!(
                    "permutation image {im} repeated; map is not a bijection"
                )));
            }
            seen[im] = true;
        }
        let mut m = Array2::zeros((dim, dim));
        for (j, &im) in images.iter().enumerate() {
            m[[im, j]] = c(1.0, 0.0);
        }
        Ok(LinearOperator { data: m })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn array(&self) -> &Array2<Amplitude> {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Amplitude {
        self.data[[i, j]]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Amplitude) {
        self.data[[i, j]] = value;
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &LinearOperator) -> LinearOperator {
        LinearOperator {
            data: self.data.dot(&other.data),
        }
    }

    pub fn add(&self, other: &LinearOperator) -> LinearOperator {
        LinearOperator {
            data: &self.data + &other.data,
        }
    }

    pub fn sub(&self, other: &LinearOperator) -> LinearOperator {
        LinearOperator {
            data: &self.data - &other.data,
        }
    }

    pub fn scaled(&self, factor: Amplitude) -> LinearOperator {
        LinearOperator {
            data: self.data.mapv(|z| z * factor),
        }
    }

    /// Hermitian adjoint (conjugate transpose).
    pub fn dagger(&self) -> LinearOperator {
        let n = self.dim();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = self.data[[j, i]].conj();
            }
        }
        LinearOperator { data: m }
    }

    /// Apply to a ket.
    pub fn apply(&self, v: &StateVector) -> StateVector {
        StateVector {
            data: self.data.dot(&v.data),
        }
    }

    /// Commutator `[self, other]`.
    pub fn commutator(&self, other: &LinearOperator) -> LinearOperator {
        self.mul(other).sub(&other.mul(self))
    }

    /// Maximum absolute entry; the operator residual norm used throughout.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> Amplitude {
        (0..self.dim()).map(|i| self.data[[i, i]]).sum()
    }

    /// Max-abs-entry distance from the identity of `self†·self`.
    pub fn unitarity_residual(&self) -> f64 {
        self.dagger()
            .mul(self)
            .sub(&LinearOperator::identity(self.dim()))
            .max_abs()
    }

    /// Error unless unitary within `tol` (max-abs-entry residual).
    pub fn check_unitary(&self, tol: f64) -> Result<()> {
        let r = self.unitarity_residual();
        if r > tol {
            return Err(Error::Precondition(format!(
                "operator is not unitary: residual {r:.3e} exceeds {tol:.3e}"
            )));
        }
        Ok(())
    }

    /// Max-abs-entry distance from `self†` to `self`.
    pub fn hermiticity_residual(&self) -> f64 {
        self.dagger().sub(self).max_abs()
    }
}

/// Tensor product of two operators with an explicit composite-dimension cap.
pub fn tensor_product_capped(
    a: &LinearOperator,
    b: &LinearOperator,
    cap: usize,
) -> Result<LinearOperator> {
    let (da, db) = (a.dim(), b.dim());
    let dim = da.checked_mul(db).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(Error::Capacity(format!(
            "tensor product dimension {da}x{db} = {dim} exceeds cap {cap}"
        )));
    }
    let mut m = Array2::zeros((dim, dim));
    for i in 0..da {
        for j in 0..da {
            let aij = a.get(i, j);
            if aij == c(0.0, 0.0) {
                continue;
            }
            for k in 0..db {
                for l in 0..db {
                    m[[i * db + k, j * db + l]] = aij * b.get(k, l);
                }
            }
        }
    }
    Ok(LinearOperator { data: m })
}

/// Tensor product of two operators, left factor most significant, with the
/// default composite-dimension cap.
pub fn tensor_product(a: &LinearOperator, b: &LinearOperator) -> Result<LinearOperator> {
    tensor_product_capped(a, b, DEFAULT_DIM_CAP)
}

/// Tensor product of several operators, folding left to right.
pub fn tensor_product_all(factors: &[&LinearOperator]) -> Result<LinearOperator> {
    let mut it = factors.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Shape("tensor product of zero factors".into()))?;
    let mut acc = (*first).clone();
    for f in it {
        acc = tensor_product(&acc, f)?;
    }
    Ok(acc)
}

/// Tensor product of two kets, left factor most significant.
pub fn tensor_state(a: &StateVector, b: &StateVector) -> Result<StateVector> {
    let (da, db) = (a.dim(), b.dim());
    let dim = da.checked_mul(db).unwrap_or(usize::MAX);
    if dim > DEFAULT_DIM_CAP {
        return Err(Error::Capacity(format!(
            "tensor state dimension {da}x{db} = {dim} exceeds cap {DEFAULT_DIM_CAP}"
        )));
    }
    let mut v = Array1::zeros(dim);
    for i in 0..da {
        for k in 0..db {
            v[i * db + k] = a.get(i) * b.get(k);
        }
    }
    Ok(StateVector { data: v })
}

/// Tensor product of several kets, folding left to right.
pub fn tensor_state_all(factors: &[&StateVector]) -> Result<StateVector> {
    let mut it = factors.iter();
    let first = it
        .next()
        .ok_or_else(|| Error::Shape("tensor product of zero factors".into()))?;
    let mut acc = (*first).clone();
    for f in it {
        acc = tensor_state(&acc, f)?;
    }
    Ok(acc)
}

/// Embed `op` acting on factor `slot` of a product space with the given
/// factor dimensions, identity elsewhere.
pub fn embed_factor_operator(
    dims: &[usize],
    slot: usize,
    op: &LinearOperator,
) -> Result<LinearOperator> {
    if slot >= dims.len() {
        return Err(Error::Label(format!(
            "factor index {slot} out of range for {} factors",
            dims.len()
        )));
    }
    if op.dim() != dims[slot] {
        return Err(Error::Shape(format!(
            "operator dimension {} does not match factor dimension {}",
            op.dim(),
            dims[slot]
        )));
    }
    let mut acc = LinearOperator::identity(1);
    for (k, &d) in dims.iter().enumerate() {
        let next = if k == slot {
            op.clone()
        } else {
            LinearOperator::identity(d)
        };
        acc = tensor_product(&acc, &next)?;
    }
    Ok(acc)
}

/// Generalized controlled shift on a product space: adds the `control`
/// factor's basis index to the `target` factor's, modulo the target
/// dimension. For two qubits this is the controlled flip; for a larger
/// target it cyclically advances the target by the control value.
pub fn controlled_shift(dims: &[usize], control: usize, target: usize) -> Result<LinearOperator> {
    if control >= dims.len() || target >= dims.len() {
        return Err(Error::Label(format!(
            "factor indices ({control}, {target}) out of range for {} factors",
            dims.len()
        )));
    }
    if control == target {
        return Err(Error::Label(
            "control and target factors must differ".into(),
        ));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Shape("zero-dimensional factor".into()));
    }
    let total: usize = dims.iter().product();
    let mut digits = vec![0usize; dims.len()];
    let perm: Vec<usize> = (0..total)
        .map(|i| {
            let mut rem = i;
            for (k, &d) in dims.iter().enumerate().rev() {
                digits[k] = rem % d;
                rem /= d;
            }
            digits[target] = (digits[target] + digits[control]) % dims[target];
            digits
                .iter()
                .zip(dims.iter())
                .fold(0usize, |acc, (&v, &d)| acc * d + v)
        })
        .collect();
    LinearOperator::permutation(&perm)
}

// ---------------------------------------------------------------------------
// Matrix exponential
// ---------------------------------------------------------------------------

/// Matrix exponential via degree-13 Padé approximation with scaling and
/// squaring. Accurate to close to machine precision for any square input;
/// callers in this crate feed it anti-Hermitian generators, for which the
/// result is unitary.
pub fn operator_exponential(a: &LinearOperator) -> LinearOperator {
    const THETA_13: f64 = 4.25;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let n = a.dim();
    if n == 0 {
        return LinearOperator::zeros(0);
    }
    let norm = linalg::one_norm(a.array());
    let s = if norm > THETA_13 {
        ((norm / THETA_13).log2().ceil()) as u32
    } else {
        0
    };
    let scaled = a.scaled(c(1.0 / (2.0f64).powi(s as i32), 0.0));

    let m = scaled.array();
    let m2 = m.dot(m);
    let m4 = m2.dot(&m2);
    let m6 = m4.dot(&m2);
    let eye = Array2::<Amplitude>::eye(n);

    // U = M (M6 (b13 M6 + b11 M4 + b9 M2) + b7 M6 + b5 M4 + b3 M2 + b1 I)
    let inner_u = m6.mapv(|z| z * B[13]) + m4.mapv(|z| z * B[11]) + m2.mapv(|z| z * B[9]);
    let u_poly = m6.dot(&inner_u)
        + m6.mapv(|z| z * B[7])
        + m4.mapv(|z| z * B[5])
        + m2.mapv(|z| z * B[3])
        + eye.mapv(|z| z * B[1]);
    let u = m.dot(&u_poly);

    // V = M6 (b12 M6 + b10 M4 + b8 M2) + b6 M6 + b4 M4 + b2 M2 + b0 I
    let inner_v = m6.mapv(|z| z * B[12]) + m4.mapv(|z| z * B[10]) + m2.mapv(|z| z * B[8]);
    let v = m6.dot(&inner_v)
        + m6.mapv(|z| z * B[6])
        + m4.mapv(|z| z * B[4])
        + m2.mapv(|z| z * B[2])
        + eye.mapv(|z| z * B[0]);

    // (V - U) X = (V + U). The denominator is nonsingular because the
    // scaled norm is below the Padé-13 threshold.
    let denom = &v - &u;
    let numer = &v + &u;
    let lu = linalg::Lu::factor(&denom).expect("Pade denominator is nonsingular after scaling");
    let mut x = lu.solve_mat(&numer);
    for _ in 0..s {
        x = x.dot(&x);
    }
    LinearOperator { data: x }
}

// ---------------------------------------------------------------------------
// Projector families
// ---------------------------------------------------------------------------

/// An ordered family of projectors on one Hilbert space, with optional
/// outcome labels.
#[derive(Debug, Clone)]
pub struct ProjectorFamily {
    dim: usize,
    members: Vec<LinearOperator>,
    labels: Vec<String>,
}

impl ProjectorFamily {
    /// Build a family from member operators. Only shape coherence is
    /// enforced here; algebraic properties are checked by [`Self::validate`].
    pub fn new(members: Vec<LinearOperator>) -> Result<ProjectorFamily> {
        let dim = members
            .first()
            .map(|m| m.dim())
            .ok_or_else(|| Error::Shape("projector family must have at least one member".into()))?;
        for (k, m) in members.iter().enumerate() {
            if m.dim() != dim {
                return Err(Error::Shape(format!(
                    "family member {k} has dimension {} but member 0 has {dim}",
                    m.dim()
                )));
            }
        }
        let labels = (0..members.len()).map(|k| k.to_string()).collect();
        Ok(ProjectorFamily {
            dim,
            members,
            labels,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<ProjectorFamily> {
        if labels.len() != self.members.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} members",
                labels.len(),
                self.members.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Rank-one family projecting onto each computational basis state.
    pub fn complete_basis(dim: usize) -> ProjectorFamily {
        let members = (0..dim)
            .map(|k| {
                let v = StateVector::basis_state(dim, k).expect("k < dim");
                LinearOperator::outer(&v, &v)
            })
            .collect();
        ProjectorFamily {
            dim,
            members,
            labels: (0..dim).map(|k| k.to_string()).collect(),
        }
    }

    /// Family of projectors onto groups of basis states. Each group lists
    /// basis indices; groups must be disjoint and jointly cover `0..dim`.
    pub fn from_basis_sets(dim: usize, groups: &[Vec<usize>]) -> Result<ProjectorFamily> {
        let mut seen = vec![false; dim];
        for group in groups {
            for &i in group {
                if i >= dim {
                    return Err(Error::Label(format!(
                        "basis index {i} out of range for dimension {dim}"
                    )));
                }
                if seen[i] {
                    return Err(Error::Label(format!(
                        "basis index {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|&s| !s) {
            let missing = seen.iter().position(|&s| !s).unwrap();
            return Err(Error::Label(format!(
                "basis index {missing} is not covered by any group"
            )));
        }
        let members = groups
            .iter()
            .map(|group| {
                let mut p = LinearOperator::zeros(dim);
                for &i in group {
                    p.set(i, i, c(1.0, 0.0));
                }
                p
            })
            .collect();
        ProjectorFamily::new(members)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, k: usize) -> &LinearOperator {
        &self.members[k]
    }

    pub fn members(&self) -> &[LinearOperator] {
        &self.members
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Full validation report; see [`ProjectorFamilyReport`].
    pub fn validate(&self, tol: f64) -> ProjectorFamilyReport {
        validate_projector_family(self, tol)
    }

    /// Error unless the family passes validation at `tol`.
    pub fn require_valid(&self, tol: f64) -> Result<()> {
        let report = self.validate(tol);
        if !report.passed {
            return Err(Error::Precondition(format!(
                "projector family invalid at tol {tol:.1e}: completeness {:.3e}, idempotence {:.3e}, self-adjointness {:.3e}, orthogonality {:.3e}",
                report.completeness,
                report.worst_idempotence(),
                report.worst_self_adjointness(),
                report.orthogonality,
            )));
        }
        Ok(())
    }
}

/// Residuals from projector-family validation. All residuals are
/// max-abs-entry norms; `passed` means every residual is within `tol`.
#[derive(Debug, Clone)]
pub struct ProjectorFamilyReport {
    pub tol: f64,
    /// `‖Σ_k P_k − 1‖`.
    pub completeness: f64,
    /// Per member: `‖P_k² − P_k‖`.
    pub idempotence: Vec<f64>,
    /// Per member: `‖P_k† − P_k‖`.
    pub self_adjointness: Vec<f64>,
    /// Worst `‖P_j P_k‖` over pairs `j ≠ k`.
    pub orthogonality: f64,
    /// Pair attaining the orthogonality residual, if the family has ≥ 2
    /// members.
    pub worst_pair: Option<(usize, usize)>,
    pub passed: bool,
}

impl ProjectorFamilyReport {
    pub fn worst_idempotence(&self) -> f64 {
        self.idempotence.iter().copied().fold(0.0, f64::max)
    }

    pub fn worst_self_adjointness(&self) -> f64 {
        self.self_adjointness.iter().copied().fold(0.0, f64::max)
    }
}

/// Check completeness, idempotence, self-adjointness, and pairwise
/// orthogonality of a projector family, reporting max-abs-entry residuals.
pub fn validate_projector_family(family: &ProjectorFamily, tol: f64) -> ProjectorFamilyReport {
    let dim = family.dim();
    let mut sum = LinearOperator::zeros(dim);
    for m in family.members() {
        sum = sum.add(m);
    }
    let completeness = sum.sub(&LinearOperator::identity(dim)).max_abs();

    let idempotence: Vec<f64> = family
        .members()
        .iter()
        .map(|p| p.mul(p).sub(p).max_abs())
        .collect();
    let self_adjointness: Vec<f64> = family
        .members()
        .iter()
        .map(|p| p.hermiticity_residual())
        .collect();

    let mut orthogonality = 0.0f64;
    let mut worst_pair = None;
    for j in 0..family.len() {
        for k in 0..family.len() {
            if j == k {
                continue;
            }
            let r = family.member(j).mul(family.member(k)).max_abs();
            if r > orthogonality {
                orthogonality = r;
                worst_pair = Some((j, k));
            }
        }
    }

    let passed = completeness <= tol
        && idempotence.iter().all(|&r| r <= tol)
        && self_adjointness.iter().all(|&r| r <= tol)
        && orthogonality <= tol;

    ProjectorFamilyReport {
        tol,
        completeness,
        idempotence,
        self_adjointness,
        orthogonality,
        worst_pair,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    #[test]
    fn tensor_of_diagonal_with_identity() {
        let a = LinearOperator::diagonal(&[c(1.0, 0.0), c(-1.0, 0.0)]);
        let id2 = LinearOperator::identity(2);
        let t = tensor_product(&a, &id2).unwrap();
        let want = LinearOperator::diagonal(&[c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)]);
        assert!(t.sub(&want).max_abs() == 0.0);
    }

    #[test]
    fn tensor_state_ordering_left_most_significant() {
        let a = StateVector::basis_state(2, 1).unwrap();
        let b = StateVector::basis_state(3, 2).unwrap();
        let t = tensor_state(&a, &b).unwrap();
        // |1⟩⊗|2⟩ lands at index 1*3 + 2 = 5.
        assert_eq!(t.get(5), c(1.0, 0.0));
        assert_eq!(t.norm(), 1.0);
    }

    #[test]
    fn controlled_shift_on_two_qubits_is_the_controlled_flip() {
        let u = controlled_shift(&[2, 2], 0, 1).unwrap();
        // |00⟩→|00⟩, |01⟩→|01⟩, |10⟩→|11⟩, |11⟩→|10⟩.
        for (input, want) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            let v = StateVector::basis_state(4, input).unwrap();
            assert_eq!(u.apply(&v).get(want), c(1.0, 0.0));
        }
        assert!(u.unitarity_residual() == 0.0);
    }

    #[test]
    fn controlled_shift_advances_larger_targets_cyclically() {
        let u = controlled_shift(&[2, 3], 0, 1).unwrap();
        // Control 1 advances the qutrit: |1,2⟩ → |1,0⟩ (index 5 → 3).
        let v = StateVector::basis_state(6, 5).unwrap();
        assert_eq!(u.apply(&v).get(3), c(1.0, 0.0));
        assert!(controlled_shift(&[2, 2], 1, 1).is_err());
        assert!(controlled_shift(&[2, 2], 0, 5).is_err());
    }

    #[test]
    fn tensor_cap_is_enforced() {
        let a = LinearOperator::identity(70);
        let b = LinearOperator::identity(70);
        match tensor_product(&a, &b) {
            Err(Error::Capacity(_)) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn embed_factor_operator_matches_manual_kron() {
        let dims = [2, 3, 2];
        let x = LinearOperator::from_array(ndarray::array![
            [c(0.0, 0.0), c(1.0, 0.0)],
            [c(1.0, 0.0), c(0.0, 0.0)]
        ])
        .unwrap();
        let e = embed_factor_operator(&dims, 2, &x).unwrap();
        let manual = tensor_product_all(&[
            &LinearOperator::identity(2),
            &LinearOperator::identity(3),
            &x,
        ])
        .unwrap();
        assert!(e.sub(&manual).max_abs() == 0.0);
    }

    /// Order-`k` Taylor partial sum, an independent oracle for small norms.
    fn taylor_exp(a: &LinearOperator, order: usize) -> LinearOperator {
        let n = a.dim();
        let mut term = LinearOperator::identity(n);
        let mut acc = LinearOperator::identity(n);
        for k in 1..=order {
            term = term.mul(a).scaled(c(1.0 / k as f64, 0.0));
            acc = acc.add(&term);
        }
        acc
    }

    #[test]
    fn exponential_matches_taylor_oracle() {
        // Fixed non-normal test matrix with entries of order one.
        let a = LinearOperator::from_array(ndarray::array![
            [c(0.1, 0.3), c(-0.2, 0.0), c(0.0, 0.5)],
            [c(0.4, -0.1), c(0.0, 0.2), c(0.3, 0.0)],
            [c(-0.3, 0.0), c(0.1, 0.1), c(-0.2, -0.4)]
        ])
        .unwrap();
        let e = operator_exponential(&a);
        let oracle = taylor_exp(&a, 40);
        let err = e.sub(&oracle).max_abs();
        assert!(err < 1e-14, "exp deviates from Taylor oracle by {err}");
    }

    #[test]
    fn exponential_of_diagonal_is_entrywise() {
        let a = LinearOperator::diagonal(&[c(0.0, PI / 2.0), c(0.0, -PI)]);
        let e = operator_exponential(&a);
        assert!((e.get(0, 0) - c(0.0, 1.0)).norm() < 1e-15);
        assert!((e.get(1, 1) - c(-1.0, 0.0)).norm() < 1e-15);
        assert!(e.get(0, 1).norm() == 0.0 && e.get(1, 0).norm() == 0.0);
    }

    #[test]
    fn exponential_of_antihermitian_is_unitary() {
        // exp(i H) for Hermitian H with a norm large enough to force
        // scaling-and-squaring.
        let h = LinearOperator::from_array(ndarray::array![
            [c(3.0, 0.0), c(1.0, 2.0)],
            [c(1.0, -2.0), c(-5.0, 0.0)]
        ])
        .unwrap();
        let gen = h.scaled(c(0.0, 1.0));
        let u = operator_exponential(&gen);
        assert!(u.unitarity_residual() < 1e-13);
    }

    #[test]
    fn basis_family_validates_cleanly() {
        let fam = ProjectorFamily::complete_basis(4);
        let report = fam.validate(1e-12);
        assert!(report.passed);
        assert_eq!(report.completeness, 0.0);
        assert_eq!(report.orthogonality, 0.0);
    }

    #[test]
    fn overlapping_family_reports_half_orthogonality_residual() {
        // {|0⟩⟨0|, |+⟩⟨+|}: each member is a valid projector but the pair
        // overlaps, with max-abs-entry product residual exactly 1/2.
        let zero = StateVector::basis_state(2, 0).unwrap();
        let plus = StateVector::from_amplitudes(vec![
            c(FRAC_1_SQRT_2, 0.0),
            c(FRAC_1_SQRT_2, 0.0),
        ]);
        let fam = ProjectorFamily::new(vec![
            LinearOperator::outer(&zero, &zero),
            LinearOperator::outer(&plus, &plus),
        ])
        .unwrap();
        let report = fam.validate(1e-12);
        assert!(!report.passed);
        assert!((report.orthogonality - 0.5).abs() < 1e-15);
        assert!(report.worst_idempotence() < 1e-15);
        assert!(report.worst_self_adjointness() < 1e-15);
        // Completeness also fails: P0 + P+ ≠ 1.
        assert!((report.completeness - 0.5).abs() < 1e-15);
    }

    #[test]
    fn basis_set_family_requires_disjoint_cover() {
        assert!(ProjectorFamily::from_basis_sets(4, &[vec![0, 1], vec![2, 3]]).is_ok());
        assert!(matches!(
            ProjectorFamily::from_basis_sets(4, &[vec![0, 1], vec![1, 2, 3]]),
            Err(Error::Label(_))
        ));
        assert!(matches!(
            ProjectorFamily::from_basis_sets(4, &[vec![0, 1], vec![2]]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn permutation_rejects_non_bijection() {
        assert!(LinearOperator::permutation(&[0, 0, 2]).is_err());
        assert!(LinearOperator::permutation(&[0, 3]).is_err());
        let p = LinearOperator::permutation(&[1, 2, 0]).unwrap();
        let v = StateVector::basis_state(3, 0).unwrap();
        assert_eq!(p.apply(&v).get(1), c(1.0, 0.0));
    }
}
