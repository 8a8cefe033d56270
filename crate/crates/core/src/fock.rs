//! Truncated Fock spaces over a finite set of lattice sites, with sharp and
//! smeared ladder operators, vertex operators carrying a non-standard
//! adjoint, and the diagnostics that quantify what truncation breaks.
//!
//! Each particle type comes paired with a reverse type (its
//! opposite-charge partner), so a model with `T` types has `2T` modes per
//! site. Basis states are occupation tuples over `sites × modes` with total
//! occupancy at most `n_max`, enumerated lexicographically; the dimension
//! is `C(slots + n_max, n_max)`.
//!
//! Fields come in two flavors. Unprimed fields are plain ladder operators.
//! Primed fields mix an amplitude-smeared annihilator of a type with a
//! sharp creator of its reverse type:
//!
//! ```text
//! ψ'(x,τ)  = Σ_y Δ(x−y) a_{y,τ}  +  a†_{x,τ̄}
//! ψ'(x,τ)‡ = a†_{x,τ}           +  Σ_y Δ(x−y) a_{y,τ̄}
//! ```
//!
//! `‡` is *not* the Hermitian adjoint: it swaps each field with its partner,
//! reverses products, and conjugates scalars. Vertex operators built from
//! `‡`-self-adjoint combinations generate pseudo-unitary interactions
//! (`G‡ G = 1`) at every truncation level, while ordinary unitarity fails.

use ndarray::Array2;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hilbert::{
    operator_exponential, Amplitude, LinearOperator, StateVector, DEFAULT_DIM_CAP,
};
use crate::propagators::LatticeTable;

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// `C(n+k, k)` with overflow-safe arithmetic.
fn binomial(n: u64, k: u64) -> u128 {
    let (n, k) = (n as u128, k.min(n) as u128);
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// A truncated Fock space over `sites × (2·types)` single-particle slots.
#[derive(Debug, Clone)]
pub struct FockModel {
    n_types: usize,
    sites: Vec<Vec<i64>>,
    n_max: u32,
    /// `smearing[[i, j]] = Δ(x_i − x_j)`, looked up from a displacement
    /// table. Symmetric because the source table is even in displacement.
    smearing: Array2<Amplitude>,
    basis: Vec<Vec<u8>>,
    index: BTreeMap<Vec<u8>, usize>,
}

impl FockModel {
    /// Build a model whose smearing coefficients are displacement-table
    /// lookups between the given lattice sites (site coordinates use the
    /// table's axis order).
    pub fn new(
        n_types: usize,
        sites: Vec<Vec<i64>>,
        n_max: u32,
        smearing_source: &LatticeTable,
    ) -> Result<FockModel> {
        if n_types == 0 {
            return Err(Error::Domain("need at least one particle type".into()));
        }
        if sites.is_empty() {
            return Err(Error::Domain("need at least one site".into()));
        }
        if n_max == 0 {
            return Err(Error::Domain("occupancy cap must be at least 1".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.len() != smearing_source.extents().len() {
                return Err(Error::Shape(format!(
                    "site {i} has {} coordinates but the smearing table has {} axes",
                    s.len(),
                    smearing_source.extents().len()
                )));
            }
            for other in sites.iter().take(i) {
                if other == s {
                    return Err(Error::Label(format!("duplicate site coordinates {s:?}")));
                }
            }
        }

        let slots = sites.len() * 2 * n_types;
        let dim = binomial(slots as u64 + n_max as u64, n_max as u64);
        if dim > DEFAULT_DIM_CAP as u128 {
            return Err(Error::Capacity(format!(
                "truncated space dimension {dim} exceeds cap {DEFAULT_DIM_CAP} \
                 ({slots} slots, occupancy ≤ {n_max})"
            )));
        }

        let mut smearing = Array2::zeros((sites.len(), sites.len()));
        for i in 0..sites.len() {
            for j in 0..sites.len() {
                let disp: Vec<i64> = sites[i]
                    .iter()
                    .zip(sites[j].iter())
                    .map(|(a, b)| a - b)
                    .collect();
                smearing[[i, j]] = smearing_source.get_displacement(&disp)?;
            }
        }

        // Lexicographic enumeration of occupation tuples with Σ ≤ n_max.
        let mut basis = Vec::with_capacity(dim as usize);
        let mut occ = vec![0u8; slots];
        loop {
            basis.push(occ.clone());
            // Next tuple in lex order under the total-occupancy constraint:
            // increment the last slot; on overflow of the total, carry.
            let mut pos = slots;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                occ[pos] += 1;
                let total: u32 = occ.iter().map(|&v| v as u32).sum();
                if total <= n_max {
                    break;
                }
                // Reset this slot and everything after it, carry left.
                for v in occ.iter_mut().skip(pos) {
                    *v = 0;
                }
            }
            if occ.iter().all(|&v| v == 0) {
                break;
            }
        }
        debug_assert_eq!(basis.len() as u128, dim);
        let index = basis
            .iter()
            .enumerate()
            .map(|(i, b)| (b.clone(), i))
            .collect();

        Ok(FockModel {
            n_types,
            sites,
            n_max,
            smearing,
            basis,
            index,
        })
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> &[Vec<i64>] {
        &self.sites
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn modes_per_site(&self) -> usize {
        2 * self.n_types
    }

    pub fn slot_count(&self) -> usize {
        self.site_count() * self.modes_per_site()
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Closed-form dimension `C(slots + n_max, n_max)`; always equals
    /// [`Self::dim`].
    pub fn dimension_formula(&self) -> u128 {
        binomial(
            self.slot_count() as u64 + self.n_max as u64,
            self.n_max as u64,
        )
    }

    /// Slot index for a (site, type, reversed) triple.
    pub fn slot(&self, site: usize, type_index: usize, reversed: bool) -> Result<usize> {
        if site >= self.site_count() {
            return Err(Error::Label(format!(
                "site {site} out of range for {} sites",
                self.site_count()
            )));
        }
        if type_index >= self.n_types {
            return Err(Error::Label(format!(
                "type {type_index} out of range for {} types",
                self.n_types
            )));
        }
        let mode = type_index + if reversed { self.n_types } else { 0 };
        Ok(site * self.modes_per_site() + mode)
    }

    pub fn occupation(&self, basis_index: usize) -> &[u8] {
        &self.basis[basis_index]
    }

    pub fn total_occupancy(&self, basis_index: usize) -> u32 {
        self.basis[basis_index].iter().map(|&v| v as u32).sum()
    }

    pub fn basis_index(&self, occupation: &[u8]) -> Option<usize> {
        self.index.get(occupation).copied()
    }

    /// The all-empty state, index 0 in lexicographic order.
    pub fn vacuum(&self) -> StateVector {
        StateVector::basis_state(self.dim(), 0).expect("dim ≥ 1")
    }

    pub fn smearing(&self, site_a: usize, site_b: usize) -> Amplitude {
        self.smearing[[site_a, site_b]]
    }

    /// Max-abs residual of `Σ_χ |χ⟩⟨χ| = 1` by explicit accumulation over
    /// the enumerated basis.
    pub fn identity_resolution_residual(&self) -> f64 {
        let dim = self.dim();
        let mut acc = LinearOperator::zeros(dim);
        for b in 0..dim {
            let v = StateVector::basis_state(dim, b).expect("b < dim");
            acc = acc.add(&LinearOperator::outer(&v, &v));
        }
        acc.sub(&LinearOperator::identity(dim)).max_abs()
    }
}

/// Sharp and smeared ladder operators on a truncated Fock model, realized
/// as dense matrices.
#[derive(Debug, Clone)]
pub struct FieldOperators {
    model: FockModel,
    annihilators: Vec<LinearOperator>,
    creators: Vec<LinearOperator>,
}

impl FieldOperators {
    pub fn new(model: FockModel) -> FieldOperators {
        let dim = model.dim();
        let slots = model.slot_count();
        let mut annihilators = Vec::with_capacity(slots);
        let mut creators = Vec::with_capacity(slots);
        for slot in 0..slots {
            let mut a = LinearOperator::zeros(dim);
            let mut adag = LinearOperator::zeros(dim);
            for (col, occ) in model.basis.iter().enumerate() {
                let n = occ[slot] as f64;
                if occ[slot] > 0 {
                    let mut lowered = occ.clone();
                    lowered[slot] -= 1;
                    let row = model.index[&lowered];
                    a.set(row, col, c(n.sqrt(), 0.0));
                }
                // Raising is truncated: amplitudes out of the capped space
                // are dropped, which is exactly what breaks exchange
                // relations near the cap.
                if model.total_occupancy(col) < model.n_max {
                    let mut raised = occ.clone();
                    raised[slot] += 1;
                    let row = model.index[&raised];
                    adag.set(row, col, c((n + 1.0).sqrt(), 0.0));
                }
            }
            annihilators.push(a);
            creators.push(adag);
        }
        FieldOperators {
            model,
            annihilators,
            creators,
        }
    }

    pub fn model(&self) -> &FockModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Sharp annihilator `a_{x,mode}`.
    pub fn sharp_annihilator(
        &self,
        site: usize,
        type_index: usize,
        reversed: bool,
    ) -> Result<&LinearOperator> {
        Ok(&self.annihilators[self.model.slot(site, type_index, reversed)?])
    }

    /// Sharp creator `a†_{x,mode}` (truncated at the occupancy cap).
    pub fn sharp_creator(
        &self,
        site: usize,
        type_index: usize,
        reversed: bool,
    ) -> Result<&LinearOperator> {
        Ok(&self.creators[self.model.slot(site, type_index, reversed)?])
    }

    /// Smeared annihilator `Σ_y Δ(x−y) a_{y,mode}`.
    pub fn smeared_annihilator(
        &self,
        site: usize,
        type_index: usize,
        reversed: bool,
    ) -> Result<LinearOperator> {
        let mut acc = LinearOperator::zeros(self.dim());
        for y in 0..self.model.site_count() {
            let coeff = self.model.smearing(site, y);
            let a = &self.annihilators[self.model.slot(y, type_index, reversed)?];
            acc = acc.add(&a.scaled(coeff));
        }
        Ok(acc)
    }

    /// Smeared creator `Σ_y conj(Δ(x−y)) a†_{y,mode}` — the Hermitian
    /// adjoint of the smeared annihilator, provided for comparison with the
    /// non-standard adjoint.
    pub fn smeared_creator(
        &self,
        site: usize,
        type_index: usize,
        reversed: bool,
    ) -> Result<LinearOperator> {
        let mut acc = LinearOperator::zeros(self.dim());
        for y in 0..self.model.site_count() {
            let coeff = self.model.smearing(site, y).conj();
            let adag = &self.creators[self.model.slot(y, type_index, reversed)?];
            acc = acc.add(&adag.scaled(coeff));
        }
        Ok(acc)
    }

    /// Primed annihilation-type field `ψ'(x,τ) = smeared a_τ + sharp a†_τ̄`.
    pub fn primed_field(&self, site: usize, type_index: usize) -> Result<LinearOperator> {
        Ok(self
            .smeared_annihilator(site, type_index, false)?
            .add(self.sharp_creator(site, type_index, true)?))
    }

    /// Its `‡` partner `ψ'(x,τ)‡ = sharp a†_τ + smeared a_τ̄`.
    pub fn primed_field_adjoint(&self, site: usize, type_index: usize) -> Result<LinearOperator> {
        Ok(self
            .sharp_creator(site, type_index, false)?
            .clone()
            .add(&self.smeared_annihilator(site, type_index, true)?))
    }
}

/// Whether a vertex leg is a creation-type (`ψ‡`) or annihilation-type
/// (`ψ`) field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegKind {
    Creation,
    Annihilation,
}

impl LegKind {
    fn flipped(self) -> LegKind {
        match self {
            LegKind::Creation => LegKind::Annihilation,
            LegKind::Annihilation => LegKind::Creation,
        }
    }
}

/// Recipe for a pointlike vertex: coupling, ordered legs (type, kind), and
/// whether legs are primed fields or plain ladder operators.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSpec {
    pub coupling: Amplitude,
    pub legs: Vec<(usize, LegKind)>,
    pub primed: bool,
}

impl VertexSpec {
    fn check(&self, model: &FockModel) -> Result<()> {
        if self.legs.is_empty() {
            return Err(Error::Shape("vertex needs at least one leg".into()));
        }
        if self.legs.len() > 6 {
            return Err(Error::Capacity(format!(
                "{} legs exceeds the supported maximum of 6",
                self.legs.len()
            )));
        }
        for &(t, _) in &self.legs {
            if t >= model.n_types() {
                return Err(Error::Label(format!(
                    "leg type {t} out of range for {} types",
                    model.n_types()
                )));
            }
        }
        Ok(())
    }

    /// The `‡`-image of this recipe: reversed legs, each kind flipped,
    /// coupling conjugated. Applying it twice returns the original.
    pub fn special_adjoint(&self) -> VertexSpec {
        VertexSpec {
            coupling: self.coupling.conj(),
            legs: self
                .legs
                .iter()
                .rev()
                .map(|&(t, k)| (t, k.flipped()))
                .collect(),
            primed: self.primed,
        }
    }
}

/// One leg's expansion pieces: `(is_creator, matrix)` terms whose sum is
/// the field operator for that leg.
fn leg_pieces(
    fields: &FieldOperators,
    site: usize,
    type_index: usize,
    kind: LegKind,
    primed: bool,
) -> Result<Vec<(bool, LinearOperator)>> {
    Ok(match (primed, kind) {
        (false, LegKind::Annihilation) => vec![(
            false,
            fields.sharp_annihilator(site, type_index, false)?.clone(),
        )],
        (false, LegKind::Creation) => {
            vec![(true, fields.sharp_creator(site, type_index, false)?.clone())]
        }
        (true, LegKind::Annihilation) => vec![
            (false, fields.smeared_annihilator(site, type_index, false)?),
            (true, fields.sharp_creator(site, type_index, true)?.clone()),
        ],
        (true, LegKind::Creation) => vec![
            (true, fields.sharp_creator(site, type_index, false)?.clone()),
            (false, fields.smeared_annihilator(site, type_index, true)?),
        ],
    })
}

/// Normal-ordered vertex assembly: expand the product of leg fields into
/// monomials, move every creator piece left of every annihilator piece
/// (preserving leg order within each group — this is the definition of the
/// vertex, not an application of commutation rules), and sum.
fn assemble_vertex(
    fields: &FieldOperators,
    sites: &[usize],
    spec: &VertexSpec,
) -> Result<LinearOperator> {
    let dim = fields.dim();
    let mut total = LinearOperator::zeros(dim);
    for &site in sites {
        let pieces: Vec<Vec<(bool, LinearOperator)>> = spec
            .legs
            .iter()
            .map(|&(t, k)| leg_pieces(fields, site, t, k, spec.primed))
            .collect::<Result<_>>()?;
        let mut choice = vec![0usize; pieces.len()];
        loop {
            let mut creators: Vec<&LinearOperator> = Vec::new();
            let mut annihilators: Vec<&LinearOperator> = Vec::new();
            for (leg, &pick) in choice.iter().enumerate() {
                let (is_creator, m) = &pieces[leg][pick];
                if *is_creator {
                    creators.push(m);
                } else {
                    annihilators.push(m);
                }
            }
            let mut monomial = LinearOperator::identity(dim);
            for m in creators.into_iter().chain(annihilators) {
                monomial = monomial.mul(m);
            }
            total = total.add(&monomial);

            // Odometer over piece choices.
            let mut pos = choice.len();
            let mut done = true;
            while pos > 0 {
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < pieces[pos].len() {
                    done = false;
                    break;
                }
                choice[pos] = 0;
            }
            if done {
                break;
            }
        }
    }
    Ok(total.scaled(spec.coupling))
}

/// A vertex operator together with its `‡`-image, both as dense matrices.
#[derive(Debug, Clone)]
pub struct VertexOperator {
    pub sites: Vec<usize>,
    pub spec: VertexSpec,
    pub matrix: LinearOperator,
    pub special_adjoint_matrix: LinearOperator,
}

impl VertexOperator {
    /// Max-abs difference between the vertex and its `‡`-image; zero for
    /// recipes symmetric under the `‡` rule (with real coupling).
    pub fn special_self_adjointness_residual(&self) -> f64 {
        self.matrix.sub(&self.special_adjoint_matrix).max_abs()
    }
}

/// Vertex at a single site.
pub fn vertex_operator(
    fields: &FieldOperators,
    site: usize,
    spec: &VertexSpec,
) -> Result<VertexOperator> {
    restricted_vertex(fields, spec, &HypervolumeMask::new(vec![site])?)
}

/// A set of site indices over which a vertex is summed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HypervolumeMask {
    sites: Vec<usize>,
}

impl HypervolumeMask {
    /// Sites must be non-empty, sorted-unique after normalization.
    pub fn new(mut sites: Vec<usize>) -> Result<HypervolumeMask> {
        if sites.is_empty() {
            return Err(Error::Shape("hypervolume mask cannot be empty".into()));
        }
        sites.sort_unstable();
        for w in sites.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Label(format!("site {} repeated in mask", w[0])));
            }
        }
        Ok(HypervolumeMask { sites })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn is_disjoint(&self, other: &HypervolumeMask) -> bool {
        self.sites.iter().all(|s| !other.sites.contains(s))
    }
}

/// Vertex summed over a hypervolume: `V(mask) = Σ_{x ∈ mask} V(x)`.
pub fn restricted_vertex(
    fields: &FieldOperators,
    spec: &VertexSpec,
    mask: &HypervolumeMask,
) -> Result<VertexOperator> {
    spec.check(fields.model())?;
    for &s in mask.sites() {
        if s >= fields.model().site_count() {
            return Err(Error::Label(format!(
                "mask site {s} out of range for {} sites",
                fields.model().site_count()
            )));
        }
    }
    let matrix = assemble_vertex(fields, mask.sites(), spec)?;
    let special_adjoint_matrix = assemble_vertex(fields, mask.sites(), &spec.special_adjoint())?;
    Ok(VertexOperator {
        sites: mask.sites().to_vec(),
        spec: spec.clone(),
        matrix,
        special_adjoint_matrix,
    })
}

/// Tolerance on the `‡`-self-adjointness precondition of
/// [`interaction_operator`].
pub const SPECIAL_SELF_ADJOINT_TOL: f64 = 1e-10;

/// The exponentiated interaction `G = exp(−iV)` and its `‡`-inverse
/// `G‡ = exp(+iV‡)`.
#[derive(Debug, Clone)]
pub struct InteractionOperator {
    pub forward: LinearOperator,
    pub special_inverse: LinearOperator,
}

impl InteractionOperator {
    /// Max-abs residual of `G‡ G = 1`, which holds at any truncation level
    /// for `‡`-self-adjoint vertices.
    pub fn pseudo_unitarity_residual(&self) -> f64 {
        let dim = self.forward.dim();
        self.special_inverse
            .mul(&self.forward)
            .sub(&LinearOperator::identity(dim))
            .max_abs()
    }
}

/// Exponentiate a vertex into an interaction operator. The vertex must be
/// `‡`-self-adjoint within [`SPECIAL_SELF_ADJOINT_TOL`].
pub fn interaction_operator(vertex: &VertexOperator) -> Result<InteractionOperator> {
    let residual = vertex.special_self_adjointness_residual();
    if residual > SPECIAL_SELF_ADJOINT_TOL {
        return Err(Error::Precondition(format!(
            "vertex is not ‡-self-adjoint: residual {residual:.3e} exceeds {SPECIAL_SELF_ADJOINT_TOL:.1e}"
        )));
    }
    let forward = operator_exponential(&vertex.matrix.scaled(c(0.0, -1.0)));
    let special_inverse =
        operator_exponential(&vertex.special_adjoint_matrix.scaled(c(0.0, 1.0)));
    Ok(InteractionOperator {
        forward,
        special_inverse,
    })
}

/// Residuals of the two-site vertex commutator `[V(x), V(y)]`.
#[derive(Debug, Clone)]
pub struct CommutatorReport {
    /// Max-abs entry over columns whose total occupancy keeps every
    /// intermediate state below the cap.
    pub protected_residual: f64,
    /// Max-abs entry over the whole matrix (shows the truncation leak).
    pub full_residual: f64,
    /// Number of protected columns.
    pub protected_columns: usize,
}

/// Commutator of the same vertex recipe planted at two different sites.
/// The smeared/sharp structure makes the exchange terms cancel exactly
/// below the truncation cap: on columns with occupancy `< n_max − legs`
/// the commutator vanishes to machine precision.
pub fn vertex_commutator_check(
    fields: &FieldOperators,
    spec: &VertexSpec,
    site_a: usize,
    site_b: usize,
) -> Result<CommutatorReport> {
    if site_a == site_b {
        return Err(Error::Label(
            "commutator check needs two distinct sites".into(),
        ));
    }
    let va = vertex_operator(fields, site_a, spec)?;
    let vb = vertex_operator(fields, site_b, spec)?;
    let comm = va.matrix.commutator(&vb.matrix);

    let model = fields.model();
    let legs = spec.legs.len() as u32;
    let threshold = model.n_max().saturating_sub(legs);
    let mut protected = 0.0f64;
    let mut protected_columns = 0usize;
    for col in 0..model.dim() {
        if model.total_occupancy(col) < threshold {
            protected_columns += 1;
            for row in 0..model.dim() {
                protected = protected.max(comm.get(row, col).norm());
            }
        }
    }
    Ok(CommutatorReport {
        protected_residual: protected,
        full_residual: comm.max_abs(),
        protected_columns,
    })
}

/// Residuals of interaction factorization over disjoint hypervolumes.
#[derive(Debug, Clone)]
pub struct FactorizationReport {
    /// Max-abs entry of `exp(−i Σ V_k) − Π exp(−i V_k)` over protected
    /// columns.
    pub protected_residual: f64,
    /// Max-abs entry over all columns.
    pub full_residual: f64,
    /// Residual between the two opposite orderings of the product, on
    /// protected columns.
    pub ordering_residual: f64,
    /// Number of protected columns (occupancy ≤ n_max − masks·legs).
    pub protected_columns: usize,
}

/// Compare the joint interaction `exp(−i Σ_k V(mask_k))` with the product
/// `Π_k exp(−i V(mask_k))` over pairwise-disjoint hypervolumes. Exact
/// factorization needs the vertices to commute, which truncation only
/// guarantees on columns with occupancy at most `n_max − masks·legs`; the
/// protected-sector residual scales like the coupling to the fourth power.
pub fn factorization_check(
    fields: &FieldOperators,
    spec: &VertexSpec,
    masks: &[HypervolumeMask],
) -> Result<FactorizationReport> {
    if masks.len() < 2 {
        return Err(Error::Shape(
            "factorization needs at least two hypervolumes".into(),
        ));
    }
    for (i, a) in masks.iter().enumerate() {
        for b in masks.iter().skip(i + 1) {
            if !a.is_disjoint(b) {
                return Err(Error::Label(format!(
                    "hypervolumes {:?} and {:?} overlap",
                    a.sites(),
                    b.sites()
                )));
            }
        }
    }

    let dim = fields.dim();
    let verts: Vec<VertexOperator> = masks
        .iter()
        .map(|m| restricted_vertex(fields, spec, m))
        .collect::<Result<_>>()?;
    let mut joint_generator = LinearOperator::zeros(dim);
    for v in &verts {
        joint_generator = joint_generator.add(&v.matrix);
    }
    let joint = operator_exponential(&joint_generator.scaled(c(0.0, -1.0)));

    let factors: Vec<LinearOperator> = verts
        .iter()
        .map(|v| operator_exponential(&v.matrix.scaled(c(0.0, -1.0))))
        .collect();
    let mut product = LinearOperator::identity(dim);
    for f in &factors {
        product = product.mul(f);
    }
    let mut reversed = LinearOperator::identity(dim);
    for f in factors.iter().rev() {
        reversed = reversed.mul(f);
    }

    let diff = joint.sub(&product);
    let order_diff = product.sub(&reversed);

    let model = fields.model();
    let budget = masks.len() as u32 * spec.legs.len() as u32;
    let threshold = model.n_max().saturating_sub(budget);
    let empty = model.n_max() < budget;
    let mut protected = 0.0f64;
    let mut ordering = 0.0f64;
    let mut protected_columns = 0usize;
    if !empty {
        for col in 0..model.dim() {
            if model.total_occupancy(col) <= threshold {
                protected_columns += 1;
                for row in 0..model.dim() {
                    protected = protected.max(diff.get(row, col).norm());
                    ordering = ordering.max(order_diff.get(row, col).norm());
                }
            }
        }
    }
    Ok(FactorizationReport {
        protected_residual: protected,
        full_residual: diff.max_abs(),
        ordering_residual: ordering,
        protected_columns,
    })
}
