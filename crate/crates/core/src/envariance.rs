//! Envariance: unitary operations on a correlated system–environment pair
//! whose effect on the pair state can be undone by acting on the other
//! factor alone. Phase envariance, swap/counterswap envariance, the
//! fine-graining of unequal branches into equal-weight sub-branches, and
//! the exact rational outcome weights that counting the sub-branches
//! yields.
//!
//! States here are grid-correlated: each outcome sector α owns disjoint
//! basis-index ranges of the system and environment factors, and the
//! branch vectors are canonical first-index grid states `|s^α, e^α⟩`.
//! Swaps are then exact basis permutations and the fine-graining rotation
//! is a small DFT inside one environment sector.

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::hilbert::{Amplitude, LinearOperator, StateVector, DEFAULT_DIM_CAP};

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// Denominator cap for [`rational_approximation`].
pub const DENOMINATOR_CAP: u64 = 1_000_000;

/// One outcome sector of a correlated pair: disjoint basis-index ranges on
/// each factor plus the branch amplitude.
#[derive(Debug, Clone)]
pub struct SectorSpec {
    pub system_indices: Vec<usize>,
    pub env_indices: Vec<usize>,
    pub amplitude: Amplitude,
}

/// A system–environment state of the form `Σ_α ψ^α |s^α, e^α⟩` with
/// matched outcome labels; label α is the 1-based sector position.
#[derive(Debug, Clone)]
pub struct CorrelatedState {
    system_dim: usize,
    env_dim: usize,
    sectors: Vec<SectorSpec>,
}

impl CorrelatedState {
    pub fn new(
        system_dim: usize,
        env_dim: usize,
        sectors: Vec<SectorSpec>,
    ) -> Result<CorrelatedState> {
        if system_dim == 0 || env_dim == 0 {
            return Err(Error::Shape("factor dimensions must be positive".into()));
        }
        if system_dim
            .checked_mul(env_dim)
            .is_none_or(|d| d > DEFAULT_DIM_CAP)
        {
            return Err(Error::Capacity(format!(
                "joint dimension {system_dim}×{env_dim} exceeds cap {DEFAULT_DIM_CAP}"
            )));
        }
        if sectors.is_empty() {
            return Err(Error::Shape("need at least one sector".into()));
        }
        let mut sys_seen = vec![false; system_dim];
        let mut env_seen = vec![false; env_dim];
        for (i, s) in sectors.iter().enumerate() {
            if s.system_indices.is_empty() || s.env_indices.is_empty() {
                return Err(Error::Shape(format!("sector {} has an empty range", i + 1)));
            }
            for &j in &s.system_indices {
                if j >= system_dim {
                    return Err(Error::Label(format!(
                        "system index {j} out of range in sector {}",
                        i + 1
                    )));
                }
                if sys_seen[j] {
                    return Err(Error::Label(format!(
                        "system index {j} claimed by two sectors"
                    )));
                }
                sys_seen[j] = true;
            }
            for &j in &s.env_indices {
                if j >= env_dim {
                    return Err(Error::Label(format!(
                        "environment index {j} out of range in sector {}",
                        i + 1
                    )));
                }
                if env_seen[j] {
                    return Err(Error::Label(format!(
                        "environment index {j} claimed by two sectors"
                    )));
                }
                env_seen[j] = true;
            }
        }
        let total: f64 = sectors.iter().map(|s| s.amplitude.norm_sqr()).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Normalization(total.sqrt()));
        }
        Ok(CorrelatedState {
            system_dim,
            env_dim,
            sectors,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn env_dim(&self) -> usize {
        self.env_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.system_dim * self.env_dim
    }

    /// Number of outcome sectors; labels run `1..=sector_count()`.
    pub fn sector_count(&self) -> usize {
        self.sectors.len()
    }

    pub fn sector(&self, label: usize) -> Result<&SectorSpec> {
        if label == 0 || label > self.sectors.len() {
            return Err(Error::Label(format!(
                "sector label {label} out of range 1..={}",
                self.sectors.len()
            )));
        }
        Ok(&self.sectors[label - 1])
    }

    fn grid_index(&self, sys: usize, env: usize) -> usize {
        sys * self.env_dim + env
    }

    /// Joint basis index of the branch vector `|s^α, e^α⟩`.
    pub fn branch_index(&self, label: usize) -> Result<usize> {
        let s = self.sector(label)?;
        Ok(self.grid_index(s.system_indices[0], s.env_indices[0]))
    }

    /// The full state `Σ_α ψ^α |s^α, e^α⟩`.
    pub fn state(&self) -> StateVector {
        let mut data: Vec<Amplitude> = vec![c(0.0, 0.0); self.joint_dim()];
        for s in &self.sectors {
            data[self.grid_index(s.system_indices[0], s.env_indices[0])] = s.amplitude;
        }
        StateVector::from_amplitudes(data)
    }

    /// Full-space projector onto sector α's system range.
    pub fn system_sector_projector(&self, label: usize) -> Result<LinearOperator> {
        let s = self.sector(label)?;
        let mut diag = vec![c(0.0, 0.0); self.joint_dim()];
        for &i in &s.system_indices {
            for e in 0..self.env_dim {
                diag[self.grid_index(i, e)] = c(1.0, 0.0);
            }
        }
        Ok(LinearOperator::diagonal(&diag))
    }

    /// Full-space projector onto sector α's environment range.
    pub fn env_sector_projector(&self, label: usize) -> Result<LinearOperator> {
        let s = self.sector(label)?;
        let mut diag = vec![c(0.0, 0.0); self.joint_dim()];
        for &j in &s.env_indices {
            for i in 0..self.system_dim {
                diag[self.grid_index(i, j)] = c(1.0, 0.0);
            }
        }
        Ok(LinearOperator::diagonal(&diag))
    }
}

/// Sector phases σ_α for the system factor; the environment counterphases
/// are `ε_α = 2πℓ_α − σ_α`.
#[derive(Debug, Clone)]
pub struct PhaseSpec {
    pub sigmas: Vec<f64>,
    pub ells: Vec<i64>,
}

impl PhaseSpec {
    pub fn counterphase(&self, index: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.ells[index] as f64 - self.sigmas[index]
    }
}

fn sector_phase_operator(
    s: &CorrelatedState,
    phase_of: impl Fn(usize) -> f64,
    environment: bool,
) -> Result<LinearOperator> {
    let mut diag = vec![c(1.0, 0.0); s.joint_dim()];
    for label in 1..=s.sector_count() {
        let phase = Amplitude::from_polar(1.0, phase_of(label - 1));
        let sector = s.sector(label)?;
        if environment {
            for &j in &sector.env_indices {
                for i in 0..s.system_dim() {
                    diag[i * s.env_dim() + j] = phase;
                }
            }
        } else {
            for &i in &sector.system_indices {
                for j in 0..s.env_dim() {
                    diag[i * s.env_dim() + j] = phase;
                }
            }
        }
    }
    Ok(LinearOperator::diagonal(&diag))
}

/// Residual of phase envariance: `‖U_E U_S |Ψ⟩ − |Ψ⟩‖` with
/// `U_S = Σ e^{iσ_α} P^α_S` and `U_E = Σ e^{iε_α} P^α_E` (identity on
/// unclaimed indices). Vanishes for every phase choice because the
/// counterphases cancel sector by sector.
pub fn phase_envariance_check(s: &CorrelatedState, p: &PhaseSpec) -> Result<f64> {
    if p.sigmas.len() != s.sector_count() || p.ells.len() != s.sector_count() {
        return Err(Error::Shape(format!(
            "phase spec covers {} sectors; state has {}",
            p.sigmas.len().min(p.ells.len()),
            s.sector_count()
        )));
    }
    let u_s = sector_phase_operator(s, |i| p.sigmas[i], false)?;
    let u_e = sector_phase_operator(s, |i| p.counterphase(i), true)?;
    let psi = s.state();
    Ok(u_e.apply(&u_s.apply(&psi)).sub(&psi).norm())
}

/// Which factor a swap acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapTarget {
    System,
    Environment,
}

/// Unitary permutation exchanging the β and γ outcome sectors of one
/// factor, pairing the sectors' basis indices in order; identity
/// elsewhere. Sectors must have equal sizes on the swapped factor.
pub fn swap_operator(
    s: &CorrelatedState,
    beta: usize,
    gamma: usize,
    target: SwapTarget,
) -> Result<LinearOperator> {
    if beta == gamma {
        return Err(Error::Label("cannot swap a sector with itself".into()));
    }
    let (b_ind, g_ind) = match target {
        SwapTarget::System => (
            &s.sector(beta)?.system_indices,
            &s.sector(gamma)?.system_indices,
        ),
        SwapTarget::Environment => (&s.sector(beta)?.env_indices, &s.sector(gamma)?.env_indices),
    };
    if b_ind.len() != g_ind.len() {
        return Err(Error::Shape(format!(
            "sectors {beta} and {gamma} have unequal sizes {} and {} on the swapped factor",
            b_ind.len(),
            g_ind.len()
        )));
    }
    let (sys_dim, env_dim) = (s.system_dim(), s.env_dim());
    let mut factor_map: Vec<usize> = match target {
        SwapTarget::System => (0..sys_dim).collect(),
        SwapTarget::Environment => (0..env_dim).collect(),
    };
    for (&b, &g) in b_ind.iter().zip(g_ind.iter()) {
        factor_map[b] = g;
        factor_map[g] = b;
    }
    let images: Vec<usize> = (0..s.joint_dim())
        .map(|idx| {
            let (i, j) = (idx / env_dim, idx % env_dim);
            match target {
                SwapTarget::System => factor_map[i] * env_dim + j,
                SwapTarget::Environment => i * env_dim + factor_map[j],
            }
        })
        .collect();
    LinearOperator::permutation(&images)
}

/// Residual of swap envariance: the system swap composed with the phase-
/// carrying environment counterswap leaves the state invariant whenever
/// the two branch amplitudes have equal magnitude. The counterswap
/// transfers any amplitude phase difference between the sectors.
pub fn envariance_swap_check(s: &CorrelatedState, beta: usize, gamma: usize) -> Result<f64> {
    let amp_b = s.sector(beta)?.amplitude;
    let amp_g = s.sector(gamma)?.amplitude;
    let gap = (amp_b.norm() - amp_g.norm()).abs();
    if gap > 1e-12 {
        return Err(Error::Precondition(format!(
            "swap envariance needs equal amplitude magnitudes; |ψ^{beta}| − |ψ^{gamma}| = {gap:.3e}"
        )));
    }
    let swap_s = swap_operator(s, beta, gamma, SwapTarget::System)?;
    let swap_e = swap_operator(s, beta, gamma, SwapTarget::Environment)?;
    let theta_b = amp_b.arg();
    let theta_g = amp_g.arg();
    let phases = sector_phase_operator(
        s,
        |i| {
            if i + 1 == beta {
                theta_b - theta_g
            } else if i + 1 == gamma {
                theta_g - theta_b
            } else {
                0.0
            }
        },
        true,
    )?;
    let counterswap = phases.mul(&swap_e);
    let psi = s.state();
    Ok(swap_s.apply(&counterswap.apply(&psi)).sub(&psi).norm())
}

/// `G† U G |Ψ⟩`: the state that, evolved by `G`, reproduces the swapped
/// final state — the measurement looks as if it had proceeded from a
/// different initial state.
pub fn effective_initial_state(
    s: &CorrelatedState,
    g: &LinearOperator,
    swap: &LinearOperator,
) -> Result<StateVector> {
    if g.dim() != s.joint_dim() || swap.dim() != s.joint_dim() {
        return Err(Error::Shape(format!(
            "operators must act on the joint {}-dimensional space",
            s.joint_dim()
        )));
    }
    g.check_unitary(1e-12)?;
    let psi = s.state();
    Ok(g.dagger().apply(&swap.apply(&g.apply(&psi))))
}

/// Integer branch weights: outcome α carries `m_α` of the `total` equal
/// sub-branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalAmplitudeSpec {
    pub m: Vec<u64>,
    pub total: u64,
}

impl RationalAmplitudeSpec {
    pub fn new(m: Vec<u64>, total: u64) -> Result<RationalAmplitudeSpec> {
        if m.is_empty() {
            return Err(Error::Shape("need at least one weight".into()));
        }
        if m.iter().any(|&v| v == 0) {
            return Err(Error::Domain("weights must be positive".into()));
        }
        if m.iter().sum::<u64>() != total {
            return Err(Error::Domain(format!(
                "weights sum to {}, not the declared total {total}",
                m.iter().sum::<u64>()
            )));
        }
        Ok(RationalAmplitudeSpec { m, total })
    }
}

/// One equal-weight sub-branch of a fine-grained state.
#[derive(Debug, Clone)]
pub struct FineBranch {
    /// Coarse outcome label α.
    pub label: usize,
    /// Sub-branch index β ∈ 1..=m_α.
    pub sub: usize,
    /// Full-space projector onto the sub-branch's environment direction
    /// (β = 1 also absorbs the sector's unused remainder, so the β-sum
    /// reproduces the coarse sector projector).
    pub env_projector: LinearOperator,
    /// Unit state `|s^α, e^{αβ}⟩`, carrying the coarse amplitude's phase.
    pub state: StateVector,
}

/// A correlated state refined into equal-weight sub-branches.
#[derive(Debug, Clone)]
pub struct FineGrainedModel {
    source: CorrelatedState,
    spec: RationalAmplitudeSpec,
    pub fine: Vec<FineBranch>,
}

impl FineGrainedModel {
    pub fn source(&self) -> &CorrelatedState {
        &self.source
    }

    pub fn spec(&self) -> &RationalAmplitudeSpec {
        &self.spec
    }

    /// Max-abs residual of `Σ_β P^{αβ}_E = P^α_E` over all sectors.
    pub fn refinement_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for label in 1..=self.source.sector_count() {
            let coarse = self
                .source
                .env_sector_projector(label)
                .expect("label valid");
            let mut sum = LinearOperator::zeros(self.source.joint_dim());
            for f in self.fine.iter().filter(|f| f.label == label) {
                sum = sum.add(&f.env_projector);
            }
            worst = worst.max(sum.sub(&coarse).max_abs());
        }
        worst
    }

    /// L2 residual of regrouping: `Σ_β |s^α, e^{αβ}⟩/√m_α` against the
    /// coarse branch component for each α, summed back into the state.
    pub fn reconstruction_residual(&self) -> f64 {
        let mut sum = StateVector::zeros(self.source.joint_dim());
        let scale = 1.0 / (self.spec.total as f64).sqrt();
        for f in &self.fine {
            sum = sum.add(&f.state.scaled(c(scale, 0.0)));
        }
        sum.sub(&self.source.state()).norm()
    }

    /// Largest off-diagonal inner product among the fine states.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.fine.iter().enumerate() {
            for b in self.fine.iter().skip(i + 1) {
                worst = worst.max(a.state.inner(&b.state).norm());
            }
        }
        worst
    }
}

/// Refine each outcome sector into `m_α` equal-weight orthonormal
/// sub-branches via a DFT rotation of the sector's environment basis. The
/// amplitudes must match the declared rationals (`|ψ^α|² = m_α/total`) and
/// each environment sector must have at least `m_α` directions.
pub fn fine_grain(s: &CorrelatedState, r: &RationalAmplitudeSpec) -> Result<FineGrainedModel> {
    if r.m.len() != s.sector_count() {
        return Err(Error::Shape(format!(
            "{} weights for {} sectors",
            r.m.len(),
            s.sector_count()
        )));
    }
    for label in 1..=s.sector_count() {
        let sector = s.sector(label)?;
        let m = r.m[label - 1];
        let want = m as f64 / r.total as f64;
        let got = sector.amplitude.norm_sqr();
        if (got - want).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "sector {label}: |ψ|² = {got} but the spec demands {m}/{} = {want}",
                r.total
            )));
        }
        if (sector.env_indices.len() as u64) < m {
            return Err(Error::Capacity(format!(
                "sector {label}: environment range has {} directions; refinement needs {m}",
                sector.env_indices.len()
            )));
        }
    }

    let mut fine = Vec::new();
    for label in 1..=s.sector_count() {
        let sector = s.sector(label)?;
        let m = r.m[label - 1] as usize;
        let phase = if sector.amplitude.norm() > 0.0 {
            sector.amplitude / c(sector.amplitude.norm(), 0.0)
        } else {
            c(1.0, 0.0)
        };
        let sys = sector.system_indices[0];
        // DFT over the first m environment directions of the sector:
        // |e^{αβ}⟩ = m^{-1/2} Σ_j ω^{(β−1)j} |env_j⟩ with ω = e^{2πi/m},
        // so Σ_β |e^{αβ}⟩ = √m |e^{α1 canonical}⟩ exactly.
        let omega = 2.0 * std::f64::consts::PI / m as f64;
        let mut sub_states = Vec::with_capacity(m);
        for beta in 0..m {
            let mut v = StateVector::zeros(s.joint_dim());
            for (j, &env) in sector.env_indices.iter().take(m).enumerate() {
                let coeff =
                    Amplitude::from_polar(1.0 / (m as f64).sqrt(), omega * (beta * j) as f64);
                let idx = sys * s.env_dim() + env;
                v = v.add(
                    &StateVector::basis_state(s.joint_dim(), idx)?.scaled(coeff * phase),
                );
            }
            sub_states.push(v);
        }
        // β = 1 absorbs the sector remainder so the β-sum of projectors
        // reproduces the coarse sector projector to rounding.
        let coarse = s.env_sector_projector(label)?;
        let mut rest = LinearOperator::zeros(s.joint_dim());
        let mut projectors = Vec::with_capacity(m);
        for v in sub_states.iter().skip(1) {
            // The environment projector extends over every system index:
            // build it from the environment-factor component alone.
            let p = env_direction_projector(s, sector, v, sys)?;
            rest = rest.add(&p);
            projectors.push(p);
        }
        let first = coarse.sub(&rest);
        let mut all = vec![first];
        all.extend(projectors);
        for (beta, (v, p)) in sub_states.iter().zip(all.into_iter()).enumerate() {
            fine.push(FineBranch {
                label,
                sub: beta + 1,
                env_projector: p,
                state: v.clone(),
            });
        }
    }
    Ok(FineGrainedModel {
        source: s.clone(),
        spec: r.clone(),
        fine,
    })
}

/// Rank-one environment projector `1_S ⊗ |e⟩⟨e|` for the environment
/// component of a grid state supported on one system index.
fn env_direction_projector(
    s: &CorrelatedState,
    sector: &SectorSpec,
    v: &StateVector,
    sys: usize,
) -> Result<LinearOperator> {
    let mut env_vec = vec![c(0.0, 0.0); s.env_dim()];
    for &env in &sector.env_indices {
        env_vec[env] = v.get(sys * s.env_dim() + env);
    }
    let mut p = LinearOperator::zeros(s.joint_dim());
    for i in 0..s.system_dim() {
        for (a, &va) in env_vec.iter().enumerate() {
            if va == c(0.0, 0.0) {
                continue;
            }
            for (b, &vb) in env_vec.iter().enumerate() {
                if vb == c(0.0, 0.0) {
                    continue;
                }
                p.set(i * s.env_dim() + a, i * s.env_dim() + b, va * vb.conj());
            }
        }
    }
    Ok(p)
}

/// A fine-grained state with an ancilla register labeling every
/// sub-branch: `Σ_{αβ} M^{-1/2} |s^α, e^{αβ}, c^{αβ}⟩`.
#[derive(Debug, Clone)]
pub struct AncillaExtendedState {
    pub state: StateVector,
    /// `(α, β, unit state)` triples on the system⊗environment⊗ancilla
    /// space, in deterministic (α, β) order.
    pub fine: Vec<(usize, usize, StateVector)>,
    /// The common coefficient `1/√M`.
    pub coefficient: f64,
    pub ancilla_dim: usize,
}

impl AncillaExtendedState {
    /// Max deviation of `⟨fine|state⟩` from the common coefficient.
    pub fn coefficient_residual(&self) -> f64 {
        self.fine
            .iter()
            .map(|(_, _, f)| (f.inner(&self.state).norm() - self.coefficient).abs())
            .fold(0.0, f64::max)
    }

    /// Largest off-diagonal inner product among the extended fine states.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, (_, _, a)) in self.fine.iter().enumerate() {
            for (_, _, b) in self.fine.iter().skip(i + 1) {
                worst = worst.max(a.inner(b).norm());
            }
        }
        worst
    }
}

/// Attach an ancilla register marking each sub-branch with its own basis
/// direction. Needs `ancilla_dim ≥ M`.
pub fn attach_ancilla(f: &FineGrainedModel, ancilla_dim: usize) -> Result<AncillaExtendedState> {
    let total = f.spec().total;
    if (ancilla_dim as u64) < total {
        return Err(Error::Capacity(format!(
            "ancilla dimension {ancilla_dim} cannot label {total} sub-branches"
        )));
    }
    let joint = f.source().joint_dim();
    if joint
        .checked_mul(ancilla_dim)
        .is_none_or(|d| d > DEFAULT_DIM_CAP)
    {
        return Err(Error::Capacity(format!(
            "extended dimension {joint}×{ancilla_dim} exceeds cap {DEFAULT_DIM_CAP}"
        )));
    }
    let ext_dim = joint * ancilla_dim;
    let coefficient = 1.0 / (total as f64).sqrt();
    let mut state = StateVector::zeros(ext_dim);
    let mut fine = Vec::with_capacity(f.fine.len());
    for (tag, fb) in f.fine.iter().enumerate() {
        let mut amps = vec![c(0.0, 0.0); ext_dim];
        for idx in 0..joint {
            let a = fb.state.get(idx);
            if a != c(0.0, 0.0) {
                amps[idx * ancilla_dim + tag] = a;
            }
        }
        let ext = StateVector::from_amplitudes(amps);
        state = state.add(&ext.scaled(c(coefficient, 0.0)));
        fine.push((fb.label, fb.sub, ext));
    }
    Ok(AncillaExtendedState {
        state,
        fine,
        coefficient,
        ancilla_dim,
    })
}

/// Exact outcome weights by sub-branch counting: `p_α = m_α / M`.
pub fn born_probabilities(f: &FineGrainedModel) -> Vec<(usize, Ratio<u64>)> {
    f.spec()
        .m
        .iter()
        .enumerate()
        .map(|(i, &m)| (i + 1, Ratio::new(m, f.spec().total)))
        .collect()
}

/// Smallest-denominator integer weights reproducing the squared
/// amplitudes within `tol`: exhaustive search over denominators from the
/// outcome count upward, allocating by largest remainder with a minimum
/// of one sub-branch per outcome.
pub fn rational_approximation(amplitudes: &[f64], tol: f64) -> Result<RationalAmplitudeSpec> {
    if amplitudes.is_empty() {
        return Err(Error::Shape("need at least one amplitude".into()));
    }
    if tol < 1e-9 {
        return Err(Error::Capacity(format!(
            "tolerance {tol:.3e} would need denominators beyond the cap {DENOMINATOR_CAP}"
        )));
    }
    let squares: Vec<f64> = amplitudes.iter().map(|a| a * a).collect();
    let total: f64 = squares.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Normalization(total.sqrt()));
    }
    let k = amplitudes.len() as u64;
    let limit = ((k as f64 / tol).ceil() as u64).min(DENOMINATOR_CAP);
    for denom in k..=limit {
        let m = apportion(&squares, denom);
        let err = m
            .iter()
            .zip(squares.iter())
            .map(|(&mi, &sq)| (mi as f64 / denom as f64 - sq).abs())
            .fold(0.0, f64::max);
        if err <= tol {
            return Ok(RationalAmplitudeSpec { m, total: denom });
        }
    }
    Err(Error::Capacity(format!(
        "no denominator up to {limit} meets tolerance {tol:.3e}"
    )))
}

/// Largest-remainder allocation of `denom` units proportional to
/// `squares`, each entry at least 1. Deterministic: ties go to the lower
/// index.
fn apportion(squares: &[f64], denom: u64) -> Vec<u64> {
    let k = squares.len();
    let mut m: Vec<u64> = Vec::with_capacity(k);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(k);
    for (i, &sq) in squares.iter().enumerate() {
        let ideal = sq * denom as f64;
        let base = (ideal.floor() as u64).max(1);
        m.push(base);
        remainders.push((i, ideal - ideal.floor()));
    }
    let mut assigned: u64 = m.iter().sum();
    // Distribute any shortfall by largest remainder, then repair any
    // overshoot (from the minimum-1 floor) from the smallest remainders.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut cursor = 0;
    while assigned < denom {
        let (i, _) = remainders[cursor % remainders.len()];
        m[i] += 1;
        assigned += 1;
        cursor += 1;
    }
    let mut cursor = remainders.len();
    while assigned > denom {
        cursor = if cursor == 0 {
            remainders.len() - 1
        } else {
            cursor - 1
        };
        let (i, _) = remainders[cursor];
        if m[i] > 1 {
            m[i] -= 1;
            assigned -= 1;
        }
        if cursor == 0 && assigned > denom {
            // One full lap without progress cannot happen while any entry
            // exceeds 1; Σ ≥ denom ≥ k guarantees progress.
            cursor = remainders.len();
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two sectors on a 4×4 grid with amplitudes (a, b).
    fn two_sector_state(a: Amplitude, b: Amplitude) -> CorrelatedState {
        CorrelatedState::new(
            4,
            4,
            vec![
                SectorSpec {
                    system_indices: vec![0, 1],
                    env_indices: vec![0, 1],
                    amplitude: a,
                },
                SectorSpec {
                    system_indices: vec![2, 3],
                    env_indices: vec![2, 3],
                    amplitude: b,
                },
            ],
        )
        .unwrap()
    }

    fn root_half() -> f64 {
        std::f64::consts::FRAC_1_SQRT_2
    }

    #[test]
    fn construction_validates_ranges_and_norm() {
        let overlap = CorrelatedState::new(
            2,
            2,
            vec![
                SectorSpec {
                    system_indices: vec![0],
                    env_indices: vec![0],
                    amplitude: c(root_half(), 0.0),
                },
                SectorSpec {
                    system_indices: vec![0],
                    env_indices: vec![1],
                    amplitude: c(root_half(), 0.0),
                },
            ],
        );
        assert!(matches!(overlap, Err(Error::Label(_))));
        let unnormalized = CorrelatedState::new(
            2,
            2,
            vec![SectorSpec {
                system_indices: vec![0],
                env_indices: vec![0],
                amplitude: c(0.5, 0.0),
            }],
        );
        assert!(matches!(unnormalized, Err(Error::Normalization(_))));
    }

    #[test]
    fn state_places_amplitudes_on_the_grid() {
        let s = two_sector_state(c(0.6, 0.0), c(0.0, 0.8));
        let psi = s.state();
        assert_eq!(psi.get(0), c(0.6, 0.0)); // |s^1, e^1⟩ = |0,0⟩
        assert_eq!(psi.get(2 * 4 + 2), c(0.0, 0.8)); // |s^2, e^2⟩ = |2,2⟩
        assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_envariance_cancels_for_any_phases() {
        let s = two_sector_state(c(0.6, 0.0), c(0.8, 0.0));
        let zero = PhaseSpec {
            sigmas: vec![0.0, 0.0],
            ells: vec![0, 0],
        };
        assert_eq!(phase_envariance_check(&s, &zero).unwrap(), 0.0);
        let arbitrary = PhaseSpec {
            sigmas: vec![0.37, 1.9],
            ells: vec![0, 0],
        };
        assert!(phase_envariance_check(&s, &arbitrary).unwrap() <= 1e-12);
        let wound = PhaseSpec {
            sigmas: vec![0.37, 1.9],
            ells: vec![3, -2],
        };
        assert!(phase_envariance_check(&s, &wound).unwrap() <= 1e-12);
    }

    #[test]
    fn system_swap_moves_sectors_and_is_an_involution() {
        let s = two_sector_state(c(0.6, 0.0), c(0.8, 0.0));
        let u = swap_operator(&s, 1, 2, SwapTarget::System).unwrap();
        assert!(u
            .mul(&u)
            .sub(&LinearOperator::identity(16))
            .max_abs()
            == 0.0);
        // ψ^1 |s^1,e^1⟩ + ψ^2 |s^2,e^2⟩ → ψ^1 |s^2,e^1⟩ + ψ^2 |s^1,e^2⟩.
        let moved = u.apply(&s.state());
        assert_eq!(moved.get(2 * 4), c(0.6, 0.0));
        assert_eq!(moved.get(2), c(0.8, 0.0));
    }

    #[test]
    fn swap_composition_is_grid_consistent_on_all_basis_pairs() {
        let s = two_sector_state(c(root_half(), 0.0), c(root_half(), 0.0));
        let u_s = swap_operator(&s, 1, 2, SwapTarget::System).unwrap();
        let u_e = swap_operator(&s, 1, 2, SwapTarget::Environment).unwrap();
        let both = u_s.mul(&u_e);
        // |s^1_k, e^2_l⟩ must map to |s^2_k, e^1_l⟩ for every index pair.
        for k in 0..2usize {
            for l in 0..2usize {
                let from = k * 4 + (2 + l);
                let to = (2 + k) * 4 + l;
                let v = StateVector::basis_state(16, from).unwrap();
                assert_eq!(both.apply(&v).get(to), c(1.0, 0.0), "pair ({k},{l})");
            }
        }
    }

    #[test]
    fn swap_envariance_holds_for_equal_magnitudes() {
        let s = two_sector_state(c(root_half(), 0.0), c(root_half(), 0.0));
        assert!(envariance_swap_check(&s, 1, 2).unwrap() <= 1e-12);
        // Equal magnitudes with different phases: the counterswap carries
        // the phase difference.
        let phased = two_sector_state(
            Amplitude::from_polar(root_half(), 0.9),
            Amplitude::from_polar(root_half(), -1.7),
        );
        assert!(envariance_swap_check(&phased, 1, 2).unwrap() <= 1e-12);
    }

    #[test]
    fn swap_envariance_rejects_unequal_magnitudes_and_self_swap() {
        let s = two_sector_state(c(0.6, 0.0), c(0.8, 0.0));
        match envariance_swap_check(&s, 1, 2) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("2.000e-1")),
            other => panic!("expected precondition error, got {other:?}"),
        }
        assert!(matches!(
            envariance_swap_check(&s, 1, 1),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn effective_initial_state_round_trips() {
        let s = two_sector_state(c(root_half(), 0.0), c(root_half(), 0.0));
        let psi = s.state();
        // A nontrivial unitary: swap two unrelated basis directions and
        // phase another.
        let mut images: Vec<usize> = (0..16).collect();
        images.swap(1, 6);
        let g = LinearOperator::permutation(&images).unwrap();
        let swap = swap_operator(&s, 1, 2, SwapTarget::System).unwrap();

        let eff = effective_initial_state(&s, &g, &swap).unwrap();
        let lhs = g.apply(&eff);
        let rhs = swap.apply(&g.apply(&psi));
        assert!(lhs.sub(&rhs).norm() <= 1e-12);

        let identity_swap = LinearOperator::identity(16);
        let same = effective_initial_state(&s, &g, &identity_swap).unwrap();
        assert!(same.sub(&psi).norm() <= 1e-12);

        let double = effective_initial_state(&s, &g, &swap.mul(&swap)).unwrap();
        assert!(double.sub(&psi).norm() <= 1e-12);

        let not_unitary = LinearOperator::diagonal(&vec![c(0.5, 0.0); 16]);
        assert!(effective_initial_state(&s, &not_unitary, &swap).is_err());
    }

    #[test]
    fn trivial_weights_reproduce_the_state() {
        let s = CorrelatedState::new(
            2,
            2,
            vec![SectorSpec {
                system_indices: vec![0],
                env_indices: vec![0],
                amplitude: c(1.0, 0.0),
            }],
        )
        .unwrap();
        let r = RationalAmplitudeSpec::new(vec![1], 1).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        assert_eq!(f.fine.len(), 1);
        assert_eq!(f.refinement_residual(), 0.0);
        assert!(f.reconstruction_residual() <= 1e-12);
    }

    /// 3×6 grid (18-dim): sector 1 has weight 1/3, sector 2 has 2/3 with
    /// two environment directions.
    fn unequal_state() -> CorrelatedState {
        CorrelatedState::new(
            3,
            6,
            vec![
                SectorSpec {
                    system_indices: vec![0],
                    env_indices: vec![0],
                    amplitude: c((1.0f64 / 3.0).sqrt(), 0.0),
                },
                SectorSpec {
                    system_indices: vec![1],
                    env_indices: vec![1, 2],
                    amplitude: c((2.0f64 / 3.0).sqrt(), 0.0),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn fine_grain_produces_equal_coefficient_branches() {
        let s = unequal_state();
        let r = RationalAmplitudeSpec::new(vec![1, 2], 3).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        assert_eq!(f.fine.len(), 3);
        let psi = s.state();
        for fb in &f.fine {
            assert!((fb.state.norm() - 1.0).abs() <= 1e-12);
            let coeff = fb.state.inner(&psi);
            assert!(
                (coeff.norm() - 1.0 / 3.0f64.sqrt()).abs() <= 1e-12,
                "coefficient {coeff} for ({}, {})",
                fb.label,
                fb.sub
            );
        }
        assert!(f.orthogonality_residual() <= 1e-10);
        assert!(f.refinement_residual() <= 1e-13);
        assert!(f.reconstruction_residual() <= 1e-12);
    }

    #[test]
    fn fine_grain_equal_split() {
        let s = CorrelatedState::new(
            2,
            4,
            vec![
                SectorSpec {
                    system_indices: vec![0],
                    env_indices: vec![0, 1],
                    amplitude: c(root_half(), 0.0),
                },
                SectorSpec {
                    system_indices: vec![1],
                    env_indices: vec![2, 3],
                    amplitude: c(root_half(), 0.0),
                },
            ],
        )
        .unwrap();
        let r = RationalAmplitudeSpec::new(vec![2, 2], 4).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        assert_eq!(f.fine.len(), 4);
        let psi = s.state();
        for fb in &f.fine {
            assert!((fb.state.inner(&psi).norm() - 0.5).abs() <= 1e-12);
        }
        assert!(f.reconstruction_residual() <= 1e-12);
    }

    #[test]
    fn fine_grain_rejects_mismatched_weights_and_thin_environments() {
        let s = unequal_state();
        let wrong = RationalAmplitudeSpec::new(vec![2, 1], 3).unwrap();
        assert!(matches!(
            fine_grain(&s, &wrong),
            Err(Error::Precondition(_))
        ));
        // Weight 4/6 = 2/3 keeps amplitudes valid but needs 4 environment
        // directions in sector 2, which only has 2.
        let thin = RationalAmplitudeSpec::new(vec![2, 4], 6).unwrap();
        assert!(matches!(fine_grain(&s, &thin), Err(Error::Capacity(_))));
    }

    #[test]
    fn ancilla_extension_has_uniform_coefficients() {
        let s = unequal_state();
        let r = RationalAmplitudeSpec::new(vec![1, 2], 3).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        let ext = attach_ancilla(&f, 3).unwrap();
        assert!((ext.coefficient - 1.0 / 3.0f64.sqrt()).abs() <= 1e-15);
        assert!(ext.coefficient_residual() <= 1e-12);
        assert!(ext.orthogonality_residual() <= 1e-10);
        assert!((ext.state.norm() - 1.0).abs() <= 1e-12);
        assert!(matches!(attach_ancilla(&f, 2), Err(Error::Capacity(_))));
    }

    #[test]
    fn born_weights_are_exact_rationals() {
        let s = unequal_state();
        let r = RationalAmplitudeSpec::new(vec![1, 2], 3).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        let p = born_probabilities(&f);
        assert_eq!(p[0], (1, Ratio::new(1, 3)));
        assert_eq!(p[1], (2, Ratio::new(2, 3)));
        for (label, prob) in &p {
            let amp = s.sector(*label).unwrap().amplitude.norm_sqr();
            let as_float = *prob.numer() as f64 / *prob.denom() as f64;
            assert!((amp - as_float).abs() <= 1e-12);
        }
        // Additivity by counting: m_α copies of 1/M sum to m_α/M exactly.
        let unit = Ratio::new(1u64, 3u64);
        assert_eq!(unit + unit, Ratio::new(2, 3));
    }

    #[test]
    fn equal_pair_probabilities_are_half() {
        let s = CorrelatedState::new(
            2,
            2,
            vec![
                SectorSpec {
                    system_indices: vec![0],
                    env_indices: vec![0],
                    amplitude: c(root_half(), 0.0),
                },
                SectorSpec {
                    system_indices: vec![1],
                    env_indices: vec![1],
                    amplitude: c(root_half(), 0.0),
                },
            ],
        )
        .unwrap();
        let r = RationalAmplitudeSpec::new(vec![1, 1], 2).unwrap();
        let f = fine_grain(&s, &r).unwrap();
        let p = born_probabilities(&f);
        assert_eq!(p[0].1, Ratio::new(1, 2));
        assert_eq!(p[1].1, Ratio::new(1, 2));
    }

    #[test]
    fn rational_approximation_finds_exact_small_denominators() {
        let quarters = rational_approximation(&[0.5, 0.75f64.sqrt()], 1e-6).unwrap();
        assert_eq!(quarters, RationalAmplitudeSpec::new(vec![1, 3], 4).unwrap());
        let tenths = rational_approximation(&[0.3f64.sqrt(), 0.7f64.sqrt()], 1e-3).unwrap();
        assert_eq!(tenths, RationalAmplitudeSpec::new(vec![3, 7], 10).unwrap());
    }

    #[test]
    fn rational_approximation_of_an_irrational_square() {
        let a = root_half();
        let b = (1.0 - a * a).sqrt();
        let spec = rational_approximation(&[a, b], 1e-3).unwrap();
        assert!((spec.m[0] as f64 / spec.total as f64 - a * a).abs() <= 1e-3);
        assert!((spec.m[1] as f64 / spec.total as f64 - b * b).abs() <= 1e-3);
        // Independent oracle: no smaller denominator admits any allocation
        // within tolerance.
        for denom in 2..spec.total {
            let best = (0..=denom)
                .map(|m0| {
                    (m0 as f64 / denom as f64 - a * a)
                        .abs()
                        .max(((denom - m0) as f64 / denom as f64 - b * b).abs())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best > 1e-3, "denominator {denom} should not suffice");
        }
    }

    #[test]
    fn rational_approximation_guards() {
        assert!(matches!(
            rational_approximation(&[0.5, 0.75f64.sqrt()], 1e-10),
            Err(Error::Capacity(_))
        ));
        assert!(matches!(
            rational_approximation(&[0.9, 0.9], 1e-3),
            Err(Error::Normalization(_))
        ));
        assert!(matches!(
            rational_approximation(&[], 1e-3),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn weight_spec_validation() {
        assert!(RationalAmplitudeSpec::new(vec![1, 2], 3).is_ok());
        assert!(RationalAmplitudeSpec::new(vec![0, 3], 3).is_err());
        assert!(RationalAmplitudeSpec::new(vec![1, 1], 3).is_err());
        assert!(RationalAmplitudeSpec::new(vec![], 0).is_err());
    }
}
