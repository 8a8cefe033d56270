//! The boxed-cat scenario as a five-subsystem measurement chain:
//! a radioactive sample R, a decay detector D, the cat C, the box lid B,
//! and an external environment E that can only record the cat's fate
//! while the box is open.
//!
//! Information flows R → D → C, then B is set by the experimenter's
//! intent (a constant of the configuration), and finally E records the
//! pair (B, C): nothing when the box is closed, the cat's state when it
//! is open. The decay unitary acts as state preparation and the R
//! alphabet lives on the in-state slot: the decay event is the primal
//! branching and has no upstream record to correlate with. Because E's
//! record depends on two slots at once, its correlation is verified by a
//! conditioned cross-term check (see [`CatModel::pair_record_residual`])
//! rather than a single-predecessor map.

use ndarray::Array2;

use crate::branches::{
    Branch, BranchDecomposition, OutcomeFamily, Subsystem, SubsystemModel, AMPLITUDE_PRUNE_TOL,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    embed_factor_operator, Amplitude, LinearOperator, StateVector, DEFAULT_DIM_CAP,
};

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// Outcome labels shared by the chain's slot families. Label 0 is always
/// the out-of-protocol complement.
pub const R_NO: usize = 1;
pub const R_YES: usize = 2;
pub const D_NO: usize = 1;
pub const D_YES: usize = 2;
pub const C_ALIVE: usize = 1;
pub const C_DEAD: usize = 2;
pub const B_OPEN: usize = 1;
pub const B_CLOSED: usize = 2;
pub const E_CLOSED: usize = 1;
pub const E_ALIVE: usize = 2;
pub const E_DEAD: usize = 3;

/// Basis levels backing the labels: every factor starts in level 0
/// (R no-decay, D no-click, C alive, B closed, E no-record).
const OPEN_LEVEL: usize = 1;

/// Configuration of the scenario.
#[derive(Debug, Clone)]
pub struct CatConfig {
    /// Decay amplitude ψ_yes with |ψ_yes| ≤ 1; the survival amplitude
    /// ψ_no = √(1 − |ψ_yes|²) is derived.
    pub decay_amplitude: Amplitude,
    /// The experimenter's intent, fixed before the experiment starts.
    pub box_opened: bool,
    /// Factor dimensions [R, D, C, B, E]; the first four need ≥ 2 levels
    /// and the environment ≥ 3.
    pub dims: [usize; 5],
}

impl Default for CatConfig {
    fn default() -> CatConfig {
        CatConfig {
            decay_amplitude: c(std::f64::consts::FRAC_1_SQRT_2, 0.0),
            box_opened: false,
            dims: [2, 2, 2, 2, 3],
        }
    }
}

impl CatConfig {
    /// The derived no-decay amplitude √(1 − |ψ_yes|²).
    pub fn survival_amplitude(&self) -> f64 {
        (1.0 - self.decay_amplitude.norm_sqr()).max(0.0).sqrt()
    }
}

/// The configured chain: an in-state slot carrying the R alphabet plus
/// the four interaction links D, C, B, E on the full product space.
#[derive(Debug, Clone)]
pub struct CatModel {
    config: CatConfig,
    model: SubsystemModel,
    /// The decay unitary G_R (preparation).
    preparation: LinearOperator,
    /// All-factors-ready product state.
    ready: StateVector,
}

fn digits(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (i, &d) in dims.iter().enumerate().rev() {
        out[i] = idx % d;
        idx /= d;
    }
    out
}

fn total_dim(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// Permutation acting on basis digits (left factor most significant).
fn digit_permutation(dims: &[usize], f: impl Fn(&mut [usize])) -> Result<LinearOperator> {
    let images: Vec<usize> = (0..total_dim(dims))
        .map(|i| {
            let mut g = digits(i, dims);
            f(&mut g);
            g.iter().zip(dims).fold(0, |acc, (&v, &d)| acc * d + v)
        })
        .collect();
    LinearOperator::permutation(&images)
}

/// Diagonal projector pinning the listed (slot, level) pairs.
fn pinned_projector(dims: &[usize], pins: &[(usize, usize)]) -> LinearOperator {
    let diag: Vec<Amplitude> = (0..total_dim(dims))
        .map(|i| {
            let g = digits(i, dims);
            if pins.iter().all(|&(slot, level)| g[slot] == level) {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
        .collect();
    LinearOperator::diagonal(&diag)
}

/// Outcome family at one slot: label k projects the slot onto
/// `levels[k−1]` while pinning the not-yet-visited factors to their ready
/// level; label 0 is the complement.
fn slot_family(
    dims: &[usize],
    slot: usize,
    levels: &[usize],
    ready_pins: &[usize],
) -> Result<OutcomeFamily> {
    let mut members = Vec::with_capacity(levels.len() + 1);
    let mut complement = LinearOperator::identity(total_dim(dims));
    for &level in levels {
        let mut pins: Vec<(usize, usize)> = vec![(slot, level)];
        pins.extend(ready_pins.iter().map(|&s| (s, 0)));
        let p = pinned_projector(dims, &pins);
        complement = complement.sub(&p);
        members.push(p);
    }
    let mut all = vec![complement];
    all.extend(members);
    OutcomeFamily::new(all)
}

/// Build the configured model. The decay unitary G_R becomes the
/// preparation map; G_D and G_C are controlled flips, G_B sets the lid
/// per intent, and G_E swaps the environment's no-record level with the
/// level matching the cat — but only behind an open lid.
pub fn build_cat(config: &CatConfig) -> Result<CatModel> {
    let dims = config.dims;
    if dims[0] < 2 || dims[1] < 2 || dims[2] < 2 || dims[3] < 2 {
        return Err(Error::Capacity(
            "sample, detector, cat and lid factors need at least two levels".into(),
        ));
    }
    if dims[4] < 3 {
        return Err(Error::Capacity(
            "environment needs at least three levels (no-record, alive, dead)".into(),
        ));
    }
    let dim = total_dim(&dims);
    if dim > DEFAULT_DIM_CAP {
        return Err(Error::Capacity(format!(
            "joint dimension {dim} exceeds cap {DEFAULT_DIM_CAP}"
        )));
    }
    let psi_yes = config.decay_amplitude;
    if psi_yes.norm() > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "|ψ_yes| = {} exceeds 1",
            psi_yes.norm()
        )));
    }
    let psi_no = config.survival_amplitude();

    // G_R: rotate |no⟩ into ψ_no|no⟩ + ψ_yes|yes⟩ on the sample's first
    // two levels, identity on any others.
    let mut block = Array2::eye(dims[0]).mapv(|v: f64| c(v, 0.0));
    block[[0, 0]] = c(psi_no, 0.0);
    block[[0, 1]] = -psi_yes.conj();
    block[[1, 0]] = psi_yes;
    block[[1, 1]] = c(psi_no, 0.0);
    let g_r = embed_factor_operator(&dims, 0, &LinearOperator::from_array(block)?)?;

    // Controlled flips: detector records the sample, cat follows the
    // detector.
    let flip_if = |control: usize, target: usize| {
        digit_permutation(&dims, move |g| {
            if g[control] == 1 && g[target] < 2 {
                g[target] = 1 - g[target];
            }
        })
    };
    let g_d = flip_if(0, 1)?;
    let g_c = flip_if(1, 2)?;

    // Lid per intent; the record swap acts only behind an open lid.
    let g_b = if config.box_opened {
        digit_permutation(&dims, |g| {
            if g[3] < 2 {
                g[3] = 1 - g[3];
            }
        })?
    } else {
        LinearOperator::identity(dim)
    };
    let g_e = digit_permutation(&dims, |g| {
        if g[3] == OPEN_LEVEL && g[2] < 2 {
            let record = 1 + g[2];
            if g[4] == 0 {
                g[4] = record;
            } else if g[4] == record {
                g[4] = 0;
            }
        }
    })?;

    let initial_family = slot_family(&dims, 0, &[0, 1], &[1, 2, 3, 4])?;
    let d_family = slot_family(&dims, 1, &[0, 1], &[2, 3, 4])?;
    let c_family = slot_family(&dims, 2, &[0, 1], &[3, 4])?;
    let b_family = slot_family(&dims, 3, &[OPEN_LEVEL, 0], &[4])?;
    let e_family = slot_family(&dims, 4, &[0, 1, 2], &[])?;

    let intent = if config.box_opened { B_OPEN } else { B_CLOSED };
    let model = SubsystemModel::new(
        initial_family,
        vec![
            Subsystem {
                name: "detector".into(),
                interaction: g_d,
                outcomes: d_family,
            },
            Subsystem {
                name: "cat".into(),
                interaction: g_c,
                outcomes: c_family,
            },
            Subsystem {
                name: "lid".into(),
                interaction: g_b,
                outcomes: b_family,
            },
            Subsystem {
                name: "environment".into(),
                interaction: g_e,
                outcomes: e_family,
            },
        ],
        vec![
            // Detector records the sample one-to-one; the cat follows the
            // detector. The lid is set by intent regardless of the cat,
            // and the environment's record depends on the (lid, cat) pair
            // — outside what a single-predecessor map can express, so it
            // is checked by pair_record_residual instead.
            Some(vec![0, D_NO, D_YES]),
            Some(vec![0, C_ALIVE, C_DEAD]),
            Some(vec![0, intent, intent]),
            None,
        ],
    )?;

    let ready = StateVector::basis_state(dim, 0)?;
    Ok(CatModel {
        config: config.clone(),
        model,
        preparation: g_r,
        ready,
    })
}

impl CatModel {
    pub fn config(&self) -> &CatConfig {
        &self.config
    }

    /// The chain model (links D, C, B, E; the in-state slot carries R).
    pub fn subsystem_model(&self) -> &SubsystemModel {
        &self.model
    }

    /// The decay unitary G_R.
    pub fn preparation(&self) -> &LinearOperator {
        &self.preparation
    }

    pub fn ready_state(&self) -> &StateVector {
        &self.ready
    }

    /// `G_R |ready⟩`: the state entering the chain.
    pub fn prepared_state(&self) -> StateVector {
        self.preparation.apply(&self.ready)
    }

    /// Max-abs entry of `[G_B, G_C G_D G_R]`. The lid acts on its own
    /// factor, so the commutator vanishes identically: the intent can be
    /// set before or after the interior runs.
    pub fn interior_commutator_residual(&self) -> f64 {
        let g_d = &self.model.subsystems()[0].interaction;
        let g_c = &self.model.subsystems()[1].interaction;
        let g_b = &self.model.subsystems()[2].interaction;
        let interior = g_c.mul(&g_d.mul(&self.preparation));
        g_b.commutator(&interior).max_abs()
    }

    /// Bare cat-factor projector `|c⟩⟨c|_C ⊗ 1` on the full space, for
    /// eigenstate assertions on finished branches (the slot family's
    /// projectors additionally pin not-yet-visited factors to their ready
    /// levels, which finished branches have left behind).
    pub fn cat_projector(&self, label: usize) -> Result<LinearOperator> {
        let level = match label {
            C_ALIVE => 0,
            C_DEAD => 1,
            _ => {
                return Err(Error::Label(format!(
                    "cat label {label} is neither alive ({C_ALIVE}) nor dead ({C_DEAD})"
                )))
            }
        };
        Ok(pinned_projector(&self.config.dims, &[(2, level)]))
    }

    /// Conditioned record check for the environment link: for every cat
    /// sector c and lid sector b, the cross term
    /// `P^e G_E P^b G_B P^c` must vanish unless e matches the pair map
    /// (closed lid → no record, open lid → record the cat). Returns the
    /// largest mismatched cross term.
    pub fn pair_record_residual(&self) -> Result<f64> {
        let c_family = self.model.family_at_slot(2);
        let b_family = self.model.family_at_slot(3);
        let e_family = self.model.family_at_slot(4);
        let g_b = &self.model.subsystems()[2].interaction;
        let g_e = &self.model.subsystems()[3].interaction;
        let mut worst = 0.0f64;
        for cat in [C_ALIVE, C_DEAD] {
            let staged = g_b.mul(c_family.projector(cat)?);
            for lid in [B_OPEN, B_CLOSED] {
                let flowed = g_e.mul(&b_family.projector(lid)?.mul(&staged));
                let expected = match (lid, cat) {
                    (B_CLOSED, _) => E_CLOSED,
                    (B_OPEN, C_ALIVE) => E_ALIVE,
                    (B_OPEN, C_DEAD) => E_DEAD,
                    _ => unreachable!(),
                };
                for e in [E_CLOSED, E_ALIVE, E_DEAD] {
                    if e != expected {
                        worst = worst.max(e_family.projector(e)?.mul(&flowed).max_abs());
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Interior chain on R⊗D⊗C alone: in-state slot R, links D and C. Both
/// links carry single-predecessor records, so the full decomposition
/// machinery (with its per-link correlation checks) applies.
pub fn interior_branches(model: &CatModel) -> Result<BranchDecomposition> {
    let dims = &model.config.dims[..3];
    let dim = total_dim(dims);
    let psi_yes = model.config.decay_amplitude;
    let psi_no = model.config.survival_amplitude();
    let mut block = Array2::eye(dims[0]).mapv(|v: f64| c(v, 0.0));
    block[[0, 0]] = c(psi_no, 0.0);
    block[[0, 1]] = -psi_yes.conj();
    block[[1, 0]] = psi_yes;
    block[[1, 1]] = c(psi_no, 0.0);
    let g_r = embed_factor_operator(dims, 0, &LinearOperator::from_array(block)?)?;
    let flip_if = |control: usize, target: usize| {
        digit_permutation(dims, move |g| {
            if g[control] == 1 && g[target] < 2 {
                g[target] = 1 - g[target];
            }
        })
    };
    let interior = SubsystemModel::new(
        slot_family(dims, 0, &[0, 1], &[1, 2])?,
        vec![
            Subsystem {
                name: "detector".into(),
                interaction: flip_if(0, 1)?,
                outcomes: slot_family(dims, 1, &[0, 1], &[2])?,
            },
            Subsystem {
                name: "cat".into(),
                interaction: flip_if(1, 2)?,
                outcomes: slot_family(dims, 2, &[0, 1], &[])?,
            },
        ],
        vec![Some(vec![0, D_NO, D_YES]), Some(vec![0, C_ALIVE, C_DEAD])],
    )?;
    let prepared = g_r.apply(&StateVector::basis_state(dim, 0)?);
    crate::branches::branch_decompose(&interior, &prepared)
}

/// Decompose the prepared state over all five slots by direct chain
/// evaluation (projection prefix tree, zero-amplitude prefixes pruned).
/// The per-link machinery is bypassed because the environment link's
/// record is conditioned on the pair (lid, cat); its correlation is
/// verified separately by [`CatModel::pair_record_residual`].
pub fn full_branches(model: &CatModel) -> Result<BranchDecomposition> {
    let m = &model.model;
    let mut frontier: Vec<(Vec<usize>, StateVector)> = Vec::new();
    let family0 = m.family_at_slot(0);
    let prepared = model.prepared_state();
    for l in 0..family0.len() {
        let v = family0.projector(l)?.apply(&prepared);
        if v.norm() > AMPLITUDE_PRUNE_TOL {
            frontier.push((vec![l], v));
        }
    }
    for s in m.subsystems() {
        let mut next = Vec::new();
        for (labels, v) in &frontier {
            let moved = s.interaction.apply(v);
            for l in 0..s.outcomes.len() {
                let w = s.outcomes.projector(l)?.apply(&moved);
                if w.norm() > AMPLITUDE_PRUNE_TOL {
                    let mut ls = labels.clone();
                    ls.push(l);
                    next.push((ls, w));
                }
            }
        }
        frontier = next;
    }
    let branches = frontier
        .into_iter()
        .map(|(labels, v)| {
            let amplitude = v.norm();
            Branch {
                labels,
                amplitude,
                state: v.scaled(c(1.0 / amplitude, 0.0)),
            }
        })
        .collect();
    Ok(BranchDecomposition { branches })
}

/// Comparison of an open-box run against a closed-box run of the same
/// decay configuration.
#[derive(Debug, Clone)]
pub struct BoxIrrelevanceReport {
    /// Worst `[G_B, G_C G_D G_R]` entry across the two models.
    pub commutator_residual: f64,
    /// Whether every closed-box branch carries the no-record environment
    /// label (and the closed lid label).
    pub closed_environment_fixed: bool,
    /// Largest closed-box branch component outside the environment's
    /// no-record level.
    pub closed_environment_residual: f64,
    /// Largest amplitude difference between open and closed branches
    /// matched by their interior (r, d, c) labels.
    pub amplitude_gap: f64,
    /// Worst conditioned record cross term across the two models.
    pub record_residual: f64,
}

/// Verify that the box makes no interior difference: the closed-box
/// environment stays on its no-record level in every branch, and opening
/// the box leaves every interior amplitude unchanged.
pub fn box_irrelevance_check(
    open: &CatModel,
    closed: &CatModel,
) -> Result<BoxIrrelevanceReport> {
    if !open.config.box_opened || closed.config.box_opened {
        return Err(Error::Precondition(
            "pass the open-box model first and the closed-box model second".into(),
        ));
    }
    if open.config.dims != closed.config.dims {
        return Err(Error::Precondition("models differ in dimensions".into()));
    }
    let amp_gap = (open.config.decay_amplitude - closed.config.decay_amplitude).norm();
    if amp_gap > 1e-15 {
        return Err(Error::Precondition(format!(
            "models differ in decay amplitude by {amp_gap:.3e}"
        )));
    }

    let open_branches = full_branches(open)?;
    let closed_branches = full_branches(closed)?;

    let mut fixed = true;
    let mut env_residual = 0.0f64;
    let dims = &closed.config.dims;
    for b in &closed_branches.branches {
        if b.labels[3] != B_CLOSED || b.labels[4] != E_CLOSED {
            fixed = false;
        }
        // Norm of the branch component outside the environment's
        // no-record level.
        let stray: f64 = (0..total_dim(dims))
            .filter(|&i| digits(i, dims)[4] != 0)
            .map(|i| b.state.get(i).norm_sqr())
            .sum();
        env_residual = env_residual.max(stray.sqrt());
    }

    let mut amplitude_gap = 0.0f64;
    for ob in &open_branches.branches {
        let interior = &ob.labels[..3];
        match closed_branches
            .branches
            .iter()
            .find(|cb| &cb.labels[..3] == interior)
        {
            Some(cb) => amplitude_gap = amplitude_gap.max((ob.amplitude - cb.amplitude).abs()),
            None => {
                return Err(Error::Correlation(format!(
                    "open-box branch {:?} has no closed-box partner",
                    ob.labels
                )))
            }
        }
    }
    if open_branches.branches.len() != closed_branches.branches.len() {
        return Err(Error::Correlation(format!(
            "open box yields {} branches, closed box {}",
            open_branches.branches.len(),
            closed_branches.branches.len()
        )));
    }

    Ok(BoxIrrelevanceReport {
        commutator_residual: open
            .interior_commutator_residual()
            .max(closed.interior_commutator_residual()),
        closed_environment_fixed: fixed,
        closed_environment_residual: env_residual,
        amplitude_gap,
        record_residual: open
            .pair_record_residual()?
            .max(closed.pair_record_residual()?),
    })
}
