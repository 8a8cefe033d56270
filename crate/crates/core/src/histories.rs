//! Chain operators, decoherence functionals, and consistency checks for
//! projector histories under a unitary evolution schedule.
//!
//! A history family assigns one projector family to each breakpoint
//! `t_1 < … < t_n` of a schedule starting at `t_0`. A history `α` picks one
//! outcome per breakpoint, and its chain operator is
//!
//! ```text
//! C_α = P_n^{α_n} · T(t_n, t_{n-1}) · … · P_1^{α_1} · T(t_1, t_0)
//! ```
//!
//! The decoherence functional is the Gram matrix of the branch vectors
//! `C_α|Φ⟩`; a family is consistent when its off-diagonal entries vanish,
//! and then the diagonal is a probability vector.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{Amplitude, LinearOperator, ProjectorFamily, StateVector};

/// Hard cap on the number of histories in one family (product of slot
/// outcome counts).
pub const HISTORY_COUNT_CAP: usize = 4096;

/// Tolerance applied to structural preconditions (unitarity of steps,
/// projector-family validity, state normalization).
pub const STRUCTURAL_TOL: f64 = 1e-12;

/// Breakpoint times `t_0 < t_1 < … < t_n` together with the unitary step
/// `steps[k] = T(t_{k+1}, t_k)` for each interval.
#[derive(Debug, Clone)]
pub struct EvolutionSchedule {
    times: Vec<f64>,
    steps: Vec<LinearOperator>,
}

impl EvolutionSchedule {
    /// Validates monotone times, matching counts (`steps.len() + 1 ==
    /// times.len()`), equal dimensions, and unitarity of every step.
    pub fn new(times: Vec<f64>, steps: Vec<LinearOperator>) -> Result<EvolutionSchedule> {
        if times.len() != steps.len() + 1 {
            return Err(Error::Shape(format!(
                "{} times require {} steps, got {}",
                times.len(),
                times.len().saturating_sub(1),
                steps.len()
            )));
        }
        if steps.is_empty() {
            return Err(Error::Shape("schedule needs at least one step".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(format!(
                    "breakpoint times must strictly increase, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let dim = steps[0].dim();
        for (k, s) in steps.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::Shape(format!(
                    "step {k} has dimension {} but step 0 has {dim}",
                    s.dim()
                )));
            }
            s.check_unitary(STRUCTURAL_TOL)?;
        }
        Ok(EvolutionSchedule { times, steps })
    }

    pub fn dim(&self) -> usize {
        self.steps[0].dim()
    }

    /// Number of breakpoints carrying projector slots (`t_1 … t_n`).
    pub fn slot_count(&self) -> usize {
        self.steps.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn step(&self, k: usize) -> &LinearOperator {
        &self.steps[k]
    }

    /// Full evolution `T(t_n, t_0) = steps[n-1] · … · steps[0]`.
    pub fn total_evolution(&self) -> LinearOperator {
        let mut acc = self.steps[0].clone();
        for s in &self.steps[1..] {
            acc = s.mul(&acc);
        }
        acc
    }
}

/// One projector family per schedule breakpoint `t_1 … t_n`.
#[derive(Debug, Clone)]
pub struct HistoryFamily {
    slots: Vec<ProjectorFamily>,
}

impl HistoryFamily {
    pub fn new(slots: Vec<ProjectorFamily>) -> Result<HistoryFamily> {
        if slots.is_empty() {
            return Err(Error::Shape("history family needs at least one slot".into()));
        }
        let dim = slots[0].dim();
        for (k, s) in slots.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::Shape(format!(
                    "slot {k} acts on dimension {} but slot 0 on {dim}",
                    s.dim()
                )));
            }
        }
        let count = slots.iter().try_fold(1usize, |acc, s| {
            acc.checked_mul(s.len())
                .filter(|&c| c <= HISTORY_COUNT_CAP)
                .ok_or_else(|| {
                    Error::Capacity(format!(
                        "history count exceeds cap {HISTORY_COUNT_CAP}"
                    ))
                })
        })?;
        debug_assert!(count >= 1);
        Ok(HistoryFamily { slots })
    }

    pub fn dim(&self) -> usize {
        self.slots[0].dim()
    }

    pub fn slots(&self) -> &[ProjectorFamily] {
        &self.slots
    }

    pub fn slot(&self, k: usize) -> &ProjectorFamily {
        &self.slots[k]
    }

    /// Total number of histories (product of slot outcome counts).
    pub fn history_count(&self) -> usize {
        self.slots.iter().map(|s| s.len()).product()
    }

    /// All history labels in deterministic order: the first slot varies
    /// slowest (row-major over slot outcome indices).
    pub fn labels(&self) -> Vec<HistoryLabel> {
        let mut out = Vec::with_capacity(self.history_count());
        let sizes: Vec<usize> = self.slots.iter().map(|s| s.len()).collect();
        let mut current = vec![0usize; sizes.len()];
        loop {
            out.push(HistoryLabel(current.clone()));
            // Odometer increment, last slot fastest.
            let mut pos = sizes.len();
            loop {
                if pos == 0 {
                    return out;
                }
                pos -= 1;
                current[pos] += 1;
                if current[pos] < sizes[pos] {
                    break;
                }
                current[pos] = 0;
            }
        }
    }

    fn check_compatible(&self, schedule: &EvolutionSchedule) -> Result<()> {
        if self.dim() != schedule.dim() {
            return Err(Error::Shape(format!(
                "family dimension {} does not match schedule dimension {}",
                self.dim(),
                schedule.dim()
            )));
        }
        if self.slots.len() != schedule.slot_count() {
            return Err(Error::Shape(format!(
                "{} projector slots for a schedule with {} breakpoints",
                self.slots.len(),
                schedule.slot_count()
            )));
        }
        for s in &self.slots {
            s.require_valid(STRUCTURAL_TOL)?;
        }
        Ok(())
    }
}

/// One outcome index per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HistoryLabel(pub Vec<usize>);

impl HistoryLabel {
    fn check(&self, family: &HistoryFamily) -> Result<()> {
        if self.0.len() != family.slots.len() {
            return Err(Error::Label(format!(
                "history label has {} entries for {} slots",
                self.0.len(),
                family.slots.len()
            )));
        }
        for (k, &a) in self.0.iter().enumerate() {
            if a >= family.slot(k).len() {
                return Err(Error::Label(format!(
                    "outcome {a} out of range for slot {k} with {} outcomes",
                    family.slot(k).len()
                )));
            }
        }
        Ok(())
    }
}

/// Chain operator `C_α` in the evolved (Schrödinger-style) form:
/// alternating steps and projectors, ending with the last projector.
pub fn chain_operator(
    family: &HistoryFamily,
    schedule: &EvolutionSchedule,
    label: &HistoryLabel,
) -> Result<LinearOperator> {
    family.check_compatible(schedule)?;
    label.check(family)?;
    let mut acc = schedule.step(0).clone();
    acc = family.slot(0).member(label.0[0]).mul(&acc);
    for k in 1..family.slots.len() {
        acc = schedule.step(k).mul(&acc);
        acc = family.slot(k).member(label.0[k]).mul(&acc);
    }
    Ok(acc)
}

/// Chain operator pulled back to the initial time: `T(t_0, t_n) · C_α`,
/// i.e. the product of Heisenberg-picture projectors
/// `P_1(t_1) ⋯ P_n(t_n)` read right-to-left in time order.
pub fn heisenberg_chain_operator(
    family: &HistoryFamily,
    schedule: &EvolutionSchedule,
    label: &HistoryLabel,
) -> Result<LinearOperator> {
    let c = chain_operator(family, schedule, label)?;
    Ok(schedule.total_evolution().dagger().mul(&c))
}

/// The decoherence functional of a history family, stored densely over all
/// history labels (zero-amplitude histories keep their zero rows/columns).
#[derive(Debug, Clone)]
pub struct DecoherenceMatrix {
    labels: Vec<HistoryLabel>,
    data: Array2<Amplitude>,
}

impl DecoherenceMatrix {
    pub fn labels(&self) -> &[HistoryLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Entry `D(α, α′) = ⟨Φ|C_{α′}† C_α|Φ⟩`, with `α` the row index.
    pub fn get(&self, alpha: usize, alpha_prime: usize) -> Amplitude {
        self.data[[alpha, alpha_prime]]
    }

    pub fn array(&self) -> &Array2<Amplitude> {
        &self.data
    }

    /// Max-abs deviation of `D` from its conjugate transpose.
    pub fn hermiticity_residual(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                worst = worst.max((self.data[[a, b]] - self.data[[b, a]].conj()).norm());
            }
        }
        worst
    }

    /// Sum of all entries; equals 1 for a complete family and normalized
    /// initial state, by the chain-sum identity.
    pub fn total_sum(&self) -> Amplitude {
        self.data.iter().sum()
    }

    /// Sum rows and columns over groups of history indices. Groups must be
    /// disjoint and cover every index. The result is the decoherence
    /// functional of the coarse-grained family, by bilinearity.
    pub fn coarse_grain(&self, groups: &[Vec<usize>]) -> Result<DecoherenceMatrix> {
        let n = self.len();
        let mut seen = vec![false; n];
        for g in groups {
            if g.is_empty() {
                return Err(Error::Label("empty coarse-graining group".into()));
            }
            for &i in g {
                if i >= n {
                    return Err(Error::Label(format!(
                        "history index {i} out of range for {n} histories"
                    )));
                }
                if seen[i] {
                    return Err(Error::Label(format!(
                        "history index {i} appears in more than one group"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Label(format!(
                "history index {missing} not covered by any group"
            )));
        }
        let m = groups.len();
        let mut data = Array2::<Amplitude>::zeros((m, m));
        for (gi, g) in groups.iter().enumerate() {
            for (hj, h) in groups.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for &a in g {
                    for &b in h {
                        acc += self.data[[a, b]];
                    }
                }
                data[[gi, hj]] = acc;
            }
        }
        // Coarse labels: the member list of each group, flattened into a
        // synthetic single-slot label for reporting.
        let labels = groups
            .iter()
            .map(|g| HistoryLabel(g.clone()))
            .collect();
        Ok(DecoherenceMatrix { labels, data })
    }
}

/// Compute the decoherence functional by evolving branch vectors: one pass
/// down the history tree applying steps and projectors, then a Gram matrix.
pub fn decoherence_functional(
    family: &HistoryFamily,
    schedule: &EvolutionSchedule,
    initial: &StateVector,
) -> Result<DecoherenceMatrix> {
    family.check_compatible(schedule)?;
    if initial.dim() != family.dim() {
        return Err(Error::Shape(format!(
            "initial state dimension {} does not match family dimension {}",
            initial.dim(),
            family.dim()
        )));
    }
    initial.check_normalized(STRUCTURAL_TOL)?;

    // Evolve the branch prefixes level by level; the tree has
    // Π_k |slot_k| leaves and the work is shared across prefixes.
    let mut prefixes: Vec<StateVector> = vec![initial.clone()];
    for k in 0..family.slots.len() {
        let slot = family.slot(k);
        let step = schedule.step(k);
        let mut next = Vec::with_capacity(prefixes.len() * slot.len());
        for p in &prefixes {
            let evolved = step.apply(p);
            for a in 0..slot.len() {
                next.push(slot.member(a).apply(&evolved));
            }
        }
        prefixes = next;
    }

    let labels = family.labels();
    debug_assert_eq!(labels.len(), prefixes.len());
    let n = prefixes.len();
    let mut data = Array2::<Amplitude>::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            // D(α, α′) = ⟨C_{α′}Φ | C_α Φ⟩.
            data[[a, b]] = prefixes[b].inner(&prefixes[a]);
        }
    }
    Ok(DecoherenceMatrix { labels, data })
}

/// Verdict of a consistency check on a decoherence functional.
#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub tol: f64,
    /// Largest `|D(α, α′)|` over `α ≠ α′`.
    pub max_offdiagonal: f64,
    /// Worst off-diagonal pair, if any.
    pub worst_pair: Option<(usize, usize)>,
    /// Real parts of the diagonal, the candidate probabilities.
    pub probabilities: Vec<f64>,
    /// `Σ_α D(α, α)` (real part).
    pub probability_sum: f64,
    /// Max-abs Hermiticity deviation of `D`.
    pub hermiticity: f64,
    pub consistent: bool,
}

/// Check medium decoherence: all off-diagonal entries of `D` vanish within
/// `tol`. When they do, the diagonal is reported as a probability vector.
pub fn consistency_check(d: &DecoherenceMatrix, tol: f64) -> ConsistencyReport {
    let n = d.len();
    let mut max_off = 0.0f64;
    let mut worst = None;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let mag = d.get(a, b).norm();
            if mag > max_off {
                max_off = mag;
                worst = Some((a, b));
            }
        }
    }
    let probabilities: Vec<f64> = (0..n).map(|a| d.get(a, a).re).collect();
    let probability_sum = probabilities.iter().sum();
    ConsistencyReport {
        tol,
        max_offdiagonal: max_off,
        worst_pair: worst,
        probabilities,
        probability_sum,
        hermiticity: d.hermiticity_residual(),
        consistent: max_off <= tol,
    }
}

/// Max-abs residual of the chain-sum identity `Σ_α C_α = T(t_n, t_0)`,
/// which holds exactly for complete slot families by telescoping.
pub fn chain_sum_check(family: &HistoryFamily, schedule: &EvolutionSchedule) -> Result<f64> {
    family.check_compatible(schedule)?;
    let dim = family.dim();
    let mut sum = LinearOperator::zeros(dim);
    for label in family.labels() {
        sum = sum.add(&chain_operator(family, schedule, &label)?);
    }
    Ok(sum.sub(&schedule.total_evolution()).max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::tensor_product;
    use ndarray::array;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> Amplitude {
        Amplitude::new(re, im)
    }

    fn hadamard() -> LinearOperator {
        LinearOperator::from_array(array![
            [c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)],
            [c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)]
        ])
        .unwrap()
    }

    fn cnot() -> LinearOperator {
        // Control = left (most significant) qubit.
        LinearOperator::permutation(&[0, 1, 3, 2]).unwrap()
    }

    /// Single measurement-style slot after a controlled flip: the
    /// decoherence functional is exactly diagonal with the squared
    /// amplitudes of the control state.
    #[test]
    fn recorded_outcomes_decohere_exactly() {
        let (a, b) = (0.6, 0.8);
        let initial = StateVector::from_amplitudes(vec![
            c(a, 0.0),
            c(0.0, 0.0),
            c(b, 0.0),
            c(0.0, 0.0),
        ]);
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0], vec![cnot()]).unwrap();
        // Project the control qubit: P^s = |s⟩⟨s| ⊗ 1.
        let p0 = ProjectorFamily::from_basis_sets(4, &[vec![0, 1], vec![2, 3]]).unwrap();
        let family = HistoryFamily::new(vec![p0]).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        assert!((d.get(0, 0) - c(a * a, 0.0)).norm() < 1e-15);
        assert!((d.get(1, 1) - c(b * b, 0.0)).norm() < 1e-15);
        assert!(d.get(0, 1).norm() < 1e-15);
        let report = consistency_check(&d, 1e-12);
        assert!(report.consistent);
        assert!((report.probability_sum - 1.0).abs() < 1e-14);
    }

    /// Two Hadamard steps with basis projections at both breakpoints: every
    /// history has probability 1/4, and interference makes the family
    /// inconsistent with off-diagonal magnitude exactly 1/4.
    #[test]
    fn double_rotation_family_is_inconsistent_at_one_quarter() {
        let schedule =
            EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![hadamard(), hadamard()]).unwrap();
        let slot = ProjectorFamily::complete_basis(2);
        let family = HistoryFamily::new(vec![slot.clone(), slot]).unwrap();
        let initial = StateVector::basis_state(2, 0).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        assert_eq!(d.len(), 4);
        for a in 0..4 {
            assert!((d.get(a, a).re - 0.25).abs() < 1e-15);
        }
        let report = consistency_check(&d, 1e-12);
        assert!(!report.consistent);
        assert!((report.max_offdiagonal - 0.25).abs() < 1e-15);
        // The chain-sum identity still forces all entries to add to one.
        assert!((d.total_sum() - c(1.0, 0.0)).norm() < 1e-14);
        assert!(d.hermiticity_residual() < 1e-15);
    }

    /// Brute-force oracle: build every chain operator as an explicit matrix
    /// product and form D directly, then compare against the tree evaluation.
    #[test]
    fn matches_explicit_chain_operator_construction() {
        let u1 = tensor_product(&hadamard(), &LinearOperator::identity(2)).unwrap();
        let u2 = cnot();
        let schedule = EvolutionSchedule::new(vec![0.0, 0.5, 1.25], vec![u1, u2]).unwrap();
        let slot1 = ProjectorFamily::from_basis_sets(4, &[vec![0, 1], vec![2, 3]]).unwrap();
        let slot2 = ProjectorFamily::complete_basis(4);
        let family = HistoryFamily::new(vec![slot1, slot2]).unwrap();
        let initial = StateVector::from_amplitudes(vec![
            c(0.5, 0.5),
            c(0.5, 0.0),
            c(0.0, -0.5),
            c(0.0, 0.0),
        ])
        .normalized()
        .unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();

        let labels = family.labels();
        for (ai, la) in labels.iter().enumerate() {
            for (bi, lb) in labels.iter().enumerate() {
                let ca = chain_operator(&family, &schedule, la).unwrap();
                let cb = chain_operator(&family, &schedule, lb).unwrap();
                let want = cb.apply(&initial).inner(&ca.apply(&initial));
                assert!(
                    (d.get(ai, bi) - want).norm() < 1e-13,
                    "mismatch at ({ai},{bi})"
                );
            }
        }
    }

    #[test]
    fn heisenberg_and_evolved_chains_give_same_functional() {
        let schedule =
            EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![hadamard(), hadamard()]).unwrap();
        let slot = ProjectorFamily::complete_basis(2);
        let family = HistoryFamily::new(vec![slot.clone(), slot]).unwrap();
        let initial = StateVector::basis_state(2, 0).unwrap();
        for la in family.labels() {
            for lb in family.labels() {
                let ca = chain_operator(&family, &schedule, &la).unwrap();
                let cb = chain_operator(&family, &schedule, &lb).unwrap();
                let ha = heisenberg_chain_operator(&family, &schedule, &la).unwrap();
                let hb = heisenberg_chain_operator(&family, &schedule, &lb).unwrap();
                // ⟨Φ|C′†C|Φ⟩ is invariant under the common unitary prefix.
                let d1 = cb.apply(&initial).inner(&ca.apply(&initial));
                let d2 = hb.apply(&initial).inner(&ha.apply(&initial));
                assert!((d1 - d2).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn chain_sum_identity_holds_to_machine_precision() {
        let u1 = tensor_product(&hadamard(), &hadamard()).unwrap();
        let u2 = cnot();
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![u1, u2]).unwrap();
        let slot1 = ProjectorFamily::from_basis_sets(4, &[vec![0, 3], vec![1, 2]]).unwrap();
        let slot2 = ProjectorFamily::complete_basis(4);
        let family = HistoryFamily::new(vec![slot1, slot2]).unwrap();
        let residual = chain_sum_check(&family, &schedule).unwrap();
        assert!(residual < 1e-14, "chain-sum residual {residual}");
    }

    #[test]
    fn coarse_graining_sums_blocks_and_preserves_total() {
        let schedule =
            EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![hadamard(), hadamard()]).unwrap();
        let slot = ProjectorFamily::complete_basis(2);
        let family = HistoryFamily::new(vec![slot.clone(), slot]).unwrap();
        let initial = StateVector::basis_state(2, 0).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();

        // Group by the *second* outcome: labels are ordered (s1, s2) with
        // s2 fastest, so indices {0,2} share s2=0 and {1,3} share s2=1.
        let coarse = d.coarse_grain(&[vec![0, 2], vec![1, 3]]).unwrap();
        assert_eq!(coarse.len(), 2);
        for g in 0..2 {
            for h in 0..2 {
                let mut want = c(0.0, 0.0);
                for &a in &[[0usize, 2], [1, 3]][g] {
                    for &b in &[[0usize, 2], [1, 3]][h] {
                        want += d.get(a, b);
                    }
                }
                assert!((coarse.get(g, h) - want).norm() < 1e-15);
            }
        }
        assert!((coarse.total_sum() - c(1.0, 0.0)).norm() < 1e-14);

        // Full coarse graining collapses to the single entry 1.
        let all = d.coarse_grain(&[vec![0, 1, 2, 3]]).unwrap();
        assert!((all.get(0, 0) - c(1.0, 0.0)).norm() < 1e-14);

        // Overlapping or incomplete groups are rejected.
        assert!(d.coarse_grain(&[vec![0, 1], vec![1, 2, 3]]).is_err());
        assert!(d.coarse_grain(&[vec![0, 1]]).is_err());
    }

    #[test]
    fn zero_amplitude_histories_keep_zero_rows() {
        // Initial state |0⟩, identity step: the s=1 outcome never occurs
        // but its row and column stay in the matrix.
        let schedule =
            EvolutionSchedule::new(vec![0.0, 1.0], vec![LinearOperator::identity(2)]).unwrap();
        let family = HistoryFamily::new(vec![ProjectorFamily::complete_basis(2)]).unwrap();
        let initial = StateVector::basis_state(2, 0).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.get(0, 0) - c(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(d.get(1, 1), c(0.0, 0.0));
        assert_eq!(d.get(0, 1), c(0.0, 0.0));
    }

    #[test]
    fn schedule_validation_rejects_bad_input() {
        // Non-monotone times.
        assert!(matches!(
            EvolutionSchedule::new(
                vec![0.0, 0.0],
                vec![LinearOperator::identity(2)]
            ),
            Err(Error::Domain(_))
        ));
        // Non-unitary step.
        let bad = LinearOperator::diagonal(&[c(2.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            EvolutionSchedule::new(vec![0.0, 1.0], vec![bad]),
            Err(Error::Precondition(_))
        ));
        // Count mismatch.
        assert!(matches!(
            EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![LinearOperator::identity(2)]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn history_count_cap_is_enforced() {
        let slot = ProjectorFamily::complete_basis(9);
        let slots = vec![slot.clone(), slot.clone(), slot.clone(), slot];
        assert!(matches!(
            HistoryFamily::new(slots),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn non_normalized_initial_state_is_rejected() {
        let schedule =
            EvolutionSchedule::new(vec![0.0, 1.0], vec![LinearOperator::identity(2)]).unwrap();
        let family = HistoryFamily::new(vec![ProjectorFamily::complete_basis(2)]).unwrap();
        let bad = StateVector::from_amplitudes(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            decoherence_functional(&family, &schedule, &bad),
            Err(Error::Normalization(_))
        ));
    }
}
