//! Randomized structural invariants: the algebraic identities every model
//! object must satisfy regardless of the particular numbers involved.

use conhist::branches::{branch_decompose, OutcomeFamily, Subsystem, SubsystemModel};
use conhist::envariance::{
    born_probabilities, fine_grain, phase_envariance_check, rational_approximation,
    CorrelatedState, PhaseSpec, RationalAmplitudeSpec, SectorSpec,
};
use conhist::fock::{FockModel, LegKind, VertexSpec};
use conhist::hilbert::{
    controlled_shift, operator_exponential, tensor_product, Amplitude, LinearOperator,
    ProjectorFamily, StateVector,
};
use conhist::histories::{
    chain_sum_check, consistency_check, decoherence_functional, EvolutionSchedule, HistoryFamily,
};
use conhist::propagators::{
    feynman_propagator, kernel_semigroup_residual, kernel_unitarity_residual, onshell_propagator,
    path_kernel, FrequencySign, LatticeSpec,
};
use ndarray::Array2;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> Amplitude {
    Amplitude::new(re, im)
}

/// Random dense complex square matrix with entries in the unit box.
fn matrix_strategy(dim: usize) -> impl Strategy<Value = LinearOperator> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim * dim).prop_map(move |entries| {
        let data = Array2::from_shape_vec(
            (dim, dim),
            entries.into_iter().map(|(re, im)| c(re, im)).collect(),
        )
        .expect("shape matches");
        LinearOperator::from_array(data).expect("square")
    })
}

/// Random Hermitian matrix (A + A†)/2.
fn hermitian_strategy(dim: usize) -> impl Strategy<Value = LinearOperator> {
    matrix_strategy(dim).prop_map(|a| a.add(&a.dagger()).scaled(c(0.5, 0.0)))
}

/// Random unitary exp(−iH) from a random Hermitian generator.
fn unitary_strategy(dim: usize) -> impl Strategy<Value = LinearOperator> {
    hermitian_strategy(dim).prop_map(|h| operator_exponential(&h.scaled(c(0.0, -1.0))))
}

/// Random unit state.
fn state_strategy(dim: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
        .prop_filter_map("needs nonzero norm", |entries| {
            let v = StateVector::from_amplitudes(
                entries.into_iter().map(|(re, im)| c(re, im)).collect(),
            );
            v.normalized().ok()
        })
}

/// Random partition of the basis indices 0..dim into non-empty groups.
fn partition_strategy(dim: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (Just((0..dim).collect::<Vec<usize>>()).prop_shuffle(), prop::collection::vec(1usize..=dim, dim))
        .prop_map(move |(order, cuts)| {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut rest = &order[..];
            let mut k = 0;
            while !rest.is_empty() {
                let take = cuts[k % cuts.len()].min(rest.len());
                groups.push(rest[..take].to_vec());
                rest = &rest[take..];
                k += 1;
            }
            groups
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn tensor_product_is_associative(
        a in matrix_strategy(2),
        b in matrix_strategy(2),
        d in matrix_strategy(3),
    ) {
        let left = tensor_product(&tensor_product(&a, &b).unwrap(), &d).unwrap();
        let right = tensor_product(&a, &tensor_product(&b, &d).unwrap()).unwrap();
        prop_assert!(left.sub(&right).max_abs() <= 1e-12);
    }

    #[test]
    fn exponential_of_antihermitian_is_unitary(h in hermitian_strategy(4)) {
        let u = operator_exponential(&h.scaled(c(0.0, -1.0)));
        prop_assert!(u.unitarity_residual() <= 1e-12);
        let inverse = operator_exponential(&h.scaled(c(0.0, 1.0)));
        let round = u.mul(&inverse);
        prop_assert!(round.sub(&LinearOperator::identity(4)).max_abs() <= 1e-12);
    }

    #[test]
    fn decoherence_functional_is_hermitian_with_real_diagonal(
        u1 in unitary_strategy(4),
        u2 in unitary_strategy(4),
        groups1 in partition_strategy(4),
        groups2 in partition_strategy(4),
        initial in state_strategy(4),
    ) {
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![u1, u2]).unwrap();
        let family = HistoryFamily::new(vec![
            ProjectorFamily::from_basis_sets(4, &groups1).unwrap(),
            ProjectorFamily::from_basis_sets(4, &groups2).unwrap(),
        ]).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        prop_assert!(d.hermiticity_residual() <= 1e-10);
        for i in 0..d.len() {
            let z = d.get(i, i);
            prop_assert!(z.im.abs() <= 1e-12);
            prop_assert!(z.re >= -1e-12);
        }
        // Total weight equals the (unit) initial norm whatever the family.
        prop_assert!((d.total_sum() - c(1.0, 0.0)).norm() <= 1e-10);
    }

    #[test]
    fn coarse_graining_sums_blocks_and_preserves_total(
        u in unitary_strategy(4),
        groups in partition_strategy(4),
        initial in state_strategy(4),
    ) {
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0], vec![u]).unwrap();
        let family = HistoryFamily::new(vec![
            ProjectorFamily::from_basis_sets(4, &groups).unwrap(),
        ]).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        let n = d.len();
        if n < 2 {
            return Ok(());
        }
        // Merge the first two histories, keep the rest singleton.
        let mut merged: Vec<Vec<usize>> = vec![vec![0, 1]];
        merged.extend((2..n).map(|k| vec![k]));
        let coarse = d.coarse_grain(&merged).unwrap();
        let expected = d.get(0, 0) + d.get(0, 1) + d.get(1, 0) + d.get(1, 1);
        prop_assert!((coarse.get(0, 0) - expected).norm() <= 1e-12);
        prop_assert!((coarse.total_sum() - d.total_sum()).norm() <= 1e-12);
    }

    #[test]
    fn chain_operators_sum_to_the_total_evolution(
        u1 in unitary_strategy(6),
        u2 in unitary_strategy(6),
        groups1 in partition_strategy(6),
        groups2 in partition_strategy(6),
    ) {
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0, 2.0], vec![u1, u2]).unwrap();
        let family = HistoryFamily::new(vec![
            ProjectorFamily::from_basis_sets(6, &groups1).unwrap(),
            ProjectorFamily::from_basis_sets(6, &groups2).unwrap(),
        ]).unwrap();
        prop_assert!(chain_sum_check(&family, &schedule).unwrap() <= 1e-10);
    }

    #[test]
    fn consistency_report_flags_match_the_matrix(
        u in unitary_strategy(4),
        groups in partition_strategy(4),
        initial in state_strategy(4),
    ) {
        let schedule = EvolutionSchedule::new(vec![0.0, 1.0], vec![u]).unwrap();
        let family = HistoryFamily::new(vec![
            ProjectorFamily::from_basis_sets(4, &groups).unwrap(),
        ]).unwrap();
        let d = decoherence_functional(&family, &schedule, &initial).unwrap();
        let report = consistency_check(&d, 1e-10);
        // One-slot families are exactly consistent: orthogonal projectors.
        prop_assert!(report.consistent, "{report:?}");
        prop_assert!((report.probability_sum - 1.0).abs() <= 1e-10);
        for p in &report.probabilities {
            prop_assert!(*p >= -1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn kernel_composition_is_a_semigroup(
        l1 in 0.05f64..0.8,
        l2 in 0.05f64..0.8,
    ) {
        let lattice = LatticeSpec::new(vec![8, 8], 0.5, 1.0, 1e-3).unwrap();
        prop_assert!(kernel_semigroup_residual(&lattice, l1, l2).unwrap() <= 1e-10);
        let k = path_kernel(&lattice, l1 + l2).unwrap();
        prop_assert!(kernel_unitarity_residual(&k) <= 1e-10);
    }

    #[test]
    fn feynman_table_is_even_and_onshell_parts_time_reverse(
        mass in 0.2f64..2.0,
    ) {
        let lattice = LatticeSpec::new(vec![6, 6], 0.5, mass, 1e-3).unwrap();
        let table = feynman_propagator(&lattice).unwrap();
        let plus = onshell_propagator(&lattice, FrequencySign::Positive).unwrap();
        let minus = onshell_propagator(&lattice, FrequencySign::Negative).unwrap();
        for dt in -2i64..=2 {
            for dx in -2i64..=2 {
                let here = table.get_displacement(&[dt, dx]).unwrap();
                let there = table.get_displacement(&[-dt, -dx]).unwrap();
                prop_assert!((here - there).norm() <= 1e-9, "evenness at ({dt},{dx})");
                let p = plus.get_displacement(&[dt, dx]).unwrap();
                let m = minus.get_displacement(&[-dt, dx]).unwrap();
                prop_assert!((p - m).norm() <= 1e-9, "time reversal at ({dt},{dx})");
            }
        }
    }

    #[test]
    fn vertex_special_adjoint_is_an_involution(
        coupling_re in -1.0f64..1.0,
        coupling_im in -1.0f64..1.0,
        leg_picks in prop::collection::vec((0usize..2, prop::bool::ANY), 1..4),
        primed in prop::bool::ANY,
    ) {
        let spec = VertexSpec {
            coupling: c(coupling_re, coupling_im),
            legs: leg_picks
                .into_iter()
                .map(|(ty, create)| (ty, if create { LegKind::Creation } else { LegKind::Annihilation }))
                .collect(),
            primed,
        };
        let twice = spec.special_adjoint().special_adjoint();
        prop_assert_eq!(format!("{spec:?}"), format!("{twice:?}"));
    }

    #[test]
    fn fock_dimension_matches_the_multiset_formula(
        types in 1usize..3,
        site_count in 1usize..3,
        n_max in 1u32..4,
    ) {
        let lattice = LatticeSpec::new(vec![4, 4], 0.5, 1.0, 1e-3).unwrap();
        let table = feynman_propagator(&lattice).unwrap();
        let sites: Vec<Vec<i64>> = (0..site_count).map(|s| vec![0, s as i64]).collect();
        let model = FockModel::new(types, sites, n_max, &table).unwrap();
        prop_assert_eq!(model.dim() as u128, model.dimension_formula());
    }
}

/// Ready-state-pinned measurement chain: the first family selects one basis
/// level of each system sector with the pointer at its ready level, and the
/// link copies the sector onto the pointer.
fn pointer_chain(dims: &[usize; 2]) -> (SubsystemModel, usize) {
    let dim = dims[0] * dims[1];
    // Label 0 (absence) carries the complement so the family is complete.
    let mut complement = LinearOperator::identity(dim);
    let mut in_projectors = Vec::with_capacity(dims[0] + 1);
    let mut out_sets: Vec<Vec<usize>> = vec![Vec::new(); dims[1]];
    for s in 0..dims[0] {
        let ready_index = s * dims[1];
        let basis = StateVector::basis_state(dim, ready_index).unwrap();
        let p = LinearOperator::outer(&basis, &basis);
        complement = complement.sub(&p);
        in_projectors.push(p);
        for p in 0..dims[1] {
            out_sets[p].push(s * dims[1] + p);
        }
    }
    in_projectors.insert(0, complement);
    let initial = OutcomeFamily::new(in_projectors).unwrap();
    let mut pointer_projectors = Vec::with_capacity(dims[1] + 1);
    for set in &out_sets {
        let entries: Vec<Amplitude> = (0..dim)
            .map(|i| c(if set.contains(&i) { 1.0 } else { 0.0 }, 0.0))
            .collect();
        pointer_projectors.push(LinearOperator::diagonal(&entries));
    }
    pointer_projectors.insert(0, LinearOperator::zeros(dim));
    let link = Subsystem {
        name: "pointer".into(),
        interaction: controlled_shift(dims, 0, 1).unwrap(),
        outcomes: OutcomeFamily::new(pointer_projectors).unwrap(),
    };
    let model = SubsystemModel::new(initial, vec![link], vec![None]).unwrap();
    (model, dim)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn branch_decomposition_is_orthonormal_and_complete(
        d0 in 2usize..4,
        d1 in 2usize..4,
        seed_entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 4),
    ) {
        let dims = [d0, d1.max(d0)];
        let (model, dim) = pointer_chain(&dims);
        // Initial support on the ready column only, normalized.
        let mut amps = vec![c(0.0, 0.0); dim];
        for (s, (re, im)) in (0..dims[0]).zip(seed_entries.iter().cycle()) {
            amps[s * dims[1]] = c(*re, *im);
        }
        let raw = StateVector::from_amplitudes(amps);
        prop_assume!(raw.norm() > 1e-6);
        let initial = raw.normalized().unwrap();

        let decomposition = branch_decompose(&model, &initial).unwrap();
        prop_assert!(decomposition.orthogonality_residual() <= 1e-10);
        prop_assert!((decomposition.amplitude_quadrature_sum() - 1.0).abs() <= 1e-9);
        prop_assert!(decomposition.reconstruction_residual(&model, &initial) <= 1e-10);
        for b in &decomposition.branches {
            // The copying link aligns sector and pointer labels.
            prop_assert_eq!(b.labels[0], b.labels[1]);
            prop_assert!(b.amplitude > 0.0);
        }
    }

    #[test]
    fn fine_graining_reconstructs_and_counts_probabilities(
        m in prop::collection::vec(1u64..6, 2..5),
        phase_seed in 0.0f64..6.28,
    ) {
        let total: u64 = m.iter().sum();
        let mut sectors = Vec::new();
        let mut offset = 0usize;
        for (alpha, &mult) in m.iter().enumerate() {
            let magnitude = ((mult as f64) / (total as f64)).sqrt();
            let phase = phase_seed * (alpha as f64 + 1.0);
            sectors.push(SectorSpec {
                system_indices: vec![alpha],
                env_indices: (offset..offset + mult as usize).collect(),
                amplitude: c(phase.cos(), phase.sin()) * magnitude,
            });
            offset += mult as usize;
        }
        let state = CorrelatedState::new(m.len(), total as usize, sectors).unwrap();
        let spec = RationalAmplitudeSpec::new(m.clone(), total).unwrap();
        let fine = fine_grain(&state, &spec).unwrap();
        prop_assert!(fine.refinement_residual() <= 1e-10);
        prop_assert!(fine.reconstruction_residual() <= 1e-10);
        prop_assert!(fine.orthogonality_residual() <= 1e-10);

        let probs = born_probabilities(&fine);
        let mut sum = num_rational::Ratio::new(0u64, 1u64);
        for ((label, p), &mult) in probs.iter().zip(m.iter()) {
            prop_assert_eq!(*p, num_rational::Ratio::new(mult, total), "sector {}", label);
            sum += *p;
        }
        prop_assert_eq!(sum, num_rational::Ratio::new(1u64, 1u64));

        let sigmas: Vec<f64> = (0..m.len()).map(|i| phase_seed * 0.3 + 0.1 * i as f64).collect();
        let ells: Vec<i64> = (0..m.len() as i64).collect();
        let residual = phase_envariance_check(&state, &PhaseSpec { sigmas, ells }).unwrap();
        prop_assert!(residual <= 1e-12);
    }

    #[test]
    fn rational_approximation_meets_its_tolerance(
        entries in prop::collection::vec(0.05f64..1.0, 2..6),
    ) {
        let norm: f64 = entries.iter().map(|v| v * v).sum::<f64>().sqrt();
        let amplitudes: Vec<f64> = entries.iter().map(|v| v / norm).collect();
        let spec = rational_approximation(&amplitudes, 1e-3).unwrap();
        let total: u64 = spec.m.iter().sum();
        prop_assert_eq!(total, spec.total);
        for (a, &mult) in amplitudes.iter().zip(spec.m.iter()) {
            let p = mult as f64 / total as f64;
            prop_assert!((p - a * a).abs() <= 1e-3, "p {} vs target {}", p, a * a);
        }
    }
}
