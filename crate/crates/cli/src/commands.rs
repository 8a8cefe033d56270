//! One runner per subcommand. Each runner builds its inputs (from a
//! scenario file or flags), drives the core checks, and assembles a
//! [`ReportDocument`]; the caller emits it and maps the outcome to the
//! exit-code contract (0 pass, 1 invariant failure, 2 parse/validation,
//! 3 numerical failure).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use conhist::branches::{
    basis_ambiguity_demo, branch_decompose, correlation_check, BranchDecomposition,
    OutcomeFamily, Subsystem, SubsystemModel, AMPLITUDE_PRUNE_TOL,
};
use conhist::cat::{
    box_irrelevance_check, build_cat, full_branches, interior_branches, CatConfig, CatModel,
    B_OPEN, C_ALIVE, C_DEAD, E_ALIVE, E_CLOSED, E_DEAD,
};
use conhist::envariance::{
    attach_ancilla, born_probabilities, envariance_swap_check, fine_grain,
    phase_envariance_check, CorrelatedState, PhaseSpec, RationalAmplitudeSpec, SectorSpec,
};
use conhist::fock::{
    factorization_check, interaction_operator, restricted_vertex, vertex_commutator_check,
    vertex_operator, FieldOperators, FockModel, HypervolumeMask, LegKind, VertexSpec,
    SPECIAL_SELF_ADJOINT_TOL,
};
use conhist::hilbert::{controlled_shift, Amplitude, LinearOperator};
use conhist::histories::{consistency_check, decoherence_functional};
use conhist::propagators::{
    contour_feynman_propagator, feynman_propagator, kernel_path_oracle, kernel_semigroup_residual,
    kernel_unitarity_residual, kg_residual, lambda_integrate_kernel, onshell_propagator,
    path_kernel, theta_decomposition_check, FrequencySign, LatticeSpec, LatticeTable,
    PathKernelConfig,
};
use conhist::Error as CoreError;

use crate::report::{digest, Cell, ReportDocument, Table, Verdict};
use crate::scenario::{parse_scenario, ParseError, ScenarioConfig};

/// A failed run: message for stderr plus the contract exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> CliError {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> CliError {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn numerical(e: &CoreError) -> bool {
    matches!(e, CoreError::Convergence(_) | CoreError::Infrared(_))
}

/// Core error while building inputs: a configuration problem.
fn setup(e: CoreError) -> CliError {
    CliError {
        code: if numerical(&e) { 3 } else { 2 },
        message: e.to_string(),
    }
}

/// Core error while running checks: an invariant (or numerical) failure.
fn check(e: CoreError) -> CliError {
    CliError {
        code: if numerical(&e) { 3 } else { 1 },
        message: e.to_string(),
    }
}

fn read_scenario(path: &Path) -> Result<(ScenarioConfig, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::validation(format!("cannot read scenario {}: {e}", path.display()))
    })?;
    let config = parse_scenario(&text)?;
    Ok((config, digest(text.as_bytes())))
}

fn fmt_labels(labels: &[usize]) -> String {
    labels
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

// ---------------------------------------------------------------------------
// histories check
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct HistoriesCheckArgs {
    /// Scenario with [spaces], [initial], and [step] sections.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Off-diagonal decoherence tolerance (default: scenario value or 1e-10).
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn histories_check(args: &HistoriesCheckArgs) -> Result<ReportDocument, CliError> {
    let (config, digest) = read_scenario(&args.scenario)?;
    let tol = args.tol.unwrap_or(config.tolerance("consistency", 1e-10));
    let (schedule, family) = config.history_model()?;
    let initial = config.initial_state()?;

    let d = decoherence_functional(&family, &schedule, &initial).map_err(check)?;
    let report = consistency_check(&d, tol);

    let mut out = ReportDocument::new("histories check", &digest);
    out.tolerance("consistency", tol);
    out.scalar("history_count", d.len() as f64);
    out.scalar("max_offdiagonal", report.max_offdiagonal);
    out.scalar("probability_sum", report.probability_sum);

    let mut matrix = Table {
        name: "decoherence".into(),
        columns: vec!["history".into(), "history_prime".into(), "re".into(), "im".into()],
        rows: Vec::new(),
    };
    for (i, a) in d.labels().iter().enumerate() {
        for (j, b) in d.labels().iter().enumerate() {
            let v = d.get(i, j);
            matrix.rows.push(vec![
                Cell::Text(fmt_labels(&a.0)),
                Cell::Text(fmt_labels(&b.0)),
                Cell::Real(v.re),
                Cell::Real(v.im),
            ]);
        }
    }
    out.table(matrix);

    let mut probs = Table {
        name: "probabilities".into(),
        columns: vec!["history".into(), "p".into()],
        rows: Vec::new(),
    };
    for (label, p) in d.labels().iter().zip(report.probabilities.iter()) {
        probs
            .rows
            .push(vec![Cell::Text(fmt_labels(&label.0)), Cell::Real(*p)]);
    }
    out.table(probs);

    out.verdict(Verdict::from_residual(
        "off-diagonal decoherence",
        report.max_offdiagonal,
        tol,
    ));
    out.verdict(Verdict::from_residual(
        "decoherence hermiticity",
        report.hermiticity,
        1e-12,
    ));
    out.verdict(Verdict::from_residual(
        "probability normalization",
        (report.probability_sum - 1.0).abs(),
        tol,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// propagator table
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableKind {
    /// Feynman two-point table from exact pole placement.
    Feynman,
    /// Positive-frequency on-shell part.
    OnshellPlus,
    /// Negative-frequency on-shell part.
    OnshellMinus,
    /// Feynman table from the displaced-contour frequency.
    Contour,
}

#[derive(Debug, clap::Args)]
pub struct PropagatorTableArgs {
    /// Lattice extents, time axis first.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub extents: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    /// Contour displacement ε.
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = TableKind::Feynman)]
    pub kind: TableKind,
    /// Field-equation residual tolerance (default 1e-10).
    #[arg(long)]
    pub tol: Option<f64>,
}

fn flag_digest(parts: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in parts {
        let _ = write!(s, "{k}={v};");
    }
    digest(s.as_bytes())
}

pub fn propagator_table(args: &PropagatorTableArgs) -> Result<ReportDocument, CliError> {
    let lattice = LatticeSpec::new(
        args.extents.clone(),
        args.spacing,
        args.mass,
        args.epsilon,
    )
    .map_err(setup)?;
    let tol = args.tol.unwrap_or(1e-10);
    let digest = flag_digest(&[
        ("command", "propagator table".into()),
        ("extents", format!("{:?}", args.extents)),
        ("spacing", format!("{:.16e}", args.spacing)),
        ("mass", format!("{:.16e}", args.mass)),
        ("epsilon", format!("{:.16e}", args.epsilon)),
        ("kind", format!("{:?}", args.kind)),
        ("tol", format!("{tol:.16e}")),
    ]);

    let table = match args.kind {
        TableKind::Feynman => feynman_propagator(&lattice),
        TableKind::OnshellPlus => onshell_propagator(&lattice, FrequencySign::Positive),
        TableKind::OnshellMinus => onshell_propagator(&lattice, FrequencySign::Negative),
        TableKind::Contour => contour_feynman_propagator(&lattice),
    }
    .map_err(check)?;

    let mut out = ReportDocument::new("propagator table", &digest);
    out.tolerance("field_equation", tol);
    out.scalar("origin_re", table.origin().re);
    out.scalar("origin_im", table.origin().im);
    out.table(lattice_rows(&table));

    if args.kind == TableKind::Feynman {
        let residual = kg_residual(&lattice, &table).map_err(check)?;
        out.verdict(Verdict::from_residual("field equation source", residual, tol));

        // Per-mode contour factor vs. the sharp-θ reference; the deviation
        // is O(ε·|t|), so the tolerance scales with ε.
        let theta_tol = 5.0 * args.epsilon;
        let spatial_axes = lattice.extents().len() - 1;
        let mut modes: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..spatial_axes {
            modes = modes
                .iter()
                .flat_map(|m| {
                    [0usize, 1].iter().map(move |&k| {
                        let mut next = m.clone();
                        next.push(k);
                        next
                    })
                })
                .collect();
        }
        let times = [-2.0, -0.5, 0.0, 0.5, 2.0];
        let theta = theta_decomposition_check(&lattice, &times, &modes).map_err(check)?;
        out.tolerance("theta_decomposition", theta_tol);
        out.scalar("theta_worst_time", theta.worst_time);
        out.scalar("theta_quadrature_error", theta.quadrature_error);
        out.verdict(Verdict::from_residual(
            "theta decomposition",
            theta.max_residual,
            theta_tol,
        ));
    }
    Ok(out)
}

fn lattice_rows(table: &LatticeTable) -> Table {
    const AXIS_NAMES: [&str; 4] = ["dt", "dx", "dy", "dz"];
    let d = table.extents().len();
    let mut columns: Vec<String> = AXIS_NAMES.iter().take(d).map(|s| s.to_string()).collect();
    columns.push("re".into());
    columns.push("im".into());
    let mut rows = Vec::with_capacity(table.len());
    for (coords, v) in table.signed_rows() {
        let mut row: Vec<Cell> = coords.iter().map(|&s| Cell::Int(s)).collect();
        row.push(Cell::Real(v.re));
        row.push(Cell::Real(v.im));
        rows.push(row);
    }
    Table {
        name: "propagator".into(),
        columns,
        rows,
    }
}

// ---------------------------------------------------------------------------
// kernel verify
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct KernelVerifyArgs {
    #[arg(long, value_delimiter = ',', default_value = "16,16")]
    pub extents: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    /// Kernel parameter for the slicing cross-check.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Slice counts for the convergence study.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub slices: Vec<usize>,
    /// Semigroup/unitarity tolerance (default 1e-10).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Required agreement at the finest slicing.
    #[arg(long, default_value_t = 1e-3)]
    pub oracle_tol: f64,
    /// Required agreement of the proper-time reassembly with the direct table.
    #[arg(long, default_value_t = 1e-8)]
    pub integration_tol: f64,
    /// Proper-time cutoff (default: sized so the damped tail is negligible).
    #[arg(long)]
    pub lambda_max: Option<f64>,
}

pub fn kernel_verify(args: &KernelVerifyArgs) -> Result<ReportDocument, CliError> {
    let lattice = LatticeSpec::new(
        args.extents.clone(),
        args.spacing,
        args.mass,
        args.epsilon,
    )
    .map_err(setup)?;
    if args.slices.is_empty() {
        return Err(CliError::validation("need at least one slice count"));
    }
    let tol = args.tol.unwrap_or(1e-10);
    let lambda_max = args
        .lambda_max
        .unwrap_or_else(|| (10.0 / args.integration_tol).ln() / args.epsilon);
    let digest = flag_digest(&[
        ("command", "kernel verify".into()),
        ("extents", format!("{:?}", args.extents)),
        ("spacing", format!("{:.16e}", args.spacing)),
        ("mass", format!("{:.16e}", args.mass)),
        ("epsilon", format!("{:.16e}", args.epsilon)),
        ("lambda", format!("{:.16e}", args.lambda)),
        ("slices", format!("{:?}", args.slices)),
        ("tol", format!("{tol:.16e}")),
        ("oracle_tol", format!("{:.16e}", args.oracle_tol)),
        ("integration_tol", format!("{:.16e}", args.integration_tol)),
        ("lambda_max", format!("{lambda_max:.16e}")),
    ]);

    let mut out = ReportDocument::new("kernel verify", &digest);
    out.tolerance("semigroup", tol);
    out.tolerance("unitarity", tol);
    out.tolerance("oracle_agreement", args.oracle_tol);
    out.tolerance("integration_agreement", args.integration_tol);

    let half = 0.5 * args.lambda;
    let semigroup = kernel_semigroup_residual(&lattice, half, args.lambda - half).map_err(check)?;
    out.verdict(Verdict::from_residual("kernel semigroup", semigroup, tol));

    let exact = path_kernel(&lattice, args.lambda).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "kernel unitarity",
        kernel_unitarity_residual(&exact),
        tol,
    ));

    // Independent time-sliced construction, refined over the slice counts.
    let mut errors = Vec::with_capacity(args.slices.len());
    let mut oracle_table = Table {
        name: "slicing".into(),
        columns: vec!["slices".into(), "max_error".into()],
        rows: Vec::new(),
    };
    for &n in &args.slices {
        let oracle = kernel_path_oracle(&lattice, args.lambda, n).map_err(check)?;
        let err = exact.max_abs_diff(&oracle).map_err(check)?;
        oracle_table
            .rows
            .push(vec![Cell::Int(n as i64), Cell::Real(err)]);
        errors.push(err);
    }
    out.table(oracle_table);
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    out.verdict(Verdict::from_flag("slicing error decreases", monotone));
    out.verdict(Verdict::from_residual(
        "slicing agreement at finest",
        *errors.last().expect("non-empty"),
        args.oracle_tol,
    ));

    // Proper-time reassembly of the Feynman table.
    let cfg = PathKernelConfig {
        lattice: lattice.clone(),
        lambda_max,
        lambda_panels: 0,
        tolerance: args.integration_tol,
    };
    let integral = lambda_integrate_kernel(&cfg).map_err(check)?;
    let direct = feynman_propagator(&lattice).map_err(check)?;
    let agreement = integral.table.max_abs_diff(&direct).map_err(check)?;
    out.scalar("mode_quadrature_residual", integral.mode_quadrature_residual);
    out.scalar("tail_bound", integral.tail_bound);
    out.verdict(Verdict::from_residual(
        "proper-time reassembly",
        agreement,
        args.integration_tol,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// fock verify
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct FockVerifyArgs {
    /// Scenario with [lattice] and [fock] sections (default: the stock
    /// 2-site, 2-type, occupancy-2 pair-vertex model).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Pseudo-unitarity tolerance (default 1e-9).
    #[arg(long)]
    pub tol: Option<f64>,
}

fn default_fock_setup() -> Result<(FieldOperators, VertexSpec, Vec<HypervolumeMask>), CliError> {
    let lattice = LatticeSpec::new(vec![8, 8], 0.5, 1.0, 1e-3).map_err(setup)?;
    let table = feynman_propagator(&lattice).map_err(setup)?;
    let model = FockModel::new(2, vec![vec![0, 0], vec![0, 1]], 2, &table).map_err(setup)?;
    let spec = VertexSpec {
        coupling: Amplitude::new(0.3, 0.0),
        legs: vec![(0, LegKind::Creation), (0, LegKind::Annihilation)],
        primed: true,
    };
    let masks = vec![
        HypervolumeMask::new(vec![0]).map_err(setup)?,
        HypervolumeMask::new(vec![1]).map_err(setup)?,
    ];
    Ok((FieldOperators::new(model), spec, masks))
}

pub fn fock_verify(args: &FockVerifyArgs) -> Result<ReportDocument, CliError> {
    let (fields, spec, masks, digest, default_config) = match &args.scenario {
        Some(path) => {
            let (config, digest) = read_scenario(path)?;
            let (fields, spec, masks) = config.fock_setup()?;
            (fields, spec, masks, digest, false)
        }
        None => {
            let (fields, spec, masks) = default_fock_setup()?;
            (fields, spec, masks, digest(b"fock verify default"), true)
        }
    };
    let tol = args.tol.unwrap_or(1e-9);
    let model = fields.model();
    let site_count = model.site_count();

    let mut out = ReportDocument::new("fock verify", &digest);
    out.tolerance("pseudo_unitarity", tol);
    out.tolerance("special_self_adjointness", SPECIAL_SELF_ADJOINT_TOL);
    out.scalar("dimension", model.dim() as f64);
    out.scalar("sites", site_count as f64);
    out.scalar("occupancy_cap", f64::from(model.n_max()));

    let full_mask = HypervolumeMask::new((0..site_count).collect()).map_err(setup)?;
    let vertex = restricted_vertex(&fields, &spec, &full_mask).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "special self-adjointness",
        vertex.special_self_adjointness_residual(),
        SPECIAL_SELF_ADJOINT_TOL,
    ));

    let interaction = interaction_operator(&vertex).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "pseudo-unitarity",
        interaction.pseudo_unitarity_residual(),
        tol,
    ));

    if site_count >= 2 {
        let comm = vertex_commutator_check(&fields, &spec, 0, 1).map_err(check)?;
        out.scalar("commutator_protected_columns", comm.protected_columns as f64);
        out.scalar("commutator_full_residual", comm.full_residual);
        out.verdict(Verdict::from_residual(
            "separated-vertex commutator (protected)",
            comm.protected_residual,
            1e-10,
        ));
    }
    if masks.len() >= 2 {
        let fact = factorization_check(&fields, &spec, &masks).map_err(check)?;
        out.scalar("factorization_protected_columns", fact.protected_columns as f64);
        out.scalar("factorization_full_residual", fact.full_residual);
        out.verdict(Verdict::from_residual(
            "hypervolume factorization (protected)",
            fact.protected_residual,
            1e-9,
        ));
        out.verdict(Verdict::from_residual(
            "ordering independence",
            fact.ordering_residual,
            1e-10,
        ));
    }

    // Vacuum behaviour of the two field flavours.
    let vacuum = model.vacuum();
    let sharp_spec = VertexSpec {
        primed: false,
        ..spec.clone()
    };
    let sharp_hit = vertex_operator(&fields, 0, &sharp_spec)
        .map_err(check)?
        .matrix
        .apply(&vacuum)
        .norm();
    let primed_hit = vertex_operator(&fields, 0, &spec)
        .map_err(check)?
        .matrix
        .apply(&vacuum)
        .norm();
    out.scalar("sharp_vertex_on_vacuum", sharp_hit);
    out.scalar("primed_vertex_on_vacuum", primed_hit);
    if default_config {
        out.verdict(Verdict::from_flag(
            "sharp vertex annihilates the vacuum",
            sharp_hit == 0.0,
        ));
        out.verdict(Verdict::from_flag(
            "primed vertex acts on the vacuum",
            primed_hit > 0.0,
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// branches decompose
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct BranchesDecomposeArgs {
    /// Scenario with [spaces], [initial], and [subsystem] sections.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Orthogonality/reconstruction tolerance (default: scenario or 1e-10).
    #[arg(long)]
    pub tol: Option<f64>,
}

pub fn branches_decompose(args: &BranchesDecomposeArgs) -> Result<ReportDocument, CliError> {
    let (config, digest) = read_scenario(&args.scenario)?;
    let model = config.subsystem_model()?;
    let initial = config.initial_state()?;
    let orth_tol = args
        .tol
        .unwrap_or(config.tolerance("orthogonality", 1e-10));
    let recon_tol = args
        .tol
        .unwrap_or(config.tolerance("reconstruction", 1e-10));

    let mut out = ReportDocument::new("branches decompose", &digest);
    out.tolerance("orthogonality", orth_tol);
    out.tolerance("reconstruction", recon_tol);

    let mut links = Table {
        name: "links".into(),
        columns: vec!["link".into(), "map".into(), "max_cross_term".into()],
        rows: Vec::new(),
    };
    for link in 1..=model.link_count() {
        let report = correlation_check(&model, link).map_err(check)?;
        links.rows.push(vec![
            Cell::Int(link as i64),
            Cell::Text(if report.supplied { "supplied" } else { "inferred" }.into()),
            Cell::Real(report.max_cross_term),
        ]);
    }
    out.table(links);

    let decomposition = branch_decompose(&model, &initial).map_err(check)?;
    out.table(branch_table(&decomposition));
    out.scalar("branch_count", decomposition.branches.len() as f64);
    out.verdict(Verdict::from_residual(
        "branch orthogonality",
        decomposition.orthogonality_residual(),
        orth_tol,
    ));
    out.verdict(Verdict::from_residual(
        "state reconstruction",
        decomposition.reconstruction_residual(&model, &initial),
        recon_tol,
    ));
    out.verdict(Verdict::from_residual(
        "amplitude normalization",
        (decomposition.amplitude_quadrature_sum() - 1.0).abs(),
        orth_tol,
    ));
    Ok(out)
}

fn branch_table(d: &BranchDecomposition) -> Table {
    let mut rows = Vec::with_capacity(d.branches.len());
    for b in &d.branches {
        rows.push(vec![
            Cell::Text(fmt_labels(&b.labels)),
            Cell::Real(b.amplitude),
            Cell::Real(b.amplitude * b.amplitude),
        ]);
    }
    Table {
        name: "branches".into(),
        columns: vec!["labels".into(), "amplitude".into(), "weight".into()],
        rows,
    }
}

// ---------------------------------------------------------------------------
// ambiguity demo
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct AmbiguityDemoArgs {
    /// Scenario with a two-subsystem chain and a [mixing] section
    /// (default: qubit-pointer chain with the swap mixing).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Operator-identity tolerance (default 1e-12).
    #[arg(long)]
    pub tol: Option<f64>,
}

fn default_ambiguity_model() -> Result<SubsystemModel, CliError> {
    let dims = [2usize, 2];
    let dim = 4;
    let set_family = |sets: &[Vec<usize>]| -> Result<OutcomeFamily, CliError> {
        let mut projectors = vec![LinearOperator::zeros(dim)];
        for set in sets {
            let entries: Vec<Amplitude> = (0..dim)
                .map(|i| Amplitude::new(if set.contains(&i) { 1.0 } else { 0.0 }, 0.0))
                .collect();
            projectors.push(LinearOperator::diagonal(&entries));
        }
        OutcomeFamily::new(projectors).map_err(setup)
    };
    let initial = set_family(&[vec![0, 1], vec![2, 3]])?;
    let apparatus = Subsystem {
        name: "A".into(),
        interaction: controlled_shift(&dims, 0, 1).map_err(setup)?,
        outcomes: set_family(&[vec![0, 2], vec![1, 3]])?,
    };
    SubsystemModel::new(initial, vec![apparatus], vec![None]).map_err(setup)
}

pub fn ambiguity_demo(args: &AmbiguityDemoArgs) -> Result<ReportDocument, CliError> {
    let tol = args.tol.unwrap_or(1e-12);
    let (model, mixing, digest) = match &args.scenario {
        Some(path) => {
            let (config, digest) = read_scenario(path)?;
            let model = config.subsystem_model()?;
            if model.link_count() != 1 {
                return Err(CliError::validation(format!(
                    "the ambiguity demonstration needs exactly one link, got {}",
                    model.link_count()
                )));
            }
            (model, config.mixing_matrix()?, digest)
        }
        None => {
            let mut mixing = ndarray::Array2::zeros((2, 2));
            mixing[[0, 1]] = Amplitude::new(1.0, 0.0);
            mixing[[1, 0]] = Amplitude::new(1.0, 0.0);
            (default_ambiguity_model()?, mixing, digest(b"ambiguity demo default"))
        }
    };

    let report = basis_ambiguity_demo(&model, &mixing).map_err(check)?;
    let mut out = ReportDocument::new("ambiguity demo", &digest);
    out.tolerance("identity", tol);
    out.scalar("identity_residual", report.identity_residual);
    out.scalar("record_cross_term", report.unprimed_record.max_cross_term);
    let mut details = Table {
        name: "record".into(),
        columns: vec!["families".into(), "outcome".into()],
        rows: vec![vec![
            Cell::Text("original".into()),
            Cell::Text("labels recorded".into()),
        ]],
    };
    details.rows.push(vec![
        Cell::Text("re-mixed".into()),
        Cell::Text(match &report.primed_violation {
            Some(msg) => msg.replace(',', ";"),
            None => "accepted".into(),
        }),
    ]);
    out.table(details);

    out.verdict(Verdict::from_residual(
        "matched chain sums equal",
        report.identity_residual,
        tol,
    ));
    out.verdict(Verdict::from_residual(
        "original labels recorded",
        report.unprimed_record.max_cross_term,
        report.unprimed_record.tol,
    ));
    out.verdict(Verdict::from_flag(
        "re-mixed families rejected by the record",
        report.ambiguity_broken,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// envariance check / born demo
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct EnvarianceCheckArgs {
    /// Sector multiplicities m_1,...,m_K (amplitudes √(m/M)).
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub m: Vec<u64>,
    /// Envariance residual tolerance (default 1e-12).
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Grid-correlated state with one system index per sector, env blocks of
/// the given multiplicities, and per-sector phases.
fn multiplicity_state(m: &[u64], phases: bool) -> Result<CorrelatedState, CliError> {
    if m.len() < 2 {
        return Err(CliError::validation(
            "need at least two sector multiplicities",
        ));
    }
    if m.iter().any(|&v| v == 0) {
        return Err(CliError::validation("multiplicities must be positive"));
    }
    let total: u64 = m.iter().sum();
    let mut sectors = Vec::with_capacity(m.len());
    let mut offset = 0usize;
    for (alpha, &mult) in m.iter().enumerate() {
        let magnitude = ((mult as f64) / (total as f64)).sqrt();
        let phase = if phases { 0.4 * alpha as f64 } else { 0.0 };
        sectors.push(SectorSpec {
            system_indices: vec![alpha],
            env_indices: (offset..offset + mult as usize).collect(),
            amplitude: Amplitude::new(phase.cos(), phase.sin()) * magnitude,
        });
        offset += mult as usize;
    }
    CorrelatedState::new(m.len(), total as usize, sectors).map_err(setup)
}

pub fn envariance_check(args: &EnvarianceCheckArgs) -> Result<ReportDocument, CliError> {
    let tol = args.tol.unwrap_or(1e-12);
    let state = multiplicity_state(&args.m, true)?;
    let m_str: Vec<String> = args.m.iter().map(u64::to_string).collect();
    let digest = flag_digest(&[
        ("command", "envariance check".into()),
        ("m", m_str.join(",")),
        ("tol", format!("{tol:.16e}")),
    ]);
    let total: u64 = args.m.iter().sum();

    let mut out = ReportDocument::new("envariance check", &digest);
    out.tolerance("envariance", tol);
    out.scalar("sectors", args.m.len() as f64);
    out.scalar("total_multiplicity", total as f64);

    let k = args.m.len();
    let phase_spec = PhaseSpec {
        sigmas: (0..k).map(|i| 0.3 + 0.2 * i as f64).collect(),
        ells: (0..k as i64).collect(),
    };
    let phase_residual = phase_envariance_check(&state, &phase_spec).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "phase envariance",
        phase_residual,
        tol,
    ));

    let equal_pair = (1..=k)
        .flat_map(|b| ((b + 1)..=k).map(move |g| (b, g)))
        .find(|&(b, g)| args.m[b - 1] == args.m[g - 1]);
    if let Some((beta, gamma)) = equal_pair {
        let swap_residual = envariance_swap_check(&state, beta, gamma).map_err(check)?;
        out.verdict(Verdict::from_residual(
            "swap envariance (equal magnitudes)",
            swap_residual,
            tol,
        ));
    }
    let unequal_pair = (1..=k)
        .flat_map(|b| ((b + 1)..=k).map(move |g| (b, g)))
        .find(|&(b, g)| args.m[b - 1] != args.m[g - 1]);
    if let Some((beta, gamma)) = unequal_pair {
        let rejected = matches!(
            envariance_swap_check(&state, beta, gamma),
            Err(CoreError::Precondition(_))
        );
        out.verdict(Verdict::from_flag(
            "unequal-magnitude swap rejected",
            rejected,
        ));
    }

    let spec = RationalAmplitudeSpec::new(args.m.clone(), total).map_err(setup)?;
    let fine = fine_grain(&state, &spec).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "fine-grain refinement",
        fine.refinement_residual(),
        tol,
    ));
    out.verdict(Verdict::from_residual(
        "fine-grain reconstruction",
        fine.reconstruction_residual(),
        tol,
    ));
    out.verdict(Verdict::from_residual(
        "fine-branch orthogonality",
        fine.orthogonality_residual(),
        tol,
    ));

    let extended = attach_ancilla(&fine, total as usize).map_err(check)?;
    out.verdict(Verdict::from_residual(
        "ancilla coefficients equal",
        extended.coefficient_residual(),
        tol,
    ));

    out.table(probability_table(&args.m, &fine));
    let exact = born_probabilities(&fine)
        .iter()
        .zip(args.m.iter())
        .all(|((_, p), &mult)| *p == num_rational::Ratio::new(mult, total));
    out.verdict(Verdict::from_flag("weights are multiplicity fractions", exact));
    Ok(out)
}

fn probability_table(
    m: &[u64],
    fine: &conhist::envariance::FineGrainedModel,
) -> Table {
    let mut rows = Vec::with_capacity(m.len());
    for ((label, p), &mult) in born_probabilities(fine).iter().zip(m.iter()) {
        rows.push(vec![
            Cell::Int(*label as i64),
            Cell::Int(mult as i64),
            Cell::Rational(*p.numer(), *p.denom()),
            Cell::Real(*p.numer() as f64 / *p.denom() as f64),
        ]);
    }
    Table {
        name: "probabilities".into(),
        columns: vec![
            "sector".into(),
            "multiplicity".into(),
            "p".into(),
            "weight".into(),
        ],
        rows,
    }
}

#[derive(Debug, clap::Args)]
pub struct BornDemoArgs {
    /// Sector multiplicities m_1,...,m_K; probabilities come out m/M.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub m: Vec<u64>,
}

pub fn born_demo(args: &BornDemoArgs) -> Result<ReportDocument, CliError> {
    let state = multiplicity_state(&args.m, false)?;
    let m_str: Vec<String> = args.m.iter().map(u64::to_string).collect();
    let digest = flag_digest(&[
        ("command", "born demo".into()),
        ("m", m_str.join(",")),
    ]);
    let total: u64 = args.m.iter().sum();
    let spec = RationalAmplitudeSpec::new(args.m.clone(), total).map_err(setup)?;
    let fine = fine_grain(&state, &spec).map_err(check)?;
    let probs = born_probabilities(&fine);

    let mut out = ReportDocument::new("born demo", &digest);
    out.scalar("fine_branches", total as f64);
    out.table(probability_table(&args.m, &fine));

    let sum: num_rational::Ratio<u64> = probs.iter().map(|(_, p)| *p).sum();
    out.verdict(Verdict::from_flag(
        "probabilities sum to one",
        sum == num_rational::Ratio::new(1, 1),
    ));
    let exact = probs
        .iter()
        .zip(args.m.iter())
        .all(|((_, p), &mult)| *p == num_rational::Ratio::new(mult, total));
    out.verdict(Verdict::from_flag("weights are multiplicity fractions", exact));
    let squared = fine
        .source()
        .state()
        .norm();
    out.scalar("source_norm", squared);
    Ok(out)
}

// ---------------------------------------------------------------------------
// cat run
// ---------------------------------------------------------------------------

#[derive(Debug, clap::Args)]
pub struct CatRunArgs {
    /// Decay probability |ψ_yes|².
    #[arg(long, default_value_t = 0.5)]
    pub p_yes: f64,
    /// Keep the box closed (the default).
    #[arg(long, conflicts_with = "open")]
    pub closed: bool,
    /// Open the box, letting the environment record the cat.
    #[arg(long)]
    pub open: bool,
    /// Residual tolerance (default 1e-12).
    #[arg(long)]
    pub tol: Option<f64>,
}

fn cat_model(p_yes: f64, opened: bool) -> Result<CatModel, CliError> {
    let config = CatConfig {
        decay_amplitude: Amplitude::new(p_yes.sqrt(), 0.0),
        box_opened: opened,
        ..CatConfig::default()
    };
    build_cat(&config).map_err(setup)
}

pub fn cat_run(args: &CatRunArgs) -> Result<ReportDocument, CliError> {
    if !(0.0..=1.0).contains(&args.p_yes) {
        return Err(CliError::validation(format!(
            "--p-yes must lie in [0, 1], got {}",
            args.p_yes
        )));
    }
    let opened = args.open;
    let tol = args.tol.unwrap_or(1e-12);
    let digest = flag_digest(&[
        ("command", "cat run".into()),
        ("p_yes", format!("{:.16e}", args.p_yes)),
        ("intent", if opened { "open" } else { "closed" }.into()),
        ("tol", format!("{tol:.16e}")),
    ]);

    let open_model = cat_model(args.p_yes, true)?;
    let closed_model = cat_model(args.p_yes, false)?;
    let model = if opened { &open_model } else { &closed_model };

    let full = full_branches(model).map_err(check)?;
    let interior = interior_branches(model).map_err(check)?;

    let mut out = ReportDocument::new("cat run", &digest);
    out.tolerance("residual", tol);
    out.scalar("p_yes", args.p_yes);
    out.scalar("p_survive", 1.0 - args.p_yes);
    out.scalar("branch_count", full.branches.len() as f64);

    let cat_name = |c: usize| match c {
        C_ALIVE => "alive",
        C_DEAD => "dead",
        _ => "none",
    };
    let mut table = Table {
        name: "branches".into(),
        columns: vec![
            "r".into(),
            "d".into(),
            "cat".into(),
            "lid".into(),
            "record".into(),
            "amplitude".into(),
            "weight".into(),
        ],
        rows: Vec::new(),
    };
    for b in &full.branches {
        table.rows.push(vec![
            Cell::Int(b.labels[0] as i64),
            Cell::Int(b.labels[1] as i64),
            Cell::Text(cat_name(b.labels[2]).into()),
            Cell::Text(if b.labels[3] == B_OPEN { "open" } else { "closed" }.into()),
            Cell::Text(
                match b.labels[4] {
                    E_CLOSED => "none",
                    E_ALIVE => "alive",
                    E_DEAD => "dead",
                    _ => "?",
                }
                .into(),
            ),
            Cell::Real(b.amplitude),
            Cell::Real(b.amplitude * b.amplitude),
        ]);
    }
    out.table(table);

    let expected = usize::from(args.p_yes.sqrt() > AMPLITUDE_PRUNE_TOL)
        + usize::from((1.0 - args.p_yes).sqrt() > AMPLITUDE_PRUNE_TOL);
    out.verdict(Verdict::from_flag(
        "one branch per live decay outcome",
        full.branches.len() == expected,
    ));

    if opened {
        let correlated = full.branches.iter().all(|b| {
            (b.labels[2] == C_ALIVE && b.labels[4] == E_ALIVE)
                || (b.labels[2] == C_DEAD && b.labels[4] == E_DEAD)
        });
        out.verdict(Verdict::from_flag(
            "environment records the cat outcome",
            correlated,
        ));
    } else {
        let uniform = full.branches.iter().all(|b| b.labels[4] == E_CLOSED);
        out.verdict(Verdict::from_flag(
            "environment shows no record",
            uniform,
        ));
    }

    // Interior (R, D, C) chain reproduces the full amplitudes.
    let mut amplitude_gap = 0.0f64;
    for b in &full.branches {
        let partner = interior.find(&b.labels[..3]);
        amplitude_gap = amplitude_gap.max(match partner {
            Some(p) => (p.amplitude - b.amplitude).abs(),
            None => f64::INFINITY,
        });
    }
    out.verdict(Verdict::from_residual(
        "amplitudes match the interior chain",
        amplitude_gap,
        tol,
    ));

    let mut eigen_gap = 0.0f64;
    for b in &full.branches {
        let p = model.cat_projector(b.labels[2]).map_err(check)?;
        eigen_gap = eigen_gap.max(p.apply(&b.state).sub(&b.state).norm());
    }
    out.verdict(Verdict::from_residual(
        "branches are cat eigenstates",
        eigen_gap,
        tol,
    ));

    out.verdict(Verdict::from_residual(
        "paired record conditioning",
        model.pair_record_residual().map_err(check)?,
        tol,
    ));
    out.verdict(Verdict::from_residual(
        "interior-lid commutator",
        model.interior_commutator_residual(),
        1e-15,
    ));

    let irrelevance = box_irrelevance_check(&open_model, &closed_model).map_err(check)?;
    out.scalar("box_commutator_residual", irrelevance.commutator_residual);
    out.scalar("closed_environment_residual", irrelevance.closed_environment_residual);
    out.scalar("pair_record_residual", irrelevance.record_residual);
    out.verdict(Verdict::from_flag(
        "closed box leaves the environment ready",
        irrelevance.closed_environment_fixed,
    ));
    out.verdict(Verdict::from_residual(
        "open/closed amplitude agreement",
        irrelevance.amplitude_gap,
        tol,
    ));
    Ok(out)
}
