//! Command-line front end: construct flow families, verify
//! omni-potentiality, build WKB patches, run transport reconstruction, and
//! tabulate the Hessian invariants. Every run echoes its resolved
//! configuration; exit codes are 0 (pass), 1 (defect found), 2 (bad
//! configuration or input).

use clap::{Args, Parser, Subcommand, ValueEnum};
use omniflow::flow::{
    verify_omnipotential, FlowPotential, SamplingSpec, TimePolynomial, VerificationReport,
};
use omniflow::grid::Box2;
use omniflow::mak::{
    self, displacement_divergence, generate_pair, mak_reconstruct, PointCloudPair, SolverMethod,
};
use omniflow::polynomials::{
    convexity_range_text, rat_from_string, ConvexityHint, HomogeneousPolynomial, PolySum, Rat,
};
use omniflow::symmat::{
    check_relations, eigenframe, gamma_from_frame, Gamma, InvariantSet, SymmetricMatrix,
};
use omniflow::wkb2d::{
    build_eikonal, gen2d_residual_study, transport_amplitudes, Branch, SeedCurve,
    TruncationOrder, WkbPotential,
};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "omniflow", version, about = "Omni-potential flow construction, verification, and transport reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a flow-spec JSON for one of the explicit families
    Construct(ConstructArgs),
    /// Run the omni-potentiality verification battery on a flow spec
    Verify(VerifyArgs),
    /// Build a 2-D WKB patch and assemble the augmented flow
    Wkb(WkbArgs),
    /// Reconstruct the Lagrangian map by quadratic-cost assignment
    Reconstruct(ReconstructArgs),
    /// Invariant table and relation report for a matrix or flow
    Invariants(InvariantsArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FamilyName {
    Zeldovich,
    ZeldovichType,
    Radial,
    P2Even,
    P2Odd,
    Pd46,
    P3_2n,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(long, value_enum)]
    family: FamilyName,
    /// Spatial dimension (radial, pd46)
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Family parameter ctilde, as a rational like "3" or "7/2"
    #[arg(long)]
    ctilde: Option<String>,
    /// Family parameters a and b (p2-even), rationals
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    /// Degree index k (p2-even: degree 2k; p2-odd: degree 2k+1)
    #[arg(long)]
    k: Option<u32>,
    /// Maximum half-degree n for the p3-2n tower (blocks n = 2..=n)
    #[arg(long)]
    n: Option<u32>,
    /// Odd-family coefficients
    #[arg(long)]
    c1: Option<String>,
    #[arg(long)]
    c2: Option<String>,
    /// Initial potential for zeldovich flows: builtin name or JSON path
    #[arg(long)]
    phi0: Option<String>,
    /// Time-polynomial coefficients for zeldovich-type mu(t), comma separated
    #[arg(long)]
    mu: Option<String>,
    /// Time-polynomial coefficients for zeldovich-type eta(t)
    #[arg(long)]
    eta: Option<String>,
    /// Time horizon
    #[arg(long, default_value_t = 0.2)]
    t_max: f64,
    /// Scale applied to the block coefficient functions
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct OutArgs {
    /// Write the primary JSON product here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the primary JSON product to stdout
    #[arg(long)]
    stdout: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Flow-spec JSON path
    #[arg(long)]
    flow: PathBuf,
    #[arg(long, default_value_t = 256)]
    points: usize,
    #[arg(long, default_value_t = 16)]
    time_pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Half-width of the sampling box (centered at the origin)
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Defect tolerance for the pass/fail exit code
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct WkbArgs {
    /// Initial potential: builtin name (q1q2, q1q2-cubic, radial4) or a
    /// polynomial JSON path
    #[arg(long)]
    phi0: String,
    #[arg(long, default_value_t = 50.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Grid nodes per axis
    #[arg(long, default_value_t = 129)]
    grid: usize,
    /// Patch half-width (box centered at the origin)
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Eikonal branch (gradient of S parallel to this branch)
    #[arg(long, value_enum, default_value_t = BranchArg::Upper)]
    branch: BranchArg,
    /// Truncation order: p0 keeps A0, p1 keeps A0 + A1/kappa
    #[arg(long, value_enum, default_value_t = OrderArg::P1)]
    order: OrderArg,
    /// Comma-separated kappa list for the residual order study
    #[arg(long)]
    kappa_sweep: Option<String>,
    /// Requested time horizon for the assembled flow
    #[arg(long, default_value_t = 0.2)]
    t_max: f64,
    /// Write the patch as CSV here
    #[arg(long)]
    out_patch: Option<PathBuf>,
    /// Write the assembled flow spec here
    #[arg(long)]
    out_flow: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BranchArg {
    Lower,
    Upper,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OrderArg {
    P0,
    P1,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Auction,
    Hungarian,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Flow-spec JSON to generate the pair from
    #[arg(long, conflicts_with_all = ["lagrangian", "eulerian"])]
    flow: Option<PathBuf>,
    /// Grid nodes per axis for the generated pair
    #[arg(long)]
    grid_n: Option<usize>,
    /// Evolution time for the generated pair
    #[arg(long)]
    t: Option<f64>,
    /// Half-width of the Lagrangian box
    #[arg(long, default_value_t = 1.0)]
    half_width: f64,
    /// Lagrangian point CSV (external data mode)
    #[arg(long, requires = "eulerian")]
    lagrangian: Option<PathBuf>,
    /// Eulerian point CSV (external data mode)
    #[arg(long, requires = "lagrangian")]
    eulerian: Option<PathBuf>,
    /// Ground-truth permutation file (one index per line)
    #[arg(long)]
    perm: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SolverArg::Auction)]
    solver: SolverArg,
    /// Write the per-node displacement-divergence CSV here
    #[arg(long)]
    divergence_csv: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct InvariantsArgs {
    /// Symmetric-matrix JSON {"dim": d, "upper": [...]}
    #[arg(long, conflicts_with = "flow")]
    matrix: Option<PathBuf>,
    /// Flow-spec JSON: tabulate invariants along a trajectory
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Lagrangian point, comma separated (flow mode)
    #[arg(long)]
    point: Option<String>,
    /// Sample times, comma separated (flow mode)
    #[arg(long)]
    times: Option<String>,
    /// Relation tolerance
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("OMNIFLOW_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Construct(args) => cmd_construct(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Wkb(args) => cmd_wkb(args),
        Command::Reconstruct(args) => cmd_reconstruct(args),
        Command::Invariants(args) => cmd_invariants(args),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

type CmdResult = Result<ExitCode, String>;

fn parse_rat(s: Option<&String>, default: i64, what: &str) -> Result<Rat, String> {
    match s {
        Some(text) => rat_from_string(text).map_err(|e| format!("{what}: {e}")),
        None => Ok(omniflow::polynomials::rat(default)),
    }
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{what}: {e}")))
        .collect()
}

fn load_phi0(spec: &str) -> Result<PolySum, String> {
    use num_traits::One;
    if Path::new(spec).exists() {
        let text = std::fs::read_to_string(spec).map_err(|e| e.to_string())?;
        // Accept either a PolySum or a single polynomial.
        if let Ok(sum) = serde_json::from_str::<PolySum>(&text) {
            return Ok(sum);
        }
        let poly: HomogeneousPolynomial =
            serde_json::from_str(&text).map_err(|e| format!("cannot parse {spec}: {e}"))?;
        return Ok(PolySum::single(poly));
    }
    match spec {
        "q1q2" => Ok(PolySum::single(HomogeneousPolynomial::monomial(2, &[1, 1], Rat::one()))),
        "q1q2-cubic" => PolySum::new(
            2,
            vec![
                HomogeneousPolynomial::monomial(2, &[1, 1], Rat::one()),
                HomogeneousPolynomial::monomial(2, &[3, 0], omniflow::polynomials::ratio(3, 10)),
            ],
        )
        .map_err(|e| e.to_string()),
        "radial4" => {
            let r2 = HomogeneousPolynomial::norm_squared(2);
            Ok(PolySum::single(r2.mul(&r2)))
        }
        other => Err(format!("unknown phi0 '{other}': not a file and not a builtin name")),
    }
}

fn emit(out: &OutArgs, value: &serde_json::Value) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    if let Some(path) = &out.out {
        std::fs::write(path, &text).map_err(|e| format!("writing {}: {e}", path.display()))?;
    }
    if out.stdout || out.out.is_none() {
        println!("{text}");
    }
    Ok(())
}

fn cmd_construct(args: ConstructArgs) -> CmdResult {
    let amp = args.amplitude;
    let (flow, convexity_note): (FlowPotential, String) = match args.family {
        FamilyName::Pd46 => {
            let c = parse_rat(args.ctilde.as_ref(), 3, "ctilde")?;
            let flow = FlowPotential::polydd(
                args.dim,
                &c,
                TimePolynomial::monomial(amp, 2),
                TimePolynomial::monomial(amp, 3),
                args.t_max,
            )
            .map_err(|e| e.to_string())?;
            (flow, convexity_range_text(&ConvexityHint::Pd46 { ctilde: c }))
        }
        FamilyName::P3_2n => {
            let c = parse_rat(args.ctilde.as_ref(), 3, "ctilde")?;
            let n_max = args.n.unwrap_or(4);
            if n_max < 2 {
                return Err("p3-2n needs --n >= 2".into());
            }
            let members: Vec<(u32, TimePolynomial)> =
                (2..=n_max).map(|n| (n, TimePolynomial::monomial(amp, n as usize))).collect();
            let flow =
                FlowPotential::xpoly(&c, members, args.t_max).map_err(|e| e.to_string())?;
            (flow, convexity_range_text(&ConvexityHint::P32n { n: n_max, ctilde: c }))
        }
        FamilyName::P2Even => {
            let k = args.k.unwrap_or(2);
            let a = parse_rat(args.a.as_ref(), 0, "a")?;
            let b = parse_rat(args.b.as_ref(), 0, "b")?;
            let fam = omniflow::polynomials::family_p2_even(k, a.clone(), b.clone())
                .map_err(|e| e.to_string())?;
            if fam.degenerate {
                return Err(format!(
                    "p2-even(k={k}) vanishes identically at these parameters; the two \
                     parameter-derivative solutions span the family there"
                ));
            }
            let flow = FlowPotential::exa2d(
                a.clone(),
                b.clone(),
                vec![(k, TimePolynomial::monomial(amp, 2))],
                args.t_max,
            )
            .map_err(|e| e.to_string())?;
            (flow, convexity_range_text(&ConvexityHint::P2Even { k, a, b }))
        }
        FamilyName::P2Odd => {
            let k = args.k.unwrap_or(2);
            let c1 = parse_rat(args.c1.as_ref(), 1, "c1")?;
            let c2 = parse_rat(args.c2.as_ref(), 0, "c2")?;
            let fam = omniflow::polynomials::family_p2_odd(k, c1, c2).map_err(|e| e.to_string())?;
            let block = omniflow::flow::FlowBlock {
                field: omniflow::flow::BlockField::Poly(fam.poly),
                mu: TimePolynomial::monomial(amp, 2),
            };
            let flow = FlowPotential::new(
                2,
                TimePolynomial::constant(1.0),
                vec![block],
                omniflow::flow::FlowKind::PolynomialFamily,
                args.t_max,
            )
            .map_err(|e| e.to_string())?;
            (flow, convexity_range_text(&ConvexityHint::P2Odd))
        }
        FamilyName::Radial => {
            let flow = FlowPotential::radial(
                args.dim,
                TimePolynomial::constant(1.0),
                vec![(2, TimePolynomial::monomial(amp, 1))],
                args.t_max,
            )
            .map_err(|e| e.to_string())?;
            (flow, "spherically symmetric; convex while the radial profile stays convex".into())
        }
        FamilyName::Zeldovich => {
            let phi0 = load_phi0(args.phi0.as_deref().ok_or("zeldovich needs --phi0")?)?;
            let flow = FlowPotential::zeldovich(&phi0, args.t_max).map_err(|e| e.to_string())?;
            (flow, "convex for t below the first shell-crossing of phi0".into())
        }
        FamilyName::ZeldovichType => {
            let phi0 = load_phi0(args.phi0.as_deref().ok_or("zeldovich-type needs --phi0")?)?;
            let mu = TimePolynomial::new(parse_f64_list(
                args.mu.as_deref().unwrap_or("1,0.3"),
                "mu",
            )?);
            let eta = TimePolynomial::new(parse_f64_list(
                args.eta.as_deref().unwrap_or("0,1"),
                "eta",
            )?);
            let flow = FlowPotential::zeldovich_type(&phi0, mu, eta, args.t_max)
                .map_err(|e| e.to_string())?;
            (flow, "convex for t below the first shell-crossing of the zoomed flow".into())
        }
    };

    println!("{convexity_note}");
    let value = json!({
        "config": {
            "subcommand": "construct",
            "t_max": args.t_max,
            "dim": flow.dim(),
        },
        "convexity": convexity_note,
        "flow": flow,
    });
    emit(&args.out, &value)?;
    Ok(ExitCode::SUCCESS)
}

fn load_flow(path: &Path) -> Result<FlowPotential, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?;
    // Accept both the bare flow spec and the construct output wrapper.
    if let Ok(flow) = serde_json::from_str::<FlowPotential>(&text) {
        return Ok(flow);
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    match value.get("flow") {
        Some(inner) => serde_json::from_value(inner.clone())
            .map_err(|e| format!("{}: {e}", path.display())),
        None => Err(format!("{}: not a flow spec", path.display())),
    }
}

fn verification_to_json(report: &VerificationReport) -> serde_json::Value {
    serde_json::to_value(report).expect("report serializes")
}

fn cmd_verify(args: VerifyArgs) -> CmdResult {
    let flow = load_flow(&args.flow)?;
    let spec = SamplingSpec {
        num_points: args.points,
        num_time_pairs: args.time_pairs,
        box_lo: vec![-args.half_width; flow.dim()],
        box_hi: vec![args.half_width; flow.dim()],
        t_max: flow.t_max,
        seed: args.seed,
    };
    let report = verify_omnipotential(&flow, &spec);
    let pass = report.passes(args.tol);
    let value = json!({
        "config": {
            "subcommand": "verify",
            "flow": args.flow.display().to_string(),
            "sampling": spec,
            "tol": args.tol,
        },
        "report": verification_to_json(&report),
        "pass": pass,
    });
    emit(&args.out, &value)?;
    if pass {
        println!("verify: pass (max defect {:.3e})", report.max_defect());
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "verify: FAIL (max defect {:.3e}, {} shell crossings)",
            report.max_defect(),
            report.shell_crossings.len()
        );
        Ok(ExitCode::from(1))
    }
}

fn cmd_wkb(args: WkbArgs) -> CmdResult {
    let phi0 = load_phi0(&args.phi0)?;
    let branch = match args.branch {
        BranchArg::Lower => Branch::Lower,
        BranchArg::Upper => Branch::Upper,
    };
    let order = match args.order {
        OrderArg::P0 => TruncationOrder::P0,
        OrderArg::P1 => TruncationOrder::P1,
    };
    let hw = args.half_width;
    let omega = Box2::new([-hw, -hw], [hw, hw]);
    let seed = SeedCurve::default_for(&phi0, branch, &omega).map_err(|e| e.to_string())?;
    let mut patch = build_eikonal(&phi0, seed, branch, omega, (args.grid, args.grid), None)
        .map_err(|e| e.to_string())?;
    transport_amplitudes(&mut patch).map_err(|e| e.to_string())?;

    let sweep = match &args.kappa_sweep {
        Some(list) => {
            let kappas = parse_f64_list(list, "kappa-sweep")?;
            let study = gen2d_residual_study(&patch, &kappas, order).map_err(|e| e.to_string())?;
            Some(json!({
                "kappas": study.kappas,
                "residuals": study.residuals,
                "slope_log2": study.slope_log2,
            }))
        }
        None => None,
    };

    let pot = WkbPotential {
        patch: patch.clone(),
        kappa: args.kappa,
        epsilon: args.epsilon,
        order,
        f: TimePolynomial::monomial(1.0, 2),
    };
    let (flow, assembly) = pot.assemble(args.t_max).map_err(|e| e.to_string())?;

    // Verify the assembled flow on the interior of the patch.
    let inner = 0.9 * hw;
    let spec = SamplingSpec {
        num_points: 128,
        num_time_pairs: 8,
        box_lo: vec![-inner, -inner],
        box_hi: vec![inner, inner],
        t_max: flow.t_max,
        seed: 0,
    };
    let verification = verify_omnipotential(&flow, &spec);

    if let Some(path) = &args.out_patch {
        std::fs::write(path, patch.export_csv()).map_err(|e| e.to_string())?;
    }
    if let Some(path) = &args.out_flow {
        let text = serde_json::to_string_pretty(&flow).map_err(|e| e.to_string())?;
        std::fs::write(path, text).map_err(|e| e.to_string())?;
    }
    let value = json!({
        "config": {
            "subcommand": "wkb",
            "phi0": args.phi0,
            "kappa": args.kappa,
            "epsilon": args.epsilon,
            "grid": args.grid,
            "half_width": hw,
            "order": match order { TruncationOrder::P0 => "p0", TruncationOrder::P1 => "p1" },
        },
        "eikonal_residual": patch.eikonal_residual,
        "gradient_alignment_defect": patch.gradient_alignment_defect(),
        "assembly": assembly,
        "kappa_sweep": sweep,
        "verification": verification_to_json(&verification),
    });
    emit(&args.out, &value)?;
    println!(
        "wkb: eikonal residual {:.3e}, gen2d residual {:.3e}, admissible T {}",
        patch.eikonal_residual, assembly.gen2d_residual, assembly.t_admissible
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_reconstruct(args: ReconstructArgs) -> CmdResult {
    let solver = match args.solver {
        SolverArg::Auction => SolverMethod::Auction,
        SolverArg::Hungarian => SolverMethod::Hungarian,
    };
    let (pair, source): (PointCloudPair, String) = match (&args.flow, &args.lagrangian) {
        (Some(flow_path), None) => {
            let flow = load_flow(flow_path)?;
            let d = flow.dim();
            let n = args.grid_n.unwrap_or(if d == 2 { 16 } else { 8 });
            let t = args.t.unwrap_or_else(|| flow.t_max.min(0.1));
            let hw = args.half_width;
            let pair = generate_pair(&flow, n, &vec![-hw; d], &vec![hw; d], t)
                .map_err(|e| e.to_string())?;
            (pair, format!("{} at t = {t}, {n}^{d} grid", flow_path.display()))
        }
        (None, Some(lag_path)) => {
            let lagrangian = mak::points_from_csv(
                &std::fs::read_to_string(lag_path).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let eul_path = args.eulerian.as_ref().expect("clap enforces the pairing");
            let eulerian = mak::points_from_csv(
                &std::fs::read_to_string(eul_path).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            let perm = match &args.perm {
                Some(p) => mak::permutation_from_text(
                    &std::fs::read_to_string(p).map_err(|e| e.to_string())?,
                ),
                None => None,
            };
            let pair =
                PointCloudPair::new(lagrangian, eulerian, perm).map_err(|e| e.to_string())?;
            (pair, format!("{} / {}", lag_path.display(), eul_path.display()))
        }
        _ => return Err("need either --flow or --lagrangian/--eulerian".into()),
    };

    let report = mak_reconstruct(&pair, solver).map_err(|e| e.to_string())?;

    if let Some(path) = &args.divergence_csv {
        let div = displacement_divergence(&pair, &report.permutation)
            .map_err(|e| e.to_string())?;
        let mut text = String::new();
        for (q, v) in pair.lagrangian.iter().zip(&div) {
            let row: Vec<String> = q.iter().map(|x| format!("{x:e}")).collect();
            text.push_str(&format!("{},{:e}\n", row.join(","), v));
        }
        std::fs::write(path, text).map_err(|e| e.to_string())?;
    }

    let value = json!({
        "config": {
            "subcommand": "reconstruct",
            "source": source,
            "solver": report.solver,
            "n": report.n,
        },
        "match_fraction": report.match_fraction,
        "total_cost": report.total_cost,
        "solver": report.solver,
        "epsilon_final": report.epsilon_final,
        "runtime_ms": report.runtime_ms,
    });
    emit(&args.out, &value)?;
    match report.match_fraction {
        Some(f) => {
            println!("reconstruct: match fraction {f}, cost {:.6e}", report.total_cost);
            if f == 1.0 {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        None => {
            println!("reconstruct: cost {:.6e} (no ground truth)", report.total_cost);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn gamma_json(g: Gamma) -> serde_json::Value {
    match g {
        Gamma::Value(v) => json!(v),
        Gamma::Pole => json!("pole"),
    }
}

fn cmd_invariants(args: InvariantsArgs) -> CmdResult {
    match (&args.matrix, &args.flow) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            let h: SymmetricMatrix = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let inv = InvariantSet::compute(&h);
            let table: Vec<serde_json::Value> = inv
                .values
                .iter()
                .map(|(&(k, m, n), &g)| json!({"k": k, "m": m, "n": n, "gamma": gamma_json(g)}))
                .collect();
            let relations = check_relations(&h, args.tol);
            // Poles make entries inconclusive, not failed; only an explicit
            // relation violation trips the exit code.
            let any_fail = relations
                .checks
                .iter()
                .any(|c| c.status == omniflow::symmat::RelationStatus::Fail);
            let value = json!({
                "config": {"subcommand": "invariants", "matrix": path.display().to_string(), "tol": args.tol},
                "invariants": table,
                "relations": relations,
                "all_pass": relations.all_pass(),
            });
            emit(&args.out, &value)?;
            Ok(if any_fail { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        (None, Some(path)) => {
            let flow = load_flow(path)?;
            let point = parse_f64_list(
                args.point.as_deref().ok_or("flow mode needs --point")?,
                "point",
            )?;
            if point.len() != flow.dim() {
                return Err(format!(
                    "point has dim {}, flow has dim {}",
                    point.len(),
                    flow.dim()
                ));
            }
            let times = parse_f64_list(
                args.times.as_deref().unwrap_or("0.05,0.1,0.15,0.2"),
                "times",
            )?;
            let mut rows = Vec::new();
            for &t in &times {
                let h = flow.hessian(&point, t);
                let frame = eigenframe(&h);
                let mut gammas = Vec::new();
                for k in 1..=flow.dim() {
                    let g = if frame.distinct {
                        gamma_from_frame(&frame, k, 2, 1).map_err(|e| e.to_string())?
                    } else {
                        Gamma::Pole
                    };
                    gammas.push(gamma_json(g));
                }
                rows.push(json!({"t": t, "gamma_21": gammas}));
            }
            let drift = omniflow::flow::g_invariant_along_trajectory(&flow, &point, &times);
            let value = json!({
                "config": {"subcommand": "invariants", "flow": path.display().to_string(),
                           "point": point, "times": times, "tol": args.tol},
                "table": rows,
                "drift": drift.drift,
            });
            emit(&args.out, &value)?;
            match drift.drift {
                Some(d) if d < args.tol => Ok(ExitCode::SUCCESS),
                Some(_) => Ok(ExitCode::from(1)),
                None => Ok(ExitCode::SUCCESS),
            }
        }
        _ => Err("need exactly one of --matrix or --flow".into()),
    }
}
