use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cutmixed::assembly::GpVariant;
use cutmixed::harness::{
    error_csv, f_study_csv, rate_table, run_condition_sweep, run_dirichlet_convergence, run_equivalence_check, run_f_study,
    run_neumann_convergence, run_sparsity_study, sparsity_csv, sweep_csv, sweep_shifts, ExperimentConfig, Geometry, PpKind,
};
use cutmixed::systems::SourceMode;

#[derive(Parser)]
#[command(name = "cutmixed", version, about = "Unfitted mixed finite element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PpArg {
    None,
    Element,
    Patch,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Ring,
    Polygon,
}

#[derive(Clone, Copy, ValueEnum)]
enum GpArg {
    NormalJump,
    Direct,
}

impl From<GpArg> for GpVariant {
    fn from(g: GpArg) -> Self {
        match g {
            GpArg::NormalJump => GpVariant::NormalJump,
            GpArg::Direct => GpVariant::Direct,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Polynomial degree(s).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<usize>,
    /// Refinement levels, e.g. `0,1,2,3`.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    levels: Vec<usize>,
    /// Flux ghost penalty weight(s).
    #[arg(long = "gamma-u", value_delimiter = ',', default_value = "1")]
    gamma_u: Vec<f64>,
    #[arg(long, value_enum, default_value = "none")]
    pp: PpArg,
    #[arg(long, value_enum, default_value = "ring")]
    geometry: GeometryArg,
    /// Degree of the discrete source extension (defaults to k).
    #[arg(long)]
    kf: Option<usize>,
    /// Use the source itself on the active mesh.
    #[arg(long = "exact-f", conflicts_with = "kf")]
    exact_f: bool,
    /// Random vertex perturbation relative to the local edge length (0 keeps the structured meshes).
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Ghost penalty form.
    #[arg(long, value_enum, default_value = "direct")]
    gp: GpArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    ConvergeDirichlet(Common),
    ConvergeNeumann(Common),
    /// Source approximation study (all modes).
    FStudy(Common),
    /// Condition numbers while the ring centre moves along (1, 1).
    CondSweep {
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long = "gamma-u", value_delimiter = ',', default_value = "0,1")]
        gamma_u: Vec<f64>,
        #[arg(long, value_enum, default_value = "direct")]
        gp: GpArg,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 0.1)]
        to: f64,
        /// Number of intervals.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nonzeros per unknown on the periodic strip for the five stabilization variants.
    Sparsity {
        #[arg(long, default_value_t = 3)]
        kmax: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the main method with the divergence-stabilized variant.
    Equivalence {
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long = "gamma-u", default_value_t = 1.0)]
        gamma_u: f64,
        #[arg(long, value_enum, default_value = "ring")]
        geometry: GeometryArg,
        #[arg(long, value_enum, default_value = "direct")]
        gp: GpArg,
    },
}

fn geometry(g: GeometryArg) -> Geometry {
    match g {
        GeometryArg::Ring => Geometry::Ring,
        GeometryArg::Polygon => Geometry::Polygon,
    }
}

fn configs(c: &Common) -> Vec<ExperimentConfig> {
    let pp = match c.pp {
        PpArg::None => PpKind::None,
        PpArg::Element => PpKind::Element,
        PpArg::Patch => PpKind::Patch,
    };
    let mut out = Vec::new();
    for &k in &c.k {
        for &g in &c.gamma_u {
            let mut cfg = ExperimentConfig::new(k, c.levels.clone(), g, pp, geometry(c.geometry));
            cfg.source = match (c.exact_f, c.kf) {
                (true, _) => SourceMode::Exact,
                (false, Some(kf)) => SourceMode::Extended { kf, gamma_f: 1.0 },
                (false, None) => SourceMode::default(),
            };
            cfg.gp = c.gp.into();
            cfg.jitter = c.jitter;
            out.push(cfg);
        }
    }
    out
}

fn emit(csv: &str, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let err = |e: cutmixed::Error| e.to_string();
    match cli.command {
        Command::ConvergeDirichlet(c) => {
            let mut all = Vec::new();
            for cfg in configs(&c) {
                let recs = run_dirichlet_convergence(&cfg).map_err(err)?;
                eprintln!("k={} gamma_u={}\n{}", cfg.k, cfg.gamma_u, rate_table(&recs));
                all.extend(recs);
            }
            emit(&error_csv(&all), c.out.as_ref())
        }
        Command::ConvergeNeumann(c) => {
            let mut all = Vec::new();
            for mut cfg in configs(&c) {
                if cfg.pp == PpKind::None {
                    cfg.pp = PpKind::Patch;
                }
                let recs = run_neumann_convergence(&cfg).map_err(err)?;
                eprintln!("k={} gamma_u={}\n{}", cfg.k, cfg.gamma_u, rate_table(&recs));
                all.extend(recs);
            }
            emit(&error_csv(&all), c.out.as_ref())
        }
        Command::FStudy(c) => {
            let mut all = Vec::new();
            for cfg in configs(&c) {
                let recs = run_f_study(&cfg).map_err(err)?;
                all.extend(recs);
            }
            emit(&f_study_csv(&all), c.out.as_ref())
        }
        Command::CondSweep {
            k,
            gamma_u,
            gp,
            from,
            to,
            samples,
            out,
        } => {
            if samples == 0 || !(to >= from) {
                return Err("need a nonempty shift range".into());
            }
            let recs = run_condition_sweep(&sweep_shifts(from, to, samples), &gamma_u, k, gp.into()).map_err(err)?;
            emit(&sweep_csv(&recs), out.as_ref())
        }
        Command::Sparsity { kmax, out } => {
            let rows = run_sparsity_study(kmax).map_err(err)?;
            emit(&sparsity_csv(&rows), out.as_ref())
        }
        Command::Equivalence {
            k,
            level,
            gamma_u,
            geometry: g,
            gp,
        } => {
            let r = run_equivalence_check(geometry(g), level, k, gamma_u, gp.into()).map_err(err)?;
            println!("max relative u difference        {:.3e}", r.u_rel_diff);
            println!("max p difference away from cut   {:.3e}", r.p_far_diff);
            println!("max p difference near cut ({:>4}) {:.3e}", r.near_elements, r.p_near_diff);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
