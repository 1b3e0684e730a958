//! Command-line front end. `run` returns the process exit code:
//! 0 on success, 2 for usage and file-format errors, 3 for numerical failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::optimizer::{multilevel_reconstruct, IterationRecord, OptimizerConfig, Preconditioner, Problem};
use crate::radon::{equally_spaced_angles, fbp, geometry_for_level, radon_forward, Sinogram};
use crate::regularizer::{RegConfig, RegKind};
use crate::solution_map::PdeKind;

use super::io::{decode_field, decode_sinogram, read_field, read_sinogram, write_field, write_pgm, write_sinogram, write_velocity};
use super::{add_noise, make_phantom, ssim, PhantomKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// `count@lo:hi` — `count` equally spaced angles in degrees from `[lo, hi]`, both ends included.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl AngleSpec {
    pub fn angles(&self) -> Vec<f64> {
        equally_spaced_angles(self.count, self.lo, self.hi)
    }
}

impl FromStr for AngleSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("angle spec '{s}' is not of the form count@lo:hi"));
        let (count, range) = s.split_once('@').ok_or_else(bad)?;
        let (lo, hi) = range.split_once(':').ok_or_else(bad)?;
        let count: usize = count.trim().parse().map_err(|_| bad())?;
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        if count == 0 {
            return Err(Error::InvalidInput("angle count must be positive".into()));
        }
        if !(0.0..=180.0).contains(&lo) || !(0.0..=180.0).contains(&hi) || lo > hi {
            return Err(Error::InvalidInput(format!("angle interval [{lo}, {hi}] must lie in [0, 180]")));
        }
        Ok(Self { count, lo, hi })
    }
}

#[derive(Debug, Parser)]
#[command(name = "tbir", version, about = "Template-based reconstruction from sparse tomographic data")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic template/target pair.
    Phantom {
        #[arg(long, default_value = "disk_pair")]
        kind: PhantomKind,
        #[arg(long, default_value_t = 128)]
        m: usize,
        #[arg(long, default_value = "template.tbir")]
        template: PathBuf,
        #[arg(long, default_value = "target.tbir")]
        target: PathBuf,
    },
    /// Project a field at its own level.
    Forward {
        input: PathBuf,
        #[arg(long)]
        angles: AngleSpec,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Add Gaussian noise scaled by the mean absolute sinogram value.
    Noise {
        input: PathBuf,
        #[arg(long)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Template-based reconstruction.
    Reconstruct(ReconstructArgs),
    /// Filtered back-projection onto the grid matching the sinogram level.
    Fbp {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print SSIM of `a` against the reference `b`.
    Ssim { a: PathBuf, b: PathBuf },
    /// 16-bit PGM of a field (middle slice for volumes) or of a sinogram.
    ExportPgm {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "continuity")]
    pde: PdeKind,
    #[arg(long, default_value = "ncc")]
    distance: DistanceKind,
    #[arg(long, default_value = "third-order")]
    reg: RegKind,
    /// Spatial weight; defaults depend on the regulariser.
    #[arg(long)]
    gamma_s: Option<f64>,
    #[arg(long, default_value_t = 1e2)]
    gamma_t: f64,
    #[arg(long, default_value_t = 1e-6)]
    gamma_0: f64,
    #[arg(long, default_value_t = 4)]
    kmin: u32,
    /// Defaults to the template level.
    #[arg(long)]
    kmax: Option<u32>,
    /// Runge-Kutta steps.
    #[arg(long, default_value_t = 5)]
    nt: usize,
    /// Velocity time cells.
    #[arg(long, default_value_t = 1)]
    mt: usize,
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    #[arg(long, default_value = "spectral")]
    preconditioner: Preconditioner,
    #[arg(short, long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.cmd) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("tbir: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::Domain(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom { kind, m, template, target } => {
            let (t, g) = make_phantom(kind, m)?;
            write_field(&template, &t)?;
            write_field(&target, &g)
        }
        Command::Forward { input, angles, out } => {
            let f = read_field(&input)?;
            let geom = geometry_for_level(&angles.angles(), f.grid().level())?;
            write_sinogram(&out, &radon_forward(&f, &geom))
        }
        Command::Noise { input, level, seed, out } => {
            let s = read_sinogram(&input)?;
            write_sinogram(&out, &add_noise(&s, level, seed)?)
        }
        Command::Reconstruct(args) => reconstruct(args),
        Command::Fbp { input, out } => {
            let s = read_sinogram(&input)?;
            let grid = grid_for(&s)?;
            write_field(&out, &fbp(&s, &grid)?)
        }
        Command::Ssim { a, b } => {
            let s = ssim(&read_field(&a)?, &read_field(&b)?)?;
            println!("{s:?}");
            Ok(())
        }
        Command::ExportPgm { input, out } => export_pgm(&input, &out),
    }
}

fn grid_for(s: &Sinogram) -> Result<GridSpec> {
    let m = 1usize << s.geometry().level();
    let dim = if s.slices() == 1 { 2 } else { 3 };
    if dim == 3 && s.slices() != m {
        return Err(Error::InvalidInput(format!("{} slices do not match {m} cells per axis", s.slices())));
    }
    GridSpec::new(dim, m)
}

fn export_pgm(input: &Path, out: &Path) -> Result<()> {
    let bytes = fs::read(input).map_err(|e| Error::Format {
        path: input.display().to_string(),
        offset: 0,
        reason: format!("cannot read: {e}"),
    })?;
    if bytes.starts_with(b"TBIR-S") {
        let s = decode_sinogram(input, &bytes)?;
        let (p, q) = (s.geometry().num_angles(), s.geometry().q());
        // angles along x, detector bins upwards
        let mut img = vec![0.0; p * q];
        for a in 0..p {
            for (j, &x) in s.row(0, a).iter().enumerate() {
                img[j * p + a] = x;
            }
        }
        return write_pgm(out, p, q, &img);
    }
    let f = decode_field(input, &bytes)?;
    let m = f.grid().m();
    let plane = m * m;
    let slice = if f.grid().dim() == 3 { m / 2 } else { 0 };
    write_pgm(out, m, m, &f.samples()[slice * plane..(slice + 1) * plane])
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let template = read_field(&a.template)?;
    let data = read_sinogram(&a.data)?;
    let grid = *template.grid();
    let kmax = a.kmax.unwrap_or(grid.level());
    let gamma_s = a.gamma_s.unwrap_or(a.reg.default_gamma());
    let reg = RegConfig::new(a.reg, gamma_s, a.gamma_t, a.gamma_0, grid, a.mt)?;
    let problem = Problem::new(a.pde, a.distance, template.clone(), data, reg, a.nt)?;
    let cfg = OptimizerConfig {
        max_gn_iters: a.max_iters,
        preconditioner: a.preconditioner,
        ..OptimizerConfig::default()
    };
    cfg.validate()?;
    let res = multilevel_reconstruct(&problem, &cfg, a.kmin, kmax)?;
    if res.field.samples().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("reconstruction contains non-finite values".into()));
    }

    fs::create_dir_all(&a.out)?;
    write_field(&a.out.join("result.tbir"), &res.field)?;
    write_velocity(&a.out.join("velocity.tbir"), &res.velocity)?;

    let mut log = String::from(IterationRecord::HEADER);
    log.push('\n');
    for r in &res.reports {
        for rec in &r.history {
            log.push_str(&rec.log_line());
            log.push('\n');
        }
    }
    fs::write(a.out.join("log.txt"), log)?;

    let last = res.reports.last().expect("at least one level").last();
    let gn_iters: usize = res.reports.iter().map(|r| r.history.len() - 1).sum();
    let pcg_iters: usize = res.reports.iter().flat_map(|r| &r.history).map(|h| h.pcg_iters).sum();
    let stops: Vec<String> = res.reports.iter().map(|r| r.stop.to_string()).collect();
    let mut summary = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(summary, "{k}={v}");
    };
    kv("pde", a.pde.to_string());
    kv("distance", a.distance.to_string());
    kv("reg", a.reg.to_string());
    kv("gamma_s", format!("{gamma_s:?}"));
    kv("gamma_t", format!("{:?}", a.gamma_t));
    kv("gamma_0", format!("{:?}", a.gamma_0));
    kv("dim", grid.dim().to_string());
    kv("m", grid.m().to_string());
    kv("k_min", a.kmin.to_string());
    kv("k_max", kmax.to_string());
    kv("n_t", a.nt.to_string());
    kv("m_t", a.mt.to_string());
    kv("preconditioner", a.preconditioner.to_string());
    kv("J", format!("{:?}", last.j));
    kv("D", format!("{:?}", last.d));
    kv("R", format!("{:?}", last.r));
    kv("grad_norm", format!("{:?}", last.grad_norm));
    kv("gn_iters", gn_iters.to_string());
    kv("pcg_iters", pcg_iters.to_string());
    kv("stop", stops.join(","));
    kv("mass_template", format!("{:?}", template.mass()));
    kv("mass_result", format!("{:?}", res.field.mass()));
    kv("max_velocity", format!("{:?}", res.velocity.max_abs()));
    fs::write(a.out.join("summary.txt"), summary)?;
    eprintln!("J={:.6e} D={:.6e} R={:.6e} stop={}", last.j, last.d, last.r, stops.join(","));
    Ok(())
}
