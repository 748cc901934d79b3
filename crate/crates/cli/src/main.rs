mod config;
mod output;

use std::f64::consts::PI;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use halfsphere_core::foliation::{self, FoliationError, FoliationOutcome, LeafFamily};
use halfsphere_core::graph::{self, Verdict};
use halfsphere_core::linearized::{self, LinearizedProblem};
use halfsphere_core::quadrature::{self, rational_parts, recover_coefficients};
use halfsphere_core::variational::{self, decompose, ProbeTerms, PROBES};
use halfsphere_core::expr::rational;
use halfsphere_core::{Case, CoefficientVector};

use config::{positive, Config, GridSpec};
use output::{json_value, Cell, Format, Table};

#[derive(Parser)]
#[command(name = "halfsphere", version, about = "Half-sphere foliation criteria, expansion coefficients and leaf simulations")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `key = value` file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Quadrature grid, polar x azimuthal nodes.
    #[arg(long, global = true)]
    grid: Option<GridSpec>,
    /// Rational-recovery tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for the random coverage points of `foliate` (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the table here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Exact hemisphere (or equator) monomial integrals.
    Moments {
        #[arg(long)]
        max_degree: Option<u32>,
        /// Integrals over the equator circle instead of the hemisphere.
        #[arg(long)]
        boundary: bool,
        /// Keep the moments that vanish by symmetry.
        #[arg(long)]
        include_zero: bool,
    },
    /// Critical point, curvature data and foliation verdict of a graph surface.
    Analyze {
        surface: PathBuf,
        #[arg(long)]
        case: Option<Case>,
        /// Newton starting point `x,y`.
        #[arg(long, value_delimiter = ',', num_args = 2)]
        guess: Option<Vec<f64>>,
    },
    /// The example family u = a(x+y) + xy − c(x³+y³) over a list of `a`.
    Gallery {
        #[arg(long, value_delimiter = ',')]
        a: Option<Vec<f64>>,
    },
    /// Recompute the second-derivative terms and compare with the reference table.
    VerifyExpansions {
        #[arg(long)]
        case: Option<Case>,
    },
    /// Residuals, ODE reconstruction and multipliers of the first-order correction.
    Linearized {
        #[arg(long)]
        case: Option<Case>,
        #[arg(long, allow_hyphen_values = true)]
        kappa1: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        kappa2: Option<f64>,
        /// Also write (t, φ, numeric, closed form) samples for plotting.
        #[arg(long)]
        samples_csv: Option<PathBuf>,
    },
    /// Simulate a leaf family from a file and decide whether it foliates.
    Foliate {
        family: PathBuf,
        /// Number of leaves λ_max·k/n checked pairwise.
        #[arg(long)]
        lambdas: Option<usize>,
        /// Random coverage points on top of the fixed ones.
        #[arg(long)]
        samples: Option<usize>,
        /// Write (λ, θ₀, t) rows for plotting leaves.
        #[arg(long)]
        leaves_csv: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: Config,
    grid: GridSpec,
    tol: f64,
    seed: u64,
    format: Option<Format>,
    out: Option<PathBuf>,
}

impl Ctx {
    fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    fn emit(&self, table: &Table, default: Format) -> Result<()> {
        let mut w = self.writer()?;
        table.write(self.format(default), &mut w)?;
        w.flush()?;
        Ok(())
    }

    fn cases(&self, flag: Option<Case>) -> Result<Vec<Case>> {
        let case = match flag {
            Some(c) => Some(c),
            None => self.cfg.get::<Case>("case")?,
        };
        Ok(case.map_or_else(|| vec![Case::Willmore, Case::Cmc], |c| vec![c]))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let c = cli.common;
    let cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let ctx = Ctx {
        grid: cfg.resolve(c.grid, "grid", GridSpec::default())?,
        tol: positive("tol", cfg.resolve(c.tol, "tol", variational::RECOVERY_TOL)?)?,
        seed: cfg.resolve(c.seed, "seed", 0)?,
        format: match c.format {
            Some(f) => Some(f),
            None => cfg.get("format")?,
        },
        out: match c.out {
            Some(p) => Some(p),
            None => cfg.get("out")?,
        },
        cfg,
    };
    match cli.command {
        Command::Moments { max_degree, boundary, include_zero } => {
            let deg = ctx.cfg.resolve(max_degree, "max-degree", 4)?;
            moments(&ctx, deg, boundary, include_zero)
        }
        Command::Analyze { surface, case, guess } => analyze(&ctx, surface, case, guess),
        Command::Gallery { a } => gallery(&ctx, a),
        Command::VerifyExpansions { case } => verify(&ctx, case),
        Command::Linearized { case, kappa1, kappa2, samples_csv } => {
            let k1 = ctx.cfg.resolve(kappa1, "kappa1", 1.0)?;
            let k2 = ctx.cfg.resolve(kappa2, "kappa2", 0.5)?;
            linearized_cmd(&ctx, case, k1, k2, samples_csv)
        }
        Command::Foliate { family, lambdas, samples, leaves_csv } => {
            let n = ctx.cfg.resolve(lambdas, "lambdas", 16)?;
            let m = ctx.cfg.resolve(samples, "samples", 32)?;
            foliate(&ctx, family, n, m, leaves_csv)
        }
    }
}

fn status(ok: bool) -> Cell {
    Cell::from(if ok { "PASS" } else { "FAIL" })
}

fn moments(ctx: &Ctx, deg: u32, boundary: bool, include_zero: bool) -> Result<u8> {
    let rows = if boundary {
        quadrature::boundary_moment_table(deg, include_zero)
    } else {
        quadrature::moment_table(deg, include_zero)
    };
    let mut t = Table::new(&["a", "b", "c", "p_num", "p_den", "value"]);
    for (m, r) in rows {
        let (num, den) = rational_parts(&r);
        let value = PI * halfsphere_core::expr::rational_to_f64(&r);
        t.push(vec![m.a.into(), m.b.into(), m.c.into(), num.into(), den.into(), value.into()]);
    }
    ctx.emit(&t, Format::Csv)?;
    Ok(0)
}

fn analyze(ctx: &Ctx, path: PathBuf, case: Option<Case>, guess: Option<Vec<f64>>) -> Result<u8> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let spec = graph::parse_surface_file(&text).with_context(|| format!("in {}", path.display()))?;
    let surface = spec.build()?;
    let guess = guess.map_or((0.0, 0.0), |g| (g[0], g[1]));
    let p = surface.find_critical_point(guess)?;
    let mut t = Table::new(&[
        "surface", "case", "x", "y", "h", "k", "grad_h_x", "grad_h_y", "hess_h_xx", "hess_h_xy", "hess_h_yy",
        "grad_k_x", "grad_k_y", "v0_x", "v0_y", "v0_norm_lower", "v0_norm_upper", "v0_norm_induced", "verdict",
    ]);
    let mut worst = Verdict::Foliates;
    for case in ctx.cases(case)? {
        let v = graph::foliation_criterion(&surface, &p, case)?;
        worst = match (worst, v.verdict) {
            (Verdict::DoesNotFoliate, _) | (_, Verdict::DoesNotFoliate) => Verdict::DoesNotFoliate,
            (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Verdict::Inconclusive,
            _ => Verdict::Foliates,
        };
        t.push(vec![
            surface.name.as_str().into(),
            case.name().into(),
            p.point[0].into(),
            p.point[1].into(),
            p.h.into(),
            p.k.into(),
            p.grad_h[0].into(),
            p.grad_h[1].into(),
            p.hess_h[0][0].into(),
            p.hess_h[0][1].into(),
            p.hess_h[1][1].into(),
            p.grad_k[0].into(),
            p.grad_k[1].into(),
            v.v0_component[0].into(),
            v.v0_component[1].into(),
            v.v0_norm_lower.into(),
            v.v0_norm_upper.into(),
            v.v0_norm_induced.into(),
            format!("{:?}", v.verdict).into(),
        ]);
    }
    ctx.emit(&t, Format::Csv)?;
    Ok(worst.exit_code() as u8)
}

fn gallery(ctx: &Ctx, a: Option<Vec<f64>>) -> Result<u8> {
    let values = match a {
        Some(v) => v,
        None => vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.51],
    };
    let mut t = Table::new(&[
        "a", "c", "grad_h_x", "grad_h_y", "v0_closed_form", "willmore_lower", "willmore_upper", "willmore_verdict",
        "cmc_lower", "cmc_upper", "cmc_verdict",
    ]);
    for a in values {
        let s = graph::gallery_surface(a);
        let p = s.curvature_at(0.0, 0.0)?;
        let w = graph::foliation_criterion(&s, &p, Case::Willmore)?;
        let c = graph::foliation_criterion(&s, &p, Case::Cmc)?;
        t.push(vec![
            a.into(),
            graph::gallery_c(a).into(),
            p.grad_h[0].into(),
            p.grad_h[1].into(),
            graph::gallery_v0_closed_form(a).into(),
            w.v0_norm_lower.into(),
            w.v0_norm_upper.into(),
            format!("{:?}", w.verdict).into(),
            c.v0_norm_lower.into(),
            c.v0_norm_upper.into(),
            format!("{:?}", c.verdict).into(),
        ]);
    }
    ctx.emit(&t, Format::Csv)?;
    let xi = graph::gallery_root();
    eprintln!("root of 1-15a^4+2a^6: {} (p = {:e})", output::float(xi), graph::gallery_poly(xi));
    Ok(0)
}

fn coefficient_row(
    t: &mut Table,
    case: Case,
    term: &str,
    basis: &str,
    numeric: Option<f64>,
    expected: &CoefficientVector,
    tol: f64,
) -> bool {
    let recovered = numeric.map(|x| recover_coefficients(x, tol));
    let (p, q, note, exact) = match &recovered {
        Some(Ok(c)) => (Cell::from(c.p.to_string()), Cell::from(c.q.to_string()), String::new(), c.same_as(expected)),
        Some(Err(e)) => (Cell::Null, Cell::Null, format!("no fit: {e}"), false),
        None => (Cell::Null, Cell::Null, "inconsistent probes".to_string(), false),
    };
    let err = numeric.map(|x| (x - expected.value()).abs());
    let ok = exact && err.is_some_and(|e| e < 1e-7);
    t.push(vec![
        case.name().into(),
        term.into(),
        basis.into(),
        p,
        q,
        expected.p.to_string().into(),
        expected.q.to_string().into(),
        numeric.into(),
        expected.value().into(),
        err.into(),
        status(ok),
        note.into(),
    ]);
    ok
}

fn verify(ctx: &Ctx, case: Option<Case>) -> Result<u8> {
    let grid = ctx.grid.build()?;
    let mut t = Table::new(&[
        "case", "term", "basis", "p", "q", "expected_p", "expected_q", "numeric", "expected_value", "abs_error", "status",
        "note",
    ]);
    let mut all_ok = true;
    for case in ctx.cases(case)? {
        let probes = variational::evaluate_probes(case, &grid)?;
        let reference = variational::reference_terms(case);
        let mut check = |name: &str, vals: Vec<f64>, expected: &(CoefficientVector, CoefficientVector)| {
            let (k, h2) = match decompose(name, &PROBES, &vals) {
                Ok((k, h2, _)) => (Some(k), Some(h2)),
                Err(_) => (None, None),
            };
            let a = coefficient_row(&mut t, case, name, "K", k, &expected.0, ctx.tol);
            let b = coefficient_row(&mut t, case, name, "H^2", h2, &expected.1, ctx.tol);
            a && b
        };
        for (i, name) in variational::term_names(case).iter().enumerate() {
            all_ok &= check(name, probes.iter().map(|p| p.terms[i]).collect(), &reference[i]);
        }
        all_ok &= check("total", probes.iter().map(ProbeTerms::total).collect(), &variational::reference_total(case));

        // first derivative is a multiple of H alone
        let ratios: Vec<f64> = probes.iter().map(|p| p.first_derivative / (p.kappa.0 + p.kappa.1)).collect();
        let spread = ratios.iter().map(|r| (r - ratios[0]).abs()).fold(0.0, f64::max);
        let expected = match case {
            Case::Willmore => CoefficientVector::exact(rational(-1, 1), rational(0, 1)),
            Case::Cmc => CoefficientVector::exact(rational(-1, 4), rational(0, 1)),
        };
        let numeric = (spread < variational::PROBE_TOL).then_some(ratios[0]);
        all_ok &= coefficient_row(&mut t, case, "first_derivative", "H", numeric, &expected, ctx.tol);
    }
    ctx.emit(&t, Format::Csv)?;
    eprintln!("{}", if all_ok { "all coefficients match" } else { "MISMATCH against the reference table" });
    Ok(if all_ok { 0 } else { 1 })
}

fn linearized_cmd(ctx: &Ctx, case: Option<Case>, k1: f64, k2: f64, samples_csv: Option<PathBuf>) -> Result<u8> {
    let grid = ctx.grid.build()?;
    let mut t = Table::new(&["case", "check", "value", "tolerance", "status"]);
    let mut all_ok = true;
    let mut samples = Table::new(&["case", "t", "phi", "u_numeric", "u_closed"]);
    for case in ctx.cases(case)? {
        let p = LinearizedProblem::new(case, k1, k2);
        let u = linearized::closed_form_uprime(&p);
        let r = linearized::residual_check(&p, &u, &grid)?;
        let sol = linearized::solve_ode_modes(&p)?;
        let m = linearized::multipliers(&p, &grid)?;
        let mut rows: Vec<(&str, f64, f64)> = vec![
            ("pde_residual", r.pde, 1e-10),
            ("neumann_residual", r.neumann, 1e-10),
            ("integral_constraint", (r.integral_u - r.integral_u_target).abs(), 1e-10),
            ("integral_u_w1", r.integral_u_w1.abs(), 1e-10),
            ("integral_u_w2", r.integral_u_w2.abs(), 1e-10),
        ];
        if let Some(x) = r.third_order {
            rows.push(("third_order_residual", x, 1e-10));
        }
        rows.push(("ode_sup_error", sol.sup_error(), 1e-7));
        rows.push(("alpha_prime_error", (m.alpha_prime - m.alpha_expected).abs(), 1e-10));
        rows.push(("beta_prime_1", m.beta_prime[0].abs(), 1e-10));
        rows.push(("beta_prime_2", m.beta_prime[1].abs(), 1e-10));
        for (name, value, tol) in rows {
            let ok = value < tol;
            all_ok &= ok;
            t.push(vec![case.name().into(), name.into(), value.into(), tol.into(), status(ok)]);
        }
        for s in &sol.samples {
            samples.push(vec![case.name().into(), s.t.into(), s.phi.into(), s.u_numeric.into(), s.u_closed.into()]);
        }
    }
    ctx.emit(&t, Format::Csv)?;
    if let Some(path) = samples_csv {
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        samples.write(Format::Csv, &mut f)?;
        f.flush()?;
    }
    Ok(if all_ok { 0 } else { 1 })
}

/// Uniform directions on the upper hemisphere, at a uniform fraction of the
/// outermost leaf's radius along that ray.
fn random_points(fam: &LeafFamily, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.gen_range(0.0..1.0);
        let phi: f64 = rng.gen_range(0.0..2.0 * PI);
        let frac: f64 = rng.gen_range(0.05..0.95);
        let s = (1.0 - z * z).sqrt();
        let dir = [s * phi.cos(), s * phi.sin(), z];
        if let Ok(r) = foliation::ray_intersect(fam, fam.lambda_max, dir) {
            out.push(dir.map(|x| x * frac * r.t));
        }
    }
    out
}

fn foliate(ctx: &Ctx, path: PathBuf, n: usize, m: usize, leaves_csv: Option<PathBuf>) -> Result<u8> {
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let fam = foliation::parse_family_file(&text).with_context(|| format!("in {}", path.display()))?;
    let lambdas = foliation::lambda_grid(fam.lambda_max, n.max(2));
    let mut points = foliation::sample_points(&fam);
    points.extend(random_points(&fam, m, ctx.seed));

    let mut w = ctx.writer()?;
    let format = ctx.format(Format::Jsonl);
    let report = match foliation::foliation_report(&fam, &lambdas, &points) {
        Ok(r) => r,
        Err(e @ FoliationError::Inconclusive { .. }) => {
            let line = output::json_object(&[
                ("record", "summary".into()),
                ("verdict", "inconclusive".into()),
                ("reason", e.to_string().into()),
                ("seed", (ctx.seed as i64).into()),
            ]);
            writeln!(w, "{line}")?;
            w.flush()?;
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };

    let verdict = match report.verdict {
        FoliationOutcome::Foliates => "foliates",
        FoliationOutcome::Overlaps => "overlaps",
    };
    match format {
        Format::Jsonl => {
            let tagged = |tag: &str, v: serde_json::Value| {
                let mut v = v;
                v["record"] = tag.into();
                json_value(&v)
            };
            for p in &report.pairs {
                writeln!(w, "{}", tagged("pair", serde_json::to_value(p)?))?;
            }
            writeln!(w, "{}", tagged("monotonicity", serde_json::to_value(&report.monotone)?))?;
            for c in &report.coverage {
                writeln!(w, "{}", tagged("coverage", serde_json::to_value(c)?))?;
            }
            let summary = serde_json::json!({
                "record": "summary",
                "v": report.v,
                "lambda_max": report.lambda_max,
                "verdict": verdict,
                "witness": report.witness,
                "pairs_checked": report.pairs.len(),
                "pairs_intersecting": report.pairs.iter().filter(|p| p.intersect).count(),
                "points_covered": report.coverage.iter().filter(|c| c.lambda.is_some()).count(),
                "points": report.coverage.len(),
                "seed": ctx.seed,
                "smoothness_certified": report.smoothness_certified,
                "note": report.note,
            });
            writeln!(w, "{}", json_value(&summary))?;
        }
        Format::Csv => {
            let mut t = Table::new(&["kind", "lambda1", "lambda2", "intersect", "min_distance"]);
            for p in &report.pairs {
                let kind = serde_json::to_value(p.kind)?.as_str().unwrap_or_default().to_string();
                t.push(vec![kind.into(), p.lambda1.into(), p.lambda2.into(), p.intersect.into(), p.min_distance.into()]);
            }
            t.write(Format::Csv, &mut w)?;
        }
    }
    w.flush()?;
    eprintln!("verdict: {verdict} ({})", report.note);

    if let Some(path) = leaves_csv {
        let mut t = Table::new(&["lambda", "theta0_x", "theta0_y", "theta0_z", "t"]);
        for &l in &lambdas {
            for dir in foliation::direction_grid(5, 24) {
                let r = foliation::ray_intersect(&fam, l, dir).ok().map(|r| r.t);
                t.push(vec![l.into(), dir[0].into(), dir[1].into(), dir[2].into(), r.into()]);
            }
        }
        let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        t.write(Format::Csv, &mut f)?;
        f.flush()?;
    }
    Ok(match report.verdict {
        FoliationOutcome::Foliates => 0,
        FoliationOutcome::Overlaps => 1,
    })
}
