//! Command-line front end.
//!
//! Every subcommand prints a plain-text summary and, with `--out`, writes a
//! [`ReportFile`] as JSON. Exit status is 0 on success, 1 when a model or fit
//! fails and 2 for usage and input errors.

mod input;
mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

pub use input::{
    load_model, parse_matrix_csv, parse_table_csv, CustomSpec, ModelSpecFile, SamplingSpec,
    SchemeName,
};
pub use report::{
    to_json, FitSection, InputSection, ModelSection, ReportFile, SequenceSection, FixtureSection,
};

use crate::divergence::{parse_lambda, PhiFunction};
use crate::error::{Error, Result};
use crate::estimate::{fit, FitOptions};
use crate::inference::{gof_test_from_fit, nested_test_from_fits, sequential_test, NestedForm};
use crate::model::{is_nested, LmlcSpec};
use crate::simulate::{
    run_power_study, run_simulation, run_size_study, Fixtures, SimulationConfig, Strategy,
};

fn lambda_arg(s: &str) -> std::result::Result<f64, String> {
    parse_lambda(s).map_err(|e| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "lmlc", version, about = "Minimum phi-divergence estimation and testing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Form {
    T,
    S,
}

impl From<Form> for NestedForm {
    fn from(f: Form) -> Self {
        match f {
            Form::T => NestedForm::T,
            Form::S => NestedForm::S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum What {
    Table1,
    Table2,
    Table3,
    Table4,
    Gamma,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum phi-divergence estimate.
    Fit {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "0", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Goodness-of-fit test.
    Gof {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "1", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda1: f64,
        #[arg(long, default_value = "0", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda2: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test `--model2` against the larger `--model`.
    Nested {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        model2: PathBuf,
        #[arg(long, default_value = "1", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda1: f64,
        #[arg(long, default_value = "0", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda2: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Form::T)]
        form: Form,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sequential nested tests down a chain of models, largest first.
    Sequence {
        #[arg(long)]
        table: PathBuf,
        #[arg(long = "model", num_args = 2.., required = true)]
        models: Vec<PathBuf>,
        #[arg(long, default_value = "1", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda1: f64,
        #[arg(long, default_value = "0", value_parser = lambda_arg, allow_hyphen_values = true)]
        lambda2: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Form::T)]
        form: Form,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo study from a configuration file.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "R")]
        replicates: Option<u64>,
        #[arg(long, num_args = 1..)]
        n: Vec<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate one of the reference tables.
    Reproduce {
        #[arg(long, value_enum)]
        what: What,
        #[arg(long, num_args = 1..)]
        n: Vec<u64>,
        #[arg(long = "R", default_value_t = 10_000)]
        replicates: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Restrict the test-statistic grid.
        #[arg(long, num_args = 1.., value_parser = lambda_arg, allow_negative_numbers = true)]
        lambda1: Vec<f64>,
        /// Restrict the estimator grid.
        #[arg(long, num_args = 1.., value_parser = lambda_arg, allow_negative_numbers = true)]
        lambda2: Vec<f64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A finished command: the report and its plain-text rendering.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: ReportFile,
    pub text: String,
    pub out: Option<PathBuf>,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn table_input(path: &Path) -> Result<(crate::table::ContingencyTable, InputSection)> {
    let n = parse_table_csv(path)?;
    let input = InputSection {
        table: Some(display(path)),
        counts: n.counts().to_vec(),
        shape: n.shape().to_vec(),
        ..Default::default()
    };
    Ok((n, input))
}

fn models(paths: &[PathBuf]) -> Result<(Vec<LmlcSpec>, Vec<ModelSection>)> {
    let mut specs = Vec::new();
    let mut sections = Vec::new();
    for p in paths {
        let spec = load_model(p)?;
        sections.push(ModelSection::new(&display(p), &spec)?);
        specs.push(spec);
    }
    Ok((specs, sections))
}

fn converged(f: crate::estimate::FitResult, label: &str) -> Result<crate::estimate::FitResult> {
    if f.converged {
        Ok(f)
    } else {
        Err(Error::domain(format!(
            "fit of {label} did not converge (kkt residual {:.3e})",
            f.kkt_residual
        )))
    }
}

fn simulation_report(
    config: &SimulationConfig,
    sizes: bool,
    powers: bool,
) -> Result<crate::simulate::SimulationReport> {
    let fixtures = Fixtures::default();
    info!(
        "simulating n = {:?}, R = {}, {} x {} lambda values",
        config.n_grid,
        config.replicates,
        config.lambda1_grid.len(),
        config.lambda2_grid.len()
    );
    match (sizes, powers) {
        (true, true) => run_simulation(config, &fixtures),
        (true, false) => run_size_study(config, &fixtures),
        _ => run_power_study(config, &fixtures),
    }
}

fn fixture_check() -> Result<FixtureSection> {
    let f = Fixtures::default();
    f.validate()?;
    let s: Vec<f64> = f.null_probabilities()?.iter().copied().collect();
    let mh: Vec<f64> = f.mh_probabilities()?.iter().copied().collect();
    let dev = |v: &[f64]| {
        v.iter()
            .zip(&f.reference_probabilities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    Ok(FixtureSection {
        max_deviation_s: dev(&s),
        max_deviation_mh: dev(&mh),
        reference: f.reference_probabilities.clone(),
        from_theta_s: s,
        from_theta_mh: mh,
    })
}

/// Run a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    let mut text = String::new();
    let opts = FitOptions::default();
    let (report, out) = match cli.command {
        Command::Fit { table, model, lambda2, out } => {
            let (n, mut input) = table_input(&table)?;
            input.models = vec![display(&model)];
            input.lambda2 = Some(lambda2);
            let (specs, sections) = models(std::slice::from_ref(&model))?;
            let f = fit(&specs[0], &n, &PhiFunction::power(lambda2), &opts)?;
            let section = FitSection::new(&display(&model), &f);
            report::render_fit(&mut text, &section);
            let r = ReportFile {
                command: "fit".into(),
                input,
                model: sections,
                fit: vec![section],
                ..Default::default()
            };
            (r, out)
        }
        Command::Gof { table, model, lambda1, lambda2, alpha, out } => {
            let (n, mut input) = table_input(&table)?;
            input.models = vec![display(&model)];
            input.lambda1 = Some(lambda1);
            input.lambda2 = Some(lambda2);
            input.alpha = Some(alpha);
            let (specs, sections) = models(std::slice::from_ref(&model))?;
            let f = converged(fit(&specs[0], &n, &PhiFunction::power(lambda2), &opts)?, &display(&model))?;
            let test = gof_test_from_fit(&f, &n, &PhiFunction::power(lambda1), alpha)?;
            let section = FitSection::new(&display(&model), &f);
            report::render_fit(&mut text, &section);
            report::render_test(&mut text, &test);
            let r = ReportFile {
                command: "gof".into(),
                input,
                model: sections,
                fit: vec![section],
                test: vec![test],
                ..Default::default()
            };
            (r, out)
        }
        Command::Nested { table, model, model2, lambda1, lambda2, alpha, form, out } => {
            let (n, mut input) = table_input(&table)?;
            let paths = [model, model2];
            input.models = paths.iter().map(|p| display(p)).collect();
            input.lambda1 = Some(lambda1);
            input.lambda2 = Some(lambda2);
            input.alpha = Some(alpha);
            let (specs, sections) = models(&paths)?;
            if !is_nested(&specs[1], &specs[0])? {
                return Err(Error::domain(format!(
                    "{} is not nested within {}",
                    display(&paths[1]),
                    display(&paths[0])
                )));
            }
            let phi2 = PhiFunction::power(lambda2);
            let mut fits = Vec::new();
            for (spec, p) in specs.iter().zip(&paths) {
                fits.push(converged(fit(spec, &n, &phi2, &opts)?, &display(p))?);
            }
            let test = nested_test_from_fits(
                &fits[0],
                &fits[1],
                &n,
                &PhiFunction::power(lambda1),
                alpha,
                form.into(),
            )?;
            let fit_sections: Vec<FitSection> = fits
                .iter()
                .zip(&paths)
                .map(|(f, p)| FitSection::new(&display(p), f))
                .collect();
            for s in &fit_sections {
                report::render_fit(&mut text, s);
            }
            report::render_test(&mut text, &test);
            let r = ReportFile {
                command: "nested".into(),
                input,
                model: sections,
                fit: fit_sections,
                test: vec![test],
                ..Default::default()
            };
            (r, out)
        }
        Command::Sequence { table, models: paths, lambda1, lambda2, alpha, form, out } => {
            let (n, mut input) = table_input(&table)?;
            input.models = paths.iter().map(|p| display(p)).collect();
            input.lambda1 = Some(lambda1);
            input.lambda2 = Some(lambda2);
            input.alpha = Some(alpha);
            let (specs, sections) = models(&paths)?;
            let seq = sequential_test(
                &specs,
                &n,
                &PhiFunction::power(lambda1),
                &PhiFunction::power(lambda2),
                alpha,
                form.into(),
            )?;
            for (b, t) in seq.per_test.iter().enumerate() {
                text.push_str(&format!("{} vs {}: ", display(&paths[b + 1]), display(&paths[b])));
                report::render_test(&mut text, t);
            }
            text.push_str(&format!(
                "per-test level {:.4}; selected model {}\n",
                seq.per_test_level,
                display(&paths[seq.b_star - 1])
            ));
            let r = ReportFile {
                command: "sequence".into(),
                input,
                model: sections,
                sequence: Some((&seq).into()),
                test: seq.per_test,
                ..Default::default()
            };
            (r, out)
        }
        Command::Simulate { config, seed, replicates, n, alpha, workers, out } => {
            let body = std::fs::read_to_string(&config).map_err(|source| Error::Io {
                path: config.clone(),
                source,
            })?;
            let mut cfg: SimulationConfig = serde_json::from_str(&body)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if !n.is_empty() {
                cfg.n_grid = n;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if workers.is_some() {
                cfg.workers = workers;
            }
            cfg.validate()?;
            let sim = simulation_report(&cfg, true, !cfg.power_points.is_empty())?;
            report::render_simulation(&mut text, &sim);
            let r = ReportFile {
                command: "simulate".into(),
                input: InputSection {
                    models: vec![display(&config)],
                    alpha: Some(cfg.alpha),
                    seed: Some(cfg.master_seed),
                    ..Default::default()
                },
                simulation: Some(sim),
                ..Default::default()
            };
            (r, out)
        }
        Command::Reproduce { what, n, replicates, seed, alpha, lambda1, lambda2, workers, out } => {
            let mut r = ReportFile {
                command: format!("reproduce {}", format!("{what:?}").to_lowercase()),
                input: InputSection {
                    alpha: Some(alpha),
                    seed: Some(seed),
                    ..Default::default()
                },
                ..Default::default()
            };
            if what == What::Table1 {
                let t = fixture_check()?;
                report::render_fixtures(&mut text, &t);
                r.table1 = Some(t);
            } else {
                let mut cfg = reproduction_config(what, seed);
                cfg.replicates = replicates;
                cfg.alpha = alpha;
                cfg.workers = workers;
                if !n.is_empty() {
                    cfg.n_grid = n;
                }
                if !lambda1.is_empty() {
                    cfg.lambda1_grid = lambda1;
                }
                if !lambda2.is_empty() {
                    cfg.lambda2_grid = lambda2;
                }
                cfg.validate()?;
                let sim = match what {
                    What::Table2 | What::Table3 => simulation_report(&cfg, true, false)?,
                    What::Table4 => simulation_report(&cfg, false, true)?,
                    _ => simulation_report(&cfg, true, true)?,
                };
                if what == What::Gamma {
                    report::render_gamma(&mut text, &sim);
                } else {
                    report::render_simulation(&mut text, &sim);
                }
                r.simulation = Some(sim);
            }
            (r, out)
        }
    };
    Ok(Outcome { report, text, out })
}

/// Default grids of each reproducible table.
pub fn reproduction_config(what: What, seed: u64) -> SimulationConfig {
    let mut cfg = SimulationConfig::reference_grid(seed);
    match what {
        What::Table1 | What::Gamma => {}
        What::Table2 => cfg.n_grid = vec![100, 250],
        What::Table3 => cfg.n_grid = vec![400, 550],
        What::Table4 => {
            cfg.strategies = vec![Strategy::ConditionalOqs];
            cfg.lambda1_grid = vec![0.0, 2.0 / 3.0, 1.0, 2.0];
            cfg.lambda2_grid = vec![2.0 / 3.0];
        }
    }
    cfg
}

/// Exit status for an error: 2 for bad input, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parse `args`, run, print and write the report; returns the exit status.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = run(cli).and_then(|o| {
        if let Some(path) = &o.out {
            o.report.write(path)?;
        }
        Ok(o)
    });
    match outcome {
        Ok(o) => {
            print!("{}", o.text);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
