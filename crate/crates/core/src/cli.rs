//! Command-line front end. Exit codes: 0 success, 2 usage or validation,
//! 3 partial result (budget), 4 oracle unavailable or misbehaving.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::canonical;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::manifest::{OracleMode, RunManifest};
use crate::objective::{objective_value, ObjectiveValue};
use crate::remote::llm::template_digests;
use crate::report::{render_text, ReportSummary};
use crate::search::{resume_search, run_search, SearchReport};
use crate::seed::{explicit_seed_set, SeedPlan};
use crate::synthetic::{brute_force_optimum, UniverseSpec};
use crate::tree::SearchTree;
use crate::types::{ClassLabel, Description};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;
const EXIT_INTERNAL: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "domain-bridge", version, about = "Infer what each class of a black-box classifier means")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search for the best description of every class in a manifest.
    Investigate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from tree files already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score one description for one class.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        description: String,
        /// Use the explicit seed list shared with `brute-force` for both terms.
        #[arg(long)]
        explicit_seeds: bool,
    },
    /// Exhaustively maximize the objective over a synthetic universe.
    BruteForce {
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        class: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        run_seed: u64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Print a persisted tree (and its report, when found next to it).
    Report {
        #[arg(long)]
        tree: PathBuf,
        /// Defaults to the `.report.json` sibling of the tree file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidInput(_)
        | Error::Parse { .. }
        | Error::ConfigMismatch { .. }
        | Error::UniverseConstructionFailed(_)
        | Error::NoOp(_)
        | Error::Io(_) => EXIT_USAGE,
        Error::BudgetExceeded(_) => EXIT_PARTIAL,
        Error::OracleUnavailable(_) | Error::OracleProtocol(_) | Error::MalformedSample(_) => EXIT_ORACLE,
        Error::Invariant(_) => EXIT_INTERNAL,
    }
}

/// Parses `args` (program name first), runs the command, returns the exit code.
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
    let mut stdout = std::io::stdout().lock();
    match execute(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Investigate { manifest, out: dir, resume } => {
            let manifest = RunManifest::load(&manifest)?;
            let summary = investigate(&manifest, &dir, resume)?;
            for (class, entry) in &summary.classes {
                let best = entry.best_description.as_ref().map_or("-", |d| d.as_str());
                writeln!(out, "class {class}: {best}{}", if entry.partial { "  (PARTIAL)" } else { "" })?;
            }
            Ok(if summary.complete { EXIT_OK } else { EXIT_PARTIAL })
        }
        Command::Evaluate { manifest, class, description, explicit_seeds } => {
            let manifest = RunManifest::load(&manifest)?;
            let value = evaluate(&manifest, ClassLabel(class), &Description::new(description)?, explicit_seeds)?;
            writeln!(out, "{}", canonical::to_canonical_string(&value)?)?;
            Ok(EXIT_OK)
        }
        Command::BruteForce { universe, class, lambda, run_seed, samples } => {
            let bytes = fs::read(&universe)
                .map_err(|e| Error::invalid(format!("cannot read universe {}: {e}", universe.display())))?;
            let spec = UniverseSpec::from_json(&bytes)?;
            if class > spec.classes.len() {
                return Err(Error::invalid(format!("class {class} is not in the universe")));
            }
            let mut cfg = Config { run_seed, n_final_samples: samples, ..Config::default() };
            if let Some(l) = lambda {
                cfg.lambda = l;
            }
            cfg.validate()?;
            let seeds = explicit_seed_set(run_seed, samples);
            let (description, objective) = brute_force_optimum(&spec, ClassLabel(class), &cfg, &seeds)?;
            let text = canonical::render(&json!({"description": description, "objective": objective}));
            writeln!(out, "{text}")?;
            Ok(EXIT_OK)
        }
        Command::Report { tree, report, top } => {
            let bytes =
                fs::read(&tree).map_err(|e| Error::invalid(format!("cannot read tree {}: {e}", tree.display())))?;
            let parsed = SearchTree::from_bytes(&bytes)?;
            let report_path = report.or_else(|| sibling_report(&tree)).filter(|p| p.exists());
            let summary = match report_path {
                Some(p) => {
                    let bytes = fs::read(&p)?;
                    let de = &mut serde_json::Deserializer::from_slice(&bytes);
                    Some(serde_path_to_error::deserialize::<_, ReportSummary>(de)?)
                }
                None => None,
            };
            write!(out, "{}", render_text(&parsed, summary.as_ref(), top))?;
            Ok(EXIT_OK)
        }
    }
}

fn sibling_report(tree: &Path) -> Option<PathBuf> {
    let name = tree.file_name()?.to_str()?;
    let stem = name.strip_suffix(".tree.json")?;
    Some(tree.with_file_name(format!("{stem}.report.json")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub best_description: Option<Description>,
    pub objective: Option<ObjectiveValue>,
    pub partial: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvestigationSummary {
    pub classes: BTreeMap<ClassLabel, ClassSummary>,
    pub complete: bool,
    pub config_digest: String,
    pub lambda: f64,
    pub oracle_mode: OracleMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_templates: Option<BTreeMap<String, String>>,
}

pub fn tree_path(dir: &Path, class: ClassLabel) -> PathBuf {
    dir.join(format!("class_{}.tree.json", class.0))
}

pub fn report_path(dir: &Path, class: ClassLabel) -> PathBuf {
    dir.join(format!("class_{}.report.json", class.0))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs (or resumes) every class of the manifest in order, writing each
/// class's tree and report as soon as it finishes and `summary.json` at the
/// end. An oracle failure aborts before the failing class writes anything.
pub fn investigate(manifest: &RunManifest, dir: &Path, resume: bool) -> Result<InvestigationSummary> {
    let oracles = manifest.build_oracles()?;
    let spec = manifest.universe_spec()?;
    let initial = manifest.initial(spec.as_ref())?;
    let cfg = &manifest.config;
    fs::create_dir_all(dir)?;
    let mut classes = BTreeMap::new();
    for &class in &manifest.classes {
        let path = tree_path(dir, class);
        let report: SearchReport = if resume && path.exists() {
            let tree = SearchTree::from_bytes(&fs::read(&path)?)?;
            resume_search(tree, class, cfg, &oracles.suite)?
        } else {
            run_search(&initial, class, cfg, &oracles.suite)?
        };
        write_atomic(&path, &report.tree.to_bytes()?)?;
        write_atomic(&report_path(dir, class), report.to_json()?.as_bytes())?;
        classes.insert(
            class,
            ClassSummary {
                best_description: report.best_description.clone(),
                objective: report.best_objective,
                partial: report.partial,
            },
        );
    }
    let summary = InvestigationSummary {
        complete: classes.values().all(|c| !c.partial),
        classes,
        config_digest: cfg.digest_hex(),
        lambda: cfg.lambda,
        oracle_mode: manifest.oracle_mode,
        prompt_templates: (manifest.oracle_mode == OracleMode::Remote).then(template_digests),
    };
    let mut text = canonical::to_canonical_string(&summary)?;
    text.push('\n');
    write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    Ok(summary)
}

/// Objective of one description. With `explicit_seeds` both terms use
/// `explicit_seed_set(run_seed, n_final_samples)`, the list `brute-force` uses.
pub fn evaluate(
    manifest: &RunManifest,
    class: ClassLabel,
    description: &Description,
    explicit_seeds: bool,
) -> Result<ObjectiveValue> {
    let oracles = manifest.build_oracles()?;
    if let Some(n) = oracles.suite.target.num_classes() {
        if class.0 >= n {
            return Err(Error::invalid(format!("class {class} is outside the target's {n} classes")));
        }
    }
    let cfg = &manifest.config;
    let seeds = if explicit_seeds {
        SeedPlan::Explicit(explicit_seed_set(cfg.run_seed, cfg.n_final_samples))
    } else {
        SeedPlan::Derived { run_seed: cfg.run_seed }
    };
    objective_value(description, class, cfg, &oracles.suite, &seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::invalid("x")), EXIT_USAGE);
        assert_eq!(exit_code(&Error::BudgetExceeded(crate::oracle::OracleKind::Decode)), EXIT_PARTIAL);
        assert_eq!(exit_code(&Error::OracleUnavailable("down".into())), EXIT_ORACLE);
    }

    #[test]
    fn report_sibling_name() {
        assert_eq!(sibling_report(Path::new("/o/class_3.tree.json")).unwrap(), Path::new("/o/class_3.report.json"));
        assert!(sibling_report(Path::new("/o/tree.json")).is_none());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["domain-bridge", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["domain-bridge", "brute-force", "--universe", "/nonexistent.json", "--class", "0"]), EXIT_USAGE);
    }
}
