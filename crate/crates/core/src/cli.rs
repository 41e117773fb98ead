//! Command-line front end.
//!
//! Config-backed subcommands get one flag per config key (`learning_rate`
//! becomes `--learning-rate`), generated from the stage's defaults so the
//! help text always shows the values a config file would get. Flag values
//! override the file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use serde_json::{Map, Value};

use crate::audit::{load_config_value, StageConfig, DEFAULT_SEED_SET};
use crate::classifier::ClassifyTrainConfig;
use crate::data::{Schema, SplitName, SyntheticConfig, DEFAULT_GRADE_MAX};
use crate::error::{exit, Error, Result};
use crate::pipeline::{
    self, EvaluateConfig, EvaluatePaths, StageOutcome, SweepConfigs, TriagePaths, TuneConfig,
};
use crate::rank::RankTrainConfig;

/// Alternative spellings for config-key flags.
const ALIASES: &[(&str, &str)] = &[("grid_n", "grid")];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args<T: StageConfig>() -> Vec<Arg> {
    let defaults = T::defaults();
    let mut args = Vec::new();
    for key in T::keys() {
        let help = match defaults.get(&key) {
            Some(v) => format!("config key `{key}` [default: {v}]"),
            None => format!("config key `{key}` (required)"),
        };
        let mut arg = Arg::new(key.clone())
            .long(flag_name(&key))
            .value_name("VALUE")
            .help(help)
            .num_args(1);
        if let Some((_, alias)) = ALIASES.iter().find(|(k, _)| *k == key) {
            arg = arg.visible_alias(*alias);
        }
        args.push(arg);
    }
    args
}

/// Flag values as a config overlay; values are read as JSON when they
/// parse and as strings otherwise.
fn overrides<T: StageConfig>(m: &ArgMatches) -> Map<String, Value> {
    let mut out = Map::new();
    for key in T::keys() {
        if let Some(raw) = m.get_one::<String>(&key) {
            let v = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            out.insert(key, v);
        }
    }
    out
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn config_file_arg() -> Arg {
    path_arg("config", "JSON config file")
}

pub fn command() -> Command {
    Command::new("clausetriage")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Graded clause retrieval, calibrated heads and fuzzy compliance triage")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("ingest")
                .about("Validate a dataset file and write its normalized copy")
                .arg(path_arg("dataset", "graded or binary JSONL file").required(true))
                .arg(
                    Arg::new("schema")
                        .long("schema")
                        .required(true)
                        .value_parser(["graded", "binary"]),
                )
                .arg(
                    Arg::new("split")
                        .long("split")
                        .value_parser(["train", "validation", "test"])
                        .help("split name [default: inferred from the file name]"),
                )
                .arg(path_arg("embeddings", "EMB1 file every id must resolve in; copied to --out"))
                .arg(
                    Arg::new("grade-max")
                        .long("grade-max")
                        .value_parser(clap::value_parser!(u32))
                        .default_value(DEFAULT_GRADE_MAX.to_string()),
                )
                .arg(path_arg("out", "output directory").required(true)),
        )
        .subcommand(
            Command::new("gen-synthetic")
                .about("Generate a seeded synthetic corpus")
                .arg(config_file_arg())
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .required(true)
                        .value_parser(clap::value_parser!(u64)),
                )
                .args(config_args::<SyntheticConfig>())
                .arg(path_arg("out", "output data directory").required(true)),
        )
        .subcommand(
            Command::new("train-rank")
                .about("Train the projection with the listwise graded loss")
                .arg(config_file_arg())
                .arg(path_arg("data", "data directory").required(true))
                .arg(path_arg("out", "run directory").required(true))
                .args(config_args::<RankTrainConfig>()),
        )
        .subcommand(
            Command::new("train-classify")
                .about("Train the calibration and fuzzy heads on frozen scores")
                .arg(config_file_arg())
                .arg(path_arg("rank-ckpt", "PRJ1 rank checkpoint").required(true))
                .arg(path_arg("data", "data directory").required(true))
                .arg(path_arg("out", "run directory").required(true))
                .args(config_args::<ClassifyTrainConfig>()),
        )
        .subcommand(
            Command::new("tune-thresholds")
                .about("Grid-search the review band on the validation split")
                .arg(config_file_arg())
                .arg(path_arg("heads", "heads file").required(true))
                .arg(path_arg("rank-ckpt", "rank checkpoint [default: the one named in the heads file]"))
                .arg(path_arg("data", "data directory").required(true))
                .arg(path_arg("out", "run directory").required(true))
                .args(config_args::<TuneConfig>()),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Report ranking, classification and triage metrics on one split")
                .arg(config_file_arg())
                .arg(path_arg("out", "run directory").required(true))
                .arg(path_arg("data", "data directory [default: OUT/data]"))
                .arg(path_arg("rank-ckpt", "rank checkpoint [default: OUT/rank.prj1]"))
                .arg(path_arg("heads", "heads file [default: OUT/heads.json if present]"))
                .arg(path_arg("thresholds", "thresholds file [default: OUT/thresholds.json if present]"))
                .args(config_args::<EvaluateConfig>()),
        )
        .subcommand(
            Command::new("triage")
                .about("Decide pairs and write the audit trail")
                .arg(path_arg("heads", "heads file").required(true))
                .arg(path_arg("thresholds", "thresholds file").required(true))
                .arg(path_arg("pairs", "JSONL of {query_id, clause_id[, label]}").required(true))
                .arg(path_arg("audit", "audit trail to write").required(true))
                .arg(path_arg("embeddings", "EMB1 file [default: embeddings.emb1 next to --pairs]"))
                .arg(path_arg("rank-ckpt", "rank checkpoint [default: the one named in the heads file]")),
        )
        .subcommand(
            Command::new("sweep")
                .about("Train, tune and evaluate once per seed")
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(u64))
                        .default_value(seed_default()),
                )
                .arg(path_arg("rank-config", "train-rank config (seed is set per run)"))
                .arg(path_arg("classify-config", "train-classify config (seed is set per run)"))
                .arg(path_arg("tune-config", "tune-thresholds config"))
                .arg(path_arg("evaluate-config", "evaluate config"))
                .arg(path_arg("data", "data directory").required(true))
                .arg(path_arg("out", "sweep directory").required(true)),
        )
}

fn seed_default() -> String {
    DEFAULT_SEED_SET.map(|s| s.to_string()).join(",")
}

fn config_map(path: Option<&PathBuf>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| crate::audit::ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(crate::audit::ConfigError::TypeError {
            key: "<root>".into(),
            message: "expected a JSON object".into(),
        }
        .into()),
        Err(e) => Err(crate::audit::ConfigError::Syntax(e.to_string()).into()),
    }
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> Option<&'a PathBuf> {
    m.get_one::<PathBuf>(name)
}

fn required<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    path(m, name).expect("clap enforces required arguments")
}

fn stage_config<T: StageConfig>(m: &ArgMatches) -> Result<T> {
    pipeline::resolve_config(path(m, "config").map(PathBuf::as_path), overrides::<T>(m))
}

fn dispatch(name: &str, m: &ArgMatches) -> Result<StageOutcome> {
    match name {
        "ingest" => {
            let schema: Schema = m.get_one::<String>("schema").unwrap().parse().map_err(Error::Usage)?;
            let split = m
                .get_one::<String>("split")
                .map(|s| s.parse::<SplitName>())
                .transpose()
                .map_err(Error::Usage)?;
            pipeline::ingest(
                required(m, "dataset"),
                schema,
                split,
                path(m, "embeddings").map(PathBuf::as_path),
                *m.get_one::<u32>("grade-max").unwrap(),
                required(m, "out"),
            )
        }
        "gen-synthetic" => {
            let seed = *m.get_one::<u64>("seed").unwrap();
            let config: SyntheticConfig = stage_config(m)?;
            pipeline::gen_synthetic(&config, seed, required(m, "out"))
        }
        "train-rank" => {
            let config: RankTrainConfig = stage_config(m)?;
            pipeline::train_rank_stage(&config, required(m, "data"), required(m, "out"))
        }
        "train-classify" => {
            let config: ClassifyTrainConfig = stage_config(m)?;
            pipeline::train_classify_stage(
                &config,
                required(m, "rank-ckpt"),
                required(m, "data"),
                required(m, "out"),
            )
        }
        "tune-thresholds" => {
            let config: TuneConfig = stage_config(m)?;
            pipeline::tune_stage(
                &config,
                required(m, "heads"),
                path(m, "rank-ckpt").map(PathBuf::as_path),
                required(m, "data"),
                required(m, "out"),
            )
        }
        "evaluate" => {
            let config: EvaluateConfig = stage_config(m)?;
            let paths = EvaluatePaths {
                data: path(m, "data").cloned(),
                rank_ckpt: path(m, "rank-ckpt").cloned(),
                heads: path(m, "heads").cloned(),
                thresholds: path(m, "thresholds").cloned(),
            };
            pipeline::evaluate_stage(&config, &paths, required(m, "out"))
        }
        "triage" => pipeline::triage_stage(&TriagePaths {
            heads: required(m, "heads").to_path_buf(),
            thresholds: required(m, "thresholds").to_path_buf(),
            pairs: required(m, "pairs").to_path_buf(),
            audit: required(m, "audit").to_path_buf(),
            embeddings: path(m, "embeddings").cloned(),
            rank_ckpt: path(m, "rank-ckpt").cloned(),
        }),
        "sweep" => {
            let seeds: Vec<u64> = m.get_many::<u64>("seeds").unwrap().copied().collect();
            let configs = SweepConfigs {
                rank: config_map(path(m, "rank-config"))?,
                classify: config_map(path(m, "classify-config"))?,
                tune: load_config_value(Value::Object(config_map(path(m, "tune-config"))?))?,
                evaluate: load_config_value(Value::Object(config_map(path(m, "evaluate-config"))?))?,
            };
            pipeline::sweep_stage(&seeds, &configs, required(m, "data"), required(m, "out"))
        }
        other => Err(Error::Usage(format!("unknown subcommand {other}"))),
    }
}

/// Runs the tool and returns its exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    exit::OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    exit::USAGE
                }
            };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(name, sub) {
        Ok(outcome) => {
            let _ = writeln!(stdout, "{}", outcome.summary);
            let _ = writeln!(stdout, "manifest: {}", outcome.manifest_path.display());
            if outcome.infeasible {
                let _ = writeln!(stderr, "error: {}", Error::Infeasible);
                exit::INFEASIBLE
            } else {
                exit::OK
            }
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
