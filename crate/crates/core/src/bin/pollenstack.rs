use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches, Command};

use pollenstack::config::{PipelineConfig, KEYS, SEED_ENV};
use pollenstack::eval::TableStyle;
use pollenstack::pipeline;
use pollenstack::stack::{ClassLabel, LabelingRule};
use pollenstack::synth::{self, StackFormat, SynthConfig};
use pollenstack::{Error, ErrorKind};

fn config_args(cmd: Command) -> Command {
    let defaults = PipelineConfig::default();
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("key = value configuration file (flags override it)"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, desc)| {
        let default = defaults.get(key).expect("registered key");
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(format!("{desc} [default: {default}]")),
        )
    })
}

fn root_arg() -> Arg {
    Arg::new("root")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help("directory of z-stacks (one subdirectory per class)")
}

fn labels_arg() -> Arg {
    Arg::new("labels")
        .long("labels")
        .value_name("FILE")
        .value_parser(value_parser!(PathBuf))
        .help("sidecar path<TAB>label file instead of class directories")
}

fn cli() -> Command {
    Command::new("pollenstack")
        .about("Focal-layer selection, dataset packaging and evaluation for z-stack pollen classification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("prep")
                .about("ingest, select focal layers, pad, split and pack a dataset")
                .arg(root_arg())
                .arg(labels_arg())
                .arg(out_arg("output prefix for .pstk/.index.tsv/.split.tsv")),
        ))
        .subcommand(config_args(
            Command::new("split")
                .about("write only the split plan")
                .arg(root_arg())
                .arg(labels_arg())
                .arg(out_arg("split file to write")),
        ))
        .subcommand(config_args(
            Command::new("inspect")
                .about("dump per-layer focus profiles")
                .arg(root_arg())
                .arg(labels_arg())
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_parser(value_parser!(PathBuf))
                        .help("write profiles here instead of stdout"),
                )
                .arg(
                    Arg::new("masks")
                        .long("masks")
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf))
                        .help("write focal-layer edge masks as PNG into DIR"),
                ),
        ))
        .subcommand(config_args(
            Command::new("baseline")
                .about("train the logistic-regression baseline on one fold")
                .arg(
                    Arg::new("dataset")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("packed dataset prefix"),
                )
                .arg(out_arg("output prefix for prediction and log files")),
        ))
        .subcommand(
            Command::new("eval")
                .about("score prediction files and render report tables")
                .arg(
                    Arg::new("predictions")
                        .required(true)
                        .num_args(1..)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("truth")
                        .long("truth")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("packed dataset prefix or its .index.tsv"),
                )
                .arg(
                    Arg::new("style")
                        .long("style")
                        .default_value("models")
                        .value_parser(["layers", "epochs", "models"]),
                )
                .arg(
                    Arg::new("tsv")
                        .long("tsv")
                        .value_parser(value_parser!(PathBuf))
                        .help("also write all metrics as TSV"),
                ),
        )
        .subcommand(config_args(
            Command::new("layer-study")
                .about("compare window sizes with the baseline classifier")
                .arg(root_arg())
                .arg(labels_arg())
                .arg(
                    Arg::new("work")
                        .long("work")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("directory for intermediate datasets"),
                )
                .arg(
                    Arg::new("layer_list")
                        .long("layer-list")
                        .value_delimiter(',')
                        .num_args(0..)
                        .default_value("4,6,8,10,20")
                        .value_parser(value_parser!(usize)),
                ),
        ))
        .subcommand(
            Command::new("synth")
                .about("write a synthetic z-stack tree")
                .arg(
                    Arg::new("root")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("per_class")
                        .long("per-class")
                        .default_value("10")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("depth")
                        .long("depth")
                        .default_value("20")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("format")
                        .long("format")
                        .default_value("png")
                        .value_parser(["png", "tiff"]),
                ),
        )
        .subcommand(config_args(
            Command::new("config").about("print the effective configuration"),
        ))
}

fn out_arg(help: &'static str) -> Arg {
    Arg::new("out")
        .long("out")
        .required(true)
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn resolve_config(m: &ArgMatches) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::from_env()?;
    if let Some(file) = m.get_one::<PathBuf>("config") {
        cfg.apply_file(file)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn layout(m: &ArgMatches) -> LabelingRule {
    match m.get_one::<PathBuf>("labels") {
        Some(p) => LabelingRule::Sidecar(p.clone()),
        None => LabelingRule::DirectoryPerClass,
    }
}

fn path<'a>(m: &'a ArgMatches, id: &str) -> &'a Path {
    m.get_one::<PathBuf>(id).expect("required argument")
}

fn write_file(p: &Path, text: &str) -> Result<(), Error> {
    fs::write(p, text).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn run(matches: ArgMatches) -> Result<(), Error> {
    match matches.subcommand() {
        Some(("prep", m)) => {
            let cfg = resolve_config(m)?;
            let s = pipeline::prep(path(m, "root"), &layout(m), &cfg, path(m, "out"))?;
            println!("samples: {}  rejected: {}", s.manifest.len(), s.rejected.len());
            for r in &s.rejected {
                println!("  rejected {}: {}", r.path.display(), r.reason);
            }
            let counts = s.manifest.class_counts();
            for label in ClassLabel::ALL {
                println!("class {} ({}): {}", label.id(), label.name(), counts[label.id()]);
            }
            println!("focal index histogram:");
            for (z, n) in &s.focal_histogram {
                println!("  {z}\t{n}");
            }
            println!("wrote {}", s.packed.paths.blob.display());
        }
        Some(("split", m)) => {
            let cfg = resolve_config(m)?;
            let plan = pipeline::split_only(path(m, "root"), &layout(m), &cfg, path(m, "out"))?;
            println!(
                "{} ids: {} test, folds {:?}",
                plan.len(),
                plan.test_ids().len(),
                plan.folds().iter().map(Vec::len).collect::<Vec<_>>()
            );
        }
        Some(("inspect", m)) => {
            let cfg = resolve_config(m)?;
            let profiles = pipeline::inspect(
                path(m, "root"),
                &layout(m),
                &cfg,
                m.get_one::<PathBuf>("masks").map(PathBuf::as_path),
            )?;
            let mut buf = Vec::new();
            for (id, p) in &profiles {
                p.write_dump(id, &mut buf).expect("write to memory");
            }
            let text = String::from_utf8(buf).expect("utf-8 dump");
            match m.get_one::<PathBuf>("out") {
                Some(p) => write_file(p, &text)?,
                None => print!("{text}"),
            }
        }
        Some(("baseline", m)) => {
            let cfg = resolve_config(m)?;
            let out = pipeline::baseline(path(m, "dataset"), &cfg, path(m, "out"))?;
            println!("epoch\ttrain_loss\tval_loss\tval_acc");
            for e in &out.log {
                println!(
                    "{}\t{:.4}\t{:.4}\t{:.4}",
                    e.epoch, e.train_loss, e.val_loss, e.val_accuracy
                );
            }
            let paths = pipeline::BaselinePaths::from_prefix(path(m, "out"));
            println!("wrote {}", paths.val.display());
            if out.test.is_some() {
                println!("wrote {}", paths.test.display());
            }
        }
        Some(("eval", m)) => {
            let files: Vec<PathBuf> = m
                .get_many::<PathBuf>("predictions")
                .expect("required")
                .cloned()
                .collect();
            let style: TableStyle = m.get_one::<String>("style").expect("default").parse()?;
            let truth = pipeline::load_truth(path(m, "truth"))?;
            let out = pipeline::evaluate(&files, &truth, style)?;
            print!("{}", out.render());
            if let Some(p) = m.get_one::<PathBuf>("tsv") {
                write_file(p, &out.tsv)?;
            }
        }
        Some(("layer-study", m)) => {
            let cfg = resolve_config(m)?;
            let layers: Vec<usize> = m
                .get_many::<usize>("layer_list")
                .map(|v| v.copied().collect())
                .unwrap_or_default();
            let study = pipeline::layer_study(
                path(m, "root"),
                &layout(m),
                &cfg,
                &layers,
                path(m, "work"),
            )?;
            print!("{}", study.table);
            let increasing = study
                .rows
                .windows(2)
                .all(|w| w[1].seconds_per_epoch >= w[0].seconds_per_epoch);
            println!(
                "seconds per epoch {} with layer count",
                if increasing { "increase monotonically" } else { "do not increase monotonically" }
            );
        }
        Some(("synth", m)) => {
            let cfg = SynthConfig {
                per_class: *m.get_one("per_class").expect("default"),
                depth: *m.get_one("depth").expect("default"),
                seed: *m.get_one("seed").expect("default"),
                format: match m.get_one::<String>("format").map(String::as_str) {
                    Some("tiff") => StackFormat::MultipageTiff,
                    _ => StackFormat::PngLayers,
                },
                ..SynthConfig::default()
            };
            let written = synth::write_tree(path(m, "root"), &cfg)?;
            println!("wrote {} stacks", written.len());
        }
        Some(("config", m)) => print!("{}", resolve_config(m)?.to_text()),
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli()
        .after_help(format!("Environment: {SEED_ENV} overrides the default seed."))
        .get_matches();
    match run(matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Input => 1,
                ErrorKind::Config => 2,
                ErrorKind::Internal => 3,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_is_well_formed() {
        cli().debug_assert();
    }

    #[test]
    fn help_lists_every_key_with_default() {
        let help = cli()
            .find_subcommand_mut("prep")
            .unwrap()
            .render_long_help()
            .to_string();
        let defaults = PipelineConfig::default();
        for (key, _) in KEYS {
            assert!(help.contains(&format!("--{key}")), "{key} missing");
            let d = format!("[default: {}]", defaults.get(key).unwrap());
            assert!(help.contains(&d), "{key} default {d} missing");
        }
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.conf");
        fs::write(&file, "epochs = 50\nlearning_rate = 0.001\n").unwrap();
        let m = cli().get_matches_from([
            "pollenstack",
            "config",
            "--config",
            file.to_str().unwrap(),
            "--epochs",
            "7",
        ]);
        let (_, sub) = m.subcommand().unwrap();
        let cfg = resolve_config(sub).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.layers, 6);
    }
}
