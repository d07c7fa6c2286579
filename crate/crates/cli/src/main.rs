//! `roigan`: synthetic data generation, training, evaluation, inference and
//! self-checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{value_parser, Arg, ArgMatches, Command};
use roigan::checks::{self, Suite};
use roigan::data::pgm::{mask_to_grey, overlay, write_pgm};
use roigan::data::{
    gen_phantom_dataset, load_dataset, load_stack, save_stack, split_dataset, write_dataset, MaskStack, PhantomConfig,
    SliceStack, Split, StackPair, DEFAULT_FRACTIONS,
};
use roigan::train::{evaluate, history_csv, predict, TrainConfig, Trainer, HISTORY_FILE, KEYS, LAST_CHECKPOINT};
use roigan::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const SLICES_CSV: &str = "slices.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const OVERLAY_DIR: &str = "overlays";
/// Caps evaluation worker threads; 1 when unset.
pub const THREADS_ENV: &str = "ROIGAN_THREADS";

/// Exit status by failure class: 2 invalid input, 3 I/O, 4 non-finite
/// training values, 5 malformed files or checkpoint mismatch.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) | Error::LogDomain { .. } => 4,
        Error::Format { .. } | Error::CheckpointMismatch { .. } => 5,
        _ => 2,
    }
}

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let defaults = TrainConfig::default();
    let key_args = KEYS.iter().map(|k| {
        Arg::new(k.key).long(flag(k.key)).value_name("VALUE").help(format!(
            "{} [default: {}]",
            k.help,
            defaults.get(k.key).expect("documented keys have values")
        ))
    });
    Command::new("roigan")
        .about("Right-ventricle segmentation with FCNN, R-FCNN and ROI-GAN on synthetic short-axis stacks")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("gen-data")
                .about("Generate a phantom dataset with a train/val/test manifest")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("stacks")
                        .long("stacks")
                        .default_value("10")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("size")
                        .long("size")
                        .num_args(2)
                        .value_names(["H", "W"])
                        .default_values(["64", "64"])
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("slices")
                        .long("slices")
                        .default_value("10")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("noise-sigma")
                        .long("noise-sigma")
                        .default_value("0.05")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("spacing")
                        .long("spacing")
                        .num_args(2)
                        .value_names(["ROW_MM", "COL_MM"])
                        .default_values(["2.0", "2.0"])
                        .value_parser(value_parser!(f32)),
                ),
        )
        .subcommand(
            Command::new("train")
                .about("Train a generator (and discriminators) on a generated dataset")
                .arg(
                    Arg::new("data-dir")
                        .long("data-dir")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("FILE")
                        .help("key=value file applied before the flags")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("resume")
                        .long("resume")
                        .value_name("CHECKPOINT")
                        .help("continue a run from its checkpoint with the stored config; --epochs sets the new total")
                        .conflicts_with("config")
                        .value_parser(value_parser!(PathBuf)),
                )
                .args(key_args),
        )
        .subcommand(
            Command::new("eval")
                .about("Score a checkpoint on one split: CSVs, report and overlays")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("data-dir")
                        .long("data-dir")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("split")
                        .long("split")
                        .default_value("test")
                        .value_parser(["train", "val", "test"]),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
        .subcommand(
            Command::new("infer")
                .about("Segment one stack file; writes the predicted stack and PGMs")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("stack")
                        .long("stack")
                        .value_name("FILE")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
        .subcommand(
            Command::new("check").about("Run the self-check suites").arg(
                Arg::new("suite")
                    .long("suite")
                    .default_value("all")
                    .value_parser(["grad", "metrics", "sharing", "all"]),
            ),
        )
}

fn path<'a>(m: &'a ArgMatches, id: &str) -> &'a Path {
    m.get_one::<PathBuf>(id).expect("required argument")
}

fn pair<T: Copy + Send + Sync + 'static>(m: &ArgMatches, id: &str) -> (T, T) {
    let v: Vec<T> = m.get_many::<T>(id).expect("defaulted argument").copied().collect();
    (v[0], v[1])
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
    }
}

fn cmd_gen_data(m: &ArgMatches) -> Result<()> {
    let cfg = PhantomConfig {
        n_stacks: *m.get_one("stacks").expect("defaulted"),
        size: pair(m, "size"),
        slices: *m.get_one("slices").expect("defaulted"),
        seed: *m.get_one("seed").expect("defaulted"),
        spacing: pair(m, "spacing"),
        noise_sigma: *m.get_one("noise-sigma").expect("defaulted"),
    };
    cfg.validate()?;
    let stacks = gen_phantom_dataset(&cfg)?;
    let ids: Vec<String> = stacks.iter().map(|(s, _)| s.id.clone()).collect();
    let manifest = split_dataset(&ids, DEFAULT_FRACTIONS, cfg.seed)?;
    let out = path(m, "out");
    write_dataset(out, &stacks, &manifest)?;
    println!(
        "wrote {} stacks ({} train / {} val / {} test) of {}x{}x{} to {}",
        stacks.len(),
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        cfg.slices,
        cfg.size.0,
        cfg.size.1,
        out.display()
    );
    Ok(())
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let mut trainer = match m.get_one::<PathBuf>("resume") {
        Some(ck) => {
            if let Some(k) = KEYS
                .iter()
                .find(|k| k.key != "epochs" && m.get_one::<String>(k.key).is_some())
            {
                return Err(Error::Config(format!(
                    "--{} cannot be combined with --resume; only --epochs may extend a resumed run",
                    flag(k.key)
                )));
            }
            let mut t = Trainer::<f32>::load(ck)?;
            if let Some(v) = m.get_one::<String>("epochs") {
                t.cfg.set("epochs", v)?;
                t.cfg.validate()?;
            }
            t
        }
        None => {
            let mut cfg = TrainConfig::default();
            if let Some(file) = m.get_one::<PathBuf>("config") {
                let text = std::fs::read_to_string(file).map_err(|e| Error::Io {
                    path: file.clone(),
                    source: e,
                })?;
                cfg.apply_text(&text)?;
            }
            for k in KEYS {
                if let Some(v) = m.get_one::<String>(k.key) {
                    cfg.set(k.key, v)?;
                }
            }
            Trainer::new(cfg)?
        }
    };
    let data = load_dataset(path(m, "data-dir"))?;
    let out = path(m, "out");
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), &trainer.cfg.to_text())?;
    println!(
        "training {} / {} for {} epochs on {} stacks (val {})",
        trainer.cfg.variant.as_str(),
        trainer.cfg.generator.as_str(),
        trainer.cfg.epochs,
        data.manifest.train.len(),
        data.manifest.val.len()
    );
    let start = Instant::now();
    trainer.fit(&data.split(Split::Train), &data.split(Split::Val), Some(out), |r| {
        println!(
            "epoch {:>3}  d {:.4}  mse {:.5}  gan {:.4}  l1 {:.3e}  val dice {:.4}  ({:.0}s)",
            r.epoch,
            r.train.d_loss,
            r.train.g_mse,
            r.train.g_gan,
            r.train.g_l1,
            r.val_dice,
            start.elapsed().as_secs_f64()
        );
    })?;
    // Written even when no epoch ran, so every run leaves a loadable checkpoint.
    trainer.save(&out.join(LAST_CHECKPOINT))?;
    write(&out.join(HISTORY_FILE), &history_csv(&trainer.history))?;
    Ok(())
}

fn overlay_pgms(dir: &Path, stack: &SliceStack, pred: &MaskStack, with_mask: bool) -> Result<()> {
    let (h, w) = (stack.height(), stack.width());
    for i in 0..stack.len() {
        let name = format!("{}_s{i:02}", stack.id);
        write_pgm(
            &dir.join(format!("{name}_overlay.pgm")),
            h,
            w,
            &overlay(stack.slice(i), pred.slice(i), h, w),
        )?;
        if with_mask {
            write_pgm(
                &dir.join(format!("{name}_mask.pgm")),
                h,
                w,
                &mask_to_grey(pred.slice(i)),
            )?;
        }
    }
    Ok(())
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let threads = threads()?;
    let trainer = Trainer::<f32>::load(path(m, "checkpoint"))?;
    let data = load_dataset(path(m, "data-dir"))?;
    let split: Split = m.get_one::<String>("split").expect("defaulted").parse()?;
    let stacks: Vec<&StackPair> = data.split(split);
    let eval = evaluate(&trainer.nets, &stacks, threads)?;
    let out = path(m, "out");
    let overlays = out.join(OVERLAY_DIR);
    create_dir(&overlays)?;
    write(&out.join(SLICES_CSV), &eval.report.slices_csv())?;
    write(&out.join(SUMMARY_CSV), &eval.report.summary_csv())?;
    let text = eval.report.text("");
    write(&out.join(REPORT_FILE), &text)?;
    for ((stack, _), pred) in stacks.iter().zip(&eval.predictions) {
        overlay_pgms(&overlays, stack, pred, false)?;
    }
    println!(
        "{} split: {} stacks, {} slices, checkpoint epoch {}\n{text}",
        split.as_str(),
        stacks.len(),
        eval.report.slices.len(),
        trainer.epoch
    );
    Ok(())
}

fn cmd_infer(m: &ArgMatches) -> Result<()> {
    let trainer = Trainer::<f32>::load(path(m, "checkpoint"))?;
    let (stack, _) = load_stack(path(m, "stack"))?;
    let expected = trainer.cfg.input_size;
    if (stack.height(), stack.width()) != expected {
        return Err(Error::Config(format!(
            "stack is {}x{} but the checkpoint expects {}x{}",
            stack.height(),
            stack.width(),
            expected.0,
            expected.1
        )));
    }
    let pred = MaskStack::from_probabilities(&stack.id, &predict(&trainer.nets, &stack)?)?;
    let out = path(m, "out");
    create_dir(out)?;
    let file = out.join(format!("{}.rvs", stack.id));
    save_stack(&file, &stack, &pred)?;
    overlay_pgms(out, &stack, &pred, true)?;
    let area: usize = (0..pred.len()).map(|i| pred.area(i)).sum();
    println!(
        "wrote {} ({} slices, {area} foreground pixels)",
        file.display(),
        pred.len()
    );
    Ok(())
}

fn cmd_check(m: &ArgMatches) -> Result<bool> {
    let suite: Suite = m.get_one::<String>("suite").expect("defaulted").parse()?;
    let report = checks::run(suite);
    for r in &report.results {
        println!("{r}");
    }
    println!(
        "{} checks, {} failed, total runtime {:.1}s",
        report.results.len(),
        report.failures(),
        report.seconds
    );
    Ok(report.passed())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("gen-data", m)) => cmd_gen_data(m).map(|()| true),
        Some(("train", m)) => cmd_train(m).map(|()| true),
        Some(("eval", m)) => cmd_eval(m).map(|()| true),
        Some(("infer", m)) => cmd_infer(m).map(|()| true),
        Some(("check", m)) => cmd_check(m),
        _ => unreachable!("a subcommand is required"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn every_key_has_a_flag_with_its_default() {
        let help = cli()
            .find_subcommand_mut("train")
            .unwrap()
            .render_long_help()
            .to_string();
        for k in KEYS {
            assert!(help.contains(&format!("--{}", flag(k.key))), "{}", k.key);
        }
        assert!(
            help.contains("[default: 0.0002]") || help.contains("[default: 2e-4]"),
            "{help}"
        );
    }

    #[test]
    fn exit_codes_follow_the_table() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFiniteGradient("w".into())), 4);
        assert_eq!(
            exit_code(&Error::Format {
                offset: 0,
                msg: String::new()
            }),
            5
        );
    }
}
