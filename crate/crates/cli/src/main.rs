use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bitext_cli::{
    evaluate, gan_checkpoint_path, generate, grad_check, nmt_checkpoint_path, parse_direction, prepare_data, train_gan,
    train_nmt, translate, CliError, EvalMode, LangSel,
};
use bitext_core::corpus::Lang;
use bitext_core::RunConfig;

#[derive(Parser)]
#[command(name = "bitext", version, about = "Shared-latent bilingual translation and text generation")]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set nmt.lr=0.001` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Tokenize, filter and split the corpora; build vocabularies.
    PrepareData,
    /// Train the translator.
    TrainNmt,
    /// Train the latent-code GAN over a trained translator.
    TrainGan {
        #[arg(long)]
        nmt: Option<PathBuf>,
    },
    /// Translate a text file.
    Translate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// l0-l1 or l1-l0.
        #[arg(long, value_parser = parse_direction)]
        direction: (Lang, Lang),
        #[arg(long)]
        nmt: Option<PathBuf>,
    },
    /// Sample sentences from the generator.
    Generate {
        #[arg(short, long, default_value_t = 100)]
        n: usize,
        /// l0, l1 or both (aligned pair files).
        #[arg(long, default_value = "both")]
        lang: LangSel,
        /// Output prefix; files get `.l0` / `.l1` appended.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        nmt: Option<PathBuf>,
        #[arg(long)]
        gan: Option<PathBuf>,
    },
    /// Compute a metric report.
    Evaluate {
        #[command(subcommand)]
        mode: EvalCmd,
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check every graph op against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    TransBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    GenBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value = "l0", value_parser = parse_lang)]
        lang: Lang,
    },
    Ppl {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, value_parser = parse_lang)]
        lang: Lang,
    },
    Parallelism {
        #[arg(long)]
        l0: PathBuf,
        #[arg(long)]
        l1: PathBuf,
    },
}

fn parse_lang(s: &str) -> Result<Lang, String> {
    match s {
        "l0" => Ok(Lang::L0),
        "l1" => Ok(Lang::L1),
        _ => Err(format!("expected l0 or l1, got `{s}`")),
    }
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config is required for this command"))?;
    Ok(RunConfig::load(path, &cli.overrides)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::PrepareData => {
            let r = prepare_data(&config(&cli)?)?;
            println!("{}", serde_json::to_string(&r).expect("report serialises"));
        }
        Cmd::TrainNmt => {
            let r = train_nmt(&config(&cli)?)?;
            println!("test BLEU l0->l1 {:.2} l1->l0 {:.2}", r.test_bleu[0], r.test_bleu[1]);
            if let Some(w) = r.wbw_bleu {
                println!("word-by-word BLEU l0->l1 {:.2} l1->l0 {:.2}", w[0], w[1]);
            }
        }
        Cmd::TrainGan { nmt } => {
            let cfg = config(&cli)?;
            let nmt = nmt.clone().unwrap_or_else(|| nmt_checkpoint_path(&cfg));
            let r = train_gan(&cfg, &nmt)?;
            println!("{} critic / {} generator updates", r.critic_updates, r.gen_updates);
        }
        Cmd::Translate { input, output, direction, nmt } => {
            let cfg = config(&cli)?;
            let nmt = nmt.clone().unwrap_or_else(|| nmt_checkpoint_path(&cfg));
            let n = translate(&cfg, &nmt, input, output, *direction)?;
            println!("translated {n} lines");
        }
        Cmd::Generate { n, lang, out, nmt, gan } => {
            let cfg = config(&cli)?;
            let nmt = nmt.clone().unwrap_or_else(|| nmt_checkpoint_path(&cfg));
            let gan = gan.clone().unwrap_or_else(|| gan_checkpoint_path(&cfg));
            let prefix = out.clone().unwrap_or_else(|| cfg.output_dir.join("samples"));
            for p in generate(&cfg, &nmt, &gan, *n, *lang, &prefix)? {
                println!("{}", p.display());
            }
        }
        Cmd::Evaluate { mode, report } => {
            let mode = match mode {
                EvalCmd::TransBleu { hyp, reference } => EvalMode::TransBleu {
                    hyp: hyp.clone(),
                    reference: reference.clone(),
                },
                EvalCmd::GenBleu { hyp, reference, lang } => EvalMode::GenBleu {
                    hyp: hyp.clone(),
                    reference: reference.clone(),
                    lang: *lang,
                },
                EvalCmd::Ppl { hyp, lang } => EvalMode::Ppl {
                    hyp: hyp.clone(),
                    lang: *lang,
                },
                EvalCmd::Parallelism { l0, l1 } => EvalMode::Parallelism {
                    l0: l0.clone(),
                    l1: l1.clone(),
                },
            };
            // metrics that need no corpus state run without a config
            let cfg = match (&cli.config, &mode) {
                (None, EvalMode::TransBleu { .. } | EvalMode::GenBleu { .. }) => RunConfig::default(),
                _ => config(&cli)?,
            };
            let text = evaluate(&cfg, &mode)?;
            print!("{text}");
            if let Some(path) = report {
                std::fs::write(path, &text).map_err(bitext_cli::error::io_at(path))?;
            }
        }
        Cmd::GradCheck { seeds } => {
            let (table, ok) = grad_check(*seeds);
            print!("{table}");
            if !ok {
                return Err(CliError::validation("gradient check failed"));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
