use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctxfood::pipeline::{
    cmd_ablate_location, cmd_classify, cmd_evaluate_pfid, cmd_evaluate_wild, cmd_fetch, cmd_train,
    generate_synthetic_world, GeneratorParams, RunConfig, TrainTarget,
};
use ctxfood::Error;

/// Location-aware dish recognition.
#[derive(Parser, Debug)]
#[command(name = "ctxfood", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Data directory (restaurants.json, menus/, images/).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model directory.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Protocol {
    Wild,
    Pfid,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write a synthetic world of restaurants, menus and dish photos.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        restaurants: usize,
        #[arg(long, default_value_t = 4)]
        dishes: usize,
        #[arg(long, default_value_t = 12)]
        images_per_dish: usize,
        #[arg(long, default_value_t = 5)]
        test_per_dish: usize,
        /// Give every dish its own appearance instead of sharing them across restaurants.
        #[arg(long)]
        no_collision: bool,
        #[arg(long)]
        force: bool,
    },
    /// Train per-restaurant models.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        restaurant: Option<String>,
        /// Every restaurant plus the all-restaurant model.
        #[arg(long)]
        all: bool,
    },
    /// Recognize the dish in one photo.
    Classify {
        #[command(flatten)]
        common: Common,
        image: PathBuf,
        /// Skip geotag matching and use this restaurant's model.
        #[arg(long)]
        restaurant: Option<String>,
        #[arg(long)]
        dump_masks: bool,
    },
    /// Evaluate on the labeled test photos or a PFID directory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "wild")]
        protocol: Protocol,
        /// PFID root (<category>/<instance>/<views>).
        #[arg(long)]
        pfid_dir: Option<PathBuf>,
        /// Report directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dump_masks: bool,
    },
    /// Compare restaurant-restricted models with the all-restaurant model.
    AblateLocation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Populate the image store with a user-supplied downloader script.
    Fetch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        script: PathBuf,
    },
}

fn resolve(common: &Common, out: Option<&PathBuf>) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data {
        cfg.data_dir = d.clone();
    }
    if let Some(m) = &common.models {
        cfg.model_dir = m.clone();
    }
    if let Some(o) = out {
        cfg.report_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Generate { out, seed, restaurants, dishes, images_per_dish, test_per_dish, no_collision, force } => {
            let params = GeneratorParams {
                seed,
                restaurants,
                dishes,
                images_per_dish,
                test_per_dish,
                collision: !no_collision,
                ..GeneratorParams::default()
            };
            let s = generate_synthetic_world(&out, &params, force)?;
            println!(
                "wrote {} training and {} test images to {}",
                s.train_images,
                s.test_images,
                out.display()
            );
        }
        Cmd::Train { common, restaurant, all } => {
            let cfg = resolve(&common, None)?;
            let target = match restaurant {
                Some(r) if !all => TrainTarget::Restaurant(r),
                _ => TrainTarget::All,
            };
            let summary = cmd_train(&cfg, &target)?;
            for (id, path) in &summary.trained {
                println!("{id}: {}", path.display());
            }
            let mut first = None;
            for (id, e) in summary.failed {
                eprintln!("{id}: {e}");
                first.get_or_insert(e);
            }
            if let Some(e) = first {
                return Err(e);
            }
        }
        Cmd::Classify { common, image, restaurant, dump_masks } => {
            let cfg = resolve(&common, None)?;
            print_json(&cmd_classify(&cfg, &image, restaurant.as_deref(), dump_masks)?);
        }
        Cmd::Evaluate { common, protocol, pfid_dir, out, dump_masks } => {
            let cfg = resolve(&common, out.as_ref())?;
            match protocol {
                Protocol::Wild => print!("{}", cmd_evaluate_wild(&cfg, dump_masks)?.to_table()),
                Protocol::Pfid => {
                    let dir = pfid_dir.ok_or_else(|| Error::Config("--protocol pfid needs --pfid-dir".into()))?;
                    print!("{}", cmd_evaluate_pfid(&cfg, &dir)?.to_table());
                }
            }
        }
        Cmd::AblateLocation { common, out } => {
            let cfg = resolve(&common, out.as_ref())?;
            let r = cmd_ablate_location(&cfg)?;
            println!(
                "restricted {:.2}%  unrestricted {:.2}%  delta {:+.2}",
                r.restricted.overall, r.unrestricted.overall, r.delta
            );
        }
        Cmd::Fetch { common, script } => {
            let cfg = resolve(&common, None)?;
            println!("ran the fetch script for {} menu items", cmd_fetch(&cfg, &script)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
