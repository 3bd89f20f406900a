use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use skillgraft_core::checkpoint::{self, GLTC_MAGIC};
use skillgraft_core::compressor::compress_delta;
use skillgraft_core::plan::{DEFAULT_CALIBRATION_SAMPLES, DEFAULT_CALIBRATION_SEED};
use skillgraft_core::router::{self, overlapping_names, RouterTrainingSet};
use skillgraft_core::skillpack::{self, SKPK_MAGIC};
use skillgraft_core::toy::{self, DeltaRecipe, ToySpec};
use skillgraft_core::{
    CalibrationSpec, Checkpoint, ClassificationManifest, CompressionPlan, DeltaMap, Error, FusionRequest, Result,
    Router, Selector, SkillPack,
};

#[derive(Parser)]
#[command(name = "skillgraft", version, about = "Extract, compress, graft and route model deltas")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic base/tuned checkpoint pair
    GenToy(GenToyArgs),
    /// tuned - base, written as a checkpoint
    Diff {
        base: PathBuf,
        tuned: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compress a delta into a SkillPack
    Compress(CompressArgs),
    /// Describe a .skpk pack or .gltc checkpoint
    Inspect { file: PathBuf },
    /// Apply a pack to a base checkpoint
    Graft {
        base: PathBuf,
        pack: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f32,
        /// Skip the base model id check
        #[arg(long)]
        force: bool,
    },
    /// Apply the packs a router selects
    Fuse {
        base: PathBuf,
        /// `[id=]path`; the id defaults to the file stem
        #[arg(long = "pack", required = true)]
        packs: Vec<String>,
        #[arg(long)]
        router: PathBuf,
        #[command(flatten)]
        selector: SelectorArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train a classifier router from per-pack losses
    RouteTrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Print the packs a router selects
    Route {
        #[arg(long)]
        router: PathBuf,
        #[command(flatten)]
        selector: SelectorArgs,
    },
    /// Output deviation of base+pack against the tuned model on random probes
    Eval {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        tuned: PathBuf,
        #[arg(long)]
        pack: PathBuf,
        #[arg(long, default_value_t = 32)]
        probes: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 256)]
    mlp: usize,
    #[arg(long, default_value_t = 512)]
    vocab: usize,
    #[arg(long, default_value_t = 8)]
    rank: usize,
    #[arg(long, default_value_t = 16)]
    nnz: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    delta_scale: f64,
}

#[derive(Args)]
struct CompressArgs {
    /// Plan JSON file, or `default` / `dense`
    #[arg(long)]
    plan: String,
    /// Delta checkpoint from `diff`
    #[arg(long, conflicts_with_all = ["base", "tuned"], required_unless_present = "base")]
    delta: Option<PathBuf>,
    #[arg(long, requires = "tuned")]
    base: Option<PathBuf>,
    #[arg(long, requires = "base")]
    tuned: Option<PathBuf>,
    #[arg(long, default_value = "task")]
    task: String,
    #[arg(short, long)]
    out: PathBuf,
    /// Synthetic calibration seed
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic calibration sample count
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    damping: Option<f64>,
    /// GLTC file of per-parameter activations
    #[arg(long, conflicts_with_all = ["seed", "samples"])]
    calibration: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SelectorArgs {
    #[arg(long)]
    tag: Option<String>,
    /// Comma-separated feature vector
    #[arg(long, allow_hyphen_values = true)]
    features: Option<String>,
}

impl SelectorArgs {
    fn selector(&self) -> Result<Selector> {
        if let Some(tag) = &self.tag {
            return Ok(Selector::Tag(tag.clone()));
        }
        let raw = self.features.as_deref().unwrap_or_default();
        let features = raw
            .split(',')
            .map(|s| s.trim().parse::<f32>().map_err(|e| Error::InvalidArgument(format!("feature '{s}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Selector::Features(features))
    }
}

/// A plan file: the compression plan plus optional manifest rules.
#[derive(Deserialize)]
struct PlanFile {
    #[serde(default)]
    manifest: Option<ClassificationManifest>,
    #[serde(flatten)]
    plan: CompressionPlan,
}

fn load_plan(spec: &str) -> Result<(CompressionPlan, ClassificationManifest)> {
    let path = Path::new(spec);
    if path.exists() {
        let file: PlanFile = serde_json::from_slice(&fs::read(path)?)?;
        return Ok((file.plan, file.manifest.unwrap_or_default()));
    }
    match spec {
        "default" => Ok((CompressionPlan::default(), ClassificationManifest::default())),
        "dense" => Ok((CompressionPlan::dense(), ClassificationManifest::default())),
        _ => Err(Error::InvalidArgument(format!("plan '{spec}' is neither a file nor a builtin (default, dense)"))),
    }
}

fn write_json(value: &impl serde::Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn compress(args: CompressArgs) -> Result<()> {
    let (mut plan, manifest) = load_plan(&args.plan)?;
    if let Some(path) = args.calibration {
        plan.calibration = CalibrationSpec::File { path };
    } else if args.seed.is_some() || args.samples.is_some() {
        let (seed, samples) = match plan.calibration {
            CalibrationSpec::Synthetic { seed, samples } => (seed, samples),
            CalibrationSpec::File { .. } => (DEFAULT_CALIBRATION_SEED, DEFAULT_CALIBRATION_SAMPLES),
        };
        plan.calibration =
            CalibrationSpec::Synthetic { seed: args.seed.unwrap_or(seed), samples: args.samples.unwrap_or(samples) };
    }
    if let Some(d) = args.damping {
        plan.damping = d;
    }
    plan.validate()?;
    let delta = match (args.delta, args.base, args.tuned) {
        (Some(d), _, _) => DeltaMap::from_checkpoint(Checkpoint::load(d)?),
        (None, Some(b), Some(t)) => checkpoint::diff(&Checkpoint::load(b)?, &Checkpoint::load(t)?)?,
        _ => return Err(Error::InvalidArgument("give --delta or both --base and --tuned".into())),
    };
    let pack = compress_delta(&delta, &manifest, &plan, &args.task)?;
    pack.save(&args.out)?;
    let t = &pack.stats.total;
    println!(
        "wrote {} ({} entries, value_only={:.4}%, total={:.4}%)",
        args.out.display(),
        pack.entries.len(),
        t.ratio_value_only * 100.0,
        t.ratio_total * 100.0
    );
    Ok(())
}

fn inspect(file: &Path) -> Result<()> {
    let bytes = fs::read(file)?;
    if bytes.starts_with(SKPK_MAGIC) {
        print!("{}", skillpack::inspect(&SkillPack::from_bytes(&bytes)?));
    } else if bytes.starts_with(GLTC_MAGIC) {
        print!("{}", Checkpoint::from_bytes(&bytes)?.inspect());
    } else {
        return Err(Error::BadMagic {
            expected: "SKPK or GLTC".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    Ok(())
}

fn load_packs(specs: &[String]) -> Result<BTreeMap<String, SkillPack>> {
    let mut packs = BTreeMap::new();
    for spec in specs {
        let (id, path) = match spec.split_once('=') {
            Some((id, path)) => (id.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(spec);
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, path)
            }
        };
        if packs.insert(id.clone(), SkillPack::load(&path)?).is_some() {
            return Err(Error::DuplicateName(id));
        }
    }
    Ok(packs)
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenToy(a) => {
            let spec = ToySpec {
                seed: a.seed,
                layers: a.layers,
                d: a.d,
                mlp: a.mlp,
                vocab: a.vocab,
                recipe: DeltaRecipe { rank: a.rank, sparse_nnz: a.nnz, noise: a.noise, delta_scale: a.delta_scale },
            };
            let (base, tuned) = toy::gen_toy(&spec)?;
            fs::create_dir_all(&a.out_dir)?;
            base.save(a.out_dir.join("base.gltc"))?;
            tuned.save(a.out_dir.join("tuned.gltc"))?;
            println!("wrote base.gltc and tuned.gltc to {}", a.out_dir.display());
        }
        Cmd::Diff { base, tuned, out } => {
            let delta = checkpoint::diff(&Checkpoint::load(base)?, &Checkpoint::load(tuned)?)?;
            let nonzero: usize = delta.deltas.values().map(|t| t.count_nonzero()).sum();
            delta.to_checkpoint().save(&out)?;
            println!("wrote {} ({} tensors, {nonzero} nonzero elements)", out.display(), delta.deltas.len());
        }
        Cmd::Compress(a) => compress(a)?,
        Cmd::Inspect { file } => inspect(&file)?,
        Cmd::Graft { base, pack, out, scale, force } => {
            let grafted = checkpoint::apply(&Checkpoint::load(base)?, &SkillPack::load(pack)?, scale, force)?;
            grafted.save(&out)?;
            println!("wrote {} ({})", out.display(), grafted.model_id);
        }
        Cmd::Fuse { base, packs, router, selector, out } => {
            let base = Checkpoint::load(base)?;
            let packs = load_packs(&packs)?;
            let router = Router::load(router)?;
            let selector = selector.selector()?;
            let routed = router::route(&router, &selector)?;
            let chosen: Vec<&SkillPack> = routed.iter().filter_map(|(id, _)| packs.get(id)).collect();
            let overlap = overlapping_names(&chosen);
            if !overlap.is_empty() {
                eprintln!("warning: routed packs overlap on {} tensors; their deltas are summed", overlap.len());
            }
            let fused = router::fuse(&FusionRequest { base: &base, packs: &packs, router: &router, selector })?;
            fused.save(&out)?;
            let ids: Vec<&str> = routed.iter().map(|(id, _)| id.as_str()).collect();
            println!("wrote {} (packs: {})", out.display(), ids.join(", "));
        }
        Cmd::RouteTrain { data, epochs, lr, out } => {
            let data: RouterTrainingSet = serde_json::from_slice(&fs::read(data)?)?;
            let (classifier, accuracy) = router::train_router(&data, epochs, lr)?;
            Router::LinearClassifier(classifier).save(&out)?;
            println!("wrote {} (training accuracy {:.4})", out.display(), accuracy);
        }
        Cmd::Route { router, selector } => {
            let routed = router::route(&Router::load(router)?, &selector.selector()?)?;
            write_json(&routed, None)?;
        }
        Cmd::Eval { base, tuned, pack, probes, seed, out } => {
            let report = toy::eval_retention(
                &Checkpoint::load(base)?,
                &Checkpoint::load(tuned)?,
                &SkillPack::load(pack)?,
                probes,
                seed,
            )?;
            write_json(&report, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error: usage: {}", detail.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
