//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    derive_seed, ingest, load_cloud, load_repository, make_toy_repository, save_cloud, save_repository, ToyFamily,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, retrieve_nearest, ExtractorConfig, FeatureExtractor, Metric, MetricsReport};
use crate::geometry::PointCloud;
use crate::manipulation::{interp_part, interp_shape, SelectionMask};
use crate::service::http::HttpServer;
use crate::service::SessionManager;
use crate::sphere::{pack_perpoint, pack_uniform, sample_code, PriorKind};
use crate::training::{
    load_checkpoint, save_checkpoint, train, Checkpoint, IterationStats, TrainingConfig, TrainingObserver,
};

/// Selects the compute device; only `cpu` is available.
pub const DEVICE_ENV: &str = "SPGAN_DEVICE";
pub const CHECKPOINT_FILE: &str = "checkpoint.spck";

#[derive(Parser, Debug)]
#[command(name = "spgan", version, about = "Sphere-guided point cloud generation and editing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample OBJ meshes into a normalized point cloud repository.
    Ingest {
        /// Directory searched recursively for .obj files.
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2048)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a procedural toy repository.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated families (ellipsoid, legged_box).
        #[arg(long, default_value = "ellipsoid,legged_box")]
        families: String,
    },
    /// Train a generator/discriminator pair on a repository.
    Train(TrainArgs),
    /// Generate shapes from random latent codes.
    Generate {
        /// Checkpoint file or a directory containing checkpoint.spck.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shape-wise (or, with --indices, part-wise) interpolation sequence.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed_a: u64,
        #[arg(long)]
        seed_b: u64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Prior point indices to blend, e.g. `0-99,200`; all when absent.
        #[arg(long)]
        indices: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// MMD / COV / FPD between a generated set and a reference repository.
    Evaluate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "mmd,cov,fpd")]
        metrics: String,
        /// JSON report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV file to append one table row to.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        extractor_seed: u64,
    },
    /// Nearest repository shapes by Chamfer distance.
    Retrieve {
        /// An SPPC file or a directory of them.
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        repo: PathBuf,
        #[arg(long, default_value_t = crate::evaluation::DEFAULT_RETRIEVAL_K)]
        k: usize,
    },
    /// Serve editing sessions over HTTP.
    Serve {
        /// Checkpoint files or directories; the id is the file stem or
        /// directory name. Repeatable.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Full-size widths.
    Full,
    /// Reduced widths for CPU runs.
    Desk,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Sphere,
    Cube,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Base configuration that the flags below override.
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d_lr: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sphere_seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    #[arg(long)]
    pub no_attention: bool,
    #[arg(long)]
    pub no_adain: bool,
    #[arg(long)]
    pub no_point_score: bool,
}

impl TrainArgs {
    pub fn config(&self) -> TrainingConfig {
        let mut c = match self.preset {
            Preset::Full => TrainingConfig::default(),
            Preset::Desk => TrainingConfig::desk(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {$(
                if let Some(v) = self.$flag { c.$field = v; }
            )*};
        }
        set!(epochs => epochs, lr => learning_rate, k => k, n => n_points, latent_dim => latent_dim,
             batch_size => batch_size, lambda => lambda, beta => beta, adam_beta1 => adam_beta1,
             adam_beta2 => adam_beta2, seed => seed, sphere_seed => sphere_seed,
             checkpoint_every => checkpoint_every);
        if self.max_iterations.is_some() {
            c.max_iterations = self.max_iterations;
        }
        if self.d_lr.is_some() {
            c.discriminator_learning_rate = self.d_lr;
        }
        if let Some(p) = self.prior {
            c.prior_kind = match p {
                PriorArg::Sphere => PriorKind::Sphere,
                PriorArg::Cube => PriorKind::Cube,
            };
        }
        c.use_attention &= !self.no_attention;
        c.use_adain &= !self.no_adain;
        c.use_point_score &= !self.no_point_score;
        c
    }
}

fn check_device() -> Result<()> {
    match std::env::var(DEVICE_ENV) {
        Ok(v) if !v.is_empty() && !v.eq_ignore_ascii_case("cpu") => Err(Error::invalid(
            "device",
            format!("{DEVICE_ENV}={v} is not available; only `cpu` is supported"),
        )),
        _ => Ok(()),
    }
}

/// Accepts a checkpoint file or a directory holding [`CHECKPOINT_FILE`].
pub fn resolve_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_path_buf()
    }
}

/// `"0-3,7"` -> `[0, 1, 2, 3, 7]`.
pub fn parse_indices(s: &str) -> Result<Vec<usize>> {
    let bad = |part: &str| Error::invalid("indices", format!("cannot parse `{part}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad(part))?;
                let b: usize = b.trim().parse().map_err(|_| bad(part))?;
                if b < a {
                    return Err(bad(part));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    Ok(out)
}

fn shape_file(dir: &Path, prefix: &str, i: usize) -> PathBuf {
    dir.join(format!("{prefix}-{i:05}.sppc"))
}

struct CliObserver {
    log: fs::File,
    out: PathBuf,
    total: u64,
}

impl TrainingObserver for CliObserver {
    fn on_iteration(&mut self, s: &IterationStats) {
        let _ = writeln!(
            self.log,
            "{},{},{},{},{}",
            s.iteration, s.epoch, s.loss_d, s.loss_g, s.collapse_run
        );
        if s.iteration % 100 == 0 || s.iteration == self.total {
            info!(
                "iter {}/{} epoch {} loss_d {:.5} loss_g {:.5}",
                s.iteration, self.total, s.epoch, s.loss_d, s.loss_g
            );
        }
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        save_checkpoint(ckpt, &self.out.join(format!("ckpt-{:07}.spck", ckpt.iteration)))
    }
}

fn write_manifest(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text: String = ckpt.manifest().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

fn load_clouds(path: &Path) -> Result<Vec<(String, PointCloud)>> {
    if path.is_dir() {
        let repo = load_repository(path)?;
        Ok(repo.entries().iter().map(|e| (e.id.clone(), e.cloud.clone())).collect())
    } else {
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(vec![(name, load_cloud(path)?)])
    }
}

fn execute(cmd: Command) -> Result<()> {
    check_device()?;
    match cmd {
        Command::Ingest { meshes, out, n, seed } => {
            let repo = ingest(&meshes, n, seed)?;
            let manifest = save_repository(&repo, &out)?;
            println!("ingested {} shapes into {}", manifest.entries.len(), out.display());
        }
        Command::ToyData {
            out,
            count,
            n,
            seed,
            families,
        } => {
            let fams = families
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| ToyFamily::parse(s.trim()))
                .collect::<Result<Vec<_>>>()?;
            let repo = make_toy_repository(&fams, count, n, seed)?;
            save_repository(&repo, &out)?;
            println!("wrote {} toy shapes to {}", repo.len(), out.display());
        }
        Command::Train(args) => {
            let config = args.config();
            config.validate()?;
            let repo = load_repository(&args.data)?;
            fs::create_dir_all(&args.out)?;
            let mut log = fs::File::create(args.out.join("losses.csv"))?;
            writeln!(log, "iteration,epoch,loss_d,loss_g,collapse_run")?;
            let total = config.total_iterations(repo.len());
            let mut obs = CliObserver {
                log,
                out: args.out.clone(),
                total,
            };
            let ckpt = train(config, &repo.clouds(), &mut obs)?;
            save_checkpoint(&ckpt, &args.out.join(CHECKPOINT_FILE))?;
            write_manifest(&ckpt, &args.out.join("manifest.txt"))?;
            println!("trained {} iterations; checkpoint in {}", ckpt.iteration, args.out.display());
        }
        Command::Generate { ckpt, count, seed, out } => {
            let ckpt = load_checkpoint(&resolve_checkpoint(&ckpt))?;
            fs::create_dir_all(&out)?;
            for (i, cloud) in ckpt.sample(count, seed)?.iter().enumerate() {
                save_cloud(cloud, &shape_file(&out, "gen", i))?;
            }
            println!("wrote {count} shapes to {}", out.display());
        }
        Command::Interpolate {
            ckpt,
            seed_a,
            seed_b,
            steps,
            indices,
            out,
        } => {
            if steps < 2 {
                return Err(Error::invalid("steps", "need at least 2 steps"));
            }
            let ckpt = load_checkpoint(&resolve_checkpoint(&ckpt))?;
            let sphere = ckpt.sphere()?;
            let d = ckpt.latent_dim();
            let za = sample_code(d, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed_a, "interp")))?;
            let zb = sample_code(d, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed_b, "interp")))?;
            fs::create_dir_all(&out)?;
            let mask = indices
                .map(|s| SelectionMask::new(sphere.n(), parse_indices(&s)?))
                .transpose()?;
            let (ca, cb) = (pack_uniform(&sphere, &za), pack_uniform(&sphere, &zb));
            for i in 0..steps {
                let alpha = i as f64 / (steps - 1) as f64;
                let m = match &mask {
                    Some(mask) => pack_perpoint(&sphere, interp_part(ca.codes(), cb.codes(), mask, alpha)?)?,
                    None => pack_uniform(&sphere, &interp_shape(&za, &zb, alpha)?),
                };
                save_cloud(&ckpt.generator.generate(&m)?, &shape_file(&out, "interp", i))?;
            }
            println!("wrote {steps} interpolation steps to {}", out.display());
        }
        Command::Evaluate {
            gen,
            reference,
            metrics,
            out,
            table,
            extractor_seed,
        } => {
            let metrics = Metric::parse_list(&metrics)?;
            let gen: Vec<PointCloud> = load_clouds(&gen)?.into_iter().map(|(_, c)| c).collect();
            let ref_repo = load_repository(&reference)?;
            let fx = if metrics.contains(&Metric::Fpd) {
                let cfg = ExtractorConfig {
                    seed: extractor_seed,
                    ..ExtractorConfig::default()
                };
                Some(FeatureExtractor::for_repository(&ref_repo, &cfg)?)
            } else {
                None
            };
            let report = evaluate(&gen, &ref_repo.clouds(), &metrics, fx.as_ref())?;
            match out {
                Some(p) => {
                    fs::write(&p, report.to_json())?;
                    println!("{report}");
                }
                None => println!("{}", report.to_json()),
            }
            if let Some(t) = table {
                let fresh = !t.exists();
                let mut f = fs::OpenOptions::new().create(true).append(true).open(&t)?;
                if fresh {
                    writeln!(f, "{}", MetricsReport::TABLE_HEADER)?;
                }
                writeln!(f, "{}", report.table_row())?;
            }
        }
        Command::Retrieve { query, repo, k } => {
            let repo = load_repository(&repo)?;
            for (name, cloud) in load_clouds(&query)? {
                for (rank, hit) in retrieve_nearest(&cloud, &repo, k)?.iter().enumerate() {
                    println!("{name}\t{}\t{}\t{:.6e}", rank + 1, hit.id, hit.distance);
                }
            }
        }
        Command::Serve {
            ckpt,
            addr,
            workers,
            seed,
        } => {
            let mut manager = SessionManager::new(seed);
            for p in &ckpt {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::invalid("ckpt", format!("no name in {}", p.display())))?;
                manager.add_checkpoint(id.clone(), &load_checkpoint(&resolve_checkpoint(p))?)?;
                info!("loaded checkpoint `{id}`");
            }
            let server = HttpServer::start(&addr, Arc::new(Mutex::new(manager)), workers)?;
            println!("listening on http://{}", server.local_addr().map_or(addr, |a| a.to_string()));
            server.join();
        }
    }
    Ok(())
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let line = serde_json::json!({ "error": { "code": e.kind().code(), "message": e.to_string() } });
            eprintln!("{line}");
            1
        }
    }
}
