//! The `binloc` command line. Every numeric output is deterministic given
//! the configuration and seed; wall-clock timings go to `timings.json`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{angular_error, permutation_align, sdr_sir, ResultTable};
use crate::localize::{localize_point, PosteriorGmm};
use crate::manifold::{ltsa_embed, pca_embed, EigenSelection};
use crate::persist::{self, ArrayContainer, ArrayData, RunConfig};
use crate::ppam::{train, PpamModel, TrainOptions};
use crate::spectro::{stft, AudioBuffer, ComplexSpectrogram, ObservationSet};
use crate::synth::{build_training_grid, burst_signal, render_images, white_noise, Scene, SceneSource, VirtualHead};
use crate::vessl::{self, map_estimates, separate, VesslState};

#[derive(Debug, Parser)]
#[command(name = "binloc", version, about = "Binaural sound source localization and separation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true, env = "BINLOC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true, env = "BINLOC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BINLOC_THREADS")]
    pub threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "BINLOC_OUT", default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    /// Continuous white noise.
    Noise,
    /// Sparse band-limited noise bursts.
    Bursts,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene through the virtual head.
    Simulate {
        /// Scene description (JSON); `--source` flags replace its sources.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Source direction `AZ,EL` in degrees; repeat for several sources.
        #[arg(long = "source", value_parser = parse_direction, allow_hyphen_values = true)]
        sources: Vec<[f64; 2]>,
        #[arg(long, value_enum)]
        signal: Option<SignalKind>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Build a training set of mean cues over the configured direction grid.
    Grid,
    /// Cue observations of a stereo recording.
    Extract { wav: PathBuf },
    /// Fit the map on a training set.
    Train {
        trainset: PathBuf,
        /// Component count; defaults to the configured value.
        #[arg(long, conflicts_with = "ladder")]
        k: Option<usize>,
        /// Train every component count of the configured ladder.
        #[arg(long)]
        ladder: bool,
    },
    /// Single-source direction posterior.
    Localize {
        /// Stereo WAV or an observation container.
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Multi-source localization and binary-mask separation.
    Separate {
        wav: PathBuf,
        /// Model files from coarse to fine.
        #[arg(long, num_args = 1.., required = true)]
        models: Vec<PathBuf>,
        /// Number of sources; defaults to the configured value.
        #[arg(long)]
        sources: Option<usize>,
    },
    /// Low-dimensional embedding of the cue vectors of a container.
    Embed {
        input: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Intrinsic dimension.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Output coordinates; defaults to `dim + 1`.
        #[arg(long)]
        out_dim: Option<usize>,
        #[arg(long)]
        pca: bool,
        /// Take the largest instead of the smallest alignment eigenvalues.
        #[arg(long)]
        largest: bool,
    },
    /// Score results against a simulation's ground truth.
    Eval {
        /// Directory holding `localization.json` or `report.json` and any separated WAVs.
        #[arg(long)]
        results: PathBuf,
        /// `truth.json` written by `simulate`.
        #[arg(long)]
        truth: PathBuf,
    },
}

fn parse_direction(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected AZ,EL, got {s}"));
    }
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok([p(parts[0])?, p(parts[1])?])
}

/// Scene description read by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub sources: Vec<[f64; 2]>,
    pub signal: SignalKind,
    pub duration_secs: f64,
    pub noise_level_db: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { sources: vec![[30.0, 0.0]], signal: SignalKind::Bursts, duration_secs: 1.0, noise_level_db: None }
    }
}

/// Ground truth written next to a simulated mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub directions: Vec<[f64; 2]>,
    pub scene: SceneConfig,
    pub config: RunConfig,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    timings: Vec<(String, f64)>,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn timed<T>(&mut self, label: &str, f: impl FnOnce(&Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let v = f(self)?;
        self.timings.push((label.to_string(), t.elapsed().as_secs_f64()));
        Ok(v)
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        std::fs::write(self.path(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name), text)?;
        Ok(())
    }

    fn config_value(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Error::InvalidArgument(e.to_string().trim_end().replace('\n', " "))),
    };
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(n) = cli.global.threads {
        // Fails only when a pool already exists, as in repeated in-process runs.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already configured");
        }
    }
    std::fs::create_dir_all(&cli.global.out)?;
    let mut ctx = Ctx { cfg, out: cli.global.out.clone(), timings: Vec::new() };
    let start = Instant::now();
    match cli.command {
        Command::Simulate { scene, sources, signal, duration } => cmd_simulate(&mut ctx, scene, sources, signal, duration),
        Command::Grid => cmd_grid(&mut ctx),
        Command::Extract { wav } => cmd_extract(&mut ctx, &wav),
        Command::Train { trainset, k, ladder } => cmd_train(&mut ctx, &trainset, k, ladder),
        Command::Localize { input, model } => cmd_localize(&mut ctx, &input, &model),
        Command::Separate { wav, models, sources } => cmd_separate(&mut ctx, &wav, &models, sources),
        Command::Embed { input, k, dim, out_dim, pca, largest } => cmd_embed(&mut ctx, &input, k, dim, out_dim, pca, largest),
        Command::Eval { results, truth } => cmd_eval(&mut ctx, &results, &truth),
    }?;
    ctx.timings.push(("total".into(), start.elapsed().as_secs_f64()));
    let timings: serde_json::Map<String, serde_json::Value> = ctx.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    ctx.write_json("timings.json", &serde_json::Value::Object(timings))
}

fn head(cfg: &RunConfig) -> Result<VirtualHead> {
    VirtualHead::new(cfg.head)
}

fn spectrogram_entry(c: &mut ArrayContainer, name: &str, s: &ComplexSpectrogram) -> Result<()> {
    let data = s.bins.iter().flat_map(|v| [v.re, v.im]).collect();
    c.push_f64(name, &[s.n_frames, s.n_bins, 2], data)
}

fn cmd_simulate(
    ctx: &mut Ctx,
    scene: Option<PathBuf>,
    sources: Vec<[f64; 2]>,
    signal: Option<SignalKind>,
    duration: Option<f64>,
) -> Result<()> {
    let mut sc = match scene {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SceneConfig::default(),
    };
    if !sources.is_empty() {
        sc.sources = sources;
    }
    if let Some(s) = signal {
        sc.signal = s;
    }
    if let Some(d) = duration {
        sc.duration_secs = d;
    }
    if sc.sources.is_empty() || !(sc.duration_secs > 0.0) {
        return Err(Error::Config("a scene needs sources and a positive duration".into()));
    }
    let cfg = ctx.cfg.clone();
    let params = cfg.features.stft;
    let n = (sc.duration_secs * params.sample_rate as f64).round() as usize;
    let scene = Scene {
        sources: sc
            .sources
            .iter()
            .enumerate()
            .map(|(m, &direction)| {
                let seed = cfg.seed.wrapping_add(1 + m as u64);
                let signal = match sc.signal {
                    SignalKind::Noise => white_noise(n, seed).into_iter().map(|v| 0.1 * v).collect(),
                    SignalKind::Bursts => burst_signal(n, params.sample_rate, seed),
                };
                SceneSource { direction, signal }
            })
            .collect(),
        noise_level_db: sc.noise_level_db,
        seed: cfg.seed,
    };
    let (mix, images) = ctx.timed("render", |_| render_images(&head(&cfg)?, &scene, &params))?;
    persist::write_wav(&ctx.path("mixture.wav"), &mix)?;
    let mut spectra = cfg.container();
    for (m, img) in images.iter().enumerate() {
        persist::write_wav(&ctx.path(&format!("image_{m}.wav")), img)?;
        let (l, r) = stft(img, &params)?;
        spectrogram_entry(&mut spectra, &format!("source{m}_left"), &l)?;
        spectrogram_entry(&mut spectra, &format!("source{m}_right"), &r)?;
    }
    spectra.save(&ctx.path("truth.bin"))?;
    let truth = Truth { directions: sc.sources.clone(), scene: sc, config: cfg };
    ctx.write_json("truth.json", &serde_json::to_value(&truth)?)
}

fn cmd_grid(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let set = ctx.timed("grid", |_| build_training_grid(&head(&cfg)?, &cfg.grid, &cfg.features, cfg.seed))?;
    let mut c = cfg.container();
    persist::trainset_to_container(&set, &mut c)?;
    c.save(&ctx.path("trainset.bin"))
}

fn cmd_extract(ctx: &mut Ctx, wav: &Path) -> Result<()> {
    let audio = persist::read_wav(wav)?;
    let (ispec, obs) = ctx.timed("extract", |c| c.cfg.features.extract(&audio))?;
    let mut c = ctx.cfg.container();
    persist::observations_to_container(&obs, &mut c)?;
    c.save(&ctx.path("observations.bin"))?;
    ctx.write_json(
        "extract.json",
        &json!({
            "frames": obs.n_frames(),
            "dimension": obs.dim(),
            "missing_fraction": ispec.missing_fraction(),
            "config": ctx.config_value(),
        }),
    )
}

fn cmd_train(ctx: &mut Ctx, trainset: &Path, k: Option<usize>, ladder: bool) -> Result<()> {
    let c = ArrayContainer::load(trainset)?;
    c.require_fingerprint(&ctx.cfg.fingerprint())?;
    let set = persist::trainset_from_container(&c)?;
    let counts = if ladder { ctx.cfg.ladder.clone() } else { vec![k.unwrap_or(ctx.cfg.train.n_components)] };
    let mut reports = Vec::new();
    for kk in counts {
        let opts = TrainOptions { n_components: kk, seed: ctx.cfg.seed, ..ctx.cfg.train };
        let (model, report) = ctx.timed(&format!("train_k{kk}"), |_| train(&set, &opts))?;
        let mut out = ctx.cfg.container();
        persist::model_to_container(&model, &mut out)?;
        out.save(&ctx.path(&format!("model_k{kk}.bin")))?;
        reports.push(json!({
            "requested_components": kk,
            "components": model.n_components(),
            "iterations": report.iterations,
            "converged": report.converged,
            "log_likelihood": report.log_likelihood,
            "removed_components": report.removed_components,
        }));
    }
    ctx.write_json("train_report.json", &json!({ "models": reports, "config": ctx.config_value() }))
}

fn load_model(ctx: &Ctx, path: &Path) -> Result<PpamModel> {
    let c = ArrayContainer::load(path)?;
    c.require_fingerprint(&ctx.cfg.fingerprint())?;
    persist::model_from_container(&c)
}

/// Observations from a WAV file or an observation container.
fn load_observations(ctx: &Ctx, input: &Path) -> Result<ObservationSet> {
    let bytes = std::fs::read(input)?;
    if bytes.starts_with(persist::MAGIC) {
        persist::observations_from_container(&ArrayContainer::from_bytes(&bytes)?, &ctx.cfg.features)
    } else {
        Ok(ctx.cfg.features.extract(&persist::read_wav(input)?)?.1)
    }
}

fn posterior_table(post: &PosteriorGmm, step: f64) -> Result<String> {
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    };
    let az = axis(crate::synth::AZIMUTH_RANGE.0, crate::synth::AZIMUTH_RANGE.1);
    let el = axis(crate::synth::ELEVATION_RANGE.0, crate::synth::ELEVATION_RANGE.1);
    let dens = post.density_grid(&az, &el)?;
    let mut s = String::from("azimuth\televation\tdensity\n");
    for (i, a) in az.iter().enumerate() {
        for (j, e) in el.iter().enumerate() {
            let _ = writeln!(s, "{a}\t{e}\t{:.9e}", dens[i * el.len() + j]);
        }
    }
    Ok(s)
}

fn posterior_json(post: &PosteriorGmm) -> serde_json::Value {
    json!({
        "weights": post.rho,
        "means": post.means.iter().map(|m| m.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "covariances": post.covs.iter().map(|c| c.transpose().as_slice().to_vec()).collect::<Vec<_>>(),
    })
}

fn cmd_localize(ctx: &mut Ctx, input: &Path, model: &Path) -> Result<()> {
    let model = load_model(ctx, model)?;
    let obs = load_observations(ctx, input)?;
    let (x, post) = ctx.timed("localize", |_| localize_point(&model, &obs))?;
    ctx.write_text("posterior.tsv", &posterior_table(&post, ctx.cfg.posterior_step)?)?;
    ctx.write_text("localization.tsv", &format!("azimuth\televation\n{}\t{}\n", x[0], x[1]))?;
    ctx.write_json(
        "localization.json",
        &json!({
            "directions": [[x[0], x[1]]],
            "posterior": posterior_json(&post),
            "config": ctx.config_value(),
        }),
    )
}

fn cmd_separate(ctx: &mut Ctx, wav: &Path, models: &[PathBuf], sources: Option<usize>) -> Result<()> {
    let ladder = models.iter().map(|p| load_model(ctx, p)).collect::<Result<Vec<_>>>()?;
    let audio = persist::read_wav(wav)?;
    let features = ctx.cfg.features;
    let (_, obs) = features.extract(&audio)?;
    let opts = vessl::VesslOptions { n_sources: sources.unwrap_or(ctx.cfg.vessl.n_sources), seed: ctx.cfg.seed, ..ctx.cfg.vessl };
    let state: VesslState = ctx.timed("vessl", |_| vessl::run(&ladder, &obs, &opts))?;
    let map = map_estimates(&state.qxz, &state.qw)?;
    let (l, r) = stft(&audio, &features.stft)?;
    let outputs: Vec<AudioBuffer> = ctx.timed("resynthesis", |_| separate(&l, &r, &map, &obs.dims, audio.len()))?;
    let mut masks = ctx.cfg.container();
    for (m, out) in outputs.iter().enumerate() {
        persist::write_wav(&ctx.path(&format!("source_{m}.wav")), out)?;
        let mask = map.spectrogram_mask(&obs.dims, l.n_bins, m)?;
        masks.push(&format!("mask{m}"), &[l.n_frames, l.n_bins], ArrayData::U8(mask.iter().map(|&v| v as u8).collect()))?;
        ctx.write_text(&format!("posterior_{m}.tsv"), &posterior_table(&state.qxz.sources[m], ctx.cfg.posterior_step)?)?;
    }
    masks.save(&ctx.path("masks.bin"))?;
    let dirs: Vec<[f64; 2]> = map.sources.iter().map(|s| [s.direction[0], s.direction[1]]).collect();
    let mut tsv = String::from("source\tazimuth\televation\tcomponent\n");
    for (m, s) in map.sources.iter().enumerate() {
        let _ = writeln!(tsv, "{m}\t{}\t{}\t{}", s.direction[0], s.direction[1], s.component);
    }
    ctx.write_text("directions.tsv", &tsv)?;
    ctx.write_json(
        "report.json",
        &json!({
            "directions": dirs,
            "components": map.sources.iter().map(|s| s.component).collect::<Vec<_>>(),
            "scales": state.traces,
            "config": ctx.config_value(),
        }),
    )
}

fn cmd_embed(ctx: &mut Ctx, input: &Path, k: usize, dim: usize, out_dim: Option<usize>, pca: bool, largest: bool) -> Result<()> {
    let c = ArrayContainer::load(input)?;
    let e = c.get("y")?;
    let rows = match (&e.data, e.shape.as_slice()) {
        // training sets store y as D×N, observations as T×D
        (ArrayData::F64(v), [a, b]) if c.get("x").is_ok() => nalgebra::DMatrix::from_row_slice(*a, *b, v).transpose(),
        (ArrayData::F64(v), [a, b]) => nalgebra::DMatrix::from_row_slice(*a, *b, v),
        _ => return Err(Error::Format("entry y must be a 2-D f64 array".into())),
    };
    let out_dim = out_dim.unwrap_or(dim + 1);
    let emb = ctx.timed("embed", |_| {
        if pca {
            pca_embed(&rows, out_dim).map(|p| p.embedding)
        } else {
            let sel = if largest { EigenSelection::Largest } else { EigenSelection::Smallest };
            ltsa_embed(&rows, k, dim, out_dim, sel)
        }
    })?;
    let mut s = String::from("index");
    for j in 0..out_dim {
        let _ = write!(s, "\tc{j}");
    }
    s.push('\n');
    for (r, &i) in emb.kept_indices.iter().enumerate() {
        let _ = write!(s, "{i}");
        for j in 0..out_dim {
            let _ = write!(s, "\t{:.9e}", emb.coords[(r, j)]);
        }
        s.push('\n');
    }
    ctx.write_text("embedding.tsv", &s)?;
    ctx.write_json("embedding.json", &json!({ "eigenvalues": emb.eigvals, "excluded": emb.excluded, "config": ctx.config_value() }))
}

fn cmd_eval(ctx: &mut Ctx, results: &Path, truth_path: &Path) -> Result<()> {
    let truth: Truth = serde_json::from_str(&std::fs::read_to_string(truth_path)?)?;
    let report_path = [results.join("report.json"), results.join("localization.json")]
        .into_iter()
        .find(|p| p.exists())
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "no report.json or localization.json in results")))?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report_path)?)?;
    let est: Vec<[f64; 2]> = serde_json::from_value(report["directions"].clone())?;
    let truth_dir = truth_path.parent().unwrap_or(Path::new("."));
    let (est, truths) = if est.len() == truth.directions.len() {
        let perm = permutation_align(&est, &truth.directions)?;
        (perm.iter().map(|&p| est[p]).collect::<Vec<_>>(), truth.directions.clone())
    } else if est.len() == 1 {
        // one estimate scored against the closest true source
        let best = truth
            .directions
            .iter()
            .min_by(|a, b| {
                let (x, y) = angular_error(est[0], **a);
                let (u, v) = angular_error(est[0], **b);
                (x + y).total_cmp(&(u + v))
            })
            .copied()
            .expect("truth has sources");
        (est, vec![best])
    } else {
        return Err(Error::Shape(format!("{} estimates for {} true sources", est.len(), truth.directions.len())));
    };
    let mut table = ResultTable::new(&["az_err", "el_err", "sdr_db", "sir_db", "mixture_sdr_db"]);
    let images: Vec<AudioBuffer> = (0..truth.directions.len())
        .map(|m| persist::read_wav(&truth_dir.join(format!("image_{m}.wav"))))
        .collect::<Result<_>>()
        .unwrap_or_default();
    let mixture = persist::read_wav(&truth_dir.join("mixture.wav")).ok();
    let perm = if est.len() == truth.directions.len() {
        permutation_align(&serde_json::from_value::<Vec<[f64; 2]>>(report["directions"].clone())?, &truth.directions)?
    } else {
        vec![0]
    };
    for (i, (e, t)) in est.iter().zip(&truths).enumerate() {
        let (az, el) = angular_error(*e, *t);
        let mut row = vec![az, el, f64::NAN, f64::NAN, f64::NAN];
        let sep = results.join(format!("source_{}.wav", perm[i]));
        if images.len() == truth.directions.len() && sep.exists() {
            let target = &images[i];
            let others: Vec<AudioBuffer> = images.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, a)| a.clone()).collect();
            let s = sdr_sir(&persist::read_wav(&sep)?, target, &others)?;
            row[2] = s.sdr_db;
            row[3] = s.sir_db;
            if let Some(mix) = &mixture {
                row[4] = sdr_sir(mix, target, &others)?.sdr_db;
            }
        }
        table.push(format!("source{i}"), row)?;
    }
    ctx.write_text("metrics.tsv", &table.to_tsv())?;
    let rows: Vec<serde_json::Value> = table.rows.iter().map(|(l, v)| json!({ "label": l, "values": v.iter().map(|x| if x.is_finite() { json!(x) } else { serde_json::Value::Null }).collect::<Vec<_>>() })).collect();
    ctx.write_json("metrics.json", &json!({ "columns": table.columns, "rows": rows, "truth": truth.directions }))
}
