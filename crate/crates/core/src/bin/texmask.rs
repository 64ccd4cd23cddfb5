use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use texmask::config::RunConfig;
use texmask::error::{Error, Result};
use texmask::experiment::{self, CompareConfig};
use texmask::io::{sidecar_path, write_text};
use texmask::mask::{expand_mask, generate_mask, mask_coverage_stats, patch_scores, TauMode};
use texmask::metrics::{evaluate, SegPair, DEFAULT_EPS};
use texmask::phantom::{make_phantom, PhantomKind, PhantomSpec};
use texmask::preprocess::{pad_to_multiple, preprocess, resample_isotropic, Normalization, PreprocessConfig};
use texmask::recon::MaskInput;
use texmask::render::{render_slice, save_png};
use texmask::texture::{compute_variation_map, CueNormalization, PartialGroupMode, VariationMap};
use texmask::train::{loss_trace_tsv, pretrain_toy, save_weights, Optimizer};
use texmask::{load_volume, save_volume, Volume3D};

#[derive(Parser)]
#[command(name = "texmask", version, about = "Texture-aware patch masking for 3D volumes")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed (mask and weight init). Overrides the config file.
    #[arg(long, global = true, env = "TEXMASK_SEED")]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "TEXMASK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clip to the HU window, normalize and resample to isotropic spacing
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        pre: PreArgs,
    },
    /// Compute the texture-variation map of a volume
    Tvm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        tvm: TvmArgs,
    },
    /// Draw a texture-guided patch mask
    Mask {
        #[arg(long)]
        volume: PathBuf,
        /// Precomputed variation map; computed from the volume when absent.
        #[arg(long)]
        tvm: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Zero-pad the volume (and map) up to a multiple of the patch size.
        #[arg(long)]
        pad_to_patch: bool,
        #[command(flatten)]
        tvm_args: TvmArgs,
        #[command(flatten)]
        mask: MaskArgs,
    },
    /// Train the toy masked autoencoder on every volume in a directory
    PretrainToy {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        pad_to_patch: bool,
        #[command(flatten)]
        tvm: TvmArgs,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Dice, IoU and HD95 between a prediction and a ground-truth mask
    EvalMetrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Spacing in mm as `s0,s1,s2`; defaults to the file spacing.
        #[arg(long, value_parser = parse_triple_f64)]
        spacing: Option<[f64; 3]>,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
    },
    /// Write a synthetic phantom volume and its label
    Phantom {
        #[arg(long, value_enum)]
        kind: PhantomArg,
        #[arg(long, value_parser = parse_triple_usize, default_value = "64,64,64")]
        dims: [usize; 3],
        #[arg(long, value_parser = parse_triple_f64, default_value = "1,1,1")]
        spacing: [f64; 3],
        /// Noise amplitude in HU; defaults to the kind's standard value.
        #[arg(long)]
        noise: Option<f32>,
        /// Value of a constant phantom.
        #[arg(long, default_value_t = 0.0)]
        value: f32,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        label: PathBuf,
    },
    /// Texture-guided versus random masking over seeds, ratios and betas
    CompareMasking {
        /// Input volumes; the textured phantom set is used when none are given.
        #[arg(long, num_args = 1..)]
        volumes: Vec<PathBuf>,
        #[arg(long, value_parser = parse_triple_usize, default_value = "64,64,64")]
        phantom_dims: [usize; 3],
        /// Number of seeds, starting at the global seed.
        #[arg(long, default_value_t = 10)]
        n_seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.75])]
        ratios: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.65])]
        betas: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        tvm: TvmArgs,
        #[command(flatten)]
        mask: MaskArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Print the effective configuration as TOML
    DumpConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomArg {
    Constant,
    SphereShell,
    Tube,
    TexturedBlock,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    UnitRange,
    ZeroMeanUnitVar,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartialArg {
    PaperLiteralZero,
    ProcessRemainder,
}

#[derive(Clone, Copy, ValueEnum)]
enum CueNormArg {
    PerSlice,
    PerVolume,
}

#[derive(Clone, Copy, ValueEnum)]
enum TauModeArg {
    Fixed,
    Quantile,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adamw,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskInputArg {
    Token,
    Zero,
}

#[derive(Args, Default)]
struct PreArgs {
    #[arg(long)]
    hu_lo: Option<f64>,
    #[arg(long)]
    hu_hi: Option<f64>,
    #[arg(long, value_enum)]
    normalization: Option<NormArg>,
    /// Isotropic spacing in mm, or `none` to keep the input grid.
    #[arg(long, value_parser = parse_spacing)]
    target_spacing: Option<TargetSpacing>,
}

#[derive(Args, Default)]
struct TvmArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Variance window (odd).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, value_enum)]
    partial_group: Option<PartialArg>,
    #[arg(long, value_enum)]
    cue_normalization: Option<CueNormArg>,
}

#[derive(Args, Default)]
struct MaskArgs {
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    tau_mode: Option<TauModeArg>,
}

#[derive(Args, Default)]
struct TrainArgs {
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, value_enum)]
    mask_input: Option<MaskInputArg>,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got `{s}`"));
    }
    let p = |i: usize| parts[i].parse::<T>().map_err(|_| format!("bad value `{}`", parts[i]));
    Ok([p(0)?, p(1)?, p(2)?])
}

fn parse_triple_f64(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_triple_usize(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_triple(s)
}

#[derive(Clone, Copy)]
struct TargetSpacing(Option<f64>);

fn parse_spacing(s: &str) -> std::result::Result<TargetSpacing, String> {
    if s.eq_ignore_ascii_case("none") {
        Ok(TargetSpacing(None))
    } else {
        s.parse()
            .map(|v| TargetSpacing(Some(v)))
            .map_err(|_| format!("expected a spacing or `none`, got `{s}`"))
    }
}

impl PreArgs {
    fn apply(&self, c: &mut PreprocessConfig) {
        if let Some(v) = self.hu_lo {
            c.hu_window[0] = v;
        }
        if let Some(v) = self.hu_hi {
            c.hu_window[1] = v;
        }
        if let Some(n) = self.normalization {
            c.normalization = match n {
                NormArg::UnitRange => Normalization::UnitRange,
                NormArg::ZeroMeanUnitVar => Normalization::ZeroMeanUnitVar,
            };
        }
        if let Some(TargetSpacing(t)) = self.target_spacing {
            c.target_spacing = t;
        }
    }
}

impl TvmArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.tvm;
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.stride {
            c.stride = v;
        }
        if let Some(v) = self.window {
            c.var_window = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(p) = self.partial_group {
            c.partial_group = match p {
                PartialArg::PaperLiteralZero => PartialGroupMode::PaperLiteralZero,
                PartialArg::ProcessRemainder => PartialGroupMode::ProcessRemainder,
            };
        }
        if let Some(n) = self.cue_normalization {
            c.cue_normalization = match n {
                CueNormArg::PerSlice => CueNormalization::PerSlice,
                CueNormArg::PerVolume => CueNormalization::PerVolume,
            };
        }
    }
}

impl MaskArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.mask;
        if let Some(v) = self.patch_size {
            c.patch_size = v;
        }
        if let Some(v) = self.ratio {
            c.mask_ratio = v;
        }
        if let Some(v) = self.beta {
            c.high_var_fraction = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(m) = self.tau_mode {
            c.tau_mode = match m {
                TauModeArg::Fixed => TauMode::Fixed,
                TauModeArg::Quantile => TauMode::Quantile,
            };
        }
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.train;
        if let Some(v) = self.steps {
            c.steps = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(o) = self.optimizer {
            c.optimizer = match o {
                OptimizerArg::Sgd => Optimizer::Sgd,
                OptimizerArg::Adamw => match c.optimizer {
                    a @ Optimizer::AdamW { .. } => a,
                    Optimizer::Sgd => Optimizer::adamw_default(),
                },
            };
        }
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
        }
        if let Some(m) = self.mask_input {
            c.mask_input = match m {
                MaskInputArg::Token => MaskInput::Token,
                MaskInputArg::Zero => MaskInput::Zero,
            };
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.apply_global_seed();
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn pad_if(v: Volume3D, pad: bool, patch: usize) -> Result<(Volume3D, [usize; 3])> {
    if pad {
        pad_to_multiple(&v, patch)
    } else {
        let dims = v.dims();
        Ok((v, dims))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidConfig {
                field: "threads",
                reason: "must be positive".into(),
            });
        }
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = base_config(&cli)?;
    match cli.command {
        Command::Preprocess { input, output, pre } => {
            pre.apply(&mut cfg.preprocess);
            cfg.preprocess.validate()?;
            let out = preprocess(&load_volume(&input)?, &cfg.preprocess)?;
            for w in &out.warnings {
                warn!("{}: {w:?}", input.display());
            }
            let vol = match cfg.preprocess.target_spacing {
                Some(t) => resample_isotropic(&out.volume, t)?,
                None => out.volume,
            };
            save_volume(&vol, &output)?;
            println!("dims={:?} spacing={:?}", vol.dims(), vol.spacing());
        }
        Command::Tvm { input, output, tvm } => {
            tvm.apply(&mut cfg);
            let map = compute_variation_map(&load_volume(&input)?, &cfg.tvm)?;
            save_volume(&map.to_volume()?, &output)?;
            println!("max={:.6} normalized={}", map.max(), map.normalized);
        }
        Command::Mask {
            volume,
            tvm,
            out_dir,
            pad_to_patch,
            tvm_args,
            mask,
        } => {
            tvm_args.apply(&mut cfg);
            mask.apply(&mut cfg);
            cfg.validate()?;
            let patch = cfg.mask.patch_size;
            let (vol, orig) = pad_if(load_volume(&volume)?, pad_to_patch, patch)?;
            let map = match &tvm {
                Some(p) => {
                    let m = load_volume(p)?;
                    m.same_dims(&load_volume(&volume)?, "variation map vs volume")?;
                    let (m, _) = pad_if(m, pad_to_patch, patch)?;
                    VariationMap::from_volume(&m)?
                }
                None => compute_variation_map(&vol, &cfg.tvm)?,
            };
            let scores = patch_scores(&map, patch)?;
            let pm = generate_mask(&scores, &cfg.mask)?;
            let cov = mask_coverage_stats(&pm, &scores, pm.tau)?;
            create_dir(&out_dir)?;
            let bits: Vec<u8> = pm.bits.iter().map(|&b| b as u8).collect();
            let patch_path = out_dir.join("patch_mask.u8");
            std::fs::write(&patch_path, &bits).map_err(|e| Error::Io {
                path: patch_path.clone(),
                source: e,
            })?;
            write_text(
                &sidecar_path(&patch_path),
                &format!(
                    "format = \"patch_mask\"\ndtype = \"uint8\"\ngrid_dims = {:?}\npatch_size = {}\noriginal_dims = {:?}\nseed = {}\nm = {}\nm_h = {}\nm_r = {}\nn_high = {}\ntau = {}\n",
                    pm.grid_dims, pm.patch_size, orig, cfg.mask.seed, pm.m, pm.m_h, pm.m_r, pm.n_high, pm.tau
                ),
            )?;
            let voxel = expand_mask(&pm)?.with_spacing(vol.spacing())?;
            save_volume(&voxel, out_dir.join("voxel_mask.raw"))?;
            println!(
                "n_patches={} n_high={} tau={:.6} m={} m_h={} m_r={} masked_high={}",
                cov.n_patches, cov.n_high, pm.tau, pm.m, pm.m_h, pm.m_r, cov.masked_high
            );
        }
        Command::PretrainToy {
            data_dir,
            out_dir,
            pad_to_patch,
            tvm,
            mask,
            train,
        } => {
            tvm.apply(&mut cfg);
            mask.apply(&mut cfg);
            train.apply(&mut cfg);
            cfg.validate()?;
            let vols = load_dir(&data_dir)?
                .into_iter()
                .map(|(_, v)| pad_if(v, pad_to_patch, cfg.mask.patch_size).map(|p| p.0))
                .collect::<Result<Vec<_>>>()?;
            info!("training on {} volumes", vols.len());
            let out = pretrain_toy(&vols, &cfg.tvm, &cfg.mask, &cfg.train)?;
            create_dir(&out_dir)?;
            write_text(&out_dir.join("loss_trace.tsv"), &loss_trace_tsv(&out.loss_trace))?;
            save_weights(&out.model, &out_dir.join("weights.raw"))?;
            let first = out.loss_trace.first().copied().unwrap_or(f64::NAN);
            let last = out.loss_trace.last().copied().unwrap_or(f64::NAN);
            println!("steps={} initial_loss={first:.9e} final_loss={last:.9e}", out.loss_trace.len());
        }
        Command::EvalMetrics { pred, gt, spacing, eps } => {
            let (mut p, mut g) = (load_volume(&pred)?, load_volume(&gt)?);
            if let Some(s) = spacing {
                p = p.with_spacing(s)?;
                g = g.with_spacing(s)?;
            }
            print!("{}", evaluate(&SegPair::new(p, g)?, eps).to_tsv());
        }
        Command::Phantom {
            kind,
            dims,
            spacing,
            noise,
            value,
            output,
            label,
        } => {
            let seed = cfg.seed.unwrap_or(0);
            let set = PhantomSpec::textured_set(dims, seed);
            let pick = |name: &str| set.iter().find(|(n, _)| n == name).unwrap().1.clone();
            let mut spec = match kind {
                PhantomArg::Constant => PhantomSpec {
                    kind: PhantomKind::Constant { value },
                    dims,
                    spacing,
                    noise_amplitude: 0.0,
                    seed,
                },
                PhantomArg::SphereShell => pick("sphere_shell"),
                PhantomArg::Tube => pick("tube"),
                PhantomArg::TexturedBlock => pick("textured_block"),
            };
            spec.spacing = spacing;
            if let Some(n) = noise {
                spec.noise_amplitude = n;
            }
            let ph = make_phantom(&spec)?;
            save_volume(&ph.volume, &output)?;
            save_volume(&ph.label, &label)?;
            println!("dims={:?} label_voxels={}", dims, ph.label.count_on());
        }
        Command::CompareMasking {
            volumes,
            phantom_dims,
            n_seeds,
            ratios,
            betas,
            out_dir,
            tvm,
            mask,
            train,
        } => {
            if train.steps.is_none() {
                cfg.train.steps = 0;
            }
            tvm.apply(&mut cfg);
            mask.apply(&mut cfg);
            train.apply(&mut cfg);
            cfg.validate()?;
            let base_seed = cfg.seed.unwrap_or(cfg.mask.seed);
            // clipped and normalized but kept on their own grid
            let pre = PreprocessConfig {
                target_spacing: None,
                ..cfg.preprocess.clone()
            };
            let raw: Vec<(String, Volume3D)> = if volumes.is_empty() {
                PhantomSpec::textured_set(phantom_dims, base_seed)
                    .into_iter()
                    .map(|(n, s)| Ok((n, make_phantom(&s)?.volume)))
                    .collect::<Result<_>>()?
            } else {
                volumes
                    .iter()
                    .map(|p| Ok((file_stem(p), load_volume(p)?)))
                    .collect::<Result<_>>()?
            };
            let vols = raw
                .into_iter()
                .map(|(n, v)| Ok((n, preprocess(&v, &pre)?.volume)))
                .collect::<Result<Vec<_>>>()?;
            let ccfg = CompareConfig {
                ratios: ratios.clone(),
                betas: betas.clone(),
                seeds: (0..n_seeds).map(|k| base_seed.wrapping_add(k)).collect(),
                tvm: cfg.tvm.clone(),
                mask: cfg.mask.clone(),
                train: cfg.train.clone(),
            };
            let rows = experiment::compare_masking(&vols, &ccfg)?;
            create_dir(&out_dir)?;
            write_text(&out_dir.join("stats.tsv"), &experiment::rows_tsv(&rows))?;
            let summary = experiment::summarize(&rows);
            let table = experiment::summary_tsv(&summary);
            write_text(&out_dir.join("summary.tsv"), &table)?;
            print!("{table}");
            let prepared = experiment::prepare(&vols, &cfg.tvm, cfg.mask.patch_size)?;
            for p in &prepared {
                for &r in &ratios {
                    for &b in &betas {
                        let mcfg = texmask::MaskConfig {
                            mask_ratio: r,
                            high_var_fraction: b,
                            seed: base_seed,
                            ..cfg.mask.clone()
                        };
                        let (m, high, _) = experiment::mask_and_highlight(p, &mcfg)?;
                        let z = p.volume.dims()[0] / 2;
                        let img = render_slice(&p.volume, z, Some(&m), Some(&high))?;
                        save_png(&img, &out_dir.join(format!("{}_r{r}_b{b}.png", p.name)))?;
                    }
                }
            }
        }
        Command::DumpConfig => print!("{}", cfg.to_toml_string()),
    }
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Loads every `.nii` file and every raw payload with a `.hdr` sidecar, in
/// file-name order.
fn load_dir(dir: &Path) -> Result<Vec<(String, Volume3D)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            p.is_file() && (ext.eq_ignore_ascii_case("nii") || (ext != "hdr" && sidecar_path(p).is_file()))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidConfig {
            field: "data_dir",
            reason: format!("{} holds no .nii or raw+.hdr volumes", dir.display()),
        });
    }
    paths.iter().map(|p| Ok((file_stem(p), load_volume(p)?))).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} msg=\"{msg}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
