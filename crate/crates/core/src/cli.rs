//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::autodiff::{checkpoint, Tape};
use crate::config::{describe_keys, Config};
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::io::{
    load_class_map, load_cube, load_labels, load_probmap, read_ppm, save_class_map, save_cube, save_labels, write_ppm,
    LabelMap, RgbImage,
};
use crate::model::DcntModel;
use crate::pipeline::{evaluate, hard_vote, run_inference_set, soft_vote, train, Report};
use crate::synth::{synth_scene, SceneSpec};
use crate::trispec::{generate_set, TriSpectralSet, TrispecOptions};

#[derive(Debug, Parser)]
#[command(
    name = "dcnt",
    version,
    about = "Tri-spectral ensemble segmentation of hyperspectral cubes",
    arg_required_else_help = true,
    after_help = help_footer()
)]
struct Cli {
    /// Seed for every random choice; overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

fn help_footer() -> String {
    format!("Configuration keys (flat `key = value` files, defaults shown):\n{}", describe_keys())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VoteMode {
    Hard,
    Soft,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render every tri-spectral image of a cube into a directory.
    Generate {
        #[arg(long)]
        cube: PathBuf,
        /// Spectral groups; defaults to `trispec.G`.
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Bands are stored from long to short wavelength.
        #[arg(long)]
        wavelength_descending: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Export the homogeneous areas a trained model finds in one image.
    Areas {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output directory for `areas.lbl` and `areas.ppm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a tri-spectral set.
    Train {
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; the resolved configuration is written next to it
        /// as `<out>.conf`, the logs as `train_log.csv` and `val_log.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every image of a set and fuse the results.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        set: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Ground truth for `report_hard.json` / `report_soft.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Fuse the per-image predictions stored in a directory.
    Vote {
        #[arg(long, value_enum)]
        mode: VoteMode,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a class map against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Check tape gradients of every building block against finite differences.
    Gradcheck,
    /// Write a synthetic scene: `cube.hsc`, `truth.lbl` and `train.lbl`.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 20)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Training labels per class (25, 50 and 100 mirror common splits).
        #[arg(long, default_value_t = 100)]
        per_class: usize,
    },
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("dcnt: {e}");
            1
        }
    }
}

fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".conf");
    PathBuf::from(s)
}

fn load_model(ckpt: &Path) -> Result<DcntModel> {
    let cfg = Config::load(sidecar(ckpt))?;
    let mut model = DcntModel::new(cfg.model, cfg.train.seed)?;
    checkpoint::load_into(&mut model.store, checkpoint::load(ckpt)?, true)?;
    Ok(model)
}

/// Files named `<prefix><index>.<ext>` in `dir`, ordered by index.
fn indexed_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let index = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(ext)).and_then(|i| i.parse::<usize>().ok());
        if let Some(i) = index {
            found.push((i, path));
        }
    }
    if found.is_empty() {
        return Err(Error::Data(format!("no {prefix}*{ext} files in {}", dir.display())));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// Paints area boundaries red over the image.
fn boundary_overlay(img: &RgbImage, labels: &LabelMap) -> RgbImage {
    let (h, w) = (img.height, img.width);
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let l = labels.labels[y * w + x];
            let edge = (x + 1 < w && labels.labels[y * w + x + 1] != l) || (y + 1 < h && labels.labels[(y + 1) * w + x] != l);
            if edge {
                for (c, v) in [255u8, 0, 0].into_iter().enumerate() {
                    out.data[c * h * w + y * w + x] = v;
                }
            }
        }
    }
    out
}

fn run(cli: Cli) -> Result<i32> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { cube, groups, out, wavelength_descending, config } => {
            let cfg = config.map(Config::load).transpose()?.unwrap_or_default();
            let cube = load_cube(cube)?;
            let opts = TrispecOptions { wavelength_descending: wavelength_descending || cfg.wavelength_descending };
            let set = generate_set(&cube, groups.unwrap_or(cfg.groups), opts)?;
            set.save(&out)?;
            println!("wrote {} images to {}", set.capacity(), out.display());
            for &i in &set.degenerate {
                eprintln!("warning: image {i} has a constant stretch range and is all zeros");
            }
        }
        Command::Areas { checkpoint, image, out } => {
            let model = load_model(&checkpoint)?;
            let img = read_ppm(image)?;
            let tape = Tape::new();
            let p = model.store.bind_frozen(&tape);
            let result = model.forward_image(&p, &img)?;
            let (fw, (h, w)) = (result.feature_size.1, (img.height, img.width));
            let labels = (0..h * w).map(|j| result.area_labels[(j / w / 4) * fw + (j % w) / 4] as u16 + 1).collect();
            let labels = LabelMap::new(h, w, labels)?;
            fs::create_dir_all(&out)?;
            save_labels(&labels, out.join("areas.lbl"))?;
            write_ppm(&boundary_overlay(&img, &labels), out.join("areas.ppm"))?;
            println!("{} areas written to {}", model.config.dcm.areas, out.display());
        }
        Command::Train { set, labels, config, out } => {
            let mut cfg = config.map(Config::load).transpose()?.unwrap_or_default();
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let set = TriSpectralSet::load(set)?;
            let labels = load_labels(labels)?;
            if cfg.model.classes == 0 {
                cfg.model.classes = labels.num_classes();
            }
            let mut model = DcntModel::new(cfg.model.clone(), cfg.train.seed)?;
            let report = train(&set, &labels, &mut model, &cfg.train)?;
            checkpoint::save(&model.store, &out)?;
            cfg.save(sidecar(&out))?;
            let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::write(dir.join("train_log.csv"), &report.train_log)?;
            fs::write(dir.join("val_log.csv"), &report.val_log)?;
            println!(
                "{} iterations, final loss {:.6}; checkpoint {}",
                report.losses.len(),
                report.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Predict { ckpt, set, out, jobs, truth } => {
            let model = load_model(&ckpt)?;
            let set = TriSpectralSet::load(set)?;
            let truth = truth.map(load_labels).transpose()?;
            let result = run_inference_set(&model, &set.images, truth.as_ref(), Some(&out), jobs)?;
            println!("predicted {} images into {}", result.probs.len(), out.display());
            if let (Some(h), Some(s)) = (&result.hard_metrics, &result.soft_metrics) {
                println!("OA hard {:.4} soft {:.4}", h.oa, s.oa);
            }
        }
        Command::Vote { mode, input, out } => {
            let fused = match mode {
                VoteMode::Hard => {
                    let maps = indexed_files(&input, "class_", ".lbl")?.iter().map(load_class_map).collect::<Result<Vec<_>>>()?;
                    hard_vote(&maps)?
                }
                VoteMode::Soft => {
                    let maps = indexed_files(&input, "prob_", ".prb")?.iter().map(load_probmap).collect::<Result<Vec<_>>>()?;
                    soft_vote(&maps)?
                }
            };
            save_class_map(&fused, &out)?;
        }
        Command::Eval { pred, truth, report } => {
            let m = evaluate(&load_class_map(pred)?, &load_labels(truth)?)?;
            if !m.kappa_defined {
                eprintln!("warning: kappa is undefined for this truth map");
            }
            Report::from(&m).save(&report)?;
            println!("OA {:.4} AA {:.4} kappa {:.4}", m.oa, m.aa, m.kappa);
        }
        Command::Gradcheck => {
            let entries = gradsuite::run_suite(seed.unwrap_or(0))?;
            for e in &entries {
                println!("{:<24} {:.3e} {}", e.name, e.report.max_rel_error, if e.passed() { "ok" } else { "FAIL" });
            }
            if entries.iter().any(|e| !e.passed()) {
                return Ok(1);
            }
        }
        Command::Synth { out, height, width, bands, classes, per_class } => {
            let spec = SceneSpec { train_per_class: per_class, ..SceneSpec::new(height, width, bands, classes) };
            let scene = synth_scene(&spec, seed.unwrap_or(0))?;
            fs::create_dir_all(&out)?;
            save_cube(&scene.cube, out.join("cube.hsc"))?;
            save_labels(&scene.truth, out.join("truth.lbl"))?;
            save_labels(&scene.train, out.join("train.lbl"))?;
            println!("scene written to {}", out.display());
        }
    }
    Ok(0)
}
