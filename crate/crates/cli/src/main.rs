use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmil::dataset::{read_jsonl, write_jsonl};
use softmil::evaluation::{pseudo_golden, score_candidates, FrocEvaluator};
use softmil::gradcheck::{check_random_problem, ProblemShape, DEFAULT_STEP};
use softmil::optimizer::{fit_objective, stationarity_certificate};
use softmil::pipeline::{merge_dataset, write_roc_csv};
use softmil::{
    assign_soft_targets, build_bags, export, ingest, run_pipeline, synth, Bag, Dataset,
    DatasetPaths, Error, GroundTruthMark, ModelFile, Normalization, NormalizationMode, Objective,
    PipelineConfig, Result, SoftTarget, SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "softmil",
    version,
    about = "Soft-label multiple-instance training for lesion candidates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<PipelineConfig> {
        match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a planted sparse model.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 300)]
        n_images: usize,
        #[arg(long, default_value_t = 50)]
        n_features: usize,
        #[arg(long, default_value_t = 5)]
        support: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Merge reader marks into ground-truth marks.
    Merge {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Assign soft targets to merged GTs.
    Label {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Group candidates into soft bags and hard negatives.
    Bags {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model on a bag file at one lambda.
    Train {
        #[arg(long)]
        bags: PathBuf,
        /// Dataset directory supplying the feature names.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        normalization: Option<Normalization>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Split by image, sweep lambda on train/validation and evaluate.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score candidates with a model and write a FROC table.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic derivatives with finite differences on random problems.
    CheckGradients {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
    },
    /// Full pipeline: merge, label, bags, train or sweep, eval.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(dir: &Path) -> Result<Dataset> {
    ingest(&DatasetPaths::in_dir(dir))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            n_images,
            n_features,
            support,
            noise,
            seed,
        } => {
            let cfg = SynthConfig {
                n_images,
                n_features,
                support,
                noise,
                seed,
                ..SynthConfig::default()
            };
            let generated = synth(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            export(&generated.dataset, &DatasetPaths::in_dir(&out))?;
            let mut weights: BTreeMap<String, f64> = generated
                .dataset
                .feature_names
                .iter()
                .cloned()
                .zip(generated.true_weights.iter().copied())
                .collect();
            weights.insert(
                "(intercept)".into(),
                *generated.true_weights.last().expect("intercept"),
            );
            let path = out.join("true_weights.json");
            let text = serde_json::to_string_pretty(&weights).expect("weights serialize") + "\n";
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            println!(
                "wrote {} images, {} marks, {} candidates to {}",
                generated.dataset.images.len(),
                generated.dataset.marks.len(),
                generated.dataset.candidates.len(),
                out.display()
            );
        }
        Command::Merge { data, out, common } => {
            let cfg = common.load()?;
            let ds = load(&data)?;
            let gts = merge_dataset(&ds.marks, &cfg.hit, cfg.merge_seed)
                .map_err(|e| e.in_stage("merge"))?;
            write_jsonl(&out, &gts)?;
            println!("{} marks merged into {} GTs", ds.marks.len(), gts.len());
        }
        Command::Label {
            data,
            gts,
            out,
            common,
        } => {
            let cfg = common.load()?;
            let ds = load(&data)?;
            let gts: Vec<GroundTruthMark> = read_jsonl(&gts)?;
            let targets = assign_soft_targets(&gts, &ds.readers_per_image(), &cfg.labels)
                .map_err(|e| e.in_stage("label"))?;
            write_jsonl(&out, &targets)?;
            println!("labeled {} GTs", targets.len());
        }
        Command::Bags {
            data,
            gts,
            targets,
            out,
            common,
        } => {
            let cfg = common.load()?;
            let ds = load(&data)?;
            let gts: Vec<GroundTruthMark> = read_jsonl(&gts)?;
            let targets: Vec<SoftTarget> = read_jsonl(&targets)?;
            let set = build_bags(
                &ds.candidates,
                &gts,
                &targets,
                &ds.readers_per_image(),
                &cfg.labels,
                &cfg.rule,
            )
            .map_err(|e| e.in_stage("bags"))?;
            write_jsonl(&out, &set.bags)?;
            println!(
                "{} bags, {} GTs without candidates",
                set.bags.len(),
                set.missed_gts.len()
            );
        }
        Command::Train {
            bags,
            data,
            lambda,
            normalization,
            out,
            common,
        } => {
            let cfg = common.load()?;
            let lambda = lambda.or(cfg.lambda).unwrap_or(0.0);
            let normalization = normalization.unwrap_or(cfg.normalization);
            let ds = load(&data)?;
            let bags: Vec<Bag> = read_jsonl(&bags)?;
            let obj = Objective::new(
                &bags,
                NormalizationMode::new(normalization, lambda)?,
                cfg.annotator_weights,
            )
            .map_err(|e| e.in_stage("train"))?;
            let fit = fit_objective(&obj, &cfg.optimizer, None).map_err(|e| e.in_stage("train"))?;
            let cert = stationarity_certificate(&obj, &fit.weights)?;
            if cfg.fail_on_nonconvergence && !fit.converged {
                return Err(Error::NotConverged {
                    iterations: fit.iterations,
                }
                .in_stage("train"));
            }
            ModelFile::from_fit(
                &fit,
                &ds.feature_names,
                lambda,
                normalization,
                cfg.annotator_weights,
            )?
            .write(&out)?;
            println!(
                "lambda {lambda}: nnz {} objective {:.6e} iterations {} converged {} certificate {:.3e}",
                fit.nnz, fit.objective_value, fit.iterations, fit.converged, cert.max_violation
            );
        }
        Command::Sweep { data, out, common } => {
            let cfg = PipelineConfig {
                lambda: None,
                ..common.load()?
            };
            report(&run_pipeline(&load(&data)?, &cfg, Some(&out))?, &out);
        }
        Command::Run { data, out, common } => {
            let cfg = common.load()?;
            report(&run_pipeline(&load(&data)?, &cfg, Some(&out))?, &out);
        }
        Command::Eval {
            data,
            gts,
            model,
            out,
            common,
        } => {
            let cfg = common.load()?;
            let ds = load(&data)?;
            let gts: Vec<GroundTruthMark> = read_jsonl(&gts)?;
            let model = ModelFile::read(&model)?;
            if model.feature_names != ds.feature_names {
                return Err(Error::validation(
                    "model feature names differ from the dataset's",
                ));
            }
            let w = model.model_weights()?;
            let scored = score_candidates(&ds.candidates, &w).map_err(|e| e.in_stage("eval"))?;
            let table =
                FrocEvaluator::new(&scored, &pseudo_golden(&gts), &ds.image_ids(), &cfg.rule)
                    .and_then(|ev| ev.table(&cfg.fp_points))
                    .map_err(|e| e.in_stage("eval"))?;
            write_roc_csv(&out, &table)?;
            for (fp, s) in table.fp_points.iter().zip(&table.gt_sensitivity) {
                println!("FP {fp:.2}: GT sensitivity {s:.2}%");
            }
        }
        Command::CheckGradients { trials, seed, step } => check_gradients(trials, seed, step)?,
    }
    Ok(())
}

fn report(r: &softmil::pipeline::PipelineReport, out: &Path) {
    println!(
        "lambda {} nnz {} converged {}; {} GTs, {} without candidates",
        r.lambda,
        r.fit.nnz,
        r.fit.converged,
        r.gts.len(),
        r.missed_gts.len()
    );
    for p in &r.test_induced {
        println!(
            "test @FP {:.1}: induced FP {:.3}, GT sensitivity {:.2}%, image sensitivity {:.2}%",
            p.fp_point, p.induced_fp, p.gt_sensitivity, p.image_sensitivity
        );
    }
    println!("artifacts in {}", out.display());
}

const GRADIENT_TOLERANCE: f64 = 1e-6;
const HESSIAN_TOLERANCE: f64 = 1e-5;

fn check_gradients(trials: usize, seed: u64, step: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [2, 10, 50];
    let bag_sizes = [1, 3, 10];
    let modes = [
        Normalization::Raw,
        Normalization::PerSample,
        Normalization::PerClass,
    ];
    let (mut worst_g, mut worst_h) = (0.0f64, 0.0f64);
    for t in 0..trials {
        let shape = ProblemShape {
            dim: dims[t % 3],
            bag_size: bag_sizes[(t / 3) % 3],
            n_soft: 4,
            n_hard: 3,
            normalization: modes[(t / 9) % 3],
            annotator_weights: (t / 27) % 2 == 0,
        };
        let check = check_random_problem(&mut rng, &shape, step)?;
        worst_g = worst_g.max(check.gradient_error);
        worst_h = worst_h.max(check.hessian_error);
    }
    println!(
        "{trials} problems: max gradient error {worst_g:.3e}, max Hessian error {worst_h:.3e}"
    );
    if worst_g >= GRADIENT_TOLERANCE || worst_h >= HESSIAN_TOLERANCE {
        return Err(Error::Numerical {
            iteration: 0,
            message: format!("derivative check above tolerance ({worst_g:.3e}, {worst_h:.3e})"),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
