//! The experiment runner behind the CLI: every subcommand is a pure
//! function of (config file, input files, seed), and every artifact it
//! writes — models, CSVs, PGM tiles — is byte-identical across reruns.

use crate::config::{seed_tags, ExperimentConfig};
use crate::data::{pixel_marginals, DatasetSplit};
use crate::dbn::{finetune, greedy_pretrain, sparse_pretrain, to_mlp};
use crate::error::{Error, Result};
use crate::evaluation::{
    ais_log_partition, avg_test_log_prob, base_rate_bias, evaluate, exact_log_partition, AisEval,
    EvalMethod, EvalRecord, EvalSettings,
};
use crate::io::{load_dbn, load_rbm, save_dbn, save_mlp, save_rbm};
use crate::math::derive_seed;
use crate::pruning::{iterative_prune, sparsity, PruneMask};
use crate::rbm::{
    hidden_conditional, sample_bernoulli, train_rbm, visible_conditional, BinaryVector, RbmParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

/// Which image artifact `export-images` produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportKind {
    ReceptiveFields,
    GibbsSamples,
}

pub struct Runner {
    cfg: ExperimentConfig,
}

const EVAL_HEADER: &[&str] = &[
    "model_id",
    "method",
    "sparsity",
    "surviving_weights",
    "log_z",
    "avg_test_log_prob",
    "ais_stderr_lo",
    "ais_stderr_hi",
];

fn fmt(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:.6}")
    }
}

fn eval_row(model_id: &str, rec: &EvalRecord, surviving: usize) -> Vec<String> {
    let (lo, hi) = match rec.ais_bounds {
        Some((lo, hi)) => (fmt(lo), fmt(hi)),
        None => (String::new(), String::new()),
    };
    vec![
        model_id.to_string(),
        rec.method.as_str().to_string(),
        fmt(rec.sparsity),
        surviving.to_string(),
        fmt(rec.log_z),
        fmt(rec.avg_test_log_prob),
        lo,
        hi,
    ]
}

fn model_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Runner { cfg }
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.cfg.out_dir).map_err(|e| Error::io(&self.cfg.out_dir, e))?;
        Ok(self.cfg.out_dir.join(name))
    }

    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.out_path(name)?;
        let mut text = format!(
            "# sparsebm v{} seed={} config_sha256={}\n",
            env!("CARGO_PKG_VERSION"),
            self.cfg.seed,
            self.cfg.file.hash()
        );
        text.push_str(&header.join(","));
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Evaluation settings against `test`; the AIS fallback (configured
    /// by [ais]) anchors its base-rate model on `train`'s marginals.
    fn eval_settings<'a>(
        &self,
        test: &'a DatasetSplit,
        train: &DatasetSplit,
    ) -> Result<EvalSettings<'a>> {
        let ais = if self.cfg.file.has_section("ais") {
            let config = self.cfg.ais_config()?;
            let base_bias = base_rate_bias(&pixel_marginals(train)?, config.base_rate_smoothing)?;
            Some(AisEval { config, base_bias })
        } else {
            None
        };
        Ok(EvalSettings { test, exact_limit: self.cfg.exact_limit()?, ais })
    }

    pub fn train(&self) -> Result<()> {
        let train = self.cfg.train_split()?;
        let tc = self.cfg.train_config()?;
        let n_hidden = self.cfg.n_hidden()?;
        println!("training {}x{n_hidden} RBM on {} examples", train.width(), train.len());
        let (params, log) = train_rbm(&train, n_hidden, &tc, None, None)?;
        let model_path = self.out_path("model.rbm")?;
        save_rbm(&params, None, &model_path)?;
        let rows: Vec<Vec<String>> = log
            .epoch_recon_ce
            .iter()
            .enumerate()
            .map(|(e, &ce)| vec![e.to_string(), fmt(ce)])
            .collect();
        self.write_csv("training_log.csv", &["epoch", "recon_ce"], &rows)?;
        println!("wrote {}", model_path.display());
        Ok(())
    }

    pub fn prune(&self, model: &Path) -> Result<()> {
        let (params, _) = load_rbm(model)?;
        let train = self.cfg.train_split()?;
        let test = self.cfg.test_split()?;
        let settings = self.eval_settings(&test, &train)?;
        let schedule = self.cfg.prune_schedule("prune")?;
        let steps = iterative_prune(&train, &params, &schedule, &settings)?;
        let rows: Vec<Vec<String>> = steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut row = eval_row(&format!("step{i}"), &s.eval, s.mask.surviving());
                row[0] = i.to_string();
                row
            })
            .collect();
        let mut header = EVAL_HEADER.to_vec();
        header[0] = "step";
        self.write_csv("prune_steps.csv", &header, &rows)?;
        let last = steps.last().expect("schedule has at least one step");
        let out = self.out_path("pruned.rbm")?;
        save_rbm(&last.params, Some(&last.mask), &out)?;
        println!("wrote {} (sparsity {:.4})", out.display(), sparsity(&last.mask));
        Ok(())
    }

    pub fn eval_exact(&self, model: &Path, limit_flag: Option<usize>) -> Result<()> {
        let (params, mask) = load_rbm(model)?;
        let test = self.cfg.test_split()?;
        let limit = match limit_flag {
            Some(l) => l,
            None => self.cfg.exact_limit()?,
        };
        let log_z = exact_log_partition(&params, limit)?;
        let avg = avg_test_log_prob(&params, log_z, &test)?;
        let (sp, surviving) = mask_stats(&params, mask.as_ref());
        let rec = EvalRecord {
            avg_test_log_prob: avg,
            log_z,
            method: EvalMethod::Exact,
            sparsity: sp,
            ais_bounds: None,
        };
        let row = eval_row(&model_id_of(model), &rec, surviving);
        self.write_csv("eval_exact.csv", EVAL_HEADER, &[row])?;
        println!("log_z {:.6}  avg_test_log_prob {:.6}", log_z, avg);
        Ok(())
    }

    pub fn eval_ais(&self, model: &Path) -> Result<()> {
        let (params, mask) = load_rbm(model)?;
        let train = self.cfg.train_split()?;
        let test = self.cfg.test_split()?;
        let config = self.cfg.ais_config()?;
        let base_bias = base_rate_bias(&pixel_marginals(&train)?, config.base_rate_smoothing)?;
        let est = ais_log_partition(&params, &base_bias, &config)?;
        let avg = avg_test_log_prob(&params, est.log_z_mean, &test)?;
        let (sp, surviving) = mask_stats(&params, mask.as_ref());
        let rec = EvalRecord {
            avg_test_log_prob: avg,
            log_z: est.log_z_mean,
            method: EvalMethod::Ais,
            sparsity: sp,
            ais_bounds: Some(est.log_z_stderr_bounds),
        };
        let row = eval_row(&model_id_of(model), &rec, surviving);
        self.write_csv("eval_ais.csv", EVAL_HEADER, &[row])?;
        println!(
            "log_z {:.6} (3-sigma [{}, {}])  avg_test_log_prob {:.6}",
            est.log_z_mean,
            fmt(est.log_z_stderr_bounds.0),
            fmt(est.log_z_stderr_bounds.1),
            avg
        );
        Ok(())
    }

    fn layer_configs(&self, n_layers: usize) -> Result<Vec<crate::rbm::TrainConfig>> {
        let base = self.cfg.train_config()?;
        Ok((0..n_layers)
            .map(|l| {
                let mut c = base.clone();
                c.seed = derive_seed(self.cfg.seed, 0xD8 + l as u64);
                c
            })
            .collect())
    }

    pub fn dbn_pretrain(&self) -> Result<()> {
        let train = self.cfg.train_split()?;
        let sizes = self.cfg.layer_sizes()?;
        let configs = self.layer_configs(sizes.len().saturating_sub(1))?;
        println!("pretraining stack {:?}", sizes);
        let (stack, logs) = greedy_pretrain(&train, &sizes, &configs)?;
        let out = self.out_path("stack.dbn")?;
        save_dbn(&stack, &out)?;
        let rows: Vec<Vec<String>> = logs
            .iter()
            .enumerate()
            .flat_map(|(l, log)| {
                log.epoch_recon_ce
                    .iter()
                    .enumerate()
                    .map(move |(e, &ce)| vec![l.to_string(), e.to_string(), fmt(ce)])
            })
            .collect();
        self.write_csv("pretrain_log.csv", &["layer", "epoch", "recon_ce"], &rows)?;
        println!("wrote {}", out.display());
        Ok(())
    }

    pub fn dbn_sparse_pretrain(&self) -> Result<()> {
        let train = self.cfg.train_split()?;
        let sizes = self.cfg.layer_sizes()?;
        let n_layers = sizes.len().saturating_sub(1);
        let configs = self.layer_configs(n_layers)?;
        let schedule = self.cfg.prune_schedule("prune")?;
        let schedules: Vec<_> = (0..n_layers).map(|_| Some(schedule.clone())).collect();
        let guard = self.cfg.recovery_guard()?;
        let ais = if self.cfg.file.has_section("ais") {
            Some(self.cfg.ais_config()?)
        } else {
            None
        };
        println!("sparse-pretraining stack {:?}", sizes);
        let (stack, report) =
            sparse_pretrain(&train, &sizes, &configs, &schedules, guard, ais.as_ref())?;
        let out = self.out_path("stack.dbn")?;
        save_dbn(&stack, &out)?;

        let mut rows = Vec::new();
        for (l, layer) in report.layers.iter().enumerate() {
            for (s, step) in layer.steps.iter().enumerate() {
                rows.push(vec![
                    l.to_string(),
                    s.to_string(),
                    fmt(step.sparsity),
                    fmt(step.recon_ce),
                    fmt(layer.dense_recon_ce),
                    fmt(step.eval.log_z),
                    fmt(step.eval.avg_test_log_prob),
                    step.passed.to_string(),
                    (layer.accepted == Some(s)).to_string(),
                ]);
            }
            if layer.fell_back_to_dense {
                eprintln!("warning: layer {l} kept dense parameters (no iterate passed the guard)");
            }
        }
        self.write_csv(
            "sparse_report.csv",
            &[
                "layer",
                "step",
                "sparsity",
                "recon_ce",
                "dense_recon_ce",
                "log_z",
                "avg_test_log_prob",
                "passed",
                "accepted",
            ],
            &rows,
        )?;
        println!("wrote {}", out.display());
        Ok(())
    }

    pub fn finetune(&self, stack_path: &Path) -> Result<()> {
        let stack = load_dbn(stack_path)?;
        let train = self.cfg.train_split()?;
        let test = self.cfg.test_split()?;
        let labels = train
            .labels()
            .ok_or_else(|| Error::Usage("fine-tuning needs a labeled training split".into()))?;
        let n_classes = match self.cfg.file.get_parsed::<usize>("model", "n_classes")? {
            Some(n) => n,
            None => labels.iter().max().map_or(0, |&m| m as usize + 1).max(2),
        };
        let ft = self.cfg.finetune_config()?;
        let net = to_mlp(&stack, n_classes, derive_seed(self.cfg.seed, seed_tags::FINETUNE))?;
        println!("fine-tuning {:?} + {n_classes}-way softmax, {} trials", stack.layer_sizes(), ft.trials);
        let (tuned, errors) = finetune(&net, &train, &test, &ft)?;
        let out = self.out_path("mlp.mlp")?;
        save_mlp(&tuned, &out)?;
        let rows: Vec<Vec<String>> = errors
            .iter()
            .enumerate()
            .map(|(t, &e)| {
                vec![t.to_string(), derive_seed(ft.seed, t as u64).to_string(), fmt(e)]
            })
            .collect();
        self.write_csv("finetune_errors.csv", &["trial", "seed", "test_error"], &rows)?;
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        println!("mean test error {:.4} over {} trials", mean, errors.len());
        Ok(())
    }

    pub fn export_images(
        &self,
        model: &Path,
        kind: ExportKind,
        count: usize,
        steps: u32,
        frames: usize,
    ) -> Result<()> {
        let (params, _) = load_rbm(model)?;
        let (w, h) = self.tile_dims(&params)?;
        match kind {
            ExportKind::ReceptiveFields => self.export_receptive_fields(&params, w, h, count),
            ExportKind::GibbsSamples => self.export_gibbs_samples(&params, w, h, count, steps, frames),
        }
    }

    /// Declared tile dimensions; the visible layer must factor as
    /// `width × height`.
    fn tile_dims(&self, params: &RbmParams) -> Result<(usize, usize)> {
        let w = self.cfg.file.get_parsed::<usize>("export", "width")?;
        let h = self.cfg.file.get_parsed::<usize>("export", "height")?;
        let (w, h) = match (w, h) {
            (Some(w), Some(h)) => (w, h),
            _ => {
                return Err(Error::Usage(
                    "image export needs [export].width and [export].height".into(),
                ))
            }
        };
        if w * h != params.n_visible() {
            return Err(Error::Usage(format!(
                "declared {w}x{h} tile does not cover {} visible units",
                params.n_visible()
            )));
        }
        Ok((w, h))
    }

    fn export_receptive_fields(
        &self,
        params: &RbmParams,
        w: usize,
        h: usize,
        count: usize,
    ) -> Result<()> {
        let count = count.min(params.n_hidden());
        let mut manifest = String::new();
        for j in 0..count {
            let col = params.weights.column(j);
            let name = format!("receptive_field_{j:04}.pgm");
            let path = self.out_path(&name)?;
            write_pgm(&path, w, h, &normalize_tile(col.iter().copied()))?;
            manifest.push_str(&format!("{name} unit={j}\n"));
        }
        let mpath = self.out_path("manifest.txt")?;
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        println!("wrote {count} receptive-field tiles to {}", self.cfg.out_dir.display());
        Ok(())
    }

    fn export_gibbs_samples(
        &self,
        params: &RbmParams,
        w: usize,
        h: usize,
        count: usize,
        steps: u32,
        frames: usize,
    ) -> Result<()> {
        if steps == 0 {
            return Err(Error::Usage("gibbs export needs steps >= 1".into()));
        }
        let test = self.cfg.test_split()?;
        let count = count.min(test.len());
        let mut manifest = String::new();
        for c in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                seed_tags::EXPORT ^ (c as u64) << 8,
            ));
            let mut v = BinaryVector::new(test.row_f64(c))
                .expect("dataset rows are binary by construction");
            for f in 0..frames {
                let mut last_pv = None;
                for _ in 0..steps {
                    let ph = hidden_conditional(params, &v)?;
                    let hs = sample_bernoulli(&ph, &mut rng)?;
                    let pv = visible_conditional(params, &hs)?;
                    v = sample_bernoulli(&pv, &mut rng)?;
                    last_pv = Some(pv);
                }
                let pv = last_pv.expect("steps >= 1");
                let name = format!("chain{c:03}_frame{f:03}.pgm");
                let path = self.out_path(&name)?;
                let bytes: Vec<u8> = pv.iter().map(|&p| (p * 255.0).round() as u8).collect();
                write_pgm(&path, w, h, &bytes)?;
                manifest.push_str(&format!(
                    "{name} chain={c} frame={f} steps={}\n",
                    (f as u64 + 1) * steps as u64
                ));
            }
        }
        let mpath = self.out_path("manifest.txt")?;
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
        println!("wrote {count} chains x {frames} frames to {}", self.cfg.out_dir.display());
        Ok(())
    }

    pub fn export_histogram(&self, before: &Path, after: &Path, bins: usize) -> Result<()> {
        if bins == 0 {
            return Err(Error::Usage("histogram needs at least one bin".into()));
        }
        let a = surviving_weights(&load_rbm(before)?);
        let b = surviving_weights(&load_rbm(after)?);
        let lo0 = a.iter().chain(b.iter()).copied().fold(f64::INFINITY, f64::min);
        let hi0 = a.iter().chain(b.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi0 > lo0 { (lo0, hi0) } else { (lo0 - 0.5, hi0 + 0.5) };
        let width = (hi - lo) / bins as f64;
        let bucket = |x: f64| -> usize { (((x - lo) / width) as usize).min(bins - 1) };
        let mut count_a = vec![0u64; bins];
        let mut count_b = vec![0u64; bins];
        for &x in &a {
            count_a[bucket(x)] += 1;
        }
        for &x in &b {
            count_b[bucket(x)] += 1;
        }
        let rows: Vec<Vec<String>> = (0..bins)
            .map(|i| {
                vec![
                    fmt(lo + i as f64 * width),
                    fmt(lo + (i + 1) as f64 * width),
                    count_a[i].to_string(),
                    count_b[i].to_string(),
                ]
            })
            .collect();
        let path = self.write_csv(
            "weight_histogram.csv",
            &["bin_lo", "bin_hi", "count_before", "count_after"],
            &rows,
        )?;
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn run_table(&self) -> Result<()> {
        let train = self.cfg.train_split()?;
        let test = self.cfg.test_split()?;
        let tc = self.cfg.train_config()?;
        let n_hidden = self.cfg.n_hidden()?;
        let settings = self.eval_settings(&test, &train)?;

        println!("training baseline {}x{n_hidden} RBM", train.width());
        let (baseline, _) = train_rbm(&train, n_hidden, &tc, None, None)?;
        save_rbm(&baseline, None, &self.out_path("baseline.rbm")?)?;
        let base_rec = evaluate(&baseline, 0.0, &settings)?;
        let total = baseline.weights.len();
        let mut rows = vec![eval_row("rbm", &base_rec, total)];

        for (section, label, file) in [
            ("prune-percentile", "ours", "ours.rbm"),
            ("prune-stddev", "han_et_al", "han_et_al.rbm"),
        ] {
            let schedule = self.cfg.prune_schedule(section)?;
            println!("pruning sweep [{section}] ({} steps)", schedule.steps.len());
            let steps = iterative_prune(&train, &baseline, &schedule, &settings)?;
            let last = steps.last().expect("validated nonempty");
            save_rbm(&last.params, Some(&last.mask), &self.out_path(file)?)?;
            rows.push(eval_row(label, &last.eval, last.mask.surviving()));
        }
        let path = self.write_csv("table.csv", EVAL_HEADER, &rows)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn run_tradeoff(&self) -> Result<()> {
        let train = self.cfg.train_split()?;
        let test = self.cfg.test_split()?;
        let tc = self.cfg.train_config()?;
        let n_hidden = self.cfg.n_hidden()?;
        let settings = self.eval_settings(&test, &train)?;
        let schedule = self.cfg.prune_schedule("prune")?;
        if schedule.steps.len() < 2 {
            return Err(Error::Config(
                "[prune].steps: a trade-off sweep needs at least two steps".into(),
            ));
        }

        println!("training baseline {}x{n_hidden} RBM", train.width());
        let (baseline, _) = train_rbm(&train, n_hidden, &tc, None, None)?;
        let base_rec = evaluate(&baseline, 0.0, &settings)?;
        let total = baseline.weights.len();

        let mut header = vec!["variant"];
        header.extend_from_slice(EVAL_HEADER);
        let mut rows = Vec::new();
        let mut base_row = vec!["baseline".to_string()];
        base_row.extend(eval_row("0", &base_rec, total));
        rows.push(base_row);

        let mut no_retrain = schedule.clone();
        no_retrain.retrain.epochs = 0;
        for (variant, sched) in [("no_retrain", &no_retrain), ("retrain", &schedule)] {
            println!("{variant} sweep ({} steps)", sched.steps.len());
            let steps = iterative_prune(&train, &baseline, sched, &settings)?;
            for (i, s) in steps.iter().enumerate() {
                let mut row = vec![variant.to_string()];
                row.extend(eval_row(&i.to_string(), &s.eval, s.mask.surviving()));
                rows.push(row);
            }
        }
        let mut hdr = vec!["variant", "step"];
        hdr.extend_from_slice(&EVAL_HEADER[1..]);
        let path = self.write_csv("tradeoff.csv", &hdr, &rows)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn mask_stats(params: &RbmParams, mask: Option<&PruneMask>) -> (f64, usize) {
    match mask {
        Some(m) => (sparsity(m), m.surviving()),
        None => (0.0, params.weights.len()),
    }
}

fn surviving_weights((params, mask): &(RbmParams, Option<PruneMask>)) -> Vec<f64> {
    match mask {
        Some(m) => params
            .weights
            .indexed_iter()
            .filter(|((i, j), _)| m.is_kept(*i, *j))
            .map(|(_, &w)| w)
            .collect(),
        None => params.weights.iter().copied().collect(),
    }
}

/// Min-max normalization to 8-bit grayscale; constant tiles map to
/// mid-gray.
fn normalize_tile(values: impl Iterator<Item = f64> + Clone) -> Vec<u8> {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return values.map(|_| 128u8).collect();
    }
    values.map(|x| (((x - lo) / (hi - lo)) * 255.0).round() as u8).collect()
}

/// 8-bit binary PGM (P5).
fn write_pgm(path: &Path, w: usize, h: usize, bytes: &[u8]) -> Result<()> {
    debug_assert_eq!(bytes.len(), w * h);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
