use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use restocnet::classifier::{predict_set, train_classifier};
use restocnet::config::ExperimentConfig;
use restocnet::convnet::Network;
use restocnet::data_io::activations::{load_activations, save_activations, ActivationSet};
use restocnet::data_io::cache::{load_tensor_cache, save_tensor_cache};
use restocnet::data_io::pgm::tile;
use restocnet::data_io::preprocess::ZcaModel;
use restocnet::data_io::{
    global_contrast_normalize, load_checkpoint, load_cifar10, load_mnist, save_checkpoint, LabeledImageSet, Split,
};
use restocnet::config::Dataset;
use restocnet::fcsnn::{predict_from_counts, receptive_field, tag_neurons, Fcsnn};
use restocnet::kernel::Kernels;
use restocnet::metrics::{evaluate_accuracy, kernel_compression, synaptic_compression, CompressionReport, KernelDescriptor};
use restocnet::plasticity::Layout;
use restocnet::{Error, Phase, Result};

use crate::{Common, Limits};

#[derive(Args, Debug, Clone)]
pub struct CompressionArgs {
    /// Baseline kernel count.
    #[arg(long, default_value_t = 32)]
    pub baseline_kernels: u64,
    /// Baseline kernel side length.
    #[arg(long, default_value_t = 5)]
    pub baseline_size: u64,
    /// Binary kernel count; defaults to the total maps of the configured topology.
    #[arg(long)]
    pub subject_kernels: Option<u64>,
    /// Binary kernel side length; defaults to the configured kernel size.
    #[arg(long)]
    pub subject_size: Option<u64>,
    /// Fully-connected comparison as `BASELINE:SUBJECT` neuron counts over 784 inputs.
    #[arg(long)]
    pub synaptic: Option<String>,
}

pub struct Context {
    pub config: ExperimentConfig,
    out: PathBuf,
}

const CHECKPOINT: &str = "network.rstc";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn limit(set: LabeledImageSet, n: Option<usize>) -> LabeledImageSet {
    match n {
        Some(n) if n < set.len() => set.slice(0, n),
        _ => set,
    }
}

impl Context {
    pub fn new(common: &Common) -> Result<Self> {
        let mut config = if Path::new(&common.config).exists() {
            ExperimentConfig::load(&common.config)?
        } else {
            ExperimentConfig::preset(&common.config)?
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        log::info!("experiment {} seed {}", config.name, config.seed);
        Ok(Context {
            config,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Records the seed behind each stochastic phase a command used.
    fn log_seeds(&self, command: &str, seed: u64, phases: &[Phase]) -> Result<()> {
        let mut text = String::from("command,phase,seed\n");
        for p in phases {
            log::info!("{command}: phase {} seed {seed}", p.name());
            let _ = writeln!(text, "{command},{},{seed}", p.name());
        }
        write_text(&self.path(&format!("{command}.seeds.csv")), &text)
    }

    fn load_raw(&self, split: Split) -> Result<LabeledImageSet> {
        let dir = &self.config.data_dir;
        match self.config.dataset {
            Dataset::Mnist => load_mnist(dir, split),
            Dataset::Cifar10 => load_cifar10(dir, split),
        }
    }

    fn normalise(&self, train: &LabeledImageSet, sets: &[&LabeledImageSet]) -> Result<Vec<LabeledImageSet>> {
        let Some(pp) = &self.config.preprocess else {
            return Ok(sets.iter().map(|s| (*s).clone()).collect());
        };
        let (normalized, gcn) = global_contrast_normalize(train, pp.gcn_eps)?;
        let model = if pp.zca_eps > 0.0 {
            log::info!("fitting ZCA on {} images", normalized.len());
            ZcaModel::fit(gcn, &normalized, pp.zca_eps)?
        } else {
            ZcaModel::identity(gcn, train.dim())
        };
        sets.iter().map(|s| model.apply(s)).collect()
    }

    /// Dataset split from the tensor cache if present, else from raw files.
    fn load(&self, split: Split) -> Result<LabeledImageSet> {
        let cache = self.path(&format!("{}.rstp", split.name()));
        if cache.exists() {
            return load_tensor_cache(&cache);
        }
        if self.config.preprocess.is_none() {
            return self.load_raw(split);
        }
        let train = self.load_raw(Split::Train)?;
        match split {
            Split::Train => Ok(self.normalise(&train, &[&train])?.remove(0)),
            Split::Test => {
                let test = self.load_raw(Split::Test)?;
                Ok(self.normalise(&train, &[&test])?.remove(0))
            }
        }
    }

    pub fn preprocess(&self) -> Result<()> {
        let train = self.load_raw(Split::Train)?;
        let test = self.load_raw(Split::Test)?;
        let out = self.normalise(&train, &[&train, &test])?;
        for set in &out {
            let path = self.path(&format!("{}.rstp", set.split.name()));
            save_tensor_cache(set, &path)?;
            log::info!("wrote {} ({} images)", path.display(), set.len());
        }
        Ok(())
    }

    fn network(&self) -> Result<Network> {
        let topo = self.config.network_topology()?;
        let path = self.path(CHECKPOINT);
        if path.exists() {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.seed != self.config.seed {
                return Err(Error::Config(format!(
                    "checkpoint {} was made with seed {}, configuration uses {}",
                    path.display(),
                    ckpt.seed,
                    self.config.seed
                )));
            }
            Network::from_checkpoint(topo, &ckpt)
        } else {
            Network::new(topo, self.config.seed)
        }
    }

    fn clear_activations(&self) {
        for split in [Split::Train, Split::Test] {
            let (bin, csv) = self.activation_paths(split);
            let _ = fs::remove_file(bin);
            let _ = fs::remove_file(csv);
        }
    }

    pub fn train_conv(&self, layer: usize, random_kernels: bool) -> Result<()> {
        let mut net = self.network()?;
        if random_kernels {
            net.freeze_untrained(layer)?;
            self.log_seeds("train-conv", net.seed, &[Phase::KernelInit])?;
            log::info!("layer {layer}: kept random kernels, thresholds zero");
        } else {
            let lc = self
                .config
                .layers
                .get(layer.wrapping_sub(1))
                .ok_or_else(|| Error::Config(format!("no layer {layer} in configuration")))?;
            let train = self.load(Split::Train)?;
            let end = (lc.train_start + lc.train_count).min(train.len());
            let start = lc.train_start.min(end);
            let subset = train.slice(start, end - start);
            log::info!("layer {layer}: STDP on images {start}..{end}");
            let stats = net.train_layer(layer, &subset, start)?;
            let text = format!(
                "layer,iterations,images,post_spikes,weight_changes\n{layer},{},{},{},{}\n",
                stats.iterations, stats.images, stats.post_spikes, stats.weight_changes
            );
            write_text(&self.path(&format!("train_conv_layer{layer}.csv")), &text)?;
            self.log_seeds(
                "train-conv",
                net.seed,
                &[Phase::KernelInit, Phase::EncodeStdp, Phase::MapDropout, Phase::StdpSwitch],
            )?;
        }
        self.clear_activations();
        save_checkpoint(&net.to_checkpoint(None), self.path(CHECKPOINT))?;
        log::info!("wrote {}", self.path(CHECKPOINT).display());
        Ok(())
    }

    fn activation_paths(&self, split: Split) -> (PathBuf, PathBuf) {
        (
            self.path(&format!("activations_{}.rsta", split.name())),
            self.path(&format!("labels_{}.csv", split.name())),
        )
    }

    fn split_limit(&self, split: Split, limits: Limits) -> Option<usize> {
        match split {
            Split::Train => limits.train_limit.or(self.config.classifier.train_limit),
            Split::Test => limits.test_limit.or(self.config.classifier.test_limit),
        }
    }

    fn compute_activations(&self, net: &Network, split: Split, limits: Limits) -> Result<ActivationSet> {
        let set = limit(self.load(split)?, self.split_limit(split, limits));
        log::info!("computing {} activations for {} images", split.name(), set.len());
        let act = net.activations(&set, 0)?;
        let (bin, csv) = self.activation_paths(split);
        save_activations(&act, bin, csv)?;
        Ok(act)
    }

    /// Cached activations when they exist with the expected row count,
    /// computed otherwise.
    fn activations(&self, net: &Network, split: Split, limits: Limits) -> Result<ActivationSet> {
        let (bin, csv) = self.activation_paths(split);
        if bin.exists() && csv.exists() {
            let act = load_activations(&bin, &csv)?;
            let fits = match self.split_limit(split, limits) {
                Some(n) => act.rows() == n,
                None => true,
            };
            if act.seed == net.seed && act.cols == net.topology.feature_len() && fits {
                return Ok(act);
            }
        }
        self.compute_activations(net, split, limits)
    }

    pub fn export_activations(&self, limits: Limits) -> Result<(ActivationSet, ActivationSet)> {
        let net = self.network()?;
        self.log_seeds("export-activations", net.seed, &[Phase::EncodeActivation])?;
        Ok((
            self.compute_activations(&net, Split::Train, limits)?,
            self.compute_activations(&net, Split::Test, limits)?,
        ))
    }

    pub fn train_fc(&self, limits: Limits) -> Result<()> {
        let net = self.network()?;
        let train = self.activations(&net, Split::Train, limits)?;
        let test = self.activations(&net, Split::Test, limits)?;
        let mut cfg = self.config.classifier_config()?;
        if let Some(e) = limits.epochs {
            cfg.epochs = e;
        }
        let mut csv = String::from("epoch,loss,train_accuracy,test_accuracy\n");
        let (model, _) = train_classifier(&train, Some(&test), &cfg, net.seed, |m| {
            let test_acc = m.test_accuracy.unwrap_or(f64::NAN);
            log::info!(
                "epoch {}: loss {:.4} train {:.4} test {:.4}",
                m.epoch,
                m.loss,
                m.train_accuracy,
                test_acc
            );
            let _ = writeln!(csv, "{},{:.6},{:.6},{:.6}", m.epoch, m.loss, m.train_accuracy, test_acc);
        })?;
        write_text(&self.path("classifier_metrics.csv"), &csv)?;
        self.log_seeds(
            "train-fc",
            net.seed,
            &[
                Phase::EncodeActivation,
                Phase::ClassifierInit,
                Phase::ClassifierShuffle,
                Phase::ClassifierDropout,
            ],
        )?;
        save_checkpoint(&net.to_checkpoint(Some(model)), self.path(CHECKPOINT))?;
        log::info!("wrote {}", self.path(CHECKPOINT).display());
        Ok(())
    }

    pub fn eval(&self, limits: Limits) -> Result<()> {
        let net = self.network()?;
        let model = load_checkpoint(self.path(CHECKPOINT))?
            .classifier
            .ok_or_else(|| Error::Config("checkpoint has no trained classifier; run train-fc".into()))?;
        let test = self.activations(&net, Split::Test, limits)?;
        let report = evaluate_accuracy(&predict_set(&model, &test)?, &test.labels)?;
        let text = format!(
            "test accuracy {:.4} ({} / {})\n",
            report.accuracy(),
            report.correct,
            report.total
        );
        print!("{text}");
        write_text(&self.path("eval.txt"), &text)?;
        write_text(
            &self.path("eval.csv"),
            &format!("correct,total,accuracy\n{},{},{:.6}\n", report.correct, report.total, report.accuracy()),
        )?;
        write_text(&self.path("confusion.csv"), &report.confusion_csv())
    }

    pub fn report_compression(&self, args: &CompressionArgs) -> Result<()> {
        let spec = self.config.topology_spec()?;
        let subject_kernels = args
            .subject_kernels
            .unwrap_or_else(|| spec.conv.iter().map(|&(m, _)| m as u64).sum());
        let subject_size = args.subject_size.unwrap_or(spec.conv[0].1 as u64);
        let mut reports: Vec<CompressionReport> = vec![kernel_compression(
            KernelDescriptor::full_precision(args.baseline_kernels, args.baseline_size),
            KernelDescriptor::binary(subject_kernels, subject_size),
        )?];
        if let Some(s) = &args.synaptic {
            let parse = |v: &str| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad --synaptic value `{s}`, expected BASELINE:SUBJECT")))
            };
            let (b, n) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad --synaptic value `{s}`, expected BASELINE:SUBJECT")))?;
            reports.push(synaptic_compression(parse(b)?, parse(n)?, 784)?);
        }
        let mut text = String::new();
        let mut csv = format!("{}\n", CompressionReport::csv_header());
        for r in &reports {
            let _ = writeln!(text, "{r}");
            let _ = writeln!(csv, "{}", r.csv_row());
        }
        print!("{text}");
        write_text(&self.path("compression.txt"), &text)?;
        write_text(&self.path("compression.csv"), &csv)
    }

    pub fn export_kernels(&self, scale: usize) -> Result<()> {
        let net = self.network()?;
        let scale = scale.max(1);
        for (n, layer) in net.layers.iter().enumerate() {
            let shape = layer.kernels.shape();
            let weights = layer.kernels.weights();
            let sim = &net.topology.sim;
            let side = shape.k * scale;
            let tiles: Vec<Vec<u8>> = weights
                .chunks(shape.k * shape.k)
                .map(|kernel| {
                    let mut t = vec![0u8; side * side];
                    for y in 0..side {
                        for x in 0..side {
                            let w = kernel[(y / scale) * shape.k + x / scale];
                            let v = (w - sim.w_low) / (sim.w_high - sim.w_low);
                            t[y * side + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                        }
                    }
                    t
                })
                .collect();
            let path = self.path(&format!("kernels_layer{}.pgm", n + 1));
            tile(&tiles, side, side, shape.in_maps).save(&path)?;
            if let Kernels::Binary(bank) = &layer.kernels {
                log::info!(
                    "layer {}: {} kernels, {:.3} high, entropy {:.3} bits",
                    n + 1,
                    shape.out_maps * shape.in_maps,
                    bank.fraction_high(),
                    bank.bit_entropy()
                );
            }
            log::info!("wrote {}", path.display());
        }
        Ok(())
    }

    pub fn run_fcsnn(&self, layout: Option<Layout>, train_patterns: Option<usize>, test_limit: Option<usize>) -> Result<()> {
        if self.config.dataset != Dataset::Mnist {
            return Err(Error::Config("the FC-SNN baseline runs on MNIST only".into()));
        }
        let mut cfg = self.config.fcsnn.clone().unwrap_or_default();
        if let Some(l) = layout {
            cfg.window.layout = l;
        }
        if let Some(n) = train_patterns {
            cfg.train_patterns = n;
        }
        let train = self.load(Split::Train)?;
        let test = limit(self.load(Split::Test)?, test_limit);
        let patterns = train.slice(0, cfg.train_patterns.min(train.len()));
        let mut net = Fcsnn::new(cfg.clone(), train.dim(), self.config.seed)?;
        log::info!(
            "FC-SNN: {} neurons, layout {:?}, {} training patterns",
            cfg.neurons,
            cfg.window.layout,
            patterns.len()
        );
        let spikes = net.train(&patterns)?;
        let tag_counts = net.respond_all(&patterns, 1);
        let tagging = tag_neurons(&tag_counts, &patterns.labels, net.neurons());
        let pred: Vec<usize> = net
            .respond_all(&test, 2)
            .iter()
            .map(|c| predict_from_counts(c, &tagging))
            .collect();
        let report = evaluate_accuracy(&pred, &test.labels)?;
        let text = format!(
            "layout {:?}\ntraining spikes {spikes}\ndistinct tags {}\ntest accuracy {:.4} ({} / {})\n",
            cfg.window.layout,
            tagging.distinct(),
            report.accuracy(),
            report.correct,
            report.total
        );
        print!("{text}");
        write_text(&self.path("fcsnn.txt"), &text)?;
        write_text(
            &self.path("fcsnn_metrics.csv"),
            &format!(
                "layout,neurons,train_patterns,test_images,accuracy\n{:?},{},{},{},{:.6}\n",
                cfg.window.layout,
                cfg.neurons,
                patterns.len(),
                report.total,
                report.accuracy()
            ),
        )?;
        write_text(&self.path("fcsnn_confusion.csv"), &report.confusion_csv())?;
        let fields: Vec<Vec<u8>> = (0..net.neurons()).map(|j| receptive_field(&net, j)).collect();
        let cols = (net.neurons() as f64).sqrt().ceil() as usize;
        tile(&fields, train.width, train.height, cols).save(self.path("fcsnn_receptive_fields.pgm"))?;
        self.log_seeds(
            "run-fcsnn",
            self.config.seed,
            &[Phase::FcsnnInit, Phase::EncodeFcsnn, Phase::FcsnnSwitch],
        )
    }
}
