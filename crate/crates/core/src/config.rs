//! The TOML run configuration shared by every command.
//!
//! Unknown keys are errors. Every omitted key takes its default, and the fully
//! materialized document is written back into the output directory so a run can be
//! repeated from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_cifar_binary, load_idx, CifarVariant, LabeledDataset, Split, SyntheticTask};
use crate::gradients::OracleConfig;
use crate::topology::{
    build_dense, build_hopfield_resnet, build_hopfield_resnet13, build_vgg5, BuildOptions,
    NetworkTopology, SkipKind,
};
use crate::training::TrainingConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub precision: Precision,
    pub out_dir: PathBuf,
    pub topology: TopologyConfig,
    pub data: DataConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            precision: Precision::F64,
            out_dir: PathBuf::from("runs/default"),
            topology: TopologyConfig::default(),
            data: DataConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Which network to build. Input shape and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    Vgg5 {
        channels: [usize; 4],
        pools: [bool; 4],
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        biases: bool,
    },
    /// Hopfield-Resnet with one block per entry of `channels`.
    Resnet {
        channels: Vec<usize>,
        #[serde(default)]
        skip: SkipKind,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        biases: bool,
    },
    Dense {
        hidden: Vec<usize>,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        biases: bool,
    },
    /// A topology serialized as JSON (states, edges, biases).
    Custom { path: PathBuf },
}

fn default_alpha() -> f64 {
    6.0
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig::Resnet {
            channels: vec![16, 16, 16, 16],
            skip: SkipKind::Conv1x1,
            alpha: default_alpha(),
            biases: false,
        }
    }
}

impl TopologyConfig {
    pub fn build(&self, in_shape: [usize; 3], num_classes: usize) -> Result<NetworkTopology> {
        match self {
            TopologyConfig::Vgg5 {
                channels,
                pools,
                alpha,
                biases,
            } => build_vgg5(in_shape, *channels, *pools, num_classes, opts(*alpha, *biases)),
            TopologyConfig::Resnet {
                channels,
                skip,
                alpha,
                biases,
            } if channels.len() == 4 && *skip == SkipKind::Conv1x1 => build_hopfield_resnet13(
                in_shape,
                [channels[0], channels[1], channels[2], channels[3]],
                num_classes,
                opts(*alpha, *biases),
            ),
            TopologyConfig::Resnet {
                channels,
                skip,
                alpha,
                biases,
            } => build_hopfield_resnet(in_shape, channels, num_classes, *skip, opts(*alpha, *biases)),
            TopologyConfig::Dense { hidden, alpha, biases } => {
                let mut sizes = vec![in_shape.iter().product()];
                sizes.extend(hidden);
                sizes.push(num_classes);
                build_dense(&sizes, opts(*alpha, *biases))
            }
            TopologyConfig::Custom { path } => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading topology {}", path.display()), e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("topology {}: {e}", path.display())))
            }
        }
    }
}

fn opts(alpha: f64, biases: bool) -> BuildOptions {
    BuildOptions { alpha, biases }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Keep only the first `train_limit` training samples (0 keeps all).
    pub train_limit: usize,
    pub test_limit: usize,
    /// Samples held out from the end of the training set for validation (0 disables).
    pub validation: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            train_limit: 0,
            test_limit: 0,
            validation: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Noisy class prototypes (see [`SyntheticTask`]).
    Synthetic {
        classes: usize,
        image_shape: [usize; 3],
        train_per_class: usize,
        test_per_class: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar10 {
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
    },
    Cifar100 {
        train_files: Vec<PathBuf>,
        test_files: Vec<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            classes: 10,
            image_shape: [1, 16, 16],
            train_per_class: 20,
            test_per_class: 10,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Loaded splits. `validation` is empty unless requested.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: LabeledDataset,
    pub validation: Option<LabeledDataset>,
    pub test: LabeledDataset,
}

impl DataConfig {
    pub fn load(&self) -> Result<Splits> {
        let (train, test) = match &self.source {
            DataSource::Synthetic {
                classes,
                image_shape,
                train_per_class,
                test_per_class,
                noise,
                seed,
            } => {
                let task = SyntheticTask::new(*classes, *image_shape, *seed)?;
                (
                    task.sample(*train_per_class, *noise, seed.wrapping_add(1), Split::Train)?,
                    task.sample(*test_per_class, *noise, seed.wrapping_add(2), Split::Test)?,
                )
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let mut test = load_idx(test_images, test_labels)?;
                test.split = Split::Test;
                (load_idx(train_images, train_labels)?, test)
            }
            DataSource::Cifar10 { train_files, test_files } => cifar(train_files, test_files, CifarVariant::Cifar10)?,
            DataSource::Cifar100 { train_files, test_files } => {
                cifar(train_files, test_files, CifarVariant::Cifar100)?
            }
        };
        let limit = |d: LabeledDataset, n: usize| if n > 0 { d.truncate(n) } else { d };
        let train = limit(train, self.train_limit);
        let test = limit(test, self.test_limit);
        if train.image_shape() != test.image_shape() {
            return Err(Error::Config(format!(
                "train images {:?} and test images {:?} differ in shape",
                train.image_shape(),
                test.image_shape()
            )));
        }
        let class_count = train.class_count.max(test.class_count);
        let (mut train, validation) = if self.validation > 0 {
            let (t, v) = train.split_validation(self.validation)?;
            (t, Some(v))
        } else {
            (train, None)
        };
        train.class_count = class_count;
        let mut test = test;
        test.class_count = class_count;
        Ok(Splits {
            train,
            validation: validation.map(|mut v| {
                v.class_count = class_count;
                v
            }),
            test,
        })
    }
}

fn cifar(train: &[PathBuf], test: &[PathBuf], v: CifarVariant) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut t = load_cifar_binary(test, v)?;
    t.split = Split::Test;
    Ok((load_cifar_binary(train, v)?, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { batch_size: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub betas: Vec<f64>,
    /// Refuse topologies with more trainable scalars than this.
    pub max_params: usize,
    /// Samples in the checked batch.
    pub batch: usize,
    /// Accepted band for the centered error ratio between consecutive betas.
    pub cep_ratio_band: (f64, f64),
    pub ep_ratio_band: (f64, f64),
    pub oracle: OracleConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.2, 0.1, 0.05],
            max_params: 2000,
            batch: 1,
            cep_ratio_band: (2.5, 6.0),
            ep_ratio_band: (1.5, 3.0),
            oracle: OracleConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a checkpoint every this many epochs (the final one is always written).
    pub checkpoint_every: usize,
    pub histogram_bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint_every: 1,
            histogram_bins: 50,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The document with every default filled in.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    /// Write the materialized config to `<out_dir>/config.toml` and return its text.
    pub fn echo(&self, out_dir: &Path) -> Result<String> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
        let text = self.to_toml()?;
        let path = out_dir.join("config.toml");
        fs::write(&path, &text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[training]\nbeat = 0.2").is_err());
        assert!(RunConfig::from_toml("[topology]\nkind = \"dense\"\nhidden = [4]\nwidth = 3").is_err());
    }

    #[test]
    fn materialized_config_round_trips() {
        let cfg = RunConfig::from_toml(
            "precision = \"f32\"\n[topology]\nkind = \"vgg5\"\nchannels = [8, 8, 8, 8]\npools = [true, true, false, false]\n[training]\nbeta = 0.3\n[training.relaxation]\nt_free = 40\n",
        )
        .unwrap();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.training.relaxation.t_nudge, 50);
    }

    #[test]
    fn builds_each_topology_kind() {
        let shape = [1, 16, 16];
        let vgg = TopologyConfig::Vgg5 {
            channels: [4, 4, 4, 4],
            pools: [true, true, true, false],
            alpha: 6.0,
            biases: false,
        };
        assert_eq!(vgg.build(shape, 10).unwrap().num_classes(), 10);
        assert_eq!(TopologyConfig::default().build(shape, 10).unwrap().param_ids().len(), 13);
        let dense = TopologyConfig::Dense {
            hidden: vec![5],
            alpha: 6.0,
            biases: true,
        };
        assert_eq!(dense.build(shape, 3).unwrap().num_states(), 3);
    }

    #[test]
    fn synthetic_splits_load() {
        let s = DataConfig {
            validation: 20,
            ..Default::default()
        }
        .load()
        .unwrap();
        assert_eq!(s.train.len(), 180);
        assert_eq!(s.validation.unwrap().len(), 20);
        assert_eq!(s.test.len(), 100);
    }
}
