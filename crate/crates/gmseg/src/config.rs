//! Run configuration: a flat `key = value` file merged with `--key value`
//! command-line overrides over built-in defaults. Unknown keys are rejected;
//! the effective configuration is echoed before any work starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use gmseg_core::data::AugmentConfig;
use gmseg_core::segnet::{Mode, ModelConfig};
use gmseg_core::train::TrainConfig;
use gmseg_core::Error;

/// (key, default, help) for every recognized knob.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "global RNG seed (env GMSEG_SEED as fallback)"),
    ("dtype", "f32", "numeric precision: f32 | f64"),
    ("ckpt", "", "checkpoint file to load (infer/eval) or resume from"),
    ("model.mode", "ovos", "task mode: ovos | zvos"),
    ("model.widths", "16,32,64,64", "encoder stage widths; last = memory channels"),
    ("memory.N", "3", "memory size: support frames held as graph nodes"),
    ("reason.K", "3", "episodic reasoning steps (0 = memoryless ablation)"),
    ("train.lr", "0.0001", "base learning rate of the poly schedule"),
    ("train.power", "1.0", "poly schedule power"),
    ("train.max_steps", "0", "schedule horizon; 0 derives it from the stage steps"),
    ("train.batch", "4", "clips per optimizer step"),
    ("train.pretrain_steps", "500", "stage-1 steps on synthetic clips"),
    ("train.main_steps", "0", "stage-2 steps on the real dataset"),
    ("train.data", "", "dataset root for stage-2 training"),
    ("train.label_shuffle", "true", "shuffle instance ids per episode (ovos)"),
    ("train.max_skip", "25", "max temporal gap when sampling clip frames"),
    ("train.val_every", "100", "validation/checkpoint cadence in steps; 0 = end only"),
    ("train.val_clips", "8", "held-out synthetic clips for validation"),
    ("train.out", "gmseg_run", "output directory: checkpoints and training log"),
    ("train.augment", "true", "enable train-time augmentation"),
    ("train.vary_support", "false", "sample support counts 1..=N per clip (bank-size robustness)"),
    ("train.aug_rotation", "10", "max |rotation| in degrees"),
    ("train.aug_saturation", "0.2", "max |saturation| jitter fraction"),
    ("train.aug_hflip", "true", "random horizontal flips"),
    ("data.canvas", "64", "shape-world canvas side"),
    ("data.video_frames", "8", "frames per generated video"),
    ("data.min_instances", "2", "min instances per generated video"),
    ("data.max_instances", "2", "max instances per generated video"),
    ("data.occluder", "false", "add an unlabeled occluder shape"),
    ("gen.videos", "8", "videos to generate"),
    ("gen.out", "dataset", "output dataset root"),
    ("gen.spec", "", "optional shape-world spec file (key = value)"),
    ("infer.data", "dataset", "dataset root to segment"),
    ("infer.out", "predictions", "output root for predicted masks"),
    ("infer.threshold", "0.5", "zero-shot binarization threshold"),
    ("infer.persist_writes", "false", "carry episodic write updates across frames"),
    ("infer.dump_probs", "false", "also write per-instance probability images"),
    ("eval.pred", "predictions", "prediction root"),
    ("eval.gt", "dataset", "ground-truth root"),
    ("eval.out", "gmseg_eval", "report output directory"),
    ("eval.tolerance", "0", "boundary match radius in px; 0 = 0.8% of the diagonal"),
    ("eval.skip_first", "false", "exclude frame 0 from evaluation (one-shot runs)"),
    ("plot.log", "gmseg_run/train_log.txt", "training log to plot"),
    ("plot.kv", "gmseg_eval/report.kv", "metric key-value file to plot"),
    ("plot.out", "plots", "directory for rendered charts"),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    root: PathBuf,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl RunConfig {
    pub fn defaults(root: &Path) -> Self {
        let values = KEYS
            .iter()
            .map(|(k, d, _)| (k.to_string(), d.to_string()))
            .collect();
        let mut cfg = RunConfig {
            values,
            root: root.to_path_buf(),
        };
        if let Ok(seed) = std::env::var("GMSEG_SEED") {
            cfg.values.insert("seed".into(), seed);
        }
        cfg
    }

    /// Merges a config file: one `key = value` per line, `#` comments.
    /// Duplicate keys within one file are conflicts.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !known(key) {
                return Err(Error::Config(format!(
                    "{}:{}: unknown key `{key}`",
                    path.display(),
                    lineno + 1
                ))
                .into());
            }
            if let Some(prev) = seen.insert(key.to_string(), lineno + 1) {
                return Err(Error::Config(format!(
                    "{}:{}: duplicate key `{key}` (first set on line {prev})",
                    path.display(),
                    lineno + 1
                ))
                .into());
            }
            self.values.insert(key.to_string(), value.to_string());
        }
        Ok(())
    }

    /// Applies `--key value` pairs from the command line.
    pub fn merge_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let key = flag.strip_prefix("--").ok_or_else(|| {
                Error::Config(format!("expected `--key value` overrides, got `{flag}`"))
            })?;
            if !known(key) {
                return Err(Error::Config(format!("unknown key `--{key}`")).into());
            }
            let value = it
                .next()
                .ok_or_else(|| Error::Config(format!("`--{key}` is missing a value")))?;
            self.values.insert(key.to_string(), value.clone());
        }
        Ok(())
    }

    /// `key = value` lines of the effective configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("config: {k} = {v}\n"));
        }
        out
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves a path-valued key against `--root`.
    pub fn path(&self, key: &str) -> PathBuf {
        let v = self.str(key);
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unregistered key `{key}`"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.str(key);
        v.parse().map_err(|_| {
            Error::Config(format!("key `{key}`: cannot parse `{v}`")).into()
        })
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key)
    }

    pub fn mode(&self) -> Result<Mode> {
        Ok(Mode::parse(self.str("model.mode"))?)
    }

    pub fn widths(&self) -> Result<[usize; 4]> {
        let v = self.str("model.widths");
        let parts: Vec<usize> = v
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("model.widths: cannot parse `{v}`")))?;
        let arr: [usize; 4] = parts
            .try_into()
            .map_err(|_| Error::Config(format!("model.widths needs 4 entries, got `{v}`")))?;
        if arr.iter().any(|&w| w == 0) {
            return Err(Error::Config("model.widths entries must be positive".into()).into());
        }
        Ok(arr)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            widths: self.widths()?,
            mode: self.mode()?,
        })
    }

    pub fn augment(&self) -> Result<Option<AugmentConfig>> {
        if !self.bool("train.augment")? {
            return Ok(None);
        }
        Ok(Some(AugmentConfig {
            hflip: self.bool("train.aug_hflip")?,
            rotation_deg: self.f64("train.aug_rotation")?,
            saturation: self.f64("train.aug_saturation")?,
        }))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            support_size: self.usize("memory.N")?,
            reason_steps: self.usize("reason.K")?,
            batch_size: self.usize("train.batch")?,
            base_lr: self.f64("train.lr")?,
            power: self.f64("train.power")?,
            max_steps: self.usize("train.max_steps")?,
            pretrain_steps: self.usize("train.pretrain_steps")?,
            main_steps: self.usize("train.main_steps")?,
            seed: self.u64("seed")?,
            mode: self.mode()?,
            label_shuffle: self.bool("train.label_shuffle")?,
            max_skip: self.usize("train.max_skip")?,
            val_every: self.usize("train.val_every")?,
            augment: self.augment()?,
            vary_support: self.bool("train.vary_support")?,
        };
        Ok(cfg.validated()?)
    }

    pub fn infer_config(&self) -> Result<gmseg_core::infer::InferConfig> {
        Ok(gmseg_core::infer::InferConfig {
            support_size: self.usize("memory.N")?,
            reason_steps: self.usize("reason.K")?,
            threshold: self.f64("infer.threshold")?,
            seed: self.u64("seed")?,
            persist_writes: self.bool("infer.persist_writes")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_full_model() {
        let cfg = RunConfig::defaults(Path::new("."));
        assert_eq!(cfg.usize("memory.N").unwrap(), 3);
        assert_eq!(cfg.usize("reason.K").unwrap(), 3);
        assert_eq!(cfg.str("model.mode"), "ovos");
    }

    #[test]
    fn overrides_change_single_keys() {
        let mut cfg = RunConfig::defaults(Path::new("."));
        cfg.merge_overrides(&["--reason.K".into(), "0".into()]).unwrap();
        assert_eq!(cfg.usize("reason.K").unwrap(), 0);
    }

    #[test]
    fn unknown_override_is_config_error() {
        let mut cfg = RunConfig::defaults(Path::new("."));
        let err = cfg
            .merge_overrides(&["--bogus".into(), "1".into()])
            .unwrap_err();
        assert!(err.downcast_ref::<Error>().is_some());
    }

    #[test]
    fn widths_parse_and_validate() {
        let mut cfg = RunConfig::defaults(Path::new("."));
        cfg.merge_overrides(&["--model.widths".into(), "4, 4, 8, 8".into()])
            .unwrap();
        assert_eq!(cfg.widths().unwrap(), [4, 4, 8, 8]);
        cfg.merge_overrides(&["--model.widths".into(), "1,2,3".into()])
            .unwrap();
        assert!(cfg.widths().is_err());
    }
}
