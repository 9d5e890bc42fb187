//! Flat `key = value` settings files with dotted keys (`gp.lengthscale = 2`).
//! Blank lines and `#` comments are ignored; later lines override earlier
//! ones; unknown keys are an error.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use densegp::imagekit::SynthConfig;
use densegp::pipeline::{SplitPolicy, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`; known keys: {}", KEYS.join(", "))]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
}

/// Everything a config file can set.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub split: SplitPolicy,
}

pub const KEYS: &[&str] = &[
    "synth.per_class",
    "synth.image_size",
    "synth.test_fraction",
    "synth.label_flip",
    "synth.brightness_shift",
    "synth.seed",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.weight_decay",
    "train.seed",
    "train.refit_gp_every",
    "train.fit_kernel",
    "train.augment",
    "train.laplace_tol",
    "train.laplace_max_iter",
    "network.in_channels",
    "network.stem_channels",
    "network.growth_rate",
    "network.block_sizes",
    "network.compression",
    "network.input_size",
    "network.use_batchnorm",
    "gp.lengthscale",
    "gp.signal_variance",
    "gp.prior_mean",
    "gp.latent_noise",
    "split.train_fraction",
    "split.seed",
];

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        line,
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(|v| parse(line, key, v.trim()))
        .collect()
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        let mut s = Settings::default();
        s.apply_text(&text)?;
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                text: raw.trim().into(),
            })?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.trim().into(),
                });
            }
            self.set(line, key, value)?;
        }
        Ok(())
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        let (sy, tr, sp) = (&mut self.synth, &mut self.train, &mut self.split);
        let net = &mut tr.network;
        match key {
            "synth.per_class" => sy.samples_per_class = parse(line, key, v)?,
            "synth.image_size" => sy.image_size = parse(line, key, v)?,
            "synth.test_fraction" => sy.test_fraction = parse(line, key, v)?,
            "synth.label_flip" => sy.label_flip_rate = parse(line, key, v)?,
            "synth.brightness_shift" => sy.brightness_shift = parse(line, key, v)?,
            "synth.seed" => sy.seed = parse(line, key, v)?,
            "train.epochs" => tr.epochs = parse(line, key, v)?,
            "train.batch_size" => tr.batch_size = parse(line, key, v)?,
            "train.learning_rate" => tr.learning_rate = parse(line, key, v)?,
            "train.weight_decay" => tr.weight_decay = parse(line, key, v)?,
            "train.seed" => tr.seed = parse(line, key, v)?,
            "train.refit_gp_every" => tr.refit_gp_every = parse(line, key, v)?,
            "train.fit_kernel" => tr.fit_kernel = parse(line, key, v)?,
            "train.augment" => tr.augment = parse(line, key, v)?,
            "train.laplace_tol" => tr.laplace_tol = parse(line, key, v)?,
            "train.laplace_max_iter" => tr.laplace_max_iter = parse(line, key, v)?,
            "network.in_channels" => net.in_channels = parse(line, key, v)?,
            "network.stem_channels" => net.stem_channels = parse(line, key, v)?,
            "network.growth_rate" => net.growth_rate = parse(line, key, v)?,
            "network.block_sizes" => net.block_sizes = parse_list(line, key, v)?,
            "network.compression" => net.compression = parse(line, key, v)?,
            "network.input_size" => net.input_size = parse(line, key, v)?,
            "network.use_batchnorm" => net.use_batchnorm = parse(line, key, v)?,
            "gp.lengthscale" => tr.gp.lengthscale = parse(line, key, v)?,
            "gp.signal_variance" => tr.gp.signal_variance = parse(line, key, v)?,
            "gp.prior_mean" => tr.gp.prior_mean = parse(line, key, v)?,
            "gp.latent_noise" => tr.gp.latent_noise = parse(line, key, v)?,
            "split.train_fraction" => sp.train_fraction = parse(line, key, v)?,
            "split.seed" => sp.seed = parse(line, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                })
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_key_is_accepted() {
        for key in KEYS {
            let value = match *key {
                "network.block_sizes" => "2,2",
                k if k.ends_with("fit_kernel")
                    || k.ends_with("augment")
                    || k.ends_with("batchnorm") =>
                {
                    "true"
                }
                k if k.contains("fraction") || k.contains("flip") || k.contains("compression") => {
                    "0.5"
                }
                _ => "3",
            };
            let mut s = Settings::default();
            s.apply_text(&format!("{key} = {value}"))
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn values_comments_and_overrides() {
        let mut s = Settings::default();
        s.apply_text(
            "# experiment\n\ngp.lengthscale = 2.5  # wide\nnetwork.block_sizes = [3, 1]\ntrain.epochs=4\ntrain.epochs = 7\n",
        )
        .unwrap();
        assert_eq!(s.train.gp.lengthscale, 2.5);
        assert_eq!(s.train.network.block_sizes, vec![3, 1]);
        assert_eq!(s.train.epochs, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        let err = Settings::default()
            .apply_text("gp.lenghtscale = 1")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("gp.lenghtscale") && err.contains("line 1"),
            "{err}"
        );
        let err = Settings::default()
            .apply_text("\ntrain.epochs = many")
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("train.epochs") && err.contains("line 2"),
            "{err}"
        );
        assert!(matches!(
            Settings::default().apply_text("just words"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
    }
}
