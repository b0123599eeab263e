//! `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unset
//! keys keep the library defaults. `loss` is applied first regardless of
//! position so per-loss defaults never overwrite explicit values.
//!
//! | key | default |
//! |---|---|
//! | `loss` | `margin` |
//! | objective fields (`gamma`, `beta`, `msim_alpha`, ...) | per-loss defaults of [`ObjectiveSpec::new`] |
//! | `sampler` | `spc2` |
//! | `miner` | `distance_weighted` |
//! | `seeds` | `0` |
//! | `toy.*` (`toy.iterations`, `toy.variant`, ...) | [`ToyConfig::default`] |

use std::collections::HashMap;

use crate::batching::SamplerKind;
use crate::error::{Error, Result};
use crate::objectives::{ObjectiveKind, ObjectiveSpec};
use crate::toytrain::{LineVariant, ToyConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinerChoice {
    Random,
    Semihard,
    Softhard,
    DistanceWeighted,
}

impl MinerChoice {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "random" => MinerChoice::Random,
            "semihard" => MinerChoice::Semihard,
            "softhard" => MinerChoice::Softhard,
            "distance_weighted" => MinerChoice::DistanceWeighted,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub objective: ObjectiveSpec,
    pub sampler: SamplerKind,
    pub miner: MinerChoice,
    pub seeds: Vec<u64>,
    pub toy: ToyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveSpec::new(ObjectiveKind::Margin),
            sampler: SamplerKind::Spc(2),
            miner: MinerChoice::DistanceWeighted,
            seeds: vec![0],
            toy: ToyConfig::default(),
        }
    }
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad(line, format!("cannot parse {value:?} for `{key}`")))
}

pub fn parse_seeds(value: &str) -> std::result::Result<Vec<u64>, String> {
    let seeds = value
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| format!("bad seed {s:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(seeds)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| bad(line, format!("expected `key = value`, found {content:?}")))?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if let Some(first) = seen.insert(key.clone(), line) {
                return Err(bad(line, format!("`{key}` already set on line {first}")));
            }
            entries.push((line, key, value));
        }

        let mut cfg = RunConfig::default();
        if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "loss") {
            let kind = ObjectiveKind::from_name(v).ok_or_else(|| bad(*line, format!("unknown loss {v:?}")))?;
            cfg.objective = ObjectiveSpec::new(kind);
        }
        for (line, key, value) in &entries {
            cfg.set(*line, key, value)?;
        }
        let last = entries.last().map_or(0, |e| e.0);
        cfg.objective.validate().map_err(|e| bad(last, e.to_string()))?;
        cfg.toy.validate().map_err(|e| bad(last, e.to_string()))?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let o = &mut self.objective;
        let t = &mut self.toy;
        match key {
            "loss" => {}
            "gamma" => o.gamma = num(line, key, v)?,
            "gamma2" => o.gamma2 = num(line, key, v)?,
            "beta" => o.beta = num(line, key, v)?,
            "beta_lr" => o.beta_lr = num(line, key, v)?,
            "nu" => o.nu = num(line, key, v)?,
            "angular_alpha" => o.angular_alpha = num(line, key, v)?,
            "angular_lambda" => o.angular_lambda = num(line, key, v)?,
            "msim_alpha" => o.msim_alpha = num(line, key, v)?,
            "msim_beta" => o.msim_beta = num(line, key, v)?,
            "msim_lambda" => o.msim_lambda = num(line, key, v)?,
            "msim_epsilon" => o.msim_epsilon = num(line, key, v)?,
            "snr_lambda" => o.snr_lambda = num(line, key, v)?,
            "temperature" => o.temperature = num(line, key, v)?,
            "scale" => o.scale = num(line, key, v)?,
            "bins" => o.bins = num(line, key, v)?,
            "st_tau" => o.st_tau = num(line, key, v)?,
            "st_lambda" => o.st_lambda = num(line, key, v)?,
            "st_delta" => o.st_delta = num(line, key, v)?,
            "st_gamma" => o.st_gamma = num(line, key, v)?,
            "proxies_per_class" => o.proxies_per_class = num(line, key, v)?,
            "proxy_lr" => o.proxy_lr = num(line, key, v)?,
            "p_switch" => o.p_switch = num(line, key, v)?,
            "sampler" => {
                self.sampler = SamplerKind::from_name(v).ok_or_else(|| bad(line, format!("unknown sampler {v:?}")))?
            }
            "miner" => self.miner = MinerChoice::from_name(v).ok_or_else(|| bad(line, format!("unknown miner {v:?}")))?,
            "seeds" => self.seeds = parse_seeds(v).map_err(|m| bad(line, m))?,
            "toy.hidden_width" => t.hidden_width = num(line, key, v)?,
            "toy.layers" => t.layers = num(line, key, v)?,
            "toy.output_dim" => t.output_dim = num(line, key, v)?,
            "toy.iterations" => t.iterations = num(line, key, v)?,
            "toy.batch_size" => t.batch_size = num(line, key, v)?,
            "toy.learning_rate" => t.learning_rate = num(line, key, v)?,
            "toy.margin" => t.margin = num(line, key, v)?,
            "toy.p_switch" => t.p_switch = num(line, key, v)?,
            "toy.samples_per_line" => t.samples_per_line = num(line, key, v)?,
            "toy.trace_every" => t.trace_every = num(line, key, v)?,
            "toy.spacing" => t.geometry.spacing = num(line, key, v)?,
            "toy.length" => t.geometry.length = num(line, key, v)?,
            "toy.variant" => {
                t.variant = LineVariant::from_name(v).ok_or_else(|| bad(line, format!("unknown variant {v:?}")))?
            }
            _ => return Err(bad(line, format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn loss_defaults_do_not_clobber_explicit_values() {
        let cfg = RunConfig::parse("gamma = 0.3\nloss = triplet\n").unwrap();
        assert_eq!(cfg.objective.kind, ObjectiveKind::Triplet);
        assert_eq!(cfg.objective.gamma, 0.3);
    }

    #[test]
    fn toy_overrides_and_seeds() {
        let cfg = RunConfig::parse("toy.iterations=50\ntoy.variant = axis # comment\nseeds = 1, 2,3\n").unwrap();
        assert_eq!(cfg.toy.iterations, 50);
        assert_eq!(cfg.toy.variant, LineVariant::Axis);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("gamma = 0.1\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        let err = RunConfig::parse("gamma = x\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = RunConfig::parse("seeds = 1\nseeds = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = RunConfig::parse("no equals sign\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        assert!(RunConfig::parse("toy.p_switch = 2\n").is_err());
    }
}
