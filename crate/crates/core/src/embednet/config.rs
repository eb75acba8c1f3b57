use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gradcore::{AngularMargin, LrSchedule};
use crate::imaging::DEFAULT_SIZE;

/// Conv trunk followed by the depth split into appearance and landmark
/// branches and the ID head over their concatenation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub d_a: usize,
    pub d_g: usize,
    pub d_f: usize,
    pub n_classes: usize,
    /// Hidden width of each critic's per-embedding layer.
    pub critic_hidden: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            input_size: DEFAULT_SIZE,
            channels: vec![8, 16, 16, 16],
            strides: vec![2, 2, 2, 2],
            kernel: 3,
            d_a: 32,
            d_g: 32,
            d_f: 64,
            n_classes: 2,
            critic_hidden: 64,
        }
    }
}

impl EncoderConfig {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }

    /// Spatial size after the trunk.
    pub fn final_spatial(&self) -> usize {
        self.strides.iter().fold(self.input_size, |s, &st| {
            (s + 2 * self.pad() - self.kernel) / st + 1
        })
    }

    pub fn final_depth(&self) -> usize {
        *self.channels.last().unwrap_or(&3)
    }

    /// Flattened size of one half of the trunk output.
    pub fn branch_input(&self) -> usize {
        let s = self.final_spatial();
        s * s * self.final_depth() / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config("channels and strides must be nonempty and equally long".into()));
        }
        if self.final_depth() % 2 != 0 {
            return Err(Error::Config("final depth must be even to split it".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config("kernel size must be odd".into()));
        }
        if self.strides.contains(&0) || self.channels.contains(&0) {
            return Err(Error::Config("zero channel count or stride".into()));
        }
        if self.input_size < self.kernel {
            return Err(Error::Config("input smaller than the kernel".into()));
        }
        if self.d_a == 0 || self.d_g == 0 || self.d_f == 0 || self.critic_hidden == 0 {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginConfig {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub s: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            m1: 0.9,
            m2: 0.4,
            m3: 0.15,
            s: 64.0,
        }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.s > 0.0) || !self.m2.is_finite() || !self.m3.is_finite() {
            return Err(Error::Config("margin needs m1 > 0 and s > 0".into()));
        }
        Ok(())
    }

    pub fn angular(&self) -> AngularMargin {
        AngularMargin {
            m1: self.m1,
            m2: self.m2,
            m3: self.m3,
            scale: self.s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_g: f64,
    pub lambda1_a: f64,
    pub lambda1_g: f64,
    pub lambda2_a: f64,
    pub lambda2_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_g: 9.4,
            lambda1_a: 1.3,
            lambda1_g: 0.75,
            lambda2_a: 1.0,
            lambda2_g: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha_g, self.lambda1_a, self.lambda1_g, self.lambda2_a, self.lambda2_g];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

pub fn stage1_schedule() -> LrSchedule {
    LrSchedule {
        initial: 0.1,
        decay: 0.9,
        every: 5,
        floor: 1e-6,
    }
}

pub fn stage2_schedule() -> LrSchedule {
    LrSchedule {
        initial: 1e-2,
        ..stage1_schedule()
    }
}

/// How critic and encoder parameters share optimizer steps in stage 2.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpdateSchedule {
    /// Critics and encoder step together.
    #[default]
    Joint,
    /// Even steps update critics, odd steps the encoder and ID head.
    Alternating,
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Stage tag, seed and model settings written next to a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub stage: u8,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub margin: MarginConfig,
    pub weights: LossWeights,
    pub dual_encoder: bool,
}

impl CheckpointMeta {
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let m = &self.margin;
        let w = &self.weights;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{}={}\n", k, v));
        kv("stage", self.stage.to_string());
        kv("seed", self.seed.to_string());
        kv("dual_encoder", self.dual_encoder.to_string());
        kv("input_size", e.input_size.to_string());
        kv("channels", list(&e.channels));
        kv("strides", list(&e.strides));
        kv("kernel", e.kernel.to_string());
        kv("d_a", e.d_a.to_string());
        kv("d_g", e.d_g.to_string());
        kv("d_f", e.d_f.to_string());
        kv("n_classes", e.n_classes.to_string());
        kv("critic_hidden", e.critic_hidden.to_string());
        kv("m1", format!("{:?}", m.m1));
        kv("m2", format!("{:?}", m.m2));
        kv("m3", format!("{:?}", m.m3));
        kv("s", format!("{:?}", m.s));
        kv("alpha_g", format!("{:?}", w.alpha_g));
        kv("lambda1_a", format!("{:?}", w.lambda1_a));
        kv("lambda1_g", format!("{:?}", w.lambda1_g));
        kv("lambda2_a", format!("{:?}", w.lambda2_a));
        kv("lambda2_g", format!("{:?}", w.lambda2_g));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad sidecar line `{}`", line)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("sidecar lacks `{}`", k)))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value for `{}`: `{}`", k, v)))
        }
        let f = |k: &str| -> Result<f64> { num(k, get(k)?) };
        let u = |k: &str| -> Result<usize> { num(k, get(k)?) };
        let l = |k: &str| -> Result<Vec<usize>> {
            get(k)?.split(',').map(|x| num(k, x.trim())).collect()
        };
        Ok(CheckpointMeta {
            stage: num("stage", get("stage")?)?,
            seed: num("seed", get("seed")?)?,
            dual_encoder: num("dual_encoder", get("dual_encoder")?)?,
            encoder: EncoderConfig {
                input_size: u("input_size")?,
                channels: l("channels")?,
                strides: l("strides")?,
                kernel: u("kernel")?,
                d_a: u("d_a")?,
                d_g: u("d_g")?,
                d_f: u("d_f")?,
                n_classes: u("n_classes")?,
                critic_hidden: u("critic_hidden")?,
            },
            margin: MarginConfig {
                m1: f("m1")?,
                m2: f("m2")?,
                m3: f("m3")?,
                s: f("s")?,
            },
            weights: LossWeights {
                alpha_g: f("alpha_g")?,
                lambda1_a: f("lambda1_a")?,
                lambda1_g: f("lambda1_g")?,
                lambda2_a: f("lambda2_a")?,
                lambda2_g: f("lambda2_g")?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trunk_reaches_seven() {
        let c = EncoderConfig::default();
        assert_eq!(c.final_spatial(), 7);
        assert_eq!(c.branch_input(), 7 * 7 * 8);
        c.validate().unwrap();
        let odd = EncoderConfig {
            channels: vec![8, 15],
            strides: vec![2, 2],
            ..EncoderConfig::default()
        };
        assert!(odd.validate().is_err());
    }

    #[test]
    fn schedules() {
        assert!((stage1_schedule().at_epoch(10) - 0.081).abs() < 1e-15);
        assert_eq!(stage2_schedule().at_epoch(0), 1e-2);
    }

    #[test]
    fn meta_round_trip() {
        let meta = CheckpointMeta {
            stage: 2,
            seed: 99,
            encoder: EncoderConfig {
                n_classes: 7,
                ..EncoderConfig::default()
            },
            margin: MarginConfig::default(),
            weights: LossWeights::default(),
            dual_encoder: true,
        };
        assert_eq!(CheckpointMeta::parse(&meta.to_text()).unwrap(), meta);
        assert!(CheckpointMeta::parse("stage=1\n").is_err());
    }
}
