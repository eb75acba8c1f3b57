use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::detect::BetaConfig;
use crate::embednet::{EncoderConfig, LossWeights, MarginConfig, UpdateSchedule};
use crate::error::{Error, Result};
use crate::evalkit::Polarity;
use crate::gradcore::LrSchedule;
use crate::imaging::{MorphOptions, SynthConfig, TripletOptions};

/// Every setting of a run, read from flat `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Second dataset for cross-dataset evaluation.
    pub eval_manifest: Option<PathBuf>,
    pub dataset_id: String,
    pub eval_dataset_id: String,
    pub seed: u64,

    pub subjects: usize,
    pub captures: usize,
    pub morphs: usize,
    pub image_size: usize,
    pub alpha_warp: f64,
    pub alpha_blend: f64,

    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub d_a: usize,
    pub d_g: usize,
    pub d_f: usize,
    pub critic_hidden: usize,

    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub scale: f64,
    pub alpha_g: f64,
    pub lambda1_a: f64,
    pub lambda1_g: f64,
    pub lambda2_a: f64,
    pub lambda2_g: f64,
    pub perturbation_variance: f64,

    pub lr1: f64,
    pub lr2: f64,
    pub lr_decay: f64,
    pub lr_every: usize,
    pub lr_floor: f64,
    pub epochs1: usize,
    pub epochs2: usize,
    pub batch_size: usize,
    pub dual_encoder: bool,
    pub alternating: bool,

    pub beta_grid: Vec<BetaConfig>,
    /// Fixed β; when unset `eval` sweeps the grid on the validation split.
    pub beta: Option<BetaConfig>,
    /// Attack when the fused score is low (similarity reading).
    pub low_is_attack: bool,
    pub trusted_known: bool,
    pub train_fraction: f64,
    pub val_fraction: f64,

    pub svm_c: f64,
    /// 0 means `1 / feature dim`.
    pub svm_gamma: f64,
    pub bsif_filters: usize,
    pub bsif_size: usize,
    pub bsif_patches: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let margin = MarginConfig::default();
        let w = LossWeights::default();
        let synth = SynthConfig::default();
        RunConfig {
            manifest: None,
            eval_manifest: None,
            dataset_id: "train".into(),
            eval_dataset_id: "eval".into(),
            seed: 7,
            subjects: synth.subjects,
            captures: synth.captures,
            morphs: synth.morphs,
            image_size: enc.input_size,
            alpha_warp: synth.morph.alpha_warp,
            alpha_blend: synth.morph.alpha_blend,
            channels: enc.channels,
            strides: enc.strides,
            kernel: enc.kernel,
            d_a: enc.d_a,
            d_g: enc.d_g,
            d_f: enc.d_f,
            critic_hidden: enc.critic_hidden,
            m1: margin.m1,
            m2: margin.m2,
            m3: margin.m3,
            scale: margin.s,
            alpha_g: w.alpha_g,
            lambda1_a: w.lambda1_a,
            lambda1_g: w.lambda1_g,
            lambda2_a: w.lambda2_a,
            lambda2_g: w.lambda2_g,
            perturbation_variance: TripletOptions::default().perturbation_variance,
            lr1: 0.1,
            lr2: 1e-2,
            lr_decay: 0.9,
            lr_every: 5,
            lr_floor: 1e-6,
            epochs1: 30,
            epochs2: 30,
            batch_size: 128,
            dual_encoder: false,
            alternating: false,
            beta_grid: crate::detect::default_beta_grid(),
            beta: None,
            low_is_attack: true,
            trusted_known: true,
            train_fraction: 0.5,
            val_fraction: 0.1,
            svm_c: 10.0,
            svm_gamma: 0.0,
            bsif_filters: 8,
            bsif_size: 7,
            bsif_patches: 5000,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value for `{}`: `{}`", key, v)))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

fn parse_beta(key: &str, v: &str) -> Result<BetaConfig> {
    let (a, g) = v
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("`{}` expects a:g, got `{}`", key, v)))?;
    BetaConfig::new(parse_value(key, a.trim())?, parse_value(key, g.trim())?)
        .map_err(|e| Error::Config(e.to_string()))
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn beta_text(b: &BetaConfig) -> String {
    format!("{:?}:{:?}", b.beta_a, b.beta_g)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "manifest" => self.manifest = path(v),
            "eval_manifest" => self.eval_manifest = path(v),
            "dataset_id" => self.dataset_id = v.to_string(),
            "eval_dataset_id" => self.eval_dataset_id = v.to_string(),
            "seed" => self.seed = parse_value(key, v)?,
            "subjects" => self.subjects = parse_value(key, v)?,
            "captures" => self.captures = parse_value(key, v)?,
            "morphs" => self.morphs = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "alpha_warp" => self.alpha_warp = parse_value(key, v)?,
            "alpha_blend" => self.alpha_blend = parse_value(key, v)?,
            "channels" => self.channels = parse_list(key, v)?,
            "strides" => self.strides = parse_list(key, v)?,
            "kernel" => self.kernel = parse_value(key, v)?,
            "d_a" => self.d_a = parse_value(key, v)?,
            "d_g" => self.d_g = parse_value(key, v)?,
            "d_f" => self.d_f = parse_value(key, v)?,
            "critic_hidden" => self.critic_hidden = parse_value(key, v)?,
            "m1" => self.m1 = parse_value(key, v)?,
            "m2" => self.m2 = parse_value(key, v)?,
            "m3" => self.m3 = parse_value(key, v)?,
            "scale" => self.scale = parse_value(key, v)?,
            "alpha_g" => self.alpha_g = parse_value(key, v)?,
            "lambda1_a" => self.lambda1_a = parse_value(key, v)?,
            "lambda1_g" => self.lambda1_g = parse_value(key, v)?,
            "lambda2_a" => self.lambda2_a = parse_value(key, v)?,
            "lambda2_g" => self.lambda2_g = parse_value(key, v)?,
            "perturbation_variance" => self.perturbation_variance = parse_value(key, v)?,
            "lr1" => self.lr1 = parse_value(key, v)?,
            "lr2" => self.lr2 = parse_value(key, v)?,
            "lr_decay" => self.lr_decay = parse_value(key, v)?,
            "lr_every" => self.lr_every = parse_value(key, v)?,
            "lr_floor" => self.lr_floor = parse_value(key, v)?,
            "epochs1" => self.epochs1 = parse_value(key, v)?,
            "epochs2" => self.epochs2 = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "dual_encoder" => self.dual_encoder = parse_value(key, v)?,
            "alternating" => self.alternating = parse_value(key, v)?,
            "beta_grid" => {
                self.beta_grid = v
                    .split(',')
                    .map(|b| parse_beta(key, b.trim()))
                    .collect::<Result<_>>()?
            }
            "beta" => self.beta = if v.is_empty() { None } else { Some(parse_beta(key, v)?) },
            "low_is_attack" => self.low_is_attack = parse_value(key, v)?,
            "trusted_known" => self.trusted_known = parse_value(key, v)?,
            "train_fraction" => self.train_fraction = parse_value(key, v)?,
            "val_fraction" => self.val_fraction = parse_value(key, v)?,
            "svm_c" => self.svm_c = parse_value(key, v)?,
            "svm_gamma" => self.svm_gamma = parse_value(key, v)?,
            "bsif_filters" => self.bsif_filters = parse_value(key, v)?,
            "bsif_size" => self.bsif_size = parse_value(key, v)?,
            "bsif_patches" => self.bsif_patches = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{}`", other))),
        }
        Ok(())
    }

    /// Canonical text: every key in a fixed order. `parse(to_text())` is
    /// the identity.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let entries: Vec<(&str, String)> = vec![
            ("manifest", p(&self.manifest)),
            ("eval_manifest", p(&self.eval_manifest)),
            ("dataset_id", self.dataset_id.clone()),
            ("eval_dataset_id", self.eval_dataset_id.clone()),
            ("seed", self.seed.to_string()),
            ("subjects", self.subjects.to_string()),
            ("captures", self.captures.to_string()),
            ("morphs", self.morphs.to_string()),
            ("image_size", self.image_size.to_string()),
            ("alpha_warp", format!("{:?}", self.alpha_warp)),
            ("alpha_blend", format!("{:?}", self.alpha_blend)),
            ("channels", join(&self.channels)),
            ("strides", join(&self.strides)),
            ("kernel", self.kernel.to_string()),
            ("d_a", self.d_a.to_string()),
            ("d_g", self.d_g.to_string()),
            ("d_f", self.d_f.to_string()),
            ("critic_hidden", self.critic_hidden.to_string()),
            ("m1", format!("{:?}", self.m1)),
            ("m2", format!("{:?}", self.m2)),
            ("m3", format!("{:?}", self.m3)),
            ("scale", format!("{:?}", self.scale)),
            ("alpha_g", format!("{:?}", self.alpha_g)),
            ("lambda1_a", format!("{:?}", self.lambda1_a)),
            ("lambda1_g", format!("{:?}", self.lambda1_g)),
            ("lambda2_a", format!("{:?}", self.lambda2_a)),
            ("lambda2_g", format!("{:?}", self.lambda2_g)),
            ("perturbation_variance", format!("{:?}", self.perturbation_variance)),
            ("lr1", format!("{:?}", self.lr1)),
            ("lr2", format!("{:?}", self.lr2)),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("lr_every", self.lr_every.to_string()),
            ("lr_floor", format!("{:?}", self.lr_floor)),
            ("epochs1", self.epochs1.to_string()),
            ("epochs2", self.epochs2.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dual_encoder", self.dual_encoder.to_string()),
            ("alternating", self.alternating.to_string()),
            ("beta_grid", self.beta_grid.iter().map(beta_text).collect::<Vec<_>>().join(",")),
            ("beta", self.beta.as_ref().map(beta_text).unwrap_or_default()),
            ("low_is_attack", self.low_is_attack.to_string()),
            ("trusted_known", self.trusted_known.to_string()),
            ("train_fraction", format!("{:?}", self.train_fraction)),
            ("val_fraction", format!("{:?}", self.val_fraction)),
            ("svm_c", format!("{:?}", self.svm_c)),
            ("svm_gamma", format!("{:?}", self.svm_gamma)),
            ("bsif_filters", self.bsif_filters.to_string()),
            ("bsif_size", self.bsif_size.to_string()),
            ("bsif_patches", self.bsif_patches.to_string()),
        ];
        entries.iter().map(|(k, v)| format!("{}={}\n", k, v)).collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if self.beta_grid.is_empty() {
            return bad("beta_grid is empty");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.svm_c > 0.0) || self.svm_gamma < 0.0 {
            return bad("svm_c must be positive and svm_gamma non-negative");
        }
        self.margin().validate()?;
        self.weights().validate()?;
        self.encoder().validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_size: self.image_size,
            channels: self.channels.clone(),
            strides: self.strides.clone(),
            kernel: self.kernel,
            d_a: self.d_a,
            d_g: self.d_g,
            d_f: self.d_f,
            n_classes: 2,
            critic_hidden: self.critic_hidden,
        }
    }

    pub fn margin(&self) -> MarginConfig {
        MarginConfig {
            m1: self.m1,
            m2: self.m2,
            m3: self.m3,
            s: self.scale,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha_g: self.alpha_g,
            lambda1_a: self.lambda1_a,
            lambda1_g: self.lambda1_g,
            lambda2_a: self.lambda2_a,
            lambda2_g: self.lambda2_g,
        }
    }

    pub fn schedule(&self, stage: u8) -> LrSchedule {
        LrSchedule {
            initial: if stage == 1 { self.lr1 } else { self.lr2 },
            decay: self.lr_decay,
            every: self.lr_every,
            floor: self.lr_floor,
        }
    }

    pub fn update(&self) -> UpdateSchedule {
        if self.alternating {
            UpdateSchedule::Alternating
        } else {
            UpdateSchedule::Joint
        }
    }

    pub fn polarity(&self) -> Polarity {
        if self.low_is_attack {
            Polarity::LowIsAttack
        } else {
            Polarity::HighIsAttack
        }
    }

    pub fn morph_options(&self) -> MorphOptions {
        MorphOptions {
            alpha_warp: self.alpha_warp,
            alpha_blend: self.alpha_blend,
            ..MorphOptions::default()
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            subjects: self.subjects,
            captures: self.captures,
            morphs: self.morphs,
            seed: self.seed,
            size: self.image_size,
            morph: self.morph_options(),
            ..SynthConfig::default()
        }
    }

    pub fn triplet(&self) -> TripletOptions {
        TripletOptions {
            perturbation_variance: self.perturbation_variance,
            ..TripletOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("seed=3\nlearning_rate=0.5\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(RunConfig::parse("seed=abc").is_err());
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let cfg = RunConfig::parse("# comment\nseed = 11\nbeta = 2:2\nchannels=4,8\nstrides=2,2\n").unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.beta, Some(BetaConfig::new(2.0, 2.0).unwrap()));
        assert_eq!(cfg.channels, vec![4, 8]);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap().hash(), cfg.hash());
    }

    #[test]
    fn documented_defaults() {
        let cfg = RunConfig::default();
        let s = cfg.schedule(1);
        assert_eq!((s.initial, s.decay, s.every, s.floor), (0.1, 0.9, 5, 1e-6));
        assert_eq!(cfg.schedule(2).initial, 1e-2);
        assert_eq!((cfg.m1, cfg.m2, cfg.m3), (0.9, 0.4, 0.15));
        assert_eq!((cfg.alpha_g, cfg.lambda1_a, cfg.lambda1_g), (9.4, 1.3, 0.75));
        assert_eq!((cfg.lambda2_a, cfg.lambda2_g), (1.0, 1.0));
        assert_eq!(cfg.batch_size, 128);
        assert_eq!((cfg.train_fraction, cfg.val_fraction), (0.5, 0.1));
    }
}
