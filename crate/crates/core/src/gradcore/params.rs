use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"MKPT1";

/// How a parameter tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`, fan-in being the product of all but the
    /// first dimension (conv `[out, in, k, k]`) or the first dimension
    /// (dense `[in, out]`).
    FanInUniform { dense: bool },
    Zeros,
}

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{}`", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Names under a dotted prefix such as `"enc."`.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> {
        self.tensors.keys().filter(move |k| k.starts_with(prefix))
    }

    /// Copies every tensor under `from` to the same suffix under `to`.
    pub fn copy_prefix(&mut self, from: &str, to: &str) {
        let copies: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter(|(k, _)| k.starts_with(from))
            .map(|(k, v)| (format!("{}{}", to, &k[from.len()..]), v.clone()))
            .collect();
        self.tensors.extend(copies);
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let mut store = ParamStore::new();
        while !r.is_empty() {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_bytes(&mut r, name_len)?;
            let name = String::from_utf8(name.to_vec())
                .map_err(|_| Error::Format("non-utf8 tensor name".into()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = read_bytes(&mut r, n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn read_bytes<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Format("truncated checkpoint record".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(read_bytes(r, 8)?.try_into().expect("8 bytes")))
}

/// Seeded initializer. Tensors are drawn in declaration order from one
/// stream, so the same `(seed, declarations)` reproduces identical values.
pub struct Initializer {
    rng: ChaCha8Rng,
    seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tensor(&mut self, shape: &[usize], init: Init) -> Tensor {
        match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::FanInUniform { dense } => {
                let fan_in: usize = if dense {
                    shape[0]
                } else {
                    shape[1..].iter().product()
                };
                let limit = (6.0 / fan_in.max(1) as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n).map(|_| self.rng.random_range(-limit..limit)).collect();
                Tensor::from_parts(shape.to_vec(), data)
            }
        }
    }
}

/// `p <- p - lr * g` for every parameter in `params`.
pub fn sgd_update(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
    sgd_update_subset(params, grads, lr, |_| true)
}

/// SGD restricted to parameters selected by `train`; the others are left
/// untouched and need no gradient.
pub fn sgd_update_subset(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    train: impl Fn(&str) -> bool,
) -> Result<()> {
    for (name, p) in params.tensors.iter_mut() {
        if !train(name) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        if g.shape() != p.shape() {
            return Err(Error::shape("sgd_update", format!("gradient for `{}`", name)));
        }
        if lr == 0.0 {
            continue;
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

/// Step-decay schedule: `initial * decay^floor(epoch / every)`, never below `floor`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub every: usize,
    pub floor: f64,
}

impl LrSchedule {
    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let steps = epoch / self.every.max(1);
        (self.initial * self.decay.powi(steps as i32)).max(self.floor.min(self.initial))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::scalar(2.0));
        sgd_update(&mut p, &g, 0.1).unwrap();
        assert!((p.get("w").unwrap().data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params_bitwise() {
        let mut init = Initializer::new(3);
        let mut p = ParamStore::new();
        p.insert("a", init.tensor(&[4, 3], Init::FanInUniform { dense: true }));
        let before = p.clone();
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::full(&[4, 3], 7.0));
        sgd_update(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(1.0));
        let g = BTreeMap::new();
        assert!(matches!(
            sgd_update(&mut p, &g, 0.1),
            Err(Error::MissingGradient(n)) if n == "w"
        ));
    }

    #[test]
    fn schedule_decays_every_five_epochs() {
        let s = LrSchedule {
            initial: 0.1,
            decay: 0.9,
            every: 5,
            floor: 1e-6,
        };
        assert_eq!(s.at_epoch(0), 0.1);
        assert_eq!(s.at_epoch(4), 0.1);
        assert!((s.at_epoch(10) - 0.081).abs() < 1e-15);
        assert_eq!(s.at_epoch(100_000), 1e-6);
    }

    #[test]
    fn same_seed_same_init() {
        let a = Initializer::new(11).tensor(&[8, 3, 3, 3], Init::FanInUniform { dense: false });
        let b = Initializer::new(11).tensor(&[8, 3, 3, 3], Init::FanInUniform { dense: false });
        assert_eq!(a, b);
        let c = Initializer::new(12).tensor(&[8, 3, 3, 3], Init::FanInUniform { dense: false });
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_bytes_layout() {
        let mut p = ParamStore::new();
        p.insert("b", Tensor::vector(vec![1.5, -2.0]));
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..5], b"MKPT1");
        assert_eq!(&bytes[5..9], &1u32.to_le_bytes());
        assert_eq!(&bytes[9..10], b"b");
        assert_eq!(&bytes[10..14], &1u32.to_le_bytes());
        assert_eq!(&bytes[14..22], &2u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 38);
        assert_eq!(ParamStore::from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(ParamStore::from_bytes(b"MKPT2").is_err());
        let mut p = ParamStore::new();
        p.insert("x", Tensor::vector(vec![1.0]));
        let bytes = p.to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
