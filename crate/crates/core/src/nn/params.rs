//! Parameter trees and the parameter file format.
//!
//! File layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "FSMP"
//! version      u32      1
//! tensor count u32
//! seed         u64      initialisation seed
//! per tensor, in name order:
//!   name length u32, name (UTF-8)
//!   dtype       u8       0 = f64
//!   rank        u8
//!   dims        rank × u64
//!   payload     product(dims) × f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use super::{NnError, Tensor};

pub const PARAMS_MAGIC: [u8; 4] = *b"FSMP";
pub const PARAMS_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

/// Named tensors making up a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
    pub seed: u64,
}

impl ModelParams {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: BTreeMap::new(),
            seed,
        }
    }

    /// Registers a tensor; a name may only be registered once.
    pub fn register(&mut self, name: impl Into<String>, t: Tensor) -> Result<(), NnError> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    /// Replaces an existing tensor, keeping its shape contract.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), NnError> {
        let slot = self.get_mut(name)?;
        if slot.shape() != t.shape() {
            return Err(NnError::ParamShape {
                name: name.to_string(),
                expected: slot.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *slot = t;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Copies every tensor of `other` whose name starts with `prefix`.
    pub fn merge_prefix(&mut self, other: &ModelParams, prefix: &str) -> Result<(), NnError> {
        for (name, t) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.set(name, t.clone())?;
        }
        Ok(())
    }

    /// Checks names and shapes against a template built for the same model.
    pub fn check_matches(&self, template: &ModelParams) -> Result<(), NnError> {
        let unknown: Vec<String> = self
            .names()
            .filter(|n| !template.contains(n))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(NnError::UnknownTensors(unknown));
        }
        let missing: Vec<String> = template
            .names()
            .filter(|n| !self.contains(n))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(NnError::MissingTensors(missing));
        }
        for (name, t) in template.iter() {
            let found = self.get(name)?;
            if found.shape() != t.shape() {
                return Err(NnError::ParamShape {
                    name: name.clone(),
                    expected: t.shape().to_vec(),
                    found: found.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Gradients keyed like the parameters they belong to.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    tensors: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, name: &str, g: Tensor) -> Result<(), NnError> {
        match self.tensors.get_mut(name) {
            Some(acc) => acc.add_assign(&g),
            None => {
                self.tensors.insert(name.to_string(), g);
                Ok(())
            }
        }
    }

    pub fn accumulate_slice(&mut self, name: &str, shape: &[usize], g: &[f64]) -> Result<(), NnError> {
        self.accumulate(name, Tensor::new(shape.to_vec(), g.to_vec())?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn merge(&mut self, other: Gradients) -> Result<(), NnError> {
        for (name, g) in other.tensors {
            self.accumulate(&name, g)?;
        }
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Kaiming-uniform initialisation: U(-b, b) with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(&PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    buf.extend_from_slice(&params.seed.to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| NnError::ParamFile {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams, NnError> {
    let path = path.as_ref();
    let err = |detail: &str| NnError::ParamFile {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let bytes = std::fs::read(path).map_err(|e| err(&e.to_string()))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let truncated = || err("truncated file");
    if c.take(4).ok_or_else(truncated)? != PARAMS_MAGIC {
        return Err(err("bad magic"));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != PARAMS_VERSION {
        return Err(NnError::Version {
            found: version,
            expected: PARAMS_VERSION,
        });
    }
    let count = c.u32().ok_or_else(truncated)?;
    let mut params = ModelParams::new(c.u64().ok_or_else(truncated)?);
    for _ in 0..count {
        let len = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(len).ok_or_else(truncated)?)
            .map_err(|_| err("tensor name is not UTF-8"))?
            .to_string();
        if c.u8().ok_or_else(truncated)? != DTYPE_F64 {
            return Err(err(&format!("{name}: unsupported dtype")));
        }
        let rank = c.u8().ok_or_else(truncated)? as usize;
        let dims = (0..rank)
            .map(|_| c.u64().map(|d| d as usize).ok_or_else(truncated))
            .collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let payload = c.take(n * 8).ok_or_else(truncated)?;
        let data = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        params.register(name, Tensor::new(dims, data)?)?;
    }
    if c.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn random_tree(n: usize, seed: u64) -> ModelParams {
        let mut rng = rng_from_seed(seed);
        let mut p = ModelParams::new(seed);
        for i in 0..n {
            let rank = rng.random_range(0..=4usize);
            let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..4)).collect();
            let t = kaiming_uniform(&shape, 3, &mut rng);
            p.register(format!("layer{i}.w"), t).unwrap();
        }
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut p = random_tree(5, 3);
        p.get_mut("layer0.w").unwrap().data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        save_params(&p, &path).unwrap();
        let back = load_params(&path).unwrap();
        assert_eq!(back, p);
        for (a, b) in p.iter().zip(back.iter()) {
            for (x, y) in a.1.data().iter().zip(b.1.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn thousand_tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let p = random_tree(1000, 9);
        save_params(&p, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), p);
    }

    #[test]
    fn header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut p = ModelParams::new(42);
        p.register("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        save_params(&p, &path).unwrap();
        let b = std::fs::read(&path).unwrap();
        assert_eq!(&b[..4], b"FSMP");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..20], &42u64.to_le_bytes());
        assert_eq!(&b[20..24], &1u32.to_le_bytes());
        assert_eq!(b[24], b'a');
        assert_eq!(b[25], 0);
        assert_eq!(b[26], 1);
        assert_eq!(&b[27..35], &2u64.to_le_bytes());
        assert_eq!(b.len(), 35 + 16);
    }

    #[test]
    fn missing_and_unknown_tensors_are_named() {
        let template = random_tree(3, 1);
        let mut partial = ModelParams::new(1);
        for (n, t) in template.iter().skip(1) {
            partial.register(n.clone(), t.clone()).unwrap();
        }
        match partial.check_matches(&template).unwrap_err() {
            NnError::MissingTensors(names) => assert_eq!(names, vec!["layer0.w".to_string()]),
            e => panic!("{e}"),
        }
        let mut extra = template.clone();
        extra.register("bogus", Tensor::zeros(&[1])).unwrap();
        match extra.check_matches(&template).unwrap_err() {
            NnError::UnknownTensors(names) => assert_eq!(names, vec!["bogus".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_params(&random_tree(1, 0), &path).unwrap();
        let mut b = std::fs::read(&path).unwrap();
        b[4] = 9;
        std::fs::write(&path, b).unwrap();
        assert!(matches!(load_params(&path).unwrap_err(), NnError::Version { found: 9, .. }));
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut p = ModelParams::new(0);
        p.register("x", Tensor::zeros(&[1])).unwrap();
        assert!(p.register("x", Tensor::zeros(&[1])).is_err());
    }
}
