use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use super::{Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"SIMGCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors plus non-trainable buffers (running statistics,
/// target scalers).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(t);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.buffers.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the global gradient norm to at most this; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        Adam {
            config,
            step: 0,
            m: store.values.iter().map(zeros).collect(),
            v: store.values.iter().map(zeros).collect(),
        }
    }

    /// One update; parameters without a gradient are treated as having a
    /// zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<(), TensorError> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                left: [store.len(), 0],
                right: [grads.len(), 0],
            });
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != store.values[k].shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam",
                        left: store.values[k].shape(),
                        right: g.shape(),
                    });
                }
            }
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().flatten().map(|g| g.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, g) in grads.iter().enumerate() {
            let p = store.values[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                let gi = g.as_ref().map_or(0.0, |g| g.data()[i] * scale);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.cols() as u64).to_le_bytes())?;
    for x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_tensor(r: &mut impl Read) -> io::Result<(String, Tensor)> {
    let len = read_u32(r)? as usize;
    if len > 4096 {
        return Err(bad("tensor name too long"));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let n = rows.checked_mul(cols).filter(|&n| n <= 1 << 28).ok_or_else(|| bad("tensor too large"))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(read_f64(r)?);
    }
    Ok((name, Tensor::new(rows, cols, data).expect("length matches")))
}

/// Binary checkpoint:
///
/// ```text
/// "SIMGCKPT1"
/// u32 parameter count, then per parameter: u32 name length, name,
///     u64 rows, u64 cols, rows·cols f64
/// u32 buffer count, then buffers in the same layout
/// u8 optimizer flag; if 1: u64 step, f64 lr, beta1, beta2, eps,
///     then first and second moments in parameter order (same layout)
/// ```
///
/// All integers and floats are little-endian.
pub fn save_checkpoint(w: &mut impl Write, store: &ParamStore, opt: Option<&Adam>) -> io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.names.iter().zip(&store.values) {
        write_tensor(w, name, t)?;
    }
    w.write_all(&(store.buffers.len() as u32).to_le_bytes())?;
    for (name, t) in &store.buffers {
        write_tensor(w, name, t)?;
    }
    match opt {
        None => w.write_all(&[0])?,
        Some(a) => {
            w.write_all(&[1])?;
            w.write_all(&a.step.to_le_bytes())?;
            for x in [a.config.lr, a.config.beta1, a.config.beta2, a.config.eps] {
                w.write_all(&x.to_le_bytes())?;
            }
            for (k, name) in store.names.iter().enumerate() {
                write_tensor(w, name, &a.m[k])?;
            }
            for (k, name) in store.names.iter().enumerate() {
                write_tensor(w, name, &a.v[k])?;
            }
        }
    }
    Ok(())
}

pub fn load_checkpoint(r: &mut impl Read) -> io::Result<(ParamStore, Option<Adam>)> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a SIMG checkpoint"));
    }
    let mut store = ParamStore::new();
    for _ in 0..read_u32(r)? {
        let (name, t) = read_tensor(r)?;
        if store.id(&name).is_some() {
            return Err(bad(format!("duplicate parameter {name}")));
        }
        store.add(name, t);
    }
    for _ in 0..read_u32(r)? {
        let (name, t) = read_tensor(r)?;
        store.set_buffer(name, t);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let opt = match flag[0] {
        0 => None,
        1 => {
            let step = read_u64(r)?;
            let lr = read_f64(r)?;
            let beta1 = read_f64(r)?;
            let beta2 = read_f64(r)?;
            let eps = read_f64(r)?;
            let mut moments = [Vec::new(), Vec::new()];
            for m in &mut moments {
                for id in store.ids() {
                    let (name, t) = read_tensor(r)?;
                    if name != store.name(id) || t.shape() != store.get(id).shape() {
                        return Err(bad(format!("optimizer state for {name} does not match parameters")));
                    }
                    m.push(t);
                }
            }
            let [m, v] = moments;
            Some(Adam {
                config: AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                    clip_norm: None,
                },
                step,
                m,
                v,
            })
        }
        f => return Err(bad(format!("unknown optimizer flag {f}"))),
    };
    Ok((store, opt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![1.0, -2.0]));
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Some(Tensor::zeros(1, 2))]).unwrap();
        assert_eq!(store.get(ParamId(0)).data(), &[1.0, -2.0]);
    }

    #[test]
    fn one_step_matches_hand_computation() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::scalar(0.5));
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        };
        let mut adam = Adam::new(&store, cfg);
        adam.step(&mut store, &[Some(Tensor::scalar(2.0))]).unwrap();
        let m = 0.1 * 2.0;
        let v = 0.001 * 4.0;
        let expected = 0.5 - 0.1 * (m / 0.1) / ((v / 0.001f64).sqrt() + 1e-8);
        assert!((store.get(ParamId(0)).item() - expected).abs() < 1e-15);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(vec![3.0, -4.0, 0.5]));
        let target = [1.0, 2.0, -1.0];
        let mut adam = Adam::new(
            &store,
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
        );
        let grad = |s: &ParamStore| {
            Tensor::row(s.get(id).data().iter().zip(target).map(|(w, t)| 2.0 * (w - t)).collect())
        };
        for _ in 0..5000 {
            let g = grad(&store);
            adam.step(&mut store, &[Some(g)]).unwrap();
        }
        assert!(grad(&store).norm() < 1e-6);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::new(2, 2, vec![1.0, 2.0, 3.0, f64::MIN_POSITIVE]).unwrap());
        store.add("b", Tensor::row(vec![-0.0]));
        store.set_buffer("scale", Tensor::row(vec![4.0, 5.0]));
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[Some(Tensor::full(2, 2, 0.5)), None]).unwrap();
        let mut bytes = Vec::new();
        save_checkpoint(&mut bytes, &store, Some(&adam)).unwrap();
        assert_eq!(&bytes[..9], CHECKPOINT_MAGIC);
        let (s2, a2) = load_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(s2, store);
        let a2 = a2.unwrap();
        assert_eq!((a2.step, a2.m.clone(), a2.v.clone()), (adam.step, adam.m.clone(), adam.v.clone()));
        assert!(load_checkpoint(&mut &bytes[..20]).is_err());
    }
}
