use std::io::{Read, Write};

use super::{Gradients, Result, Tape, Tensor, TensorError};

const CHECKPOINT_MAGIC: &[u8; 4] = b"DCN1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named tensor plus its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub grad: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    /// Buffers (e.g. batch-norm running statistics) are stored alongside
    /// parameters but never receive gradients.
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let n = tensor.len();
        Self {
            name: name.into(),
            tensor,
            grad: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            trainable: true,
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        self.insert(Parameter::new(name, tensor))
    }

    pub fn insert(&mut self, param: Parameter) -> Result<ParamId> {
        if self.find(&param.name).is_some() {
            return Err(TensorError::Invalid { op: "param", detail: format!("duplicate name {}", param.name) });
        }
        self.params.push(param);
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// Adds the tape gradients of every parameter leaf into `Parameter::grad`.
    /// A parameter placed on the tape several times receives the sum.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (var, id) in tape.param_links() {
            if let Some(g) = grads.get(var) {
                for (d, v) in self.params[id.0].grad.iter_mut().zip(g) {
                    *d += v;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// Applies update number `t` (1-based) to every trainable parameter,
    /// then zeroes the gradients.
    pub fn step(&self, store: &mut ParamStore, t: u64) -> Result<()> {
        if t < 1 {
            return Err(TensorError::Invalid { op: "adam_step", detail: "step index must be >= 1".into() });
        }
        let c1 = 1.0 - self.beta1.powi(t as i32);
        let c2 = 1.0 - self.beta2.powi(t as i32);
        for p in store.iter_mut().filter(|p| p.trainable) {
            let w = p.tensor.data_mut();
            for i in 0..w.len() {
                let g = p.grad[i];
                p.adam_m[i] = self.beta1 * p.adam_m[i] + (1.0 - self.beta1) * g;
                p.adam_v[i] = self.beta2 * p.adam_v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = p.adam_m[i] / c1;
                let v_hat = p.adam_v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.step = t;
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(w.write_all(&buf)?)
}

/// Writes `DCN1`, a record count, then per parameter: name length, UTF-8
/// name, rank, dims, data, Adam first and second moments, and step counter.
/// All integers are u64 little-endian; floats are f64 little-endian.
pub fn write_checkpoint<'a>(w: &mut impl Write, params: impl IntoIterator<Item = &'a Parameter>) -> Result<()> {
    let params: Vec<&Parameter> = params.into_iter().collect();
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u64(w, params.len() as u64)?;
    for p in params {
        put_u64(w, p.name.len() as u64)?;
        w.write_all(p.name.as_bytes())?;
        put_u64(w, p.tensor.rank() as u64)?;
        for &d in p.tensor.shape() {
            put_u64(w, d as u64)?;
        }
        put_f64s(w, p.tensor.data())?;
        put_f64s(w, &p.adam_m)?;
        put_f64s(w, &p.adam_v)?;
        put_u64(w, p.step)?;
    }
    Ok(())
}

fn fill(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => TensorError::Checkpoint("truncated file".into()),
        _ => TensorError::Io(e),
    })
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    fill(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    fill(r, &mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

/// Reads a checkpoint written by [`write_checkpoint`]. Every record comes
/// back marked trainable; callers restore buffers by name.
pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<Parameter>> {
    let mut magic = [0u8; 4];
    fill(r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let count = get_u64(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = get_u64(r)? as usize;
        if len > 1 << 16 {
            return Err(TensorError::Checkpoint(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        fill(r, &mut name)?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        let rank = get_u64(r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(TensorError::Checkpoint(format!("{name}: unsupported rank {rank}")));
        }
        let dims = (0..rank).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        if n > 1 << 28 {
            return Err(TensorError::Checkpoint(format!("{name}: implausible size {dims:?}")));
        }
        let data = get_f64s(r, n)?;
        let adam_m = get_f64s(r, n)?;
        let adam_v = get_f64s(r, n)?;
        let step = get_u64(r)?;
        let tensor = Tensor::new(dims, data).map_err(|e| TensorError::Checkpoint(format!("{name}: {e}")))?;
        out.push(Parameter { name, tensor, grad: vec![0.0; n], adam_m, adam_v, step, trainable: true });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v)).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.add("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn one_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        s.get_mut(ParamId(0)).grad[0] = 1.0;
        Adam::new(0.001).step(&mut s, 1).unwrap();
        let w = s.get(ParamId(0)).tensor.data()[0];
        assert!((1.0 - w - 0.001).abs() < 1e-10, "{w}");
        assert_eq!(s.get(ParamId(0)).grad[0], 0.0);
    }

    #[test]
    fn zero_grad_is_a_no_op() {
        let mut s = scalar_store(0.3);
        Adam::new(0.001).step(&mut s, 1).unwrap();
        let p = s.get(ParamId(0));
        assert_eq!(p.tensor.data()[0], 0.3);
        assert_eq!((p.adam_m[0], p.adam_v[0], p.step), (0.0, 0.0, 1));
    }

    #[test]
    fn step_zero_rejected() {
        assert!(Adam::new(0.001).step(&mut scalar_store(0.0), 0).is_err());
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut s = scalar_store(1.0);
        let adam = Adam::new(0.001);
        let mut prev = 1.0;
        for t in 1..=100 {
            let w = s.get(ParamId(0)).tensor.data()[0];
            s.get_mut(ParamId(0)).grad[0] = 2.0 * w;
            adam.step(&mut s, t).unwrap();
            let w = s.get(ParamId(0)).tensor.data()[0];
            assert!(w < prev && w > 0.0);
            prev = w;
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut s = ParamStore::new();
        let id = s.add("enc.conv.weight", Tensor::new(vec![2, 3], vec![0.1, -0.2, 1e-300, 3.0, -0.0, 7.5]).unwrap()).unwrap();
        s.get_mut(id).adam_m[1] = 0.25;
        s.get_mut(id).step = 9;
        s.add("bias", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, s.iter()).unwrap();
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(back[0].step, 9);

        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(read_checkpoint(&mut &cut[..]), Err(TensorError::Checkpoint(m)) if m.contains("truncated")));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
    }
}
