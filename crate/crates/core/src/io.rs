//! Model containers: RBM records (with optional bit-packed mask), DBN
//! stacks, and fine-tuned classifiers. Byte layouts are pinned in
//! `docs/FORMATS.md`; everything is little-endian.

use crate::dbn::{DbnLayer, DbnStack, MlpLayer, MlpNet};
use crate::error::{Error, Result};
use crate::pruning::PruneMask;
use crate::rbm::RbmParams;
use ndarray::{Array1, Array2};
use std::fs;
use std::path::Path;

const RBM_MAGIC: &[u8; 8] = b"SBMRBM\0\0";
const DBN_MAGIC: &[u8; 8] = b"SBMDBN\0\0";
const MLP_MAGIC: &[u8; 8] = b"SBMMLP\0\0";
const VERSION: u16 = 1;
const FLAG_MASK: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], path: &Path) -> Self {
        Reader { bytes, pos: 0, path: path.display().to_string() }
    }

    fn fail(&self, detail: String) -> Error {
        Error::Format { path: self.path.clone(), detail }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail(format!(
                "expected {n} bytes at offset {}, only {} remain",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self, magic: &[u8; 8], what: &str) -> Result<u16> {
        let m = self.take(8)?;
        if m != magic {
            return Err(self.fail(format!("bad {what} magic at offset 0")));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(self.fail(format!("unsupported {what} version {version}")));
        }
        let flags = self.u16()?;
        self.u32()?; // reserved
        Ok(flags)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after offset {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}

fn push_header(out: &mut Vec<u8>, magic: &[u8; 8], flags: u16) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
}

fn push_f64s<'a>(out: &mut Vec<u8>, xs: impl Iterator<Item = &'a f64>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Bit-packs the keep matrix row-major, LSB-first within each byte.
fn push_mask(out: &mut Vec<u8>, mask: &PruneMask) {
    let mut packed = vec![0u8; mask.total().div_ceil(8)];
    for (flat, &k) in mask.keep().iter().enumerate() {
        packed[flat / 8] |= k << (flat % 8);
    }
    out.extend_from_slice(&packed);
}

fn read_mask(r: &mut Reader, n_visible: usize, n_hidden: usize) -> Result<PruneMask> {
    let total = n_visible * n_hidden;
    let raw = r.take(total.div_ceil(8))?;
    let mut keep = Array2::zeros((n_visible, n_hidden));
    for (flat, k) in keep.iter_mut().enumerate() {
        *k = (raw[flat / 8] >> (flat % 8)) & 1;
    }
    PruneMask::new(keep)
}

fn rbm_record(params: &RbmParams, mask: Option<&PruneMask>) -> Vec<u8> {
    let mut out = Vec::new();
    push_header(&mut out, RBM_MAGIC, if mask.is_some() { FLAG_MASK } else { 0 });
    out.extend_from_slice(&(params.n_visible() as u64).to_le_bytes());
    out.extend_from_slice(&(params.n_hidden() as u64).to_le_bytes());
    push_f64s(&mut out, params.weights.iter());
    push_f64s(&mut out, params.visible_bias.iter());
    push_f64s(&mut out, params.hidden_bias.iter());
    if let Some(m) = mask {
        push_mask(&mut out, m);
    }
    out
}

fn read_rbm_record(r: &mut Reader) -> Result<(RbmParams, Option<PruneMask>)> {
    let flags = r.header(RBM_MAGIC, "RBM")?;
    let n_visible = r.u64()? as usize;
    let n_hidden = r.u64()? as usize;
    if n_visible == 0 || n_hidden == 0 {
        return Err(r.fail(format!("degenerate dimensions {n_visible}x{n_hidden}")));
    }
    let weights =
        Array2::from_shape_vec((n_visible, n_hidden), r.f64_vec(n_visible * n_hidden)?)
            .expect("shape matches read count");
    let visible_bias = Array1::from_vec(r.f64_vec(n_visible)?);
    let hidden_bias = Array1::from_vec(r.f64_vec(n_hidden)?);
    let mut params = RbmParams::new(weights, visible_bias, hidden_bias)
        .map_err(|e| r.fail(format!("invalid parameters: {e}")))?;
    let mask = if flags & FLAG_MASK != 0 {
        let m = read_mask(r, n_visible, n_hidden)?;
        // The mask is authoritative: dropped weights are zero by contract.
        m.zero_dropped(&mut params.weights);
        Some(m)
    } else {
        None
    };
    Ok((params, mask))
}

pub fn save_rbm(params: &RbmParams, mask: Option<&PruneMask>, path: &Path) -> Result<()> {
    if let Some(m) = mask {
        m.check_congruent(&params.weights)?;
    }
    fs::write(path, rbm_record(params, mask)).map_err(|e| Error::io(path, e))
}

pub fn load_rbm(path: &Path) -> Result<(RbmParams, Option<PruneMask>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    let out = read_rbm_record(&mut r)?;
    r.done()?;
    Ok(out)
}

pub fn save_dbn(stack: &DbnStack, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    push_header(&mut out, DBN_MAGIC, 0);
    out.extend_from_slice(&(stack.depth() as u64).to_le_bytes());
    for layer in stack.layers() {
        out.extend_from_slice(&rbm_record(&layer.params, layer.mask.as_ref()));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dbn(path: &Path) -> Result<DbnStack> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.header(DBN_MAGIC, "DBN")?;
    let depth = r.u64()? as usize;
    let mut layers = Vec::with_capacity(depth);
    for _ in 0..depth {
        let (params, mask) = read_rbm_record(&mut r)?;
        layers.push(DbnLayer { params, mask });
    }
    r.done()?;
    DbnStack::new(layers)
}

fn mlp_layer_record(layer: &MlpLayer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(layer.weights.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(layer.weights.ncols() as u64).to_le_bytes());
    out.push(layer.mask.is_some() as u8);
    push_f64s(&mut out, layer.weights.iter());
    push_f64s(&mut out, layer.bias.iter());
    if let Some(m) = &layer.mask {
        push_mask(&mut out, m);
    }
    out
}

fn read_mlp_layer(r: &mut Reader) -> Result<MlpLayer> {
    let n_in = r.u64()? as usize;
    let n_out = r.u64()? as usize;
    if n_in == 0 || n_out == 0 {
        return Err(r.fail(format!("degenerate layer dimensions {n_in}x{n_out}")));
    }
    let has_mask = match r.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(r.fail(format!("bad mask flag {other}"))),
    };
    let mut weights = Array2::from_shape_vec((n_in, n_out), r.f64_vec(n_in * n_out)?)
        .expect("shape matches read count");
    let bias = Array1::from_vec(r.f64_vec(n_out)?);
    let mask = if has_mask {
        let m = read_mask(r, n_in, n_out)?;
        m.zero_dropped(&mut weights);
        Some(m)
    } else {
        None
    };
    Ok(MlpLayer { weights, bias, mask })
}

pub fn save_mlp(net: &MlpNet, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    push_header(&mut out, MLP_MAGIC, 0);
    out.extend_from_slice(&(net.hidden.len() as u64).to_le_bytes());
    for layer in &net.hidden {
        out.extend_from_slice(&mlp_layer_record(layer));
    }
    out.extend_from_slice(&mlp_layer_record(&net.output));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: &Path) -> Result<MlpNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.header(MLP_MAGIC, "MLP")?;
    let depth = r.u64()? as usize;
    let mut hidden = Vec::with_capacity(depth);
    for _ in 0..depth {
        hidden.push(read_mlp_layer(&mut r)?);
    }
    let output = read_mlp_layer(&mut r)?;
    r.done()?;
    for w in hidden.windows(2) {
        if w[0].weights.ncols() != w[1].weights.nrows() {
            return Err(Error::Format {
                path: path.display().to_string(),
                detail: "hidden layer widths do not chain".into(),
            });
        }
    }
    Ok(MlpNet { hidden, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(n_v: usize, n_h: usize, seed: u64) -> RbmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RbmParams::new(
            Array2::from_shape_fn((n_v, n_h), |_| rng.random::<f64>() - 0.5),
            Array1::from_shape_fn(n_v, |_| rng.random::<f64>() - 0.5),
            Array1::from_shape_fn(n_h, |_| rng.random::<f64>() - 0.5),
        )
        .unwrap()
    }

    #[test]
    fn rbm_roundtrip_with_and_without_mask() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rbm");
        let params = random_params(5, 3, 1);
        save_rbm(&params, None, &p).unwrap();
        let (back, mask) = load_rbm(&p).unwrap();
        assert_eq!(back, params);
        assert!(mask.is_none());

        let mut keep = Array2::from_elem((5, 3), 1u8);
        keep[[0, 1]] = 0;
        keep[[4, 2]] = 0;
        let mask = PruneMask::new(keep).unwrap();
        let mut masked = params.clone();
        mask.zero_dropped(&mut masked.weights);
        save_rbm(&masked, Some(&mask), &p).unwrap();
        let (back, back_mask) = load_rbm(&p).unwrap();
        assert_eq!(back, masked);
        assert_eq!(back_mask.unwrap(), mask);
    }

    #[test]
    fn rbm_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rbm");
        let params = random_params(4, 2, 2);
        save_rbm(&params, None, &p).unwrap();

        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.rbm");
        fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_rbm(&bad), Err(Error::Format { .. })));

        let mut truncated = fs::read(&p).unwrap();
        truncated.truncate(truncated.len() - 3);
        fs::write(&bad, &truncated).unwrap();
        assert!(matches!(load_rbm(&bad), Err(Error::Format { .. })));

        let mut trailing = fs::read(&p).unwrap();
        trailing.push(0);
        fs::write(&bad, &trailing).unwrap();
        assert!(matches!(load_rbm(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn dbn_roundtrip() {
        use crate::dbn::DbnLayer;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.dbn");
        let mut keep = Array2::from_elem((3, 2), 1u8);
        keep[[2, 0]] = 0;
        let mask = PruneMask::new(keep).unwrap();
        let mut l2 = random_params(3, 2, 8);
        mask.zero_dropped(&mut l2.weights);
        let stack = DbnStack::new(vec![
            DbnLayer { params: random_params(5, 3, 7), mask: None },
            DbnLayer { params: l2, mask: Some(mask) },
        ])
        .unwrap();
        save_dbn(&stack, &p).unwrap();
        assert_eq!(load_dbn(&p).unwrap(), stack);
    }

    #[test]
    fn mlp_roundtrip() {
        use crate::dbn::{to_mlp, DbnLayer};
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.mlp");
        let stack = DbnStack::new(vec![
            DbnLayer { params: random_params(6, 4, 3), mask: None },
            DbnLayer { params: random_params(4, 3, 4), mask: None },
        ])
        .unwrap();
        let net = to_mlp(&stack, 4, 11).unwrap();
        save_mlp(&net, &p).unwrap();
        assert_eq!(load_mlp(&p).unwrap(), net);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.rbm");
        let b = dir.path().join("b.rbm");
        let params = random_params(4, 4, 9);
        save_rbm(&params, None, &a).unwrap();
        save_rbm(&params, None, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }
}
