//! Binary checkpoint container: versioned, self-describing, bit-exact.
//!
//! Layout (little endian):
//!   magic "VIVIDCKP" | version u32 | dtype tag | config hash (32 bytes)
//!   stages_done u8 | last stage u8 | step u64 | model seed u64
//!   crop spec (4 x 2 x u32) | mean landmarks (68 x 2 x f64)
//!   sigma_tradeoff f64
//!   named parameter entries | per-network optimizer states

use crate::error::{Error, Result};
use crate::face::{CropSpec, Landmarks, NUM_LANDMARKS};
use crate::model::ModelState;
use crate::nets::ParamSet;
use crate::optim::AdamState;
use crate::scalar::Scalar;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"VIVIDCKP";
const VERSION: u32 = 1;

pub const STAGE1_DONE: u8 = 1;
pub const STAGE2_DONE: u8 = 1 << 1;
pub const STAGE3_DONE: u8 = 1 << 2;

/// Everything needed to resume or deploy: model parameters, optimizer
/// state, step counter, seed, and the hash of the config that produced it.
#[derive(Clone, Debug)]
pub struct Checkpoint<F: Scalar> {
    pub config_hash: [u8; 32],
    pub stages_done: u8,
    /// Stage that most recently trained this checkpoint (0 = fresh).
    pub last_stage: u8,
    pub step: u64,
    pub model: ModelState<F>,
    /// Optimizer snapshots keyed by network name.
    pub optim: BTreeMap<String, AdamState<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn fresh(model: ModelState<F>) -> Self {
        Checkpoint {
            config_hash: [0; 32],
            stages_done: 0,
            last_stage: 0,
            step: 0,
            model,
            optim: BTreeMap::new(),
        }
    }

    pub fn has_stage(&self, stage: u8) -> bool {
        let bit = match stage {
            1 => STAGE1_DONE,
            2 => STAGE2_DONE,
            3 => STAGE3_DONE,
            _ => return false,
        };
        self.stages_done & bit != 0
    }

    pub fn mark_stage(&mut self, stage: u8) {
        let bit = match stage {
            1 => STAGE1_DONE,
            2 => STAGE2_DONE,
            3 => STAGE3_DONE,
            _ => return,
        };
        self.stages_done |= bit;
    }
}

fn write_array<F: Scalar, W: Write>(w: &mut W, name: &str, a: &ArrayD<F>) -> std::io::Result<()> {
    w.write_u16::<LittleEndian>(name.len() as u16)?;
    w.write_all(name.as_bytes())?;
    w.write_u8(a.ndim() as u8)?;
    for &d in a.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    let std_layout = a.as_standard_layout();
    for v in std_layout.iter() {
        w.write_all(&v.to_le_bytes_vec())?;
    }
    Ok(())
}

fn read_array<F: Scalar, R: Read>(r: &mut R) -> Result<(String, ArrayD<F>)> {
    let err = |msg: &str| Error::Checkpoint(msg.to_string());
    let name_len = r.read_u16::<LittleEndian>().map_err(|_| err("truncated name len"))? as usize;
    let mut name_buf = vec![0u8; name_len];
    r.read_exact(&mut name_buf).map_err(|_| err("truncated name"))?;
    let name = String::from_utf8(name_buf).map_err(|_| err("invalid name"))?;
    let ndim = r.read_u8().map_err(|_| err("truncated ndim"))? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.read_u32::<LittleEndian>().map_err(|_| err("truncated shape"))? as usize);
    }
    let n: usize = shape.iter().product();
    let width = F::byte_width();
    let mut data = vec![0u8; n * width];
    r.read_exact(&mut data).map_err(|_| err("truncated tensor data"))?;
    let values: Vec<F> = data.chunks_exact(width).map(F::from_le_slice).collect();
    let arr = ArrayD::from_shape_vec(IxDyn(&shape), values)
        .map_err(|_| err("inconsistent tensor shape"))?;
    Ok((name, arr))
}

fn collect_params<F: Scalar>(net: &dyn ParamSet<F>) -> Vec<(String, ArrayD<F>)> {
    let mut out = Vec::new();
    net.visit(&mut |name, a| out.push((name, a.clone())));
    out
}

pub fn save_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC).unwrap();
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    let dtype = F::DTYPE.as_bytes();
    buf.write_u8(dtype.len() as u8).unwrap();
    buf.write_all(dtype).unwrap();
    buf.write_all(&ckpt.config_hash).unwrap();
    buf.write_u8(ckpt.stages_done).unwrap();
    buf.write_u8(ckpt.last_stage).unwrap();
    buf.write_u64::<LittleEndian>(ckpt.step).unwrap();
    buf.write_u64::<LittleEndian>(ckpt.model.seed).unwrap();
    let cs = &ckpt.model.crop_spec;
    for (h, w) in [cs.left_eye, cs.right_eye, cs.nose, cs.mouth] {
        buf.write_u32::<LittleEndian>(h as u32).unwrap();
        buf.write_u32::<LittleEndian>(w as u32).unwrap();
    }
    for p in ckpt.model.mean_landmarks.points() {
        buf.write_f64::<LittleEndian>(p[0]).unwrap();
        buf.write_f64::<LittleEndian>(p[1]).unwrap();
    }
    buf.write_f64::<LittleEndian>(ckpt.model.fine.proj.sigma_tradeoff)
        .unwrap();

    let mut params: Vec<(String, ArrayD<F>)> = Vec::new();
    params.extend(collect_params(&ckpt.model.coarse));
    params.extend(collect_params(&ckpt.model.touchup));
    params.extend(collect_params(&ckpt.model.fine));
    params.extend(collect_params(&ckpt.model.critic_coarse));
    params.extend(collect_params(&ckpt.model.critic_fine));
    params.extend(collect_params(&ckpt.model.embedder));
    buf.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, a) in &params {
        write_array(&mut buf, name, a).unwrap();
    }

    buf.write_u32::<LittleEndian>(ckpt.optim.len() as u32).unwrap();
    for (net_name, state) in &ckpt.optim {
        buf.write_u16::<LittleEndian>(net_name.len() as u16).unwrap();
        buf.write_all(net_name.as_bytes()).unwrap();
        buf.write_f64::<LittleEndian>(state.lr).unwrap();
        buf.write_u64::<LittleEndian>(state.t).unwrap();
        buf.write_u32::<LittleEndian>(state.m.len() as u32).unwrap();
        for (i, (m, v)) in state.m.iter().zip(state.v.iter()).enumerate() {
            write_array(&mut buf, &format!("m{i}"), m).unwrap();
            write_array(&mut buf, &format!("v{i}"), v).unwrap();
        }
    }

    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = std::io::Cursor::new(&data);
    let err = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| err("truncated header"))?;
    if &magic != MAGIC {
        return Err(err("not a checkpoint file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| err("truncated version"))?;
    if version != VERSION {
        return Err(err(&format!(
            "version mismatch: file v{version}, supported v{VERSION}"
        )));
    }
    let dlen = r.read_u8().map_err(|_| err("truncated dtype"))? as usize;
    let mut dbuf = vec![0u8; dlen];
    r.read_exact(&mut dbuf).map_err(|_| err("truncated dtype"))?;
    let dtype = String::from_utf8(dbuf).map_err(|_| err("invalid dtype"))?;
    if dtype != F::DTYPE {
        return Err(err(&format!(
            "dtype mismatch: file stores {dtype}, loader expects {}",
            F::DTYPE
        )));
    }
    let mut config_hash = [0u8; 32];
    r.read_exact(&mut config_hash).map_err(|_| err("truncated hash"))?;
    let stages_done = r.read_u8().map_err(|_| err("truncated stages"))?;
    let last_stage = r.read_u8().map_err(|_| err("truncated stage"))?;
    let step = r.read_u64::<LittleEndian>().map_err(|_| err("truncated step"))?;
    let seed = r.read_u64::<LittleEndian>().map_err(|_| err("truncated seed"))?;
    let mut dims = [0u32; 8];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>().map_err(|_| err("truncated crop spec"))?;
    }
    let crop_spec = CropSpec {
        left_eye: (dims[0] as usize, dims[1] as usize),
        right_eye: (dims[2] as usize, dims[3] as usize),
        nose: (dims[4] as usize, dims[5] as usize),
        mouth: (dims[6] as usize, dims[7] as usize),
    };
    let mut points = Vec::with_capacity(NUM_LANDMARKS);
    for _ in 0..NUM_LANDMARKS {
        let x = r.read_f64::<LittleEndian>().map_err(|_| err("truncated landmarks"))?;
        let y = r.read_f64::<LittleEndian>().map_err(|_| err("truncated landmarks"))?;
        points.push([x, y]);
    }
    let sigma_tradeoff = r.read_f64::<LittleEndian>().map_err(|_| err("truncated sigma"))?;

    let mut model = ModelState::<F>::init(seed, 0, crop_spec);
    model.mean_landmarks = Landmarks(points);
    model.fine.proj.sigma_tradeoff = sigma_tradeoff;

    let n_params = r.read_u32::<LittleEndian>().map_err(|_| err("truncated params"))? as usize;
    let mut by_name: BTreeMap<String, ArrayD<F>> = BTreeMap::new();
    for _ in 0..n_params {
        let (name, arr) = read_array::<F, _>(&mut r)?;
        by_name.insert(name, arr);
    }
    let mut missing: Vec<String> = Vec::new();
    let mut fill = |net: &mut dyn ParamSet<F>| {
        net.visit_mut(&mut |name, p| match by_name.remove(&name) {
            Some(a) if a.shape() == p.shape() => *p = a,
            Some(a) => missing.push(format!("{name}: shape {:?} != {:?}", a.shape(), p.shape())),
            None => missing.push(format!("{name}: absent")),
        });
    };
    fill(&mut model.coarse);
    fill(&mut model.touchup);
    fill(&mut model.fine);
    fill(&mut model.critic_coarse);
    fill(&mut model.critic_fine);
    fill(&mut model.embedder);
    if !missing.is_empty() {
        return Err(err(&format!(
            "parameter mismatch (config hash {}): {}",
            hex32(&config_hash),
            missing.join("; ")
        )));
    }
    if !by_name.is_empty() {
        let extras: Vec<String> = by_name.keys().cloned().collect();
        return Err(err(&format!("unknown parameters: {}", extras.join(", "))));
    }

    let n_opt = r.read_u32::<LittleEndian>().map_err(|_| err("truncated optim"))? as usize;
    let mut optim = BTreeMap::new();
    for _ in 0..n_opt {
        let nlen = r.read_u16::<LittleEndian>().map_err(|_| err("truncated optim name"))? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf).map_err(|_| err("truncated optim name"))?;
        let net_name = String::from_utf8(nbuf).map_err(|_| err("invalid optim name"))?;
        let lr = r.read_f64::<LittleEndian>().map_err(|_| err("truncated lr"))?;
        let t = r.read_u64::<LittleEndian>().map_err(|_| err("truncated t"))?;
        let count = r.read_u32::<LittleEndian>().map_err(|_| err("truncated count"))? as usize;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            let (_, ma) = read_array::<F, _>(&mut r)?;
            let (_, va) = read_array::<F, _>(&mut r)?;
            m.push(ma);
            v.push(va);
        }
        optim.insert(net_name, AdamState { lr, t, m, v });
    }

    Ok(Checkpoint {
        config_hash,
        stages_done,
        last_stage,
        step,
        model,
        optim,
    })
}

pub fn hex32(h: &[u8; 32]) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}
