//! Model checkpoints: a named-tensor table plus optimizer state.
//!
//! Layout: magic; tensor count; per tensor the dotted path, rows, cols, and
//! the values as little-endian float32; then Adam's hyperparameters as f64
//! bits, the slot count, and per slot the path, step count, and both moment
//! vectors as float32. BTreeMap ordering makes the bytes a pure function of
//! the contents, and the float32 quantization at save time means every stage
//! that loads a checkpoint starts from exactly the same numbers no matter
//! which process wrote it.

use crate::binio::{push_f32s, push_f64, push_str, push_u32, push_u64, Cursor};
use crate::error::{Error, Result};
use crate::neural::{Adam, AdamSlot, ParamStore, Tensor};
use std::path::Path;

pub const MAGIC: &[u8; 11] = b"SFEVC-CKPT\x01";

pub fn to_bytes(params: &ParamStore, opt: &Adam) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * params.total_values());
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, params.tensors.len() as u32);
    for (name, t) in &params.tensors {
        push_str(&mut out, name);
        push_u32(&mut out, t.rows as u32);
        push_u32(&mut out, t.cols as u32);
        push_f32s(&mut out, t.data.iter().copied());
    }
    push_f64(&mut out, opt.lr);
    push_f64(&mut out, opt.beta1);
    push_f64(&mut out, opt.beta2);
    push_f64(&mut out, opt.eps);
    push_u32(&mut out, opt.state.len() as u32);
    for (name, slot) in &opt.state {
        push_str(&mut out, name);
        push_u64(&mut out, slot.t);
        push_u32(&mut out, slot.m.len() as u32);
        push_f32s(&mut out, slot.m.iter().copied());
        push_f32s(&mut out, slot.v.iter().copied());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ParamStore, Adam)> {
    let mut c = Cursor::new(bytes, "checkpoint");
    if c.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("checkpoint: bad magic".into()));
    }
    let n_tensors = c.u32("tensor count")? as usize;
    let mut params = ParamStore::new();
    for _ in 0..n_tensors {
        let name = c.string("tensor path")?;
        let rows = c.u32("tensor rows")? as usize;
        let cols = c.u32("tensor cols")? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| {
            Error::Format(format!("checkpoint: tensor {name} shape {rows}x{cols} overflows"))
        })?;
        let data = c.f32s(n, "tensor values")?;
        if params.tensors.insert(name.clone(), Tensor { rows, cols, data }).is_some() {
            return Err(Error::Format(format!("checkpoint: duplicate tensor {name}")));
        }
    }
    let mut opt = Adam::new(c.f64("lr")?, c.f64("beta1")?, c.f64("beta2")?, c.f64("eps")?);
    let n_slots = c.u32("slot count")? as usize;
    for _ in 0..n_slots {
        let name = c.string("slot path")?;
        let t = c.u64("slot step count")?;
        let len = c.u32("slot length")? as usize;
        let Some(tensor) = params.tensors.get(&name) else {
            return Err(Error::Format(format!("checkpoint: optimizer slot {name} has no tensor")));
        };
        if tensor.len() != len {
            return Err(Error::Format(format!(
                "checkpoint: optimizer slot {name} length {len} != tensor length {}",
                tensor.len()
            )));
        }
        let m = c.f32s(len, "slot first moment")?;
        let v = c.f32s(len, "slot second moment")?;
        if opt.state.insert(name.clone(), AdamSlot { m, v, t }).is_some() {
            return Err(Error::Format(format!("checkpoint: duplicate optimizer slot {name}")));
        }
    }
    c.finish()?;
    Ok((params, opt))
}

pub fn save(path: &Path, params: &ParamStore, opt: &Adam) -> Result<()> {
    std::fs::write(path, to_bytes(params, opt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Adam)> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Usage(format!("cannot read checkpoint {}: {e}", path.display()))
    })?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// f32-exact values so roundtrips compare with ==.
    fn quantized_store() -> ParamStore {
        let mut ps = ParamStore::new();
        ps.add_uniform(3, "enc.a.w", 4, 5, 5);
        ps.add_uniform(3, "dec.out.b", 1, 7, 7);
        for t in ps.tensors.values_mut() {
            for v in &mut t.data {
                *v = (*v as f32) as f64;
            }
        }
        ps
    }

    fn stepped_adam(ps: &mut ParamStore) -> Adam {
        let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let grads: BTreeMap<String, Vec<f64>> = ps
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), vec![0.25; t.len()]))
            .collect();
        opt.step(ps, &grads);
        for slot in opt.state.values_mut() {
            for v in slot.m.iter_mut().chain(slot.v.iter_mut()) {
                *v = (*v as f32) as f64;
            }
        }
        for t in ps.tensors.values_mut() {
            for v in &mut t.data {
                *v = (*v as f32) as f64;
            }
        }
        opt
    }

    #[test]
    fn roundtrip_preserves_tensors_and_optimizer() {
        let mut ps = quantized_store();
        let opt = stepped_adam(&mut ps);
        let bytes = to_bytes(&ps, &opt);
        let (ps2, opt2) = from_bytes(&bytes).unwrap();
        assert_eq!(ps2, ps);
        assert_eq!(opt2.lr, opt.lr);
        assert_eq!(opt2.state, opt.state);
        // Serialization is a pure function of the contents.
        assert_eq!(to_bytes(&ps2, &opt2), bytes);
    }

    #[test]
    fn values_quantize_to_f32() {
        let mut ps = ParamStore::new();
        ps.add_const("w", 1, 1, 0.1);
        let (back, _) = from_bytes(&to_bytes(&ps, &Adam::new(0.0, 0.0, 0.0, 1.0))).unwrap();
        assert_eq!(back.get("w").data[0], 0.1f32 as f64);
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct_errors() {
        let ps = quantized_store();
        let bytes = to_bytes(&ps, &Adam::new(1e-4, 0.9, 0.999, 1e-8));
        let mut corrupt = bytes.clone();
        corrupt[5] ^= 0xff;
        assert!(matches!(from_bytes(&corrupt).unwrap_err(), Error::Format(_)));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]).unwrap_err(), Error::Parse(_)));
    }

    #[test]
    fn orphan_optimizer_slot_rejected() {
        let mut ps = quantized_store();
        let mut opt = stepped_adam(&mut ps);
        let slot = opt.state.remove("enc.a.w").unwrap();
        opt.state.insert("ghost.w".into(), slot);
        let err = from_bytes(&to_bytes(&ps, &opt)).unwrap_err();
        assert!(err.to_string().contains("ghost.w"), "{err}");
    }

    #[test]
    fn full_model_roundtrips_through_disk() {
        use crate::config::ExperimentConfig;
        let mut cfg = ExperimentConfig::from_ini(
            "[model.content]\nconv_dim = 16\ngroups = 4\n[model.emo_u_s]\nconv_dim = 16\ngroups = 4\n\
             [model.emo_u_ts]\nconv_dim = 16\ngroups = 4\n[model.emo_zf_ts]\nconv_dim = 16\ngroups = 4\n\
             [model.rhythm]\nconv_dim = 8\ngroups = 2\n[model.pitch]\nconv_dim = 8\ngroups = 2\n\
             [model.emo_zf_s]\nconv_dim = 8\ngroups = 2\n[model.decoder]\nhidden = 6\n",
        )
        .unwrap();
        cfg.seed = 11;
        let mut ps = ParamStore::new();
        crate::model::register_model(&mut ps, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        save(&path, &ps, &Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)).unwrap();
        let (back, opt) = load(&path).unwrap();
        assert_eq!(back.tensors.len(), ps.tensors.len());
        assert_eq!(opt.lr, cfg.lr);
        for (name, t) in &ps.tensors {
            let b = back.get(name);
            assert_eq!((b.rows, b.cols), (t.rows, t.cols), "{name}");
            for (x, y) in t.data.iter().zip(&b.data) {
                assert_eq!(*y, (*x as f32) as f64, "{name}");
            }
        }
    }
}
