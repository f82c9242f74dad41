//! Checkpoint container: plain-text header + little-endian IEEE-754 payload.
//!
//! Layout:
//! ```text
//! gmseg-ckpt-v1
//! <name> <dtype> <d0>x<d1>x...x<dn> <payload-byte-offset>
//! ...
//! end
//! <raw little-endian values in header order>
//! ```
//! Names are dotted paths without whitespace; offsets are relative to the
//! first byte after the `end` line.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Dtype, HasParams, Real, Tensor};

pub const CKPT_VERSION: &str = "gmseg-ckpt-v1";

/// One parameter record parsed from a checkpoint header.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn shape_token(shape: &[usize]) -> String {
    let mut s = String::new();
    for (i, d) in shape.iter().enumerate() {
        if i > 0 {
            s.push('x');
        }
        s.push_str(&d.to_string());
    }
    s
}

fn parse_shape_token(tok: &str) -> Result<Vec<usize>> {
    tok.split('x')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad shape token `{tok}`")))
        })
        .collect()
}

/// Serializes all model parameters, in visit order.
pub fn encode<T: Real, M: HasParams<T>>(model: &M) -> Result<Vec<u8>> {
    let mut header = String::new();
    header.push_str(CKPT_VERSION);
    header.push('\n');
    let mut payload: Vec<u8> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut failure: Option<Error> = None;
    model.visit_params(&mut |p| {
        if failure.is_some() {
            return;
        }
        if p.name.contains(char::is_whitespace) || p.name.is_empty() {
            failure = Some(Error::Checkpoint(format!("bad parameter name `{}`", p.name)));
            return;
        }
        if !seen.insert(p.name.clone()) {
            failure = Some(Error::Checkpoint(format!(
                "duplicate parameter name `{}`",
                p.name
            )));
            return;
        }
        if p.value.shape().is_empty() {
            failure = Some(Error::Checkpoint(format!("parameter `{}` is rank-0", p.name)));
            return;
        }
        header.push_str(&format!(
            "{} {} {} {}\n",
            p.name,
            T::DTYPE.name(),
            shape_token(p.value.shape()),
            payload.len()
        ));
        for &v in p.value.data() {
            v.write_le(&mut payload);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    header.push_str("end\n");
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses header entries and returns them with the payload slice.
pub fn parse(bytes: &[u8]) -> Result<(Vec<Entry>, &[u8])> {
    let mut pos = 0usize;
    let mut entries = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let line = core::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Checkpoint("header is not utf-8".into()))?;
        pos += nl + 1;
        if first {
            if line != CKPT_VERSION {
                return Err(Error::Checkpoint(format!(
                    "bad version line `{line}`, expected `{CKPT_VERSION}`"
                )));
            }
            first = false;
            continue;
        }
        if line == "end" {
            break;
        }
        let mut parts = line.split(' ');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| Error::Checkpoint(format!("header line `{line}` missing {what}")))
        };
        let name = next("name")?;
        let dtype = next("dtype")?;
        let shape = next("shape")?;
        let offset = next("offset")?;
        entries.push(Entry {
            name: name.to_string(),
            dtype: Dtype::parse(dtype)?,
            shape: parse_shape_token(shape)?,
            offset: offset
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad offset in `{line}`")))?,
        });
    }
    Ok((entries, &bytes[pos..]))
}

fn read_tensor<T: Real>(entry: &Entry, payload: &[u8]) -> Result<Tensor<T>> {
    let numel: usize = entry.shape.iter().product();
    let esz = entry.dtype.size_bytes();
    let end = entry.offset + numel * esz;
    if end > payload.len() {
        return Err(Error::Checkpoint(format!(
            "payload too short for `{}` ({} > {})",
            entry.name,
            end,
            payload.len()
        )));
    }
    let raw = &payload[entry.offset..end];
    let data: Vec<T> = match entry.dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::read_le(c) as f64))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::read_le(c)))
            .collect(),
    };
    Tensor::from_vec(&entry.shape, data)
}

/// Loads a checkpoint into an existing model. Every model parameter must be
/// present with a matching shape; values convert across dtypes.
pub fn load_into<T: Real, M: HasParams<T>>(model: &mut M, bytes: &[u8]) -> Result<()> {
    let (entries, payload) = parse(bytes)?;
    let mut by_name: alloc::collections::BTreeMap<&str, &Entry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    if by_name.len() != entries.len() {
        return Err(Error::Checkpoint("duplicate name in checkpoint".into()));
    }
    let mut failure: Option<Error> = None;
    model.visit_params_mut(&mut |p| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = by_name.remove(p.name.as_str()) else {
            failure = Some(Error::Checkpoint(format!(
                "checkpoint is missing parameter `{}`",
                p.name
            )));
            return;
        };
        if entry.shape != p.value.shape() {
            failure = Some(Error::Checkpoint(format!(
                "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                p.name,
                entry.shape,
                p.value.shape()
            )));
            return;
        }
        match read_tensor::<T>(entry, payload) {
            Ok(t) => p.value = t,
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some((name, _)) = by_name.iter().next() {
        return Err(Error::Checkpoint(format!(
            "checkpoint contains unknown parameter `{name}`"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Parameter;
    use alloc::vec;

    struct Toy {
        a: Parameter<f32>,
        b: Parameter<f32>,
    }

    impl HasParams<f32> for Toy {
        fn visit_params(&self, f: &mut dyn FnMut(&Parameter<f32>)) {
            f(&self.a);
            f(&self.b);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f32>)) {
            f(&mut self.a);
            f(&mut self.b);
        }
    }

    fn toy() -> Toy {
        Toy {
            a: Parameter::new(
                "enc.w",
                Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            ),
            b: Parameter::new("dec.b", Tensor::from_vec(&[3], vec![-1.0, 0.5, 9.0]).unwrap()),
        }
    }

    #[test]
    fn version_tag_is_first_line() {
        let bytes = encode(&toy()).unwrap();
        assert!(bytes.starts_with(b"gmseg-ckpt-v1\n"));
    }

    #[test]
    fn roundtrip_preserves_names_shapes_values() {
        let src = toy();
        let bytes = encode(&src).unwrap();
        let (entries, _) = parse(&bytes).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].name, "enc.w");
        assert_eq!(entries[0].shape, vec![2, 2]);
        assert_eq!(entries[1].name, "dec.b");

        let mut dst = toy();
        dst.a.value = Tensor::zeros(&[2, 2]);
        dst.b.value = Tensor::zeros(&[3]);
        load_into(&mut dst, &bytes).unwrap();
        assert_eq!(dst.a.value.data(), src.a.value.data());
        assert_eq!(dst.b.value.data(), src.b.value.data());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let bytes = encode(&toy()).unwrap();
        let mut dst = toy();
        dst.a.value = Tensor::zeros(&[4]);
        let err = load_into(&mut dst, &bytes).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = encode(&toy()).unwrap();
        let mut dst = toy();
        let err = load_into(&mut dst, &bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn f32_payload_loads_into_f64_model() {
        let bytes = encode(&toy()).unwrap();
        struct Toy64(Parameter<f64>, Parameter<f64>);
        impl HasParams<f64> for Toy64 {
            fn visit_params(&self, f: &mut dyn FnMut(&Parameter<f64>)) {
                f(&self.0);
                f(&self.1);
            }
            fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<f64>)) {
                f(&mut self.0);
                f(&mut self.1);
            }
        }
        let mut dst = Toy64(
            Parameter::new("enc.w", Tensor::zeros(&[2, 2])),
            Parameter::new("dec.b", Tensor::zeros(&[3])),
        );
        load_into(&mut dst, &bytes).unwrap();
        assert_eq!(dst.0.value.data(), &[1.0, 2.0, 3.0, 4.0]);
    }
}
