//! Text checkpoints of a [`ParamStore`].
//!
//! ```text
//! #mtnp-checkpoint v1 params=<count>
//! <name><TAB><dim>x<dim>...<TAB><v> <v> ...
//! ```
//!
//! One line per parameter in store order. Values use shortest round-trip
//! formatting of their `f64` widening, so save/load is bit-exact for `f32`
//! and `f64` stores.

use std::fmt::Write as _;
use std::path::Path;

use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "#mtnp-checkpoint";
const VERSION: &str = "v1";

pub fn format_checkpoint<S: Scalar>(store: &ParamStore<S>) -> String {
    let mut out = format!("{MAGIC} {VERSION} params={}\n", store.len());
    for (name, t) in store.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        let _ = write!(out, "{name}\t{}\t", shape.join("x"));
        for (i, v) in t.data().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", v.as_f64());
        }
        out.push('\n');
    }
    out
}

pub fn parse_checkpoint<S: Scalar>(text: &str) -> Result<ParamStore<S>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let count = header
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().strip_prefix(VERSION))
        .and_then(|r| r.trim().strip_prefix("params="))
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("expected `{MAGIC} {VERSION} params=<n>` header"),
        })?;
    let mut store = ParamStore::new();
    for (n, line) in lines {
        let err = |msg: String| Error::Parse { line: n, msg };
        let mut parts = line.splitn(3, '\t');
        let (Some(name), Some(shape), Some(values)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected name, shape and values".into()));
        };
        let shape: Vec<usize> = if shape.is_empty() {
            Vec::new()
        } else {
            shape
                .split('x')
                .map(|d| d.parse().map_err(|_| err(format!("bad shape `{shape}`"))))
                .collect::<Result<_>>()?
        };
        let data: Vec<S> = values
            .split_ascii_whitespace()
            .map(|v| v.parse::<f64>().map(S::of).map_err(|_| err(format!("bad value `{v}`"))))
            .collect::<Result<_>>()?;
        let t = Tensor::new(shape, data).map_err(|e| err(e.to_string()))?;
        if store.id(name).is_some() {
            return Err(err(format!("duplicate parameter `{name}`")));
        }
        store.add(name, t);
    }
    if store.len() != count {
        return Err(Error::Parse {
            line: 1,
            msg: format!("header declares {count} parameters, found {}", store.len()),
        });
    }
    Ok(store)
}

/// Overwrite every parameter of `store` from `saved`. Names and shapes must
/// match exactly.
pub fn restore<S: Scalar>(store: &mut ParamStore<S>, saved: &ParamStore<S>) -> Result<()> {
    if store.len() != saved.len() {
        return Err(Error::InvalidData(format!(
            "checkpoint has {} parameters, model has {}",
            saved.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let src = saved
            .id(&name)
            .map(|s| saved.get(s))
            .ok_or_else(|| Error::InvalidData(format!("checkpoint lacks `{name}`")))?;
        if src.shape() != store.get(id).shape() {
            return Err(Error::InvalidData(format!(
                "`{name}`: checkpoint shape {:?}, model shape {:?}",
                src.shape(),
                store.get(id).shape()
            )));
        }
        store.set(id, src.clone());
    }
    Ok(())
}

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    std::fs::write(path, format_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelKind;
    use crate::model::{Arch, Model, Variant};

    #[test]
    fn round_trip_is_bitwise() {
        for v in Variant::ALL {
            let m = Model::<f64>::new(v, Arch::toy(), LabelKind::OneHot { classes: 3 }, 2, 2, 7).unwrap();
            let text = format_checkpoint(&m.store);
            let back: ParamStore<f64> = parse_checkpoint(&text).unwrap();
            assert!(back.bit_eq(&m.store), "{v}");
            let mut fresh = Model::<f64>::new(v, Arch::toy(), LabelKind::OneHot { classes: 3 }, 2, 2, 8).unwrap();
            restore(&mut fresh.store, &back).unwrap();
            assert!(fresh.store.bit_eq(&m.store));
        }
    }

    #[test]
    fn f32_round_trip() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::new(vec![2, 2], vec![0.1f32, -3.3e-7, 1.0 / 3.0, 7e20]).unwrap());
        s.add("b", Tensor::scalar(2.5f32));
        assert!(parse_checkpoint::<f32>(&format_checkpoint(&s)).unwrap().bit_eq(&s));
    }

    #[test]
    fn rejects_mismatches() {
        assert!(parse_checkpoint::<f64>("#mtnp-checkpoint v2 params=0\n").is_err());
        assert!(parse_checkpoint::<f64>("#mtnp-checkpoint v1 params=1\n").is_err());
        assert!(parse_checkpoint::<f64>("#mtnp-checkpoint v1 params=1\nw\t2\t1\n").is_err());
        let mut a = ParamStore::<f64>::new();
        a.add("w", Tensor::zeros(vec![1, 2]));
        let mut b = ParamStore::<f64>::new();
        b.add("w", Tensor::zeros(vec![2, 1]));
        assert!(restore(&mut a, &b).is_err());
    }
}
