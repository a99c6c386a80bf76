//! Line-based text formats for instances and labelings.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a dump
//! reloads bit for bit.
//!
//! Instance file:
//!
//! ```text
//! ghcm-instance 1
//! params {"lambda":2.0,...}
//! seed 7
//! vertices 3
//! 0 1 -0.25 3.5
//! 1 2 4.0 -1.75
//! 2 - 0.5 0.5
//! edges 1
//! 0 2 1.25
//! end
//! ```
//!
//! Vertex lines are `id label coords...`; the label is `-` when unknown.
//!
//! Labeling file:
//!
//! ```text
//! ghcm-labeling 1
//! meta {...}
//! 0 1 map_seed
//! 1 2 refined
//! ```

use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::Value;

use crate::error::{GhcmError, Result};
use crate::geometry::TorusPoint;
use crate::model::{Label, ModelParams, Observations, PublicInstance, SampleInstance};
use crate::recovery::{Labeling, Provenance};

pub const INSTANCE_MAGIC: &str = "ghcm-instance";
pub const INSTANCE_VERSION: u32 = 1;
pub const LABELING_MAGIC: &str = "ghcm-labeling";
pub const LABELING_VERSION: u32 = 1;

/// Writes an instance; `labels` are included when given.
pub fn write_instance(
    w: &mut impl Write,
    inst: &PublicInstance,
    labels: Option<&[Label]>,
    seed: u64,
) -> Result<()> {
    let params =
        serde_json::to_string(&inst.params).map_err(|e| GhcmError::format(e.to_string()))?;
    writeln!(w, "{INSTANCE_MAGIC} {INSTANCE_VERSION}")?;
    writeln!(w, "params {params}")?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "vertices {}", inst.vertex_count())?;
    for (u, p) in inst.positions.iter().enumerate() {
        write!(w, "{u} ")?;
        match labels {
            Some(l) => write!(w, "{}", l[u].as_u8())?,
            None => write!(w, "-")?,
        }
        for x in p.coords() {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    let obs = &inst.observations;
    writeln!(w, "edges {}", obs.pair_count())?;
    for (&(u, v), y) in obs.pairs().iter().zip(obs.values()) {
        writeln!(w, "{u} {v} {y}")?;
    }
    writeln!(w, "end")?;
    Ok(())
}

pub fn write_sample(w: &mut impl Write, inst: &SampleInstance) -> Result<()> {
    write_instance(
        w,
        crate::model::strip_labels(inst),
        Some(inst.true_labels()),
        inst.seed,
    )
}

/// A loaded instance; `labels` is present when every vertex line carried one.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInstance {
    pub public: PublicInstance,
    pub labels: Option<Vec<Label>>,
    pub seed: u64,
}

impl LoadedInstance {
    pub fn into_sample(self) -> Option<SampleInstance> {
        let labels = self.labels?;
        SampleInstance::from_parts(self.public, labels, self.seed).ok()
    }
}

struct Lines<R> {
    inner: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<&str> {
        self.buf.clear();
        self.line += 1;
        if self.inner.read_line(&mut self.buf)? == 0 {
            return Err(GhcmError::format(format!(
                "line {}: unexpected end of file",
                self.line
            )));
        }
        Ok(self.buf.trim_end_matches(['\n', '\r']))
    }

    fn err(&self, msg: impl std::fmt::Display) -> GhcmError {
        GhcmError::format(format!("line {}: {msg}", self.line))
    }

    /// Reads `key value` and returns the value.
    fn keyed(&mut self, key: &str) -> Result<String> {
        let line = self.next()?.to_owned();
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_owned()),
            _ => Err(self.err(format!("expected `{key} ...`"))),
        }
    }

    fn header(&mut self, magic: &str, version: u32) -> Result<()> {
        let line = self.next()?.to_owned();
        match line.split_once(' ') {
            Some((m, v)) if m == magic => match v.parse::<u32>() {
                Ok(found) if found == version => Ok(()),
                _ => Err(self.err(format!("unsupported {magic} version `{v}`"))),
            },
            _ => Err(self.err(format!("not a {magic} file"))),
        }
    }
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    let s = field.ok_or_else(|| GhcmError::format(format!("line {line}: missing {what}")))?;
    s.parse()
        .map_err(|_| GhcmError::format(format!("line {line}: bad {what} `{s}`")))
}

pub fn read_instance(r: impl BufRead) -> Result<LoadedInstance> {
    let mut lines = Lines {
        inner: r,
        line: 0,
        buf: String::new(),
    };
    lines.header(INSTANCE_MAGIC, INSTANCE_VERSION)?;
    let params: ModelParams = serde_json::from_str(&lines.keyed("params")?)
        .map_err(|e| lines.err(format!("params: {e}")))?;
    params.validate().map_err(|e| lines.err(e))?;
    let seed: u64 = parse(Some(&lines.keyed("seed")?), "seed", lines.line)?;
    let count: usize = parse(Some(&lines.keyed("vertices")?), "vertex count", lines.line)?;
    let torus = params.torus();

    let mut positions = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut labeled = true;
    for u in 0..count {
        let line = lines.next()?.to_owned();
        let at = lines.line;
        let mut fields = line.split(' ');
        let id: usize = parse(fields.next(), "vertex id", at)?;
        if id != u {
            return Err(lines.err(format!("expected vertex {u}, found {id}")));
        }
        match fields.next() {
            Some("-") => labeled = false,
            l => labels
                .push(Label::try_from(parse::<u8>(l, "label", at)?).map_err(|e| lines.err(e))?),
        }
        let coords = fields
            .map(|f| parse::<f64>(Some(f), "coordinate", at))
            .collect::<Result<Vec<_>>>()?;
        if coords.len() != params.d {
            return Err(lines.err(format!(
                "expected {} coordinates, found {}",
                params.d,
                coords.len()
            )));
        }
        positions.push(TorusPoint::new(coords, torus.side).map_err(|e| lines.err(e))?);
    }
    if !labeled && !labels.is_empty() {
        return Err(lines.err("labels must be given for all vertices or none"));
    }

    let edges: usize = parse(Some(&lines.keyed("edges")?), "edge count", lines.line)?;
    let mut pairs = Vec::with_capacity(edges);
    let mut values = Vec::with_capacity(edges);
    for _ in 0..edges {
        let line = lines.next()?.to_owned();
        let at = lines.line;
        let mut fields = line.split(' ');
        let u: u32 = parse(fields.next(), "vertex", at)?;
        let v: u32 = parse(fields.next(), "vertex", at)?;
        let y: f64 = parse(fields.next(), "observation", at)?;
        if fields.next().is_some() {
            return Err(lines.err("trailing fields"));
        }
        if u >= v || v as usize >= count {
            return Err(lines.err(format!("invalid pair ({u}, {v})")));
        }
        if !torus.visible(&positions[u as usize], &positions[v as usize]) {
            return Err(lines.err(format!(
                "vertices {u} and {v} are not visible to each other"
            )));
        }
        pairs.push((u, v));
        values.push(y);
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    let observations = Observations::from_sorted(count, pairs, values).map_err(|e| lines.err(e))?;
    Ok(LoadedInstance {
        public: PublicInstance {
            params,
            positions,
            observations,
        },
        labels: labeled.then_some(labels),
        seed,
    })
}

/// Writes a labeling with a one-line JSON metadata header.
pub fn write_labeling(
    w: &mut impl Write,
    labeling: &Labeling,
    meta: &impl Serialize,
) -> Result<()> {
    let meta = serde_json::to_string(meta).map_err(|e| GhcmError::format(e.to_string()))?;
    writeln!(w, "{LABELING_MAGIC} {LABELING_VERSION}")?;
    writeln!(w, "meta {meta}")?;
    for (u, (l, p)) in labeling
        .labels()
        .iter()
        .zip(labeling.provenance())
        .enumerate()
    {
        writeln!(w, "{u} {} {}", l.as_u8(), p.as_str())?;
    }
    Ok(())
}

pub fn read_labeling(r: impl BufRead) -> Result<(Labeling, Value)> {
    let mut lines = Lines {
        inner: r,
        line: 0,
        buf: String::new(),
    };
    lines.header(LABELING_MAGIC, LABELING_VERSION)?;
    let meta: Value =
        serde_json::from_str(&lines.keyed("meta")?).map_err(|e| lines.err(format!("meta: {e}")))?;
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    loop {
        lines.buf.clear();
        lines.line += 1;
        if lines.inner.read_line(&mut lines.buf)? == 0 {
            break;
        }
        let line = lines.buf.trim_end_matches(['\n', '\r']).to_owned();
        let at = lines.line;
        let mut fields = line.split(' ');
        let id: usize = parse(fields.next(), "vertex id", at)?;
        if id != labels.len() {
            return Err(lines.err(format!("expected vertex {}, found {id}", labels.len())));
        }
        labels.push(
            Label::try_from(parse::<u8>(fields.next(), "label", at)?).map_err(|e| lines.err(e))?,
        );
        let tag = fields.next().unwrap_or("");
        provenance.push(
            Provenance::parse(tag).ok_or_else(|| lines.err(format!("bad provenance `{tag}`")))?,
        );
        if fields.next().is_some() {
            return Err(lines.err("trailing fields"));
        }
    }
    Ok((
        Labeling::new(labels, provenance).map_err(|e| lines.err(e))?,
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_ghcm, strip_labels};

    fn dump(inst: &SampleInstance) -> Vec<u8> {
        let mut buf = Vec::new();
        write_sample(&mut buf, inst).unwrap();
        buf
    }

    #[test]
    fn instance_round_trip_is_exact() {
        for params in [
            ModelParams::geometric_sl(2.0, 500.0, 2, 0.4, 1.7),
            ModelParams::geometric_pds(1.5, 300.0, 3, 0.5, 0.8, 0.3),
        ] {
            let inst = sample_ghcm(&params, 12).unwrap();
            let bytes = dump(&inst);
            let loaded = read_instance(&bytes[..]).unwrap();
            assert_eq!(loaded.seed, 12);
            let back = loaded.into_sample().unwrap();
            assert_eq!(back, inst);
            assert_eq!(dump(&back), bytes);
        }
    }

    #[test]
    fn unlabeled_round_trip() {
        let inst = sample_ghcm(&ModelParams::geometric_sl(2.0, 200.0, 2, 0.5, 1.0), 1).unwrap();
        let mut buf = Vec::new();
        write_instance(&mut buf, strip_labels(&inst), None, 1).unwrap();
        let loaded = read_instance(&buf[..]).unwrap();
        assert!(loaded.labels.is_none());
        assert_eq!(&loaded.public, strip_labels(&inst));
    }

    #[test]
    fn corrupt_instances_are_format_errors() {
        let inst = sample_ghcm(&ModelParams::geometric_sl(2.0, 200.0, 2, 0.5, 1.0), 1).unwrap();
        let text = String::from_utf8(dump(&inst)).unwrap();
        let truncated = &text[..text.len() / 2];
        let wrong_magic = text.replacen(INSTANCE_MAGIC, "ghcm-whatever", 1);
        let wrong_version = text.replacen("ghcm-instance 1", "ghcm-instance 9", 1);
        let bad_label = text
            .replacen("\n0 1 ", "\n0 3 ", 1)
            .replacen("\n0 2 ", "\n0 3 ", 1);
        let no_end = text.replace("end\n", "");
        for bad in [
            truncated,
            &wrong_magic,
            &wrong_version,
            &bad_label,
            &no_end,
            "",
            "garbage\n",
        ] {
            assert!(
                matches!(read_instance(bad.as_bytes()), Err(GhcmError::Format(_))),
                "{:.60}",
                bad
            );
        }
    }

    #[test]
    fn labeling_round_trip() {
        let labeling = Labeling::new(
            vec![Label::One, Label::Two, Label::Two],
            vec![
                Provenance::MapSeed,
                Provenance::Default2,
                Provenance::Refined,
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_labeling(&mut buf, &labeling, &serde_json::json!({"phase": "final"})).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "ghcm-labeling 1\nmeta {\"phase\":\"final\"}\n0 1 map_seed\n1 2 default2\n2 2 refined\n"
        );
        let (back, meta) = read_labeling(&buf[..]).unwrap();
        assert_eq!(back, labeling);
        assert_eq!(meta["phase"], "final");
        assert!(read_labeling(&b"ghcm-labeling 1\nmeta {}\n0 1 bogus\n"[..]).is_err());
        assert!(read_labeling(&b"ghcm-labeling 1\nmeta {}\n0 1 default2\n"[..]).is_err());
    }
}
