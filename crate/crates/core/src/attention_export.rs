//! Attention heatmaps: each layer's row-softmaxed `M` as a binary graymap
//! plus a CSV matrix whose comment lines carry the two token sequences.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{pad_truncate, Instance};
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::model::{Model, Resources};
use crate::tensor::{Tape, Tensor};

/// Row-softmaxed attention of one layer for one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionDump {
    pub id: String,
    pub layer: usize,
    /// `N × N`; row `i` attends from Arg1 position `i` over Arg2.
    pub matrix: Tensor,
    pub arg1: Vec<String>,
    pub arg2: Vec<String>,
}

/// Attention maps of every layer, inference mode.
pub fn attention_dumps(model: &Model, res: &Resources, inst: &Instance) -> Result<Vec<AttentionDump>> {
    let tape = Tape::new();
    let fwd = Forward::eval(&tape, &model.params);
    let out = model.encode(&fwd, res, inst)?;
    let n = model.config.max_len;
    Ok(out
        .attention
        .iter()
        .enumerate()
        .map(|(j, a)| AttentionDump {
            id: inst.id.clone(),
            layer: j + 1,
            matrix: a.attention.value(),
            arg1: pad_truncate(&inst.arg1, n),
            arg2: pad_truncate(&inst.arg2, n),
        })
        .collect())
}

/// Gray level of a probability: `round(255·p)`, so `|level/255 − p| ≤ 1/510`.
pub fn intensity(p: f64) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary graymap (`P5`), one pixel per matrix entry, rows top to bottom.
pub fn to_pgm(matrix: &Tensor) -> Vec<u8> {
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(matrix.data().iter().map(|&p| intensity(p)));
    out
}

/// Pixels of a `P5` image written by [`to_pgm`], with its width and height.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Input("not a binary graymap with maxval 255".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?);
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad());
    }
    let (w, h) = (num(fields[1])?, num(fields[2])?);
    let pixels = bytes.get(pos + 1..).ok_or_else(bad)?.to_vec();
    if pixels.len() != w * h {
        return Err(bad());
    }
    Ok((w, h, pixels))
}

/// `# arg1:` and `# arg2:` token lines, then one CSV row per Arg1 position.
pub fn to_csv(dump: &AttentionDump) -> String {
    let mut out = format!("# id: {}\n# layer: {}\n", dump.id, dump.layer);
    writeln!(out, "# arg1: {}", dump.arg1.join(" ")).unwrap();
    writeln!(out, "# arg2: {}", dump.arg2.join(" ")).unwrap();
    for r in 0..dump.matrix.rows() {
        let row: Vec<String> = dump.matrix.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    out
}

/// File stem safe on any filesystem.
pub fn file_stem(id: &str, layer: usize) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.layer{layer}")
}

/// Writes `<stem>.pgm` and `<stem>.csv` per dump; returns the paths written.
pub fn write_dumps(dumps: &[AttentionDump], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for d in dumps {
        let stem = file_stem(&d.id, d.layer);
        let pgm = dir.join(format!("{stem}.pgm"));
        std::fs::write(&pgm, to_pgm(&d.matrix)).map_err(|e| Error::io(&pgm, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, to_csv(d)).map_err(|e| Error::io(&csv, e))?;
        written.extend([pgm, csv]);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_stay_within_one_level_of_probabilities() {
        let m = Tensor::matrix(2, 3, vec![0.2, 0.3, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let (w, h, px) = parse_pgm(&to_pgm(&m)).unwrap();
        assert_eq!((w, h), (3, 2));
        for (p, &v) in m.data().iter().zip(&px) {
            assert!((v as f64 / 255.0 - p).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn uniform_attention_gives_constant_image() {
        let m = Tensor::full([4, 4], 0.25);
        let (_, _, px) = parse_pgm(&to_pgm(&m)).unwrap();
        assert!(px.iter().all(|&v| v == px[0]));
    }

    #[test]
    fn csv_carries_tokens_and_rows() {
        let dump = AttentionDump {
            id: "a/b".into(),
            layer: 2,
            matrix: Tensor::matrix(2, 2, vec![0.5, 0.5, 1.0, 0.0]).unwrap(),
            arg1: vec!["x".into(), "<pad>".into()],
            arg2: vec!["y".into(), "z".into()],
        };
        let csv = to_csv(&dump);
        assert!(csv.contains("# arg1: x <pad>\n# arg2: y z\n"));
        assert!(csv.ends_with("0.5,0.5\n1.0,0.0\n"));
        assert_eq!(file_stem(&dump.id, 2), "a_b.layer2");
    }
}
