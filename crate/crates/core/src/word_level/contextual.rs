use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embedding::hex;
use crate::data::{ArgRole, InstanceRecord};
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::tensor::{Init, ParamId, ParamStore, Tensor, Var};

/// Two aligned layer outputs, each `len × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextualLayers {
    pub h0: Tensor,
    pub h1: Tensor,
}

impl ContextualLayers {
    pub fn len(&self) -> usize {
        self.h0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source of two-layer contextual token vectors, keyed by instance and role.
///
/// Implementations are deterministic and never trained by the downstream model.
pub trait ContextualEmbedder {
    /// Width `d_c′` of each layer output.
    fn dim(&self) -> usize;

    /// One row per token of `tokens`.
    fn layers(&self, id: &str, role: ArgRole, tokens: &[String]) -> Result<ContextualLayers>;

    /// Fingerprint of everything that determines the outputs.
    fn checksum(&self) -> String;

    /// The stored vectors when the source replays a file.
    fn as_precomputed(&self) -> Option<&PrecomputedContextual> {
        None
    }
}

/// `e^c = γ·(s₀h⁰ + s₁h¹)·W_c + b_c` with `s = softmax(w)`.
#[derive(Clone, Debug)]
pub struct ContextualMixer {
    pub weights: ParamId,
    pub gamma: ParamId,
    pub projection: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ContextualMixer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ContextualMixer {
            weights: store.init(format!("{name}.layer_weights"), [1, 2], Init::Zeros, rng),
            gamma: store.init(format!("{name}.gamma"), [1], Init::Constant(1.0), rng),
            projection: store.init(
                format!("{name}.projection"),
                [input_dim, output_dim],
                Init::FanIn(input_dim),
                rng,
            ),
            bias: store.init(format!("{name}.bias"), [output_dim], Init::Zeros, rng),
            input_dim,
            output_dim,
        }
    }

    /// Layer mixing weights `s`, a `1×2` row on the simplex.
    pub fn layer_weights<'t>(&self, fwd: &Forward<'t>) -> Result<Var<'t>> {
        fwd.param(self.weights).softmax_rows()
    }

    pub fn mix_and_project<'t>(
        &self,
        fwd: &Forward<'t>,
        h0: Var<'t>,
        h1: Var<'t>,
    ) -> Result<Var<'t>> {
        for h in [h0, h1] {
            let shape = h.shape();
            if shape.len() != 2 || shape[1] != self.input_dim {
                return Err(Error::Dimension {
                    op: "mix_and_project",
                    lhs: shape,
                    rhs: vec![self.input_dim],
                });
            }
        }
        let s = self.layer_weights(fwd)?;
        let mixed = h0
            .scale(s.slice_cols(0, 1)?)?
            .add(h1.scale(s.slice_cols(1, 2)?)?)?
            .scale(fwd.param(self.gamma))?;
        mixed
            .matmul(fwd.param(self.projection))?
            .add_row(fwd.param(self.bias))
    }
}

const FORMAT_NAME: &str = "idrr-contextual";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct FileRecord {
    id: String,
    role: ArgRole,
    h0: Vec<Vec<f64>>,
    h1: Vec<Vec<f64>>,
}

/// Replays stored per-token layer outputs.
///
/// File format (JSON lines): a header `{"format":"idrr-contextual","version":1,"dim":D}`
/// followed by one `{"id","role","h0","h1"}` record per argument, where `h0`
/// and `h1` are lists of `D`-wide rows, one per token.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedContextual {
    dim: usize,
    entries: BTreeMap<(String, ArgRole), ContextualLayers>,
}

impl PrecomputedContextual {
    pub fn new(dim: usize) -> Self {
        PrecomputedContextual {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: &str, role: ArgRole, layers: ContextualLayers) -> Result<()> {
        for h in [&layers.h0, &layers.h1] {
            if h.shape().len() != 2 || h.cols() != self.dim || h.rows() != layers.len() {
                return Err(Error::Dimension {
                    op: "contextual_layers",
                    lhs: h.shape().to_vec(),
                    rhs: vec![layers.len(), self.dim],
                });
            }
        }
        self.entries.insert((id.to_string(), role), layers);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Runs `source` over both arguments of every record.
    pub fn capture(source: &dyn ContextualEmbedder, records: &[InstanceRecord]) -> Result<Self> {
        let mut out = PrecomputedContextual::new(source.dim());
        for r in records {
            for role in [ArgRole::Arg1, ArgRole::Arg2] {
                out.insert(&r.id, role, source.layers(&r.id, role, r.arg(role))?)?;
            }
        }
        Ok(out)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = FileHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            dim: self.dim,
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        let rows = |t: &Tensor| (0..t.rows()).map(|r| t.row(r).to_vec()).collect();
        for ((id, role), layers) in &self.entries {
            let rec = FileRecord {
                id: id.clone(),
                role: *role,
                h0: rows(&layers.h0),
                h1: rows(&layers.h1),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl BufRead, origin: &str) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let header: FileHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::io(origin, e))?;
                serde_json::from_str(&line).map_err(|e| err(1, e.to_string()))?
            }
            None => return Err(err(1, "missing header".into())),
        };
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(err(
                1,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let mut out = PrecomputedContextual::new(header.dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FileRecord =
                serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
            let to_tensor = |rows: &[Vec<f64>]| {
                Tensor::from_rows(rows).map_err(|e| err(i + 1, e.to_string()))
            };
            if rec.h0.is_empty() || rec.h0.len() != rec.h1.len() {
                return Err(err(i + 1, "h0 and h1 need the same positive row count".into()));
            }
            let layers = ContextualLayers {
                h0: to_tensor(&rec.h0)?,
                h1: to_tensor(&rec.h1)?,
            };
            out.insert(&rec.id, rec.role, layers)
                .map_err(|e| err(i + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        PrecomputedContextual::read_from(BufReader::new(file), &path.display().to_string())
    }
}

impl ContextualEmbedder for PrecomputedContextual {
    fn dim(&self) -> usize {
        self.dim
    }

    fn as_precomputed(&self) -> Option<&PrecomputedContextual> {
        Some(self)
    }

    fn layers(&self, id: &str, role: ArgRole, tokens: &[String]) -> Result<ContextualLayers> {
        let layers = self
            .entries
            .get(&(id.to_string(), role))
            .ok_or_else(|| Error::Lookup(format!("no contextual vectors for {id}/{role}")))?;
        if layers.len() != tokens.len() {
            return Err(Error::Lookup(format!(
                "contextual vectors for {id}/{role} cover {} tokens, argument has {}",
                layers.len(),
                tokens.len()
            )));
        }
        Ok(layers.clone())
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for ((id, role), layers) in &self.entries {
            h.update(id.as_bytes());
            h.update([0, *role as u8]);
            for t in [&layers.h0, &layers.h1] {
                h.update((t.rows() as u64).to_le_bytes());
                t.data().iter().for_each(|v| h.update(v.to_le_bytes()));
            }
        }
        hex(&h.finalize())
    }
}
