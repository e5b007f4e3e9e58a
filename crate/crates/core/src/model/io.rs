//! Versioned binary model container.
//!
//! ```text
//! magic        8 bytes   "SDKDMODL"
//! version      u32 LE
//! header_len   u64 LE
//! header       JSON: spec, categories, vectorizer config, idf document count
//! arrays       u64 LE length + f64 LE values each:
//!              idf weights, then weights and bias of every layer
//! checksum     SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Classifier, Layer, ModelSpec, Network};
use crate::corpus::CategorySet;
use crate::error::{Error, Result};
use crate::features::{IdfTable, Vectorizer, VectorizerConfig};

pub const MAGIC: &[u8; 8] = b"SDKDMODL";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    categories: CategorySet,
    vectorizer: VectorizerConfig,
    idf_doc_count: u64,
}

pub fn to_bytes(model: &Classifier) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec: model.network.spec().clone(),
        categories: model.categories.clone(),
        vectorizer: model.vectorizer.config.clone(),
        idf_doc_count: model.vectorizer.idf.doc_count(),
    })?;
    let mut buf = Vec::with_capacity(64 + header.len() + 8 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    put_array(&mut buf, model.vectorizer.idf.weights());
    for layer in model.network.layers() {
        put_array(&mut buf, &layer.weights);
        put_array(&mut buf, &layer.bias);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn put_array(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Classifier> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < r.pos + CHECKSUM_LEN {
        return Err(Error::Integrity("file truncated".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Integrity(
            "checksum mismatch (file truncated or corrupted)".into(),
        ));
    }
    let mut r = Reader {
        bytes: body,
        pos: r.pos,
    };
    let header_len = r.u64()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)?;

    let idf_weights = r.array()?;
    let idf = IdfTable::from_parts(
        header.vectorizer.dimension,
        header.idf_doc_count,
        idf_weights,
    )?;
    let mut layers = Vec::new();
    for (fan_in, fan_out) in header.spec.layer_shapes() {
        let weights = r.array()?;
        let bias = r.array()?;
        layers.push(Layer {
            fan_in,
            fan_out,
            weights,
            bias,
        });
    }
    if r.pos != body.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    let network = Network::from_layers(header.spec, layers)?;
    header.vectorizer.validate()?;
    Classifier::new(
        network,
        Vectorizer {
            config: header.vectorizer,
            idf,
        },
        header.categories,
    )
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity("unexpected end of model data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn array(&mut self) -> Result<Vec<f64>> {
        let len = self.u64()? as usize;
        let raw = self.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Integrity("array length overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn save(model: &Classifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Classifier> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
