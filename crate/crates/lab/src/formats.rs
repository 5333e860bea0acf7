//! Binary dataset, checkpoint and embedding files, plus the dataset CSV export.
//! All binary files are little-endian with a 4-byte magic and a u16 version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use proud_core::autodiff::{Param, ParamId, Tensor};
use proud_core::datagen::{DatasetSuite, DomainDataset, Role};
use proud_core::model::{Model, ModelSpec};

use crate::error::{LabError, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PRDS";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCK";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"PREM";
pub const FORMAT_VERSION: u16 = 1;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| LabError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| LabError::io(path, e))
}

fn header<R: Read>(r: &mut R, magic: &[u8; 4], path: &Path) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|e| LabError::io(path, e))?;
    if &m != magic {
        return Err(LabError::format(path, format!("bad magic {m:?}")));
    }
    let v = r.read_u16::<LE>().map_err(|e| LabError::io(path, e))?;
    if v != FORMAT_VERSION {
        return Err(LabError::format(path, format!("unsupported version {v}")));
    }
    Ok(())
}

fn write_matrix<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    for &v in t.data() {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> std::io::Result<Vec<f64>> {
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LE>(&mut data)?;
    Ok(data)
}

fn u32_of(v: usize, what: &str, path: &Path) -> Result<u32> {
    u32::try_from(v).map_err(|_| LabError::format(path, format!("{what} {v} does not fit in u32")))
}

/// `PRDS | version | K | p | count | per domain: id, n, role, n·p f64, has_labels, n u32 labels`.
pub fn write_dataset(path: &Path, suite: &DatasetSuite) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LabError::io(path, e);
    w.write_all(DATASET_MAGIC).map_err(io)?;
    w.write_u16::<LE>(FORMAT_VERSION).map_err(io)?;
    w.write_u32::<LE>(u32_of(suite.classes, "classes", path)?)
        .map_err(io)?;
    w.write_u32::<LE>(u32_of(suite.dim, "dim", path)?)
        .map_err(io)?;
    w.write_u32::<LE>(u32_of(suite.domains.len(), "domain count", path)?)
        .map_err(io)?;
    for d in &suite.domains {
        w.write_u32::<LE>(u32_of(d.domain_id, "domain id", path)?)
            .map_err(io)?;
        w.write_u64::<LE>(d.len() as u64).map_err(io)?;
        w.write_u8(d.role.to_byte()).map_err(io)?;
        write_matrix(&mut w, &d.inputs).map_err(io)?;
        match &d.labels {
            Some(labels) => {
                w.write_u8(1).map_err(io)?;
                for &y in labels {
                    w.write_u32::<LE>(u32_of(y, "label", path)?).map_err(io)?;
                }
            }
            None => w.write_u8(0).map_err(io)?,
        }
    }
    w.flush().map_err(io)
}

pub fn read_dataset(path: &Path) -> Result<DatasetSuite> {
    let mut r = open(path)?;
    header(&mut r, DATASET_MAGIC, path)?;
    let io = |e| LabError::io(path, e);
    let classes = r.read_u32::<LE>().map_err(io)? as usize;
    let dim = r.read_u32::<LE>().map_err(io)? as usize;
    let count = r.read_u32::<LE>().map_err(io)? as usize;
    let mut domains = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.read_u32::<LE>().map_err(io)? as usize;
        let n = r.read_u64::<LE>().map_err(io)? as usize;
        let role_byte = r.read_u8().map_err(io)?;
        let role = Role::from_byte(role_byte)
            .ok_or_else(|| LabError::format(path, format!("unknown role byte {role_byte}")))?;
        let inputs = Tensor::from_vec(n, dim, read_matrix(&mut r, n, dim).map_err(io)?)?;
        let labels = match r.read_u8().map_err(io)? {
            0 => None,
            1 => {
                let mut l = vec![0u32; n];
                r.read_u32_into::<LE>(&mut l).map_err(io)?;
                Some(l.into_iter().map(|y| y as usize).collect())
            }
            b => return Err(LabError::format(path, format!("bad label flag {b}"))),
        };
        domains.push(
            DomainDataset::new(id, role, inputs, labels, classes)
                .map_err(|e| LabError::format(path, format!("domain {id}: {e}")))?,
        );
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(LabError::format(
            path,
            format!("{} trailing bytes", rest.len()),
        ));
    }
    Ok(DatasetSuite {
        domains,
        classes,
        dim,
        gen_config: None,
    })
}

/// One row per sample: `domain_id, label (-1 if hidden), x_0 .. x_{p-1}`.
pub fn write_dataset_csv(path: &Path, suite: &DatasetSuite) -> Result<()> {
    let w = create(path)?;
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| LabError::format(path, e.to_string());
    let mut head = vec!["domain_id".to_string(), "label".to_string()];
    head.extend((0..suite.dim).map(|j| format!("x_{j}")));
    out.write_record(&head).map_err(csv_err)?;
    for d in &suite.domains {
        for i in 0..d.len() {
            let label = d.labels.as_ref().map_or(-1, |l| l[i] as i64);
            let mut rec = vec![d.domain_id.to_string(), label.to_string()];
            rec.extend(d.inputs.row_slice(i).iter().map(f64::to_string));
            out.write_record(&rec).map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| LabError::io(path, e))
}

/// `PRCK | version | model spec | param count | per param: name, rows, cols, f64 data`.
pub fn write_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LabError::io(path, e);
    let spec = model.spec();
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_u16::<LE>(FORMAT_VERSION).map_err(io)?;
    w.write_u32::<LE>(u32_of(spec.input_dim, "input dim", path)?)
        .map_err(io)?;
    w.write_u32::<LE>(u32_of(spec.hidden.len(), "layer count", path)?)
        .map_err(io)?;
    for &h in &spec.hidden {
        w.write_u32::<LE>(u32_of(h, "width", path)?).map_err(io)?;
    }
    w.write_u32::<LE>(u32_of(spec.feature_dim, "feature dim", path)?)
        .map_err(io)?;
    w.write_u32::<LE>(u32_of(spec.classes, "classes", path)?)
        .map_err(io)?;
    w.write_u32::<LE>(u32_of(model.params().len(), "param count", path)?)
        .map_err(io)?;
    for p in model.params() {
        let name = p.name.as_bytes();
        w.write_u16::<LE>(name.len() as u16).map_err(io)?;
        w.write_all(name).map_err(io)?;
        w.write_u32::<LE>(u32_of(p.value.rows(), "rows", path)?)
            .map_err(io)?;
        w.write_u32::<LE>(u32_of(p.value.cols(), "cols", path)?)
            .map_err(io)?;
        write_matrix(&mut w, &p.value).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Model> {
    let mut r = open(path)?;
    header(&mut r, CHECKPOINT_MAGIC, path)?;
    let io = |e| LabError::io(path, e);
    let input_dim = r.read_u32::<LE>().map_err(io)? as usize;
    let layers = r.read_u32::<LE>().map_err(io)? as usize;
    let mut hidden = Vec::with_capacity(layers);
    for _ in 0..layers {
        hidden.push(r.read_u32::<LE>().map_err(io)? as usize);
    }
    let feature_dim = r.read_u32::<LE>().map_err(io)? as usize;
    let classes = r.read_u32::<LE>().map_err(io)? as usize;
    let count = r.read_u32::<LE>().map_err(io)? as usize;
    let mut params = Vec::with_capacity(count);
    for id in 0..count {
        let len = r.read_u16::<LE>().map_err(io)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name)
            .map_err(|_| LabError::format(path, "parameter name is not UTF-8"))?;
        let rows = r.read_u32::<LE>().map_err(io)? as usize;
        let cols = r.read_u32::<LE>().map_err(io)? as usize;
        let value = Tensor::from_vec(rows, cols, read_matrix(&mut r, rows, cols).map_err(io)?)?;
        params.push(Param {
            id: ParamId(id),
            name,
            value,
        });
    }
    let spec = ModelSpec {
        input_dim,
        hidden,
        feature_dim,
        classes,
    };
    Model::from_params(spec, params).map_err(|e| LabError::format(path, e.to_string()))
}

/// What an embedding block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Features,
    Prototypes,
    Anchors,
}

impl BlockKind {
    fn byte(self) -> u8 {
        match self {
            BlockKind::Features => 0,
            BlockKind::Prototypes => 1,
            BlockKind::Anchors => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(BlockKind::Features),
            1 => Some(BlockKind::Prototypes),
            2 => Some(BlockKind::Anchors),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub domain_id: usize,
    pub kind: BlockKind,
    pub values: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEmbeddings {
    pub labeled: usize,
    pub test: usize,
    pub seed: u64,
    pub blocks: Vec<EmbeddingBlock>,
}

/// `PREM | version | run count | per run: labeled, test, seed, block count,
/// per block: domain id, kind, rows, cols, f64 data`.
pub fn write_embeddings(path: &Path, runs: &[RunEmbeddings]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LabError::io(path, e);
    w.write_all(EMBEDDING_MAGIC).map_err(io)?;
    w.write_u16::<LE>(FORMAT_VERSION).map_err(io)?;
    w.write_u32::<LE>(u32_of(runs.len(), "run count", path)?)
        .map_err(io)?;
    for run in runs {
        w.write_u32::<LE>(u32_of(run.labeled, "domain id", path)?)
            .map_err(io)?;
        w.write_u32::<LE>(u32_of(run.test, "domain id", path)?)
            .map_err(io)?;
        w.write_u64::<LE>(run.seed).map_err(io)?;
        w.write_u32::<LE>(u32_of(run.blocks.len(), "block count", path)?)
            .map_err(io)?;
        for b in &run.blocks {
            w.write_u32::<LE>(u32_of(b.domain_id, "domain id", path)?)
                .map_err(io)?;
            w.write_u8(b.kind.byte()).map_err(io)?;
            w.write_u32::<LE>(u32_of(b.values.rows(), "rows", path)?)
                .map_err(io)?;
            w.write_u32::<LE>(u32_of(b.values.cols(), "cols", path)?)
                .map_err(io)?;
            write_matrix(&mut w, &b.values).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<RunEmbeddings>> {
    let mut r = open(path)?;
    header(&mut r, EMBEDDING_MAGIC, path)?;
    let io = |e| LabError::io(path, e);
    let count = r.read_u32::<LE>().map_err(io)? as usize;
    let mut runs = Vec::with_capacity(count);
    for _ in 0..count {
        let labeled = r.read_u32::<LE>().map_err(io)? as usize;
        let test = r.read_u32::<LE>().map_err(io)? as usize;
        let seed = r.read_u64::<LE>().map_err(io)?;
        let blocks_n = r.read_u32::<LE>().map_err(io)? as usize;
        let mut blocks = Vec::with_capacity(blocks_n);
        for _ in 0..blocks_n {
            let domain_id = r.read_u32::<LE>().map_err(io)? as usize;
            let kb = r.read_u8().map_err(io)?;
            let kind = BlockKind::from_byte(kb)
                .ok_or_else(|| LabError::format(path, format!("unknown block kind {kb}")))?;
            let rows = r.read_u32::<LE>().map_err(io)? as usize;
            let cols = r.read_u32::<LE>().map_err(io)? as usize;
            let values =
                Tensor::from_vec(rows, cols, read_matrix(&mut r, rows, cols).map_err(io)?)?;
            blocks.push(EmbeddingBlock {
                domain_id,
                kind,
                values,
            });
        }
        runs.push(RunEmbeddings {
            labeled,
            test,
            seed,
            blocks,
        });
    }
    Ok(runs)
}
