//! Binary weight container, little-endian and bit-exact on round trip.
//!
//! Layout:
//!
//! ```text
//! magic        b"PKV2"
//! version      u32 = 1
//! eps_bits     u32 (f32 bit pattern of the BN epsilon shared by all norms)
//! config_kind  u32 (0 = standalone PKS module, 1 = backbone variant)
//! config       kind 0: channels, k_s, n_branches, then per branch
//!                      (kind: 0 axial / 1 sparse / 2 dense, k, d) -- all u32
//!              kind 1: channels[4], depths[4], ffn_ratio, stem_channels,
//!                      in_channels, then 4 stage specs
//!                      (k_s, n_branches, branch triples)
//! n_tensors    u32
//! directory    per tensor: name_len u32, name bytes, ndim u32, dims u32...,
//!              offset u64 (byte offset into the payload)
//! payload_len  u64 (bytes)
//! payload      f32 little-endian values
//! ```
//!
//! Directory offsets are strictly increasing and non-overlapping, and the
//! payload length equals the sum of tensor sizes.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use pkv2_core::backbone::{BackboneWeights, PatchEmbedWeights, StageWeights, VariantConfig};
use pkv2_core::catalog::{backbone_named_tensors, pks_named_tensors, NamedTensor};
use pkv2_core::pks::{
    BlockWeights, BranchKind, BranchSpec, BranchWeights, FfnWeights, PksBlockWeights, PksBranch,
    PksConfig, PksModuleSpec, PksWeights,
};
use pkv2_core::tensor::{BatchNormParams, ConvWeights, DepthwiseWeights, PointwiseWeights};

pub const MAGIC: &[u8; 4] = b"PKV2";
pub const VERSION: u32 = 1;

/// Contents of a weight file: either one PKS module or a whole backbone.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredWeights {
    Pks(PksWeights),
    Backbone {
        config: VariantConfig,
        weights: BackboneWeights<PksWeights>,
    },
}

/// Parsed directory entry, exposed for `weights dump`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone)]
pub struct FileMeta {
    pub version: u32,
    pub eps: f32,
    pub kind: &'static str,
    pub entries: Vec<DirEntry>,
    pub payload_len: u64,
}

// ---------------------------------------------------------------- writing

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn branch(&mut self, b: &BranchSpec) {
        self.u32(match b.kind {
            BranchKind::AxialStrip => 0,
            BranchKind::SparseSquare => 1,
            BranchKind::DenseSquare => 2,
        });
        self.u32(b.k as u32);
        self.u32(b.d as u32);
    }

    fn module_spec(&mut self, k_s: usize, branches: &[BranchSpec]) {
        self.u32(k_s as u32);
        self.u32(branches.len() as u32);
        for b in branches {
            self.branch(b);
        }
    }
}

fn collect_eps(w: &StoredWeights) -> Result<f32> {
    let mut eps: Option<f32> = None;
    let mut add = |e: f32| -> Result<()> {
        match eps {
            None => eps = Some(e),
            Some(prev) if prev.to_bits() == e.to_bits() => {}
            Some(prev) => bail!("mixed BN epsilons {prev} and {e}; the container stores one"),
        }
        Ok(())
    };
    match w {
        StoredWeights::Pks(p) => {
            for br in &p.branches {
                add(br.bn.eps)?;
            }
        }
        StoredWeights::Backbone { weights, .. } => {
            for stage in &weights.stages {
                match &stage.patch_embed {
                    PatchEmbedWeights::Stem {
                        norm_in, norm_out, ..
                    } => {
                        add(norm_in.eps)?;
                        add(norm_out.eps)?;
                    }
                    PatchEmbedWeights::Down { norm, .. } => add(norm.eps)?,
                }
                for b in &stage.blocks {
                    add(b.norm1.eps)?;
                    add(b.norm2.eps)?;
                    for br in &b.pks_block.gate.branches {
                        add(br.bn.eps)?;
                    }
                }
            }
        }
    }
    eps.ok_or_else(|| anyhow!("no batch-norm parameters found"))
}

pub fn to_bytes(w: &StoredWeights) -> Result<Vec<u8>> {
    let eps = collect_eps(w)?;
    let mut wr = Writer {
        buf: MAGIC.to_vec(),
    };
    wr.u32(VERSION);
    wr.u32(eps.to_bits());
    let tensors: Vec<NamedTensor<'_>> = match w {
        StoredWeights::Pks(p) => {
            p.validate().map_err(|e| anyhow!("invalid weights: {e}"))?;
            wr.u32(0);
            wr.u32(p.config.channels as u32);
            wr.module_spec(p.config.k_s, &p.config.branches);
            pks_named_tensors(p)
        }
        StoredWeights::Backbone { config, weights } => {
            config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
            wr.u32(1);
            for c in config.channels {
                wr.u32(c as u32);
            }
            for d in config.depths {
                wr.u32(d as u32);
            }
            wr.u32(config.ffn_ratio as u32);
            wr.u32(config.stem_channels as u32);
            wr.u32(config.in_channels as u32);
            for spec in &config.stage_pks {
                wr.module_spec(spec.k_s, &spec.branches);
            }
            backbone_named_tensors(weights)
        }
    };
    wr.u32(tensors.len() as u32);
    let mut offset = 0u64;
    for t in &tensors {
        wr.u32(t.name.len() as u32);
        wr.buf.extend_from_slice(t.name.as_bytes());
        wr.u32(t.dims.len() as u32);
        for &d in &t.dims {
            wr.u32(d as u32);
        }
        wr.u64(offset);
        offset += 4 * t.data.len() as u64;
    }
    wr.u64(offset);
    for t in &tensors {
        for v in t.data {
            wr.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(wr.buf)
}

pub fn save(path: &Path, w: &StoredWeights) -> Result<()> {
    let bytes = to_bytes(w)?;
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- reading

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!("truncated weight file at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn branch(&mut self) -> Result<BranchSpec> {
        let kind = match self.u32()? {
            0 => BranchKind::AxialStrip,
            1 => BranchKind::SparseSquare,
            2 => BranchKind::DenseSquare,
            k => bail!("unknown branch kind code {k}"),
        };
        let k = self.u32()? as usize;
        let d = self.u32()? as usize;
        Ok(BranchSpec { kind, k, d })
    }

    fn module_spec(&mut self) -> Result<PksModuleSpec> {
        let k_s = self.u32()? as usize;
        let n = self.u32()? as usize;
        let branches = (0..n).map(|_| self.branch()).collect::<Result<Vec<_>>>()?;
        Ok(PksModuleSpec { k_s, branches })
    }
}

/// Tensors by name, each taken exactly once during reconstruction.
struct TensorMap {
    map: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

impl TensorMap {
    fn take(&mut self, name: &str, dims: &[usize]) -> Result<Vec<f32>> {
        let (got_dims, data) = self
            .map
            .remove(name)
            .ok_or_else(|| anyhow!("missing tensor '{name}'"))?;
        if got_dims != dims {
            bail!("tensor '{name}' has shape {got_dims:?}, expected {dims:?}");
        }
        Ok(data)
    }

    fn bn(&mut self, prefix: &str, c: usize, eps: f32) -> Result<BatchNormParams> {
        BatchNormParams::new(
            self.take(&format!("{prefix}.gamma"), &[c])?,
            self.take(&format!("{prefix}.beta"), &[c])?,
            self.take(&format!("{prefix}.mean"), &[c])?,
            self.take(&format!("{prefix}.var"), &[c])?,
            eps,
        )
        .map_err(|e| anyhow!("bad batch-norm '{prefix}': {e}"))
    }

    fn pointwise(&mut self, prefix: &str, c_out: usize, c_in: usize) -> Result<PointwiseWeights> {
        let w = self.take(&format!("{prefix}.w"), &[c_out, c_in])?;
        let b = self.take(&format!("{prefix}.b"), &[c_out])?;
        Ok(PointwiseWeights::new(c_out, c_in, w, Some(b))?)
    }

    fn pks(&mut self, prefix: &str, cfg: &PksConfig, eps: f32) -> Result<PksWeights> {
        let c = cfg.channels;
        let conv0 = DepthwiseWeights::square(
            c,
            cfg.k_s,
            1,
            self.take(&format!("{prefix}conv0.w"), &[c, 1, cfg.k_s, cfg.k_s])?,
        )?;
        let mut branches = Vec::with_capacity(cfg.branches.len());
        for (i, spec) in cfg.branches.iter().enumerate() {
            let weights = match spec.kind {
                BranchKind::AxialStrip => BranchWeights::Axial {
                    row: DepthwiseWeights::new(
                        c,
                        1,
                        spec.k,
                        1,
                        1,
                        self.take(&format!("{prefix}branch{i}.row.w"), &[c, 1, 1, spec.k])?,
                        None,
                    )?,
                    col: DepthwiseWeights::new(
                        c,
                        spec.k,
                        1,
                        1,
                        1,
                        self.take(&format!("{prefix}branch{i}.col.w"), &[c, 1, spec.k, 1])?,
                        None,
                    )?,
                },
                _ => BranchWeights::Square(DepthwiseWeights::square(
                    c,
                    spec.k,
                    spec.d,
                    self.take(&format!("{prefix}branch{i}.w"), &[c, 1, spec.k, spec.k])?,
                )?),
            };
            branches.push(PksBranch {
                spec: *spec,
                weights,
                bn: self.bn(&format!("{prefix}branch{i}.bn"), c, eps)?,
            });
        }
        let conv1 = self.pointwise(&format!("{prefix}conv1"), c, c)?;
        let w = PksWeights {
            config: cfg.clone(),
            conv0,
            branches,
            conv1,
        };
        w.validate().map_err(|e| anyhow!("loaded weights invalid: {e}"))?;
        Ok(w)
    }

    fn block(
        &mut self,
        prefix: &str,
        c: usize,
        ffn_ratio: usize,
        spec: &PksModuleSpec,
        eps: f32,
    ) -> Result<BlockWeights<PksWeights>> {
        let hidden = ffn_ratio * c;
        Ok(BlockWeights {
            norm1: self.bn(&format!("{prefix}.norm1"), c, eps)?,
            pks_block: PksBlockWeights {
                proj1: self.pointwise(&format!("{prefix}.proj1"), c, c)?,
                gate: self.pks(
                    &format!("{prefix}.pks."),
                    &PksConfig::from_spec(c, spec),
                    eps,
                )?,
                proj2: self.pointwise(&format!("{prefix}.proj2"), c, c)?,
            },
            ls1: self.take(&format!("{prefix}.ls1"), &[c])?,
            norm2: self.bn(&format!("{prefix}.norm2"), c, eps)?,
            ffn: FfnWeights {
                fc1: self.pointwise(&format!("{prefix}.ffn.fc1"), hidden, c)?,
                fc2: self.pointwise(&format!("{prefix}.ffn.fc2"), c, hidden)?,
            },
            ls2: self.take(&format!("{prefix}.ls2"), &[c])?,
        })
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize) -> Result<ConvWeights> {
        let w = self.take(name, &[c_out, c_in, 3, 3])?;
        Ok(ConvWeights::new(c_out, c_in, 3, 3, w, None)?)
    }

    fn backbone(
        &mut self,
        cfg: &VariantConfig,
        eps: f32,
    ) -> Result<BackboneWeights<PksWeights>> {
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let patch_embed = if s == 0 {
                PatchEmbedWeights::Stem {
                    conv_in: self.conv(
                        &format!("stage{s}.pe.conv_in.w"),
                        cfg.stem_channels,
                        cfg.in_channels,
                    )?,
                    norm_in: self.bn(&format!("stage{s}.pe.norm_in"), cfg.stem_channels, eps)?,
                    conv_out: self.conv(
                        &format!("stage{s}.pe.conv_out.w"),
                        cfg.channels[0],
                        cfg.stem_channels,
                    )?,
                    norm_out: self.bn(&format!("stage{s}.pe.norm_out"), cfg.channels[0], eps)?,
                }
            } else {
                PatchEmbedWeights::Down {
                    conv: self.conv(
                        &format!("stage{s}.pe.conv.w"),
                        cfg.channels[s],
                        cfg.channels[s - 1],
                    )?,
                    norm: self.bn(&format!("stage{s}.pe.norm"), cfg.channels[s], eps)?,
                }
            };
            let blocks = (0..cfg.depths[s])
                .map(|n| {
                    self.block(
                        &format!("stage{s}.block{n}"),
                        cfg.channels[s],
                        cfg.ffn_ratio,
                        &cfg.stage_pks[s],
                        eps,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(StageWeights {
                patch_embed,
                blocks,
            });
        }
        Ok(BackboneWeights { stages })
    }
}

fn parse_header<'a>(bytes: &'a [u8]) -> Result<(Reader<'a>, u32, f32, u32)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!("not a PKV2 weight file (bad magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported weight file version {version}");
    }
    let eps = f32::from_bits(r.u32()?);
    if eps.is_nan() || eps <= 0.0 {
        bail!("stored BN epsilon must be positive, got {eps}");
    }
    let kind = r.u32()?;
    Ok((r, version, eps, kind))
}

fn parse_directory(r: &mut Reader<'_>) -> Result<(Vec<DirEntry>, u64)> {
    let n = r.u32()? as usize;
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .context("tensor name is not valid utf-8")?;
        let ndim = r.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        entries.push(DirEntry { name, dims, offset });
    }
    let payload_len = r.u64()?;

    // offsets strictly increasing and non-overlapping, payload fully covered
    let mut expected = 0u64;
    for (i, e) in entries.iter().enumerate() {
        let size = 4 * e.dims.iter().product::<usize>() as u64;
        if e.offset != expected {
            if i > 0 && e.offset <= entries[i - 1].offset {
                bail!("directory offsets not strictly increasing at '{}'", e.name);
            }
            bail!(
                "tensor '{}' at offset {} leaves a gap or overlap (expected {expected})",
                e.name,
                e.offset
            );
        }
        expected += size;
    }
    if expected != payload_len {
        bail!("payload length {payload_len} does not match tensor total {expected}");
    }
    Ok((entries, payload_len))
}

/// Parses header and directory only; used by `weights dump`.
pub fn read_meta(bytes: &[u8]) -> Result<FileMeta> {
    let (mut r, version, eps, kind) = parse_header(bytes)?;
    let kind = match kind {
        0 => {
            let _channels = r.u32()?;
            let _ = r.module_spec()?;
            "pks"
        }
        1 => {
            for _ in 0..10 {
                let _ = r.u32()?;
            }
            let _ = r.u32()?; // in_channels
            for _ in 0..4 {
                let _ = r.module_spec()?;
            }
            "backbone"
        }
        k => bail!("unknown config kind {k}"),
    };
    let (entries, payload_len) = parse_directory(&mut r)?;
    Ok(FileMeta {
        version,
        eps,
        kind,
        entries,
        payload_len,
    })
}

pub fn from_bytes(bytes: &[u8]) -> Result<StoredWeights> {
    let (mut r, _version, eps, kind) = parse_header(bytes)?;
    enum Cfg {
        Pks(PksConfig),
        Variant(VariantConfig),
    }
    let cfg = match kind {
        0 => {
            let channels = r.u32()? as usize;
            let spec = r.module_spec()?;
            Cfg::Pks(PksConfig::from_spec(channels, &spec))
        }
        1 => {
            let mut channels = [0usize; 4];
            for c in &mut channels {
                *c = r.u32()? as usize;
            }
            let mut depths = [0usize; 4];
            for d in &mut depths {
                *d = r.u32()? as usize;
            }
            let ffn_ratio = r.u32()? as usize;
            let stem_channels = r.u32()? as usize;
            let in_channels = r.u32()? as usize;
            let mut specs = Vec::with_capacity(4);
            for _ in 0..4 {
                specs.push(r.module_spec()?);
            }
            Cfg::Variant(VariantConfig {
                channels,
                depths,
                ffn_ratio,
                stem_channels,
                in_channels,
                stage_pks: specs.try_into().expect("exactly four stage specs"),
            })
        }
        k => bail!("unknown config kind {k}"),
    };
    let (entries, payload_len) = parse_directory(&mut r)?;
    let payload = r.take(payload_len as usize)?;
    if r.pos != bytes.len() {
        bail!("{} trailing bytes after payload", bytes.len() - r.pos);
    }

    let mut map = HashMap::with_capacity(entries.len());
    for e in &entries {
        let len = e.dims.iter().product::<usize>();
        let start = e.offset as usize;
        let data: Vec<f32> = payload[start..start + 4 * len]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if map.insert(e.name.clone(), (e.dims.clone(), data)).is_some() {
            bail!("duplicate tensor '{}'", e.name);
        }
    }
    let mut tensors = TensorMap { map };

    let stored = match cfg {
        Cfg::Pks(cfg) => StoredWeights::Pks(tensors.pks("", &cfg, eps)?),
        Cfg::Variant(cfg) => {
            let weights = tensors.backbone(&cfg, eps)?;
            StoredWeights::Backbone {
                config: cfg,
                weights,
            }
        }
    };
    if let Some(name) = tensors.map.keys().next() {
        bail!("unexpected tensor '{name}' in weight file");
    }
    Ok(stored)
}

pub fn load(path: &Path) -> Result<StoredWeights> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    from_bytes(&bytes)
}
