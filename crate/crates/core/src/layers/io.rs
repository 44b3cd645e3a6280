//! ParamSet container: a flat binary file of little-endian `f64` arrays and a
//! plain-text manifest beside it.
//!
//! Manifest layout (`<bin>.manifest`):
//!
//! ```text
//! unlearn-params 1
//! arch in=3x28x28 f=16:3:1:1,32:3:2:1 g=64:3:2:1,64:3:1:1 classes=10 h=32:3:2:1 bias=3x8
//! param f.bn0.beta 16 0
//! param f.bn0.gamma 16 128
//! ...
//! buffer f.bn0.running_mean 16 <offset>
//! ```
//!
//! Each tensor line is `kind name dims byte_offset`, with dims joined by `x`
//! (`-` for a scalar).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::arch::ArchSpec;
use super::params::ParamSet;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const HEADER: &str = "unlearn-params 1";

pub fn manifest_path(bin: &Path) -> PathBuf {
    let mut s = bin.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn fmt_dims(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

impl ParamSet {
    /// Writes `bin` and `bin.manifest`.
    pub fn save(&self, bin: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(8 * (self.param_count() + 1024));
        let mut manifest = format!("{HEADER}\narch {}\n", self.arch);
        let entries = self
            .params
            .iter()
            .map(|e| ("param", e))
            .chain(self.buffers.iter().map(|e| ("buffer", e)));
        for (kind, (name, t)) in entries {
            manifest.push_str(&format!("{kind} {name} {} {}\n", fmt_dims(t.shape()), blob.len()));
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(bin, &blob).map_err(|e| Error::io(bin, e))?;
        let mp = manifest_path(bin);
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))
    }

    pub fn load(bin: &Path) -> Result<Self> {
        let mp = manifest_path(bin);
        let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let blob = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let bad = |msg: String| Error::format(&mp, msg);

        let mut lines = manifest.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing or unsupported header".into()));
        }
        let arch: ArchSpec = lines
            .next()
            .and_then(|l| l.strip_prefix("arch "))
            .ok_or_else(|| bad("missing arch line".into()))?
            .parse()
            .map_err(|e| bad(format!("{e}")))?;

        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut covered = 0usize;
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [kind, name, dims, offset] = fields[..] else {
                return Err(bad(format!("malformed line `{line}`")));
            };
            let shape: Vec<usize> = if dims == "-" {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse().map_err(|_| bad(format!("bad dims in `{line}`"))))
                    .collect::<Result<_>>()?
            };
            let offset: usize = offset
                .parse()
                .map_err(|_| bad(format!("bad offset in `{line}`")))?;
            let n: usize = shape.iter().product();
            let end = offset + 8 * n;
            if offset != covered || end > blob.len() {
                return Err(Error::format(bin, format!("truncated or misaligned tensor `{name}`")));
            }
            covered = end;
            let data = blob[offset..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::from_vec(&shape, data)?;
            match kind {
                "param" => params.insert(name.to_string(), t),
                "buffer" => buffers.insert(name.to_string(), t),
                _ => return Err(bad(format!("unknown entry kind `{kind}`"))),
            };
        }
        if covered != blob.len() {
            return Err(Error::format(bin, "trailing bytes after last tensor"));
        }

        // The stored tensors must be exactly what the architecture prescribes.
        let expected = ParamSet::init(&arch, 0)?;
        let layout = |m: &BTreeMap<String, Tensor>| {
            m.iter()
                .map(|(k, t)| (k.clone(), t.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        if layout(&params) != layout(&expected.params) || layout(&buffers) != layout(&expected.buffers) {
            return Err(bad("tensor names or shapes do not match the architecture".into()));
        }
        Ok(ParamSet {
            arch,
            params,
            buffers,
        })
    }
}
