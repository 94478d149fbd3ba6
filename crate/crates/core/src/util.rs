use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for `(seed, purpose, stream)`. Distinct purposes
/// never share a key stream, so adding draws to one cannot shift another.
pub(crate) fn derive_rng(seed: u64, purpose: u64, stream: u64) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

pub(crate) mod purpose {
    pub const PHANTOM: u64 = 1;
    pub const LESION: u64 = 2;
    pub const LABELS: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const VIZ_INIT: u64 = 5;
    pub const VIZ_TRANSFORM: u64 = 6;
    pub const BASELINE: u64 = 7;
    pub const GRID: u64 = 8;
}

/// Writes through a temporary sibling and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
