//! Small filesystem helpers shared by the serialisation paths.

use std::io::{self, Write};
use std::path::Path;

/// Writes `bytes` to `path` atomically: the data goes to a temporary
/// file in the same directory which is then renamed over the target,
/// so readers never observe a half-written file.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
