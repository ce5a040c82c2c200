//! Text input (plain or gzip) and atomic file output.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;

use crate::error::{DeemError, Result};

fn io_err(path: &Path, e: std::io::Error) -> DeemError {
    DeemError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Whole file as UTF-8, transparently decompressing a `.gz` suffix.
pub fn open_text(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut text = String::new();
    if path.extension().is_some_and(|e| e == "gz") {
        MultiGzDecoder::new(file)
            .read_to_string(&mut text)
            .map_err(|e| io_err(path, e))?;
    } else {
        file.read_to_string(&mut text).map_err(|e| io_err(path, e))?;
    }
    Ok(text)
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(open_text(path)?.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

/// Write `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| DeemError::Config(format!("'{}' is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{}.tmp-{}", name, std::process::id()));
    let res = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = std::fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}
