pub mod evaluate;
pub mod gen_prompts;
pub mod sample;
pub mod train;

use std::io::Write;
use std::path::Path;

use xtalgen::{Error, Result};

/// Write lines to a file, creating parent directories as needed.
pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    for line in lines {
        writeln!(f, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}
