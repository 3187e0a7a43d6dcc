//! Exit-code classes, image decoding and atomic file output.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use curvefeat::container::{read_archive, write_archive, TensorRecord};
use curvefeat::Error as CoreError;
use ndarray::Array3;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Other = 1,
    Io = 2,
    Geometry = 3,
    Checkpoint = 4,
    Data = 5,
}

/// An error tagged with the exit status it should produce.
#[derive(Debug)]
pub struct Failure {
    pub class: Class,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn fail(class: Class, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        class,
        error: error.into(),
    }
}

/// Class of a core error when no better context is known.
pub fn classify(e: &CoreError) -> Class {
    match e {
        CoreError::DimensionTooSmall { .. }
        | CoreError::BadAngleCount(_)
        | CoreError::TooFewScales(_)
        | CoreError::GeometryTooShallow(_) => Class::Geometry,
        CoreError::Io(_) | CoreError::Container(_) => Class::Io,
        CoreError::EmptyInput | CoreError::SingleClassInput => Class::Data,
        _ => Class::Other,
    }
}

/// Attaches the natural class to core errors.
pub trait CoreContext<T> {
    fn core(self, what: impl FnOnce() -> String) -> CliResult<T>;
    fn core_as(self, class: Class, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> CoreContext<T> for curvefeat::Result<T> {
    fn core(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| fail(classify(&e), anyhow::Error::new(e).context(what())))
    }

    fn core_as(self, class: Class, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| fail(class, anyhow::Error::new(e).context(what())))
    }
}

/// Reads an 8-bit PNG or binary PPM/PGM as `(3, H, W)` in [0, 1]. Single-channel
/// images are copied to all three channels with a warning on stderr.
pub fn read_rgb(path: &Path) -> CliResult<Array3<f64>> {
    let img = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| {
            fail(
                Class::Io,
                anyhow::Error::new(e).context(format!("opening {}", path.display())),
            )
        })?
        .decode()
        .map_err(|e| {
            fail(
                Class::Io,
                anyhow::Error::new(e).context(format!("decoding {}", path.display())),
            )
        })?;
    if !img.color().has_color() {
        eprintln!(
            "warning: {} is grayscale; replicating it to three channels",
            path.display()
        );
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = rgb.as_raw();
    Ok(Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        raw[(y * w + x) * 3 + c] as f64 / 255.0
    }))
}

/// Values clamped to [0, 1] and rounded to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `(3, H, W)` as an 8-bit RGB PNG.
pub fn write_png(path: &Path, rgb: &Array3<f64>) -> CliResult<()> {
    let (_, h, w) = rgb.dim();
    let mut buf = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            buf.extend((0..3).map(|c| quantize(rgb[[c, y, x]])));
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from the image");
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| fail(Class::Io, anyhow::Error::new(e).context("encoding PNG")))?;
    write_atomic(path, &bytes.into_inner())
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let io = |e: std::io::Error| {
        fail(
            Class::Io,
            anyhow::Error::new(e).context(format!("writing {}", path.display())),
        )
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[TensorRecord]) -> CliResult<()> {
    let mut bytes = Vec::new();
    write_archive(&mut bytes, records).core(|| "serializing records".into())?;
    write_atomic(path, &bytes)
}

pub fn read_records(path: &Path) -> CliResult<Vec<TensorRecord>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(|e| fail(Class::Io, e))?;
    read_archive(&mut std::io::BufReader::new(file)).core_as(Class::Io, || format!("reading {}", path.display()))
}

/// One line of an image list: `path,label[,group]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ListEntry {
    pub path: PathBuf,
    pub label: u8,
    pub group: Option<String>,
}

/// Parses an image list. Relative paths are taken from the list's directory.
pub fn read_list(path: &Path) -> CliResult<Vec<ListEntry>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(|e| fail(Class::Io, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || {
            fail(
                Class::Io,
                anyhow::anyhow!("{}:{}: expected path,label[,group]", path.display(), n + 1),
            )
        };
        if !(2..=3).contains(&fields.len()) {
            return Err(bad());
        }
        let label = match fields[1] {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad()),
        };
        out.push(ListEntry {
            path: base.join(fields[0]),
            label,
            group: fields.get(2).map(|g| g.to_string()),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn list_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("list.csv");
        std::fs::write(&p, "# images\na.png,1,v1\n\nsub/b.png, 0\n").unwrap();
        let got = read_list(&p).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].group.as_deref(), Some("v1"));
        assert_eq!(got[1].path, dir.path().join("sub/b.png"));
        assert_eq!(got[1].label, 0);
        std::fs::write(&p, "a.png,2\n").unwrap();
        assert_eq!(read_list(&p).unwrap_err().class, Class::Io);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn quantization() {
        assert_eq!(quantize(-0.2), 0);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.7), 255);
    }
}
