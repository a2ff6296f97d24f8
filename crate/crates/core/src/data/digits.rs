//! Digit benchmarks (MNIST, USPS, SVHN, MNIST-M) read from a local cache.
//!
//! Layout under the data directory:
//!
//! ```text
//! mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]
//! usps/usps-{train,test}-{images-idx3,labels-idx1}-ubyte[.gz]   (or libsvm `usps`, `usps.t`)
//! svhn/svhn-{train,test}-{images-idx4,labels-idx1}-ubyte[.gz]   (n x 32 x 32 x 3)
//! mnistm/mnistm-{train,test}-{images-idx4,labels-idx1}-ubyte[.gz]
//! ```
//!
//! Every image is resized to 32x32, optionally triplicated to three
//! channels, and normalised to [-1, 1].

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};

use super::{stratified_subsample, Dataset, DatasetName, DatasetSpec, Domain, ImageShape, InputLayout, Split};
use crate::error::{config, Error, Result};

pub const DATA_DIR_ENV: &str = "DATA_DIR";
const SIDE: usize = 32;

/// CLI flag, then `DATA_DIR`, then `./data`.
pub fn resolve_data_dir(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Sizes of the predefined splits of the standard distributions.
pub fn expected_split_size(name: DatasetName, split: Split) -> Option<usize> {
    use DatasetName::*;
    use Split::*;
    match (name, split) {
        (Mnist, Train) | (Mnistm, Train) => Some(60_000),
        (Mnist, Test) | (Mnistm, Test) => Some(10_000),
        (Usps, Train) => Some(7_438),
        (Usps, Test) => Some(1_860),
        (Svhn, Train) => Some(73_257),
        (Svhn, Test) => Some(26_032),
        _ => None,
    }
}

struct RawImages {
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
    /// Interleaved `(n, h, w, c)` intensities in [0, 1].
    pixels: Vec<f32>,
    labels: Vec<usize>,
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|f| dir.join(f))
        .find(|p| p.is_file())
}

/// Parses an IDX file of unsigned bytes, returning its dimensions and payload.
pub(crate) fn read_idx(reader: &mut dyn Read) -> Result<(Vec<usize>, Vec<u8>)> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08 {
        return config(format!("not an unsigned-byte IDX file (magic {magic:?})"));
    }
    let ndims = magic[3] as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let mut b = [0u8; 4];
        reader.read_exact(&mut b)?;
        dims.push(u32::from_be_bytes(b) as usize);
    }
    let len: usize = dims.iter().product();
    let mut data = vec![0u8; len];
    reader.read_exact(&mut data)?;
    Ok((dims, data))
}

fn read_idx_images(dir: &Path, images: &str, labels: &str, name: &str) -> Result<RawImages> {
    let fetch_err = |what: &str| Error::Fetch {
        name: name.to_string(),
        reason: format!("{what} not found under {}", dir.display()),
    };
    let img_path = find_file(dir, images).ok_or_else(|| fetch_err(images))?;
    let lbl_path = find_file(dir, labels).ok_or_else(|| fetch_err(labels))?;
    let (dims, pixels) = read_idx(&mut *open_maybe_gz(&img_path)?)?;
    let (ldims, labels) = read_idx(&mut *open_maybe_gz(&lbl_path)?)?;
    let (count, height, width, channels) = match dims.as_slice() {
        [n, h, w] => (*n, *h, *w, 1),
        [n, h, w, c] => (*n, *h, *w, *c),
        other => return config(format!("unexpected image dims {other:?}")),
    };
    if ldims != [count] {
        return config(format!("{count} images but label dims {ldims:?}"));
    }
    Ok(RawImages {
        count,
        height,
        width,
        channels,
        pixels: pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        labels: labels.iter().map(|&y| y as usize).collect(),
    })
}

/// USPS in libsvm format: `label idx:value ...` with 256 values in [-1, 1], labels 1..=10.
fn read_usps_libsvm(path: &Path) -> Result<RawImages> {
    let reader = BufReader::new(open_maybe_gz(path)?);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next() else { continue };
        let label: f64 = label
            .parse()
            .map_err(|_| Error::Config(format!("bad usps label `{label}`")))?;
        let mut row = vec![0f32; 256];
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad usps field `{field}`")))?;
            let idx: usize = idx.parse().map_err(|_| Error::Config(format!("bad index `{idx}`")))?;
            let val: f32 = val.parse().map_err(|_| Error::Config(format!("bad value `{val}`")))?;
            if idx == 0 || idx > 256 {
                return config(format!("usps feature index {idx} out of range"));
            }
            row[idx - 1] = (val + 1.0) / 2.0;
        }
        pixels.extend(row);
        labels.push(label as usize - 1);
    }
    Ok(RawImages {
        count: labels.len(),
        height: 16,
        width: 16,
        channels: 1,
        pixels,
        labels,
    })
}

fn read_raw(name: DatasetName, split: Split, root: &Path) -> Result<RawImages> {
    let dir = root.join(name.as_str());
    let s = split.as_str();
    match name {
        DatasetName::Mnist => {
            let prefix = if split == Split::Train { "train" } else { "t10k" };
            read_idx_images(
                &dir,
                &format!("{prefix}-images-idx3-ubyte"),
                &format!("{prefix}-labels-idx1-ubyte"),
                "mnist",
            )
        }
        DatasetName::Usps => {
            let idx = read_idx_images(
                &dir,
                &format!("usps-{s}-images-idx3-ubyte"),
                &format!("usps-{s}-labels-idx1-ubyte"),
                "usps",
            );
            match idx {
                Err(Error::Fetch { .. }) => {
                    let stem = if split == Split::Train { "usps" } else { "usps.t" };
                    match find_file(&dir, stem) {
                        Some(p) => read_usps_libsvm(&p),
                        None => Err(Error::Fetch {
                            name: "usps".into(),
                            reason: format!(
                                "neither usps-{s}-*-ubyte nor libsvm `{stem}` found under {}",
                                dir.display()
                            ),
                        }),
                    }
                }
                other => other,
            }
        }
        DatasetName::Svhn | DatasetName::Mnistm => {
            let n = name.as_str();
            read_idx_images(
                &dir,
                &format!("{n}-{s}-images-idx4-ubyte"),
                &format!("{n}-{s}-labels-idx1-ubyte"),
                n,
            )
        }
        other => config(format!("`{}` is not a digit dataset", other.as_str())),
    }
}

/// Resizes one interleaved `(h, w, c)` image to 32x32 and returns it channel-major.
fn to_canonical(raw: &RawImages, i: usize, out_channels: usize) -> Vec<f32> {
    let (h, w, c) = (raw.height, raw.width, raw.channels);
    let img = &raw.pixels[i * h * w * c..(i + 1) * h * w * c];
    let mut planes: Vec<Vec<f32>> = Vec::with_capacity(c);
    for ch in 0..c {
        let plane: Vec<f32> = (0..h * w).map(|p| img[p * c + ch]).collect();
        let resized = if h == SIDE && w == SIDE {
            plane
        } else {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
                ImageBuffer::from_raw(w as u32, h as u32, plane).expect("plane size");
            imageops::resize(&buf, SIDE as u32, SIDE as u32, FilterType::Triangle).into_raw()
        };
        planes.push(resized);
    }
    let mut out = Vec::with_capacity(out_channels * SIDE * SIDE);
    for ch in 0..out_channels {
        let src = &planes[if c == 1 { 0 } else { ch }];
        out.extend(src.iter().map(|&v| v.clamp(0.0, 1.0) * 2.0 - 1.0));
    }
    out
}

/// Loads one split of a digit dataset as unmasked samples of the given domain.
pub fn load_digits(spec: &DatasetSpec, data_dir: &Path, domain: Domain) -> Result<Dataset> {
    if !spec.name.is_digits() {
        return config(format!("`{}` is not a digit dataset", spec.name.as_str()));
    }
    let raw = read_raw(spec.name, spec.split, data_dir)?;
    if let Some(expected) = expected_split_size(spec.name, spec.split) {
        if raw.count != expected {
            log::warn!(
                "{} {} has {} samples, the standard split has {expected}",
                spec.name.as_str(),
                spec.split.as_str(),
                raw.count
            );
        }
    }
    let native = raw.channels;
    let channels = spec.channels.unwrap_or(native);
    if channels != native && !(native == 1 && channels == 3) {
        return config(format!("cannot map {native} channels to {channels}"));
    }
    if let Some(&bad) = raw.labels.iter().find(|&&y| y >= 10) {
        return config(format!("digit label {bad} out of range"));
    }
    let mut indices: Vec<usize> = (0..raw.count).collect();
    if let Some(n) = spec.subsample {
        let labels: Vec<Option<usize>> = raw.labels.iter().map(|&y| Some(y)).collect();
        indices = stratified_subsample(&labels, n, spec.seed)?;
    }
    let rows = indices
        .iter()
        .map(|&i| (to_canonical(&raw, i, channels), Some(raw.labels[i])))
        .collect();
    Dataset::from_full(
        spec.name.as_str(),
        InputLayout::Image(ImageShape::new(channels, SIDE, SIDE)),
        10,
        domain,
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx(path: &Path, dims: &[u32], data: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&[0, 0, 8, dims.len() as u8]).unwrap();
        for d in dims {
            f.write_all(&d.to_be_bytes()).unwrap();
        }
        f.write_all(data).unwrap();
    }

    fn fake_mnist(root: &Path, n: usize) {
        let dir = root.join("mnist");
        std::fs::create_dir_all(&dir).unwrap();
        let pixels: Vec<u8> = (0..n * 28 * 28).map(|i| (i % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        write_idx(&dir.join("train-images-idx3-ubyte"), &[n as u32, 28, 28], &pixels);
        write_idx(&dir.join("train-labels-idx1-ubyte"), &[n as u32], &labels);
    }

    #[test]
    fn loads_resizes_normalises_and_triplicates() {
        let tmp = tempfile::tempdir().unwrap();
        fake_mnist(tmp.path(), 30);
        let mut spec = DatasetSpec::new(DatasetName::Mnist, Split::Train);
        spec.channels = Some(3);
        let ds = load_digits(&spec, tmp.path(), Domain::Source).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.layout, InputLayout::Image(ImageShape::new(3, 32, 32)));
        for s in &ds.samples {
            assert!(s.x1.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(s.x1[..1024], s.x1[1024..2048]);
            assert_eq!(s.x1[..1024], s.x1[2048..]);
        }
    }

    #[test]
    fn subsample_is_deterministic() {
        let tmp = tempfile::tempdir().unwrap();
        fake_mnist(tmp.path(), 200);
        let mut spec = DatasetSpec::new(DatasetName::Mnist, Split::Train);
        spec.subsample = Some(50);
        let a = load_digits(&spec, tmp.path(), Domain::Source).unwrap();
        let b = load_digits(&spec, tmp.path(), Domain::Source).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.len(), 50);
        assert_eq!(a.class_counts(), vec![5; 10]);
    }

    #[test]
    fn missing_files_are_fetch_errors() {
        let tmp = tempfile::tempdir().unwrap();
        for name in [DatasetName::Mnist, DatasetName::Usps, DatasetName::Svhn] {
            let spec = DatasetSpec::new(name, Split::Test);
            assert!(matches!(
                load_digits(&spec, tmp.path(), Domain::Target),
                Err(Error::Fetch { .. })
            ));
        }
    }

    #[test]
    fn non_digit_name_is_config_error() {
        let spec = DatasetSpec::new(DatasetName::Synthetic, Split::Train);
        assert!(matches!(
            load_digits(&spec, Path::new("."), Domain::Source),
            Err(Error::Config(_))
        ));
        assert!("cifar".parse::<DatasetName>().is_err());
    }

    #[test]
    fn usps_libsvm_is_parsed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("usps");
        std::fs::create_dir_all(&dir).unwrap();
        let mut f = File::create(dir.join("usps.t")).unwrap();
        writeln!(f, "3 1:-1 2:1 256:0.5").unwrap();
        writeln!(f, "10 5:0.25").unwrap();
        drop(f);
        let ds = load_digits(&DatasetSpec::new(DatasetName::Usps, Split::Test), tmp.path(), Domain::Source).unwrap();
        assert_eq!(ds.labels(), vec![Some(2), Some(9)]);
        assert_eq!(ds.layout.len(), 1024);
    }

    #[test]
    fn standard_split_sizes() {
        assert_eq!(expected_split_size(DatasetName::Mnist, Split::Train), Some(60_000));
        assert_eq!(expected_split_size(DatasetName::Usps, Split::Test), Some(1_860));
    }

    /// Runs against real files when `DATA_DIR` points at a populated cache.
    #[test]
    fn real_split_sizes_when_available() {
        let root = resolve_data_dir(None);
        for (name, split) in [(DatasetName::Mnist, Split::Train), (DatasetName::Usps, Split::Test)] {
            match read_raw(name, split, &root) {
                Ok(raw) => assert_eq!(Some(raw.count), expected_split_size(name, split)),
                Err(e) => eprintln!("skipping {}: {e}", name.as_str()),
            }
        }
    }
}
