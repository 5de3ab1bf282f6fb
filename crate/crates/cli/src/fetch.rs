//! Dataset download into the cache directory. `file://` URLs are accepted so
//! mirrors and offline copies work the same way as HTTPS.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use logictree::data::{CIFAR_TEST_FILE, CIFAR_TRAIN_FILES, MNIST_FILES};
use logictree::Dataset;

use crate::error::CliError;

pub const MNIST_BASE: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";
pub const CIFAR_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";

fn open(url: &str) -> Result<Box<dyn Read>, CliError> {
    if let Some(path) = url.strip_prefix("file://") {
        let f = std::fs::File::open(path).map_err(CliError::io(path))?;
        return Ok(Box::new(f));
    }
    let resp = ureq::get(url).call().map_err(|e| CliError::Fetch(format!("{url}: {e}")))?;
    Ok(Box::new(resp.into_body().into_reader()))
}

fn join_url(base: &str, file: &str) -> String {
    if base.ends_with('/') {
        format!("{base}{file}")
    } else {
        format!("{base}/{file}")
    }
}

/// Downloads `dataset` below `root`; returns the files written. Existing
/// files are kept.
pub fn fetch(dataset: Dataset, root: &Path, url: Option<&str>) -> Result<Vec<PathBuf>, CliError> {
    match dataset {
        Dataset::Mnist => {
            let dir = root.join("mnist");
            std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
            let base = url.unwrap_or(MNIST_BASE);
            let mut written = Vec::new();
            for name in MNIST_FILES {
                let dest = dir.join(name);
                if !dest.exists() {
                    let mut gz = GzDecoder::new(open(&join_url(base, &format!("{name}.gz")))?);
                    let mut bytes = Vec::new();
                    gz.read_to_end(&mut bytes).map_err(|e| CliError::Fetch(format!("{name}.gz: {e}")))?;
                    std::fs::write(&dest, bytes).map_err(CliError::io(&dest))?;
                }
                written.push(dest);
            }
            Ok(written)
        }
        Dataset::Cifar10 => {
            let dir = root.join("cifar-10-batches-bin");
            let want: Vec<PathBuf> = CIFAR_TRAIN_FILES
                .iter()
                .chain(std::iter::once(&CIFAR_TEST_FILE))
                .map(|f| dir.join(f))
                .collect();
            if want.iter().all(|p| p.exists()) {
                return Ok(want);
            }
            std::fs::create_dir_all(root).map_err(CliError::io(root))?;
            let mut archive = tar::Archive::new(GzDecoder::new(open(url.unwrap_or(CIFAR_URL))?));
            archive.unpack(root).map_err(|e| CliError::Fetch(format!("unpacking archive: {e}")))?;
            match want.iter().find(|p| !p.exists()) {
                Some(p) => Err(CliError::Fetch(format!("archive did not contain {}", p.display()))),
                None => Ok(want),
            }
        }
        Dataset::Custom => Err(CliError::Config("nothing to fetch for a custom dataset".into())),
    }
}
