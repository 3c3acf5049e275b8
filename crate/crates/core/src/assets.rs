//! Per-project image storage. Blocks hold [`AssetRef`]s relative to the
//! project directory; the bytes live under `<project>/assets/`.

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use crate::model::AssetRef;

pub const ASSET_DIR: &str = "assets";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetStore {
    root: PathBuf,
}

impl AssetStore {
    /// `root` is the project directory.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self) -> PathBuf {
        self.root.join(ASSET_DIR)
    }

    /// Rejects anything that is not a plain file name under `assets/`.
    pub fn is_well_formed(asset: &AssetRef) -> bool {
        let path = Path::new(asset.as_str());
        let mut comps = path.components();
        matches!(comps.next(), Some(Component::Normal(d)) if d == ASSET_DIR)
            && matches!(comps.next(), Some(Component::Normal(_)))
            && comps.next().is_none()
    }

    pub fn path(&self, asset: &AssetRef) -> Option<PathBuf> {
        Self::is_well_formed(asset).then(|| self.root.join(asset.as_str()))
    }

    pub fn exists(&self, asset: &AssetRef) -> bool {
        self.path(asset).is_some_and(|p| p.is_file())
    }

    pub fn read(&self, asset: &AssetRef) -> io::Result<Vec<u8>> {
        let path = self.path(asset).ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidInput, format!("bad asset ref `{asset}`"))
        })?;
        fs::read(path)
    }

    /// Writes `bytes` as `assets/<file_name>`. The write goes through a
    /// temporary file so concurrent writers of the same name never expose a
    /// partial file.
    pub fn write(&self, file_name: &str, bytes: &[u8]) -> io::Result<AssetRef> {
        let asset = AssetRef::new(format!("{ASSET_DIR}/{file_name}"));
        if !Self::is_well_formed(&asset) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("bad asset file name `{file_name}`"),
            ));
        }
        let dir = self.dir();
        fs::create_dir_all(&dir)?;
        let target = self.root.join(asset.as_str());
        let tmp = tempfile_path(&dir, file_name);
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &target)?;
        Ok(asset)
    }

    /// Copies every asset in `assets` from this store into `other`.
    pub fn copy_into<'a>(
        &self,
        other: &AssetStore,
        assets: impl IntoIterator<Item = &'a AssetRef>,
    ) -> io::Result<()> {
        if other.root == self.root {
            return Ok(());
        }
        fs::create_dir_all(other.dir())?;
        for asset in assets {
            if let (Some(from), Some(to)) = (self.path(asset), other.path(asset)) {
                if from.is_file() {
                    fs::copy(from, to)?;
                }
            }
        }
        Ok(())
    }
}

fn tempfile_path(dir: &Path, file_name: &str) -> PathBuf {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    dir.join(format!(".{file_name}.{}.{n}.tmp", std::process::id()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_and_guard_paths() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        let a = store.write("x.png", b"abc").unwrap();
        assert_eq!(a.as_str(), "assets/x.png");
        assert!(store.exists(&a));
        assert_eq!(store.read(&a).unwrap(), b"abc");

        for bad in ["../etc/passwd", "assets/../x", "/abs", "assets", "other/x.png"] {
            assert!(!AssetStore::is_well_formed(&AssetRef::new(bad)), "{bad}");
        }
        assert!(store.write("../escape", b"").is_err());
        assert!(!store.exists(&AssetRef::new("assets/missing.png")));
    }

    #[test]
    fn copy_between_stores() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = AssetStore::new(a.path());
        let sb = AssetStore::new(b.path());
        let r = sa.write("img.png", b"123").unwrap();
        sa.copy_into(&sb, [&r]).unwrap();
        assert_eq!(sb.read(&r).unwrap(), b"123");
    }
}
