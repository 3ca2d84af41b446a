//! The filesystem operations the transactional apply performs, behind a
//! trait so tests can inject faults and record every write.

use std::fs::{File, OpenOptions, Permissions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub trait FsOps: Send + Sync {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>>;
    fn permissions(&self, path: &Path) -> io::Result<Permissions>;
    /// Creates or truncates `path`, writes `bytes` and syncs to disk.
    fn write_synced(&self, path: &Path, bytes: &[u8]) -> io::Result<()>;
    fn set_permissions(&self, path: &Path, perms: Permissions) -> io::Result<()>;
    fn rename(&self, from: &Path, to: &Path) -> io::Result<()>;
    fn hard_link(&self, original: &Path, link: &Path) -> io::Result<()>;
    fn remove_file(&self, path: &Path) -> io::Result<()>;
    fn create_dir_all(&self, path: &Path) -> io::Result<()>;
    fn remove_dir_all(&self, path: &Path) -> io::Result<()>;
    /// Creates `path` exclusively; `AlreadyExists` when present.
    fn create_new(&self, path: &Path, bytes: &[u8]) -> io::Result<()>;
    fn sync_dir(&self, path: &Path) -> io::Result<()>;
    fn exists(&self, path: &Path) -> bool;
    /// Whether names differing only in case collide in `dir`.
    fn case_insensitive(&self, dir: &Path) -> io::Result<bool>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RealFs;

impl FsOps for RealFs {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>> {
        std::fs::read(path)
    }

    fn permissions(&self, path: &Path) -> io::Result<Permissions> {
        Ok(std::fs::metadata(path)?.permissions())
    }

    fn write_synced(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let mut f = File::create(path)?;
        f.write_all(bytes)?;
        f.sync_all()
    }

    fn set_permissions(&self, path: &Path, perms: Permissions) -> io::Result<()> {
        std::fs::set_permissions(path, perms)
    }

    fn rename(&self, from: &Path, to: &Path) -> io::Result<()> {
        std::fs::rename(from, to)
    }

    fn hard_link(&self, original: &Path, link: &Path) -> io::Result<()> {
        std::fs::hard_link(original, link)
    }

    fn remove_file(&self, path: &Path) -> io::Result<()> {
        std::fs::remove_file(path)
    }

    fn create_dir_all(&self, path: &Path) -> io::Result<()> {
        std::fs::create_dir_all(path)
    }

    fn remove_dir_all(&self, path: &Path) -> io::Result<()> {
        std::fs::remove_dir_all(path)
    }

    fn create_new(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let mut f = OpenOptions::new().write(true).create_new(true).open(path)?;
        f.write_all(bytes)
    }

    fn sync_dir(&self, path: &Path) -> io::Result<()> {
        #[cfg(unix)]
        {
            File::open(path)?.sync_all()
        }
        #[cfg(not(unix))]
        {
            let _ = path;
            Ok(())
        }
    }

    fn exists(&self, path: &Path) -> bool {
        std::fs::symlink_metadata(path).is_ok()
    }

    fn case_insensitive(&self, dir: &Path) -> io::Result<bool> {
        let probe = dir.join(format!(".lanser-case-probe-{}", std::process::id()));
        File::create(&probe)?;
        let upper = dir.join(format!(".LANSER-CASE-PROBE-{}", std::process::id()));
        let collides = upper.exists();
        std::fs::remove_file(&probe)?;
        Ok(collides)
    }
}

/// Operations that change the filesystem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutOp {
    Write(PathBuf),
    SetPermissions(PathBuf),
    Rename(PathBuf, PathBuf),
    HardLink(PathBuf, PathBuf),
    Remove(PathBuf),
    CreateDir(PathBuf),
    RemoveDir(PathBuf),
    CreateNew(PathBuf),
}

impl MutOp {
    /// Paths the operation writes to (a rename writes its destination and
    /// unlinks its source).
    pub fn targets(&self) -> Vec<&Path> {
        match self {
            MutOp::Write(p)
            | MutOp::SetPermissions(p)
            | MutOp::Remove(p)
            | MutOp::CreateDir(p)
            | MutOp::RemoveDir(p)
            | MutOp::CreateNew(p) => {
                vec![p]
            }
            MutOp::Rename(a, b) => vec![a, b],
            MutOp::HardLink(_, b) => vec![b],
        }
    }
}

/// Test shim over [`RealFs`]: records every mutating operation, optionally
/// fails exactly the `fail_at`-th one (1-based), and can pretend the volume
/// is case-insensitive.
#[derive(Debug, Default)]
pub struct ShimFs {
    pub fail_at: Option<usize>,
    pub case_insensitive: bool,
    log: Mutex<Vec<MutOp>>,
}

impl ShimFs {
    pub fn new() -> Self {
        ShimFs::default()
    }

    pub fn case_insensitive() -> Self {
        ShimFs {
            case_insensitive: true,
            ..ShimFs::default()
        }
    }

    pub fn failing_at(n: usize) -> Self {
        ShimFs {
            fail_at: Some(n),
            ..ShimFs::default()
        }
    }

    pub fn ops(&self) -> Vec<MutOp> {
        self.log.lock().unwrap().clone()
    }

    fn gate(&self, op: MutOp) -> io::Result<()> {
        let mut log = self.log.lock().unwrap();
        log.push(op);
        if self.fail_at == Some(log.len()) {
            return Err(io::Error::other(format!("injected fault at step {}", log.len())));
        }
        Ok(())
    }
}

impl FsOps for ShimFs {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>> {
        RealFs.read(path)
    }

    fn permissions(&self, path: &Path) -> io::Result<Permissions> {
        RealFs.permissions(path)
    }

    fn write_synced(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        self.gate(MutOp::Write(path.into()))?;
        RealFs.write_synced(path, bytes)
    }

    fn set_permissions(&self, path: &Path, perms: Permissions) -> io::Result<()> {
        self.gate(MutOp::SetPermissions(path.into()))?;
        RealFs.set_permissions(path, perms)
    }

    fn rename(&self, from: &Path, to: &Path) -> io::Result<()> {
        self.gate(MutOp::Rename(from.into(), to.into()))?;
        RealFs.rename(from, to)
    }

    fn hard_link(&self, original: &Path, link: &Path) -> io::Result<()> {
        self.gate(MutOp::HardLink(original.into(), link.into()))?;
        RealFs.hard_link(original, link)
    }

    fn remove_file(&self, path: &Path) -> io::Result<()> {
        self.gate(MutOp::Remove(path.into()))?;
        RealFs.remove_file(path)
    }

    fn create_dir_all(&self, path: &Path) -> io::Result<()> {
        self.gate(MutOp::CreateDir(path.into()))?;
        RealFs.create_dir_all(path)
    }

    fn remove_dir_all(&self, path: &Path) -> io::Result<()> {
        self.gate(MutOp::RemoveDir(path.into()))?;
        RealFs.remove_dir_all(path)
    }

    fn create_new(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        self.gate(MutOp::CreateNew(path.into()))?;
        RealFs.create_new(path, bytes)
    }

    fn sync_dir(&self, path: &Path) -> io::Result<()> {
        RealFs.sync_dir(path)
    }

    fn exists(&self, path: &Path) -> bool {
        RealFs.exists(path)
    }

    fn case_insensitive(&self, dir: &Path) -> io::Result<bool> {
        if self.case_insensitive {
            Ok(true)
        } else {
            RealFs.case_insensitive(dir)
        }
    }
}
