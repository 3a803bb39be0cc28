//! Run directories: `<out>/<run-id>/{run.json, ckpt/, samples/, reports/, figures/}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use rectiflow::benchmark::FIXED_TIMESTAMP;
use rectiflow::{Error, Result};
use serde::Serialize;

use crate::args::Common;
use crate::config::Setting;

pub const THREADS_ENV: &str = "RECTIFLOW_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Area {
    Root,
    Ckpt,
    Samples,
    Reports,
    Figures,
}

impl Area {
    fn dir(self) -> &'static str {
        match self {
            Area::Root => "",
            Area::Ckpt => "ckpt",
            Area::Samples => "samples",
            Area::Reports => "reports",
            Area::Figures => "figures",
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// UTC timestamp to the millisecond plus a short hash of the seed.
pub fn run_id(now: DateTime<Utc>, seed: u64) -> String {
    format!("{}-{:08x}", now.format("%Y%m%dT%H%M%S%.3fZ"), splitmix64(seed) >> 32)
}

/// A relative path made only of plain components.
fn contained(name: &Path) -> Result<&Path> {
    let plain = name.components().all(|c| matches!(c, Component::Normal(_)));
    if !plain || name.as_os_str().is_empty() {
        return Err(Error::config(format!(
            "artifact name {} must be a relative path inside the run directory",
            name.display()
        )));
    }
    Ok(name)
}

/// Worker threads: 1 in deterministic mode, else `RECTIFLOW_THREADS`
/// (0 means serial), else the available cores.
pub fn threads(deterministic: bool) -> Result<usize> {
    if deterministic {
        return Ok(1);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Error::config(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn timestamp(deterministic: bool) -> String {
    if deterministic {
        FIXED_TIMESTAMP.into()
    } else {
        Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: String,
    run_id: &'a str,
    threads: usize,
    settings: &'a BTreeMap<String, Setting>,
}

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
    id: String,
    pub threads: usize,
    pub deterministic: bool,
}

impl RunDir {
    /// Creates the run directory. A generated id that already exists gets a
    /// numeric suffix; an explicit `--run-id` is reused as is.
    pub fn create(common: &Common, now: DateTime<Utc>) -> Result<Self> {
        let threads = threads(common.deterministic)?;
        let id = match &common.run_id {
            Some(id) => {
                contained(Path::new(id))?;
                if Path::new(id).components().count() != 1 {
                    return Err(Error::config(format!("run id `{id}` must be a single path component")));
                }
                id.clone()
            }
            None => {
                let base = run_id(now, common.seed);
                let mut id = base.clone();
                let mut n = 1;
                while common.out.join(&id).exists() {
                    id = format!("{base}-{n}");
                    n += 1;
                }
                id
            }
        };
        let root = common.out.join(&id);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            id,
            threads,
            deterministic: common.deterministic,
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Directory of an area, created on demand.
    pub fn area(&self, area: Area) -> Result<PathBuf> {
        let dir = self.root.join(area.dir());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Path of a file inside an area; parent directories are created.
    pub fn artifact(&self, area: Area, name: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.area(area)?.join(contained(name.as_ref())?);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(path)
    }

    pub fn timestamp(&self) -> String {
        timestamp(self.deterministic)
    }

    pub fn write_record(&self, command: &[String], settings: &BTreeMap<String, Setting>) -> Result<()> {
        let record = RunRecord {
            command: command.join(" "),
            run_id: &self.id,
            threads: self.threads,
            settings,
        };
        let path = self.artifact(Area::Root, "run.json")?;
        let text = serde_json::to_string_pretty(&record)? + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn common(out: &Path, run_id: Option<&str>) -> Common {
        Common {
            config: None,
            out: out.to_path_buf(),
            run_id: run_id.map(String::from),
            seed: 3,
            deterministic: true,
        }
    }

    #[test]
    fn run_id_has_timestamp_and_seed_hash() {
        let t = Utc.with_ymd_and_hms(2024, 5, 6, 7, 8, 9).unwrap();
        let id = run_id(t, 0);
        assert!(id.starts_with("20240506T070809.000Z-"), "{id}");
        assert_eq!(id.len(), "20240506T070809.000Z-".len() + 8);
        assert_ne!(run_id(t, 0), run_id(t, 1));
    }

    #[test]
    fn generated_ids_do_not_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let a = RunDir::create(&common(tmp.path(), None), t).unwrap();
        let b = RunDir::create(&common(tmp.path(), None), t).unwrap();
        assert_ne!(a.path(), b.path());
        assert!(b.id().ends_with("-1"));
    }

    #[test]
    fn explicit_id_must_be_one_component() {
        let tmp = tempfile::tempdir().unwrap();
        let t = Utc::now();
        assert!(RunDir::create(&common(tmp.path(), Some("a/b")), t).is_err());
        assert!(RunDir::create(&common(tmp.path(), Some("..")), t).is_err());
        assert!(RunDir::create(&common(tmp.path(), Some("ok")), t).is_ok());
    }

    proptest! {
        #[test]
        fn artifacts_stay_inside_the_run(name in "(\\.\\.|/|[a-z]{1,4}|\\.)(/(\\.\\.|[a-z]{1,4}|\\.))*") {
            let tmp = tempfile::tempdir().unwrap();
            let run = RunDir::create(&common(tmp.path(), Some("r")), Utc::now()).unwrap();
            if let Ok(p) = run.artifact(Area::Reports, &name) {
                prop_assert!(p.starts_with(run.path().join("reports")));
                prop_assert!(!name.split('/').any(|c| c == ".."));
            }
        }
    }
}
