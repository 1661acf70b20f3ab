//! Frame sources: KITTI-style sequence directories, generic directories of
//! cloud files with a pose table, and in-memory synthetic sequences.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::GroundTruthPose;
use crate::pointcloud::{self, PointCloud};
use crate::synth::Sequence;

/// Anything that yields numbered scans, optionally with ground truth.
pub trait FrameSource: Sync {
    /// Frame ids in acquisition order.
    fn ids(&self) -> Vec<u64>;
    fn load(&self, id: u64) -> Result<PointCloud>;
    fn poses(&self) -> Option<&[GroundTruthPose]>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Kitti,
    Generic,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti" => Ok(Format::Kitti),
            "generic" => Ok(Format::Generic),
            _ => Err(Error::param("format", format!("expected kitti or generic, got {s:?}"))),
        }
    }
}

const IDENTITY_3X4: [f64; 12] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];

/// A directory of scans on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    frames: Vec<(u64, PathBuf)>,
    poses: Option<Vec<GroundTruthPose>>,
}

fn numeric_stem(p: &Path) -> Option<u64> {
    p.file_stem()?.to_str()?.parse().ok()
}

fn list_clouds(dir: &Path, extensions: &[&str]) -> Result<Vec<(u64, PathBuf)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| extensions.contains(&e))
                && p.file_stem().and_then(|s| s.to_str()) != Some("poses")
        })
        .collect();
    files.sort();
    let all_numeric = files.iter().all(|p| numeric_stem(p).is_some());
    let mut frames: Vec<(u64, PathBuf)> = files
        .into_iter()
        .enumerate()
        .map(|(i, p)| (if all_numeric { numeric_stem(&p).unwrap() } else { i as u64 }, p))
        .collect();
    frames.sort_by_key(|f| f.0);
    if frames.windows(2).any(|w| w[0].0 == w[1].0) {
        let dup = frames.windows(2).find(|w| w[0].0 == w[1].0).unwrap()[0].0;
        return Err(Error::DuplicateId(dup));
    }
    Ok(frames)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_numbers(line: &str) -> Option<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().ok())
        .collect()
}

/// Parses a pose table. Rows are either `frame,x,y,z,yaw` (yaw in radians,
/// commas or whitespace) or twelve numbers of a row-major 3x4 matrix, in
/// which case the frame id is the row number. A leading header line and
/// `#` comments are skipped.
pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<GroundTruthPose>> {
    let mut poses = Vec::new();
    let mut row = 0u64;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let Some(v) = parse_numbers(line) else {
            if poses.is_empty() {
                continue;
            }
            return Err(err(format!("non-numeric field in {line:?}")));
        };
        let pose = match v.len() {
            5 => {
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(err(format!("bad frame id {}", v[0])));
                }
                GroundTruthPose::from_xyz_yaw(v[0] as u64, v[1], v[2], v[3], v[4])
            }
            12 => {
                let m: [f64; 12] = v.try_into().unwrap();
                GroundTruthPose::from_3x4(row, &m)
            }
            k => return Err(err(format!("expected 5 or 12 fields, found {k}"))),
        };
        if pose.position.iter().any(|x| !x.is_finite()) {
            return Err(err("non-finite value".into()));
        }
        if let Some(last) = poses.last() {
            let last: &GroundTruthPose = last;
            if pose.id <= last.id {
                return Err(err(format!("frame id {} is not increasing", pose.id)));
            }
        }
        poses.push(pose);
        row += 1;
    }
    Ok(poses)
}

/// Reads the `Tr` line of a KITTI `calib.txt`.
pub fn parse_kitti_calib(text: &str, path: &Path) -> Result<[f64; 12]> {
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            let v = parse_numbers(rest.trim()).filter(|v| v.len() == 12).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: "Tr needs 12 numbers".into(),
            })?;
            return Ok(v.try_into().unwrap());
        }
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "no Tr entry".into(),
    })
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>, format: Format) -> Result<Self> {
        match format {
            Format::Kitti => Self::open_kitti(root.as_ref()),
            Format::Generic => Self::open_generic(root.as_ref()),
        }
    }

    /// `root/velodyne/*.bin`, `root/calib.txt` and the pose file at
    /// `root/poses.txt` or `root/../../poses/<sequence>.txt`. Poses are
    /// converted from the camera to the LiDAR frame through `Tr`.
    pub fn open_kitti(root: &Path) -> Result<Self> {
        let frames = list_clouds(&root.join("velodyne"), &["bin"])?;
        let calib_path = root.join("calib.txt");
        let tr = if calib_path.exists() {
            parse_kitti_calib(&read_text(&calib_path)?, &calib_path)?
        } else {
            IDENTITY_3X4
        };
        let mut candidates = vec![root.join("poses.txt")];
        if let (Some(name), Some(base)) = (root.file_name(), root.parent().and_then(Path::parent)) {
            let mut file = name.to_os_string();
            file.push(".txt");
            candidates.push(base.join("poses").join(file));
        }
        let poses = match candidates.into_iter().find(|p| p.exists()) {
            Some(p) => Some(
                parse_poses(&read_text(&p)?, &p)?
                    .into_iter()
                    .map(|pose| pose.compose(&tr))
                    .collect(),
            ),
            None => None,
        };
        Ok(Self {
            root: root.to_path_buf(),
            frames,
            poses,
        })
    }

    /// Cloud files (`.bin`, `.txt`, `.xyz`, `.asc`) plus an optional
    /// `poses.csv` or `poses.txt`.
    pub fn open_generic(root: &Path) -> Result<Self> {
        let frames = list_clouds(root, &["bin", "txt", "xyz", "asc"])?;
        let poses = match ["poses.csv", "poses.txt"].iter().map(|n| root.join(n)).find(|p| p.exists()) {
            Some(p) => Some(parse_poses(&read_text(&p)?, &p)?),
            None => None,
        };
        Ok(Self {
            root: root.to_path_buf(),
            frames,
            poses,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn path(&self, id: u64) -> Option<&Path> {
        self.frames
            .binary_search_by_key(&id, |f| f.0)
            .ok()
            .map(|i| self.frames[i].1.as_path())
    }
}

impl FrameSource for Dataset {
    fn ids(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.0).collect()
    }

    fn load(&self, id: u64) -> Result<PointCloud> {
        let path = self.path(id).ok_or(Error::UnknownId(id))?;
        Ok(pointcloud::load_cloud(path)?.cloud.with_frame_id(id))
    }

    fn poses(&self) -> Option<&[GroundTruthPose]> {
        self.poses.as_deref()
    }
}

impl FrameSource for Sequence {
    fn ids(&self) -> Vec<u64> {
        self.clouds.iter().map(|c| c.frame_id).collect()
    }

    fn load(&self, id: u64) -> Result<PointCloud> {
        self.clouds
            .iter()
            .find(|c| c.frame_id == id)
            .cloned()
            .ok_or(Error::UnknownId(id))
    }

    fn poses(&self) -> Option<&[GroundTruthPose]> {
        Some(&self.poses)
    }
}
