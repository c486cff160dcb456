//! Frame sources. File inputs are read on a separate thread that stays at
//! most [`PREFETCH`] frames ahead of the consumer.

use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

use ricodec::pointcloud::{load_point_cloud, CloudFormat, PointCloud};
use ricodec::prediction::Pose;
use ricodec::projection::ProjectionParams;
use ricodec::synthetic::{Scene, SceneConfig};

use crate::error::{CliError, Result};

/// Frames decoded ahead of the encoder.
pub const PREFETCH: usize = 4;

#[derive(Clone, Debug)]
pub struct Frame {
    pub index: usize,
    pub name: String,
    pub cloud: PointCloud,
    /// Records dropped while loading.
    pub rejected: usize,
    /// Exact relative pose, known for synthetic frames.
    pub truth: Option<Pose>,
}

#[derive(Clone, Debug)]
pub enum Input {
    Files(Vec<PathBuf>),
    Synthetic { frames: usize, scene: SceneConfig },
}

impl Input {
    /// A directory, a glob pattern or a single file.
    pub fn from_pattern(pattern: &str) -> Result<Self> {
        resolve_paths(pattern).map(Input::Files)
    }

    pub fn synthetic(frames: usize, seed: u64, params: ProjectionParams) -> Self {
        Input::Synthetic {
            frames,
            scene: SceneConfig {
                params,
                seed,
                ..SceneConfig::default()
            },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Input::Files(p) => p.len(),
            Input::Synthetic { frames, .. } => *frames,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Streams frames in order through a bounded handoff.
    pub fn stream(&self) -> FrameStream {
        let (tx, rx) = sync_channel(PREFETCH);
        let input = self.clone();
        let worker = std::thread::spawn(move || match input {
            Input::Files(paths) => {
                for (index, path) in paths.iter().enumerate() {
                    if tx.send(read_frame(index, path)).is_err() {
                        return;
                    }
                }
            }
            Input::Synthetic { frames, scene } => {
                let scene = Scene::new(scene);
                for index in 0..frames {
                    let frame = Frame {
                        index,
                        name: format!("synthetic_{index:06}"),
                        cloud: scene.frame(index),
                        rejected: 0,
                        truth: Some(scene.relative_pose(index)),
                    };
                    if tx.send(Ok(frame)).is_err() {
                        return;
                    }
                }
            }
        });
        FrameStream {
            rx,
            worker: Some(worker),
        }
    }

    pub fn load_all(&self) -> Result<Vec<Frame>> {
        self.stream().collect()
    }
}

pub struct FrameStream {
    rx: Receiver<Result<Frame>>,
    worker: Option<JoinHandle<()>>,
}

impl Iterator for FrameStream {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(f) => Some(f),
            Err(_) => {
                if let Some(w) = self.worker.take() {
                    if w.join().is_err() {
                        return Some(Err(CliError::config("frame reader panicked")));
                    }
                }
                None
            }
        }
    }
}

fn format_of(path: &Path) -> Option<CloudFormat> {
    path.extension().and_then(|e| e.to_str()).and_then(CloudFormat::from_extension)
}

pub fn read_frame(index: usize, path: &Path) -> Result<Frame> {
    let format = format_of(path).ok_or_else(|| ricodec::Error::UnknownFormat(path.display().to_string()))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::file(path, e))?;
    let loaded = load_point_cloud(&bytes, format)?;
    Ok(Frame {
        index,
        name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        cloud: loaded.cloud,
        rejected: loaded.rejected,
        truth: None,
    })
}

/// Point cloud files named by `pattern`, sorted by path.
pub fn resolve_paths(pattern: &str) -> Result<Vec<PathBuf>> {
    let p = Path::new(pattern);
    let mut paths: Vec<PathBuf> = if p.is_dir() {
        std::fs::read_dir(p)
            .map_err(|e| CliError::file(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && format_of(p).is_some())
            .collect()
    } else if p.is_file() {
        vec![p.to_path_buf()]
    } else {
        glob::glob(pattern)
            .map_err(|e| CliError::Pattern(e.to_string()))?
            .filter_map(|r| r.ok())
            .filter(|p| p.is_file() && format_of(p).is_some())
            .collect()
    };
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::NoInput(pattern.to_string()));
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ricodec::pointcloud::write_kitti_bin;

    #[test]
    fn directory_and_glob_resolve_sorted() {
        let dir = std::env::temp_dir().join(format!("ricodec-input-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cloud = PointCloud::new(vec![[1.0, 2.0, 0.5], [4.0, -1.0, 0.0]]);
        for name in ["b.bin", "a.bin"] {
            std::fs::write(dir.join(name), write_kitti_bin(&cloud)).unwrap();
        }
        std::fs::write(dir.join("notes.txt"), "x").unwrap();
        let paths = resolve_paths(dir.to_str().unwrap()).unwrap();
        assert_eq!(paths, vec![dir.join("a.bin"), dir.join("b.bin")]);
        let globbed = resolve_paths(dir.join("*.bin").to_str().unwrap()).unwrap();
        assert_eq!(globbed, paths);
        let frames = Input::Files(paths).load_all().unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].cloud.len(), 2);
        assert!(matches!(resolve_paths(dir.join("*.pcd").to_str().unwrap()), Err(CliError::NoInput(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn synthetic_stream_is_ordered() {
        let params = ProjectionParams::new(16, 256, -24.8, 2.0, 120.0).unwrap();
        let frames = Input::synthetic(6, 1, params).load_all().unwrap();
        assert_eq!(frames.iter().map(|f| f.index).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        assert!(frames.iter().all(|f| f.truth.is_some()));
    }
}
