//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.txt                 relative sample dirs, one per line
//! <root>/<split>/sample_00000/hr.flt  high-resolution reference, 0..65535
//! <root>/<split>/sample_00000/frame_<a>_<p>.flt   15 raw frames
//! <root>/<split>/sample_00000/meta.txt            key=value lines
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use super::noise::{apply_noise, NoiseConfig, INTENSITY_MAX};
use super::optics::{render_all, OpticsConfig};
use super::specimen::{gen_ground_truth, Style};
use super::{derive_seed, FRAMES_PER_SAMPLE};
use crate::error::{Error, Result};
use crate::tensor::{read_flt1_file, write_flt1_file, Real, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0000,
            Split::Test => 0x7465_7374_0000_0000,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

/// Everything that determines the bytes of a generated split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub samples: usize,
    pub split: Split,
    /// Low-resolution frame size; the reference is twice this.
    pub lr_height: usize,
    pub lr_width: usize,
    pub style: Style,
    pub optics: OpticsConfig,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            samples: 8,
            split: Split::Train,
            lr_height: 64,
            lr_width: 64,
            style: Style::Filaments,
            optics: OpticsConfig::default(),
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

/// One specimen: 15 raw frames (angle-major) and its 2x reference, both on
/// the 0..65535 intensity scale.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSample {
    pub frames: Vec<Tensor<f32>>,
    pub hr: Tensor<f32>,
    /// `key=value` metadata in file order.
    pub meta: Vec<(String, String)>,
}

impl SimSample {
    pub fn frame_name(angle: usize, phase: usize) -> String {
        format!("frame_{angle}_{phase}.flt")
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        if self.frames.len() != FRAMES_PER_SAMPLE {
            return Err(Error::Dataset(format!(
                "{}: expected {FRAMES_PER_SAMPLE} frames, found {}",
                origin.display(),
                self.frames.len()
            )));
        }
        let fs = self.frames[0].shape();
        let hs = self.hr.shape();
        if self.frames.iter().any(|f| f.shape() != fs) || hs.h != 2 * fs.h || hs.w != 2 * fs.w || fs.c != 1 {
            return Err(Error::Dataset(format!(
                "{}: frames {fs} and reference {hs} are not a 1-channel 2x pair",
                origin.display()
            )));
        }
        Ok(())
    }

    /// Generates sample `index` of `spec` in memory.
    pub fn generate(spec: &DatasetSpec, index: usize) -> Result<Self> {
        spec.optics.validate()?;
        spec.noise.validate()?;
        if spec.optics.frame_count() != FRAMES_PER_SAMPLE {
            return Err(Error::Config(format!(
                "optics yield {} frames per sample, the dataset format needs {FRAMES_PER_SAMPLE}",
                spec.optics.frame_count()
            )));
        }
        let seed = derive_seed(spec.seed ^ spec.split.salt(), index as u64);
        let gt = gen_ground_truth(derive_seed(seed, 0), 2 * spec.lr_height, 2 * spec.lr_width, spec.style)?;
        let clean = render_all(&gt, &spec.optics)?;
        let frames = clean
            .iter()
            .enumerate()
            .map(|(i, f)| Ok(apply_noise(f, &spec.noise, derive_seed(seed, 1 + i as u64))?.cast()))
            .collect::<Result<Vec<_>>>()?;
        let hr = gt.map(|v| v * INTENSITY_MAX).cast();
        let o = &spec.optics;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let meta = [
            ("index", index.to_string()),
            ("split", spec.split.to_string()),
            ("seed", seed.to_string()),
            ("style", spec.style.to_string()),
            ("lr_height", spec.lr_height.to_string()),
            ("lr_width", spec.lr_width.to_string()),
            ("regime", spec.noise.regime.to_string()),
            ("photon_scale", spec.noise.photon_scale.to_string()),
            ("read_sigma", spec.noise.read_sigma.to_string()),
            ("psf_sigma_lr", o.psf_sigma_lr.to_string()),
            ("pattern_freq", o.pattern_freq.to_string()),
            ("modulation", o.modulation.to_string()),
            ("angles", list(&o.angles)),
            ("phases", list(&o.phases)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Ok(SimSample { frames, hr, meta })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate(dir)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_flt1_file(&self.hr, dir.join("hr.flt"))?;
        let phases = FRAMES_PER_SAMPLE / 3;
        for (i, f) in self.frames.iter().enumerate() {
            write_flt1_file(f, dir.join(Self::frame_name(i / phases, i % phases)))?;
        }
        let mut text = String::new();
        for (k, v) in &self.meta {
            text.push_str(&format!("{k}={v}\n"));
        }
        let meta = dir.join("meta.txt");
        fs::write(&meta, text).map_err(|e| Error::io(meta, e))
    }

    /// Loads a sample directory. Frames are discovered by name and ordered
    /// angle-major; anything other than 15 of them is an error.
    pub fn load(dir: &Path) -> Result<Self> {
        let hr = read_flt1_file(dir.join("hr.flt"))?;
        let mut indexed = Vec::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::load(dir, e.to_string()))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::load(dir, e.to_string()))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".flt")) else {
                continue;
            };
            let parsed = stem
                .split_once('_')
                .and_then(|(a, p)| Some((a.parse::<usize>().ok()?, p.parse::<usize>().ok()?)));
            let Some(key) = parsed else {
                return Err(Error::Dataset(format!(
                    "unexpected frame file {}",
                    entry.path().display()
                )));
            };
            indexed.push((key, entry.path()));
        }
        indexed.sort();
        let frames = indexed
            .iter()
            .map(|(_, path)| read_flt1_file(path))
            .collect::<Result<Vec<_>>>()?;
        let meta_path = dir.join("meta.txt");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::load(&meta_path, e.to_string()))?;
        let meta = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::load(&meta_path, format!("malformed line {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let sample = SimSample { frames, hr, meta };
        sample.validate(dir)?;
        Ok(sample)
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.meta == other.meta
            && self.hr.bit_eq(&other.hr)
            && self.frames.len() == other.frames.len()
            && self.frames.iter().zip(&other.frames).all(|(a, b)| a.bit_eq(b))
    }
}

/// Maps `[0, 65535]` intensities to `[0, 1]`.
pub fn normalize<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let inv = T::from_f64(1.0 / INTENSITY_MAX);
    x.map(|v| v * inv)
}

/// Maps `[0, 1]` back to the intensity scale.
pub fn denormalize<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let k = T::from_f64(INTENSITY_MAX);
    x.map(|v| v * k)
}

/// Relative sample directories listed in a manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<String>,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
        let entries = text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect();
        Ok(Manifest { path, entries })
    }

    /// Rewrites the manifest from the sample directories present under
    /// `root`, sorted.
    fn rebuild(root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for split in [Split::Train, Split::Test] {
            let dir = root.join(split.as_str());
            if !dir.is_dir() {
                continue;
            }
            let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
            for entry in listing {
                let entry = entry.map_err(|e| Error::io(&dir, e))?;
                let name = entry.file_name().to_string_lossy().into_owned();
                if name.starts_with("sample_") && entry.path().is_dir() {
                    entries.push(format!("{}/{name}", split.as_str()));
                }
            }
        }
        entries.sort();
        let path = root.join(MANIFEST);
        let text: String = entries.iter().map(|e| format!("{e}\n")).collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(Manifest { path, entries })
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &str> {
        let prefix = format!("{}/", split.as_str());
        self.entries
            .iter()
            .filter(move |e| e.starts_with(&prefix))
            .map(String::as_str)
    }
}

/// Generates and writes one split under `root`, then refreshes the
/// manifest. Samples are generated in parallel; each depends only on
/// `(spec, index)`.
pub fn build_dataset(spec: &DatasetSpec, root: &Path) -> Result<Manifest> {
    let split_dir = root.join(spec.split.as_str());
    fs::create_dir_all(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    (0..spec.samples).into_par_iter().try_for_each(|i| {
        let sample = SimSample::generate(spec, i)?;
        sample.write(&split_dir.join(format!("sample_{i:05}")))
    })?;
    Manifest::rebuild(root)
}

/// A split loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub split: Split,
    pub names: Vec<String>,
    pub samples: Vec<SimSample>,
}

impl Dataset {
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let manifest = Manifest::read(root)?;
        let names: Vec<String> = manifest.split_entries(split).map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::Dataset(format!(
                "{} lists no {split} samples",
                manifest.path.display()
            )));
        }
        let samples = names
            .iter()
            .map(|n| SimSample::load(&root.join(n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            root: root.to_path_buf(),
            split,
            names,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Frame size shared by every sample.
    pub fn lr_size(&self) -> (usize, usize) {
        let s = self.samples[0].frames[0].shape();
        (s.h, s.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Regime;

    fn small_spec(split: Split) -> DatasetSpec {
        DatasetSpec {
            samples: 4,
            split,
            lr_height: 16,
            lr_width: 16,
            noise: NoiseConfig::for_regime(Regime::Low),
            seed: 7,
            ..DatasetSpec::default()
        }
    }

    fn file_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn layout_contract() {
        let tmp = tempfile::tempdir().unwrap();
        let m = build_dataset(&small_spec(Split::Train), tmp.path()).unwrap();
        assert_eq!(m.entries.len(), 4);
        for e in &m.entries {
            let files: Vec<_> = fs::read_dir(tmp.path().join(e)).unwrap().collect();
            assert_eq!(files.len(), 17);
            let flt = files
                .iter()
                .filter(|f| f.as_ref().unwrap().path().extension().is_some_and(|x| x == "flt"))
                .count();
            assert_eq!(flt, 16);
        }
        let text = fs::read_to_string(tmp.path().join(MANIFEST)).unwrap();
        assert_eq!(
            text,
            "train/sample_00000\ntrain/sample_00001\ntrain/sample_00002\ntrain/sample_00003\n"
        );
    }

    #[test]
    fn rebuild_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        build_dataset(&small_spec(Split::Test), a.path()).unwrap();
        build_dataset(&small_spec(Split::Test), b.path()).unwrap();
        assert_eq!(file_bytes(a.path()), file_bytes(b.path()));
    }

    #[test]
    fn load_round_trip_and_normalized_range() {
        let tmp = tempfile::tempdir().unwrap();
        let spec = small_spec(Split::Train);
        build_dataset(&spec, tmp.path()).unwrap();
        let ds = Dataset::load(tmp.path(), Split::Train).unwrap();
        assert_eq!(ds.len(), 4);
        let fresh = SimSample::generate(&spec, 2).unwrap();
        assert!(ds.samples[2].bit_eq(&fresh));
        for s in &ds.samples {
            for f in s.frames.iter().chain([&s.hr]) {
                let n = normalize(f);
                assert!(n.min_value() >= 0.0 && n.max_value() <= 1.0);
            }
        }
        assert!(Dataset::load(tmp.path(), Split::Test).is_err());
    }

    #[test]
    fn missing_frame_is_dataset_error() {
        let tmp = tempfile::tempdir().unwrap();
        build_dataset(&small_spec(Split::Train), tmp.path()).unwrap();
        let dir = tmp.path().join("train/sample_00001");
        fs::remove_file(dir.join(SimSample::frame_name(2, 4))).unwrap();
        assert!(matches!(SimSample::load(&dir), Err(Error::Dataset(_))));
    }

    #[test]
    fn corrupt_file_named_in_error() {
        let tmp = tempfile::tempdir().unwrap();
        build_dataset(&small_spec(Split::Train), tmp.path()).unwrap();
        let dir = tmp.path().join("train/sample_00000");
        fs::write(dir.join("hr.flt"), b"FLT1\0").unwrap();
        let msg = SimSample::load(&dir).unwrap_err().to_string();
        assert!(msg.contains("hr.flt"), "{msg}");
    }

    #[test]
    fn normalize_endpoints() {
        let t = Tensor::<f64>::from_vec(crate::tensor::Shape::new(1, 1, 1, 2), vec![0.0, 65535.0]).unwrap();
        assert_eq!(normalize(&t).data(), &[0.0, 1.0]);
        assert_eq!(normalize(&t.cast::<f32>()).data(), &[0.0, 1.0]);
    }
}
