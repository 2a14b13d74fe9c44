use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rseg;
use super::stats::{compute_class_weights, count_labels, NormStats, Range};
use crate::error::{Error, Result};
use crate::radar::{derive_seed, simulate_sequence, ObjectClass, RadarParams, Scenario, ViewFrame, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

/// Which segmentation view a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Rd,
    Ra,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequenceInfo {
    pub split: Split,
    /// Directory name, `seq_NNN`.
    pub id: String,
    pub frames: usize,
}

/// Everything recorded in `meta.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub n_range: usize,
    pub n_angle: usize,
    pub n_doppler: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub sequences: Vec<SequenceInfo>,
    /// Train-split statistics.
    pub stats: NormStats,
    /// Train-split label histograms of the RD and RA masks.
    pub rd_counts: Vec<u64>,
    pub ra_counts: Vec<u64>,
}

/// Frame budget of a simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub params: RadarParams,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    /// Frames per sequence (the last sequence of a split may be shorter).
    pub sequence_len: usize,
    /// Upper bound on objects per random sequence.
    pub max_objects: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Splits `frames` 70/15/15 into train/val/test.
    pub fn with_total(params: RadarParams, frames: usize, seed: u64) -> Self {
        let val = frames * 15 / 100;
        let test = frames * 15 / 100;
        SimConfig {
            params,
            train_frames: frames - val - test,
            val_frames: val,
            test_frames: test,
            sequence_len: 20,
            max_objects: 2,
            seed,
        }
    }

    fn frames(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_frames,
            Split::Val => self.val_frames,
            Split::Test => self.test_frames,
        }
    }
}

pub fn frame_path(dir: &Path, t: usize, ext: &str) -> PathBuf {
    dir.join(format!("frame_{t:04}.{ext}.rseg"))
}

/// Simulates every split, writes it under `root` and returns the index.
///
/// The first sequence of each split holds one object of every class, so
/// every class occurs in the training labels.
pub fn simulate_dataset(root: &Path, cfg: &SimConfig) -> Result<DatasetIndex> {
    cfg.params.validate()?;
    if cfg.train_frames == 0 {
        return Err(Error::Config("the train split needs at least one frame".into()));
    }
    if cfg.sequence_len == 0 {
        return Err(Error::Config("sequence_len must be positive".into()));
    }
    let p = &cfg.params;
    let mut sequences = Vec::new();
    let mut train_frames = Vec::new();
    let mut seq_no = 0usize;
    for (split_no, split) in Split::ALL.into_iter().enumerate() {
        let mut remaining = cfg.frames(split);
        let mut first = true;
        while remaining > 0 {
            let n = remaining.min(cfg.sequence_len);
            remaining -= n;
            let seq_seed = derive_seed(cfg.seed, (split_no * 1_000_000 + seq_no) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seq_seed);
            let scenario = if first {
                Scenario::random_with_classes(p, &ObjectClass::ALL, n, &mut rng)
            } else {
                Scenario::random(p, cfg.max_objects, n, &mut rng)
            };
            first = false;
            let frames = simulate_sequence(p, &scenario, n, seq_seed)?;
            let id = format!("seq_{seq_no:03}");
            let dir = root.join(split.name()).join(&id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for f in &frames {
                write_frame(&dir, f)?;
            }
            log::info!("{split}/{id}: {n} frames, {} objects", scenario.objects.len());
            sequences.push(SequenceInfo { split, id, frames: n });
            if split == Split::Train {
                train_frames.extend(frames);
            }
            seq_no += 1;
        }
    }
    let mut rd_counts = vec![0u64; NUM_CLASSES];
    let mut ra_counts = vec![0u64; NUM_CLASSES];
    for f in &train_frames {
        count_labels(&f.rd_mask, &mut rd_counts)?;
        count_labels(&f.ra_mask, &mut ra_counts)?;
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        n_range: p.n_range,
        n_angle: p.n_angle,
        n_doppler: p.n_doppler,
        n_classes: NUM_CLASSES,
        seed: cfg.seed,
        sequences,
        stats: NormStats::from_frames(&train_frames),
        rd_counts,
        ra_counts,
    };
    index.save_meta()?;
    Ok(index)
}

pub fn write_frame(dir: &Path, f: &ViewFrame) -> Result<()> {
    let t = f.timestamp;
    rseg::save(&frame_path(dir, t, "rd"), &f.rd)?;
    rseg::save(&frame_path(dir, t, "ra"), &f.ra)?;
    rseg::save(&frame_path(dir, t, "ad"), &f.ad)?;
    rseg::save(&frame_path(dir, t, "rdmask"), &f.rd_mask)?;
    rseg::save(&frame_path(dir, t, "ramask"), &f.ra_mask)
}

pub fn read_frame(dir: &Path, t: usize) -> Result<ViewFrame> {
    Ok(ViewFrame {
        rd: rseg::load(&frame_path(dir, t, "rd"))?,
        ra: rseg::load(&frame_path(dir, t, "ra"))?,
        ad: rseg::load(&frame_path(dir, t, "ad"))?,
        rd_mask: rseg::load(&frame_path(dir, t, "rdmask"))?,
        ra_mask: rseg::load(&frame_path(dir, t, "ramask"))?,
        timestamp: t,
    })
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Parses `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value, got {line:?}", origin.display(), no + 1)))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("{}:{}: duplicate key {:?}", origin.display(), no + 1, k.trim())));
        }
    }
    Ok(map)
}

/// Typed access to a parsed `key=value` map.
pub struct KeyValues<'a> {
    pub map: &'a BTreeMap<String, String>,
    pub origin: &'a Path,
}

impl KeyValues<'_> {
    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .map
            .get(key)
            .ok_or_else(|| Error::Data(format!("{}: missing key {key:?}", self.origin.display())))?;
        raw.parse()
            .map_err(|_| Error::Data(format!("{}: cannot parse {key}={raw:?}", self.origin.display())))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw: String = self.get(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Data(format!("{}: bad list entry {s:?} in {key}", self.origin.display())))
            })
            .collect()
    }
}

impl DatasetIndex {
    pub fn meta_path(root: &Path) -> PathBuf {
        root.join("meta.txt")
    }

    pub fn save_meta(&self) -> Result<()> {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("format", "1".into());
        kv("n_classes", self.n_classes.to_string());
        kv("n_range", self.n_range.to_string());
        kv("n_angle", self.n_angle.to_string());
        kv("n_doppler", self.n_doppler.to_string());
        kv("seed", self.seed.to_string());
        for split in Split::ALL {
            let seqs: Vec<String> =
                self.sequences.iter().filter(|q| q.split == split).map(|q| format!("{}:{}", q.id, q.frames)).collect();
            kv(&format!("split.{split}"), seqs.join(","));
        }
        for (name, r) in [("rd", self.stats.rd), ("ra", self.stats.ra), ("ad", self.stats.ad)] {
            kv(&format!("stats.{name}.min"), r.min.to_string());
            kv(&format!("stats.{name}.max"), r.max.to_string());
        }
        kv("counts.rd", join(&self.rd_counts));
        kv("counts.ra", join(&self.ra_counts));
        let path = Self::meta_path(&self.root);
        fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = Self::meta_path(root);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let map = parse_key_values(&text, &path)?;
        let kv = KeyValues { map: &map, origin: &path };
        let format: u32 = kv.get("format")?;
        if format != 1 {
            return Err(Error::Data(format!("{}: unsupported dataset format {format}", path.display())));
        }
        let mut sequences = Vec::new();
        for split in Split::ALL {
            for entry in kv.list::<String>(&format!("split.{split}"))? {
                let (id, n) = entry
                    .split_once(':')
                    .ok_or_else(|| Error::Data(format!("{}: bad sequence entry {entry:?}", path.display())))?;
                let frames =
                    n.parse().map_err(|_| Error::Data(format!("{}: bad frame count in {entry:?}", path.display())))?;
                sequences.push(SequenceInfo { split, id: id.to_string(), frames });
            }
        }
        let range = |view: &str| -> Result<Range> {
            Ok(Range { min: kv.get(&format!("stats.{view}.min"))?, max: kv.get(&format!("stats.{view}.max"))? })
        };
        let index = DatasetIndex {
            root: root.to_path_buf(),
            n_range: kv.get("n_range")?,
            n_angle: kv.get("n_angle")?,
            n_doppler: kv.get("n_doppler")?,
            n_classes: kv.get("n_classes")?,
            seed: kv.get("seed")?,
            sequences,
            stats: NormStats { rd: range("rd")?, ra: range("ra")?, ad: range("ad")? },
            rd_counts: kv.list("counts.rd")?,
            ra_counts: kv.list("counts.ra")?,
        };
        for counts in [&index.rd_counts, &index.ra_counts] {
            if counts.len() != index.n_classes {
                return Err(Error::Data(format!(
                    "{}: {} class counts for {} classes",
                    path.display(),
                    counts.len(),
                    index.n_classes
                )));
            }
        }
        Ok(index)
    }

    pub fn sequences_in(&self, split: Split) -> impl Iterator<Item = &SequenceInfo> {
        self.sequences.iter().filter(move |s| s.split == split)
    }

    pub fn sequence_dir(&self, seq: &SequenceInfo) -> PathBuf {
        self.root.join(seq.split.name()).join(&seq.id)
    }

    /// Reads every frame of every sequence in `split`, checking extents.
    pub fn load_split(&self, split: Split) -> Result<Vec<Vec<ViewFrame>>> {
        self.sequences_in(split)
            .map(|seq| {
                let dir = self.sequence_dir(seq);
                (0..seq.frames)
                    .map(|t| {
                        let f = read_frame(&dir, t)?;
                        self.check_extents(&f, &dir)?;
                        Ok(f)
                    })
                    .collect()
            })
            .collect()
    }

    fn check_extents(&self, f: &ViewFrame, dir: &Path) -> Result<()> {
        let want = [
            ("rd", [self.n_range, self.n_doppler], f.rd.shape()),
            ("ra", [self.n_range, self.n_angle], f.ra.shape()),
            ("ad", [self.n_angle, self.n_doppler], f.ad.shape()),
            ("rdmask", [self.n_range, self.n_doppler], f.rd_mask.shape()),
            ("ramask", [self.n_range, self.n_angle], f.ra_mask.shape()),
        ];
        for (name, expected, got) in want {
            if got != expected {
                return Err(Error::Data(format!(
                    "{}/frame_{:04}.{name}: extents {got:?}, dataset declares {expected:?}",
                    dir.display(),
                    f.timestamp
                )));
            }
        }
        Ok(())
    }

    /// Normalized wCE weights of one view.
    pub fn class_weights(&self, view: View) -> Result<Vec<f64>> {
        compute_class_weights(match view {
            View::Rd => &self.rd_counts,
            View::Ra => &self.ra_counts,
        })
    }
}
