use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::curve::{select_optimal, RDCurve, RDPoint, StrategyLabel};
use super::exec::{run_command, Template};
use super::quality::{FrameQuality, QualityMeter};
use super::LabelJobSpec;
use crate::config::Manifest;
use crate::error::LabelError;
use crate::filters::{Boundary, GaussianSpec, Preprocessor, UnsharpMask};
use crate::frame_io::{parse_y4m, write_y4m, PlanarVideo};

pub const LABELS_HEADER: [&str; 4] = ["video_id", "alpha_label", "quality_at_target", "target_kbps"];
pub const AUDIT_HEADER: [&str; 5] = ["video_id", "alpha", "nominal_kbps", "measured_kbps", "quality"];

const ENCODE_RECORD: &str = "encode.json";

/// `8 · bytes / (1000 · duration_secs)`.
pub fn measured_kbps(bytes: u64, duration_secs: f64) -> f64 {
    8.0 * bytes as f64 / (1000.0 * duration_secs)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabelError + '_ {
    move |source| LabelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub struct EncodeRequest<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    pub bitrate_kbps: f64,
    pub alpha: f64,
}

/// Produces one encoded file per request.
pub trait Encoder: Send + Sync {
    /// Stable description; part of the encode cache key.
    fn identity(&self) -> String;

    fn encode(&self, req: &EncodeRequest<'_>) -> Result<(), LabelError>;
}

/// External encoder driven by a command template.
#[derive(Debug, Clone)]
pub struct CommandEncoder {
    pub template: Template,
    pub timeout: Duration,
}

impl CommandEncoder {
    pub fn new(template: &str, timeout: Duration) -> Result<Self, LabelError> {
        Ok(CommandEncoder {
            template: Template::parse(template, &["input", "output", "bitrate_kbps"])?,
            timeout,
        })
    }
}

impl Encoder for CommandEncoder {
    fn identity(&self) -> String {
        self.template.source().to_string()
    }

    fn encode(&self, req: &EncodeRequest<'_>) -> Result<(), LabelError> {
        let argv = self.template.render(&[
            ("input", &req.input.to_string_lossy()),
            ("output", &req.output.to_string_lossy()),
            ("bitrate_kbps", &format!("{}", req.bitrate_kbps)),
            ("alpha", &format!("{}", req.alpha)),
        ]);
        run_command(&argv, self.timeout).map(drop)
    }
}

/// An encoded variant; `encoded` lives in the job's cache directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResult {
    pub alpha: f64,
    pub nominal_kbps: f64,
    pub measured_kbps: f64,
    pub bytes: u64,
    pub encoded: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct JobCounters {
    pub scheduled: usize,
    pub encoder_runs: usize,
    pub encode_cache_hits: usize,
    pub metric_runs: usize,
    pub quality_cache_hits: usize,
}

#[derive(Default)]
struct AtomicCounters {
    scheduled: AtomicUsize,
    encoder_runs: AtomicUsize,
    encode_cache_hits: AtomicUsize,
    metric_runs: AtomicUsize,
    quality_cache_hits: AtomicUsize,
}

impl AtomicCounters {
    fn bump(c: &AtomicUsize) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    fn snapshot(&self) -> JobCounters {
        JobCounters {
            scheduled: self.scheduled.load(Ordering::Relaxed),
            encoder_runs: self.encoder_runs.load(Ordering::Relaxed),
            encode_cache_hits: self.encode_cache_hits.load(Ordering::Relaxed),
            metric_runs: self.metric_runs.load(Ordering::Relaxed),
            quality_cache_hits: self.quality_cache_hits.load(Ordering::Relaxed),
        }
    }
}

/// A source video loaded once per labeling pass.
pub struct Source {
    pub path: PathBuf,
    pub digest: [u8; 32],
    pub video: PlanarVideo,
}

impl Source {
    pub fn load(path: &Path) -> Result<Self, LabelError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let video = parse_y4m(&bytes)?;
        if video.is_empty() {
            return Err(LabelError::Other(format!("{}: no frames", path.display())));
        }
        Ok(Source {
            path: path.to_path_buf(),
            digest: Sha256::digest(&bytes).into(),
            video,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoLabel {
    pub video_id: String,
    pub label: StrategyLabel,
    pub target_kbps: f64,
    /// Strategy-major, bitrates in spec order.
    pub points: Vec<RDPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    pub labeled: Vec<VideoLabel>,
    pub failures: Vec<VideoFailure>,
    pub counters: JobCounters,
}

/// Encoder, quality meter and cache for one labeling configuration.
pub struct Labeler {
    spec: LabelJobSpec,
    usm: UnsharpMask,
    encoder: Box<dyn Encoder>,
    meter: Box<dyn QualityMeter>,
    counters: AtomicCounters,
}

impl Labeler {
    /// Command-template encoder and frame metric from the spec.
    pub fn from_spec(spec: LabelJobSpec, usm: GaussianSpec) -> Result<Self, LabelError> {
        spec.validate()?;
        let timeout = Duration::from_secs(spec.timeout_secs);
        let encoder = CommandEncoder::new(&spec.encoder_cmd, timeout)?;
        let meter = FrameQuality::from_spec(&spec)?;
        Self::with_backends(spec, usm, Box::new(encoder), Box::new(meter))
    }

    pub fn with_backends(
        spec: LabelJobSpec,
        usm: GaussianSpec,
        encoder: Box<dyn Encoder>,
        meter: Box<dyn QualityMeter>,
    ) -> Result<Self, LabelError> {
        spec.validate()?;
        usm.validate()?;
        Ok(Labeler {
            spec,
            usm: UnsharpMask::new(usm),
            encoder,
            meter,
            counters: AtomicCounters::default(),
        })
    }

    pub fn spec(&self) -> &LabelJobSpec {
        &self.spec
    }

    pub fn counters(&self) -> JobCounters {
        self.counters.snapshot()
    }

    fn cache_root(&self) -> PathBuf {
        self.spec.workdir.join("cache")
    }

    fn staging_root(&self) -> Result<PathBuf, LabelError> {
        let p = self.spec.workdir.join("tmp");
        fs::create_dir_all(&p).map_err(io_err(&p))?;
        Ok(p)
    }

    fn encode_key(&self, src: &Source, alpha: f64, bitrate_kbps: f64) -> String {
        let g = self.usm.spec;
        let mut h = Sha256::new();
        h.update(b"hfprep-encode-v1\0");
        h.update(src.digest);
        h.update(alpha.to_bits().to_le_bytes());
        h.update(bitrate_kbps.to_bits().to_le_bytes());
        h.update(g.sigma.to_bits().to_le_bytes());
        h.update((g.ksize as u64).to_le_bytes());
        h.update([matches!(g.boundary, Boundary::Wrap) as u8]);
        for part in [self.encoder.identity(), self.spec.output_ext.clone()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex_digest(h)
    }

    /// Preprocesses at `alpha`, encodes at `bitrate_kbps` and records the
    /// measured bitrate. Reuses a cached result when caching is on.
    pub fn encode_variant(&self, src: &Source, alpha: f64, bitrate_kbps: f64) -> Result<EncodeResult, LabelError> {
        let dir = self.cache_root().join(self.encode_key(src, alpha, bitrate_kbps));
        let record = dir.join(ENCODE_RECORD);
        if self.spec.cache {
            if let Some(r) = read_record(&record, &dir) {
                AtomicCounters::bump(&self.counters.encode_cache_hits);
                return Ok(r);
            }
        }
        let staging = tempfile::Builder::new()
            .prefix("enc-")
            .tempdir_in(self.staging_root()?)
            .map_err(io_err(&self.spec.workdir))?;
        let input = if alpha == 0.0 {
            src.path.clone()
        } else {
            let p = staging.path().join("input.y4m");
            write_y4m(&self.usm.apply_video(&src.video, alpha)?, &p)?;
            p
        };
        let name = format!("encoded.{}", self.spec.output_ext);
        let output = staging.path().join(&name);
        AtomicCounters::bump(&self.counters.encoder_runs);
        self.encoder.encode(&EncodeRequest {
            input: &input,
            output: &output,
            bitrate_kbps,
            alpha,
        })?;
        let bytes = fs::metadata(&output).map(|m| m.len()).unwrap_or(0);
        if bytes == 0 {
            return Err(LabelError::EmptyOutput(output));
        }
        if alpha != 0.0 {
            fs::remove_file(&input).map_err(io_err(&input))?;
        }
        let result = EncodeResult {
            alpha,
            nominal_kbps: bitrate_kbps,
            measured_kbps: measured_kbps(bytes, src.video.duration_secs()),
            bytes,
            encoded: PathBuf::from(&name),
        };
        let json = serde_json::to_vec_pretty(&result).expect("encode record serializes");
        let staged_record = staging.path().join(ENCODE_RECORD);
        fs::write(&staged_record, json).map_err(io_err(&staged_record))?;
        publish_dir(staging, &dir)?;
        Ok(EncodeResult {
            encoded: dir.join(name),
            ..result
        })
    }

    /// Quality of an encoded variant, cached beside the encode.
    pub fn measure_variant(&self, enc: &EncodeResult) -> Result<f64, LabelError> {
        let dir = enc.encoded.parent().expect("encoded file sits in a cache dir").to_path_buf();
        let mut h = Sha256::new();
        h.update(b"hfprep-quality-v1\0");
        h.update(self.meter.identity().as_bytes());
        let record = dir.join(format!("quality-{}.json", &hex_digest(h)[..16]));
        if self.spec.cache {
            if let Some(q) = fs::read(&record)
                .ok()
                .and_then(|b| serde_json::from_slice::<QualityRecord>(&b).ok())
            {
                AtomicCounters::bump(&self.counters.quality_cache_hits);
                return Ok(q.quality);
            }
        }
        let scratch = tempfile::Builder::new()
            .prefix("q-")
            .tempdir_in(self.staging_root()?)
            .map_err(io_err(&self.spec.workdir))?;
        AtomicCounters::bump(&self.counters.metric_runs);
        let quality = self.meter.measure(&enc.encoded, scratch.path())?;
        if !quality.is_finite() {
            return Err(LabelError::NonNumericMetric(quality.to_string()));
        }
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
        serde_json::to_writer(&mut tmp, &QualityRecord { quality }).expect("quality record serializes");
        tmp.persist(&record).map_err(|e| io_err(&record)(e.error))?;
        Ok(quality)
    }

    /// All strategy × bitrate jobs for one video, run on the current rayon
    /// pool, then the optimal strategy at the target.
    pub fn label_video(&self, video_id: &str, path: &Path) -> Result<VideoLabel, LabelError> {
        let src = Source::load(path)?;
        let jobs: Vec<(f64, f64)> = self
            .spec
            .strategies
            .iter()
            .flat_map(|&a| self.spec.bitrates_kbps.iter().map(move |&b| (a, b)))
            .collect();
        self.counters.scheduled.fetch_add(jobs.len(), Ordering::Relaxed);
        let points = jobs
            .par_iter()
            .map(|&(alpha, kbps)| {
                let enc = self.encode_variant(&src, alpha, kbps)?;
                let quality = self.measure_variant(&enc)?;
                Ok(RDPoint {
                    strategy: alpha,
                    nominal_kbps: kbps,
                    measured_kbps: enc.measured_kbps,
                    quality,
                })
            })
            .collect::<Result<Vec<RDPoint>, LabelError>>()?;
        let per = self.spec.bitrates_kbps.len();
        let curves = self
            .spec
            .strategies
            .iter()
            .zip(points.chunks(per))
            .map(|(&a, pts)| RDCurve::new(a, pts.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let label = select_optimal(&curves, &self.spec.strategies, self.spec.target_kbps)?;
        Ok(VideoLabel {
            video_id: video_id.to_string(),
            label,
            target_kbps: self.spec.target_kbps,
            points,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct QualityRecord {
    quality: f64,
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_record(record: &Path, dir: &Path) -> Option<EncodeResult> {
    let r: EncodeResult = serde_json::from_slice(&fs::read(record).ok()?).ok()?;
    let encoded = dir.join(&r.encoded);
    (fs::metadata(&encoded).ok()?.len() == r.bytes).then_some(EncodeResult { encoded, ..r })
}

/// Renames a finished staging directory into place. A concurrent writer
/// that got there first wins; stale entries without a record are replaced.
fn publish_dir(staging: tempfile::TempDir, dir: &Path) -> Result<(), LabelError> {
    if let Some(parent) = dir.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let staged = staging.keep();
    if dir.exists() {
        if dir.join(ENCODE_RECORD).exists() && staged.join(ENCODE_RECORD).exists() {
            let same = fs::read(dir.join(ENCODE_RECORD)).ok() == fs::read(staged.join(ENCODE_RECORD)).ok();
            if same {
                let _ = fs::remove_dir_all(&staged);
                return Ok(());
            }
        }
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    match fs::rename(&staged, dir) {
        Ok(()) => Ok(()),
        Err(_) if dir.join(ENCODE_RECORD).exists() => {
            let _ = fs::remove_dir_all(&staged);
            Ok(())
        }
        Err(e) => Err(io_err(dir)(e)),
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>, LabelError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| LabelError::Other(e.to_string()))?;
    w.flush().map_err(io_err(path))?;
    Ok(w)
}

/// Labels every manifest entry in manifest order, appending each video's
/// label and audit rows as soon as it finishes. Per-video failures are
/// collected and the run continues.
pub fn pseudo_label_dataset(
    manifest: &Manifest,
    labeler: &Labeler,
    labels_path: &Path,
    audit_path: &Path,
) -> Result<LabelReport, LabelError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(labeler.spec.workers)
        .build()
        .map_err(|e| LabelError::Other(e.to_string()))?;
    let mut labels = csv_writer(labels_path, &LABELS_HEADER)?;
    let mut audit = csv_writer(audit_path, &AUDIT_HEADER)?;
    let csv_err = |e: csv::Error| LabelError::Other(e.to_string());
    let mut labeled = Vec::new();
    let mut failures = Vec::new();
    for entry in &manifest.entries {
        match pool.install(|| labeler.label_video(&entry.video_id, &entry.path)) {
            Ok(v) => {
                for p in &v.points {
                    audit
                        .write_record([
                            v.video_id.clone(),
                            fmt_num(p.strategy),
                            fmt_num(p.nominal_kbps),
                            fmt_num(p.measured_kbps),
                            fmt_num(p.quality),
                        ])
                        .map_err(csv_err)?;
                }
                labels
                    .write_record([
                        v.video_id.clone(),
                        fmt_num(v.label.alpha),
                        fmt_num(v.label.quality_at_target),
                        fmt_num(v.target_kbps),
                    ])
                    .map_err(csv_err)?;
                audit.flush().map_err(io_err(audit_path))?;
                labels.flush().map_err(io_err(labels_path))?;
                labeled.push(v);
            }
            Err(e) => {
                log::warn!("{}: {e}", entry.video_id);
                failures.push(VideoFailure {
                    video_id: entry.video_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    labels.into_inner().map_err(|e| LabelError::Other(e.to_string()))?.flush().ok();
    audit.into_inner().map_err(|e| LabelError::Other(e.to_string()))?.flush().ok();
    Ok(LabelReport {
        labeled,
        failures,
        counters: labeler.counters(),
    })
}

/// Audit rows grouped by video, in file order.
pub fn read_audit(path: &Path) -> Result<Vec<(String, Vec<RDPoint>)>, LabelError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabelError::Other(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| LabelError::Other(e.to_string()))?.clone();
    if headers.iter().ne(AUDIT_HEADER) {
        return Err(LabelError::Other(format!(
            "{}: expected header {}",
            path.display(),
            AUDIT_HEADER.join(",")
        )));
    }
    let mut out: Vec<(String, Vec<RDPoint>)> = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| LabelError::Other(format!("{}: {e}", path.display())))?;
        let num = |k: usize| {
            row[k].parse::<f64>().map_err(|_| {
                LabelError::Other(format!("{} row {}: bad {} `{}`", path.display(), i + 2, AUDIT_HEADER[k], &row[k]))
            })
        };
        let point = RDPoint {
            strategy: num(1)?,
            nominal_kbps: num(2)?,
            measured_kbps: num(3)?,
            quality: num(4)?,
        };
        match out.last_mut() {
            Some((id, pts)) if id == &row[0] => pts.push(point),
            _ => out.push((row[0].to_string(), vec![point])),
        }
    }
    Ok(out)
}
