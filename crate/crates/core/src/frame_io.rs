//! Raw video containers (YUV4MPEG2 and headerless planar YUV) decoded into
//! planar `f32` frames.
//!
//! Samples stay unclipped floats everywhere in the processing graph. The
//! only place they are clipped to `[0, 255]` and rounded is [`write_y4m`].

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::VideoError;

/// BT.601 luma weights for R, G, B.
pub const BT601_LUMA: [f32; 3] = [0.299, 0.587, 0.114];

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";
const FRAME_MAGIC: &[u8] = b"FRAME";

/// Plane arrangement of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixLayout {
    /// Luma plus two chroma planes subsampled by two in both directions.
    Yuv420,
    /// Luma plus two full-resolution chroma planes.
    Yuv444,
    /// Luma only.
    Gray,
    /// Three full-resolution planes R, G, B. In-memory only; not a y4m layout.
    Rgb,
}

impl PixLayout {
    /// `(width, height)` of every plane of a `width`×`height` frame.
    pub fn plane_dims(self, width: usize, height: usize) -> Vec<(usize, usize)> {
        match self {
            PixLayout::Yuv420 => {
                let c = (width.div_ceil(2), height.div_ceil(2));
                vec![(width, height), c, c]
            }
            PixLayout::Yuv444 | PixLayout::Rgb => vec![(width, height); 3],
            PixLayout::Gray => vec![(width, height)],
        }
    }

    /// Total samples of one frame.
    pub fn frame_samples(self, width: usize, height: usize) -> usize {
        self.plane_dims(width, height)
            .iter()
            .map(|(w, h)| w * h)
            .sum()
    }

    fn y4m_tag(self) -> Option<&'static str> {
        match self {
            PixLayout::Yuv420 => Some("420"),
            PixLayout::Yuv444 => Some("444"),
            PixLayout::Gray => Some("mono"),
            PixLayout::Rgb => None,
        }
    }

    fn from_y4m_tag(tag: &str) -> Option<Self> {
        match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Some(PixLayout::Yuv420),
            "444" => Some(PixLayout::Yuv444),
            "mono" => Some(PixLayout::Gray),
            _ => None,
        }
    }
}

impl std::str::FromStr for PixLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "yuv420" | "yuv420p" | "420" => Ok(PixLayout::Yuv420),
            "yuv444" | "yuv444p" | "444" => Ok(PixLayout::Yuv444),
            "gray" | "mono" | "y" => Ok(PixLayout::Gray),
            "rgb" | "rgbp" => Ok(PixLayout::Rgb),
            other => Err(format!("unknown pixel layout `{other}`")),
        }
    }
}

/// One image plane of row-major float samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Plane::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane::new(width, height, data)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Plane {
        Plane::new(self.width, self.height, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `self + c`.
    pub fn add_scalar(&self, c: f32) -> Plane {
        self.map(|v| v + c)
    }

    /// Copy of the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Plane {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Plane::new(w, h, data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// A frame: its planes in layout order (Y, U, V), (Y), or (R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub layout: PixLayout,
    pub planes: Vec<Plane>,
}

impl Frame {
    pub fn new(layout: PixLayout, planes: Vec<Plane>) -> Self {
        Frame { layout, planes }
    }

    /// Single-plane grayscale frame.
    pub fn gray(plane: Plane) -> Self {
        Frame::new(PixLayout::Gray, vec![plane])
    }

    /// Frame with every plane set to the same value, dims following `layout`.
    pub fn filled(layout: PixLayout, width: usize, height: usize, value: f32) -> Self {
        let planes = layout
            .plane_dims(width, height)
            .into_iter()
            .map(|(w, h)| Plane::filled(w, h, value))
            .collect();
        Frame::new(layout, planes)
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    /// The luma (YUV, gray) or red (RGB) plane.
    pub fn first_plane(&self) -> &Plane {
        &self.planes[0]
    }
}

/// A decoded video held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarVideo {
    pub frames: Vec<Frame>,
    pub width: usize,
    pub height: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub pix_layout: PixLayout,
}

impl PlanarVideo {
    /// Builds a video, checking that every frame matches the declared geometry.
    pub fn new(
        frames: Vec<Frame>,
        width: usize,
        height: usize,
        fps_num: u32,
        fps_den: u32,
        pix_layout: PixLayout,
    ) -> Result<Self, VideoError> {
        let v = PlanarVideo {
            frames,
            width,
            height,
            fps_num,
            fps_den,
            pix_layout,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), VideoError> {
        if self.width == 0 || self.height == 0 {
            return Err(VideoError::Invalid(format!(
                "dimensions {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.fps_num == 0 || self.fps_den == 0 {
            return Err(VideoError::Invalid(format!(
                "frame rate {}:{} must be positive",
                self.fps_num, self.fps_den
            )));
        }
        let dims = self.pix_layout.plane_dims(self.width, self.height);
        for (i, f) in self.frames.iter().enumerate() {
            if f.layout != self.pix_layout {
                return Err(VideoError::Invalid(format!(
                    "frame {i} has layout {:?}, video is {:?}",
                    f.layout, self.pix_layout
                )));
            }
            if f.planes.len() != dims.len() {
                return Err(VideoError::Invalid(format!(
                    "frame {i} has {} planes, expected {}",
                    f.planes.len(),
                    dims.len()
                )));
            }
            for (p, (plane, &(w, h))) in f.planes.iter().zip(&dims).enumerate() {
                if plane.width != w || plane.height != h || plane.data.len() != w * h {
                    return Err(VideoError::Invalid(format!(
                        "frame {i} plane {p} is {}x{}, expected {w}x{h}",
                        plane.width, plane.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn fps(&self) -> f64 {
        self.fps_num as f64 / self.fps_den as f64
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames.len() as f64 * self.fps_den as f64 / self.fps_num as f64
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Applies `f` to every luma plane, copying chroma through untouched.
    pub fn map_luma<E>(&self, mut f: impl FnMut(&Plane) -> Result<Plane, E>) -> Result<Self, E> {
        let mut frames = Vec::with_capacity(self.frames.len());
        for frame in &self.frames {
            let mut planes = frame.planes.clone();
            planes[0] = f(&frame.planes[0])?;
            frames.push(Frame::new(frame.layout, planes));
        }
        Ok(PlanarVideo {
            frames,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> PlanarVideo {
        PlanarVideo {
            frames: Vec::new(),
            width: self.width,
            height: self.height,
            fps_num: self.fps_num,
            fps_den: self.fps_den,
            pix_layout: self.pix_layout,
        }
    }
}

/// Grayscale view of a frame: the luma plane for YUV/gray layouts, BT.601
/// weighted sum for RGB.
pub fn to_grayscale(frame: &Frame) -> Plane {
    match frame.layout {
        PixLayout::Yuv420 | PixLayout::Yuv444 | PixLayout::Gray => frame.planes[0].clone(),
        PixLayout::Rgb => {
            let (r, g, b) = (&frame.planes[0], &frame.planes[1], &frame.planes[2]);
            let [wr, wg, wb] = BT601_LUMA;
            let data = r
                .data
                .iter()
                .zip(&g.data)
                .zip(&b.data)
                .map(|((&r, &g), &b)| wr * r + wg * g + wb * b)
                .collect();
            Plane::new(r.width, r.height, data)
        }
    }
}

/// Clip to `[0, 255]` and round half away from zero.
#[inline]
pub fn quantize_sample(v: f32) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// The video a y4m write/read cycle produces: every sample clipped and rounded.
pub fn clip_round(video: &PlanarVideo) -> PlanarVideo {
    let frames = video
        .frames
        .iter()
        .map(|f| {
            Frame::new(
                f.layout,
                f.planes
                    .iter()
                    .map(|p| p.map(|v| quantize_sample(v) as f32))
                    .collect(),
            )
        })
        .collect();
    PlanarVideo {
        frames,
        ..video.clone_meta()
    }
}

pub fn load_y4m(path: impl AsRef<Path>) -> Result<PlanarVideo, VideoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_y4m(&bytes)
}

/// Decodes an in-memory y4m stream.
pub fn parse_y4m(bytes: &[u8]) -> Result<PlanarVideo, VideoError> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| VideoError::MalformedHeader {
            offset: 0,
            reason: "missing header terminator".into(),
        })?;
    if !bytes.starts_with(Y4M_MAGIC) {
        return Err(VideoError::MalformedHeader {
            offset: 0,
            reason: "missing YUV4MPEG2 signature".into(),
        });
    }
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| VideoError::MalformedHeader {
        offset: 0,
        reason: "header is not ASCII".into(),
    })?;

    let mut width = None;
    let mut height = None;
    let mut fps = None;
    // y4m default when no C tag is present.
    let mut layout = PixLayout::Yuv420;
    let mut offset = 0u64;
    for (i, token) in header.split(' ').enumerate() {
        let tok_offset = offset;
        offset += token.len() as u64 + 1;
        if i == 0 {
            if token != "YUV4MPEG2" {
                return Err(VideoError::MalformedHeader {
                    offset: 0,
                    reason: format!("bad signature `{token}`"),
                });
            }
            continue;
        }
        if token.is_empty() {
            continue;
        }
        let (key, value) = token.split_at(1);
        let bad = |what: &str| VideoError::MalformedHeader {
            offset: tok_offset,
            reason: format!("invalid {what} `{token}`"),
        };
        match key {
            "W" => width = Some(value.parse::<usize>().map_err(|_| bad("width"))?),
            "H" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
            "F" => {
                let (n, d) = value.split_once(':').ok_or_else(|| bad("frame rate"))?;
                let n = n.parse::<u32>().map_err(|_| bad("frame rate"))?;
                let d = d.parse::<u32>().map_err(|_| bad("frame rate"))?;
                fps = Some((n, d));
            }
            "C" => {
                layout = PixLayout::from_y4m_tag(value).ok_or_else(|| VideoError::UnsupportedChroma {
                    offset: tok_offset,
                    tag: value.to_string(),
                })?;
            }
            "I" | "A" | "X" => {}
            _ => return Err(bad("header parameter")),
        }
    }
    let missing = |what: &str| VideoError::MalformedHeader {
        offset: 0,
        reason: format!("missing {what}"),
    };
    let width = width.ok_or_else(|| missing("width"))?;
    let height = height.ok_or_else(|| missing("height"))?;
    let (fps_num, fps_den) = fps.ok_or_else(|| missing("frame rate"))?;
    if width == 0 || height == 0 || fps_num == 0 || fps_den == 0 {
        return Err(VideoError::MalformedHeader {
            offset: 0,
            reason: format!("non-positive geometry W{width} H{height} F{fps_num}:{fps_den}"),
        });
    }

    let dims = layout.plane_dims(width, height);
    let payload = layout.frame_samples(width, height);
    let mut pos = header_end + 1;
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let frame_no = frames.len();
        if !bytes[pos..].starts_with(FRAME_MAGIC) {
            return Err(VideoError::MalformedFrame {
                frame: frame_no,
                offset: pos as u64,
            });
        }
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(VideoError::MalformedFrame {
                frame: frame_no,
                offset: pos as u64,
            })?;
        pos += nl + 1;
        let available = bytes.len() - pos;
        if available < payload {
            return Err(VideoError::Truncated {
                frame: frame_no,
                offset: pos as u64,
                expected: payload,
                found: available,
            });
        }
        let mut planes = Vec::with_capacity(dims.len());
        for &(w, h) in &dims {
            let data = bytes[pos..pos + w * h].iter().map(|&b| b as f32).collect();
            planes.push(Plane::new(w, h, data));
            pos += w * h;
        }
        frames.push(Frame::new(layout, planes));
    }
    PlanarVideo::new(frames, width, height, fps_num, fps_den, layout)
}

/// Serializes `video` as y4m bytes. Samples are clipped and rounded.
pub fn encode_y4m(video: &PlanarVideo) -> Result<Vec<u8>, VideoError> {
    let tag = video
        .pix_layout
        .y4m_tag()
        .ok_or(VideoError::UnwritableLayout(video.pix_layout))?;
    video.validate()?;
    let mut out = Vec::with_capacity(
        64 + video.frames.len() * (6 + video.pix_layout.frame_samples(video.width, video.height)),
    );
    writeln!(
        out,
        "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C{}",
        video.width, video.height, video.fps_num, video.fps_den, tag
    )
    .expect("write to Vec");
    for (fi, frame) in video.frames.iter().enumerate() {
        out.extend_from_slice(b"FRAME\n");
        for (pi, plane) in frame.planes.iter().enumerate() {
            for (i, &v) in plane.data.iter().enumerate() {
                if !v.is_finite() {
                    return Err(VideoError::NonFinite {
                        frame: fi,
                        plane: pi,
                        index: i,
                    });
                }
                out.push(quantize_sample(v));
            }
        }
    }
    Ok(out)
}

pub fn write_y4m(video: &PlanarVideo, path: impl AsRef<Path>) -> Result<(), VideoError> {
    let path = path.as_ref();
    let bytes = encode_y4m(video)?;
    let io_err = |source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Reads headerless planar 8-bit video (`.yuv`) of known geometry.
pub fn load_raw(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    layout: PixLayout,
    fps_num: u32,
    fps_den: u32,
) -> Result<PlanarVideo, VideoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| VideoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if width == 0 || height == 0 {
        return Err(VideoError::Invalid(format!("raw size {width}x{height}")));
    }
    let dims = layout.plane_dims(width, height);
    let payload = layout.frame_samples(width, height);
    if bytes.len() % payload != 0 {
        let frame = bytes.len() / payload;
        return Err(VideoError::Truncated {
            frame,
            offset: (frame * payload) as u64,
            expected: payload,
            found: bytes.len() % payload,
        });
    }
    let frames = bytes
        .chunks_exact(payload)
        .map(|chunk| {
            let mut pos = 0;
            let planes = dims
                .iter()
                .map(|&(w, h)| {
                    let p = Plane::new(w, h, chunk[pos..pos + w * h].iter().map(|&b| b as f32).collect());
                    pos += w * h;
                    p
                })
                .collect();
            Frame::new(layout, planes)
        })
        .collect();
    PlanarVideo::new(frames, width, height, fps_num, fps_den, layout)
}
