use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ClipWindow;
use crate::tensor::{Real, Tensor};

/// Headerless 8-bit planar YUV 4:2:0 file; only luma is decoded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct YuvSequence {
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
}

/// Bytes of one 4:2:0 frame.
pub fn frame_size(width: usize, height: usize) -> usize {
    width * height + 2 * (width / 2) * (height / 2)
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Usage(format!("YUV 4:2:0 needs even nonzero dims, got {width}x{height}")));
    }
    Ok(())
}

impl YuvSequence {
    /// Frame count is derived from the file size, which must be an exact multiple.
    pub fn open(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        check_dims(width, height)?;
        let len = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len() as usize;
        let fs = frame_size(width, height);
        if len == 0 || !len.is_multiple_of(fs) {
            return Err(Error::io(
                &path,
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("size {len} bytes is not a multiple of the {width}x{height} frame size {fs}"),
                ),
            ));
        }
        Ok(YuvSequence {
            path,
            width,
            height,
            frame_count: len / fs,
        })
    }

    pub fn frame_size(&self) -> usize {
        frame_size(self.width, self.height)
    }

    fn read_at(&self, offset: usize, buf: &mut [u8]) -> Result<()> {
        let mut f = File::open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        let actual = f.metadata().map_err(|e| Error::io(&self.path, e))?.len() as usize;
        let expected = self.frame_count * self.frame_size();
        if actual < expected {
            return Err(Error::io(
                &self.path,
                io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    format!("truncated: expected {expected} bytes, found {actual}"),
                ),
            ));
        }
        f.seek(SeekFrom::Start(offset as u64)).map_err(|e| Error::io(&self.path, e))?;
        f.read_exact(buf).map_err(|e| Error::io(&self.path, e))
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.frame_count {
            return Err(Error::Usage(format!(
                "frame index {t} out of range for {} frames",
                self.frame_count
            )));
        }
        Ok(())
    }

    pub fn read_y_bytes(&self, t: usize) -> Result<Vec<u8>> {
        self.check_index(t)?;
        let mut buf = vec![0u8; self.width * self.height];
        self.read_at(t * self.frame_size(), &mut buf)?;
        Ok(buf)
    }

    /// `[H, W]` luma with values `byte / 255`.
    pub fn read_y_plane<T: Real>(&self, t: usize) -> Result<Tensor<T>> {
        let bytes = self.read_y_bytes(t)?;
        plane_from_bytes(&bytes, self.width, self.height)
    }

    /// Both chroma planes of frame `t`, U then V.
    pub fn read_chroma(&self, t: usize) -> Result<Vec<u8>> {
        self.check_index(t)?;
        let n = self.width * self.height;
        let mut buf = vec![0u8; self.frame_size() - n];
        self.read_at(t * self.frame_size() + n, &mut buf)?;
        Ok(buf)
    }

    pub fn read_all_y<T: Real>(&self) -> Result<Vec<Tensor<T>>> {
        (0..self.frame_count).map(|t| self.read_y_plane(t)).collect()
    }

    /// Frames `t-R ..= t+R`, clamped to the sequence.
    pub fn clip_window<T: Real>(&self, t: usize, radius: usize) -> Result<ClipWindow<T>> {
        self.check_index(t)?;
        let idx = clip_indices(t, radius, self.frame_count);
        let planes = idx.iter().map(|&i| self.read_y_plane(i)).collect::<Result<Vec<_>>>()?;
        stack_window(&planes, idx)
    }
}

/// Source indices of the window around `t` with replication at both ends.
pub fn clip_indices(t: usize, radius: usize, frame_count: usize) -> Vec<usize> {
    let last = frame_count.saturating_sub(1) as isize;
    (-(radius as isize)..=radius as isize)
        .map(|d| (t as isize + d).clamp(0, last) as usize)
        .collect()
}

/// Clip window over in-memory planes `[H, W]`.
pub fn clip_window<T: Real>(planes: &[Tensor<T>], t: usize, radius: usize) -> Result<ClipWindow<T>> {
    if t >= planes.len() {
        return Err(Error::Usage(format!("frame index {t} out of range for {} frames", planes.len())));
    }
    let idx = clip_indices(t, radius, planes.len());
    let sel: Vec<Tensor<T>> = idx.iter().map(|&i| planes[i].clone()).collect();
    stack_window(&sel, idx)
}

fn stack_window<T: Real>(planes: &[Tensor<T>], idx: Vec<usize>) -> Result<ClipWindow<T>> {
    let s = planes[0].shape().to_vec();
    if s.len() != 2 {
        return Err(Error::dim("clip_window", format!("plane shape {s:?}")));
    }
    let mut data = Vec::with_capacity(planes.len() * s[0] * s[1]);
    for p in planes {
        if p.shape() != s.as_slice() {
            return Err(Error::dim("clip_window", format!("{:?} vs {s:?}", p.shape())));
        }
        data.extend_from_slice(p.data());
    }
    ClipWindow::new(Tensor::new(&[planes.len(), s[0], s[1]], data)?, idx)
}

pub fn plane_from_bytes<T: Real>(bytes: &[u8], width: usize, height: usize) -> Result<Tensor<T>> {
    Tensor::new(&[height, width], bytes.iter().map(|&b| T::lit(b as f64 / 255.0)).collect())
}

/// Clamp to [0, 1] and round to the nearest 8-bit code.
pub fn quantize_8bit<T: Real>(v: T) -> u8 {
    let x = v.to_f64().unwrap_or(0.0);
    if x.is_nan() {
        return 0;
    }
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn plane_to_bytes<T: Real>(plane: &Tensor<T>) -> Vec<u8> {
    plane.data().iter().map(|&v| quantize_8bit(v)).collect()
}

/// Sequential frame writer; chroma defaults to mid-grey when not supplied.
pub struct YuvWriter {
    path: PathBuf,
    out: BufWriter<File>,
    width: usize,
    height: usize,
    frames: usize,
}

impl YuvWriter {
    pub fn create(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        let path = path.as_ref().to_path_buf();
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(YuvWriter {
            path,
            out: BufWriter::new(f),
            width,
            height,
            frames: 0,
        })
    }

    pub fn write_y_bytes(&mut self, y: &[u8], chroma: Option<&[u8]>) -> Result<()> {
        let n = self.width * self.height;
        let nc = frame_size(self.width, self.height) - n;
        if y.len() != n {
            return Err(Error::dim("write_y_plane", format!("{} luma bytes, expected {n}", y.len())));
        }
        let grey;
        let chroma = match chroma {
            Some(c) if c.len() != nc => {
                return Err(Error::dim("write_y_plane", format!("{} chroma bytes, expected {nc}", c.len())))
            }
            Some(c) => c,
            None => {
                grey = vec![128u8; nc];
                &grey
            }
        };
        self.out.write_all(y).map_err(|e| Error::io(&self.path, e))?;
        self.out.write_all(chroma).map_err(|e| Error::io(&self.path, e))?;
        self.frames += 1;
        Ok(())
    }

    /// `plane` is `[H, W]` on the [0, 1] scale.
    pub fn write_y_plane<T: Real>(&mut self, plane: &Tensor<T>, chroma: Option<&[u8]>) -> Result<()> {
        if plane.shape() != [self.height, self.width] {
            return Err(Error::dim(
                "write_y_plane",
                format!("{:?} vs {}x{}", plane.shape(), self.width, self.height),
            ));
        }
        self.write_y_bytes(&plane_to_bytes(plane), chroma)
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.frames)
    }
}

/// Writes all planes with grey chroma.
pub fn write_sequence<T: Real>(path: impl AsRef<Path>, planes: &[Tensor<T>]) -> Result<YuvSequence> {
    let s = planes
        .first()
        .ok_or_else(|| Error::Usage("cannot write an empty sequence".into()))?
        .shape()
        .to_vec();
    if s.len() != 2 {
        return Err(Error::dim("write_sequence", format!("plane shape {s:?}")));
    }
    let mut w = YuvWriter::create(path.as_ref(), s[1], s[0])?;
    for p in planes {
        w.write_y_plane(p, None)?;
    }
    w.finish()?;
    YuvSequence::open(path, s[1], s[0])
}
