//! Planar 8-bit 4:2:0 input, raw or YUV4MPEG2-wrapped.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::FramePlane;
use crate::error::{Error, Result};

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";

/// Bytes in one planar 4:2:0 frame (luma plus two subsampled chroma planes).
pub fn frame_bytes_420(width: usize, height: usize) -> u64 {
    let luma = (width * height) as u64;
    let chroma = (width.div_ceil(2) * height.div_ceil(2)) as u64;
    luma + 2 * chroma
}

/// Parsed `YUV4MPEG2` stream header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Y4mHeader {
    pub width: usize,
    pub height: usize,
    /// Byte length of the stream header, including the trailing newline.
    pub header_len: u64,
}

fn read_line_bytes<R: BufRead>(reader: &mut R, limit: usize) -> std::io::Result<Vec<u8>> {
    let mut line = Vec::new();
    reader
        .by_ref()
        .take(limit as u64)
        .read_until(b'\n', &mut line)?;
    Ok(line)
}

/// Parse the stream header; only the C420 family of colorspaces is accepted.
pub fn parse_y4m_header(line: &[u8], origin: &str) -> Result<Y4mHeader> {
    let loc = || format!("{origin}: y4m header");
    let text = std::str::from_utf8(line).map_err(|_| Error::parse(loc(), "header is not ASCII"))?;
    let body = text
        .strip_suffix('\n')
        .ok_or_else(|| Error::parse(loc(), "header not newline-terminated"))?;
    let mut tokens = body.split(' ');
    if tokens.next().map(str::as_bytes) != Some(Y4M_MAGIC) {
        return Err(Error::parse(loc(), "missing YUV4MPEG2 signature"));
    }
    let (mut width, mut height) = (None, None);
    for tok in tokens.filter(|t| !t.is_empty()) {
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = val.parse::<usize>().ok(),
            "H" => height = val.parse::<usize>().ok(),
            // 8-bit 4:2:0 only; C420p10 and friends are rejected
            "C" if !matches!(val, "420" | "420jpeg" | "420paldv" | "420mpeg2") => {
                return Err(Error::Format(format!(
                    "{origin}: unsupported y4m colorspace C{val} (only 8-bit C420 variants)"
                )));
            }
            _ => {}
        }
    }
    match (width, height) {
        (Some(width), Some(height)) if width > 0 && height > 0 => Ok(Y4mHeader {
            width,
            height,
            header_len: line.len() as u64,
        }),
        _ => Err(Error::parse(loc(), "missing or invalid W/H tags")),
    }
}

/// Returns the Y4M header when `path` starts with the YUV4MPEG2 signature.
pub fn probe_y4m(path: &Path) -> Result<Option<Y4mHeader>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 9];
    let n = reader
        .by_ref()
        .take(9)
        .read(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if n < 9 || magic != Y4M_MAGIC {
        return Ok(None);
    }
    let mut line = magic.to_vec();
    line.extend(read_line_bytes(&mut reader, 4096).map_err(|e| Error::io(path, e))?);
    parse_y4m_header(&line, &path.display().to_string()).map(Some)
}

/// Load the luma plane of frame `frame_index`.
///
/// For Y4M input the stream header overrides `width`/`height`.
pub fn load_frame(
    path: &Path,
    width: usize,
    height: usize,
    frame_index: usize,
) -> Result<FramePlane> {
    match probe_y4m(path)? {
        Some(header) => load_y4m_frame(path, &header, frame_index),
        None => load_raw_frame(path, width, height, frame_index),
    }
}

fn load_raw_frame(
    path: &Path,
    width: usize,
    height: usize,
    frame_index: usize,
) -> Result<FramePlane> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!(
            "frame geometry {width}x{height} must be non-zero"
        )));
    }
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let frame_len = frame_bytes_420(width, height);
    let complete = (len / frame_len) as usize;
    if frame_index >= complete {
        let partial_tail = len % frame_len != 0 && frame_index == complete;
        if partial_tail {
            return Err(Error::Truncated {
                index: frame_index,
                needed: frame_len,
                available: len % frame_len,
            });
        }
        return Err(Error::Range {
            index: frame_index,
            available: complete,
        });
    }
    file.seek(SeekFrom::Start(frame_index as u64 * frame_len))
        .map_err(|e| Error::io(path, e))?;
    let mut samples = vec![0u8; width * height];
    file.read_exact(&mut samples)
        .map_err(|e| Error::io(path, e))?;
    FramePlane::new(width, height, samples)
}

fn load_y4m_frame(path: &Path, header: &Y4mHeader, frame_index: usize) -> Result<FramePlane> {
    let origin = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    reader
        .seek(SeekFrom::Start(header.header_len))
        .map_err(|e| Error::io(path, e))?;
    let (w, h) = (header.width, header.height);
    let frame_len = frame_bytes_420(w, h);
    let luma_len = (w * h) as u64;
    for index in 0..=frame_index {
        let marker = read_line_bytes(&mut reader, 4096).map_err(|e| Error::io(path, e))?;
        if marker.is_empty() {
            return Err(Error::Range {
                index: frame_index,
                available: index,
            });
        }
        if !marker.starts_with(b"FRAME") || !marker.ends_with(b"\n") {
            return Err(Error::parse(
                format!("{origin}: frame {index}"),
                "missing FRAME marker",
            ));
        }
        if index < frame_index {
            let skipped = std::io::copy(&mut reader.by_ref().take(frame_len), &mut std::io::sink())
                .map_err(|e| Error::io(path, e))?;
            if skipped < frame_len {
                return Err(Error::Truncated {
                    index,
                    needed: frame_len,
                    available: skipped,
                });
            }
        }
    }
    let mut samples = Vec::with_capacity(w * h);
    let got = reader
        .by_ref()
        .take(luma_len)
        .read_to_end(&mut samples)
        .map_err(|e| Error::io(path, e))? as u64;
    let mut chroma_seen = 0u64;
    if got == luma_len {
        chroma_seen = std::io::copy(
            &mut reader.by_ref().take(frame_len - luma_len),
            &mut std::io::sink(),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    if got + chroma_seen < frame_len {
        return Err(Error::Truncated {
            index: frame_index,
            needed: frame_len,
            available: got + chroma_seen,
        });
    }
    FramePlane::new(w, h, samples)
}

/// Append one planar 4:2:0 frame (mid-grey chroma) to `out`.
pub fn write_raw_frame<W: Write>(out: &mut W, plane: &FramePlane) -> std::io::Result<()> {
    out.write_all(plane.samples())?;
    let chroma = vec![128u8; plane.width().div_ceil(2) * plane.height().div_ceil(2)];
    out.write_all(&chroma)?;
    out.write_all(&chroma)
}

/// Write a Y4M stream holding `frames` (all must share one geometry).
pub fn write_y4m<W: Write>(out: &mut W, frames: &[FramePlane]) -> std::io::Result<()> {
    let Some(first) = frames.first() else {
        return Ok(());
    };
    writeln!(
        out,
        "YUV4MPEG2 W{} H{} F30:1 Ip A1:1 C420jpeg",
        first.width(),
        first.height()
    )?;
    for f in frames {
        out.write_all(b"FRAME\n")?;
        write_raw_frame(out, f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: usize, h: usize, phase: usize) -> FramePlane {
        let samples = (0..w * h)
            .map(|i| ((i % w) * 3 + (i / w) * 5 + phase) as u8)
            .collect();
        FramePlane::new(w, h, samples).unwrap()
    }

    #[test]
    fn zero_raw_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.yuv");
        std::fs::write(&path, vec![0u8; frame_bytes_420(64, 64) as usize]).unwrap();
        let plane = load_frame(&path, 64, 64, 0).unwrap();
        assert_eq!(plane.samples().len(), 4096);
        assert!(plane.samples().iter().all(|&s| s == 0));
    }

    #[test]
    fn single_frame_file_rejects_index_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.yuv");
        std::fs::write(&path, vec![7u8; 64 * 64 * 3 / 2]).unwrap();
        let err = load_frame(&path, 64, 64, 1).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Range {
                    index: 1,
                    available: 1
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn short_file_is_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.yuv");
        std::fs::write(&path, vec![7u8; 5000]).unwrap();
        let err = load_frame(&path, 64, 64, 0).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn raw_round_trip_second_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.yuv");
        let frames = [gradient(130, 70, 0), gradient(130, 70, 9)];
        let mut f = File::create(&path).unwrap();
        for fr in &frames {
            write_raw_frame(&mut f, fr).unwrap();
        }
        f.flush().unwrap();
        assert_eq!(load_frame(&path, 130, 70, 1).unwrap(), frames[1]);
        assert_eq!(load_frame(&path, 130, 70, 0).unwrap(), frames[0]);
    }

    #[test]
    fn y4m_header_overrides_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.y4m");
        let frames = [gradient(72, 40, 1), gradient(72, 40, 2)];
        let mut f = File::create(&path).unwrap();
        write_y4m(&mut f, &frames).unwrap();
        drop(f);
        // bogus geometry is ignored
        assert_eq!(load_frame(&path, 1, 1, 1).unwrap(), frames[1]);
        assert!(matches!(
            load_frame(&path, 1, 1, 2).unwrap_err(),
            Error::Range {
                index: 2,
                available: 2
            }
        ));
    }

    #[test]
    fn y4m_rejects_non_420() {
        let err = parse_y4m_header(b"YUV4MPEG2 W8 H8 C444\n", "t").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let err = parse_y4m_header(b"YUV4MPEG2 W8 H8 C420p10\n", "t").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let ok = parse_y4m_header(b"YUV4MPEG2 W8 H6 C420mpeg2\n", "t").unwrap();
        assert_eq!((ok.width, ok.height), (8, 6));
        assert!(parse_y4m_header(b"YUV4MPEG2 W8\n", "t").is_err());
    }

    #[test]
    fn truncated_y4m_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.y4m");
        let mut bytes = b"YUV4MPEG2 W16 H16 C420\nFRAME\n".to_vec();
        bytes.extend(vec![1u8; 300]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_frame(&path, 0, 0, 0).unwrap_err(),
            Error::Truncated { .. }
        ));
    }
}
