//! HOMF: the on-disk format for binary frame stacks.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "HOMF"
//! 4       2     version (u16)
//! 6       2     width (u16)
//! 8       2     height (u16)
//! 10      4     frame count (u32)
//! 14      8     seed (u64)
//! 22      4     settings length L (u32)
//! 26      L     settings, UTF-8 JSON
//! 26+L    ...   frames, row-major, each row padded to a whole byte,
//!               most significant bit = leftmost pixel
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcquisitionMeta, CameraSpec, Frame, FrameStack};
use crate::error::{Error, Result};
use crate::model::InterferometerSetting;

pub const HOMF_MAGIC: &[u8; 4] = b"HOMF";
pub const HOMF_VERSION: u16 = 1;
const HEADER_LEN: usize = 26;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    camera: CameraSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    setting: Option<InterferometerSetting>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    label: String,
    #[serde(default)]
    first_frame_index: u64,
    /// Present only when frame indices are not consecutive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_indices: Option<Vec<u64>>,
}

fn row_bytes(width: usize) -> usize {
    width.div_ceil(8)
}

pub fn encode_stack(stack: &FrameStack) -> Result<Vec<u8>> {
    let cam = &stack.camera;
    cam.validate()?;
    let count =
        u32::try_from(stack.len()).map_err(|_| Error::domain("too many frames for HOMF"))?;
    let first = stack.frames.first().map_or(0, |f| f.index);
    let consecutive = stack
        .frames
        .iter()
        .enumerate()
        .all(|(k, f)| f.index == first.wrapping_add(k as u64));
    let settings = Settings {
        camera: *cam,
        setting: stack.meta.setting,
        label: stack.meta.label.clone(),
        first_frame_index: first,
        frame_indices: (!consecutive).then(|| stack.frames.iter().map(|f| f.index).collect()),
    };
    let settings = serde_json::to_vec(&settings)?;
    let settings_len =
        u32::try_from(settings.len()).map_err(|_| Error::domain("settings block too large"))?;

    let rb = row_bytes(cam.width);
    let mut out = Vec::with_capacity(HEADER_LEN + settings.len() + stack.len() * rb * cam.height);
    out.extend_from_slice(HOMF_MAGIC);
    out.extend_from_slice(&HOMF_VERSION.to_le_bytes());
    out.extend_from_slice(&(cam.width as u16).to_le_bytes());
    out.extend_from_slice(&(cam.height as u16).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&stack.meta.seed.to_le_bytes());
    out.extend_from_slice(&settings_len.to_le_bytes());
    out.extend_from_slice(&settings);
    for frame in &stack.frames {
        for y in 0..cam.height {
            let mut row = vec![0u8; rb];
            for x in 0..cam.width {
                if frame.get(x, y) {
                    row[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&row);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_stack(bytes: &[u8]) -> Result<FrameStack> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != HOMF_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected \"HOMF\"".into(),
        });
    }
    let version = c.u16("version")?;
    if version != HOMF_VERSION {
        return Err(Error::Format {
            offset: 4,
            reason: format!("unsupported version {version}"),
        });
    }
    let width = c.u16("width")? as usize;
    let height = c.u16("height")? as usize;
    let count = c.u32("frame count")? as usize;
    let seed = c.u64("seed")?;
    let settings_len = c.u32("settings length")? as usize;
    let settings_offset = c.pos as u64;
    let settings: Settings =
        serde_json::from_slice(c.take(settings_len, "settings")?).map_err(|e| Error::Format {
            offset: settings_offset,
            reason: format!("invalid settings block: {e}"),
        })?;
    let cam = settings.camera;
    if cam.width != width || cam.height != height {
        return Err(Error::Format {
            offset: settings_offset,
            reason: format!(
                "settings camera is {}x{} but header says {width}x{height}",
                cam.width, cam.height
            ),
        });
    }
    if let Some(ix) = &settings.frame_indices {
        if ix.len() != count {
            return Err(Error::Format {
                offset: settings_offset,
                reason: "frame index list length differs from frame count".into(),
            });
        }
    }
    let rb = row_bytes(width);
    let mut frames = Vec::with_capacity(count);
    for k in 0..count {
        let index = match &settings.frame_indices {
            Some(ix) => ix[k],
            None => settings.first_frame_index.wrapping_add(k as u64),
        };
        let mut frame = Frame::new(width, height, index);
        let data = c.take(rb * height, &format!("frame {k}"))?;
        for y in 0..height {
            let row = &data[y * rb..(y + 1) * rb];
            for x in 0..width {
                if row[x / 8] & (0x80 >> (x % 8)) != 0 {
                    frame.set(x, y);
                }
            }
        }
        frames.push(frame);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos as u64,
            reason: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    FrameStack::new(
        cam,
        frames,
        AcquisitionMeta {
            seed,
            setting: settings.setting,
            label: settings.label,
        },
    )
}

/// Writes `stack` to `path` through a temporary file and a rename.
pub fn write_stack(stack: &FrameStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_stack(stack)?;
    let tmp = path.with_extension("homf.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: impl AsRef<Path>) -> Result<FrameStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_camera(width: usize, height: usize) -> CameraSpec {
        CameraSpec {
            width,
            height,
            ..Default::default()
        }
    }

    #[test]
    fn msb_is_leftmost_pixel() {
        let f = Frame::from_values(8, 1, 0, &[1, 0, 0, 0, 0, 0, 0, 1]).unwrap();
        let stack =
            FrameStack::new(tiny_camera(8, 1), vec![f], AcquisitionMeta::default()).unwrap();
        let bytes = encode_stack(&stack).unwrap();
        assert_eq!(*bytes.last().unwrap(), 0b1000_0001);
    }

    #[test]
    fn rows_are_padded_to_bytes() {
        let f = Frame::from_values(
            10,
            2,
            0,
            &[0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        )
        .unwrap();
        let stack =
            FrameStack::new(tiny_camera(10, 2), vec![f], AcquisitionMeta::default()).unwrap();
        let bytes = encode_stack(&stack).unwrap();
        let body = &bytes[bytes.len() - 4..];
        assert_eq!(body, &[0x00, 0b0100_0000, 0b1000_0000, 0x00]);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let stack = FrameStack::new(
            tiny_camera(8, 1),
            vec![Frame::new(8, 1, 0)],
            AcquisitionMeta::default(),
        )
        .unwrap();
        let mut bytes = encode_stack(&stack).unwrap();
        bytes[0] = b'X';
        match decode_stack(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("expected format error at 0, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_and_truncation_report_offsets() {
        let stack = FrameStack::new(
            tiny_camera(8, 2),
            vec![Frame::new(8, 2, 0)],
            AcquisitionMeta::default(),
        )
        .unwrap();
        let bytes = encode_stack(&stack).unwrap();
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(
            decode_stack(&v),
            Err(Error::Format { offset: 4, .. })
        ));
        let cut = &bytes[..bytes.len() - 1];
        match decode_stack(cut) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            decode_stack(&bytes[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_stack(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn non_consecutive_indices_survive() {
        let frames = vec![Frame::new(4, 4, 7), Frame::new(4, 4, 3)];
        let stack = FrameStack::new(tiny_camera(4, 4), frames, AcquisitionMeta::default()).unwrap();
        let back = decode_stack(&encode_stack(&stack).unwrap()).unwrap();
        assert_eq!(back, stack);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            width in 1usize..20,
            height in 1usize..6,
            n in 0usize..4,
            seed in any::<u64>(),
            first in 0u64..1000,
            bits in proptest::collection::vec(any::<bool>(), 20 * 6 * 4),
            dt in -500.0f64..500.0,
        ) {
            let frames = (0..n)
                .map(|k| {
                    let vals: Vec<u8> = (0..width * height).map(|i| bits[k * width * height + i] as u8).collect();
                    Frame::from_values(width, height, first + k as u64, &vals).unwrap()
                })
                .collect();
            let meta = AcquisitionMeta {
                seed,
                setting: Some(InterferometerSetting { delta_t: dt, ..Default::default() }),
                label: "prop".into(),
            };
            let stack = FrameStack::new(tiny_camera(width, height), frames, meta).unwrap();
            let bytes = encode_stack(&stack).unwrap();
            let back = decode_stack(&bytes).unwrap();
            prop_assert_eq!(&back, &stack);
            prop_assert_eq!(encode_stack(&back).unwrap(), bytes);
        }
    }
}
