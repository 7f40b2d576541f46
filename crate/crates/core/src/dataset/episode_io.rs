//! Episode directories.
//!
//! ```text
//! manifest.txt      version, intrinsics, fps, frame count, per-frame table
//! gaze.txt          frame x y z valid
//! controls.txt      frame steer throttle brake speed
//! extrinsics.txt    frame r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz
//! images/frame_NNNNNN.ppm
//! ```
//!
//! Floats are written in shortest round-trip form, so every numeric field
//! survives a save/load cycle bit for bit.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::image_io::{load_image, save_image};
use super::text::{read_table, write_table, Row};
use crate::attention::GazeRecord;
use crate::episode::{ActivityLabel, Episode, Frame};
use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, WorldPoint};
use crate::metrics::ControlSignal;
use crate::model::HighLevelCommand;

pub const EPISODE_FORMAT: &str = "drivegaze-episode";
pub const EPISODE_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.txt";
const GAZE: &str = "gaze.txt";
const CONTROLS: &str = "controls.txt";
const EXTRINSICS: &str = "extrinsics.txt";

const FRAME_HEADER: [&str; 4] = ["frame", "image", "command", "label"];
const GAZE_HEADER: [&str; 5] = ["frame", "x", "y", "z", "valid"];
const CONTROL_HEADER: [&str; 5] = ["frame", "steer", "throttle", "brake", "speed"];
const EXTRINSICS_HEADER: [&str; 13] = [
    "frame", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
];

pub fn image_name(frame: usize) -> String {
    format!("images/frame_{frame:06}.ppm")
}

pub fn format_gaze_line(r: &GazeRecord) -> String {
    let p = r.point;
    format!(
        "{} {:?} {:?} {:?} {}",
        r.frame_index,
        p.x(),
        p.y(),
        p.z(),
        r.valid as u8
    )
}

/// Parses one gaze log data line, e.g. `42 1.5 -0.25 12.0 1`.
pub fn parse_gaze_line(line: &str) -> Result<GazeRecord> {
    let text = format!("{}\n{line}\n", GAZE_HEADER.join(" "));
    let rows = read_table(&text, "gaze line", &GAZE_HEADER)?;
    gaze_from_row(&rows[0], "gaze line")
}

fn gaze_from_row(row: &Row, source: &str) -> Result<GazeRecord> {
    let valid = match row.fields[4] {
        "1" => true,
        "0" => false,
        v => {
            return Err(Error::parse(
                source,
                format!("line {}", row.line),
                format!("valid flag must be 0 or 1, found '{v}'"),
            ))
        }
    };
    Ok(GazeRecord {
        frame_index: row.parse(source, 0)?,
        point: WorldPoint::new(row.float(source, 1)?, row.float(source, 2)?, row.float(source, 3)?)?,
        valid,
    })
}

fn frame_index(row: &Row, source: &str, expected: usize) -> Result<()> {
    let i: usize = row.parse(source, 0)?;
    if i != expected {
        return Err(Error::parse(
            source,
            format!("line {}", row.line),
            format!("expected frame {expected}, found {i}"),
        ));
    }
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<(String, String)> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)?;
    Ok((text, path.display().to_string()))
}

/// Writes images and logs first and the manifest last.
pub fn save_episode(dir: &Path, episode: &Episode) -> Result<()> {
    episode.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    for (i, f) in episode.frames.iter().enumerate() {
        save_image(&dir.join(image_name(i)), &f.image)?;
    }
    let frames = episode.frames.iter().enumerate();
    fs::write(
        dir.join(GAZE),
        write_table(&GAZE_HEADER, frames.clone().map(|(_, f)| format_gaze_line(&f.gaze))),
    )?;
    fs::write(
        dir.join(CONTROLS),
        write_table(
            &CONTROL_HEADER,
            frames.clone().map(|(i, f)| {
                let c = f.control;
                format!("{i} {:?} {:?} {:?} {:?}", c.steer, c.throttle, c.brake, c.speed)
            }),
        ),
    )?;
    fs::write(
        dir.join(EXTRINSICS),
        write_table(
            &EXTRINSICS_HEADER,
            frames.clone().map(|(i, f)| {
                let r = f.extrinsics.rotation();
                let t = f.extrinsics.translation();
                let mut line = i.to_string();
                // transposing makes the column-major iterator walk rows
                for v in r.transpose().iter().chain(t.iter()) {
                    line.push_str(&format!(" {v:?}"));
                }
                line
            }),
        ),
    )?;
    let intr = &episode.intrinsics;
    let mut manifest = format!(
        "{EPISODE_FORMAT} {EPISODE_VERSION}\nintrinsics {:?} {} {}\nfps {:?}\nframes {}\n",
        intr.focal(),
        intr.width(),
        intr.height(),
        episode.fps,
        episode.len()
    );
    manifest.push_str(&write_table(
        &FRAME_HEADER,
        frames.map(|(i, f)| format!("{i} {} {} {}", image_name(i), f.command, f.label)),
    ));
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

struct Manifest {
    intrinsics: CameraIntrinsics,
    fps: f64,
    frames: Vec<(String, HighLevelCommand, ActivityLabel)>,
}

fn parse_manifest(text: &str, source: &str) -> Result<Manifest> {
    let err = |line: usize, msg: String| Error::parse(source, format!("line {line}"), msg);
    let head: Vec<&str> = text.lines().take(4).collect();
    if head.len() < 4 {
        return Err(err(head.len() + 1, "manifest header is incomplete".into()));
    }
    let fields = |i: usize, key: &str, n: usize| -> Result<Vec<&str>> {
        let f: Vec<&str> = head[i].split_whitespace().collect();
        if f.first() != Some(&key) || f.len() != n + 1 {
            return Err(err(i + 1, format!("expected '{key}' with {n} values")));
        }
        Ok(f[1..].to_vec())
    };
    let version = fields(0, EPISODE_FORMAT, 1)?[0]
        .parse::<u32>()
        .map_err(|e| err(1, e.to_string()))?;
    if version != EPISODE_VERSION {
        return Err(Error::Version {
            source_name: source.to_string(),
            found: version,
            expected: EPISODE_VERSION,
        });
    }
    let num = |line: usize, v: &str| -> Result<f64> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| err(line, format!("'{v}' is not a finite number")))
    };
    let int = |line: usize, v: &str| -> Result<u32> { v.parse::<u32>().map_err(|e| err(line, e.to_string())) };
    let intr = fields(1, "intrinsics", 3)?;
    let intrinsics = CameraIntrinsics::new(num(2, intr[0])?, int(2, intr[1])?, int(2, intr[2])?)?;
    let fps = num(3, fields(2, "fps", 1)?[0])?;
    let count = int(4, fields(3, "frames", 1)?[0])? as usize;

    let rest_start = head.iter().map(|l| l.len() + 1).sum::<usize>().min(text.len());
    let rows = read_table(&text[rest_start..], source, &FRAME_HEADER)?;
    if rows.len() != count {
        return Err(err(
            4,
            format!("manifest declares {count} frames but lists {}", rows.len()),
        ));
    }
    let frames = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let line = r.line + 4;
            let row = Row {
                line,
                fields: r.fields.clone(),
            };
            frame_index(&row, source, i)?;
            let command = r.fields[2].parse().map_err(|e: Error| err(line, e.to_string()))?;
            let label = r.fields[3].parse().map_err(|e: Error| err(line, e.to_string()))?;
            Ok((r.fields[1].to_string(), command, label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest {
        intrinsics,
        fps,
        frames,
    })
}

fn expect_rows(rows: &[Row], count: usize, source: &str) -> Result<()> {
    if rows.len() != count {
        return Err(Error::parse(
            source,
            "end of file",
            format!("expected {count} records, found {}", rows.len()),
        ));
    }
    Ok(())
}

pub fn load_episode(dir: &Path) -> Result<Episode> {
    let (text, source) = read(dir, MANIFEST)?;
    let manifest = parse_manifest(&text, &source)?;
    let n = manifest.frames.len();

    let (text, source) = read(dir, GAZE)?;
    let rows = read_table(&text, &source, &GAZE_HEADER)?;
    expect_rows(&rows, n, &source)?;
    let gaze = rows
        .iter()
        .map(|r| gaze_from_row(r, &source))
        .collect::<Result<Vec<_>>>()?;

    let (text, source) = read(dir, CONTROLS)?;
    let rows = read_table(&text, &source, &CONTROL_HEADER)?;
    expect_rows(&rows, n, &source)?;
    let controls = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            frame_index(r, &source, i)?;
            ControlSignal::new(
                r.float(&source, 1)?,
                r.float(&source, 2)?,
                r.float(&source, 3)?,
                r.float(&source, 4)?,
            )
            .map_err(|e| Error::parse(&source, format!("line {}", r.line), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let (text, source) = read(dir, EXTRINSICS)?;
    let rows = read_table(&text, &source, &EXTRINSICS_HEADER)?;
    expect_rows(&rows, n, &source)?;
    let extrinsics = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            frame_index(r, &source, i)?;
            let v = (1..13).map(|c| r.float(&source, c)).collect::<Result<Vec<_>>>()?;
            CameraExtrinsics::new(Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11]))
                .map_err(|e| Error::parse(&source, format!("line {}", r.line), e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut frames = Vec::with_capacity(n);
    for (i, ((name, command, label), (gaze, (control, extrinsics)))) in manifest
        .frames
        .into_iter()
        .zip(gaze.into_iter().zip(controls.into_iter().zip(extrinsics)))
        .enumerate()
    {
        let path = dir.join(&name);
        if !path.is_file() {
            return Err(Error::parse(
                dir.join(MANIFEST).display().to_string(),
                format!("frame {i}"),
                format!("referenced image {name} does not exist"),
            ));
        }
        frames.push(Frame {
            extrinsics,
            image: load_image(&path)?,
            gaze,
            control,
            command,
            label,
        });
    }
    let episode = Episode {
        intrinsics: manifest.intrinsics,
        fps: manifest.fps,
        frames,
    };
    episode.validate()?;
    Ok(episode)
}
