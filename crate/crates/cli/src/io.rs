//! Signal files: CSV with a header row, or WAV (PCM 16/24/32-bit and 32-bit
//! float). Writing WAV always uses 32-bit float.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use convbss::MultichannelSignal;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Rate written to WAV files when the signal carries none.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Wav,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Wav => "wav",
        }
    }

    fn detect(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("wav") => Ok(Format::Wav),
            _ => bail!("cannot tell the format of {} (expected .csv or .wav)", path.display()),
        }
    }
}

pub fn signal_path(dir: &Path, stem: &str, format: Format) -> PathBuf {
    dir.join(format!("{stem}.{}", format.extension()))
}

pub fn read_signal(path: &Path) -> Result<MultichannelSignal> {
    match Format::detect(path)? {
        Format::Csv => read_csv(path),
        Format::Wav => read_wav(path),
    }
    .with_context(|| format!("reading {}", path.display()))
}

/// Reads several files and stacks their channels in order.
pub fn read_signals(paths: &[PathBuf]) -> Result<MultichannelSignal> {
    ensure!(!paths.is_empty(), "no input files given");
    let signals = paths.iter().map(|p| read_signal(p)).collect::<Result<Vec<_>>>()?;
    let len = signals[0].len();
    for (s, p) in signals.iter().zip(paths) {
        ensure!(s.len() == len, "{} has {} samples, expected {len}", p.display(), s.len());
    }
    let rows: Vec<Vec<f64>> = signals.iter().flat_map(|s| s.to_rows()).collect();
    let rate = signals[0].sample_rate();
    Ok(MultichannelSignal::from_rows(&rows)?.with_sample_rate(rate))
}

pub fn write_signal(path: &Path, signal: &MultichannelSignal, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(path, signal),
        Format::Wav => write_wav(path, signal),
    }
    .with_context(|| format!("writing {}", path.display()))
}

fn read_csv(path: &Path) -> Result<MultichannelSignal> {
    let mut reader = csv::Reader::from_path(path)?;
    let channels = reader.headers()?.len();
    ensure!(channels > 0, "header row names no channels");
    let mut columns = vec![Vec::new(); channels];
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("row {}: `{field}` is not a number", line + 2))?;
            columns[c].push(v);
        }
    }
    Ok(MultichannelSignal::from_rows(&columns)?)
}

fn write_csv(path: &Path, signal: &MultichannelSignal) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record((0..signal.channels()).map(|c| format!("ch{c}")))?;
    let x = signal.samples();
    for k in 0..signal.len() {
        // `{}` prints the shortest string that parses back to the same f64.
        writer.write_record((0..signal.channels()).map(|c| format!("{}", x[(c, k)])))?;
    }
    writer.flush()?;
    Ok(())
}

fn read_wav(path: &Path) -> Result<MultichannelSignal> {
    let mut reader = hound::WavReader::new(BufReader::new(File::open(path)?))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let flat: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            ensure!(spec.bits_per_sample == 32, "unsupported float width {}", spec.bits_per_sample);
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(i32::from(spec.bits_per_sample) - 1);
            reader.samples::<i32>().map(|s| s.map(|v| f64::from(v) / scale)).collect::<Result<_, _>>()?
        }
    };
    ensure!(channels > 0 && flat.len().is_multiple_of(channels), "truncated interleaved data");
    let len = flat.len() / channels;
    let samples = DMatrix::from_fn(channels, len, |c, k| flat[k * channels + c]);
    Ok(MultichannelSignal::new(samples)?.with_sample_rate(Some(spec.sample_rate)))
}

fn write_wav(path: &Path, signal: &MultichannelSignal) -> Result<()> {
    let channels = u16::try_from(signal.channels()).context("too many channels for WAV")?;
    let spec = hound::WavSpec {
        channels,
        sample_rate: signal.sample_rate().unwrap_or(DEFAULT_SAMPLE_RATE),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::new(BufWriter::new(File::create(path)?), spec)?;
    let x = signal.samples();
    for k in 0..signal.len() {
        for c in 0..signal.channels() {
            writer.write_sample(x[(c, k)] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    ensure!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}
