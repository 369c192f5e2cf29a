//! PTAG time-tag files and JSON run configuration.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! "PTAG" | u16 version (1) | u32 header_len | header_len bytes of JSON
//! then per tag: u64 time_ps | u8 channel (0 signal, 1 idler)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{CoincidenceWindow, DetectorParams, SourceParams};
use crate::simulator::{Channel, Engine, PulseTrainConfig, RunConfig, TimeTag, SEGMENT_PULSES};
use crate::sweep::{log_grid, MonteCarloSettings, PowerMap, SweepInput, SweepMode, SweepSetup};
use crate::tia::{CarConfig, TiaConfig};

pub const MAGIC: [u8; 4] = *b"PTAG";
pub const FORMAT_VERSION: u16 = 1;
/// Magic, version and header length.
pub const PREAMBLE_BYTES: u64 = 10;
pub const RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagFileHeader {
    pub format_version: u16,
    pub rep_rate_hz: f64,
    pub n_pulses: u64,
    pub master_seed: u64,
    /// Source, detector and pulse-train parameters of the run.
    pub parameters: Value,
    pub created_by: String,
}

impl TagFileHeader {
    pub fn new(rep_rate_hz: f64, n_pulses: u64, master_seed: u64, parameters: Value) -> Self {
        TagFileHeader {
            format_version: FORMAT_VERSION,
            rep_rate_hz,
            n_pulses,
            master_seed,
            parameters,
            created_by: concat!("pairsim ", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }

    /// Compact JSON; object keys come out sorted, so encoding is deterministic.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }
}

pub fn encode_record(tag: TimeTag) -> [u8; RECORD_BYTES] {
    let mut rec = [0u8; RECORD_BYTES];
    rec[..8].copy_from_slice(&tag.time_ps.to_le_bytes());
    rec[8] = tag.channel.id();
    rec
}

/// Streaming writer; rejects tags that go back in time.
pub struct TagWriter<W: Write> {
    inner: W,
    last: Option<u64>,
    offset: u64,
    written: u64,
}

impl<W: Write> TagWriter<W> {
    pub fn new(inner: W, header: &TagFileHeader) -> Result<Self> {
        Self::with_raw_header(inner, &header.to_bytes()?)
    }

    /// Write `header_json` verbatim (used to re-serialize a file byte for byte).
    pub fn with_raw_header(mut inner: W, header_json: &[u8]) -> Result<Self> {
        let len = u32::try_from(header_json.len()).map_err(|_| Error::Config("header longer than 4 GiB".into()))?;
        inner.write_all(&MAGIC)?;
        inner.write_all(&FORMAT_VERSION.to_le_bytes())?;
        inner.write_all(&len.to_le_bytes())?;
        inner.write_all(header_json)?;
        Ok(TagWriter {
            inner,
            last: None,
            offset: PREAMBLE_BYTES + len as u64,
            written: 0,
        })
    }

    pub fn push(&mut self, tag: TimeTag) -> Result<()> {
        if let Some(prev) = self.last.filter(|&p| tag.time_ps < p) {
            return Err(Error::Unsorted {
                offset: self.offset,
                time_ps: tag.time_ps,
                previous_ps: prev,
            });
        }
        self.inner.write_all(&encode_record(tag))?;
        self.last = Some(tag.time_ps);
        self.offset += RECORD_BYTES as u64;
        self.written += 1;
        Ok(())
    }

    pub fn tags_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn check_sorted(tags: &[TimeTag], header_len: u64) -> Result<()> {
    match tags.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        Some(i) => Err(Error::Unsorted {
            offset: PREAMBLE_BYTES + header_len + ((i + 1) * RECORD_BYTES) as u64,
            time_ps: tags[i + 1].time_ps,
            previous_ps: tags[i].time_ps,
        }),
        None => Ok(()),
    }
}

/// Write a whole tag file. Nothing is written if `tags` is unsorted.
pub fn write_tags(path: impl AsRef<Path>, header: &TagFileHeader, tags: &[TimeTag]) -> Result<()> {
    let path = path.as_ref();
    let json = header.to_bytes()?;
    check_sorted(tags, json.len() as u64)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = TagWriter::with_raw_header(BufWriter::new(file), &json).map_err(|e| with_path(e, path))?;
    for &t in tags {
        w.push(t)?;
    }
    w.finish().map_err(|e| with_path(e, path))?;
    Ok(())
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Stream(io) => Error::io(path, io),
        other => other,
    }
}

/// Reads as many bytes as are available up to `buf.len()`.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Streaming reader over the tag records of a PTAG stream.
///
/// Yields `Err` once on a malformed record and then stops.
pub struct TagReader<R: Read> {
    inner: R,
    header_json: Vec<u8>,
    offset: u64,
    last: Option<u64>,
    done: bool,
}

impl<R: Read> TagReader<R> {
    pub fn new(mut inner: R) -> Result<(TagFileHeader, Self)> {
        let mut magic = [0u8; 4];
        if read_full(&mut inner, &mut magic)? < 4 {
            return Err(Error::Truncated {
                offset: 0,
                what: "magic",
            });
        }
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let mut version = [0u8; 2];
        if read_full(&mut inner, &mut version)? < 2 {
            return Err(Error::Truncated {
                offset: 4,
                what: "version",
            });
        }
        let version = u16::from_le_bytes(version);
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mut len = [0u8; 4];
        if read_full(&mut inner, &mut len)? < 4 {
            return Err(Error::Truncated {
                offset: 6,
                what: "header length",
            });
        }
        let len = u32::from_le_bytes(len) as usize;
        let mut header_json = Vec::new();
        let got = (&mut inner).take(len as u64).read_to_end(&mut header_json)?;
        if got < len {
            return Err(Error::Truncated {
                offset: PREAMBLE_BYTES + got as u64,
                what: "header",
            });
        }
        let header: TagFileHeader = serde_json::from_slice(&header_json)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.format_version));
        }
        let reader = TagReader {
            inner,
            header_json,
            offset: PREAMBLE_BYTES + len as u64,
            last: None,
            done: false,
        };
        Ok((header, reader))
    }

    /// Header exactly as stored in the file.
    pub fn header_bytes(&self) -> &[u8] {
        &self.header_json
    }

    fn next_record(&mut self) -> Result<Option<TimeTag>> {
        let mut rec = [0u8; RECORD_BYTES];
        let n = read_full(&mut self.inner, &mut rec)?;
        if n == 0 {
            return Ok(None);
        }
        let offset = self.offset;
        if n < RECORD_BYTES {
            return Err(Error::Truncated { offset, what: "record" });
        }
        let time_ps = u64::from_le_bytes(rec[..8].try_into().expect("8 bytes"));
        let channel = Channel::from_id(rec[8]).ok_or(Error::UnknownChannel {
            offset,
            channel: rec[8],
        })?;
        if let Some(prev) = self.last.filter(|&p| time_ps < p) {
            return Err(Error::Unsorted {
                offset,
                time_ps,
                previous_ps: prev,
            });
        }
        self.last = Some(time_ps);
        self.offset += RECORD_BYTES as u64;
        Ok(Some(TimeTag { time_ps, channel }))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTag>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(t)) => Some(Ok(t)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Open a tag file for streaming.
pub fn read_tags(path: impl AsRef<Path>) -> Result<(TagFileHeader, TagReader<BufReader<File>>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    TagReader::new(BufReader::with_capacity(1 << 16, file)).map_err(|e| with_path(e, path))
}

/// Both detectors of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detectors {
    pub signal: DetectorParams,
    pub idler: DetectorParams,
}

impl Default for Detectors {
    fn default() -> Self {
        Detectors {
            signal: DetectorParams::preset_signal(),
            idler: DetectorParams::preset_idler(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub engine: Engine,
    pub block_size: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            engine: Engine::Direct,
            block_size: SEGMENT_PULSES,
        }
    }
}

impl RunSection {
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            block_size: self.block_size,
            engine: self.engine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub mode: SweepMode,
    pub points: Vec<SweepInput>,
    /// Pulse budget per point in Monte Carlo mode.
    pub n_pulses_per_point: u64,
}

impl Default for SweepSection {
    /// 16 powers, log spaced from 0.01 uW to 30 uW.
    fn default() -> Self {
        SweepSection {
            mode: SweepMode::Analytic,
            points: log_grid(0.01e-6, 30e-6, 16)
                .expect("valid grid")
                .into_iter()
                .map(SweepInput::at)
                .collect(),
            n_pulses_per_point: 100_000_000,
        }
    }
}

/// Complete run configuration; every section defaults to the built-in preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairsimConfig {
    pub source: SourceParams,
    pub detectors: Detectors,
    pub train: PulseTrainConfig,
    pub window: CoincidenceWindow,
    pub tia: TiaConfig,
    pub car: CarConfig,
    pub power_map: PowerMap,
    pub sweep: SweepSection,
    pub run: RunSection,
}

impl Default for PairsimConfig {
    fn default() -> Self {
        PairsimConfig {
            source: SourceParams::preset(0.12),
            detectors: Detectors::default(),
            train: PulseTrainConfig::preset(100_000_000),
            window: CoincidenceWindow::default(),
            tia: TiaConfig::default(),
            car: CarConfig::default(),
            power_map: PowerMap::default(),
            sweep: SweepSection::default(),
            run: RunSection::default(),
        }
    }
}

impl PairsimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PairsimConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.source.period_ps()?;
        self.detectors.signal.validate()?;
        self.detectors.idler.validate()?;
        self.train.validate()?;
        self.window.validate()?;
        self.tia.validate()?;
        self.car.validate()?;
        self.power_map.validate()?;
        self.run.run_config().validate()
    }

    /// Parameter snapshot stored in tag-file headers.
    pub fn snapshot(&self) -> Value {
        serde_json::json!({
            "source": self.source,
            "detectors": self.detectors,
            "train": self.train,
        })
    }

    pub fn tag_header(&self) -> TagFileHeader {
        TagFileHeader::new(
            self.source.rep_rate_hz,
            self.train.n_pulses,
            self.run.seed,
            self.snapshot(),
        )
    }

    pub fn sweep_setup(&self) -> SweepSetup {
        SweepSetup {
            source: self.source,
            power_map: self.power_map,
            signal: self.detectors.signal,
            idler: self.detectors.idler,
            window: self.window,
        }
    }

    pub fn monte_carlo(&self) -> MonteCarloSettings {
        MonteCarloSettings {
            train: PulseTrainConfig {
                n_pulses: self.sweep.n_pulses_per_point,
                ..self.train
            },
            seed: self.run.seed,
            engine: self.run.engine,
            tia: self.tia,
            car: self.car,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> TagFileHeader {
        PairsimConfig::default().tag_header()
    }

    fn encode(tags: &[TimeTag]) -> Vec<u8> {
        let mut w = TagWriter::new(Vec::new(), &header()).unwrap();
        for &t in tags {
            w.push(t).unwrap();
        }
        w.finish().unwrap()
    }

    fn decode(bytes: &[u8]) -> Result<(TagFileHeader, Vec<TimeTag>)> {
        let (h, r) = TagReader::new(bytes)?;
        Ok((h, r.collect::<Result<Vec<_>>>()?))
    }

    #[test]
    fn empty_file_layout() {
        let bytes = encode(&[]);
        let len = header().to_bytes().unwrap().len();
        assert_eq!(bytes.len(), 10 + len);
        assert_eq!(&bytes[..4], b"PTAG");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize, len);
    }

    #[test]
    fn record_layout() {
        let rec = encode_record(TimeTag::new(256, Channel::Signal));
        assert_eq!(rec, [0x00, 0x01, 0, 0, 0, 0, 0, 0, 0]);
        let rec = encode_record(TimeTag::new(1, Channel::Idler));
        assert_eq!(rec, [1, 0, 0, 0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn roundtrip() {
        let tags = vec![
            TimeTag::new(0, Channel::Idler),
            TimeTag::new(0, Channel::Signal),
            TimeTag::new(99, Channel::Signal),
            TimeTag::new(u64::MAX, Channel::Idler),
        ];
        let bytes = encode(&tags);
        let (h, back) = decode(&bytes).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, tags);
        let cfg: PairsimConfig = serde_json::from_value(serde_json::json!({
            "source": h.parameters["source"],
            "detectors": h.parameters["detectors"],
            "train": h.parameters["train"],
        }))
        .unwrap();
        assert_eq!(cfg.source, PairsimConfig::default().source);
        assert_eq!(cfg.detectors, PairsimConfig::default().detectors);
        assert_eq!(cfg.train, PairsimConfig::default().train);
    }

    #[test]
    fn unsorted_write_rejected_before_writing() {
        let dir = std::env::temp_dir().join(format!("pairsim-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("unsorted.ptag");
        let tags = [TimeTag::new(10, Channel::Signal), TimeTag::new(5, Channel::Idler)];
        let err = write_tags(&path, &header(), &tags).unwrap_err();
        assert!(matches!(
            err,
            Error::Unsorted {
                time_ps: 5,
                previous_ps: 10,
                ..
            }
        ));
        assert!(!path.exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_inputs() {
        let good = encode(&[TimeTag::new(5, Channel::Signal), TimeTag::new(7, Channel::Idler)]);
        let records_at = good.len() as u64 - 18;

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bad), Err(Error::BadMagic { found }) if &found == b"XXXX"));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedVersion(2))));

        let bad = &good[..good.len() - 5];
        match decode(bad) {
            Err(Error::Truncated { offset, what: "record" }) => assert_eq!(offset, records_at + 9),
            other => panic!("{other:?}"),
        }

        let mut bad = good.clone();
        let last = bad.len() - 1;
        bad[last] = 7;
        assert!(matches!(decode(&bad), Err(Error::UnknownChannel { channel: 7, .. })));

        let mut bad = good.clone();
        bad[records_at as usize + 9] = 1;
        assert!(matches!(
            decode(&bad),
            Err(Error::Unsorted {
                time_ps: 1,
                previous_ps: 5,
                ..
            })
        ));

        assert!(matches!(decode(&good[..7]), Err(Error::Truncated { .. })));
        assert!(matches!(
            decode(&good[..20]),
            Err(Error::Truncated { what: "header", .. })
        ));

        let mut bad = good.clone();
        bad[10] = b'[';
        assert!(matches!(decode(&bad), Err(Error::Header(_))));
    }

    #[test]
    fn reader_stops_after_error() {
        let good = encode(&[TimeTag::new(5, Channel::Signal), TimeTag::new(7, Channel::Idler)]);
        let (_, mut r) = TagReader::new(&good[..good.len() - 2]).unwrap();
        assert!(r.next().unwrap().is_ok());
        assert!(r.next().unwrap().is_err());
        assert!(r.next().is_none());
    }

    #[test]
    fn raw_header_rewrite_is_exact() {
        let tags: Vec<TimeTag> = (0..1000u64)
            .map(|k| TimeTag::new(k * 37, Channel::from_id((k % 2) as u8).unwrap()))
            .collect();
        let bytes = encode(&tags);
        let (_, r) = TagReader::new(bytes.as_slice()).unwrap();
        let raw = r.header_bytes().to_vec();
        let mut w = TagWriter::with_raw_header(Vec::new(), &raw).unwrap();
        for t in r {
            w.push(t.unwrap()).unwrap();
        }
        assert_eq!(w.finish().unwrap(), bytes);
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = PairsimConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PairsimConfig::default());
        let cfg =
            PairsimConfig::from_json(r#"{"source": {"mu": 2e-4, "rep_rate_hz": 1e10}, "run": {"seed": 9}}"#).unwrap();
        assert_eq!(cfg.source.mu, 2e-4);
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.run.engine, Engine::Direct);
        let json = serde_json::to_string(&PairsimConfig::default()).unwrap();
        assert_eq!(PairsimConfig::from_json(&json).unwrap(), PairsimConfig::default());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            PairsimConfig::from_json(r#"{"bogus": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PairsimConfig::from_json(r#"{"detectors": {"signal": {"efficiency": 1.5}}}"#),
            Err(Error::InvalidParameter { .. })
        ));
        assert!(matches!(
            PairsimConfig::from_json(r#"{"source": {"mu": 0.1, "rep_rate_hz": 3e11}}"#),
            Err(Error::InvalidParameter {
                name: "rep_rate_hz",
                ..
            })
        ));
        assert!(matches!(
            PairsimConfig::load("/nonexistent/pairsim.json"),
            Err(Error::Io { .. })
        ));
    }
}
