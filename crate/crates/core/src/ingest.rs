//! Charging-transaction and station-location ingestion, one-hot feature
//! encoding, seeded train/test splitting and a synthetic data generator.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveTime, Timelike};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const DAYS_PER_WEEK: usize = 7;
pub const HOURS_PER_DAY: usize = 24;

/// Ordered list of known charging stations. The order fixes the column
/// position of each station in the one-hot encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationRegistry {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl StationRegistry {
    pub fn new<I, S>(ids: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let ids: Vec<String> = ids.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate station id `{id}`"
                )));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn from_locations(locations: &[StationLocation]) -> Result<Self> {
        Self::new(locations.iter().map(|l| l.cs_id.clone()))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub cs_id: String,
    pub tx_id: String,
    pub date: NaiveDate,
    /// Start time of day at minute resolution.
    pub start_time: NaiveTime,
    pub energy_kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationLocation {
    pub cs_id: String,
    pub latitude: f64,
    pub longitude: f64,
}

/// Column positions of the three one-hot blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub n_stations: usize,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.n_stations + DAYS_PER_WEEK + HOURS_PER_DAY
    }

    pub fn station_col(&self, station: usize) -> usize {
        station
    }

    pub fn day_col(&self, day: usize) -> usize {
        self.n_stations + day
    }

    pub fn hour_col(&self, hour: usize) -> usize {
        self.n_stations + DAYS_PER_WEEK + hour
    }

    /// Column ranges of the station, day-of-week and hour-of-day blocks.
    pub fn blocks(&self) -> [std::ops::Range<usize>; 3] {
        let s = self.n_stations;
        [0..s, s..s + DAYS_PER_WEEK, s + DAYS_PER_WEEK..self.width()]
    }
}

/// One-hot feature matrix with kWh labels.
///
/// `stations[n]` is the registry index of row `n`'s station and is used to
/// shard the data per charging station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub features: Array2<f64>,
    pub labels: Array1<f64>,
    pub layout: FeatureLayout,
    pub stations: Vec<usize>,
}

impl EncodedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    /// Rows selected by `idx`, in the given order.
    pub fn select(&self, idx: &[usize]) -> EncodedDataset {
        EncodedDataset {
            features: self.features.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
            layout: self.layout,
            stations: idx.iter().map(|&i| self.stations[i]).collect(),
        }
    }

    /// Row-wise concatenation of datasets sharing one layout.
    pub fn concat(parts: &[&EncodedDataset]) -> Result<EncodedDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Empty("no datasets to concatenate".into()))?;
        if parts.iter().any(|p| p.layout != first.layout) {
            return Err(Error::Shape(
                "datasets have different feature layouts".into(),
            ));
        }
        let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
        let labels: Vec<_> = parts.iter().map(|p| p.labels.view()).collect();
        Ok(EncodedDataset {
            features: ndarray::concatenate(Axis(0), &views)
                .map_err(|e| Error::Shape(e.to_string()))?,
            labels: ndarray::concatenate(Axis(0), &labels)
                .map_err(|e| Error::Shape(e.to_string()))?,
            layout: first.layout,
            stations: parts
                .iter()
                .flat_map(|p| p.stations.iter().copied())
                .collect(),
        })
    }

    /// Splits rows by station, in registry order. Stations without rows are
    /// omitted.
    pub fn shard_by_station(&self) -> Vec<(usize, EncodedDataset)> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); self.layout.n_stations];
        for (n, &s) in self.stations.iter().enumerate() {
            rows[s].push(n);
        }
        rows.into_iter()
            .enumerate()
            .filter(|(_, r)| !r.is_empty())
            .map(|(s, r)| (s, self.select(&r)))
            .collect()
    }
}

/// Maps source-file column names onto the canonical transaction fields.
///
/// The default is the canonical `cs_id,tx_id,date,time,energy_kwh` schema;
/// [`ColumnMap::dundee`] adapts the Dundee open-data charging export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub cs_id: String,
    pub tx_id: String,
    pub date: String,
    pub time: String,
    pub energy_kwh: String,
    /// chrono format strings tried in order.
    pub date_formats: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            cs_id: "cs_id".into(),
            tx_id: "tx_id".into(),
            date: "date".into(),
            time: "time".into(),
            energy_kwh: "energy_kwh".into(),
            date_formats: vec!["%Y-%m-%d".into()],
        }
    }
}

impl ColumnMap {
    pub fn dundee() -> Self {
        Self {
            cs_id: "CP ID".into(),
            tx_id: "Charging event".into(),
            date: "Start Date".into(),
            time: "Start Time".into(),
            energy_kwh: "Total kWh".into(),
            date_formats: vec!["%Y-%m-%d".into(), "%d/%m/%Y".into()],
        }
    }
}

fn parse_time(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M:%S"))
        .ok()
        .and_then(|t| t.with_second(0))
}

/// Reads a transactions CSV using the canonical schema.
pub fn parse_transactions(
    path: impl AsRef<Path>,
    registry: &StationRegistry,
) -> Result<Vec<TransactionRecord>> {
    parse_transactions_with(path, registry, &ColumnMap::default())
}

pub fn parse_transactions_with(
    path: impl AsRef<Path>,
    registry: &StationRegistry,
    columns: &ColumnMap,
) -> Result<Vec<TransactionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (c_cs, c_tx, c_date, c_time, c_kwh) = (
        col(&columns.cs_id)?,
        col(&columns.tx_id)?,
        col(&columns.date)?,
        col(&columns.time)?,
        col(&columns.energy_kwh)?,
    );

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let bad = |message: String| Error::MalformedRow { row, message };
        let field = |c: usize| rec.get(c).ok_or_else(|| bad(format!("missing field {c}")));

        let cs_id = field(c_cs)?.to_string();
        if registry.index_of(&cs_id).is_none() {
            return Err(bad(format!("unknown station `{cs_id}`")));
        }
        let raw_date = field(c_date)?;
        let date = columns
            .date_formats
            .iter()
            .find_map(|f| NaiveDate::parse_from_str(raw_date, f).ok())
            .ok_or_else(|| bad(format!("bad date `{raw_date}`")))?;
        let raw_time = field(c_time)?;
        let start_time =
            parse_time(raw_time).ok_or_else(|| bad(format!("bad time `{raw_time}`")))?;
        let raw_kwh = field(c_kwh)?;
        let energy_kwh: f64 = raw_kwh
            .parse()
            .map_err(|_| bad(format!("bad energy `{raw_kwh}`")))?;
        if !energy_kwh.is_finite() || energy_kwh < 0.0 {
            return Err(bad(format!("energy must be nonnegative, got {energy_kwh}")));
        }
        out.push(TransactionRecord {
            cs_id,
            tx_id: field(c_tx)?.to_string(),
            date,
            start_time,
            energy_kwh,
        });
    }
    Ok(out)
}

pub fn parse_locations(path: impl AsRef<Path>) -> Result<Vec<StationLocation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in reader.deserialize::<StationLocation>().enumerate() {
        let loc = rec?;
        if !(-90.0..=90.0).contains(&loc.latitude) || !(-180.0..=180.0).contains(&loc.longitude) {
            return Err(Error::MalformedRow {
                row: i + 1,
                message: format!("coordinates out of range for `{}`", loc.cs_id),
            });
        }
        out.push(loc);
    }
    Ok(out)
}

pub fn write_transactions(path: impl AsRef<Path>, records: &[TransactionRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "cs_id,tx_id,date,time,energy_kwh").map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:.3}",
            r.cs_id,
            r.tx_id,
            r.date.format("%Y-%m-%d"),
            r.start_time.format("%H:%M"),
            r.energy_kwh
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_locations(path: impl AsRef<Path>, locations: &[StationLocation]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "cs_id,latitude,longitude").map_err(io)?;
    for l in locations {
        writeln!(w, "{},{:.6},{:.6}", l.cs_id, l.latitude, l.longitude).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Day-of-week index with Monday = 0.
pub fn day_index(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

/// One-hot encodes station, day-of-week and hour-of-day. Minutes are
/// discarded.
pub fn encode(records: &[TransactionRecord], registry: &StationRegistry) -> Result<EncodedDataset> {
    let layout = FeatureLayout {
        n_stations: registry.len(),
    };
    let mut features = Array2::<f64>::zeros((records.len(), layout.width()));
    let mut labels = Array1::<f64>::zeros(records.len());
    let mut stations = Vec::with_capacity(records.len());
    for (n, r) in records.iter().enumerate() {
        let s = registry
            .index_of(&r.cs_id)
            .ok_or_else(|| Error::MalformedRow {
                row: n + 1,
                message: format!("unknown station `{}`", r.cs_id),
            })?;
        features[[n, layout.station_col(s)]] = 1.0;
        features[[n, layout.day_col(day_index(r.date))]] = 1.0;
        features[[n, layout.hour_col(r.start_time.hour() as usize)]] = 1.0;
        labels[n] = r.energy_kwh;
        stations.push(s);
    }
    Ok(EncodedDataset {
        features,
        labels,
        layout,
        stations,
    })
}

/// Seeded shuffle followed by a cut at `floor(ratio * N)`.
pub fn split(
    dataset: &EncodedDataset,
    ratio: f64,
    seed: u64,
) -> Result<(EncodedDataset, EncodedDataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0,1), got {ratio}"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed, "split", &[]));
    // guard against 0.29 * 100 = 28.999...
    let n_train = ((ratio * n as f64) + 1e-9).floor() as usize;
    Ok((
        dataset.select(&perm[..n_train]),
        dataset.select(&perm[n_train..]),
    ))
}

/// Latitude/longitude rectangle for synthetic station placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for LocationBox {
    /// Roughly the city of Dundee.
    fn default() -> Self {
        Self {
            lat_min: 56.44,
            lat_max: 56.50,
            lon_min: -3.05,
            lon_max: -2.90,
        }
    }
}

fn hour_weight(h: usize) -> f64 {
    // bimodal arrivals: morning and late afternoon
    let h = h as f64;
    0.15 + (-((h - 8.5) / 2.5).powi(2)).exp() + 1.2 * (-((h - 17.5) / 3.0).powi(2)).exp()
}

/// Reproducible desk-scale transactions and locations.
///
/// Stations sit in two geographic groups inside `bbox`. Each station has its
/// own base energy level and hour-of-day profile, so demand is learnable
/// from the one-hot features.
pub fn synth_generate(
    seed: u64,
    n_stations: usize,
    n_tx: usize,
    bbox: LocationBox,
) -> Result<(Vec<TransactionRecord>, Vec<StationLocation>)> {
    if n_stations == 0 || n_tx == 0 {
        return Err(Error::InvalidArgument(
            "n_stations and n_tx must be at least 1".into(),
        ));
    }
    let mut rng = seed::rng(seed, "synth", &[]);
    let groups = [(0.3, 0.3), (0.7, 0.75)];
    let lat_span = bbox.lat_max - bbox.lat_min;
    let lon_span = bbox.lon_max - bbox.lon_min;

    let mut locations = Vec::with_capacity(n_stations);
    let mut base = Vec::with_capacity(n_stations);
    let mut peak_shift = Vec::with_capacity(n_stations);
    for s in 0..n_stations {
        let (gy, gx) = groups[s % 2];
        let jy: f64 = rng.random_range(-0.12..0.12);
        let jx: f64 = rng.random_range(-0.12..0.12);
        locations.push(StationLocation {
            cs_id: format!("CS{:02}", s + 1),
            latitude: bbox.lat_min + lat_span * (gy + jy).clamp(0.0, 1.0),
            longitude: bbox.lon_min + lon_span * (gx + jx).clamp(0.0, 1.0),
        });
        // the two groups differ in typical session size
        let level = if s % 2 == 0 { 8.0 } else { 14.0 };
        base.push(level + rng.random_range(0.0..6.0));
        peak_shift.push(rng.random_range(-2.0..2.0));
    }

    let cum: Vec<f64> = (0..HOURS_PER_DAY)
        .scan(0.0, |acc, h| {
            *acc += hour_weight(h);
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap_or(&1.0);
    let noise = Normal::new(0.0, 2.0).expect("valid normal");
    let start = NaiveDate::from_ymd_opt(2017, 9, 1).expect("valid date");

    let mut records = Vec::with_capacity(n_tx);
    for t in 0..n_tx {
        // round-robin guarantees every station appears
        let s = if t < n_stations {
            t
        } else {
            rng.random_range(0..n_stations)
        };
        let date = start + Duration::days(rng.random_range(0..365));
        let u: f64 = rng.random_range(0.0..total);
        let hour = cum.iter().position(|&c| u < c).unwrap_or(HOURS_PER_DAY - 1);
        let minute: u32 = rng.random_range(0..60);
        let day = day_index(date);
        let weekend = if day >= 5 { 0.75 } else { 1.0 };
        let shape =
            1.0 + 0.45 * ((hour as f64 - 12.0 - peak_shift[s]) * std::f64::consts::PI / 12.0).cos();
        let mean = base[s] * shape * weekend;
        let kwh = (mean + noise.sample(&mut rng)).max(0.1);
        records.push(TransactionRecord {
            cs_id: locations[s].cs_id.clone(),
            tx_id: format!("TX{:07}", t + 1),
            date,
            start_time: NaiveTime::from_hms_opt(hour as u32, minute, 0).expect("valid time"),
            // quantize to what the CSV writer emits so files round-trip exactly
            energy_kwh: (kwh * 1000.0).round() / 1000.0,
        });
    }
    Ok((records, locations))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry(n: usize) -> StationRegistry {
        StationRegistry::new((1..=n).map(|i| format!("S{i}"))).unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn record(cs: &str, date: (i32, u32, u32), hour: u32, kwh: f64) -> TransactionRecord {
        TransactionRecord {
            cs_id: cs.into(),
            tx_id: "t".into(),
            date: NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(),
            start_time: NaiveTime::from_hms_opt(hour, 0, 0).unwrap(),
            energy_kwh: kwh,
        }
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = write_tmp("cs_id,tx_id,date,time,energy_kwh\n");
        assert!(parse_transactions(f.path(), &registry(2))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn negative_energy_names_row() {
        let f = write_tmp("cs_id,tx_id,date,time,energy_kwh\nS1,a,2018-01-02,10:15,4.0\nS2,b,2018-01-02,11:00,-3.2\n");
        match parse_transactions(f.path(), &registry(2)) {
            Err(Error::MalformedRow { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rows_keep_file_order() {
        let f = write_tmp("cs_id,tx_id,date,time,energy_kwh\nS2,a,2018-01-02,10:15,4.0\nS1,b,2018-01-03,23:59,7.5\n");
        let recs = parse_transactions(f.path(), &registry(2)).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].tx_id, "a");
        assert_eq!(recs[1].cs_id, "S1");
        assert_eq!(
            recs[1].start_time,
            NaiveTime::from_hms_opt(23, 59, 0).unwrap()
        );
    }

    #[test]
    fn unknown_station_and_bad_date_rejected() {
        let f = write_tmp("cs_id,tx_id,date,time,energy_kwh\nS9,a,2018-01-02,10:15,4.0\n");
        assert!(matches!(
            parse_transactions(f.path(), &registry(2)),
            Err(Error::MalformedRow { row: 1, .. })
        ));
        let f = write_tmp("cs_id,tx_id,date,time,energy_kwh\nS1,a,2018-13-02,10:15,4.0\n");
        assert!(matches!(
            parse_transactions(f.path(), &registry(2)),
            Err(Error::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn missing_file_and_missing_column() {
        assert!(matches!(
            parse_transactions("/nonexistent/x.csv", &registry(1)),
            Err(Error::Io { .. })
        ));
        let f = write_tmp("cs_id,tx_id,date,energy_kwh\n");
        assert!(matches!(
            parse_transactions(f.path(), &registry(1)),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn dundee_header_mapping() {
        let f = write_tmp(
            "Charging event,CP ID,Connector,Start Date,Start Time,End Date,End Time,Total kWh,Cost,Site,Group,Model\n\
             1001,S1,1,05/03/2018,09:41,05/03/2018,10:30,6.2,0,x,y,z\n",
        );
        let recs = parse_transactions_with(f.path(), &registry(1), &ColumnMap::dundee()).unwrap();
        assert_eq!(recs[0].date, NaiveDate::from_ymd_opt(2018, 3, 5).unwrap());
        assert_eq!(recs[0].energy_kwh, 6.2);
    }

    #[test]
    fn encode_places_ones_in_each_block() {
        let reg = registry(58);
        // 2018-01-02 is a Tuesday
        let ds = encode(&[record("S7", (2018, 1, 2), 13, 5.0)], &reg).unwrap();
        assert_eq!(ds.width(), 89);
        let ones: Vec<usize> = ds
            .features
            .row(0)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == 1.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![6, 58 + 1, 58 + 7 + 13]);
        assert_eq!(ds.labels[0], 5.0);
    }

    #[test]
    fn encode_single_station_width() {
        let ds = encode(&[record("S1", (2018, 1, 7), 0, 1.0)], &registry(1)).unwrap();
        assert_eq!(ds.width(), 32);
        let a = encode(
            &[
                record("S1", (2018, 1, 7), 0, 1.0),
                record("S1", (2018, 1, 7), 0, 1.0),
            ],
            &registry(1),
        )
        .unwrap();
        assert_eq!(a.features.row(0), a.features.row(1));
    }

    #[test]
    fn split_sizes_and_errors() {
        let recs: Vec<_> = (0..10)
            .map(|i| record("S1", (2018, 1, 1 + i), i, i as f64))
            .collect();
        let ds = encode(&recs, &registry(1)).unwrap();
        let (tr, te) = split(&ds, 0.8, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let (tr2, _) = split(&ds, 0.8, 3).unwrap();
        assert_eq!(tr, tr2);
        assert!(split(&ds, 1.0, 3).is_err());
        assert!(split(&ds, 0.0, 3).is_err());
    }

    #[test]
    fn synth_is_reproducible_and_covers_stations() {
        let (r1, l1) = synth_generate(11, 6, 600, LocationBox::default()).unwrap();
        let (r2, l2) = synth_generate(11, 6, 600, LocationBox::default()).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(l1, l2);
        assert_eq!(r1.len(), 600);
        let mut sums = HashMap::new();
        for r in &r1 {
            *sums.entry(r.cs_id.clone()).or_insert(0.0) += r.energy_kwh;
        }
        assert_eq!(sums.len(), 6);
        assert!(sums.values().all(|&s| s > 0.0));
        let b = LocationBox::default();
        assert!(l1
            .iter()
            .all(|l| (b.lat_min..=b.lat_max).contains(&l.latitude)
                && (b.lon_min..=b.lon_max).contains(&l.longitude)));
        assert!(synth_generate(1, 0, 10, b).is_err());
    }

    #[test]
    fn synth_files_round_trip() {
        let (recs, locs) = synth_generate(5, 3, 50, LocationBox::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let tp = dir.path().join("tx.csv");
        let lp = dir.path().join("loc.csv");
        write_transactions(&tp, &recs).unwrap();
        write_locations(&lp, &locs).unwrap();
        let locs2 = parse_locations(&lp).unwrap();
        let reg = StationRegistry::from_locations(&locs2).unwrap();
        let recs2 = parse_transactions(&tp, &reg).unwrap();
        assert_eq!(recs, recs2);
    }
}
