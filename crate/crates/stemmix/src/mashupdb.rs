//! Persistent store of analyzed stems with the query operations used by
//! mashup generation.
//!
//! A database is built once from a manifest of pre-separated stems, analyzed
//! (key and rhythm), and written to disk as a human-readable index file next
//! to the WAV tree. After build it is immutable.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{estimate_key, estimate_rhythm, key_distance, KeyEstimate, Mode};
use crate::signal::{load_audio, resample, AudioClip, ENGINE_RATE};
use crate::{Error, Result};

/// Version tag written as the first line of every index file.
pub const INDEX_VERSION: &str = "stemmix-db-v1";

/// File name of the index inside the database root.
pub const INDEX_FILE: &str = "index.tsv";

/// Tempo ratio window for candidate queries, boundaries inclusive.
pub const TEMPO_RATIO_RANGE: (f64, f64) = (0.8, 1.2);

/// Maximum key distance (semitones on the pitch-class circle) for harmonic
/// candidate queries.
pub const MAX_KEY_DISTANCE: u8 = 3;

/// The three stem classes of a separated song.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StemClass {
    Vocal,
    Harmonic,
    Percussion,
}

impl StemClass {
    pub const ALL: [StemClass; 3] = [StemClass::Vocal, StemClass::Harmonic, StemClass::Percussion];

    pub fn as_str(self) -> &'static str {
        match self {
            StemClass::Vocal => "vocal",
            StemClass::Harmonic => "harmonic",
            StemClass::Percussion => "percussion",
        }
    }
}

impl fmt::Display for StemClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StemClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vocal" => Ok(StemClass::Vocal),
            "harmonic" => Ok(StemClass::Harmonic),
            "percussion" => Ok(StemClass::Percussion),
            other => Err(Error::Config(format!("unknown stem class {other:?}"))),
        }
    }
}

/// One analyzed stem inside a [`MashupDB`].
#[derive(Debug, Clone, PartialEq)]
pub struct StemRecord {
    /// Unique id, `{song_id}/{class}`.
    pub id: String,
    pub song_id: String,
    pub class: StemClass,
    /// WAV location relative to the database root.
    pub audio_path: PathBuf,
    /// Key estimate; percussion records carry none.
    pub key: Option<KeyEstimate>,
    pub tempo_bpm: f64,
    pub beat_times: Vec<f64>,
    pub downbeat_times: Vec<f64>,
    pub duration_s: f64,
}

impl StemRecord {
    fn validate(&self) -> Result<()> {
        match (self.class, &self.key) {
            (StemClass::Percussion, Some(_)) => {
                return Err(Error::DbIndex(format!(
                    "percussion record {} must not carry a key",
                    self.id
                )))
            }
            (StemClass::Vocal | StemClass::Harmonic, None) => {
                return Err(Error::DbIndex(format!(
                    "record {} is missing a key",
                    self.id
                )))
            }
            _ => {}
        }
        let duration_ok = self.duration_s > 0.0;
        if !duration_ok {
            return Err(Error::DbIndex(format!(
                "record {} has nonpositive duration",
                self.id
            )));
        }
        let tempo_ok = self.tempo_bpm > 0.0;
        if !tempo_ok {
            return Err(Error::DbIndex(format!(
                "record {} has nonpositive tempo",
                self.id
            )));
        }
        // half a beat of slack: analysis timestamps are window centers and
        // may poke just past the final sample
        let slack = 30.0 / self.tempo_bpm;
        for &t in self.downbeat_times.iter().chain(&self.beat_times) {
            if !(0.0..=self.duration_s + slack).contains(&t) {
                return Err(Error::DbIndex(format!(
                    "record {}: beat time {t} outside [0, {}]",
                    self.id, self.duration_s
                )));
            }
        }
        Ok(())
    }
}

/// Immutable database of analyzed stems.
#[derive(Debug, Clone)]
pub struct MashupDB {
    root: PathBuf,
    /// Records keyed by id; BTreeMap keeps iteration (and thus every query
    /// result) in stable id order.
    records: BTreeMap<String, StemRecord>,
}

impl MashupDB {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records in id order.
    pub fn records(&self) -> impl Iterator<Item = &StemRecord> {
        self.records.values()
    }

    pub fn get(&self, id: &str) -> Option<&StemRecord> {
        self.records.get(id)
    }

    /// All records of one class, in id order.
    pub fn by_class(&self, class: StemClass) -> Vec<&StemRecord> {
        self.records.values().filter(|r| r.class == class).collect()
    }

    /// Absolute path of a record's audio file.
    pub fn audio_path(&self, record: &StemRecord) -> PathBuf {
        self.root.join(&record.audio_path)
    }

    /// Load and resample a record's audio to the engine rate.
    pub fn load_stem(&self, record: &StemRecord) -> Result<AudioClip> {
        let clip = load_audio(self.audio_path(record))?;
        resample(&clip, ENGINE_RATE)
    }

    /// Harmonic candidates within `MAX_KEY_DISTANCE` of the seed key and
    /// within the tempo ratio window of the seed tempo.
    pub fn query_harmonic(&self, seed_key: &KeyEstimate, seed_tempo: f64) -> Vec<&StemRecord> {
        self.by_class(StemClass::Harmonic)
            .into_iter()
            .filter(|r| {
                let key_ok = r
                    .key
                    .as_ref()
                    .is_some_and(|k| key_distance(k, seed_key) <= MAX_KEY_DISTANCE);
                key_ok && tempo_ratio_ok(seed_tempo, r.tempo_bpm)
            })
            .collect()
    }

    /// Percussion candidates within the tempo ratio window of the seed tempo.
    pub fn query_percussion(&self, seed_tempo: f64) -> Vec<&StemRecord> {
        self.by_class(StemClass::Percussion)
            .into_iter()
            .filter(|r| tempo_ratio_ok(seed_tempo, r.tempo_bpm))
            .collect()
    }

    /// A song's records keyed by class.
    pub fn siblings(&self, song_id: &str) -> Result<BTreeMap<StemClass, &StemRecord>> {
        let map: BTreeMap<StemClass, &StemRecord> = self
            .records
            .values()
            .filter(|r| r.song_id == song_id)
            .map(|r| (r.class, r))
            .collect();
        if map.is_empty() {
            return Err(Error::UnknownSong(song_id.to_string()));
        }
        Ok(map)
    }

    /// Write the index file under the database root.
    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(INDEX_FILE);
        let mut out = String::new();
        out.push_str(INDEX_VERSION);
        out.push('\n');
        for r in self.records.values() {
            let key = match &r.key {
                Some(k) => format!("{}:{}:{}", k.tonic, k.mode, fmt_f64(k.confidence)),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                r.id,
                r.song_id,
                r.class,
                r.audio_path.display(),
                key,
                fmt_f64(r.tempo_bpm),
                fmt_times(&r.beat_times),
                fmt_times(&r.downbeat_times),
                fmt_f64(r.duration_s),
            ));
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reload a database from its index file.
    pub fn load(root: impl AsRef<Path>) -> Result<MashupDB> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, v)) if v == INDEX_VERSION => {}
            Some((_, v)) => {
                return Err(Error::DbIndex(format!(
                    "unsupported index version {v:?} (expected {INDEX_VERSION:?})"
                )))
            }
            None => return Err(Error::DbIndex("empty index file".into())),
        }
        let mut db = MashupDB {
            root,
            records: BTreeMap::new(),
        };
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 {
                return Err(Error::DbIndex(format!(
                    "index line {}: expected 9 fields, got {}",
                    n + 1,
                    f.len()
                )));
            }
            let key = if f[4] == "-" {
                None
            } else {
                let parts: Vec<&str> = f[4].split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::DbIndex(format!(
                        "index line {}: bad key field",
                        n + 1
                    )));
                }
                Some(KeyEstimate::new(
                    parse(parts[0], n)?,
                    Mode::from_str(parts[1])
                        .map_err(|_| Error::DbIndex(format!("index line {}: bad mode", n + 1)))?,
                    parse(parts[2], n)?,
                ))
            };
            let record = StemRecord {
                id: f[0].to_string(),
                song_id: f[1].to_string(),
                class: f[2].parse()?,
                audio_path: PathBuf::from(f[3]),
                key,
                tempo_bpm: parse(f[5], n)?,
                beat_times: parse_times(f[6], n)?,
                downbeat_times: parse_times(f[7], n)?,
                duration_s: parse(f[8], n)?,
            };
            db.insert(record)?;
        }
        Ok(db)
    }

    fn insert(&mut self, record: StemRecord) -> Result<()> {
        record.validate()?;
        if self.records.contains_key(&record.id) {
            return Err(Error::DuplicateStem {
                song_id: record.song_id,
                class: record.class.to_string(),
            });
        }
        self.records.insert(record.id.clone(), record);
        Ok(())
    }
}

fn tempo_ratio_ok(seed: f64, candidate: f64) -> bool {
    let r = seed / candidate;
    // a hair of slack so boundary cases like 120/100 survive binary rounding
    (TEMPO_RATIO_RANGE.0 - 1e-9..=TEMPO_RATIO_RANGE.1 + 1e-9).contains(&r)
}

fn fmt_f64(v: f64) -> String {
    // round-trippable decimal form
    format!("{v:.*}", 17)
        .trim_end_matches('0')
        .trim_end_matches('.')
        .to_string()
}

fn fmt_times(ts: &[f64]) -> String {
    if ts.is_empty() {
        return "-".to_string();
    }
    ts.iter().map(|&t| fmt_f64(t)).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse()
        .map_err(|_| Error::DbIndex(format!("index line {}: bad number {s:?}", line + 1)))
}

fn parse_times(s: &str, line: usize) -> Result<Vec<f64>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse(t, line)).collect()
}

/// Build a database: read the manifest, load and analyze each stem, and
/// write the index file under `stem_root`.
///
/// Manifest format: one stem per line, tab-separated `song_id  class  path`
/// with paths relative to `stem_root`. Stems that fail analysis are skipped
/// with a warning on stderr rather than aborting the build.
pub fn build_db(stem_root: impl AsRef<Path>, manifest: impl AsRef<Path>) -> Result<MashupDB> {
    let root = stem_root.as_ref().to_path_buf();
    let manifest = manifest.as_ref();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;

    // parse the whole manifest first so structural errors beat analysis cost
    let mut entries: Vec<(String, StemClass, PathBuf)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(Error::Manifest {
                line: n + 1,
                detail: format!("expected 3 tab-separated fields, got {}", f.len()),
            });
        }
        let class: StemClass = f[1].parse().map_err(|e| Error::Manifest {
            line: n + 1,
            detail: format!("{e}"),
        })?;
        let entry = (f[0].to_string(), class, PathBuf::from(f[2]));
        if entries
            .iter()
            .any(|(s, c, _)| *s == entry.0 && *c == entry.1)
        {
            return Err(Error::DuplicateStem {
                song_id: entry.0,
                class: class.to_string(),
            });
        }
        entries.push(entry);
    }

    // per-song analysis: rhythm for vocal/harmonic comes from the song's
    // percussion stem when present (it carries the clean beat), else from
    // the stem itself
    let mut db = MashupDB {
        root: root.clone(),
        records: BTreeMap::new(),
    };
    let mut songs: BTreeMap<String, Vec<(StemClass, PathBuf)>> = BTreeMap::new();
    for (song_id, class, path) in entries {
        songs.entry(song_id).or_default().push((class, path));
    }
    for (song_id, stems) in songs {
        let mut song_rhythm = None;
        if let Some((_, path)) = stems.iter().find(|(c, _)| *c == StemClass::Percussion) {
            match load_analyzed(&root, path) {
                Ok((clip, rhythm)) => song_rhythm = Some((clip.duration_s(), rhythm)),
                Err(e) => eprintln!("warning: skipping rhythm from {song_id} percussion: {e}"),
            }
        }
        for (class, path) in stems {
            match analyze_stem(&root, &song_id, class, &path, song_rhythm.as_ref()) {
                Ok(record) => db.insert(record)?,
                Err(e) => eprintln!("warning: skipping {song_id}/{class}: {e}"),
            }
        }
    }
    db.save()?;
    Ok(db)
}

fn load_analyzed(root: &Path, rel: &Path) -> Result<(AudioClip, crate::analysis::RhythmEstimate)> {
    let clip = resample(&load_audio(root.join(rel))?, ENGINE_RATE)?;
    let rhythm = estimate_rhythm(&clip)?;
    Ok((clip, rhythm))
}

fn analyze_stem(
    root: &Path,
    song_id: &str,
    class: StemClass,
    rel: &Path,
    song_rhythm: Option<&(f64, crate::analysis::RhythmEstimate)>,
) -> Result<StemRecord> {
    let clip = resample(&load_audio(root.join(rel))?, ENGINE_RATE)?;
    let rhythm = match (class, song_rhythm) {
        (StemClass::Vocal | StemClass::Harmonic, Some((_, r))) => r.clone(),
        _ => estimate_rhythm(&clip)?,
    };
    let key = match class {
        StemClass::Percussion => None,
        _ => Some(estimate_key(&clip)?),
    };
    Ok(StemRecord {
        id: format!("{song_id}/{class}"),
        song_id: song_id.to_string(),
        class,
        audio_path: rel.to_path_buf(),
        key,
        tempo_bpm: rhythm.tempo_bpm,
        beat_times: rhythm.beat_times,
        downbeat_times: rhythm.downbeat_times,
        duration_s: clip.duration_s(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synthesize_corpus, SynthConfig};
    use crate::Error;

    fn corpus_db(n: usize, seed: u64) -> (tempfile::TempDir, MashupDB) {
        let dir = tempfile::tempdir().unwrap();
        synthesize_corpus(dir.path(), n, seed, &SynthConfig::default()).unwrap();
        let db = build_db(dir.path(), dir.path().join("manifest.tsv")).unwrap();
        (dir, db)
    }

    #[test]
    fn empty_manifest_gives_empty_db_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.tsv");
        std::fs::write(&manifest, "").unwrap();
        let db = build_db(dir.path(), &manifest).unwrap();
        assert!(db.is_empty());
        let reloaded = MashupDB::load(dir.path()).unwrap();
        assert!(reloaded.is_empty());
    }

    #[test]
    fn synthetic_song_analyzes_to_three_records() {
        let (_dir, db) = corpus_db(2, 11);
        assert_eq!(db.len(), 6);
        let sib = db.siblings("synth0000").unwrap();
        assert_eq!(sib.len(), 3);
        let truth_tempo = {
            let dir2 = tempfile::tempdir().unwrap();
            let songs = synthesize_corpus(dir2.path(), 2, 11, &SynthConfig::default()).unwrap();
            songs[0].tempo_bpm
        };
        let voc = sib[&StemClass::Vocal];
        let harm = sib[&StemClass::Harmonic];
        let perc = sib[&StemClass::Percussion];
        assert!((voc.tempo_bpm - truth_tempo).abs() / truth_tempo < 0.02);
        assert_eq!(
            voc.tempo_bpm, perc.tempo_bpm,
            "rhythm shared from percussion"
        );
        assert!(voc.key.is_some() && harm.key.is_some() && perc.key.is_none());
    }

    #[test]
    fn duplicate_manifest_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.tsv");
        std::fs::write(&manifest, "a\tvocal\tx.wav\na\tvocal\ty.wav\n").unwrap();
        match build_db(dir.path(), &manifest) {
            Err(Error::DuplicateStem { song_id, class }) => {
                assert_eq!(song_id, "a");
                assert_eq!(class, "vocal");
            }
            other => panic!("expected DuplicateStem, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_records_exactly() {
        let (dir, db) = corpus_db(3, 21);
        let reloaded = MashupDB::load(dir.path()).unwrap();
        assert_eq!(db.len(), reloaded.len());
        for (a, b) in db.records().zip(reloaded.records()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn queries_match_brute_force() {
        let (_dir, db) = corpus_db(6, 31);
        let seed_key = KeyEstimate::new(0, Mode::Major, 1.0);
        for seed_tempo in [80.0, 100.0, 120.0, 150.0] {
            let got: Vec<&str> = db
                .query_harmonic(&seed_key, seed_tempo)
                .iter()
                .map(|r| r.id.as_str())
                .collect();
            let want: Vec<&str> = db
                .records()
                .filter(|r| {
                    r.class == StemClass::Harmonic
                        && r.key
                            .as_ref()
                            .is_some_and(|k| key_distance(k, &seed_key) <= MAX_KEY_DISTANCE)
                        && tempo_ratio_ok(seed_tempo, r.tempo_bpm)
                })
                .map(|r| r.id.as_str())
                .collect();
            assert_eq!(got, want);
            let got: Vec<&str> = db
                .query_percussion(seed_tempo)
                .iter()
                .map(|r| r.id.as_str())
                .collect();
            let want: Vec<&str> = db
                .records()
                .filter(|r| {
                    r.class == StemClass::Percussion && tempo_ratio_ok(seed_tempo, r.tempo_bpm)
                })
                .map(|r| r.id.as_str())
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn query_predicate_boundaries() {
        // hand-built records exercise the spec's boundary examples
        let mk = |id: &str, class: StemClass, tonic: u8, tempo: f64| StemRecord {
            id: id.into(),
            song_id: id.into(),
            class,
            audio_path: PathBuf::from("x.wav"),
            key: (class != StemClass::Percussion)
                .then(|| KeyEstimate::new(tonic, Mode::Major, 1.0)),
            tempo_bpm: tempo,
            beat_times: vec![],
            downbeat_times: vec![],
            duration_s: 10.0,
        };
        let mut db = MashupDB {
            root: PathBuf::from("."),
            records: BTreeMap::new(),
        };
        db.insert(mk("d118", StemClass::Harmonic, 2, 118.0))
            .unwrap();
        db.insert(mk("e120", StemClass::Harmonic, 4, 120.0))
            .unwrap();
        db.insert(mk("c90", StemClass::Harmonic, 0, 90.0)).unwrap();
        db.insert(mk("p100", StemClass::Percussion, 0, 100.0))
            .unwrap();
        db.insert(mk("p95", StemClass::Percussion, 0, 95.0))
            .unwrap();
        db.insert(mk("p120", StemClass::Percussion, 0, 120.0))
            .unwrap();

        let seed = KeyEstimate::new(0, Mode::Major, 1.0);
        let ids: Vec<&str> = db
            .query_harmonic(&seed, 120.0)
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(ids, ["d118"]); // distance 2 in; distance 4 out; ratio 1.33 out
        let ids: Vec<&str> = db
            .query_percussion(120.0)
            .iter()
            .map(|r| r.id.as_str())
            .collect();
        assert_eq!(ids, ["p100", "p120"]); // ratio 1.2 boundary inclusive
    }

    #[test]
    fn unknown_song_is_an_error() {
        let (_dir, db) = corpus_db(1, 41);
        assert!(matches!(db.siblings("nope"), Err(Error::UnknownSong(_))));
    }
}
