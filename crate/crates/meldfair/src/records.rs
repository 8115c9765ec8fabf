//! Utterance table CSV reading and writing.

use std::io::{Read, Write};

use meldfair_core::schema::{format_timestamp, parse_timestamp, Split, UtteranceRecord};
use serde::Serialize;

const REQUIRED: [&str; 10] = [
    "Dialogue_ID",
    "Utterance_ID",
    "Speaker",
    "Emotion",
    "Sentiment",
    "Season",
    "Episode",
    "StartTime",
    "EndTime",
    "Utterance",
];

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line in the input, header included.
    pub line: u64,
    pub message: String,
}

/// Bytes that are not UTF-8 are read as Windows-1252 single bytes.
fn decode(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

/// Parses the utterance table of one split. Unparseable rows are skipped
/// and reported.
pub fn parse_records<R: Read>(reader: R, split: Split) -> Result<(Vec<UtteranceRecord>, Vec<RowError>), RecordsError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.byte_headers()?.iter().map(|h| decode(h).trim().to_string()).collect();
    let mut col = [0usize; REQUIRED.len()];
    for (slot, name) in col.iter_mut().zip(REQUIRED) {
        *slot = header.iter().position(|h| h == name).ok_or(RecordsError::MissingColumn(name))?;
    }

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for row in rdr.byte_records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(RowError { line, message: e.to_string() });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(col[i]).map(decode).unwrap_or_default();
        match record_from_fields(split, &field) {
            Ok(r) => records.push(r),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok((records, errors))
}

fn record_from_fields(split: Split, field: &dyn Fn(usize) -> String) -> Result<UtteranceRecord, String> {
    let int = |i: usize| -> Result<u32, String> {
        let v = field(i);
        v.trim().parse().map_err(|_| format!("{} is not an integer: {v:?}", REQUIRED[i]))
    };
    let clock =
        |i: usize| -> Result<u64, String> { parse_timestamp(&field(i)).map_err(|e| format!("{}: {e}", REQUIRED[i])) };
    Ok(UtteranceRecord {
        split,
        dialogue_id: int(0)?,
        utterance_id: int(1)?,
        speaker: field(2).trim().to_string(),
        emotion: field(3).parse().map_err(|e| format!("{e}"))?,
        sentiment: field(4).parse().map_err(|e| format!("{e}"))?,
        season: int(5)?,
        episode: int(6)?,
        start_ms: clock(7)?,
        end_ms: clock(8)?,
        text: field(9),
        placed_in: None,
    })
}

/// Writes records with the columns [`parse_records`] reads, plus a
/// leading running number.
pub fn write_records<W: Write>(writer: W, records: &[UtteranceRecord]) -> Result<(), RecordsError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("Sr No.").chain(REQUIRED))?;
    for (i, r) in records.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.dialogue_id.to_string(),
            r.utterance_id.to_string(),
            r.speaker.clone(),
            r.emotion.to_string(),
            r.sentiment.to_string(),
            r.season.to_string(),
            r.episode.to_string(),
            format_timestamp(r.start_ms),
            format_timestamp(r.end_ms),
            r.text.clone(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use meldfair_core::synth::excerpt_records;

    const SAMPLE: &str =
        "Sr No.,Utterance,Speaker,Emotion,Sentiment,Dialogue_ID,Utterance_ID,Season,Episode,StartTime,EndTime
1,\"Oh my God, he's lost it.\",Phoebe,surprise,negative,0,0,4,7,\"00:20:57,256\",\"00:21:00,049\"
2,Hi.,Joey,joy,positive,0,1,4,7,0:21:00.100,0:21:01.000
3,broken,Ross,neutral,neutral,x,2,4,7,0:21:01.000,0:21:02.000
4,bad clock,Ross,neutral,neutral,0,3,4,7,0:21:01,0:21:02.000
";

    #[test]
    fn reads_rows_and_reports_bad_ones() {
        let (recs, errs) = parse_records(SAMPLE.as_bytes(), Split::Dev).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].text, "Oh my God, he's lost it.");
        assert_eq!(recs[0].start_ms, 20 * 60_000 + 57_256);
        assert_eq!(recs[1].split, Split::Dev);
        assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![4, 5]);
        assert!(errs[0].message.contains("Dialogue_ID"));
    }

    #[test]
    fn missing_column() {
        let err = parse_records("Utterance,Speaker\nhi,Ross\n".as_bytes(), Split::Train).unwrap_err();
        assert!(matches!(err, RecordsError::MissingColumn("Dialogue_ID")));
    }

    #[test]
    fn non_utf8_bytes_survive() {
        let mut data =
            b"Dialogue_ID,Utterance_ID,Speaker,Emotion,Sentiment,Season,Episode,StartTime,EndTime,Utterance\n".to_vec();
        data.extend_from_slice(b"1,0,Ross,joy,positive,1,1,0:00:01.000,0:00:02.000,I\x92m fine\n");
        let (recs, errs) = parse_records(&data[..], Split::Train).unwrap();
        assert!(errs.is_empty());
        assert_eq!(recs[0].text, "I\u{92}m fine");
    }

    #[test]
    fn round_trip() {
        let recs = excerpt_records();
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let (back, errs) = parse_records(&buf[..], Split::Train).unwrap();
        assert!(errs.is_empty());
        assert_eq!(back, recs);
    }
}
