//! TIMIT-style segment labels and on-disk corpus ingestion.
//!
//! A label file has one segment per line, `start_sample end_sample symbol`,
//! half-open, sorted and non-overlapping. Frame labels come from the segment
//! with the largest overlap with each analysis frame.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::corpus::{Corpus, Split, Utterance};
use crate::error::{invalid, Error, Result};
use crate::phoneme::{PhonemeInventory, PhonemeLabels};
use crate::signal::{read_wav, write_wav, F0Contour, Framing};

/// Half-open sample interval carrying a phoneme index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub phoneme: usize,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses label text; `file` is only used in error messages.
pub fn parse_labels(text: &str, inventory: &PhonemeInventory, file: &Path) -> Result<Vec<Segment>> {
    let mut out: Vec<Segment> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [start, end, sym] = fields[..] else {
            return Err(parse_err(file, n, format!("expected `start end symbol`, got `{line}`")));
        };
        let start: usize = start
            .parse()
            .map_err(|_| parse_err(file, n, format!("bad start sample `{start}`")))?;
        let end: usize = end
            .parse()
            .map_err(|_| parse_err(file, n, format!("bad end sample `{end}`")))?;
        if end <= start {
            return Err(parse_err(file, n, format!("empty segment {start}..{end}")));
        }
        let phoneme = inventory
            .index_of(sym)
            .ok_or_else(|| parse_err(file, n, format!("unknown phoneme `{sym}`")))?;
        if let Some(prev) = out.last() {
            if start < prev.end {
                return Err(parse_err(
                    file,
                    n,
                    format!("segment {start}..{end} overlaps the previous one ending at {}", prev.end),
                ));
            }
        }
        out.push(Segment { start, end, phoneme });
    }
    Ok(out)
}

pub fn format_labels(segments: &[Segment], inventory: &PhonemeInventory) -> String {
    let mut s = String::new();
    for seg in segments {
        let _ = writeln!(s, "{} {} {}", seg.start, seg.end, inventory.symbol(seg.phoneme));
    }
    s
}

/// Majority-overlap label of every analysis frame of a `len`-sample signal.
/// Ties go to the earlier segment; a frame no segment touches is an error.
pub fn frame_labels(segments: &[Segment], len: usize, framing: &Framing) -> Result<Vec<usize>> {
    let frames = framing.frame_count(len);
    let mut out = Vec::with_capacity(frames);
    let mut first = 0;
    for t in 0..frames {
        let (a, b) = (t * framing.hop, t * framing.hop + framing.frame_len);
        while first < segments.len() && segments[first].end <= a {
            first += 1;
        }
        let mut best: Option<(usize, usize)> = None;
        for seg in segments[first..].iter().take_while(|s| s.start < b) {
            let overlap = seg.end.min(b).saturating_sub(seg.start.max(a));
            if overlap > 0 && best.is_none_or(|(o, _)| overlap > o) {
                best = Some((overlap, seg.phoneme));
            }
        }
        let (_, p) = best.ok_or_else(|| invalid(format!("frame {t} (samples {a}..{b}) has no label")))?;
        out.push(p);
    }
    Ok(out)
}

fn read_f0(path: &Path) -> Result<F0Contour> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: f64 = l
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad f0 value `{}`", l.trim())))?;
            Ok((v > 0.0).then_some(v))
        })
        .collect()
}

fn format_f0(f0: &F0Contour) -> String {
    f0.iter()
        .map(|v| format!("{:?}\n", v.unwrap_or(0.0)))
        .collect()
}

const UTTERANCE_INDEX: &str = "utterances.txt";
const INVENTORY_FILE: &str = "inventory.txt";

/// Reads `<stem>.wav` from `audio_dir` with `<stem>.phn` from `label_dir`.
///
/// Optional extras: `<stem>.f0` (one value per frame, 0 for unvoiced) and an
/// `utterances.txt` index of `stem speaker split` lines in `audio_dir`.
/// Without the index every utterance is speaker 0 and every fifth (in name
/// order) is held out.
pub fn load_corpus(audio_dir: &Path, label_dir: &Path, inventory_file: &Path, framing: Framing) -> Result<Corpus> {
    let inventory: PhonemeInventory = std::fs::read_to_string(inventory_file)?.parse()?;
    let mut stems: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(audio_dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "wav") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    if stems.is_empty() {
        return Err(Error::NoUtterances(audio_dir.to_path_buf()));
    }
    stems.sort();
    let index_path = audio_dir.join(UTTERANCE_INDEX);
    let index: Option<Vec<(String, usize, Split)>> = if index_path.exists() {
        let text = std::fs::read_to_string(&index_path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() {
                continue;
            }
            let [id, spk, split] = f[..] else {
                return Err(parse_err(&index_path, i + 1, "expected `id speaker split`"));
            };
            let spk = spk
                .parse()
                .map_err(|_| parse_err(&index_path, i + 1, format!("bad speaker `{spk}`")))?;
            let split = split
                .parse()
                .map_err(|e: Error| parse_err(&index_path, i + 1, e.to_string()))?;
            rows.push((id.to_string(), spk, split));
        }
        Some(rows)
    } else {
        None
    };

    let mut utterances = Vec::with_capacity(stems.len());
    for (k, stem) in stems.iter().enumerate() {
        let label_path: PathBuf = label_dir.join(format!("{stem}.phn"));
        if !label_path.exists() {
            return Err(invalid(format!("{}: no matching label file {}", stem, label_path.display())));
        }
        let waveform = read_wav(audio_dir.join(format!("{stem}.wav")))?;
        if waveform.sample_rate != framing.sample_rate {
            return Err(invalid(format!(
                "{stem}.wav: expected {} Hz, got {} Hz",
                framing.sample_rate, waveform.sample_rate
            )));
        }
        let text = std::fs::read_to_string(&label_path)?;
        let segments = parse_labels(&text, &inventory, &label_path)?;
        if let Some(last) = segments.last() {
            if last.end > waveform.len() {
                return Err(parse_err(
                    &label_path,
                    segments.len(),
                    format!("segment ends at {} past the {}-sample file", last.end, waveform.len()),
                ));
            }
        }
        let labels = frame_labels(&segments, waveform.len(), &framing)
            .map_err(|e| invalid(format!("{}: {e}", label_path.display())))?;
        let labels = PhonemeLabels::new(labels, &inventory)?;
        let f0_path = label_dir.join(format!("{stem}.f0"));
        let f0 = if f0_path.exists() { Some(read_f0(&f0_path)?) } else { None };
        let (speaker, split) = match &index {
            Some(rows) => rows
                .iter()
                .find(|r| &r.0 == stem)
                .map(|r| (r.1, r.2))
                .ok_or_else(|| invalid(format!("{stem} missing from {}", index_path.display())))?,
            None => (0, if k % 5 == 4 { Split::HeldOut } else { Split::Train }),
        };
        utterances.push(Utterance {
            id: stem.clone(),
            waveform,
            segments,
            labels,
            f0,
            speaker,
            split,
        });
    }
    Ok(Corpus {
        utterances,
        inventory,
        framing,
    })
}

/// Writes WAV, label, f0, index and inventory files into `dir`; returns the
/// written file names in a stable order.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut index = String::new();
    for u in &corpus.utterances {
        let wav = dir.join(format!("{}.wav", u.id));
        write_wav(&wav, &u.waveform)?;
        let phn = dir.join(format!("{}.phn", u.id));
        std::fs::write(&phn, format_labels(&u.segments, &corpus.inventory))?;
        written.push(wav);
        written.push(phn);
        if let Some(f0) = &u.f0 {
            let p = dir.join(format!("{}.f0", u.id));
            std::fs::write(&p, format_f0(f0))?;
            written.push(p);
        }
        let _ = writeln!(index, "{} {} {}", u.id, u.speaker, u.split);
    }
    let idx = dir.join(UTTERANCE_INDEX);
    std::fs::write(&idx, index)?;
    let inv = dir.join(INVENTORY_FILE);
    std::fs::write(&inv, format!("{}\n", corpus.inventory))?;
    written.push(idx);
    written.push(inv);
    Ok(written)
}

/// [`load_corpus`] on a directory written by [`save_corpus`].
pub fn load_corpus_dir(dir: &Path, framing: Framing) -> Result<Corpus> {
    load_corpus(dir, dir, &dir.join(INVENTORY_FILE), framing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> PhonemeInventory {
        "sil aa ah".parse().unwrap()
    }

    #[test]
    fn single_frame_file() {
        let segs = parse_labels("0 800 aa\n", &inv(), Path::new("x.phn")).unwrap();
        assert_eq!(frame_labels(&segs, 800, &Framing::default()).unwrap(), vec![1]);
    }

    #[test]
    fn majority_overlap() {
        let segs = parse_labels("0 500 sil\n500 1200 aa\n", &inv(), Path::new("x.phn")).unwrap();
        // frame 0: 500 sil vs 300 aa; frame 1 (200..1000): 300 vs 500
        assert_eq!(frame_labels(&segs, 1200, &Framing::default()).unwrap(), vec![0, 1, 1]);
    }

    #[test]
    fn overlap_cites_line() {
        let err = parse_labels("0 500 sil\n400 900 aa\n", &inv(), Path::new("x.phn")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        let err = parse_labels("0 500 zz\n", &inv(), Path::new("x.phn")).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn empty_directory_has_no_utterances() {
        let dir = tempfile::tempdir().unwrap();
        let inv_path = dir.path().join("inv.txt");
        std::fs::write(&inv_path, "sil aa\n").unwrap();
        let err = load_corpus(dir.path(), dir.path(), &inv_path, Framing::default()).unwrap_err();
        assert!(matches!(err, Error::NoUtterances(_)));
    }
}
