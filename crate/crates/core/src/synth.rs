//! Synthetic keypoint corpora with signer-independent and unseen-sentence
//! splits.
//!
//! Each gloss is a smooth motion template over the 86 landmarks. A recording
//! concatenates the templates of a sentence with linear cross-fades at the
//! boundaries, then applies its signer's style (similarity transform,
//! movement amplitude, speed), Gaussian jitter and random dropouts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::GlossVocabulary;
use crate::error::{Error, Result};
use crate::pose::{write_manifest, write_vocab, KeypointSequence, Landmark, Point, Sample, Split, NUM_LANDMARKS};

/// Slot ranges of the 86-point layout: 33 body points, two 21-point hands,
/// 11 face points.
const LEFT_HAND: std::ops::Range<usize> = 33..54;
const RIGHT_HAND: std::ops::Range<usize> = 54..75;
const FACE: std::ops::Range<usize> = 75..86;
const SHOULDERS: [usize; 2] = [11, 12];
const HIPS: [usize; 2] = [23, 24];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCorpusSpec {
    pub n_glosses: usize,
    pub n_signers: usize,
    /// Explicit sentences as 0-based gloss indices; when empty,
    /// `n_sentences` distinct sentences are drawn.
    pub sentences: Vec<Vec<usize>>,
    pub n_sentences: usize,
    /// Inclusive length range of drawn sentences.
    pub sentence_len: [usize; 2],
    pub recordings_per_sentence: usize,
    /// Inclusive frame-count range of one gloss before speed warping.
    pub frames_per_gloss: [usize; 2],
    /// Frames over which adjacent glosses cross-fade.
    pub coarticulation: usize,
    pub scale_range: [f64; 2],
    pub speed_range: [f64; 2],
    pub amplitude_range: [f64; 2],
    /// Maximum signer offset, in pixels.
    pub max_translation: f64,
    /// Maximum signer rotation, in radians.
    pub max_rotation: f64,
    /// Per-signer, per-gloss perturbation of hand paths, as a fraction of
    /// the template reach range.
    pub signer_variation: f64,
    /// Per-coordinate jitter, in pixels.
    pub noise_sigma: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            n_glosses: 6,
            n_signers: 4,
            sentences: Vec::new(),
            n_sentences: 20,
            sentence_len: [2, 4],
            recordings_per_sentence: 1,
            frames_per_gloss: [8, 12],
            coarticulation: 2,
            scale_range: [0.9, 1.1],
            speed_range: [0.8, 1.25],
            amplitude_range: [0.85, 1.15],
            max_translation: 40.0,
            max_rotation: 0.05,
            signer_variation: 0.15,
            noise_sigma: 1.0,
            missing_rate: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPolicy {
    /// Test (and dev) signers never appear in training.
    Si,
    /// Test sentences never appear in training; dev holds extra recordings
    /// of training sentences.
    Us,
}

impl std::str::FromStr for SplitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "si" => Ok(SplitPolicy::Si),
            "us" => Ok(SplitPolicy::Us),
            _ => Err(Error::Config(format!("unknown split {s:?}; expected si or us"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: GlossVocabulary,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Writes `vocab.txt` and the three manifests with their blobs.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_vocab(&dir.join("vocab.txt"), &self.vocab)?;
        for split in Split::ALL {
            write_manifest(&split.manifest_path(dir), self.split(split))?;
        }
        Ok(())
    }
}

fn seeded(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) << 20);
    rng
}

const STREAM_SENTENCES: u64 = 1;
const STREAM_TEMPLATES: u64 = 2;
const STREAM_SIGNERS: u64 = 3;
const STREAM_RECORDINGS: u64 = 4;
const STREAM_SPLIT: u64 = 5;

fn gloss_token(i: usize) -> String {
    format!("G{i:02}")
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorpusSpec(m));
        if self.n_glosses == 0 || self.n_signers == 0 || self.recordings_per_sentence == 0 {
            return bad("n_glosses, n_signers and recordings_per_sentence must be at least 1".into());
        }
        if self.sentences.is_empty() && self.n_sentences == 0 {
            return bad("need explicit sentences or n_sentences ≥ 1".into());
        }
        let [lo, hi] = self.sentence_len;
        if lo == 0 || lo > hi {
            return bad(format!("sentence_len {:?} must be a non-empty range of positive lengths", self.sentence_len));
        }
        let [f_lo, f_hi] = self.frames_per_gloss;
        if f_lo == 0 || f_lo > f_hi {
            return bad(format!("frames_per_gloss {:?} must be a non-empty positive range", self.frames_per_gloss));
        }
        for (name, [a, b]) in [
            ("scale_range", self.scale_range),
            ("speed_range", self.speed_range),
            ("amplitude_range", self.amplitude_range),
        ] {
            if !(a > 0.0 && a <= b) {
                return bad(format!("{name} must satisfy 0 < min ≤ max"));
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) || self.noise_sigma < 0.0 || self.max_translation < 0.0 {
            return bad("missing_rate must lie in [0, 1); noise and translation must be ≥ 0".into());
        }
        if self.max_rotation < 0.0 || self.signer_variation < 0.0 {
            return bad("max_rotation and signer_variation must be ≥ 0".into());
        }
        for (i, s) in self.sentences.iter().enumerate() {
            if s.is_empty() || s.iter().any(|&g| g >= self.n_glosses) {
                return bad(format!("sentence {i} is empty or uses a gloss outside 0..{}", self.n_glosses));
            }
        }
        Ok(())
    }

    fn resolve_sentences(&self) -> Result<Vec<Vec<usize>>> {
        let sentences = if self.sentences.is_empty() {
            self.draw_sentences()?
        } else {
            self.sentences.clone()
        };
        let seen: BTreeSet<usize> = sentences.iter().flatten().copied().collect();
        if seen.len() != self.n_glosses {
            let missing: Vec<usize> = (0..self.n_glosses).filter(|g| !seen.contains(g)).collect();
            return Err(Error::CorpusSpec(format!("glosses {missing:?} appear in no sentence")));
        }
        Ok(sentences)
    }

    /// Distinct random sentences without immediate repeats; uncovered glosses
    /// are planted first so every gloss occurs.
    fn draw_sentences(&self) -> Result<Vec<Vec<usize>>> {
        let mut rng = seeded(self.seed, STREAM_SENTENCES, 0);
        let mut uncovered: Vec<usize> = (0..self.n_glosses).collect();
        uncovered.shuffle(&mut rng);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.n_sentences);
        let mut attempts = 0;
        while out.len() < self.n_sentences {
            attempts += 1;
            if attempts > 1000 * self.n_sentences.max(1) {
                return Err(Error::CorpusSpec(format!(
                    "could not draw {} distinct sentences from {} glosses with lengths {:?}",
                    self.n_sentences, self.n_glosses, self.sentence_len
                )));
            }
            let len = rng.random_range(self.sentence_len[0]..=self.sentence_len[1]);
            let mut s: Vec<usize> = Vec::with_capacity(len);
            let planted = uncovered.last().copied();
            let plant_at = rng.random_range(0..len);
            for i in 0..len {
                let g = match planted {
                    Some(g) if i == plant_at => g,
                    _ => loop {
                        let g = rng.random_range(0..self.n_glosses);
                        if self.n_glosses == 1 || s.last() != Some(&g) {
                            break g;
                        }
                    },
                };
                s.push(g);
            }
            if self.n_glosses > 1 && s.windows(2).any(|w| w[0] == w[1]) {
                continue;
            }
            if seen.insert(s.clone()) {
                uncovered.retain(|g| !s.contains(g));
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Largest template hand displacement, in pixels.
const REACH: f64 = 70.0;

/// Per-gloss motion: for every landmark, a displacement path over
/// normalized time `τ ∈ [0, 1]`.
struct Template {
    /// Hand displacement peaking mid-gloss, per hand.
    reach: [(f64, f64); 2],
    /// Per landmark oscillation: (amp_x, amp_y, cycles, phase_x, phase_y).
    wiggle: Vec<(f64, f64, f64, f64, f64)>,
}

impl Template {
    fn new(rng: &mut impl Rng) -> Self {
        let reach = [0, 1].map(|_| (rng.random_range(-REACH..REACH), rng.random_range(-REACH..REACH)));
        let wiggle = (0..NUM_LANDMARKS)
            .map(|k| {
                let amp = if LEFT_HAND.contains(&k) || RIGHT_HAND.contains(&k) {
                    rng.random_range(6.0..18.0)
                } else if FACE.contains(&k) {
                    rng.random_range(1.0..4.0)
                } else if SHOULDERS.contains(&k) || HIPS.contains(&k) {
                    0.0
                } else {
                    rng.random_range(2.0..8.0)
                };
                let cycles = f64::from(rng.random_range(1u8..=2));
                (
                    amp,
                    amp * rng.random_range(0.5..1.0),
                    cycles,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self { reach, wiggle }
    }

    /// `tweak` shifts the two hand paths (a signer's idiosyncrasy).
    fn offset(&self, k: usize, tau: f64, tweak: &[(f64, f64); 2]) -> (f64, f64) {
        let envelope = (PI * tau).sin();
        let (ax, ay, cycles, px, py) = self.wiggle[k];
        let w = 2.0 * PI * cycles * tau;
        let (mut dx, mut dy) = (ax * (w + px).sin() * envelope, ay * (w + py).sin() * envelope);
        let hand = if LEFT_HAND.contains(&k) {
            Some(0)
        } else if RIGHT_HAND.contains(&k) {
            Some(1)
        } else {
            None
        };
        if let Some(h) = hand {
            dx += (self.reach[h].0 + tweak[h].0) * envelope;
            dy += (self.reach[h].1 + tweak[h].1) * envelope;
        }
        (dx, dy)
    }
}

/// Neutral pose around the origin, in pixels, shared by every signer.
fn neutral_pose() -> Vec<(f64, f64)> {
    let mut rng = seeded(0x5eed, 0, 0);
    (0..NUM_LANDMARKS)
        .map(|k| match k {
            11 => (-80.0, -100.0),
            12 => (80.0, -100.0),
            23 => (-60.0, 100.0),
            24 => (60.0, 100.0),
            _ if LEFT_HAND.contains(&k) => (-50.0 + rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
            _ if RIGHT_HAND.contains(&k) => (50.0 + rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
            _ if FACE.contains(&k) => (rng.random_range(-25.0..25.0), -170.0 + rng.random_range(-25.0..25.0)),
            _ => (rng.random_range(-120.0..120.0), rng.random_range(-180.0..120.0)),
        })
        .collect()
}

struct SignerStyle {
    scale: f64,
    rotation: f64,
    translation: (f64, f64),
    amplitude: f64,
    speed: f64,
    /// Hand-path shifts per gloss.
    tweaks: Vec<[(f64, f64); 2]>,
}

impl SignerStyle {
    fn new(spec: &SynthCorpusSpec, rng: &mut impl Rng) -> Self {
        let range = |rng: &mut dyn rand::RngCore, [a, b]: [f64; 2]| if a == b { a } else { rng.random_range(a..b) };
        let sym = |rng: &mut dyn rand::RngCore, m: f64| if m == 0.0 { 0.0 } else { rng.random_range(-m..m) };
        Self {
            scale: range(rng, spec.scale_range),
            rotation: sym(rng, spec.max_rotation),
            translation: (
                320.0 + sym(rng, spec.max_translation),
                240.0 + sym(rng, spec.max_translation),
            ),
            amplitude: range(rng, spec.amplitude_range),
            speed: range(rng, spec.speed_range),
            tweaks: (0..spec.n_glosses)
                .map(|_| [0, 1].map(|_| (sym(rng, spec.signer_variation * REACH), sym(rng, spec.signer_variation * REACH))))
                .collect(),
        }
    }

    fn place(&self, (x, y): (f64, f64)) -> Point {
        let (s, c) = self.rotation.sin_cos();
        Point {
            x: self.scale * (c * x - s * y) + self.translation.0,
            y: self.scale * (s * x + c * y) + self.translation.1,
        }
    }
}

struct Renderer<'a> {
    spec: &'a SynthCorpusSpec,
    templates: Vec<Template>,
    neutral: Vec<(f64, f64)>,
    signers: Vec<SignerStyle>,
}

impl Renderer<'_> {
    fn render(&self, id: String, sentence: &[usize], signer: usize, rng: &mut impl Rng) -> Result<KeypointSequence> {
        let spec = self.spec;
        let style = &self.signers[signer];
        let c = spec.coarticulation;
        // Glosses shorter than 2c + 1 frames would overlap more than one neighbour.
        let durations: Vec<usize> = sentence
            .iter()
            .map(|_| {
                let base = rng.random_range(spec.frames_per_gloss[0]..=spec.frames_per_gloss[1]);
                ((base as f64 / style.speed).round() as usize).max(2 * c + 1)
            })
            .collect();
        let mut starts = Vec::with_capacity(durations.len());
        let mut t = 0;
        for d in &durations {
            starts.push(t);
            t += d - c;
        }
        let total = t + c;
        let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        let last = sentence.len() - 1;

        let mut frames = Vec::with_capacity(total);
        for t in 0..total {
            // Linear ramps over the c overlapping frames at each boundary.
            let mut active = Vec::with_capacity(2);
            for (j, (&start, &d)) in starts.iter().zip(&durations).enumerate() {
                if t < start || t >= start + d {
                    continue;
                }
                let local = t - start;
                let mut w = 1.0;
                if j > 0 && local < c {
                    w = (local + 1) as f64 / (c + 1) as f64;
                }
                if j < last && local >= d - c {
                    w = (d - local) as f64 / (c + 1) as f64;
                }
                active.push((j, (local as f64 + 0.5) / d as f64, w));
            }
            let norm: f64 = active.iter().map(|a| a.2).sum();
            let frame: Vec<Landmark> = (0..NUM_LANDMARKS)
                .map(|k| {
                    let (mut x, mut y) = self.neutral[k];
                    for &(j, tau, w) in &active {
                        let g = sentence[j];
                        let (dx, dy) = self.templates[g].offset(k, tau, &style.tweaks[g]);
                        x += style.amplitude * dx * w / norm;
                        y += style.amplitude * dy * w / norm;
                    }
                    let mut p = style.place((x, y));
                    if spec.noise_sigma > 0.0 {
                        p.x += noise.sample(rng);
                        p.y += noise.sample(rng);
                    }
                    Some(p)
                })
                .collect();
            frames.push(frame);
        }
        if spec.missing_rate > 0.0 {
            for k in 0..NUM_LANDMARKS {
                let keep = rng.random_range(0..total);
                for (t, frame) in frames.iter_mut().enumerate() {
                    if t != keep && rng.random::<f64>() < spec.missing_rate {
                        frame[k] = None;
                    }
                }
            }
        }
        KeypointSequence::new(id, format!("signer{signer:02}"), frames)
    }
}

/// How many signers the SI split holds out for test (and again for dev).
fn held_out_signers(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        (n / 4).max(1)
    }
}

/// Picks sentences to hold out so that both sides still contain every gloss.
/// Returns the held-out set, empty when no valid choice exists.
fn hold_out_sentences(unique: &[Vec<usize>], n_glosses: usize, rng: &mut impl Rng) -> BTreeSet<usize> {
    let mut held = BTreeSet::new();
    if unique.len() < 2 {
        return held;
    }
    let quota = (unique.len() / 4).max(1);
    let mut order: Vec<usize> = (0..unique.len()).collect();
    order.shuffle(rng);
    let coverage = |held: &BTreeSet<usize>, inside: bool| -> BTreeMap<usize, usize> {
        let mut m = BTreeMap::new();
        for (i, s) in unique.iter().enumerate() {
            if held.contains(&i) == inside {
                for g in s {
                    *m.entry(*g).or_insert(0) += 1;
                }
            }
        }
        m
    };
    let keeps_training_complete = |held: &BTreeSet<usize>, cand: usize| {
        let mut h = held.clone();
        h.insert(cand);
        coverage(&h, false).len() == n_glosses
    };
    // First make the held-out side cover every gloss, then fill the quota.
    for &i in &order {
        let covered = coverage(&held, true);
        if covered.len() == n_glosses {
            break;
        }
        let adds_new = unique[i].iter().any(|g| !covered.contains_key(g));
        if adds_new && keeps_training_complete(&held, i) {
            held.insert(i);
        }
    }
    if coverage(&held, true).len() < n_glosses {
        return BTreeSet::new();
    }
    for &i in &order {
        if held.len() >= quota {
            break;
        }
        if !held.contains(&i) && keeps_training_complete(&held, i) {
            held.insert(i);
        }
    }
    held
}

/// Generates a corpus under `spec` and assigns recordings to splits.
///
/// Recordings are numbered `j = i · recordings_per_sentence + r` and
/// performed by signer `(j + ⌊j / n_signers⌋) mod n_signers`, which rotates
/// every repetition index through every signer.
pub fn generate_synthetic_corpus(spec: &SynthCorpusSpec, policy: SplitPolicy) -> Result<Corpus> {
    spec.validate()?;
    let sentences = spec.resolve_sentences()?;
    let vocab = GlossVocabulary::new((0..spec.n_glosses).map(gloss_token).collect())?;
    let renderer = Renderer {
        spec,
        templates: (0..spec.n_glosses)
            .map(|g| Template::new(&mut seeded(spec.seed, STREAM_TEMPLATES, g as u64)))
            .collect(),
        neutral: neutral_pose(),
        signers: (0..spec.n_signers)
            .map(|s| SignerStyle::new(spec, &mut seeded(spec.seed, STREAM_SIGNERS, s as u64)))
            .collect(),
    };

    let r_per = spec.recordings_per_sentence;
    let mut recordings = Vec::with_capacity(sentences.len() * r_per);
    for (i, sentence) in sentences.iter().enumerate() {
        for r in 0..r_per {
            let j = i * r_per + r;
            let signer = (j + j / spec.n_signers) % spec.n_signers;
            let mut rng = seeded(spec.seed, STREAM_RECORDINGS, j as u64);
            let seq = renderer.render(format!("s{i:04}r{r}"), sentence, signer, &mut rng)?;
            let glosses: Vec<String> = sentence.iter().map(|&g| gloss_token(g)).collect();
            let target = vocab.encode(&glosses)?;
            recordings.push((
                i,
                r,
                signer,
                Sample {
                    sequence: seq,
                    glosses,
                    target,
                },
            ));
        }
    }

    let mut corpus = Corpus {
        vocab,
        train: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
    };
    match policy {
        SplitPolicy::Si => {
            let n = spec.n_signers;
            let k = held_out_signers(n);
            let test_from = n - k;
            let dev_from = if n >= 3 { test_from - k } else { test_from };
            for (_, _, signer, sample) in recordings {
                if signer >= test_from {
                    corpus.test.push(sample);
                } else if signer >= dev_from {
                    corpus.dev.push(sample);
                } else {
                    corpus.train.push(sample);
                }
            }
        }
        SplitPolicy::Us => {
            let mut unique: Vec<Vec<usize>> = sentences.clone();
            unique.sort();
            unique.dedup();
            let held = hold_out_sentences(&unique, spec.n_glosses, &mut seeded(spec.seed, STREAM_SPLIT, 0));
            if unique.len() >= 2 && held.is_empty() {
                return Err(Error::CorpusSpec(
                    "cannot hold out sentences that cover every gloss while training still does".into(),
                ));
            }
            let held: HashSet<&Vec<usize>> = held.iter().map(|&i| &unique[i]).collect();
            for (i, r, _, sample) in recordings {
                if held.contains(&sentences[i]) {
                    corpus.test.push(sample);
                } else if r_per >= 2 && r == r_per - 1 {
                    corpus.dev.push(sample);
                } else {
                    corpus.train.push(sample);
                }
            }
        }
    }
    let trained: BTreeSet<usize> = corpus.train.iter().flat_map(|s| s.target.ids().to_vec()).collect();
    if trained.len() != spec.n_glosses {
        return Err(Error::CorpusSpec(format!(
            "only {} of {} glosses occur in the training split",
            trained.len(),
            spec.n_glosses
        )));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degenerate() -> SynthCorpusSpec {
        SynthCorpusSpec {
            n_glosses: 1,
            n_signers: 1,
            n_sentences: 1,
            sentence_len: [1, 1],
            ..SynthCorpusSpec::default()
        }
    }

    #[test]
    fn degenerate_spec_trains_on_everything() {
        for policy in [SplitPolicy::Si, SplitPolicy::Us] {
            let c = generate_synthetic_corpus(&degenerate(), policy).unwrap();
            assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (1, 0, 0));
        }
    }

    #[test]
    fn unused_gloss_is_a_spec_error() {
        let spec = SynthCorpusSpec {
            n_glosses: 3,
            sentences: vec![vec![0, 1]],
            ..SynthCorpusSpec::default()
        };
        assert!(matches!(
            generate_synthetic_corpus(&spec, SplitPolicy::Si),
            Err(Error::CorpusSpec(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthCorpusSpec::default();
        let a = generate_synthetic_corpus(&spec, SplitPolicy::Us).unwrap();
        let b = generate_synthetic_corpus(&spec, SplitPolicy::Us).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coarticulation_length() {
        let spec = SynthCorpusSpec {
            n_glosses: 2,
            sentences: vec![vec![0, 1]],
            frames_per_gloss: [10, 10],
            speed_range: [1.0, 1.0],
            coarticulation: 3,
            ..SynthCorpusSpec::default()
        };
        let c = generate_synthetic_corpus(&spec, SplitPolicy::Si).unwrap();
        assert_eq!(c.train[0].sequence.len(), 17);
    }
}
