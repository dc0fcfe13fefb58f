"""Synthetic audio-event captioning corpora with known feature/word alignment.

Each clip is a sequence of audio events placed left to right inside a fixed
frame budget.  An event stamps its fixed random template into the feature
matrix at its onset; the caption lists one phrase per event in onset order,
joined by connectives, so phrase position and onset are perfectly rank
correlated.  That alignment is what makes a local cross-mixing window
informative at desk scale, where feature length and caption length are of
the same order.

Corpora can live in log-mel space (T x F spectrograms, for training the CNN
encoder end to end) or directly in encoder-output space (L x D matrices,
imported as features to train the decoder alone).  Reference 0 of each clip
uses a fixed phrase/connective choice, so next-token accuracy against it has
no ceiling from synonym ambiguity; references 1..4 rotate the synonyms.

On disk a corpus is a directory of AFM1 feature files plus ``captions.jsonl``
({clip_id, captions}) and ``spec.json``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frontend import LOG_FLOOR, mel_band_centers, read_features, write_features


@dataclass(frozen=True)
class EventType:
    name: str
    phrases: tuple[str, ...]
    duration: int  # frames in the corpus's feature space


@dataclass
class CorpusSpec:
    name: str
    event_types: tuple[EventType, ...]
    connectives: tuple[str, ...]
    n_clips: int
    events_per_clip: tuple[int, int]
    frames: int
    bands: int
    noise_std: float
    seed: int
    space: str = "logmel"  # "logmel" (T x F) or "encoder" (L x D)
    refs_per_clip: int = 5
    # background sounds no caption mentions; stamped at random positions
    # after the captioned events
    distractor_types: tuple[EventType, ...] = ()
    distractors_per_clip: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "name", "connectives", "n_clips", "events_per_clip", "frames",
            "bands", "noise_std", "seed", "space", "refs_per_clip", "distractors_per_clip")}
        d["connectives"] = list(d["connectives"])
        d["events_per_clip"] = list(d["events_per_clip"])
        d["distractors_per_clip"] = list(d["distractors_per_clip"])
        d["event_types"] = [{"name": e.name, "phrases": list(e.phrases), "duration": e.duration}
                            for e in self.event_types]
        d["distractor_types"] = [{"name": e.name, "phrases": list(e.phrases), "duration": e.duration}
                                 for e in self.distractor_types]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        events = tuple(EventType(e["name"], tuple(e["phrases"]), e["duration"])
                       for e in d["event_types"])
        distractors = tuple(EventType(e["name"], tuple(e["phrases"]), e["duration"])
                            for e in d.get("distractor_types", []))
        return cls(name=d["name"], event_types=events, connectives=tuple(d["connectives"]),
                   n_clips=d["n_clips"], events_per_clip=tuple(d["events_per_clip"]),
                   frames=d["frames"], bands=d["bands"], noise_std=d["noise_std"],
                   seed=d["seed"], space=d["space"], refs_per_clip=d["refs_per_clip"],
                   distractor_types=distractors,
                   distractors_per_clip=tuple(d.get("distractors_per_clip", (0, 0))))


@dataclass
class Clip:
    clip_id: str
    features: np.ndarray          # (frames, bands)
    captions: list[str]
    timeline: list[tuple[str, int]] | None  # (event name, onset frame)


@dataclass
class Corpus:
    spec: CorpusSpec
    clips: list[Clip]
    splits: dict[str, list[str]]

    def by_id(self, clip_id: str) -> Clip:
        return self._index()[clip_id]

    def _index(self):
        if not hasattr(self, "_idx"):
            self._idx = {c.clip_id: c for c in self.clips}
        return self._idx

    def split_clips(self, split: str) -> list[Clip]:
        return [self.by_id(i) for i in self.splits[split]]


def event_template(event: EventType, bands: int, space: str) -> np.ndarray:
    """The event's fixed random pattern, identical wherever the event appears.

    Seeded from the event's identity alone (name, duration, bands, space),
    so two corpora sharing an event share its template bit for bit.
    """
    key = f"template:{event.name}:{event.duration}:{bands}:{space}"
    seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    if space == "logmel":
        return np.log(LOG_FLOOR) + rng.uniform(8.0, 24.0, size=(event.duration, bands))
    return rng.normal(0.0, 1.0, size=(event.duration, bands))


def _background(spec: CorpusSpec) -> float:
    return float(np.log(LOG_FLOOR)) if spec.space == "logmel" else 0.0


def _caption_for(events: list[EventType], ref: int, connectives: tuple[str, ...]) -> str:
    parts = []
    for j, ev in enumerate(events):
        if j > 0:
            parts.append(connectives[(ref + j) % len(connectives)])
        parts.append(ev.phrases[ref % len(ev.phrases)])
    return " ".join(parts)


def generate_clip(spec: CorpusSpec, index: int) -> Clip:
    rng = np.random.default_rng([spec.seed, index])
    lo, hi = spec.events_per_clip
    k = int(rng.integers(lo, hi + 1))
    order = rng.choice(len(spec.event_types), size=k, replace=False)
    events = [spec.event_types[i] for i in order]
    total = sum(e.duration for e in events)
    if total > spec.frames:
        raise ValueError(f"events overflow the {spec.frames}-frame clip (need {total})")
    # Events are paced with the caption: small jittered gaps up front, then a
    # background tail.  Captions name events in temporal order, so each event
    # stays within a small offset of its phrase's position (a local cross
    # window is a truthful prior).  Encoder-space clips get a random-length
    # tail, mirroring variable clip durations: beyond the window, frame
    # positions carry no stable structure.  Log-mel clips keep the full frame
    # budget (rectangular batches keep batch-norm statistics clean); their
    # tail is background "silence".
    slack = spec.frames - total
    active_extra = int(min(slack, rng.integers(k + 1, 2 * k + 3)))
    gaps = rng.multinomial(active_extra, np.full(k + 1, 1.0 / (k + 1)))
    features = np.full((spec.frames, spec.bands), _background(spec))
    timeline = []
    cursor = 0
    for gap, ev in zip(gaps, events):
        cursor += int(gap)
        features[cursor:cursor + ev.duration] = event_template(ev, spec.bands, spec.space)
        timeline.append((ev.name, cursor))
        cursor += ev.duration
    if spec.space == "encoder":
        tail = int(rng.integers(0, spec.frames - cursor + 1))
        features = features[: cursor + tail].copy()
    lo_d, hi_d = spec.distractors_per_clip
    if hi_d > 0 and spec.distractor_types:
        # uncaptioned background sounds at unconstrained positions in the
        # stretch after the captioned events
        room = features.shape[0] - cursor
        for _ in range(int(rng.integers(lo_d, hi_d + 1))):
            ev = spec.distractor_types[int(rng.integers(0, len(spec.distractor_types)))]
            if room <= ev.duration:
                break
            at = cursor + int(rng.integers(0, room - ev.duration))
            features[at:at + ev.duration] = event_template(ev, spec.bands, spec.space)
    if spec.noise_std > 0:
        features += rng.normal(0.0, spec.noise_std, size=features.shape)
    captions = []
    for r in range(spec.refs_per_clip):
        cap = _caption_for(events, r, spec.connectives)
        if cap not in captions:
            captions.append(cap)
    return Clip(clip_id=f"{spec.name}-{index:05d}", features=features,
                captions=captions, timeline=timeline)


def generate_corpus(spec: CorpusSpec) -> Corpus:
    if len(spec.event_types) < 2:
        raise ValueError("need at least 2 event types")
    if spec.n_clips < 10:
        raise ValueError("need at least 10 clips")
    if spec.events_per_clip[1] > len(spec.event_types):
        raise ValueError("events_per_clip upper bound exceeds the number of event types")
    worst = sorted((e.duration for e in spec.event_types), reverse=True)[: spec.events_per_clip[1]]
    if sum(worst) > spec.frames:
        raise ValueError(f"events overflow the {spec.frames}-frame clip in the worst case")
    clips = [generate_clip(spec, i) for i in range(spec.n_clips)]
    ids = [c.clip_id for c in clips]
    order = np.random.default_rng([spec.seed, 10 ** 9]).permutation(len(ids))
    n_train = int(0.8 * len(ids))
    n_val = int(0.1 * len(ids))
    shuffled = [ids[i] for i in order]
    splits = {"train": sorted(shuffled[:n_train]),
              "val": sorted(shuffled[n_train:n_train + n_val]),
              "eval": sorted(shuffled[n_train + n_val:])}
    return Corpus(spec=spec, clips=clips, splits=splits)


# ---------------------------------------------------------------------------
# the standard transfer pair

_PHRASES = {
    "dog": ("a dog barks", "a dog is barking", "the dog barks loudly"),
    "horn": ("a horn honks", "a car horn sounds", "the horn blares"),
    "bell": ("a bell rings", "the bell chimes", "a bell is ringing"),
    "rain": ("rain falls steadily", "rain is falling", "heavy rain pours"),
    "engine": ("an engine rumbles", "the engine is running", "a motor hums"),
    "bird": ("a bird chirps", "birds are singing", "a bird tweets"),
    "siren": ("a siren wails", "the siren sounds", "a siren is wailing"),
    "hammer": ("a hammer knocks", "someone hammers a nail", "the hammer bangs"),
}

CONNECTIVES = ("then", "followed by", "and then")

# background chatter that no caption ever mentions
_DISTRACTORS = tuple(EventType(name, (), 3) for name in ("murmur", "hiss", "static"))


def _events(names: list[str], duration: int) -> tuple[EventType, ...]:
    return tuple(EventType(n, _PHRASES[n], duration) for n in names)


def standard_pairs(space: str = "logmel", bands: int | None = None,
                   seed: int = 2024) -> tuple[CorpusSpec, CorpusSpec]:
    """The pretrain/fine-tune corpus pair.

    Corpus A is large (1000 clips, 6 event types); corpus B is small
    (200 clips) and shares four of A's event types plus two of its own, so
    the vocabularies overlap without either containing the other.
    """
    if space == "logmel":
        frames, bands_, duration, events, noise = 256, bands or 64, 40, (2, 4), 0.2
        distractors, per_clip = (), (0, 0)
    elif space == "encoder":
        # clips run much longer than their event span and vary in length, as
        # real recordings do: paced onsets keep aligned offsets well inside
        # frames/4, while the stretch beyond the captioned events carries
        # only unmentioned background chatter at unstable positions --
        # exactly the region a local window freezes out
        frames, bands_, duration, events, noise = 120, bands or 64, 3, (3, 4), 0.5
        distractors, per_clip = _DISTRACTORS, (1, 3)
    else:
        raise ValueError(f"unknown feature space {space!r}")
    spec_a = CorpusSpec(
        name="corpus-a",
        event_types=_events(["dog", "horn", "bell", "rain", "engine", "bird"], duration),
        connectives=CONNECTIVES, n_clips=1000, events_per_clip=events,
        frames=frames, bands=bands_, noise_std=noise, seed=seed, space=space,
        distractor_types=distractors, distractors_per_clip=per_clip)
    spec_b = CorpusSpec(
        name="corpus-b",
        event_types=_events(["dog", "horn", "bell", "rain", "siren", "hammer"], duration),
        connectives=CONNECTIVES, n_clips=200, events_per_clip=events,
        frames=frames, bands=bands_, noise_std=noise, seed=seed + 1, space=space,
        distractor_types=distractors, distractors_per_clip=per_clip)
    return spec_a, spec_b


# ---------------------------------------------------------------------------
# optional WAV path: tones instead of stamped spectrogram templates


def synthesize_wav_clip(spec: CorpusSpec, index: int, sample_rate: int = 44100,
                        win: int = 2048) -> tuple[np.ndarray, Clip]:
    """Render a clip's timeline as sine bursts; returns (samples, clip).

    Event k of the spec maps to the center frequency of mel band 12 + 6k, so
    the frontend's band argmax recovers which event is sounding.
    """
    if spec.space != "logmel":
        raise ValueError("WAV synthesis only makes sense for log-mel corpora")
    clip = generate_clip(spec, index)
    hop = win // 2
    n_samples = spec.frames * hop + win
    samples = np.zeros(n_samples)
    centers = mel_band_centers(spec.bands, sample_rate)
    freq_of = {ev.name: centers[12 + 6 * i] for i, ev in enumerate(spec.event_types)}
    t = np.arange(n_samples) / sample_rate
    for name, onset in clip.timeline:
        dur = next(e.duration for e in spec.event_types if e.name == name)
        a, b = onset * hop, (onset + dur) * hop + win
        samples[a:b] += 0.5 * np.sin(2 * np.pi * freq_of[name] * t[a:b])
    return samples, clip


def event_band(spec: CorpusSpec, name: str) -> int:
    for i, ev in enumerate(spec.event_types):
        if ev.name == name:
            return 12 + 6 * i
    raise KeyError(name)


# ---------------------------------------------------------------------------
# disk layout


def write_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    for clip in corpus.clips:
        write_features(out / "features" / f"{clip.clip_id}.afm", clip.features)
    with open(out / "captions.jsonl", "w", encoding="utf-8") as fh:
        for clip in corpus.clips:
            fh.write(json.dumps({"clip_id": clip.clip_id, "captions": clip.captions}) + "\n")
    meta = corpus.spec.to_dict()
    meta["splits"] = corpus.splits
    with open(out / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)


def load_corpus(corpus_dir) -> Corpus:
    root = Path(corpus_dir)
    with open(root / "spec.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    splits = {k: list(v) for k, v in meta.pop("splits").items()}
    spec = CorpusSpec.from_dict(meta)
    clips = []
    with open(root / "captions.jsonl", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            feats = read_features(root / "features" / f"{rec['clip_id']}.afm")
            clips.append(Clip(clip_id=rec["clip_id"], features=feats,
                              captions=list(rec["captions"]), timeline=None))
    return Corpus(spec=spec, clips=clips, splits=splits)
