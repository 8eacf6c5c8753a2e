"""Reverberant corpus synthesis: RIR assignment, convolution, manifest.

Each utterance is convolved with its own impulse response (assignment
without replacement), gets a deterministic hash-based train/dev/test
split, and is recorded in a manifest CSV. All randomness derives from
(seed, index) pairs so any parallel schedule produces identical output.
"""

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp, rir
from .fileformats import fmt, write_rir

PEAK_LIMIT = 0.99

MANIFEST_COLUMNS = [
    "utterance", "rir_id", "rt60", "distance", "split", "gain",
    "clean_path", "reverb_path", "rir_path",
]


@dataclass(frozen=True)
class ManifestRow:
    utterance: str
    rir_id: int
    rt60: float
    distance: float
    split: str
    gain: float
    clean_path: str
    reverb_path: str
    rir_path: str


def split_of(utterance: str) -> str:
    """Deterministic 80/10/10 split from a hash of the utterance id."""
    digest = hashlib.md5(utterance.encode("utf-8")).hexdigest()
    bucket = int(digest[:8], 16) % 10
    if bucket < 8:
        return "train"
    return "dev" if bucket == 8 else "test"


def scan_clean_dir(clean_dir) -> list:
    """Sorted (utterance_id, path) pairs for every WAV in a directory."""
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"clean WAV directory not found: {clean_dir}")
    pairs = sorted((p.stem, p) for p in clean_dir.glob("*.wav"))
    if not pairs:
        raise FileNotFoundError(f"no WAV files in {clean_dir}")
    return pairs


def _synthesize_one(task):
    (utt, clean_path, spec, rir_id, out_dir, absorption_mode) = task
    out_dir = Path(out_dir)
    impulse = rir.image_method_rir(spec, absorption_mode=absorption_mode)
    clean = dsp.read_wav(clean_path)
    reverb = dsp.convolve(clean, impulse)
    peak = float(np.max(np.abs(reverb.samples))) if len(reverb) else 0.0
    gain = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    if gain != 1.0:
        reverb = dsp.Waveform(reverb.samples * gain, reverb.sample_rate)
    reverb_path = out_dir / "reverb" / f"{utt}.wav"
    rir_path = out_dir / "rirs" / f"rir{rir_id:05d}.ncir"
    dsp.write_wav(reverb, reverb_path)
    write_rir(impulse, rir_path)
    return ManifestRow(
        utterance=utt,
        rir_id=rir_id,
        rt60=spec.rt60,
        distance=spec.distance,
        split=split_of(utt),
        gain=gain,
        clean_path=str(clean_path),
        reverb_path=str(reverb_path.relative_to(out_dir)),
        rir_path=str(rir_path.relative_to(out_dir)),
    )


def build_corpus(clean_pairs, out_dir, seed: int, nominal_dims=rir.NOMINAL_DIMS,
                 rt60_range=rir.RT60_RANGE, sample_rate: int = 16000,
                 rir_count=None, absorption_mode: str = "eyring",
                 jobs: int = 1) -> list:
    """Convolve each clean utterance with its own sampled impulse response.

    Args:
        clean_pairs: (utterance_id, wav_path) pairs, e.g. from scan_clean_dir.
        rir_count: size of the sampled RIR pool (default: one per
            utterance). Must be at least the utterance count since no
            two utterances may share a response.

    Returns:
        Manifest rows sorted by utterance id.
    """
    clean_pairs = sorted(clean_pairs)
    n_utts = len(clean_pairs)
    if rir_count is None:
        rir_count = n_utts
    if rir_count < n_utts:
        raise ValueError(
            f"{rir_count} RIRs for {n_utts} utterances: assignment without "
            "replacement needs at least one RIR per utterance"
        )
    out_dir = Path(out_dir)
    (out_dir / "reverb").mkdir(parents=True, exist_ok=True)
    (out_dir / "rirs").mkdir(parents=True, exist_ok=True)
    specs = rir.make_rir_set(seed, rir_count, nominal_dims,
                             sample_rate=sample_rate, rt60_range=rt60_range,
                             compute_taps=False)
    order = np.random.default_rng((seed, rir_count)).permutation(rir_count)
    tasks = [
        (utt, str(path), specs[order[i]], int(order[i]), str(out_dir), absorption_mode)
        for i, (utt, path) in enumerate(clean_pairs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_synthesize_one, tasks))
    else:
        rows = [_synthesize_one(task) for task in tasks]
    return sorted(rows, key=lambda r: r.utterance)


def write_manifest(rows, path) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(",".join(MANIFEST_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join([
                r.utterance, str(r.rir_id), fmt(r.rt60), fmt(r.distance),
                r.split, fmt(r.gain), r.clean_path, r.reverb_path, r.rir_path,
            ]) + "\n")


def read_manifest(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(
            f"manifest not found: {path}; run make-corpus first"
        )
    rows = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ManifestRow(
                utterance=rec["utterance"],
                rir_id=int(rec["rir_id"]),
                rt60=float(rec["rt60"]),
                distance=float(rec["distance"]),
                split=rec["split"],
                gain=float(rec["gain"]),
                clean_path=rec["clean_path"],
                reverb_path=rec["reverb_path"],
                rir_path=rec["rir_path"],
            ))
    return rows
