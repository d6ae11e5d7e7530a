"""Recording IO, cohort manifests and the seeded synthetic cohort generator."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (BAND_NAMES, FS_HZ, N_CHANNELS, BandSpec, ConfigError, DataError, ElectrodeLayout,
                   Recording, check_names, default_band_spec)

DEFAULT_BAND_AMPLITUDES = {"delta": 20.0, "theta": 10.0, "alpha": 8.0, "beta": 5.0, "gamma": 3.0}
DEFAULT_EFFECT_ELECTRODES = ("Fp1", "Fp2", "F3", "F4")


@dataclass(frozen=True)
class Effect:
    band: str = "alpha"
    electrodes: tuple[str, ...] = DEFAULT_EFFECT_ELECTRODES
    energy_ratio: float = 3.0


@dataclass(frozen=True)
class CohortSpec:
    """Synthetic cohort parameters.

    Each channel is a sum of band-limited random-phase sinusoid mixtures (one
    per band, RMS amplitude from `band_amplitudes`) plus white noise. Tones
    keep `band_guard_hz` away from band edges so filter-bank leakage between
    neighbouring bands stays negligible. Subject
    and channel gains are log-normal so subjects differ; patients get their
    `effect.band` energy multiplied by `effect.energy_ratio` at the effect
    electrodes.
    """

    n_subjects: int = 64
    n_patients: int = 32
    duration_s: float = 120.0
    fs_hz: float = FS_HZ
    effect: Effect = Effect()
    band_amplitudes: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_BAND_AMPLITUDES))
    subject_gain_sigma: float = 0.1
    channel_gain_sigma: float = 0.05
    white_noise_std: float = 1.0
    band_guard_hz: float = 1.0
    seed: int = 0

    def validate(self, layout: ElectrodeLayout | None = None, window_size: int = 5120) -> None:
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be >= 1")
        if not 0 <= self.n_patients <= self.n_subjects:
            raise ConfigError(f"n_patients ({self.n_patients}) must lie in [0, n_subjects={self.n_subjects}]")
        if self.duration_s * self.fs_hz < window_size:
            raise ConfigError(f"duration {self.duration_s}s at {self.fs_hz} Hz is shorter than one window")
        if not self.effect.energy_ratio > 1.0:
            raise ConfigError("effect.energy_ratio must be > 1")
        if self.effect.band not in BAND_NAMES:
            raise ConfigError(f"unknown effect band {self.effect.band!r}")
        if set(self.band_amplitudes) != set(BAND_NAMES):
            raise ConfigError(f"band_amplitudes must define exactly {BAND_NAMES}")
        if not 0 <= self.band_guard_hz < 2.0:
            raise ConfigError("band_guard_hz must lie in [0, 2)")
        if min(self.band_amplitudes.values()) < 0 or self.white_noise_std < 0:
            raise ConfigError("amplitudes must be nonnegative")
        if layout is not None:
            unknown = set(self.effect.electrodes) - set(layout.names)
            if unknown:
                raise ConfigError(f"effect electrodes not in layout: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects, "n_patients": self.n_patients,
            "duration_s": self.duration_s, "fs_hz": self.fs_hz,
            "effect": {"band": self.effect.band, "electrodes": list(self.effect.electrodes),
                       "energy_ratio": self.effect.energy_ratio},
            "band_amplitudes": {b: self.band_amplitudes[b] for b in BAND_NAMES},
            "subject_gain_sigma": self.subject_gain_sigma, "channel_gain_sigma": self.channel_gain_sigma,
            "white_noise_std": self.white_noise_std, "band_guard_hz": self.band_guard_hz,
            "seed": self.seed,
        }


def subject_rng(seed: int, index: int) -> np.random.Generator:
    """Independent PCG64 substream for one subject; stable as the cohort grows."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def synthesize_subject(spec: CohortSpec, layout: ElectrodeLayout, index: int, label: int,
                       bands: BandSpec | None = None) -> Recording:
    bands = bands or default_band_spec()
    rng = subject_rng(spec.seed, index)
    n = int(round(spec.duration_s * spec.fs_hz))
    freqs = np.fft.rfftfreq(n, d=1.0 / spec.fs_hz)
    effect_rows = [layout.index(name) for name in spec.effect.electrodes]

    spectrum = np.zeros((N_CHANNELS, freqs.size), dtype=np.complex128)
    subject_gain = np.exp(spec.subject_gain_sigma * rng.standard_normal(len(bands.bands)))
    for b_idx, band in enumerate(bands.bands):
        lo, hi = band.lo_hz + spec.band_guard_hz, band.hi_hz - spec.band_guard_hz
        sel = (freqs >= max(lo, spec.band_guard_hz)) & (freqs <= hi) & (freqs < spec.fs_hz / 2)
        n_bins = int(sel.sum())
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(N_CHANNELS, n_bins))
        gains = subject_gain[b_idx] * np.exp(spec.channel_gain_sigma * rng.standard_normal(N_CHANNELS))
        if label == 1 and band.name == spec.effect.band:
            gains[effect_rows] *= np.sqrt(spec.effect.energy_ratio)
        if n_bins == 0:
            continue
        # per-bin magnitude giving mean power amp^2 over the band's bins
        amp = spec.band_amplitudes[band.name]
        mag = amp * n / np.sqrt(2.0 * n_bins)
        spectrum[:, sel] = (gains * mag)[:, None] * np.exp(1j * phases)
    channels = np.fft.irfft(spectrum, n=n, axis=-1)
    channels += spec.white_noise_std * rng.standard_normal(channels.shape)
    return Recording(f"sub-{index:03d}", label, spec.fs_hz, channels, tuple(layout.names))


def generate_synthetic_cohort(spec: CohortSpec, layout: ElectrodeLayout) -> list[Recording]:
    """Subjects 0..n_patients-1 are patients, the rest controls."""
    spec.validate(layout)
    return [synthesize_subject(spec, layout, i, int(i < spec.n_patients)) for i in range(spec.n_subjects)]


# --------------------------------------------------------------------------
# Files

def write_recording(path: str | Path, recording: Recording) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(",".join(recording.channel_names) + "\n")
        fh.writelines(",".join(map(repr, row)) + "\n" for row in recording.channels.T.tolist())
    os.replace(tmp, path)


def read_recording_csv(path: str | Path, subject_id: str, label: int, layout: ElectrodeLayout,
                       fs_hz: float = FS_HZ) -> Recording:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            names = [n.strip() for n in fh.readline().rstrip("\r\n").split(",")]
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    where = f"{path}: "
    check_names(names, layout, where)
    lengths = {len(r) for r in rows if r}
    if lengths and lengths != {len(names)}:
        raise DataError(f"{where}ragged rows: found row lengths {sorted(lengths)} for {len(names)} channels")
    try:
        data = np.array([[float(v) if v.strip() else np.nan for v in r] for r in rows if r], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{where}non-numeric sample: {exc}") from None
    if data.size == 0:
        raise DataError(f"{where}no samples")
    if np.isnan(data).any():
        # an empty trailing cell means that channel ended early
        raise DataError(f"{where}ragged channel lengths (missing samples)")
    return Recording(subject_id, label, fs_hz, np.ascontiguousarray(data.T), tuple(names))


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    label: int
    path: str


@dataclass(frozen=True)
class Manifest:
    fs_hz: float
    entries: tuple[ManifestEntry, ...]
    root: Path = Path(".")

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def write_manifest(path: str | Path, fs_hz: float, entries: Sequence[ManifestEntry], extra: dict | None = None) -> None:
    doc = {"fs_hz": fs_hz,
           "subjects": [{"subject_id": e.subject_id, "label": e.label, "path": e.path} for e in entries]}
    if extra:
        doc.update(extra)
    _atomic_write_text(Path(path), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        entries = tuple(ManifestEntry(str(s["subject_id"]), int(s["label"]), str(s["path"]))
                        for s in doc["subjects"])
        fs = float(doc["fs_hz"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"invalid manifest {path}: {exc}") from exc
    ids = [e.subject_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"invalid manifest {path}: duplicate subject ids")
    return Manifest(fs, entries, path.parent)


def load_recording(manifest: Manifest, entry: ManifestEntry, layout: ElectrodeLayout,
                   expected_fs: float | None = FS_HZ) -> Recording:
    if expected_fs is not None and manifest.fs_hz != expected_fs:
        raise DataError(f"sampling rate mismatch: manifest says {manifest.fs_hz} Hz, expected {expected_fs} Hz")
    return read_recording_csv(manifest.resolve(entry), entry.subject_id, entry.label, layout, manifest.fs_hz)


def load_cohort(manifest_path: str | Path, layout: ElectrodeLayout,
                expected_fs: float | None = FS_HZ) -> list[Recording]:
    manifest = read_manifest(manifest_path)
    return [load_recording(manifest, e, layout, expected_fs) for e in manifest.entries]


def write_cohort(out_dir: str | Path, recordings: Sequence[Recording], extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "recordings").mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in recordings:
        rel = f"recordings/{rec.subject_id}.csv"
        write_recording(out_dir / rel, rec)
        entries.append(ManifestEntry(rec.subject_id, rec.label, rel))
    fs = recordings[0].fs_hz if recordings else FS_HZ
    manifest = out_dir / "manifest.json"
    write_manifest(manifest, fs, entries, extra)
    return manifest


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
