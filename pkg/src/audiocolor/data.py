"""Dataset generation, ingestion, batching, and stage-1 masking.

The synthetic dataset operationalizes the colorization-ambiguity thesis: each
scene family pairs two iso-luminant hues (identical L, different ab) with two
distinct pure tones. The stored grayscale input is rendered from the family's
shared luminance, so the two hue variants of a layout are bit-identical in
grayscale and only the audio carries the hue.

Directory layout (same for synthetic and user-supplied real data):

    root/<split>/<video_id>/frame.png   color ground truth
    root/<split>/<video_id>/gray.png    grayscale input (optional for real
                                        data; derived from frame.png if absent)
    root/<split>/<video_id>/audio.wav   16-bit PCM mono

plus ``root/<split>/manifest.json`` as a structured-text cache of the entries
and their synthetic scene labels.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import colorspace as cs
from .audio import load_wav, save_wav
from .errors import ValidationError

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
SHAPES = ("disc", "box", "stripes")
WORKERS_ENV = "AUDIOCOLOR_NUM_THREADS"


def worker_count() -> int:
    """Worker-thread cap for data loading, from AUDIOCOLOR_NUM_THREADS."""
    import os

    raw = os.environ.get(WORKERS_ENV, "").strip()
    if raw.isdigit() and int(raw) > 0:
        return int(raw)
    return 1


@dataclass
class SceneFamily:
    name: str
    shape: str
    hue_a: tuple[float, float, float]  # Lab
    hue_b: tuple[float, float, float]
    tone_a_hz: float
    tone_b_hz: float

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}, expected one of {SHAPES}")

    def hue(self, key: str) -> tuple[float, float, float]:
        return self.hue_a if key == "a" else self.hue_b

    def tone_hz(self, key: str) -> float:
        return self.tone_a_hz if key == "a" else self.tone_b_hz

    @property
    def shared_l(self) -> float:
        return 0.5 * (self.hue_a[0] + self.hue_b[0])


@dataclass
class SyntheticSceneSpec:
    families: list[SceneFamily]
    image_size: int = 32
    background_l: float = 70.0
    clip_seconds: float = 1.0
    sample_rate: int = 16_000
    tone_amplitude: float = 0.25
    noise_snr_db: float = 20.0

    def validate(self):
        if not self.families:
            raise ValidationError("scene spec needs at least one family")
        tones = []
        for fam in self.families:
            if abs(fam.hue_a[0] - fam.hue_b[0]) > 0.5:
                raise ValidationError(
                    f"family {fam.name!r}: hues are not iso-luminant "
                    f"(L {fam.hue_a[0]} vs {fam.hue_b[0]})")
            for key in ("a", "b"):
                lab = np.array(fam.hue(key), dtype=np.float64).reshape(1, 1, 3)
                _, clipped = cs.lab_array_to_rgb(lab)
                if clipped > 0.0:
                    raise ValidationError(
                        f"family {fam.name!r} hue_{key} {fam.hue(key)} is out of the sRGB gamut")
            tones += [fam.tone_a_hz, fam.tone_b_hz]
        if len(set(tones)) != len(tones):
            raise ValidationError(f"tone frequencies must be distinct per hue, got {tones}")
        if self.image_size < 16:
            raise ValidationError("image_size must be >= 16")


def default_scene_spec() -> SyntheticSceneSpec:
    """Three shape families, each with an iso-luminant red/green- or
    blue/yellow-style hue pair and well-separated tones."""
    return SyntheticSceneSpec(families=[
        SceneFamily("disc", "disc", (55.0, 45.0, 25.0), (55.0, -40.0, 30.0), 350.0, 550.0),
        SceneFamily("box", "box", (60.0, 20.0, -55.0), (60.0, 5.0, 60.0), 900.0, 1400.0),
        SceneFamily("stripes", "stripes", (50.0, 55.0, 5.0), (50.0, -45.0, 40.0), 2100.0, 3000.0),
    ])


@dataclass
class AudioImagePair:
    image: str
    audio: str
    source_video: str
    gray: str | None = None
    scene: str | None = None
    family: str | None = None
    hue: str | None = None
    tone_hz: float | None = None

    def to_json(self) -> dict:
        return {k: v for k, v in vars(self).items()}


@dataclass
class DatasetManifest:
    pairs: list[AudioImagePair]
    split: str
    seed: int
    root: str = ""
    rejected: list[str] = field(default_factory=list)

    def __post_init__(self):
        combos = [(p.image, p.audio) for p in self.pairs]
        if len(set(combos)) != len(combos):
            raise ValidationError("duplicate (image, audio) combination in manifest")
        if not all(p.source_video for p in self.pairs):
            raise ValidationError("every pair needs a non-empty source_video")

    def __len__(self) -> int:
        return len(self.pairs)


# -- rendering ------------------------------------------------------------------


def sample_layout(shape: str, size: int, rng: np.random.Generator) -> dict:
    if shape == "disc":
        return {"cx": float(rng.uniform(0.3, 0.7) * size),
                "cy": float(rng.uniform(0.3, 0.7) * size),
                "radius": float(rng.uniform(0.2, 0.3) * size)}
    if shape == "box":
        return {"cx": float(rng.uniform(0.35, 0.65) * size),
                "cy": float(rng.uniform(0.35, 0.65) * size),
                "hw": float(rng.uniform(0.15, 0.3) * size),
                "hh": float(rng.uniform(0.15, 0.3) * size)}
    if shape == "stripes":
        width = int(rng.integers(3, 6))
        return {"vertical": bool(rng.integers(0, 2)),
                "width": width,
                "phase": int(rng.integers(0, 2 * width))}
    raise ValidationError(f"unknown shape {shape!r}")


def layout_mask(shape: str, size: int, layout: dict) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "disc":
        return ((xx - layout["cx"]) ** 2 + (yy - layout["cy"]) ** 2
                <= layout["radius"] ** 2)
    if shape == "box":
        return ((np.abs(xx - layout["cx"]) <= layout["hw"])
                & (np.abs(yy - layout["cy"]) <= layout["hh"]))
    if shape == "stripes":
        coord = xx if layout["vertical"] else yy
        return ((coord + layout["phase"]) // layout["width"]) % 2 == 0
    raise ValidationError(f"unknown shape {shape!r}")


def render_pair(spec: SyntheticSceneSpec, fam: SceneFamily, hue_key: str,
                layout: dict) -> tuple[cs.RgbImage, cs.GrayImage]:
    """Color frame for the chosen hue plus the hue-independent grayscale
    render (object luminance = the family's shared L)."""
    size = spec.image_size
    mask = layout_mask(fam.shape, size, layout)
    hue = fam.hue(hue_key)

    lab = np.zeros((size, size, 3))
    lab[..., 0] = np.where(mask, hue[0], spec.background_l)
    lab[..., 1] = np.where(mask, hue[1], 0.0)
    lab[..., 2] = np.where(mask, hue[2], 0.0)
    rgb, _ = cs.lab_array_to_rgb(lab)

    gray_l = np.where(mask, fam.shared_l, spec.background_l)
    return cs.RgbImage(pixels=rgb), cs.GrayImage(L=gray_l[:, :, None])


def synth_tone(spec: SyntheticSceneSpec, freq_hz: float,
               rng: np.random.Generator) -> np.ndarray:
    n = int(round(spec.clip_seconds * spec.sample_rate))
    t = np.arange(n) / spec.sample_rate
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = spec.tone_amplitude * np.sin(2.0 * np.pi * freq_hz * t + phase)
    tone_rms = spec.tone_amplitude / np.sqrt(2.0)
    sigma = tone_rms / (10.0 ** (spec.noise_snr_db / 20.0))
    wave = wave + rng.normal(0.0, sigma, size=n)
    return np.clip(wave, -1.0, 1.0)


# -- generation / loading --------------------------------------------------------


def generate_synthetic_dataset(spec: SyntheticSceneSpec, n: int, seed: int,
                               root, split: str = "train") -> DatasetManifest:
    """Write n synthetic pairs under root/split; deterministic in seed."""
    spec.validate()
    root = Path(root)
    split_dir = root / split
    split_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        fam = spec.families[int(rng.integers(len(spec.families)))]
        hue_key = "a" if rng.random() < 0.5 else "b"
        layout = sample_layout(fam.shape, spec.image_size, rng)
        frame, gray = render_pair(spec, fam, hue_key, layout)
        wave = synth_tone(spec, fam.tone_hz(hue_key), rng)

        vid = f"{split}_{i:05d}"
        d = split_dir / vid
        d.mkdir(exist_ok=True)
        cs.save_png(frame, d / "frame.png")
        cs.save_gray_png(gray, d / "gray.png")
        save_wav(d / "audio.wav", wave, spec.sample_rate)
        pairs.append(AudioImagePair(
            image=str(d / "frame.png"), audio=str(d / "audio.wav"),
            gray=str(d / "gray.png"), source_video=vid,
            scene=f"{fam.name}:{hue_key}", family=fam.name, hue=hue_key,
            tone_hz=fam.tone_hz(hue_key)))
    manifest = DatasetManifest(pairs=pairs, split=split, seed=seed, root=str(root))
    _write_manifest_cache(manifest, split_dir)
    return manifest


def _write_manifest_cache(manifest: DatasetManifest, split_dir: Path):
    root = Path(manifest.root)

    def rel(path):
        return str(Path(path).relative_to(root)) if path else None

    rows = []
    for p in manifest.pairs:
        row = p.to_json()
        for key in ("image", "audio", "gray"):
            row[key] = rel(row[key])
        rows.append(row)
    doc = {
        "format": 1,
        "split": manifest.split,
        "seed": manifest.seed,
        "pairs": rows,
    }
    (split_dir / MANIFEST_NAME).write_text(json.dumps(doc, indent=1, sort_keys=True))


def _validate_entry(d: Path) -> tuple[AudioImagePair | None, str | None]:
    frame = d / "frame.png"
    audio = d / "audio.wav"
    if not frame.exists():
        return None, f"{d}: missing frame.png"
    if not audio.exists():
        return None, f"{d}: missing audio.wav"
    try:
        with Image.open(frame) as im:
            im.verify()
    except Exception as exc:
        return None, f"{frame}: unreadable PNG ({exc})"
    try:
        load_wav(audio)
    except Exception as exc:
        return None, f"{audio}: unreadable WAV ({exc})"
    gray = d / "gray.png"
    return AudioImagePair(image=str(frame), audio=str(audio),
                          gray=str(gray) if gray.exists() else None,
                          source_video=d.name), None


def load_manifest(root, split: str = "train") -> DatasetManifest:
    """Scan root/split, validate every pair, and merge cached scene labels.

    Malformed entries are rejected (with reasons on ``manifest.rejected``)
    without failing the load; an empty or missing split yields an empty
    manifest plus a warning.
    """
    root = Path(root)
    split_dir = root / split
    pairs: list[AudioImagePair] = []
    rejected: list[str] = []
    if not split_dir.is_dir():
        log.warning("split directory %s does not exist; empty manifest", split_dir)
        return DatasetManifest(pairs=[], split=split, seed=0, root=str(root))

    labels = {}
    cache = split_dir / MANIFEST_NAME
    if cache.exists():
        try:
            doc = json.loads(cache.read_text())
            labels = {p["source_video"]: p for p in doc.get("pairs", [])}
        except (json.JSONDecodeError, KeyError) as exc:
            rejected.append(f"{cache}: unreadable manifest cache ({exc})")

    for d in sorted(p for p in split_dir.iterdir() if p.is_dir()):
        entry, reason = _validate_entry(d)
        if entry is None:
            rejected.append(reason)
            continue
        meta = labels.get(d.name)
        if meta:
            entry.scene = meta.get("scene")
            entry.family = meta.get("family")
            entry.hue = meta.get("hue")
            entry.tone_hz = meta.get("tone_hz")
        pairs.append(entry)

    if not pairs:
        log.warning("no valid pairs under %s", split_dir)
    for reason in rejected:
        log.warning("rejected entry: %s", reason)
    return DatasetManifest(pairs=pairs, split=split, seed=0, root=str(root),
                           rejected=rejected)


# -- batching / masking ----------------------------------------------------------


def batch_iterator(manifest: DatasetManifest, batch_size: int, seed: int = 0,
                   shuffle: bool = True, epoch: int = 0):
    """Yield lists of pairs covering the manifest exactly once; order is
    deterministic per (seed, epoch). The final partial batch is emitted."""
    if batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    n = len(manifest.pairs)
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng((seed, epoch)).permutation(n)
    for s in range(0, n, batch_size):
        yield [manifest.pairs[int(k)] for k in order[s:s + batch_size]]


@dataclass
class MaskedBatch:
    pairs: list[AudioImagePair]
    use_semantics: np.ndarray  # bool per sample; False = run with r=0


def mask_ground_truth(batch: list[AudioImagePair], mask_prob: float,
                      seed) -> MaskedBatch:
    """Independently mask each sample with probability mask_prob; masked
    samples run the stage-1 forward without the semantic branch."""
    if not 0.0 <= mask_prob <= 1.0:
        raise ValidationError("mask_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    masked = rng.random(len(batch)) < mask_prob
    return MaskedBatch(pairs=list(batch), use_semantics=~masked)
