"""Dataset formats, leave-one-movie-out splitting, and synthetic data.

On-disk layout of a dataset directory:

* ``manifest.json`` -- JSON array of objects with keys ``clip_id``,
  ``movie_id``, ``segment_index``, ``duration_s``, ``arousal``, ``valence``,
  ``label_range``. Labels may be ``null`` for unannotated clips.
* ``features_<modality>.csv`` -- text encoding, header row ``clip_id,f0000,...``,
  one row per clip in manifest order.
* ``features_<modality>.aanf`` -- binary encoding: 16-byte little-endian
  header (magic ``AANF``, version u16, modality code u16, dimension u32,
  row count u32) followed by row-major float32 rows in manifest order.

The synthetic generator plants a smooth latent affect signal and emits
features that are a fixed random linear image of ``[a, a^2, 1]`` plus noise,
so learnability can be checked against a closed-form baseline.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    FeatureCompletenessError,
    FeatureSchemaError,
    LabelRangeError,
    ManifestParseError,
    ParameterError,
)

MODALITY_DIMS: dict[str, int] = {
    "rgb_resnet": 2048,
    "rgb_i3d": 1024,
    "flow": 1024,
    "opensmile": 1582,
    "vggish": 128,
}
MODALITY_ORDER: tuple[str, ...] = ("rgb_resnet", "rgb_i3d", "flow", "opensmile", "vggish")
_MODALITY_CODES = {name: idx for idx, name in enumerate(MODALITY_ORDER)}

_AANF_MAGIC = b"AANF"
_AANF_VERSION = 1
_AANF_HEADER = struct.Struct("<4sHHII")  # magic, version, modality code, dim, rows


@dataclass(frozen=True)
class AffectLabel:
    """One annotated affect value with its dimension and declared range."""

    value: float
    dimension: str  # "arousal" or "valence"
    range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        lo, hi = self.range
        if not lo <= self.value <= hi:
            raise LabelRangeError(
                f"{self.dimension} label {self.value} outside declared range [{lo}, {hi}]"
            )


@dataclass(frozen=True)
class ClipManifest:
    clip_id: str
    movie_id: str
    segment_index: int
    duration_s: float
    arousal: AffectLabel | None
    valence: AffectLabel | None

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ManifestParseError(f"clip {self.clip_id}: duration_s must be positive")

    def label(self, dimension: str) -> float:
        lab = getattr(self, dimension, None)
        if lab is None:
            raise ContractError(f"clip {self.clip_id} has no {dimension!r} label")
        return lab.value


@dataclass
class FeatureRecord:
    """One clip's five fixed-dimension modality vectors."""

    clip_id: str
    rgb_resnet: np.ndarray
    rgb_i3d: np.ndarray
    flow: np.ndarray
    opensmile: np.ndarray
    vggish: np.ndarray

    def get(self, modality: str) -> np.ndarray:
        if modality not in MODALITY_DIMS:
            raise FeatureSchemaError(f"unknown modality {modality!r}")
        return getattr(self, modality)

    def validate(self) -> None:
        for name, dim in MODALITY_DIMS.items():
            vec = np.asarray(getattr(self, name))
            if vec.shape != (dim,):
                raise FeatureSchemaError(
                    f"clip {self.clip_id}: modality {name!r} expected {dim} values, got shape {vec.shape}"
                )
            if not np.all(np.isfinite(vec)):
                raise FeatureSchemaError(f"clip {self.clip_id}: modality {name!r} contains non-finite values")


@dataclass(frozen=True)
class SyntheticSpec:
    n_movies: int = 8
    segments_per_movie: int = 120
    seed: int = 42
    noise_std: float = 0.1
    smoothing_window: int = 9

    def __post_init__(self):
        if self.n_movies < 1 or self.segments_per_movie < 1 or self.smoothing_window < 1:
            raise ParameterError("synthetic spec sizes must be positive")
        if self.noise_std < 0:
            raise ParameterError("noise_std must be >= 0")


@dataclass
class Window:
    """L chronologically consecutive segments of one movie."""

    movie_id: str
    rows: list[ClipManifest]
    records: list[FeatureRecord]

    def __len__(self) -> int:
        return len(self.rows)

    def targets(self, dimension: str) -> list[float]:
        return [row.label(dimension) for row in self.rows]


# ---------------------------------------------------------------------------
# manifest serialization
# ---------------------------------------------------------------------------


def _label_from_json(value, dimension: str, rng: tuple[float, float]) -> AffectLabel | None:
    if value is None:
        return None
    return AffectLabel(value=float(value), dimension=dimension, range=rng)


def _manifest_sort_key(row: ClipManifest):
    return (row.movie_id, row.segment_index)


def save_manifest(path: str | Path, manifest: list[ClipManifest]) -> None:
    rows = []
    for row in sorted(manifest, key=_manifest_sort_key):
        rng = row.arousal.range if row.arousal else (row.valence.range if row.valence else (-1.0, 1.0))
        rows.append(
            {
                "clip_id": row.clip_id,
                "movie_id": row.movie_id,
                "segment_index": row.segment_index,
                "duration_s": row.duration_s,
                "arousal": None if row.arousal is None else row.arousal.value,
                "valence": None if row.valence is None else row.valence.value,
                "label_range": list(rng),
            }
        )
    Path(path).write_text(json.dumps(rows, indent=1) + "\n")


def load_manifest(path: str | Path) -> list[ClipManifest]:
    text = Path(path).read_text()
    if not text.strip():
        return []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, list):
        raise ManifestParseError(f"{path}: manifest must be a JSON array")
    rows = []
    for i, obj in enumerate(raw, start=1):
        try:
            rng = tuple(float(v) for v in obj.get("label_range", (-1.0, 1.0)))
            if len(rng) != 2 or rng[0] >= rng[1]:
                raise ManifestParseError(f"bad label_range {rng}")
            rows.append(
                ClipManifest(
                    clip_id=str(obj["clip_id"]),
                    movie_id=str(obj["movie_id"]),
                    segment_index=int(obj["segment_index"]),
                    duration_s=float(obj["duration_s"]),
                    arousal=_label_from_json(obj.get("arousal"), "arousal", rng),
                    valence=_label_from_json(obj.get("valence"), "valence", rng),
                )
            )
        except LabelRangeError:
            raise
        except ManifestParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestParseError(f"{path}: malformed row {i}: {exc}") from exc
    rows.sort(key=_manifest_sort_key)
    seen: set[tuple[str, int]] = set()
    for row in rows:
        key = (row.movie_id, row.segment_index)
        if key in seen:
            raise ManifestParseError(f"{path}: duplicate segment_index {key[1]} in movie {key[0]}")
        seen.add(key)
    return rows


# ---------------------------------------------------------------------------
# feature serialization
# ---------------------------------------------------------------------------


def _feature_matrix(records: list[FeatureRecord], modality: str) -> np.ndarray:
    return np.stack([np.asarray(r.get(modality), dtype=np.float32) for r in records])


def save_features(
    directory: str | Path,
    manifest: list[ClipManifest],
    records: list[FeatureRecord],
    fmt: str = "binary",
) -> None:
    """Write one feature file per modality, rows in manifest order.

    ``fmt`` is "binary", "text", or "both". Values are stored as float32 in
    both encodings; the binary encoding round-trips bit-exactly.
    """
    if fmt not in ("binary", "text", "both"):
        raise ParameterError(f"unknown feature format {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_id = {r.clip_id: r for r in records}
    missing = [row.clip_id for row in manifest if row.clip_id not in by_id]
    if missing:
        raise FeatureCompletenessError(f"no feature record for clips: {missing[:5]}")
    ordered = [by_id[row.clip_id] for row in sorted(manifest, key=_manifest_sort_key)]
    for rec in ordered:
        rec.validate()
    for modality, dim in MODALITY_DIMS.items():
        mat = _feature_matrix(ordered, modality)
        if fmt in ("binary", "both"):
            header = _AANF_HEADER.pack(
                _AANF_MAGIC, _AANF_VERSION, _MODALITY_CODES[modality], dim, len(ordered)
            )
            with open(directory / f"features_{modality}.aanf", "wb") as fh:
                fh.write(header)
                fh.write(mat.astype("<f4").tobytes())
        if fmt in ("text", "both"):
            with open(directory / f"features_{modality}.csv", "w") as fh:
                cols = ",".join(f"f{i:04d}" for i in range(dim))
                fh.write(f"clip_id,{cols}\n")
                for rec, vals in zip(ordered, mat):
                    fh.write(rec.clip_id + "," + ",".join(f"{v:.9g}" for v in vals) + "\n")


def _load_modality_binary(path: Path, modality: str, n_rows: int) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _AANF_HEADER.size:
        raise FeatureSchemaError(f"{path}: truncated header")
    magic, version, code, dim, rows = _AANF_HEADER.unpack_from(blob)
    if magic != _AANF_MAGIC:
        raise FeatureSchemaError(f"{path}: bad magic {magic!r}")
    if version != _AANF_VERSION:
        raise FeatureSchemaError(f"{path}: unsupported version {version}")
    if code != _MODALITY_CODES[modality]:
        raise FeatureSchemaError(f"{path}: modality code {code} does not match {modality!r}")
    if dim != MODALITY_DIMS[modality]:
        raise FeatureSchemaError(
            f"{path}: modality {modality!r} expected dimension {MODALITY_DIMS[modality]}, got {dim}"
        )
    if rows != n_rows:
        raise FeatureCompletenessError(f"{path}: {rows} rows for {n_rows} manifest clips")
    payload = np.frombuffer(blob, dtype="<f4", offset=_AANF_HEADER.size)
    if payload.size != rows * dim:
        raise FeatureSchemaError(f"{path}: payload size {payload.size} != {rows}x{dim}")
    return payload.reshape(rows, dim).astype(np.float64)


def _load_modality_text(path: Path, modality: str, manifest: list[ClipManifest]) -> np.ndarray:
    dim = MODALITY_DIMS[modality]
    by_id: dict[str, np.ndarray] = {}
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("clip_id"):
            raise FeatureSchemaError(f"{path}: missing clip_id header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            clip_id, values = parts[0], parts[1:]
            if len(values) != dim:
                raise FeatureSchemaError(
                    f"{path}: clip {clip_id}: modality {modality!r} expected {dim} values, got {len(values)}"
                )
            try:
                by_id[clip_id] = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise FeatureSchemaError(f"{path}: line {lineno}: {exc}") from exc
    rows = []
    for row in manifest:
        if row.clip_id not in by_id:
            raise FeatureCompletenessError(f"{path}: no {modality!r} row for clip {row.clip_id}")
        rows.append(by_id[row.clip_id])
    return np.stack(rows) if rows else np.empty((0, dim))


def load_features(directory: str | Path, manifest: list[ClipManifest]) -> list[FeatureRecord]:
    """Load one complete record per manifest clip, binary files preferred."""
    directory = Path(directory)
    manifest = sorted(manifest, key=_manifest_sort_key)
    columns: dict[str, np.ndarray] = {}
    for modality in MODALITY_ORDER:
        binary = directory / f"features_{modality}.aanf"
        text = directory / f"features_{modality}.csv"
        if binary.exists():
            columns[modality] = _load_modality_binary(binary, modality, len(manifest))
        elif text.exists():
            columns[modality] = _load_modality_text(text, modality, manifest)
        else:
            raise FeatureCompletenessError(f"no feature file for modality {modality!r} in {directory}")
    records = []
    for i, row in enumerate(manifest):
        rec = FeatureRecord(
            clip_id=row.clip_id,
            **{modality: columns[modality][i] for modality in MODALITY_ORDER},
        )
        rec.validate()
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# splits and windows
# ---------------------------------------------------------------------------


def split_leave_one_movie_out(
    manifest: list[ClipManifest],
) -> list[tuple[list[ClipManifest], list[ClipManifest]]]:
    """One (train, test) fold per movie; test folds partition the manifest."""
    movies = sorted({row.movie_id for row in manifest})
    if len(movies) < 2:
        raise ContractError(f"leave-one-movie-out needs >= 2 movies, got {len(movies)}")
    folds = []
    for movie in movies:
        test = [row for row in manifest if row.movie_id == movie]
        train = [row for row in manifest if row.movie_id != movie]
        folds.append((train, test))
    return folds


def build_windows(
    manifest: list[ClipManifest],
    features: list[FeatureRecord],
    seq_len: int,
) -> list[Window]:
    """Stride-1 windows of ``seq_len`` consecutive segments within each movie."""
    if seq_len < 1:
        raise ParameterError(f"seq_len must be >= 1, got {seq_len}")
    by_id = {r.clip_id: r for r in features}
    by_movie: dict[str, list[ClipManifest]] = {}
    for row in sorted(manifest, key=_manifest_sort_key):
        by_movie.setdefault(row.movie_id, []).append(row)
    windows = []
    for movie, rows in by_movie.items():
        if len(rows) < seq_len:
            warnings.warn(
                f"movie {movie!r} has {len(rows)} segments < seq_len {seq_len}; contributes no windows",
                stacklevel=2,
            )
            continue
        for start in range(len(rows) - seq_len + 1):
            chunk = rows[start : start + seq_len]
            try:
                recs = [by_id[row.clip_id] for row in chunk]
            except KeyError as exc:
                raise FeatureCompletenessError(f"no feature record for clip {exc.args[0]}") from exc
            windows.append(Window(movie_id=movie, rows=chunk, records=recs))
    return windows


# ---------------------------------------------------------------------------
# synthetic planted-signal data
# ---------------------------------------------------------------------------


def _smooth_unit_signal(rng: np.random.Generator, n: int, window: int) -> np.ndarray:
    raw = rng.standard_normal(n + window - 1)
    kernel = np.full(window, 1.0 / window)
    sig = np.convolve(raw, kernel, mode="valid")
    lo, hi = sig.min(), sig.max()
    if hi - lo < 1e-12:
        return np.zeros(n)
    return 2.0 * (sig - lo) / (hi - lo) - 1.0


def synth_generate(spec: SyntheticSpec) -> tuple[list[ClipManifest], list[FeatureRecord]]:
    """Generate a dataset whose labels are recoverable from the features.

    Per movie the latent arousal a(t) is a moving average of seeded unit
    Gaussians rescaled to [-1, 1]; valence is an independent signal built the
    same way. Every modality vector is a fixed seeded linear map of
    [a, a^2, 1] plus Gaussian noise, cast to float32 precision so the binary
    format round-trips bit-exactly.
    """
    rng = np.random.default_rng(spec.seed)
    mixers = {
        modality: rng.standard_normal((dim, 3)) for modality, dim in MODALITY_DIMS.items()
    }
    manifest: list[ClipManifest] = []
    records: list[FeatureRecord] = []
    for m in range(spec.n_movies):
        movie_id = f"synth{m:02d}"
        arousal = _smooth_unit_signal(rng, spec.segments_per_movie, spec.smoothing_window)
        valence = _smooth_unit_signal(rng, spec.segments_per_movie, spec.smoothing_window)
        basis = np.stack([arousal, arousal**2, np.ones_like(arousal)])  # 3 x n
        for t in range(spec.segments_per_movie):
            clip_id = f"{movie_id}_s{t:03d}"
            manifest.append(
                ClipManifest(
                    clip_id=clip_id,
                    movie_id=movie_id,
                    segment_index=t,
                    duration_s=5.0,
                    arousal=AffectLabel(float(arousal[t]), "arousal"),
                    valence=AffectLabel(float(valence[t]), "valence"),
                )
            )
            vectors = {}
            for modality, dim in MODALITY_DIMS.items():
                vec = mixers[modality] @ basis[:, t]
                if spec.noise_std > 0:
                    vec = vec + rng.normal(0.0, spec.noise_std, size=dim)
                vectors[modality] = vec.astype(np.float32).astype(np.float64)
            records.append(FeatureRecord(clip_id=clip_id, **vectors))
    return manifest, records


# ---------------------------------------------------------------------------
# pooled metrics
# ---------------------------------------------------------------------------


def pooled_metrics(predictions, targets) -> tuple[float, float]:
    """MSE and Pearson correlation over all folds' concatenated predictions."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0 or t.size == 0:
        raise ContractError("pooled_metrics: empty inputs")
    if p.size != t.size:
        raise ContractError(f"pooled_metrics: length mismatch {p.size} vs {t.size}")
    if p.size < 2:
        raise ContractError("pooled_metrics: need at least 2 values for a correlation")
    mse = float(np.mean((p - t) ** 2))
    pc = p - p.mean()
    tc = t - t.mean()
    var_p = float(np.mean(pc * pc))
    var_t = float(np.mean(tc * tc))
    if var_p < 1e-12 or var_t < 1e-12:
        return mse, 0.0
    rho = float(np.sum(pc * tc) / np.sqrt(np.sum(pc * pc) * np.sum(tc * tc)))
    return mse, rho
