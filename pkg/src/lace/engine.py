"""Deterministic generation engine over a 48-component latent space.

The engine stands in for a remote image model: prompts and seeds drive a
splitmix64 stream, canvas snapshots are encoded into the same latent space,
and latents decode to images through a closed-form sine-wave renderer. Every
operation is a pure function, so identical requests always reproduce identical
latents and pixel digests. An adapter seam (:class:`GenerationBackend`) keeps
the request contract open for wiring a real image model behind the same
orchestration; requests cross process boundaries in the canonical JSON form
(:func:`request_to_json`).
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Protocol

import numpy as np

from .raster import RasterImage, decode_png, encode_png, fnv1a_64

LATENT_SIZE = 48
SNAPSHOT_GRID = 4  # 4x4 cells x RGB means = 48 components
WAVES_PER_CHANNEL = 4
DEFAULT_PERSISTENCE = 0.7

_MASK64 = 0xFFFFFFFFFFFFFFFF
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


class CycleMode(str, Enum):
    """How a candidate came to be: explicit request vs background loop."""

    TURN_TAKING = "turn_taking"
    PARALLEL = "parallel"


@dataclass(frozen=True)
class LatentVector:
    """48 real components, each in [-1, 1]."""

    components: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.components) != LATENT_SIZE:
            raise ValueError(f"latent must have {LATENT_SIZE} components, got {len(self.components)}")
        for i, c in enumerate(self.components):
            if not -1.0 <= c <= 1.0:
                raise ValueError(f"latent component {i} out of [-1, 1]: {c}")

    @classmethod
    def of(cls, values: Iterable[float]) -> "LatentVector":
        return cls(tuple(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.components, dtype=np.float64)

    def digest(self) -> int:
        """64-bit digest of the exact component bit patterns."""
        return fnv1a_64(struct.pack(f"<{LATENT_SIZE}d", *self.components))


@dataclass(frozen=True)
class GenerationRequest:
    """Everything one generation depends on.

    ``snapshot`` is present exactly when the canvas should condition the
    output; ``influence_weight`` then sets how strongly (0 = ignore the
    canvas entirely, 1 = reproduce its encoding). ``prior_latent`` carries
    iterative chains where each round builds on the previous latent.
    """

    prompt: str
    seed: int
    influence_weight: float = 0.0
    snapshot: Optional[RasterImage] = None
    prior_latent: Optional[LatentVector] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.influence_weight <= 1.0:
            raise ValueError(f"influence_weight must be in [0, 1], got {self.influence_weight}")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass(frozen=True)
class GeneratedCandidate:
    """A cached generation result with full provenance."""

    id: int
    image: RasterImage
    latent: LatentVector
    request: GenerationRequest
    created_at: int
    cycle_mode: CycleMode


def prng_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``.

    state' = state + 0x9E3779B97F4A7C15; the output is state' scrambled by
    two xor-shift-multiply rounds. All arithmetic wraps at 64 bits.
    """
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def uniform_from_bits(z: int) -> float:
    """Map a 64-bit word to a uniform double in [0, 1) using the top 53 bits."""
    return (z >> 11) * 2.0**-53


def prompt_seed(prompt: str, seed: int) -> int:
    """Bind a text prompt and a numeric seed into one 64-bit PRNG seed."""
    return fnv1a_64(prompt.encode("utf-8")) ^ (seed & _MASK64)


def fresh_latent(prompt: str, seed: int) -> LatentVector:
    """Sample a brand-new latent from (prompt, seed) alone."""
    state = prompt_seed(prompt, seed)
    comps = []
    for _ in range(LATENT_SIZE):
        state, z = prng_next(state)
        comps.append(2.0 * uniform_from_bits(z) - 1.0)
    return LatentVector(tuple(comps))


def encode_snapshot(img: RasterImage) -> LatentVector:
    """Project a canvas snapshot into latent space.

    The image is split into a 4x4 grid of equal-as-possible cells (remainder
    pixels go to the last row/column). Per cell the R, G, B means (alpha
    ignored) are mapped from [0, 255] to [-1, 1] via c/127.5 - 1, ordered
    cell-major row-major with channels adjacent.
    """
    if img.width < SNAPSHOT_GRID or img.height < SNAPSHOT_GRID:
        raise ValueError(
            f"snapshot must be at least {SNAPSHOT_GRID}x{SNAPSHOT_GRID}, got {img.width}x{img.height}"
        )
    arr = img.to_array()
    xs = _cell_bounds(img.width)
    ys = _cell_bounds(img.height)
    comps: list[float] = []
    for cy in range(SNAPSHOT_GRID):
        for cx in range(SNAPSHOT_GRID):
            cell = arr[ys[cy] : ys[cy + 1], xs[cx] : xs[cx + 1], :3]
            count = cell.shape[0] * cell.shape[1]
            sums = cell.sum(axis=(0, 1), dtype=np.int64)
            for channel_sum in sums:
                value = 2.0 * int(channel_sum) / (255.0 * count) - 1.0
                comps.append(min(1.0, max(-1.0, value)))
    return LatentVector(tuple(comps))


def _cell_bounds(extent: int) -> list[int]:
    base = extent // SNAPSHOT_GRID
    bounds = [i * base for i in range(SNAPSHOT_GRID)]
    bounds.append(extent)
    return bounds


def blend_latent(artist: LatentVector, ai: LatentVector, w: float) -> LatentVector:
    """Convex blend: w pulls toward the artist encoding, (1-w) toward the AI draw."""
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"influence weight must be in [0, 1], got {w}")
    return LatentVector(
        tuple(w * a + (1.0 - w) * g for a, g in zip(artist.components, ai.components))
    )


def iterate_latent(
    prev: LatentVector, prompt: str, seed: int, persistence: float = DEFAULT_PERSISTENCE
) -> LatentVector:
    """Advance an iterative chain: keep ``persistence`` of the previous latent
    and mix in a fresh draw for the rest, clamped back to [-1, 1]."""
    if not 0.0 <= persistence <= 1.0:
        raise ValueError(f"persistence must be in [0, 1], got {persistence}")
    fresh = fresh_latent(prompt, seed)
    comps = tuple(
        min(1.0, max(-1.0, persistence * p + (1.0 - persistence) * f))
        for p, f in zip(prev.components, fresh.components)
    )
    return LatentVector(comps)


def decode_latent(latent: LatentVector, width: int, height: int) -> RasterImage:
    """Render a latent to an RGBA image through a fixed bank of sine waves.

    Components split channel-major into R, G, B blocks of 4 waves, each wave
    holding (a, b, f, p). At pixel (x, y) with u = x/width, v = y/height:

        value = 0.5 + (1/8) * sum_k sin(2*pi*(F_k*(a_k*u + b_k*v) + p_k))

    with frequency F_k = 1 + 1.5*(f_k + 1) in [1, 4]. Values clamp to [0, 1]
    and round half-up onto the byte scale; alpha is fully opaque.
    """
    if width < 1 or height < 1:
        raise ValueError(f"decode dimensions must be positive, got {width}x{height}")
    params = np.asarray(latent.components, dtype=np.float64).reshape(3, WAVES_PER_CHANNEL, 4)
    u = np.arange(width, dtype=np.float64) / width
    v = np.arange(height, dtype=np.float64) / height
    out = np.empty((height, width, 4), dtype=np.uint8)
    out[..., 3] = 255
    for c in range(3):
        value = np.full((height, width), 0.5, dtype=np.float64)
        for k in range(WAVES_PER_CHANNEL):
            a, b, f, p = params[c, k]
            freq = 1.0 + 1.5 * (f + 1.0)
            phase = freq * (a * u[None, :] + b * v[:, None]) + p
            value += 0.125 * np.sin(2.0 * np.pi * phase)
        np.clip(value, 0.0, 1.0, out=value)
        out[..., c] = np.floor(value * 255.0 + 0.5).astype(np.uint8)
    return RasterImage.from_array(out)


def resolve_latent(request: GenerationRequest, persistence: float = DEFAULT_PERSISTENCE) -> LatentVector:
    """Run the latent pipeline for one request (no rendering)."""
    if request.prior_latent is not None:
        base = iterate_latent(request.prior_latent, request.prompt, request.seed, persistence)
    else:
        base = fresh_latent(request.prompt, request.seed)
    if request.snapshot is not None:
        return blend_latent(encode_snapshot(request.snapshot), base, request.influence_weight)
    return base


def request_to_json(request: GenerationRequest) -> dict:
    """Canonical JSON form of a request: fixed key order, seeds as decimal
    strings, the snapshot shipped as base64 PNG (pixel content is what is
    canonical, never the PNG bytes)."""
    return {
        "prompt": request.prompt,
        "seed": str(request.seed),
        "influence_weight": request.influence_weight,
        "snapshot_png_b64": base64.b64encode(encode_png(request.snapshot)).decode("ascii")
        if request.snapshot is not None
        else None,
        "prior_latent": list(request.prior_latent.components)
        if request.prior_latent is not None
        else None,
    }


def request_from_json(data: dict) -> GenerationRequest:
    snapshot = None
    if data.get("snapshot_png_b64") is not None:
        snapshot = decode_png(base64.b64decode(data["snapshot_png_b64"]))
    prior = None
    if data.get("prior_latent") is not None:
        prior = LatentVector.of(data["prior_latent"])
    return GenerationRequest(
        prompt=data["prompt"],
        seed=int(data["seed"]),
        influence_weight=data["influence_weight"],
        snapshot=snapshot,
        prior_latent=prior,
    )


class GenerationBackend(Protocol):
    """Contract for pluggable image generators.

    A remote adapter would ship the canonical JSON form of the request over
    the wire and return the decoded image; the in-tree procedural engine
    evaluates the same contract locally.
    """

    def generate(self, request: GenerationRequest, width: int, height: int) -> tuple[LatentVector, RasterImage]:
        ...


class ProceduralEngine:
    """The in-tree backend: closed-form, deterministic, CPU-only."""

    def __init__(self, persistence: float = DEFAULT_PERSISTENCE):
        if not 0.0 <= persistence <= 1.0:
            raise ValueError(f"persistence must be in [0, 1], got {persistence}")
        self.persistence = persistence

    def generate(self, request: GenerationRequest, width: int, height: int) -> tuple[LatentVector, RasterImage]:
        if request.snapshot is not None and (
            request.snapshot.width != width or request.snapshot.height != height
        ):
            raise ValueError(
                f"snapshot is {request.snapshot.width}x{request.snapshot.height}, "
                f"canvas is {width}x{height}"
            )
        latent = resolve_latent(request, self.persistence)
        return latent, decode_latent(latent, width, height)


def generate(
    request: GenerationRequest,
    width: int,
    height: int,
    *,
    candidate_id: int,
    created_at: int,
    cycle_mode: CycleMode,
    backend: Optional[GenerationBackend] = None,
) -> GeneratedCandidate:
    """Produce a fully-attributed candidate for one request."""
    engine = backend if backend is not None else ProceduralEngine()
    latent, image = engine.generate(request, width, height)
    return GeneratedCandidate(
        id=candidate_id,
        image=image,
        latent=latent,
        request=request,
        created_at=created_at,
        cycle_mode=cycle_mode,
    )
