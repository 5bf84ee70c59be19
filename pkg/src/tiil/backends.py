"""Backend adapters: text/image encoders, noising, generation, and inpainting.

A backend bundles five model handles behind a uniform protocol so the rest of
the toolkit never touches model internals:

* ``encode_text``    -- text -> token embedding matrix
* ``encode_image``   -- image (optionally masked) -> unit embedding vector
* ``generate``       -- (noise, token embeddings) -> image
* ``estimate_noise`` -- conditional noise estimate at a schedule step
* ``inpaint``        -- regenerate masked pixels conditioned on embeddings

Two backends are provided: a fully deterministic synthetic backend whose
behaviour is exact and hand-checkable (used by the test-suite and the
benchmark harness), and a lazily-imported adapter around a pretrained
latent-diffusion model (see :mod:`tiil.diffusion`).
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "BackendError",
    "BackendLoadError",
    "TruncationWarning",
    "NoiseSchedule",
    "TokenEmbeddingMatrix",
    "BackendBundle",
    "SyntheticModel",
    "load_backend",
    "validate_image",
    "validate_mask",
    "encode_text",
    "encode_image",
    "forward_noise",
    "generate",
    "generate_vjp",
    "estimate_noise",
    "inpaint",
]


class BackendError(Exception):
    """Base error for backend failures."""


class BackendLoadError(BackendError):
    """A backend could not be constructed (bad spec string, missing deps/weights)."""


class TruncationWarning(UserWarning):
    """Issued when input text exceeds the backend token limit and is truncated."""


# ---------------------------------------------------------------- core types


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal fractions for the forward noising process.

    ``alphas[t]`` is the fraction of the clean signal retained at step ``t``;
    values must lie in (0, 1] and decrease as ``t`` grows.
    """

    alphas: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("schedule must be a non-empty 1-d array")
        if np.any(a <= 0.0) or np.any(a > 1.0):
            raise ValueError("schedule values must lie in (0, 1]")
        object.__setattr__(self, "alphas", a)

    def __len__(self) -> int:
        return int(self.alphas.size)


@dataclass(frozen=True)
class TokenEmbeddingMatrix:
    """Per-token conditioning embeddings, one row per token."""

    rows: np.ndarray
    token_strings: tuple[str, ...]
    origin: str = "text"

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError("embedding rows must be a (n_tokens, dim) array with n_tokens >= 1")
        if not np.all(np.isfinite(rows)):
            raise ValueError("embedding rows must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "token_strings", tuple(self.token_strings))
        if self.token_strings and len(self.token_strings) != rows.shape[0]:
            raise ValueError("token_strings must be empty or match the number of rows")

    @property
    def n_tokens(self) -> int:
        return int(self.rows.shape[0])

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def with_rows(self, rows: np.ndarray, origin: str | None = None) -> "TokenEmbeddingMatrix":
        return TokenEmbeddingMatrix(rows, self.token_strings, origin or self.origin)


@dataclass(frozen=True)
class BackendBundle:
    """The five model handles plus schedule, guidance scale and capabilities."""

    text_encoder: Any
    image_encoder: Any
    generator: Any
    noise_estimator: Any
    inpainter: Any
    schedule: NoiseSchedule
    guidance_scale: float = 7.5
    capabilities: dict = field(default_factory=dict)
    backend_id: str = "unknown"

    @property
    def differentiable_generator(self) -> bool:
        return bool(self.capabilities.get("differentiable_generator", False))


# ----------------------------------------------------------- image utilities


def validate_image(image: np.ndarray) -> np.ndarray:
    """Check image invariants (H, W >= 8; 3 channels; values in [0, 1])."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 8 or arr.shape[1] < 8:
        raise ValueError(f"image sides must be >= 8 pixels, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return arr


def validate_mask(mask: np.ndarray, image: np.ndarray | None = None) -> np.ndarray:
    """Check a binary mask (2-d bool); optionally check it matches an image."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {m.shape}")
    if m.dtype != bool:
        uniq = np.unique(m)
        if not np.all(np.isin(uniq, (0, 1))):
            raise ValueError("mask values must be boolean or {0, 1}")
        m = m.astype(bool)
    if image is not None and m.shape != np.asarray(image).shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {np.asarray(image).shape[:2]}")
    return m


def _rows_of(embeddings: TokenEmbeddingMatrix | np.ndarray) -> np.ndarray:
    rows = embeddings.rows if isinstance(embeddings, TokenEmbeddingMatrix) else np.asarray(embeddings)
    return np.asarray(rows, dtype=np.float64)


# -------------------------------------------------------- synthetic backend

_SIGMOID_GAIN = 0.5  # keeps pre-sigmoid activations in a gently non-linear range

_VOCABULARY = (
    "anchor", "balloon", "candle", "dolphin", "engine", "falcon",
    "guitar", "harbor", "island", "jacket", "kettle", "lantern",
    "mirror", "nutmeg", "orange", "piano", "quarry", "ribbon",
    "saddle", "temple", "umbrella", "violin", "walnut", "juice",
)

# Orthonormal basis of the plane orthogonal to (1, 1, 1) in colour space.
_PLANE_U = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_PLANE_V = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)
_GRAY_AXIS = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)

_OOV_SCALE = 0.01  # out-of-vocabulary words get a tiny but distinct concept


def _rotation_about_gray_axis(theta: float) -> np.ndarray:
    """Rodrigues rotation by ``theta`` about the (1,1,1)/sqrt(3) axis."""
    n = _GRAY_AXIS
    k = np.array([
        [0.0, -n[2], n[1]],
        [n[2], 0.0, -n[0]],
        [-n[1], n[0], 0.0],
    ])
    return np.eye(3) * np.cos(theta) + np.sin(theta) * k + (1.0 - np.cos(theta)) * np.outer(n, n)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


class SyntheticModel:
    """Deterministic toy diffusion stack over 16x16 RGB images.

    Geometry: the image is split into eight disjoint vertical strips of width
    two; token ``k`` of the conditioning matrix paints strip ``k`` with the
    colour ``sigmoid(A_k @ E[k])``.  All projection matrices derive from a
    single seeded generator, and the image encoder is the exact linear
    decoder of the strip colours, so text and image embeddings live in one
    shared concept space.  Every operation is exact and replayable, which is
    what the oracle tests in the test-suite rely on.
    """

    image_size = 16
    n_strips = 8
    strip_width = 2
    dim = 16
    max_tokens = 8

    def __init__(self, seed: int = 0, schedule: NoiseSchedule | None = None):
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)

        # Shared 3-d concept space embedded in R^16.
        q, _ = np.linalg.qr(rng.normal(size=(self.dim, 3)))
        q = q * np.sign(np.sum(q, axis=0, keepdims=True))  # fix QR sign ambiguity
        self.concept_basis = q  # (16, 3), orthonormal columns

        # Per-strip colour rotations about the gray axis (they all fix (1,1,1)).
        self.strip_angles = rng.uniform(0.0, 2.0 * np.pi, size=self.n_strips)
        self.rotations = np.stack([_rotation_about_gray_axis(t) for t in self.strip_angles])

        self.vocab_phase = rng.uniform(0.0, 2.0 * np.pi)

        # Colour projections A_k (3, 16): colour_k = sigmoid(A_k @ e).
        self.colour_proj = np.stack(
            [_SIGMOID_GAIN * self.rotations[k] @ self.concept_basis.T for k in range(self.n_strips)]
        )

        # Exact linear decoder used by the image encoder: strip colour sums ->
        # concept space.  Centering removes the sigmoid's 0.5 baseline, the
        # inverse rotation undoes the strip's colour rotation.
        centering = np.eye(3) - np.ones((3, 3)) / 3.0
        self.decoder = np.stack(
            [
                (4.0 / _SIGMOID_GAIN) * self.concept_basis @ self.rotations[k].T @ centering
                for k in range(self.n_strips)
            ]
        )  # (8, 16, 3)

        self.schedule = schedule if schedule is not None else NoiseSchedule(np.linspace(0.98, 0.05, 25))
        self._fallback_vector = self.concept_basis @ _GRAY_AXIS  # unit, content-orthogonal

        self._vocab_index = {w: i for i, w in enumerate(_VOCABULARY)}
        strip_area = self.image_size * self.strip_width
        # Full pixel-space projection, exposed so tests can compare the
        # encoder against a direct matrix multiply.
        w = np.zeros((self.dim, self.image_size * self.image_size * 3))
        for k in range(self.n_strips):
            for r in range(self.image_size):
                for c in range(self.strip_width * k, self.strip_width * (k + 1)):
                    base = (r * self.image_size + c) * 3
                    w[:, base : base + 3] = self.decoder[k] / strip_area
        self.image_projection = w

    # -- vocabulary ---------------------------------------------------------

    def concept(self, token: str) -> np.ndarray:
        """3-d concept vector for a token (unit circle for vocabulary words)."""
        word = token.lower().strip(".,;:!?'\"")
        idx = self._vocab_index.get(word)
        if idx is not None:
            phi = self.vocab_phase + 2.0 * np.pi * idx / len(_VOCABULARY)
            return np.cos(phi) * _PLANE_U + np.sin(phi) * _PLANE_V
        digest = hashlib.blake2b(f"{self.seed}:{word}".encode(), digest_size=8).digest()
        phi = int.from_bytes(digest, "big") / 2.0**64 * 2.0 * np.pi
        return _OOV_SCALE * (np.cos(phi) * _PLANE_U + np.sin(phi) * _PLANE_V)

    def token_embedding(self, token: str) -> np.ndarray:
        return self.concept_basis @ self.concept(token)

    # -- protocol operations ------------------------------------------------

    def encode_text(self, text: str) -> TokenEmbeddingMatrix:
        tokens = text.split()
        if not tokens:
            raise ValueError("cannot encode empty text")
        if len(tokens) > self.max_tokens:
            warnings.warn(
                f"text has {len(tokens)} tokens, truncating to the backend limit of {self.max_tokens}",
                TruncationWarning,
                stacklevel=3,
            )
            tokens = tokens[: self.max_tokens]
        rows = np.stack([self.token_embedding(t) for t in tokens])
        return TokenEmbeddingMatrix(rows, tuple(tokens), origin="text")

    def _check_embeddings(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ValueError(f"embeddings must have shape (n, {self.dim}), got {rows.shape}")
        if rows.shape[0] > self.max_tokens:
            raise ValueError(f"at most {self.max_tokens} token rows supported, got {rows.shape[0]}")
        return rows

    def generate(self, x_t: np.ndarray, embeddings: TokenEmbeddingMatrix | np.ndarray) -> np.ndarray:
        """Render the strip image for the given embeddings (initial noise is
        ignored: the toy generator is a deterministic function of the text)."""
        rows = self._check_embeddings(_rows_of(embeddings))
        img = np.empty((self.image_size, self.image_size, 3))
        for k in range(self.n_strips):
            e = rows[k] if k < rows.shape[0] else np.zeros(self.dim)
            colour = _sigmoid(self.colour_proj[k] @ e)
            img[:, self.strip_width * k : self.strip_width * (k + 1), :] = colour
        return img

    def generate_vjp(
        self,
        x_t: np.ndarray,
        embeddings: TokenEmbeddingMatrix | np.ndarray,
        cotangent: np.ndarray,
    ) -> np.ndarray:
        """Vector-Jacobian product of ``generate`` with respect to the embeddings."""
        rows = self._check_embeddings(_rows_of(embeddings))
        cot = np.asarray(cotangent, dtype=np.float64)
        grad = np.zeros_like(rows)
        for k in range(min(self.n_strips, rows.shape[0])):
            z = self.colour_proj[k] @ rows[k]
            s = _sigmoid(z)
            # sum the cotangent over the strip's pixels, per channel
            strip_cot = cot[:, self.strip_width * k : self.strip_width * (k + 1), :].sum(axis=(0, 1))
            grad[k] = self.colour_proj[k].T @ (s * (1.0 - s) * strip_cot)
        return grad

    def estimate_noise(
        self, x_t: np.ndarray, t: int, embeddings: TokenEmbeddingMatrix | np.ndarray
    ) -> np.ndarray:
        alpha = self._alpha_at(t)
        if alpha >= 1.0:
            raise ValueError("noise estimate undefined at a no-noise schedule step (alpha == 1)")
        rendered = self.generate(x_t, embeddings)
        return (np.asarray(x_t, dtype=np.float64) - np.sqrt(alpha) * rendered) / np.sqrt(1.0 - alpha)

    def _alpha_at(self, t: int) -> float:
        if not 0 <= int(t) < len(self.schedule):
            raise ValueError(f"timestep {t} outside schedule of length {len(self.schedule)}")
        return float(self.schedule.alphas[int(t)])

    def encode_image(self, image: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
        arr = validate_image(image)
        if arr.shape[:2] != (self.image_size, self.image_size):
            raise ValueError(f"synthetic backend expects {self.image_size}x{self.image_size} images")
        if mask is not None:
            m = validate_mask(mask, arr)
            arr = arr * m[:, :, None]
        vec = self.image_projection @ arr.ravel()
        norm = float(np.linalg.norm(vec))
        if norm < 1e-9:
            return self._fallback_vector.copy()
        return vec / norm

    def inpaint(
        self,
        image: np.ndarray,
        mask: np.ndarray,
        embeddings: TokenEmbeddingMatrix | np.ndarray,
    ) -> np.ndarray:
        arr = validate_image(image)
        m = validate_mask(mask, arr)
        if not m.any():
            return arr.copy()
        rendered = self.generate(np.zeros_like(arr), embeddings)
        return np.where(m[:, :, None], rendered, arr)

    # -- helpers used by fixtures and demos ----------------------------------

    def strip_slice(self, k: int) -> tuple[slice, slice]:
        """Column slice of strip ``k`` (all rows)."""
        if not 0 <= k < self.n_strips:
            raise ValueError(f"strip index {k} out of range")
        return slice(None), slice(self.strip_width * k, self.strip_width * (k + 1))

    def strip_mask(self, k: int) -> np.ndarray:
        m = np.zeros((self.image_size, self.image_size), dtype=bool)
        m[self.strip_slice(k)] = True
        return m

    @property
    def vocabulary(self) -> tuple[str, ...]:
        return _VOCABULARY


def synthetic_bundle(seed: int = 0, guidance_scale: float = 7.5) -> BackendBundle:
    model = SyntheticModel(seed=seed)
    return BackendBundle(
        text_encoder=model,
        image_encoder=model,
        generator=model,
        noise_estimator=model,
        inpainter=model,
        schedule=model.schedule,
        guidance_scale=guidance_scale,
        capabilities={
            "differentiable_generator": True,
            "concurrent_inference": True,
            "tuned_align": {"iterations": 400, "learning_rate": 0.5, "gamma": 2.2},
        },
        backend_id=f"synthetic:seed={seed}",
    )


# ------------------------------------------------------------- protocol ops


def encode_text(bundle: BackendBundle, text: str) -> TokenEmbeddingMatrix:
    """Encode text into a per-token embedding matrix.

    Texts longer than the backend token limit are truncated with a
    :class:`TruncationWarning`; identical text always yields identical rows.
    """
    return bundle.text_encoder.encode_text(text)


def encode_image(
    bundle: BackendBundle, image: np.ndarray, mask: np.ndarray | None = None
) -> np.ndarray:
    """Unit-norm embedding of an image; with a mask, pixels outside the mask
    are zeroed before encoding.  The all-zero input maps to a fixed neutral
    vector rather than raising."""
    return bundle.image_encoder.encode_image(image, mask)


def forward_noise(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """Noise a clean signal: ``sqrt(a_t) * x0 + sqrt(1 - a_t) * eps``."""
    if not 0 <= int(t) < len(schedule):
        raise ValueError(f"timestep {t} outside schedule of length {len(schedule)}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"signal shape {x0.shape} does not match noise shape {eps.shape}")
    alpha = float(schedule.alphas[int(t)])
    return np.sqrt(alpha) * x0 + np.sqrt(1.0 - alpha) * eps


def generate(
    bundle: BackendBundle, x_t: np.ndarray | None, embeddings: TokenEmbeddingMatrix | np.ndarray
) -> np.ndarray:
    if x_t is not None and not np.all(np.isfinite(np.asarray(x_t))):
        raise ValueError("initial noise must be finite")
    return bundle.generator.generate(x_t, embeddings)


def generate_vjp(
    bundle: BackendBundle,
    x_t: np.ndarray,
    embeddings: TokenEmbeddingMatrix | np.ndarray,
    cotangent: np.ndarray,
) -> np.ndarray:
    if not bundle.differentiable_generator:
        raise BackendError("backend generator does not expose gradients")
    return bundle.generator.generate_vjp(x_t, embeddings, cotangent)


def estimate_noise(
    bundle: BackendBundle, x_t: np.ndarray, t: int, embeddings: TokenEmbeddingMatrix | np.ndarray
) -> np.ndarray:
    return bundle.noise_estimator.estimate_noise(x_t, t, embeddings)


def inpaint(
    bundle: BackendBundle,
    image: np.ndarray,
    mask: np.ndarray,
    embeddings: TokenEmbeddingMatrix | np.ndarray,
) -> np.ndarray:
    return bundle.inpainter.inpaint(image, mask, embeddings)


# ------------------------------------------------------------------ factory


def load_backend(spec: str = "synthetic", seed: int = 0) -> BackendBundle:
    """Build a backend bundle from a selection string.

    ``"synthetic"`` gives the deterministic toy backend; ``"synthetic:<seed>"``
    overrides its seed; ``"diffusion:<model-id>"`` loads a pretrained
    latent-diffusion adapter (requires the optional ML dependencies; model
    weights are cached under ``$TIIL_MODEL_DIR`` when set).
    """
    spec = (spec or "").strip()
    if spec == "synthetic":
        return synthetic_bundle(seed=seed)
    if spec.startswith("synthetic:"):
        try:
            return synthetic_bundle(seed=int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise BackendLoadError(f"bad synthetic backend spec {spec!r}") from exc
    if spec.startswith("diffusion:"):
        model_id = spec.split(":", 1)[1]
        if not model_id:
            raise BackendLoadError("diffusion backend spec must name a model: 'diffusion:<model-id>'")
        from . import diffusion

        return diffusion.load_diffusion_backend(model_id)
    raise BackendLoadError(
        f"unknown backend spec {spec!r}; expected 'synthetic' or 'diffusion:<model-id>'"
    )
