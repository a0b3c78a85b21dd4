"""Style-composition benchmark: corpus generation and crop-based scoring.

The corpus is a seeded 300-prompt sample of "a STYLE style SUBJECT in a
STYLE style BACKGROUND" tuples with unequal styles. Scoring crops each
component out of the image (boxes are supplied by the caller; a real
detector can sit behind that input) and compares the crop against its style
descriptor with a deterministic toy embedder: a 4x4x4 color histogram
concatenated with a 2-bin edge-density signature, L2-normalized. Text
descriptors are embedded through procedurally generated per-style exemplar
patches, so crop/descriptor similarities live in one space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoxError
from .numerics import SeededStream, fnv1a_64, seeded_uniform

STYLES = (
    "lego",
    "oil-painting",
    "cyberpunk",
    "sketch",
    "pixel-art",
    "watercolor",
    "graffiti",
)
SUBJECTS = ("dog", "cat", "robot", "car", "unicorn")
BACKGROUNDS = ("forest", "space", "desert", "city", "ruins")

CORPUS_SIZE = 300


@dataclass(frozen=True)
class SCBPrompt:
    subject_style: str
    subject: str
    background_style: str
    background: str

    @property
    def text(self):
        return (
            f"a {self.subject_style} style {self.subject} "
            f"in a {self.background_style} style {self.background}"
        )


@dataclass
class ComponentBox:
    component: str
    x: int
    y: int
    w: int
    h: int


def build_benchmark(seed: int):
    """Seeded sample of 300 distinct prompts from the style/subject pools.

    All 1050 candidate tuples (unequal styles) are enumerated in a fixed
    order, Fisher-Yates shuffled with the package PRNG, and the first 300
    are kept.
    """
    candidates = [
        SCBPrompt(s1, subj, s2, bg)
        for s1 in STYLES
        for s2 in STYLES
        if s1 != s2
        for subj in SUBJECTS
        for bg in BACKGROUNDS
    ]
    stream = SeededStream(seed)
    u = seeded_uniform(stream, len(candidates) - 1)
    for i in range(len(candidates) - 1, 0, -1):
        j = min(int(u[len(candidates) - 1 - i] * (i + 1)), i)
        candidates[i], candidates[j] = candidates[j], candidates[i]
    return candidates[:CORPUS_SIZE]


# --- toy embedder ---------------------------------------------------------

_HIST_BINS = 4
_EDGE_THRESHOLD = 0.1

# palette (list of RGB in [0,1]) and roughness (0 smooth .. 1 per-pixel noise)
STYLE_RECIPES = {
    "lego": ([(0.9, 0.1, 0.1), (1.0, 0.8, 0.0), (0.1, 0.3, 0.9)], 0.8),
    "oil-painting": ([(0.45, 0.3, 0.15), (0.35, 0.45, 0.2), (0.6, 0.5, 0.3)], 0.1),
    "cyberpunk": ([(0.9, 0.1, 0.7), (0.1, 0.9, 0.9), (0.05, 0.05, 0.15)], 0.6),
    "sketch": ([(0.95, 0.95, 0.95), (0.2, 0.2, 0.2)], 0.9),
    "pixel-art": ([(0.2, 0.8, 0.2), (0.8, 0.2, 0.8), (0.9, 0.9, 0.1)], 1.0),
    "watercolor": ([(0.7, 0.8, 0.95), (0.95, 0.8, 0.85), (0.8, 0.95, 0.85)], 0.05),
    "graffiti": ([(1.0, 0.4, 0.0), (0.0, 0.6, 1.0), (0.9, 0.9, 0.1)], 0.7),
}
_EXEMPLAR_SIZE = 32


def style_exemplar(style: str, size: int = _EXEMPLAR_SIZE, salt: int = 0):
    """Deterministic synthetic patch with the style's palette and roughness."""
    recipe = STYLE_RECIPES.get(style)
    if recipe is None:
        palette = [(0.5, 0.5, 0.5), (0.6, 0.4, 0.5)]
        roughness = 0.5
    else:
        palette, roughness = recipe
    palette = np.asarray(palette)
    stream = SeededStream(fnv1a_64(f"{style}#{salt}"))
    u = seeded_uniform(stream, size * size).reshape(size, size)
    pick = np.minimum((u * len(palette)).astype(int), len(palette) - 1)
    rough = palette[pick]
    ramp = np.linspace(0.0, len(palette) - 1.0, size)
    lo = np.floor(ramp).astype(int)
    hi = np.minimum(lo + 1, len(palette) - 1)
    frac = (ramp - lo)[:, None]
    smooth_rows = palette[lo] * (1 - frac) + palette[hi] * frac
    smooth = np.broadcast_to(smooth_rows[None, :, :], (size, size, 3))
    img = (1.0 - roughness) * smooth + roughness * rough
    return np.clip(img, 0.0, 1.0)


class ToyStyleEmbedder:
    """Histogram + edge-density embedder with exemplar-backed text side."""

    dim = _HIST_BINS**3 + 2

    def embed(self, image):
        img = np.asarray(image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3 or img.size == 0:
            raise BoxError(f"expected a nonempty HxWx3 crop, got {img.shape}")
        img = np.clip(img, 0.0, 1.0)
        bins = np.minimum(
            (img * _HIST_BINS).astype(int), _HIST_BINS - 1
        )
        flat = (
            bins[:, :, 0] * _HIST_BINS * _HIST_BINS
            + bins[:, :, 1] * _HIST_BINS
            + bins[:, :, 2]
        ).reshape(-1)
        hist = np.bincount(flat, minlength=_HIST_BINS**3).astype(np.float64)
        hist /= hist.sum()
        gray = img.mean(axis=2)
        gx = np.abs(np.diff(gray, axis=1))
        gy = np.abs(np.diff(gray, axis=0))
        grads = np.concatenate([gx.reshape(-1), gy.reshape(-1)])
        if grads.size:
            hi = float((grads > _EDGE_THRESHOLD).mean())
        else:
            hi = 0.0
        vec = np.concatenate([hist, [1.0 - hi, hi]])
        return vec / np.linalg.norm(vec)

    def embed_text(self, descriptor: str):
        style = descriptor.strip().lower()
        if style.endswith(" style"):
            style = style[: -len(" style")]
        return self.embed(style_exemplar(style))


def cosine(u, v):
    return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))


def _validate_box(image, box: ComponentBox):
    ih, iw = image.shape[:2]
    if box.w <= 0 or box.h <= 0:
        raise BoxError(f"box for {box.component!r} has nonpositive area")
    if box.x < 0 or box.y < 0 or box.x + box.w > iw or box.y + box.h > ih:
        raise BoxError(
            f"box for {box.component!r} exceeds image bounds {iw}x{ih}"
        )


def component_score(image, box: ComponentBox, descriptor: str, embedder=None):
    """Cosine similarity between the crop and the descriptor embedding."""
    embedder = embedder or ToyStyleEmbedder()
    _validate_box(image, box)
    crop = image[box.y : box.y + box.h, box.x : box.x + box.w]
    return cosine(embedder.embed(crop), embedder.embed_text(descriptor))


def image_score(image, prompt: SCBPrompt, boxes, embedder=None):
    """Mean of the per-component style scores for one image.

    boxes: mapping component word -> ComponentBox; both the subject and the
    background must be present.
    """
    embedder = embedder or ToyStyleEmbedder()
    scores = []
    for component, descriptor in (
        (prompt.subject, f"{prompt.subject_style} style"),
        (prompt.background, f"{prompt.background_style} style"),
    ):
        box = boxes.get(component)
        if box is None:
            raise BoxError(f"missing box for component {component!r}")
        scores.append(component_score(image, box, descriptor, embedder))
    return float(np.mean(scores))


def component_scores(image, prompt: SCBPrompt, boxes, embedder=None):
    """Per-component scores; components without a box come back as None."""
    embedder = embedder or ToyStyleEmbedder()
    out = []
    for component, descriptor in (
        (prompt.subject, f"{prompt.subject_style} style"),
        (prompt.background, f"{prompt.background_style} style"),
    ):
        box = boxes.get(component)
        if box is None:
            out.append((component, None))
        else:
            out.append(
                (component, component_score(image, box, descriptor, embedder))
            )
    return out


def parse_boxes(lines):
    """Parse fixture box lines: component<TAB>x<TAB>y<TAB>w<TAB>h.

    A leading extra field restricts the line to one prompt index:
    index<TAB>component<TAB>x<TAB>y<TAB>w<TAB>h. Returns
    {prompt_index or None: {component: ComponentBox}}.
    """
    table = {}
    for ln, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) == 5:
            idx = None
            component, xs, ys, ws, hs = parts
        elif len(parts) == 6:
            idx = int(parts[0])
            component, xs, ys, ws, hs = parts[1:]
        else:
            raise BoxError(f"malformed box line {ln}: {raw!r}")
        table.setdefault(idx, {})[component] = ComponentBox(
            component, int(xs), int(ys), int(ws), int(hs)
        )
    return table
