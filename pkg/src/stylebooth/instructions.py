"""Multimodal instruction handling.

Templates carry "<style>" / "<image>" identifier slots. Style names substitute
into the text before encoding; exemplar images are encoded to patch features,
mapped into the text hidden space by a convolutional alignment layer, and
spliced over the reserved placeholder token. Per-slot scale weights multiply
each style element's token span, enabling composition and interpolation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import torch
from torch import nn

from .backends import IMAGE_TOKEN, STYLE_TOKEN, ImageEncoder, TextEncoder, load_image
from .errors import (
    ArityError,
    ConfigError,
    ContextLengthError,
    InputError,
    SequenceOverflowError,
    ShapeError,
    SpanAlignmentError,
    SpliceError,
    TemplateParseError,
)


class SlotKind(enum.Enum):
    STYLE = "style"
    IMAGE = "image"


_IDENTIFIERS = {STYLE_TOKEN: SlotKind.STYLE, IMAGE_TOKEN: SlotKind.IMAGE}


@dataclass(frozen=True)
class Slot:
    kind: SlotKind
    start: int  # character range of the identifier in raw_text
    end: int


@dataclass(frozen=True)
class InstructionTemplate:
    raw_text: str
    slots: tuple[Slot, ...]

    def slot_indices(self, kind: SlotKind) -> list[int]:
        return [i for i, s in enumerate(self.slots) if s.kind is kind]

    @property
    def style_count(self) -> int:
        return len(self.slot_indices(SlotKind.STYLE))

    @property
    def image_count(self) -> int:
        return len(self.slot_indices(SlotKind.IMAGE))


@dataclass(frozen=True)
class ExemplarRef:
    """Reference to an exemplar image, by path or as an in-memory array."""

    id: str
    path: str | None = None
    image: np.ndarray | None = None

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise InputError(f"exemplar {self.id!r} has neither path nor image data")
        return load_image(self.path)


@dataclass(frozen=True)
class ScaleWeights:
    """Per-style-element multiplicative factors. 1.0 leaves a span untouched."""

    alphas: tuple[float, ...]

    RECOMMENDED_RANGE = (0.5, 1.5)

    @classmethod
    def ones(cls, n: int) -> "ScaleWeights":
        return cls(alphas=(1.0,) * n)

    def __len__(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class BoundInstruction:
    template: InstructionTemplate
    style_bindings: tuple[str, ...]
    exemplar_bindings: tuple[ExemplarRef, ...]
    weights: ScaleWeights


class TokenKind(enum.Enum):
    TEXT = "text"
    VISUAL = "visual"
    PAD = "pad"


@dataclass(frozen=True)
class TokenTag:
    kind: TokenKind
    slot: int | None = None  # overall slot index, set for VISUAL tokens


TEXT_TAG = TokenTag(TokenKind.TEXT)
PAD_TAG = TokenTag(TokenKind.PAD)


@dataclass
class FeatureSequence:
    """Hidden-space token sequence with per-token provenance.

    placeholder_positions maps each IMAGE slot (overall index) to the token
    position of its reserved placeholder; insertion consumes these entries.
    style_spans maps each STYLE slot to the half-open token range produced by
    the substituted style name.
    """

    embeddings: torch.Tensor  # [L, D]
    provenance: tuple[TokenTag, ...]
    max_length: int
    placeholder_positions: dict[int, int] = field(default_factory=dict)
    style_spans: dict[int, tuple[int, int]] = field(default_factory=dict)
    tokens: tuple[str, ...] = ()

    def __post_init__(self):
        if self.embeddings.shape[0] != len(self.provenance):
            raise ShapeError(
                f"{self.embeddings.shape[0]} embeddings vs {len(self.provenance)} provenance tags"
            )

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


# ---------------------------------------------------------------------------
# template parsing and binding
# ---------------------------------------------------------------------------

def parse_template(text: str) -> InstructionTemplate:
    """Locate every identifier occurrence; plain text yields zero slots."""
    if not text:
        raise TemplateParseError("template text is empty")
    slots: list[Slot] = []
    pos = 0
    while True:
        start = text.find("<", pos)
        if start == -1:
            break
        end = text.find(">", start)
        if end == -1:
            raise TemplateParseError(
                f"unclosed identifier {text[start:start + 8]!r}", offset=start
            )
        literal = text[start : end + 1]
        kind = _IDENTIFIERS.get(literal)
        if kind is None:
            raise TemplateParseError(f"unknown identifier {literal!r}", offset=start)
        slots.append(Slot(kind=kind, start=start, end=end + 1))
        pos = end + 1
    return InstructionTemplate(raw_text=text, slots=tuple(slots))


def bind(
    template: InstructionTemplate,
    styles: list[str] | tuple[str, ...] = (),
    exemplars: list[ExemplarRef] | tuple[ExemplarRef, ...] = (),
    weights: ScaleWeights | None = None,
) -> BoundInstruction:
    """Attach style names and exemplar refs to a template's slots."""
    if len(styles) != template.style_count:
        raise ArityError(
            f"expected {template.style_count} style binding(s), got {len(styles)}"
        )
    if len(exemplars) != template.image_count:
        raise ArityError(
            f"expected {template.image_count} exemplar binding(s), got {len(exemplars)}"
        )
    n = len(template.slots)
    if weights is None:
        weights = ScaleWeights.ones(n)
    if len(weights) != n:
        raise ArityError(f"expected {n} scale weight(s), got {len(weights)}")
    return BoundInstruction(
        template=template,
        style_bindings=tuple(styles),
        exemplar_bindings=tuple(exemplars),
        weights=weights,
    )


# ---------------------------------------------------------------------------
# text encoding with span recovery
# ---------------------------------------------------------------------------

def substituted_text(bound: BoundInstruction) -> str:
    """Template text with style names substituted and image slots kept as the placeholder."""
    template = bound.template
    parts: list[str] = []
    cursor = 0
    style_iter = iter(bound.style_bindings)
    for slot in template.slots:
        parts.append(template.raw_text[cursor : slot.start])
        parts.append(next(style_iter) if slot.kind is SlotKind.STYLE else IMAGE_TOKEN)
        cursor = slot.end
    parts.append(template.raw_text[cursor:])
    return "".join(parts)


def encode_text(bound: BoundInstruction, backend: TextEncoder) -> FeatureSequence:
    """Encode the substituted instruction, recording placeholder positions and
    the token span each substituted style name occupies.

    Spans are recovered by re-tokenizing the running prefix with and without
    each substitution, so they hold for any tokenizer whose output is stable
    under concatenation at the substitution boundaries; a mismatch raises
    SpanAlignmentError rather than silently mis-scaling.
    """
    template = bound.template
    parts: list[str] = []
    cursor = 0
    style_iter = iter(bound.style_bindings)
    spans: dict[int, tuple[int, int]] = {}
    placeholders: dict[int, int] = {}
    sub_tokens: dict[int, list[str]] = {}
    for i, slot in enumerate(template.slots):
        parts.append(template.raw_text[cursor : slot.start])
        before = len(backend.tokenize("".join(parts)))
        sub = next(style_iter) if slot.kind is SlotKind.STYLE else IMAGE_TOKEN
        parts.append(sub)
        after = len(backend.tokenize("".join(parts)))
        if slot.kind is SlotKind.STYLE:
            spans[i] = (before, after)
        else:
            placeholders[i] = before
            if after != before + 1:
                raise SpanAlignmentError(
                    f"placeholder for slot {i} did not tokenize to a single token"
                )
        sub_tokens[i] = backend.tokenize(sub)
        cursor = slot.end
    parts.append(template.raw_text[cursor:])
    full = "".join(parts)

    tokens, embeddings = backend.encode(full)
    if len(tokens) > backend.context_limit:
        raise ContextLengthError(
            f"instruction encodes to {len(tokens)} tokens, context limit is {backend.context_limit}"
        )
    for i, (lo, hi) in spans.items():
        if tokens[lo:hi] != sub_tokens[i]:
            raise SpanAlignmentError(
                f"style span for slot {i} misaligned: expected {sub_tokens[i]}, got {tokens[lo:hi]}"
            )
    for i, pos in placeholders.items():
        if tokens[pos] != IMAGE_TOKEN:
            raise SpanAlignmentError(f"placeholder for slot {i} not found at position {pos}")

    return FeatureSequence(
        embeddings=embeddings,
        provenance=(TEXT_TAG,) * len(tokens),
        max_length=backend.context_limit,
        placeholder_positions=placeholders,
        style_spans=spans,
        tokens=tuple(tokens),
    )


def pad_sequence(seq: FeatureSequence, to_length: int | None = None) -> FeatureSequence:
    """Right-pad with zero-embedding PAD tokens (up to max_length by default)."""
    target = to_length if to_length is not None else seq.max_length
    if target > seq.max_length:
        raise ConfigError(f"cannot pad past max_length {seq.max_length}")
    n = target - len(seq)
    if n <= 0:
        return seq
    pad = torch.zeros(n, seq.dim, dtype=seq.embeddings.dtype)
    return replace(
        seq,
        embeddings=torch.cat([seq.embeddings, pad]),
        provenance=seq.provenance + (PAD_TAG,) * n,
        tokens=seq.tokens + ("",) * n if seq.tokens else (),
    )


def stack_sequences(seqs: list[FeatureSequence]) -> tuple[torch.Tensor, torch.Tensor]:
    """Batch sequences to a common length. Returns (embeddings [B,L,D], key mask [B,L])."""
    width = max(len(s) for s in seqs)
    embs, masks = [], []
    for s in seqs:
        n = width - len(s)
        emb = torch.cat([s.embeddings, torch.zeros(n, s.dim, dtype=s.embeddings.dtype)])
        mask = torch.tensor(
            [t.kind is not TokenKind.PAD for t in s.provenance] + [False] * n
        )
        embs.append(emb)
        masks.append(mask)
    return torch.stack(embs), torch.stack(masks)


# ---------------------------------------------------------------------------
# exemplar encoding and alignment
# ---------------------------------------------------------------------------

def encode_exemplar(image: np.ndarray, backend: ImageEncoder) -> torch.Tensor:
    """Patch-feature grid [g, g, patch_dim] for one exemplar image."""
    grid = backend.patch_grid(image)
    g = backend.grid_size
    if grid.shape != (g, g, backend.patch_dim):
        raise ConfigError(
            f"image backend emitted grid {tuple(grid.shape)}, profile says "
            f"({g}, {g}, {backend.patch_dim})"
        )
    return grid


@dataclass(frozen=True)
class AlignmentConfig:
    """Geometry of the convolution mapping patch features into the text space."""

    kernel: int = 6
    stride: int = 4
    input_grid: int = 14
    patch_dim: int = 24
    dim: int = 32

    def __post_init__(self):
        if self.kernel > self.input_grid:
            raise ConfigError(
                f"kernel {self.kernel} larger than input grid {self.input_grid}"
            )
        if self.stride < 1 or self.kernel < 1:
            raise ConfigError("kernel and stride must be positive")

    @property
    def tokens_per_axis(self) -> int:
        return (self.input_grid - self.kernel) // self.stride + 1

    @property
    def token_count(self) -> int:
        return self.tokens_per_axis**2

    def as_dict(self) -> dict:
        return {
            "kernel": self.kernel,
            "stride": self.stride,
            "input_grid": self.input_grid,
            "patch_dim": self.patch_dim,
            "dim": self.dim,
        }


class AlignmentLayer(nn.Module):
    """Trainable convolution turning a patch grid into visual tokens.

    Initialized with small weights and zero bias so that, early in training,
    conditioning stays text-dominant.
    """

    def __init__(self, config: AlignmentConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or AlignmentConfig()
        self.conv = nn.Conv2d(
            self.config.patch_dim,
            self.config.dim,
            kernel_size=self.config.kernel,
            stride=self.config.stride,
        )
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            self.conv.weight.copy_(
                torch.randn(self.conv.weight.shape, generator=gen) * 0.02
            )
            self.conv.bias.zero_()

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """[g, g, patch_dim] -> [token_count, dim]."""
        cfg = self.config
        if grid.shape[0] != cfg.input_grid or grid.shape[1] != cfg.input_grid:
            raise ConfigError(
                f"grid is {grid.shape[0]}x{grid.shape[1]}, alignment expects "
                f"{cfg.input_grid}x{cfg.input_grid}"
            )
        if grid.shape[2] != cfg.patch_dim:
            raise ConfigError(
                f"grid feature width {grid.shape[2]} != configured patch_dim {cfg.patch_dim}"
            )
        x = grid.permute(2, 0, 1).unsqueeze(0).to(self.conv.weight.dtype)
        out = self.conv(x)[0]  # [dim, k, k]
        return out.permute(1, 2, 0).reshape(-1, cfg.dim)


def align(grid: torch.Tensor, layer: AlignmentLayer) -> torch.Tensor:
    """Map one patch grid into k² visual tokens in the text feature dimension."""
    return layer(grid)


# ---------------------------------------------------------------------------
# insertion, weighting, blending
# ---------------------------------------------------------------------------

def insert(h_t: FeatureSequence, visual_groups: list[torch.Tensor]) -> FeatureSequence:
    """Replace each recorded placeholder token with its visual-token group.

    Groups are matched to IMAGE slots in slot order. TEXT token embeddings pass
    through untouched; trailing PAD tokens are dropped if the grown sequence
    would exceed max_length, and truncating anything else is an error.
    """
    slots = sorted(h_t.placeholder_positions)
    if len(visual_groups) != len(slots):
        raise SpliceError(
            f"{len(slots)} placeholder(s) recorded but {len(visual_groups)} visual group(s) given"
        )
    for g in visual_groups:
        if g.ndim != 2 or g.shape[1] != h_t.dim:
            raise ShapeError(
                f"visual group shape {tuple(g.shape)} incompatible with sequence dim {h_t.dim}"
            )

    pieces: list[torch.Tensor] = []
    tags: list[TokenTag] = []
    toks: list[str] = []
    order = sorted(slots, key=lambda s: h_t.placeholder_positions[s])
    cursor = 0
    offsets: list[tuple[int, int]] = []  # (original position, growth) per splice
    for slot in order:
        group = visual_groups[slots.index(slot)]
        pos = h_t.placeholder_positions[slot]
        pieces.append(h_t.embeddings[cursor:pos])
        tags.extend(h_t.provenance[cursor:pos])
        if h_t.tokens:
            toks.extend(h_t.tokens[cursor:pos])
        pieces.append(group.to(h_t.embeddings.dtype))
        tags.extend([TokenTag(TokenKind.VISUAL, slot)] * group.shape[0])
        if h_t.tokens:
            toks.extend([IMAGE_TOKEN] * group.shape[0])
        offsets.append((pos, group.shape[0] - 1))
        cursor = pos + 1
    pieces.append(h_t.embeddings[cursor:])
    tags.extend(h_t.provenance[cursor:])
    if h_t.tokens:
        toks.extend(h_t.tokens[cursor:])

    embeddings = torch.cat(pieces)
    over = embeddings.shape[0] - h_t.max_length
    if over > 0:
        dropped = 0
        while dropped < over and tags and tags[-1].kind is TokenKind.PAD:
            tags.pop()
            if toks:
                toks.pop()
            dropped += 1
        if dropped < over:
            raise SequenceOverflowError(
                f"inserting visual tokens needs {over} slots but only {dropped} "
                f"trailing PAD token(s) are droppable (max_length {h_t.max_length})"
            )
        embeddings = embeddings[: h_t.max_length]

    def shift(idx: int) -> int:
        return idx + sum(growth for pos, growth in offsets if pos < idx)

    new_spans = {i: (shift(lo), shift(hi)) for i, (lo, hi) in h_t.style_spans.items()}
    return FeatureSequence(
        embeddings=embeddings,
        provenance=tuple(tags),
        max_length=h_t.max_length,
        placeholder_positions={},
        style_spans=new_spans,
        tokens=tuple(toks) if h_t.tokens else (),
    )


def apply_scale_weights(h: FeatureSequence, bound: BoundInstruction) -> FeatureSequence:
    """Multiply each style element's token span by its alpha.

    STYLE slots scale the substituted-name span; IMAGE slots scale their
    inserted visual tokens. Alphas of exactly 1.0 are skipped, which keeps the
    all-ones case bit-identical.
    """
    slots = bound.template.slots
    if len(bound.weights) != len(slots):
        raise ArityError(f"expected {len(slots)} alpha(s), got {len(bound.weights)}")
    embeddings = h.embeddings.clone()
    for i, (slot, alpha) in enumerate(zip(slots, bound.weights.alphas)):
        if alpha == 1.0:
            continue
        if slot.kind is SlotKind.STYLE:
            span = h.style_spans.get(i)
            if span is None:
                raise SpanAlignmentError(f"no recorded span for STYLE slot {i}")
            embeddings[span[0] : span[1]] *= alpha
        else:
            rows = [
                j
                for j, tag in enumerate(h.provenance)
                if tag.kind is TokenKind.VISUAL and tag.slot == i
            ]
            if not rows:
                raise SpanAlignmentError(
                    f"no visual tokens present for IMAGE slot {i}; insert exemplars "
                    "before applying scale weights"
                )
            embeddings[rows] *= alpha
    return replace(h, embeddings=embeddings)


def blend_exemplars(groups: list[torch.Tensor], weights: list[float]) -> torch.Tensor:
    """Convex combination of aligned token groups of identical shape.

    Weights must be non-negative with a positive sum; they are normalized to
    sum to one, so the blend is invariant under positive rescaling.
    """
    if not groups:
        raise ShapeError("no visual token groups to blend")
    if len(groups) != len(weights):
        raise ShapeError(f"{len(groups)} group(s) but {len(weights)} weight(s)")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ShapeError(f"blend weights must be non-negative, got {weights}")
    total = w.sum()
    if total <= 0:
        raise ShapeError("blend weights sum to zero")
    w = w / total
    shape = groups[0].shape
    for g in groups[1:]:
        if g.shape != shape:
            raise ShapeError(f"group shapes differ: {tuple(shape)} vs {tuple(g.shape)}")
    out = torch.zeros_like(groups[0])
    for coeff, g in zip(w, groups):
        out = out + float(coeff) * g
    return out


# ---------------------------------------------------------------------------
# end-to-end encoding
# ---------------------------------------------------------------------------

def encode_instruction(
    bound: BoundInstruction,
    text_backend: TextEncoder,
    image_backend: ImageEncoder | None = None,
    align_layer: AlignmentLayer | None = None,
    blend: tuple[list[ExemplarRef], list[float]] | None = None,
) -> FeatureSequence:
    """parse→bind→encode pipeline tail: text features, aligned visual tokens,
    insertion, then scale weighting on the final sequence.

    blend, when given, supplies (exemplar refs, weights) to merge into the
    instruction's single IMAGE slot in place of its direct binding.
    """
    h_t = encode_text(bound, text_backend)
    image_slots = bound.template.slot_indices(SlotKind.IMAGE)
    if image_slots or blend is not None:
        if image_backend is None or align_layer is None:
            raise ConfigError("instruction has image slots but no image backend/alignment layer")
    groups: list[torch.Tensor] = []
    if blend is not None:
        refs, weights = blend
        if len(image_slots) != 1:
            raise ArityError(
                f"blending requires exactly one IMAGE slot, template has {len(image_slots)}"
            )
        aligned = [align(encode_exemplar(r.load(), image_backend), align_layer) for r in refs]
        groups = [blend_exemplars(aligned, weights)]
    else:
        for ref in bound.exemplar_bindings:
            groups.append(align(encode_exemplar(ref.load(), image_backend), align_layer))
    h = insert(h_t, groups) if groups or h_t.placeholder_positions else h_t
    return apply_scale_weights(h, bound)


def null_features(dim: int, max_length: int) -> FeatureSequence:
    """Empty-instruction condition: a single zero-embedding PAD token."""
    return FeatureSequence(
        embeddings=torch.zeros(1, dim),
        provenance=(PAD_TAG,),
        max_length=max_length,
    )
