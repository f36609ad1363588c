"""Pluggable encoder/generator seams.

Every model-facing component (text encoder, image encoder, VAE, T2I client,
editor) has a deterministic toy implementation so the whole toolkit runs and
tests offline. Real implementations load external weights behind the same
duck-typed interfaces and are selected via ``STYLEBOOTH_BACKEND=toy|real``.
"""

from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, InputError

IMAGE_TOKEN = "<image>"
STYLE_TOKEN = "<style>"


# ---------------------------------------------------------------------------
# profiles and interfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BackendProfile:
    """Shape/determinism contract echoed into checkpoints and reports."""

    kind: str = "toy"
    dim: int = 32               # hidden-space width shared by text and visual tokens
    context_limit: int = 77
    grid_size: int = 14         # patch grid side g emitted by the image encoder
    patch_dim: int = 24         # per-patch feature width before alignment
    seed: int = 0

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dim": self.dim,
            "context_limit": self.context_limit,
            "grid_size": self.grid_size,
            "patch_dim": self.patch_dim,
            "seed": self.seed,
        }


class TextEncoder(Protocol):
    dim: int
    context_limit: int

    def tokenize(self, text: str) -> list[str]: ...

    def encode(self, text: str) -> tuple[list[str], torch.Tensor]: ...

    def embed_text(self, text: str) -> np.ndarray: ...


class ImageEncoder(Protocol):
    grid_size: int
    patch_dim: int
    dim: int

    def patch_grid(self, image: np.ndarray) -> torch.Tensor: ...

    def embed_image(self, image: np.ndarray) -> np.ndarray: ...


class VAEBackend(Protocol):
    downsample: int

    def encode(self, image: np.ndarray) -> torch.Tensor: ...

    def decode(self, latent: torch.Tensor) -> np.ndarray: ...


class T2IClient(Protocol):
    def generate(self, prompt: str, seed: int, style: str | None = None) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# image I/O helpers
# ---------------------------------------------------------------------------

def load_image(path: str) -> np.ndarray:
    """Decode an image file into an HxWx3 uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except Exception as exc:
        raise InputError(f"cannot decode image {path!r}: {exc}") from exc


def save_image(image: np.ndarray, path: str) -> str:
    """Write an HxWx3 uint8 array losslessly (PNG)."""
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PNG")
    return path


def _as_float01(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise InputError(f"expected HxWx3 image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return np.clip(arr.astype(np.float64), 0.0, 1.0)


def _to_uint8(image01: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image01 * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# seeded hashing primitives
# ---------------------------------------------------------------------------

def _hash_rng(seed: int, *parts: str) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode("utf-8"))
    for part in parts:
        h.update(b"\x1f")
        h.update(part.encode("utf-8"))
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def _hash_vector(seed: int, dim: int, *parts: str) -> np.ndarray:
    v = _hash_rng(seed, *parts).standard_normal(dim)
    return v / np.sqrt(dim)


# ---------------------------------------------------------------------------
# toy text encoder
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"<image>|<style>|\w+|[^\w\s]")


class ToyTokenizer:
    """Word/punctuation tokenizer with "<image>" and "<style>" reserved.

    The reserved identifiers always survive as single tokens, which guarantees
    a one-token splice point for visual insertion regardless of how the rest of
    the text splits.
    """

    reserved = (IMAGE_TOKEN, STYLE_TOKEN)

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)


class ToyTextEncoder:
    """Deterministic hash-embedding text encoder.

    Each token's embedding is a pure function of (token string, seed), so a
    single-character edit changes only the affected token's vector. That makes
    span-level assertions (scale weighting, insertion) exact.
    """

    def __init__(self, profile: BackendProfile | None = None):
        self.profile = profile or BackendProfile()
        self.dim = self.profile.dim
        self.context_limit = self.profile.context_limit
        self._tokenizer = ToyTokenizer()
        self._cache: dict[str, np.ndarray] = {}

    def tokenize(self, text: str) -> list[str]:
        return self._tokenizer.tokenize(text)

    def token_embedding(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            vec = _hash_vector(self.profile.seed, self.dim, "tok", token)
            self._cache[token] = vec
        return vec

    def encode(self, text: str) -> tuple[list[str], torch.Tensor]:
        tokens = self.tokenize(text)
        if tokens:
            emb = np.stack([self.token_embedding(t) for t in tokens])
        else:
            emb = np.zeros((0, self.dim))
        return tokens, torch.from_numpy(emb).to(torch.float32)

    def embed_text(self, text: str) -> np.ndarray:
        """Sequence-level embedding (mean of token vectors, normalized)."""
        tokens, emb = self.encode(text)
        if not tokens:
            return np.zeros(self.dim)
        v = emb.numpy().mean(axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


# ---------------------------------------------------------------------------
# toy image encoder
# ---------------------------------------------------------------------------

class ToyImageEncoder:
    """Deterministic patch featurizer over a g×g cell grid.

    Cells are the bilinear reduction of the input to grid_size², and per-cell
    features are a fixed seeded nonlinear projection of the cell color. Close
    images therefore get close features (unlike a raw content hash), which the
    similarity-based components need, while identical inputs still map to
    identical outputs.
    """

    def __init__(self, profile: BackendProfile | None = None):
        self.profile = profile or BackendProfile()
        self.grid_size = self.profile.grid_size
        self.patch_dim = self.profile.patch_dim
        self.dim = self.profile.dim
        rng = _hash_rng(self.profile.seed, "img-proj")
        self._w_patch = rng.standard_normal((3, self.patch_dim)) * 1.7
        self._b_patch = rng.standard_normal(self.patch_dim) * 0.3
        self._w_global = rng.standard_normal((3, self.dim)) * 1.7
        self._b_global = rng.standard_normal(self.dim) * 0.3

    def _cells(self, image: np.ndarray) -> np.ndarray:
        arr = _to_uint8(_as_float01(image))
        g = self.grid_size
        small = Image.fromarray(arr).resize((g, g), Image.BILINEAR)
        return np.asarray(small).astype(np.float64) / 127.5 - 1.0

    def patch_grid(self, image: np.ndarray) -> torch.Tensor:
        """g×g×patch_dim grid of per-cell features."""
        cells = self._cells(image)
        feats = np.tanh(cells @ self._w_patch + self._b_patch)
        return torch.from_numpy(feats).to(torch.float32)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        """Global embedding in the shared dim-width space, unit-normalized."""
        cells = self._cells(image)
        feats = np.tanh(cells @ self._w_global + self._b_global)
        v = feats.reshape(-1, self.dim).mean(axis=0)
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


# ---------------------------------------------------------------------------
# toy VAE
# ---------------------------------------------------------------------------

class ToyVAE:
    """Identity-style latent codec.

    With downsample 1 (the default) encode/decode round-trips exactly; larger
    factors average-pool blocks, which is lossy but keeps the editing model's
    latent geometry exercisable.
    """

    def __init__(self, downsample: int = 1):
        if downsample < 1:
            raise ConfigError(f"downsample must be >= 1, got {downsample}")
        self.downsample = downsample

    def encode(self, image: np.ndarray) -> torch.Tensor:
        arr = _as_float01(image) * 2.0 - 1.0  # CxHxW in [-1, 1]
        h, w = arr.shape[:2]
        f = self.downsample
        if h % f or w % f:
            raise InputError(
                f"image dims {h}x{w} not divisible by downsample factor {f}"
            )
        lat = arr.transpose(2, 0, 1)
        if f > 1:
            c = lat.shape[0]
            lat = lat.reshape(c, h // f, f, w // f, f).mean(axis=(2, 4))
        return torch.from_numpy(lat).to(torch.float32)

    def decode(self, latent: torch.Tensor) -> np.ndarray:
        lat = latent.detach().cpu().numpy()
        f = self.downsample
        if f > 1:
            lat = lat.repeat(f, axis=1).repeat(f, axis=2)
        arr = (lat.transpose(1, 2, 0) + 1.0) / 2.0
        return _to_uint8(arr)


# ---------------------------------------------------------------------------
# toy style transforms, T2I stub, and editor
# ---------------------------------------------------------------------------

class ToyStyleTransform:
    """Invertible per-style color/pattern transform derived from the style name.

    Amplitudes are kept small enough that clipping rarely destroys content, so
    a clean removal lands in the usable similarity band while a leaky one stays
    too close to the styled original.
    """

    def __init__(self, style: str, seed: int = 0):
        rng = _hash_rng(seed, "style", style)
        self.style = style
        self.gain = rng.uniform(0.75, 1.25, size=3)
        self.bias = rng.uniform(-0.18, 0.18, size=3)
        self.freq = rng.uniform(1.0, 3.0, size=2)
        self.phase = rng.uniform(0.0, 2 * np.pi, size=2)
        self.pattern_amp = 0.12

    def _pattern(self, h: int, w: int) -> np.ndarray:
        ys = np.linspace(0, 2 * np.pi, h, endpoint=False)
        xs = np.linspace(0, 2 * np.pi, w, endpoint=False)
        wave = np.sin(self.freq[0] * ys[:, None] + self.phase[0]) * np.sin(
            self.freq[1] * xs[None, :] + self.phase[1]
        )
        return self.pattern_amp * wave[..., None]

    def apply(self, image: np.ndarray, strength: float = 1.0) -> np.ndarray:
        img = _as_float01(image)
        h, w = img.shape[:2]
        gain = 1.0 + strength * (self.gain - 1.0)
        styled = img * gain + strength * (self.bias + self._pattern(h, w))
        return _to_uint8(styled)

    def remove(self, image: np.ndarray, leakage: float = 0.0) -> np.ndarray:
        img = _as_float01(image)
        h, w = img.shape[:2]
        plain = (img - self.bias - self._pattern(h, w)) / self.gain
        out = (1.0 - leakage) * plain + leakage * img
        return _to_uint8(out)


class StubT2IClient:
    """Offline T2I stand-in: smooth seeded noise, optionally stylized."""

    def __init__(self, size: int = 32, seed: int = 0, fail_prompts: frozenset[str] = frozenset()):
        self.size = size
        self.seed = seed
        self.fail_prompts = fail_prompts  # injectable failures for resume tests

    def generate(self, prompt: str, seed: int, style: str | None = None) -> np.ndarray:
        if prompt in self.fail_prompts:
            raise InputError(f"stub T2I configured to fail on prompt {prompt!r}")
        rng = _hash_rng(self.seed + seed, "t2i", prompt)
        coarse = rng.uniform(0.15, 0.85, size=(4, 4, 3))
        img = np.asarray(
            Image.fromarray(_to_uint8(coarse)).resize((self.size, self.size), Image.BILINEAR)
        )
        if style is not None:
            img = ToyStyleTransform(style, seed=self.seed).apply(img)
        return img


class ToyEditor:
    """Deterministic image editor mirroring the real editing model's contract.

    Vanilla (untuned) edits are intentionally imperfect: de-style keeps a
    residual of the original style and stylize applies the style only
    partially. Tuned edits are clean. This gives the data refinery the same
    quality dynamics the real model family shows, at zero cost.
    """

    STYLE = "style"
    DESTYLE = "destyle"

    def __init__(self, seed: int = 0, vanilla_leakage: float = 0.3, vanilla_strength: float = 0.6):
        self.seed = seed
        self.vanilla_leakage = vanilla_leakage
        self.vanilla_strength = vanilla_strength

    def edit(
        self,
        image: np.ndarray,
        style: str,
        direction: str,
        tuned: bool = False,
        seed: int = 0,
    ) -> np.ndarray:
        transform = ToyStyleTransform(style, seed=self.seed)
        if direction == self.STYLE:
            strength = 1.0 if tuned else self.vanilla_strength
            return transform.apply(image, strength=strength)
        if direction == self.DESTYLE:
            leakage = 0.0 if tuned else self.vanilla_leakage
            return transform.remove(image, leakage=leakage)
        raise ConfigError(f"unknown edit direction {direction!r}")


# ---------------------------------------------------------------------------
# real-backend adapters (weights supplied by the user)
# ---------------------------------------------------------------------------

class ClipTextEncoder:
    """CLIP text encoder adapter. Requires ``transformers`` and local weights."""

    def __init__(self, model_name_or_path: str, device: str = "cpu"):
        from transformers import CLIPTextModel, CLIPTokenizer

        self._tok = CLIPTokenizer.from_pretrained(model_name_or_path)
        self._model = CLIPTextModel.from_pretrained(model_name_or_path).to(device).eval()
        if IMAGE_TOKEN not in self._tok.get_vocab():
            self._tok.add_tokens([IMAGE_TOKEN])
            self._model.resize_token_embeddings(len(self._tok))
        self._device = device
        self.dim = self._model.config.hidden_size
        self.context_limit = self._tok.model_max_length

    def tokenize(self, text: str) -> list[str]:
        return self._tok.tokenize(text)

    @torch.no_grad()
    def encode(self, text: str) -> tuple[list[str], torch.Tensor]:
        tokens = self.tokenize(text)
        ids = self._tok(text, return_tensors="pt", truncation=False)["input_ids"]
        hidden = self._model(ids.to(self._device)).last_hidden_state[0]
        # drop BOS/EOS so positions line up with tokenize()
        return tokens, hidden[1 : 1 + len(tokens)].cpu()

    @torch.no_grad()
    def embed_text(self, text: str) -> np.ndarray:
        _, hidden = self.encode(text)
        v = hidden.mean(dim=0).numpy()
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


class ClipImageEncoder:
    """CLIP vision encoder adapter exposing last-layer patch features."""

    def __init__(self, model_name_or_path: str, device: str = "cpu"):
        from transformers import CLIPImageProcessor, CLIPVisionModel

        self._proc = CLIPImageProcessor.from_pretrained(model_name_or_path)
        self._model = CLIPVisionModel.from_pretrained(model_name_or_path).to(device).eval()
        self._device = device
        cfg = self._model.config
        self.grid_size = cfg.image_size // cfg.patch_size
        self.patch_dim = cfg.hidden_size
        self.dim = cfg.hidden_size

    @torch.no_grad()
    def patch_grid(self, image: np.ndarray) -> torch.Tensor:
        inputs = self._proc(images=Image.fromarray(image), return_tensors="pt")
        hidden = self._model(inputs["pixel_values"].to(self._device)).last_hidden_state[0]
        patches = hidden[1:]  # drop the class token
        g = self.grid_size
        return patches.reshape(g, g, -1).cpu()

    @torch.no_grad()
    def embed_image(self, image: np.ndarray) -> np.ndarray:
        grid = self.patch_grid(image)
        v = grid.reshape(-1, self.dim).mean(dim=0).numpy()
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


class HttpT2IClient:
    """Remote text-to-image service client (JSON in, PNG bytes out)."""

    def __init__(self, endpoint: str, timeout: float = 120.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def generate(self, prompt: str, seed: int, style: str | None = None) -> np.ndarray:
        import io

        import httpx

        resp = httpx.post(
            self.endpoint,
            json={"prompt": prompt, "seed": seed, "style": style},
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return np.asarray(Image.open(io.BytesIO(resp.content)).convert("RGB"))


# ---------------------------------------------------------------------------
# bundle selection
# ---------------------------------------------------------------------------

@dataclass
class Backends:
    """The four seams as one unit, plus the profile they were built from."""

    profile: BackendProfile
    text: TextEncoder
    image: ImageEncoder
    vae: VAEBackend
    t2i: T2IClient
    editor: ToyEditor = field(default=None)  # type: ignore[assignment]


def get_backends(profile: BackendProfile | None = None, kind: str | None = None) -> Backends:
    """Build a backend bundle, honoring ``STYLEBOOTH_BACKEND`` when kind is unset."""
    kind = kind or os.environ.get("STYLEBOOTH_BACKEND", "toy")
    if kind == "toy":
        profile = profile or BackendProfile()
        return Backends(
            profile=profile,
            text=ToyTextEncoder(profile),
            image=ToyImageEncoder(profile),
            vae=ToyVAE(),
            t2i=StubT2IClient(seed=profile.seed),
            editor=ToyEditor(seed=profile.seed),
        )
    if kind == "real":
        weights = os.environ.get("STYLEBOOTH_CLIP_PATH")
        t2i_url = os.environ.get("STYLEBOOTH_T2I_URL", "http://localhost:8000/generate")
        if not weights:
            raise ConfigError("real backends need STYLEBOOTH_CLIP_PATH pointing at CLIP weights")
        text = ClipTextEncoder(weights)
        image = ClipImageEncoder(weights)
        profile = BackendProfile(
            kind="real",
            dim=text.dim,
            context_limit=text.context_limit,
            grid_size=image.grid_size,
            patch_dim=image.patch_dim,
        )
        return Backends(
            profile=profile,
            text=text,
            image=image,
            vae=ToyVAE(),  # swap in a torch VAE checkpoint when available
            t2i=HttpT2IClient(t2i_url),
            editor=ToyEditor(),
        )
    raise ConfigError(f"unknown backend kind {kind!r}")
