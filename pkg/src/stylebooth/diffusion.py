"""Latent-diffusion editing model.

The denoiser is conditioned two ways at once: the original image's latent is
concatenated channel-wise with the noisy latent, and the multimodal instruction
features enter through cross-attention. Inference uses classifier-free guidance
over both conditions with a std-ratio rescale on the combined prediction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backends import Backends, get_backends, load_image
from .errors import ConfigError, DataValidationError, NumericsError
from .instructions import (
    AlignmentConfig,
    AlignmentLayer,
    BoundInstruction,
    ExemplarRef,
    FeatureSequence,
    bind,
    encode_instruction,
    null_features,
    parse_template,
    stack_sequences,
)


# ---------------------------------------------------------------------------
# noise schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients ᾱ_t, monotone decreasing in t."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if ab.ndim != 1 or len(ab) < 1:
            raise ConfigError("alpha_bar must be a 1-D array")
        if (np.diff(ab) >= 0).any():
            raise ConfigError("alpha_bar must be strictly decreasing")
        if ab[0] >= 1.0 or ab[-1] <= 0.0:
            raise ConfigError("alpha_bar must stay inside (0, 1)")
        object.__setattr__(self, "alpha_bar", ab)

    @classmethod
    def linear(cls, num_steps: int = 1000, start: float = 0.9999, end: float = 1e-4) -> "NoiseSchedule":
        return cls(alpha_bar=np.linspace(start, end, num_steps))

    @property
    def num_steps(self) -> int:
        return len(self.alpha_bar)

    def coeffs(self, t, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """sqrt(ᾱ_t) and sqrt(1-ᾱ_t), broadcastable against ``like``."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
        if (t_arr < 0).any() or (t_arr >= self.num_steps).any():
            raise ConfigError(f"timestep {t} outside [0, {self.num_steps})")
        ab = torch.as_tensor(self.alpha_bar[t_arr], dtype=like.dtype, device=like.device)
        shape = (-1,) + (1,) * (like.ndim - 1)
        ab = ab.reshape(shape) if like.ndim > 0 else ab.squeeze()
        return torch.sqrt(ab), torch.sqrt(1.0 - ab)

    def sampling_timesteps(self, steps: int) -> list[int]:
        """Descending timestep subset for sampling, from T-1 down to 0."""
        if steps < 1:
            raise ConfigError("need at least one sampling step")
        ts = np.linspace(self.num_steps - 1, 0, steps).round().astype(int)
        out: list[int] = []
        for t in ts:
            if not out or t < out[-1]:
                out.append(int(t))
        return out


def add_noise(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """z_t = sqrt(ᾱ_t)·z0 + sqrt(1-ᾱ_t)·ε."""
    s, n = schedule.coeffs(t, like=z0)
    return s * z0 + n * eps


def reconstruct_clean(z_t: torch.Tensor, t, eps_hat: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Invert add_noise for a predicted ε: ẑ0 = (z_t − sqrt(1-ᾱ_t)·ε̂)/sqrt(ᾱ_t)."""
    s, n = schedule.coeffs(t, like=z_t)
    return (z_t - n * eps_hat) / s


def ddim_step(
    z_t: torch.Tensor, t: int, t_next: int | None, eps_hat: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """Deterministic update to the next (smaller) timestep; None finishes at ẑ0."""
    z0_hat = reconstruct_clean(z_t, t, eps_hat, schedule)
    if t_next is None:
        return z0_hat
    s, n = schedule.coeffs(t_next, like=z_t)
    return s * z0_hat + n * eps_hat


# ---------------------------------------------------------------------------
# guidance algebra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GuidanceConfig:
    s_image: float = 1.5
    s_text: float = 7.5
    rescale_phi: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.rescale_phi <= 1.0:
            raise ConfigError(f"rescale_phi must lie in [0, 1], got {self.rescale_phi}")


def combine_guidance(eps_uncond, eps_image, eps_full, s_image: float, s_text: float):
    """Dual-condition extrapolation, image direction first then instruction."""
    return eps_uncond + s_image * (eps_image - eps_uncond) + s_text * (eps_full - eps_image)


def rescale_prediction(eps_hat: torch.Tensor, eps_cond: torch.Tensor, phi: float) -> torch.Tensor:
    """Blend ε̂ toward the conditional prediction's per-sample std.

    Zero std in ε̂ skips the rescale (the ratio would be undefined).
    """
    if phi == 0.0:
        return eps_hat
    dims = tuple(range(1, eps_hat.ndim)) if eps_hat.ndim > 1 else (0,)
    sigma_hat = eps_hat.std(dim=dims, keepdim=True, unbiased=False)
    sigma_cond = eps_cond.std(dim=dims, keepdim=True, unbiased=False)
    scale = torch.where(sigma_hat > 0, sigma_cond / sigma_hat.clamp_min(1e-38), torch.ones_like(sigma_hat))
    return phi * (eps_hat * scale) + (1.0 - phi) * eps_hat


# ---------------------------------------------------------------------------
# toy denoiser
# ---------------------------------------------------------------------------

def timestep_embedding(t: torch.Tensor, dim: int, max_period: int = 10000) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape [B, dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(max_period) * torch.arange(half, dtype=torch.float64) / half
    ).to(t.device)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ToyDenoiser(nn.Module):
    """Small convolutional noise predictor with instruction cross-attention.

    Input channels are [z_t ; latent(c_I)] concatenated; the instruction
    features enter through a single-head cross-attention block placed in the
    decoder half. encoder_parameters()/decoder_parameters() split the module
    for the exemplar-mode freeze contract.
    """

    def __init__(
        self,
        latent_channels: int = 3,
        hidden: int = 32,
        context_dim: int = 32,
        dtype: torch.dtype = torch.float32,
        seed: int = 0,
    ):
        super().__init__()
        self.latent_channels = latent_channels
        self.hidden = hidden
        self.context_dim = context_dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.enc1 = nn.Conv2d(2 * latent_channels, hidden, 3, padding=1)
            self.enc2 = nn.Conv2d(hidden, hidden, 3, padding=1)
            self.time_mlp = nn.Sequential(
                nn.Linear(hidden, hidden), nn.SiLU(), nn.Linear(hidden, hidden)
            )
            self.query = nn.Conv2d(hidden, hidden, 1)
            self.ctx_key = nn.Linear(context_dim, hidden)
            self.ctx_value = nn.Linear(context_dim, hidden)
            self.attn_out = nn.Conv2d(hidden, hidden, 1)
            self.dec1 = nn.Conv2d(hidden, hidden, 3, padding=1)
            self.dec2 = nn.Conv2d(hidden, latent_channels, 3, padding=1)
        self.to(dtype)

    def encoder_parameters(self):
        for m in (self.enc1, self.enc2, self.time_mlp):
            yield from m.parameters()

    def decoder_parameters(self):
        for m in (self.query, self.ctx_key, self.ctx_value, self.attn_out, self.dec1, self.dec2):
            yield from m.parameters()

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        context: torch.Tensor,
        cond_latent: torch.Tensor,
        context_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        b, _, h, w = z_t.shape
        dtype = self.enc1.weight.dtype
        x = torch.cat([z_t, cond_latent], dim=1).to(dtype)
        temb = self.time_mlp(timestep_embedding(t, self.hidden).to(dtype))
        x = F.silu(self.enc1(x))
        x = F.silu(self.enc2(x) + temb[:, :, None, None])

        q = self.query(x).reshape(b, self.hidden, h * w).transpose(1, 2)
        k = self.ctx_key(context.to(dtype))
        v = self.ctx_value(context.to(dtype))
        logits = q @ k.transpose(1, 2) / math.sqrt(self.hidden)
        if context_mask is not None:
            mask = context_mask.clone()
            empty = ~mask.any(dim=1)
            if empty.any():
                mask[empty, 0] = True  # fully-null context attends to one zero token
            logits = logits.masked_fill(~mask[:, None, :], float("-inf"))
        attn = torch.softmax(logits, dim=-1) @ v
        attn = attn.transpose(1, 2).reshape(b, self.hidden, h, w)
        x = x + self.attn_out(attn)

        x = F.silu(self.dec1(x))
        return self.dec2(x)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionDropout:
    """Null-condition probabilities for guidance training.

    A draw that would drop the image condition alone also drops the text
    condition: the guidance factorization is image-first, so a text-conditioned
    prediction without its image condition is never queried at inference.
    """

    p_both: float = 0.05
    p_text_only: float = 0.05
    p_image: float = 0.05

    def sample(self, n: int, rng: torch.Generator) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns boolean (drop_image, drop_text) flags of length n."""
        u = torch.rand(n, generator=rng)
        drop_both = u < self.p_both
        drop_text_only = (u >= self.p_both) & (u < self.p_both + self.p_text_only)
        drop_image = drop_both | (
            (u >= self.p_both + self.p_text_only)
            & (u < self.p_both + self.p_text_only + self.p_image)
        )
        drop_text = drop_image | drop_text_only
        assert not (drop_image & ~drop_text).any()
        return drop_image, drop_text


class TrainMode(enum.Enum):
    TEXT_BASED = "text"
    EXEMPLAR_BASED = "exemplar"


@dataclass(frozen=True)
class TrainConfig:
    steps: int
    lr: float
    batch_size: int = 4

    @classmethod
    def text_default(cls) -> "TrainConfig":
        return cls(steps=5000, lr=1e-4)

    @classmethod
    def exemplar_default(cls) -> "TrainConfig":
        return cls(steps=35000, lr=1e-5)

    @classmethod
    def default_for(cls, mode: TrainMode) -> "TrainConfig":
        return cls.text_default() if mode is TrainMode.TEXT_BASED else cls.exemplar_default()


@dataclass
class EditRecord:
    """One supervised editing example: edit source into target per instruction."""

    source: np.ndarray | str
    target: np.ndarray | str
    instruction: str
    styles: tuple[str, ...] = ()
    exemplars: tuple[ExemplarRef, ...] = ()

    def _img(self, ref) -> np.ndarray:
        return ref if isinstance(ref, np.ndarray) else load_image(ref)

    def load_source(self) -> np.ndarray:
        return self._img(self.source)

    def load_target(self) -> np.ndarray:
        return self._img(self.target)


@dataclass
class PreparedExample:
    """Record with latents precomputed.

    Text-only instruction features are cached too; exemplar-bearing records
    keep the raw record instead, because their features flow through the
    trainable alignment layer and must be re-encoded every step.
    """

    z0: torch.Tensor
    cond: torch.Tensor
    seq: FeatureSequence | None = None
    record: EditRecord | None = None


@dataclass
class TrainReport:
    mode: TrainMode
    config: TrainConfig
    losses: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return float(np.mean(self.losses[: max(1, len(self.losses) // 20)]))

    @property
    def final_loss(self) -> float:
        return float(np.mean(self.losses[-max(1, len(self.losses) // 20):]))


# ---------------------------------------------------------------------------
# the editing model
# ---------------------------------------------------------------------------

class EditingModel:
    """Denoiser + alignment layer + backends, with train/sample entry points."""

    def __init__(
        self,
        backends: Backends | None = None,
        schedule: NoiseSchedule | None = None,
        alignment: AlignmentConfig | None = None,
        latent_channels: int = 3,
        hidden: int = 32,
        dtype: torch.dtype = torch.float32,
        seed: int = 0,
    ):
        self.backends = backends or get_backends()
        profile = self.backends.profile
        self.schedule = schedule or NoiseSchedule.linear()
        self.alignment = alignment or AlignmentConfig(
            patch_dim=profile.patch_dim, dim=profile.dim, input_grid=profile.grid_size
        )
        self.align_layer = AlignmentLayer(self.alignment, seed=seed).to(dtype)
        self.denoiser = ToyDenoiser(
            latent_channels=latent_channels,
            hidden=hidden,
            context_dim=profile.dim,
            dtype=dtype,
            seed=seed,
        )
        self.dtype = dtype
        self.seed = seed

    # -- encoding ------------------------------------------------------------

    def encode(self, bound: BoundInstruction, blend=None) -> FeatureSequence:
        return encode_instruction(
            bound, self.backends.text, self.backends.image, self.align_layer, blend=blend
        )

    def encode_record(self, record: EditRecord) -> FeatureSequence:
        bound = bind(
            parse_template(record.instruction),
            styles=record.styles,
            exemplars=record.exemplars,
        )
        return self.encode(bound)

    def _null_context(self) -> FeatureSequence:
        return null_features(self.backends.profile.dim, self.backends.profile.context_limit)

    def latent(self, image: np.ndarray) -> torch.Tensor:
        return self.backends.vae.encode(image).to(self.dtype)

    def prepare(self, record: EditRecord) -> PreparedExample:
        live = bool(record.exemplars)
        return PreparedExample(
            z0=self.latent(record.load_target()),
            cond=self.latent(record.load_source()),
            seq=None if live else self.encode_record(record),
            record=record if live else None,
        )

    # -- training objective ----------------------------------------------------

    def training_loss(
        self,
        batch: list[EditRecord | PreparedExample],
        rng: torch.Generator,
        dropout: ConditionDropout | None = None,
        return_details: bool = False,
    ):
        """Noise-prediction MSE with per-element timestep/noise draws.

        Draw order from ``rng`` is: timesteps, noise, then dropout flags; the
        independent-oracle tests reproduce the loss by replaying that order.
        """
        if not batch:
            raise DataValidationError("empty training batch")
        examples = [
            r if isinstance(r, PreparedExample) else self.prepare(r) for r in batch
        ]
        z0 = torch.stack([e.z0 for e in examples])
        cond = torch.stack([e.cond for e in examples])
        seqs = [
            e.seq if e.seq is not None else self.encode_record(e.record) for e in examples
        ]

        b = len(batch)
        t = torch.randint(0, self.schedule.num_steps, (b,), generator=rng)
        eps = torch.randn(z0.shape, generator=rng, dtype=self.dtype)
        if dropout is not None:
            drop_image, drop_text = dropout.sample(b, rng)
        else:
            drop_image = drop_text = torch.zeros(b, dtype=torch.bool)

        null = self._null_context()
        seqs = [null if drop_text[i] else s for i, s in enumerate(seqs)]
        context, mask = stack_sequences(seqs)
        cond = torch.where(drop_image[:, None, None, None], torch.zeros_like(cond), cond)

        z_t = add_noise(z0, t, eps, self.schedule)
        pred = self.denoiser(z_t, t, context, cond, context_mask=mask)
        loss = F.mse_loss(pred, eps)
        if not torch.isfinite(loss):
            raise NumericsError(
                f"non-finite training loss (t={t.tolist()}, |z0|max={z0.abs().max():.3g})"
            )
        if return_details:
            details = {
                "t": t,
                "eps": eps,
                "pred": pred,
                "drop_image": drop_image,
                "drop_text": drop_text,
            }
            return loss, details
        return loss

    # -- guided prediction -----------------------------------------------------

    def cfg_predict(
        self,
        z_t: torch.Tensor,
        t,
        h: FeatureSequence,
        cond_latent: torch.Tensor,
        cfg: GuidanceConfig,
    ) -> torch.Tensor:
        """Dual-condition guided prediction with std-ratio rescale."""
        t_tensor = torch.as_tensor(np.atleast_1d(t))
        null_ctx, null_mask = stack_sequences([self._null_context()])
        ctx, mask = stack_sequences([h])
        zero_cond = torch.zeros_like(cond_latent)
        eps_uncond = self.denoiser(z_t, t_tensor, null_ctx, zero_cond, context_mask=null_mask)
        eps_image = self.denoiser(z_t, t_tensor, null_ctx, cond_latent, context_mask=null_mask)
        eps_full = self.denoiser(z_t, t_tensor, ctx, cond_latent, context_mask=mask)
        eps_hat = combine_guidance(eps_uncond, eps_image, eps_full, cfg.s_image, cfg.s_text)
        return rescale_prediction(eps_hat, eps_full, cfg.rescale_phi)

    # -- sampling ----------------------------------------------------------------

    def sample_edit(
        self,
        original: np.ndarray,
        bound: BoundInstruction,
        cfg: GuidanceConfig | None = None,
        steps: int = 50,
        seed: int = 0,
        blend=None,
    ) -> np.ndarray:
        """Deterministic edit of ``original`` following the bound instruction."""
        cfg = cfg or GuidanceConfig()
        h = self.encode(bound, blend=blend)
        cond = self.latent(original).unsqueeze(0)
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(cond.shape, generator=gen, dtype=self.dtype)
        times = self.schedule.sampling_timesteps(steps)
        with torch.no_grad():
            for i, t in enumerate(times):
                t_next = times[i + 1] if i + 1 < len(times) else None
                eps_hat = self.cfg_predict(z, t, h, cond, cfg)
                z = ddim_step(z, t, t_next, eps_hat, self.schedule)
        return self.backends.vae.decode(z[0].clamp(-1.0, 1.0))

    # -- fine-tuning ---------------------------------------------------------------

    def finetune(
        self,
        mode: TrainMode,
        dataset: list[EditRecord],
        config: TrainConfig | None = None,
        dropout: ConditionDropout | None = ConditionDropout(),
        seed: int = 0,
        log_every: int = 0,
    ) -> TrainReport:
        """Train the editor. Exemplar mode restricts the trainable set to the
        alignment layer and the denoiser's decoder half."""
        if not dataset:
            raise DataValidationError("fine-tuning dataset is empty")
        if mode is TrainMode.EXEMPLAR_BASED and not all(r.exemplars for r in dataset):
            raise DataValidationError("exemplar-based mode requires exemplars on every record")
        config = config or TrainConfig.default_for(mode)

        for p in self.denoiser.parameters():
            p.requires_grad_(True)
        for p in self.align_layer.parameters():
            p.requires_grad_(True)
        if mode is TrainMode.EXEMPLAR_BASED:
            for p in self.denoiser.encoder_parameters():
                p.requires_grad_(False)
            trainable = list(self.align_layer.parameters()) + list(
                self.denoiser.decoder_parameters()
            )
        else:
            trainable = list(self.denoiser.parameters()) + list(self.align_layer.parameters())

        opt = torch.optim.Adam(trainable, lr=config.lr)
        rng = torch.Generator().manual_seed(seed)
        report = TrainReport(mode=mode, config=config)
        prepared = [self.prepare(r) for r in dataset]
        n = len(prepared)
        for step in range(config.steps):
            idx = torch.randint(0, n, (min(config.batch_size, n),), generator=rng)
            batch = [prepared[int(i)] for i in idx]
            loss = self.training_loss(batch, rng, dropout=dropout)
            opt.zero_grad()
            loss.backward()
            opt.step()
            report.losses.append(float(loss.detach()))
            if log_every and (step + 1) % log_every == 0:
                recent = float(np.mean(report.losses[-log_every:]))
                print(f"step {step + 1}/{config.steps} loss {recent:.4f}")
        return report

    # -- persistence -----------------------------------------------------------------

    def save(self, path: str, extra: dict | None = None) -> str:
        payload = {
            "format": "stylebooth-editor-v1",
            "profile": self.backends.profile.as_dict(),
            "alignment": self.alignment.as_dict(),
            "schedule": {
                "num_steps": self.schedule.num_steps,
                "alpha_bar_start": float(self.schedule.alpha_bar[0]),
                "alpha_bar_end": float(self.schedule.alpha_bar[-1]),
            },
            "denoiser": {
                "latent_channels": self.denoiser.latent_channels,
                "hidden": self.denoiser.hidden,
                "context_dim": self.denoiser.context_dim,
            },
            "state": {
                "denoiser": self.denoiser.state_dict(),
                "align": self.align_layer.state_dict(),
            },
            "extra": extra or {},
        }
        torch.save(payload, path)
        return path

    @classmethod
    def load(cls, path: str, backends: Backends | None = None) -> "EditingModel":
        payload = torch.load(path, weights_only=False)
        if payload.get("format") != "stylebooth-editor-v1":
            raise ConfigError(f"{path!r} is not an editor checkpoint")
        sched = payload["schedule"]
        model = cls(
            backends=backends,
            schedule=NoiseSchedule.linear(
                sched["num_steps"], sched["alpha_bar_start"], sched["alpha_bar_end"]
            ),
            alignment=AlignmentConfig(**payload["alignment"]),
            latent_channels=payload["denoiser"]["latent_channels"],
            hidden=payload["denoiser"]["hidden"],
        )
        model.denoiser.load_state_dict(payload["state"]["denoiser"])
        model.align_layer.load_state_dict(payload["state"]["align"])
        return model
