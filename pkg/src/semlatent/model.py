"""Bottlenecked transformer autoencoder with a contrastive + reconstruction objective."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .smiles import MAX_LEN, VOCAB, Vocabulary, pad_batch, tokenize

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    hidden: int = 64
    heads: int = 4
    latent: int = 16
    max_len: int = MAX_LEN
    vocab: int = 39
    temperature: float = 0.7
    lam: float = 0.5
    ff_mult: int = 4
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.vocab != len(VOCAB):
            raise ValueError(f"vocab size must be {len(VOCAB)}")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = float(raw) if types[key] in ("float", float) else int(raw)
        return cls(**values)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    anchors_per_batch: int = 8
    mutants_per_anchor: int = 10
    grad_clip: float | None = None
    log_every: int = 0


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe


class Attention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        self.q = nn.Linear(hidden, hidden)
        self.k = nn.Linear(hidden, hidden)
        self.v = nn.Linear(hidden, hidden)
        self.o = nn.Linear(hidden, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, source, key_pad=None, causal: bool = False):
        B, T, H = x.shape
        S = source.shape[1]
        q = self.q(x).view(B, T, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(source).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(source).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(T, S, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = self.drop(torch.softmax(scores, dim=-1))
        out = (weights @ v).transpose(1, 2).reshape(B, T, H)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, hidden: int, mult: int, dropout: float = 0.0):
        super().__init__()
        self.up = nn.Linear(hidden, hidden * mult)
        self.down = nn.Linear(hidden * mult, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        # GELU keeps the network smooth for finite-difference checks
        return self.down(self.drop(F.gelu(self.up(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.hidden)
        self.attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.hidden)
        self.ff = FeedForward(cfg.hidden, cfg.ff_mult, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, pad):
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, key_pad=pad))
        return x + self.drop(self.ff(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.hidden)
        self.self_attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.hidden)
        self.cross_attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.hidden)
        self.ff = FeedForward(cfg.hidden, cfg.ff_mult, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory):
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, causal=True))
        x = x + self.drop(self.cross_attn(self.norm2(x), memory))
        return x + self.drop(self.ff(self.norm3(x)))


class Autoencoder(nn.Module):
    """Transformer encoder, mean pool to a unit-norm code, upsampled memory for the decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab, cfg.hidden)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len, cfg.hidden).float())
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.enc_norm = nn.LayerNorm(cfg.hidden)
        self.pool = nn.Linear(cfg.hidden, cfg.latent)
        self.upsample = nn.Linear(cfg.latent, cfg.max_len * cfg.hidden)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
        self.dec_norm = nn.LayerNorm(cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.vocab)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        T = ids.shape[1]
        if T > self.cfg.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.cfg.max_len}")
        if (ids < 0).any() or (ids >= self.cfg.vocab).any():
            raise ValueError("token id outside the vocabulary")
        return self.embed(ids) * math.sqrt(self.cfg.hidden) + self.positions[:T].to(self.embed.weight.dtype)

    def encode(self, ids: torch.Tensor) -> torch.Tensor:
        pad = ids == Vocabulary.PAD
        h = self._embed(ids)
        for layer in self.encoder:
            h = layer(h, pad)
        h = self.enc_norm(h)
        keep = (~pad).to(h.dtype)[..., None]
        pooled = (h * keep).sum(1) / keep.sum(1)
        return F.normalize(self.pool(pooled), dim=-1)

    def memory(self, z: torch.Tensor) -> torch.Tensor:
        return self.upsample(z).view(z.shape[0], self.cfg.max_len, self.cfg.hidden)

    def decode_with_memory(self, memory: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
        h = self._embed(inputs)
        for layer in self.decoder:
            h = layer(h, memory)
        return self.out(self.dec_norm(h))

    def decode_logits(self, z: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
        """Logits at position t predict token t+1 of the sequence from ``z`` and ``inputs[:, :t+1]``."""
        return self.decode_with_memory(self.memory(z), inputs)

    def forward(self, ids: torch.Tensor):
        z = self.encode(ids)
        return z, self.decode_logits(z, ids[:, :-1])


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> Autoencoder:
    torch.manual_seed(cfg.seed)
    return Autoencoder(cfg).to(dtype)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def supcon_loss(z: torch.Tensor, membership, is_anchor, tau: float) -> torch.Tensor:
    """Sum over anchor rows of the mean negative log-softmax of their positives.

    The softmax for anchor i runs over every other row in the batch; its
    positives are the non-anchor rows sharing i's membership label.
    """
    membership = torch.as_tensor(membership)
    is_anchor = torch.as_tensor(is_anchor, dtype=torch.bool)
    rows = torch.nonzero(is_anchor).flatten()
    R = z.shape[0]
    sim = (z[rows] @ z.T) / tau
    self_mask = torch.zeros(len(rows), R, dtype=torch.bool)
    self_mask[torch.arange(len(rows)), rows] = True
    sim = sim.masked_fill(self_mask, float("-inf"))
    peak = sim.max(dim=1, keepdim=True).values.detach()
    log_norm = peak + torch.log(torch.exp(sim - peak).sum(dim=1, keepdim=True))
    log_prob = sim - log_norm
    positive = (membership[rows][:, None] == membership[None, :]) & ~is_anchor[None, :]
    n_pos = positive.sum(dim=1)
    if (n_pos == 0).any():
        raise ValueError("every anchor needs at least one positive in the batch")
    picked = torch.where(positive, log_prob, torch.zeros_like(log_prob))
    return (-(picked.sum(dim=1) / n_pos)).sum()


def reconstruction_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean over sequences of the per-sequence mean token NLL; PAD targets are skipped."""
    mask = (targets != Vocabulary.PAD).to(logits.dtype)
    nll = F.cross_entropy(logits.transpose(1, 2), targets, reduction="none")
    return ((nll * mask).sum(1) / mask.sum(1)).mean()


def combined_loss(lc, lr, lam: float):
    return lam * lc + (1.0 - lam) * lr


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass
class TrainingBatch:
    tokens: np.ndarray
    membership: np.ndarray
    is_anchor: np.ndarray

    @property
    def pad_mask(self) -> np.ndarray:
        return self.tokens == Vocabulary.PAD


def build_batch(groups: Sequence[Sequence[str]]) -> TrainingBatch:
    """Rows for each group in order: the anchor SMILES first, then its mutants."""
    seqs, membership, is_anchor = [], [], []
    for g, group in enumerate(groups):
        if len(group) < 2:
            raise ValueError(f"group {g} has no positives")
        for r, smi in enumerate(group):
            seqs.append(tokenize(smi))
            membership.append(g)
            is_anchor.append(r == 0)
    return TrainingBatch(pad_batch(seqs), np.array(membership), np.array(is_anchor))


def iterate_batches(
    groups: Sequence[Sequence[str]], anchors_per_batch: int, rng: np.random.Generator
) -> Iterator[TrainingBatch]:
    """Endless shuffled epochs of multi-mutant batches."""
    usable = [g for g in groups if len(g) >= 2]
    if not usable:
        raise ValueError("no anchor has a positive")
    while True:
        order = rng.permutation(len(usable))
        for start in range(0, len(order) - anchors_per_batch + 1 if len(order) >= anchors_per_batch else 1, anchors_per_batch):
            yield build_batch([usable[i] for i in order[start : start + anchors_per_batch]])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def compute_losses(model: Autoencoder, batch: TrainingBatch, lam: float, tau: float):
    """Return (L, L_c, L_r); a branch with zero weight is evaluated without gradient."""
    tokens = torch.as_tensor(batch.tokens)
    z = model.encode(tokens)
    if lam > 0.0:
        lc = supcon_loss(z, batch.membership, batch.is_anchor, tau)
    else:
        with torch.no_grad():
            lc = supcon_loss(z.detach(), batch.membership, batch.is_anchor, tau)
    if lam < 1.0:
        lr = reconstruction_loss(model.decode_logits(z, tokens[:, :-1]), tokens[:, 1:])
    else:
        with torch.no_grad():
            lr = reconstruction_loss(model.decode_logits(z.detach(), tokens[:, :-1]), tokens[:, 1:])
    if lam == 0.0:
        total = lr
    elif lam == 1.0:
        total = lc
    else:
        total = combined_loss(lc, lr, lam)
    return total, lc, lr


def make_optimizer(model: Autoencoder, tcfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2))


def train_step(model, optimizer, batch: TrainingBatch, cfg: ModelConfig, grad_clip=None) -> dict:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    total, lc, lr = compute_losses(model, batch, cfg.lam, cfg.temperature)
    if not torch.isfinite(total):
        raise FloatingPointError(
            f"non-finite loss: L={total.item()} L_c={lc.item()} L_r={lr.item()} rows={len(batch.tokens)}"
        )
    total.backward()
    if grad_clip:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {"loss": total.item(), "lc": lc.item(), "lr": lr.item()}


def train(
    model: Autoencoder,
    groups: Sequence[Sequence[str]],
    cfg: ModelConfig,
    tcfg: TrainConfig,
) -> list[dict]:
    """Run ``tcfg.steps`` optimizer steps over multi-mutant batches; returns the loss history."""
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(model, tcfg)
    batches = iterate_batches(groups, tcfg.anchors_per_batch, rng)
    history = []
    for step in range(tcfg.steps):
        rec = train_step(model, optimizer, next(batches), cfg, tcfg.grad_clip)
        history.append(rec)
        if tcfg.log_every and (step + 1) % tcfg.log_every == 0:
            logger.info("step %d  L=%.4f  Lc=%.4f  Lr=%.4f", step + 1, rec["loss"], rec["lc"], rec["lr"])
    model.eval()
    return history


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@torch.no_grad()
def encode_smiles(model: Autoencoder, smiles: Sequence[str], batch_size: int = 256) -> np.ndarray:
    model.eval()
    out = []
    for start in range(0, len(smiles), batch_size):
        chunk = [tokenize(s) for s in smiles[start : start + batch_size]]
        out.append(model.encode(torch.as_tensor(pad_batch(chunk))).double().numpy())
    if not out:
        return np.zeros((0, model.cfg.latent))
    return np.concatenate(out)


@torch.no_grad()
def generate(
    model: Autoencoder,
    z,
    mode: str = "greedy",
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
    max_len: int | None = None,
) -> list[list[int]]:
    """Autoregressive decoding from START until END or ``max_len`` tokens."""
    model.eval()
    z = torch.as_tensor(np.asarray(z), dtype=model.embed.weight.dtype)
    if z.ndim == 1:
        z = z[None]
    max_len = min(max_len or model.cfg.max_len, model.cfg.max_len)
    memory = model.memory(z)
    seq = torch.full((z.shape[0], 1), Vocabulary.START, dtype=torch.long)
    done = torch.zeros(z.shape[0], dtype=torch.bool)
    while seq.shape[1] < max_len and not done.all():
        logits = model.decode_with_memory(memory, seq)[:, -1]
        if mode == "greedy":
            nxt = logits.argmax(-1)
        elif mode == "sample":
            probs = torch.softmax(logits.double() / temperature, dim=-1)
            nxt = torch.multinomial(probs, 1, generator=generator).squeeze(1)
        else:
            raise ValueError(f"unknown decoding mode {mode!r}")
        nxt = torch.where(done, torch.full_like(nxt, Vocabulary.PAD), nxt)
        seq = torch.cat([seq, nxt[:, None]], dim=1)
        done |= nxt == Vocabulary.END
    out = []
    for row in seq.tolist():
        if Vocabulary.END in row:
            row = row[: row.index(Vocabulary.END) + 1]
        out.append(row)
    return out


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

TINY_CONFIG = ModelConfig(layers=1, hidden=8, heads=2, latent=4, max_len=16, temperature=0.7)


def _tiny_batch(rng: np.random.Generator, n_anchors: int = 2, n_mutants: int = 2) -> TrainingBatch:
    seqs, membership, is_anchor = [], [], []
    for a in range(n_anchors):
        for r in range(1 + n_mutants):
            length = int(rng.integers(3, 9))
            body = rng.integers(4, len(VOCAB), size=length).tolist()
            seqs.append([Vocabulary.START] + body + [Vocabulary.END])
            membership.append(a)
            is_anchor.append(r == 0)
    return TrainingBatch(pad_batch(seqs), np.array(membership), np.array(is_anchor))


def gradient_check(
    lam: float,
    cfg: ModelConfig | None = None,
    n_params: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-4,
) -> float:
    """Largest relative gap between autograd and central finite differences of the loss.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    A central difference at this step in double precision carries absolute
    noise near ``eps * |L| / step``, about 1e-10, so coordinates with gradients
    below ``floor`` are judged on an absolute scale instead.
    """
    cfg = cfg or TINY_CONFIG
    cfg = ModelConfig(**{**asdict(cfg), "lam": lam})
    model = build_model(cfg, torch.float64)
    model.eval()
    batch = _tiny_batch(np.random.default_rng(seed))

    def loss() -> torch.Tensor:
        return compute_losses(model, batch, cfg.lam, cfg.temperature)[0]

    model.zero_grad()
    loss().backward()
    params = [(n, p) for n, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in params])
    rng = np.random.default_rng(seed + 1)
    flat_ids = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with torch.no_grad():
        for fid in flat_ids:
            k = int(np.searchsorted(offsets, fid, side="right") - 1)
            _, p = params[k]
            idx = int(fid - offsets[k])
            flat = p.view(-1)
            analytic = 0.0 if p.grad is None else float(p.grad.view(-1)[idx])
            orig = float(flat[idx])
            flat[idx] = orig + step
            up = float(loss())
            flat[idx] = orig - step
            down = float(loss())
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, model: Autoencoder, extra: dict | None = None) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(model.cfg),
            "vocab_sha256": VOCAB.sha256,
            "state_dict": model.state_dict(),
            "extra": extra or {},
        },
        path,
    )


def load_checkpoint(path: str | Path) -> tuple[Autoencoder, dict]:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {blob.get('format')!r}")
    if blob["vocab_sha256"] != VOCAB.sha256:
        raise ValueError("checkpoint vocabulary does not match the installed vocabulary")
    cfg = ModelConfig(**blob["config"])
    model = Autoencoder(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, blob.get("extra", {})
