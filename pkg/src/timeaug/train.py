"""Self-supervised training over batches of positive pairs."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .augment import AugConfig, make_positive_pair
from .losses import LossConfig
from .nn import checkpoint
from .nn.layers import MLP, Encoder, EncoderConfig
from .nn.optim import NonFiniteGradient, OptState, adamw_step, ema_blend
from .nn.tensor import Tensor, backward
from .pairsampler import PairBuffer, PairPolicy, StreamBuffer, iterate_epoch

TRACE_COLUMNS = ("step", "loss", "objective", "seed")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training diverged at step {step}: {reason}")
        self.step = step


SOURCES = ("stream", "buffer", "toybox")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation and pair-source settings.

    ``source`` selects where pairs come from: ``stream`` (a simulated
    interaction stream replayed from a ring buffer), ``buffer`` (cycles over
    an indexed dataset) or ``toybox`` (successive frames of indexed clips).
    """
    batch_size: int = 256
    steps: int | None = 1000
    epochs: int | None = None
    pair_mode: str = "tt_plus"
    seed: int = 0
    eval_every: int = 0
    lr: float = 5e-4
    weight_decay: float = 1e-6
    source: str = "stream"
    buffer_capacity: int = 100_000
    pushes_per_step: int = 1
    prefill: int = 0
    one_aug: str = "per_minibatch"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 for in-batch negatives, got {self.batch_size}")
        if self.steps is not None and self.epochs is not None:
            raise ValueError("set at most one of steps and epochs")
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.one_aug not in ("one", "per_minibatch"):
            raise ValueError(f"one_aug must be one or per_minibatch, got {self.one_aug!r}")
        if self.buffer_capacity < 1 or self.pushes_per_step < 1 or self.prefill < 0:
            raise ValueError("buffer_capacity and pushes_per_step must be >= 1, prefill >= 0")
        if self.steps is not None and self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.epochs is not None and self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.pair_mode not in ("baseline", "tt", "tt_plus"):
            raise ValueError(f"pair_mode must be baseline, tt or tt_plus, got {self.pair_mode!r}")


# -- pair sources ----------------------------------------------------------------

def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def _to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 255.0


class StreamSource:
    """Pairs generated online by an interaction stream, replayed from a ring buffer.

    Every step the stream produces ``pushes_per_step`` new (frame, successor)
    pairs, then a batch is drawn uniformly from the buffer and the pair mode
    decides which views are fed to the network. Frames are stored as uint8.
    """

    def __init__(self, stream, aug: AugConfig, pair_mode: str, seed: int,
                 capacity: int = 100_000, pushes_per_step: int = 1, prefill: int = 0):
        self.stream = stream
        self.aug = aug
        self.pair_mode = pair_mode
        self.buffer = StreamBuffer(capacity)
        self.pushes_per_step = pushes_per_step
        self.rng = np.random.default_rng([seed, 0xB0F])
        for _ in range(prefill):
            self._push()

    def _push(self):
        a, b = self.stream.next_pair()
        self.buffer.push((_to_uint8(a.image), _to_uint8(b.image)))

    def batches(self, batch_size: int, steps: int | None, epochs: int | None):
        if steps is None:
            raise ValueError("a stream source needs a step count")
        for _ in range(steps):
            for _ in range(self.pushes_per_step):
                self._push()
            yield self._assemble(self.buffer.sample(batch_size, self.rng))

    def _assemble(self, pairs):
        va, vb = [], []
        for a, b in pairs:
            x, y = make_positive_pair(_to_float(a), _to_float(b), self.pair_mode, self.aug, self.rng)
            va.append(x)
            vb.append(y)
        return np.stack(va), np.stack(vb)


class BufferSource:
    """Epochs over a prebuilt :class:`PairBuffer` of frame references.

    With ``policy.mode == "one"`` the augmented partner of each source frame
    is drawn once and reused for the whole run.
    """

    def __init__(self, index, buffer: PairBuffer, aug: AugConfig, pair_mode: str, seed: int,
                 policy: PairPolicy | None = None, dataset_size: int | None = None,
                 image_size: int | None = None, channels: int | None = None):
        self.index = index
        self.buffer = buffer
        self.aug = aug
        self.pair_mode = pair_mode
        self.seed = seed
        self.policy = policy or PairPolicy("per_minibatch")
        self.dataset_size = dataset_size or len(index)
        self.rng = np.random.default_rng([seed, 0xB0F])
        self.images = index.load_all(image_size, channels).astype(np.float32)

    def batches_per_epoch(self, batch_size: int) -> int:
        return self.dataset_size // batch_size

    def batches(self, batch_size: int, steps: int | None, epochs: int | None):
        produced = 0
        epoch = 0
        while True:
            if epochs is not None and epoch >= epochs:
                return
            for idx in iterate_epoch(self.buffer, batch_size, self.seed * 100_003 + epoch, self.dataset_size):
                if steps is not None and produced >= steps:
                    return
                yield self._assemble(idx)
                produced += 1
            epoch += 1
            if epochs is None and steps is None:
                return

    def _assemble(self, idx):
        va, vb = [], []
        for k in idx:
            a, b = self.buffer.pairs[int(k)]
            img_a = self.images[a]
            if self.pair_mode == "tt":
                x, y = img_a, self.images[b]
            elif self.pair_mode == "tt_plus":
                x = img_a
                y = self.policy.partner(("succ", int(k)), self.images[b], self.aug, self.rng)
            else:
                x = img_a
                y = self.policy.partner(("self", int(a)), img_a, self.aug, self.rng)
            if self.aug.symmetric and self.pair_mode != "tt":
                x = self.policy.partner(("anchor", int(a)), img_a, self.aug, self.rng) \
                    if self.policy.mode == "one" else make_positive_pair(img_a, None, "baseline", self.aug, self.rng)[1]
            va.append(x)
            vb.append(y)
        return np.stack(va), np.stack(vb)


# -- models ----------------------------------------------------------------------

@dataclass
class Learner:
    """Online encoder plus the BYOL predictor and EMA target when needed."""
    encoder: Encoder
    predictor: MLP | None = None
    target: Encoder | None = None

    def named_parameters(self):
        out = dict(self.encoder.named_parameters("encoder."))
        if self.predictor is not None:
            out.update(self.predictor.named_parameters("predictor."))
        return out

    def state(self) -> dict:
        out = {"encoder." + k: v for k, v in self.encoder.state_dict().items()}
        if self.predictor is not None:
            out.update({"predictor." + k: v for k, v in self.predictor.state_dict().items()})
        if self.target is not None:
            out.update({"target." + k: v for k, v in self.target.state_dict().items()})
        return out

    def load_state(self, state: dict) -> None:
        for prefix, mod in (("encoder.", self.encoder), ("predictor.", self.predictor), ("target.", self.target)):
            if mod is not None:
                mod.load_state_dict({k[len(prefix):]: v for k, v in state.items() if k.startswith(prefix)})


def build_learner(enc_cfg: EncoderConfig, objective: str, seed: int) -> Learner:
    rng = np.random.default_rng([seed, 0x1417])
    encoder = Encoder(enc_cfg, rng)
    if objective != "byol":
        return Learner(encoder)
    d = encoder.output_dim
    predictor = MLP(d, 2 * enc_cfg.embed_dim, d, rng)
    target = Encoder(enc_cfg, rng)
    target.load_state_dict(encoder.state_dict())
    return Learner(encoder, predictor, target)


def ema_update(target, online, tau: float) -> None:
    """Blend every target parameter towards its online counterpart."""
    online_params = dict(online.named_parameters())
    for name, p in target.named_parameters():
        p.data = ema_blend(p.data, online_params[name].data, tau).astype(p.data.dtype)


def _embed(encoder: Encoder, x, rng):
    return encoder.project(encoder(x, train=True, rng=rng), train=True, rng=rng)


def compute_loss(learner: Learner, xa: np.ndarray, xb: np.ndarray, loss_cfg: LossConfig, rng) -> Tensor:
    n = xa.shape[0]
    dtype = next(iter(learner.encoder.parameters())).data.dtype
    x = Tensor(np.concatenate([xa, xb]).astype(dtype, copy=False))
    z = _embed(learner.encoder, x, rng)
    za, zb = z[:n], z[n:]
    if loss_cfg.objective == "simclr":
        return losses.nt_xent(za, zb, loss_cfg.temperature)
    if loss_cfg.objective == "vicreg":
        return losses.vicreg_loss(za, zb, loss_cfg.vicreg_weights, loss_cfg.gamma, loss_cfg.eps)
    p = learner.predictor(z, train=True, rng=rng)
    t = _embed(learner.target, x, rng).data
    return losses.byol_loss(p[:n], t[n:], p[n:], t[:n])


# -- loop ------------------------------------------------------------------------

@dataclass
class TrainResult:
    learner: Learner
    trace: list
    opt_state: OptState
    steps: int
    diverged: TrainingDiverged | None = None


def checkpoint_bytes(learner: Learner, opt: OptState, meta: dict) -> bytes:
    tensors = learner.state()
    for k, v in opt.m.items():
        tensors["opt.m." + k] = v
    for k, v in opt.v.items():
        tensors["opt.v." + k] = v
    opt_meta = {"step": opt.step, "lr": opt.lr, "weight_decay": opt.weight_decay,
                "betas": list(opt.betas), "eps": opt.eps}
    return checkpoint.dumps(tensors, opt_meta, meta)


def load_learner(path, enc_cfg: EncoderConfig, objective: str) -> tuple[Learner, dict]:
    tensors, _opt, meta = checkpoint.load(path)
    learner = build_learner(enc_cfg, objective, seed=0)
    learner.load_state({k: v for k, v in tensors.items() if not k.startswith("opt.")})
    return learner, meta


def write_trace(trace: list, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in trace:
            w.writerow({"step": row["step"], "loss": repr(row["loss"]), "objective": row["objective"],
                        "seed": row["seed"]})
    tmp.replace(path)


def train(learner: Learner, source, loss_cfg: LossConfig, train_cfg: TrainConfig,
          checkpoint_path=None, on_eval=None, raise_on_divergence: bool = True) -> TrainResult:
    """Forward, loss, backward and AdamW per batch (plus the EMA update for BYOL).

    On a non-finite loss or gradient the parameters from the last good step
    are kept, written to ``checkpoint_path`` if given, and
    :class:`TrainingDiverged` is raised (or returned in the result).
    """
    opt = OptState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    params = learner.named_parameters()
    rng = np.random.default_rng([train_cfg.seed, 0xD12])
    trace: list[dict] = []
    step = 0
    diverged = None
    meta = {"objective": loss_cfg.objective, "seed": train_cfg.seed, "pair_mode": train_cfg.pair_mode}
    start = time.perf_counter()
    for xa, xb in source.batches(train_cfg.batch_size, train_cfg.steps, train_cfg.epochs):
        for p in params.values():
            p.grad = None
        loss = compute_loss(learner, xa, xb, loss_cfg, rng)
        value = float(loss.data)
        if not math.isfinite(value):
            diverged = TrainingDiverged(step + 1, f"loss is {value}")
            break
        backward(loss)
        snapshot = {k: p.data.copy() for k, p in params.items()}
        try:
            adamw_step(params, {k: p.grad for k, p in params.items()}, opt)
        except NonFiniteGradient as exc:
            diverged = TrainingDiverged(step + 1, str(exc))
            break
        if not all(np.all(np.isfinite(p.data)) for p in params.values()):
            for k, p in params.items():
                p.data = snapshot[k]
            diverged = TrainingDiverged(step + 1, "parameters became non-finite")
            break
        if learner.target is not None:
            ema_update(learner.target, learner.encoder, loss_cfg.tau)
        step += 1
        trace.append({"step": step, "loss": value, "objective": loss_cfg.objective, "seed": train_cfg.seed,
                      "wall_clock": time.perf_counter() - start})
        if on_eval is not None and train_cfg.eval_every and step % train_cfg.eval_every == 0:
            on_eval(step, learner)
    for p in params.values():
        p.grad = None
    if checkpoint_path is not None:
        checkpoint.save(checkpoint_path, checkpoint_bytes(learner, opt, dict(meta, step=step)))
    if diverged is not None and raise_on_divergence:
        raise diverged
    return TrainResult(learner, trace, opt, step, diverged)
