"""Loss terms, AdamW training steps, resumable fitting and checkpoint I/O."""

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import audio, checkpoint
from .errors import ConfigError, DivergedError, InvalidInput, ShapeError
from .generator import Generator, GeneratorConfig, no_decay_names
from .spectral import PIPELINE_STFT, SAMPLE_RATE, StftConfig, analyze, magnitude, resynthesize

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class LossWeights:
    mag: float = 0.15
    ri: float = 0.85
    time: float = 0.1

    def __post_init__(self):
        vals = (self.mag, self.ri, self.time)
        if min(vals) < 0 or max(vals) == 0:
            raise ConfigError("loss weights must be nonnegative and not all zero")


@dataclass
class LossBreakdown:
    l_mag: object
    l_ri: object
    l_time: object
    total: object

    def item(self):
        return LossBreakdown(*(_scalar(v) for v in (self.l_mag, self.l_ri, self.l_time, self.total)))

    def to_dict(self):
        return {k: _scalar(v) for k, v in asdict(self).items()}


def _scalar(v):
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def _mean(x):
    return x.mean()


def compute_loss(clean, est, x, x_hat, weights=None):
    """Magnitude, real/imaginary and waveform losses and their weighted total.

    ``clean`` is the compressed clean triplet, ``est`` anything with ``re`` and
    ``im`` planes; the estimated magnitude is recomputed as sqrt(re^2 + im^2).
    Works on numpy arrays or torch tensors.
    """
    w = weights or LossWeights()
    if tuple(clean.mag.shape) != tuple(est.re.shape) or tuple(est.re.shape) != tuple(est.im.shape):
        raise ShapeError(f"spectrogram shapes differ: {tuple(clean.mag.shape)} vs {tuple(est.re.shape)}")
    if tuple(x.shape) != tuple(x_hat.shape):
        raise ShapeError(f"waveform shapes differ: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    est_mag = magnitude(est.re, est.im)
    l_mag = _mean((clean.mag - est_mag) ** 2)
    l_ri = _mean((clean.re - est.re) ** 2) + _mean((clean.im - est.im) ** 2)
    l_time = _mean(abs(x - x_hat))
    total = w.mag * l_mag + w.ri * l_ri + w.time * l_time
    return LossBreakdown(l_mag, l_ri, l_time, total)


@dataclass
class TrainConfig:
    manifest: str = ""
    variant: str = "CPq"
    lr: float = 5e-5
    batch_size: int = 8
    epochs: int = 50
    max_steps: int = 0  # 0 = no limit
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 0.0  # 0 = disabled
    segment_seconds: float = 3.0
    dtype: str = "float32"
    out: str = "model.ckpt"
    log_path: str = ""
    stop_loss_ratio: float = 0.0  # stop once step loss <= ratio * first-step loss; 0 = disabled

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr >= 0:
            raise ConfigError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("epochs and max_steps must be >= 0")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def segment_samples(self):
        return int(round(self.segment_seconds * SAMPLE_RATE))


class Trainer:
    """Owns a generator and its AdamW optimizer for the duration of training."""

    def __init__(self, model, cfg=None, stft_cfg=PIPELINE_STFT, weights=None):
        self.cfg = cfg or TrainConfig()
        self.dtype = _DTYPES[self.cfg.dtype]
        self.model = model.to(self.dtype)
        self.stft_cfg = stft_cfg
        self.weights = weights or LossWeights()
        self.step = 0
        skip = no_decay_names(model)
        decay = [p for n, p in model.named_parameters() if n not in skip]
        no_decay = [p for n, p in model.named_parameters() if n in skip]
        self.optimizer = torch.optim.AdamW(
            [
                {"params": decay, "weight_decay": self.cfg.weight_decay},
                {"params": no_decay, "weight_decay": 0.0},
            ],
            lr=self.cfg.lr,
            betas=self.cfg.betas,
            eps=self.cfg.eps,
            foreach=False,
        )

    def _tensor(self, x):
        return torch.as_tensor(np.asarray(x), dtype=self.dtype)

    def forward(self, clean, degraded):
        """Batch ``(B, L)`` arrays -> (LossBreakdown of tensors, estimate, waveform estimate)."""
        x = self._tensor(clean)
        y = self._tensor(degraded)
        if x.dim() == 1:
            x, y = x[None], y[None]
        c = self.model.config.exponent
        noisy, phase = analyze(y, self.stft_cfg, c)
        target, _ = analyze(x, self.stft_cfg, c)
        est = self.model(noisy, phase)
        x_hat = resynthesize(est, self.stft_cfg, length=x.shape[-1])
        return compute_loss(target, est, x, x_hat, self.weights), est, x_hat

    def snapshot(self):
        return {name: t.clone() for name, t in self.state_tensors().items()}

    def train_step(self, clean, degraded):
        self.model.train()
        try:
            losses, _, _ = self.forward(clean, degraded)
        except InvalidInput as exc:
            # non-finite model output is caught by the resynthesis guard
            raise DivergedError(f"non-finite estimate at step {self.step + 1}: {exc}", snapshot=self.snapshot()) from exc
        if not torch.isfinite(losses.total):
            raise DivergedError(f"non-finite loss at step {self.step + 1}", snapshot=self.snapshot())
        self.optimizer.zero_grad(set_to_none=True)
        losses.total.backward()
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        return losses.item()

    @torch.no_grad()
    def validation_loss(self, pairs):
        """Mean of per-clip loss breakdowns over ``(clean, degraded)`` pairs."""
        self.model.eval()
        parts = [self.forward(c, d)[0].item() for c, d in pairs]
        if not parts:
            raise ConfigError("empty validation set")
        return LossBreakdown(
            *(float(np.mean([getattr(p, k) for p in parts])) for k in ("l_mag", "l_ri", "l_time", "total"))
        )

    @torch.no_grad()
    def enhance(self, degraded):
        self.model.eval()
        y = self._tensor(degraded)
        single = y.dim() == 1
        if single:
            y = y[None]
        noisy, phase = analyze(y, self.stft_cfg, self.model.config.exponent)
        out = resynthesize(self.model(noisy, phase), self.stft_cfg, length=y.shape[-1])
        out = out.to(torch.float64).numpy()
        return out[0] if single else out

    # -- persistence ------------------------------------------------------

    def state_tensors(self, with_optimizer=True):
        tensors = {f"model/{n}": p.detach() for n, p in self.model.named_parameters()}
        if with_optimizer:
            names = {id(p): n for n, p in self.model.named_parameters()}
            for p, state in self.optimizer.state.items():
                for key in ("step", "exp_avg", "exp_avg_sq"):
                    if key in state:
                        tensors[f"optim/{names[id(p)]}/{key}"] = state[key].detach()
        return tensors

    def load_state_tensors(self, tensors):
        params = dict(self.model.named_parameters())
        with torch.no_grad():
            for n, p in params.items():
                key = f"model/{n}"
                if key not in tensors:
                    raise ConfigError(f"checkpoint lacks parameter {n}")
                p.copy_(torch.as_tensor(tensors[key], dtype=p.dtype))
        for n, p in params.items():
            keys = {k: f"optim/{n}/{k}" for k in ("step", "exp_avg", "exp_avg_sq")}
            if all(v in tensors for v in keys.values()):
                self.optimizer.state[p] = {
                    k: torch.as_tensor(tensors[v], dtype=p.dtype).clone().reshape(p.shape if k != "step" else ())
                    for k, v in keys.items()
                }

    def config_snapshot(self):
        return {
            "generator": self.model.config.to_dict(),
            "train": self.cfg.to_dict(),
            "stft": asdict(self.stft_cfg),
        }

    def save(self, path, with_optimizer=False, meta=None):
        return checkpoint.save(
            path,
            self.state_tensors(with_optimizer),
            config=self.config_snapshot(),
            meta={"step": self.step, **(meta or {})},
        )


def load_model(path, dtype=torch.float32):
    """Generator (and the STFT config it was trained with) from a checkpoint."""
    tensors, config, meta = checkpoint.load(path)
    if "generator" not in config:
        raise ConfigError(f"{path}: checkpoint has no generator config")
    model = Generator(GeneratorConfig(**config["generator"])).to(dtype)
    params = dict(model.named_parameters())
    stored = {k[len("model/") :] for k in tensors if k.startswith("model/")}
    if stored != set(params):
        raise ConfigError(f"{path}: parameter names do not match the generator config")
    with torch.no_grad():
        for n, p in params.items():
            p.copy_(torch.as_tensor(tensors[f"model/{n}"], dtype=dtype))
    stft_cfg = StftConfig(**config["stft"]) if "stft" in config else PIPELINE_STFT
    return model, stft_cfg, config, meta


# -- datasets -------------------------------------------------------------


@dataclass
class PairSet:
    ids: list = field(default_factory=list)
    clean: list = field(default_factory=list)
    degraded: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def pairs(self):
        return list(zip(self.clean, self.degraded))


def read_manifest(path):
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    root = path.parent
    sets = {}
    for section in ("train", "valid"):
        ps = PairSet()
        for entry in manifest.get(section, []):
            clean = audio.read_wav(root / entry["clean"])
            degraded = audio.read_wav(root / entry["degraded"])
            if clean.shape != degraded.shape:
                raise ConfigError(f"pair {entry['id']}: clean/degraded lengths differ")
            ps.ids.append(entry["id"])
            ps.clean.append(clean)
            ps.degraded.append(degraded)
        sets[section] = ps
    return sets["train"], sets["valid"], manifest


def epoch_rng(seed, epoch):
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, 1, int(epoch)]))


def epoch_batches(data, cfg, epoch):
    """Deterministic batches for ``epoch``: shuffled order, random crops, zero padding."""
    rng = epoch_rng(cfg.seed, epoch)
    order = rng.permutation(len(data))
    seg = cfg.segment_samples
    crops = []
    for i in order:
        clean, degraded = data.clean[i], data.degraded[i]
        if clean.size > seg:
            off = int(rng.integers(0, clean.size - seg + 1))
            clean, degraded = clean[off : off + seg], degraded[off : off + seg]
        elif clean.size < seg:
            clean = np.pad(clean, (0, seg - clean.size))
            degraded = np.pad(degraded, (0, seg - degraded.size))
        crops.append((clean, degraded))
    return [
        (np.stack([c for c, _ in crops[i : i + cfg.batch_size]]), np.stack([d for _, d in crops[i : i + cfg.batch_size]]))
        for i in range(0, len(crops), cfg.batch_size)
    ]


class MetricsLog:
    """Append-only JSON-lines log of per-step loss records."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def state_path(out):
    return Path(str(out) + ".state")


def fit(cfg, gen_cfg=None, stft_cfg=PIPELINE_STFT, resume=None, train_data=None, valid_data=None):
    """Train per ``cfg`` and return the path of the best-validation checkpoint.

    Without a validation section, the epoch-mean training loss is used to pick
    the checkpoint. A resumable state (params + optimizer + position) is
    written next to the checkpoint as ``<out>.state`` after every epoch.
    """
    if train_data is None:
        if not cfg.manifest:
            raise ConfigError("no manifest given")
        train_data, valid_data, _ = read_manifest(cfg.manifest)
    valid_data = valid_data or PairSet()
    if len(train_data) == 0:
        raise ConfigError("training set is empty")
    gen_cfg = gen_cfg or GeneratorConfig(variant=cfg.variant)
    if gen_cfg.variant != cfg.variant:
        raise ConfigError(f"generator variant {gen_cfg.variant} != train variant {cfg.variant}")
    torch.manual_seed(cfg.seed)
    trainer = Trainer(Generator(gen_cfg), cfg, stft_cfg)
    out = Path(cfg.out)
    metrics = MetricsLog(cfg.log_path or str(out) + ".metrics.jsonl")
    start_epoch, skip_batches, best, first_loss = 0, 0, math.inf, None
    if resume is not None:
        tensors, _, meta = checkpoint.load(resume)
        trainer.load_state_tensors(tensors)
        trainer.step = meta["step"]
        start_epoch, skip_batches = meta["epoch"], meta["batch"]
        best = math.inf if meta["best"] is None else meta["best"]
        first_loss = meta["first_loss"]
    else:
        # with zero epochs this is the delivered checkpoint
        trainer.save(out, meta={"epoch": 0, "selection_loss": None})

    def save_state(epoch, batch):
        checkpoint.save(
            state_path(out),
            trainer.state_tensors(with_optimizer=True),
            config=trainer.config_snapshot(),
            meta={
                "step": trainer.step,
                "epoch": epoch,
                "batch": batch,
                "best": None if math.isinf(best) else best,
                "first_loss": first_loss,
            },
        )

    for epoch in range(start_epoch, cfg.epochs):
        batches = epoch_batches(train_data, cfg, epoch)
        position = skip_batches if epoch == start_epoch else 0
        epoch_losses = []
        stop = False
        while position < len(batches) and not stop:
            clean, degraded = batches[position]
            t0 = time.perf_counter()
            losses = trainer.train_step(clean, degraded)
            position += 1
            if first_loss is None:
                first_loss = losses.total
            epoch_losses.append(losses.total)
            metrics.write(
                {"kind": "train", "step": trainer.step, **losses.to_dict(), "lr": cfg.lr, "wall_time": time.perf_counter() - t0}
            )
            stop = bool(cfg.max_steps and trainer.step >= cfg.max_steps)
            stop = stop or bool(cfg.stop_loss_ratio and losses.total <= cfg.stop_loss_ratio * first_loss)
        if len(valid_data):
            val = trainer.validation_loss(valid_data.pairs())
            metrics.write({"kind": "valid", "step": trainer.step, "epoch": epoch, **val.to_dict()})
            selection = val.total
        else:
            selection = float(np.mean(epoch_losses)) if epoch_losses else math.inf
        if selection < best:
            best = selection
            trainer.save(out, meta={"epoch": epoch, "selection_loss": selection})
        if position >= len(batches):
            save_state(epoch + 1, 0)
        else:
            save_state(epoch, position)
        if stop:
            break
    log.info("finished at step %d, best selection loss %s", trainer.step, best)
    return out
