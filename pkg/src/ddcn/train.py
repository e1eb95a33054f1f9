"""SGD-with-momentum training: phase 1 pretrains the coarse stack, phase 2
refines with the fine stack (coarse frozen by default), plus evaluation.

Loss is computed per depth map and averaged over the images of a batch.
The logged train_loss is the sample-weighted mean of the batch losses as
they were measured (before each update), so it is exact for a full-batch
run and independent of how a partial tail batch lands.  val_loss is a
fresh pass over the validation split; with no validation split it simply
repeats the train number.  One line per epoch:

    epoch <k> phase <p> train_loss <v> val_loss <v>
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import loss as silog
from .arch import ArchSpec, fingerprint
from .checkpoint import load_checkpoint, require_fingerprint, save_checkpoint
from .data import DatasetIndex, Sample, batch_iter, bilinear_resize
from .errors import ConfigError, NumericError, ShapeError
from .model import TwoStackNet
from .tensor import F32


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 16
    epochs_phase1: int = 20
    epochs_phase2: int = 20
    seed: int = 0
    width_scale: Fraction = Fraction(1)
    freeze_coarse_in_phase2: bool = True
    stop_loss: float | None = None  # early stop once train loss drops below

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0 <= self.momentum < 1):
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocities: dict[str, np.ndarray], config: TrainConfig):
    """v <- momentum*v - lr*g ; p <- p + v, per tensor.  Parameters without
    a gradient (frozen) pass through untouched.  Returns new dicts."""
    new_p, new_v = {}, {}
    for key, p in params.items():
        g = grads.get(key)
        if g is None:
            new_p[key] = p
            new_v[key] = velocities.get(key, np.zeros_like(p))
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient {key}: shape {g.shape} != parameter {p.shape}")
        v = velocities.get(key)
        if v is None:
            v = np.zeros_like(p)
        v = config.momentum * v - config.learning_rate * g
        new_v[key] = v.astype(p.dtype)
        new_p[key] = (p + v).astype(p.dtype)
    return new_p, new_v


@dataclass
class PreparedData:
    """Per-id tensors resized to the model's geometry, plus the id index."""
    index: DatasetIndex
    coarse_rgb: dict[str, np.ndarray]
    fine_rgb: dict[str, np.ndarray]
    depth: dict[str, np.ndarray]
    mask: dict[str, np.ndarray]


def prepare_data(samples: dict[str, Sample], index: DatasetIndex,
                 net: TwoStackNet, dtype=F32) -> PreparedData:
    coarse_hw = net.coarse_input_size
    fine_hw = net.fine_input_size
    out_hw = net.output_size
    coarse_rgb, fine_rgb, depth, mask = {}, {}, {}, {}
    for sid in index.entries:
        s = samples[sid]
        coarse_rgb[sid] = bilinear_resize(s.rgb, coarse_hw)[0].astype(dtype)
        fine_rgb[sid] = bilinear_resize(s.rgb, fine_hw)[0].astype(dtype)
        d, m = bilinear_resize(s.depth, out_hw, s.mask)
        depth[sid] = d.astype(dtype)
        mask[sid] = m
    return PreparedData(index, coarse_rgb, fine_rgb, depth, mask)


def _stack(table: dict[str, np.ndarray], ids: list[str]) -> np.ndarray:
    return np.stack([table[sid] for sid in ids])


def _batch_loss_and_grad(pred: np.ndarray, depth: np.ndarray, mask: np.ndarray):
    """Mean of per-image losses and the matching upstream gradient."""
    n = pred.shape[0]
    total = 0.0
    up = np.empty_like(pred)
    for i in range(n):
        pair = silog.LogDepthPair.from_depth(pred[i:i + 1], depth[i:i + 1], mask[i:i + 1])
        total += silog.variance_loss(pair)
        up[i:i + 1] = silog.loss_gradient(pair) / n
    return total / n, up


def _split_loss(forward, data: PreparedData, ids: list[str], batch_size: int) -> float:
    """Per-image mean loss of the current parameters over a whole split."""
    total, count = 0.0, 0
    for i in range(0, len(ids), batch_size):
        chunk = ids[i:i + batch_size]
        pred = forward(chunk)
        for j in range(len(chunk)):
            sid = chunk[j]
            pair = silog.LogDepthPair.from_depth(
                pred[j:j + 1], data.depth[sid][None], data.mask[sid][None])
            total += silog.variance_loss(pair)
            count += 1
    return total / count


class Trainer:
    """Drives both phases over one TwoStackNet."""

    def __init__(self, net: TwoStackNet, data: PreparedData, config: TrainConfig,
                 out_dir, log=print):
        self.net = net
        self.data = data
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log = log
        self.velocities: dict[str, np.ndarray] = {}
        self._coarse_cache: dict[str, np.ndarray] | None = None

    # ---- checkpoint plumbing

    def _meta(self, phase: int, epoch: int) -> dict[str, str]:
        c = self.config
        return {
            "arch": self.net.arch.name,
            "arch_fingerprint": fingerprint(self.net.arch),
            "width_scale": str(self.net.arch.width_scale),
            "fine_pool": "on" if self.net.arch.fine_pool else "off",
            "vgg_head": self.net.arch.vgg_head,
            "phase": str(phase),
            "epoch": str(epoch),
            "seed": str(c.seed),
            "learning_rate": repr(c.learning_rate),
            "momentum": repr(c.momentum),
            "batch_size": str(c.batch_size),
            "freeze_coarse_in_phase2": str(c.freeze_coarse_in_phase2),
            "init": "uniform-fanin hidden, zero prediction heads",
            "precision": "f32" if self.net.dtype == np.float32 else "f64",
        }

    def save(self, phase: int, epoch: int, name: str) -> Path:
        path = self.out_dir / name
        save_checkpoint(path, self.net.parameters(), self.velocities,
                        self._meta(phase, epoch))
        return path

    def load(self, path) -> dict[str, str]:
        params, velocities, meta = load_checkpoint(path)
        require_fingerprint(meta, fingerprint(self.net.arch), path)
        self.net.set_parameters(params)
        self.velocities = velocities
        return meta

    # ---- forwards

    def _forward_coarse(self, ids: list[str]) -> np.ndarray:
        return self.net.forward_coarse(_stack(self.data.coarse_rgb, ids))

    def _forward_full(self, ids: list[str]) -> np.ndarray:
        if self._coarse_cache is not None:
            coarse_pred = np.concatenate([self._coarse_cache[sid] for sid in ids])
            return self.net.forward_full(None, _stack(self.data.fine_rgb, ids),
                                         coarse_pred=coarse_pred)
        return self.net.forward_full(_stack(self.data.coarse_rgb, ids),
                                     _stack(self.data.fine_rgb, ids))

    def _fill_coarse_cache(self) -> None:
        """Coarse predictions are constant while the stack is frozen, so
        compute them once per sample (exact, not an approximation)."""
        self._coarse_cache = {}
        bs = max(1, self.config.batch_size)
        ids = self.data.index.entries
        for i in range(0, len(ids), bs):
            chunk = ids[i:i + bs]
            pred = self._forward_coarse(chunk)
            for j, sid in enumerate(chunk):
                self._coarse_cache[sid] = pred[j:j + 1]

    # ---- epochs

    def _run_phase(self, phase: int, epochs: int, forward, backward,
                   trainable: list[str], start_epoch: int = 0) -> Path:
        data, c = self.data, self.config
        train_ids = data.index.ids("train")
        val_ids = data.index.ids("val") or train_ids
        if not train_ids:
            raise ConfigError("training split is empty")
        ckpt = None
        for epoch in range(start_epoch, start_epoch + epochs):
            loss_sum, n_seen = 0.0, 0
            for b, batch in enumerate(batch_iter(data.index, "train", c.batch_size, epoch)):
                pred = forward(batch)
                batch_loss, up = _batch_loss_and_grad(
                    pred, _stack(data.depth, batch), _stack(data.mask, batch))
                if not np.isfinite(batch_loss):
                    raise NumericError(f"training diverged: non-finite loss at "
                                       f"epoch {epoch} phase {phase} batch {b}")
                loss_sum += batch_loss * len(batch)
                n_seen += len(batch)
                backward(up)
                grads = {k: v for k, v in self.net.gradients().items() if k in trainable}
                params, self.velocities = sgd_step(self.net.parameters(), grads,
                                                   self.velocities, c)
                self.net.set_parameters(params)
            train_loss = loss_sum / n_seen
            val_loss = (train_loss if val_ids is train_ids
                        else _split_loss(forward, data, val_ids, c.batch_size))
            self.log(f"epoch {epoch} phase {phase} train_loss {train_loss:.6f} "
                     f"val_loss {val_loss:.6f}")
            ckpt = self.save(phase, epoch, f"phase{phase}_latest.ddcn")
            if c.stop_loss is not None and train_loss < c.stop_loss:
                break
        if ckpt is None:
            ckpt = self.save(phase, start_epoch - 1 if start_epoch else 0,
                             f"phase{phase}_latest.ddcn")
        return ckpt

    def train_phase1(self, epochs: int | None = None, start_epoch: int = 0) -> Path:
        """Pretrain the coarse stack against the depth maps."""
        trainable = self.net.trainable_keys(1)
        return self._run_phase(
            1, epochs if epochs is not None else self.config.epochs_phase1,
            self._forward_coarse, self.net.coarse.backward, trainable, start_epoch)

    def train_phase2(self, coarse_ckpt=None, epochs: int | None = None,
                     start_epoch: int = 0) -> Path:
        """Train the refinement stack on the full pipeline output.  The
        coarse parameters stay fixed unless freeze_coarse_in_phase2 is off."""
        if coarse_ckpt is not None:
            self.load(coarse_ckpt)
        freeze = self.config.freeze_coarse_in_phase2
        if freeze:
            self._fill_coarse_cache()
        else:
            self._coarse_cache = None
        trainable = self.net.trainable_keys(2, freeze)
        backward = lambda up: self.net.backward_full(up, freeze_coarse=freeze)
        try:
            return self._run_phase(
                2, epochs if epochs is not None else self.config.epochs_phase2,
                self._forward_full, backward, trainable, start_epoch)
        finally:
            self._coarse_cache = None

    # ---- metrics

    def evaluate(self, split_name: str, use_full: bool = True) -> dict[str, float]:
        ids = self.data.index.ids(split_name)
        if not ids:
            raise ConfigError(f"split {split_name!r} is empty")
        forward = self._forward_full if use_full else self._forward_coarse
        preds = {}
        bs = self.config.batch_size
        for i in range(0, len(ids), bs):
            chunk = ids[i:i + bs]
            pred = forward(chunk)
            for j, sid in enumerate(chunk):
                preds[sid] = pred[j:j + 1]
        return metrics_over(preds, self.data, ids)


def metrics_over(pred_log: dict[str, np.ndarray], data: PreparedData,
                 ids: list[str]) -> dict[str, float]:
    """Per-image metrics averaged over images: the pairwise training loss,
    the shift-compensated error, and the raw RMSE of log depth."""
    sums = {"scale_invariant_L": 0.0, "D_with_alpha": 0.0, "rmse_log": 0.0}
    for sid in ids:
        pair = silog.LogDepthPair.from_depth(pred_log[sid], data.depth[sid][None],
                                             data.mask[sid][None])
        sums["scale_invariant_L"] += silog.variance_loss(pair)
        sums["D_with_alpha"] += silog.scale_invariant_mse(pair)
        d = pair.d_field[pair.mask]
        sums["rmse_log"] += float(np.sqrt(np.mean(np.square(d, dtype=np.float64))))
    out = {k: v / len(ids) for k, v in sums.items()}
    out["n_images"] = len(ids)
    return out
