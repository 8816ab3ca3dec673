"""Loss assembly, optimiser state and the training loop."""
from __future__ import annotations

import dataclasses
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datagen, formats, net
from .errors import ConfigError, FormatError, TrainingError
from .evaluation import combine_reports, confidences_to_transitions, match_and_score
from .infer import predict_video
from .tensor import Tape, linear_combination, sgd_momentum_step, sigmoid_xent_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 5
    batches_per_epoch: int = 50
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    l2_weight: float = 1e-4
    pos_weight: float = 5.0
    all_head_discount: float = 0.1
    seed: int = 0
    mix: tuple = (0.15, 0.35, 0.50)
    seq_len: int = datagen.SEQ_LEN
    segment_len: int = datagen.SEGMENT_LEN
    frame_scale: int = 1
    p_color_transfer: float = 0.10
    augment: bool = True
    val_count: int = 8
    val_threshold: float = 0.5
    val_tol: int = 2
    filters: tuple = (16, 32, 64)
    proj_dim: int = 128
    sim_dim: int = 128
    hidden: int = 1024
    use_similarity: bool = True
    use_histogram: bool = True
    bn_momentum: float = 0.99

    def model_config(self):
        return net.ModelConfig(filters=tuple(self.filters), proj_dim=self.proj_dim, sim_dim=self.sim_dim,
                               hidden=self.hidden, use_similarity=self.use_similarity,
                               use_histogram=self.use_histogram, bn_momentum=self.bn_momentum)

    def sampler_config(self):
        policy = datagen.AugmentPolicy() if self.augment else datagen.AugmentPolicy.disabled()
        return datagen.SamplerConfig(mix=tuple(self.mix), length=self.seq_len,
                                     p_color_transfer=self.p_color_transfer, augment=policy)

    def validate(self):
        problems = []
        for name in ("epochs", "batches_per_epoch", "batch_size", "seq_len", "segment_len", "frame_scale",
                     "proj_dim", "sim_dim", "hidden"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.val_count < 0:
            problems.append(f"val_count must be >= 0, got {self.val_count}")
        if self.lr < 0:
            problems.append(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            problems.append(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 <= self.bn_momentum < 1:
            problems.append(f"bn_momentum must be in [0, 1), got {self.bn_momentum}")
        for name in ("l2_weight", "pos_weight", "all_head_discount"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if len(self.mix) != 3 or any(m < 0 for m in self.mix) or abs(sum(self.mix) - 1) > 1e-6:
            problems.append(f"mix must be three non-negative fractions summing to 1, got {self.mix}")
        if len(self.filters) != 3 or any(f < 1 for f in self.filters):
            problems.append(f"filters must be three positive integers, got {self.filters}")
        if not 0 < self.val_threshold < 1:
            problems.append(f"val_threshold must be in (0, 1), got {self.val_threshold}")
        if not 0 <= self.p_color_transfer <= 1:
            problems.append(f"p_color_transfer must be in [0, 1], got {self.p_color_transfer}")
        if self.seq_len > self.segment_len:
            problems.append(f"seq_len ({self.seq_len}) cannot exceed segment_len ({self.segment_len})")
        if problems:
            raise ConfigError(problems)
        return self

    def as_text(self):
        return "".join(f"{k}={_format_value(v)}\n" for k, v in dataclasses.asdict(self).items())


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def _parse_value(kind, raw):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is tuple:
        items = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(int(x) if x.lstrip("-").isdigit() else float(x) for x in items)
    raise ValueError(f"unsupported field type {kind}")


def parse_config(text, overrides=None):
    """Flat ``key=value`` text; ``overrides`` (dict of raw strings) win."""
    types = {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}
    raw = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected key=value, got {line!r}")
            continue
        k, v = line.split("=", 1)
        raw[k.strip()] = v.strip()
    raw.update(overrides or {})
    values = {}
    for k, v in raw.items():
        if k not in types:
            problems.append(f"unknown key {k!r}")
            continue
        try:
            values[k] = _parse_value(types[k], v)
        except ValueError as exc:
            problems.append(f"{k}: {exc}")
    if problems:
        raise ConfigError(problems)
    return TrainConfig(**values).validate()


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def l2_penalty(params, weight):
    """``weight * 0.5 * sum(theta^2)`` over kernels."""
    decay = net.decay_names(params)
    total = sum(float((params[n].data.astype(np.float64) ** 2).sum()) for n in decay)
    return weight * 0.5 * total


def total_loss(single_logits, all_logits, label, params, cfg):
    """Weighted two-head cross-entropy plus the L2 term.

    ``label`` is ``(single_target, all_target)``. The L2 term enters the
    returned value as a constant; its gradient ``l2_weight * theta`` is
    applied by :func:`~shotnet.tensor.sgd_momentum_step`.
    """
    single_t, all_t = label
    parts = [sigmoid_xent_loss(single_logits, single_t, cfg.pos_weight),
             sigmoid_xent_loss(all_logits, all_t, 1.0)]
    reg = l2_penalty(params, cfg.l2_weight) if params is not None else 0.0
    return linear_combination(parts, [1.0, cfg.all_head_discount], constant=reg)


# --------------------------------------------------------------------------
# state and checkpoints
# --------------------------------------------------------------------------

@dataclass
class TrainState:
    params: OrderedDict
    velocity: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    best_f1: float = -1.0
    best_params: OrderedDict | None = None


def snapshot(params):
    return OrderedDict((n, t.data.copy()) for n, t in params.items())


def _f64_to_words(x):
    # 16-bit words are exactly representable as 32-bit reals
    return np.array([np.float64(x)]).view(np.uint16).astype(np.float32)


def _words_to_f64(a):
    return float(np.asarray(a).astype(np.uint16).view(np.float64)[0])


def save_checkpoint(path, state):
    """Weights to ``path``; velocities, counters and the best snapshot to ``path + '.opt'``."""
    formats.save_weights(path, state.params)
    side = OrderedDict()
    for name, v in state.velocity.items():
        side[f"v:{name}"] = v
    if state.best_params is not None:
        for name, v in state.best_params.items():
            side[f"best:{name}"] = v
    side["meta:epoch"] = np.array([state.epoch], dtype=np.float32)
    side["meta:step"] = np.array([state.step], dtype=np.float32)
    side["meta:best_f1"] = _f64_to_words(state.best_f1)
    formats.save_weights(str(path) + ".opt", side)


def load_checkpoint(path):
    params = formats.load_weights(path)
    side = formats.load_weights(str(path) + ".opt")
    velocity, best, meta = {}, None, {}
    for name, t in side.items():
        if name.startswith("v:"):
            velocity[name[2:]] = t.data.copy()
        elif name.startswith("best:"):
            best = OrderedDict() if best is None else best
            best[name[5:]] = t.data.copy()
        elif name.startswith("meta:"):
            meta[name[5:]] = t.data
        else:
            raise FormatError(f"unexpected sidecar tensor {name!r}")
    for key in ("epoch", "step", "best_f1"):
        if key not in meta:
            raise FormatError(f"checkpoint sidecar lacks meta:{key}")
    return TrainState(params, velocity, int(meta["epoch"][0]), int(meta["step"][0]),
                      _words_to_f64(meta["best_f1"]), best)


# --------------------------------------------------------------------------
# corpus
# --------------------------------------------------------------------------

@dataclass
class Corpus:
    shots: list
    real: list = field(default_factory=list)


def load_corpus(directory, segment_len=datagen.SEGMENT_LEN):
    """``*.nfrm`` shots in ``directory``; optional ``real/`` videos with
    ``real/annotations.txt``."""
    directory = Path(directory)
    shots = []
    for p in sorted(directory.glob("*.nfrm")):
        shots += datagen.extract_segments(formats.load_frames(p), p.stem, segment_len)
    real = []
    ann_path = directory / "real" / "annotations.txt"
    if ann_path.exists():
        ann = formats.parse_annotations(ann_path.read_text(), str(ann_path))
        for vid, spans in sorted(ann.items()):
            frames = formats.load_frames(directory / "real" / f"{vid}.nfrm")
            real.append(datagen.AnnotatedVideo(frames, sorted(spans), vid))
    return Corpus(shots, real)


def split_corpus(corpus, val_fraction=0.2):
    """Hold out whole source shots for validation (at least one, if possible)."""
    ids = sorted({s.source_id for s in corpus.shots})
    n_val = int(round(len(ids) * val_fraction))
    if len(ids) >= 4:
        n_val = max(1, n_val)
    else:
        n_val = 0
    val_ids = set(ids[len(ids) - n_val:]) if n_val else set()
    train = [s for s in corpus.shots if s.source_id not in val_ids]
    val = [s for s in corpus.shots if s.source_id in val_ids] or corpus.shots
    return Corpus(train, corpus.real), Corpus(val, corpus.real)


def batch_rng(seed, epoch, batch):
    return np.random.default_rng([seed, epoch, batch])


def make_batch(corpus, cfg, epoch, batch):
    rng = batch_rng(cfg.seed, epoch, batch)
    stream = datagen.batch_sampler(corpus.real, corpus.shots, rng, cfg.sampler_config())
    examples = [next(stream) for _ in range(cfg.batch_size)]
    frames, single, all_ = datagen.stack_batch(examples)
    return datagen.downsample(frames, cfg.frame_scale), single, all_


def make_validation_set(corpus, cfg):
    if cfg.val_count == 0:
        return []
    rng = np.random.default_rng([cfg.seed, 0x7FFF_FFFF])
    sampler_cfg = dataclasses.replace(cfg.sampler_config(), augment=datagen.AugmentPolicy.disabled())
    stream = datagen.batch_sampler(corpus.real, corpus.shots, rng, sampler_cfg)
    out = []
    for _ in range(cfg.val_count):
        ex = next(stream)
        out.append((datagen.downsample(ex.frames, cfg.frame_scale), [ex.span]))
    return out


# --------------------------------------------------------------------------
# loop
# --------------------------------------------------------------------------

def train_step(state, batch, cfg, model_cfg=None):
    """One forward/backward/update on ``batch = (frames, single, all)``; returns the loss."""
    model_cfg = model_cfg or net.config_from_params(state.params)
    frames, single, all_ = batch
    params = state.params
    for t in params.values():
        t.grad = None
    with Tape() as tape:
        s_logits, a_logits = net.forward(frames, params, model_cfg, training=True)
        loss = total_loss(s_logits, a_logits, (single, all_), params, cfg)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss {value} at epoch {state.epoch}, step {state.step} "
                            f"(batch seed = [{cfg.seed}, {state.epoch}, {state.step % cfg.batches_per_epoch}])")
    tape.backward(loss)
    trainable = OrderedDict((n, params[n]) for n in net.trainable_names(params))
    grads = {n: t.grad for n, t in trainable.items()}
    sgd_momentum_step(trainable, grads, state.velocity, cfg.lr, cfg.momentum, cfg.l2_weight,
                      decay=net.decay_names(params))
    state.step += 1
    return value


def evaluate_f1(params, sequences, cfg, model_cfg=None):
    """Micro-averaged tolerance F1 of the inference path over ``(frames, gt)`` pairs."""
    if not sequences:
        return 0.0
    model_cfg = model_cfg or net.config_from_params(params)
    reports = []
    for frames, gt in sequences:
        pred = predict_video(frames, params, model_cfg, window=cfg.seq_len)
        trans = confidences_to_transitions(pred.single, cfg.val_threshold)
        reports.append(match_and_score(trans, gt, cfg.val_tol))
    return combine_reports(reports).f1


@dataclass
class TrainResult:
    best_params: OrderedDict
    log: list
    state: TrainState


def train_loop(cfg, corpus, val_set=None, state=None, fixed_examples=None, on_epoch=None):
    """Train for ``cfg.epochs`` epochs, keeping the best-validation-F1 snapshot.

    Batches are drawn from ``fixed_examples`` (a list of
    :class:`~shotnet.datagen.RenderedExample`) when given, otherwise rendered
    from ``corpus``; batch ``(epoch, b)`` uses seed ``[cfg.seed, epoch, b]``.
    ``val_set`` defaults to sequences rendered from ``corpus``. The metrics log
    holds one ``(epoch, step, mean_loss, val_f1)`` row per epoch.
    """
    cfg.validate()
    model_cfg = cfg.model_config()
    if state is None:
        state = TrainState(net.init_params(model_cfg, cfg.seed))
    else:
        model_cfg = dataclasses.replace(net.config_from_params(state.params), bn_momentum=cfg.bn_momentum)
    if val_set is None:
        val_set = make_validation_set(corpus, cfg) if corpus is not None else []
    rows = []
    while state.epoch < cfg.epochs:
        losses = []
        for b in range(cfg.batches_per_epoch):
            if fixed_examples is not None:
                rng = batch_rng(cfg.seed, state.epoch, b)
                idx = rng.choice(len(fixed_examples), size=min(cfg.batch_size, len(fixed_examples)),
                                 replace=False)
                frames, single, all_ = datagen.stack_batch([fixed_examples[i] for i in idx])
                batch = (datagen.downsample(frames, cfg.frame_scale), single, all_)
            else:
                batch = make_batch(corpus, cfg, state.epoch, b)
            losses.append(train_step(state, batch, cfg, model_cfg))
        f1 = evaluate_f1(state.params, val_set, cfg, model_cfg)
        row = (state.epoch, state.step, float(np.mean(losses)), f1)
        rows.append(row)
        log.info("epoch %d step %d loss %.5f val_f1 %.4f", *row)
        if f1 > state.best_f1 or state.best_params is None:
            state.best_f1 = f1
            state.best_params = snapshot(state.params)
        state.epoch += 1
        if on_epoch is not None:
            on_epoch(state, row)
    best = OrderedDict()
    for name, t in state.params.items():
        data = state.best_params[name] if state.best_params is not None else t.data
        best[name] = type(t)(data.copy(), requires_grad=t.requires_grad, name=name)
    return TrainResult(best, rows, state)


def format_log(rows):
    return "epoch,step,loss,val_f1\n" + "".join(f"{e},{s},{l:.6f},{f:.6f}\n" for e, s, l, f in rows)
