"""End-to-end training: warm-up, the corrected main loop, re-balancing.

Batch order inside a step is fixed: augment both views; forward passes
(online and momentum); prototype scores; pseudo-label correction; masked
loss; SGD update; EMA update of the twin; prototype updates for non-OOD
samples; enqueue of all momentum embeddings.  A trace mode records that
sequence for golden-trace comparison.

Everything is driven by one seeded stream, so a run is bitwise
reproducible in single-threaded mode and a checkpoint resume continues
the uninterrupted trajectory exactly.
"""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import numkit as nk
from .datagen import AugmentPolicy, augment, sqrt_sampler
from .errors import (
    ConfigError,
    DataFormatError,
    NumericError,
    StateError,
    StructuralError,
)
from .evalkit import DEFAULT_CALIBRATION_BINS, calibration_error, knn_probe
from .memory import EmbeddingQueue, PrototypeBank
from .model import (
    ClassifierHead,
    EncoderNet,
    MomentumTwin,
    ProjectionHead,
    ema_update_params,
    forward_classify,
    forward_embed,
)
from .noise import OOD, Rule, correct_batch
from .objectives import loss_total

log = logging.getLogger("mopro")

# Checkpoint container (all integers little-endian):
#   magic "MPCK", version u16
#   config: u32 length + canonical JSON of TrainConfig
#   completed epochs u64
#   three array groups (model params, velocities, twin params), each
#     u32 count, then per array: u16 name length, name utf-8, u8 ndim,
#     ndim x u64 dims, float64 data
#   prototype bank: K x u8 initialized flags, raw EMA matrix array block
#   queue: u64 cursor, u64 fill count, buffer array block
#   rng: u16 length + PCG64 state bytes
#   records: u32 count, each packed "<q12d3q"
CHECKPOINT_MAGIC = b"MPCK"
CHECKPOINT_VERSION = 1

ABLATIONS = ("wo_pro", "wo_ins", "wo_s", "ce_only")

_TRAIN_TAG = 11
_REBALANCE_TAG = 12


@dataclass(frozen=True)
class TrainConfig:
    """Every scalar a run depends on; defaults are the desk-scale benchmark."""

    # model
    num_classes: int = 10
    input_dim: int = 32
    hidden_dims: tuple = (128, 128)
    embed_dim: int = 64
    proj_hidden_dim: int = 0  # 0 means "same as embed_dim"
    proj_dim: int = 16
    # objective scalars
    temperature: float = 0.1
    alpha: float = 0.5
    threshold: float = 0.8
    momentum: float = 0.999  # EMA coefficient for the twin and the prototypes
    queue_size: int = 1024
    lambda_pro: float = 1.0
    lambda_ins: float = 1.0
    # schedule
    warmup_epochs: int = 10
    epochs: int = 60  # total, warm-up included
    batch_size: int = 64
    lr: float = 0.01  # 0.1 destabilizes an unnormalized MLP at this scale
    lr_decay: float = 0.1
    lr_milestones: tuple = ()  # empty means 2/3 and 8/9 of total epochs
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    # augmentation (weak view feeds the encoder, strong view the twin);
    # weak noise at 1.5x the cluster spread blunts per-sample memorization,
    # which is what keeps outliers detectable late in training
    weak_sigma: float = 1.5
    strong_sigma: float = 3.0
    strong_dropout: float = 0.1
    strong_scale: tuple = (0.85, 1.15)
    # ablation switches
    disable_pro: bool = False
    disable_ins: bool = False
    force_alpha_1: bool = False
    keep_original_labels: bool = False  # warm-up semantics for the whole run
    # decoupled re-balancing finetune
    rebalance_enabled: bool = False
    rebalance_epochs: int = 15
    rebalance_lr: float = 0.01
    rebalance_decay: float = 0.1
    rebalance_milestones: tuple = (5, 10)
    # evaluation hooks
    probe_k: int = 11

    def proj_hidden(self):
        return self.proj_hidden_dim or self.embed_dim

    def resolved_milestones(self):
        if self.lr_milestones:
            return tuple(self.lr_milestones)
        return (int(self.epochs * 2 / 3), int(self.epochs * 8 / 9))

    def validate(self):
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.temperature <= 0.0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 1.0 / self.num_classes < self.threshold <= 1.0:
            raise ConfigError(
                f"threshold must lie in (1/{self.num_classes}, 1], got {self.threshold}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.queue_size < 1:
            raise ConfigError(f"queue_size must be positive, got {self.queue_size}")
        if self.lambda_pro < 0.0 or self.lambda_ins < 0.0:
            raise ConfigError("loss weights must be nonnegative")
        if self.warmup_epochs < 0 or self.epochs < self.warmup_epochs:
            raise ConfigError(
                f"need 0 <= warmup_epochs <= epochs, got {self.warmup_epochs}/{self.epochs}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0.0 or self.rebalance_lr <= 0.0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.sgd_momentum < 1.0:
            raise ConfigError(f"sgd_momentum must lie in [0, 1), got {self.sgd_momentum}")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.weak_sigma < 0.0 or self.strong_sigma < 0.0:
            raise ConfigError("augmentation sigmas must be >= 0")
        if self.weak_sigma >= self.strong_sigma:
            raise ConfigError(
                f"weak sigma must stay below strong sigma, got "
                f"{self.weak_sigma} >= {self.strong_sigma}"
            )
        if self.probe_k < 1 or self.probe_k % 2 == 0:
            raise ConfigError(f"probe_k must be odd and >= 1, got {self.probe_k}")
        AugmentPolicy.strong(self.strong_sigma, self.strong_dropout, self.strong_scale).validate()

    def ablated(self, name):
        """Apply one of the named ablation presets."""
        if name == "wo_pro":
            return replace(self, disable_pro=True)
        if name == "wo_ins":
            return replace(self, disable_ins=True)
        if name == "wo_s":
            return replace(self, force_alpha_1=True)
        if name == "ce_only":
            return replace(
                self,
                disable_pro=True,
                disable_ins=True,
                force_alpha_1=True,
                keep_original_labels=True,
            )
        raise ConfigError(f"unknown ablation {name!r}; choose one of {ABLATIONS}")


@dataclass
class EpochRecord:
    """Per-epoch metrics; the canonical CSV columns plus bookkeeping extras."""

    epoch: int
    l_ce: float
    l_pro: float
    l_ins: float
    total: float
    pseudo_acc: float
    ood_recall: float
    ood_precision: float
    knn_acc: float
    calib_err: float
    correction_precision: float = float("nan")
    correction_recall: float = float("nan")
    lr: float = 0.0
    n_argmax: int = 0
    n_kept: int = 0
    n_ood: int = 0

    def as_row(self):
        return asdict(self)


@dataclass(frozen=True)
class RebalanceReport:
    """Outcome of the decoupled cleaning + classifier finetune."""

    n_kept: int
    n_dropped_ood: int
    n_argmax: int
    n_kept_rule: int
    cleaned_accuracy: float  # cleaned labels vs ground truth on kept in-dist samples


_TRACE_WARM = ("augment", "forward_online", "forward_momentum", "keep_labels",
               "loss", "sgd_step", "ema_update", "enqueue")
_TRACE_MAIN = ("augment", "forward_online", "forward_momentum", "proto_scores",
               "correct", "loss", "sgd_step", "ema_update", "proto_update", "enqueue")


class Trainer:
    """Owns all mutable training state for one run."""

    def __init__(self, config, dataset, eval_dataset=None, trace=False):
        config.validate()
        if dataset.num_classes != config.num_classes:
            raise StructuralError(
                f"dataset has {dataset.num_classes} classes, config expects "
                f"{config.num_classes}"
            )
        if dataset.dim != config.input_dim:
            raise StructuralError(
                f"dataset dim {dataset.dim} does not match config input_dim "
                f"{config.input_dim}"
            )
        if eval_dataset is not None and (
            eval_dataset.num_classes != config.num_classes
            or eval_dataset.dim != config.input_dim
        ):
            raise StructuralError("eval dataset shape does not match the config")
        self.config = config
        self.dataset = dataset
        self.eval_dataset = eval_dataset
        self.rng = nk.Rng(config.seed, (_TRAIN_TAG,))

        self.encoder = EncoderNet(config.input_dim, config.hidden_dims,
                                  config.embed_dim, self.rng)
        self.projection = ProjectionHead(config.embed_dim, config.proj_hidden(),
                                         config.proj_dim, self.rng)
        self.classifier = ClassifierHead(config.embed_dim, config.num_classes, self.rng)
        self.twin = MomentumTwin(self.encoder, self.projection)
        self.bank = PrototypeBank(config.num_classes, config.proj_dim, config.momentum)
        self.queue = EmbeddingQueue(config.queue_size, config.proj_dim)
        self.velocities = [np.zeros_like(p.data) for p in self.parameters()]
        self.epoch = 0  # completed epochs
        self.records = []
        self.weak_policy = AugmentPolicy.weak(config.weak_sigma)
        self.strong_policy = AugmentPolicy.strong(
            config.strong_sigma, config.strong_dropout, config.strong_scale
        )
        self.trace = [] if trace else None

    # -- structure ---------------------------------------------------------

    def parameters(self):
        """Optimized parameters; the twin is deliberately absent."""
        return [
            *self.encoder.parameters(),
            *self.projection.parameters(),
            *self.classifier.parameters(),
        ]

    def named_parameters(self):
        names = []
        for group, net in (("enc", self.encoder), ("proj", self.projection)):
            for i in range(len(net.weights)):
                names.extend((f"{group}.w{i}", f"{group}.b{i}"))
        names.extend(("cls.w", "cls.b"))
        return list(zip(names, self.parameters()))

    def lr_at(self, epoch):
        decays = sum(1 for m in self.config.resolved_milestones() if epoch >= m)
        return self.config.lr * self.config.lr_decay**decays

    def _corrections_active(self, epoch):
        if self.config.keep_original_labels:
            return False
        return epoch >= self.config.warmup_epochs

    # -- training ----------------------------------------------------------

    def run(self):
        """Train from the current epoch to config.epochs; returns the records."""
        while self.epoch < self.config.epochs:
            rec = self.train_epoch()
            log.info(
                "epoch %d/%d total=%.4f ce=%.4f pro=%.4f ins=%.4f pseudo_acc=%.4f",
                rec.epoch, self.config.epochs, rec.total, rec.l_ce, rec.l_pro,
                rec.l_ins, rec.pseudo_acc,
            )
        return self.records

    def train_epoch(self):
        cfg = self.config
        correcting = self._corrections_active(self.epoch)
        if correcting and not self.bank.initialized:
            self._init_prototypes()
        lr = self.lr_at(self.epoch)
        n = self.dataset.n
        order = self.rng.permutation(n)
        features = self.dataset.features
        noisy = self.dataset.noisy_labels

        pseudo_all = np.empty(n, dtype=np.int64)
        rules_all = np.empty(n, dtype=np.uint8)
        sums = {"l_ce": 0.0, "l_pro": 0.0, "l_ins": 0.0, "total": 0.0}
        counts = {"argmax": 0, "kept": 0, "ood": 0}

        lambda_pro = 0.0 if cfg.disable_pro else cfg.lambda_pro
        lambda_ins = 0.0 if cfg.disable_ins else cfg.lambda_ins

        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = features[idx]
            y = noisy[idx]

            weak = augment(x, self.weak_policy, self.rng)
            strong = augment(x, self.strong_policy, self.rng)
            self._emit("augment")

            v, z = forward_embed(self.encoder, self.projection, nk.Tensor(weak))
            p = forward_classify(self.classifier, v)
            self._emit("forward_online")
            z_mom = self.twin.forward_embed(strong)
            self._emit("forward_momentum")

            if correcting:
                if cfg.force_alpha_1:
                    scores = p.data  # any valid distribution; weight (1-alpha)=0
                    alpha = 1.0
                else:
                    scores = self.bank.prototype_scores(z.data, cfg.temperature)
                    alpha = cfg.alpha
                self._emit("proto_scores")
                corr = correct_batch(p.data, scores, y, alpha, cfg.threshold)
                pseudo = corr.labels
                rules = corr.rules
                counts["argmax"] += corr.n_argmax
                counts["kept"] += corr.n_kept
                counts["ood"] += corr.n_ood
                self._emit("correct")
            else:
                pseudo = y
                rules = np.full(idx.size, Rule.KEEP_ORIGINAL, dtype=np.uint8)
                if cfg.keep_original_labels and self.epoch >= cfg.warmup_epochs:
                    counts["kept"] += idx.size
                self._emit("keep_labels")
            pseudo_all[idx] = pseudo
            rules_all[idx] = rules

            breakdown, total = loss_total(
                p, z, z_mom, pseudo,
                self.bank if (correcting and lambda_pro != 0.0) else None,
                self.queue,
                temperature=cfg.temperature,
                lambda_pro=lambda_pro,
                lambda_ins=lambda_ins,
            )
            if not math.isfinite(breakdown.total):
                raise NumericError(
                    f"non-finite loss at epoch {self.epoch + 1}: {breakdown}"
                )
            self._emit("loss")

            nk.backward(total)
            self._sgd_step(lr)
            self._emit("sgd_step")

            ema_update_params(self.twin, self.encoder, self.projection, cfg.momentum)
            self._emit("ema_update")

            if self.bank.initialized:
                self.bank.update_batch(pseudo, z.data)
                self._emit("proto_update")
            self.queue.enqueue(z_mom)
            self._emit("enqueue")

            w = idx.size
            sums["l_ce"] += breakdown.l_ce * w
            sums["l_pro"] += breakdown.l_pro * w
            sums["l_ins"] += breakdown.l_ins * w
            sums["total"] += breakdown.total * w

        record = self._epoch_record(lr, correcting, pseudo_all, rules_all, sums, counts)
        self.records.append(record)
        self.epoch += 1
        return record

    def _sgd_step(self, lr):
        cfg = self.config
        for p, vel in zip(self.parameters(), self.velocities):
            if p.grad is None:
                continue
            d = p.grad
            if cfg.weight_decay:
                d = d + cfg.weight_decay * p.data
            vel *= cfg.sgd_momentum
            vel += d
            p.data -= lr * vel
            p.grad = None

    def _init_prototypes(self):
        _, z_all = self.embed_all(self.dataset.features)
        self.bank.init_prototypes(z_all, self.dataset.noisy_labels)

    def embed_all(self, features, batch_size=512):
        """Graph-free (v, z) for a feature matrix, in fixed batches."""
        vs, zs = [], []
        for start in range(0, features.shape[0], batch_size):
            x = features[start:start + batch_size]
            v = self.encoder.forward_array(x)
            zs.append(self.projection.forward_array(v))
            vs.append(v)
        if not vs:
            k = self.config
            return np.zeros((0, k.embed_dim)), np.zeros((0, k.proj_dim))
        return np.concatenate(vs), np.concatenate(zs)

    def _epoch_record(self, lr, correcting, pseudo_all, rules_all, sums, counts):
        ds = self.dataset
        n = ds.n
        in_dist = ~ds.is_ood
        n_in = int(in_dist.sum())
        pseudo_acc = (
            float((pseudo_all[in_dist] == ds.true_labels[in_dist]).sum() / n_in)
            if n_in else float("nan")
        )
        pred_ood = pseudo_all == OOD
        tp = int((pred_ood & ds.is_ood).sum())
        ood_recall = tp / int(ds.is_ood.sum()) if ds.is_ood.any() else float("nan")
        ood_precision = tp / int(pred_ood.sum()) if pred_ood.any() else float("nan")

        corrupted = in_dist & (ds.noisy_labels != ds.true_labels)
        corr_recall = (
            float((pseudo_all[corrupted] == ds.true_labels[corrupted]).mean())
            if corrupted.any() else float("nan")
        )
        changed = in_dist & ~pred_ood & (pseudo_all != ds.noisy_labels)
        corr_precision = (
            float((pseudo_all[changed] == ds.true_labels[changed]).mean())
            if changed.any() else float("nan")
        )

        knn_acc, calib_err = self._probe()
        return EpochRecord(
            epoch=self.epoch + 1,
            l_ce=sums["l_ce"] / n,
            l_pro=sums["l_pro"] / n,
            l_ins=sums["l_ins"] / n,
            total=sums["total"] / n,
            pseudo_acc=pseudo_acc,
            ood_recall=ood_recall,
            ood_precision=ood_precision,
            knn_acc=knn_acc,
            calib_err=calib_err,
            correction_precision=corr_precision,
            correction_recall=corr_recall,
            lr=lr,
            n_argmax=counts["argmax"],
            n_kept=counts["kept"],
            n_ood=counts["ood"],
        )

    def _probe(self):
        """kNN probe + calibration on the eval split, when one is attached."""
        if self.eval_dataset is None:
            return float("nan"), float("nan")
        ds, ev = self.dataset, self.eval_dataset
        in_dist = ~ds.is_ood
        v_train, _ = self.embed_all(ds.features[in_dist])
        v_eval, _ = self.embed_all(ev.features)
        knn = knn_probe(v_train, ds.true_labels[in_dist], v_eval, ev.true_labels,
                        k=self.config.probe_k)
        probs = self.classifier.forward_array(v_eval)
        conf = probs.max(axis=1)
        hit = probs.argmax(axis=1) == ev.true_labels
        calib = calibration_error(conf, hit, DEFAULT_CALIBRATION_BINS)
        return float(knn), float(calib.error)

    def _emit(self, op):
        if self.trace is not None:
            self.trace.append(op)

    # -- decoupled re-balancing --------------------------------------------

    def clean_dataset(self):
        """One frozen-model correction pass over the full training set."""
        cfg = self.config
        v_all, z_all = self.embed_all(self.dataset.features)
        probs = self.classifier.forward_array(v_all)
        if cfg.force_alpha_1:
            scores, alpha = probs, 1.0
        else:
            scores, alpha = self.bank.prototype_scores(z_all, cfg.temperature), cfg.alpha
        return correct_batch(probs, scores, self.dataset.noisy_labels, alpha,
                             cfg.threshold)

    def rebalance_finetune(self):
        """Freeze encoder+projection, retrain the classifier on cleaned labels.

        Cleaning drops OOD-labelled samples; the finetune draws batches
        with square-root class weighting to flatten imbalance.
        """
        cfg = self.config
        corr = self.clean_dataset()
        kept = corr.labels >= 0
        if not kept.any():
            raise StateError("all samples were marked OOD during cleaning")
        labels = corr.labels[kept]
        v_cached, _ = self.embed_all(self.dataset.features[kept])

        sampler = sqrt_sampler(labels, seed=nk.Rng(cfg.seed, (_REBALANCE_TAG,)).integers(0, 2**63))
        params = self.classifier.parameters()
        velocities = [np.zeros_like(p.data) for p in params]
        n_kept = int(kept.sum())
        steps_per_epoch = max(1, math.ceil(n_kept / cfg.batch_size))
        for epoch in range(cfg.rebalance_epochs):
            decays = sum(1 for m in cfg.rebalance_milestones if epoch >= m)
            lr = cfg.rebalance_lr * cfg.rebalance_decay**decays
            for _ in range(steps_per_epoch):
                idx = np.fromiter(
                    (next(sampler) for _ in range(cfg.batch_size)),
                    dtype=np.int64, count=cfg.batch_size,
                )
                p = self.classifier.forward(nk.Tensor(v_cached[idx]))
                picked = nk.pick_rows(p, labels[idx])
                loss = nk.scale(nk.mean_all(nk.log(nk.clamp_min(picked, 1e-12))), -1.0)
                nk.backward(loss)
                for par, vel in zip(params, velocities):
                    if par.grad is None:
                        continue
                    d = par.grad + cfg.weight_decay * par.data
                    vel *= cfg.sgd_momentum
                    vel += d
                    par.data -= lr * vel
                    par.grad = None

        true_kept = self.dataset.true_labels[kept]
        valid = true_kept >= 0
        cleaned_acc = float((labels[valid] == true_kept[valid]).mean()) if valid.any() else float("nan")
        return RebalanceReport(
            n_kept=n_kept,
            n_dropped_ood=int((~kept).sum()),
            n_argmax=corr.n_argmax,
            n_kept_rule=corr.n_kept,
            cleaned_accuracy=cleaned_acc,
        )

    # -- checkpoints ---------------------------------------------------------

    def save_checkpoint(self, path):
        blob = bytearray()
        blob += CHECKPOINT_MAGIC
        blob += struct.pack("<H", CHECKPOINT_VERSION)
        cfg_json = json.dumps(asdict(self.config), sort_keys=True).encode("utf-8")
        blob += struct.pack("<I", len(cfg_json)) + cfg_json
        blob += struct.pack("<Q", self.epoch)

        def put_array(name, arr):
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            encoded = name.encode("utf-8")
            blob.extend(struct.pack("<H", len(encoded)))
            blob.extend(encoded)
            blob.extend(struct.pack("<B", arr.ndim))
            blob.extend(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            blob.extend(raw)

        named = self.named_parameters()
        blob += struct.pack("<I", len(named))
        for name, p in named:
            put_array(name, p.data)
        blob += struct.pack("<I", len(self.velocities))
        for i, vel in enumerate(self.velocities):
            put_array(f"vel.{i}", vel)
        blob += struct.pack("<I", len(self.twin.params))
        for i, arr in enumerate(self.twin.params):
            put_array(f"twin.{i}", arr)

        blob += self.bank.initialized_mask.astype("<u1").tobytes()
        put_array("bank.raw", self.bank.raw)
        buf, nxt, count = self.queue.state()
        blob += struct.pack("<QQ", nxt, count)
        put_array("queue.buf", buf)

        state = self.rng.state_bytes()
        blob += struct.pack("<H", len(state)) + state

        blob += struct.pack("<I", len(self.records))
        for rec in self.records:
            blob += struct.pack(
                "<q12d3q",
                rec.epoch, rec.l_ce, rec.l_pro, rec.l_ins, rec.total,
                rec.pseudo_acc, rec.ood_recall, rec.ood_precision,
                rec.knn_acc, rec.calib_err,
                rec.correction_precision, rec.correction_recall, rec.lr,
                rec.n_argmax, rec.n_kept, rec.n_ood,
            )
        with open(path, "wb") as fh:
            fh.write(bytes(blob))


def load_checkpoint(path, dataset, eval_dataset=None, trace=False):
    """Rebuild a Trainer whose state matches the saved one byte for byte."""
    with open(path, "rb") as fh:
        raw = fh.read()
    off = 0

    def need(nbytes, what):
        nonlocal off
        if len(raw) < off + nbytes:
            raise DataFormatError(
                f"{path}: truncated {what} at byte {len(raw)} (need {off + nbytes})"
            )
        chunk = raw[off:off + nbytes]
        off += nbytes
        return chunk

    if need(4, "magic") != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic at byte 0")
    (version,) = struct.unpack("<H", need(2, "version"))
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", need(4, "config length"))
    cfg_dict = json.loads(need(cfg_len, "config"))
    for key in ("hidden_dims", "lr_milestones", "strong_scale", "rebalance_milestones"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = TrainConfig(**cfg_dict)
    (epoch,) = struct.unpack("<Q", need(8, "epoch"))

    def get_array(what):
        (name_len,) = struct.unpack("<H", need(2, f"{what} name length"))
        name = need(name_len, f"{what} name").decode("utf-8")
        (ndim,) = struct.unpack("<B", need(1, f"{name} ndim"))
        shape = struct.unpack(f"<{ndim}Q", need(8 * ndim, f"{name} shape"))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(need(8 * size, f"{name} data"), dtype="<f8").copy()
        return name, data.reshape(shape)

    trainer = Trainer(config, dataset, eval_dataset=eval_dataset, trace=trace)

    (n_params,) = struct.unpack("<I", need(4, "parameter count"))
    named = dict(trainer.named_parameters())
    if n_params != len(named):
        raise StructuralError(
            f"{path}: checkpoint has {n_params} parameters, model needs {len(named)}"
        )
    for _ in range(n_params):
        name, arr = get_array("parameter")
        if name not in named:
            raise StructuralError(f"{path}: unknown parameter {name!r}")
        if named[name].data.shape != arr.shape:
            raise StructuralError(
                f"{path}: parameter {name} has shape {arr.shape}, "
                f"model expects {named[name].data.shape}"
            )
        named[name].data = np.ascontiguousarray(arr)

    (n_vel,) = struct.unpack("<I", need(4, "velocity count"))
    if n_vel != len(trainer.velocities):
        raise StructuralError(f"{path}: velocity count mismatch")
    for i in range(n_vel):
        _, arr = get_array("velocity")
        if arr.shape != trainer.velocities[i].shape:
            raise StructuralError(f"{path}: velocity {i} shape mismatch")
        trainer.velocities[i] = np.ascontiguousarray(arr)

    (n_twin,) = struct.unpack("<I", need(4, "twin count"))
    if n_twin != len(trainer.twin.params):
        raise StructuralError(f"{path}: twin parameter count mismatch")
    for i in range(n_twin):
        _, arr = get_array("twin parameter")
        if arr.shape != trainer.twin.params[i].shape:
            raise StructuralError(f"{path}: twin parameter {i} shape mismatch")
        trainer.twin.params[i] = np.ascontiguousarray(arr)

    ready = np.frombuffer(need(config.num_classes, "prototype flags"), dtype="<u1")
    _, bank_raw = get_array("prototype bank")
    trainer.bank.restore(bank_raw, ready)

    nxt, count = struct.unpack("<QQ", need(16, "queue cursor"))
    _, queue_buf = get_array("queue buffer")
    trainer.queue.restore(queue_buf, nxt, count)

    (state_len,) = struct.unpack("<H", need(2, "rng state length"))
    trainer.rng.set_state_bytes(need(state_len, "rng state"))

    (n_records,) = struct.unpack("<I", need(4, "record count"))
    rec_struct = struct.Struct("<q12d3q")
    records = []
    for _ in range(n_records):
        vals = rec_struct.unpack(need(rec_struct.size, "record"))
        records.append(EpochRecord(
            epoch=int(vals[0]), l_ce=vals[1], l_pro=vals[2], l_ins=vals[3],
            total=vals[4], pseudo_acc=vals[5], ood_recall=vals[6],
            ood_precision=vals[7], knn_acc=vals[8], calib_err=vals[9],
            correction_precision=vals[10], correction_recall=vals[11],
            lr=vals[12], n_argmax=int(vals[13]), n_kept=int(vals[14]),
            n_ood=int(vals[15]),
        ))
    if off != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - off} trailing bytes at {off}")

    trainer.epoch = int(epoch)
    trainer.records = records
    return trainer
