"""Training engine: Adam, the four-player update schedule, run orchestration.

Per iteration the players step in the order D, gG, C, bG, one Adam step
each.  A player's tape may compute gradients through another player's
parameters (gG's loss flows through D, bG's through C); those cross
gradients are cleared after the owning player steps and are never applied.
Samples fed to another player's loss are detached (generated outside the
tape), matching the usual GAN treatment.

The generated-pair classifier term (weight lambda0) is gated off until
gate_epoch, while D's pseudo-label positives ramp in linearly from the
much earlier pseudo_start_epoch: the pair discriminator needs labeled
coverage of the unlabeled pool long before the conditional generator is
good enough to teach the classifier.  All per-epoch randomness derives
from SeedSequence([seed, epoch]), so reruns and resumed runs replay the
identical stream.

Each run directory holds: config.echo, metrics.csv (one row per epoch),
ckpt/ (last/best and optional cadence checkpoints carrying optimizer
state), grids/, and summary.json.
"""

import itertools
import json
import os
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import backend
from . import config as config_mod
from . import data as data_mod
from . import evaluate
from .errors import ContractError, DomainError, FormatError
from .layers import EVAL, TRAIN
from .losses import (
    LossWeights,
    classifier_total,
    loss_bad_generator,
    loss_c_generated,
    loss_c_supervised,
    loss_c_unlabeled,
    loss_discriminator,
    loss_good_generator,
)
from .models import (
    FourPlayerModel,
    ModelProfile,
    load_checkpoint,
    mnist_profile,
    one_hot,
    save_checkpoint,
)

METRICS_HEADER = "epoch,val_acc,loss_D,loss_gG,loss_bG,loss_C1,loss_C2,loss_C3,loss_C4,lambda0_eff"


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Bias-corrected Adam over named parameter tensors (fused backend kernel)."""

    def __init__(self, named_params, cfg):
        self.cfg = cfg
        self.t = 0
        self._params = list(named_params)
        self._m = {name: np.zeros(t.data.size) for name, t in self._params}
        self._v = {name: np.zeros(t.data.size) for name, t in self._params}

    def step(self):
        self.t += 1
        c = self.cfg
        for name, t in self._params:
            if t.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient at step time")
            backend.adam_step(
                t.data.reshape(-1), t.grad.reshape(-1), self._m[name], self._v[name],
                self.t, c.lr, c.beta1, c.beta2, c.eps,
            )

    def state_tensors(self, prefix):
        out = {f"{prefix}.t": np.array(float(self.t))}
        for name, _ in self._params:
            out[f"{prefix}.m.{name}"] = self._m[name]
            out[f"{prefix}.v.{name}"] = self._v[name]
        return out

    def load_state_tensors(self, tensors, prefix):
        key = f"{prefix}.t"
        if key not in tensors:
            raise FormatError(f"checkpoint is missing optimizer tensor {key!r}")
        self.t = int(tensors[key])
        for name, _ in self._params:
            for slot, store in (("m", self._m), ("v", self._v)):
                full = f"{prefix}.{slot}.{name}"
                if full not in tensors:
                    raise FormatError(f"checkpoint is missing optimizer tensor {full!r}")
                arr = tensors[full]
                if arr.shape != store[name].shape:
                    raise DomainError(
                        f"optimizer tensor {full!r} has shape {arr.shape}, "
                        f"expected {store[name].shape}"
                    )
                store[name] = arr.copy()


class FourPlayerOptimizers:
    def __init__(self, model, cfg):
        self.d = Adam(model.player_params("D"), cfg)
        self.gg = Adam(model.player_params("gG"), cfg)
        self.c = Adam(model.player_params("C"), cfg)
        self.bg = Adam(model.player_params("bG"), cfg)

    def _named(self):
        return (("D", self.d), ("gG", self.gg), ("C", self.c), ("bG", self.bg))

    def state_tensors(self):
        out = {}
        for prefix, opt in self._named():
            out.update(opt.state_tensors(f"opt.{prefix}"))
        return out

    def load_state_tensors(self, tensors):
        for prefix, opt in self._named():
            opt.load_state_tensors(tensors, f"opt.{prefix}")


@dataclass(frozen=True)
class TrainSchedule:
    total_epochs: int = 120
    gate_epoch: int = 50
    batch_labeled: int = 100
    batch_unlabeled: int = 100
    batch_gg: int = 100
    batch_bg: int = 50
    pseudo_pair_fraction: float = 0.5
    pseudo_start_epoch: int = 10
    pseudo_ramp_epochs: int = 50
    adam: AdamConfig = AdamConfig()
    weights: LossWeights = LossWeights()
    pull_weight: float = 0.1
    seed: int = 0
    ckpt_every: int = 0

    def lambda0_effective(self, epoch):
        """The generated-pair classifier weight; zero before the gate."""
        return self.weights.lambda0 if epoch >= self.gate_epoch else 0.0

    def pseudo_fraction_effective(self, epoch):
        """Pseudo-pair fraction: zero before pseudo_start_epoch, then a
        linear ramp reaching the configured fraction after
        pseudo_ramp_epochs.

        The pseudo start is deliberately independent of (and usually much
        earlier than) the gate: the pair discriminator needs the
        classifier's labelings of unlabeled data long before the
        conditional generator's samples are trustworthy enough to train
        the classifier back.
        """
        if epoch < self.pseudo_start_epoch:
            return 0.0
        ramp = max(1, self.pseudo_ramp_epochs)
        progress = min(1.0, (epoch - self.pseudo_start_epoch + 1) / ramp)
        return self.pseudo_pair_fraction * progress


@dataclass
class IterationLosses:
    loss_d: float = 0.0
    loss_gg: float = 0.0
    loss_bg: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    c3: float = 0.0
    c4: float = 0.0
    lambda0_eff: float = 0.0

    @staticmethod
    def average(items):
        if not items:
            raise DomainError("cannot average zero iterations")
        out = IterationLosses()
        for f in fields(IterationLosses):
            setattr(out, f.name, float(np.mean([getattr(it, f.name) for it in items])))
        return out


@dataclass
class IterationBatch:
    """Everything one iteration consumes, already drawn from the epoch rng."""

    x_l: np.ndarray
    y_l: np.ndarray  # one-hot
    x_u: np.ndarray
    z_d: np.ndarray  # gG draws for D's negative batch
    y_d: np.ndarray
    z_g: np.ndarray  # gG draws for gG's own step
    y_g: np.ndarray
    z_c: np.ndarray  # gG draws for the generated-pair classifier term
    y_c: np.ndarray
    z_b4: np.ndarray  # bG draws for the classifier's fake term
    z_bg: np.ndarray  # bG draws for bG's own step


def _sample_rows(probs, rng):
    """One categorical draw per softmax row; returns 1-based labels."""
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0  # guard against cumulative rounding below 1
    return (cum > u[:, None]).argmax(axis=1) + 1


def pseudo_positive_pairs(model, x_u, fraction, rng):
    """Select round(fraction * |x_u|) unlabeled rows and argmax-label them.

    Labels come from an eval-mode classifier forward, so no gradient ever
    reaches C through the pseudo pairs.
    """
    n = int(round(fraction * x_u.shape[0]))
    if n <= 0:
        return (np.zeros((0, x_u.shape[1])),
                np.zeros((0, model.profile.num_classes)))
    n = min(n, x_u.shape[0])
    sel = rng.choice(x_u.shape[0], size=n, replace=False)
    logits, _ = model.c_forward(x_u[sel], EVAL)
    labels = np.argmax(logits.data, axis=1) + 1
    return x_u[sel], one_hot(labels, model.profile.num_classes)


def train_iteration(model, opts, batch, schedule, epoch, rng):
    """One synchronized update of all four players; returns scalar losses."""
    k = model.profile.num_classes
    lam0 = schedule.lambda0_effective(epoch)
    frac = schedule.pseudo_fraction_effective(epoch)

    # --- discriminator ----------------------------------------------------
    x_pseudo, y_pseudo = pseudo_positive_pairs(model, batch.x_u, frac, rng)
    x_pos = np.concatenate([batch.x_l, x_pseudo])
    y_pos = np.concatenate([batch.y_l, y_pseudo])
    logits_u, _ = model.c_forward(batch.x_u, EVAL)
    _, probs_u = backend.lse_rows(logits_u.data)
    y_neg = one_hot(_sample_rows(probs_u, rng), k)
    x_gg_detached = model.gg_forward(batch.z_d, batch.y_d, TRAIN).data
    with ad.Tape():
        d_real = model.d_forward(x_pos, y_pos, TRAIN, rng)
        d_gg = model.d_forward(x_gg_detached, batch.y_d, TRAIN, rng)
        d_c = model.d_forward(batch.x_u, y_neg, TRAIN, rng)
        l_d = loss_discriminator(d_real, d_gg, d_c)
    ad.backward(l_d)
    opts.d.step()
    ad.zero_grads(model.all_param_tensors())

    # --- good generator ---------------------------------------------------
    with ad.Tape():
        x_g = model.gg_forward(batch.z_g, batch.y_g, TRAIN)
        d_g = model.d_forward(x_g, batch.y_g, TRAIN, rng)
        l_gg = loss_good_generator(d_g)
    ad.backward(l_gg)
    opts.gg.step()  # D's cross-gradients are cleared below, never applied
    ad.zero_grads(model.all_param_tensors())

    # --- classifier -------------------------------------------------------
    x_gc = model.gg_forward(batch.z_c, batch.y_c, TRAIN).data
    x_bc = model.bg_forward(batch.z_b4, TRAIN).data
    with ad.Tape():
        logits_l, _ = model.c_forward(batch.x_l, TRAIN, rng)
        c1 = loss_c_supervised(logits_l, batch.y_l)
        logits_g, _ = model.c_forward(x_gc, TRAIN, rng)
        c2 = loss_c_supervised(logits_g, batch.y_c)
        logits_un, _ = model.c_forward(batch.x_u, TRAIN, rng)
        c3 = loss_c_unlabeled(logits_un)
        logits_b, _ = model.c_forward(x_bc, TRAIN, rng)
        c4 = loss_c_generated(logits_b)
        l_c = classifier_total(c1, c2, c3, c4, schedule.weights, lambda0_eff=lam0)
    ad.backward(l_c)
    opts.c.step()
    ad.zero_grads(model.all_param_tensors())

    # --- bad generator ----------------------------------------------------
    _, f_u = model.c_forward(batch.x_u, TRAIN, rng)
    mean_f_u = f_u.data.mean(axis=0)
    with ad.Tape():
        x_b = model.bg_forward(batch.z_bg, TRAIN)
        _, f_b = model.c_forward(x_b, TRAIN, rng)
        l_bg = loss_bad_generator(f_b, mean_f_u, schedule.pull_weight)
    ad.backward(l_bg)
    opts.bg.step()  # C's cross-gradients cleared below
    ad.zero_grads(model.all_param_tensors())

    return IterationLosses(
        loss_d=l_d.item(), loss_gg=l_gg.item(), loss_bg=l_bg.item(),
        c1=c1.item(), c2=c2.item(), c3=c3.item(), c4=c4.item(), lambda0_eff=lam0,
    )


def epoch_rng(seed, epoch):
    return np.random.default_rng(np.random.SeedSequence([int(seed), 1000 + int(epoch)]))


def _draw_gg_batch(rng, n, latent_dim, k):
    z = rng.random(size=(n, latent_dim))
    y = one_hot(rng.integers(1, k + 1, size=n), k)
    return z, y


def train_epoch(model, opts, dataset, labeled_idx, unlabeled_idx, schedule, epoch):
    """All iterations of one epoch; returns the mean of the iteration losses.

    The unlabeled pool drives the iteration count; labeled batches cycle.
    """
    rng = epoch_rng(schedule.seed, epoch)
    k = model.profile.num_classes
    latent = model.profile.latent_dim
    unl_batches = list(data_mod.batch_iterator(unlabeled_idx, schedule.batch_unlabeled, rng))
    lab_batches = itertools.cycle(
        list(data_mod.batch_iterator(labeled_idx, schedule.batch_labeled, rng))
    )
    results = []
    for u_idx in unl_batches:
        l_idx = next(lab_batches)
        z_d, y_d = _draw_gg_batch(rng, schedule.batch_gg, latent, k)
        z_g, y_g = _draw_gg_batch(rng, schedule.batch_gg, latent, k)
        z_c, y_c = _draw_gg_batch(rng, schedule.batch_gg, latent, k)
        batch = IterationBatch(
            x_l=dataset.x[l_idx], y_l=one_hot(dataset.y[l_idx], k), x_u=dataset.x[u_idx],
            z_d=z_d, y_d=y_d, z_g=z_g, y_g=y_g, z_c=z_c, y_c=y_c,
            z_b4=rng.random(size=(schedule.batch_bg, latent)),
            z_bg=rng.random(size=(schedule.batch_bg, latent)),
        )
        results.append(train_iteration(model, opts, batch, schedule, epoch, rng))
    return IterationLosses.average(results)


def metrics_row(epoch, val_acc, losses):
    vals = [losses.loss_d, losses.loss_gg, losses.loss_bg,
            losses.c1, losses.c2, losses.c3, losses.c4, losses.lambda0_eff]
    return ",".join([str(int(epoch)), repr(float(val_acc))] + [repr(float(v)) for v in vals])


# ---------------------------------------------------------------------------
# config plumbing

def profile_from_config(cfg):
    profile = cfg.get("data", "profile")
    kwargs = dict(
        noise_input_sigma=cfg.getfloat("model", "noise_input_sigma"),
        noise_hidden_sigma=cfg.getfloat("model", "noise_hidden_sigma"),
        leaky_slope=cfg.getfloat("model", "leaky_slope"),
    )
    latent = cfg.getint("model", "latent_dim")
    if profile == "mnist":
        base = mnist_profile(latent)
        return ModelProfile(
            base.input_dim, base.num_classes, latent, base.gen_hidden, base.trunk_hidden, **kwargs
        )
    num_classes = 2 if profile == "moons" else cfg.getint("data", "num_classes")
    width = cfg.getint("model", "width")
    depth = cfg.getint("model", "depth")
    return ModelProfile(
        2, num_classes, latent, (width,) * depth, (width,) * depth, **kwargs
    )


def dataset_from_config(cfg):
    profile = cfg.get("data", "profile")
    seed = cfg.getint("train", "seed")
    if profile == "mnist":
        data_dir = cfg.get("data", "dir") or None
        return data_mod.load_mnist(data_dir, valid_size=cfg.getint("data", "valid_size"))
    sizes = {name: cfg.getint("data", f"n_{name}") for name in ("train", "valid", "test")}
    if profile == "moons":
        return data_mod.two_moons(
            sizes["train"], sizes["valid"], sizes["test"],
            noise=cfg.getfloat("data", "noise"), seed=seed,
        )
    return data_mod.gaussian_mixture(
        sizes["train"], sizes["valid"], sizes["test"],
        num_classes=cfg.getint("data", "num_classes"), seed=seed,
    )


def splits_from_config(cfg, dataset):
    seed = cfg.getint("train", "seed")
    cap = config_mod.get_optional_int(cfg, "data", "max_unlabeled")
    mode = cfg.get("data", "split_mode")
    if mode == "stratified":
        return data_mod.stratified_labeled_split(
            dataset, cfg.getint("data", "n_labeled"), seed, max_unlabeled=cap
        )
    if mode == "manual":
        path = cfg.get("data", "labeled_indices")
        if not path:
            raise DomainError("split_mode=manual needs data.labeled_indices")
        if not os.path.exists(path):
            raise FormatError(f"labeled index file not found: {path}")
        with open(path) as fh:
            try:
                indices = [int(line) for line in fh.read().split()]
            except ValueError as exc:
                raise FormatError(f"{path}: non-integer labeled index: {exc}")
        return data_mod.manual_labeled_split(dataset, indices, max_unlabeled=cap, seed=seed)
    raise DomainError(f"unknown split_mode {mode!r}, expected stratified or manual")


def schedule_from_config(cfg):
    t = cfg["train"]
    return TrainSchedule(
        total_epochs=int(t["epochs"]),
        gate_epoch=int(t["gate_epoch"]),
        batch_labeled=int(t["batch_labeled"]),
        batch_unlabeled=int(t["batch_unlabeled"]),
        batch_gg=int(t["batch_gg"]),
        batch_bg=int(t["batch_bg"]),
        pseudo_pair_fraction=float(t["pseudo_pair_fraction"]),
        pseudo_start_epoch=int(t["pseudo_start_epoch"]),
        pseudo_ramp_epochs=int(t["pseudo_ramp_epochs"]),
        adam=AdamConfig(
            lr=float(t["lr"]), beta1=float(t["beta1"]),
            beta2=float(t["beta2"]), eps=float(t["eps"]),
        ),
        weights=LossWeights(
            lambda0=float(t["lambda0"]), lambda1=float(t["lambda1"]), lambda2=float(t["lambda2"]),
        ),
        pull_weight=float(t["pull_weight"]),
        seed=int(t["seed"]),
        ckpt_every=int(t["ckpt_every"]),
    )


# ---------------------------------------------------------------------------
# run orchestration

class TrainRun:
    """Wires config, data, model, optimizers and the run directory together."""

    def __init__(self, cfg, run_dir):
        self.cfg = cfg
        self.run_dir = run_dir
        self.config_hash = config_mod.config_hash(cfg)
        self.dataset = dataset_from_config(cfg)
        self.profile = profile_from_config(cfg)
        if self.profile.input_dim != self.dataset.x.shape[1]:
            raise DomainError(
                f"model expects input dim {self.profile.input_dim}, "
                f"dataset provides {self.dataset.x.shape[1]}"
            )
        if self.profile.num_classes != self.dataset.num_classes:
            raise DomainError(
                f"model expects {self.profile.num_classes} classes, "
                f"dataset provides {self.dataset.num_classes}"
            )
        self.schedule = schedule_from_config(cfg)
        self.labeled_idx, self.unlabeled_idx = splits_from_config(cfg, self.dataset)
        self.model = FourPlayerModel(self.profile, self.schedule.seed)
        self.opts = FourPlayerOptimizers(self.model, self.schedule.adam)

    # paths ---------------------------------------------------------------
    @property
    def ckpt_dir(self):
        return os.path.join(self.run_dir, "ckpt")

    @property
    def metrics_path(self):
        return os.path.join(self.run_dir, "metrics.csv")

    def _ckpt_path(self, name):
        return os.path.join(self.ckpt_dir, name)

    def _full_state(self):
        tensors = self.model.tensors_for_checkpoint()
        tensors.update(self.opts.state_tensors())
        return tensors

    def _save(self, name, epoch):
        save_checkpoint(self._ckpt_path(name), self._full_state(), self.config_hash, epoch)

    def _restore(self, name):
        tensors, ckpt_hash, epoch = load_checkpoint(self._ckpt_path(name))
        if ckpt_hash and ckpt_hash != self.config_hash:
            raise DomainError(
                f"checkpoint config hash {ckpt_hash[:12]} does not match the "
                f"current config {self.config_hash[:12]}"
            )
        self.model.load_tensors(tensors)
        self.opts.load_state_tensors(tensors)
        return epoch

    # main loop -----------------------------------------------------------
    def execute(self, resume=False, log=None):
        os.makedirs(self.ckpt_dir, exist_ok=True)
        os.makedirs(os.path.join(self.run_dir, "grids"), exist_ok=True)
        config_mod.write_echo(self.cfg, os.path.join(self.run_dir, "config.echo"))

        start_epoch = 0
        best = {"val_acc": -1.0, "epoch": -1}
        kept_rows = []
        if resume:
            if not os.path.exists(self._ckpt_path("last.ckpt")):
                raise FormatError(f"cannot resume: no checkpoint at {self._ckpt_path('last.ckpt')}")
            start_epoch = self._restore("last.ckpt") + 1
            kept_rows, best = self._trim_metrics(start_epoch)

        with open(self.metrics_path, "w") as fh:
            fh.write(METRICS_HEADER + "\n")
            for row in kept_rows:
                fh.write(row + "\n")
            fh.flush()
            for epoch in range(start_epoch, self.schedule.total_epochs):
                losses = train_epoch(
                    self.model, self.opts, self.dataset,
                    self.labeled_idx, self.unlabeled_idx, self.schedule, epoch,
                )
                val_acc = evaluate.split_accuracy(self.model, self.dataset, "valid")
                fh.write(metrics_row(epoch, val_acc, losses) + "\n")
                fh.flush()
                if val_acc > best["val_acc"]:
                    best = {"val_acc": val_acc, "epoch": epoch}
                    self._save("best.ckpt", epoch)
                if self.schedule.ckpt_every and (epoch + 1) % self.schedule.ckpt_every == 0:
                    self._save(f"epoch{epoch}.ckpt", epoch)
                self._save("last.ckpt", epoch)
                if log:
                    log(f"epoch {epoch}: val_acc={val_acc:.4f} loss_D={losses.loss_d:.4f}")

        return self._write_summary(best)

    def _trim_metrics(self, start_epoch):
        """Keep metric rows before the resume point; recover the best row."""
        best = {"val_acc": -1.0, "epoch": -1}
        rows = []
        if os.path.exists(self.metrics_path):
            with open(self.metrics_path) as fh:
                lines = [ln.strip() for ln in fh if ln.strip()]
            for line in lines[1:]:
                epoch_str, val_str = line.split(",")[:2]
                if int(epoch_str) < start_epoch:
                    rows.append(line)
                    if float(val_str) > best["val_acc"]:
                        best = {"val_acc": float(val_str), "epoch": int(epoch_str)}
        return rows, best

    def _write_summary(self, best):
        test_acc = None
        if best["epoch"] >= 0 and os.path.exists(self._ckpt_path("best.ckpt")):
            self._restore("best.ckpt")
            test_acc = evaluate.split_accuracy(self.model, self.dataset, "test")
        summary = {
            "seed": self.schedule.seed,
            "config_hash": self.config_hash,
            "best_val_acc": best["val_acc"],
            "best_epoch": best["epoch"],
            "test_acc": test_acc,
        }
        with open(os.path.join(self.run_dir, "summary.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return summary


def train_run(cfg, run_dir, resume=False, log=None):
    """Train per config into run_dir; returns the summary dict."""
    return TrainRun(cfg, run_dir).execute(resume=resume, log=log)
