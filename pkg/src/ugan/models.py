"""The four players and their on-disk checkpoint format.

  gG  conditional generator: (z, one-hot y) -> data-space sample
  bG  unconditional generator: z -> data-space sample
  C   classifier: x -> (K real-class logits, penultimate features)
  D   pair discriminator: (x, one-hot y) -> probability the pair is real

Both generators are dense/batch-norm/softplus stacks with a sigmoid output
so samples land in [0,1]^d.  C and D share the same trunk recipe:
Gaussian noise on every layer input, weight-normalized dense, leaky ReLU.
C's features are the last trunk activation, the statistic bG matches.

Checkpoints are a little-endian binary container of named float64 tensors
plus a config hash and epoch counter; loading into a model verifies shapes.
"""

import struct

import numpy as np

from . import autodiff as ad
from .errors import DomainError, FormatError
from .layers import EVAL, TRAIN, BatchNorm, Dense, GaussianNoise, WeightNormDense, check_mode


class ModelProfile:
    """Architecture hyperparameters shared by builders, checkpoints, config."""

    def __init__(
        self,
        input_dim,
        num_classes,
        latent_dim,
        gen_hidden,
        trunk_hidden,
        noise_input_sigma=0.3,
        noise_hidden_sigma=0.5,
        leaky_slope=0.2,
        d_clamp=1e-7,
    ):
        if num_classes < 2:
            raise DomainError(f"need at least 2 classes, got {num_classes}")
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.latent_dim = int(latent_dim)
        self.gen_hidden = tuple(int(w) for w in gen_hidden)
        self.trunk_hidden = tuple(int(w) for w in trunk_hidden)
        self.noise_input_sigma = float(noise_input_sigma)
        self.noise_hidden_sigma = float(noise_hidden_sigma)
        self.leaky_slope = float(leaky_slope)
        self.d_clamp = float(d_clamp)


def mnist_profile(latent_dim=100):
    """28x28 grayscale profile: 3x500 softplus generators, 1000/500/250/250/250 trunks."""
    return ModelProfile(
        input_dim=784,
        num_classes=10,
        latent_dim=latent_dim,
        gen_hidden=(500, 500, 500),
        trunk_hidden=(1000, 500, 250, 250, 250),
    )


def synthetic_profile(input_dim=2, num_classes=2, latent_dim=16, width=64, depth=2):
    """Small profile for 2-D point clouds: every player gets `depth` hidden layers."""
    return ModelProfile(
        input_dim=input_dim,
        num_classes=num_classes,
        latent_dim=latent_dim,
        gen_hidden=(width,) * depth,
        trunk_hidden=(width,) * depth,
    )


def one_hot(labels, num_classes):
    """1-based labels {1..K} -> (B, K) one-hot float64 rows."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DomainError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise DomainError(
            f"labels must lie in 1..{num_classes}, saw range [{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels.astype(int) - 1] = 1.0
    return out


def check_one_hot(y, num_classes, who):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != num_classes:
        raise DomainError(f"{who}: one-hot batch must be (B, {num_classes}), got {y.shape}")
    ok = np.all((y == 0.0) | (y == 1.0)) and np.all(y.sum(axis=1) == 1.0)
    if not ok:
        raise DomainError(f"{who}: rows must contain exactly one 1 and zeros elsewhere")
    return y


class Generator:
    """Dense -> BatchNorm -> softplus hidden stack, Dense -> sigmoid output."""

    def __init__(self, in_dim, hidden, out_dim, rng):
        self.hidden = []
        prev = in_dim
        for width in hidden:
            self.hidden.append((Dense(prev, width, rng), BatchNorm(width)))
            prev = width
        self.out = Dense(prev, out_dim, rng)

    def forward(self, x, mode=TRAIN):
        check_mode(mode)
        h = ad.as_tensor(x)
        for dense, bn in self.hidden:
            h = ad.softplus(bn.forward(dense.forward(h), mode))
        return ad.sigmoid(self.out.forward(h))

    def params(self, prefix):
        for i, (dense, bn) in enumerate(self.hidden):
            yield from dense.params(f"{prefix}.h{i}")
            yield from bn.params(f"{prefix}.h{i}_bn")
        yield from self.out.params(f"{prefix}.out")

    def state(self, prefix):
        for i, (_, bn) in enumerate(self.hidden):
            yield from bn.state(f"{prefix}.h{i}_bn")


class Trunk:
    """Noise -> weight-norm dense -> leaky ReLU blocks, plus a linear head.

    forward returns (head preactivation, last hidden activation); the
    classifier reads logits from the head, the discriminator squashes it.
    """

    def __init__(self, in_dim, hidden, head_dim, input_sigma, hidden_sigma, slope, rng):
        self.blocks = []
        prev = in_dim
        for i, width in enumerate(hidden):
            sigma = input_sigma if i == 0 else hidden_sigma
            self.blocks.append((GaussianNoise(sigma), WeightNormDense(prev, width, rng)))
            prev = width
        self.head_noise = GaussianNoise(hidden_sigma)
        self.head = WeightNormDense(prev, head_dim, rng)
        self.slope = slope

    def forward(self, x, mode=TRAIN, rng=None):
        check_mode(mode)
        h = ad.as_tensor(x)
        for noise, dense in self.blocks:
            h = ad.leaky_relu(dense.forward(noise.forward(h, mode, rng)), self.slope)
        features = h
        head = self.head.forward(self.head_noise.forward(h, mode, rng))
        return head, features

    def params(self, prefix):
        for i, (_, dense) in enumerate(self.blocks):
            yield from dense.params(f"{prefix}.b{i}")
        yield from self.head.params(f"{prefix}.head")

    def state(self, prefix):
        return iter(())


class FourPlayerModel:
    """Holds the four players and routes their forwards and parameters."""

    def __init__(self, profile, seed):
        self.profile = profile
        streams = np.random.SeedSequence([int(seed)]).spawn(4)
        rng_gg, rng_bg, rng_c, rng_d = (np.random.default_rng(s) for s in streams)
        k = profile.num_classes
        self.gg = Generator(profile.latent_dim + k, profile.gen_hidden, profile.input_dim, rng_gg)
        self.bg = Generator(profile.latent_dim, profile.gen_hidden, profile.input_dim, rng_bg)
        self.clf = Trunk(
            profile.input_dim, profile.trunk_hidden, k,
            profile.noise_input_sigma, profile.noise_hidden_sigma, profile.leaky_slope, rng_c,
        )
        self.disc = Trunk(
            profile.input_dim + k, profile.trunk_hidden, 1,
            profile.noise_input_sigma, profile.noise_hidden_sigma, profile.leaky_slope, rng_d,
        )

    def gg_forward(self, z, y_onehot, mode=TRAIN):
        y = check_one_hot(y_onehot, self.profile.num_classes, "gG")
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (y.shape[0], self.profile.latent_dim):
            raise DomainError(
                f"gG: z must be (B, {self.profile.latent_dim}) matching the labels, got {z.shape}"
            )
        return self.gg.forward(ad.Tensor(np.concatenate([z, y], axis=1)), mode)

    def bg_forward(self, z, mode=TRAIN):
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.profile.latent_dim:
            raise DomainError(f"bG: z must be (B, {self.profile.latent_dim}), got {z.shape}")
        return self.bg.forward(ad.Tensor(z), mode)

    def c_forward(self, x, mode=TRAIN, rng=None):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.profile.input_dim:
            raise DomainError(f"C: input must be (B, {self.profile.input_dim}), got {x.data.shape}")
        return self.clf.forward(x, mode, rng)

    def d_forward(self, x, y_onehot, mode=TRAIN, rng=None):
        y = check_one_hot(y_onehot, self.profile.num_classes, "D")
        x = ad.as_tensor(x)
        if x.data.shape != (y.shape[0], self.profile.input_dim):
            raise DomainError(
                f"D: input must be (B, {self.profile.input_dim}) aligned with labels, got {x.data.shape}"
            )
        pair = ad.concat(x, ad.Tensor(y), axis=1)
        head, _ = self.disc.forward(pair, mode, rng)
        logit = ad.reshape(head, (y.shape[0],))
        eps = self.profile.d_clamp
        return ad.clamp(ad.sigmoid(logit), eps, 1.0 - eps)

    _PLAYERS = ("gG", "bG", "C", "D")

    def player_params(self, player):
        if player == "gG":
            return list(self.gg.params("gG"))
        if player == "bG":
            return list(self.bg.params("bG"))
        if player == "C":
            return list(self.clf.params("C"))
        if player == "D":
            return list(self.disc.params("D"))
        raise DomainError(f"unknown player {player!r}, expected one of {self._PLAYERS}")

    def named_params(self):
        out = []
        for p in self._PLAYERS:
            out.extend(self.player_params(p))
        return out

    def named_state(self):
        return list(self.gg.state("gG")) + list(self.bg.state("bG"))

    def all_param_tensors(self):
        return [t for _, t in self.named_params()]

    def tensors_for_checkpoint(self):
        out = {name: t.data for name, t in self.named_params()}
        out.update({name: arr for name, arr in self.named_state()})
        return out

    def load_tensors(self, tensors):
        """Copy checkpoint arrays into the model; unknown extras are ignored."""
        for name, t in self.named_params():
            if name not in tensors:
                raise FormatError(f"checkpoint is missing tensor {name!r}")
            arr = tensors[name]
            if arr.shape != t.data.shape:
                raise DomainError(
                    f"checkpoint tensor {name!r} has shape {arr.shape}, model expects {t.data.shape}"
                )
            t.data = arr.copy()
        for gen, prefix in ((self.gg, "gG"), (self.bg, "bG")):
            for i, (_, bn) in enumerate(gen.hidden):
                for suffix in ("running_mean", "running_var"):
                    name = f"{prefix}.h{i}_bn.{suffix}"
                    if name not in tensors:
                        raise FormatError(f"checkpoint is missing tensor {name!r}")
                    arr = tensors[name]
                    if arr.shape != getattr(bn, suffix).shape:
                        raise DomainError(
                            f"checkpoint tensor {name!r} has shape {arr.shape}, "
                            f"model expects {getattr(bn, suffix).shape}"
                        )
                    setattr(bn, suffix, arr.copy())


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"UGANCKPT"
_VERSION = 1


def save_checkpoint(path, tensors, config_hash="", epoch=-1):
    """Write named float64 tensors to a versioned little-endian container."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Iq", _VERSION, int(epoch)))
        hash_bytes = config_hash.encode("utf-8")
        fh.write(struct.pack("<H", len(hash_bytes)))
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            # asarray keeps 0-d ranks intact (ascontiguousarray would promote to 1-d)
            arr = np.asarray(tensors[name], dtype="<f8", order="C")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, config_hash, epoch)."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise FormatError(f"cannot open checkpoint {path}: {exc}")
    with fh:
        if _read_exact(fh, 8, "magic") != _MAGIC:
            raise FormatError(f"{path}: not a ugan checkpoint (bad magic)")
        version, epoch = struct.unpack("<Iq", _read_exact(fh, 12, "header"))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        (hash_len,) = struct.unpack("<H", _read_exact(fh, 2, "hash length"))
        config_hash = _read_exact(fh, hash_len, "config hash").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "shape"))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            payload = _read_exact(fh, 8 * size, f"payload of {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor")
    return tensors, config_hash, epoch
