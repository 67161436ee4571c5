"""Config-driven Fourier-Transformer classifier for multivariate series.

Layer order for a config::

    EMBED [BN ACT] -> FFT x n_fft -> (MHA [BN ACT]) x n_mha -> IFFT x n_ifft
        -> (FFN [BN ACT]) x n_ffn -> GAP -> classifier

Every one of the eight modules can be switched off. Removing EMBED swaps the
learned convolution for a fixed random projection to ``embed_dim``; removing
GAP reads the classifier off the final time step. Neither replacement has
learnable parameters.

The embedding kernel defaults to 3. With a kernel of 1 and GAP present every
layer commutes with the time re-indexing ``t -> a*t mod L`` (``a`` coprime to
``L``), so e.g. 1 and 3 cycles per window are indistinguishable.
"""

from __future__ import annotations

import enum
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import BNState, Tensor
from .exceptions import ConfigurationError, DataError, DimensionError
from .spectral import spectral_forward, spectral_inverse

__all__ = [
    "ModuleKind",
    "ModelConfig",
    "Model",
    "build_model",
    "param_count",
    "module_param_contribution",
    "mha_forward",
    "ffn_forward",
    "gap_forward",
    "save_checkpoint",
    "load_checkpoint",
    "SEARCH_SPACE",
]

CHECKPOINT_VERSION = 1

SEARCH_SPACE = {
    "learning_rate": (1e-3, 5e-3, 1e-4, 5e-4, 1e-5, 5e-5),
    "dropout": (0.1, 0.2, 0.3),
    "batch_size": (8, 16, 32),
    "num_heads": (4, 8, 16),
    "layers_fft": (0, 1, 2, 3, 4),
    "layers_ifft": (0, 1, 2, 3, 4),
    "layers_mha": (0, 1, 2, 3, 4),
    "layers_ffn": (0, 1, 2, 3, 4),
}


class ModuleKind(str, enum.Enum):
    EMBED = "EMBED"
    FFT = "FFT"
    IFFT = "IFFT"
    MHA = "MHA"
    FFN = "FFN"
    GAP = "GAP"
    BN = "BN"
    ACT = "ACT"

    def __str__(self):
        return self.value


_LAYER_FIELDS = {
    ModuleKind.FFT: "layers_fft",
    ModuleKind.IFFT: "layers_ifft",
    ModuleKind.MHA: "layers_mha",
    ModuleKind.FFN: "layers_ffn",
}
_FLAG_FIELDS = {
    ModuleKind.EMBED: "include_embed",
    ModuleKind.GAP: "include_gap",
    ModuleKind.BN: "include_bn",
    ModuleKind.ACT: "include_act",
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture genome: one point of the hyperparameter grid."""

    input_dims: int = 1
    seq_len: int = 2
    num_classes: int = 2
    embed_dim: int = 16
    num_heads: int = 4
    layers_fft: int = 1
    layers_ifft: int = 1
    layers_mha: int = 1
    layers_ffn: int = 1
    include_embed: bool = True
    include_gap: bool = True
    include_bn: bool = True
    include_act: bool = True
    dropout: float = 0.1
    ffn_hidden_dim: int = 32
    embed_kernel: int = 3
    spectral_norm: str = "ortho"

    @property
    def d_model(self):
        return self.embed_dim

    @property
    def d_k(self):
        return self.embed_dim // self.num_heads

    d_v = d_k

    @property
    def embed_padding(self):
        return self.embed_kernel // 2

    @property
    def time_steps(self):
        """Sequence length after the embedding stage."""
        if not self.include_embed:
            return self.seq_len
        return self.seq_len + 2 * self.embed_padding - self.embed_kernel + 1

    def validate(self, paper_protocol=False):
        problems = []
        for name in ("input_dims", "seq_len", "embed_dim", "num_heads",
                     "ffn_hidden_dim", "embed_kernel"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        for name in _LAYER_FIELDS.values():
            if not 0 <= getattr(self, name) <= 4:
                problems.append(f"{name} must be in 0..4")
        if self.layers_mha > 0 and self.num_heads >= 1 and self.embed_dim % self.num_heads:
            problems.append(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.spectral_norm not in ("backward", "ortho"):
            problems.append("spectral_norm must be 'backward' or 'ortho'")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must be in [0, 1)")
        if self.include_embed and self.time_steps < 1:
            problems.append("embed_kernel longer than the padded sequence")
        if paper_protocol:
            if self.num_heads not in SEARCH_SPACE["num_heads"]:
                problems.append(f"num_heads must be one of {list(SEARCH_SPACE['num_heads'])}")
            if self.dropout not in SEARCH_SPACE["dropout"]:
                problems.append(f"dropout must be one of {list(SEARCH_SPACE['dropout'])}")
        if problems:
            raise ConfigurationError("invalid ModelConfig: " + "; ".join(problems))
        return self

    def modules_present(self):
        present = {k for k, f in _LAYER_FIELDS.items() if getattr(self, f) > 0}
        present |= {k for k, f in _FLAG_FIELDS.items() if getattr(self, f)}
        return frozenset(present)

    def without(self, *kinds):
        """Copy of this config with the given modules removed."""
        changes = {}
        for kind in kinds:
            kind = ModuleKind(kind)
            if kind in _LAYER_FIELDS:
                changes[_LAYER_FIELDS[kind]] = 0
            else:
                changes[_FLAG_FIELDS[kind]] = False
        return replace(self, **changes)

    def only(self, kinds, layers=1):
        """Copy keeping exactly ``kinds`` (layered modules at ``layers`` deep)."""
        kinds = {ModuleKind(k) for k in kinds}
        changes = {f: (layers if k in kinds else 0) for k, f in _LAYER_FIELDS.items()}
        changes.update({f: k in kinds for k, f in _FLAG_FIELDS.items()})
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def module_param_contribution(cfg: ModelConfig, kind) -> int:
    """Learnable parameters attributable to one module kind in ``cfg``."""
    kind = ModuleKind(kind)
    d, dk, h = cfg.d_model, cfg.d_k, cfg.num_heads
    bn_site = 2 * d if cfg.include_bn else 0
    if kind is ModuleKind.EMBED:
        if not cfg.include_embed:
            return 0
        return cfg.input_dims * d * cfg.embed_kernel + d
    if kind is ModuleKind.MHA:
        per_layer = h * (3 * d * dk) + 3 * h * dk + (h * dk) * d + d + bn_site
        return cfg.layers_mha * per_layer
    if kind is ModuleKind.FFN:
        H = cfg.ffn_hidden_dim
        return cfg.layers_ffn * (d * H + H + H * d + d + bn_site)
    if kind is ModuleKind.BN:
        if not cfg.include_bn:
            return 0
        return 2 * d * (1 + cfg.layers_mha + cfg.layers_ffn)
    return 0


def param_count(cfg: ModelConfig) -> int:
    """Analytic learnable-parameter count for ``cfg``.

    BN parameters are counted once: under BN for the embedding site and
    inside the MHA/FFN contributions for the per-block sites.
    """
    d = cfg.d_model
    total = module_param_contribution(cfg, ModuleKind.EMBED)
    total += module_param_contribution(cfg, ModuleKind.MHA)
    total += module_param_contribution(cfg, ModuleKind.FFN)
    if cfg.include_bn:
        total += 2 * d
    return total + d * cfg.num_classes + cfg.num_classes


# functional blocks --------------------------------------------------------


def mha_forward(x, params, num_heads, rng=None, dropout=0.0, training=False, attn_out=None):
    """Multi-head self-attention with Q = K = V = ``x``.

    ``params`` holds ``wq, wk, wv`` of shape ``[d_model, h*d_k]``, ``wo`` of
    shape ``[h*d_v, d_model]`` and their biases. If ``attn_out`` is a list the
    attention weights ``[batch, h, n, n]`` are appended to it.
    """
    x = ad.as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"mha expects [batch, n, d_model], got {x.shape}")
    b, n, d = x.shape
    hd = params["wq"].shape[1]
    if params["wq"].shape[0] != d or hd % num_heads:
        raise DimensionError(
            f"mha weight {params['wq'].shape} incompatible with input {x.shape} and {num_heads} heads"
        )
    dk = hd // num_heads

    def heads(w, bias):
        y = ad.matmul(x, w) + bias
        return y.reshape(b, n, num_heads, dk).transpose(0, 2, 1, 3)

    q = heads(params["wq"], params["bq"])
    k = heads(params["wk"], params["bk"])
    v = heads(params["wv"], params["bv"])
    scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    if attn_out is not None:
        attn_out.append(attn.data)
    ctx = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, hd)
    out = ad.matmul(ctx, params["wo"]) + params["bo"]
    if rng is not None:
        out = ad.dropout(out, dropout, rng, training)
    return out


def ffn_forward(x, params, rng=None, dropout=0.0, training=False):
    """Position-wise feed-forward: conv(k=1) -> gelu -> conv(k=1)."""
    x = ad.as_tensor(x)
    h = ad.conv1d(x.transpose(0, 2, 1), params["w1"], params["b1"])
    h = ad.gelu(h)
    if rng is not None:
        h = ad.dropout(h, dropout, rng, training)
    h = ad.conv1d(h, params["w2"], params["b2"])
    return h.transpose(0, 2, 1)


def gap_forward(x):
    """Global average pooling over the time axis of ``[batch, time, feat]``."""
    x = ad.as_tensor(x)
    if x.ndim != 3 or x.shape[1] < 1:
        raise DimensionError(f"gap expects [batch, time>=1, feat], got {x.shape}")
    return ad.mean(x, axis=1)


# model ----------------------------------------------------------------------


class Model:
    """Layer stack plus named parameter registry built from a ModelConfig."""

    def __init__(self, cfg: ModelConfig, seed=0):
        self.cfg = cfg.validate()
        self.seed = seed
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.bn_states: "OrderedDict[str, BNState]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.training = True
        self.last_attention = []
        self._init_rng = np.random.default_rng(seed)
        self.rng = np.random.default_rng([seed, 1])
        self.steps = []
        self._build()
        del self._init_rng

    # construction --------------------------------------------------------
    def _uniform(self, name, shape, fan_in):
        bound = math.sqrt(1.0 / fan_in)
        self.params[name] = Tensor(
            self._init_rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name
        )

    def _add_bn(self, site):
        d = self.cfg.d_model
        self.params[f"{site}.bn.gamma"] = Tensor(np.ones(d), requires_grad=True)
        self.params[f"{site}.bn.beta"] = Tensor(np.zeros(d), requires_grad=True)
        self.bn_states[site] = BNState(d)

    def _post_block(self, site):
        if self.cfg.include_bn:
            self._add_bn(site)
            self.steps.append(("bn", site))
        if self.cfg.include_act:
            self.steps.append(("act", site))

    def _build(self):
        cfg = self.cfg
        d, D = cfg.d_model, cfg.input_dims
        if cfg.include_embed:
            k = cfg.embed_kernel
            self._uniform("embed.weight", (d, D, k), D * k)
            self._uniform("embed.bias", (d,), D * k)
            self.steps.append(("embed", "embed"))
        else:
            proj_rng = np.random.default_rng([self.seed, 2])
            bound = math.sqrt(1.0 / D)
            self.buffers["lift.projection"] = proj_rng.uniform(-bound, bound, size=(D, d))
            self.steps.append(("lift", "embed"))
        self._post_block("embed")

        for _ in range(cfg.layers_fft):
            self.steps.append(("fft", None))
        hd = cfg.num_heads * cfg.d_k
        for i in range(cfg.layers_mha):
            site = f"mha{i}"
            for w in ("q", "k", "v"):
                self._uniform(f"{site}.w{w}", (d, hd), d)
                self._uniform(f"{site}.b{w}", (hd,), d)
            self._uniform(f"{site}.wo", (hd, d), hd)
            self._uniform(f"{site}.bo", (d,), hd)
            self.steps.append(("mha", site))
            self._post_block(site)
        for _ in range(cfg.layers_ifft):
            self.steps.append(("ifft", None))
        H = cfg.ffn_hidden_dim
        for i in range(cfg.layers_ffn):
            site = f"ffn{i}"
            self._uniform(f"{site}.w1", (H, d, 1), d)
            self._uniform(f"{site}.b1", (H,), d)
            self._uniform(f"{site}.w2", (d, H, 1), H)
            self._uniform(f"{site}.b2", (d,), H)
            self.steps.append(("ffn", site))
            self._post_block(site)
        self.steps.append(("gap" if cfg.include_gap else "last", None))
        self._uniform("classifier.weight", (d, cfg.num_classes), d)
        self._uniform("classifier.bias", (cfg.num_classes,), d)

    # bookkeeping -----------------------------------------------------------
    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def parameters(self):
        return list(self.params.values())

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def reseed(self, seed):
        """Restart the dropout stream."""
        self.rng = np.random.default_rng([seed, 1])

    def state_dict(self):
        state = OrderedDict((k, p.data.copy()) for k, p in self.params.items())
        for site, st in self.bn_states.items():
            state[f"{site}.bn.running_mean"] = st.running_mean.copy()
            state[f"{site}.bn.running_var"] = st.running_var.copy()
        for k, v in self.buffers.items():
            state[k] = v.copy()
        return state

    def load_state_dict(self, state):
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise DimensionError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for site, st in self.bn_states.items():
            st.running_mean = np.array(state[f"{site}.bn.running_mean"], dtype=np.float64)
            st.running_var = np.array(state[f"{site}.bn.running_var"], dtype=np.float64)
        for k in self.buffers:
            self.buffers[k] = np.array(state[k], dtype=np.float64)

    def _sub(self, site):
        prefix = site + "."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    # forward -----------------------------------------------------------------
    def forward(self, x, training=None):
        """Logits ``[batch, num_classes]`` for ``x`` of shape ``[batch, time, dims]``."""
        cfg = self.cfg
        training = self.training if training is None else training
        x = ad.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.input_dims):
            raise DimensionError(
                f"expected input [batch, {cfg.seq_len}, {cfg.input_dims}], got {x.shape}"
            )
        self.last_attention = []
        P = self.params
        h = x
        for op, site in self.steps:
            if op == "embed":
                h = ad.conv1d(
                    h.transpose(0, 2, 1), P["embed.weight"], P["embed.bias"],
                    padding=cfg.embed_padding,
                ).transpose(0, 2, 1)
            elif op == "lift":
                h = ad.matmul(h, Tensor(self.buffers["lift.projection"]))
            elif op == "bn":
                h = ad.batchnorm(
                    h, P[f"{site}.bn.gamma"], P[f"{site}.bn.beta"],
                    self.bn_states[site], training=training, axis=-1,
                )
            elif op == "act":
                h = ad.gelu(h)
            elif op == "fft":
                h = spectral_forward(h, cfg.spectral_norm)
            elif op == "ifft":
                h = spectral_inverse(h, cfg.spectral_norm)
            elif op == "mha":
                h = mha_forward(
                    h, self._sub(site), cfg.num_heads, self.rng, cfg.dropout,
                    training, self.last_attention,
                )
            elif op == "ffn":
                h = ffn_forward(h, self._sub(site), self.rng, cfg.dropout, training)
            elif op == "gap":
                h = gap_forward(h)
            elif op == "last":
                h = h[:, -1, :]
        return ad.matmul(h, P["classifier.weight"]) + P["classifier.bias"]

    __call__ = forward

    def predict_proba(self, x):
        logits = self.forward(x, training=False)
        return ad.softmax(logits, axis=-1).data

    def predict(self, x):
        return np.argmax(self.forward(x, training=False).data, axis=-1)


def build_model(cfg: ModelConfig, seed=0) -> Model:
    return Model(cfg, seed)


# checkpoints ----------------------------------------------------------------


def save_checkpoint(model: Model, path):
    """Write a versioned text checkpoint.

    Layout, one item per line::

        fourier-mts-checkpoint <version>
        config <json>
        seed <int>
        tensor <name> <d0,d1,...>
        <space separated float reprs>
        ...
    """
    lines = [
        f"fourier-mts-checkpoint {CHECKPOINT_VERSION}",
        "config " + json.dumps(model.cfg.to_dict(), sort_keys=True),
        f"seed {model.seed}",
    ]
    for name, arr in model.state_dict().items():
        lines.append(f"tensor {name} {','.join(str(n) for n in arr.shape)}")
        lines.append(" ".join(repr(float(v)) for v in arr.reshape(-1)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != "fourier-mts-checkpoint":
        raise DataError(f"{path}: not a checkpoint file")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {head[1]}")
    cfg = ModelConfig.from_dict(json.loads(lines[1][len("config "):]))
    seed = int(lines[2].split()[1])
    state = {}
    i = 3
    while i < len(lines):
        _, name, dims = lines[i].split(" ")
        shape = tuple(int(s) for s in dims.split(",")) if dims else ()
        values = np.array([float(v) for v in lines[i + 1].split()], dtype=np.float64)
        state[name] = values.reshape(shape)
        i += 2
    model = Model(cfg, seed)
    model.load_state_dict(state)
    return model
