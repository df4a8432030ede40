"""Pre-norm Vision Transformer encoder over token sequences.

The encoder follows the standard recipe: linear token projection, optional
learnable positional embedding, optional prepended class token, L pre-norm
blocks of multi-head self-attention and a GELU MLP with residual connections,
a final layer norm, then either the class-token state or the mean over all
token states feeding a linear classification head.

Inputs must already be scaled to [0, 1]: raw 0-255 channel values are divided
by 255 at this boundary (:func:`prepare_inputs`); chromaticity values pass
through unchanged.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numeric as num
from .errors import ConfigError
from .numeric import Tensor
from .tokenizer import TokenSequence

LAYER_NORM_EPS = 1e-5
INIT_STD = 0.02

# std of a unit normal truncated to +/- 2 sigma; used to rescale draws so the
# post-truncation standard deviation equals INIT_STD exactly.
_TRUNC_STD_FACTOR = 0.8796256610342398

AGGREGATIONS = ("cls", "gap")


@dataclass
class ModelConfig:
    """Encoder hyperparameters plus the token geometry they act on."""

    num_classes: int
    num_tokens: int             # N, sequence length before any class token
    token_dim: int              # D_in
    dim: int = 256              # D
    layers: int = 6             # L
    heads: int = 8
    mlp_width: int = 512
    dropout: float = 0.1
    use_pos_enc: bool = True
    aggregation: str = "cls"

    def validate(self) -> None:
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, "
                              f"got '{self.aggregation}'")
        if self.dim % self.heads != 0:
            raise ConfigError(f"embedding dim {self.dim} is not divisible by "
                              f"{self.heads} heads")
        for name in ("num_classes", "num_tokens", "token_dim", "dim", "layers",
                     "heads", "mlp_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def seq_len(self) -> int:
        """Tokens entering the blocks (the class token adds one slot)."""
        return self.num_tokens + 1 if self.aggregation == "cls" else self.num_tokens


class ModelParams:
    """Named parameter tensors in a fixed, seed-reproducible order."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self) -> list[str]:
        return list(self.tensors)

    def num_elements(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config,
                           {k: num.parameter(t.data.copy()) for k, t in self.tensors.items()})

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Normal draw truncated at two parent sigmas, rescaled so the resulting
    sample standard deviation is ``std``."""
    parent = std / _TRUNC_STD_FACTOR
    out = rng.normal(0.0, parent, size=shape)
    bad = np.abs(out) > 2.0 * parent
    while bad.any():
        out[bad] = rng.normal(0.0, parent, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * parent
    return out


def param_spec(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, kind) list; kind is weight|zeros|ones.

    The order is the seed-draw order of :func:`init` and the storage order of
    checkpoints.
    """
    d, f = config.dim, config.mlp_width
    spec: list[tuple[str, tuple[int, ...], str]] = [
        ("embed.weight", (config.token_dim, d), "weight"),
        ("embed.bias", (d,), "zeros"),
    ]
    if config.aggregation == "cls":
        spec.append(("cls_token", (d,), "weight"))
    if config.use_pos_enc:
        spec.append(("pos_embedding", (config.seq_len, d), "weight"))
    for layer in range(config.layers):
        p = f"block{layer}."
        spec += [
            (p + "ln1.gain", (d,), "ones"),
            (p + "ln1.bias", (d,), "zeros"),
            (p + "qkv.weight", (d, 3 * d), "weight"),
            (p + "qkv.bias", (3 * d,), "zeros"),
            (p + "attn_out.weight", (d, d), "weight"),
            (p + "attn_out.bias", (d,), "zeros"),
            (p + "ln2.gain", (d,), "ones"),
            (p + "ln2.bias", (d,), "zeros"),
            (p + "mlp.fc1.weight", (d, f), "weight"),
            (p + "mlp.fc1.bias", (f,), "zeros"),
            (p + "mlp.fc2.weight", (f, d), "weight"),
            (p + "mlp.fc2.bias", (d,), "zeros"),
        ]
    spec += [
        ("final_ln.gain", (d,), "ones"),
        ("final_ln.bias", (d,), "zeros"),
        ("head.weight", (d, config.num_classes), "weight"),
        ("head.bias", (config.num_classes,), "zeros"),
    ]
    return spec


def init(config: ModelConfig, seed: int) -> ModelParams:
    """Draw parameters deterministically: truncated-normal weights, zero
    biases, unit layer-norm gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    makers = {"weight": lambda shape: _trunc_normal(rng, shape, INIT_STD),
              "zeros": np.zeros, "ones": np.ones}
    tensors = {name: num.parameter(makers[kind](shape))
               for name, shape, kind in param_spec(config)}
    return ModelParams(config, tensors)


def prepare_inputs(tokens: np.ndarray, normalization: str) -> np.ndarray:
    """Scale token values to [0, 1] at the model boundary."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if normalization == "raw":
        return tokens / 255.0
    return tokens


def forward_batch(params: ModelParams, tokens: np.ndarray, training: bool = False,
                  rng: np.random.Generator | None = None,
                  attn_sink: list | None = None) -> Tensor:
    """Run the encoder on a (B, N, D_in) batch; returns (B, C) logits.

    ``attn_sink``, when given, collects each layer's post-softmax attention
    weights as plain arrays (for inspection; eval use).
    """
    cfg = params.config
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim == 2:
        tokens = tokens[None]
    if tokens.ndim != 3 or tokens.shape[1] != cfg.num_tokens \
            or tokens.shape[2] != cfg.token_dim:
        raise ConfigError(
            f"token batch shape {tokens.shape} does not match model geometry "
            f"(N={cfg.num_tokens}, D_in={cfg.token_dim})")
    b = tokens.shape[0]
    d, heads = cfg.dim, cfg.heads
    head_dim = d // heads
    rate = cfg.dropout

    x = Tensor(tokens)
    h = num.add(num.matmul(x, params["embed.weight"]), params["embed.bias"])
    if cfg.aggregation == "cls":
        cls = num.broadcast_to(num.reshape(params["cls_token"], (1, 1, d)), (b, 1, d))
        h = num.concat([cls, h], axis=1)
    if cfg.use_pos_enc:
        h = num.add(h, params["pos_embedding"])
    s = cfg.seq_len

    for layer in range(cfg.layers):
        p = f"block{layer}."
        normed = num.layer_norm(h, params[p + "ln1.gain"], params[p + "ln1.bias"],
                                LAYER_NORM_EPS)
        qkv = num.add(num.matmul(normed, params[p + "qkv.weight"]),
                      params[p + "qkv.bias"])
        parts = []
        for i in range(3):
            part = num.narrow(qkv, 2, i * d, d)
            part = num.transpose(num.reshape(part, (b, s, heads, head_dim)), (0, 2, 1, 3))
            parts.append(part)
        q, k, v = parts
        scores = num.scale(num.matmul(q, num.transpose(k, (0, 1, 3, 2))),
                           1.0 / math.sqrt(head_dim))
        attn = num.softmax(scores)
        if attn_sink is not None:
            attn_sink.append(attn.data)
        attn = num.dropout(attn, rate, training, rng)
        context = num.matmul(attn, v)
        context = num.reshape(num.transpose(context, (0, 2, 1, 3)), (b, s, d))
        projected = num.add(num.matmul(context, params[p + "attn_out.weight"]),
                            params[p + "attn_out.bias"])
        h = num.add(h, projected)

        normed = num.layer_norm(h, params[p + "ln2.gain"], params[p + "ln2.bias"],
                                LAYER_NORM_EPS)
        hidden = num.add(num.matmul(normed, params[p + "mlp.fc1.weight"]),
                         params[p + "mlp.fc1.bias"])
        hidden = num.dropout(num.gelu(hidden), rate, training, rng)
        hidden = num.add(num.matmul(hidden, params[p + "mlp.fc2.weight"]),
                         params[p + "mlp.fc2.bias"])
        hidden = num.dropout(hidden, rate, training, rng)
        h = num.add(h, hidden)

    h = num.layer_norm(h, params["final_ln.gain"], params["final_ln.bias"],
                       LAYER_NORM_EPS)
    if cfg.aggregation == "cls":
        pooled = num.reshape(num.narrow(h, 1, 0, 1), (b, d))
    else:
        pooled = num.mean(h, axis=1)
    return num.add(num.matmul(pooled, params["head.weight"]), params["head.bias"])


def forward(params: ModelParams, tokens: TokenSequence, training: bool = False,
            rng: np.random.Generator | None = None) -> Tensor:
    """Single-sample logits of shape (num_classes,)."""
    logits = forward_batch(params, tokens.tokens[None], training=training, rng=rng)
    return num.reshape(logits, (params.config.num_classes,))


def predict(params: ModelParams, tokens: TokenSequence) -> tuple[int, np.ndarray]:
    """Eval-mode class decision: (argmax class id, softmax probabilities).

    Ties break toward the lowest class index.
    """
    with num.no_grad():
        logits = forward(params, tokens, training=False)
        probs = num.softmax(logits).data
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# checkpointing

_CHECKPOINT_FORMAT = "phenovit-checkpoint-v1"


def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape),
            "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")}


def _decode(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(payload["shape"]).copy()


def save_checkpoint(params: ModelParams, path: str | Path,
                    lineage: dict | None = None) -> None:
    """Write config, seed lineage, and every named tensor; bit-exact round trip."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "config": asdict(params.config),
        "lineage": lineage or {},
        "params": {name: _encode(t.data) for name, t in params.items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ConfigError(f"unrecognized checkpoint format in {path}")
    config = ModelConfig(**payload["config"])
    stored = payload["params"]
    expected = [name for name, _, _ in param_spec(config)]
    missing = [name for name in expected if name not in stored]
    extra = [name for name in stored if name not in expected]
    if missing or extra:
        raise ConfigError(f"checkpoint params disagree with config "
                          f"(missing {missing}, unexpected {extra})")
    tensors = {name: num.parameter(_decode(stored[name])) for name in expected}
    return ModelParams(config, tensors), payload.get("lineage", {})
