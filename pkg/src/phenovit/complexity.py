"""Closed-form parameter and inference-FLOP accounting.

Counts follow fixed conventions (see :mod:`phenovit.numeric`): a p x q by
q x r matmul costs 2*p*q*r operations, layer norm 8 ops per element, softmax
5, GELU 10, elementwise adds 1. Dropout is an eval-mode identity and the
prediction softmax/argmax are excluded, so the totals equal an instrumented
eval-mode forward pass exactly. Published figures for the two canonical
survey configurations are attached as reference only: external tools often
count one multiply-accumulate as a single operation, roughly halving totals.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .model import ModelConfig
from .sampler import WindowSpec
from .tokenizer import sequence_geometry

# Externally reported (params in millions, FLOPs in billions) for the two
# canonical configurations, keyed by (series length M, square window k).
# Convention differs from ours (multiply-accumulate counting); context only.
REFERENCE_COSTS = {
    (13, 13): {"params_m": 1.72, "flops_g": 0.05},
    (36, 25): {"params_m": 2.07, "flops_g": 0.16},
}
REFERENCE_NOTE = ("reference values use a multiply-accumulate counting "
                  "convention and a different parameter tally; this report "
                  "counts multiplies and adds separately. Shown for context, "
                  "not compared numerically.")


@dataclass
class CostReport:
    """Exact integer parameter and per-sample inference FLOP counts."""

    params: int
    flops: int
    params_breakdown: dict[str, int] = field(default_factory=dict)
    flops_breakdown: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"params": self.params, "flops": self.flops,
                "params_breakdown": self.params_breakdown,
                "flops_breakdown": self.flops_breakdown}


def params_breakdown(cfg: ModelConfig) -> dict[str, int]:
    cfg.validate()
    d, f, c, l = cfg.dim, cfg.mlp_width, cfg.num_classes, cfg.layers
    s = cfg.seq_len
    return {
        "embedding": cfg.token_dim * d + d,
        "cls_token": d if cfg.aggregation == "cls" else 0,
        "pos_enc": s * d if cfg.use_pos_enc else 0,
        "attention": l * ((d * 3 * d + 3 * d) + (d * d + d)),
        "mlp": l * ((d * f + f) + (f * d + d)),
        "layer_norm": l * 4 * d + 2 * d,
        "head": d * c + c,
    }


def count_params(cfg: ModelConfig) -> int:
    """Learnable weight census, exactly matching parameter enumeration."""
    return sum(params_breakdown(cfg).values())


def flops_breakdown(cfg: ModelConfig) -> dict[str, int]:
    cfg.validate()
    d, f, c, l, h = cfg.dim, cfg.mlp_width, cfg.num_classes, cfg.layers, cfg.heads
    n, s = cfg.num_tokens, cfg.seq_len
    attention_per_layer = (
        6 * s * d * d + 3 * s * d        # qkv projection + bias
        + 2 * s * s * d + h * s * s      # scores + scale
        + 5 * h * s * s                  # softmax over keys
        + 2 * s * s * d                  # attention-weighted values
        + 2 * s * d * d + s * d          # output projection + bias
        + s * d                          # residual
    )
    mlp_per_layer = (
        2 * s * d * f + s * f            # fc1 + bias
        + 10 * s * f                     # gelu
        + 2 * s * f * d + s * d          # fc2 + bias
        + s * d                          # residual
    )
    return {
        "embedding": 2 * n * cfg.token_dim * d + n * d,
        "pos_enc": s * d if cfg.use_pos_enc else 0,
        "attention": l * attention_per_layer,
        "mlp": l * mlp_per_layer,
        "layer_norm": l * 16 * s * d + 8 * s * d,
        "aggregation": s * d if cfg.aggregation == "gap" else 0,
        "head": 2 * d * c + c,
    }


def count_flops(cfg: ModelConfig) -> int:
    """Eval-mode forward cost for one sample under the declared conventions."""
    return sum(flops_breakdown(cfg).values())


def cost_report(cfg: ModelConfig) -> CostReport:
    return CostReport(params=count_params(cfg), flops=count_flops(cfg),
                      params_breakdown=params_breakdown(cfg),
                      flops_breakdown=flops_breakdown(cfg))


def _config_hash(cfg: ModelConfig) -> str:
    payload = json.dumps(cfg.__dict__, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def geometry_config(tokenization: str, num_frames: int, window: WindowSpec,
                    num_classes: int, **model_kwargs) -> ModelConfig:
    """Model geometry implied by a tokenization mode, series length, window."""
    n, d_in = sequence_geometry(tokenization, num_frames, window)
    return ModelConfig(num_classes=num_classes, num_tokens=n, token_dim=d_in,
                       **model_kwargs)


def scaling_report(tokenization: str, num_frames: int, num_classes: int,
                   sweep_k: list[int] | None = None,
                   sweep_m: list[int] | None = None,
                   k: int = 3, **model_kwargs) -> list[dict]:
    """Cost rows over a window-size or series-length sweep.

    Exactly one of ``sweep_k`` (square window sides) or ``sweep_m`` (series
    lengths, fixed square window ``k``) must be given. Each row carries the
    resolved geometry, exact counts, breakdown fields, and any reference
    figures attached to that (M, k) point.
    """
    if bool(sweep_k) == bool(sweep_m):
        raise ConfigError("provide exactly one of sweep_k or sweep_m")
    points = [(num_frames, kk) for kk in sweep_k] if sweep_k \
        else [(mm, k) for mm in sweep_m]
    rows = []
    for m, kk in points:
        window = WindowSpec.single() if kk == 1 else WindowSpec.square(kk)
        cfg = geometry_config(tokenization, m, window, num_classes, **model_kwargs)
        report = cost_report(cfg)
        row = {
            "config_hash": _config_hash(cfg),
            "M": m, "k": kk, "tokenization": tokenization,
            "N": cfg.num_tokens, "D_in": cfg.token_dim,
            "params": report.params, "flops": report.flops,
        }
        for key, value in report.params_breakdown.items():
            row[f"params_{key}"] = value
        for key, value in report.flops_breakdown.items():
            row[f"flops_{key}"] = value
        ref = REFERENCE_COSTS.get((m, kk))
        row["reference_params_m"] = ref["params_m"] if ref else ""
        row["reference_flops_g"] = ref["flops_g"] if ref else ""
        rows.append(row)
    return rows


def sweep_annotations(rows: list[dict]) -> dict:
    """Monotonicity flags over a sweep's rows, in emitted order."""
    params = [row["params"] for row in rows]
    flops = [row["flops"] for row in rows]
    return {
        "params_nondecreasing": all(a <= b for a, b in zip(params, params[1:])),
        "flops_nondecreasing": all(a <= b for a, b in zip(flops, flops[1:])),
    }


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[key]) for key in header))
    return "\n".join(lines) + "\n"
