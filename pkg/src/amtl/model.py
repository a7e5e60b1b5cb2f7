"""Conv-frontend transformer CTC encoder with accent and intermediate ASR heads.

Architecture: strided conv (width 7, stride 3) -> GLU -> sinusoidal positions
-> pre-norm transformer blocks -> final layer norm -> CTC head. The accent
head mean-pools the output of one block over time and applies an affine map.
Auxiliary ASR heads project intermediate block outputs onto the same
vocabulary.

Every parameter is drawn from its own stream keyed by (seed, name), so adding
or removing a head never changes the initial trunk.
"""
from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from amtl.audio import FeatureMatrix, FrontendConfig
from amtl.autograd import Tensor, apply_primitive, glorot_uniform, read_tensors, write_tensors
from amtl.errors import AmtlError, CheckpointError, ConfigError
from amtl.tokenization import Vocabulary

TRUNK_PREFIXES = ("frontend/", "blocks/", "final_ln/")

# Relative depths of the low/mid/top accent-head positions (8th, 14th, 20th of 24 layers).
LAYER_POSITIONS = {"low": 8 / 24, "mid": 14 / 24, "middle": 14 / 24, "top": 20 / 24}


def resolve_layer(spec, num_layers: int) -> int | None:
    """Map ``low``/``mid``/``top`` or an explicit 1-based index to a layer index."""
    if spec is None or spec == "none":
        return None
    if isinstance(spec, str) and spec in LAYER_POSITIONS:
        return max(1, min(num_layers, round(num_layers * LAYER_POSITIONS[spec])))
    try:
        return int(spec)
    except (TypeError, ValueError):
        raise ConfigError(f"accent head position must be low, mid, top or a layer index, got {spec!r}") from None


@dataclass
class ModelConfig:
    feature_dim: int = 80
    conv_width: int = 7
    conv_stride: int = 3
    num_layers: int = 4
    num_heads: int = 4
    model_dim: int = 64
    ffn_dim: int = 256
    vocab_size: int = 32
    num_accents: int = 0
    accent_head_layer: int | str | None = None
    aux_asr_layers: tuple[int, ...] = ()
    positional: str = "sinusoidal"
    attention: str = "full"  # "identity" is a diagnostic mode
    dropout: float = 0.1
    accent_stop_gradient: bool = False
    max_len: int = 10000

    def __post_init__(self):
        self.aux_asr_layers = tuple(int(x) for x in self.aux_asr_layers)

    def resolved(self) -> "ModelConfig":
        return replace(self, accent_head_layer=resolve_layer(self.accent_head_layer, self.num_layers))

    def validate(self) -> "ModelConfig":
        cfg = self.resolved()
        checks = [
            (cfg.feature_dim >= 1, "feature_dim >= 1"),
            (cfg.conv_width >= 1 and cfg.conv_stride >= 1, "conv_width >= 1 and conv_stride >= 1"),
            (cfg.num_layers >= 1, "num_layers >= 1"),
            (cfg.num_heads >= 1 and cfg.model_dim % cfg.num_heads == 0, "model_dim divisible by num_heads"),
            (cfg.ffn_dim >= 1, "ffn_dim >= 1"),
            (cfg.vocab_size >= 2, "vocab_size >= 2"),
            (cfg.positional in ("sinusoidal", "none"), "positional in {sinusoidal, none}"),
            (cfg.attention in ("full", "identity"), "attention in {full, identity}"),
            (0.0 <= cfg.dropout < 1.0, "0 <= dropout < 1"),
        ]
        if cfg.accent_head_layer is not None:
            checks.append(
                (1 <= cfg.accent_head_layer <= cfg.num_layers, f"accent_head_layer in 1..num_layers ({cfg.num_layers})")
            )
            checks.append((cfg.num_accents >= 1, "num_accents >= 1 when an accent head is attached"))
        for layer in cfg.aux_asr_layers:
            checks.append((1 <= layer <= cfg.num_layers, f"aux_asr_layers within 1..num_layers ({cfg.num_layers})"))
        for ok, rule in checks:
            if not ok:
                raise ConfigError(f"invalid model config: violates {rule}")
        return cfg

    def output_length(self, num_frames: int) -> int:
        return (num_frames - self.conv_width) // self.conv_stride + 1


PRESETS: dict[str, dict] = {
    "tiny": dict(num_layers=2, num_heads=2, model_dim=32, ffn_dim=64),
    "desk": dict(num_layers=4, num_heads=4, model_dim=64, ffn_dim=256),
    # documentation only: full-size encoder, never instantiated in tests
    "paper-transformer": dict(feature_dim=80, num_layers=24, num_heads=4, model_dim=768, ffn_dim=3072),
}


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    cfg = cfg.validate()
    d, f = cfg.model_dim, cfg.ffn_dim
    shapes: dict[str, tuple[int, ...]] = {
        "frontend/conv/weight": (2 * d, cfg.feature_dim, cfg.conv_width),
        "frontend/conv/bias": (2 * d,),
    }
    for i in range(cfg.num_layers):
        p = f"blocks/{i}/"
        shapes.update(
            {
                p + "ln1/gamma": (d,),
                p + "ln1/beta": (d,),
                p + "attn/wq": (d, d),
                p + "attn/bq": (d,),
                p + "attn/wk": (d, d),
                p + "attn/bk": (d,),
                p + "attn/wv": (d, d),
                p + "attn/bv": (d,),
                p + "attn/wo": (d, d),
                p + "attn/bo": (d,),
                p + "ln2/gamma": (d,),
                p + "ln2/beta": (d,),
                p + "ffn/w1": (d, f),
                p + "ffn/b1": (f,),
                p + "ffn/w2": (f, d),
                p + "ffn/b2": (d,),
            }
        )
    shapes["final_ln/gamma"] = (d,)
    shapes["final_ln/beta"] = (d,)
    shapes["ctc_head/weight"] = (d, cfg.vocab_size)
    shapes["ctc_head/bias"] = (cfg.vocab_size,)
    if cfg.accent_head_layer is not None:
        shapes["accent_head/weight"] = (d, cfg.num_accents)
        shapes["accent_head/bias"] = (cfg.num_accents,)
    for layer in cfg.aux_asr_layers:
        shapes[f"aux_head/{layer}/weight"] = (d, cfg.vocab_size)
        shapes[f"aux_head/{layer}/bias"] = (cfg.vocab_size,)
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


def param_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))


def init_parameter(name: str, shape: tuple[int, ...], seed: int, dtype) -> np.ndarray:
    leaf = name.rsplit("/", 1)[-1]
    if leaf == "gamma":
        return np.ones(shape, dtype=dtype)
    if leaf in ("beta",) or leaf.startswith("b"):
        return np.zeros(shape, dtype=dtype)
    if len(shape) == 3:  # conv: (C_out, C_in, K)
        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape[0], shape[-1]
    return glorot_uniform(shape, fan_in, fan_out, param_rng(seed, name), dtype)


def sinusoidal_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe.astype(dtype)


@dataclass
class ModelOutput:
    ctc_log_probs: Tensor
    accent_logits: Tensor | None
    aux_asr_log_probs: list[Tensor] = field(default_factory=list)
    frontend: Tensor | None = None
    hidden: list[Tensor] = field(default_factory=list)


class Model:
    def __init__(
        self,
        cfg: ModelConfig,
        params: dict[str, Tensor],
        vocab: Vocabulary | None = None,
        accents: Sequence[str] | None = None,
        frontend: FrontendConfig | None = None,
        seed: int = 0,
    ):
        self.cfg = cfg.validate()
        self.params = params
        self.vocab = vocab
        self.accents = list(accents or [])
        self.frontend = frontend or FrontendConfig(num_mels=cfg.feature_dim)
        self.seed = seed
        self.dtype = next(iter(params.values())).dtype
        self._pe = None

    @property
    def has_accent_head(self) -> bool:
        return self.cfg.accent_head_layer is not None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.params.items())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def trunk_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(TRUNK_PREFIXES)]

    def head_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith(TRUNK_PREFIXES)]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params.items()}

    def _positions(self, length: int) -> np.ndarray:
        if length > self.cfg.max_len:
            raise AmtlError(f"sequence of {length} frames exceeds max_len {self.cfg.max_len}")
        if self._pe is None or self._pe.shape[0] < length:
            self._pe = sinusoidal_positions(max(length, 256), self.cfg.model_dim, self.dtype)
        return self._pe[:length]

    def _linear(self, x: Tensor, prefix: str) -> Tensor:
        return x @ self.params[prefix + "/weight"] + self.params[prefix + "/bias"]

    def _dropout(self, x: Tensor, train_mode: bool, rng) -> Tensor:
        p = self.cfg.dropout
        if not train_mode or p == 0.0:
            return x
        if rng is None:
            raise AmtlError("train_mode forward needs an rng for dropout")
        keep = (rng.random(x.shape) >= p).astype(self.dtype) / self.dtype.type(1.0 - p)
        return apply_primitive("dropout", [x], {"mask": keep})

    def _attention(self, a: Tensor, p: str) -> Tensor:
        if self.cfg.attention == "identity":
            return a
        T, D = a.shape
        H = self.cfg.num_heads
        dh = D // H
        P = self.params
        q = (a @ P[p + "attn/wq"] + P[p + "attn/bq"]).reshape(T, H, dh).transpose(1, 0, 2)
        k = (a @ P[p + "attn/wk"] + P[p + "attn/bk"]).reshape(T, H, dh).transpose(1, 2, 0)
        v = (a @ P[p + "attn/wv"] + P[p + "attn/bv"]).reshape(T, H, dh).transpose(1, 0, 2)
        weights = ((q @ k) * (1.0 / math.sqrt(dh))).softmax(axis=-1)
        ctx = (weights @ v).transpose(1, 0, 2).reshape(T, D)
        return ctx @ P[p + "attn/wo"] + P[p + "attn/bo"]

    def _block(self, h: Tensor, i: int, train_mode: bool, rng) -> Tensor:
        p = f"blocks/{i}/"
        P = self.params
        a = apply_primitive("layer_norm", [h, P[p + "ln1/gamma"], P[p + "ln1/beta"]])
        h = h + self._dropout(self._attention(a, p), train_mode, rng)
        f = apply_primitive("layer_norm", [h, P[p + "ln2/gamma"], P[p + "ln2/beta"]])
        f = (f @ P[p + "ffn/w1"] + P[p + "ffn/b1"]).relu() @ P[p + "ffn/w2"] + P[p + "ffn/b2"]
        return h + self._dropout(f, train_mode, rng)

    def encode(
        self,
        feats: FeatureMatrix | np.ndarray,
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
        mask: np.ndarray | None = None,
        mask_embedding: Tensor | None = None,
    ) -> tuple[Tensor, list[Tensor], Tensor]:
        """Run the trunk. Returns (frontend output, per-block outputs, final normed states).

        ``mask`` is a boolean (T',) array of frames replaced by ``mask_embedding``
        before the transformer (contrastive pretraining).
        """
        frames = feats.frames if isinstance(feats, FeatureMatrix) else np.asarray(feats)
        if frames.ndim != 2 or frames.shape[1] != self.cfg.feature_dim:
            raise AmtlError(f"expected features of dim {self.cfg.feature_dim}, got shape {frames.shape}")
        if frames.shape[0] < self.cfg.conv_width:
            raise AmtlError(f"input too short: {frames.shape[0]} frames < conv width {self.cfg.conv_width}")
        P = self.params
        x = Tensor(frames, requires_grad=False, dtype=self.dtype)
        h = apply_primitive(
            "conv1d", [x, P["frontend/conv/weight"], P["frontend/conv/bias"]], {"stride": self.cfg.conv_stride}
        )
        h = apply_primitive("glu", [h], {"axis": -1})
        front = h
        if mask is not None:
            keep = (~np.asarray(mask, dtype=bool)).astype(self.dtype)[:, None]
            h = h * Tensor(keep, requires_grad=False) + mask_embedding * Tensor(1 - keep, requires_grad=False)
        if self.cfg.positional == "sinusoidal":
            h = h + Tensor(self._positions(h.shape[0]), requires_grad=False)
        hidden = []
        for i in range(self.cfg.num_layers):
            h = self._block(h, i, train_mode, rng)
            hidden.append(h)
        final = apply_primitive("layer_norm", [h, P["final_ln/gamma"], P["final_ln/beta"]])
        return front, hidden, final

    def forward(
        self, feats: FeatureMatrix | np.ndarray, train_mode: bool = False, rng: np.random.Generator | None = None
    ) -> ModelOutput:
        front, hidden, final = self.encode(feats, train_mode, rng)
        ctc = self._linear(final, "ctc_head").log_softmax(axis=-1)
        accent = None
        if self.has_accent_head:
            tap = hidden[self.cfg.accent_head_layer - 1]
            if self.cfg.accent_stop_gradient:
                tap = tap.detach()
            pooled = tap.mean(axis=0, keepdims=True)
            accent = self._linear(pooled, "accent_head").reshape(self.cfg.num_accents)
        aux = [self._linear(hidden[layer - 1], f"aux_head/{layer}").log_softmax(axis=-1) for layer in self.cfg.aux_asr_layers]
        return ModelOutput(ctc, accent, aux, front, hidden)

    __call__ = forward


def build_model(
    cfg: ModelConfig,
    seed: int = 0,
    dtype=np.float32,
    vocab: Vocabulary | None = None,
    accents: Sequence[str] | None = None,
    frontend: FrontendConfig | None = None,
) -> Model:
    shapes = parameter_shapes(cfg)
    params = {
        name: Tensor(init_parameter(name, shape, seed, dtype), name=name, dtype=dtype) for name, shape in shapes.items()
    }
    return Model(cfg, params, vocab, accents, frontend, seed)


def _meta(model: Model) -> dict:
    cfg = asdict(model.cfg)
    cfg["aux_asr_layers"] = list(cfg["aux_asr_layers"])
    vocab = None
    if model.vocab is not None:
        vocab = {"tokens": model.vocab.tokens, "kind": model.vocab.kind, "merges": [list(m) for m in model.vocab.merges]}
    return {
        "config": cfg,
        "vocab": vocab,
        "accents": model.accents,
        "frontend": asdict(model.frontend),
        "seed": model.seed,
    }


META_TENSOR = "meta/json"


def save_checkpoint(model: Model, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (float32) plus a JSON metadata tensor holding config,
    vocabulary, accent inventory and frontend settings."""
    tensors = {n: p.data for n, p in model.params.items()}
    for name, arr in (extra or {}).items():
        tensors[name] = arr
    raw = json.dumps(_meta(model), sort_keys=True).encode("utf-8")
    tensors[META_TENSOR] = np.frombuffer(raw, dtype=np.uint8).astype(np.float32)
    write_tensors(path, tensors)


def read_meta(tensors: dict[str, np.ndarray]) -> dict:
    if META_TENSOR not in tensors:
        raise CheckpointError("checkpoint has no metadata tensor")
    return json.loads(tensors[META_TENSOR].astype(np.uint8).tobytes().decode("utf-8"))


def model_from_meta(meta: dict, dtype=np.float32) -> Model:
    cfg = ModelConfig(**meta["config"])
    v = meta.get("vocab")
    vocab = Vocabulary(v["tokens"], v["kind"], [tuple(m) for m in v["merges"]]) if v else None
    frontend = FrontendConfig(**meta["frontend"])
    return build_model(cfg, meta.get("seed", 0), dtype, vocab, meta.get("accents"), frontend)


def load_checkpoint(path, model: Model | None = None, trunk_only: bool = False) -> Model:
    """Restore a model from ``path``.

    Without ``model`` the architecture is rebuilt from the stored metadata.
    With ``trunk_only`` only frontend/transformer/final-norm tensors are
    copied into ``model``; its heads keep their fresh initialization.
    """
    tensors = read_tensors(path)
    if model is None:
        model = model_from_meta(read_meta(tensors))
    names = model.trunk_names() if trunk_only else list(model.params)
    problems = []
    for name in names:
        if name not in tensors:
            problems.append(f"{name} (missing)")
        elif tensors[name].shape != model.params[name].shape:
            problems.append(f"{name} ({tensors[name].shape} vs {model.params[name].shape})")
    if problems:
        hint = "" if trunk_only else "; pass trunk_only to load the encoder trunk alone"
        raise CheckpointError("checkpoint/model tensor mismatch: " + ", ".join(problems) + hint)
    for name in names:
        p = model.params[name]
        p.data = tensors[name].astype(p.dtype)
        p.grad = None
    return model
