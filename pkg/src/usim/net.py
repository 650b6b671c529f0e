"""Trainable sequence model: projection, positional encoding, two transformer
encoder layers, per-slot classification head, and a turn-domain head.

Everything is plain numpy with hand-written backward passes; the gradient
tests compare them against central finite differences. Checkpoints are a
single file: a JSON header plus raw little-endian tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import N_CLASSES, FeatureLayout, InputSequence

CHECKPOINT_SCHEMA = "tusnet/1"
_MAGIC = b"USIMCKP1"


class NetError(ValueError):
    pass


class TrainingAbort(RuntimeError):
    """Raised when training hits non-finite numbers; carries diagnostics."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 100
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 400
    dropout: float = 0.1
    slot_classes: int = N_CLASSES
    learning_rate: float = 5e-4
    seed: int = 0
    dtype: str = "float32"
    use_domain_loss: bool = True

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise NetError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("d_model", "n_layers", "n_heads", "ff_dim", "slot_classes"):
            if getattr(self, name) <= 0:
                raise NetError(f"{name} must be positive")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "ff_dim": self.ff_dim,
            "dropout": self.dropout,
            "slot_classes": self.slot_classes,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "dtype": self.dtype,
            "use_domain_loss": self.use_domain_loss,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        return cls(**data)


def init_params(config: NetConfig, layout: FeatureLayout) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit layer norms; seeded."""
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    d, ff = config.d_model, config.ff_dim

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dt)

    p: dict[str, np.ndarray] = {
        "input.W": glorot(layout.width, d),
        "input.b": np.zeros(d, dtype=dt),
        "cls": (rng.standard_normal(d) * 0.02).astype(dt),
        "sep": (rng.standard_normal(d) * 0.02).astype(dt),
        "slot_head.W": glorot(d, config.slot_classes),
        "slot_head.b": np.zeros(config.slot_classes, dtype=dt),
        "domain_head.W": glorot(d, layout.l_d),
        "domain_head.b": np.zeros(layout.l_d, dtype=dt),
    }
    for i in range(config.n_layers):
        pre = f"layer{i}."
        for name in ("Wq", "Wk", "Wv", "Wo"):
            p[pre + "attn." + name] = glorot(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            p[pre + "attn." + name] = np.zeros(d, dtype=dt)
        p[pre + "ln1.g"] = np.ones(d, dtype=dt)
        p[pre + "ln1.b"] = np.zeros(d, dtype=dt)
        p[pre + "ff.W1"] = glorot(d, ff)
        p[pre + "ff.b1"] = np.zeros(ff, dtype=dt)
        p[pre + "ff.W2"] = glorot(ff, d)
        p[pre + "ff.b2"] = np.zeros(d, dtype=dt)
        p[pre + "ln2.g"] = np.ones(d, dtype=dt)
        p[pre + "ln2.b"] = np.zeros(d, dtype=dt)
    return p


_PE_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def positional_encoding(length: int, d_model: int, dtype: np.dtype) -> np.ndarray:
    key = (length, d_model, str(dtype))
    hit = _PE_CACHE.get(key)
    if hit is not None:
        return hit
    pos = np.arange(length)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, d_model, 2) * (-np.log(10000.0) / d_model))
    pe = np.zeros((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: pe[:, 1::2].shape[1]])
    out = pe.astype(dtype)
    _PE_CACHE[key] = out
    return out


@dataclass
class PackedBatch:
    """Equal-length sequences flattened for one forward/backward pass.

    rows: all real feature rows concatenated (M, D); each row lands at
    (row_ex, row_pos) in the (B, L) grid. CLS sits at position 0 of every
    example; SEP positions are listed explicitly. cur_* address the rows of
    each example's current turn, in slot order, for the slot head.
    """

    rows: np.ndarray
    row_ex: np.ndarray
    row_pos: np.ndarray
    sep_ex: np.ndarray
    sep_pos: np.ndarray
    cur_ex: np.ndarray
    cur_pos: np.ndarray
    n_current: list[int]
    B: int
    L: int


def pack_batch(sequences: Sequence[InputSequence], width: int, dtype: np.dtype) -> PackedBatch:
    lengths = {seq.length for seq in sequences}
    if len(lengths) != 1:
        raise NetError(f"pack_batch needs equal-length sequences, got lengths {sorted(lengths)}")
    L = lengths.pop()
    rows_list, row_ex, row_pos, sep_ex, sep_pos, cur_ex, cur_pos, n_current = (
        [], [], [], [], [], [], [], []
    )
    for ex, seq in enumerate(sequences):
        pos = 1
        for b_idx, block in enumerate(seq.blocks):
            m = block.shape[0]
            if block.shape[1] != width:
                raise NetError(f"row width {block.shape[1]} != layout width {width}")
            rows_list.append(block)
            row_ex.extend([ex] * m)
            row_pos.extend(range(pos, pos + m))
            if b_idx == 0:
                cur_ex.extend([ex] * m)
                cur_pos.extend(range(pos, pos + m))
                n_current.append(m)
            pos += m
            sep_ex.append(ex)
            sep_pos.append(pos)
            pos += 1
        if pos != L:
            raise NetError("inconsistent sequence assembly")
    rows = np.concatenate(rows_list, axis=0).astype(dtype) if rows_list else np.zeros((0, width), dtype)
    return PackedBatch(
        rows=rows,
        row_ex=np.asarray(row_ex, dtype=np.int64),
        row_pos=np.asarray(row_pos, dtype=np.int64),
        sep_ex=np.asarray(sep_ex, dtype=np.int64),
        sep_pos=np.asarray(sep_pos, dtype=np.int64),
        cur_ex=np.asarray(cur_ex, dtype=np.int64),
        cur_pos=np.asarray(cur_pos, dtype=np.int64),
        n_current=n_current,
        B=len(sequences),
        L=L,
    )


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    m = dxhat.mean(axis=-1, keepdims=True)
    mx = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m - xhat * mx)
    return dx, dg, db


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: np.ndarray, h: int) -> np.ndarray:
    B, L, d = x.shape
    return x.reshape(B, L, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, h, L, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, L, h * dh)


def forward(
    params: dict[str, np.ndarray],
    batch: PackedBatch,
    config: NetConfig,
    layout: FeatureLayout,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
):
    """Run the network; returns (slot_logits, domain_logits, cache).

    slot_logits has one 6-way row per current-turn slot across the batch
    (grouped by batch.cur_ex); domain_logits is (B, l_d) read at CLS. Eval
    mode is deterministic; train mode draws dropout masks from rng.
    """
    if batch.rows.shape[1] != layout.width:
        raise NetError(f"input width {batch.rows.shape[1]} != layout width {layout.width}")
    dt = config.np_dtype
    p = config.dropout if train_mode else 0.0
    if p > 0.0 and rng is None:
        raise NetError("train-mode forward needs an rng for dropout")
    cache: dict = {"masks": [], "layers": []}

    rows_proj = batch.rows.astype(dt) @ params["input.W"] + params["input.b"]
    X = np.zeros((batch.B, batch.L, config.d_model), dtype=dt)
    X[:, 0, :] = params["cls"]
    X[batch.sep_ex, batch.sep_pos] = params["sep"]
    X[batch.row_ex, batch.row_pos] = rows_proj
    X = X + positional_encoding(batch.L, config.d_model, dt)[None, :, :]

    def dropout(x: np.ndarray) -> np.ndarray:
        if p <= 0.0:
            cache["masks"].append(None)
            return x
        mask = (rng.random(x.shape) >= p).astype(dt) / dt.type(1.0 - p)
        cache["masks"].append(mask)
        return x * mask

    X = dropout(X)
    cache["X0_rows_proj"] = rows_proj
    h = config.n_heads
    scale = dt.type(1.0 / np.sqrt(config.d_model // h))

    for i in range(config.n_layers):
        pre = f"layer{i}."
        lc: dict = {"X_in": X}
        q = X @ params[pre + "attn.Wq"] + params[pre + "attn.bq"]
        k = X @ params[pre + "attn.Wk"] + params[pre + "attn.bk"]
        v = X @ params[pre + "attn.Wv"] + params[pre + "attn.bv"]
        qh, kh, vh = _split_heads(q, h), _split_heads(k, h), _split_heads(v, h)
        scores = np.matmul(qh, kh.transpose(0, 1, 3, 2)) * scale
        P = _softmax(scores)
        ctx = np.matmul(P, vh)
        C = _merge_heads(ctx)
        O = C @ params[pre + "attn.Wo"] + params[pre + "attn.bo"]
        O = dropout(O)
        Y, ln1_cache = _layer_norm(X + O, params[pre + "ln1.g"], params[pre + "ln1.b"])
        lc.update(qh=qh, kh=kh, vh=vh, P=P, C=C, ln1=ln1_cache, Y=Y)

        ff_in = Y @ params[pre + "ff.W1"] + params[pre + "ff.b1"]
        ff_act = np.maximum(ff_in, 0)
        F = ff_act @ params[pre + "ff.W2"] + params[pre + "ff.b2"]
        F = dropout(F)
        X, ln2_cache = _layer_norm(Y + F, params[pre + "ln2.g"], params[pre + "ln2.b"])
        lc.update(ff_act=ff_act, ln2=ln2_cache)
        cache["layers"].append(lc)

    H = X
    cur = H[batch.cur_ex, batch.cur_pos]
    slot_logits = cur @ params["slot_head.W"] + params["slot_head.b"]
    cls_h = H[:, 0, :]
    domain_logits = cls_h @ params["domain_head.W"] + params["domain_head.b"]
    cache.update(H=H, cur=cur, cls_h=cls_h, batch=batch)
    return slot_logits, domain_logits, cache


def loss_and_grads(
    slot_logits: np.ndarray,
    slot_targets: np.ndarray,
    domain_logits: np.ndarray,
    domain_targets: Optional[np.ndarray],
    batch: PackedBatch,
    use_domain_loss: bool,
):
    """Per-turn-averaged softmax CE plus per-turn-averaged multi-label BCE.

    Returns (total loss, slot loss, domain loss, dslot_logits, ddomain_logits).
    Each turn contributes the mean over its own slots (and the mean over l_d
    for the domain term); turns are averaged uniformly across the batch.
    """
    targets = np.asarray(slot_targets)
    if targets.shape[0] != slot_logits.shape[0]:
        raise NetError("slot target count mismatch")
    if targets.size and (targets.min() < 0 or targets.max() >= slot_logits.shape[1]):
        raise NetError(f"slot target outside 0..{slot_logits.shape[1] - 1}")
    B = batch.B
    logits64 = slot_logits.astype(np.float64)
    zmax = logits64.max(axis=1, keepdims=True)
    logsumexp = zmax[:, 0] + np.log(np.exp(logits64 - zmax).sum(axis=1))
    nll = logsumexp - logits64[np.arange(targets.shape[0]), targets]
    weights = np.concatenate(
        [np.full(n, 1.0 / (B * n)) for n in batch.n_current]
    ) if targets.size else np.zeros(0)
    slot_loss = float((nll * weights).sum())
    probs = np.exp(logits64 - logsumexp[:, None])
    dslot = probs
    dslot[np.arange(targets.shape[0]), targets] -= 1.0
    dslot *= weights[:, None]

    domain_loss = 0.0
    ddom = np.zeros_like(domain_logits, dtype=np.float64)
    if use_domain_loss and domain_targets is not None:
        y = np.asarray(domain_targets, dtype=np.float64)
        z = domain_logits.astype(np.float64)
        per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
        l_d = z.shape[1]
        domain_loss = float(per.sum() / (B * l_d))
        sig = 1.0 / (1.0 + np.exp(-z))
        ddom = (sig - y) / (B * l_d)
    total = slot_loss + domain_loss
    if not np.isfinite(total):
        raise TrainingAbort("non-finite loss", {"slot_loss": slot_loss, "domain_loss": domain_loss})
    return total, slot_loss, domain_loss, dslot, ddom


def backward(
    dslot_logits: np.ndarray,
    ddomain_logits: np.ndarray,
    params: dict[str, np.ndarray],
    cache: dict,
    config: NetConfig,
) -> dict[str, np.ndarray]:
    """Backpropagate head gradients to every parameter; mirrors forward."""
    batch: PackedBatch = cache["batch"]
    dt = config.np_dtype
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}
    dslot = dslot_logits.astype(dt)
    ddom = ddomain_logits.astype(dt)

    grads["slot_head.W"] += cache["cur"].T @ dslot
    grads["slot_head.b"] += dslot.sum(axis=0)
    grads["domain_head.W"] += cache["cls_h"].T @ ddom
    grads["domain_head.b"] += ddom.sum(axis=0)

    dH = np.zeros_like(cache["H"])
    np.add.at(dH, (batch.cur_ex, batch.cur_pos), dslot @ params["slot_head.W"].T)
    dH[:, 0, :] += ddom @ params["domain_head.W"].T

    masks = cache["masks"]
    mask_idx = len(masks) - 1

    def undrop(dx: np.ndarray) -> np.ndarray:
        nonlocal mask_idx
        mask = masks[mask_idx]
        mask_idx -= 1
        return dx if mask is None else dx * mask

    h = config.n_heads
    scale = dt.type(1.0 / np.sqrt(config.d_model // h))
    dX = dH
    for i in reversed(range(config.n_layers)):
        pre = f"layer{i}."
        lc = cache["layers"][i]

        dZ2, dg2, db2 = _layer_norm_backward(dX, lc["ln2"], params[pre + "ln2.g"])
        grads[pre + "ln2.g"] += dg2
        grads[pre + "ln2.b"] += db2
        dY = dZ2.copy()
        dF = undrop(dZ2)
        ff_act = lc["ff_act"]
        B, L, _ = dF.shape
        grads[pre + "ff.W2"] += ff_act.reshape(-1, ff_act.shape[-1]).T @ dF.reshape(-1, dF.shape[-1])
        grads[pre + "ff.b2"] += dF.sum(axis=(0, 1))
        dact = dF @ params[pre + "ff.W2"].T
        dff_in = dact * (ff_act > 0)
        Y = lc["Y"]
        grads[pre + "ff.W1"] += Y.reshape(-1, Y.shape[-1]).T @ dff_in.reshape(-1, dff_in.shape[-1])
        grads[pre + "ff.b1"] += dff_in.sum(axis=(0, 1))
        dY += dff_in @ params[pre + "ff.W1"].T

        dZ1, dg1, db1 = _layer_norm_backward(dY, lc["ln1"], params[pre + "ln1.g"])
        grads[pre + "ln1.g"] += dg1
        grads[pre + "ln1.b"] += db1
        dX = dZ1.copy()
        dO = undrop(dZ1)
        C = lc["C"]
        grads[pre + "attn.Wo"] += C.reshape(-1, C.shape[-1]).T @ dO.reshape(-1, dO.shape[-1])
        grads[pre + "attn.bo"] += dO.sum(axis=(0, 1))
        dC = dO @ params[pre + "attn.Wo"].T
        dctx = _split_heads(dC, h)
        P, qh, kh, vh = lc["P"], lc["qh"], lc["kh"], lc["vh"]
        dP = np.matmul(dctx, vh.transpose(0, 1, 3, 2))
        dvh = np.matmul(P.transpose(0, 1, 3, 2), dctx)
        dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
        dqh = np.matmul(dS, kh) * scale
        dkh = np.matmul(dS.transpose(0, 1, 3, 2), qh) * scale
        dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
        X_in = lc["X_in"]
        X_flat = X_in.reshape(-1, X_in.shape[-1])
        for name, dmat in (("Wq", dq), ("Wk", dk), ("Wv", dv)):
            grads[pre + "attn." + name] += X_flat.T @ dmat.reshape(-1, dmat.shape[-1])
        grads[pre + "attn.bq"] += dq.sum(axis=(0, 1))
        grads[pre + "attn.bk"] += dk.sum(axis=(0, 1))
        grads[pre + "attn.bv"] += dv.sum(axis=(0, 1))
        dX += dq @ params[pre + "attn.Wq"].T
        dX += dk @ params[pre + "attn.Wk"].T
        dX += dv @ params[pre + "attn.Wv"].T

    dX = undrop(dX)
    grads["cls"] += dX[:, 0, :].sum(axis=0)
    grads["sep"] += dX[batch.sep_ex, batch.sep_pos].sum(axis=0)
    drows_proj = dX[batch.row_ex, batch.row_pos]
    grads["input.W"] += batch.rows.astype(dt).T @ drows_proj
    grads["input.b"] += drows_proj.sum(axis=0)
    return grads


class Adam:
    """Standard Adam; state lives with the instance and serializes with it."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            if self.lr != 0.0:
                params[name] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def train_step(
    params: dict[str, np.ndarray],
    optimizer: Adam,
    batch: PackedBatch,
    slot_targets: np.ndarray,
    domain_targets: Optional[np.ndarray],
    config: NetConfig,
    layout: FeatureLayout,
    rng: np.random.Generator,
) -> float:
    """One forward/backward/Adam update; aborts on non-finite numbers."""
    slot_logits, domain_logits, cache = forward(
        params, batch, config, layout, train_mode=True, rng=rng
    )
    total, _, _, dslot, ddom = loss_and_grads(
        slot_logits, slot_targets, domain_logits, domain_targets, batch, config.use_domain_loss
    )
    grads = backward(dslot, ddom, params, cache, config)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingAbort(
                f"non-finite gradient in {name}",
                {"param": name, "loss": total},
            )
    optimizer.step(params, grads)
    return total


# -- checkpoint container ---------------------------------------------------


class CheckpointError(ValueError):
    pass


def write_container(path: str | Path, schema: str, header: dict,
                    tensors: Sequence[tuple[str, np.ndarray]]) -> None:
    """Single-file tensor container: magic, JSON header, raw little-endian data."""
    full_header = dict(header)
    full_header["schema"] = schema
    full_header["tensors"] = [
        {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}
        for name, arr in tensors
    ]
    header_bytes = json.dumps(full_header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_container(path: str | Path, schema: str) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse fully before returning: a corrupt file raises, never half-loads."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < len(_MAGIC) + 8 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[len(_MAGIC): len(_MAGIC) + 8])
    start = len(_MAGIC) + 8
    try:
        header = json.loads(blob[start: start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    if header.get("schema") != schema:
        raise CheckpointError(f"{path}: schema {header.get('schema')!r}, expected {schema!r}")
    offset = start + header_len
    tensors: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        dtype = np.dtype(spec["dtype"]).newbyteorder("<")
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated tensor {spec['name']!r}")
        arr = np.frombuffer(blob[offset: offset + nbytes], dtype=dtype).reshape(spec["shape"])
        tensors[spec["name"]] = arr.astype(np.dtype(spec["dtype"])).copy()
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, tensors


@dataclass
class Checkpoint:
    config: NetConfig
    layout: FeatureLayout
    ontology_fingerprint: str
    params: dict[str, np.ndarray]
    optimizer_state: Optional[dict] = None
    rng_state: Optional[dict] = None
    meta: dict = field(default_factory=dict)


def save_checkpoint(path: str | Path, ckpt: Checkpoint, schema: str = CHECKPOINT_SCHEMA) -> None:
    tensors: list[tuple[str, np.ndarray]] = sorted(ckpt.params.items())
    opt = ckpt.optimizer_state or {}
    for group in ("m", "v"):
        for name, arr in sorted(opt.get(group, {}).items()):
            tensors.append((f"adam.{group}.{name}", arr))
    header = {
        "config": ckpt.config.to_dict(),
        "layout": ckpt.layout.to_dict(),
        "ontology_fingerprint": ckpt.ontology_fingerprint,
        "optimizer": {"step_count": opt.get("step_count", 0), "lr": opt.get("lr")},
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
    }
    write_container(path, schema, header, tensors)


def load_checkpoint(
    path: str | Path,
    expected_fingerprint: Optional[str] = None,
    schema: str = CHECKPOINT_SCHEMA,
) -> Checkpoint:
    header, tensors = read_container(path, schema)
    if expected_fingerprint is not None and header["ontology_fingerprint"] != expected_fingerprint:
        raise CheckpointError(
            "ontology fingerprint mismatch: checkpoint was trained against a "
            "different ontology (feature layout is ontology-order-dependent)"
        )
    params: dict[str, np.ndarray] = {}
    opt_m: dict[str, np.ndarray] = {}
    opt_v: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("adam.m."):
            opt_m[name[len("adam.m."):]] = arr
        elif name.startswith("adam.v."):
            opt_v[name[len("adam.v."):]] = arr
        else:
            params[name] = arr
    opt_state = None
    if opt_m:
        opt_state = {
            "m": opt_m,
            "v": opt_v,
            "step_count": header["optimizer"].get("step_count", 0),
            "lr": header["optimizer"].get("lr"),
        }
    return Checkpoint(
        config=NetConfig.from_dict(header["config"]),
        layout=FeatureLayout.from_dict(header["layout"]),
        ontology_fingerprint=header["ontology_fingerprint"],
        params=params,
        optimizer_state=opt_state,
        rng_state=header.get("rng_state"),
        meta=header.get("meta", {}),
    )


def optimizer_state_of(opt: Adam) -> dict:
    return {"m": opt.m, "v": opt.v, "step_count": opt.step_count, "lr": opt.lr}


def optimizer_from_state(params: dict[str, np.ndarray], state: dict) -> Adam:
    opt = Adam(params, lr=state.get("lr") or 0.0)
    opt.m = {k: v.copy() for k, v in state["m"].items()}
    opt.v = {k: v.copy() for k, v in state["v"].items()}
    opt.step_count = state["step_count"]
    return opt
