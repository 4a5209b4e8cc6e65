"""The full network, its composite objective, training loop and checkpoints."""

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .alignment import AlignmentConfig, align_alpha, align_beta
from .segments import MultiLSTM, SegmentEncoder
from .structure import StructureAttention, adjacency_from_beta
from .variant import GraphAttention, VariantEncoder, reconstruction_loss

logger = logging.getLogger(__name__)

TASKS = ("regression", "classification")

# name -> (alignment mode or None, align alpha, align beta, reconstruction term, g_v in H)
VARIANTS = {
    "SASA-IV": ("unidirectional", True, True, True, True),
    "SASA-IV-alpha": ("unidirectional", False, True, True, True),
    "SASA-IV-beta": ("unidirectional", True, False, True, True),
    "SASA-IV-gamma": ("unidirectional", True, True, False, True),
    "SASA-IV-C": ("bidirectional", True, True, True, True),
    "SASA": ("mmd", True, True, False, False),
    "SASA-alpha": ("mmd", False, True, False, False),
    "SASA-beta": ("mmd", True, False, False, False),
    "source-only": (None, False, False, False, False),
}
_ALIASES = {"SASA-IV-α": "SASA-IV-alpha", "SASA-IV-β": "SASA-IV-beta", "SASA-IV-γ": "SASA-IV-gamma",
            "SASA-α": "SASA-alpha", "SASA-β": "SASA-beta", "LSTM_S2T": "source-only"}

MAX_CONSECUTIVE_SKIPS = 10
MAGIC = b"SASAIV1\n"


def canonical_variant(name):
    name = _ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    return name


@dataclass
class ModelConfig:
    d_h: int = 32
    d_g: int = None  # defaults to 16 * M
    omega: float = 1.0
    gamma: float = 0.5
    mu: float = 0.08
    variant: str = "SASA-IV"
    task: str = "regression"
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    estimator: str = "straight-through"
    aggregate: str = "batch-mean"
    band: float = 1.0
    temperature: float = 0.1
    pooling: str = "concat"
    structure_grad: str = "stop"
    head_size: int = 64
    n_classes: int = 2

    def __post_init__(self):
        self.variant = canonical_variant(self.variant)
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.omega < 0 or self.gamma < 0:
            raise ValueError("omega and gamma must be non-negative")
        if self.structure_grad not in ("stop", "straight-through"):
            raise ValueError(f"structure_grad must be 'stop' or 'straight-through', got {self.structure_grad!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    @property
    def uses_target(self):
        return VARIANTS[self.variant][0] is not None

    @property
    def uses_variant_encoder(self):
        return VARIANTS[self.variant][4]

    def alignment(self):
        mode = VARIANTS[self.variant][0] or "unidirectional"
        return AlignmentConfig(mode=mode, mu=self.mu, estimator=self.estimator, aggregate=self.aggregate,
                               band=self.band, temperature=self.temperature)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class LossBreakdown:
    l_y: float
    l_alpha: float
    l_beta: float
    l_r: float
    total: float

    def as_dict(self):
        return asdict(self)


@dataclass
class ForwardOutput:
    H: torch.Tensor
    structure: object
    variant: object
    output: torch.Tensor


class SASANet(nn.Module):
    """Segment encoder, sparse structure attention, variant encoder and label head."""

    def __init__(self, n_vars, n_steps, cfg):
        super().__init__()
        if n_vars < 2 or n_steps < 1:
            raise ValueError(f"need M >= 2 variables and N >= 1 steps, got M={n_vars}, N={n_steps}")
        self.n_vars, self.n_steps, self.cfg = n_vars, n_steps, cfg
        self.encoder = SegmentEncoder(n_vars, cfg.d_h)
        self.attention = StructureAttention(cfg.d_h)
        width = 2 * n_vars * cfg.d_h
        self.variant_encoder = None
        if cfg.uses_variant_encoder:
            d_g = cfg.d_g or 16 * n_vars
            node = d_g // n_vars if cfg.pooling == "concat" else d_g
            self.variant_encoder = VariantEncoder(n_vars, n_steps, node_size=node, pooling=cfg.pooling)
            width += self.variant_encoder.out_size
        self.width = width
        out = 1 if cfg.task == "regression" else cfg.n_classes
        self.head = nn.Sequential(nn.Linear(width, cfg.head_size), nn.ReLU(), nn.Linear(cfg.head_size, out))

    def forward(self, x):
        bank = self.encoder(x)
        est = self.attention(bank)
        parts = torch.cat([est.Z, est.U], dim=-1).flatten(1)  # H^1 + ... + H^M
        state = None
        if self.variant_encoder is not None:
            cfg = self.cfg
            if cfg.structure_grad == "stop":
                state = self.variant_encoder(x, adjacency_from_beta(est.beta, cfg.mu))
            else:
                adjacency = adjacency_from_beta(est.beta, cfg.mu, cfg.estimator, cfg.band, cfg.temperature)
                state = self.variant_encoder(x, adjacency, stop_structure=False)
            parts = torch.cat([parts, state.g_v], dim=-1)
        if not torch.isfinite(parts).all():
            raise FloatingPointError(
                "non-finite representation: "
                f"Z finite={bool(torch.isfinite(est.Z).all())}, U finite={bool(torch.isfinite(est.U).all())}, "
                f"g_v finite={state is None or bool(torch.isfinite(state.g_v).all())}"
            )
        return ForwardOutput(H=parts, structure=est, variant=state, output=self.head(parts))


def init_parameters(net, generator):
    """Re-draw every parameter from ``generator`` (uniform, fan-in scaled)."""
    for module in net.modules():
        if isinstance(module, (MultiLSTM, StructureAttention, GraphAttention)):
            module.reset_parameters(generator)
        elif isinstance(module, nn.Linear):
            bound = 1.0 / math.sqrt(module.in_features)
            with torch.no_grad():
                for p in module.parameters():
                    p.copy_(torch.rand(p.shape, generator=generator, dtype=p.dtype) * 2 * bound - bound)
    return net


def build_model(n_vars, n_steps, cfg, dtype=torch.float32):
    net = SASANet(n_vars, n_steps, cfg).to(dtype)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    return init_parameters(net, gen)


def predict_output(output, task):
    """Head output to predictions: regression values or class probabilities."""
    if task == "regression":
        return output[:, 0]
    return torch.softmax(output, dim=-1)


def label_loss(output, y, task):
    if task == "regression":
        return torch.sqrt(F.mse_loss(output[:, 0], y))
    return F.cross_entropy(output, y.long())


def compute_losses(net, xs, ys, xt=None):
    """Composite objective on one source/target batch pair.

    Returns the differentiable total and a float :class:`LossBreakdown`.
    """
    cfg = net.cfg
    mode, use_alpha, use_beta, use_rec, _ = VARIANTS[cfg.variant]
    out_s = net(xs)
    l_y = label_loss(out_s.output, ys, cfg.task)
    zero = l_y.new_zeros(())
    l_alpha = l_beta = l_r = zero
    if mode is not None:
        if xt is None:
            raise ValueError(f"variant {cfg.variant} needs a target batch")
        out_t = net(xt)
        acfg = cfg.alignment()
        if use_alpha:
            l_alpha = align_alpha(out_s.structure.alpha, out_t.structure.alpha, acfg)
        if use_beta:
            l_beta = align_beta(out_s.structure.beta, out_t.structure.beta, acfg)
        if use_rec:
            l_r = 0.5 * (reconstruction_loss(out_s.variant.x_hat, xs[:, -1])
                         + reconstruction_loss(out_t.variant.x_hat, xt[:, -1]))
    total = l_y + cfg.omega * (l_alpha + l_beta) + cfg.gamma * l_r
    terms = [float(t.detach()) for t in (l_y, l_alpha, l_beta, l_r)]
    breakdown = LossBreakdown(*terms, total=terms[0] + cfg.omega * (terms[1] + terms[2]) + cfg.gamma * terms[3])
    return total, breakdown


class Trainer:
    """Single-writer optimisation state: the network, its optimizer and the skip counter."""

    def __init__(self, net):
        self.net = net
        self.optimizer = torch.optim.Adam(net.parameters(), lr=net.cfg.lr)
        self.consecutive_skips = 0
        self.skipped = 0

    def train_step(self, xs, ys, xt=None):
        self.optimizer.zero_grad()
        total, breakdown = compute_losses(self.net, xs, ys, xt)
        total.backward()
        grads_ok = all(p.grad is None or torch.isfinite(p.grad).all() for p in self.net.parameters())
        if not (grads_ok and math.isfinite(breakdown.total)):
            self.consecutive_skips += 1
            self.skipped += 1
            logger.warning("non-finite gradient; step skipped (%d in a row)", self.consecutive_skips)
            if self.consecutive_skips >= MAX_CONSECUTIVE_SKIPS:
                raise FloatingPointError(f"aborting after {MAX_CONSECUTIVE_SKIPS} consecutive non-finite steps")
            return breakdown
        self.consecutive_skips = 0
        self.optimizer.step()
        return breakdown


def _batches(n, batch_size, rng):
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def fit(net, xs, ys, xt=None, log=None):
    """Epoch loop over unpaired source/target batches.

    The longer domain sets the epoch length; the shorter one cycles with a
    fresh shuffle. Returns the per-epoch mean :class:`LossBreakdown` list.
    """
    cfg = net.cfg
    if len(xs) == 0:
        raise ValueError("empty source dataset")
    use_target = cfg.uses_target
    if use_target and (xt is None or len(xt) == 0):
        raise ValueError("empty target dataset")
    dtype = next(net.parameters()).dtype
    xs = torch.as_tensor(xs, dtype=dtype)
    ys = torch.as_tensor(ys, dtype=dtype if cfg.task == "regression" else torch.long)
    xt = torch.as_tensor(xt, dtype=dtype) if use_target else None
    rng = np.random.default_rng(cfg.seed)
    src_iter = _batches(len(xs), cfg.batch_size, rng)
    tgt_iter = _batches(len(xt), cfg.batch_size, rng) if use_target else None
    steps = math.ceil(len(xs) / cfg.batch_size)
    if use_target:
        steps = max(steps, math.ceil(len(xt) / cfg.batch_size))
    trainer = Trainer(net)
    net.train()
    history = []
    for epoch in range(cfg.epochs):
        records = []
        for _ in range(steps):
            si = next(src_iter)
            xt_b = xt[next(tgt_iter)] if use_target else None
            records.append(trainer.train_step(xs[si], ys[si], xt_b))
        mean = LossBreakdown(*(float(np.mean([getattr(r, k) for r in records])) for k in
                               ("l_y", "l_alpha", "l_beta", "l_r", "total")))
        history.append(mean)
        logger.info("epoch %d: %s", epoch + 1, mean)
        if log is not None:
            log(epoch + 1, mean)
    net.eval()
    return history


def save_checkpoint(path, net, meta=None):
    """Write ``SASAIV1`` magic, a JSON header (config, shapes, offsets) and raw float64 tensors."""
    tensors, index, offset = [], [], 0
    for name, t in net.state_dict().items():
        arr = t.detach().cpu().to(torch.float64).numpy()
        raw = arr.astype("<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        tensors.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(net.cfg),
        "n_vars": net.n_vars,
        "n_steps": net.n_steps,
        "dtype": str(next(net.parameters()).dtype).replace("torch.", ""),
        "meta": meta or {},
        "tensors": index,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in tensors:
            fh.write(raw)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(net, meta)``."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a SASAIV1 checkpoint")
    pos = len(MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
    pos += 8
    header = json.loads(data[pos:pos + hlen])
    pos += hlen
    cfg = ModelConfig.from_dict(header["config"])
    net = SASANet(header["n_vars"], header["n_steps"], cfg).to(getattr(torch, header["dtype"]))
    state = {}
    for entry in header["tensors"]:
        start = pos + entry["offset"]
        arr = np.frombuffer(data[start:start + entry["nbytes"]], dtype="<f8").reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    net.load_state_dict(state)
    net.eval()
    return net, header["meta"]
