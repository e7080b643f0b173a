"""Multi-head feed-forward model built from stages.

Parameters are addressed by ``"<unit>/<param>"`` names where a unit is a
shared stage (``stage3``), a task-specific copy of a stage (``stage4@t2``) or a
head (``head:t2``). Trainability flags are kept per unit.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, DimensionError, StateError
from ..numeric import DTYPE, Rng
from .layers import Dense, cross_entropy
from .stages import ResidualStage, Stage, conv_stage, fc_stage, mlp_stage

KINDS = ("mlp", "conv", "conv-residual")
VGG_CHANNELS = (16, 32, 64, 128, 128)


@dataclass(frozen=True)
class ArchSpec:
    kind: str = "mlp"
    input_shape: tuple[int, ...] = (64,)
    widths: tuple[int, ...] = (64, 64, 64, 64, 64)
    fc_widths: tuple[int, ...] = ()
    kernel_size: int = 3
    pool: bool = True
    width_multiplier: float = 1.0

    @classmethod
    def vgg(cls, input_shape=(3, 32, 32), **kw) -> "ArchSpec":
        """Five conv stages with 16, 32, 64, 128, 128 channels."""
        return cls(kind="conv", input_shape=tuple(input_shape), widths=VGG_CHANNELS, **kw)

    def scaled(self, widths) -> tuple[int, ...]:
        return tuple(max(1, int(round(w * self.width_multiplier))) for w in widths)

    @property
    def n_stages(self) -> int:
        return len(self.widths) + len(self.fc_widths)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"arch.kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_stages < 2:
            raise ConfigError(f"arch.widths: need at least 2 stages, got {self.n_stages}")
        if any(w <= 0 for w in self.widths + self.fc_widths):
            raise ConfigError(f"arch.widths must be positive, got {self.widths + self.fc_widths}")
        if self.width_multiplier <= 0:
            raise ConfigError("arch.width_multiplier must be positive")
        if self.kind == "mlp":
            if self.fc_widths:
                raise ConfigError("arch.fc_widths only applies to convolutional kinds")
        elif len(self.input_shape) != 3:
            raise ConfigError(f"arch.input_shape must be (C, H, W) for {self.kind}, got {self.input_shape}")
        if self.kernel_size % 2 != 1:
            raise ConfigError("arch.kernel_size must be odd")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 32

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"optim.lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"optim.momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("optim.weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("optim.batch_size must be >= 1")


def build_model(spec: ArchSpec, rng: Rng) -> "Model":
    """Initialize a body with He-scaled Gaussian weights and zero biases; no heads."""
    spec.validate()
    stages: list[Stage] = []
    if spec.kind == "mlp":
        n_in = int(np.prod(spec.input_shape))
        for w in spec.scaled(spec.widths):
            stages.append(mlp_stage(n_in, w, rng))
            n_in = w
        out_shape: tuple[int, ...] = (n_in,)
    else:
        c, h, w = spec.input_shape
        for width in spec.scaled(spec.widths):
            pool = spec.pool and h >= 2 and w >= 2
            if spec.kind == "conv":
                stages.append(conv_stage(c, width, rng, spec.kernel_size, pool))
            else:
                stages.append(ResidualStage(c, width, rng, spec.kernel_size, pool))
            c = width
            if pool:
                h, w = h // 2, w // 2
        out_shape = (c, h, w)
        n_in = c * h * w
        for width in spec.scaled(spec.fc_widths):
            stages.append(fc_stage(n_in, width, rng))
            n_in = width
            out_shape = (width,)
    return Model(spec, stages, out_shape)


@dataclass
class ParamSnapshot:
    label: str
    params: dict[str, np.ndarray]
    fingerprint: str
    units: tuple[str, ...] = field(default=())


class Model:
    def __init__(self, spec: ArchSpec, stages: list[Stage], out_shape: tuple[int, ...]):
        self.spec = spec
        self.stages = stages
        self.out_shape = out_shape
        self.n_features = int(np.prod(out_shape))
        self.n_task_specific = 0
        self.branches: dict[str, list[Stage]] = {}
        self.heads: dict[str, Dense] = {}
        self.active_head: str | None = None
        self.trainable: dict[str, bool] = {f"stage{i + 1}": True for i in range(len(stages))}
        self.velocity: dict[str, np.ndarray] = {}

    # -- structure -----------------------------------------------------
    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def n_shared(self) -> int:
        return self.n_stages - self.n_task_specific

    def fingerprint(self) -> str:
        return f"{self.spec.fingerprint()}-ts{self.n_task_specific}"

    def stage_unit(self, index: int, head: str | None = None) -> str:
        """Unit name of 1-based stage ``index`` on the route of ``head``."""
        if not 1 <= index <= self.n_stages:
            raise StateError(f"stage index {index} outside 1..{self.n_stages}")
        if index <= self.n_shared:
            return f"stage{index}"
        head = head or self.active_head
        if head is None or head not in self.branches:
            raise StateError(f"stage{index} is task-specific and no branch exists for head {head!r}")
        return f"stage{index}@{head}"

    def stage_names(self) -> list[str]:
        return [f"stage{i + 1}" for i in range(self.n_stages)]

    def _route(self, head: str) -> list[Stage]:
        if self.n_task_specific == 0:
            return self.stages
        return self.stages[: self.n_shared] + self.branches[head]

    def _unit_modules(self):
        for i in range(self.n_shared):
            yield f"stage{i + 1}", self.stages[i]
        for hid, branch in self.branches.items():
            for j, st in enumerate(branch):
                yield f"stage{self.n_shared + j + 1}@{hid}", st
        if self.n_task_specific and not self.branches:
            for j, st in enumerate(self.stages[self.n_shared :]):
                yield f"stage{self.n_shared + j + 1}", st
        for hid, head in self.heads.items():
            yield f"head:{hid}", head

    def units(self) -> list[str]:
        return [u for u, _ in self._unit_modules()]

    def named_params(self) -> dict[str, np.ndarray]:
        return {f"{u}/{k}": v for u, m in self._unit_modules() for k, v in m.params.items()}

    def n_params(self) -> int:
        return sum(v.size for v in self.named_params().values())

    # -- heads ---------------------------------------------------------
    def attach_head(self, head_id: str, n_classes: int, rng: Rng, activate: bool = True) -> None:
        """New head with N(0, 1/n_f) weights and zero biases; nothing copied from older heads."""
        if head_id in self.heads:
            raise StateError(f"head {head_id!r} already attached")
        if n_classes < 1:
            raise ConfigError("a head needs at least one class")
        self.heads[head_id] = Dense(self.n_features, n_classes, rng, std=np.sqrt(1.0 / self.n_features))
        self.trainable[f"head:{head_id}"] = True
        if self.n_task_specific:
            source = self.branches.get(self.active_head) if self.active_head else None
            if source is None:
                source = self.stages[self.n_shared :]
            self.branches[head_id] = copy.deepcopy(source)
            for j in range(self.n_task_specific):
                src_unit = f"stage{self.n_shared + j + 1}"
                if self.active_head in self.branches and self.active_head != head_id:
                    src_unit += f"@{self.active_head}"
                self.trainable[f"stage{self.n_shared + j + 1}@{head_id}"] = self.trainable.get(src_unit, True)
        if activate or self.active_head is None:
            self.active_head = head_id

    def set_active_head(self, head_id: str) -> None:
        if head_id not in self.heads:
            raise StateError(f"unknown head {head_id!r}")
        self.active_head = head_id

    # -- forward / backward -------------------------------------------
    def _check_input(self, x):
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise DimensionError(f"model expects inputs of shape {self.spec.input_shape}, got {x.shape[1:]}")

    def forward(self, x: np.ndarray, capture=(), head: str | None = None):
        """Logits of the active (or given) head plus flattened stage outputs.

        ``capture`` holds 1-based stage indices or ``"stageK"`` names.
        """
        head = head or self.active_head
        if head is None:
            raise StateError("no active head")
        if head not in self.heads:
            raise StateError(f"unknown head {head!r}")
        self._check_input(x)
        wanted = {self._stage_index(c) for c in capture}
        acts = {}
        h = np.asarray(x, dtype=DTYPE)
        for i, st in enumerate(self._route(head), start=1):
            h, _ = st.forward(h)
            if i in wanted:
                acts[f"stage{i}"] = h.reshape(h.shape[0], -1).copy()
        logits, _ = self.heads[head].forward(h.reshape(h.shape[0], -1))
        return logits, acts

    def features(self, x: np.ndarray, stages, head: str | None = None, batch: int = 512) -> dict[str, np.ndarray]:
        """Flattened post-stage activations only (no head needed)."""
        idx = sorted({self._stage_index(s) for s in stages})
        out: dict[str, list] = {f"stage{i}": [] for i in idx}
        route = self._route(head or self.active_head) if self.n_task_specific else self.stages
        if self.n_task_specific and (head or self.active_head) is None:
            raise StateError("task-specific model needs a head to route through")
        self._check_input(x)
        top = max(idx) if idx else 0
        for s in range(0, x.shape[0], batch):
            h = np.asarray(x[s : s + batch], dtype=DTYPE)
            for i, st in enumerate(route[:top], start=1):
                h, _ = st.forward(h)
                if f"stage{i}" in out:
                    out[f"stage{i}"].append(h.reshape(h.shape[0], -1))
        return {k: np.concatenate(v, axis=0) if v else np.zeros((0, 0)) for k, v in out.items()}

    def _stage_index(self, s) -> int:
        if isinstance(s, str):
            if not s.startswith("stage"):
                raise StateError(f"unknown stage {s!r}")
            s = int(s[5:].split("@")[0])
        s = int(s)
        if not 1 <= s <= self.n_stages:
            raise StateError(f"unknown stage {s}")
        return s

    def predict(self, x: np.ndarray, head: str | None = None, batch: int = 512) -> np.ndarray:
        out = [self.forward(x[s : s + batch], head=head)[0] for s in range(0, x.shape[0], batch)]
        return np.concatenate(out, axis=0)

    def accuracy(self, x: np.ndarray, labels: np.ndarray, head: str | None = None) -> float:
        if x.shape[0] == 0:
            return float("nan")
        pred = self.predict(x, head=head).argmax(axis=1)
        target = labels if labels.ndim == 1 else labels.argmax(axis=1)
        return float(np.mean(pred == target))

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, head_ids=None):
        """Mean cross-entropy and gradients for trainable units only.

        ``head_ids`` routes each example through its own head (and branch);
        by default everything goes through the active head.
        """
        self._check_input(x)
        n = x.shape[0]
        if head_ids is None:
            if self.active_head is None:
                raise StateError("no active head")
            groups = {self.active_head: np.arange(n)}
        else:
            head_ids = np.asarray(head_ids)
            groups = {str(h): np.flatnonzero(head_ids == h) for h in dict.fromkeys(head_ids.tolist())}
        for hid in groups:
            if hid not in self.heads:
                raise StateError(f"unknown head {hid!r}")
            k = self.heads[hid].params["w"].shape[1]
            ys = y[groups[hid]]
            if ys.ndim == 1 and ys.size and (ys.min() < 0 or ys.max() >= k):
                raise DataError(f"labels out of range [0, {k}) for head {hid!r}")
            if ys.ndim == 2 and ys.shape[1] != k:
                raise DataError(f"soft labels have {ys.shape[1]} classes, head {hid!r} has {k}")

        shared = self.stages[: self.n_shared]
        train_shared = [self.trainable[f"stage{i + 1}"] for i in range(self.n_shared)]
        lowest = next((i for i, t in enumerate(train_shared) if t), None)

        h = np.asarray(x, dtype=DTYPE)
        caches = []
        for st in shared:
            h, c = st.forward(h)
            caches.append(c)

        grads: dict[str, np.ndarray] = {}
        total = 0.0
        dh = np.zeros_like(h) if lowest is not None else None
        for hid, idx in groups.items():
            if idx.size == 0:
                continue
            z = h[idx] if len(groups) > 1 else h
            branch = self.branches.get(hid, []) if self.n_task_specific else []
            bcache = []
            for st in branch:
                z, c = st.forward(z)
                bcache.append(c)
            feats = z.reshape(z.shape[0], -1)
            head = self.heads[hid]
            logits, hc = head.forward(feats)
            loss, dlogits = cross_entropy(logits, y[idx])
            total += loss
            dlogits /= n
            branch_units = [f"stage{self.n_shared + j + 1}@{hid}" for j in range(len(branch))]
            need_below = lowest is not None or any(self.trainable[u] for u in branch_units)
            head_unit = f"head:{hid}"
            dfeat, g = head.backward(dlogits, hc, need_dx=need_below, need_grads=self.trainable[head_unit])
            for k, v in g.items():
                grads[f"{head_unit}/{k}"] = v
            if not need_below:
                continue
            dz = dfeat.reshape(z.shape)
            for j in range(len(branch) - 1, -1, -1):
                unit = branch_units[j]
                more_below = lowest is not None or any(self.trainable[u] for u in branch_units[:j])
                dz, g = branch[j].backward(dz, bcache[j], need_dx=more_below, need_grads=self.trainable[unit])
                for k, v in g.items():
                    grads[f"{unit}/{k}"] = v
                if not more_below:
                    break
            if dh is not None:
                if len(groups) > 1:
                    dh[idx] += dz
                else:
                    dh += dz
        if dh is not None:
            for i in range(self.n_shared - 1, lowest - 1, -1):
                unit = f"stage{i + 1}"
                dh, g = shared[i].backward(dh, caches[i], need_dx=i > lowest, need_grads=train_shared[i])
                for k, v in g.items():
                    grads[f"{unit}/{k}"] = v
        return total / n, grads

    # -- parameters ----------------------------------------------------
    def clone(self) -> "Model":
        return copy.deepcopy(self)

    def reset_optimizer_state(self) -> None:
        self.velocity = {}


def set_trainability(model: Model, flags) -> None:
    """Set per-unit trainability.

    ``flags`` is either a mapping ``unit -> bool`` (unknown units raise) or a
    predicate called with every unit name.
    """
    units = model.units()
    if callable(flags):
        for u in units:
            model.trainable[u] = bool(flags(u))
        return
    for u, v in flags.items():
        if u not in model.trainable:
            raise StateError(f"unknown unit {u!r}; known: {units}")
        model.trainable[u] = bool(v)


def freeze_bottom(model: Model, k: int) -> None:
    """Freeze stages 1..k (all routes); everything else trainable."""
    def rule(unit: str) -> bool:
        if unit.startswith("head:"):
            return True
        return int(unit[5:].split("@")[0]) > k

    set_trainability(model, rule)


def train_step(model: Model, batch, labels, opt: OptimizerConfig, extra_loss=None, head_ids=None) -> float:
    """One SGD-with-momentum step; returns the pre-step loss.

    Update rule: ``v = momentum * v + (grad + weight_decay * p)``,
    ``p -= lr * v``. Weight decay is not part of the returned loss. Frozen
    units keep both parameters and velocity untouched.
    """
    loss, grads = model.loss_and_grads(batch, labels, head_ids)
    params = model.named_params()
    if extra_loss is not None:
        value, pgrads = extra_loss(model)
        loss += value
        live = {u for u, t in model.trainable.items() if t}
        for k, g in pgrads.items():
            if k.split("/")[0] in live and k in params:
                grads[k] = grads[k] + g if k in grads else g
    for name, g in grads.items():
        p = params[name]
        if opt.weight_decay:
            g = g + opt.weight_decay * p
        v = model.velocity.get(name)
        v = g.copy() if v is None else opt.momentum * v + g
        model.velocity[name] = v
        p -= opt.lr * v
    return float(loss)


def snapshot(model: Model, label: str) -> ParamSnapshot:
    return ParamSnapshot(
        label=label,
        params={k: v.copy() for k, v in model.named_params().items()},
        fingerprint=model.fingerprint(),
        units=tuple(model.units()),
    )


def restore(model: Model, snap: ParamSnapshot, units=None) -> None:
    """Copy the snapshot's values into the given units (default: all snapshot units)."""
    from ..errors import CompatibilityError

    if snap.fingerprint != model.fingerprint():
        raise CompatibilityError(f"snapshot {snap.label!r} has fingerprint {snap.fingerprint}, model has {model.fingerprint()}")
    units = snap.units if units is None else tuple(units)
    missing = [u for u in units if u not in snap.units]
    if missing:
        raise CompatibilityError(f"snapshot {snap.label!r} has no units {missing}")
    params = model.named_params()
    for name, value in snap.params.items():
        if name.split("/")[0] in units:
            if name not in params:
                raise CompatibilityError(f"model has no parameter {name}")
            np.copyto(params[name], value)
