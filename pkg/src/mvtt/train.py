"""Two-task MSE loss, Adam, learning-rate decay, and cross-validation driver.

Conventions:
  - Batch = one whole volume; the axial slice stack is the ConvLSTM's
    sequence axis, so BPTT stays within a volume.
  - Volume intensities are normalized by their maximum before the stem.
  - Learning rate decays per optimizer step from lr_initial to lr_final,
    geometrically by default (config-switchable to linear).
  - Everything is a pure function of (volumes, config): two runs with the
    same inputs produce bit-identical checkpoints and reports.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricsReport, MetricsRow, confusion, derive, scar_percentage
from .network import ModelVariant, MvttModel, NetConfig
from .phantom import Volume, derived_seed


@dataclass
class TrainConfig:
    variant: ModelVariant = ModelVariant.MVTT
    epochs: int = 300
    lr_initial: float = 0.001
    lr_final: float = 0.000445
    decay: str = "exponential"  # or "linear"
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    w_anat: float = 1.0
    w_scar: float = 1.0
    threshold: float = 0.5
    folds: int = 10
    wall_radius: float = 2.0

    def __post_init__(self) -> None:
        self.variant = ModelVariant(self.variant)
        if not (0.0 < self.lr_final <= self.lr_initial):
            raise ValueError(
                f"need 0 < lr_final <= lr_initial, got {self.lr_final}, {self.lr_initial}"
            )
        if self.decay not in ("exponential", "linear"):
            raise ValueError(f"unknown decay schedule {self.decay!r}")
        if self.w_anat < 0 or self.w_scar < 0 or (self.w_anat == 0 and self.w_scar == 0):
            raise ValueError(
                f"loss weights must be >= 0 and not both zero, got {self.w_anat}, {self.w_scar}"
            )
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def loss(la_prob, scar_prob, la_truth, scar_truth, w_anat=1.0, w_scar=1.0):
    """Weighted two-task MSE; returns (value, grad_la, grad_scar).

    A term is dropped when its probability map is None (Separate variants);
    gradients are d(loss)/d(prob) = 2*w*(p - t)/N per element.
    """
    if la_prob is None and scar_prob is None:
        raise ValueError("loss: both heads absent")
    value = 0.0
    grads = []
    for prob, truth, w, name in (
        (la_prob, la_truth, w_anat, "la"),
        (scar_prob, scar_truth, w_scar, "scar"),
    ):
        if prob is None:
            grads.append(None)
            continue
        prob = np.asarray(prob, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        if prob.shape != truth.shape:
            raise ValueError(f"{name} shape mismatch: prob {prob.shape} vs truth {truth.shape}")
        diff = prob - truth
        value += w * float(np.mean(diff**2))
        grads.append(2.0 * w * diff / diff.size)
    return value, grads[0], grads[1]


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> None:
    """Standard Adam with bias correction; updates params and state in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g**2
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + epsilon)


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Decayed learning rate: lr(0) = lr_initial, lr(total) = lr_final."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step == 0 or total_steps == 0:
        return config.lr_initial
    if step == total_steps:  # exact endpoint, no rounding through the power
        return config.lr_final
    frac = step / total_steps
    if config.decay == "linear":
        return config.lr_initial + (config.lr_final - config.lr_initial) * frac
    return config.lr_initial * (config.lr_final / config.lr_initial) ** frac


def normalized_input(volume: Volume) -> np.ndarray:
    peak = float(volume.intensities.max())
    return volume.intensities / peak if peak > 0 else volume.intensities


def _targets(volume: Volume, variant: ModelVariant):
    la_t = scar_t = None
    if variant.trains_la:
        if volume.la_pv is None:
            raise ValueError("training requires an la_pv mask for this variant")
        la_t = volume.la_pv[:, None, :, :].astype(np.float64)
    if variant.trains_scar:
        if volume.scar is None:
            raise ValueError("training requires a scar mask for this variant")
        scar_t = volume.scar[:, None, :, :].astype(np.float64)
    return la_t, scar_t


def build_model(volumes: list[Volume], config: TrainConfig, seed: int) -> MvttModel:
    extents = volumes[0].intensities.shape
    for v in volumes[1:]:
        if v.intensities.shape != extents:
            raise ValueError(
                f"all volumes must share extents: {v.intensities.shape} vs {extents}"
            )
    return MvttModel(
        NetConfig(extents=extents, variant=config.variant, seed=seed, threshold=config.threshold)
    )


def train_model(
    volumes: list[Volume], config: TrainConfig, seed: int | None = None
) -> tuple[MvttModel, list[float]]:
    """Train on the given volumes; returns the model and per-epoch mean loss."""
    if not volumes:
        raise ValueError("no training volumes")
    model = build_model(volumes, config, config.seed if seed is None else seed)
    params = dict(model.named_params())
    state = AdamState.for_params(params)
    total_steps = config.epochs * len(volumes)
    pairs = [(normalized_input(v), *_targets(v, config.variant)) for v in volumes]
    losses: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for i, (x, la_t, scar_t) in enumerate(pairs):
            la_p, scar_p = model.forward(x)
            value, g_la, g_scar = loss(la_p, scar_p, la_t, scar_t, config.w_anat, config.w_scar)
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch}, volume {i}, step {step}"
                )
            model.zero_grads()
            model.backward(g_la, g_scar)
            adam_step(
                params,
                dict(model.named_grads()),
                state,
                lr_at(step, total_steps, config),
                config.beta1,
                config.beta2,
                config.epsilon,
            )
            step += 1
            epoch_loss += value
        losses.append(epoch_loss / len(volumes))
    return model, losses


def predict_masks(model: MvttModel, volume: Volume, threshold: float):
    """Thresholded (la_pv, scar) boolean masks, either may be None."""
    la_p, scar_p = model.forward(normalized_input(volume))
    la_mask = None if la_p is None else la_p[:, 0, :, :] > threshold
    scar_mask = None if scar_p is None else scar_p[:, 0, :, :] > threshold
    return la_mask, scar_mask


def evaluate(
    model: MvttModel,
    volumes: list[Volume],
    config: TrainConfig,
    names: list[str] | None = None,
) -> MetricsReport:
    """Per-volume metrics rows for every task the model predicts."""
    if names is None:
        names = [f"vol{i:03d}" for i in range(len(volumes))]
    rows: list[MetricsRow] = []
    for name, vol in zip(names, volumes):
        la_mask, scar_mask = predict_masks(model, vol, config.threshold)
        if la_mask is not None and vol.la_pv is not None:
            rows.append(
                MetricsRow(volume=name, task="la_pv", metrics=derive(confusion(la_mask, vol.la_pv)))
            )
        if scar_mask is not None and vol.scar is not None:
            # Scar percentages use the ground-truth LA wall as denominator
            # (method isolation: scar scoring should not inherit LA errors).
            pct_pred = pct_true = None
            if vol.la_pv is not None and vol.la_pv.any():
                pct_pred = scar_percentage(scar_mask, vol.la_pv, config.wall_radius)
                pct_true = scar_percentage(vol.scar, vol.la_pv, config.wall_radius)
            rows.append(
                MetricsRow(
                    volume=name,
                    task="scar",
                    metrics=derive(confusion(scar_mask, vol.scar)),
                    scar_percentage_pred=pct_pred,
                    scar_percentage_true=pct_true,
                )
            )
    return MetricsReport(rows=rows)


@dataclass
class FoldResult:
    fold: int
    model: MvttModel
    losses: list[float]
    report: MetricsReport


def run_fold(
    volumes: list[Volume],
    assignment: list[int],
    fold: int,
    config: TrainConfig,
) -> FoldResult:
    """Train on every fold but `fold`, evaluate on the held-out fold."""
    if len(volumes) != len(assignment):
        raise ValueError(f"{len(volumes)} volumes but {len(assignment)} fold labels")
    if fold not in assignment:
        raise ValueError(f"fold {fold} has no volumes")
    train_vols = [v for v, f in zip(volumes, assignment) if f != fold]
    held_idx = [i for i, f in enumerate(assignment) if f == fold]
    held = [volumes[i] for i in held_idx]
    model, losses = train_model(train_vols, config, seed=derived_seed(config.seed, fold))
    report = evaluate(model, held, config, names=[f"vol{i:03d}" for i in held_idx])
    return FoldResult(fold=fold, model=model, losses=losses, report=report)


@dataclass
class CrossValResult:
    fold_results: list[FoldResult]
    report: MetricsReport = field(init=False)

    def __post_init__(self) -> None:
        self.report = MetricsReport(rows=[r for fr in self.fold_results for r in fr.report.rows])


def cross_validate(
    volumes: list[Volume], assignment: list[int], config: TrainConfig
) -> CrossValResult:
    """Run every fold; the aggregate report pools all held-out per-volume rows."""
    folds = sorted(set(assignment))
    if len(folds) < 2:
        raise ValueError(f"cross-validation needs >= 2 folds, got {len(folds)}")
    return CrossValResult(fold_results=[run_fold(volumes, assignment, f, config) for f in folds])
