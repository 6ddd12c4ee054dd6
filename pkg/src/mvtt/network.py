"""The multiview two-task segmentation network and its ablation variants.

Anatomy pathway: a shared high-resolution stem, an axial sequential
encoder-decoder with optional ConvLSTM layers, dilated residual branches
on the sagittal and coronal reslicings, channel-wise fusion, and a
sigmoid LA/PV head. The scar pathway modulates the fused features with a
soft attention mask before its own sigmoid head.

Feature stacks are (S, C, H, W) arrays tagged with the viewing axis; the
canonical axial layout indexes (z, C, y, x).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import fileio
from .attention import MaskBranch, apply_attention, apply_attention_backward
from .layers import Chain, Conv, ConvLstm, Lrn, MaxPool2, Relu, ResidualDilatedBlock, Sigmoid, Upsample2
from .ops import ConvSpec, LrnSpec, ShapeError

AXES = ("axial", "sagittal", "coronal")
DILATION_RATES = (1, 2, 4, 8)

CHECKPOINT_MAGIC = "MVTTCKPT1"


class ModelVariant(str, enum.Enum):
    MVTT = "MVTT"
    MULTI_VIEW_ONLY = "MultiViewOnly"
    AXIAL_CONVLSTM = "AxialConvLstm"
    MULTI_VIEW_CONVLSTM = "MultiViewConvLstm"
    MULTI_VIEW_ATTENTION = "MultiViewAttention"
    AXIAL_CONVLSTM_ATTENTION = "AxialConvLstmAttention"
    SEPARATE_LA_PV = "SeparateLaPv"
    SEPARATE_SCAR = "SeparateScar"

    @property
    def uses_multiview(self):
        return self not in (
            ModelVariant.AXIAL_CONVLSTM,
            ModelVariant.AXIAL_CONVLSTM_ATTENTION,
        )

    @property
    def uses_convlstm(self):
        return self not in (
            ModelVariant.MULTI_VIEW_ONLY,
            ModelVariant.MULTI_VIEW_ATTENTION,
        )

    @property
    def uses_attention(self):
        return self in (
            ModelVariant.MVTT,
            ModelVariant.MULTI_VIEW_ATTENTION,
            ModelVariant.AXIAL_CONVLSTM_ATTENTION,
            ModelVariant.SEPARATE_SCAR,
        )

    @property
    def trains_la(self):
        return self is not ModelVariant.SEPARATE_SCAR

    @property
    def trains_scar(self):
        return self is not ModelVariant.SEPARATE_LA_PV


@dataclass
class FeatureVolume:
    """A slice stack (S, C, H, W) tagged with its viewing axis."""

    data: np.ndarray
    axis: str = "axial"

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise ShapeError(f"FeatureVolume expects (S,C,H,W), got {self.data.shape}")


# index permutations between the canonical axial layout (z, C, y, x)
# and each target axis layout: sagittal (x, C, z, y), coronal (y, C, z, x)
_FROM_AXIAL = {"axial": (0, 1, 2, 3), "sagittal": (3, 1, 0, 2), "coronal": (2, 1, 0, 3)}
_TO_AXIAL = {"axial": (0, 1, 2, 3), "sagittal": (2, 1, 3, 0), "coronal": (2, 1, 0, 3)}


def reslice(fv: FeatureVolume, target: str) -> FeatureVolume:
    """Pure index permutation between viewing axes; lossless."""
    if target not in AXES:
        raise ValueError(f"unknown axis {target!r}")
    axial = np.transpose(fv.data, _TO_AXIAL[fv.axis])
    return FeatureVolume(np.transpose(axial, _FROM_AXIAL[target]).copy(), target)


def _reslice_array(data, source, target):
    axial = np.transpose(data, _TO_AXIAL[source])
    return np.ascontiguousarray(np.transpose(axial, _FROM_AXIAL[target]))


@dataclass
class NetConfig:
    extents: tuple = (32, 32, 32)  # (z slices, y, x)
    variant: ModelVariant = ModelVariant.MVTT
    seed: int = 0
    channels: int = 12
    head_channels: int = 24
    lrn: LrnSpec = field(default_factory=LrnSpec)
    lstm_at_bottleneck: bool = True
    lstm_after_decoder: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        self.variant = ModelVariant(self.variant)
        self.extents = tuple(int(e) for e in self.extents)
        z, y, x = self.extents
        if y % 8 or x % 8:
            raise ShapeError(
                f"in-plane extents must be divisible by 8 (three 2x poolings), got {y}x{x}"
            )

    def to_dict(self):
        return {
            "extents": list(self.extents),
            "variant": self.variant.value,
            "seed": self.seed,
            "channels": self.channels,
            "head_channels": self.head_channels,
            "lrn": {
                "depth_radius": self.lrn.depth_radius,
                "k": self.lrn.k,
                "alpha": self.lrn.alpha,
                "beta": self.lrn.beta,
            },
            "lstm_at_bottleneck": self.lstm_at_bottleneck,
            "lstm_after_decoder": self.lstm_after_decoder,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["extents"] = tuple(d["extents"])
        d["lrn"] = LrnSpec(**d["lrn"])
        return cls(**d)


def _head(path, in_ch, mid_ch, lrn_spec, seed):
    """conv(mid)+ReLU+LRN x2 -> conv(1)+sigmoid probability head."""
    return Chain([
        Conv(f"{path}.c1", ConvSpec(in_ch, mid_ch), seed=seed), Relu(), Lrn(lrn_spec),
        Conv(f"{path}.c2", ConvSpec(mid_ch, mid_ch), seed=seed), Relu(), Lrn(lrn_spec),
        Conv(f"{path}.out", ConvSpec(mid_ch, 1), seed=seed), Sigmoid(),
    ])


class MvttModel:
    """Forward/backward passes for one volume; parameters owned by layers."""

    def __init__(self, config: NetConfig):
        self.config = config
        v = config.variant
        c = config.channels
        seed = config.seed
        lrn = config.lrn
        z, y, x = config.extents

        self.stem_conv = Conv("stem.conv", ConvSpec(1, c), seed=seed)
        self.stem_relu = Relu()

        enc = []
        for lvl in (1, 2, 3):
            for sub in ("a", "b"):
                enc += [Conv(f"seq.enc{lvl}{sub}", ConvSpec(c, c), seed=seed), Relu(), Lrn(lrn)]
            enc.append(MaxPool2())
        self.encoder = Chain(enc)

        dec = []
        for lvl in (1, 2, 3):
            dec.append(Upsample2())
            for sub in ("a", "b"):
                dec += [Conv(f"seq.dec{lvl}{sub}", ConvSpec(c, c), seed=seed), Relu(), Lrn(lrn)]
        self.decoder = Chain(dec)

        self.lstm_bottleneck = None
        self.lstm_decoder = None
        if v.uses_convlstm:
            if config.lstm_at_bottleneck:
                self.lstm_bottleneck = ConvLstm(
                    "seq.lstm_bottleneck", c, c, (y // 8, x // 8), seed=seed
                )
            if config.lstm_after_decoder:
                self.lstm_decoder = ConvLstm("seq.lstm_decoder", c, c, (y, x), seed=seed)

        self.sagittal_branch_chain = None
        self.coronal_branch_chain = None
        if v.uses_multiview:
            self.sagittal_branch_chain = Chain([
                ResidualDilatedBlock(f"sag.block{i}", c, d, lrn, seed=seed)
                for i, d in enumerate(DILATION_RATES, 1)
            ])
            self.coronal_branch_chain = Chain([
                ResidualDilatedBlock(f"cor.block{i}", c, d, lrn, seed=seed)
                for i, d in enumerate(DILATION_RATES, 1)
            ])

        fuse_in = 3 * c if v.uses_multiview else c
        self.fuse_mv = Conv("fuse.mv", ConvSpec(fuse_in, c), seed=seed)
        self.fuse_combine = Conv("fuse.combine", ConvSpec(2 * c, c), seed=seed)

        self.mask_branch_module = MaskBranch("attn.mask", c, lrn, seed=seed) if v.uses_attention else None
        self.head_la = _head("head_la", c, config.head_channels, lrn, seed) if v.trains_la else None
        self.head_scar = _head("head_scar", c, config.head_channels, lrn, seed) if v.trains_scar else None

        self._cache = {}

    # -- parameter namespace -------------------------------------------------

    def _components(self):
        comps = [self.stem_conv, self.encoder]
        if self.lstm_bottleneck is not None:
            comps.append(self.lstm_bottleneck)
        comps.append(self.decoder)
        if self.lstm_decoder is not None:
            comps.append(self.lstm_decoder)
        if self.sagittal_branch_chain is not None:
            comps += [self.sagittal_branch_chain, self.coronal_branch_chain]
        comps += [self.fuse_mv, self.fuse_combine]
        if self.mask_branch_module is not None:
            comps.append(self.mask_branch_module)
        if self.head_la is not None:
            comps.append(self.head_la)
        if self.head_scar is not None:
            comps.append(self.head_scar)
        return comps

    def named_params(self):
        for comp in self._components():
            yield from comp.named_params()

    def named_grads(self):
        for comp in self._components():
            yield from comp.named_grads()

    def zero_grads(self):
        for _, g in self.named_grads():
            g[...] = 0.0

    # -- forward stages ------------------------------------------------------

    def stem(self, intensities):
        """High-resolution feature extraction: per-axial-slice conv + ReLU."""
        intensities = np.asarray(intensities, dtype=np.float64)
        if intensities.shape != self.config.extents:
            raise ShapeError(
                f"volume extents {intensities.shape} != configured {self.config.extents}"
            )
        x = intensities[:, None, :, :]
        out = self.stem_relu.forward(self.stem_conv.forward(x))
        return FeatureVolume(out, "axial")

    def sequential_branch(self, fv: FeatureVolume):
        """Axial encoder-decoder with ConvLSTM layers over the slice axis."""
        if fv.axis != "axial":
            raise ShapeError("sequential branch expects axial features")
        h = self.encoder.forward(fv.data)
        if self.lstm_bottleneck is not None:
            h = self.lstm_bottleneck.forward(h)
        h = self.decoder.forward(h)
        if self.lstm_decoder is not None:
            h = self.lstm_decoder.forward(h)
        return FeatureVolume(h, "axial")

    def _sequential_backward(self, gy):
        if self.lstm_decoder is not None:
            gy = self.lstm_decoder.backward(gy)
        gy = self.decoder.backward(gy)
        if self.lstm_bottleneck is not None:
            gy = self.lstm_bottleneck.backward(gy)
        return self.encoder.backward(gy)

    def dilated_branch(self, fv: FeatureVolume):
        """Four dilated residual conv blocks; extents preserved."""
        if fv.axis == "sagittal":
            chain = self.sagittal_branch_chain
        elif fv.axis == "coronal":
            chain = self.coronal_branch_chain
        else:
            raise ShapeError("dilated branches process sagittal or coronal features")
        if chain is None:
            raise ShapeError(f"variant {self.config.variant.value} has no multiview branches")
        return FeatureVolume(chain.forward(fv.data), fv.axis)

    def fuse(self, axial_seq, sagittal_out, coronal_out, stem_features):
        """Concatenate branch outputs, fuse, and combine with stem features."""
        if self.config.variant.uses_multiview:
            sag_back = _reslice_array(sagittal_out.data, "sagittal", "axial")
            cor_back = _reslice_array(coronal_out.data, "coronal", "axial")
            for name, arr in (("sagittal", sag_back), ("coronal", cor_back)):
                if arr.shape != axial_seq.data.shape:
                    raise ShapeError(
                        f"{name} branch reslices to {arr.shape}, axial is {axial_seq.data.shape}"
                    )
            cat = np.concatenate([axial_seq.data, sag_back, cor_back], axis=1)
        else:
            cat = axial_seq.data
        fused_mv = self.fuse_mv.forward(cat)
        combined = self.fuse_combine.forward(
            np.concatenate([fused_mv, stem_features.data], axis=1)
        )
        return FeatureVolume(combined, "axial")

    def _fuse_backward(self, g_fused):
        c = self.config.channels
        g_cat2 = self.fuse_combine.backward(g_fused)
        g_fused_mv, g_stem_direct = g_cat2[:, :c], g_cat2[:, c:]
        g_cat = self.fuse_mv.backward(g_fused_mv)
        g_axial = g_cat[:, :c]
        g_sag_back = g_cat[:, c : 2 * c] if self.config.variant.uses_multiview else None
        g_cor_back = g_cat[:, 2 * c :] if self.config.variant.uses_multiview else None
        return g_axial, g_sag_back, g_cor_back, g_stem_direct

    def la_pv_head(self, fused: FeatureVolume):
        if self.head_la is None:
            raise ShapeError(f"variant {self.config.variant.value} has no LA/PV head")
        return self.head_la.forward(fused.data)

    def mask_branch(self, fused: FeatureVolume):
        if self.mask_branch_module is None:
            raise ShapeError(f"variant {self.config.variant.value} has no attention branch")
        return self.mask_branch_module.forward(fused.data)

    def scar_head(self, attended):
        if self.head_scar is None:
            raise ShapeError(f"variant {self.config.variant.value} has no scar head")
        data = attended.data if isinstance(attended, FeatureVolume) else attended
        return self.head_scar.forward(data)

    def forward(self, intensities):
        """Full pipeline; returns (la_pv_prob, scar_prob), either may be None."""
        v = self.config.variant
        stem_f = self.stem(intensities)
        axial_out = self.sequential_branch(stem_f)
        sag_out = cor_out = None
        if v.uses_multiview:
            sag_in = FeatureVolume(_reslice_array(stem_f.data, "axial", "sagittal"), "sagittal")
            cor_in = FeatureVolume(_reslice_array(stem_f.data, "axial", "coronal"), "coronal")
            sag_out = self.dilated_branch(sag_in)
            cor_out = self.dilated_branch(cor_in)
        fused = self.fuse(axial_out, sag_out, cor_out, stem_f)

        la_prob = self.la_pv_head(fused) if v.trains_la else None
        mask = None
        if v.uses_attention:
            mask = self.mask_branch(fused)
            attended = apply_attention(fused.data, mask)
        else:
            attended = fused.data
        scar_prob = self.scar_head(attended) if v.trains_scar else None

        self._cache = {"fused": fused.data, "mask": mask}
        return la_prob, scar_prob

    def backward(self, grad_la, grad_scar):
        """Backpropagate head gradients through the whole network.

        Either gradient may be None when the corresponding head is absent
        (or detached). Parameter gradients accumulate on the layers.
        """
        v = self.config.variant
        fused = self._cache["fused"]
        g_fused = np.zeros_like(fused)
        if grad_la is not None:
            if self.head_la is None:
                raise ShapeError("grad_la supplied but the variant has no LA/PV head")
            g_fused += self.head_la.backward(grad_la)
        if grad_scar is not None:
            if self.head_scar is None:
                raise ShapeError("grad_scar supplied but the variant has no scar head")
            g_attended = self.head_scar.backward(grad_scar)
            if v.uses_attention:
                g_direct, g_mask = apply_attention_backward(
                    g_attended, fused, self._cache["mask"]
                )
                g_fused += g_direct
                g_fused += self.mask_branch_module.backward(g_mask)
            else:
                g_fused += g_attended

        g_axial, g_sag_back, g_cor_back, g_stem = self._fuse_backward(g_fused)
        g_stem = g_stem.copy()
        g_stem += self._sequential_backward(g_axial)
        if v.uses_multiview:
            g_sag_out = _reslice_array(g_sag_back, "axial", "sagittal")
            g_stem += _reslice_array(
                self.sagittal_branch_chain.backward(g_sag_out), "sagittal", "axial"
            )
            g_cor_out = _reslice_array(g_cor_back, "axial", "coronal")
            g_stem += _reslice_array(
                self.coronal_branch_chain.backward(g_cor_out), "coronal", "axial"
            )
        self.stem_conv.backward(self.stem_relu.backward(g_stem))


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(model: MvttModel, path):
    names, shapes, blobs = [], [], []
    for name, arr in model.named_params():
        names.append(name)
        shapes.append(list(arr.shape))
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "magic": CHECKPOINT_MAGIC,
        "config": model.config.to_dict(),
        "params": [{"path": n, "shape": s} for n, s in zip(names, shapes)],
    }
    fileio.write_header_blob(path, header, b"".join(blobs))


def load_checkpoint(path) -> MvttModel:
    header, blob = fileio.read_header_blob(path, expected_magic=CHECKPOINT_MAGIC)
    model = MvttModel(NetConfig.from_dict(header["config"]))
    offset = 0
    by_path = dict(model.named_params())
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(blob):
            raise fileio.FileFormatError(
                f"{path}: checkpoint blob ends inside parameter {entry['path']}"
            )
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
        offset += nbytes
        target = by_path.get(entry["path"])
        if target is None:
            raise fileio.FileFormatError(f"{path}: unknown parameter path {entry['path']}")
        if target.shape != shape:
            raise fileio.FileFormatError(
                f"{path}: parameter {entry['path']} has shape {shape}, model expects {target.shape}"
            )
        target[...] = arr
    if offset != len(blob):
        raise fileio.FileFormatError(f"{path}: {len(blob) - offset} trailing bytes in blob")
    return model
