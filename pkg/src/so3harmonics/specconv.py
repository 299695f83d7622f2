"""Spectral convolutions on the sphere and rotation group, and the toy net.

All operations act on per-degree coefficient blocks in the real basis.

- A sphere-domain convolution correlates a signal against globally
  supported filters: per degree, the output block is the outer product
  of signal and filter spectra summed over input channels.  The result
  lives on the rotation group.
- A group-domain convolution right-composes with a locally supported
  filter given by weighted taps near the identity: per degree, output =
  input block times the transposed filter block.  Both operations are
  exactly left-equivariant: rotating the input multiplies every block
  by the rotation's Wigner block on the row index.
- The nonlinearity samples the group signal on an SO(3) grid (dot
  products with the grid's harmonic vectors), applies ReLU, and
  projects back to band-limited blocks by ridge least squares.

The toy network chains: channel mixer, projection/analysis to harmonic
coefficients, sphere convolution, grid ReLU, group convolution, and
flattens the single output channel into a harmonic vector.  Gradients
are reverse-mode, propagated by hand through the (almost entirely
linear) stages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mapper as mapper_mod
from .binio import read_blob, write_blob
from .grids import SO3Grid, so3_healpix
from .harmonics import (PointSet, SphericalCoeffs, SphericalSignal,
                        design_matrix, ridge_solver)
from .mapper import FeatureMap, MapperConfig
from .wigner import HarmonicVector, block_offsets, rotations_to_psi

CHECKPOINT_LAYOUT_VERSION = 1


@dataclass(frozen=True)
class SO3Coeffs:
    """Per-channel degree blocks of a band-limited rotation-group signal."""

    bandlimit: int
    blocks: tuple  # one (C, 2l+1, 2l+1) array per degree

    def __post_init__(self):
        blocks = tuple(np.asarray(b, dtype=float) for b in self.blocks)
        if len(blocks) != self.bandlimit + 1:
            raise ValueError("need one block stack per degree 0..L")
        c = blocks[0].shape[0]
        for l, b in enumerate(blocks):
            if b.shape != (c, 2 * l + 1, 2 * l + 1):
                raise ValueError(f"degree-{l} block stack has shape {b.shape}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def channels(self) -> int:
        return self.blocks[0].shape[0]

    def flatten(self) -> np.ndarray:
        """(C, M) layout matching harmonic vectors."""
        return np.concatenate(
            [b.reshape(self.channels, -1) for b in self.blocks], axis=1)

    @staticmethod
    def from_flat(bandlimit: int, flat: np.ndarray) -> "SO3Coeffs":
        flat = np.atleast_2d(flat)
        offs = block_offsets(bandlimit)
        blocks = [flat[:, offs[l]:offs[l + 1]].reshape(-1, 2 * l + 1, 2 * l + 1)
                  for l in range(bandlimit + 1)]
        return SO3Coeffs(bandlimit, tuple(blocks))


@dataclass
class S2FilterBank:
    """Globally supported sphere filters as per-degree spectra.

    The spectra arrays are the learnable parameters; optimizer steps
    mutate them in place.
    """

    bandlimit: int
    spectra: tuple  # one (C_out, C_in, 2l+1) array per degree

    def __post_init__(self):
        spectra = tuple(np.asarray(s, dtype=float) for s in self.spectra)
        if len(spectra) != self.bandlimit + 1:
            raise ValueError("need one spectrum stack per degree 0..L")
        co, ci = spectra[0].shape[:2]
        for l, s in enumerate(spectra):
            if s.shape != (co, ci, 2 * l + 1):
                raise ValueError(f"degree-{l} spectra have shape {s.shape}")
        self.spectra = spectra

    @property
    def out_channels(self) -> int:
        return self.spectra[0].shape[0]

    @property
    def in_channels(self) -> int:
        return self.spectra[0].shape[1]


def local_tap_rotations(count: int, support_angle: float) -> np.ndarray:
    """Quasi-uniform rotations within support_angle of the identity.

    Axes follow a Fibonacci-sphere spiral; angles use cube-root radial
    spacing, matching the near-identity volume growth of the rotation
    group.  Deterministic.
    """
    k = np.arange(count)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - 2.0 * (k + 0.5) / count
    azim = 2.0 * np.pi * k / golden
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    axes = np.stack([s * np.cos(azim), s * np.sin(azim), z], axis=1)
    angles = support_angle * ((k + 0.5) / count) ** (1.0 / 3.0)
    mats = np.empty((count, 3, 3))
    for i in range(count):
        u = axes[i]
        c, sn = np.cos(angles[i]), np.sin(angles[i])
        ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
        mats[i] = c * np.eye(3) + sn * ux + (1 - c) * np.outer(u, u)
    return mats


@dataclass
class LocalSO3Filter:
    """Locally supported group filter: weighted taps near the identity.

    Spectral blocks are recombined from the taps' Wigner blocks on every
    application, so the tap weights stay the learnable parameters (and
    are mutated in place by optimizer steps).
    """

    bandlimit: int
    support_angle: float
    taps: np.ndarray        # (K, 3, 3) rotations within the support
    weights: np.ndarray     # (C_out, C_in, K)

    def __post_init__(self):
        taps = np.ascontiguousarray(self.taps, dtype=float)
        weights = np.ascontiguousarray(self.weights, dtype=float)
        if weights.ndim != 3 or weights.shape[2] != len(taps):
            raise ValueError("weights must have shape (C_out, C_in, K)")
        ang = np.arccos(np.clip(
            (np.trace(taps, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0))
        if np.any(ang > self.support_angle + 1e-9):
            raise ValueError("tap rotations exceed the filter support angle")
        self.taps = taps
        self.weights = weights

    def spectral_blocks(self) -> list[np.ndarray]:
        """Per-degree (C_out, C_in, 2l+1, 2l+1) filter blocks."""
        stacks = _tap_block_stacks(self.taps, self.bandlimit)
        return [np.einsum("oik,kmn->oimn", self.weights, d) for d in stacks]


_tap_cache: dict[tuple, list[np.ndarray]] = {}


def _tap_block_stacks(taps: np.ndarray, bandlimit: int) -> list[np.ndarray]:
    key = (hash(taps.tobytes()), len(taps), bandlimit)
    got = _tap_cache.get(key)
    if got is None:
        flat = rotations_to_psi(taps, bandlimit)
        got = SO3Coeffs.from_flat(bandlimit, flat).blocks
        if len(_tap_cache) > 32:
            _tap_cache.clear()
        _tap_cache[key] = list(got)
    return got


# ---------------------------------------------------------------------------
# Layer operations
# ---------------------------------------------------------------------------

def s2_conv(c: SphericalCoeffs, f: S2FilterBank) -> SO3Coeffs:
    """Correlate a sphere signal against rotated global filters.

    Per degree, output[o][m, n] = sum_i c[i][m] * f[o, i][n]; a signal
    rotated by R yields output blocks left-multiplied by R's Wigner
    block.
    """
    if c.basis != "real":
        raise ValueError("sphere convolution expects real-basis coefficients")
    if c.bandlimit != f.bandlimit:
        raise ValueError(f"band limits differ: signal {c.bandlimit}, "
                         f"filter {f.bandlimit}")
    if c.channels != f.in_channels:
        raise ValueError(f"channel mismatch: signal {c.channels}, "
                         f"filter expects {f.in_channels}")
    blocks = [np.einsum("im,oin->omn", c.block(l), f.spectra[l])
              for l in range(c.bandlimit + 1)]
    return SO3Coeffs(c.bandlimit, tuple(blocks))


def so3_conv(x: SO3Coeffs, f: LocalSO3Filter) -> SO3Coeffs:
    """Right-compose a group signal with a locally supported filter.

    Per degree, output[o] = sum_i x[i] @ filter_block[o, i].T, which in
    the spatial picture is a weighted sum of right-translated samples
    s(Q @ tap_k) and therefore commutes with left rotation.
    """
    if x.bandlimit != f.bandlimit:
        raise ValueError(f"band limits differ: signal {x.bandlimit}, "
                         f"filter {f.bandlimit}")
    if x.channels != f.weights.shape[1]:
        raise ValueError(f"channel mismatch: signal {x.channels}, "
                         f"filter expects {f.weights.shape[1]}")
    hs = f.spectral_blocks()
    blocks = [np.einsum("imn,oipn->omp", x.blocks[l], hs[l])
              for l in range(x.bandlimit + 1)]
    return SO3Coeffs(x.bandlimit, tuple(blocks))


_nonlin_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _grid_operators(grid: SO3Grid, bandlimit: int) -> tuple[np.ndarray, np.ndarray]:
    """(sampling matrix A, ridge re-analysis P) for a grid at a band limit."""
    key = (id(grid.rotations), grid.size, bandlimit)
    got = _nonlin_cache.get(key)
    if got is None:
        g = grid.with_psi_table(bandlimit)
        a = g.psi_table
        p = ridge_solver(a)
        if len(_nonlin_cache) > 8:
            _nonlin_cache.clear()
        _nonlin_cache[key] = (a, p)
        got = (a, p)
    return got


def so3_nonlinearity(x: SO3Coeffs, grid: SO3Grid) -> SO3Coeffs:
    """Grid ReLU: sample, rectify, project back to band-limited blocks."""
    a, p = _grid_operators(grid, x.bandlimit)
    s = x.flatten() @ a.T
    out = np.maximum(s, 0.0) @ p.T
    return SO3Coeffs.from_flat(x.bandlimit, out)


_default_nonlin_grids: dict[int, SO3Grid] = {}


def default_nonlin_grid(level: int = 2) -> SO3Grid:
    got = _default_nonlin_grids.get(level)
    if got is None:
        got = so3_healpix(level)
        _default_nonlin_grids[level] = got
    return got


# ---------------------------------------------------------------------------
# Toy trainable model
# ---------------------------------------------------------------------------

@dataclass
class ToyModel:
    """Learnable pipeline: mixer -> lift/analyze -> sphere conv -> grid
    ReLU -> group conv -> harmonic vector."""

    bandlimit: int
    mixer: np.ndarray       # (C_in, C_mid)
    s2: S2FilterBank        # C_mid -> C_hidden
    so3: LocalSO3Filter     # C_hidden -> 1
    nonlin_level: int = 2

    def __post_init__(self):
        self.mixer = np.asarray(self.mixer, dtype=float)
        if self.s2.in_channels != self.mixer.shape[1]:
            raise ValueError("mixer output does not match sphere-filter input")
        if self.so3.weights.shape[1] != self.s2.out_channels:
            raise ValueError("group-filter input does not match hidden width")
        if self.so3.weights.shape[0] != 1:
            raise ValueError("final group filter must have one output channel")

    @property
    def hidden_channels(self) -> int:
        return self.s2.out_channels


def init_toy_model(seed: int, bandlimit: int, in_channels: int,
                   mid_channels: int = 6, hidden_channels: int = 8,
                   tap_count: int = 32, support_angle: float = np.pi / 8,
                   nonlin_level: int = 2) -> ToyModel:
    rng = np.random.default_rng(seed)
    mixer = rng.normal(scale=1.0 / np.sqrt(in_channels),
                       size=(in_channels, mid_channels))
    spectra = tuple(
        rng.normal(scale=1.0 / np.sqrt(mid_channels * (2 * l + 1)),
                   size=(hidden_channels, mid_channels, 2 * l + 1))
        for l in range(bandlimit + 1))
    taps = local_tap_rotations(tap_count, support_angle)
    weights = rng.normal(scale=1.0 / np.sqrt(hidden_channels * tap_count),
                         size=(1, hidden_channels, tap_count))
    return ToyModel(
        bandlimit=bandlimit,
        mixer=mixer,
        s2=S2FilterBank(bandlimit, spectra),
        so3=LocalSO3Filter(bandlimit, support_angle, taps, weights),
        nonlin_level=nonlin_level)


@dataclass
class ParamGrads:
    mixer: np.ndarray
    s2_spectra: list[np.ndarray]
    so3_weights: np.ndarray | None = None
    head_weights: np.ndarray | None = None

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads(
            self.mixer * factor,
            [s * factor for s in self.s2_spectra],
            None if self.so3_weights is None else self.so3_weights * factor,
            None if self.head_weights is None else self.head_weights * factor)


@dataclass
class TrunkState:
    """Intermediates needed to backpropagate through the trunk."""

    kind: str
    raw_values: np.ndarray          # (B, C_in, p) or (B, C_in, H*W)
    mixed: np.ndarray               # (B, C_mid, p)
    analysis: np.ndarray            # G: coeffs = values @ G.T
    coeff_blocks: list[np.ndarray]  # per l (B, C_mid, 2l+1)
    pre_blocks: list[np.ndarray]    # per l (B, C_h, 2l+1, 2l+1)
    relu_mask: np.ndarray           # (B, C_h, Q)
    hidden_flat: np.ndarray         # (B, C_h, M)
    sample_op: np.ndarray           # A (Q, M)
    reanalysis: np.ndarray          # P (M, Q)
    bilinear: np.ndarray | None = None   # (p, H*W) for image inputs
    edge: np.ndarray | None = None       # (p,)


def _coeff_blocks(bandlimit: int, coeffs: np.ndarray) -> list[np.ndarray]:
    return [coeffs[..., l * l:(l + 1) ** 2] for l in range(bandlimit + 1)]


def forward_trunk(model: ToyModel, kind: str, values: np.ndarray,
                  grid: PointSet | None = None,
                  cfg: MapperConfig | None = None,
                  mode: str = "eval", seed: int = 0
                  ) -> tuple[np.ndarray, TrunkState]:
    """Run mixer/lift/analysis/sphere-conv/ReLU; returns hidden (B, C_h, M).

    kind 'spherical': values (B, C_in, p) sampled on ``grid``.
    kind 'image': values (B, C_in, H, W) lifted through ``cfg``.
    """
    L = model.bandlimit
    if kind == "spherical":
        if grid is None:
            raise ValueError("spherical input needs its point set")
        batch = np.atleast_3d(np.asarray(values, dtype=float))
        mixed = np.einsum("ij,bip->bjp", model.mixer, batch)
        points = grid
        bilinear = None
        edge = None
        raw = batch
    elif kind == "image":
        if cfg is None:
            raise ValueError("image input needs a mapper config")
        imgs = np.asarray(values, dtype=float)
        if imgs.ndim == 3:
            imgs = imgs[None]
        b, c_in, h, w = imgs.shape
        if mode == "train":
            kept = mapper_mod.sample_mask(cfg, seed)
        else:
            kept = np.arange(cfg.grid.size)
        pts = cfg.grid.xyz[kept]
        bilinear = mapper_mod.bilinear_matrix(pts[:, :2], h, w)
        edge = mapper_mod.edge_weights(pts, cfg.edge_decay)
        raw = imgs.reshape(b, c_in, h * w)
        mixed_map = np.einsum("ij,biq->bjq", model.mixer, raw)
        mixed = (mixed_map @ bilinear.T) * edge[None, None, :]
        points = PointSet(cfg.grid.theta[kept], cfg.grid.phi[kept])
    else:
        raise ValueError(f"unknown input kind: {kind!r}")

    a_design = design_matrix(points, L, "real")
    g = ridge_solver(a_design)
    coeffs = mixed @ g.T
    cblocks = _coeff_blocks(L, coeffs)
    pre = [np.einsum("bim,oin->bomn", cblocks[l], model.s2.spectra[l])
           for l in range(L + 1)]
    flat_pre = np.concatenate(
        [p.reshape(p.shape[0], p.shape[1], -1) for p in pre], axis=2)
    a_grid, p_grid = _grid_operators(default_nonlin_grid(model.nonlin_level), L)
    s = flat_pre @ a_grid.T
    mask = s > 0
    hidden = (s * mask) @ p_grid.T
    state = TrunkState(kind=kind, raw_values=raw, mixed=mixed, analysis=g,
                       coeff_blocks=cblocks, pre_blocks=pre, relu_mask=mask,
                       hidden_flat=hidden, sample_op=a_grid,
                       reanalysis=p_grid, bilinear=bilinear, edge=edge)
    return hidden, state


def head_wigner(model: ToyModel, hidden: np.ndarray) -> np.ndarray:
    """Group convolution to one channel; returns (B, M) harmonic vectors."""
    L = model.bandlimit
    offs = block_offsets(L)
    hs = model.so3.spectral_blocks()
    outs = []
    for l in range(L + 1):
        dim = 2 * l + 1
        xb = hidden[:, :, offs[l]:offs[l + 1]].reshape(-1, model.hidden_channels, dim, dim)
        outs.append(np.einsum("bimn,oipn->bomp", xb, hs[l]).reshape(len(xb), -1))
    return np.concatenate(outs, axis=1)


def backward_trunk(model: ToyModel, state: TrunkState,
                   d_hidden: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gradients of (mixer, sphere spectra) given d(hidden_flat)."""
    L = model.bandlimit
    ds = (d_hidden @ state.reanalysis) * state.relu_mask
    d_flat_pre = ds @ state.sample_op
    offs = block_offsets(L)
    d_spectra = []
    d_coeffs = np.zeros_like(np.concatenate(state.coeff_blocks, axis=-1))
    for l in range(L + 1):
        dim = 2 * l + 1
        d_pre = d_flat_pre[:, :, offs[l]:offs[l + 1]].reshape(
            -1, model.s2.out_channels, dim, dim)
        d_spectra.append(np.einsum("bomn,bim->oin", d_pre, state.coeff_blocks[l]))
        d_coeffs[:, :, l * l:(l + 1) ** 2] = np.einsum(
            "bomn,oin->bim", d_pre, model.s2.spectra[l])
    d_mixed = d_coeffs @ state.analysis
    if state.kind == "spherical":
        d_mixer = np.einsum("bip,bjp->ij", state.raw_values, d_mixed)
    else:
        d_map = (d_mixed * state.edge[None, None, :]) @ state.bilinear
        d_mixer = np.einsum("biq,bjq->ij", state.raw_values, d_map)
    return d_mixer, d_spectra


def backward_head_wigner(model: ToyModel, state: TrunkState,
                         d_psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients (d_hidden, d_tap_weights) given d(psi)."""
    L = model.bandlimit
    offs = block_offsets(L)
    hs = model.so3.spectral_blocks()
    stacks = _tap_block_stacks(model.so3.taps, L)
    d_hidden = np.empty_like(state.hidden_flat)
    d_w = np.zeros_like(model.so3.weights)
    hidden = state.hidden_flat
    for l in range(L + 1):
        dim = 2 * l + 1
        d_out = d_psi[:, offs[l]:offs[l + 1]].reshape(-1, 1, dim, dim)
        xb = hidden[:, :, offs[l]:offs[l + 1]].reshape(-1, model.hidden_channels, dim, dim)
        d_hidden[:, :, offs[l]:offs[l + 1]] = np.einsum(
            "bomp,oipn->bimn", d_out, hs[l]).reshape(len(d_out), model.hidden_channels, -1)
        d_h = np.einsum("bomp,bimn->oipn", d_out, xb)
        d_w += np.einsum("oipn,kpn->oik", d_h, stacks[l])
    return d_hidden, d_w


# ---------------------------------------------------------------------------
# Single-sample convenience API
# ---------------------------------------------------------------------------

def forward(model: ToyModel, f, cfg: MapperConfig | None = None,
            mode: str = "eval", seed: int = 0) -> HarmonicVector:
    """End-to-end prediction for one input (feature map or sphere signal).

    The output stays in the frequency domain: the final group-signal
    channel is flattened directly into a harmonic vector.
    """
    if isinstance(f, FeatureMap):
        hidden, _ = forward_trunk(model, "image", f.values[None], cfg=cfg,
                                  mode=mode, seed=seed)
    elif isinstance(f, SphericalSignal):
        hidden, _ = forward_trunk(model, "spherical", f.values[None],
                                  grid=f.grid, mode=mode, seed=seed)
    else:
        raise TypeError(f"unsupported input type: {type(f)}")
    psi = head_wigner(model, hidden)[0]
    return HarmonicVector(model.bandlimit, psi)


def backward(model: ToyModel, f, cfg: MapperConfig | None,
             target: HarmonicVector, loss_cfg=None,
             mode: str = "eval", seed: int = 0) -> tuple[float, ParamGrads]:
    """Loss value and parameter gradients for one input/target pair."""
    from .estimation import LossConfig, loss_and_grad
    if loss_cfg is None:
        loss_cfg = LossConfig(bandlimit=model.bandlimit)
    if isinstance(f, FeatureMap):
        hidden, state = forward_trunk(model, "image", f.values[None], cfg=cfg,
                                      mode=mode, seed=seed)
    elif isinstance(f, SphericalSignal):
        hidden, state = forward_trunk(model, "spherical", f.values[None],
                                      grid=f.grid, mode=mode, seed=seed)
    else:
        raise TypeError(f"unsupported input type: {type(f)}")
    psi = head_wigner(model, hidden)
    value, d_psi = loss_and_grad(psi[0], target.data, loss_cfg)
    d_hidden, d_w = backward_head_wigner(model, state, d_psi[None])
    d_mixer, d_spectra = backward_trunk(model, state, d_hidden)
    return value, ParamGrads(d_mixer, d_spectra, so3_weights=d_w)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(path: str, model: ToyModel, extra_meta: dict | None = None) -> None:
    meta = {
        "layout_version": CHECKPOINT_LAYOUT_VERSION,
        "bandlimit": model.bandlimit,
        "support_angle": model.so3.support_angle,
        "nonlin_level": model.nonlin_level,
    }
    if extra_meta:
        meta.update(extra_meta)
    arrays = {"mixer": model.mixer, "so3_taps": model.so3.taps,
              "so3_weights": model.so3.weights}
    for l, s in enumerate(model.s2.spectra):
        arrays[f"s2_spectra_{l}"] = s
    write_blob(path, "checkpoint", meta, arrays)


def load_model(path: str) -> tuple[ToyModel, dict]:
    kind, meta, arrays = read_blob(path, expect_kind="checkpoint")
    if meta.get("layout_version") != CHECKPOINT_LAYOUT_VERSION:
        from .binio import IncompatibleFileError
        raise IncompatibleFileError(f"{path}: unsupported checkpoint layout")
    bandlimit = meta["bandlimit"]
    spectra = tuple(arrays[f"s2_spectra_{l}"] for l in range(bandlimit + 1))
    model = ToyModel(
        bandlimit=bandlimit,
        mixer=arrays["mixer"],
        s2=S2FilterBank(bandlimit, spectra),
        so3=LocalSO3Filter(bandlimit, meta["support_angle"],
                           arrays["so3_taps"], arrays["so3_weights"]),
        nonlin_level=meta["nonlin_level"])
    return model, meta
