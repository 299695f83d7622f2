"""Wigner small-d and D blocks, harmonic rotation vectors, coefficient shift.

A degree-l block is the (2l+1)-dimensional irreducible representation of
a rotation acting on harmonic coefficients: rotating a band-limited
function f by R (i.e. pulling back through R^-1) multiplies each degree-l
coefficient vector by the block of R.  Blocks compose homomorphically,
D(R1) D(R2) = D(R1 R2), and are unitary (complex basis) or orthogonal
(real basis).

Phase convention: for ZYZ angles with matrix Rz(gamma) Ry(beta) Rz(alpha),
the row-index phase carries the leftmost z-angle,

    D^l[m, n] = exp(-i m gamma) * dT^l[m, n](beta) * exp(-i n alpha),

where dT is the transpose of ``small_d`` below.  This is the unique
pairing under which the blocks both compose homomorphically and satisfy
the coefficient shift law; the test suite checks it against dense-grid
resampling.

The flattened harmonic vector stacks the real-basis blocks for l = 0..L
row-major (m outer, n inner), giving length M = sum (2l+1)^2; M = 455 at
L = 6.  Each block being orthogonal, |psi|^2 = sum (2l+1) for any
rotation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import rotations
from ._kernels import small_d_stack, small_d_terms
from .harmonics import SphericalCoeffs, complex_to_real_matrix
from .rotations import EulerZYZ, RotationMatrix

PSI_LAYOUT_VERSION = 1


def m_total(bandlimit: int) -> int:
    """sum_{l=0}^{L} (2l+1)^2 = (L+1)(2L+1)(2L+3)/3."""
    return (bandlimit + 1) * (2 * bandlimit + 1) * (2 * bandlimit + 3) // 3


def block_offsets(bandlimit: int) -> list[int]:
    offs = [0]
    for l in range(bandlimit + 1):
        offs.append(offs[-1] + (2 * l + 1) ** 2)
    return offs


@dataclass(frozen=True)
class WignerBlock:
    l: int
    entries: np.ndarray
    basis: str

    def __post_init__(self):
        dim = 2 * self.l + 1
        entries = np.asarray(self.entries)
        if entries.shape != (dim, dim):
            raise ValueError(f"degree-{self.l} block must be {dim}x{dim}")
        if self.basis not in ("real", "complex"):
            raise ValueError(f"basis must be 'real' or 'complex': {self.basis!r}")
        object.__setattr__(self, "entries", entries)


@dataclass(frozen=True)
class HarmonicVector:
    """Flattened stack of real Wigner blocks for l = 0..L."""

    bandlimit: int
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=float)
        if data.shape != (m_total(self.bandlimit),):
            raise ValueError(
                f"expected {m_total(self.bandlimit)} entries at "
                f"L={self.bandlimit}, got {data.shape}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def block(self, l: int) -> np.ndarray:
        dim = 2 * l + 1
        start = block_offsets(self.bandlimit)[l]
        return self.data[start:start + dim * dim].reshape(dim, dim)


# ---------------------------------------------------------------------------
# small-d and full blocks
# ---------------------------------------------------------------------------

def small_d(l: int, m: int, n: int, beta: float) -> float:
    """d^l_{m,n}(beta) from the closed-form sum over k.

    The sum is restricted to k with every factorial argument >= 0;
    factorials switch to log-space above degree 10.
    """
    if abs(m) > l or abs(n) > l:
        raise ValueError(f"need |m|,|n| <= l, got l={l}, m={m}, n={n}")
    d = small_d_stack(l, np.array([float(beta)]))[0]
    return float(d[m + l, n + l])


def small_d_matrix(l: int, beta: float) -> np.ndarray:
    """Full (2l+1)x(2l+1) small-d matrix indexed [m+l, n+l]."""
    small_d_terms(l)  # validates l <= 20
    return small_d_stack(l, np.array([float(beta)]))[0]


def wigner_D_complex(l: int, e: EulerZYZ) -> WignerBlock:
    """Unitary degree-l block of the rotation with ZYZ angles e."""
    ms = np.arange(-l, l + 1)
    d_t = small_d_matrix(l, e.beta).T
    entries = (np.exp(-1j * ms * e.gamma)[:, None] * d_t
               * np.exp(-1j * ms * e.alpha)[None, :])
    return WignerBlock(l, entries, "complex")


def wigner_D_real(l: int, e: EulerZYZ) -> WignerBlock:
    """Orthogonal degree-l block in the real harmonic basis.

    Conjugation of the complex block by the coefficient basis change:
    D_real = U_l D_complex U_l^dagger.
    """
    u = complex_to_real_matrix(l)
    d = wigner_D_complex(l, e).entries
    dr = u @ d @ u.conj().T
    resid = float(np.max(np.abs(dr.imag)))
    if resid > 1e-10:
        raise AssertionError(f"real-basis block has imaginary residue {resid}")
    return WignerBlock(l, np.ascontiguousarray(dr.real), "real")


def _euler_of(r) -> EulerZYZ:
    if isinstance(r, EulerZYZ):
        return r
    if isinstance(r, RotationMatrix):
        return rotations.matrix_to_euler(r)
    return rotations.matrix_to_euler(RotationMatrix(np.asarray(r, dtype=float)))


def wigner_block_stacks_real(matrices: np.ndarray, bandlimit: int,
                             chunk: int = 65536) -> list[np.ndarray]:
    """Real-basis blocks for a stack of rotation matrices.

    Returns one array per degree l, shape (n, 2l+1, 2l+1).  Work is
    chunked so multi-million-rotation grids stream without a blow-up in
    temporaries.
    """
    matrices = np.asarray(matrices, dtype=float)
    n = matrices.shape[0]
    alpha, beta, gamma = rotations.matrices_to_zyz(matrices)
    out = [np.empty((n, 2 * l + 1, 2 * l + 1)) for l in range(bandlimit + 1)]
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        a, b, g = alpha[sl], beta[sl], gamma[sl]
        for l in range(bandlimit + 1):
            ms = np.arange(-l, l + 1)
            d_t = small_d_stack(l, b).transpose(0, 2, 1)
            dc = (np.exp(-1j * np.outer(g, ms))[:, :, None] * d_t
                  * np.exp(-1j * np.outer(a, ms))[:, None, :])
            u = complex_to_real_matrix(l)
            out[l][sl] = np.einsum("mi,cij,jn->cmn", u, dc, u.conj().T,
                                   optimize=True).real
    return out


def rotations_to_psi(matrices: np.ndarray, bandlimit: int) -> np.ndarray:
    """Flattened harmonic vectors for a stack of matrices, shape (n, M)."""
    matrices = np.asarray(matrices, dtype=float)
    squeeze = matrices.ndim == 2
    if squeeze:
        matrices = matrices[None]
    blocks = wigner_block_stacks_real(matrices, bandlimit)
    flat = np.concatenate([b.reshape(b.shape[0], -1) for b in blocks], axis=1)
    return flat[0] if squeeze else flat


def rotation_to_psi(r, bandlimit: int) -> HarmonicVector:
    """Harmonic vector of a single rotation (matrix or ZYZ angles)."""
    if isinstance(r, EulerZYZ):
        blocks = [wigner_D_real(l, r).entries for l in range(bandlimit + 1)]
        return HarmonicVector(
            bandlimit, np.concatenate([b.ravel() for b in blocks]))
    m = r.m if isinstance(r, RotationMatrix) else np.asarray(r, dtype=float)
    return HarmonicVector(bandlimit, rotations_to_psi(m, bandlimit))


# ---------------------------------------------------------------------------
# Coefficient rotation (shift law)
# ---------------------------------------------------------------------------

def rotate_coeffs(coeffs: SphericalCoeffs, r) -> SphericalCoeffs:
    """Rotate a band-limited function by acting on its coefficients.

    Per degree, c' = D^l(r) c; synthesizing the result reproduces the
    input signal pulled back through r^-1.  The Wigner basis follows the
    coefficient basis.
    """
    e = _euler_of(r)
    out = np.empty_like(coeffs.data)
    for l in range(coeffs.bandlimit + 1):
        if coeffs.basis == "complex":
            d = wigner_D_complex(l, e).entries
        else:
            d = wigner_D_real(l, e).entries
        out[:, l * l:(l + 1) ** 2] = coeffs.block(l) @ d.T
    return SphericalCoeffs(coeffs.bandlimit, out, coeffs.basis)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def psi_to_json(psi: HarmonicVector) -> str:
    return json.dumps({
        "layout_version": PSI_LAYOUT_VERSION,
        "bandlimit": psi.bandlimit,
        "data": list(psi.data),
    })


def psi_from_json(text: str) -> HarmonicVector:
    obj = json.loads(text)
    if obj.get("layout_version") != PSI_LAYOUT_VERSION:
        raise ValueError("unsupported harmonic-vector layout version")
    return HarmonicVector(obj["bandlimit"], np.asarray(obj["data"], dtype=float))


def psi_to_bytes(psi: HarmonicVector) -> bytes:
    head = struct.pack("<III", PSI_LAYOUT_VERSION, psi.bandlimit, len(psi.data))
    return head + psi.data.astype("<f8").tobytes()


def psi_from_bytes(blob: bytes) -> HarmonicVector:
    version, bandlimit, n = struct.unpack_from("<III", blob)
    if version != PSI_LAYOUT_VERSION:
        raise ValueError("unsupported harmonic-vector layout version")
    data = np.frombuffer(blob, dtype="<f8", count=n, offset=12)
    return HarmonicVector(bandlimit, data.copy())
