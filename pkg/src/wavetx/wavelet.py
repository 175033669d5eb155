"""Single-level 2D discrete wavelet transform with exact adjoints.

Convention, fixed across the toolkit:

* analysis filters a signal by full convolution followed by odd-phase
  decimation, ``y[k] = (x * f)[2k + 1]``, with zero padding at the
  boundary; each subband axis has length ``floor((n + t - 1) / 2)`` for
  signal length n and filter length t;
* synthesis upsamples coefficients into the odd slots of a length
  ``n + t - 1`` buffer, convolves with the synthesis filter, sums the two
  branches and crops ``[t - 1, t - 1 + n)``.

Under this convention synthesis reconstructs exactly for every family
below and every signal length, and the adjoint of each transform is the
opposite transform run with time-reversed taps. For orthogonal families
the reversed analysis taps ARE the synthesis taps, so the adjoint of
``dwt2`` coincides with ``idwt2``.

Rows are filtered along the width axis first; the first letter of a
subband name is the width filter, so ``lh`` is low-pass along width and
high-pass along height. Internals accumulate in float64 regardless of
input dtype and cast back on the way out.
"""

import dataclasses

import numpy as np

from .autodiff import Tensor, _record
from .errors import InvalidArgumentError, InvalidShapeError

_SQRT2 = np.sqrt(2.0)

FILTER_NAMES = ("haar", "db2", "db3", "bior")
SUBBAND_NAMES = ("ll", "lh", "hl", "hh")


@dataclasses.dataclass(frozen=True)
class WaveletFilter:
    """A two-channel filter bank. All four tap arrays share one length."""

    name: str
    analysis_lo: np.ndarray
    analysis_hi: np.ndarray
    synthesis_lo: np.ndarray
    synthesis_hi: np.ndarray

    @property
    def taps(self):
        return len(self.analysis_lo)


def _orthogonal_bank(name, synthesis_lo):
    analysis_lo = synthesis_lo[::-1].copy()
    return _bank_from_lowpass(name, analysis_lo, synthesis_lo)


def _bank_from_lowpass(name, analysis_lo, synthesis_lo):
    # Quadrature mirror construction; alternating signs cancel aliasing.
    signs = (-1.0) ** np.arange(len(analysis_lo))
    analysis_hi = signs * synthesis_lo
    synthesis_hi = -signs * analysis_lo
    return WaveletFilter(name, analysis_lo, analysis_hi, synthesis_lo, synthesis_hi)


def _build_bank(name):
    if name == "haar":
        return _orthogonal_bank(name, np.array([1.0, 1.0]) / _SQRT2)
    if name == "db2":
        s3 = np.sqrt(3.0)
        lo = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * _SQRT2)
        return _orthogonal_bank(name, lo)
    if name == "db3":
        s10 = np.sqrt(10.0)
        a = np.sqrt(5 + 2 * s10)
        lo = np.array(
            [
                1 + s10 + a,
                5 + s10 + 3 * a,
                10 - 2 * s10 + 2 * a,
                10 - 2 * s10 - 2 * a,
                5 + s10 - 3 * a,
                1 + s10 - a,
            ]
        ) / (16 * _SQRT2)
        return _orthogonal_bank(name, lo)
    if name == "bior":
        # CDF 5/3 pair, zero-padded to a common length of six.
        analysis_lo = _SQRT2 * np.array([0.0, -1 / 8, 1 / 4, 3 / 4, 1 / 4, -1 / 8])
        synthesis_lo = _SQRT2 * np.array([0.0, 1 / 4, 1 / 2, 1 / 4, 0.0, 0.0])
        return _bank_from_lowpass(name, analysis_lo, synthesis_lo)
    raise InvalidArgumentError(f"unknown wavelet family: {name!r}")


_BANKS = {}


def filter_bank(name):
    """Return the named filter bank: haar, db2, db3 or bior (CDF 5/3)."""
    key = str(name).lower()
    if key == "bior2.2":
        key = "bior"
    if key not in _BANKS:
        _BANKS[key] = _build_bank(key) if key in FILTER_NAMES else None
    bank = _BANKS[key]
    if bank is None:
        raise InvalidArgumentError(f"unknown wavelet family: {name!r}")
    return bank


@dataclasses.dataclass
class SubbandSet:
    """The four subbands of a single-level 2D transform plus the spatial
    shape needed to invert it."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    image_shape: tuple

    def as_dict(self):
        return {"ll": self.ll, "lh": self.lh, "hl": self.hl, "hh": self.hh}

    def __getitem__(self, key):
        if key not in SUBBAND_NAMES:
            raise InvalidArgumentError(f"unknown subband: {key!r}")
        return getattr(self, key)

    def __setitem__(self, key, value):
        if key not in SUBBAND_NAMES:
            raise InvalidArgumentError(f"unknown subband: {key!r}")
        setattr(self, key, value)

    def copy(self):
        return SubbandSet(
            self.ll.copy(), self.lh.copy(), self.hl.copy(), self.hh.copy(), self.image_shape
        )


def subband_length(n, taps):
    return (n + taps - 1) // 2


def _analyze_last(x, f):
    t = len(f)
    n = x.shape[-1]
    half = subband_length(n, t)
    pad = [(0, 0)] * (x.ndim - 1) + [(t - 1, t - 1)]
    xp = np.pad(x, pad)
    out = np.zeros(x.shape[:-1] + (half,), dtype=np.float64)
    for i in range(t):
        s = t - i
        out += f[i] * xp[..., s : s + 2 * half : 2]
    return out


def _synth_last(parts, n):
    """Sum of upsample-convolve branches, cropped to length n.

    ``parts`` is a list of (coeffs, filter) pairs; a branch may be skipped
    by passing coeffs=None, which lets the same code serve single-branch
    adjoints.
    """
    out = None
    for y, g in parts:
        if y is None:
            continue
        t = len(g)
        m = n + t - 1
        half = y.shape[-1]
        up = np.zeros(y.shape[:-1] + (m,), dtype=np.float64)
        up[..., 1 : 1 + 2 * half : 2] = y
        acc = np.zeros(y.shape[:-1] + (n,), dtype=np.float64)
        for i in range(t):
            s = t - 1 - i
            acc += g[i] * up[..., s : s + n]
        out = acc if out is None else out + acc
    if out is None:
        raise InvalidArgumentError("at least one synthesis branch is required")
    return out


def _along_height(fn, *arrays, **kw):
    moved = [None if a is None else np.swapaxes(a, -1, -2) for a in arrays]
    result = fn(*moved, **kw)
    if isinstance(result, tuple):
        return tuple(np.swapaxes(r, -1, -2) for r in result)
    return np.swapaxes(result, -1, -2)


def _dwt2_filters(x, flo, fhi):
    lo_w = _analyze_last(x, flo)
    hi_w = _analyze_last(x, fhi)

    def cols(a, b):
        return _analyze_last(a, flo), _analyze_last(a, fhi), _analyze_last(b, flo), _analyze_last(b, fhi)

    ll, lh, hl, hh = _along_height(cols, lo_w, hi_w)
    return ll, lh, hl, hh


def _idwt2_filters(ll, lh, hl, hh, glo, ghi, image_shape):
    height, width = image_shape

    def cols(a, b):
        return _synth_last([(a, glo), (b, ghi)], height)

    have_lo = ll is not None or lh is not None
    have_hi = hl is not None or hh is not None
    parts = []
    if have_lo:
        parts.append((_along_height(cols, ll, lh), glo))
    if have_hi:
        parts.append((_along_height(cols, hl, hh), ghi))
    return _synth_last(parts, width)


def _check_image(x):
    if x.ndim < 2:
        raise InvalidShapeError("expected an array with at least two spatial dims")
    if x.shape[-1] < 1 or x.shape[-2] < 1:
        raise InvalidShapeError("spatial dims must be non-empty")


def dwt2(image, filt):
    """Decompose ``image`` (spatial dims last; any leading dims) into a
    SubbandSet. Each subband axis has length floor((n + taps - 1) / 2)."""
    x = np.asarray(image)
    _check_image(x)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    ll, lh, hl, hh = _dwt2_filters(x.astype(np.float64), filt.analysis_lo, filt.analysis_hi)
    shape = (x.shape[-2], x.shape[-1])
    return SubbandSet(
        ll.astype(dtype), lh.astype(dtype), hl.astype(dtype), hh.astype(dtype), shape
    )


def _expected_subband_shape(subbands, taps):
    height, width = subbands.image_shape
    return subbands.ll.shape[:-2] + (subband_length(height, taps), subband_length(width, taps))


def _check_subbands(subbands, filt):
    want = _expected_subband_shape(subbands, filt.taps)
    for name in SUBBAND_NAMES:
        got = subbands[name].shape
        if got != want:
            raise InvalidShapeError(
                f"subband {name} has shape {got}, expected {want} for image "
                f"{subbands.image_shape} under {filt.name}"
            )


def idwt2(subbands, filt):
    """Reconstruct an image from a SubbandSet. Exact inverse of ``dwt2``
    for every family in the bank."""
    _check_subbands(subbands, filt)
    dtype = subbands.ll.dtype if subbands.ll.dtype in (np.float32, np.float64) else np.float64
    out = _idwt2_filters(
        subbands.ll.astype(np.float64),
        subbands.lh.astype(np.float64),
        subbands.hl.astype(np.float64),
        subbands.hh.astype(np.float64),
        filt.synthesis_lo,
        filt.synthesis_hi,
        subbands.image_shape,
    )
    return out.astype(dtype)


def dwt2_adjoint(subbands, filt):
    """Adjoint of ``dwt2``: maps subband space back to image space so that
    <dwt2(x), y> == <x, dwt2_adjoint(y)> exactly (up to rounding)."""
    _check_subbands(subbands, filt)
    dtype = subbands.ll.dtype if subbands.ll.dtype in (np.float32, np.float64) else np.float64
    out = _idwt2_filters(
        subbands.ll.astype(np.float64),
        subbands.lh.astype(np.float64),
        subbands.hl.astype(np.float64),
        subbands.hh.astype(np.float64),
        filt.analysis_lo[::-1],
        filt.analysis_hi[::-1],
        subbands.image_shape,
    )
    return out.astype(dtype)


def idwt2_adjoint(image, filt):
    """Adjoint of ``idwt2``: maps image space to subband space so that
    <idwt2(s), x> == <s, idwt2_adjoint(x)>."""
    x = np.asarray(image)
    _check_image(x)
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    ll, lh, hl, hh = _dwt2_filters(
        x.astype(np.float64), filt.synthesis_lo[::-1], filt.synthesis_hi[::-1]
    )
    shape = (x.shape[-2], x.shape[-1])
    return SubbandSet(
        ll.astype(dtype), lh.astype(dtype), hl.astype(dtype), hh.astype(dtype), shape
    )


def dwt2_tensor(x, filt):
    """Differentiable decomposition: Tensor in, four Tensors (ll, lh, hl,
    hh) out. Each output's backward is the matching single-branch adjoint."""
    subbands = dwt2(x.data, filt)
    shape = subbands.image_shape
    outs = []
    for name in SUBBAND_NAMES:
        out = Tensor(subbands[name])
        branch = name

        def backward(g, _branch=branch):
            kwargs = {n: None for n in SUBBAND_NAMES}
            kwargs[_branch] = g.astype(np.float64)
            gx = _idwt2_filters(
                kwargs["ll"],
                kwargs["lh"],
                kwargs["hl"],
                kwargs["hh"],
                filt.analysis_lo[::-1],
                filt.analysis_hi[::-1],
                shape,
            )
            return (gx.astype(x.data.dtype),)

        outs.append(_record(out, (x,), backward))
    return tuple(outs)


def idwt2_tensor(ll, lh, hl, hh, filt, image_shape):
    """Differentiable reconstruction from four subband Tensors."""
    subbands = SubbandSet(ll.data, lh.data, hl.data, hh.data, tuple(image_shape))
    out = Tensor(idwt2(subbands, filt))

    def backward(g):
        grads = idwt2_adjoint(g.astype(np.float64), filt)
        dtype = ll.data.dtype
        return (
            grads.ll.astype(dtype),
            grads.lh.astype(dtype),
            grads.hl.astype(dtype),
            grads.hh.astype(dtype),
        )

    return _record(out, (ll, lh, hl, hh), backward)
