"""Multicarrier transforms and constellation mapping.

Unitary modulation matrices for OFDM (DFT), OTFS (F_L kron I_K) and AFDM
(chirp-DFT-chirp), applied matrix-free via FFTs, plus Gray-labeled QPSK /
16QAM mapping, symbol priors and posteriors for the nonlinear detector.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

SCHEMES = ("ofdm", "otfs", "afdm")


def afdm_chirps(n, max_doppler_hz=None, subcarrier_hz=None, doppler_taps=None):
    """Full-diversity AFDM chirp rates.

    c1 = (2 k_max + 1) / (2N) with k_max the Doppler spread in bins
    (ceil(nu_max / subcarrier)); c2 is a fixed small irrational-like
    constant, 1 / (2 pi N^2). Both are recorded in the transform spec so
    runs are reproducible.
    """
    if doppler_taps is None:
        if max_doppler_hz is None or subcarrier_hz is None:
            doppler_taps = 1
        else:
            doppler_taps = int(np.ceil(max_doppler_hz / subcarrier_hz))
    c1 = (2 * doppler_taps + 1) / (2.0 * n)
    c2 = 1.0 / (2.0 * np.pi * n ** 2)
    return c1, c2


@dataclass(frozen=True)
class TransformSpec:
    """Descriptor of the N-point unitary multicarrier transform A.

    modulate applies A^H (symbol -> time), demodulate applies A. For OTFS,
    n = k * l and A = F_L kron I_K; for AFDM, A = Lambda_c2 F_N Lambda_c1
    with Lambda_c = diag(exp(-2j pi c n^2)).
    """

    scheme: str
    n: int
    k: int = None
    l: int = None
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ParameterError(f"scheme must be one of {SCHEMES}")
        if self.scheme == "otfs":
            if self.k is None or self.l is None or self.k * self.l != self.n:
                raise ParameterError("OTFS needs k*l == n")

    @classmethod
    def make(cls, scheme, n, k=None, l=None, c1=None, c2=None,
             max_doppler_hz=None, subcarrier_hz=None):
        scheme = scheme.lower()
        if scheme == "afdm":
            d1, d2 = afdm_chirps(n, max_doppler_hz, subcarrier_hz)
            return cls(scheme, n, c1=d1 if c1 is None else c1,
                       c2=d2 if c2 is None else c2)
        if scheme == "otfs":
            return cls(scheme, n, k=k, l=l)
        return cls(scheme, n)

    # A and A^H, matrix-free. Unitary DFT convention: (F v)[m] ~ fft(v)/sqrt(N).
    def forward(self, v):
        """Apply A (demodulation direction)."""
        v = np.asarray(v)
        if v.shape[-1] != self.n:
            raise ParameterError(f"expected length {self.n}, got {v.shape[-1]}")
        if self.scheme == "ofdm":
            return np.fft.fft(v, axis=-1) / np.sqrt(self.n)
        if self.scheme == "otfs":
            shp = v.shape[:-1] + (self.l, self.k)
            grid = v.reshape(shp)
            out = np.fft.fft(grid, axis=-2) / np.sqrt(self.l)
            return out.reshape(v.shape)
        phase1 = self._chirp(self.c1)
        phase2 = self._chirp(self.c2)
        return phase2 * (np.fft.fft(phase1 * v, axis=-1) / np.sqrt(self.n))

    def adjoint(self, v):
        """Apply A^H (modulation direction)."""
        v = np.asarray(v)
        if v.shape[-1] != self.n:
            raise ParameterError(f"expected length {self.n}, got {v.shape[-1]}")
        if self.scheme == "ofdm":
            return np.fft.ifft(v, axis=-1) * np.sqrt(self.n)
        if self.scheme == "otfs":
            shp = v.shape[:-1] + (self.l, self.k)
            grid = v.reshape(shp)
            out = np.fft.ifft(grid, axis=-2) * np.sqrt(self.l)
            return out.reshape(v.shape)
        phase1 = self._chirp(self.c1)
        phase2 = self._chirp(self.c2)
        return phase1.conj() * (np.fft.ifft(phase2.conj() * v, axis=-1) * np.sqrt(self.n))

    def _chirp(self, c):
        idx = np.arange(self.n)
        return np.exp(-2j * np.pi * c * idx.astype(float) ** 2)

    def dense_matrix(self):
        """Dense A, for tests and small-system baselines."""
        return self.forward(np.eye(self.n)).T.copy()


def modulate(symbols, spec):
    """Time-domain block x = A^H s."""
    return spec.adjoint(symbols)


def demodulate(samples, spec):
    """Symbol-domain block s = A y; inverse of modulate."""
    return spec.forward(samples)


def blockwise(fn, vec, n):
    """Apply an N-point transform to each length-n chunk of a stacked vector."""
    vec = np.asarray(vec)
    if vec.shape[-1] % n:
        raise ParameterError("stacked vector length must be a multiple of n")
    shp = vec.shape[:-1] + (-1, n)
    return fn(vec.reshape(shp)).reshape(vec.shape)


def effective_channel(real, spec):
    """Symbol-domain equivalent channel: blocks A H_uj A^H, dense.

    Used by symbol-domain baselines and the cross-domain equivalence tests.
    """
    n = real.block_len
    dense = real.to_dense()
    out = np.empty_like(dense)
    for u in range(real.n_rx):
        for j in range(real.n_tx):
            blk = dense[u * n:(u + 1) * n, j * n:(j + 1) * n]
            # A blk A^H = forward applied to columns, then to conjugate rows
            tmp = spec.forward(blk.T).T          # A @ blk
            out[u * n:(u + 1) * n, j * n:(j + 1) * n] = spec.forward(tmp.conj()).conj()
    return out


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constellation:
    """Unit-energy point set with its Gray bit labeling.

    labels[i] holds the bit tuple of points[i] (MSB first). The 'gaussian'
    label is an analysis-only marker used by the rate module.
    """

    name: str
    points: np.ndarray
    labels: np.ndarray  # (size, bits_per_symbol) ints

    @property
    def bits_per_symbol(self):
        return self.labels.shape[1]

    @property
    def size(self):
        return self.points.size

    def is_gaussian(self):
        return self.name == "gaussian"


def _gray_pam(bits):
    """Gray-labeled PAM levels for `bits` bits: 0..2^bits-1 -> amplitude."""
    m = 1 << bits
    # Gray sequence g(i) lists labels in descending amplitude order, so the
    # all-zero label lands on the most positive level (00 -> (1+j)/sqrt(2)).
    gray = np.arange(m) ^ (np.arange(m) >> 1)
    levels = (m - 1) - 2 * np.arange(m)  # m-1, ..., -(m-1) step -2
    amp = np.empty(m)
    amp[gray] = levels
    return amp  # indexed by label value


def make_constellation(name):
    name = name.lower()
    if name == "gaussian":
        return Constellation("gaussian", np.zeros(0, dtype=complex), np.zeros((0, 0), dtype=int))
    if name == "qpsk":
        bits_per_dim = 1
    elif name == "16qam":
        bits_per_dim = 2
    else:
        raise ParameterError(f"unknown constellation {name!r}")
    pam = _gray_pam(bits_per_dim)
    m_dim = pam.size
    scale = np.sqrt(2.0 * np.mean(pam ** 2))  # unit average symbol energy
    pts, labs = [], []
    for bi in range(m_dim):
        for bq in range(m_dim):
            pts.append((pam[bi] + 1j * pam[bq]) / scale)
            lab_i = [(bi >> k) & 1 for k in reversed(range(bits_per_dim))]
            lab_q = [(bq >> k) & 1 for k in reversed(range(bits_per_dim))]
            labs.append(lab_i + lab_q)
    return Constellation(name, np.asarray(pts), np.asarray(labs, dtype=int))


QPSK = make_constellation("qpsk")
QAM16 = make_constellation("16qam")


def map_bits(bits, const):
    """Gray-map a bit vector to unit-energy symbols."""
    bits = np.asarray(bits, dtype=int)
    bps = const.bits_per_symbol
    if bits.size % bps:
        raise ParameterError(f"bit count {bits.size} not divisible by {bps}")
    groups = bits.reshape(-1, bps)
    # label tuple -> point index
    weights = 1 << np.arange(bps - 1, -1, -1)
    label_vals = const.labels @ weights
    lut = np.empty(1 << bps, dtype=int)
    lut[label_vals] = np.arange(const.size)
    return const.points[lut[groups @ weights]]


def symbol_priors(llrs, const):
    """Per-symbol prior distribution from per-bit LLRs (LLR = log P0/P1).

    llrs has one row of bits_per_symbol entries per symbol (flattened ok);
    rows of the result sum to 1. All-zero LLRs give the uniform prior.
    """
    llrs = np.asarray(llrs, dtype=float).reshape(-1, const.bits_per_symbol)
    # log prior of each point: sum over bits of log P(bit)
    half = 0.5 * llrs
    # logP0 = half - log(e^{half}+e^{-half}); use stable formulation
    stack = np.stack([half, -half], axis=-1)
    logp = stack - np.logaddexp(half, -half)[..., None]
    bits = const.labels  # (size, bps)
    log_prior = np.zeros((llrs.shape[0], const.size))
    for b in range(const.bits_per_symbol):
        log_prior += logp[:, b, bits[:, b]]
    prior = np.exp(log_prior - log_prior.max(axis=1, keepdims=True))
    return prior / prior.sum(axis=1, keepdims=True)


def symbol_posteriors(obs, noise_var, const, priors=None):
    """Posterior over constellation points for obs = s + CN(0, noise_var).

    Returns (probs, mean, var): posterior matrix, posterior means, and
    per-symbol posterior variances E{|s - mean|^2 | obs}.
    """
    obs = np.asarray(obs)
    if noise_var <= 0:
        raise ParameterError("noise variance must be positive")
    d2 = np.abs(obs[:, None] - const.points[None, :]) ** 2
    logw = -d2 / noise_var
    if priors is not None:
        logw = logw + np.log(np.maximum(priors, 1e-300))
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    mean = w @ const.points
    second = w @ (np.abs(const.points) ** 2)
    var = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return w, mean, var


def bit_llrs_from_probs(probs, const):
    """Per-bit LLRs (log P0/P1) from posterior symbol probabilities."""
    eps = 1e-300
    out = np.empty((probs.shape[0], const.bits_per_symbol))
    for b in range(const.bits_per_symbol):
        mask0 = const.labels[:, b] == 0
        p0 = probs[:, mask0].sum(axis=1)
        p1 = probs[:, ~mask0].sum(axis=1)
        out[:, b] = np.log(np.maximum(p0, eps)) - np.log(np.maximum(p1, eps))
    return out.reshape(-1)
