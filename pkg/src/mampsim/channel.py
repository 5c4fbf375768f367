"""Doubly selective MIMO channel generation.

Builds per-slot banded time-domain channel matrices for multicarrier blocks:
uniform-power multipath with Jakes-angle Doppler, raised-cosine combined
pulse taps, Kronecker antenna correlation, and spectral metadata (eigenvalue
bounds / moments) consumed by the receiver and the state-evolution analysis.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericError, ParameterError

SPEED_OF_LIGHT = 299792458.0  # m/s

# Half-width of the truncated raised-cosine window, in sampling intervals.
# Truncation error is < 1e-3 of tap energy at rolloff 0.4; taps are
# re-normalized per path so the total path energy stays exactly 1.
PULSE_HALF_WIDTH = 4


def max_doppler_hz(velocity_kmh, carrier_hz):
    """Maximum Doppler shift v/c * f_c for a device speed in km/h."""
    return (velocity_kmh / 3.6) / SPEED_OF_LIGHT * carrier_hz


@dataclass(frozen=True)
class CorrelationHalf:
    """One side (tx or rx) of the Kronecker antenna-correlation model."""

    rho: float
    matrix: np.ndarray   # R, dim x dim, R[l,k] = rho^|l-k|
    factor: np.ndarray   # lower-triangular C with C C^H = R


def build_correlation(rho, dim):
    """Exponential correlation matrix and its Cholesky shaping factor.

    rho must lie in [0, 1). rho = 0 yields exact identities.
    """
    if not 0.0 <= rho < 1.0:
        raise ParameterError(f"correlation level must be in [0, 1), got {rho}")
    if dim < 1:
        raise ParameterError("dimension must be positive")
    idx = np.arange(dim)
    matrix = np.asarray(rho, dtype=float) ** np.abs(idx[:, None] - idx[None, :])
    factor = np.linalg.cholesky(matrix) if rho > 0 else np.eye(dim)
    return CorrelationHalf(rho=float(rho), matrix=matrix, factor=factor)


@dataclass(frozen=True)
class CorrelationSpec:
    """Transmit/receive correlation pair for a J x U antenna setup."""

    tx: CorrelationHalf
    rx: CorrelationHalf

    @classmethod
    def make(cls, rho_tx, rho_rx, n_tx, n_rx):
        return cls(tx=build_correlation(rho_tx, n_tx), rx=build_correlation(rho_rx, n_rx))


def correlate_gains(raw, spec):
    """Shape IID gains with the antenna correlation model: C_rx G C_tx^H.

    raw is (n_rx, n_tx) for a single path or (P, n_rx, n_tx) for a batch.
    """
    raw = np.asarray(raw)
    c_rx, c_tx = spec.rx.factor, spec.tx.factor
    if raw.shape[-2:] != (c_rx.shape[0], c_tx.shape[0]):
        raise ParameterError(
            f"gain matrix shape {raw.shape[-2:]} does not match correlation "
            f"dims ({c_rx.shape[0]}, {c_tx.shape[0]})"
        )
    return np.einsum("ua,...ab,jb->...uj", c_rx, raw, c_tx.conj())


@dataclass
class PathSet:
    """Multipath description for one slot: per antenna pair, P paths.

    gains/delays/dopplers are (n_rx, n_tx, P). Total average path power per
    pair is 1; delays live on [0, (n_taps-1)*T_s]; |doppler| <= nu_max.
    """

    gains: np.ndarray
    delays: np.ndarray
    dopplers: np.ndarray
    n_taps: int
    sample_time: float
    fractional: bool = False

    @property
    def n_rx(self):
        return self.gains.shape[0]

    @property
    def n_tx(self):
        return self.gains.shape[1]

    @property
    def n_paths(self):
        return self.gains.shape[2]

    def validate(self):
        if self.gains.shape != self.delays.shape or self.gains.shape != self.dopplers.shape:
            raise ParameterError("gains, delays, dopplers must share a shape")
        if self.delays.min() < 0 or self.delays.max() > (self.n_taps - 1) * self.sample_time + 1e-15:
            raise ParameterError("path delays exceed the tap budget")


def sample_paths(n_tx, n_rx, n_paths, velocity_kmh, carrier_hz, subcarrier_hz,
                 block_len, n_taps, rng, corr=None, fractional=False):
    """Draw a PathSet: uniform 1/P power, grid delays, Jakes-angle Doppler.

    Delays default to the integer sampling grid {0..n_taps-1}*T_s;
    `fractional=True` draws them uniformly on [0, (n_taps-1)*T_s] instead,
    exercising the raised-cosine sidelobes. Doppler per path is
    nu_max*cos(theta) with theta uniform on [0, 2pi).
    """
    if n_paths < 1:
        raise ParameterError("need at least one path")
    if n_taps < 1:
        raise ParameterError("tap budget must be at least 1")
    if velocity_kmh < 0:
        raise ParameterError("velocity must be nonnegative")
    t_s = 1.0 / (block_len * subcarrier_hz)
    nu_max = max_doppler_hz(velocity_kmh, carrier_hz)
    shape = (n_rx, n_tx, n_paths)
    if fractional:
        delays = rng.uniform(0.0, (n_taps - 1) * t_s, size=shape)
    else:
        delays = rng.integers(0, n_taps, size=shape) * t_s
    theta = rng.uniform(0.0, 2.0 * np.pi, size=shape)
    dopplers = nu_max * np.cos(theta)
    raw = (rng.standard_normal((n_paths, n_rx, n_tx))
           + 1j * rng.standard_normal((n_paths, n_rx, n_tx))) / np.sqrt(2.0 * n_paths)
    if corr is not None:
        raw = correlate_gains(raw, corr)
    gains = np.moveaxis(raw, 0, -1)  # -> (n_rx, n_tx, P)
    ps = PathSet(gains=gains, delays=delays, dopplers=dopplers,
                 n_taps=n_taps, sample_time=t_s, fractional=fractional)
    ps.validate()
    return ps


def raised_cosine(t, t_s, rolloff):
    """Combined tx/rx raised-cosine pulse sampled at times t (seconds)."""
    x = np.asarray(t, dtype=float) / t_s
    sinc = np.sinc(x)
    if rolloff == 0.0:
        return sinc
    denom = 1.0 - (2.0 * rolloff * x) ** 2
    out = np.empty_like(x)
    sing = np.abs(denom) < 1e-10
    out[~sing] = sinc[~sing] * np.cos(np.pi * rolloff * x[~sing]) / denom[~sing]
    # limit value at x = +-1/(2*rolloff)
    out[sing] = (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff))
    return out


@dataclass
class ChannelRealization:
    """One slot's banded UN x JN time-domain channel with eigen metadata."""

    slot: int
    n_tx: int
    n_rx: int
    block_len: int
    matrix: sp.csr_matrix
    noise_var: float
    lam_min: float = None
    lam_max: float = None
    tap_counts: np.ndarray = None          # per (u, j): distinct taps used
    _eigs: np.ndarray = field(default=None, repr=False)  # eigenvalues of H H^H

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def lam_dagger(self):
        if self.lam_min is None or self.lam_max is None:
            raise NumericError("eigenvalue bounds not available")
        return 0.5 * (self.lam_min + self.lam_max)

    def matvec(self, x):
        return self.matrix @ x

    def rmatvec(self, y):
        return self.matrix.conj().T @ y

    def bv(self, v):
        """Apply B = lam_dagger I - H H^H matrix-free (two sparse products)."""
        return self.lam_dagger * v - self.matvec(self.rmatvec(v))

    def to_dense(self):
        return self.matrix.toarray()

    def gram_trace(self):
        """tr(H H^H) = squared Frobenius norm."""
        return float(np.sum(np.abs(self.matrix.data) ** 2))

    def spectrum(self):
        """Eigenvalues of H H^H (length UN, ascending), computed once."""
        if self._eigs is None:
            dense = self.to_dense()
            self._eigs = np.clip(np.linalg.eigvalsh(dense @ dense.conj().T), 0.0, None)
        return self._eigs

    def set_bounds_from_spectrum(self):
        eigs = self.spectrum()
        self.lam_min = float(eigs[0])
        self.lam_max = float(eigs[-1])

    def save(self, path):
        """Replayable dump: band data, bounds, noise variance."""
        coo = self.matrix.tocoo()
        np.savez_compressed(
            path, format_version=1, slot=self.slot, n_tx=self.n_tx,
            n_rx=self.n_rx, block_len=self.block_len, noise_var=self.noise_var,
            lam_min=np.nan if self.lam_min is None else self.lam_min,
            lam_max=np.nan if self.lam_max is None else self.lam_max,
            row=coo.row, col=coo.col, val=coo.data,
            tap_counts=self.tap_counts if self.tap_counts is not None else np.zeros(0),
        )

    @classmethod
    def load(cls, path):
        z = np.load(path)
        if int(z["format_version"]) != 1:
            raise ParameterError("unknown channel dump version")
        n_rx, n_tx, n = int(z["n_rx"]), int(z["n_tx"]), int(z["block_len"])
        mat = sp.csr_matrix((z["val"], (z["row"], z["col"])), shape=(n_rx * n, n_tx * n))
        lam_min = float(z["lam_min"])
        lam_max = float(z["lam_max"])
        tap_counts = z["tap_counts"] if z["tap_counts"].size else None
        return cls(slot=int(z["slot"]), n_tx=n_tx, n_rx=n_rx, block_len=n,
                   matrix=mat, noise_var=float(z["noise_var"]),
                   lam_min=None if np.isnan(lam_min) else lam_min,
                   lam_max=None if np.isnan(lam_max) else lam_max,
                   tap_counts=tap_counts)


def build_time_channel(paths, block_len, rolloff, noise_var, slot=0,
                       eigen_mode="auto"):
    """Assemble the banded UN x JN slot matrix from a PathSet.

    Entry [n, iota] of block (u, j) is
        sum_p gain_p * exp(2j pi nu_p (n - iota) T_s) * P_rc(iota T_s - tau_p)
    placed at cyclic position (n, (n - iota) mod N). Integer-grid delays give
    one exact tap per path; fractional delays spread over the truncated pulse
    window and are renormalized to unit tap energy per path.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ParameterError("rolloff must be in [0, 1]")
    if noise_var < 0:
        raise ParameterError("noise variance must be nonnegative")
    n = block_len
    t_s = paths.sample_time
    n_rx, n_tx = paths.n_rx, paths.n_tx
    rows, cols, vals = [], [], []
    tap_counts = np.zeros((n_rx, n_tx), dtype=int)
    narange = np.arange(n)
    for u in range(n_rx):
        for j in range(n_tx):
            taps = {}
            for p in range(paths.n_paths):
                tau = paths.delays[u, j, p]
                nu = paths.dopplers[u, j, p]
                g = paths.gains[u, j, p]
                grid = tau / t_s
                if abs(grid - round(grid)) < 1e-9:
                    iotas = np.array([int(round(grid))])
                    weights = np.array([1.0])
                else:
                    lo = int(np.ceil(grid)) - PULSE_HALF_WIDTH
                    hi = int(np.floor(grid)) + PULSE_HALF_WIDTH
                    iotas = np.arange(lo, hi + 1)
                    weights = raised_cosine(iotas * t_s - tau, t_s, rolloff)
                    weights = weights / np.linalg.norm(weights)
                for iota, wgt in zip(iotas, weights):
                    phase = np.exp(2j * np.pi * nu * (narange - iota) * t_s)
                    key = iota % n
                    contrib = g * wgt * phase
                    taps[key] = taps.get(key, 0.0) + contrib
            tap_counts[u, j] = len(taps)
            for iota, coeff in taps.items():
                rows.append(u * n + narange)
                cols.append(j * n + (narange - iota) % n)
                vals.append(np.broadcast_to(coeff, (n,)) if np.ndim(coeff) == 0 else coeff)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rx * n, n_tx * n),
    )
    real = ChannelRealization(slot=slot, n_tx=n_tx, n_rx=n_rx, block_len=n,
                              matrix=mat, noise_var=noise_var,
                              tap_counts=tap_counts)
    if eigen_mode == "auto":
        real.set_bounds_from_spectrum()
    elif eigen_mode is not None:
        real.lam_min, real.lam_max = eigen_bounds(real, mode=eigen_mode)
    return real


def eigen_bounds(real, mode="exact", maxiter=5000, tol=0.0):
    """Extremes of the spectrum of H H^H.

    mode='exact' runs an iterative Lanczos solver on the sparse operator
    (largest eigenvalue directly, smallest via the shifted operator
    lam_max I - H H^H). mode='dense' diagonalizes. mode='approx' uses the
    cheap trace-ratio surrogate lam_max ~ tr{(HH^H)^2}/tr{HH^H}, lam_min ~ 0,
    which keeps the receiver's complexity order unchanged.
    """
    h = real.matrix
    un = h.shape[0]
    if real.n_rx > real.n_tx:
        struct_zero = True  # H H^H is rank deficient: lam_min = 0 exactly
    else:
        struct_zero = False
    if mode == "dense":
        eigs = real.spectrum()
        return float(eigs[0]), float(eigs[-1])
    if mode == "approx":
        gram = (h @ h.conj().T).tocsr()
        tr1 = float(np.sum(np.abs(h.data) ** 2))
        tr2 = float(np.sum(np.abs(gram.data) ** 2))
        return 0.0, tr2 / tr1
    if mode != "exact":
        raise ParameterError(f"unknown eigen mode {mode!r}")

    def gram_mv(v):
        return h @ (h.conj().T @ v)

    op = spla.LinearOperator((un, un), matvec=gram_mv, dtype=complex)
    try:
        lam_max = float(spla.eigsh(op, k=1, which="LA", maxiter=maxiter,
                                   tol=tol, return_eigenvectors=False)[0])
        if struct_zero:
            lam_min = 0.0
        else:
            shifted = spla.LinearOperator(
                (un, un), matvec=lambda v: lam_max * v - gram_mv(v), dtype=complex)
            top = float(spla.eigsh(shifted, k=1, which="LA", maxiter=maxiter,
                                   tol=tol, return_eigenvectors=False)[0])
            lam_min = lam_max - top
    except spla.ArpackNoConvergence as exc:
        partial = tuple(float(v) for v in np.atleast_1d(exc.eigenvalues))
        raise NumericError("eigenvalue iteration did not converge", partial=partial) from exc
    return max(lam_min, 0.0), lam_max


def b_moments(real, max_order, method="eig", probes=16, rng=None):
    """Normalized traces b_k = tr{B^k}/(JN), B = lam_dagger I - H H^H.

    method='eig' uses the cached spectrum (exact). method='hutchinson'
    estimates all orders matrix-free from `probes` Rademacher probes.
    """
    jn = real.n_tx * real.block_len
    if method == "eig":
        eigs = real.spectrum()
        diffs = real.lam_dagger - eigs
        return np.array([np.sum(diffs ** k) for k in range(max_order + 1)]) / jn
    if method != "hutchinson":
        raise ParameterError(f"unknown moment method {method!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    un = real.shape[0]
    acc = np.zeros(max_order + 1)
    for _ in range(probes):
        z = rng.integers(0, 2, size=un) * 2.0 - 1.0
        v = z.astype(complex)
        acc[0] += np.real(np.vdot(z, v))
        for k in range(1, max_order + 1):
            v = real.bv(v)
            acc[k] += np.real(np.vdot(z, v))
    return acc / (probes * jn)


def slot_rng(seed, slot):
    """Per-slot RNG stream: default_rng seeded by SeedSequence([seed, slot])."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(slot)]))


def draw_slot(cfg, slot, seed, eigen_mode="auto"):
    """Draw one slot's channel realization from an experiment-style config.

    cfg needs: n_tx, n_rx, n_paths, velocity_kmh, carrier_hz, subcarrier_hz,
    block_len, n_taps, rho_tx, rho_rx, rolloff, noise_var, fractional_delays.
    """
    rng = slot_rng(seed, slot)
    corr = CorrelationSpec.make(cfg.rho_tx, cfg.rho_rx, cfg.n_tx, cfg.n_rx)
    paths = sample_paths(cfg.n_tx, cfg.n_rx, cfg.n_paths, cfg.velocity_kmh,
                         cfg.carrier_hz, cfg.subcarrier_hz, cfg.block_len,
                         cfg.n_taps, rng, corr=corr,
                         fractional=getattr(cfg, "fractional_delays", False))
    return build_time_channel(paths, cfg.block_len, cfg.rolloff, cfg.noise_var,
                              slot=slot, eigen_mode=eigen_mode)
