"""Network geometry, Rician channels, cascaded IRS channels and CSI errors.

Node indexing used throughout the package: users are ``0 .. K-1`` where
user ``K-1`` is the attacked user (the one the eavesdropper hides behind),
users ``0 .. K-2`` are the helpers, and the eavesdropper is node ``K``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Union

import numpy as np

ED = "E"
MIN_IRS_DISTANCE = 0.5
MAX_TOPOLOGY_REJECTIONS = 100


class ConfigError(ValueError):
    """A configuration value lies outside its domain."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class GeometryError(ValueError):
    """Degenerate placement (a node sits on top of the IRS)."""


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def upa_shape(M: int) -> tuple[int, int]:
    """Most square (Mx, My) grid with Mx >= My and Mx * My == M."""
    my = int(np.floor(np.sqrt(M)))
    while M % my:
        my -= 1
    return M // my, my


@dataclass
class SystemConfig:
    N: int = 8
    K: int = 5
    Mx: int = 8
    My: int = 4
    P_max: float = 1.0                       # W (30 dBm)
    sigma2: Union[float, Mapping] = 1e-13    # W (-100 dBm), scalar or node -> W
    rho0: float = 1e-3                       # -30 dB at d0
    d0: float = 1.0
    alpha_bs: float = 2.2
    alpha_irs: float = 2.2
    K_bs: float = 5.0
    K_irs: float = 5.0
    phi_elev: float = 2 * np.pi / 3
    rho_outage: float = 0.05
    delta_K: float = 0.0
    delta_E: float = 0.0
    irs_polar: tuple[float, float] = (50.0, 0.0)

    @property
    def M(self) -> int:
        return self.Mx * self.My

    def noise(self, node) -> float:
        """Noise power (W) at a user index or at ``"E"``."""
        if isinstance(self.sigma2, Mapping):
            return float(self.sigma2[node])
        return float(self.sigma2)

    def with_M(self, M: int) -> "SystemConfig":
        mx, my = upa_shape(M)
        return replace(self, Mx=mx, My=my)

    def validate(self) -> "SystemConfig":
        if self.N < 2:
            raise ConfigError("N", f"need at least 2 antennas, got {self.N}")
        if self.K < 2:
            raise ConfigError("K", f"need at least 2 users, got {self.K}")
        if self.Mx < 1 or self.My < 1:
            raise ConfigError("Mx", "IRS grid dimensions must be >= 1")
        if not self.P_max > 0:
            raise ConfigError("P_max", "transmit power must be positive")
        nodes = list(range(self.K)) + [ED]
        if any(not self.noise(i) > 0 for i in nodes):
            raise ConfigError("sigma2", "noise powers must be positive")
        for key in ("rho0", "d0"):
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be positive")
        for key in ("K_bs", "K_irs"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "Rician factor must be nonnegative")
        if not 0 < self.rho_outage <= 1:
            raise ConfigError("rho_outage", f"must lie in (0, 1], got {self.rho_outage}")
        for key in ("delta_K", "delta_E"):
            if not 0 <= getattr(self, key) < 1:
                raise ConfigError(key, f"must lie in [0, 1), got {getattr(self, key)}")
        if self.irs_polar[0] <= 0:
            raise ConfigError("irs_polar", "IRS distance must be positive")
        return self


@dataclass
class Topology:
    """Polar coordinates (distance in m, azimuth in rad) seen from the BS."""

    irs: tuple[float, float]
    users: np.ndarray                        # (K, 2): rows (D_k, theta_k)
    ed: tuple[float, float]

    @property
    def K(self) -> int:
        return len(self.users)

    def polar(self) -> np.ndarray:
        """(K+1, 2) array with the eavesdropper appended as the last node."""
        return np.vstack([self.users, np.asarray(self.ed)[None, :]])

    def with_ed_ratio(self, de_ratio: float) -> "Topology":
        D_K, th_K = self.users[-1]
        return replace(self, ed=(de_ratio * D_K, th_K))


@dataclass
class IrsOffsets:
    d: np.ndarray            # (K+1,) IRS-to-node distances
    sin_phi: np.ndarray
    cos_phi: np.ndarray


def sample_topology(config: SystemConfig, de_ratio: float,
                    rng: np.random.Generator) -> Topology:
    if not 0 < de_ratio < 1:
        raise ConfigError("de_ratio", f"must lie in (0, 1), got {de_ratio}")
    for _ in range(MAX_TOPOLOGY_REJECTIONS):
        D = rng.uniform(20.0, 40.0, size=config.K)
        theta = rng.uniform(-np.pi / 2, np.pi / 2, size=config.K)
        topo = Topology(irs=tuple(config.irs_polar),
                        users=np.column_stack([D, theta]),
                        ed=(de_ratio * D[-1], theta[-1]))
        if np.all(_irs_distances(topo.irs, topo.polar()) >= MIN_IRS_DISTANCE):
            return topo
    raise GeometryError(f"no admissible topology after {MAX_TOPOLOGY_REJECTIONS} draws")


def _irs_distances(irs, polar: np.ndarray) -> np.ndarray:
    D_irs, th_irs = irs
    dx = D_irs * np.cos(th_irs) - polar[:, 0] * np.cos(polar[:, 1])
    dy = D_irs * np.sin(th_irs) - polar[:, 0] * np.sin(polar[:, 1])
    return np.sqrt(dx ** 2 + dy ** 2)


def node_offsets(irs, polar: np.ndarray) -> IrsOffsets:
    """Distances and IRS-side angle cosines for arbitrary polar node positions."""
    polar = np.atleast_2d(np.asarray(polar, dtype=float))
    D_irs, th_irs = irs
    d = _irs_distances(irs, polar)
    if np.any(d < 1e-9):
        raise GeometryError("a node coincides with the IRS")
    sin_phi = (polar[:, 0] * np.sin(polar[:, 1]) - D_irs * np.sin(th_irs)) / d
    cos_phi = (D_irs * np.cos(th_irs) - polar[:, 0] * np.cos(polar[:, 1])) / d
    return IrsOffsets(d=d, sin_phi=sin_phi, cos_phi=cos_phi)


def irs_offsets(topology: Topology) -> IrsOffsets:
    return node_offsets(topology.irs, topology.polar())


def steering_ula(theta: float, N: int) -> np.ndarray:
    return np.exp(-1j * np.pi * np.arange(N) * np.sin(theta))


def steering_upa(sin_phi_i: float, cos_phi_i: float, phi_elev: float,
                 theta_i: float, Mx: int, My: int) -> np.ndarray:
    """UPA response vectorized as m = y * Mx + x (zero-based grid indices)."""
    x = np.tile(np.arange(Mx), My)
    y = np.repeat(np.arange(My), Mx)
    phase = (x * cos_phi_i * np.cos(phi_elev) + y * sin_phi_i * np.cos(phi_elev)) * np.sin(theta_i)
    return np.exp(-1j * np.pi * phase)


def _cn(rng: np.random.Generator, *shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def pathloss(config: SystemConfig, d, alpha: float):
    return config.rho0 * (np.asarray(d) / config.d0) ** (-alpha)


def null_space_basis(g: np.ndarray) -> np.ndarray:
    """Orthonormal N x (N-1) basis of the orthogonal complement of ``g``.

    Householder QR (LAPACK geqrf) of the single column g: the trailing
    columns of the complete Q are orthogonal to g.
    """
    q, _ = np.linalg.qr(g.reshape(-1, 1), mode="complete")
    return q[:, 1:]


@dataclass
class ChannelSet:
    """One channel realization.

    ``g`` is (K+1, N) and ``h`` is (K+1, M); row i is node i, the last row is
    the eavesdropper.  Cascaded matrices are M x (K-1) with one column per
    helper.
    """

    g: np.ndarray
    h: np.ndarray
    H_irs: np.ndarray
    H_K: np.ndarray
    H_E: np.ndarray
    Q: np.ndarray

    @property
    def K(self) -> int:
        return self.g.shape[0] - 1

    @property
    def g_helpers(self) -> np.ndarray:
        return self.g[: self.K - 1]

    @classmethod
    def assemble(cls, g: np.ndarray, h: np.ndarray) -> "ChannelSet":
        K = g.shape[0] - 1
        H_irs = h[: K - 1].T.copy()
        return cls(g=g, h=h, H_irs=H_irs,
                   H_K=cascade(h[K - 1], H_irs),
                   H_E=cascade(h[K], H_irs),
                   Q=null_space_basis(g[K - 1]))

    def with_cascaded(self, H_K: np.ndarray, H_E: np.ndarray) -> "ChannelSet":
        return replace(self, H_K=H_K, H_E=H_E)


def cascade(h_dest: np.ndarray, H_irs: np.ndarray) -> np.ndarray:
    """Columns conj(h_dest) * h_k for every helper column h_k."""
    return np.conj(h_dest)[:, None] * H_irs


def los_channels(config: SystemConfig, topology: Topology):
    """Deterministic LoS parts (unit-modulus steering vectors) and amplitudes."""
    polar = topology.polar()
    off = irs_offsets(topology)
    g_los = np.array([steering_ula(th, config.N) for th in polar[:, 1]])
    h_los = np.array([steering_upa(off.sin_phi[i], off.cos_phi[i], config.phi_elev,
                                   polar[i, 1], config.Mx, config.My)
                      for i in range(len(polar))])
    amp_g = np.sqrt(pathloss(config, polar[:, 0], config.alpha_bs))
    amp_h = np.sqrt(pathloss(config, off.d, config.alpha_irs))
    return g_los, h_los, amp_g, amp_h


def sample_channels(config: SystemConfig, topology: Topology,
                    rng: np.random.Generator) -> ChannelSet:
    g_los, h_los, amp_g, amp_h = los_channels(config, topology)
    n = len(amp_g)
    g_nlos = _cn(rng, n, config.N)
    h_nlos = _cn(rng, n, config.M)
    kb, ki = config.K_bs, config.K_irs
    g = amp_g[:, None] * (np.sqrt(kb / (1 + kb)) * g_los + np.sqrt(1 / (1 + kb)) * g_nlos)
    h = amp_h[:, None] * (np.sqrt(ki / (1 + ki)) * h_los + np.sqrt(1 / (1 + ki)) * h_nlos)
    return ChannelSet.assemble(g, h)


@dataclass
class CsiErrorModel:
    """Isotropic per-helper error variances; covariance of column k is var_k * I_M."""

    lambda_K: np.ndarray
    lambda_E: np.ndarray
    M: int = field(default=1)

    def __post_init__(self):
        self.lambda_K = np.asarray(self.lambda_K, dtype=float)
        self.lambda_E = np.asarray(self.lambda_E, dtype=float)
        if np.any(self.lambda_K < 0) or np.any(self.lambda_E < 0):
            raise ConfigError("lambda", "error variances must be nonnegative")

    @classmethod
    def relative(cls, channels: ChannelSet, delta_K: float, delta_E: float) -> "CsiErrorModel":
        """Variances delta^2 * ||conj(h_dest) * h_k||^2 per helper column."""
        lam_K = delta_K ** 2 * np.sum(np.abs(channels.H_K) ** 2, axis=0)
        lam_E = delta_E ** 2 * np.sum(np.abs(channels.H_E) ** 2, axis=0)
        return cls(lam_K, lam_E, M=channels.H_K.shape[0])

    def scaled(self, factor_K: float, factor_E: float) -> "CsiErrorModel":
        return CsiErrorModel(self.lambda_K * factor_K, self.lambda_E * factor_E, self.M)


def sample_csi_errors(model: CsiErrorModel, rng: np.random.Generator):
    L = len(model.lambda_K)
    d_K = _cn(rng, model.M, L) * np.sqrt(model.lambda_K)[None, :]
    d_E = _cn(rng, model.M, L) * np.sqrt(model.lambda_E)[None, :]
    return d_K, d_E


def estimated_channels(true_H: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Estimate such that ``true_H == estimate + delta``."""
    true_H = np.asarray(true_H)
    delta = np.asarray(delta)
    if true_H.shape != delta.shape:
        raise ValueError(f"shape mismatch: {true_H.shape} vs {delta.shape}")
    return true_H - delta
