"""Geometric mmWave channel simulation for a RIS-assisted uplink.

The composite channel seen at the base station is H = h_rb^T diag(psi) h_ru,
built from sparse multipath links with planar/linear array steering vectors.
After despreading the received block with user k's orthonormal pilots the
observation reduces to Y = H + N with N i.i.d. complex Gaussian, which is
what the denoising networks consume (packed as a real N_b x 2N_u image).
"""
from dataclasses import dataclass, field

import numpy as np

from . import rngs
from .errors import ConfigError, ShapeError


@dataclass
class ArrayGeometry:
    """Uniform planar array: n_v x n_h elements, spacing d/lambda."""

    n_h: int
    n_v: int
    spacing_over_lambda: float = 0.5

    def __post_init__(self):
        if self.n_h < 1 or self.n_v < 1:
            raise ConfigError(f"array must have >=1 element per axis, got "
                              f"{self.n_v}x{self.n_h}")
        if self.spacing_over_lambda <= 0:
            raise ConfigError("element spacing must be positive")

    @property
    def size(self):
        return self.n_h * self.n_v


def ula(n):
    """Uniform linear array of n elements (vertical axis by convention)."""
    return ArrayGeometry(n_h=1, n_v=n)


@dataclass
class PathParams:
    """One propagation path: complex gain plus arrival/departure angles."""

    gain: complex
    aoa_azi: float
    aoa_ele: float
    aod_azi: float
    aod_ele: float


@dataclass
class ChannelRealization:
    """Ground-truth links and their cascade for one channel draw."""

    h_ru: np.ndarray        # (N, N_u) RIS <- UE
    h_rb: np.ndarray        # (N, N_b) RIS <- BS
    h_cascade: np.ndarray   # (N_b, N_u) = h_rb^T diag(1) h_ru
    paths_ru: list
    paths_rb: list


@dataclass
class PilotBook:
    """Mutually orthonormal pilots for all users; pilots[k] is tau x N_u."""

    tau: int
    k_users: int
    pilots: list


@dataclass
class Observation:
    """Despread noisy observation of one user's cascaded channel."""

    y_packed: np.ndarray    # (N_b, 2*N_u) real
    sigma_n: float
    truth: ChannelRealization
    seed: tuple


def steering_vector(geom, azi, ele):
    """Planar-array response: kron of vertical and horizontal phase ramps.

    Vertical factor phases: 2*pi*(d/lambda)*(m-1)*sin(azi)*sin(ele);
    horizontal factor phases: 2*pi*(d/lambda)*(m-1)*cos(ele). Every entry
    has unit modulus.
    """
    c = 2.0 * np.pi * geom.spacing_over_lambda
    v = np.exp(1j * c * np.arange(geom.n_v) * np.sin(azi) * np.sin(ele))
    h = np.exp(1j * c * np.arange(geom.n_h) * np.cos(ele))
    return np.kron(v, h)


def gen_path_channel(geom_rx, geom_tx, paths):
    """Multipath channel sum_l z_l a_rx(aoa) a_tx(aod)^H, shape (rx, tx)."""
    if not paths:
        raise ConfigError("path list must be nonempty")
    h = np.zeros((geom_rx.size, geom_tx.size), dtype=np.complex128)
    for p in paths:
        a_rx = steering_vector(geom_rx, p.aoa_azi, p.aoa_ele)
        a_tx = steering_vector(geom_tx, p.aod_azi, p.aod_ele)
        h += p.gain * np.outer(a_rx, a_tx.conj())
    return h


def cascade(real, psi):
    """Composite channel h_rb^T diag(psi) h_ru for reflection vector psi."""
    psi = np.asarray(psi)
    if psi.shape != (real.h_ru.shape[0],):
        raise ShapeError(f"psi has shape {psi.shape}, expected "
                         f"({real.h_ru.shape[0]},)")
    return real.h_rb.T @ (psi[:, None] * real.h_ru)


def pack_real(m):
    """Complex (N_b, N_u) -> real (N_b, 2*N_u): [Re | Im] column blocks."""
    m = np.asarray(m)
    return np.concatenate([m.real, m.imag], axis=-1)


def unpack_real(y):
    """Inverse of pack_real. Rejects odd column counts."""
    y = np.asarray(y)
    if y.shape[-1] % 2 != 0:
        raise ShapeError(f"packed matrix needs an even column count, "
                         f"got {y.shape[-1]}")
    n = y.shape[-1] // 2
    return y[..., :n] + 1j * y[..., n:]


def make_pilots(k_users, n_u, tau):
    """Orthonormal pilot book from DFT columns.

    Column j of user k is column k*n_u + j of the tau-point DFT matrix
    scaled by 1/sqrt(tau), so the Gram matrix of all K*N_u columns is the
    identity.
    """
    if tau < k_users * n_u:
        raise ConfigError(f"tau={tau} cannot carry {k_users}*{n_u} "
                          f"orthogonal pilots")
    t = np.arange(tau)
    pilots = []
    for k in range(k_users):
        cols = k * n_u + np.arange(n_u)
        phi = np.exp(-2j * np.pi * np.outer(t, cols) / tau) / np.sqrt(tau)
        pilots.append(phi)
    return PilotBook(tau=tau, k_users=k_users, pilots=pilots)


def draw_paths(rng, n_paths, gain_var):
    """Draw path angles and gains: azimuth U(-pi/2, pi/2), elevation U(0, pi),
    gains CN(0, gain_var)."""
    azi = rng.uniform(-np.pi / 2, np.pi / 2, size=(n_paths, 2))
    ele = rng.uniform(0.0, np.pi, size=(n_paths, 2))
    gains = rngs.complex_normal(rng, n_paths, var=gain_var)
    return [PathParams(gain=gains[l], aoa_azi=azi[l, 0], aoa_ele=ele[l, 0],
                       aod_azi=azi[l, 1], aod_ele=ele[l, 1])
            for l in range(n_paths)]


def draw_channel(rng, geom_ris, geom_bs, geom_ue, l_t, l_r, gain_scale=1.0):
    """Fresh ChannelRealization with independent path sets per link.

    Gains are CN(0, 1/L) so the expected link power does not depend on the
    path count. gain_scale multiplies the mean cascade power E||H||^2; the
    cascade is bilinear in the two gain sets, so each link is scaled by
    gain_scale**(1/4).
    """
    paths_ru = draw_paths(rng, l_t, 1.0 / l_t)
    paths_rb = draw_paths(rng, l_r, 1.0 / l_r)
    if gain_scale != 1.0:
        s = gain_scale ** 0.25
        for p in paths_ru + paths_rb:
            p.gain *= s
    h_ru = gen_path_channel(geom_ris, geom_ue, paths_ru)
    h_rb = gen_path_channel(geom_ris, geom_bs, paths_rb)
    real = ChannelRealization(h_ru=h_ru, h_rb=h_rb, h_cascade=None,
                              paths_ru=paths_ru, paths_rb=paths_rb)
    real.h_cascade = cascade(real, np.ones(geom_ris.size))
    return real


def observe(real, pilots, k, sigma_n, seed):
    """Despread observation of user k: Y = H + n Phi_k^*.

    The raw noise block n is (N_b, tau) i.i.d. CN(0, sigma_n^2); despreading
    with orthonormal pilots keeps the effective noise i.i.d. CN(0, sigma_n^2).
    ``seed`` is either an int or a tuple accepted by rngs.substream.
    """
    if sigma_n < 0:
        raise ConfigError("sigma_n must be nonnegative")
    key = seed if isinstance(seed, tuple) else (seed,)
    rng = rngs.substream(key[0], *key[1:])
    n_b = real.h_rb.shape[1]
    phi = pilots.pilots[k]
    noise = rngs.complex_normal(rng, (n_b, pilots.tau), var=sigma_n ** 2)
    y = real.h_cascade + noise @ phi.conj()
    return Observation(y_packed=pack_real(y), sigma_n=float(sigma_n),
                       truth=real, seed=key)


def mean_entry_power(geom_ris, l_t, l_r, n_draws=20000, seed=0):
    """Monte-Carlo estimate of E|H_bu|^2, the mean per-entry cascade power.

    Averaging the path gains out analytically leaves
    E||H||^2 / (N_b N_u) = mean over path pairs (l, m) of |a_l^T a_m|^2 / (L_T L_R)
    with a_l, a_m independent RIS steering vectors, which is cheap to sample.
    The stream is derived from the geometry, not the dataset seed, so the
    SNR -> sigma_n mapping is a pure function of the configuration.
    """
    rng = rngs.substream(seed, rngs.POWER, geom_ris.n_v, geom_ris.n_h,
                         l_t, l_r, n_draws)
    c = 2.0 * np.pi * geom_ris.spacing_over_lambda
    total = 0.0
    chunk = 2048
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        azi = rng.uniform(-np.pi / 2, np.pi / 2, size=(m, 2, max(l_t, l_r)))
        ele = rng.uniform(0.0, np.pi, size=(m, 2, max(l_t, l_r)))
        # phase ramps of the planar array for both path sets
        mv = np.arange(geom_ris.n_v)
        mh = np.arange(geom_ris.n_h)
        pv = np.exp(1j * c * np.sin(azi) * np.sin(ele) * mv[:, None, None, None]).transpose(1, 2, 3, 0)
        ph = np.exp(1j * c * np.cos(ele) * mh[:, None, None, None]).transpose(1, 2, 3, 0)
        # (m, 2, L, N) steering vectors via kron of the two ramps
        a = (pv[..., :, None] * ph[..., None, :]).reshape(m, 2, max(l_t, l_r), -1)
        a_rb = a[:, 0, :l_r]
        a_ru = a[:, 1, :l_t]
        kappa = np.einsum("slm,stm->slt", a_rb, a_ru)
        total += np.sum(np.abs(kappa) ** 2) / (l_t * l_r)
        done += m
    return total / n_draws


@dataclass
class DatasetConfig:
    """Everything needed to generate one train/val/test dataset."""

    n_train: int
    n_val: int
    n_test: int
    ris_n_h: int = 8
    ris_n_v: int = 8
    n_b: int = 16
    n_u: int = 8
    spacing_over_lambda: float = 0.5
    l_paths: int = 3
    k_users: int = 1
    tau: int = 0              # 0 means k_users * n_u
    snr_db_min: float = 10.0
    snr_db_max: float = 10.0
    seed: int = 0
    normalize_power: bool = True
    pathloss_scale: float = 1.0
    power_draws: int = 20000

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ConfigError("split sizes must be nonnegative")
        if self.n_train + self.n_val + self.n_test <= 0:
            raise ConfigError("dataset must contain at least one sample")
        if not np.isfinite(self.snr_db_min) or not np.isfinite(self.snr_db_max):
            raise ConfigError("SNR bounds must be finite")
        if self.snr_db_min > self.snr_db_max:
            raise ConfigError(f"snr_db_min={self.snr_db_min} exceeds "
                              f"snr_db_max={self.snr_db_max}")
        if self.tau == 0:
            self.tau = self.k_users * self.n_u
        if self.tau < self.k_users * self.n_u:
            raise ConfigError("tau too small for the pilot book")

    @property
    def geom_ris(self):
        return ArrayGeometry(n_h=self.ris_n_h, n_v=self.ris_n_v,
                             spacing_over_lambda=self.spacing_over_lambda)

    @property
    def geom_bs(self):
        return ula(self.n_b)

    @property
    def geom_ue(self):
        return ula(self.n_u)


SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}


@dataclass
class Split:
    """One dataset split as dense arrays (sample-major)."""

    y: np.ndarray        # (n, N_b, 2*N_u) noisy packed observations
    h_true: np.ndarray   # (n, N_b, 2*N_u) packed ground truth
    sigma_n: np.ndarray  # (n,)

    def __len__(self):
        return self.y.shape[0]


@dataclass
class Dataset:
    train: Split
    val: Split
    test: Split
    meta: dict = field(default_factory=dict)


def _gen_split(cfg, pilots, name, count, gain_scale):
    n_b, n_u = cfg.n_b, cfg.n_u
    y = np.empty((count, n_b, 2 * n_u))
    h = np.empty((count, n_b, 2 * n_u))
    sig = np.empty(count)
    tag = SPLIT_TAGS[name]
    p_mean = cfg._p_mean_scaled
    for i in range(count):
        rng = rngs.substream(cfg.seed, rngs.SAMPLE, tag, i)
        real = draw_channel(rng, cfg.geom_ris, cfg.geom_bs, cfg.geom_ue,
                            cfg.l_paths, cfg.l_paths, gain_scale=gain_scale)
        snr_db = rng.uniform(cfg.snr_db_min, cfg.snr_db_max)
        sigma = np.sqrt(p_mean / 10.0 ** (snr_db / 10.0))
        obs = observe(real, pilots, i % cfg.k_users, sigma,
                      (cfg.seed, rngs.SAMPLE, tag, i, 1))
        y[i] = obs.y_packed
        h[i] = pack_real(real.h_cascade)
        sig[i] = sigma
    return Split(y=y, h_true=h, sigma_n=sig)


def gen_dataset(cfg):
    """Generate a full dataset; a pure function of (cfg, cfg.seed).

    Each sample draws a fresh channel realization and its own SNR uniform in
    [snr_db_min, snr_db_max]; sigma_n is set from the configuration's mean
    per-entry channel power so that SNR = E||H||^2 / (N_b N_u sigma_n^2).
    With normalize_power the path gains are rescaled so that mean power is 1.
    """
    p_raw = mean_entry_power(cfg.geom_ris, cfg.l_paths, cfg.l_paths,
                             n_draws=cfg.power_draws)
    gain_scale = cfg.pathloss_scale
    if cfg.normalize_power:
        gain_scale = cfg.pathloss_scale / p_raw
    cfg._p_mean_scaled = p_raw * gain_scale
    pilots = make_pilots(cfg.k_users, cfg.n_u, cfg.tau)
    splits = {name: _gen_split(cfg, pilots, name, count, gain_scale)
              for name, count in (("train", cfg.n_train), ("val", cfg.n_val),
                                  ("test", cfg.n_test))}
    meta = {
        "mean_entry_power": cfg._p_mean_scaled,
        "mean_entry_power_raw": p_raw,
        "gain_scale": gain_scale,
        "seed": cfg.seed,
    }
    return Dataset(train=splits["train"], val=splits["val"],
                   test=splits["test"], meta=meta)
