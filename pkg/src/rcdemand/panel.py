"""Synthetic market panels with endogenous prices."""

from dataclasses import dataclass

import numpy as np

from . import _random
from .demand import DemandOracle
from .errors import ConfigError, DimensionError
from .model import ModelSpec, ProductMenu


@dataclass(frozen=True)
class MarketPanel:
    """Market-level data: characteristics, prices, instruments and shares.

    Arrays are indexed by market first and good second; ``shares`` follows
    ``spec.labels``.
    """

    spec: ModelSpec
    x1: np.ndarray
    x2: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    z: np.ndarray
    shares: np.ndarray

    def __post_init__(self):
        x1 = np.atleast_2d(np.asarray(self.x1, dtype=float))
        T, J = x1.shape
        if J != self.spec.n_goods:
            raise DimensionError("x1", f"expected {self.spec.n_goods} goods per market")
        x2 = np.asarray(self.x2, dtype=float)
        if x2.size != T * J * (self.spec.d_x - 1):
            raise DimensionError("x2", f"expected {T * J * (self.spec.d_x - 1)} entries")
        x2 = x2.reshape(T, J, self.spec.d_x - 1)
        z = np.asarray(self.z, dtype=float)
        if z.size % (T * J):
            raise DimensionError("z", f"entries do not split over {T} markets x {J} goods")
        z = z.reshape(T, J, -1) if z.size else np.zeros((T, J, 0))
        fields = {"x1": x1, "x2": x2, "p": np.asarray(self.p, dtype=float),
                  "xi": np.asarray(self.xi, dtype=float), "z": z,
                  "shares": np.asarray(self.shares, dtype=float)}
        for name in ("p", "xi"):
            if fields[name].shape != (T, J):
                raise DimensionError(name, f"expected shape {(T, J)}")
        if fields["shares"].shape != (T, self.spec.n_alternatives):
            raise DimensionError("shares", f"expected shape {(T, self.spec.n_alternatives)}")
        for name, arr in fields.items():
            object.__setattr__(self, name, arr)

    @property
    def n_markets(self):
        return self.x1.shape[0]

    @property
    def delta(self):
        """Vertical indices x1 + xi."""
        return self.x1 + self.xi

    @property
    def menu(self):
        return ProductMenu(self.x2, self.p, self.delta)

    def share(self, label):
        return self.shares[:, self.spec.label_index(label)]

    def instruments(self, constant=True):
        """Per-market instrument vector: (1, Z_t, X_t) flattened over goods."""
        T = self.n_markets
        parts = [np.ones((T, 1))] if constant else []
        parts += [self.z.reshape(T, -1), self.x1, self.x2.reshape(T, -1)]
        return np.concatenate(parts, axis=1)

    def take(self, idx):
        return MarketPanel(self.spec, self.x1[idx], self.x2[idx], self.p[idx], self.xi[idx],
                           self.z[idx], self.shares[idx])


@dataclass(frozen=True)
class PanelConfig:
    """Data-generating process for :func:`generate_panel`.

    Prices follow p = p_mean + price_on_xi * xi + price_on_z * sum(z) +
    price_noise * e, so ``price_on_xi > 0`` makes them endogenous while
    xi stays independent of (x, z).
    """

    x1_mean: float = 0.0
    x1_sd: float = 1.0
    x2_sd: float = 1.0
    xi_sd: float = 0.3
    n_instruments: int = 1
    p_mean: float = 1.0
    price_on_xi: float = 0.5
    price_on_z: float = 0.5
    price_noise: float = 0.2
    share_draws: int = 20_000
    qmc: bool = True

    def __post_init__(self):
        for name in ("x1_sd", "x2_sd", "xi_sd", "price_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "standard deviations must be nonnegative")
        if self.n_instruments < 0:
            raise ConfigError("n_instruments", "must be nonnegative")
        if self.share_draws < 1:
            raise ConfigError("share_draws", "must be at least 1")


def generate_panel(spec, density, n_markets, config=None, seed=0, *, oracle=None):
    """Simulate ``n_markets`` markets and their aggregate shares.

    Shares are computed by a smoothed :class:`DemandOracle` (taste shocks
    integrated analytically) with ``config.share_draws`` draws unless an
    ``oracle`` is supplied.
    """
    cfg = PanelConfig() if config is None else config
    if n_markets < 1:
        raise ConfigError("n_markets", "must be at least 1")
    T, J, k, dz = n_markets, spec.n_goods, spec.d_x - 1, cfg.n_instruments
    width = J * (3 + k + dz)
    e = _random.standard_normal(seed, _random.PANEL, T, width)
    cols = np.split(e, np.cumsum([J, J * k, J * dz, J]), axis=1)
    x1 = cfg.x1_mean + cfg.x1_sd * cols[0]
    x2 = cfg.x2_sd * cols[1].reshape(T, J, k)
    z = cols[2].reshape(T, J, dz)
    xi = cfg.xi_sd * cols[3]
    p = (cfg.p_mean + cfg.price_on_xi * xi + cfg.price_on_z * z.sum(axis=-1)
         + cfg.price_noise * cols[4])
    if oracle is None:
        oracle = DemandOracle(spec, density, cfg.share_draws, seed=seed, qmc=cfg.qmc)
    shares = oracle(ProductMenu(x2, p, x1 + xi))
    return MarketPanel(spec, x1, x2, p, xi, z, shares)
