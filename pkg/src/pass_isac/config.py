"""System constants for the PASS-assisted ISAC model."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def watt_to_dbm(w):
    return 10.0 * np.log10(np.asarray(w, dtype=float)) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """Physical and algorithmic constants.

    Powers are in watts and SINR targets are linear; use :meth:`from_db`
    to build from dBm / dB quantities. ``delta`` defaults to half a carrier
    wavelength and ``gamma`` to 6 dB for every user.
    """

    f_c: float = 28e9                 # carrier frequency, Hz
    c: float = SPEED_OF_LIGHT         # m/s
    n_e: float = 1.4                  # effective refractive index of the waveguide
    N: int = 4                        # waveguides
    M: int = 4                        # PAs per waveguide
    M_r: int = 8                      # receive ULA elements
    K: int = 3                        # users
    delta: Optional[float] = None     # min PA spacing, m (None -> lambda_c / 2)
    L: float = 15.0                   # attachable waveguide length, m
    D: float = 5.0                    # BS to service-area offset, m
    d_h: float = 1.0                  # waveguide height, m
    D_x: float = 15.0
    D_y: float = 15.0
    T: int = 256                      # slots per coherent interval
    sigma0_sq: float = 1e-12          # user noise power, W (-90 dBm)
    sigmas_sq: float = 1e-12          # sensing receiver noise power, W (-90 dBm)
    P: float = 1.0                    # transmit power budget, W (30 dBm)
    gamma: Optional[tuple] = None     # per-user SINR targets, linear
    beta_mag_coeff: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.f_c > 0 and self.c > 0):
            raise ValueError("carrier frequency and speed of light must be positive")
        if self.delta is None:
            object.__setattr__(self, "delta", self.wavelength / 2.0)
        if self.gamma is None:
            object.__setattr__(self, "gamma", (float(db_to_linear(6.0)),) * self.K)
        elif np.isscalar(self.gamma):
            object.__setattr__(self, "gamma", (float(self.gamma),) * self.K)
        else:
            object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        self.validate()

    def validate(self):
        if not self.f_c > 0 or not self.c > 0:
            raise ValueError("carrier frequency and speed of light must be positive")
        if self.n_e < 1:
            raise ValueError(f"n_e must be >= 1, got {self.n_e}")
        for name in ("N", "M", "M_r", "T"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.d_h <= 0 or self.L <= 0 or self.D_x <= 0 or self.D_y <= 0:
            raise ValueError("geometry lengths must be positive")
        if self.sigma0_sq <= 0 or self.sigmas_sq <= 0 or self.P <= 0:
            raise ValueError("powers and noise variances must be positive")
        if len(self.gamma) != self.K:
            raise ValueError(f"gamma has {len(self.gamma)} entries for K={self.K} users")
        if any(g <= 0 for g in self.gamma):
            raise ValueError("SINR targets must be positive")

    @classmethod
    def from_db(cls, P_dbm: float = 30.0, gamma_db: float | Sequence[float] = 6.0,
                sigma0_dbm: float = -90.0, sigmas_dbm: float = -90.0, **kwargs) -> "SystemConfig":
        K = kwargs.get("K", cls.K)
        gamma = np.broadcast_to(db_to_linear(gamma_db), (K,))
        return cls(P=float(dbm_to_watt(P_dbm)), gamma=tuple(float(g) for g in gamma),
                   sigma0_sq=float(dbm_to_watt(sigma0_dbm)),
                   sigmas_sq=float(dbm_to_watt(sigmas_dbm)), **kwargs)

    def replace(self, **changes) -> "SystemConfig":
        # K changes invalidate a per-user gamma tuple unless one is supplied
        if "K" in changes and "gamma" not in changes and changes["K"] != self.K:
            g = set(self.gamma)
            changes["gamma"] = g.pop() if len(g) == 1 else None
        return dataclasses.replace(self, **changes)

    @property
    def wavelength(self) -> float:
        return self.c / self.f_c

    @property
    def guided_wavelength(self) -> float:
        return self.wavelength / self.n_e

    @property
    def kappa_c(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def kappa_g(self) -> float:
        return 2.0 * np.pi / self.guided_wavelength

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gamma"] = list(self.gamma)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if d.get("gamma") is not None and not np.isscalar(d["gamma"]):
            d["gamma"] = tuple(d["gamma"])
        return cls(**d)
