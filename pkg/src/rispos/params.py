"""Parameter containers shared by the channel and positioning stages.

Two vectors drive the pipeline: the per-path channel parameters
(delay, complex gain, departure angle at the MS, elevation/azimuth
arrival angles at the RIS) and the position-level parameters (gains,
MS coordinates, rotation angle, scatterer coordinates).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ChannelParams:
    """Per-path channel parameters plus the fixed RIS-BS leg angles.

    The flattened real vector stacks ``[tau, delta_re, delta_im,
    theta_t, phi_in, psi_in]`` path by path, path 0 being the VLoS
    (scatterer-free) path. The RIS-BS angles are known constants and
    are not part of the vector.
    """

    tau: np.ndarray              # (Q+1,) seconds
    gains: np.ndarray            # (Q+1,) complex
    theta_t: np.ndarray          # (Q+1,) radians, AOD at the MS
    phi_in: np.ndarray           # (Q+1,) radians, elevation AOA at the RIS
    psi_in: np.ndarray           # (Q+1,) radians, azimuth AOA at the RIS
    theta_r0: float              # radians, AOA at the BS (known)
    phi_out0: float              # radians, elevation AOD at the RIS (known)
    psi_out0: float              # radians, azimuth AOD at the RIS (known)

    def __post_init__(self):
        self.tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        self.theta_t = np.atleast_1d(np.asarray(self.theta_t, dtype=float))
        self.phi_in = np.atleast_1d(np.asarray(self.phi_in, dtype=float))
        self.psi_in = np.atleast_1d(np.asarray(self.psi_in, dtype=float))

    @property
    def n_paths(self) -> int:
        return self.tau.size

    def to_vector(self) -> np.ndarray:
        """Flatten to the length-6(Q+1) real parameter vector."""
        cols = np.column_stack([
            self.tau, self.gains.real, self.gains.imag,
            self.theta_t, self.phi_in, self.psi_in,
        ])
        return cols.ravel()

    @classmethod
    def from_vector(cls, vec: np.ndarray, theta_r0: float, phi_out0: float,
                    psi_out0: float) -> "ChannelParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size % 6 != 0:
            raise ValueError("channel parameter vector length must be a multiple of 6")
        cols = vec.reshape(-1, 6)
        return cls(
            tau=cols[:, 0].copy(),
            gains=cols[:, 1] + 1j * cols[:, 2],
            theta_t=cols[:, 3].copy(),
            phi_in=cols[:, 4].copy(),
            psi_in=cols[:, 5].copy(),
            theta_r0=theta_r0, phi_out0=phi_out0, psi_out0=psi_out0,
        )

    def copy(self) -> "ChannelParams":
        return ChannelParams(
            self.tau.copy(), self.gains.copy(), self.theta_t.copy(),
            self.phi_in.copy(), self.psi_in.copy(),
            self.theta_r0, self.phi_out0, self.psi_out0,
        )


@dataclass
class PositionParams:
    """Position-level parameters: gains, MS pose, scatterer coordinates.

    The flattened real vector is ``[delta_re/delta_im per path, m (3),
    alpha, s^1 (3), ..., s^Q (3)]`` of length 5Q+6.
    """

    gains: np.ndarray                 # (Q+1,) complex
    ms: np.ndarray                    # (3,) meters
    alpha: float                      # radians in [0, pi)
    scatterers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        self.ms = np.asarray(self.ms, dtype=float).reshape(3)
        self.scatterers = np.asarray(self.scatterers, dtype=float).reshape(-1, 3)
        self.alpha = float(self.alpha)

    @property
    def n_scatterers(self) -> int:
        return self.scatterers.shape[0]

    def to_vector(self) -> np.ndarray:
        """Flatten to the length-(5Q+6) real parameter vector."""
        gain_block = np.column_stack([self.gains.real, self.gains.imag]).ravel()
        return np.concatenate([gain_block, self.ms, [self.alpha],
                               self.scatterers.ravel()])

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "PositionParams":
        vec = np.asarray(vec, dtype=float)
        if (vec.size - 6) % 5 != 0:
            raise ValueError("position parameter vector length must be 5Q+6")
        q = (vec.size - 6) // 5
        gain_block = vec[:2 * (q + 1)].reshape(-1, 2)
        rest = vec[2 * (q + 1):]
        return cls(
            gains=gain_block[:, 0] + 1j * gain_block[:, 1],
            ms=rest[:3],
            alpha=float(rest[3]),
            scatterers=rest[4:].reshape(q, 3),
        )

    def copy(self) -> "PositionParams":
        return PositionParams(self.gains.copy(), self.ms.copy(), self.alpha,
                              self.scatterers.copy())
