"""Rate formulas and constraint checks for the short-packet uplink and the
Shannon-rate downlink."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG2E = math.log2(math.e)


@dataclass(frozen=True)
class LinkParams:
    """Scalar link constants (SI units throughout)."""

    w_hz: float = 2e7               # bandwidth
    n0_w_hz: float = 10.0 ** (-20.7)  # noise PSD (-177 dBm/Hz)
    fu_bits: float = 1000.0         # control packet length
    du_s: float = 1e-3              # latency budget
    eps: float = 1e-7               # decoding error probability
    snr_th_db: float = 20.0         # uplink SNR floor (may be -inf)
    re_th_bps: float = 1e7          # downlink rate threshold
    pb_max_w: float = 5.0           # BS power cap
    pv_max_w: float = 1.0           # UAV power cap
    tf_s: float = 5.0               # slot duration
    eta: float = 0.5                # energy efficiency coefficient

    def __post_init__(self):
        for name in ("w_hz", "n0_w_hz", "fu_bits", "du_s", "re_th_bps",
                     "pb_max_w", "pv_max_w", "tf_s", "eta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0.0 < self.eps < 0.5:
            raise ValueError(f"eps must be in (0, 0.5), got {self.eps}")

    @property
    def noise_w(self) -> float:
        """Total noise power N0*W."""
        return self.n0_w_hz * self.w_hz

    @classmethod
    def from_dbm(cls, n0_dbm_hz: float = -177.0, **kwargs) -> "LinkParams":
        return cls(n0_w_hz=10.0 ** ((n0_dbm_hz - 30.0) / 10.0), **kwargs)


def q_inv(eps: float) -> float:
    """Inverse Gaussian tail: the x with Q(x) = eps, via bisection on erfc.

    Accurate to ~1e-12; valid for eps in (0, 1).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")

    def q(x: float) -> float:
        return 0.5 * math.erfc(x / math.sqrt(2.0))

    lo, hi = -40.0, 40.0  # Q(40) underflows well past any eps of interest
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if q(mid) > eps:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def dispersion(gamma: float) -> float:
    """Channel dispersion B = 1 - (1 + SNR)^-2."""
    return 1.0 - (1.0 + gamma) ** -2


def uplink_rate(tr_hv: float, tau: float, params: LinkParams) -> float:
    """Finite-blocklength uplink rate in bit/s with exact dispersion.

    tr_hv is the received beamformed power tr(H V) = |h^H v|^2 in W. The
    value may be negative at very low SNR; callers clamp at reporting level.
    """
    if tr_hv < 0:
        raise ValueError(f"received power must be >= 0, got {tr_hv}")
    if tau <= 0:
        raise ValueError(f"latency must be > 0, got {tau}")
    gamma = tr_hv / params.noise_w
    b = dispersion(gamma)
    penalty = math.sqrt(params.w_hz * b / tau) * q_inv(params.eps) * LOG2E
    return params.w_hz * math.log2(1.0 + gamma) - penalty


def downlink_rate(p: float, tr_hz: float, params: LinkParams) -> float:
    """Shannon downlink rate in bit/s for UAV power p and channel gain tr_hz."""
    if p < 0 or tr_hz < 0:
        raise ValueError("power and channel gain must be >= 0")
    return params.w_hz * math.log2(1.0 + p * tr_hz / params.noise_w)


def required_uplink_trace(params: LinkParams) -> float:
    """Binding lower bound on tr(H V) in W under the B=1 convexification.

    Max of (a) the rate floor that meets the latency constraint at tau = Du
    and (b) the SNR floor 10^(snr_th/10) * N0 * W.
    """
    noise = params.noise_w
    target_bps = (
        params.fu_bits / params.du_s
        + math.sqrt(params.w_hz / params.du_s) * q_inv(params.eps) * LOG2E
    )
    rate_floor = noise * (2.0 ** (target_bps / params.w_hz) - 1.0)
    snr_floor = noise * 10.0 ** (params.snr_th_db / 10.0)
    return max(rate_floor, snr_floor)


@dataclass
class FeasibilityReport:
    """Per-constraint relative slacks of a power solution on given channels."""

    slacks: dict[str, float]
    gamma_ul: float
    b_exact: float
    feasible: bool

    def min_slack(self) -> float:
        return min(self.slacks.values())


def check_feasible(sol, channels, params: LinkParams,
                   rel_tol: float = 1e-9) -> FeasibilityReport:
    """Evaluate every constraint with the exact dispersion at tau = Du.

    `sol` needs .V and .p; `channels` is the (uplink, downlink) channel pair
    the solution is judged against. Reports violations, never raises.
    """
    ch_ul, ch_dl = channels
    tr_hv = float(np.real(np.conj(ch_ul.h) @ sol.V @ ch_ul.h))
    tr_hv = max(tr_hv, 0.0)
    g_dl = float(abs(np.sum(ch_dl.h)) ** 2)
    gamma = tr_hv / params.noise_w
    gamma_th = 10.0 ** (params.snr_th_db / 10.0)

    r_ul = uplink_rate(tr_hv, params.du_s, params)
    r_dl = downlink_rate(sol.p, g_dl, params)
    tr_v = float(np.real(np.trace(sol.V)))

    slacks = {
        "uplink_latency": (r_ul * params.du_s - params.fu_bits) / params.fu_bits,
        "downlink_rate": (r_dl - params.re_th_bps) / params.re_th_bps,
        "bs_power": (params.pb_max_w - tr_v) / params.pb_max_w,
        "uav_power": (params.pv_max_w - sol.p) / params.pv_max_w,
        "snr": (gamma - gamma_th) / gamma_th if gamma_th > 0 else gamma,
    }
    return FeasibilityReport(
        slacks=slacks,
        gamma_ul=gamma,
        b_exact=dispersion(gamma),
        feasible=all(s >= -rel_tol for s in slacks.values()),
    )
