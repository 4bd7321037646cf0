"""End-to-end orchestration: environment generation, estimator pre-training,
the per-slot closed loop (estimate -> optimize -> online train), and file
outputs.

The closed loop feeds the solver ESTIMATED channels and evaluates the
resulting powers on the TRUE channels, which makes estimation error
observable in the recorded rates and feasibility slacks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from . import solver as sv
from .channel import BTU, UTB, RadioConfig, channel_at
from .env import (BuildingParams, EnvMap, Position, Trajectory, generate_env,
                  position_at)
from .estimator import EstimatorBank, TrainConfig
from .link import LinkParams, check_feasible, downlink_rate, uplink_rate

log = logging.getLogger(__name__)


def _window_mean(values: np.ndarray) -> float:
    finite = values[~np.isnan(values)]
    return float(finite.mean()) if finite.size else float("nan")

CSV_HEADER = "t,tr_V_w,p_w,R_dl_bps,R_ul_bps,E_eu,mape_ul,mape_dl,feasible,tightness"

# flat key=value config; keys follow the simulation parameter names
CONFIG_DEFAULTS = {
    # link
    "W_hz": 2e7,
    "N0_dbm_hz": -177.0,
    "Fu_bits": 1000.0,
    "Du_s": 1e-3,
    "eps": 1e-7,
    "snr_th_db": 20.0,
    "Re_th_bps": 1e7,
    "pB_max_w": 5.0,
    "pv_max_w": 1.0,
    "Tf_s": 5.0,
    "eta": 0.5,
    # radio
    "Gt_dbi": 1.0,
    "Gr_dbi": 1.0,
    "K": 8,
    "fc_ghz": 2.0,
    "rician_db": 15.0,
    "xB_km": 0.25,
    "yB_km": 0.375,
    "gB_km": 0.025,
    "downtilt_deg": 0.0,
    "boresight_deg": 0.0,
    "azimuth_omni": 1,
    "los_exponent": 2.2,
    # building block
    "alpha": 0.3,
    "beta_per_km2": 300.0,
    "sigma_m": 30.0,
    "clip_m": 40.0,
    "area_km": 1.0,
    # trajectory block
    "traj": "c2t",
    "T_slots": 100,
    "c2t_cx_km": 0.5,
    "c2t_cy_km": 0.5,
    "c2t_alt_km": 0.05,
    "c2t_radius_km": 0.375,
    "c2t_revolutions": 1.0,
    "vat_x_km": 0.5,
    "vat_y_km": 0.5,
    "vat_g0_km": 0.0,
    "vat_g1_km": 0.35,
    # training block
    "capacity": 10000,
    "minibatch": 64,
    "T_tr": 1,
    "lr": 1e-3,
    "hidden1": 64,
    "hidden2": 64,
    "pretrain_episodes": 500,
    "mape_window": 20,
    "target_mode": "large_scale",
    "target_scale": 5.0,
    "pretrain_alt_min_km": 0.05,
    "pretrain_alt_max_km": 0.35,
    "pretrain_walk_step_m": 30.0,
    # run control
    "channel_source": "estimated",  # "true": solver sees faded channels;
                                    # "large_scale": deterministic end to end
    "seed": 1,
    "seed_env": None,
    "seed_fading": None,
    "seed_train": None,
}

_INT_KEYS = {"K", "T_slots", "capacity", "minibatch", "T_tr", "hidden1",
             "hidden2", "pretrain_episodes", "mape_window", "seed",
             "seed_env", "seed_fading", "seed_train", "azimuth_omni"}
_STR_KEYS = {"traj", "target_mode", "channel_source"}


@dataclass
class RunConfig:
    """Every scalar the simulation needs, assembled from flat key=value."""

    raw: dict

    def __post_init__(self):
        unknown = set(self.raw) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = dict(CONFIG_DEFAULTS)
        merged.update(self.raw)
        self.raw = merged
        if self.raw["traj"] not in ("c2t", "vat"):
            raise ValueError(f"traj must be c2t or vat, got {self.raw['traj']!r}")
        if self.raw["channel_source"] not in ("estimated", "true", "large_scale"):
            raise ValueError(
                "channel_source must be estimated, true, or large_scale")
        self.link_params()     # validate via dataclass invariants
        self.building_params()
        self.train_config()

    def __getitem__(self, key):
        return self.raw[key]

    def link_params(self) -> LinkParams:
        r = self.raw
        return LinkParams.from_dbm(
            n0_dbm_hz=r["N0_dbm_hz"], w_hz=r["W_hz"], fu_bits=r["Fu_bits"],
            du_s=r["Du_s"], eps=r["eps"], snr_th_db=r["snr_th_db"],
            re_th_bps=r["Re_th_bps"], pb_max_w=r["pB_max_w"],
            pv_max_w=r["pv_max_w"], tf_s=r["Tf_s"], eta=r["eta"])

    def radio_config(self) -> RadioConfig:
        r = self.raw
        return RadioConfig(
            bs_pos=Position(r["xB_km"], r["yB_km"], r["gB_km"]),
            fc_ghz=r["fc_ghz"], n_antennas=r["K"], gt_dbi=r["Gt_dbi"],
            gr_dbi=r["Gr_dbi"], rician_db=r["rician_db"],
            downtilt_deg=r["downtilt_deg"], boresight_deg=r["boresight_deg"],
            azimuth_omni=bool(r["azimuth_omni"]),
            los_exponent=r["los_exponent"])

    def building_params(self) -> BuildingParams:
        r = self.raw
        return BuildingParams(
            alpha=r["alpha"], beta_per_km2=r["beta_per_km2"],
            sigma_m=r["sigma_m"], height_clip_m=r["clip_m"],
            area_side_km=r["area_km"])

    def train_config(self) -> TrainConfig:
        r = self.raw
        return TrainConfig(
            capacity=r["capacity"], minibatch=r["minibatch"],
            train_interval=r["T_tr"], lr=r["lr"],
            hidden=(r["hidden1"], r["hidden2"]),
            pretrain_episodes=r["pretrain_episodes"],
            mape_window=r["mape_window"], target_mode=r["target_mode"],
            target_scale=r["target_scale"])

    def trajectory(self) -> Trajectory:
        r = self.raw
        if r["traj"] == "c2t":
            return Trajectory.circular(
                Position(r["c2t_cx_km"], r["c2t_cy_km"], r["c2t_alt_km"]),
                r["c2t_radius_km"], r["T_slots"], r["c2t_revolutions"])
        return Trajectory.vertical(
            Position(r["vat_x_km"], r["vat_y_km"], r["vat_g0_km"]),
            Position(r["vat_x_km"], r["vat_y_km"], r["vat_g1_km"]),
            r["T_slots"])


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a flat key=value file ('#' comments allowed) plus overrides."""
    raw = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            for ln, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{ln}: expected key=value")
                key, val = (part.strip() for part in line.split("=", 1))
                raw[key] = _coerce(key, val)
    if overrides:
        raw.update(overrides)
    return RunConfig(raw)


def _coerce(key, val):
    if key in _STR_KEYS:
        return val
    if key in _INT_KEYS:
        return int(float(val))
    return float(val)


@dataclass
class SeedStreams:
    """Isolated random streams derived from the config seeds.

    env_seed feeds the building realization; `fading` spawns one child per
    slot or pretrain episode; `init`, `minibatch`, and `positions` handle
    weight init, replay sampling, and pretraining placement. Identical
    seeds reproduce every stream bit-exactly.
    """

    env_seed: int
    fading_ss: np.random.SeedSequence
    init: np.random.Generator
    minibatch: np.random.Generator
    positions: np.random.Generator

    def fading_for_slots(self, n: int) -> list[np.random.Generator]:
        return [np.random.default_rng(s) for s in self.fading_ss.spawn(n)]


def make_env(cfg: RunConfig, streams: SeedStreams) -> EnvMap:
    """Building realization with the BS site cleared.

    The regular grid can drop a footprint right on the BS coordinates; a
    macro site is never erected inside a building, so that one footprint is
    removed (every height/width statistic is otherwise untouched).
    """
    env = generate_env(cfg.building_params(), streams.env_seed)
    if env.n_buildings == 0:
        return env
    bs = cfg.radio_config().bs_pos
    bx, by = bs.x_km * 1000.0, bs.y_km * 1000.0
    half = env.sides_m / 2.0
    inside = ((np.abs(env.centers_m[:, 0] - bx) <= half)
              & (np.abs(env.centers_m[:, 1] - by) <= half))
    if inside.any():
        keep = ~inside
        env = EnvMap(centers_m=env.centers_m[keep], sides_m=env.sides_m[keep],
                     heights_m=env.heights_m[keep], region_km=env.region_km,
                     seed=env.seed)
    return env


def seed_control(cfg: RunConfig) -> SeedStreams:
    root = np.random.SeedSequence(cfg["seed"])
    c_env, c_fading, c_train = root.spawn(3)
    env_seed = cfg["seed_env"]
    if env_seed is None:
        env_seed = int(c_env.generate_state(1)[0])
    fading_ss = (np.random.SeedSequence(cfg["seed_fading"])
                 if cfg["seed_fading"] is not None else c_fading)
    train_ss = (np.random.SeedSequence(cfg["seed_train"])
                if cfg["seed_train"] is not None else c_train)
    c_init, c_batch, c_pos = train_ss.spawn(3)
    return SeedStreams(
        env_seed=env_seed,
        fading_ss=fading_ss,
        init=np.random.default_rng(c_init),
        minibatch=np.random.default_rng(c_batch),
        positions=np.random.default_rng(c_pos),
    )


def _targets(pos: Position, env: EnvMap, radio: RadioConfig, mode: str,
             rng: np.random.Generator):
    """Coefficient targets for one position: deterministic large-scale by
    default, or the full faded channel."""
    fading = mode == "full"
    ul = channel_at(pos, BTU, env, radio, rng, include_fading=fading)
    dl = channel_at(pos, UTB, env, radio, rng, include_fading=fading)
    return ul.theta, dl.theta


def _reflect(value: float, lo: float, hi: float) -> float:
    span = hi - lo
    value = (value - lo) % (2.0 * span)
    return lo + (value if value <= span else 2.0 * span - value)


def pretrain(cfg: RunConfig, env: EnvMap, streams: SeedStreams,
             episodes: int | None = None):
    """Train all 2K networks along an aimless pre-training flight.

    The flight is a random walk reflected at the region and altitude bounds
    (step size defaults to UAV speed times the slot duration), so successive
    episodes are spatially correlated the way a real wandering UAV would be.
    Set the step to 0 for independent uniform positions.

    Returns the estimator bank and a per-episode history of the mean
    windowed error for each direction.
    """
    radio = cfg.radio_config()
    train_cfg = cfg.train_config()
    bank = EstimatorBank.create(radio.n_antennas, env.region_km, train_cfg,
                                streams.init)
    n_ep = train_cfg.pretrain_episodes if episodes is None else episodes
    bs = radio.bs_pos
    alt_min = cfg["pretrain_alt_min_km"]
    alt_max = cfg["pretrain_alt_max_km"]
    step_km = cfg["pretrain_walk_step_m"] / 1000.0
    side = env.region_km
    history = {"mape_ul": [], "mape_dl": []}
    fade_rngs = streams.fading_for_slots(n_ep) if n_ep else []
    pos = Position(
        streams.positions.uniform(0.0, side),
        streams.positions.uniform(0.0, side),
        streams.positions.uniform(alt_min, alt_max),
    )
    for ep in range(1, n_ep + 1):
        th_ul, th_dl = _targets(pos, env, radio, train_cfg.target_mode,
                                fade_rngs[ep - 1])
        bank.record_episode(ep, pos, bs, th_ul, th_dl, streams.minibatch)
        m_ul, m_dl = bank.windowed_mape()
        history["mape_ul"].append(_window_mean(m_ul))
        history["mape_dl"].append(_window_mean(m_dl))
        if step_km > 0.0:
            d = streams.positions.standard_normal(3)
            d /= max(np.linalg.norm(d), 1e-12)
            pos = Position(
                _reflect(pos.x_km + step_km * d[0], 0.0, side),
                _reflect(pos.y_km + step_km * d[1], 0.0, side),
                _reflect(pos.g_km + step_km * d[2], alt_min, alt_max),
            )
        else:
            pos = Position(
                streams.positions.uniform(0.0, side),
                streams.positions.uniform(0.0, side),
                streams.positions.uniform(alt_min, alt_max),
            )
    return bank, history


@dataclass
class SlotRecord:
    """One row of the per-slot output CSV."""

    t: int
    tr_v_w: float
    p_w: float
    r_dl_bps: float
    r_ul_bps: float
    e_eu: float
    mape_ul: float
    mape_dl: float
    feasible: bool
    tightness: float
    true_slack: float = 0.0     # min relative slack on the true channels
    status: str = "optimal"


def run(cfg: RunConfig, bank: EstimatorBank, env: EnvMap,
        streams: SeedStreams, trace_sink: list | None = None):
    """The per-slot closed loop over the configured trajectory.

    Each slot estimates the coefficients, reconstructs the channels via
    h = theta / D^2, solves the relaxed power problem on the estimated
    channels, evaluates realized rates and feasibility on the true faded
    channels, and finally trains online on the slot's true coefficients.
    """
    params = cfg.link_params()
    radio = cfg.radio_config()
    traj = cfg.trajectory()
    train_cfg = cfg.train_config()
    n_slots = traj.horizon
    source = cfg["channel_source"]
    bs = radio.bs_pos

    records = []
    fade_rngs = streams.fading_for_slots(n_slots)
    for t in range(1, n_slots + 1):
        pos = position_at(traj, t)
        rng_t = fade_rngs[t - 1]
        fading = source != "large_scale"
        ul_true = channel_at(pos, BTU, env, radio, rng_t, t=t,
                             include_fading=fading)
        dl_true = channel_at(pos, UTB, env, radio, rng_t, t=t,
                             include_fading=fading)
        if trace_sink is not None:
            trace_sink.extend((ul_true, dl_true))

        if source == "estimated":
            th_ul_hat, th_dl_hat = bank.estimate(pos, bs)
            d2 = ul_true.d_bv_m**2
            ul_est = ch.ChannelVector(BTU, t, th_ul_hat / d2, th_ul_hat,
                                      ul_true.d_bv_m, ul_true.los)
            dl_est = ch.ChannelVector(UTB, t, th_dl_hat / d2, th_dl_hat,
                                      dl_true.d_bv_m, dl_true.los)
        else:
            ul_est, dl_est = ul_true, dl_true

        record = SlotRecord(t=t, tr_v_w=0.0, p_w=0.0, r_dl_bps=0.0,
                            r_ul_bps=0.0, e_eu=0.0, mape_ul=0.0, mape_dl=0.0,
                            feasible=False, tightness=0.0)
        try:
            problem = sv.build_problem(ul_est, dl_est, params)
            sol = sv.solve(problem)
        except sv.SolverError as exc:
            record.status = type(exc).__name__
            log.info("slot %d: %s", t, exc)
        else:
            g_dl_true = float(abs(np.sum(dl_true.h)) ** 2)
            tr_hv_true = float(max(
                np.real(ul_true.h.conj() @ sol.V @ ul_true.h), 0.0))
            r_ul = max(uplink_rate(tr_hv_true, params.du_s, params), 0.0)
            r_dl = downlink_rate(sol.p, g_dl_true, params)
            r_max_true = downlink_rate(params.pv_max_w, g_dl_true, params)
            report = check_feasible(sol, (ul_true, dl_true), params)
            record.tr_v_w = float(np.real(np.trace(sol.V)))
            record.p_w = sol.p
            record.r_dl_bps = r_dl
            record.r_ul_bps = r_ul
            record.e_eu = (r_dl / r_max_true if r_max_true > 0 else 0.0) \
                - params.eta * (sol.p / params.pv_max_w
                                + record.tr_v_w / params.pb_max_w)
            record.feasible = report.feasible
            record.tightness = sol.tightness
            record.true_slack = report.min_slack()

        # online training on the true slot coefficients (the realized faded
        # ones in full mode, the deterministic large-scale ones by default)
        if train_cfg.target_mode == "full":
            th_ul, th_dl = ul_true.theta, dl_true.theta
        else:
            th_ul, th_dl = _targets(pos, env, radio, "large_scale", rng_t)
        bank.record_episode(t, pos, bs, th_ul, th_dl, streams.minibatch)
        m_ul, m_dl = bank.windowed_mape()
        record.mape_ul = _window_mean(m_ul)
        record.mape_dl = _window_mean(m_dl)
        records.append(record)

    return records


def summarize(records: list[SlotRecord]) -> dict:
    """Aggregate statistics over the slot records.

    Energy-utility statistics cover every solved slot; rate and power means
    cover feasible slots only (an all-infeasible run reports 0% feasibility
    with the rate means omitted).
    """
    if not records:
        raise ValueError("no slot records to summarize")
    solved = [r for r in records if r.status == "optimal"]
    feas = [r for r in records if r.feasible]
    summary = {
        "slots": len(records),
        "solved_count": len(solved),
        "feasible_count": len(feas),
        "feasibility_pct": 100.0 * len(feas) / len(records),
        "final_mape_ul": records[-1].mape_ul,
        "final_mape_dl": records[-1].mape_dl,
    }
    if solved:
        e = np.array([r.e_eu for r in solved])
        summary.update({
            "mean_E_eu": float(e.mean()),
            "max_E_eu": float(e.max()),
            "argmax_E_eu_slot": solved[int(np.argmax(e))].t,
            "min_tightness": float(min(r.tightness for r in solved)),
            "min_true_slack": float(min(r.true_slack for r in solved)),
        })
    if feas:
        summary.update({
            "mean_R_dl_bps": float(np.mean([r.r_dl_bps for r in feas])),
            "mean_R_ul_bps": float(np.mean([r.r_ul_bps for r in feas])),
            "mean_p_w": float(np.mean([r.p_w for r in feas])),
            "mean_tr_V_w": float(np.mean([r.tr_v_w for r in feas])),
        })
    return summary


def write_csv(records: list[SlotRecord], path) -> None:
    """Per-slot CSV with the documented header; repr floats keep the output
    byte-stable for identical runs."""
    lines = [CSV_HEADER]
    for r in records:
        lines.append(
            f"{r.t},{r.tr_v_w!r},{r.p_w!r},{r.r_dl_bps!r},{r.r_ul_bps!r},"
            f"{r.e_eu!r},{r.mape_ul!r},{r.mape_dl!r},{int(r.feasible)},"
            f"{r.tightness!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_csv(path) -> list[SlotRecord]:
    """Reload slot records from the documented CSV schema.

    The schema does not carry solver status or the true-channel slack;
    reloaded records hold their defaults for those two fields.
    """
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}")
        records = []
        for line in f:
            vals = line.strip().split(",")
            records.append(SlotRecord(
                t=int(vals[0]), tr_v_w=float(vals[1]), p_w=float(vals[2]),
                r_dl_bps=float(vals[3]), r_ul_bps=float(vals[4]),
                e_eu=float(vals[5]), mape_ul=float(vals[6]),
                mape_dl=float(vals[7]), feasible=bool(int(vals[8])),
                tightness=float(vals[9])))
    return records


def report(records: list[SlotRecord], csv_path, summary_path) -> dict:
    """Write the per-slot CSV and the summary JSON; returns the summary."""
    summary = summarize(records)
    write_csv(records, csv_path)
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    return summary
