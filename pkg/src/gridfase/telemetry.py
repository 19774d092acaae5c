"""Measurement model, Jacobian, noise synthesis, multi-rate streaming.

Channel layout is fixed per (model, sensor config): the fast block holds
PMU voltage phasor channels (per PMU bus in canonical order, per phase:
magnitude then angle), the slow block holds SCADA branch P/Q flows then
pseudo P/Q injections. Every power-type channel is expressed as
S = V[a] * conj(sum_k C[k] V[k]), which gives one shared evaluation and
differentiation kernel for flows and injections.
"""

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError
from .feeder import FeederModel
from .powerflow import NetworkIndex, SystemState
from .seeding import rng_for

SIGMA_FLOOR = 1e-4  # p.u.; keeps R positive for near-zero and noise-free channels


class Kind(str, Enum):
    PMU_VMAG = "PMU_VMAG"
    PMU_VANG = "PMU_VANG"
    SCADA_PFLOW = "SCADA_PFLOW"
    SCADA_QFLOW = "SCADA_QFLOW"
    PSEUDO_PINJ = "PSEUDO_PINJ"
    PSEUDO_QINJ = "PSEUDO_QINJ"


FAST_KINDS = (Kind.PMU_VMAG, Kind.PMU_VANG)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-class maximum errors; Gaussian sigma is max/3 (3-sigma rule)."""

    pmu_mag_pct: float = 0.1
    pmu_ang_crad: float = 0.1
    scada_pct: float = 2.0
    pseudo_pct: float = 20.0


@dataclass(frozen=True)
class SensorConfig:
    pmu_buses: tuple
    scada_branches: tuple
    pseudo_buses: tuple
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True)
class Measurement:
    kind: Kind
    location: str  # bus id or branch id
    phase: str
    value: float
    variance: float
    rate_class: str  # "fast" | "slow"
    sample_time: int


class ChannelTable:
    """Precomputed channel descriptors for one (model, config) pair."""

    def __init__(self, model: FeederModel, config: SensorConfig, index: NetworkIndex = None):
        self.model = model
        self.config = config
        self.index = index if index is not None else NetworkIndex(model)
        idx = self.index
        phases = model.bus_phases()
        bus_rank = {bus: k for k, bus in enumerate(idx.topo.order)}
        branch_by_id = {br.branch_id: (k, br) for k, br in enumerate(model.branches)}

        for bus in config.pmu_buses:
            if bus not in phases:
                raise ValidationError(f"pmu bus {bus!r} not in the feeder")
        for bus in config.pseudo_buses:
            if bus not in phases:
                raise ValidationError(f"pseudo bus {bus!r} not in the feeder")
        for bid in config.scada_branches:
            if bid not in branch_by_id:
                raise ValidationError(f"scada branch {bid!r} not in the feeder")

        # Fast block: PMU buses in canonical order, per phase mag then angle.
        fast_node, fast_is_ang, channels = [], [], []
        for bus in sorted(set(config.pmu_buses), key=bus_rank.get):
            for p in phases[bus]:
                node = idx.pos[(bus, p)]
                fast_node.append(node)
                fast_is_ang.append(False)
                channels.append((Kind.PMU_VMAG, bus, p))
                fast_node.append(node)
                fast_is_ang.append(True)
                channels.append((Kind.PMU_VANG, bus, p))
        self.fast_node = np.asarray(fast_node, dtype=int)
        self.fast_is_ang = np.asarray(fast_is_ang, dtype=bool)
        self.n_fast = len(fast_node)

        # Slow block: one complex-power descriptor per location-phase, with
        # interleaved P/Q channels referencing it.
        s_target, s_coeff_rows = [], []
        slow_srow, slow_is_q = [], []

        def add_power(kind_p, kind_q, location, phase, target_node, coeff):
            row = len(s_target)
            s_target.append(target_node)
            s_coeff_rows.append(coeff)
            slow_srow.append(row)
            slow_is_q.append(False)
            channels.append((kind_p, location, phase))
            slow_srow.append(row)
            slow_is_q.append(True)
            channels.append((kind_q, location, phase))

        n_nodes = idx.n_nodes
        for bid in sorted(set(config.scada_branches), key=lambda b: branch_by_id[b][0]):
            k, br = branch_by_id[bid]
            y = idx.branch_y_pu[k]
            fi, ti = idx.branch_from_idx[k], idx.branch_to_idx[k]
            for slot, p in enumerate(br.phases):
                coeff = np.zeros(n_nodes, dtype=complex)
                coeff[fi] += y[slot]
                coeff[ti] -= y[slot]
                add_power(Kind.SCADA_PFLOW, Kind.SCADA_QFLOW, bid, p, fi[slot], coeff)

        for bus in sorted(set(config.pseudo_buses), key=bus_rank.get):
            for p in phases[bus]:
                target = idx.pos[(bus, p)]
                coeff = np.zeros(n_nodes, dtype=complex)
                for k, br in enumerate(model.branches):
                    if br.from_bus != bus and br.to_bus != bus:
                        continue
                    slot = br.phases.find(p)
                    if slot < 0:
                        continue
                    y = idx.branch_y_pu[k]
                    fi, ti = idx.branch_from_idx[k], idx.branch_to_idx[k]
                    sign = 1.0 if br.from_bus == bus else -1.0
                    coeff[fi] += sign * y[slot]
                    coeff[ti] -= sign * y[slot]
                add_power(Kind.PSEUDO_PINJ, Kind.PSEUDO_QINJ, bus, p, target, coeff)

        self.s_target = np.asarray(s_target, dtype=int)
        self.s_coeff = (
            np.stack(s_coeff_rows) if s_coeff_rows else np.zeros((0, n_nodes), complex)
        )
        self.slow_srow = np.asarray(slow_srow, dtype=int)
        self.slow_is_q = np.asarray(slow_is_q, dtype=bool)
        self.n_slow = len(slow_srow)
        self.channels = tuple(channels)
        self.m = self.n_fast + self.n_slow
        self.n_state = 2 * n_nodes

        if self.n_fast >= self.n_state:
            raise ValidationError(
                f"PMU channel count {self.n_fast} must stay below the state "
                f"dimension {self.n_state}"
            )

        kinds = [c[0] for c in channels]
        self.kind_arr = np.asarray(kinds, dtype=object)
        # angle rows need wrapped differencing in estimators
        self.angle_rows = np.asarray([k is Kind.PMU_VANG for k in kinds], dtype=bool)

    # ---------------------------------------------------------- evaluation

    def _complex_powers(self, v: np.ndarray) -> np.ndarray:
        if len(self.s_target) == 0:
            return np.zeros(0, dtype=complex)
        return v[self.s_target] * np.conj(self.s_coeff @ v)

    def h_fast(self, state: SystemState) -> np.ndarray:
        return np.where(
            self.fast_is_ang, state.vang[self.fast_node], state.vmag[self.fast_node]
        )

    def h_slow(self, state: SystemState) -> np.ndarray:
        s = self._complex_powers(state.phasors())
        vals = s[self.slow_srow]
        return np.where(self.slow_is_q, vals.imag, vals.real)

    def h_full(self, state: SystemState) -> np.ndarray:
        return np.concatenate([self.h_fast(state), self.h_slow(state)])

    def jacobian(self, state: SystemState) -> np.ndarray:
        """Analytic H = dh/dx at the given state, shape (m, 2*n_nodes)."""
        n_nodes = self.index.n_nodes
        H = np.zeros((self.m, self.n_state))
        rows = np.arange(self.n_fast)
        H[rows, self.fast_node + np.where(self.fast_is_ang, n_nodes, 0)] = 1.0

        if len(self.s_target):
            v = state.phasors()
            va = v[self.s_target]
            j_cur = self.s_coeff @ v
            # dS/d|V_m| and dS/dtheta_m for S_i = V_a conj(sum C_ik V_k)
            w = np.conj(self.s_coeff) * np.conj(v)[None, :]
            ds_dmag = va[:, None] * w / state.vmag[None, :]
            ds_dang = -1j * va[:, None] * w
            rows_s = np.arange(len(self.s_target))
            ds_dmag[rows_s, self.s_target] += va / np.abs(va) * np.conj(j_cur)
            ds_dang[rows_s, self.s_target] += 1j * va * np.conj(j_cur)

            d_slow_mag = np.where(
                self.slow_is_q[:, None], ds_dmag[self.slow_srow].imag, ds_dmag[self.slow_srow].real
            )
            d_slow_ang = np.where(
                self.slow_is_q[:, None], ds_dang[self.slow_srow].imag, ds_dang[self.slow_srow].real
            )
            H[self.n_fast :, :n_nodes] = d_slow_mag
            H[self.n_fast :, n_nodes:] = d_slow_ang
        return H

    # ------------------------------------------------------------- noise

    def _sigma(self, block: str, true_values: np.ndarray) -> np.ndarray:
        """Draw sigmas per channel; zero when the class max error is zero."""
        noise = self.config.noise
        if block == "fast":
            rel = np.abs(true_values) * (noise.pmu_mag_pct / 100.0) / 3.0
            ang = np.full_like(true_values, noise.pmu_ang_crad * 0.01 / 3.0)
            return np.where(self.fast_is_ang, ang, rel)
        kinds = self.kind_arr[self.n_fast :]
        pct = np.where(
            [k in (Kind.SCADA_PFLOW, Kind.SCADA_QFLOW) for k in kinds],
            noise.scada_pct,
            noise.pseudo_pct,
        )
        sigma = np.abs(true_values) * (pct / 100.0) / 3.0
        return np.where(pct > 0.0, np.maximum(sigma, SIGMA_FLOOR), 0.0)


@dataclass(frozen=True)
class Snapshot:
    """Measurement set at one timestep: fresh fast block, possibly stale slow."""

    t: int
    table: ChannelTable
    fast_values: np.ndarray
    fast_variance: np.ndarray
    slow_values: np.ndarray
    slow_variance: np.ndarray
    slow_sample_time: int

    @property
    def staleness(self) -> int:
        return self.t - self.slow_sample_time

    @property
    def slow_refreshed(self) -> bool:
        return self.staleness == 0

    def values(self) -> np.ndarray:
        return np.concatenate([self.fast_values, self.slow_values])

    def variances(self) -> np.ndarray:
        return np.concatenate([self.fast_variance, self.slow_variance])

    def measurements(self) -> list:
        out = []
        for j, (kind, location, phase) in enumerate(self.table.channels):
            fast = j < self.table.n_fast
            k = j if fast else j - self.table.n_fast
            out.append(
                Measurement(
                    kind=kind,
                    location=location,
                    phase=phase,
                    value=float((self.fast_values if fast else self.slow_values)[k]),
                    variance=float((self.fast_variance if fast else self.slow_variance)[k]),
                    rate_class="fast" if fast else "slow",
                    sample_time=self.t if fast else self.slow_sample_time,
                )
            )
        return out


def build_channels(model: FeederModel, config: SensorConfig, index: NetworkIndex = None) -> ChannelTable:
    return ChannelTable(model, config, index)


def h_full(state: SystemState, model: FeederModel, config: SensorConfig, table: ChannelTable = None) -> np.ndarray:
    table = table or build_channels(model, config)
    return table.h_full(state)


def h_slow(state: SystemState, model: FeederModel, config: SensorConfig, table: ChannelTable = None) -> np.ndarray:
    table = table or build_channels(model, config)
    return table.h_slow(state)


def jacobian_H(state: SystemState, model: FeederModel, config: SensorConfig, table: ChannelTable = None) -> np.ndarray:
    table = table or build_channels(model, config)
    return table.jacobian(state)


def _noisy_block(table, block, truth, rng):
    sigma = table._sigma(block, truth)
    values = truth + sigma * rng.standard_normal(truth.shape)
    variance = np.maximum(sigma, SIGMA_FLOOR) ** 2
    return values, variance


def synthesize(
    true_state: SystemState,
    config: SensorConfig,
    seed: int,
    model: FeederModel = None,
    table: ChannelTable = None,
    t: int = 0,
) -> Snapshot:
    """Fully refreshed snapshot: both blocks sampled at this timestep."""
    if table is None:
        table = build_channels(model, config)
    fast_true = table.h_fast(true_state)
    slow_true = table.h_slow(true_state)
    fv, fvar = _noisy_block(table, "fast", fast_true, rng_for(seed, "fast", t))
    sv, svar = _noisy_block(table, "slow", slow_true, rng_for(seed, "slow", t))
    return Snapshot(
        t=t,
        table=table,
        fast_values=fv,
        fast_variance=fvar,
        slow_values=sv,
        slow_variance=svar,
        slow_sample_time=t,
    )


def stream(
    trajectory: list,
    config: SensorConfig,
    N: int,
    seed: int,
    model: FeederModel = None,
    table: ChannelTable = None,
):
    """Multi-rate snapshot sequence over a true trajectory.

    Fast channels refresh every step; slow channels refresh only at steps
    t = 0 mod N and are carried forward bit-identical in between.
    """
    if N < 1:
        raise ValidationError(f"N must be >= 1, got {N}")
    if table is None:
        table = build_channels(model, config)
    snapshots = []
    slow_values = slow_variance = None
    slow_time = 0
    for t, state in enumerate(trajectory):
        fast_true = table.h_fast(state)
        fv, fvar = _noisy_block(table, "fast", fast_true, rng_for(seed, "fast", t))
        if t % N == 0:
            slow_true = table.h_slow(state)
            slow_values, slow_variance = _noisy_block(
                table, "slow", slow_true, rng_for(seed, "slow", t)
            )
            slow_time = t
        snapshots.append(
            Snapshot(
                t=t,
                table=table,
                fast_values=fv,
                fast_variance=fvar,
                slow_values=slow_values,
                slow_variance=slow_variance,
                slow_sample_time=slow_time,
            )
        )
    return snapshots


def snapshots_to_csv(snapshots: list, path: str):
    """Debug export: t,kind,location,phase,value,variance,staleness."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "kind", "location", "phase", "value", "variance", "staleness"])
        for snap in snapshots:
            for meas in snap.measurements():
                writer.writerow(
                    [
                        snap.t,
                        meas.kind.value,
                        meas.location,
                        meas.phase,
                        repr(meas.value),
                        repr(meas.variance),
                        snap.t - meas.sample_time,
                    ]
                )
