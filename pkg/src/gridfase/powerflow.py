"""Ground-truth trajectories for the feeder: sweep power flow and profiles.

States are per-node (bus, phase) voltage magnitude (p.u.) and angle (rad)
in the canonical node order; the flat vector layout is all magnitudes
followed by all angles. Power flow is a backward/forward sweep over the
radial topology, which needs no Jacobian and converges fast on feeders.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence, ValidationError
from .feeder import PHASE_INDEX, FeederModel, bus_phase_nodes, topology_order
from .seeding import rng_for

MISMATCH_TOL = 1e-8
MAX_SWEEPS = 100


@dataclass(frozen=True)
class SystemState:
    """Per bus-phase voltage magnitude (p.u.) and angle (rad)."""

    nodes: tuple  # of (bus, phase)
    vmag: np.ndarray
    vang: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def as_vector(self) -> np.ndarray:
        """Flat state x: [vmag block | vang block], length 2*n_nodes."""
        return np.concatenate([self.vmag, self.vang])

    def phasors(self) -> np.ndarray:
        return self.vmag * np.exp(1j * self.vang)


def state_from_vector(nodes: tuple, x: np.ndarray) -> SystemState:
    n = len(nodes)
    if x.shape != (2 * n,):
        raise ValidationError(f"state vector length {x.shape} != 2*{n}")
    return SystemState(nodes=nodes, vmag=x[:n].copy(), vang=x[n:].copy())


class NetworkIndex:
    """Cached node ordering and per-branch index arrays for one model."""

    def __init__(self, model: FeederModel):
        self.model = model
        self.topo = topology_order(model)
        self.nodes = bus_phase_nodes(model, self.topo)
        self.pos = {node: k for k, node in enumerate(self.nodes)}
        self.n_nodes = len(self.nodes)
        phases = model.bus_phases()
        self.slack_nodes = [self.pos[(model.slack_bus, p)] for p in phases[model.slack_bus]]

        z_base = model.z_base_ohm
        self.branch_from_idx = []
        self.branch_to_idx = []
        self.branch_y_pu = []
        for br in model.branches:
            self.branch_from_idx.append(
                np.array([self.pos[(br.from_bus, p)] for p in br.phases])
            )
            self.branch_to_idx.append(
                np.array([self.pos[(br.to_bus, p)] for p in br.phases])
            )
            self.branch_y_pu.append(np.linalg.inv(br.z_sub() / z_base))
        self.children = {bus: [] for bus, _ in model.buses}
        for bus, k in self.topo.parent.items():
            br = model.branches[k]
            upstream = br.from_bus if br.to_bus == bus else br.to_bus
            self.children[upstream].append((bus, k))

    def slack_phasor_of(self, phase: str) -> complex:
        mag, ang = self.model.slack_voltage[phase]
        return mag * np.exp(1j * ang)

    def flat_phasors(self) -> np.ndarray:
        """Every node at its phase's slack phasor (the flat start)."""
        v = np.empty(self.n_nodes, dtype=complex)
        for k, (_, phase) in enumerate(self.nodes):
            v[k] = self.slack_phasor_of(phase)
        return v

    def flat_state(self) -> SystemState:
        mag = np.empty(self.n_nodes)
        ang = np.empty(self.n_nodes)
        for k, (_, phase) in enumerate(self.nodes):
            m, a = self.model.slack_voltage[phase]
            mag[k], ang[k] = m, a
        return SystemState(nodes=self.nodes, vmag=mag, vang=ang)


def injections_from_phasors(index: NetworkIndex, v: np.ndarray) -> np.ndarray:
    """Net per-node complex injection (p.u.) implied by node voltages."""
    s = np.zeros(index.n_nodes, dtype=complex)
    for k in range(len(index.model.branches)):
        fi, ti = index.branch_from_idx[k], index.branch_to_idx[k]
        i_br = index.branch_y_pu[k] @ (v[fi] - v[ti])
        s[fi] += v[fi] * np.conj(i_br)
        s[ti] -= v[ti] * np.conj(i_br)
    return s


def solve_powerflow(
    model: FeederModel,
    s_inj_kw: np.ndarray,
    index: NetworkIndex = None,
    tol: float = MISMATCH_TOL,
    max_iter: int = MAX_SWEEPS,
) -> SystemState:
    """Backward/forward sweep for one timestep of net injections.

    ``s_inj_kw`` is complex kW + j*kvar per node in canonical order, net
    injection sign convention (loads negative, generation positive).
    Converged when the worst per-node complex power mismatch is below tol.
    """
    if index is None:
        index = NetworkIndex(model)
    if s_inj_kw.shape != (index.n_nodes,):
        raise ValidationError(
            f"injection vector has {s_inj_kw.shape}, expected ({index.n_nodes},)"
        )
    s_pu = np.asarray(s_inj_kw, dtype=complex) / model.s_base_phase_kva

    order = index.topo.order
    v = index.flat_phasors()
    nonslack = np.ones(index.n_nodes, dtype=bool)
    nonslack[index.slack_nodes] = False

    worst = np.inf
    for _ in range(max_iter):
        # Backward: accumulate branch currents from the leaves toward the root.
        i_br = [None] * len(model.branches)
        for bus in reversed(order[1:]):
            k = index.topo.parent[bus]
            br = model.branches[k]
            ti = index.branch_to_idx[k] if br.to_bus == bus else index.branch_from_idx[k]
            demand = -s_pu[ti]
            current = np.conj(demand / v[ti])
            for child_bus, child_k in index.children[bus]:
                child_br = model.branches[child_k]
                child_current = i_br[child_k]
                for slot, p in enumerate(br.phases):
                    j = child_br.phases.find(p)
                    if j >= 0:
                        current[slot] += child_current[j]
            i_br[k] = current

        # Forward: push voltages from the slack outward. i_br[k] is the
        # current into the downstream bus, so the drop is Z @ i regardless
        # of the branch's declared orientation.
        for bus in order[1:]:
            k = index.topo.parent[bus]
            br = model.branches[k]
            if br.to_bus == bus:
                up, down = index.branch_from_idx[k], index.branch_to_idx[k]
            else:
                up, down = index.branch_to_idx[k], index.branch_from_idx[k]
            z_pu = br.z_sub() / model.z_base_ohm
            v[down] = v[up] - z_pu @ i_br[k]

        mismatch = injections_from_phasors(index, v) - s_pu
        worst = float(np.abs(mismatch[nonslack]).max(initial=0.0))
        if worst < tol:
            state = index.flat_state()
            state.vmag[nonslack] = np.abs(v[nonslack])
            state.vang[nonslack] = np.angle(v[nonslack])
            return state

    raise NonConvergence(
        f"sweep did not converge in {max_iter} iterations "
        f"(worst mismatch {worst:.3e} p.u.)",
        worst_mismatch=worst,
    )


@dataclass(frozen=True)
class BaseCurves:
    """24-hour load and PV shapes, piecewise-linear and periodic."""

    load_hours: np.ndarray
    load_scale: np.ndarray
    pv_hours: np.ndarray
    pv_scale: np.ndarray

    @staticmethod
    def _interp(hours, scale, t_s):
        h = np.asarray(t_s) / 3600.0 % 24.0
        xp = np.concatenate([hours, [hours[0] + 24.0]])
        fp = np.concatenate([scale, [scale[0]]])
        return np.interp(h, xp, fp)

    def load_at(self, t_s):
        return self._interp(self.load_hours, self.load_scale, t_s)

    def pv_at(self, t_s):
        return self._interp(self.pv_hours, self.pv_scale, t_s)

    @staticmethod
    def constant(load: float = 1.0, pv: float = 1.0) -> "BaseCurves":
        h = np.array([0.0, 12.0])
        return BaseCurves(h, np.full(2, load), h.copy(), np.full(2, pv))


def load_shape_csv(path: str) -> tuple:
    hours, scale = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            hours.append(float(row["hour"]))
            scale.append(float(row["scale"]))
    order = np.argsort(hours)
    return np.asarray(hours)[order], np.asarray(scale)[order]


def base_curves_from_csv(load_path: str, pv_path: str) -> BaseCurves:
    lh, ls = load_shape_csv(load_path)
    ph, ps = load_shape_csv(pv_path)
    return BaseCurves(lh, ls, ph, ps)


@dataclass(frozen=True)
class InjectionProfile:
    """Net complex injection (kW + j kvar) per timestep and node."""

    nodes: tuple
    times_s: np.ndarray  # (T,)
    s_kw: np.ndarray  # (T, n_nodes) complex

    @property
    def n_steps(self) -> int:
        return len(self.times_s)

    def row(self, t: int) -> np.ndarray:
        return self.s_kw[t]


def generate_profiles(
    base_curves: BaseCurves,
    model: FeederModel,
    fluctuation: float,
    seed: int,
    dt_s: float = 60.0,
    horizon_steps: int = 1440,
    start_s: float = 0.0,
    index: NetworkIndex = None,
) -> InjectionProfile:
    """Scale nominal loads/DERs by the daily shapes plus random fluctuation.

    Every load and DER component gets an independent uniform multiplier in
    [1-fluctuation, 1+fluctuation] at every timestep; deterministic for a
    fixed seed.
    """
    if not 0.0 <= fluctuation <= 0.5:
        raise ValidationError(f"fluctuation must be in [0, 0.5], got {fluctuation}")
    if index is None:
        index = NetworkIndex(model)
    times = start_s + dt_s * np.arange(horizon_steps)
    load_scale = base_curves.load_at(times)
    pv_scale = base_curves.pv_at(times)

    components = []
    for load in model.loads:
        node = index.pos[(load.bus, load.phase)]
        components.append((node, -complex(load.p_kw, load.q_kvar), load_scale))
    for der in model.ders:
        node = index.pos[(der.bus, der.phase)]
        components.append((node, complex(der.p_kw, der.q_kvar()), pv_scale))

    rng = rng_for(seed, "profile")
    if fluctuation > 0.0:
        draws = rng.uniform(
            1.0 - fluctuation, 1.0 + fluctuation, size=(horizon_steps, len(components))
        )
    else:
        draws = np.ones((horizon_steps, len(components)))

    s = np.zeros((horizon_steps, index.n_nodes), dtype=complex)
    for j, (node, s_nom, shape) in enumerate(components):
        s[:, node] += s_nom * shape * draws[:, j]
    return InjectionProfile(nodes=index.nodes, times_s=times, s_kw=s)


def true_trajectory(
    model: FeederModel, profile: InjectionProfile, index: NetworkIndex = None
) -> list:
    """One converged state per profile timestep."""
    if index is None:
        index = NetworkIndex(model)
    states = []
    for t in range(profile.n_steps):
        try:
            states.append(solve_powerflow(model, profile.row(t), index=index))
        except NonConvergence as exc:
            raise NonConvergence(
                f"timestep {t}: {exc}", worst_mismatch=exc.worst_mismatch
            ) from exc
    return states


def profile_from_csv(path: str, index: NetworkIndex) -> InjectionProfile:
    """Read the `t,bus,phase,p_kw,q_kvar` interchange format."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = int(row["t"])
            node = index.pos[(row["bus"], row["phase"])]
            rows.setdefault(t, np.zeros(index.n_nodes, dtype=complex))
            rows[t][node] += complex(float(row["p_kw"]), float(row["q_kvar"]))
    times = sorted(rows)
    s = np.stack([rows[t] for t in times]) if times else np.zeros((0, index.n_nodes), complex)
    return InjectionProfile(
        nodes=index.nodes, times_s=np.asarray(times, dtype=float), s_kw=s
    )


def profile_to_csv(profile: InjectionProfile, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "bus", "phase", "p_kw", "q_kvar"])
        for t in range(profile.n_steps):
            for k, (bus, phase) in enumerate(profile.nodes):
                s = profile.s_kw[t, k]
                writer.writerow([t, bus, phase, repr(float(s.real)), repr(float(s.imag))])


def trajectory_to_csv(states: list, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "bus", "phase", "vmag_pu", "vang_rad"])
        for t, state in enumerate(states):
            for k, (bus, phase) in enumerate(state.nodes):
                writer.writerow([t, bus, phase, repr(float(state.vmag[k])), repr(float(state.vang[k]))])
