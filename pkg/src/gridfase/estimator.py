"""State estimation core: static WLS, Holt prediction, EKF update.

The per-step recursion works on the flat state vector x = [vmag | vang].
Holt's two-parameter smoothing supplies the state transition: at step t,
with coefficients (alpha, beta) chosen for that step, the level/trend
memory is advanced from the latest estimate and prediction, and the
transition reduces to F = alpha*(1+beta)*I plus an offset vector G built
from the prior memory. Innovations are always formed against the
nonlinear measurement function, with H re-linearized at the prediction;
angle channels are differenced on the wrapped circle.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NonConvergence, RankDeficient, SingularInnovation, ValidationError
from .powerflow import SystemState, state_from_vector
from .telemetry import ChannelTable, Snapshot

COND_LIMIT = 1e12
EIG_TOLERANCE = -1e-10


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class SmoothingCoefficients:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValidationError(
                f"smoothing coefficients must lie in [0,1]: ({self.alpha}, {self.beta})"
            )


@dataclass
class HoltMemory:
    """Level/trend memory; *_prev is the latest computed pair."""

    a_prev: np.ndarray
    a_prev2: np.ndarray
    b_prev: np.ndarray
    b_prev2: np.ndarray

    @staticmethod
    def fresh(x0: np.ndarray) -> "HoltMemory":
        zero = np.zeros_like(x0)
        return HoltMemory(x0.copy(), x0.copy(), zero.copy(), zero.copy())


@dataclass
class FilterState:
    x_hat: np.ndarray  # filtered estimate
    x_tilde: np.ndarray  # latest prediction
    sigma: np.ndarray  # covariance
    holt: HoltMemory
    t: int


@dataclass(frozen=True)
class FilterConfig:
    process_noise: float = 1e-6  # q in Q = q*I (p.u.^2 per state)
    wls_tolerance: float = 1e-8
    wls_max_iter: int = 50
    covariance_floor: float = 0.0
    anchor_sigma: float = 1e-4  # Sigma right after a WLS anchor

    def q_matrix(self, n: int) -> np.ndarray:
        return self.process_noise * np.eye(n)


def holt_advance(
    holt: HoltMemory,
    c: SmoothingCoefficients,
    x_hat_new: np.ndarray,
    x_tilde_new: np.ndarray,
) -> HoltMemory:
    """Fold the latest estimate/prediction into the level/trend memory.

    Called once per step, before building the transition: the new level is
    alpha*x_hat + (1-alpha)*x_tilde, the new trend blends the level change
    with the stored trend, and the old pair shifts into the *_prev2 slots.
    """
    a_new = c.alpha * x_hat_new + (1.0 - c.alpha) * x_tilde_new
    b_new = c.beta * (a_new - holt.a_prev) + (1.0 - c.beta) * holt.b_prev
    return HoltMemory(a_prev=a_new, a_prev2=holt.a_prev, b_prev=b_new, b_prev2=holt.b_prev)


def holt_fg(
    c: SmoothingCoefficients, holt: HoltMemory, x_tilde_prev: np.ndarray
) -> tuple:
    """Transition (F, G) for the advanced memory.

    F = alpha*(1+beta)*I; G collects the prior prediction and the lagged
    level/trend so that F @ x_hat_prev + G equals holt.a_prev + holt.b_prev.
    """
    n = len(x_tilde_prev)
    a, b = c.alpha, c.beta
    F = a * (1.0 + b) * np.eye(n)
    G = (1.0 + b) * (1.0 - a) * x_tilde_prev - b * holt.a_prev2 + (1.0 - b) * holt.b_prev2
    return F, G


def predict(fs: FilterState, F: np.ndarray, G: np.ndarray, Q: np.ndarray) -> tuple:
    """One-step prediction of the mean and covariance."""
    x_pred = F @ fs.x_hat + G
    sigma_pred = F @ fs.sigma @ F.T + Q
    return x_pred, sigma_pred


def _symmetrize_psd(sigma: np.ndarray, floor: float = 0.0) -> np.ndarray:
    sigma = 0.5 * (sigma + sigma.T)
    eigvals, eigvecs = np.linalg.eigh(sigma)
    if eigvals[0] < EIG_TOLERANCE:
        raise ValidationError(
            f"covariance lost positive semi-definiteness (min eig {eigvals[0]:.3e})"
        )
    if eigvals[0] < floor:
        eigvals = np.maximum(eigvals, floor)
        sigma = (eigvecs * eigvals) @ eigvecs.T
        sigma = 0.5 * (sigma + sigma.T)
    return sigma


def ekf_update(
    x_pred: np.ndarray,
    sigma_pred: np.ndarray,
    y_stacked: np.ndarray,
    R: np.ndarray,
    H: np.ndarray,
    angle_rows: np.ndarray = None,
    floor: float = 0.0,
) -> tuple:
    """Linear-measurement Kalman update at the prediction point.

    R may be a 1-D variance vector or a full matrix. angle_rows marks
    channels whose innovation is wrapped to (-pi, pi].
    """
    R = np.diag(R) if np.ndim(R) == 1 else np.asarray(R)
    innovation = y_stacked - H @ x_pred
    if angle_rows is not None and np.any(angle_rows):
        innovation = np.where(angle_rows, wrap_angle(innovation), innovation)

    S = H @ sigma_pred @ H.T + R
    S = 0.5 * (S + S.T)
    # Jacobi equilibration: feeders mix per-unit admittances spanning many
    # decades, so the singularity test and the solve run in the scaled
    # basis, where conditioning reflects true degeneracy rather than units.
    d = np.sqrt(S.diagonal())
    if np.any(~np.isfinite(d)) or np.any(d <= 0.0):
        raise SingularInnovation("innovation covariance has a non-positive diagonal")
    S_scaled = S / d[:, None] / d[None, :]
    eigvals = np.linalg.eigvalsh(S_scaled)
    if eigvals[0] <= 0.0 or eigvals[-1] / eigvals[0] > COND_LIMIT:
        raise SingularInnovation(
            f"innovation covariance singular (scaled cond "
            f"{eigvals[-1] / max(eigvals[0], 1e-300):.3e})"
        )
    chol = cho_factor(S_scaled, lower=True)
    gain = (cho_solve(chol, (H @ sigma_pred) / d[:, None]) / d[:, None]).T
    x_hat = x_pred + gain @ innovation
    sigma = sigma_pred - gain @ S @ gain.T
    return x_hat, _symmetrize_psd(sigma, floor)


def reconstruct_slow(x_tilde: np.ndarray, table: ChannelTable = None, model=None, config=None) -> np.ndarray:
    """Predicted slow-channel values: the slow measurement function at x_tilde."""
    if table is None:
        from .telemetry import build_channels

        table = build_channels(model, config)
    state = state_from_vector(table.index.nodes, np.asarray(x_tilde, dtype=float))
    return table.h_slow(state)


def wls_static(
    snapshot: Snapshot,
    table: ChannelTable = None,
    config: FilterConfig = None,
) -> SystemState:
    """Gauss-Newton WLS solve of a fully refreshed snapshot, flat start."""
    if table is None:
        table = snapshot.table
    if config is None:
        config = FilterConfig()
    if not snapshot.slow_refreshed:
        raise ValidationError("wls_static needs a fully refreshed snapshot")
    index = table.index
    state = index.flat_state()
    x = state.as_vector()
    y = snapshot.values()
    weights = 1.0 / snapshot.variances()
    angle_rows = table.angle_rows

    worst = np.inf
    for _ in range(config.wls_max_iter):
        state = state_from_vector(index.nodes, x)
        H = table.jacobian(state)
        residual = y - table.h_full(state)
        residual = np.where(angle_rows, wrap_angle(residual), residual)
        Hw = H * weights[:, None]
        gain_matrix = Hw.T @ H
        gain_matrix = 0.5 * (gain_matrix + gain_matrix.T)
        # equilibrated singularity test and solve (see ekf_update)
        diag = gain_matrix.diagonal()
        if np.any(diag <= 0.0) or np.any(~np.isfinite(diag)):
            raise RankDeficient(
                "gain matrix singular: a state carries no measurement sensitivity"
            )
        d = np.sqrt(diag)
        g_scaled = gain_matrix / d[:, None] / d[None, :]
        eigvals = np.linalg.eigvalsh(g_scaled)
        if eigvals[0] <= 0.0 or eigvals[-1] / eigvals[0] > COND_LIMIT:
            raise RankDeficient(
                "gain matrix singular: measurement set leaves the state unobservable"
            )
        step = cho_solve(cho_factor(g_scaled, lower=True), (Hw.T @ residual) / d) / d
        x = x + step
        worst = float(np.abs(step).max())
        if worst < config.wls_tolerance:
            return state_from_vector(index.nodes, x)
    raise NonConvergence(
        f"WLS did not converge in {config.wls_max_iter} iterations "
        f"(last step {worst:.3e})",
        worst_mismatch=worst,
    )


def anchor_filter(x0: np.ndarray, config: FilterConfig, t: int) -> FilterState:
    """Re-initialize the recursion at a WLS anchor (persistence-neutral)."""
    n = len(x0)
    return FilterState(
        x_hat=x0.copy(),
        x_tilde=x0.copy(),
        sigma=config.anchor_sigma * np.eye(n),
        holt=HoltMemory.fresh(x0),
        t=t,
    )


VMAG_LINEARIZATION_BAND = (1e-2, 2.0)


def _linearization_state(table: ChannelTable, x: np.ndarray) -> SystemState:
    """Evaluation point for h/H; magnitudes clipped to a physical band so a
    diverging prediction degrades gracefully instead of producing huge or
    non-finite Jacobian rows. The prediction itself is left untouched."""
    n = table.index.n_nodes
    x = np.asarray(x, dtype=float).copy()
    x[:n] = np.clip(x[:n], *VMAG_LINEARIZATION_BAND)
    return state_from_vector(table.index.nodes, x)


def fase_step(
    fs: FilterState,
    snapshot: Snapshot,
    c: SmoothingCoefficients,
    table: ChannelTable,
    config: FilterConfig,
) -> FilterState:
    """One prediction/reconstruction/update cycle at an intermediate step.

    Slow channels use their measured values when fresh and the predicted
    reconstruction otherwise; either way the innovation is formed against
    the nonlinear h at the prediction, so reconstructed channels carry a
    zero innovation and act through their covariance weight alone.
    """
    holt = holt_advance(fs.holt, c, fs.x_hat, fs.x_tilde)
    F, G = holt_fg(c, holt, fs.x_tilde)
    x_pred, sigma_pred = predict(fs, F, G, config.q_matrix(len(fs.x_hat)))

    pred_state = _linearization_state(table, x_pred)
    H = table.jacobian(pred_state)

    fast_innov = snapshot.fast_values - table.h_fast(pred_state)
    fast_innov = np.where(
        table.angle_rows[: table.n_fast], wrap_angle(fast_innov), fast_innov
    )
    if snapshot.slow_refreshed:
        slow_innov = snapshot.slow_values - table.h_slow(pred_state)
    else:
        slow_innov = np.zeros(table.n_slow)
    innovation = np.concatenate([fast_innov, slow_innov])

    # Feed the linear update a vector whose linear innovation reproduces the
    # nonlinear one computed above.
    y_eff = H @ x_pred + innovation
    x_hat, sigma = ekf_update(
        x_pred,
        sigma_pred,
        y_eff,
        snapshot.variances(),
        H,
        angle_rows=None,
        floor=config.covariance_floor,
    )
    return FilterState(x_hat=x_hat, x_tilde=x_pred, sigma=sigma, holt=holt, t=snapshot.t)
